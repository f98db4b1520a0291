//! Offline construction of a [`VideoDatabase`](crate::video_store::VideoDatabase)
//! from a source video.
//!
//! The pipeline is: uniform segmentation, frame decoding through an external
//! decoder process (parallel per clip), sequential captioning that evolves the
//! subject registry `S_i, c_i = VLM(f_i, S_{i-1})`, optional transcript
//! enrichment, then caption embedding (parallel, order-preserving).

mod build;
mod caption;
mod decoder;
pub mod synthetic;
mod transcript;

use std::path::PathBuf;

use crate::model_gateway::ModelError;
use crate::video_store::{ClipInterval, StoreError};

pub use build::{embed_caption, BuildEvent, DatabaseBuilder, IngestBackends, IngestConfig};
pub use caption::{
    apply_delta, caption_clip, parse_caption_output, CaptionStepResult, CAPTION_FALLBACK,
    CAPTION_PROMPT,
};
pub use decoder::{decode_frames, fit_shorter_side, DecoderCommand, ExternalDecoder, FrameDecoder};
pub use transcript::{load_transcript, merge_transcript, TranscriptSegment};

/// Upper bound on clip count, guarding against absurd `duration / t` ratios.
const MAX_CLIPS: f64 = 10_000_000.0;

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("decode error: {0}")]
    Decode(String),
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Backend(#[from] ModelError),
    #[error("malformed model output after {attempts} attempts: {detail}")]
    MalformedOutput { attempts: u32, detail: String },
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("build interrupted before clip {next_clip}; rerun to resume")]
    Interrupted { next_clip: usize },
    #[error("clip {index}: {source}")]
    AtClip {
        index: usize,
        #[source]
        source: Box<IngestError>,
    },
}

impl IngestError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        IngestError::Io { path: path.into(), source }
    }

    pub(crate) fn at_clip(self, index: usize) -> Self {
        match self {
            e @ IngestError::AtClip { .. } => e,
            e => IngestError::AtClip { index, source: Box::new(e) },
        }
    }

    /// The innermost error, skipping clip annotations.
    pub fn root_cause(&self) -> &IngestError {
        match self {
            IngestError::AtClip { source, .. } => source.root_cause(),
            e => e,
        }
    }
}

/// `i × t` rounded toward zero, exactly. The rounded product can land on or
/// past the duration when the exact one is still below it.
fn floor_mul(i: usize, t: f64) -> f64 {
    let n = i as f64;
    let p = n * t;
    if p > 0.0 && n.mul_add(t, -p) < 0.0 {
        f64::from_bits(p.to_bits() - 1)
    } else {
        p
    }
}

/// Uniformly partition `[0, duration_s)` into `⌈duration_s / clip_len_s⌉`
/// non-overlapping clips; the last one may be shorter. Clip `i` starts at
/// `i × clip_len_s`, rounded down where the product is not representable.
pub fn segment(duration_s: f64, clip_len_s: f64) -> Result<Vec<ClipInterval>, IngestError> {
    if !(duration_s.is_finite() && duration_s > 0.0) {
        return Err(IngestError::InvalidArgument(format!("duration must be > 0, got {duration_s}")));
    }
    if !(clip_len_s.is_finite() && clip_len_s > 0.0) {
        return Err(IngestError::InvalidArgument(format!("clip length must be > 0, got {clip_len_s}")));
    }
    let ratio = (duration_s / clip_len_s).ceil();
    if ratio > MAX_CLIPS {
        return Err(IngestError::InvalidArgument(format!("{ratio} clips is too many")));
    }
    let mut n = (ratio as usize).max(1);
    // the rounded quotient can overshoot or undershoot the true ceiling by one
    while n > 1 && floor_mul(n - 1, clip_len_s) >= duration_s {
        n -= 1;
    }
    while floor_mul(n, clip_len_s) < duration_s {
        n += 1;
    }
    Ok((0..n)
        .map(|i| ClipInterval {
            index: i,
            start_s: floor_mul(i, clip_len_s),
            end_s: if i + 1 == n { duration_s } else { floor_mul(i + 1, clip_len_s) },
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_bigint::BigInt;
    use num_rational::BigRational;

    /// Exact ⌈duration / t⌉ over the rationals the two floats denote.
    fn exact_ceil(duration: f64, t: f64) -> usize {
        let q = BigRational::from_float(duration).unwrap() / BigRational::from_float(t).unwrap();
        let c: BigInt = q.ceil().to_integer();
        c.to_string().parse().unwrap()
    }

    /// `x` is the largest double not exceeding the exact product `i × t`.
    fn is_floor_of_product(x: f64, i: usize, t: f64) -> bool {
        let exact = BigRational::from_integer(BigInt::from(i)) * BigRational::from_float(t).unwrap();
        let xr = BigRational::from_float(x).unwrap();
        let next = BigRational::from_float(f64::from_bits(x.to_bits() + 1)).unwrap();
        xr <= exact && next > exact
    }

    #[test]
    fn segment_examples() {
        assert_eq!(segment(3600.0, 5.0).unwrap().len(), 720);
        let iv = segment(12.0, 5.0).unwrap();
        let spans: Vec<(f64, f64)> = iv.iter().map(|c| (c.start_s, c.end_s)).collect();
        assert_eq!(spans, vec![(0.0, 5.0), (5.0, 10.0), (10.0, 12.0)]);
        let one = segment(0.5, 5.0).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!((one[0].start_s, one[0].end_s), (0.0, 0.5));
    }

    #[test]
    fn segment_rejects_non_positive() {
        for (d, t) in [(0.0, 5.0), (-1.0, 5.0), (10.0, 0.0), (10.0, -2.0), (f64::NAN, 1.0), (f64::INFINITY, 1.0)] {
            assert!(matches!(segment(d, t), Err(IngestError::InvalidArgument(_))), "{d} {t}");
        }
    }

    #[test]
    fn segment_handles_float_quotient_rounding() {
        // 0.30000000000000004 / 0.1 rounds above 3 in f64
        let d = 0.1 + 0.2;
        let iv = segment(d, 0.1).unwrap();
        assert_eq!(iv.len(), exact_ceil(d, 0.1));
        assert_eq!(iv.len(), 4);
        assert!(iv.iter().all(|c| c.end_s > c.start_s));
        assert!(iv.iter().all(|c| is_floor_of_product(c.start_s, c.index, 0.1)));
    }

    proptest::proptest! {
        #[test]
        fn segment_count_and_tiling(duration in 1e-3f64..20_000.0, t in 0.05f64..120.0) {
            let iv = segment(duration, t).unwrap();
            proptest::prop_assert_eq!(iv.len(), exact_ceil(duration, t));
            proptest::prop_assert_eq!(iv[0].start_s, 0.0);
            proptest::prop_assert_eq!(iv.last().unwrap().end_s, duration);
            for (i, pair) in iv.windows(2).enumerate() {
                proptest::prop_assert_eq!(pair[0].end_s, pair[1].start_s);
                proptest::prop_assert!(is_floor_of_product(pair[0].start_s, i, t));
            }
            proptest::prop_assert!(iv.iter().all(|c| c.end_s > c.start_s));
        }
    }
}
