use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};

use image::codecs::jpeg::JpegEncoder;
use image::imageops::FilterType;
use serde::{Deserialize, Serialize};

use super::IngestError;
use crate::video_store::{frame_rel_path, resolve, ClipInterval, FrameRef};

const JPEG_QUALITY: u8 = 90;

/// Something that can report a video's duration and dump frames of a time
/// window into a directory, one image file per frame in time order.
pub trait FrameDecoder: Send + Sync {
    fn probe_duration(&self, source: &Path) -> Result<f64, IngestError>;

    /// Write frames sampled at `fps` from `[start_s, start_s + duration_s)`
    /// into `out_dir`, returning their paths in time order.
    fn decode_window(
        &self,
        source: &Path,
        start_s: f64,
        duration_s: f64,
        fps: f64,
        out_dir: &Path,
    ) -> Result<Vec<PathBuf>, IngestError>;
}

/// A program plus argument template. Placeholders: `{input}`, `{start}`,
/// `{duration}`, `{fps}`, `{output_dir}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoderCommand {
    pub program: String,
    pub args: Vec<String>,
}

impl DecoderCommand {
    fn render(&self, input: &Path, start_s: f64, duration_s: f64, fps: f64, out_dir: &Path) -> Vec<String> {
        self.args
            .iter()
            .map(|a| {
                a.replace("{input}", &input.to_string_lossy())
                    .replace("{start}", &format!("{start_s:.3}"))
                    .replace("{duration}", &format!("{duration_s:.3}"))
                    .replace("{fps}", &format!("{fps}"))
                    .replace("{output_dir}", &out_dir.to_string_lossy())
            })
            .collect()
    }

    fn run(&self, args: &[String]) -> Result<Vec<u8>, IngestError> {
        let output = Command::new(&self.program)
            .args(args)
            .stdin(Stdio::null())
            .output()
            .map_err(|e| IngestError::Decode(format!("cannot run {}: {e}", self.program)))?;
        if !output.status.success() {
            let stderr = String::from_utf8_lossy(&output.stderr);
            return Err(IngestError::Decode(format!(
                "{} exited with {}: {}",
                self.program,
                output.status,
                stderr.trim()
            )));
        }
        Ok(output.stdout)
    }
}

/// Decoder driven through external processes, ffmpeg/ffprobe by default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalDecoder {
    pub decode: DecoderCommand,
    pub probe: DecoderCommand,
}

impl Default for ExternalDecoder {
    fn default() -> Self {
        let s = |xs: &[&str]| xs.iter().map(|x| x.to_string()).collect();
        ExternalDecoder {
            decode: DecoderCommand {
                program: "ffmpeg".into(),
                args: s(&[
                    "-v", "error", "-nostdin", "-ss", "{start}", "-t", "{duration}", "-i", "{input}",
                    "-vf", "fps={fps}", "-start_number", "0", "-y", "{output_dir}/%06d.png",
                ]),
            },
            probe: DecoderCommand {
                program: "ffprobe".into(),
                args: s(&[
                    "-v", "error", "-show_entries", "format=duration", "-of",
                    "default=noprint_wrappers=1:nokey=1", "{input}",
                ]),
            },
        }
    }
}

impl FrameDecoder for ExternalDecoder {
    fn probe_duration(&self, source: &Path) -> Result<f64, IngestError> {
        let args = self.probe.render(source, 0.0, 0.0, 0.0, Path::new(""));
        let stdout = self.probe.run(&args)?;
        let text = String::from_utf8_lossy(&stdout);
        text.trim()
            .parse::<f64>()
            .ok()
            .filter(|d| d.is_finite() && *d > 0.0)
            .ok_or_else(|| IngestError::Decode(format!("unparseable duration {:?}", text.trim())))
    }

    fn decode_window(
        &self,
        source: &Path,
        start_s: f64,
        duration_s: f64,
        fps: f64,
        out_dir: &Path,
    ) -> Result<Vec<PathBuf>, IngestError> {
        fs::create_dir_all(out_dir).map_err(|e| IngestError::io(out_dir, e))?;
        let args = self.decode.render(source, start_s, duration_s, fps, out_dir);
        self.decode.run(&args)?;
        list_images(out_dir)
    }
}

/// Image files in `dir`, sorted by name.
pub(crate) fn list_images(dir: &Path) -> Result<Vec<PathBuf>, IngestError> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| IngestError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            matches!(
                p.extension().and_then(|e| e.to_str()),
                Some("png" | "jpg" | "jpeg" | "ppm" | "bmp")
            )
        })
        .collect();
    files.sort();
    Ok(files)
}

/// Target size with the shorter side at most `target`, aspect preserved,
/// never upscaled.
pub fn fit_shorter_side(width: u32, height: u32, target: u32) -> (u32, u32) {
    let shorter = width.min(height);
    if shorter <= target || target == 0 {
        return (width, height);
    }
    let scale = target as f64 / shorter as f64;
    let fit = |x: u32| ((x as f64 * scale).round() as u32).max(1);
    if width <= height {
        (target, fit(height))
    } else {
        (fit(width), target)
    }
}

/// Sampling times for a clip: `start + j / fps` for `j < ⌈len × fps⌉`.
pub(crate) fn sample_times(interval: &ClipInterval, fps: f64) -> Vec<f64> {
    let count = (interval.len_s() * fps - 1e-9).ceil().max(0.0) as usize;
    (0..count)
        .map(|j| interval.start_s + j as f64 / fps)
        .filter(|t| *t < interval.end_s)
        .collect()
}

/// Decode one clip's frames, resize them and store them as JPEG under
/// `root/frames/<clip>/<timestamp_ms>.jpg`.
pub fn decode_frames(
    decoder: &dyn FrameDecoder,
    source: &Path,
    interval: &ClipInterval,
    fps: f64,
    resize_shorter_side_px: u32,
    root: &Path,
) -> Result<Vec<FrameRef>, IngestError> {
    let times = sample_times(interval, fps);
    let scratch = root.join(".decode").join(interval.index.to_string());
    if scratch.exists() {
        fs::remove_dir_all(&scratch).map_err(|e| IngestError::io(&scratch, e))?;
    }
    let produced = decoder.decode_window(source, interval.start_s, interval.len_s(), fps, &scratch)?;

    let mut frames = Vec::with_capacity(times.len());
    for (t, file) in times.iter().zip(&produced) {
        let img = image::open(file).map_err(|e| IngestError::Decode(format!("{}: {e}", file.display())))?;
        let (w, h) = fit_shorter_side(img.width(), img.height(), resize_shorter_side_px);
        let img = if (w, h) == (img.width(), img.height()) {
            img
        } else {
            img.resize_exact(w, h, FilterType::Triangle)
        };
        let rgb = img.to_rgb8();
        let mut bytes = Vec::new();
        JpegEncoder::new_with_quality(Cursor::new(&mut bytes), JPEG_QUALITY)
            .encode_image(&rgb)
            .map_err(|e| IngestError::Decode(format!("jpeg encode: {e}")))?;
        let rel = frame_rel_path(interval.index, *t);
        let dst = resolve(root, &rel);
        if let Some(parent) = dst.parent() {
            fs::create_dir_all(parent).map_err(|e| IngestError::io(parent, e))?;
        }
        crate::video_store::write_atomic_bytes(&dst, &bytes)?;
        frames.push(FrameRef { timestamp_s: *t, image_path: rel, width_px: w, height_px: h });
    }
    // scratch removal failing leaves debris but no wrong data
    let _ = fs::remove_dir_all(&scratch);
    Ok(frames)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::synthetic::{SyntheticDecoder, SyntheticScene, SyntheticVideo};

    fn interval(index: usize, start_s: f64, end_s: f64) -> ClipInterval {
        ClipInterval { index, start_s, end_s }
    }

    #[test]
    fn sampling_arithmetic() {
        let t = sample_times(&interval(0, 0.0, 5.0), 2.0);
        assert_eq!(t, vec![0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0, 4.5]);
        assert_eq!(sample_times(&interval(2, 10.0, 12.0), 2.0).len(), 4);
        assert_eq!(sample_times(&interval(0, 0.0, 0.3), 2.0), vec![0.0]);
    }

    #[test]
    fn resize_rule() {
        assert_eq!(fit_shorter_side(1920, 1080, 720), (1280, 720));
        assert_eq!(fit_shorter_side(1080, 1920, 720), (720, 1280));
        assert_eq!(fit_shorter_side(640, 360, 720), (640, 360));
        assert_eq!(fit_shorter_side(3840, 2160, 720), (1280, 720));
    }

    fn write_video(dir: &Path, video: &SyntheticVideo) -> PathBuf {
        let p = dir.join("v.synthvid.json");
        fs::write(&p, serde_json::to_vec(video).unwrap()).unwrap();
        p
    }

    #[test]
    fn decodes_and_resizes_into_frame_store() {
        let dir = tempfile::tempdir().unwrap();
        let video = SyntheticVideo::new(1920, 1080, 12.0, vec![SyntheticScene::new(0.0, 12.0, [200, 20, 20], "red")]);
        let src = write_video(dir.path(), &video);
        let root = dir.path().join("db");
        let frames = decode_frames(&SyntheticDecoder, &src, &interval(0, 0.0, 5.0), 2.0, 720, &root).unwrap();
        assert_eq!(frames.len(), 10);
        assert_eq!(frames[1].image_path, "frames/0/500.jpg");
        assert!(frames.iter().all(|f| (f.width_px, f.height_px) == (1280, 720)));
        assert!(root.join("frames/0/4500.jpg").is_file());
        let last = decode_frames(&SyntheticDecoder, &src, &interval(2, 10.0, 12.0), 2.0, 720, &root).unwrap();
        assert_eq!(last.iter().map(|f| f.timestamp_s).collect::<Vec<_>>(), vec![10.0, 10.5, 11.0, 11.5]);
        assert!(!root.join(".decode/0").exists());
    }

    #[test]
    fn corrupt_source_is_a_decode_error() {
        let dir = tempfile::tempdir().unwrap();
        let src = dir.path().join("broken.synthvid.json");
        fs::write(&src, b"\x00\x01 not a video").unwrap();
        let err = decode_frames(&SyntheticDecoder, &src, &interval(0, 0.0, 5.0), 2.0, 720, dir.path()).unwrap_err();
        assert!(matches!(err, IngestError::Decode(_)));
        assert!(matches!(SyntheticDecoder.probe_duration(&src), Err(IngestError::Decode(_))));
    }

    #[test]
    fn missing_external_program_is_a_decode_error() {
        let dir = tempfile::tempdir().unwrap();
        let decoder = ExternalDecoder {
            decode: DecoderCommand { program: "/nonexistent/decoder".into(), args: vec![] },
            probe: DecoderCommand { program: "/nonexistent/probe".into(), args: vec!["{input}".into()] },
        };
        assert!(matches!(decoder.probe_duration(Path::new("x.mp4")), Err(IngestError::Decode(_))));
        assert!(matches!(
            decoder.decode_window(Path::new("x.mp4"), 0.0, 5.0, 2.0, dir.path()),
            Err(IngestError::Decode(_))
        ));
    }

    #[test]
    fn template_rendering() {
        let cmd = ExternalDecoder::default().decode;
        let args = cmd.render(Path::new("/v/in.mp4"), 10.0, 5.0, 2.0, Path::new("/tmp/out"));
        assert!(args.contains(&"10.000".to_string()));
        assert!(args.contains(&"5.000".to_string()));
        assert!(args.contains(&"fps=2".to_string()));
        assert!(args.contains(&"/v/in.mp4".to_string()));
        assert!(args.contains(&"/tmp/out/%06d.png".to_string()));
    }
}
