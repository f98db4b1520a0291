//! Synthetic test videos: a JSON scene script rendered to frames on demand.
//!
//! A synthetic video is a list of timed solid-colour scenes with a small
//! moving marker, so neighbouring frames differ. It lets the whole pipeline
//! run without a codec stack. The `dvd-synthdec` binary exposes the same
//! rendering behind the external-decoder process interface.

use std::fs;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use super::decoder::{list_images, FrameDecoder};
use super::IngestError;

pub const FORMAT_TAG: &str = "dvd-synthetic-video";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticScene {
    pub start_s: f64,
    pub end_s: f64,
    pub color: [u8; 3],
    #[serde(default)]
    pub label: String,
}

impl SyntheticScene {
    pub fn new(start_s: f64, end_s: f64, color: [u8; 3], label: &str) -> Self {
        SyntheticScene { start_s, end_s, color, label: label.to_string() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticVideo {
    pub format: String,
    pub width: u32,
    pub height: u32,
    pub duration_s: f64,
    pub scenes: Vec<SyntheticScene>,
}

impl SyntheticVideo {
    pub fn new(width: u32, height: u32, duration_s: f64, scenes: Vec<SyntheticScene>) -> Self {
        SyntheticVideo { format: FORMAT_TAG.into(), width, height, duration_s, scenes }
    }

    pub fn load(path: &Path) -> Result<Self, IngestError> {
        let bytes = fs::read(path).map_err(|e| IngestError::Decode(format!("{}: {e}", path.display())))?;
        let video: SyntheticVideo = serde_json::from_slice(&bytes)
            .map_err(|e| IngestError::Decode(format!("{}: not a synthetic video: {e}", path.display())))?;
        if video.format != FORMAT_TAG || video.width == 0 || video.height == 0 || !(video.duration_s > 0.0) {
            return Err(IngestError::Decode(format!("{}: invalid synthetic video header", path.display())));
        }
        Ok(video)
    }

    /// Frame at time `t`: the active scene's colour (black between scenes)
    /// with a darker square sweeping left to right once per second.
    pub fn render(&self, t: f64) -> RgbImage {
        let color = self
            .scenes
            .iter()
            .find(|s| s.start_s <= t && t < s.end_s)
            .map(|s| s.color)
            .unwrap_or([0, 0, 0]);
        let mut img = RgbImage::from_pixel(self.width, self.height, Rgb(color));
        let side = (self.width.min(self.height) / 6).max(1);
        let travel = self.width.saturating_sub(side);
        let x0 = ((t.fract() * travel as f64) as u32).min(travel);
        let y0 = (self.height - side) / 2;
        let marker = Rgb(color.map(|c| c / 2));
        for y in y0..y0 + side {
            for x in x0..x0 + side {
                img.put_pixel(x, y, marker);
            }
        }
        img
    }

    /// Render frames at `start + j / fps` inside the window and video, as
    /// `%06d.png` files in `out_dir`.
    pub fn decode_to_dir(
        &self,
        start_s: f64,
        duration_s: f64,
        fps: f64,
        out_dir: &Path,
    ) -> Result<Vec<PathBuf>, IngestError> {
        if !(fps > 0.0) {
            return Err(IngestError::InvalidArgument(format!("fps must be > 0, got {fps}")));
        }
        fs::create_dir_all(out_dir).map_err(|e| IngestError::io(out_dir, e))?;
        let end = (start_s + duration_s).min(self.duration_s);
        let mut j = 0usize;
        loop {
            let t = start_s + j as f64 / fps;
            if t >= end {
                break;
            }
            let path = out_dir.join(format!("{j:06}.png"));
            self.render(t)
                .save(&path)
                .map_err(|e| IngestError::Decode(format!("{}: {e}", path.display())))?;
            j += 1;
        }
        list_images(out_dir)
    }
}

/// In-process decoder for synthetic videos.
#[derive(Debug, Clone, Copy, Default)]
pub struct SyntheticDecoder;

impl FrameDecoder for SyntheticDecoder {
    fn probe_duration(&self, source: &Path) -> Result<f64, IngestError> {
        Ok(SyntheticVideo::load(source)?.duration_s)
    }

    fn decode_window(
        &self,
        source: &Path,
        start_s: f64,
        duration_s: f64,
        fps: f64,
        out_dir: &Path,
    ) -> Result<Vec<PathBuf>, IngestError> {
        SyntheticVideo::load(source)?.decode_to_dir(start_s, duration_s, fps, out_dir)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_uses_scene_colour_and_moves_marker() {
        let v = SyntheticVideo::new(60, 30, 4.0, vec![SyntheticScene::new(0.0, 2.0, [200, 0, 0], "red")]);
        let a = v.render(0.0);
        let b = v.render(0.5);
        assert_eq!(a.get_pixel(59, 0), &Rgb([200, 0, 0]));
        assert_ne!(a, b);
        assert_eq!(v.render(3.0).get_pixel(59, 0), &Rgb([0, 0, 0]));
    }

    #[test]
    fn window_is_clamped_to_video() {
        let dir = tempfile::tempdir().unwrap();
        let v = SyntheticVideo::new(20, 10, 12.0, vec![]);
        let files = v.decode_to_dir(10.0, 5.0, 2.0, dir.path()).unwrap();
        assert_eq!(files.len(), 4);
    }

    #[test]
    fn rejects_wrong_format_tag() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.json");
        fs::write(&p, r#"{"format":"mp4","width":1,"height":1,"duration_s":1.0,"scenes":[]}"#).unwrap();
        assert!(matches!(SyntheticVideo::load(&p), Err(IngestError::Decode(_))));
    }
}
