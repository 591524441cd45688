//! Clips, bandwidth accounting, clip files and synthetic fixtures.

mod svc1;
mod synthetic;

use std::path::{Path, PathBuf};

use image::imageops::{self, FilterType};
use image::Rgb32FImage;
use semcom_tensor::Tensor;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use svc1::{read_svc1, write_svc1, SVC1_MAGIC};
pub use synthetic::{make_synthetic_clip, make_synthetic_dataset, SyntheticKind};

/// Default number of frames per clip: one key frame plus one predicted frame.
pub const DEFAULT_GROUP_SIZE: usize = 2;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("no such file or directory: {0}")]
    MissingFile(PathBuf),
    #[error("need {needed} frames, found {found}")]
    TooFewFrames { needed: usize, found: usize },
    #[error("{h}x{w} is not divisible by the downsampling factor {t}")]
    BadDimensions { h: usize, w: usize, t: usize },
    #[error("shift ({dx}, {dy}) out of range for a {w}x{h} frame")]
    BadShift { dx: i64, dy: i64, w: usize, h: usize },
    #[error("rho must lie in (0, 1], got {0}")]
    BadRatio(f64),
    #[error("rho {rho} rounds to zero symbols for m = {m}")]
    ZeroSymbols { rho: f64, m: usize },
    #[error("invalid clip: {0}")]
    InvalidClip(String),
    #[error("malformed clip file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
}

/// `N` frames of `H x W x 3` pixels in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoClip {
    frames: Tensor<f32>,
    pub frame_rate: f64,
    pub clip_id: String,
}

impl VideoClip {
    pub fn new(frames: Tensor<f32>, frame_rate: f64, clip_id: impl Into<String>) -> Result<Self, DataError> {
        let s = frames.shape();
        if s.len() != 4 || s[3] != 3 {
            return Err(DataError::InvalidClip(format!("expected [n, h, w, 3], got {s:?}")));
        }
        if s[0] < 2 {
            return Err(DataError::TooFewFrames { needed: 2, found: s[0] });
        }
        if let Some(v) = frames.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(DataError::InvalidClip(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(VideoClip { frames, frame_rate, clip_id: clip_id.into() })
    }

    pub fn frames(&self) -> &Tensor<f32> {
        &self.frames
    }

    pub fn into_frames(self) -> Tensor<f32> {
        self.frames
    }

    pub fn num_frames(&self) -> usize {
        self.frames.dim(0)
    }

    pub fn height(&self) -> usize {
        self.frames.dim(1)
    }

    pub fn width(&self) -> usize {
        self.frames.dim(2)
    }

    /// Frame `i` as `[h, w, 3]`.
    pub fn frame(&self, i: usize) -> Tensor<f32> {
        let f = self.frames.narrow0(i, 1);
        f.reshape(&[self.height(), self.width(), 3])
    }

    /// Source dimension `3 H W N`.
    pub fn source_dim(&self) -> usize {
        self.frames.len()
    }

    pub fn check_divisible(&self, t: usize) -> Result<(), DataError> {
        check_divisible(self.height(), self.width(), t)
    }
}

pub fn check_divisible(h: usize, w: usize, t: usize) -> Result<(), DataError> {
    if t == 0 || !h.is_multiple_of(t) || !w.is_multiple_of(t) || h == 0 || w == 0 {
        return Err(DataError::BadDimensions { h, w, t });
    }
    Ok(())
}

/// Symbols per clip `k`, source dimension `m = 3 H W N` and `rho = k / m`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandwidthBudget {
    pub k: usize,
    pub m: usize,
    pub rho: f64,
}

impl BandwidthBudget {
    pub fn new(k: usize, m: usize) -> Self {
        BandwidthBudget { k, m, rho: k as f64 / m as f64 }
    }
}

/// `k = round(rho * 3 H W N)`; the stored ratio is the achieved one.
pub fn budget_for(rho: f64, h: usize, w: usize, n: usize) -> Result<BandwidthBudget, DataError> {
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(DataError::BadRatio(rho));
    }
    let m = 3 * h * w * n;
    let k = (rho * m as f64).round() as usize;
    if k == 0 {
        return Err(DataError::ZeroSymbols { rho, m });
    }
    Ok(BandwidthBudget::new(k, m))
}

pub fn normalize_u8(v: u8) -> f32 {
    v as f32 / 255.0
}

pub fn denormalize_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Load the first `group_size` frames of a clip, center-cropped to the target
/// aspect ratio and resized to `target_hw`.
///
/// `path` is either an SVC1 raw tensor file or a directory of PNG frames
/// (taken in file-name order). `t` is the model's downsampling factor.
pub fn load_clip(path: &Path, group_size: usize, target_hw: (usize, usize), t: usize) -> Result<VideoClip, DataError> {
    let (h, w) = target_hw;
    check_divisible(h, w, t)?;
    if !path.exists() {
        return Err(DataError::MissingFile(path.to_path_buf()));
    }
    let needed = group_size.max(2);
    let raw: Vec<Rgb32FImage> = if path.is_dir() {
        let files = png_files(path)?;
        if files.len() < needed {
            return Err(DataError::TooFewFrames { needed, found: files.len() });
        }
        files[..needed].iter().map(|p| Ok(image::open(p)?.to_rgb32f())).collect::<Result<_, DataError>>()?
    } else {
        let t = read_svc1(path)?;
        let n = t.dim(0);
        if n < needed {
            return Err(DataError::TooFewFrames { needed, found: n });
        }
        (0..needed).map(|i| tensor_to_image(&t, i)).collect()
    };
    let mut data = Vec::with_capacity(needed * h * w * 3);
    for img in &raw {
        let fitted = fit(img, h, w);
        data.extend(fitted.into_raw().into_iter().map(|v| v.clamp(0.0, 1.0)));
    }
    let id = path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    VideoClip::new(Tensor::from_vec(&[needed, h, w, 3], data), 30.0, id)
}

fn png_files(dir: &Path) -> Result<Vec<PathBuf>, DataError> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")))
        .collect();
    files.sort();
    Ok(files)
}

fn tensor_to_image(t: &Tensor<f32>, i: usize) -> Rgb32FImage {
    let (h, w) = (t.dim(1), t.dim(2));
    let len = h * w * 3;
    Rgb32FImage::from_raw(w as u32, h as u32, t.data()[i * len..(i + 1) * len].to_vec())
        .expect("buffer matches dimensions")
}

fn fit(img: &Rgb32FImage, h: usize, w: usize) -> Rgb32FImage {
    let (iw, ih) = (img.width() as usize, img.height() as usize);
    if (iw, ih) == (w, h) {
        return img.clone();
    }
    // Largest centered window with the target aspect ratio.
    let (cw, ch) = if iw * h > ih * w { (ih * w / h, ih) } else { (iw, iw * h / w) };
    let (cw, ch) = (cw.max(1), ch.max(1));
    let crop = imageops::crop_imm(img, ((iw - cw) / 2) as u32, ((ih - ch) / 2) as u32, cw as u32, ch as u32).to_image();
    if (cw, ch) == (w, h) {
        crop
    } else {
        imageops::resize(&crop, w as u32, h as u32, FilterType::Triangle)
    }
}

/// Write a clip's frames as numbered PNG files into `dir`.
pub fn write_png_frames(clip: &VideoClip, dir: &Path) -> Result<(), DataError> {
    std::fs::create_dir_all(dir)?;
    let (h, w) = (clip.height(), clip.width());
    for i in 0..clip.num_frames() {
        let f = clip.frame(i);
        let bytes: Vec<u8> = f.data().iter().map(|&v| denormalize_u8(v)).collect();
        let img = image::RgbImage::from_raw(w as u32, h as u32, bytes).expect("buffer matches dimensions");
        img.save(dir.join(format!("frame_{i:04}.png")))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_ratio_budget() {
        let b = budget_for(1.0, 8, 8, 2).unwrap();
        assert_eq!((b.k, b.m), (384, 384));
        assert_eq!(b.rho, 1.0);
    }

    #[test]
    fn degenerate_ratio_yields_zero_symbols() {
        assert!(matches!(budget_for(1e-9, 8, 8, 2), Err(DataError::ZeroSymbols { .. })));
        assert!(matches!(budget_for(0.0, 8, 8, 2), Err(DataError::BadRatio(_))));
        assert!(matches!(budget_for(1.5, 8, 8, 2), Err(DataError::BadRatio(_))));
    }

    #[test]
    fn clip_validation() {
        assert!(VideoClip::new(Tensor::full(&[2, 4, 4, 3], 1.5), 30.0, "x").is_err());
        assert!(matches!(VideoClip::new(Tensor::zeros(&[1, 4, 4, 3]), 30.0, "x"), Err(DataError::TooFewFrames { .. })));
    }

    #[test]
    fn u8_round_trip() {
        for v in 0..=255u8 {
            assert_eq!(denormalize_u8(normalize_u8(v)), v);
        }
    }
}
