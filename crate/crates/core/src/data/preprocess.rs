use std::path::Path;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::tensor::ImageTensor;

#[allow(clippy::excessive_precision)]
pub const CLIP_MEAN: [f32; 3] = [0.48145466, 0.4578275, 0.40821073];
#[allow(clippy::excessive_precision)]
pub const CLIP_STD: [f32; 3] = [0.26862954, 0.26130258, 0.27577711];

/// Shorter-edge bicubic resize plus per-channel standardization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreprocessSpec {
    pub target: usize,
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl Default for PreprocessSpec {
    fn default() -> Self {
        Self {
            target: 240,
            mean: CLIP_MEAN,
            std: CLIP_STD,
        }
    }
}

impl PreprocessSpec {
    pub fn with_target(target: usize) -> Self {
        Self {
            target,
            ..Self::default()
        }
    }

    pub fn validate(&self, patch_size: usize) -> Result<()> {
        if self.target == 0 || patch_size == 0 || !self.target.is_multiple_of(patch_size) {
            return Err(Error::Config(format!(
                "preprocess target {} is not a multiple of the patch size {patch_size}",
                self.target
            )));
        }
        if self
            .std
            .iter()
            .any(|&s| s.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater))
        {
            return Err(Error::Config("standardization std must be positive".into()));
        }
        Ok(())
    }
}

/// A preprocessed image and the size it had on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct Preprocessed {
    pub tensor: ImageTensor,
    /// (height, width) before resizing.
    pub original: (usize, usize),
}

/// Size after scaling the shorter edge to `target`, long edge rounded.
pub fn resized_dims(dims: (usize, usize), target: usize) -> (usize, usize) {
    let (h, w) = dims;
    let scale = |long: usize, short: usize| ((long * target + short / 2) / short).max(1);
    if h <= w {
        (target, scale(w, h))
    } else {
        (scale(h, w), target)
    }
}

pub fn preprocess_rgb(img: &RgbImage, spec: &PreprocessSpec) -> Result<Preprocessed> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    contract!(h > 0 && w > 0, "image is empty");
    let raw = img.as_raw();
    let standardized = ImageTensor::from_fn(h, w, |c, y, x| {
        let v = f32::from(raw[(y * w + x) * 3 + c]) / 255.0;
        (v - spec.mean[c]) / spec.std[c]
    });
    let (th, tw) = resized_dims((h, w), spec.target);
    Ok(Preprocessed {
        tensor: standardized.resize(th, tw)?,
        original: (h, w),
    })
}

fn open(path: &Path) -> Result<image::DynamicImage> {
    image::open(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Image(other),
    })
}

pub fn preprocess(path: impl AsRef<Path>, spec: &PreprocessSpec) -> Result<Preprocessed> {
    preprocess_rgb(&open(path.as_ref())?.to_rgb8(), spec)
}

/// Loads a ground-truth mask, resizes it to `dims` by nearest neighbour and
/// binarizes at > 127.
pub fn load_mask(path: impl AsRef<Path>, dims: (usize, usize)) -> Result<Vec<bool>> {
    let img = open(path.as_ref())?.to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let (th, tw) = dims;
    let raw = img.as_raw();
    let src = |dst: usize, len: usize, target: usize| ((2 * dst + 1) * len / (2 * target)).min(len - 1);
    let mut out = Vec::with_capacity(th * tw);
    for y in 0..th {
        let sy = src(y, h, th);
        for x in 0..tw {
            out.push(raw[sy * w + src(x, w, tw)] > 127);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{GrayImage, Luma, Rgb};

    #[test]
    fn dims() {
        assert_eq!(resized_dims((480, 480), 240), (240, 240));
        assert_eq!(resized_dims((1000, 1500), 240), (240, 360));
        assert_eq!(resized_dims((1500, 1000), 240), (360, 240));
    }

    #[test]
    fn mean_pixel_standardizes_to_zero() {
        let v = (0.48145466f32 * 255.0).round() as u8;
        let img = RgbImage::from_pixel(240, 240, Rgb([v, 0, 255]));
        let p = preprocess_rgb(&img, &PreprocessSpec::default()).unwrap();
        assert_eq!(p.original, (240, 240));
        let got = p.tensor.get(0, 10, 10);
        let want = (f32::from(v) / 255.0 - CLIP_MEAN[0]) / CLIP_STD[0];
        assert!((got - want).abs() < 1e-5 && want.abs() < 0.01);
        assert!((p.tensor.get(2, 0, 0) - (1.0 - CLIP_MEAN[2]) / CLIP_STD[2]).abs() < 1e-5);
    }

    #[test]
    fn halving_and_aspect() {
        let img = RgbImage::from_fn(480, 480, |x, y| Rgb([(x % 256) as u8, (y % 256) as u8, 7]));
        let p = preprocess_rgb(&img, &PreprocessSpec::default()).unwrap();
        assert_eq!(p.tensor.dims(), (240, 240));
        let wide = RgbImage::new(150, 100);
        let p = preprocess_rgb(&wide, &PreprocessSpec::with_target(24)).unwrap();
        assert_eq!(p.tensor.dims(), (24, 36));
        assert_eq!(p.original, (100, 150));
    }

    #[test]
    fn deterministic_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.png");
        RgbImage::from_fn(50, 40, |x, y| Rgb([(x * 5) as u8, (y * 6) as u8, 3]))
            .save(&path)
            .unwrap();
        let spec = PreprocessSpec::with_target(32);
        assert_eq!(preprocess(&path, &spec).unwrap(), preprocess(&path, &spec).unwrap());
        std::fs::write(dir.path().join("bad.png"), b"not a png").unwrap();
        assert!(preprocess(dir.path().join("bad.png"), &spec).is_err());
        assert_eq!(preprocess(dir.path().join("none.png"), &spec).unwrap_err().kind(), "io");
    }

    #[test]
    fn masks_binarize_and_resize() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.png");
        GrayImage::from_fn(4, 4, |x, _| Luma([if x >= 2 { 255 } else { 127 }]))
            .save(&path)
            .unwrap();
        let m = load_mask(&path, (2, 2)).unwrap();
        assert_eq!(m, vec![false, true, false, true]);
        let up = load_mask(&path, (8, 8)).unwrap();
        assert_eq!(up.iter().filter(|&&b| b).count(), 32);
    }

    #[test]
    fn spec_validation() {
        assert!(PreprocessSpec::default().validate(16).is_ok());
        assert!(PreprocessSpec::with_target(250).validate(16).is_err());
    }
}
