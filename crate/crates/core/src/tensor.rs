//! Channels-first float images and the bicubic resampler used on them.

use crate::error::{contract, Result};

/// A standardized 3×H×W image, channels first, row-major within a channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    data: Vec<f32>,
    height: usize,
    width: usize,
}

impl ImageTensor {
    pub fn new(data: Vec<f32>, height: usize, width: usize) -> Result<Self> {
        contract!(height > 0 && width > 0, "image must be non-empty");
        contract!(
            data.len() == 3 * height * width,
            "expected {} values for a 3x{height}x{width} image, got {}",
            3 * height * width,
            data.len()
        );
        contract!(data.iter().all(|v| v.is_finite()), "image holds non-finite values");
        Ok(Self { data, height, width })
    }

    pub fn filled(value: f32, height: usize, width: usize) -> Self {
        Self {
            data: vec![value; 3 * height * width],
            height,
            width,
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(3 * height * width);
        for c in 0..3 {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self { data, height, width }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Self> {
        contract!(
            height > 0 && width > 0 && top + height <= self.height && left + width <= self.width,
            "crop {height}x{width}+{top}+{left} exceeds image {}x{}",
            self.height,
            self.width
        );
        Ok(Self::from_fn(height, width, |c, y, x| self.get(c, top + y, left + x)))
    }

    /// Bicubic (Catmull-Rom, a = -0.5) resize with antialiasing on downscale.
    pub fn resize(&self, height: usize, width: usize) -> Result<Self> {
        contract!(height > 0 && width > 0, "resize target must be non-empty");
        if (height, width) == self.dims() {
            return Ok(self.clone());
        }
        let mut data = Vec::with_capacity(3 * height * width);
        for c in 0..3 {
            data.extend(resample_plane(self.plane(c), self.height, self.width, height, width));
        }
        Ok(Self { data, height, width })
    }

    /// Splits the image into `patch`×`patch` tiles, row-major, each flattened
    /// channel-major into `3·patch²` values.
    pub fn patchify(&self, patch: usize) -> Result<Vec<f32>> {
        contract!(
            patch > 0 && self.height.is_multiple_of(patch) && self.width.is_multiple_of(patch),
            "image {}x{} is not divisible into {patch}-pixel patches",
            self.height,
            self.width
        );
        let mut out = Vec::with_capacity(self.data.len());
        for py in 0..self.height / patch {
            for px in 0..self.width / patch {
                for c in 0..3 {
                    for y in 0..patch {
                        let row = (c * self.height + py * patch + y) * self.width + px * patch;
                        out.extend_from_slice(&self.data[row..row + patch]);
                    }
                }
            }
        }
        Ok(out)
    }
}

fn cubic(x: f64) -> f64 {
    const A: f64 = -0.5;
    let x = x.abs();
    if x < 1.0 {
        ((A + 2.0) * x - (A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        (((x - 5.0) * x + 8.0) * x - 4.0) * A
    } else {
        0.0
    }
}

/// Per-output-sample (first input index, normalized weights), following the
/// usual separable convolution resampler with a support widened on downscale.
fn resample_weights(input: usize, output: usize) -> Vec<(usize, Vec<f64>)> {
    let scale = input as f64 / output as f64;
    let filter_scale = scale.max(1.0);
    let support = 2.0 * filter_scale;
    (0..output)
        .map(|o| {
            let center = (o as f64 + 0.5) * scale;
            let lo = ((center - support + 0.5).floor().max(0.0)) as usize;
            let hi = ((center + support + 0.5).floor() as usize).min(input);
            let mut w: Vec<f64> = (lo..hi)
                .map(|i| cubic((i as f64 - center + 0.5) / filter_scale))
                .collect();
            let total: f64 = w.iter().sum();
            if total != 0.0 {
                w.iter_mut().for_each(|v| *v /= total);
            }
            (lo, w)
        })
        .collect()
}

pub(crate) fn resample_plane(src: &[f32], h: usize, w: usize, oh: usize, ow: usize) -> Vec<f32> {
    let wx = resample_weights(w, ow);
    let wy = resample_weights(h, oh);
    let mut horizontal = vec![0f64; h * ow];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for (x, (lo, weights)) in wx.iter().enumerate() {
            horizontal[y * ow + x] = weights
                .iter()
                .enumerate()
                .map(|(i, k)| k * f64::from(row[lo + i]))
                .sum();
        }
    }
    let mut out = vec![0f32; oh * ow];
    for (y, (lo, weights)) in wy.iter().enumerate() {
        for x in 0..ow {
            let v: f64 = weights
                .iter()
                .enumerate()
                .map(|(i, k)| k * horizontal[(lo + i) * ow + x])
                .sum();
            out[y * ow + x] = v as f32;
        }
    }
    out
}
