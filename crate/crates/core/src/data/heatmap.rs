use std::path::Path;

use image::{ImageBuffer, Luma};

use crate::error::{contract, Error, Result};
use crate::windows::{Resolution, ScoreMap};

/// 16-bit level for a score: `score·65535` rounded half up.
pub fn heatmap_value(score: f64) -> u16 {
    (score.clamp(0.0, 1.0) * 65535.0 + 0.5).floor() as u16
}

/// Writes a map as a 16-bit grayscale PNG of the same size.
pub fn export_heatmap(map: &ScoreMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let (h, w) = map.dims();
    contract!(
        map.values().iter().all(|v| (0.0..=1.0).contains(v)),
        "heatmap scores must lie in [0, 1]"
    );
    let pixels: Vec<u16> = map.values().iter().map(|&v| heatmap_value(v)).collect();
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(w as u32, h as u32, pixels).expect("buffer sized to the map");
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| match e {
            image::ImageError::IoError(io) => Error::io(path, io),
            other => Error::Image(other),
        })
}

/// Reads a heatmap written by [`export_heatmap`] back into scores.
pub fn read_heatmap(path: impl AsRef<Path>) -> Result<ScoreMap> {
    let path = path.as_ref();
    let img = image::open(path)
        .map_err(|e| match e {
            image::ImageError::IoError(io) => Error::io(path, io),
            other => Error::Image(other),
        })?
        .into_luma16();
    let (w, h) = img.dimensions();
    let values = img.into_raw().into_iter().map(|v| f64::from(v) / 65535.0).collect();
    ScoreMap::new(h as usize, w as usize, values, Resolution::Pixel)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn levels() {
        assert_eq!(heatmap_value(1.0), 65535);
        assert_eq!(heatmap_value(0.0), 0);
        assert_eq!(heatmap_value(0.5), 32768);
    }

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.png");
        let map = ScoreMap::new(2, 3, vec![0.0, 0.25, 0.5, 0.75, 1.0, 0.1], Resolution::Pixel).unwrap();
        export_heatmap(&map, &path).unwrap();
        let back = read_heatmap(&path).unwrap();
        assert_eq!(back.dims(), (2, 3));
        for (a, b) in back.values().iter().zip(map.values()) {
            assert!((a - b).abs() <= 0.5 / 65535.0 + 1e-12);
        }
        assert!(export_heatmap(&map, dir.path().join("missing/m.png")).is_err());
    }
}
