//! Seeded toy dataset in the MVTec layout: uniform-texture normals and
//! copies with a high-contrast square pasted in.

use std::path::Path;

use image::{GrayImage, Luma, Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::manifest::{load_manifest, DatasetManifest, Layout};
use crate::error::{contract, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ToySpec {
    pub category: String,
    pub height: u32,
    pub width: u32,
    pub train: usize,
    pub test_normal: usize,
    pub test_defect: usize,
    /// Side of the defect square in pixels.
    pub defect_side: u32,
    pub seed: u64,
}

impl Default for ToySpec {
    fn default() -> Self {
        Self {
            category: "tile".into(),
            height: 240,
            width: 240,
            train: 4,
            test_normal: 8,
            test_defect: 8,
            defect_side: 48,
            seed: 0,
        }
    }
}

fn texture(rng: &mut ChaCha8Rng, spec: &ToySpec) -> RgbImage {
    let base = [150u8, 130, 110];
    RgbImage::from_fn(spec.width, spec.height, |_, _| {
        let n: i16 = rng.random_range(-12..=12);
        Rgb(base.map(|c| (i16::from(c) + n).clamp(0, 255) as u8))
    })
}

fn save(img: &RgbImage, path: &Path) -> Result<()> {
    std::fs::create_dir_all(path.parent().expect("file inside a directory")).map_err(|e| Error::io(path, e))?;
    img.save(path)?;
    Ok(())
}

/// Writes the dataset under `root/<category>` and returns its manifest.
pub fn write_toy_dataset(root: impl AsRef<Path>, spec: &ToySpec) -> Result<DatasetManifest> {
    let root = root.as_ref();
    contract!(spec.train > 0, "the toy dataset needs train images");
    contract!(
        spec.defect_side > 0 && spec.defect_side < spec.height.min(spec.width),
        "defect side {} must be smaller than the image",
        spec.defect_side
    );
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let cat = root.join(&spec.category);
    for i in 0..spec.train {
        save(&texture(&mut rng, spec), &cat.join(format!("train/good/{i:03}.png")))?;
    }
    for i in 0..spec.test_normal {
        save(&texture(&mut rng, spec), &cat.join(format!("test/good/{i:03}.png")))?;
    }
    for i in 0..spec.test_defect {
        let mut img = texture(&mut rng, spec);
        let s = spec.defect_side;
        let top = rng.random_range(0..=spec.height - s);
        let left = rng.random_range(0..=spec.width - s);
        let shade = if rng.random_bool(0.5) {
            [20, 20, 20]
        } else {
            [250, 250, 250]
        };
        let mut mask = GrayImage::new(spec.width, spec.height);
        for y in top..top + s {
            for x in left..left + s {
                img.put_pixel(x, y, Rgb(shade));
                mask.put_pixel(x, y, Luma([255]));
            }
        }
        save(&img, &cat.join(format!("test/square/{i:03}.png")))?;
        let mpath = cat.join(format!("ground_truth/square/{i:03}_mask.png"));
        std::fs::create_dir_all(mpath.parent().expect("file inside a directory")).map_err(|e| Error::io(&mpath, e))?;
        mask.save(&mpath)?;
    }
    load_manifest(root, Layout::Mvtec)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_and_determinism() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let spec = ToySpec {
            height: 32,
            width: 48,
            defect_side: 8,
            ..ToySpec::default()
        };
        let m = write_toy_dataset(a.path(), &spec).unwrap();
        write_toy_dataset(b.path(), &spec).unwrap();
        let cat = m.category("tile").unwrap();
        assert_eq!((cat.train.len(), cat.test.len()), (4, 16));
        assert_eq!(cat.test.iter().filter(|s| s.mask.is_some()).count(), 8);
        let rel = "tile/test/square/003.png";
        assert_eq!(
            std::fs::read(a.path().join(rel)).unwrap(),
            std::fs::read(b.path().join(rel)).unwrap()
        );
        let img = image::open(a.path().join(rel)).unwrap();
        assert_eq!((img.width(), img.height()), (48, 32));
    }
}
