//! Dataset readers, preprocessing, tiling of non-square images, reference
//! sampling, heatmap export and the WCTF1 tensor container.

mod container;
mod heatmap;
mod manifest;
mod preprocess;
mod sampling;
mod synthetic;
mod tiling;

pub use container::{read_container, read_container_bytes, write_container, write_container_bytes, NamedTensor};
pub use heatmap::{export_heatmap, heatmap_value, read_heatmap};
pub use manifest::{load_manifest, load_test_manifest, Category, DatasetManifest, Label, Layout, Sample};
pub use preprocess::{
    load_mask, preprocess, preprocess_rgb, resized_dims, PreprocessSpec, Preprocessed, CLIP_MEAN, CLIP_STD,
};
pub use sampling::{sample_indices, sample_references, selection_digest, SAMPLER_NAME};
pub use synthetic::{write_toy_dataset, ToySpec};
pub use tiling::{merge_tile_predictions, plan_tiles, Tile, TilePlan};
