//! Seeded choice of few-shot reference images.
//!
//! The generator is PCG64 (128-bit LCG state, XSL-RR output) created as
//! `Pcg64::new(seed, 0xa02bdbf7bb3c0a7ac28fa16a64abf96)`. K indices are drawn by
//! a partial Fisher–Yates shuffle of `0..n`, where position `i` swaps with
//! `i + below(n − i)` and `below` is Lemire's multiply-and-reject bounded draw
//! over successive `next_u64` outputs.

use rand_pcg::rand_core::Rng;
use rand_pcg::Pcg64;
use sha2::{Digest, Sha256};

use super::manifest::DatasetManifest;
use crate::error::{contract, Result};

pub const SAMPLER_NAME: &str = "pcg64-xsl-rr/partial-fisher-yates/lemire";

const STREAM: u128 = 0xa02bdbf7bb3c0a7ac28fa16a64abf96;

fn below(rng: &mut Pcg64, range: u64) -> u64 {
    let mut m = u128::from(rng.next_u64()) * u128::from(range);
    let mut low = m as u64;
    if low < range {
        let threshold = range.wrapping_neg() % range;
        while low < threshold {
            m = u128::from(rng.next_u64()) * u128::from(range);
            low = m as u64;
        }
    }
    (m >> 64) as u64
}

/// `k` distinct indices from `0..n`, in draw order.
pub fn sample_indices(n: usize, k: usize, seed: u64) -> Result<Vec<usize>> {
    contract!(k <= n, "cannot draw {k} references from {n} images");
    let mut rng = Pcg64::new(u128::from(seed), STREAM);
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = i + below(&mut rng, (n - i) as u64) as usize;
        idx.swap(i, j);
    }
    idx.truncate(k);
    Ok(idx)
}

/// Ids of `k` normal train images of `category`, drawn uniformly without
/// replacement.
pub fn sample_references(manifest: &DatasetManifest, category: &str, k: usize, seed: u64) -> Result<Vec<String>> {
    let cat = manifest.category(category)?;
    let picks = sample_indices(cat.train.len(), k, seed)?;
    Ok(picks.into_iter().map(|i| cat.train[i].id.clone()).collect())
}

/// SHA-256 over the sorted ids, one per line; recorded in run reports.
pub fn selection_digest(ids: &[String]) -> String {
    let mut sorted: Vec<&str> = ids.iter().map(String::as_str).collect();
    sorted.sort_unstable();
    let mut h = Sha256::new();
    for id in sorted {
        h.update(id.as_bytes());
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}
