//! Pixel-wise Shannon entropy (bits).

use rayon::prelude::*;

use crate::grid::{EntropyRaster, ProbabilityRaster};

/// `-sum p log2 p` with `0 log 0 = 0`, clamped to `[0, log2 C]`.
pub fn shannon_entropy(p: &[f64]) -> f64 {
    let h = p
        .iter()
        .filter(|&&v| v > 0.0)
        .fold(0.0, |acc, &v| acc - v * v.log2());
    h.clamp(0.0, (p.len() as f64).log2())
}

pub fn entropy_map(p: &ProbabilityRaster) -> EntropyRaster {
    let c = p.n_classes();
    let values = p.values().par_chunks(c).map(shannon_entropy).collect();
    EntropyRaster::from_values(p.shape().clone(), values)
}
