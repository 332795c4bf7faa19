//! Synthetic Gaussian-blob datasets for desk-scale experiments.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::vecdata::VectorDataset;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlobParams {
    pub n: usize,
    pub dim: usize,
    pub blobs: usize,
    /// Per-component standard deviation around each blob center.
    pub spread: f32,
    /// Centers are uniform in `[-center_range, center_range]^dim`.
    pub center_range: f32,
    pub seed: u64,
}

impl Default for BlobParams {
    fn default() -> Self {
        Self {
            n: 10_000,
            dim: 16,
            blobs: 8,
            spread: 1.0,
            center_range: 10.0,
            seed: 0,
        }
    }
}

/// Base vectors only; see [`gaussian_blobs_with_queries`].
pub fn gaussian_blobs(params: &BlobParams) -> Result<VectorDataset> {
    Ok(gaussian_blobs_with_queries(params, 0)?.0)
}

/// Base vectors plus `queries` extra points drawn from the same blobs.
///
/// Every point picks its blob uniformly at random, so insertion order carries
/// no locality.
pub fn gaussian_blobs_with_queries(
    params: &BlobParams,
    queries: usize,
) -> Result<(VectorDataset, Option<VectorDataset>)> {
    if params.n == 0 || params.dim == 0 || params.blobs == 0 {
        return Err(Error::arg("n, dim and blob count must be positive"));
    }
    if params.spread.is_nan() || params.spread <= 0.0 || params.center_range.is_nan() || params.center_range < 0.0 {
        return Err(Error::arg("spread must be positive and center range nonnegative"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let centers: Vec<Vec<f32>> = (0..params.blobs)
        .map(|_| {
            (0..params.dim)
                .map(|_| {
                    if params.center_range > 0.0 {
                        rng.random_range(-params.center_range..=params.center_range)
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    let noise = Normal::new(0.0f32, params.spread).map_err(|e| Error::arg(e.to_string()))?;
    let mut draw = |count: usize| {
        let mut data = Vec::with_capacity(count * params.dim);
        for _ in 0..count {
            let center = &centers[rng.random_range(0..params.blobs)];
            data.extend(center.iter().map(|&c| c + noise.sample(&mut rng)));
        }
        data
    };
    let base = VectorDataset::new(params.dim, draw(params.n))?;
    let queries = if queries > 0 {
        Some(VectorDataset::new(params.dim, draw(queries))?)
    } else {
        None
    };
    Ok((base, queries))
}
