//! Seeded k-means (k-means++ seeding, Lloyd iterations) shared by the
//! quantizer and the layout planner.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::vecdata::l2_squared_f64;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub dim: usize,
    /// `k * dim` centroid components, row-major.
    pub centroids: Vec<f32>,
    pub assignment: Vec<u32>,
    /// Total squared error after each assignment step.
    pub distortion_history: Vec<f64>,
    pub iterations: usize,
}

impl KMeansResult {
    pub fn k(&self) -> usize {
        self.centroids.len() / self.dim
    }

    pub fn centroid(&self, c: usize) -> &[f32] {
        &self.centroids[c * self.dim..(c + 1) * self.dim]
    }

    pub fn distortion(&self) -> f64 {
        self.distortion_history.last().copied().unwrap_or(0.0)
    }
}

/// Clusters the row-major `points` into `k` groups.
///
/// Assignment ties go to the lowest centroid index. Clusters that become empty
/// take the point farthest from its own centroid (from a cluster with at
/// least two members). Iteration stops at an assignment fixpoint or after
/// `max_iters` updates.
pub fn lloyd(points: &[f32], dim: usize, k: usize, max_iters: usize, seed: u64) -> Result<KMeansResult> {
    if dim == 0 || !points.len().is_multiple_of(dim) || points.is_empty() {
        return Err(Error::arg("k-means needs a nonempty row-major point buffer"));
    }
    let n = points.len() / dim;
    if k == 0 || k > n {
        return Err(Error::arg(format!("k = {k} must be in 1..={n}")));
    }
    if max_iters == 0 {
        return Err(Error::arg("max_iters must be positive"));
    }
    let row = |i: usize| &points[i * dim..(i + 1) * dim];

    let mut centroids = plus_plus_init(points, dim, k, seed);
    let (mut assignment, first) = assign(points, dim, &centroids);
    let mut history = vec![first];
    let mut iterations = 0;
    for _ in 0..max_iters {
        iterations += 1;
        repair_empty(points, dim, &mut centroids, &mut assignment);
        centroids = means(points, dim, k, &assignment);
        let (next, distortion) = assign(points, dim, &centroids);
        history.push(distortion);
        if next == assignment {
            break;
        }
        assignment = next;
    }
    repair_empty(points, dim, &mut centroids, &mut assignment);
    centroids = means(points, dim, k, &assignment);
    let final_distortion: f64 = (0..n)
        .map(|i| l2_squared_f64(row(i), &centroids[assignment[i] as usize * dim..][..dim]))
        .sum();
    if final_distortion < *history.last().unwrap() {
        history.push(final_distortion);
    }
    Ok(KMeansResult {
        dim,
        centroids,
        assignment,
        distortion_history: history,
        iterations,
    })
}

fn plus_plus_init(points: &[f32], dim: usize, k: usize, seed: u64) -> Vec<f32> {
    let n = points.len() / dim;
    let row = |i: usize| &points[i * dim..(i + 1) * dim];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = vec![false; n];
    let mut centroids = Vec::with_capacity(k * dim);

    let first = rng.random_range(0..n);
    chosen[first] = true;
    centroids.extend_from_slice(row(first));
    let mut nearest: Vec<f64> = (0..n).map(|i| l2_squared_f64(row(i), row(first))).collect();

    for _ in 1..k {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, &w) in nearest.iter().enumerate() {
                if w <= 0.0 {
                    continue;
                }
                if target < w {
                    pick = Some(i);
                    break;
                }
                target -= w;
            }
            // Rounding can exhaust the walk; fall back to the last weighted point.
            pick.unwrap_or_else(|| nearest.iter().rposition(|&w| w > 0.0).unwrap())
        } else {
            let remaining: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
            remaining[rng.random_range(0..remaining.len())]
        };
        chosen[pick] = true;
        centroids.extend_from_slice(row(pick));
        let c = row(pick);
        nearest
            .par_iter_mut()
            .enumerate()
            .for_each(|(i, d)| *d = d.min(l2_squared_f64(&points[i * dim..(i + 1) * dim], c)));
    }
    centroids
}

/// Nearest centroid per point (lowest index on ties) and the total error.
fn assign(points: &[f32], dim: usize, centroids: &[f32]) -> (Vec<u32>, f64) {
    let pairs: Vec<(u32, f64)> = points
        .par_chunks_exact(dim)
        .map(|p| nearest_centroid(p, centroids, dim))
        .collect();
    let distortion = pairs.iter().map(|&(_, d)| d).sum();
    (pairs.into_iter().map(|(c, _)| c).collect(), distortion)
}

/// Index and squared distance of the centroid nearest to `p`.
pub fn nearest_centroid(p: &[f32], centroids: &[f32], dim: usize) -> (u32, f64) {
    let mut best = (0u32, f64::INFINITY);
    for (c, centroid) in centroids.chunks_exact(dim).enumerate() {
        let d = l2_squared_f64(p, centroid);
        if d < best.1 {
            best = (c as u32, d);
        }
    }
    best
}

fn repair_empty(points: &[f32], dim: usize, centroids: &mut [f32], assignment: &mut [u32]) {
    let k = centroids.len() / dim;
    let mut sizes = vec![0usize; k];
    for &a in assignment.iter() {
        sizes[a as usize] += 1;
    }
    for empty in 0..k {
        if sizes[empty] > 0 {
            continue;
        }
        let mut victim: Option<(usize, f64)> = None;
        for (i, &a) in assignment.iter().enumerate() {
            if sizes[a as usize] < 2 {
                continue;
            }
            let a = a as usize;
            let d = l2_squared_f64(&points[i * dim..(i + 1) * dim], &centroids[a * dim..(a + 1) * dim]);
            if victim.is_none_or(|(_, best)| d > best) {
                victim = Some((i, d));
            }
        }
        let (i, _) = victim.expect("k <= n leaves a cluster with two members");
        sizes[assignment[i] as usize] -= 1;
        sizes[empty] += 1;
        assignment[i] = empty as u32;
        centroids[empty * dim..(empty + 1) * dim].copy_from_slice(&points[i * dim..(i + 1) * dim]);
    }
}

fn means(points: &[f32], dim: usize, k: usize, assignment: &[u32]) -> Vec<f32> {
    let mut sums = vec![0f64; k * dim];
    let mut counts = vec![0usize; k];
    for (p, &a) in points.chunks_exact(dim).zip(assignment) {
        let a = a as usize;
        counts[a] += 1;
        for (s, &x) in sums[a * dim..(a + 1) * dim].iter_mut().zip(p) {
            *s += f64::from(x);
        }
    }
    sums.chunks_exact(dim)
        .zip(&counts)
        .flat_map(|(s, &c)| s.iter().map(move |&v| (v / c as f64) as f32))
        .collect()
}
