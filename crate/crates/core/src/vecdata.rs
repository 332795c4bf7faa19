//! Vector datasets, Euclidean distance, brute-force ground truth and recall.
//!
//! Datasets are read from and written to the `fvecs` container: each record is
//! a little-endian `i32` dimension followed by that many little-endian `f32`
//! components. Ground truth uses the matching `ivecs` container with `i32`
//! components.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// An immutable collection of `n` vectors of dimension `dim`, addressed by
/// dense ids `0..n`.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorDataset {
    dim: usize,
    data: Vec<f32>,
}

impl VectorDataset {
    /// Builds a dataset from a flat row-major buffer.
    pub fn new(dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::arg("dimension must be positive"));
        }
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if !data.len().is_multiple_of(dim) {
            return Err(Error::arg(format!(
                "buffer of {} values is not a multiple of dimension {dim}",
                data.len()
            )));
        }
        Ok(Self { dim, data })
    }

    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self> {
        let first = rows.first().ok_or(Error::EmptyDataset)?;
        let dim = first.as_ref().len();
        let mut data = Vec::with_capacity(dim * rows.len());
        for row in rows {
            let row = row.as_ref();
            if row.len() != dim {
                return Err(Error::Dimension {
                    left: dim,
                    right: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Self::new(dim, data)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Vector for node `id`. Panics when `id` is out of range.
    pub fn get(&self, id: u32) -> &[f32] {
        let start = id as usize * self.dim;
        &self.data[start..start + self.dim]
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[f32] {
        &self.data
    }

    /// Component-wise mean of all vectors.
    pub fn mean(&self) -> Vec<f32> {
        let mut acc = vec![0f64; self.dim];
        for row in self.iter() {
            for (a, &x) in acc.iter_mut().zip(row) {
                *a += f64::from(x);
            }
        }
        let n = self.len() as f64;
        acc.into_iter().map(|a| (a / n) as f32).collect()
    }

    /// Rows selected by `ids`, in that order.
    pub fn subset(&self, ids: &[u32]) -> Result<Self> {
        let mut data = Vec::with_capacity(ids.len() * self.dim);
        for &id in ids {
            if id as usize >= self.len() {
                return Err(Error::arg(format!("id {id} out of range for {} vectors", self.len())));
            }
            data.extend_from_slice(self.get(id));
        }
        Self::new(self.dim, data)
    }

    pub fn check_query(&self, q: &[f32]) -> Result<()> {
        if q.len() != self.dim {
            return Err(Error::Dimension {
                left: self.dim,
                right: q.len(),
            });
        }
        Ok(())
    }
}

/// Decodes an `fvecs` byte buffer.
pub fn parse_fvecs(bytes: &[u8]) -> Result<VectorDataset> {
    let (dim, data) = parse_records(bytes, f32::from_le_bytes)?;
    VectorDataset::new(dim, data)
}

pub fn load_fvecs(path: impl AsRef<Path>) -> Result<VectorDataset> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_fvecs(&bytes)
}

pub fn encode_fvecs(dataset: &VectorDataset) -> Vec<u8> {
    let dim = dataset.dim();
    let mut out = Vec::with_capacity(dataset.len() * (4 + 4 * dim));
    for row in dataset.iter() {
        out.extend_from_slice(&(dim as i32).to_le_bytes());
        for &x in row {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

pub fn write_fvecs(path: impl AsRef<Path>, dataset: &VectorDataset) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_fvecs(dataset)).map_err(|e| Error::io(path, e))
}

fn parse_records<T>(bytes: &[u8], decode: impl Fn([u8; 4]) -> T) -> Result<(usize, Vec<T>)> {
    if bytes.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut dim: Option<usize> = None;
    let mut values = Vec::new();
    let mut offset = 0usize;
    while offset < bytes.len() {
        let Some(head) = bytes.get(offset..offset + 4) else {
            return Err(Error::Format {
                offset: offset as u64,
                message: format!("truncated record header ({} of 4 bytes)", bytes.len() - offset),
            });
        };
        let declared = i32::from_le_bytes(head.try_into().unwrap());
        if declared <= 0 {
            return Err(Error::Format {
                offset: offset as u64,
                message: format!("non-positive dimension {declared}"),
            });
        }
        let d = declared as usize;
        match dim {
            None => dim = Some(d),
            Some(expected) if expected != d => {
                return Err(Error::InconsistentDimension {
                    expected,
                    found: d,
                    offset: offset as u64,
                });
            }
            Some(_) => {}
        }
        let body_start = offset + 4;
        let body_end = body_start + 4 * d;
        if body_end > bytes.len() {
            return Err(Error::Format {
                offset: offset as u64,
                message: format!(
                    "truncated record: needs {} bytes, {} available",
                    4 + 4 * d,
                    bytes.len() - offset
                ),
            });
        }
        values.extend(
            bytes[body_start..body_end]
                .chunks_exact(4)
                .map(|c| decode(c.try_into().unwrap())),
        );
        offset = body_end;
    }
    Ok((dim.expect("at least one record"), values))
}

/// Exact top-k neighbor lists for a batch of queries, as stored in `ivecs`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundTruth {
    k: usize,
    lists: Vec<Vec<u32>>,
}

impl GroundTruth {
    pub fn new(lists: Vec<Vec<u32>>) -> Result<Self> {
        let k = lists.first().map(Vec::len).ok_or(Error::EmptyDataset)?;
        if k == 0 {
            return Err(Error::arg("ground truth lists must be nonempty"));
        }
        if let Some(bad) = lists.iter().find(|l| l.len() != k) {
            return Err(Error::arg(format!(
                "ground truth lists have unequal lengths {k} and {}",
                bad.len()
            )));
        }
        Ok(Self { k, lists })
    }

    /// Brute-force ground truth for every query, computed in parallel.
    pub fn compute(dataset: &VectorDataset, queries: &VectorDataset, k: usize) -> Result<Self> {
        use rayon::prelude::*;
        if queries.dim() != dataset.dim() {
            return Err(Error::Dimension {
                left: dataset.dim(),
                right: queries.dim(),
            });
        }
        let lists = (0..queries.len() as u32)
            .into_par_iter()
            .map(|qi| ground_truth_topk(dataset, queries.get(qi), k))
            .collect::<Result<Vec<_>>>()?;
        Self::new(lists)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.lists.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lists.is_empty()
    }

    pub fn get(&self, query: usize) -> &[u32] {
        &self.lists[query]
    }

    /// The first `k` entries of every list.
    pub fn truncated(&self, k: usize) -> Result<Self> {
        if k == 0 || k > self.k {
            return Err(Error::arg(format!(
                "cannot truncate ground truth of depth {} to {k}",
                self.k
            )));
        }
        Self::new(self.lists.iter().map(|l| l[..k].to_vec()).collect())
    }

    pub fn encode_ivecs(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.lists.len() * (4 + 4 * self.k));
        for list in &self.lists {
            out.extend_from_slice(&(self.k as i32).to_le_bytes());
            for &id in list {
                out.extend_from_slice(&(id as i32).to_le_bytes());
            }
        }
        out
    }

    pub fn parse_ivecs(bytes: &[u8]) -> Result<Self> {
        let (k, ids) = parse_records(bytes, i32::from_le_bytes)?;
        if let Some(pos) = ids.iter().position(|&id| id < 0) {
            return Err(Error::Format {
                offset: ((pos / k) * (4 + 4 * k) + 4 + 4 * (pos % k)) as u64,
                message: format!("negative id {}", ids[pos]),
            });
        }
        Self::new(
            ids.chunks_exact(k)
                .map(|c| c.iter().map(|&id| id as u32).collect())
                .collect(),
        )
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::parse_ivecs(&bytes)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.encode_ivecs()).map_err(|e| Error::io(path, e))
    }
}

/// Squared Euclidean distance accumulated in double precision.
///
/// Callers guarantee equal lengths; use [`l2_distance`] for checked input.
#[inline]
pub fn l2_squared_f64(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = f64::from(x) - f64::from(y);
            d * d
        })
        .sum()
}

#[inline]
pub fn l2_squared(a: &[f32], b: &[f32]) -> f32 {
    l2_squared_f64(a, b) as f32
}

pub fn l2_distance(a: &[f32], b: &[f32]) -> Result<f32> {
    if a.len() != b.len() {
        return Err(Error::Dimension {
            left: a.len(),
            right: b.len(),
        });
    }
    Ok(l2_squared_f64(a, b).sqrt() as f32)
}

/// Exact `k` nearest ids to `q`, ascending by distance, ties by ascending id.
pub fn ground_truth_topk(dataset: &VectorDataset, q: &[f32], k: usize) -> Result<Vec<u32>> {
    dataset.check_query(q)?;
    if k == 0 || k > dataset.len() {
        return Err(Error::arg(format!("k = {k} must be in 1..={}", dataset.len())));
    }
    let mut scored: Vec<(f64, u32)> = dataset
        .iter()
        .enumerate()
        .map(|(id, v)| (l2_squared_f64(q, v), id as u32))
        .collect();
    let cmp = |a: &(f64, u32), b: &(f64, u32)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < scored.len() {
        scored.select_nth_unstable_by(k - 1, cmp);
        scored.truncate(k);
    }
    scored.sort_unstable_by(cmp);
    Ok(scored.into_iter().map(|(_, id)| id).collect())
}

/// `|result ∩ truth| / k`.
pub fn recall_at_k(result: &[u32], truth: &[u32]) -> Result<f64> {
    if result.len() != truth.len() {
        return Err(Error::arg(format!(
            "result has {} ids but ground truth has {}",
            result.len(),
            truth.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::arg("recall of an empty list is undefined"));
    }
    let hits = result.iter().filter(|id| truth.contains(id)).count();
    Ok(hits as f64 / truth.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn record(d: i32, vals: &[f32]) -> Vec<u8> {
        let mut out = d.to_le_bytes().to_vec();
        for v in vals {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    #[test]
    fn single_record() {
        let ds = parse_fvecs(&record(2, &[1.0, 2.0])).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.dim(), 2);
        assert_eq!(ds.get(0), &[1.0, 2.0]);
    }

    #[test]
    fn inconsistent_dimension_is_rejected() {
        let mut bytes = record(2, &[1.0, 2.0]);
        bytes.extend(record(3, &[1.0, 2.0, 3.0]));
        match parse_fvecs(&bytes) {
            Err(Error::InconsistentDimension {
                expected: 2,
                found: 3,
                offset: 12,
            }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn truncated_record_names_offset() {
        let mut bytes = record(2, &[1.0, 2.0]);
        bytes.extend(&record(2, &[3.0, 4.0])[..7]);
        let err = parse_fvecs(&bytes).unwrap_err();
        assert!(matches!(err, Error::Format { offset: 12, .. }), "{err}");
        assert!(err.to_string().contains("12"));
    }

    #[test]
    fn empty_file() {
        assert!(matches!(parse_fvecs(&[]), Err(Error::EmptyDataset)));
    }

    #[test]
    fn load_from_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.fvecs");
        let ds = VectorDataset::from_rows(&[[1.0f32, 2.0], [3.0, 4.0]]).unwrap();
        write_fvecs(&path, &ds).unwrap();
        assert_eq!(load_fvecs(&path).unwrap(), ds);
        let missing = dir.path().join("missing.fvecs");
        let err = load_fvecs(&missing).unwrap_err();
        assert!(err.to_string().contains("missing.fvecs"));
    }

    #[test]
    fn distance_examples() {
        assert_eq!(l2_distance(&[7.5, -1.0, 0.0], &[7.5, -1.0, 0.0]).unwrap(), 0.0);
        assert_eq!(l2_distance(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 5.0);
        assert!(matches!(
            l2_distance(&[0.0], &[1.0, 2.0]),
            Err(Error::Dimension { left: 1, right: 2 })
        ));
    }

    #[test]
    fn distance_matches_componentwise_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let a: Vec<f32> = (0..16).map(|_| rng.random_range(-5.0..5.0)).collect();
            let b: Vec<f32> = (0..16).map(|_| rng.random_range(-5.0..5.0)).collect();
            let mut oracle = 0f64;
            for i in 0..16 {
                let d = a[i] as f64 - b[i] as f64;
                oracle += d * d;
            }
            let got = l2_distance(&a, &b).unwrap() as f64;
            assert!((got - oracle.sqrt()).abs() < 1e-6 * oracle.sqrt().max(1.0));
        }
    }

    #[test]
    fn ground_truth_examples() {
        let ds = VectorDataset::from_rows(&[[0.0f32, 0.0], [1.0, 0.0], [5.0, 0.0]]).unwrap();
        assert_eq!(ground_truth_topk(&ds, &[0.9, 0.0], 2).unwrap(), vec![1, 0]);
        assert_eq!(ground_truth_topk(&ds, &[4.0, 0.0], 3).unwrap(), vec![2, 1, 0]);
        assert!(ground_truth_topk(&ds, &[0.0, 0.0], 4).is_err());

        let tie = VectorDataset::from_rows(&[[1.0f32, 0.0], [-1.0, 0.0], [0.0, 1.0]]).unwrap();
        assert_eq!(ground_truth_topk(&tie, &[0.0, 0.0], 3).unwrap(), vec![0, 1, 2]);
    }

    #[test]
    fn recall_examples() {
        let truth: Vec<u32> = (0..10).collect();
        assert_eq!(recall_at_k(&truth, &truth).unwrap(), 1.0);
        let disjoint: Vec<u32> = (10..20).collect();
        assert_eq!(recall_at_k(&disjoint, &truth).unwrap(), 0.0);
        let half: Vec<u32> = (5..15).collect();
        assert_eq!(recall_at_k(&half, &truth).unwrap(), 0.5);
        assert!(recall_at_k(&truth[..3], &truth).is_err());
    }

    #[test]
    fn ivecs_round_trip() {
        let gt = GroundTruth::new(vec![vec![3, 1], vec![0, 2]]).unwrap();
        assert_eq!(GroundTruth::parse_ivecs(&gt.encode_ivecs()).unwrap(), gt);
    }

    fn dataset_strategy() -> impl Strategy<Value = VectorDataset> {
        (1usize..6, 1usize..40).prop_flat_map(|(dim, n)| {
            prop::collection::vec(-1e3f32..1e3, dim * n).prop_map(move |data| VectorDataset::new(dim, data).unwrap())
        })
    }

    proptest! {
        #[test]
        fn fvecs_round_trip(ds in dataset_strategy()) {
            prop_assert_eq!(parse_fvecs(&encode_fvecs(&ds)).unwrap(), ds);
        }

        #[test]
        fn metric_axioms(
            a in prop::collection::vec(-100f32..100.0, 8),
            b in prop::collection::vec(-100f32..100.0, 8),
            c in prop::collection::vec(-100f32..100.0, 8),
        ) {
            let ab = l2_distance(&a, &b).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(ab, l2_distance(&b, &a).unwrap());
            let ac = l2_distance(&a, &c).unwrap();
            let cb = l2_distance(&c, &b).unwrap();
            prop_assert!(ab <= ac + cb + 1e-6 * (ac + cb).max(1.0));
        }

        #[test]
        fn ground_truth_is_sorted_and_self_consistent(
            ds in dataset_strategy(),
            seed in 0u64..1000,
        ) {
            let q: Vec<f32> = ds.get((seed as usize % ds.len()) as u32).iter().map(|x| x + 0.5).collect();
            let k = 1 + seed as usize % ds.len();
            let gt = ground_truth_topk(&ds, &q, k).unwrap();
            let dists: Vec<f64> = gt.iter().map(|&id| l2_squared_f64(&q, ds.get(id))).collect();
            prop_assert!(dists.windows(2).all(|w| w[0] <= w[1]));
            prop_assert_eq!(recall_at_k(&gt, &gt).unwrap(), 1.0);
        }
    }
}
