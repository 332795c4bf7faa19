//! Product quantization: per-subspace codebooks, byte codes, and asymmetric
//! query-to-code distances used to order the search frontier.

use std::fs;
use std::path::Path;

use crate::codec::{put_f32s, put_u32, put_u64, Reader};
use crate::error::{Error, Result};
use crate::kmeans;
use crate::vecdata::{l2_squared_f64, VectorDataset};

const SIDECAR_MAGIC: &[u8; 4] = b"GOVP";
const SIDECAR_VERSION: u32 = 1;

pub const DEFAULT_CENTROIDS: usize = 256;
pub const DEFAULT_TRAIN_ITERS: usize = 25;

/// Largest divisor of `dim` not exceeding `dim / 8` (at least 1).
pub fn default_subspaces(dim: usize) -> usize {
    let target = (dim / 8).max(1);
    (1..=target).rev().find(|&m| dim.is_multiple_of(m)).unwrap_or(1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PqCodebook {
    dim: usize,
    m: usize,
    c: usize,
    /// `m * c * sub_dim` values: subspace-major, then centroid.
    centroids: Vec<f32>,
}

/// Codes for one vector: one centroid index per subspace.
pub type PqCode = Vec<u8>;

/// Trains `m` independent `c`-centroid codebooks with Lloyd's algorithm.
pub fn train(dataset: &VectorDataset, m: usize, c: usize, iters: usize, seed: u64) -> Result<PqCodebook> {
    let dim = dataset.dim();
    if m == 0 || !dim.is_multiple_of(m) {
        return Err(Error::arg(format!("{m} subspaces do not divide dimension {dim}")));
    }
    if c == 0 || c > 256 {
        return Err(Error::arg(format!("centroid count {c} must be in 1..=256")));
    }
    if c > dataset.len() {
        return Err(Error::arg(format!(
            "centroid count {c} exceeds training set size {}",
            dataset.len()
        )));
    }
    let sub_dim = dim / m;
    let mut centroids = Vec::with_capacity(m * c * sub_dim);
    for j in 0..m {
        let sub: Vec<f32> = dataset
            .iter()
            .flat_map(|v| v[j * sub_dim..(j + 1) * sub_dim].iter().copied())
            .collect();
        let fit = kmeans::lloyd(&sub, sub_dim, c, iters, seed.wrapping_add(j as u64))?;
        centroids.extend_from_slice(&fit.centroids);
    }
    Ok(PqCodebook { dim, m, c, centroids })
}

impl PqCodebook {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn subspaces(&self) -> usize {
        self.m
    }

    pub fn centroids_per_subspace(&self) -> usize {
        self.c
    }

    pub fn sub_dim(&self) -> usize {
        self.dim / self.m
    }

    pub fn centroid(&self, subspace: usize, index: usize) -> &[f32] {
        let sd = self.sub_dim();
        let start = (subspace * self.c + index) * sd;
        &self.centroids[start..start + sd]
    }

    fn check_dim(&self, len: usize) -> Result<()> {
        if len != self.dim {
            return Err(Error::Dimension {
                left: self.dim,
                right: len,
            });
        }
        Ok(())
    }

    /// Nearest centroid per subspace; ties resolve to the lowest index.
    pub fn encode(&self, v: &[f32]) -> Result<PqCode> {
        self.check_dim(v.len())?;
        let sd = self.sub_dim();
        Ok((0..self.m)
            .map(|j| {
                let table = &self.centroids[j * self.c * sd..(j + 1) * self.c * sd];
                kmeans::nearest_centroid(&v[j * sd..(j + 1) * sd], table, sd).0 as u8
            })
            .collect())
    }

    pub fn decode(&self, code: &[u8]) -> Vec<f32> {
        code.iter()
            .enumerate()
            .flat_map(|(j, &i)| self.centroid(j, i as usize).iter().copied())
            .collect()
    }

    pub fn encode_all(&self, dataset: &VectorDataset) -> Result<PqCodes> {
        self.check_dim(dataset.dim())?;
        let mut codes = Vec::with_capacity(dataset.len() * self.m);
        for v in dataset.iter() {
            codes.extend(self.encode(v)?);
        }
        Ok(PqCodes { m: self.m, codes })
    }

    /// Squared distances from each query sub-vector to every centroid of its
    /// subspace.
    pub fn distance_table(&self, q: &[f32]) -> Result<DistanceTable> {
        self.check_dim(q.len())?;
        let sd = self.sub_dim();
        let mut entries = Vec::with_capacity(self.m * self.c);
        for j in 0..self.m {
            let sub = &q[j * sd..(j + 1) * sd];
            entries.extend((0..self.c).map(|i| l2_squared_f64(sub, self.centroid(j, i)) as f32));
        }
        Ok(DistanceTable {
            m: self.m,
            c: self.c,
            entries,
        })
    }
}

/// Alias for [`PqCodebook::distance_table`].
pub fn build_distance_table(q: &[f32], codebook: &PqCodebook) -> Result<DistanceTable> {
    codebook.distance_table(q)
}

/// In-memory codes for every node, `m` bytes each.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PqCodes {
    m: usize,
    codes: Vec<u8>,
}

impl PqCodes {
    pub fn len(&self) -> usize {
        self.codes.len() / self.m
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn get(&self, id: u32) -> &[u8] {
        let start = id as usize * self.m;
        &self.codes[start..start + self.m]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistanceTable {
    m: usize,
    c: usize,
    entries: Vec<f32>,
}

impl DistanceTable {
    pub fn entry(&self, subspace: usize, index: usize) -> f32 {
        self.entries[subspace * self.c + index]
    }

    pub fn entries(&self) -> &[f32] {
        &self.entries
    }

    #[inline]
    pub fn distance(&self, code: &[u8]) -> f32 {
        debug_assert_eq!(code.len(), self.m);
        let sum: f32 = code
            .iter()
            .enumerate()
            .map(|(j, &i)| self.entries[j * self.c + i as usize])
            .sum();
        sum.sqrt()
    }
}

pub fn pq_distance(table: &DistanceTable, code: &[u8]) -> f32 {
    table.distance(code)
}

/// Codebook followed by the code table, as stored next to the index.
pub fn encode_sidecar(codebook: &PqCodebook, codes: &PqCodes) -> Vec<u8> {
    let mut out = Vec::with_capacity(32 + codebook.centroids.len() * 4 + codes.codes.len());
    out.extend_from_slice(SIDECAR_MAGIC);
    put_u32(&mut out, SIDECAR_VERSION);
    put_u32(&mut out, codebook.dim as u32);
    put_u32(&mut out, codebook.m as u32);
    put_u32(&mut out, codebook.c as u32);
    put_f32s(&mut out, &codebook.centroids);
    put_u64(&mut out, codes.len() as u64);
    out.extend_from_slice(&codes.codes);
    out
}

pub fn decode_sidecar(bytes: &[u8]) -> Result<(PqCodebook, PqCodes)> {
    let mut r = Reader::new(bytes, "PQ sidecar");
    r.magic(SIDECAR_MAGIC)?;
    let version = r.u32()?;
    if version != SIDECAR_VERSION {
        return Err(Error::Corruption(format!("unsupported PQ sidecar version {version}")));
    }
    let dim = r.u32()? as usize;
    let m = r.u32()? as usize;
    let c = r.u32()? as usize;
    if m == 0 || dim == 0 || !dim.is_multiple_of(m) || c == 0 || c > 256 {
        return Err(Error::Corruption(format!("invalid PQ shape dim={dim} m={m} c={c}")));
    }
    let centroids = r.f32s(m * c * (dim / m))?;
    let n = r.u64()? as usize;
    let codes = r.take(n * m)?.to_vec();
    r.finish()?;
    if let Some(bad) = codes.iter().find(|&&b| b as usize >= c) {
        return Err(Error::Corruption(format!("code {bad} out of range for {c} centroids")));
    }
    Ok((PqCodebook { dim, m, c, centroids }, PqCodes { m, codes }))
}

pub fn write_sidecar(path: impl AsRef<Path>, codebook: &PqCodebook, codes: &PqCodes) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_sidecar(codebook, codes)).map_err(|e| Error::io(path, e))
}

pub fn read_sidecar(path: impl AsRef<Path>) -> Result<(PqCodebook, PqCodes)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_sidecar(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_dataset(n: usize, dim: usize, seed: u64) -> VectorDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        VectorDataset::new(dim, (0..n * dim).map(|_| rng.random_range(-4.0..4.0)).collect()).unwrap()
    }

    #[test]
    fn default_subspace_count() {
        assert_eq!(default_subspaces(128), 16);
        assert_eq!(default_subspaces(16), 2);
        assert_eq!(default_subspaces(7), 1);
        assert_eq!(default_subspaces(100), 10);
        assert_eq!(default_subspaces(960), 120);
    }

    #[test]
    fn argument_errors() {
        let ds = random_dataset(10, 6, 1);
        assert!(train(&ds, 4, 4, 5, 0).is_err());
        assert!(train(&ds, 2, 11, 5, 0).is_err());
        let cb = train(&ds, 2, 4, 5, 0).unwrap();
        assert!(cb.encode(&[0.0; 5]).is_err());
        assert!(cb.distance_table(&[0.0; 7]).is_err());
    }

    #[test]
    fn saturated_codebook_is_lossless() {
        let ds = random_dataset(12, 4, 2);
        let cb = train(&ds, 1, 12, 10, 3).unwrap();
        for v in ds.iter() {
            assert_eq!(cb.decode(&cb.encode(v).unwrap()), v);
        }
        let codes = cb.encode_all(&ds).unwrap();
        for (qi, q) in ds.iter().enumerate() {
            let table = cb.distance_table(q).unwrap();
            assert_eq!(pq_distance(&table, codes.get(qi as u32)), 0.0);
            for (id, v) in ds.iter().enumerate() {
                let exact = crate::vecdata::l2_distance(q, v).unwrap();
                assert!((table.distance(codes.get(id as u32)) - exact).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn training_is_deterministic() {
        let ds = random_dataset(200, 8, 4);
        assert_eq!(train(&ds, 2, 16, 10, 9).unwrap(), train(&ds, 2, 16, 10, 9).unwrap());
    }

    #[test]
    fn separated_pairs_recover_pair_means() {
        let pairs = [[0.0f32, 0.0], [50.0, 0.0], [0.0, 50.0], [50.0, 50.0]];
        let mut rows = Vec::new();
        for p in pairs {
            rows.push([p[0] - 0.5, p[1]]);
            rows.push([p[0] + 0.5, p[1] + 1.0]);
        }
        let ds = VectorDataset::from_rows(&rows).unwrap();
        let cb = train(&ds, 1, 4, 25, 0).unwrap();
        let mut found: Vec<[f32; 2]> = (0..4).map(|i| [cb.centroid(0, i)[0], cb.centroid(0, i)[1]]).collect();
        found.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut expected: Vec<[f32; 2]> = pairs.iter().map(|p| [p[0], p[1] + 0.5]).collect();
        expected.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (f, e) in found.iter().zip(&expected) {
            assert!(
                (f[0] - e[0]).abs() < 1e-5 && (f[1] - e[1]).abs() < 1e-5,
                "{f:?} vs {e:?}"
            );
        }
    }

    #[test]
    fn exact_centroid_encodes_to_its_index() {
        let ds = random_dataset(64, 4, 5);
        let cb = train(&ds, 2, 8, 10, 1).unwrap();
        for j in 0..8 {
            let v: Vec<f32> = (0..2).flat_map(|s| cb.centroid(s, j).to_vec()).collect();
            let code = cb.encode(&v).unwrap();
            for (s, &c) in code.iter().enumerate() {
                // Duplicate centroids would legitimately resolve to a lower index.
                assert_eq!(cb.centroid(s, c as usize), cb.centroid(s, j));
                assert!(c as usize <= j);
            }
        }
    }

    #[test]
    fn encoding_minimizes_reconstruction_error_exhaustively() {
        let ds = random_dataset(80, 4, 6);
        let cb = train(&ds, 2, 4, 10, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..30 {
            let v: Vec<f32> = (0..4).map(|_| rng.random_range(-5.0..5.0)).collect();
            let ours = l2_squared_f64(&v, &cb.decode(&cb.encode(&v).unwrap()));
            let mut best = f64::INFINITY;
            for a in 0..4u8 {
                for b in 0..4u8 {
                    best = best.min(l2_squared_f64(&v, &cb.decode(&[a, b])));
                }
            }
            assert!((ours - best).abs() < 1e-9);
        }
    }

    #[test]
    fn table_entries() {
        let ds = random_dataset(40, 6, 8);
        let cb = train(&ds, 1, 5, 10, 0).unwrap();
        let q: Vec<f32> = ds.get(3).to_vec();
        let table = cb.distance_table(&q).unwrap();
        for i in 0..5 {
            let oracle = crate::vecdata::l2_distance(&q, cb.centroid(0, i)).unwrap();
            assert!((table.entry(0, i).sqrt() - oracle).abs() < 1e-4);
        }
        assert!(table.entries().iter().all(|&e| e >= 0.0));

        let cb2 = train(&ds, 3, 5, 10, 0).unwrap();
        let centroid_q: Vec<f32> = (0..3).flat_map(|s| cb2.centroid(s, 2).to_vec()).collect();
        let t2 = cb2.distance_table(&centroid_q).unwrap();
        for s in 0..3 {
            assert_eq!(t2.entry(s, 2), 0.0);
        }
    }

    #[test]
    fn more_centroids_never_hurt_on_fixed_instance() {
        let ds = random_dataset(300, 4, 10);
        let mut last = f64::INFINITY;
        for c in [1, 2, 4, 8, 16, 32, 64] {
            let cb = train(&ds, 2, c, 25, 0).unwrap();
            let err: f64 = ds
                .iter()
                .map(|v| l2_squared_f64(v, &cb.decode(&cb.encode(v).unwrap())))
                .sum::<f64>()
                / ds.len() as f64;
            assert!(err <= last + 1e-9, "c={c}: {err} > {last}");
            last = err;
        }
    }

    #[test]
    fn sidecar_round_trip() {
        let ds = random_dataset(50, 4, 12);
        let cb = train(&ds, 2, 8, 5, 0).unwrap();
        let codes = cb.encode_all(&ds).unwrap();
        let bytes = encode_sidecar(&cb, &codes);
        assert_eq!(decode_sidecar(&bytes).unwrap(), (cb, codes));
        assert!(decode_sidecar(&bytes[..bytes.len() - 1]).is_err());
    }

    proptest! {
        #[test]
        fn pq_distance_matches_decode_oracle(seed in 0u64..500) {
            let ds = random_dataset(64, 8, seed);
            let cb = train(&ds, 4, 8, 8, seed).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
            let q: Vec<f32> = (0..8).map(|_| rng.random_range(-4.0..4.0)).collect();
            let table = cb.distance_table(&q).unwrap();
            for v in ds.iter() {
                let code = cb.encode(v).unwrap();
                let recon = cb.decode(&code);
                prop_assert_eq!(cb.encode(&recon).unwrap(), code.clone());
                let oracle = l2_squared_f64(&q, &recon).sqrt() as f32;
                prop_assert!((table.distance(&code) - oracle).abs() < 1e-5 * oracle.max(1.0));
            }
        }
    }
}
