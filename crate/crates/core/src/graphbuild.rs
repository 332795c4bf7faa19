//! Bounded-degree proximity graph construction (Vamana-style) and medoid
//! entry-point selection.

use std::collections::VecDeque;
use std::fs;
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::codec::{put_u32, put_u64, Reader};
use crate::error::{Error, Result};
use crate::vecdata::{l2_squared_f64, VectorDataset};

const GRAPH_MAGIC: &[u8; 4] = b"GOVG";
const GRAPH_VERSION: u32 = 1;

/// Above this size the medoid is estimated against a seeded anchor sample.
const EXACT_MEDOID_LIMIT: usize = 10_000;
const MEDOID_ANCHORS: usize = 1_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BuildParams {
    pub max_degree: usize,
    pub build_list: usize,
    pub alpha: f32,
    pub seed: u64,
}

impl Default for BuildParams {
    fn default() -> Self {
        Self {
            max_degree: 32,
            build_list: 64,
            alpha: 1.2,
            seed: 0,
        }
    }
}

/// Directed neighbor graph with out-degree at most `max_degree`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GraphIndex {
    max_degree: usize,
    entry: u32,
    adjacency: Vec<Vec<u32>>,
}

impl GraphIndex {
    /// Wraps an explicit adjacency list after checking the structural
    /// invariants (degree bound, no self loops or duplicates, ids in range,
    /// everything reachable from `entry`).
    pub fn from_adjacency(max_degree: usize, entry: u32, adjacency: Vec<Vec<u32>>) -> Result<Self> {
        let g = Self {
            max_degree,
            entry,
            adjacency,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn len(&self) -> usize {
        self.adjacency.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adjacency.is_empty()
    }

    pub fn max_degree(&self) -> usize {
        self.max_degree
    }

    pub fn entry(&self) -> u32 {
        self.entry
    }

    pub fn neighbors(&self, id: u32) -> &[u32] {
        &self.adjacency[id as usize]
    }

    pub fn reachable(&self) -> Vec<bool> {
        reachable_from(&self.adjacency, self.entry)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.adjacency.len();
        if n == 0 || self.entry as usize >= n {
            return Err(Error::Invariant(format!(
                "entry {} outside graph of {n} nodes",
                self.entry
            )));
        }
        for (id, list) in self.adjacency.iter().enumerate() {
            if list.len() > self.max_degree {
                return Err(Error::Invariant(format!(
                    "node {id} has degree {} > {}",
                    list.len(),
                    self.max_degree
                )));
            }
            let mut sorted = list.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if sorted.len() != list.len() {
                return Err(Error::Invariant(format!("node {id} has duplicate neighbors")));
            }
            if let Some(&bad) = list.iter().find(|&&v| v as usize >= n || v as usize == id) {
                return Err(Error::Invariant(format!("node {id} has invalid neighbor {bad}")));
            }
        }
        if let Some(lost) = self.reachable().iter().position(|&r| !r) {
            return Err(Error::Invariant(format!(
                "node {lost} is unreachable from entry {}",
                self.entry
            )));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let edges: usize = self.adjacency.iter().map(Vec::len).sum();
        let mut out = Vec::with_capacity(24 + 4 * (self.len() + edges));
        out.extend_from_slice(GRAPH_MAGIC);
        put_u32(&mut out, GRAPH_VERSION);
        put_u64(&mut out, self.len() as u64);
        put_u32(&mut out, self.max_degree as u32);
        put_u64(&mut out, u64::from(self.entry));
        for list in &self.adjacency {
            put_u32(&mut out, list.len() as u32);
            for &v in list {
                put_u32(&mut out, v);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, "graph sidecar");
        r.magic(GRAPH_MAGIC)?;
        let version = r.u32()?;
        if version != GRAPH_VERSION {
            return Err(Error::Corruption(format!("unsupported graph version {version}")));
        }
        let n = r.u64()? as usize;
        let max_degree = r.u32()? as usize;
        let entry = r.u64()?;
        let entry = u32::try_from(entry).map_err(|_| Error::Corruption(format!("entry id {entry} too large")))?;
        let mut adjacency = Vec::with_capacity(n.min(bytes.len() / 4));
        for _ in 0..n {
            let degree = r.u32()? as usize;
            if degree > max_degree {
                return Err(Error::Corruption(format!("degree {degree} exceeds bound {max_degree}")));
            }
            adjacency.push((0..degree).map(|_| r.u32()).collect::<Result<Vec<_>>>()?);
        }
        r.finish()?;
        Self::from_adjacency(max_degree, entry, adjacency).map_err(|e| Error::Corruption(e.to_string()))
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn reachable_from(adjacency: &[Vec<u32>], entry: u32) -> Vec<bool> {
    let mut seen = vec![false; adjacency.len()];
    let mut queue = VecDeque::from([entry]);
    seen[entry as usize] = true;
    while let Some(u) = queue.pop_front() {
        for &v in &adjacency[u as usize] {
            if !seen[v as usize] {
                seen[v as usize] = true;
                queue.push_back(v);
            }
        }
    }
    seen
}

/// Point minimizing the summed distance to all others; lowest id on ties.
///
/// Exact up to 10,000 points; larger inputs are scored against 1,000 seeded
/// anchor points.
pub fn medoid(dataset: &VectorDataset, seed: u64) -> u32 {
    let n = dataset.len();
    let anchors: Vec<u32> = if n <= EXACT_MEDOID_LIMIT {
        (0..n as u32).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picked: Vec<u32> = index::sample(&mut rng, n, MEDOID_ANCHORS)
            .into_iter()
            .map(|i| i as u32)
            .collect();
        picked.sort_unstable();
        picked
    };
    let sums: Vec<f64> = (0..n as u32)
        .into_par_iter()
        .map(|i| {
            let v = dataset.get(i);
            anchors.iter().map(|&a| l2_squared_f64(v, dataset.get(a)).sqrt()).sum()
        })
        .collect();
    let mut best = 0usize;
    for (i, &s) in sums.iter().enumerate() {
        if s < sums[best] {
            best = i;
        }
    }
    best as u32
}

/// Builds the graph with two refinement passes (alpha 1, then `alpha`) of
/// greedy search followed by robust pruning, then repairs reachability from
/// the medoid.
pub fn build_graph(dataset: &VectorDataset, params: &BuildParams) -> Result<GraphIndex> {
    let n = dataset.len();
    if n < 2 {
        return Err(Error::arg(format!(
            "graph construction needs at least 2 points, got {n}"
        )));
    }
    if params.max_degree < 2 {
        return Err(Error::arg("max degree must be at least 2"));
    }
    if params.build_list < params.max_degree {
        return Err(Error::arg(format!(
            "build list {} must be at least the max degree {}",
            params.build_list, params.max_degree
        )));
    }
    if params.alpha.is_nan() || params.alpha < 1.0 {
        return Err(Error::arg(format!("alpha {} must be >= 1", params.alpha)));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let r = params.max_degree;
    let entry = medoid(dataset, params.seed);
    let mut builder = Builder {
        data: dataset,
        adjacency: random_init(n, r, &mut rng),
        stamp: vec![0; n],
        generation: 0,
    };

    for alpha in [1.0, params.alpha] {
        let mut order: Vec<u32> = (0..n as u32).collect();
        order.shuffle(&mut rng);
        for &p in &order {
            let visited = builder.greedy_search(entry, dataset.get(p), params.build_list);
            let mut pool: Vec<u32> = visited;
            pool.extend_from_slice(&builder.adjacency[p as usize]);
            let pruned = builder.robust_prune(p, pool, alpha, r);
            builder.adjacency[p as usize] = pruned.clone();
            for j in pruned {
                let list = &builder.adjacency[j as usize];
                if list.contains(&p) {
                    continue;
                }
                if list.len() < r {
                    builder.adjacency[j as usize].push(p);
                } else {
                    let mut pool = list.clone();
                    pool.push(p);
                    builder.adjacency[j as usize] = builder.robust_prune(j, pool, alpha, r);
                }
            }
        }
    }

    builder.repair_connectivity(entry, r);
    GraphIndex::from_adjacency(r, entry, builder.adjacency)
}

fn random_init(n: usize, r: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<u32>> {
    let degree = r.min(n - 1);
    (0..n)
        .map(|p| {
            // Sample from the n - 1 other ids, shifting past p.
            index::sample(rng, n - 1, degree)
                .into_iter()
                .map(|i| if i >= p { i as u32 + 1 } else { i as u32 })
                .collect()
        })
        .collect()
}

struct Builder<'a> {
    data: &'a VectorDataset,
    adjacency: Vec<Vec<u32>>,
    stamp: Vec<u32>,
    generation: u32,
}

impl Builder<'_> {
    fn dist(&self, a: u32, b: u32) -> f64 {
        l2_squared_f64(self.data.get(a), self.data.get(b))
    }

    /// Greedy search with a list of size `list_size`; returns every expanded node.
    fn greedy_search(&mut self, entry: u32, target: &[f32], list_size: usize) -> Vec<u32> {
        self.generation += 1;
        let generation = self.generation;
        // (distance, id, expanded)
        let mut list: Vec<(f64, u32, bool)> = vec![(l2_squared_f64(target, self.data.get(entry)), entry, false)];
        self.stamp[entry as usize] = generation;
        let mut expanded = Vec::new();
        while let Some(pos) = list.iter().position(|c| !c.2) {
            list[pos].2 = true;
            let p = list[pos].1;
            expanded.push(p);
            for &v in &self.adjacency[p as usize] {
                if self.stamp[v as usize] == generation {
                    continue;
                }
                self.stamp[v as usize] = generation;
                let d = l2_squared_f64(target, self.data.get(v));
                if list.len() == list_size && d >= list[list_size - 1].0 {
                    continue;
                }
                let at = list.partition_point(|c| (c.0, c.1) < (d, v));
                list.insert(at, (d, v, false));
                list.truncate(list_size);
            }
        }
        expanded
    }

    fn robust_prune(&self, p: u32, mut pool: Vec<u32>, alpha: f32, r: usize) -> Vec<u32> {
        pool.retain(|&v| v != p);
        pool.sort_unstable();
        pool.dedup();
        let mut scored: Vec<(f64, u32)> = pool.into_iter().map(|v| (self.dist(p, v), v)).collect();
        scored.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let alpha_sq = f64::from(alpha) * f64::from(alpha);
        let mut kept = Vec::with_capacity(r);
        let mut alive = vec![true; scored.len()];
        for i in 0..scored.len() {
            if !alive[i] {
                continue;
            }
            let (_, star) = scored[i];
            kept.push(star);
            if kept.len() == r {
                break;
            }
            for j in i + 1..scored.len() {
                if alive[j] && alpha_sq * self.dist(star, scored[j].1) <= scored[j].0 {
                    alive[j] = false;
                }
            }
        }
        kept
    }

    /// Links every node unreachable from `entry` to its nearest reachable
    /// node, evicting that node's farthest neighbor when it is full.
    fn repair_connectivity(&mut self, entry: u32, r: usize) {
        let n = self.adjacency.len();
        let mut reach = reachable_from(&self.adjacency, entry);
        // Evictions can orphan nodes; after n rounds anchors with spare
        // capacity are preferred, since those cannot disconnect anything.
        let mut rounds = 0;
        while let Some(orphan) = reach.iter().position(|&x| !x) {
            rounds += 1;
            if rounds > 4 * n {
                break;
            }
            let orphan = orphan as u32;
            let nearest = |spare_only: bool| {
                (0..n as u32)
                    .filter(|&v| reach[v as usize] && (!spare_only || self.adjacency[v as usize].len() < r))
                    .min_by(|&a, &b| self.dist(orphan, a).total_cmp(&self.dist(orphan, b)).then(a.cmp(&b)))
            };
            let anchor = if rounds <= n { None } else { nearest(true) };
            let anchor = anchor.or_else(|| nearest(false)).expect("entry is always reachable");
            let list = &mut self.adjacency[anchor as usize];
            let mut evicted = false;
            if list.len() >= r {
                let far = (0..list.len())
                    .max_by(|&a, &b| {
                        let (va, vb) = (list[a], list[b]);
                        l2_squared_f64(self.data.get(anchor), self.data.get(va))
                            .total_cmp(&l2_squared_f64(self.data.get(anchor), self.data.get(vb)))
                            .then(vb.cmp(&va))
                    })
                    .unwrap();
                list.swap_remove(far);
                evicted = true;
            }
            list.push(orphan);
            if evicted {
                reach = reachable_from(&self.adjacency, entry);
            } else {
                let mut queue = VecDeque::from([orphan]);
                reach[orphan as usize] = true;
                while let Some(u) = queue.pop_front() {
                    for &v in &self.adjacency[u as usize] {
                        if !reach[v as usize] {
                            reach[v as usize] = true;
                            queue.push_back(v);
                        }
                    }
                }
            }
        }
    }
}
