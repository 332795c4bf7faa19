//! Beam search over the paged index with two-phase I/O.
//!
//! Candidates are ordered by PQ distance; exact distances are computed only
//! for expanded nodes and used for the final ranking. Until the transition
//! rule fires, a node missing from the cache costs one single-page read. After
//! it fires, a miss triggers a batched read of the page window chosen by
//! [`compute_read_interval`] and the pages are admitted to the dynamic cache.

use std::collections::{HashMap, HashSet};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cache::{CacheConfig, CachedNode, HitKind, HybridCache, PhaseHits};
use crate::diskstore::{DiskIndex, DiskPage, IoStats};
use crate::error::{Error, Result};
use crate::layout::{compute_read_interval, LayoutMap, ReadInterval, DEFAULT_WINDOW_PAGES};
use crate::pqcodec::{PqCodebook, PqCodes};
use crate::vecdata::{ground_truth_topk, l2_squared_f64, VectorDataset};

pub const DEFAULT_BEAM_WIDTH: usize = 4;
pub const DEFAULT_THETA: f64 = 0.5;
pub const DEFAULT_CALIBRATION_FRACTION: f64 = 0.01;
/// Ratios are clamped into `[RATIO_FLOOR, 1 - RATIO_FLOOR]` so theta stays
/// strictly inside (0, 1).
const RATIO_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchParams {
    pub k: usize,
    pub l: usize,
    pub beam_width: usize,
    pub theta: f64,
    pub window_pages: usize,
}

impl Default for SearchParams {
    fn default() -> Self {
        Self {
            k: 10,
            l: 100,
            beam_width: DEFAULT_BEAM_WIDTH,
            theta: DEFAULT_THETA,
            window_pages: DEFAULT_WINDOW_PAGES,
        }
    }
}

impl SearchParams {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.l < self.k {
            return Err(Error::arg(format!(
                "need 1 <= k <= l, got k = {}, l = {}",
                self.k, self.l
            )));
        }
        if self.beam_width == 0 || self.window_pages == 0 {
            return Err(Error::arg("beam width and window must be positive"));
        }
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return Err(Error::arg(format!("theta must lie in (0, 1), got {}", self.theta)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub id: u32,
    pub approx_dist: f32,
    pub exact_dist: Option<f32>,
    pub visited: bool,
}

impl Candidate {
    fn new(id: u32, approx_dist: f32) -> Self {
        Self {
            id,
            approx_dist,
            exact_dist: None,
            visited: false,
        }
    }
}

/// Size of the queue prefix that must be fully visited, `ceil(theta * k)`.
fn prefix_len(k: usize, theta: f64) -> usize {
    // Guard against products like 0.3 * 10 = 3.0000000000000004.
    ((theta * k as f64) - 1e-9).ceil().max(1.0) as usize
}

/// True iff the first `ceil(theta * k)` queue entries are all visited. A queue
/// shorter than that prefix never signals a transition. With `theta = 1` this
/// is the rule that waits for the whole top-k.
pub fn detect_transition(queue: &[Candidate], k: usize, theta: f64) -> bool {
    let need = prefix_len(k, theta);
    queue.len() >= need && queue[..need].iter().all(|c| c.visited)
}

/// Search phase; moves from 1 to 2 at most once.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PhaseState {
    phase: u8,
    since: Option<u32>,
}

impl Default for PhaseState {
    fn default() -> Self {
        Self { phase: 1, since: None }
    }
}

impl PhaseState {
    pub fn phase(&self) -> u8 {
        self.phase
    }

    /// Iteration after which phase 2 began.
    pub fn transitioned_at(&self) -> Option<u32> {
        self.since
    }

    /// Switches to phase 2 when `fired`; later calls never switch back.
    pub fn update(&mut self, iteration: u32, fired: bool) {
        if fired && self.phase == 1 {
            self.phase = 2;
            self.since = Some(iteration);
        }
    }
}

/// One expansion: iteration, node, exact distance, phase and where the
/// node's record came from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    pub iter: u32,
    pub id: u32,
    pub dist: f32,
    pub phase: u8,
    pub hit: HitKind,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SearchStats {
    pub iterations: u32,
    /// First iteration after which the theta rule held.
    pub transition_iter_theta: Option<u32>,
    /// First iteration after which the full top-k rule held.
    pub transition_iter_panns: Option<u32>,
    /// Iteration that expanded the true nearest neighbor, when supplied.
    pub transition_iter_truth: Option<u32>,
    pub trace: Vec<TraceRecord>,
    /// Exact-distance range of phase-2 expansions.
    pub d_min: Option<f32>,
    pub d_max: Option<f32>,
    pub io: IoStats,
    pub hits: PhaseHits,
    pub latency: Duration,
}

impl SearchStats {
    /// Smallest exact distance expanded in each iteration, indexed from 1.
    pub fn distance_by_iteration(&self) -> Vec<f32> {
        let mut out = vec![f32::INFINITY; self.iterations as usize];
        for r in &self.trace {
            let slot = &mut out[r.iter as usize - 1];
            *slot = slot.min(r.dist);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutput {
    /// Up to `k` `(id, exact distance)` pairs, nearest first.
    pub neighbors: Vec<(u32, f32)>,
    pub stats: SearchStats,
}

impl SearchOutput {
    pub fn ids(&self) -> Vec<u32> {
        self.neighbors.iter().map(|&(id, _)| id).collect()
    }
}

/// Everything a query needs: the index file, its layout, PQ codes and cache.
#[derive(Debug)]
pub struct SearchIndex {
    disk: DiskIndex,
    layout: Arc<LayoutMap>,
    codebook: PqCodebook,
    codes: PqCodes,
    cache: HybridCache,
}

impl SearchIndex {
    pub fn new(
        disk: DiskIndex,
        layout: Arc<LayoutMap>,
        codebook: PqCodebook,
        codes: PqCodes,
        cache: CacheConfig,
    ) -> Result<Self> {
        let h = *disk.header();
        if layout.len() != h.n || codes.len() != h.n {
            return Err(Error::arg(format!(
                "index has {} nodes but layout covers {} and PQ codes {}",
                h.n,
                layout.len(),
                codes.len()
            )));
        }
        if layout.page_capacity() != h.page_capacity || layout.kind() != h.kind {
            return Err(Error::arg("layout does not match the index file"));
        }
        if codebook.dim() != h.dim {
            return Err(Error::Dimension {
                left: codebook.dim(),
                right: h.dim,
            });
        }
        let cache = HybridCache::build(cache, &disk, Arc::clone(&layout))?;
        Ok(Self {
            disk,
            layout,
            codebook,
            codes,
            cache,
        })
    }

    pub fn disk(&self) -> &DiskIndex {
        &self.disk
    }

    pub fn layout(&self) -> &LayoutMap {
        &self.layout
    }

    pub fn cache(&self) -> &HybridCache {
        &self.cache
    }

    pub fn dim(&self) -> usize {
        self.disk.header().dim
    }

    pub fn len(&self) -> usize {
        self.disk.header().n
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Replaces the cache with a freshly preloaded one.
    pub fn rebuild_cache(&mut self, config: CacheConfig) -> Result<()> {
        self.cache = HybridCache::build(config, &self.disk, Arc::clone(&self.layout))?;
        Ok(())
    }

    /// Runs one query. `true_nn`, when given, is recorded as the iteration
    /// in which that node gets expanded.
    pub fn beam_search(&self, q: &[f32], params: &SearchParams, true_nn: Option<u32>) -> Result<SearchOutput> {
        let started = Instant::now();
        params.validate()?;
        if q.len() != self.dim() {
            return Err(Error::Dimension {
                left: q.len(),
                right: self.dim(),
            });
        }
        let table = self.codebook.distance_table(q)?;
        let approx = |id: u32| table.distance(self.codes.get(id));
        let page_size = self.disk.header().page_size as u64;

        let entry = self.disk.header().entry;
        let mut queue = vec![Candidate::new(entry, approx(entry))];
        let mut seen = HashSet::from([entry]);
        let mut expanded: Vec<(f32, u32)> = Vec::new();
        let mut phase = PhaseState::default();
        let mut stats = SearchStats::default();

        loop {
            let selected: Vec<usize> = queue
                .iter()
                .enumerate()
                .filter(|(_, c)| !c.visited)
                .take(params.beam_width)
                .map(|(i, _)| i)
                .collect();
            if selected.is_empty() {
                break;
            }
            stats.iterations += 1;
            let iter = stats.iterations;
            let current = phase.phase();
            let mut fetched: HashMap<u64, Arc<DiskPage>> = HashMap::new();
            let mut discovered = Vec::new();

            for i in selected {
                let id = queue[i].id;
                let cached = self.cache.lookup(id, current);
                let hit = cached.as_ref().map_or(HitKind::Miss, CachedNode::kind);
                stats.hits.record(current, hit);
                let (page, slot) = match cached {
                    Some(CachedNode::Static(record)) => {
                        self.expand_record(&record, q, iter, current, hit, &mut stats, &mut expanded, &mut queue[i]);
                        discovered.extend_from_slice(&record.neighbors);
                        self.note_truth(id, true_nn, iter, &mut stats);
                        continue;
                    }
                    Some(CachedNode::Dynamic { page, slot }) => (page, slot),
                    None => {
                        let loc = self.layout.loc(id);
                        if !fetched.contains_key(&loc.page) {
                            let interval = if current == 1 {
                                ReadInterval {
                                    start_page: loc.page,
                                    page_count: 1,
                                }
                            } else {
                                trim_interval(
                                    compute_read_interval(id, params.window_pages, &self.layout)?,
                                    loc.page,
                                    &fetched,
                                )
                            };
                            let pages: Vec<Arc<DiskPage>> =
                                self.disk.read_page_range(interval)?.into_iter().map(Arc::new).collect();
                            stats.io.io_ops += 1;
                            stats.io.pages_read += interval.page_count;
                            stats.io.bytes_read += interval.page_count * page_size;
                            if current == 2 {
                                self.cache.admit_pages(pages.iter().cloned());
                            }
                            fetched.extend(pages.into_iter().map(|p| (p.page_id, p)));
                        }
                        (Arc::clone(&fetched[&loc.page]), loc.slot)
                    }
                };
                let record = page.node(slot).filter(|r| r.id == id).ok_or_else(|| {
                    Error::Corruption(format!("node {id} not found at page {} slot {slot}", page.page_id))
                })?;
                self.expand_record(record, q, iter, current, hit, &mut stats, &mut expanded, &mut queue[i]);
                discovered.extend_from_slice(&record.neighbors);
                self.note_truth(id, true_nn, iter, &mut stats);
            }

            for v in discovered {
                if seen.insert(v) {
                    queue.push(Candidate::new(v, approx(v)));
                }
            }
            queue.sort_by(|a, b| a.approx_dist.total_cmp(&b.approx_dist).then(a.id.cmp(&b.id)));
            queue.truncate(params.l);

            let theta_fired = detect_transition(&queue, params.k, params.theta);
            phase.update(iter, theta_fired);
            if theta_fired && stats.transition_iter_theta.is_none() {
                stats.transition_iter_theta = Some(iter);
            }
            if stats.transition_iter_panns.is_none() && detect_transition(&queue, params.k, 1.0) {
                stats.transition_iter_panns = Some(iter);
            }
        }

        expanded.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        expanded.truncate(params.k);
        stats.latency = started.elapsed();
        Ok(SearchOutput {
            neighbors: expanded.into_iter().map(|(d, id)| (id, d)).collect(),
            stats,
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn expand_record(
        &self,
        record: &crate::diskstore::NodeRecord,
        q: &[f32],
        iter: u32,
        phase: u8,
        hit: HitKind,
        stats: &mut SearchStats,
        expanded: &mut Vec<(f32, u32)>,
        candidate: &mut Candidate,
    ) {
        let dist = l2_squared_f64(q, &record.vector).sqrt() as f32;
        candidate.visited = true;
        candidate.exact_dist = Some(dist);
        expanded.push((dist, record.id));
        stats.trace.push(TraceRecord {
            iter,
            id: record.id,
            dist,
            phase,
            hit,
        });
        if phase == 2 {
            stats.d_min = Some(stats.d_min.map_or(dist, |d| d.min(dist)));
            stats.d_max = Some(stats.d_max.map_or(dist, |d| d.max(dist)));
        }
    }

    fn note_truth(&self, id: u32, true_nn: Option<u32>, iter: u32, stats: &mut SearchStats) {
        if true_nn == Some(id) && stats.transition_iter_truth.is_none() {
            stats.transition_iter_truth = Some(iter);
        }
    }
}

/// Drops pages at either end of `interval` that were already read in this
/// iteration, never dropping `target`. The result stays contiguous.
fn trim_interval(mut interval: ReadInterval, target: u64, fetched: &HashMap<u64, Arc<DiskPage>>) -> ReadInterval {
    while interval.page_count > 1 && interval.start_page != target && fetched.contains_key(&interval.start_page) {
        interval.start_page += 1;
        interval.page_count -= 1;
    }
    while interval.page_count > 1
        && interval.end_page() - 1 != target
        && fetched.contains_key(&(interval.end_page() - 1))
    {
        interval.page_count -= 1;
    }
    interval
}

/// Outcome of [`calibrate_theta`].
#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub theta: f64,
    /// Sampled dataset ids used as queries.
    pub sample: Vec<u32>,
    /// `(t, t')` per sample: iteration expanding the true nearest neighbor and
    /// iteration where the full top-k rule fired.
    pub transitions: Vec<(u32, u32)>,
    pub used_fallback: bool,
}

/// Median of the clamped ratios `t / t'`, or 0.5 when no sample has `t < t'`.
pub fn theta_from_transitions(transitions: &[(u32, u32)]) -> (f64, bool) {
    if !transitions.iter().any(|&(t, tp)| t < tp) {
        return (DEFAULT_THETA, true);
    }
    let mut ratios: Vec<f64> = transitions
        .iter()
        .map(|&(t, tp)| (f64::from(t) / f64::from(tp)).clamp(RATIO_FLOOR, 1.0 - RATIO_FLOOR))
        .collect();
    ratios.sort_by(f64::total_cmp);
    let mid = ratios.len() / 2;
    let median = if ratios.len() % 2 == 1 {
        ratios[mid]
    } else {
        (ratios[mid - 1] + ratios[mid]) / 2.0
    };
    (median, false)
}

/// `max(1, round(fraction * n))` distinct ids in ascending order.
pub fn sample_ids(n: usize, fraction: f64, seed: u64) -> Result<Vec<u32>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::arg(format!(
            "sample fraction must lie in (0, 1], got {fraction}"
        )));
    }
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let count = ((fraction * n as f64).round() as usize).clamp(1, n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ids: Vec<u32> = rand::seq::index::sample(&mut rng, n, count)
        .into_iter()
        .map(|i| i as u32)
        .collect();
    ids.sort_unstable();
    Ok(ids)
}

/// Estimates theta from a seeded sample of dataset vectors used as queries.
///
/// Each sample's true nearest neighbor comes from a brute-force scan. The
/// searches run through the index's cache like any other query.
pub fn calibrate_theta(
    index: &SearchIndex,
    dataset: &VectorDataset,
    sample_fraction: f64,
    params: &SearchParams,
    seed: u64,
) -> Result<Calibration> {
    if dataset.len() != index.len() {
        return Err(Error::arg(format!(
            "dataset has {} vectors, index {}",
            dataset.len(),
            index.len()
        )));
    }
    let sample = sample_ids(dataset.len(), sample_fraction, seed)?;
    let mut transitions = Vec::with_capacity(sample.len());
    for &id in &sample {
        let q = dataset.get(id);
        let nn = ground_truth_topk(dataset, q, 1)?[0];
        let out = index.beam_search(q, params, Some(nn))?;
        if let (Some(t), Some(tp)) = (out.stats.transition_iter_truth, out.stats.transition_iter_panns) {
            transitions.push((t, tp));
        }
    }
    if transitions.is_empty() {
        return Err(Error::State(
            "no sampled query produced both transition points; increase l or the sample".into(),
        ));
    }
    let (theta, used_fallback) = theta_from_transitions(&transitions);
    Ok(Calibration {
        theta,
        sample,
        transitions,
        used_fallback,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cache::Policy;
    use crate::diskstore::{page_capacity, write_index};
    use crate::graphbuild::{build_graph, BuildParams, GraphIndex};
    use crate::layout::{insertion_layout, similarity_layout};
    use crate::pqcodec;
    use crate::synth::{gaussian_blobs_with_queries, BlobParams};
    use crate::vecdata::{recall_at_k, GroundTruth};
    use proptest::prelude::*;

    fn cand(id: u32, visited: bool) -> Candidate {
        Candidate {
            id,
            approx_dist: id as f32,
            exact_dist: visited.then_some(0.0),
            visited,
        }
    }

    #[test]
    fn transition_rule_examples() {
        let mut q: Vec<Candidate> = (0..10).map(|i| cand(i, i < 5)).collect();
        assert!(detect_transition(&q, 10, 0.5));
        assert!(!detect_transition(&q, 10, 0.6));
        assert!(!detect_transition(&q, 10, 1.0));
        q.truncate(4);
        for c in &mut q {
            c.visited = true;
        }
        assert!(!detect_transition(&q, 10, 0.5));
        assert_eq!(prefix_len(10, 0.3), 3);
        assert_eq!(prefix_len(10, 0.31), 4);
        assert_eq!(prefix_len(3, 0.01), 1);
    }

    proptest! {
        #[test]
        fn transition_rule_is_prefix_monotone(
            visited in prop::collection::vec(any::<bool>(), 0..40),
            k in 1usize..30,
            a in 0.01f64..1.0,
            b in 0.01f64..1.0,
        ) {
            let q: Vec<Candidate> = visited.iter().enumerate().map(|(i, &v)| cand(i as u32, v)).collect();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            if detect_transition(&q, k, hi) {
                prop_assert!(detect_transition(&q, k, lo));
            }
            if detect_transition(&q, k, 1.0) {
                prop_assert!(detect_transition(&q, k, hi));
            }
        }
    }

    #[test]
    fn phase_never_reverts() {
        let mut p = PhaseState::default();
        p.update(1, false);
        assert_eq!(p.phase(), 1);
        p.update(2, true);
        p.update(3, false);
        p.update(4, true);
        assert_eq!((p.phase(), p.transitioned_at()), (2, Some(2)));
    }

    #[test]
    fn theta_aggregation() {
        assert_eq!(theta_from_transitions(&[(16, 27)]).0, 16.0 / 27.0);
        assert!((theta_from_transitions(&[(16, 27)]).0 - 0.59).abs() < 0.01);
        let (t, fb) = theta_from_transitions(&[(8, 16), (1, 4), (9, 10)]);
        assert_eq!((t, fb), (0.5, false));
        assert_eq!(theta_from_transitions(&[(1, 5), (3, 5)]).0, 0.4);
        assert_eq!(theta_from_transitions(&[(5, 5), (7, 6)]), (0.5, true));
        let (t, _) = theta_from_transitions(&[(1, 2), (6, 5), (9, 3)]);
        assert_eq!(t, 1.0 - RATIO_FLOOR);
    }

    #[test]
    fn sampling() {
        assert_eq!(sample_ids(100, 1.0, 3).unwrap(), (0..100).collect::<Vec<_>>());
        assert_eq!(sample_ids(1000, 0.01, 3).unwrap().len(), 10);
        assert_eq!(sample_ids(10, 0.01, 3).unwrap().len(), 1);
        assert_eq!(sample_ids(1000, 0.01, 3).unwrap(), sample_ids(1000, 0.01, 3).unwrap());
        assert!(sample_ids(10, 0.0, 0).is_err());
    }

    struct Fixture {
        _dir: tempfile::TempDir,
        index: SearchIndex,
    }

    fn open(
        dir: tempfile::TempDir,
        ds: &VectorDataset,
        graph: &GraphIndex,
        layout: LayoutMap,
        codebook: PqCodebook,
        cache: CacheConfig,
        page_size: usize,
    ) -> Fixture {
        let path = dir.path().join("index.bin");
        write_index(&path, ds, graph, &layout, page_size).unwrap();
        let codes = codebook.encode_all(ds).unwrap();
        let index = SearchIndex::new(
            DiskIndex::open(&path).unwrap(),
            Arc::new(layout),
            codebook,
            codes,
            cache,
        )
        .unwrap();
        Fixture { _dir: dir, index }
    }

    #[test]
    fn walkthrough_reaches_nearest_neighbor() {
        // q at the origin; v0 is the entry, v4 the nearest neighbor.
        let rows = vec![
            vec![10.0f32, 0.0],
            vec![5.0, 1.0],
            vec![8.0, -4.0],
            vec![7.0, 3.0],
            vec![1.0, 0.0],
        ];
        let ds = VectorDataset::from_rows(&rows).unwrap();
        let graph =
            GraphIndex::from_adjacency(3, 0, vec![vec![1, 3, 2], vec![4, 0], vec![0], vec![0], vec![1]]).unwrap();
        let codebook = pqcodec::train(&ds, 1, 5, 10, 0).unwrap();
        let layout = insertion_layout(&ds, 2).unwrap();
        let f = open(
            tempfile::tempdir().unwrap(),
            &ds,
            &graph,
            layout,
            codebook,
            CacheConfig::disabled(),
            512,
        );
        let params = SearchParams {
            k: 1,
            l: 3,
            beam_width: 1,
            theta: 0.5,
            window_pages: 1,
        };
        let out = f.index.beam_search(&[0.0, 0.0], &params, Some(4)).unwrap();
        let order: Vec<u32> = out.stats.trace.iter().map(|r| r.id).collect();
        assert_eq!(&order[..3], &[0, 1, 4]);
        assert_eq!(out.neighbors, vec![(4, 1.0)]);
        assert_eq!(out.stats.transition_iter_truth, Some(3));
        assert!(out.stats.transition_iter_panns.unwrap() >= out.stats.transition_iter_theta.unwrap());
    }

    fn smoke(seed: u64) -> (VectorDataset, VectorDataset, GraphIndex) {
        let (ds, queries) = gaussian_blobs_with_queries(
            &BlobParams {
                n: 500,
                dim: 8,
                blobs: 4,
                seed,
                ..Default::default()
            },
            30,
        )
        .unwrap();
        let graph = build_graph(
            &ds,
            &BuildParams {
                max_degree: 16,
                build_list: 40,
                alpha: 1.2,
                seed,
            },
        )
        .unwrap();
        (ds, queries.unwrap(), graph)
    }

    #[test]
    fn smoke_recall_and_self_queries() {
        let (ds, queries, graph) = smoke(1);
        let codebook = pqcodec::train(&ds, 4, 64, 15, 0).unwrap();
        let cap = page_capacity(4096, 8, 16).unwrap();
        let layout = similarity_layout(&ds, 10, cap, 10, 0).unwrap();
        let f = open(
            tempfile::tempdir().unwrap(),
            &ds,
            &graph,
            layout,
            codebook,
            CacheConfig::disabled(),
            4096,
        );
        let params = SearchParams {
            k: 10,
            l: 100,
            ..Default::default()
        };
        let gt = GroundTruth::compute(&ds, &queries, 10).unwrap();
        let mut total = 0.0;
        for (i, q) in queries.iter().enumerate() {
            let out = f.index.beam_search(q, &params, Some(gt.get(i)[0])).unwrap();
            total += recall_at_k(&out.ids(), gt.get(i)).unwrap();
            let s = &out.stats;
            assert!(s.transition_iter_theta <= s.transition_iter_panns);
            if let (Some(lo), Some(hi)) = (s.d_min, s.d_max) {
                assert!(lo <= hi);
            }
            // The nearest expanded distance is attained in the truth iteration.
            let by_iter = s.distance_by_iteration();
            let best = by_iter.iter().copied().fold(f32::INFINITY, f32::min);
            assert_eq!(by_iter[s.transition_iter_truth.unwrap() as usize - 1], best);
        }
        assert!(
            total / queries.len() as f64 >= 0.95,
            "recall {}",
            total / queries.len() as f64
        );

        for id in [0u32, 77, 499] {
            let out = f
                .index
                .beam_search(ds.get(id), &SearchParams { l: 20, ..params }, None)
                .unwrap();
            assert_eq!(out.neighbors[0], (id, 0.0));
        }
        assert!(matches!(
            f.index.beam_search(&[0.0; 3], &params, None),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn exhaustive_queue_is_exact() {
        let (ds, queries, graph) = smoke(2);
        let codebook = pqcodec::train(&ds, 2, 16, 10, 0).unwrap();
        let layout = insertion_layout(&ds, page_capacity(4096, 8, 16).unwrap()).unwrap();
        let f = open(
            tempfile::tempdir().unwrap(),
            &ds,
            &graph,
            layout,
            codebook,
            CacheConfig::disabled(),
            4096,
        );
        let params = SearchParams {
            k: 10,
            l: ds.len(),
            ..Default::default()
        };
        for q in queries.iter().take(5) {
            let out = f.index.beam_search(q, &params, None).unwrap();
            assert_eq!(out.ids(), ground_truth_topk(&ds, q, 10).unwrap());
        }
    }

    #[test]
    fn caching_changes_io_but_not_results() {
        let (ds, queries, graph) = smoke(3);
        let codebook = pqcodec::train(&ds, 4, 32, 10, 0).unwrap();
        let cap = page_capacity(4096, 8, 16).unwrap();
        let layout = similarity_layout(&ds, 10, cap, 10, 0).unwrap();
        let mut f = open(
            tempfile::tempdir().unwrap(),
            &ds,
            &graph,
            layout,
            codebook,
            CacheConfig::disabled(),
            4096,
        );
        let params = SearchParams {
            k: 10,
            l: 60,
            theta: 0.3,
            ..Default::default()
        };
        let run = |index: &SearchIndex| -> Vec<SearchOutput> {
            queries
                .iter()
                .map(|q| index.beam_search(q, &params, None).unwrap())
                .collect()
        };
        let baseline = run(&f.index);
        let configs = [
            CacheConfig {
                total_budget_nodes: 60,
                static_fraction: 1.0,
                ..Default::default()
            },
            CacheConfig {
                total_budget_nodes: 60,
                static_fraction: 0.2,
                policy: Policy::Lfu,
                seed: 0,
            },
            CacheConfig {
                total_budget_nodes: 60,
                static_fraction: 0.2,
                policy: Policy::Random,
                seed: 9,
            },
        ];
        for config in configs {
            f.index.rebuild_cache(config).unwrap();
            let static_before = f.index.cache().static_cache().clone();
            let cached = run(&f.index);
            for (a, b) in baseline.iter().zip(&cached) {
                assert_eq!(a.neighbors, b.neighbors);
                assert_eq!(a.stats.iterations, b.stats.iterations);
            }
            let io = |outs: &[SearchOutput]| outs.iter().map(|o| o.stats.io.io_ops).sum::<u64>();
            assert!(io(&cached) < io(&baseline));
            assert_eq!(f.index.cache().static_cache(), &static_before);
            assert!(f.index.cache().dynamic().len() <= f.index.cache().dynamic().capacity());
        }
        let none = baseline.iter().map(|o| o.stats.hits.total()).fold(
            Default::default(),
            |mut a: crate::cache::HitCounts, b| {
                a += b;
                a
            },
        );
        assert_eq!(none.static_hits + none.dynamic_hits, 0);
    }

    #[test]
    fn cached_records_match_disk() {
        let (ds, _, graph) = smoke(4);
        let codebook = pqcodec::train(&ds, 2, 16, 5, 0).unwrap();
        let layout = similarity_layout(&ds, 10, 12, 10, 0).unwrap();
        let config = CacheConfig {
            total_budget_nodes: 120,
            static_fraction: 0.5,
            ..Default::default()
        };
        let f = open(
            tempfile::tempdir().unwrap(),
            &ds,
            &graph,
            layout,
            codebook,
            config,
            4096,
        );
        let params = SearchParams::default();
        for id in (0..500).step_by(37) {
            f.index.beam_search(ds.get(id), &params, None).unwrap();
        }
        let cache = f.index.cache();
        assert!(!cache.dynamic().is_empty());
        for v in 0..500u32 {
            if let Some(hit) = cache.lookup(v, 2) {
                let loc = f.index.layout().loc(v);
                let page = f.index.disk().read_page(loc.page).unwrap();
                assert_eq!(hit.record(), page.node(loc.slot).unwrap());
            }
        }
    }

    #[test]
    fn calibration_on_smoke_set() {
        let (ds, _, graph) = smoke(5);
        let codebook = pqcodec::train(&ds, 4, 32, 10, 0).unwrap();
        let layout = insertion_layout(&ds, 12).unwrap();
        let f = open(
            tempfile::tempdir().unwrap(),
            &ds,
            &graph,
            layout,
            codebook,
            CacheConfig::disabled(),
            4096,
        );
        let params = SearchParams::default();
        let a = calibrate_theta(&f.index, &ds, 0.05, &params, 1).unwrap();
        let b = calibrate_theta(&f.index, &ds, 0.05, &params, 1).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.sample.len(), 25);
        assert!(a.theta > 0.0 && a.theta < 1.0);
        // A self-query whose nearest neighbor is the entry finds it at once.
        let entry = f.index.disk().header().entry;
        let out = f.index.beam_search(ds.get(entry), &params, Some(entry)).unwrap();
        assert_eq!(out.stats.transition_iter_truth, Some(1));
    }
}
