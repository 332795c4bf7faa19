//! Hybrid node/page cache.
//!
//! The static part holds node records gathered by a breadth-first walk from
//! the entry point and never changes after preload. The dynamic part holds
//! whole pages admitted by batched reads and evicts by LFU, FIFO or seeded
//! random choice. Both sides share one budget expressed in node records.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diskstore::{DiskIndex, DiskPage, NodeRecord};
use crate::error::{Error, Result};
use crate::layout::LayoutMap;

pub const DEFAULT_STATIC_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Policy {
    #[default]
    Lfu,
    Fifo,
    Random,
}

impl Policy {
    pub fn as_str(self) -> &'static str {
        match self {
            Policy::Lfu => "lfu",
            Policy::Fifo => "fifo",
            Policy::Random => "random",
        }
    }
}

impl std::str::FromStr for Policy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lfu" => Ok(Policy::Lfu),
            "fifo" => Ok(Policy::Fifo),
            "random" => Ok(Policy::Random),
            other => Err(Error::arg(format!(
                "unknown replacement policy {other:?} (expected lfu, fifo or random)"
            ))),
        }
    }
}

impl std::fmt::Display for Policy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CacheConfig {
    pub total_budget_nodes: usize,
    pub static_fraction: f64,
    pub policy: Policy,
    pub seed: u64,
}

impl Default for CacheConfig {
    fn default() -> Self {
        Self {
            total_budget_nodes: 0,
            static_fraction: DEFAULT_STATIC_FRACTION,
            policy: Policy::Lfu,
            seed: 0,
        }
    }
}

impl CacheConfig {
    /// No caching at all.
    pub fn disabled() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.static_fraction) {
            return Err(Error::arg(format!(
                "static fraction must lie in [0, 1], got {}",
                self.static_fraction
            )));
        }
        Ok(())
    }

    pub fn static_capacity(&self) -> usize {
        ((self.static_fraction * self.total_budget_nodes as f64).round() as usize).min(self.total_budget_nodes)
    }

    pub fn dynamic_capacity_nodes(&self) -> usize {
        self.total_budget_nodes - self.static_capacity()
    }

    pub fn dynamic_capacity_pages(&self, page_capacity: usize) -> usize {
        self.dynamic_capacity_nodes() / page_capacity.max(1)
    }
}

/// Node records preloaded by breadth-first search; immutable afterwards.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StaticCache {
    nodes: HashMap<u32, Arc<NodeRecord>>,
}

impl StaticCache {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn get(&self, id: u32) -> Option<&Arc<NodeRecord>> {
        self.nodes.get(&id)
    }

    pub fn contains(&self, id: u32) -> bool {
        self.nodes.contains_key(&id)
    }

    /// Cached ids in ascending order.
    pub fn ids(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.nodes.keys().copied().collect();
        ids.sort_unstable();
        ids
    }
}

/// Walks the graph stored in `disk` from its entry node, one hop at a time.
///
/// Whole hops are admitted while they fit; the hop that overflows is cut to
/// its lowest node ids. Reads go through `disk` and show up in its counters.
pub fn preload_static(disk: &DiskIndex, layout: &LayoutMap, capacity_nodes: usize) -> Result<StaticCache> {
    let mut cache = StaticCache::default();
    if capacity_nodes == 0 {
        return Ok(cache);
    }
    if layout.len() != disk.header().n {
        return Err(Error::arg(format!(
            "layout covers {} nodes, index has {}",
            layout.len(),
            disk.header().n
        )));
    }
    let mut seen = HashSet::from([disk.header().entry]);
    let mut hop = vec![disk.header().entry];
    while !hop.is_empty() && cache.len() < capacity_nodes {
        let room = capacity_nodes - cache.len();
        if hop.len() > room {
            hop.sort_unstable();
            hop.truncate(room);
        }
        let records = fetch_records(disk, layout, &hop)?;
        let mut next = Vec::new();
        for record in records {
            for &v in &record.neighbors {
                if seen.insert(v) {
                    next.push(v);
                }
            }
            cache.nodes.insert(record.id, Arc::new(record));
        }
        hop = next;
    }
    Ok(cache)
}

fn fetch_records(disk: &DiskIndex, layout: &LayoutMap, ids: &[u32]) -> Result<Vec<NodeRecord>> {
    let mut pages: BTreeMap<u64, DiskPage> = BTreeMap::new();
    let mut out = Vec::with_capacity(ids.len());
    for &id in ids {
        let loc = layout.loc(id);
        if let std::collections::btree_map::Entry::Vacant(e) = pages.entry(loc.page) {
            e.insert(disk.read_page(loc.page)?);
        }
        let record = pages[&loc.page]
            .node(loc.slot)
            .filter(|r| r.id == id)
            .ok_or_else(|| Error::Corruption(format!("node {id} not at page {} slot {}", loc.page, loc.slot)))?;
        out.push(record.clone());
    }
    Ok(out)
}

#[derive(Debug)]
struct Resident {
    page: Arc<DiskPage>,
    count: u64,
    seq: u64,
}

#[derive(Debug)]
struct DynamicState {
    // Ordered by page id so that random eviction is reproducible.
    pages: BTreeMap<u64, Resident>,
    next_seq: u64,
    rng: ChaCha8Rng,
}

/// Page store with a replacement policy. All operations take one lock, so
/// each is linearizable.
#[derive(Debug)]
pub struct DynamicCache {
    capacity_pages: usize,
    policy: Policy,
    seed: u64,
    state: Mutex<DynamicState>,
}

impl DynamicCache {
    pub fn new(capacity_pages: usize, policy: Policy, seed: u64) -> Self {
        Self {
            capacity_pages,
            policy,
            seed,
            state: Mutex::new(DynamicState {
                pages: BTreeMap::new(),
                next_seq: 0,
                rng: ChaCha8Rng::seed_from_u64(seed),
            }),
        }
    }

    fn lock(&self) -> MutexGuard<'_, DynamicState> {
        self.state.lock().unwrap_or_else(|poisoned| poisoned.into_inner())
    }

    pub fn capacity(&self) -> usize {
        self.capacity_pages
    }

    pub fn policy(&self) -> Policy {
        self.policy
    }

    pub fn len(&self) -> usize {
        self.lock().pages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Returns the page if resident and counts the access for LFU.
    pub fn get(&self, page_id: u64) -> Option<Arc<DiskPage>> {
        let mut state = self.lock();
        let resident = state.pages.get_mut(&page_id)?;
        resident.count += 1;
        Some(Arc::clone(&resident.page))
    }

    pub fn contains(&self, page_id: u64) -> bool {
        self.lock().pages.contains_key(&page_id)
    }

    /// Resident page ids with their LFU access counts, ascending by page id.
    pub fn access_counts(&self) -> Vec<(u64, u64)> {
        self.lock().pages.iter().map(|(&id, r)| (id, r.count)).collect()
    }

    /// Admits each page in order and returns evicted page ids in eviction
    /// order. A resident page is not reinserted: LFU bumps its count, FIFO
    /// and random leave it untouched.
    pub fn admit_pages(&self, pages: impl IntoIterator<Item = Arc<DiskPage>>) -> Vec<u64> {
        let mut evicted = Vec::new();
        if self.capacity_pages == 0 {
            return evicted;
        }
        let mut state = self.lock();
        for page in pages {
            if let Some(resident) = state.pages.get_mut(&page.page_id) {
                if self.policy == Policy::Lfu {
                    resident.count += 1;
                }
                continue;
            }
            while state.pages.len() >= self.capacity_pages {
                let victim = choose_victim(self.policy, &mut state).expect("cache is full, so nonempty");
                state.pages.remove(&victim);
                evicted.push(victim);
            }
            let seq = state.next_seq;
            state.next_seq += 1;
            state.pages.insert(page.page_id, Resident { page, count: 0, seq });
        }
        evicted
    }

    /// The page the policy would evict next. For the random policy this
    /// consumes a draw from the generator.
    pub fn evict_candidate(&self) -> Result<u64> {
        choose_victim(self.policy, &mut self.lock())
            .ok_or_else(|| Error::State("eviction requested from an empty cache".into()))
    }

    /// Drops every page and restarts the policy state, including the random
    /// generator.
    pub fn clear(&self) {
        let mut state = self.lock();
        state.pages.clear();
        state.next_seq = 0;
        state.rng = ChaCha8Rng::seed_from_u64(self.seed);
    }
}

fn choose_victim(policy: Policy, state: &mut DynamicState) -> Option<u64> {
    match policy {
        Policy::Lfu => state
            .pages
            .iter()
            .min_by_key(|(_, r)| (r.count, r.seq))
            .map(|(&id, _)| id),
        Policy::Fifo => state.pages.iter().min_by_key(|(_, r)| r.seq).map(|(&id, _)| id),
        Policy::Random => {
            if state.pages.is_empty() {
                return None;
            }
            let pick = state.rng.random_range(0..state.pages.len());
            state.pages.keys().nth(pick).copied()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum HitKind {
    Static,
    Dynamic,
    Miss,
}

impl HitKind {
    pub fn as_str(self) -> &'static str {
        match self {
            HitKind::Static => "static",
            HitKind::Dynamic => "dynamic",
            HitKind::Miss => "miss",
        }
    }
}

/// Lookup outcome counts for one phase.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct HitCounts {
    pub static_hits: u64,
    pub dynamic_hits: u64,
    pub misses: u64,
}

impl HitCounts {
    pub fn lookups(&self) -> u64 {
        self.static_hits + self.dynamic_hits + self.misses
    }

    pub fn record(&mut self, kind: HitKind) {
        match kind {
            HitKind::Static => self.static_hits += 1,
            HitKind::Dynamic => self.dynamic_hits += 1,
            HitKind::Miss => self.misses += 1,
        }
    }

    /// Fraction of lookups served from either cache; 0 with no lookups.
    pub fn hit_rate(&self) -> f64 {
        ratio(self.static_hits + self.dynamic_hits, self.lookups())
    }

    pub fn static_hit_rate(&self) -> f64 {
        ratio(self.static_hits, self.lookups())
    }

    pub fn dynamic_hit_rate(&self) -> f64 {
        ratio(self.dynamic_hits, self.lookups())
    }
}

impl std::ops::AddAssign for HitCounts {
    fn add_assign(&mut self, rhs: Self) {
        self.static_hits += rhs.static_hits;
        self.dynamic_hits += rhs.dynamic_hits;
        self.misses += rhs.misses;
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Lookup counts split by search phase (index 0 is phase 1).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PhaseHits {
    pub phases: [HitCounts; 2],
}

impl PhaseHits {
    pub fn phase(&self, phase: u8) -> &HitCounts {
        &self.phases[phase_index(phase)]
    }

    pub fn record(&mut self, phase: u8, kind: HitKind) {
        self.phases[phase_index(phase)].record(kind);
    }

    pub fn total(&self) -> HitCounts {
        let mut t = self.phases[0];
        t += self.phases[1];
        t
    }
}

impl std::ops::AddAssign for PhaseHits {
    fn add_assign(&mut self, rhs: Self) {
        self.phases[0] += rhs.phases[0];
        self.phases[1] += rhs.phases[1];
    }
}

fn phase_index(phase: u8) -> usize {
    assert!(phase == 1 || phase == 2, "phase must be 1 or 2, got {phase}");
    usize::from(phase - 1)
}

#[derive(Debug, Default)]
struct AtomicCounts {
    static_hits: AtomicU64,
    dynamic_hits: AtomicU64,
    misses: AtomicU64,
}

/// Shared, lock-free lookup counters.
#[derive(Debug, Default)]
pub struct HitStats {
    phases: [AtomicCounts; 2],
}

impl HitStats {
    pub fn record(&self, phase: u8, kind: HitKind) {
        let c = &self.phases[phase_index(phase)];
        let counter = match kind {
            HitKind::Static => &c.static_hits,
            HitKind::Dynamic => &c.dynamic_hits,
            HitKind::Miss => &c.misses,
        };
        counter.fetch_add(1, Ordering::Relaxed);
    }

    pub fn snapshot(&self) -> PhaseHits {
        let load = |c: &AtomicCounts| HitCounts {
            static_hits: c.static_hits.load(Ordering::Relaxed),
            dynamic_hits: c.dynamic_hits.load(Ordering::Relaxed),
            misses: c.misses.load(Ordering::Relaxed),
        };
        PhaseHits {
            phases: [load(&self.phases[0]), load(&self.phases[1])],
        }
    }

    pub fn reset(&self) {
        for c in &self.phases {
            c.static_hits.store(0, Ordering::Relaxed);
            c.dynamic_hits.store(0, Ordering::Relaxed);
            c.misses.store(0, Ordering::Relaxed);
        }
    }
}

/// A cached node as returned by [`HybridCache::lookup`].
#[derive(Debug, Clone)]
pub enum CachedNode {
    Static(Arc<NodeRecord>),
    Dynamic { page: Arc<DiskPage>, slot: u16 },
}

impl CachedNode {
    pub fn record(&self) -> &NodeRecord {
        match self {
            CachedNode::Static(r) => r,
            CachedNode::Dynamic { page, slot } => page.node(*slot).expect("slot located through the layout"),
        }
    }

    pub fn kind(&self) -> HitKind {
        match self {
            CachedNode::Static(_) => HitKind::Static,
            CachedNode::Dynamic { .. } => HitKind::Dynamic,
        }
    }
}

/// Static node cache in front of a dynamic page cache.
#[derive(Debug)]
pub struct HybridCache {
    config: CacheConfig,
    layout: Arc<LayoutMap>,
    static_cache: StaticCache,
    dynamic: DynamicCache,
    stats: HitStats,
}

impl HybridCache {
    /// Preloads the static side from `disk` and sizes the dynamic side in
    /// whole pages.
    pub fn build(config: CacheConfig, disk: &DiskIndex, layout: Arc<LayoutMap>) -> Result<Self> {
        config.validate()?;
        let static_cache = preload_static(disk, &layout, config.static_capacity())?;
        let pages = config.dynamic_capacity_pages(layout.page_capacity());
        Ok(Self {
            dynamic: DynamicCache::new(pages, config.policy, config.seed),
            config,
            layout,
            static_cache,
            stats: HitStats::default(),
        })
    }

    pub fn config(&self) -> &CacheConfig {
        &self.config
    }

    pub fn layout(&self) -> &Arc<LayoutMap> {
        &self.layout
    }

    pub fn static_cache(&self) -> &StaticCache {
        &self.static_cache
    }

    pub fn dynamic(&self) -> &DynamicCache {
        &self.dynamic
    }

    /// Static side first, then the dynamic page holding the node.
    pub fn lookup(&self, id: u32, phase: u8) -> Option<CachedNode> {
        let found = if let Some(record) = self.static_cache.get(id) {
            Some(CachedNode::Static(Arc::clone(record)))
        } else {
            let loc = self.layout.loc(id);
            self.dynamic
                .get(loc.page)
                .map(|page| CachedNode::Dynamic { page, slot: loc.slot })
        };
        self.stats
            .record(phase, found.as_ref().map_or(HitKind::Miss, CachedNode::kind));
        found
    }

    pub fn admit_pages(&self, pages: impl IntoIterator<Item = Arc<DiskPage>>) -> Vec<u64> {
        self.dynamic.admit_pages(pages)
    }

    pub fn stats(&self) -> PhaseHits {
        self.stats.snapshot()
    }

    pub fn reset_stats(&self) {
        self.stats.reset();
    }

    /// Empties the dynamic side; the static side is never modified.
    pub fn reset_dynamic(&self) {
        self.dynamic.clear();
    }
}
