//! On-disk node placement.
//!
//! The similarity layout clusters vectors with k-means, orders each cluster's
//! members by distance to its centroid, chains clusters so that neighbors on
//! disk have nearby centroids, and packs the result into fixed-capacity pages.
//! Clusters are not page aligned: a page may hold the tail of one cluster and
//! the head of the next.
//!
//! The same map also answers which contiguous page range to fetch for a
//! batched read around a target node ([`compute_read_interval`]).

use std::fs;
use std::path::Path;

use crate::codec::{put_f32s, put_u16, put_u32, put_u64, Reader};
use crate::error::{Error, Result};
use crate::kmeans;
use crate::vecdata::{l2_squared_f64, VectorDataset};

const LAYOUT_MAGIC: &[u8; 4] = b"GOVL";
const LAYOUT_VERSION: u32 = 1;

pub const DEFAULT_KMEANS_ITERS: usize = 25;
pub const DEFAULT_WINDOW_PAGES: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayoutKind {
    Insertion,
    Similarity,
}

impl LayoutKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LayoutKind::Insertion => "insertion",
            LayoutKind::Similarity => "similarity",
        }
    }

    pub(crate) fn code(self) -> u32 {
        match self {
            LayoutKind::Insertion => 0,
            LayoutKind::Similarity => 1,
        }
    }

    pub(crate) fn from_code(code: u32) -> Result<Self> {
        match code {
            0 => Ok(LayoutKind::Insertion),
            1 => Ok(LayoutKind::Similarity),
            other => Err(Error::Corruption(format!("unknown layout kind {other}"))),
        }
    }
}

impl std::str::FromStr for LayoutKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "insertion" => Ok(LayoutKind::Insertion),
            "similarity" => Ok(LayoutKind::Similarity),
            other => Err(Error::arg(format!(
                "unknown layout kind {other:?} (expected insertion or similarity)"
            ))),
        }
    }
}

impl std::fmt::Display for LayoutKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment {
    pub assignment: Vec<u32>,
    pub centroids: Vec<Vec<f32>>,
}

impl ClusterAssignment {
    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    /// Member ids of every cluster, ascending.
    pub fn members(&self) -> Vec<Vec<u32>> {
        let mut out = vec![Vec::new(); self.k()];
        for (id, &c) in self.assignment.iter().enumerate() {
            out[c as usize].push(id as u32);
        }
        out
    }
}

/// Seeded k-means++ / Lloyd clustering of the whole dataset.
pub fn kmeans(dataset: &VectorDataset, k: usize, max_iters: usize, seed: u64) -> Result<ClusterAssignment> {
    let fit = kmeans::lloyd(dataset.as_flat(), dataset.dim(), k, max_iters, seed)?;
    let centroids = (0..fit.k()).map(|c| fit.centroid(c).to_vec()).collect();
    Ok(ClusterAssignment {
        assignment: fit.assignment,
        centroids,
    })
}

/// Members sorted by ascending distance to `centroid`, ties by id.
pub fn order_within_cluster(members: &[u32], centroid: &[f32], dataset: &VectorDataset) -> Vec<u32> {
    let mut scored: Vec<(f64, u32)> = members
        .iter()
        .map(|&id| (l2_squared_f64(dataset.get(id), centroid), id))
        .collect();
    scored.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    scored.into_iter().map(|(_, id)| id).collect()
}

/// Greedy nearest-centroid chain, starting from the centroid closest to the
/// mean of all centroids. Ties resolve to the lower cluster id.
pub fn order_clusters(centroids: &[Vec<f32>]) -> Vec<u32> {
    let k = centroids.len();
    if k == 0 {
        return Vec::new();
    }
    let dim = centroids[0].len();
    let mut mean = vec![0f64; dim];
    for c in centroids {
        for (m, &x) in mean.iter_mut().zip(c) {
            *m += f64::from(x);
        }
    }
    let mean: Vec<f32> = mean.iter().map(|m| (m / k as f64) as f32).collect();

    let closest = |from: &[f32], used: &[bool]| {
        (0..k)
            .filter(|&c| !used[c])
            .min_by(|&a, &b| {
                l2_squared_f64(from, &centroids[a])
                    .total_cmp(&l2_squared_f64(from, &centroids[b]))
                    .then(a.cmp(&b))
            })
            .expect("an unused cluster remains")
    };
    let mut used = vec![false; k];
    let mut current = closest(&mean, &used);
    let mut sequence = Vec::with_capacity(k);
    loop {
        used[current] = true;
        sequence.push(current as u32);
        if sequence.len() == k {
            return sequence;
        }
        current = closest(&centroids[current], &used);
    }
}

/// Location of one node in the paged file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeLoc {
    pub cluster: u32,
    /// Position in disk order.
    pub rank: u64,
    pub page: u64,
    pub slot: u16,
}

/// Contiguous extent of one cluster in disk order.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterExtent {
    pub first_page: u64,
    pub page_count: u64,
    pub first_rank: u64,
    pub size: u64,
    pub centroid: Vec<f32>,
}

impl ClusterExtent {
    pub fn last_page(&self) -> u64 {
        self.first_page + self.page_count - 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayoutMap {
    kind: LayoutKind,
    page_capacity: usize,
    node_order: Vec<u32>,
    node_loc: Vec<NodeLoc>,
    clusters: Vec<ClusterExtent>,
}

/// Concatenates the per-cluster orders following `sequence` and fills pages
/// of `page_capacity` nodes. `orders` and `centroids` are indexed by cluster id.
pub fn pack_pages(
    kind: LayoutKind,
    sequence: &[u32],
    orders: &[Vec<u32>],
    centroids: &[Vec<f32>],
    page_capacity: usize,
) -> Result<LayoutMap> {
    if page_capacity == 0 || page_capacity > usize::from(u16::MAX) {
        return Err(Error::arg(format!("page capacity {page_capacity} out of range")));
    }
    let k = orders.len();
    if centroids.len() != k || sequence.len() != k {
        return Err(Error::arg("cluster sequence, orders and centroids disagree in length"));
    }
    let mut seen_cluster = vec![false; k];
    for &c in sequence {
        if c as usize >= k || std::mem::replace(&mut seen_cluster[c as usize], true) {
            return Err(Error::arg(format!("cluster sequence is not a permutation (at {c})")));
        }
    }
    let n: usize = orders.iter().map(Vec::len).sum();
    let mut node_loc = vec![None; n];
    let mut node_order = Vec::with_capacity(n);
    let mut clusters: Vec<Option<ClusterExtent>> = vec![None; k];
    let cap = page_capacity as u64;
    for &c in sequence {
        let members = &orders[c as usize];
        if members.is_empty() {
            return Err(Error::arg(format!("cluster {c} is empty")));
        }
        let first_rank = node_order.len() as u64;
        for &id in members {
            let rank = node_order.len() as u64;
            let slot = node_loc
                .get_mut(id as usize)
                .ok_or_else(|| Error::arg(format!("node {id} out of range for {n} nodes")))?;
            if slot.is_some() {
                return Err(Error::arg(format!("node {id} appears twice")));
            }
            *slot = Some(NodeLoc {
                cluster: c,
                rank,
                page: rank / cap,
                slot: (rank % cap) as u16,
            });
            node_order.push(id);
        }
        let last_rank = node_order.len() as u64 - 1;
        clusters[c as usize] = Some(ClusterExtent {
            first_page: first_rank / cap,
            page_count: last_rank / cap - first_rank / cap + 1,
            first_rank,
            size: members.len() as u64,
            centroid: centroids[c as usize].clone(),
        });
    }
    Ok(LayoutMap {
        kind,
        page_capacity,
        node_order,
        node_loc: node_loc.into_iter().map(|l| l.expect("every node placed")).collect(),
        clusters: clusters.into_iter().map(|c| c.expect("every cluster placed")).collect(),
    })
}

/// Number of clusters targeting roughly four pages per cluster.
pub fn default_cluster_count(n: usize, page_capacity: usize) -> usize {
    n.div_ceil(4 * page_capacity).clamp(1, n)
}

/// Clustering, centroid-distance ordering, cluster chaining and packing.
pub fn similarity_layout(
    dataset: &VectorDataset,
    k_clusters: usize,
    page_capacity: usize,
    max_iters: usize,
    seed: u64,
) -> Result<LayoutMap> {
    let clusters = kmeans(dataset, k_clusters, max_iters, seed)?;
    let orders: Vec<Vec<u32>> = clusters
        .members()
        .iter()
        .zip(&clusters.centroids)
        .map(|(members, centroid)| order_within_cluster(members, centroid, dataset))
        .collect();
    let sequence = order_clusters(&clusters.centroids);
    pack_pages(
        LayoutKind::Similarity,
        &sequence,
        &orders,
        &clusters.centroids,
        page_capacity,
    )
}

/// Identity order as a single cluster centred on the dataset mean.
pub fn insertion_layout(dataset: &VectorDataset, page_capacity: usize) -> Result<LayoutMap> {
    let order: Vec<u32> = (0..dataset.len() as u32).collect();
    pack_pages(LayoutKind::Insertion, &[0], &[order], &[dataset.mean()], page_capacity)
}

/// A contiguous range of pages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReadInterval {
    pub start_page: u64,
    pub page_count: u64,
}

impl ReadInterval {
    pub fn end_page(&self) -> u64 {
        self.start_page + self.page_count
    }

    pub fn contains(&self, page: u64) -> bool {
        page >= self.start_page && page < self.end_page()
    }

    pub fn pages(&self) -> std::ops::Range<u64> {
        self.start_page..self.end_page()
    }
}

/// Page range of `min(window_pages, total_pages)` pages for a batched read
/// around `target`.
///
/// The window is centred on the target's page. When the target's cluster
/// spans at least the window it is kept inside that cluster; otherwise it is
/// moved just enough to cover the whole cluster, which pulls in pages of the
/// neighboring clusters. Finally it is shifted back inside the file.
pub fn compute_read_interval(target: u32, window_pages: usize, layout: &LayoutMap) -> Result<ReadInterval> {
    if window_pages == 0 {
        return Err(Error::arg("window must cover at least one page"));
    }
    let loc = layout
        .node_loc
        .get(target as usize)
        .ok_or_else(|| Error::arg(format!("node {target} out of range for {} nodes", layout.len())))?;
    let total = layout.total_pages() as i64;
    let width = (window_pages as i64).min(total);
    let page = loc.page as i64;
    let cluster = &layout.clusters[loc.cluster as usize];
    let (first, last) = (cluster.first_page as i64, cluster.last_page() as i64);

    let mut start = page - (width - 1) / 2;
    if last - first + 1 >= width {
        start = start.clamp(first, last - width + 1);
    } else {
        start = start.min(first).max(last - width + 1);
    }
    start = start.clamp(0, total - width);
    Ok(ReadInterval {
        start_page: start as u64,
        page_count: width as u64,
    })
}

impl LayoutMap {
    pub fn kind(&self) -> LayoutKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.node_order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.node_order.is_empty()
    }

    pub fn page_capacity(&self) -> usize {
        self.page_capacity
    }

    pub fn total_pages(&self) -> u64 {
        (self.node_order.len() as u64).div_ceil(self.page_capacity as u64)
    }

    pub fn node_order(&self) -> &[u32] {
        &self.node_order
    }

    pub fn loc(&self, id: u32) -> NodeLoc {
        self.node_loc[id as usize]
    }

    pub fn page_of(&self, id: u32) -> u64 {
        self.node_loc[id as usize].page
    }

    pub fn clusters(&self) -> &[ClusterExtent] {
        &self.clusters
    }

    /// Node ids stored on `page`, in slot order.
    pub fn page_nodes(&self, page: u64) -> &[u32] {
        let cap = self.page_capacity;
        let start = (page as usize * cap).min(self.node_order.len());
        let end = (start + cap).min(self.node_order.len());
        &self.node_order[start..end]
    }

    /// Mean Euclidean distance over all pairs of nodes sharing a page.
    pub fn mean_intra_page_distance(&self, dataset: &VectorDataset) -> f64 {
        let mut sum = 0f64;
        let mut pairs = 0u64;
        for page in 0..self.total_pages() {
            let nodes = self.page_nodes(page);
            for (i, &a) in nodes.iter().enumerate() {
                for &b in &nodes[i + 1..] {
                    sum += l2_squared_f64(dataset.get(a), dataset.get(b)).sqrt();
                    pairs += 1;
                }
            }
        }
        if pairs == 0 {
            0.0
        } else {
            sum / pairs as f64
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let dim = self.clusters.first().map_or(0, |c| c.centroid.len());
        let mut out = Vec::new();
        out.extend_from_slice(LAYOUT_MAGIC);
        put_u32(&mut out, LAYOUT_VERSION);
        put_u64(&mut out, self.len() as u64);
        put_u32(&mut out, self.clusters.len() as u32);
        put_u32(&mut out, self.page_capacity as u32);
        put_u32(&mut out, self.kind.code());
        put_u32(&mut out, dim as u32);
        for loc in &self.node_loc {
            put_u32(&mut out, loc.cluster);
            put_u64(&mut out, loc.rank);
            put_u64(&mut out, loc.page);
            put_u16(&mut out, loc.slot);
        }
        for c in &self.clusters {
            put_u64(&mut out, c.first_page);
            put_u64(&mut out, c.page_count);
            put_u64(&mut out, c.first_rank);
            put_u64(&mut out, c.size);
            put_f32s(&mut out, &c.centroid);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, "layout sidecar");
        r.magic(LAYOUT_MAGIC)?;
        let version = r.u32()?;
        if version != LAYOUT_VERSION {
            return Err(Error::Corruption(format!("unsupported layout version {version}")));
        }
        let n = r.u64()? as usize;
        let k = r.u32()? as usize;
        let page_capacity = r.u32()? as usize;
        let kind = LayoutKind::from_code(r.u32()?)?;
        let dim = r.u32()? as usize;
        if page_capacity == 0 || page_capacity > usize::from(u16::MAX) || k == 0 || k > n.max(1) {
            return Err(Error::Corruption(format!(
                "invalid layout header: n={n} k={k} capacity={page_capacity}"
            )));
        }
        let mut node_loc = Vec::with_capacity(n.min(bytes.len() / 22));
        for _ in 0..n {
            node_loc.push(NodeLoc {
                cluster: r.u32()?,
                rank: r.u64()?,
                page: r.u64()?,
                slot: r.u16()?,
            });
        }
        let mut clusters = Vec::with_capacity(k);
        for _ in 0..k {
            clusters.push(ClusterExtent {
                first_page: r.u64()?,
                page_count: r.u64()?,
                first_rank: r.u64()?,
                size: r.u64()?,
                centroid: r.f32s(dim)?,
            });
        }
        r.finish()?;

        // Rebuild from the recorded ranks and check the stored extents agree.
        let mut order = vec![u32::MAX; n];
        for (id, loc) in node_loc.iter().enumerate() {
            let slot = order
                .get_mut(loc.rank as usize)
                .ok_or_else(|| Error::Corruption(format!("rank {} out of range", loc.rank)))?;
            if *slot != u32::MAX {
                return Err(Error::Corruption(format!("rank {} assigned twice", loc.rank)));
            }
            *slot = id as u32;
        }
        let mut sequence: Vec<u32> = (0..k as u32).collect();
        sequence.sort_by_key(|&c| clusters[c as usize].first_rank);
        let mut orders = vec![Vec::new(); k];
        for &id in &order {
            let c = node_loc[id as usize].cluster as usize;
            orders
                .get_mut(c)
                .ok_or_else(|| Error::Corruption(format!("cluster {c} out of range")))?
                .push(id);
        }
        let centroids: Vec<Vec<f32>> = clusters.iter().map(|c| c.centroid.clone()).collect();
        let rebuilt = pack_pages(kind, &sequence, &orders, &centroids, page_capacity)
            .map_err(|e| Error::Corruption(e.to_string()))?;
        if rebuilt.node_loc != node_loc || rebuilt.clusters != clusters {
            return Err(Error::Corruption("layout records are inconsistent".into()));
        }
        Ok(rebuilt)
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

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Pages of one node each so that page windows read like node windows.
    fn unit_layout(clusters: &[&[u32]]) -> LayoutMap {
        let k = clusters.len();
        let n: usize = clusters.iter().map(|c| c.len()).sum();
        let orders: Vec<Vec<u32>> = clusters.iter().map(|c| c.to_vec()).collect();
        let sequence: Vec<u32> = (0..k as u32).collect();
        let centroids = vec![vec![0.0f32]; k];
        let layout = pack_pages(LayoutKind::Similarity, &sequence, &orders, &centroids, 1).unwrap();
        assert_eq!(layout.len(), n);
        layout
    }

    fn window_nodes(layout: &LayoutMap, iv: ReadInterval) -> Vec<u32> {
        iv.pages().flat_map(|p| layout.page_nodes(p).to_vec()).collect()
    }

    #[test]
    fn read_interval_same_cluster_window() {
        // Class 1 = {v0, v1}, class 3 = {v2, v5, v9, v4}, class 2 = {v3, v6, v7, v8}.
        let layout = unit_layout(&[&[0, 1], &[2, 5, 9, 4], &[3, 6, 7, 8]]);
        let iv = compute_read_interval(5, 4, &layout).unwrap();
        assert_eq!(window_nodes(&layout, iv), vec![2, 5, 9, 4]);
    }

    #[test]
    fn read_interval_spills_into_adjacent_cluster() {
        // Class 3 = {v5, v9, v2} is smaller than the window; v4 closes class 2.
        let layout = unit_layout(&[&[0, 1], &[3, 6, 4], &[5, 9, 2], &[7, 8]]);
        let iv = compute_read_interval(5, 4, &layout).unwrap();
        assert_eq!(window_nodes(&layout, iv), vec![4, 5, 9, 2]);
        assert_eq!(iv.page_count, 4);
    }

    #[test]
    fn read_interval_clamped_at_file_start() {
        let layout = unit_layout(&[&[0, 3], &[1, 2, 4, 5], &[6, 7, 8, 9]]);
        let iv = compute_read_interval(0, 4, &layout).unwrap();
        assert_eq!(
            iv,
            ReadInterval {
                start_page: 0,
                page_count: 4
            }
        );
        assert_eq!(window_nodes(&layout, iv), vec![0, 3, 1, 2]);
    }

    #[test]
    fn read_interval_clamped_at_file_end_and_short_files() {
        let layout = unit_layout(&[&[0, 1, 2, 3], &[4, 5]]);
        let iv = compute_read_interval(5, 4, &layout).unwrap();
        assert_eq!(
            iv,
            ReadInterval {
                start_page: 2,
                page_count: 4
            }
        );
        let iv = compute_read_interval(2, 10, &layout).unwrap();
        assert_eq!(
            iv,
            ReadInterval {
                start_page: 0,
                page_count: 6
            }
        );
        assert!(compute_read_interval(6, 2, &layout).is_err());
        assert!(compute_read_interval(1, 0, &layout).is_err());
    }

    /// Ten points in three well-separated groups; v4 is the outlier of its group.
    fn ten_points() -> VectorDataset {
        let rows: [[f32; 2]; 10] = [
            [0.0, 0.0],   // v0  class A
            [50.0, 0.0],  // v1  class B
            [0.0, 50.0],  // v2  class C
            [1.0, 0.5],   // v3  class A
            [3.0, 53.0],  // v4  class C, far from the centre
            [0.5, 50.5],  // v5  class C
            [0.5, 1.0],   // v6  class A
            [51.0, 0.5],  // v7  class B
            [50.5, 1.0],  // v8  class B
            [-0.5, 49.5], // v9  class C
        ];
        VectorDataset::from_rows(&rows).unwrap()
    }

    #[test]
    fn peripheral_member_moves_to_next_page() {
        let ds = ten_points();
        let members = [2, 4, 5, 9];
        let centroid = [0.75f32, 50.75];
        assert_eq!(order_within_cluster(&members, &centroid, &ds), vec![5, 2, 9, 4]);

        let layout = similarity_layout(&ds, 3, 3, 25, 1).unwrap();
        let page = layout.page_of(2);
        assert_eq!(layout.page_of(5), page);
        assert_eq!(layout.page_of(9), page);
        assert_eq!(layout.page_of(4), page + 1);
        assert_eq!(layout.loc(4).slot, 0);
        assert_eq!(layout.page_of(3), layout.page_of(6));
    }

    #[test]
    fn within_cluster_edge_cases() {
        let ds = VectorDataset::from_rows(&[[1.0f32, 0.0], [0.0, 1.0], [-1.0, 0.0]]).unwrap();
        assert_eq!(order_within_cluster(&[1], &[0.0, 0.0], &ds), vec![1]);
        assert_eq!(order_within_cluster(&[2, 0, 1], &[0.0, 0.0], &ds), vec![0, 1, 2]);
    }

    #[test]
    fn cluster_chain() {
        assert_eq!(order_clusters(&[vec![3.0]]), vec![0]);
        let chain = order_clusters(&[vec![0.0], vec![10.0], vec![11.0]]);
        assert_eq!(chain, vec![1, 2, 0]);
    }

    #[test]
    fn packing_arithmetic() {
        let order: Vec<u32> = (0..10).collect();
        let layout = pack_pages(LayoutKind::Insertion, &[0], &[order], &[vec![0.0]], 3).unwrap();
        assert_eq!(layout.total_pages(), 4);
        let sizes: Vec<usize> = (0..4).map(|p| layout.page_nodes(p).len()).collect();
        assert_eq!(sizes, vec![3, 3, 3, 1]);
        for v in 0..10u32 {
            assert_eq!(layout.node_order()[layout.loc(v).rank as usize], v);
        }
    }

    #[test]
    fn pack_rejects_bad_input() {
        let c = vec![vec![0.0f32]; 2];
        assert!(pack_pages(LayoutKind::Similarity, &[0, 0], &[vec![0], vec![1]], &c, 2).is_err());
        assert!(pack_pages(LayoutKind::Similarity, &[0, 1], &[vec![0], vec![0]], &c, 2).is_err());
        assert!(pack_pages(LayoutKind::Similarity, &[0, 1], &[vec![0], vec![]], &c, 2).is_err());
        assert!(pack_pages(LayoutKind::Similarity, &[0, 1], &[vec![0], vec![1]], &c, 0).is_err());
    }

    #[test]
    fn kmeans_saturation_and_single_cluster() {
        let ds = ten_points();
        let one = kmeans(&ds, 1, 10, 0).unwrap();
        assert!(one.assignment.iter().all(|&a| a == 0));
        let mean = ds.mean();
        assert!(one.centroids[0].iter().zip(&mean).all(|(a, b)| (a - b).abs() < 1e-5));
        let all = kmeans(&ds, 10, 10, 0).unwrap();
        let mut a = all.assignment.clone();
        a.sort_unstable();
        assert_eq!(a, (0..10).collect::<Vec<_>>());
        assert!(kmeans(&ds, 11, 10, 0).is_err());
    }

    #[test]
    fn sidecar_round_trip_and_corruption() {
        let ds = ten_points();
        let layout = similarity_layout(&ds, 3, 3, 25, 1).unwrap();
        let bytes = layout.to_bytes();
        assert_eq!(LayoutMap::from_bytes(&bytes).unwrap(), layout);
        assert!(LayoutMap::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[36] ^= 1; // rank of node 0
        assert!(LayoutMap::from_bytes(&bad).is_err());
    }

    #[test]
    fn default_cluster_counts() {
        assert_eq!(default_cluster_count(10_000, 12), 209);
        assert_eq!(default_cluster_count(3, 12), 1);
    }

    fn blob_dataset(seed: u64) -> VectorDataset {
        crate::synth::gaussian_blobs(&crate::synth::BlobParams {
            n: 600,
            dim: 4,
            blobs: 4,
            spread: 1.0,
            center_range: 20.0,
            seed,
        })
        .unwrap()
    }

    #[test]
    fn similarity_layout_improves_page_locality() {
        let ds = blob_dataset(3);
        let sim = similarity_layout(&ds, default_cluster_count(ds.len(), 6), 6, 25, 0).unwrap();
        let ins = insertion_layout(&ds, 6).unwrap();
        assert!(sim.mean_intra_page_distance(&ds) < ins.mean_intra_page_distance(&ds));
    }

    proptest! {
        #[test]
        fn layout_and_interval_invariants(seed in 0u64..200, cap in 1usize..7, window in 1usize..6) {
            let ds = blob_dataset(seed);
            let k = 1 + (seed as usize % 30);
            let layout = similarity_layout(&ds, k, cap, 10, seed).unwrap();
            let mut order = layout.node_order().to_vec();
            order.sort_unstable();
            prop_assert_eq!(order, (0..ds.len() as u32).collect::<Vec<_>>());
            let mut next_rank = 0;
            let mut extents: Vec<&ClusterExtent> = layout.clusters().iter().collect();
            extents.sort_by_key(|c| c.first_rank);
            for c in extents {
                prop_assert_eq!(c.first_rank, next_rank);
                next_rank += c.size;
            }
            prop_assert_eq!(next_rank, ds.len() as u64);
            let expect = (window as u64).min(layout.total_pages());
            for v in (0..ds.len() as u32).step_by(7) {
                let iv = compute_read_interval(v, window, &layout).unwrap();
                prop_assert!(iv.contains(layout.page_of(v)));
                prop_assert_eq!(iv.page_count, expect);
                prop_assert!(iv.end_page() <= layout.total_pages());
            }
        }
    }
}
