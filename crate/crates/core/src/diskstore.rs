//! Paged on-disk index file.
//!
//! File layout (little-endian throughout):
//!
//! ```text
//! offset 0              header page (page_size bytes, zero padded)
//!   0  magic "GOVI1\0\0\0"
//!   8  version u32        12 page_size u32     16 dim u32
//!  20  max_degree u32     24 n u64             32 page_capacity u32
//!  36  layout_kind u32    40 total_pages u64   48 entry_id u64
//! offset (p + 1) * page_size   data page p
//!   0  page_id u32   4 node_count u16   6 reserved u16
//!   8  node_count slots of slot_size bytes, then zero padding
//! slot
//!   node_id u64 | vector dim × f32 | degree u16 | neighbors max_degree × u64 (zero padded)
//! ```
//!
//! Every read request is counted once in [`IoStats::io_ops`] regardless of how
//! many pages it spans; `pages_read` counts transferred pages.

use std::fs::{self, File, OpenOptions};
use std::os::unix::fs::FileExt;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use crate::codec::{put_u16, put_u32, put_u64};
use crate::error::{Error, Result};
use crate::graphbuild::GraphIndex;
use crate::layout::{LayoutKind, LayoutMap, ReadInterval};
use crate::vecdata::VectorDataset;

pub const DEFAULT_PAGE_SIZE: usize = 4096;
pub const PAGE_HEADER_BYTES: usize = 8;
const INDEX_MAGIC: &[u8; 8] = b"GOVI1\0\0\0";
const INDEX_VERSION: u32 = 1;
const HEADER_BYTES: usize = 56;

pub fn slot_size(dim: usize, max_degree: usize) -> usize {
    8 + 4 * dim + 2 + 8 * max_degree
}

/// Slots that fit in one page after the page header.
pub fn page_capacity(page_size: usize, dim: usize, max_degree: usize) -> Result<usize> {
    let slot = slot_size(dim, max_degree);
    let needed = PAGE_HEADER_BYTES + slot;
    if page_size < needed.max(HEADER_BYTES) {
        return Err(Error::Config(format!(
            "a {slot}-byte slot (dim {dim}, degree {max_degree}) needs page_size >= {}, got {page_size}",
            needed.max(HEADER_BYTES)
        )));
    }
    Ok(((page_size - PAGE_HEADER_BYTES) / slot).min(usize::from(u16::MAX)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IndexHeader {
    pub page_size: usize,
    pub dim: usize,
    pub n: usize,
    pub max_degree: usize,
    pub page_capacity: usize,
    pub total_pages: u64,
    pub entry: u32,
    pub kind: LayoutKind,
}

impl IndexHeader {
    pub fn slot_size(&self) -> usize {
        slot_size(self.dim, self.max_degree)
    }

    pub fn file_size(&self) -> u64 {
        (self.total_pages + 1) * self.page_size as u64
    }

    fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.page_size);
        out.extend_from_slice(INDEX_MAGIC);
        put_u32(&mut out, INDEX_VERSION);
        put_u32(&mut out, self.page_size as u32);
        put_u32(&mut out, self.dim as u32);
        put_u32(&mut out, self.max_degree as u32);
        put_u64(&mut out, self.n as u64);
        put_u32(&mut out, self.page_capacity as u32);
        put_u32(&mut out, self.kind.code());
        put_u64(&mut out, self.total_pages);
        put_u64(&mut out, u64::from(self.entry));
        debug_assert_eq!(out.len(), HEADER_BYTES);
        out.resize(self.page_size, 0);
        out
    }

    fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = crate::codec::Reader::new(bytes, "index header");
        r.magic(INDEX_MAGIC)?;
        let version = r.u32()?;
        if version != INDEX_VERSION {
            return Err(Error::Corruption(format!("unsupported index version {version}")));
        }
        let page_size = r.u32()? as usize;
        let dim = r.u32()? as usize;
        let max_degree = r.u32()? as usize;
        let n = r.u64()? as usize;
        let page_capacity = r.u32()? as usize;
        let kind = LayoutKind::from_code(r.u32()?)?;
        let total_pages = r.u64()?;
        let entry = r.u64()?;
        let header = IndexHeader {
            page_size,
            dim,
            n,
            max_degree,
            page_capacity,
            total_pages,
            entry: u32::try_from(entry).map_err(|_| Error::Corruption(format!("entry {entry} too large")))?,
            kind,
        };
        header.check().map_err(|e| Error::Corruption(e.to_string()))?;
        Ok(header)
    }

    fn check(&self) -> Result<()> {
        if self.dim == 0 || self.n == 0 || self.page_capacity == 0 || self.n > u32::MAX as usize {
            return Err(Error::Config(format!("degenerate index header {self:?}")));
        }
        if self.slot_size() * self.page_capacity + PAGE_HEADER_BYTES > self.page_size {
            return Err(Error::Config(format!(
                "{} slots of {} bytes need page_size >= {}, got {}",
                self.page_capacity,
                self.slot_size(),
                self.slot_size() * self.page_capacity + PAGE_HEADER_BYTES,
                self.page_size
            )));
        }
        if self.total_pages != (self.n as u64).div_ceil(self.page_capacity as u64) {
            return Err(Error::Config(format!(
                "total_pages {} disagrees with n {} at capacity {}",
                self.total_pages, self.n, self.page_capacity
            )));
        }
        if self.entry as usize >= self.n {
            return Err(Error::Config(format!("entry {} out of range", self.entry)));
        }
        Ok(())
    }
}

/// Vector and adjacency of one node.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeRecord {
    pub id: u32,
    pub vector: Vec<f32>,
    pub neighbors: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiskPage {
    pub page_id: u64,
    pub nodes: Vec<NodeRecord>,
}

impl DiskPage {
    pub fn node(&self, slot: u16) -> Option<&NodeRecord> {
        self.nodes.get(usize::from(slot))
    }
}

/// Snapshot of read accounting.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IoStats {
    pub io_ops: u64,
    pub pages_read: u64,
    pub bytes_read: u64,
}

impl std::ops::AddAssign for IoStats {
    fn add_assign(&mut self, rhs: Self) {
        self.io_ops += rhs.io_ops;
        self.pages_read += rhs.pages_read;
        self.bytes_read += rhs.bytes_read;
    }
}

/// Serializes the index; output is a pure function of the inputs.
pub fn encode_index(
    dataset: &VectorDataset,
    graph: &GraphIndex,
    layout: &LayoutMap,
    page_size: usize,
) -> Result<Vec<u8>> {
    let n = dataset.len();
    if graph.len() != n || layout.len() != n {
        return Err(Error::arg(format!(
            "dataset ({n}), graph ({}) and layout ({}) sizes differ",
            graph.len(),
            layout.len()
        )));
    }
    let header = IndexHeader {
        page_size,
        dim: dataset.dim(),
        n,
        max_degree: graph.max_degree(),
        page_capacity: layout.page_capacity(),
        total_pages: layout.total_pages(),
        entry: graph.entry(),
        kind: layout.kind(),
    };
    header.check()?;
    let slot = header.slot_size();
    let mut out = header.encode();
    out.reserve(header.total_pages as usize * page_size);
    for page in 0..header.total_pages {
        let start = out.len();
        let nodes = layout.page_nodes(page);
        put_u32(&mut out, page as u32);
        put_u16(&mut out, nodes.len() as u16);
        put_u16(&mut out, 0);
        for &id in nodes {
            let slot_start = out.len();
            put_u64(&mut out, u64::from(id));
            crate::codec::put_f32s(&mut out, dataset.get(id));
            let neighbors = graph.neighbors(id);
            put_u16(&mut out, neighbors.len() as u16);
            for &v in neighbors {
                put_u64(&mut out, u64::from(v));
            }
            out.resize(slot_start + slot, 0);
        }
        out.resize(start + page_size, 0);
    }
    Ok(out)
}

pub fn write_index(
    path: impl AsRef<Path>,
    dataset: &VectorDataset,
    graph: &GraphIndex,
    layout: &LayoutMap,
    page_size: usize,
) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_index(dataset, graph, layout, page_size)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Default)]
struct IoCounters {
    io_ops: AtomicU64,
    pages_read: AtomicU64,
    bytes_read: AtomicU64,
}

/// Read-only handle on an index file with request accounting.
#[derive(Debug)]
pub struct DiskIndex {
    path: PathBuf,
    file: File,
    header: IndexHeader,
    counters: IoCounters,
    direct: bool,
}

impl DiskIndex {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        Self::open_with(path, false)
    }

    /// Opens the file, optionally asking the OS to bypass its page cache
    /// (`O_DIRECT` on Linux). Falls back to buffered reads when the platform
    /// or filesystem refuses; [`DiskIndex::os_cache_bypass`] reports the outcome.
    pub fn open_with(path: impl AsRef<Path>, bypass_os_cache: bool) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
        let mut head = vec![0u8; HEADER_BYTES];
        file.read_exact_at(&mut head, 0).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => Error::Format {
                offset: 0,
                message: "index file shorter than its header".into(),
            },
            _ => Error::io(&path, e),
        })?;
        let header = IndexHeader::decode(&head)?;
        let actual = file.metadata().map_err(|e| Error::io(&path, e))?.len();
        if actual != header.file_size() {
            return Err(Error::Corruption(format!(
                "index file is {actual} bytes, header implies {}",
                header.file_size()
            )));
        }
        let mut index = DiskIndex {
            path,
            file,
            header,
            counters: IoCounters::default(),
            direct: false,
        };
        if bypass_os_cache {
            index.try_enable_direct();
        }
        Ok(index)
    }

    #[cfg(target_os = "linux")]
    fn try_enable_direct(&mut self) {
        use std::os::unix::fs::OpenOptionsExt;
        if !self.header.page_size.is_multiple_of(512) {
            return;
        }
        let Ok(file) = OpenOptions::new()
            .read(true)
            .custom_flags(libc::O_DIRECT)
            .open(&self.path)
        else {
            return;
        };
        let mut probe = AlignedBuf::new(self.header.page_size);
        if file.read_exact_at(probe.as_mut_slice(), 0).is_ok() {
            self.file = file;
            self.direct = true;
        }
    }

    #[cfg(not(target_os = "linux"))]
    fn try_enable_direct(&mut self) {
        let _ = OpenOptions::new();
    }

    pub fn header(&self) -> &IndexHeader {
        &self.header
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn os_cache_bypass(&self) -> bool {
        self.direct
    }

    pub fn stats(&self) -> IoStats {
        IoStats {
            io_ops: self.counters.io_ops.load(Ordering::Relaxed),
            pages_read: self.counters.pages_read.load(Ordering::Relaxed),
            bytes_read: self.counters.bytes_read.load(Ordering::Relaxed),
        }
    }

    pub fn reset_stats(&self) {
        self.counters.io_ops.store(0, Ordering::Relaxed);
        self.counters.pages_read.store(0, Ordering::Relaxed);
        self.counters.bytes_read.store(0, Ordering::Relaxed);
    }

    pub fn read_page(&self, page_id: u64) -> Result<DiskPage> {
        let mut pages = self.read_page_range(ReadInterval {
            start_page: page_id,
            page_count: 1,
        })?;
        Ok(pages.pop().expect("one page requested"))
    }

    /// Reads a contiguous run of pages as a single request.
    pub fn read_page_range(&self, interval: ReadInterval) -> Result<Vec<DiskPage>> {
        if interval.page_count == 0 || interval.end_page() > self.header.total_pages {
            return Err(Error::arg(format!(
                "page range {}..{} outside 0..{}",
                interval.start_page,
                interval.end_page(),
                self.header.total_pages
            )));
        }
        let page_size = self.header.page_size;
        let len = interval.page_count as usize * page_size;
        let offset = (interval.start_page + 1) * page_size as u64;
        let mut buf = AlignedBuf::new(len);
        self.file
            .read_exact_at(buf.as_mut_slice(), offset)
            .map_err(|e| match e.kind() {
                std::io::ErrorKind::UnexpectedEof => {
                    Error::Corruption(format!("short read of {len} bytes at offset {offset}"))
                }
                _ => Error::io(&self.path, e),
            })?;
        self.counters.io_ops.fetch_add(1, Ordering::Relaxed);
        self.counters
            .pages_read
            .fetch_add(interval.page_count, Ordering::Relaxed);
        self.counters.bytes_read.fetch_add(len as u64, Ordering::Relaxed);
        buf.as_slice()
            .chunks_exact(page_size)
            .zip(interval.pages())
            .map(|(bytes, page)| self.decode_page(page, bytes))
            .collect()
    }

    fn decode_page(&self, page_id: u64, bytes: &[u8]) -> Result<DiskPage> {
        let h = &self.header;
        let corrupt = |msg: String| Error::Corruption(format!("page {page_id}: {msg}"));
        let stored_id = u32::from_le_bytes(bytes[0..4].try_into().unwrap());
        let count = usize::from(u16::from_le_bytes(bytes[4..6].try_into().unwrap()));
        if u64::from(stored_id) != page_id {
            return Err(corrupt(format!("header names page {stored_id}")));
        }
        let expected = h.page_capacity.min(h.n - page_id as usize * h.page_capacity);
        if count != expected {
            return Err(corrupt(format!("holds {count} nodes, expected {expected}")));
        }
        let slot = h.slot_size();
        let mut nodes = Vec::with_capacity(count);
        for s in 0..count {
            let raw = &bytes[PAGE_HEADER_BYTES + s * slot..PAGE_HEADER_BYTES + (s + 1) * slot];
            let id = u64::from_le_bytes(raw[0..8].try_into().unwrap());
            if id >= h.n as u64 {
                return Err(corrupt(format!("slot {s} names node {id}")));
            }
            let vec_end = 8 + 4 * h.dim;
            let vector = raw[8..vec_end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let degree = usize::from(u16::from_le_bytes(raw[vec_end..vec_end + 2].try_into().unwrap()));
            if degree > h.max_degree {
                return Err(corrupt(format!("node {id} has degree {degree}")));
            }
            let mut neighbors = Vec::with_capacity(degree);
            for chunk in raw[vec_end + 2..].chunks_exact(8).take(degree) {
                let v = u64::from_le_bytes(chunk.try_into().unwrap());
                if v >= h.n as u64 {
                    return Err(corrupt(format!("node {id} links to {v}")));
                }
                neighbors.push(v as u32);
            }
            nodes.push(NodeRecord {
                id: id as u32,
                vector,
                neighbors,
            });
        }
        Ok(DiskPage { page_id, nodes })
    }
}

/// Page-aligned byte buffer, as required for `O_DIRECT` reads.
struct AlignedBuf {
    ptr: std::ptr::NonNull<u8>,
    layout: std::alloc::Layout,
}

const IO_ALIGN: usize = 4096;

impl AlignedBuf {
    fn new(len: usize) -> Self {
        let layout = std::alloc::Layout::from_size_align(len.max(1), IO_ALIGN).expect("valid buffer layout");
        // SAFETY: layout has nonzero size.
        let raw = unsafe { std::alloc::alloc_zeroed(layout) };
        let ptr = std::ptr::NonNull::new(raw).unwrap_or_else(|| std::alloc::handle_alloc_error(layout));
        Self { ptr, layout }
    }

    fn as_slice(&self) -> &[u8] {
        // SAFETY: ptr owns layout.size() initialized (zeroed) bytes.
        unsafe { std::slice::from_raw_parts(self.ptr.as_ptr(), self.layout.size()) }
    }

    fn as_mut_slice(&mut self) -> &mut [u8] {
        // SAFETY: as above, and &mut self guarantees exclusivity.
        unsafe { std::slice::from_raw_parts_mut(self.ptr.as_ptr(), self.layout.size()) }
    }
}

impl Drop for AlignedBuf {
    fn drop(&mut self) {
        // SAFETY: allocated in `new` with the same layout.
        unsafe { std::alloc::dealloc(self.ptr.as_ptr(), self.layout) }
    }
}
