//! Disk-resident graph index for approximate nearest neighbor search with a
//! hybrid static/dynamic page cache, similarity-aware batched reads and a
//! clustering-based on-disk node layout.
//!
//! The pipeline is: [`vecdata`] (datasets, exact search, recall) →
//! [`graphbuild`] (bounded-degree graph) and [`pqcodec`] (in-memory codes) →
//! [`layout`] (node placement) → [`diskstore`] (paged index file) →
//! [`cache`] + [`search`] (two-phase beam search) → [`workload`] (batches,
//! reports).

pub mod cache;
mod codec;
pub mod diskstore;
mod error;
pub mod graphbuild;
pub mod kmeans;
pub mod layout;
pub mod pqcodec;
pub mod search;
pub mod synth;
pub mod vecdata;
pub mod workload;

pub use error::{Error, Result};
