//! The shared catalog: tree layout, manifest generations and the compaction lease.

mod lease;
mod manifest;
mod tree;

pub use lease::{Lease, DEFAULT_LEASE_TTL, LEASE_FILE};
pub use manifest::{
    node_counts, Catalog, CatalogView, Layout, Manifest, Strategy, TreeIndex,
    DEFAULT_COMMIT_RETRIES, MANIFEST_FILE, MANIFEST_LOCK,
};
pub use tree::{capacity, route, NodePath, TreeConfig, ROUTE_SLICE};
