//! Daemon-free key-value storage over a shared directory.
//!
//! Writers append to private logs, flush them into immutable sorted segments
//! and publish those through a JSON manifest. A single leased compaction
//! manager merges segments down a hash-partitioned tree.

pub mod bloom;
pub mod catalog;
pub mod compaction;
pub mod engine;
pub mod error;
pub mod hash;
pub mod record;
pub mod segment;

pub use error::{Error, Result};
pub use record::{Record, Timestamp};
pub use engine::{Consistency, StoreHandle, StoreOptions, TenantCache};
