use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use crate::catalog::{route, Catalog, Layout, NodePath, Strategy};
use crate::error::Result;
use crate::record::Record;
use crate::segment::{write_sorted, ImmutableSegment, SealedSegment, SegmentId};

const ATTEMPTS: u32 = 5;

/// Write a sealed segment out and publish it, then drop its log. Under the
/// tree strategy the records are split by their first-level route, one
/// segment per non-empty child of the root; under the size strategy a single
/// segment goes to the flat node. Returns the number of segments published.
pub fn publish_sealed(
    root: &Path,
    catalog: &Catalog,
    layout: &Layout,
    sealed: &SealedSegment,
    writer: &str,
    seq: &AtomicU64,
    fp_rate: f64,
) -> Result<usize> {
    if sealed.is_empty() {
        sealed.discard_log()?;
        return Ok(0);
    }
    let mut records = sealed.records.clone();
    records.sort_by(Record::storage_cmp);

    let mut attempt = 0;
    loop {
        attempt += 1;
        match write_and_publish(root, catalog, layout, &records, writer, seq, fp_rate) {
            Ok(n) => {
                sealed.discard_log()?;
                return Ok(n);
            }
            Err(e) if attempt < ATTEMPTS => {
                log::warn!("flush of {} failed (attempt {attempt}): {e}", sealed.id);
                std::thread::sleep(Duration::from_millis(10 << attempt));
            }
            Err(e) => return Err(e),
        }
    }
}

fn write_and_publish(
    root: &Path,
    catalog: &Catalog,
    layout: &Layout,
    records: &[Record],
    writer: &str,
    seq: &AtomicU64,
    fp_rate: f64,
) -> Result<usize> {
    let buckets: Vec<(NodePath, Vec<Record>)> = match layout.strategy {
        Strategy::Size => vec![(NodePath::Flat, records.to_vec())],
        Strategy::Tree => {
            let mut by_child: Vec<Vec<Record>> = vec![Vec::new(); layout.tree.fanout as usize];
            for rec in records {
                by_child[route(&rec.key, &layout.tree, 1) as usize].push(rec.clone());
            }
            by_child
                .into_iter()
                .enumerate()
                .filter(|(_, r)| !r.is_empty())
                .map(|(c, r)| (NodePath::Tree(vec![c as u32]), r))
                .collect()
        }
    };
    let mut written: Vec<(ImmutableSegment, NodePath)> = Vec::new();
    let result = (|| {
        for (node, recs) in buckets {
            let id = SegmentId::new(writer, seq.fetch_add(1, Ordering::SeqCst))?;
            if let Some(meta) = write_sorted(root, id, recs, fp_rate)? {
                written.push((meta, node));
            }
        }
        catalog.publish_many(written.clone())
    })();
    match result {
        Ok(_) => Ok(written.len()),
        Err(e) => {
            for (meta, _) in &written {
                let _ = std::fs::remove_file(meta.path(root));
                let _ = std::fs::remove_file(meta.bloom_path(root));
            }
            Err(e)
        }
    }
}
