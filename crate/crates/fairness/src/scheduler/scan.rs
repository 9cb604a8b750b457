use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::TenantId;

pub const DEFAULT_PIECE_ROWS: u64 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScanRequest {
    pub tenant: TenantId,
    pub start_row: u64,
    pub rows: u64,
}

/// A contiguous slice of a scan, scheduled as its own request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScanPiece {
    pub tenant: TenantId,
    pub index: usize,
    pub start_row: u64,
    pub rows: u64,
}

/// Cut a scan into `ceil(rows / piece_rows)` pieces.
pub fn split_scan(req: &ScanRequest, piece_rows: u64) -> Result<Vec<ScanPiece>> {
    if piece_rows == 0 {
        return Err(invalid("piece size must be at least one row"));
    }
    let count = req.rows.div_ceil(piece_rows);
    Ok((0..count)
        .map(|i| {
            let start = i * piece_rows;
            ScanPiece {
                tenant: req.tenant,
                index: i as usize,
                start_row: req.start_row + start,
                rows: piece_rows.min(req.rows - start),
            }
        })
        .collect())
}

/// Reassemble piece results in any arrival order. Every piece from
/// `0..pieces` must be present and successful.
pub fn merge_pieces<R>(
    pieces: usize,
    results: impl IntoIterator<Item = (usize, std::result::Result<Vec<R>, String>)>,
) -> Result<Vec<R>> {
    let mut slots: Vec<Option<Vec<R>>> = (0..pieces).map(|_| None).collect();
    for (index, result) in results {
        let slot = slots.get_mut(index).ok_or_else(|| invalid(format!("piece {index} out of range")))?;
        match result {
            Ok(rows) => *slot = Some(rows),
            Err(e) => return Err(Error::PieceFailed(index, e)),
        }
    }
    let mut merged = Vec::new();
    for (i, slot) in slots.into_iter().enumerate() {
        merged.extend(slot.ok_or(Error::PieceMissing(i))?);
    }
    Ok(merged)
}
