//! Small integer statistics helpers.

use alloc::vec::Vec;

/// Nearest-rank percentile of unsorted values; `None` when empty.
pub fn percentile(values: &[u64], pct: u32) -> Option<u64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted: Vec<u64> = values.to_vec();
    sorted.sort_unstable();
    Some(percentile_sorted(&sorted, pct))
}

/// Nearest-rank percentile of sorted, non-empty values.
pub fn percentile_sorted(sorted: &[u64], pct: u32) -> u64 {
    let n = sorted.len() as u64;
    let pct = pct.min(100) as u64;
    let rank = ((pct * n).div_ceil(100)).max(1);
    sorted[(rank - 1) as usize]
}
