//! Near-duplicate filtering of visit concept sets.

use alloc::collections::BTreeSet;
use alloc::vec::Vec;

/// Default minimum symmetric-difference size between kept sets.
pub const DEFAULT_SET_THRESHOLD: usize = 5;

pub fn symmetric_difference_len<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> usize {
    a.symmetric_difference(b).count()
}

/// Scans `sets` in order and keeps a set iff its symmetric difference with
/// every previously kept set has at least `threshold` elements.
pub fn filter_concept_sets<T: Ord + Clone>(sets: &[BTreeSet<T>], threshold: usize) -> Vec<BTreeSet<T>> {
    let mut kept: Vec<BTreeSet<T>> = Vec::new();
    for set in sets {
        if kept.iter().all(|k| symmetric_difference_len(k, set) >= threshold) {
            kept.push(set.clone());
        }
    }
    kept
}
