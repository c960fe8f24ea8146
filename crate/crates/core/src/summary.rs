//! Community summarisation policy.
//!
//! Communities above `z_c` triples are never summarised. Up to `z_s` triples
//! are summarised in a single call; larger communities are shuffled with a
//! per-community seed, split into chunks of `z_s` and the chunk summaries are
//! combined in batches of at most [`COMBINE_BATCH`] until one remains.

use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::kg::Triple;

pub const GENERAL: &str = "general";
pub const DEFAULT_Z_S: usize = 20;
pub const DEFAULT_Z_C: usize = 150;
pub const COMBINE_BATCH: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SummaryPlan {
    /// Empty or larger than `z_c`.
    Skip,
    Direct(Vec<Triple>),
    Chunked(Vec<Vec<Triple>>),
}

impl SummaryPlan {
    pub fn is_skip(&self) -> bool {
        matches!(self, SummaryPlan::Skip)
    }
}

/// Seed for one community's shuffle, derived from the stage seed and id.
pub fn community_seed(base: u64, community_id: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    h.update(community_id.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

pub fn plan_summary<'a>(triples: impl IntoIterator<Item = &'a Triple>, z_s: usize, z_c: usize, seed: u64) -> SummaryPlan {
    let mut triples: Vec<Triple> = triples.into_iter().cloned().collect();
    let z_s = z_s.max(1);
    if triples.is_empty() || triples.len() > z_c {
        return SummaryPlan::Skip;
    }
    if triples.len() <= z_s {
        return SummaryPlan::Direct(triples);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    triples.shuffle(&mut rng);
    SummaryPlan::Chunked(triples.chunks(z_s).map(<[Triple]>::to_vec).collect())
}

/// Executes a plan with caller-supplied summarise and combine steps.
/// Returns `Ok(None)` for skipped communities.
pub fn run_plan<E>(
    plan: &SummaryPlan,
    mut summarize: impl FnMut(&[Triple]) -> Result<String, E>,
    mut combine: impl FnMut(&[String]) -> Result<String, E>,
) -> Result<Option<String>, E> {
    let mut parts = match plan {
        SummaryPlan::Skip => return Ok(None),
        SummaryPlan::Direct(t) => return summarize(t).map(Some),
        SummaryPlan::Chunked(chunks) => chunks.iter().map(|c| summarize(c)).collect::<Result<Vec<_>, E>>()?,
    };
    while parts.len() > 1 {
        let mut next = Vec::with_capacity(parts.len().div_ceil(COMBINE_BATCH));
        for batch in parts.chunks(COMBINE_BATCH) {
            if batch.len() == 1 {
                next.push(batch[0].clone());
            } else {
                next.push(combine(batch)?);
            }
        }
        parts = next;
    }
    Ok(parts.pop())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::format;

    fn triples(n: usize) -> Vec<Triple> {
        (0..n).map(|i| Triple::new(&format!("h{i}"), "r", &format!("t{i}")).unwrap()).collect()
    }

    fn count_calls(plan: &SummaryPlan) -> (usize, usize) {
        let (mut s, mut c) = (0, 0);
        run_plan::<()>(
            plan,
            |_| {
                s += 1;
                Ok(String::from("s"))
            },
            |_| {
                c += 1;
                Ok(String::from("c"))
            },
        )
        .unwrap();
        (s, c)
    }

    #[test]
    fn forty_five_triples_make_three_chunks_one_combine() {
        let t = triples(45);
        let plan = plan_summary(&t, 20, 150, 1);
        match &plan {
            SummaryPlan::Chunked(c) => assert_eq!(c.iter().map(Vec::len).collect::<Vec<_>>(), [20, 20, 5]),
            other => panic!("unexpected plan {other:?}"),
        }
        assert_eq!(count_calls(&plan), (3, 1));
    }

    #[test]
    fn size_policy() {
        assert!(plan_summary(&triples(151), 20, 150, 1).is_skip());
        assert!(plan_summary(&triples(0), 20, 150, 1).is_skip());
        assert_eq!(count_calls(&plan_summary(&triples(20), 20, 150, 1)), (1, 0));
        assert_eq!(count_calls(&plan_summary(&triples(150), 20, 150, 1)), (8, 1));
        // 12 chunks → batches of 10 and 2 → a final combine of 2
        assert_eq!(count_calls(&plan_summary(&triples(12), 1, 150, 1)), (12, 3));
    }

    #[test]
    fn shuffle_is_seeded() {
        let t = triples(45);
        assert_eq!(plan_summary(&t, 20, 150, 3), plan_summary(&t, 20, 150, 3));
        assert_ne!(community_seed(1, "a"), community_seed(1, "b"));
    }
}
