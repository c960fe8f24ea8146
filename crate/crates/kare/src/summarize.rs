//! General and theme summaries for detected communities.

use std::collections::BTreeMap;

use kare_core::community::Community;
use kare_core::ehr::TaskSpec;
use kare_core::kg::Triple;
use kare_core::summary::{community_seed, plan_summary, run_plan, SummaryPlan, GENERAL};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::gateway::templates::{SUMMARY_COMBINE, SUMMARY_GENERAL, SUMMARY_THEME};
use crate::gateway::{ChatRequest, Gateway, GatewayError};

/// One `[head, relation, tail]` per line.
pub fn render_triples(triples: &[Triple]) -> String {
    triples.iter().map(|t| format!("[{}, {}, {}]", t.head, t.relation, t.tail)).collect::<Vec<_>>().join("\n")
}

/// Numbered parts separated by blank lines.
pub fn render_summaries(parts: &[String]) -> String {
    parts.iter().enumerate().map(|(i, s)| format!("{}. {}", i + 1, s.trim())).collect::<Vec<_>>().join("\n\n")
}

fn combine(gw: &Gateway, parts: &[String]) -> Result<String, GatewayError> {
    gw.complete(&ChatRequest::new(SUMMARY_COMBINE, [("summaries", render_summaries(parts))]))
}

/// Summaries keyed by `general` and by task name. Empty for communities
/// outside the size policy. Every theme reuses the community's shuffle.
pub fn summarize_community(
    gw: &Gateway,
    community: &Community,
    themes: &[TaskSpec],
    z_s: usize,
    z_c: usize,
    seed: u64,
) -> Result<BTreeMap<String, String>, GatewayError> {
    let plan = plan_summary(&community.triples, z_s, z_c, community_seed(seed, &community.id));
    let mut out = BTreeMap::new();
    if matches!(plan, SummaryPlan::Skip) {
        return Ok(out);
    }
    let general = run_plan(
        &plan,
        |t| gw.complete(&ChatRequest::new(SUMMARY_GENERAL, [("triples", render_triples(t))])),
        |p| combine(gw, p),
    )?;
    out.extend(general.map(|s| (GENERAL.to_string(), s)));
    for theme in themes {
        let terms = theme.theme_terms.join(", ");
        let summary = run_plan(
            &plan,
            |t| {
                gw.complete(&ChatRequest::new(
                    SUMMARY_THEME,
                    [
                        ("theme", theme.task_id.as_str().to_string()),
                        ("theme_terms", terms.clone()),
                        ("triples", render_triples(t)),
                    ],
                ))
            },
            |p| combine(gw, p),
        )?;
        out.extend(summary.map(|s| (theme.task_id.as_str().to_string(), s)));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SummaryFailure {
    pub community_id: String,
    pub message: String,
}

/// Summarises every community in parallel. A community whose backend calls
/// fail is left unsummarised and reported.
pub fn summarize_all(
    gw: &Gateway,
    communities: &mut [Community],
    themes: &[TaskSpec],
    z_s: usize,
    z_c: usize,
    seed: u64,
) -> Vec<SummaryFailure> {
    communities
        .par_iter_mut()
        .filter_map(|c| match summarize_community(gw, c, themes, z_s, z_c, seed) {
            Ok(s) => {
                c.summaries = s;
                None
            }
            Err(e) => {
                log::warn!("community {} left unsummarized: {e}", c.id);
                c.summaries.clear();
                Some(SummaryFailure { community_id: c.id.clone(), message: e.to_string() })
            }
        })
        .collect()
}
