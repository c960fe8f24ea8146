//! Synonym resolution over the global graph: embed every entity and
//! relation, choose thresholds, cluster, and rewrite the graph.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use kare_core::cluster::{
    build_mappings, cluster_terms, refine_graph, sample_indices, silhouette_threshold_search, ClusterError,
    ClusterMapping, ThresholdChoice,
};
use kare_core::kg::KnowledgeGraph;
use serde::{Deserialize, Serialize};

use crate::config::ClusterConfig;
use crate::gateway::Gateway;
use crate::io::{write_graph, write_json};
use crate::Result;

/// How a threshold was obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdSource {
    Configured(f64),
    Searched(ThresholdChoice),
    /// Too few terms to search; the smallest candidate is used.
    TooFewTerms(f64),
}

impl ThresholdSource {
    pub fn value(&self) -> f64 {
        match self {
            ThresholdSource::Configured(t) | ThresholdSource::TooFewTerms(t) => *t,
            ThresholdSource::Searched(c) => c.threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterOutcome {
    pub mapping: ClusterMapping,
    pub refined: KnowledgeGraph,
    pub entity_threshold: ThresholdSource,
    pub relation_threshold: ThresholdSource,
}

fn embed_terms(gw: &Gateway, terms: Vec<String>) -> Result<BTreeMap<String, Vec<f32>>> {
    let vectors = gw.embed(&terms)?;
    Ok(terms.into_iter().zip(vectors).collect())
}

fn choose_threshold(
    vectors: &BTreeMap<String, Vec<f32>>,
    fixed: Option<f64>,
    cfg: &ClusterConfig,
    seed: u64,
) -> Result<ThresholdSource, ClusterError> {
    if let Some(t) = fixed {
        return Ok(ThresholdSource::Configured(t));
    }
    let rows: Vec<&[f32]> = vectors.values().map(Vec::as_slice).collect();
    if rows.len() < 3 {
        let smallest = cfg.thresholds.iter().copied().fold(f64::INFINITY, f64::min);
        return Ok(ThresholdSource::TooFewTerms(smallest));
    }
    let sample: Vec<&[f32]> = sample_indices(rows.len(), cfg.sample_size, seed).into_iter().map(|i| rows[i]).collect();
    silhouette_threshold_search(&sample, &cfg.thresholds).map(ThresholdSource::Searched)
}

pub fn cluster_graph(gw: &Gateway, g: &KnowledgeGraph, cfg: &ClusterConfig, seed: u64) -> Result<ClusterOutcome> {
    let entities = embed_terms(gw, g.nodes().into_iter().map(str::to_string).collect())?;
    let relations = embed_terms(gw, g.relations().into_iter().map(str::to_string).collect())?;
    let entity_threshold = choose_threshold(&entities, cfg.theta_e, cfg, seed)?;
    let relation_threshold = choose_threshold(&relations, cfg.theta_r, cfg, seed.wrapping_add(1))?;
    log::info!(
        "clustering {} entities at {:.2} and {} relations at {:.2}",
        entities.len(),
        entity_threshold.value(),
        relations.len(),
        relation_threshold.value()
    );
    let mapping = build_mappings(
        cluster_terms(&entities, entity_threshold.value())?,
        cluster_terms(&relations, relation_threshold.value())?,
        &entities,
        &relations,
        entity_threshold.value(),
        relation_threshold.value(),
    )?;
    let refined = refine_graph(g, &mapping)?;
    Ok(ClusterOutcome { mapping, refined, entity_threshold, relation_threshold })
}

#[derive(Serialize)]
struct SearchReport<'a> {
    entity_threshold: &'a ThresholdSource,
    relation_threshold: &'a ThresholdSource,
    entities_before: usize,
    entities_after: usize,
    relations_before: usize,
    relations_after: usize,
}

/// `mapping.json`, `refined.json` and `search.json`.
pub fn write_cluster_outcome(dir: &Path, before: &KnowledgeGraph, outcome: &ClusterOutcome) -> Result<Vec<PathBuf>> {
    let mapping = dir.join("mapping.json");
    write_json(&mapping, &outcome.mapping)?;
    let refined = dir.join("refined.json");
    write_graph(&refined, &outcome.refined)?;
    let search = dir.join("search.json");
    write_json(
        &search,
        &SearchReport {
            entity_threshold: &outcome.entity_threshold,
            relation_threshold: &outcome.relation_threshold,
            entities_before: before.nodes().len(),
            entities_after: outcome.refined.nodes().len(),
            relations_before: before.relations().len(),
            relations_after: outcome.refined.relations().len(),
        },
    )?;
    Ok(vec![mapping, refined, search])
}
