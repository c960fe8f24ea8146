//! Community index construction and its on-disk form: `communities.jsonl`,
//! `inverted.json`, `meta.json` and two embedding matrices.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use kare_core::community::{hierarchical_leiden, Community};
use kare_core::ehr::TaskSpec;
use kare_core::index::{build_index, CommunityIndex, IndexParams};
use kare_core::kg::{KnowledgeGraph, Triple};
use serde::{Deserialize, Serialize};

use crate::config::CommunityConfig;
use crate::embedding::EmbeddingMatrix;
use crate::error::KareError;
use crate::gateway::Gateway;
use crate::io::{jsonl_bytes, read_json, read_jsonl, write_atomic, write_json};
use crate::summarize::{summarize_all, SummaryFailure};
use crate::Result;

pub const SCHEMA_VERSION: u32 = 1;

pub const COMMUNITIES: &str = "communities.jsonl";
pub const INVERTED: &str = "inverted.json";
pub const META: &str = "meta.json";
pub const SUMMARY_EMBEDDINGS: &str = "summary_embeddings.bin";
pub const NODE_EMBEDDINGS: &str = "node_embeddings.bin";

#[derive(Debug, Serialize, Deserialize)]
struct Meta {
    schema_version: u32,
    params: IndexParams,
    communities: usize,
    summarized: usize,
    /// Row order of the summary embedding matrix.
    summary_rows: Vec<String>,
    /// Row order of the node embedding matrix.
    node_rows: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct InvertedFile {
    schema_version: u32,
    inverted: BTreeMap<String, Vec<String>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CommunityLine {
    schema_version: u32,
    #[serde(flatten)]
    community: Community,
}

/// Detects communities, summarises them and embeds summaries and nodes.
pub fn build_community_index(
    gw: &Gateway,
    refined: &KnowledgeGraph,
    cfg: &CommunityConfig,
    themes: &[TaskSpec],
    seed: u64,
) -> Result<(CommunityIndex, Vec<SummaryFailure>)> {
    let params = IndexParams {
        runs: cfg.runs,
        z_s: cfg.z_s,
        z_c: cfg.z_c,
        max_cluster_size: cfg.max_cluster_size,
        seeds: (1..=u64::from(cfg.runs)).map(|m| seed.wrapping_add(m)).collect(),
    };
    let triples: Vec<Triple> = refined.triples.keys().cloned().collect();
    if triples.is_empty() {
        log::warn!("refined graph is empty; writing an empty index");
        return Ok((CommunityIndex::empty(params), Vec::new()));
    }
    let mut communities = hierarchical_leiden(&triples, cfg.runs, seed, cfg.max_cluster_size)?;
    communities.retain(|c| !c.triples.is_empty());
    let failures = summarize_all(gw, &mut communities, themes, cfg.z_s, cfg.z_c, seed);

    let summarized: Vec<&Community> = communities.iter().filter(|c| c.is_summarized()).collect();
    let texts: Vec<String> = summarized.iter().map(|c| c.general_summary().unwrap_or_default().to_string()).collect();
    let summary_embeddings: BTreeMap<String, Vec<f32>> =
        summarized.iter().map(|c| c.id.clone()).zip(gw.embed(&texts)?).collect();
    let nodes: Vec<String> = {
        let all: std::collections::BTreeSet<&String> = communities.iter().flat_map(|c| &c.nodes).collect();
        all.into_iter().cloned().collect()
    };
    let node_embeddings: BTreeMap<String, Vec<f32>> = nodes.iter().cloned().zip(gw.embed(&nodes)?).collect();
    log::info!(
        "{} communities, {} summarized, {} summary failures",
        communities.len(),
        summary_embeddings.len(),
        failures.len()
    );
    Ok((build_index(communities, summary_embeddings, node_embeddings, params)?, failures))
}

fn matrix(path: &Path, rows: Vec<Vec<f32>>) -> Result<EmbeddingMatrix> {
    let dim = rows.first().map_or(0, Vec::len);
    EmbeddingMatrix::new(dim, rows).map_err(|message| KareError::Format { path: path.to_path_buf(), message })
}

pub fn save_index(dir: &Path, index: &CommunityIndex) -> Result<Vec<PathBuf>> {
    let communities = dir.join(COMMUNITIES);
    let lines = index.communities.iter().map(|c| CommunityLine { schema_version: SCHEMA_VERSION, community: c.clone() });
    write_atomic(&communities, &jsonl_bytes(Some("kare community index"), lines))?;

    let inverted = dir.join(INVERTED);
    write_json(&inverted, &InvertedFile { schema_version: SCHEMA_VERSION, inverted: index.inverted.clone() })?;

    let summary_path = dir.join(SUMMARY_EMBEDDINGS);
    matrix(&summary_path, index.summary_embeddings.values().cloned().collect())?.write(&summary_path)?;
    let node_path = dir.join(NODE_EMBEDDINGS);
    matrix(&node_path, index.node_embeddings.values().cloned().collect())?.write(&node_path)?;

    let meta = dir.join(META);
    write_json(
        &meta,
        &Meta {
            schema_version: SCHEMA_VERSION,
            params: index.params.clone(),
            communities: index.communities.len(),
            summarized: index.summarized().count(),
            summary_rows: index.summary_embeddings.keys().cloned().collect(),
            node_rows: index.node_embeddings.keys().cloned().collect(),
        },
    )?;
    Ok(vec![communities, inverted, summary_path, node_path, meta])
}

fn check_version(path: &Path, v: u32) -> Result<()> {
    if v != SCHEMA_VERSION {
        return Err(KareError::Format { path: path.to_path_buf(), message: format!("unsupported schema_version {v}") });
    }
    Ok(())
}

fn rows_to_map(path: &Path, names: Vec<String>, m: EmbeddingMatrix) -> Result<BTreeMap<String, Vec<f32>>> {
    if names.len() != m.rows.len() {
        return Err(KareError::Format {
            path: path.to_path_buf(),
            message: format!("{} rows for {} names in {META}", m.rows.len(), names.len()),
        });
    }
    Ok(names.into_iter().zip(m.rows).collect())
}

/// Reloads an index written by [`save_index`], rebuilding the inverted index
/// and checking it against the stored one.
pub fn load_index(dir: &Path) -> Result<CommunityIndex> {
    let meta_path = dir.join(META);
    let meta: Meta = read_json(&meta_path)?;
    check_version(&meta_path, meta.schema_version)?;
    let communities_path = dir.join(COMMUNITIES);
    let mut communities = Vec::new();
    for (_, line) in read_jsonl::<CommunityLine>(&communities_path)? {
        check_version(&communities_path, line.schema_version)?;
        communities.push(line.community);
    }
    let summary_path = dir.join(SUMMARY_EMBEDDINGS);
    let summary = rows_to_map(&summary_path, meta.summary_rows, EmbeddingMatrix::read(&summary_path)?)?;
    let node_path = dir.join(NODE_EMBEDDINGS);
    let nodes = rows_to_map(&node_path, meta.node_rows, EmbeddingMatrix::read(&node_path)?)?;
    let index = build_index(communities, summary, nodes, meta.params)?;

    let inverted_path = dir.join(INVERTED);
    let stored: InvertedFile = read_json(&inverted_path)?;
    check_version(&inverted_path, stored.schema_version)?;
    if stored.inverted != index.inverted {
        return Err(KareError::Format {
            path: inverted_path,
            message: "inverted index disagrees with community node sets".into(),
        });
    }
    if index.communities.len() != meta.communities {
        return Err(KareError::Format {
            path: meta_path,
            message: format!("meta lists {} communities, found {}", meta.communities, index.communities.len()),
        });
    }
    Ok(index)
}
