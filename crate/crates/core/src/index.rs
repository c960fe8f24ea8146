//! Queryable community index: communities, an inverted node index, summary
//! embeddings and node embeddings.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::community::Community;
use crate::vector::{cosine, Embedding};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IndexError {
    #[error("summarized community {0} has no summary embedding")]
    MissingEmbedding(String),
    #[error("duplicate community id {0}")]
    DuplicateId(String),
    #[error("community {0} has no nodes")]
    EmptyCommunity(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexParams {
    pub runs: u32,
    pub z_s: usize,
    pub z_c: usize,
    pub max_cluster_size: usize,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CommunityIndex {
    pub params: IndexParams,
    /// Sorted by id.
    pub communities: Vec<Community>,
    /// Node term → ids of communities containing it, ascending.
    pub inverted: BTreeMap<String, Vec<String>>,
    /// General-summary embedding per summarized community.
    pub summary_embeddings: BTreeMap<String, Embedding>,
    pub node_embeddings: BTreeMap<String, Embedding>,
}

/// Communities without triples are dropped; a summarized community must
/// come with its summary embedding.
pub fn build_index(
    mut communities: Vec<Community>,
    summary_embeddings: BTreeMap<String, Embedding>,
    node_embeddings: BTreeMap<String, Embedding>,
    params: IndexParams,
) -> Result<CommunityIndex, IndexError> {
    communities.retain(|c| !c.triples.is_empty());
    communities.sort_by(|a, b| a.id.cmp(&b.id));
    let mut inverted: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for (i, c) in communities.iter().enumerate() {
        if i > 0 && communities[i - 1].id == c.id {
            return Err(IndexError::DuplicateId(c.id.clone()));
        }
        if c.nodes.is_empty() {
            return Err(IndexError::EmptyCommunity(c.id.clone()));
        }
        if c.is_summarized() && !summary_embeddings.contains_key(&c.id) {
            return Err(IndexError::MissingEmbedding(c.id.clone()));
        }
        for n in &c.nodes {
            inverted.entry(n.clone()).or_default().push(c.id.clone());
        }
    }
    let summary_embeddings =
        summary_embeddings.into_iter().filter(|(id, _)| communities.binary_search_by(|c| c.id.cmp(id)).is_ok()).collect();
    Ok(CommunityIndex { params, communities, inverted, summary_embeddings, node_embeddings })
}

impl CommunityIndex {
    pub fn empty(params: IndexParams) -> Self {
        CommunityIndex {
            params,
            communities: Vec::new(),
            inverted: BTreeMap::new(),
            summary_embeddings: BTreeMap::new(),
            node_embeddings: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.communities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.communities.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Community> {
        self.communities.binary_search_by(|c| c.id.as_str().cmp(id)).ok().map(|i| &self.communities[i])
    }

    pub fn lookup(&self, node: &str) -> &[String] {
        self.inverted.get(node).map_or(&[], Vec::as_slice)
    }

    /// Ids of communities sharing at least one node with `nodes`.
    pub fn touching<'a, I: IntoIterator<Item = &'a str>>(&self, nodes: I) -> BTreeSet<&str> {
        nodes.into_iter().flat_map(|n| self.lookup(n).iter().map(String::as_str)).collect()
    }

    /// Communities that may be offered to retrieval.
    pub fn summarized(&self) -> impl Iterator<Item = &Community> {
        self.communities.iter().filter(|c| c.is_summarized())
    }

    /// Mean over community nodes of the best cosine to any theme term;
    /// nodes without an embedding contribute 0.
    pub fn theme_affinity(&self, community: &Community, theme: &[Embedding]) -> f64 {
        if community.nodes.is_empty() || theme.is_empty() {
            return 0.0;
        }
        let total: f64 = community
            .nodes
            .iter()
            .map(|n| match self.node_embeddings.get(n) {
                Some(e) => theme.iter().map(|z| cosine(e, z)).fold(f64::NEG_INFINITY, f64::max),
                None => 0.0,
            })
            .sum();
        total / community.nodes.len() as f64
    }

    /// Theme affinity of every summarized community.
    pub fn theme_affinities(&self, theme: &[Embedding]) -> BTreeMap<String, f64> {
        self.summarized().map(|c| (c.id.clone(), self.theme_affinity(c, theme))).collect()
    }
}
