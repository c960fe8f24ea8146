//! Embedding-based synonym resolution.
//!
//! Terms are grouped by average-linkage agglomerative clustering on cosine
//! distance. The full dendrogram is built once with the nearest-neighbour
//! chain algorithm (average linkage is reducible, so the result equals the
//! greedy closest-pair procedure) and then cut at any distance threshold.
//! Thresholds are chosen by mean silhouette score, and every cluster is
//! represented by the member closest to the cluster mean.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kg::{KgError, KnowledgeGraph, Triple};
use crate::vector::{cosine_distance, dot, mean, norm};

/// Default cap on the number of terms sampled for threshold search.
pub const DEFAULT_SAMPLE_SIZE: usize = 2000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ClusterError {
    #[error("distance threshold {0} is outside (0, 2)")]
    Threshold(f64),
    #[error("threshold search needs at least 3 vectors, got {0}")]
    SampleTooSmall(usize),
    #[error("no candidate thresholds given")]
    NoCandidates,
    #[error("no candidate threshold yields between 2 and n-1 clusters")]
    NoValidClustering,
    #[error("vectors have inconsistent dimensions ({0} vs {1})")]
    Dimension(usize, usize),
    #[error("vector {0} has non-finite values")]
    NonFinite(usize),
    #[error("term {0:?} has no embedding")]
    MissingVector(String),
}

/// Upper-triangular pairwise distance storage.
#[derive(Debug, Clone)]
pub struct DistanceMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DistanceMatrix {
    pub fn cosine(vectors: &[&[f32]]) -> Result<Self, ClusterError> {
        check_vectors(vectors)?;
        let n = vectors.len();
        let norms: Vec<f64> = vectors.iter().map(|v| norm(v)).collect();
        let mut data = Vec::with_capacity(n * n.saturating_sub(1) / 2);
        for i in 0..n {
            for j in i + 1..n {
                let d = if norms[i] == 0.0 || norms[j] == 0.0 {
                    1.0
                } else {
                    1.0 - dot(vectors[i], vectors[j]) / (norms[i] * norms[j])
                };
                data.push(d);
            }
        }
        Ok(DistanceMatrix { n, data })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    fn offset(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i < j { (i, j) } else { (j, i) };
        i * (2 * self.n - i - 1) / 2 + (j - i - 1)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i == j {
            0.0
        } else {
            self.data[self.offset(i, j)]
        }
    }

    #[inline]
    fn set(&mut self, i: usize, j: usize, d: f64) {
        let o = self.offset(i, j);
        self.data[o] = d;
    }
}

fn check_vectors(vectors: &[&[f32]]) -> Result<(), ClusterError> {
    if let Some(first) = vectors.first() {
        for (i, v) in vectors.iter().enumerate() {
            if v.len() != first.len() {
                return Err(ClusterError::Dimension(first.len(), v.len()));
            }
            if !v.iter().all(|x| x.is_finite()) {
                return Err(ClusterError::NonFinite(i));
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Merge {
    pub a: usize,
    pub b: usize,
    pub height: f64,
}

/// Average-linkage merge history, sorted by height.
#[derive(Debug, Clone)]
pub struct Dendrogram {
    n: usize,
    merges: Vec<Merge>,
}

impl Dendrogram {
    pub fn average_linkage(distances: &DistanceMatrix) -> Self {
        let n = distances.len();
        let mut d = distances.clone();
        let mut size = vec![1usize; n];
        let mut active = vec![true; n];
        let mut chain: Vec<usize> = Vec::new();
        let mut merges = Vec::with_capacity(n.saturating_sub(1));
        let mut remaining = n;
        while remaining > 1 {
            if chain.is_empty() {
                chain.push(active.iter().position(|&x| x).expect("remaining > 1"));
            }
            loop {
                let a = *chain.last().expect("non-empty chain");
                let prev = chain.len().checked_sub(2).map(|i| chain[i]);
                let mut best = prev;
                let mut best_d = prev.map_or(f64::INFINITY, |p| d.get(a, p));
                for x in 0..n {
                    if x != a && active[x] {
                        let dx = d.get(a, x);
                        if dx < best_d {
                            best = Some(x);
                            best_d = dx;
                        }
                    }
                }
                let b = best.expect("another active cluster exists");
                if Some(b) != prev {
                    chain.push(b);
                    continue;
                }
                chain.truncate(chain.len() - 2);
                // cluster b absorbs a
                let (sa, sb) = (size[a] as f64, size[b] as f64);
                for x in 0..n {
                    if active[x] && x != a && x != b {
                        let merged = (sa * d.get(a, x) + sb * d.get(b, x)) / (sa + sb);
                        d.set(b, x, merged);
                    }
                }
                active[a] = false;
                size[b] += size[a];
                merges.push(Merge { a: a.min(b), b: a.max(b), height: best_d });
                remaining -= 1;
                break;
            }
        }
        merges.sort_by(|x, y| x.height.total_cmp(&y.height));
        Dendrogram { n, merges }
    }

    pub fn merges(&self) -> &[Merge] {
        &self.merges
    }

    /// Cluster label per point after applying every merge with height
    /// `<= threshold`. Labels are numbered by smallest member index.
    pub fn cut(&self, threshold: f64) -> Vec<usize> {
        let mut parent: Vec<usize> = (0..self.n).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for m in self.merges.iter().take_while(|m| m.height <= threshold) {
            let (ra, rb) = (find(&mut parent, m.a), find(&mut parent, m.b));
            if ra != rb {
                parent[ra.max(rb)] = ra.min(rb);
            }
        }
        let mut labels = vec![usize::MAX; self.n];
        let mut next = 0;
        let mut by_root: BTreeMap<usize, usize> = BTreeMap::new();
        for (i, label) in labels.iter_mut().enumerate() {
            let r = find(&mut parent, i);
            *label = *by_root.entry(r).or_insert_with(|| {
                next += 1;
                next - 1
            });
        }
        labels
    }
}

/// Groups of point indices (ascending) ordered by their smallest member.
pub fn groups(labels: &[usize]) -> Vec<Vec<usize>> {
    let k = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut out = vec![Vec::new(); k];
    for (i, &l) in labels.iter().enumerate() {
        out[l].push(i);
    }
    out
}

fn check_threshold(threshold: f64) -> Result<(), ClusterError> {
    if threshold > 0.0 && threshold < 2.0 {
        Ok(())
    } else {
        Err(ClusterError::Threshold(threshold))
    }
}

/// Average-linkage clustering on cosine distance, stopped once the closest
/// pair of clusters is farther apart than `threshold`.
pub fn agglomerative_cluster(vectors: &[&[f32]], threshold: f64) -> Result<Vec<Vec<usize>>, ClusterError> {
    check_threshold(threshold)?;
    if vectors.is_empty() {
        return Ok(Vec::new());
    }
    let dm = DistanceMatrix::cosine(vectors)?;
    Ok(groups(&Dendrogram::average_linkage(&dm).cut(threshold)))
}

/// Mean silhouette coefficient; singleton clusters score 0.
pub fn silhouette(distances: &DistanceMatrix, labels: &[usize]) -> f64 {
    let n = labels.len();
    if n == 0 {
        return 0.0;
    }
    let k = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0usize; k];
    for &l in labels {
        sizes[l] += 1;
    }
    let mut total = 0.0;
    let mut sums = vec![0.0f64; k];
    for i in 0..n {
        if sizes[labels[i]] == 1 {
            continue;
        }
        sums.iter_mut().for_each(|s| *s = 0.0);
        for j in 0..n {
            if i != j {
                sums[labels[j]] += distances.get(i, j);
            }
        }
        let own = labels[i];
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..k).filter(|&c| c != own).map(|c| sums[c] / sizes[c] as f64).fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom > 0.0 {
            total += (b - a) / denom;
        }
    }
    total / n as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdChoice {
    pub threshold: f64,
    pub silhouette: f64,
    pub clusters: usize,
}

/// Default candidate grid 0.02, 0.04, …, 0.40.
pub fn default_threshold_grid() -> Vec<f64> {
    (1..=20).map(|i| i as f64 / 50.0).collect()
}

/// Picks the candidate threshold with the highest mean silhouette, skipping
/// cuts with fewer than two clusters or only singletons. Ties go to the
/// smaller threshold.
pub fn silhouette_threshold_search(vectors: &[&[f32]], candidates: &[f64]) -> Result<ThresholdChoice, ClusterError> {
    if vectors.len() < 3 {
        return Err(ClusterError::SampleTooSmall(vectors.len()));
    }
    if candidates.is_empty() {
        return Err(ClusterError::NoCandidates);
    }
    for &c in candidates {
        check_threshold(c)?;
    }
    let dm = DistanceMatrix::cosine(vectors)?;
    let dendrogram = Dendrogram::average_linkage(&dm);
    let mut sorted = candidates.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut best: Option<ThresholdChoice> = None;
    for threshold in sorted {
        let labels = dendrogram.cut(threshold);
        let clusters = labels.iter().copied().max().map_or(0, |m| m + 1);
        if clusters < 2 || clusters == labels.len() {
            continue;
        }
        let score = silhouette(&dm, &labels);
        if best.is_none_or(|b| score > b.silhouette) {
            best = Some(ThresholdChoice { threshold, silhouette: score, clusters });
        }
    }
    best.ok_or(ClusterError::NoValidClustering)
}

/// Seeded uniform sample of at most `max` indices out of `n`, ascending.
pub fn sample_indices(n: usize, max: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    if n <= max {
        return idx;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    idx.truncate(max);
    idx.sort_unstable();
    idx
}

/// φ_e and φ_r: every observed term → its cluster representative.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClusterMapping {
    pub entities: BTreeMap<String, String>,
    pub relations: BTreeMap<String, String>,
    pub theta_e: f64,
    pub theta_r: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub entity_clusters: Vec<Vec<String>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub relation_clusters: Vec<Vec<String>>,
}

impl ClusterMapping {
    /// Identity mapping over the terms of `g`.
    pub fn identity(g: &KnowledgeGraph) -> Self {
        let entities = g.nodes().into_iter().map(|n| (n.to_string(), n.to_string())).collect();
        let relations = g.relations().into_iter().map(|r| (r.to_string(), r.to_string())).collect();
        ClusterMapping { entities, relations, ..ClusterMapping::default() }
    }

    pub fn entity(&self, term: &str) -> Option<&str> {
        self.entities.get(term).map(String::as_str)
    }

    pub fn relation(&self, term: &str) -> Option<&str> {
        self.relations.get(term).map(String::as_str)
    }

    /// φ_e with identity fallback for terms never observed in the graph.
    pub fn entity_or_self<'a>(&'a self, term: &'a str) -> &'a str {
        self.entity(term).unwrap_or(term)
    }

    pub fn relation_or_self<'a>(&'a self, term: &'a str) -> &'a str {
        self.relation(term).unwrap_or(term)
    }

    /// Maps a triple, keeping unknown terms unchanged.
    pub fn map_triple_lenient(&self, t: &Triple) -> Triple {
        Triple {
            head: self.entity_or_self(&t.head).to_string(),
            relation: self.relation_or_self(&t.relation).to_string(),
            tail: self.entity_or_self(&t.tail).to_string(),
        }
    }

    pub fn map_triple(&self, t: &Triple) -> Result<Triple, KgError> {
        let e = |s: &str| self.entity(s).ok_or_else(|| KgError::Unmapped(s.to_string()));
        let r = self.relation(&t.relation).ok_or_else(|| KgError::Unmapped(t.relation.clone()))?;
        Ok(Triple { head: e(&t.head)?.to_string(), relation: r.to_string(), tail: e(&t.tail)?.to_string() })
    }
}

fn cosine_to_mean(v: &[f32], centre: &[f64]) -> f64 {
    let nv = norm(v);
    let nc = libm::sqrt(centre.iter().map(|x| x * x).sum::<f64>());
    if nv == 0.0 || nc == 0.0 {
        return 1.0;
    }
    let d: f64 = v.iter().zip(centre).map(|(&a, &b)| f64::from(a) * b).sum();
    1.0 - d / (nv * nc)
}

/// Member closest (cosine distance) to the arithmetic mean of the cluster;
/// ties go to the lexicographically smallest term.
pub fn representative<'a>(members: &[(&'a str, &[f32])]) -> Option<&'a str> {
    let vectors: Vec<&[f32]> = members.iter().map(|(_, v)| *v).collect();
    let centre = mean(&vectors);
    members
        .iter()
        .map(|(term, v)| (*term, cosine_to_mean(v, &centre)))
        .min_by(|(ta, da), (tb, db)| da.total_cmp(db).then_with(|| ta.cmp(tb)))
        .map(|(t, _)| t)
}

fn roster_mapping(
    clusters: &[Vec<String>],
    vectors: &BTreeMap<String, Vec<f32>>,
) -> Result<BTreeMap<String, String>, ClusterError> {
    let mut map = BTreeMap::new();
    for cluster in clusters {
        let mut members = Vec::with_capacity(cluster.len());
        for term in cluster {
            let v = vectors.get(term).ok_or_else(|| ClusterError::MissingVector(term.clone()))?;
            members.push((term.as_str(), v.as_slice()));
        }
        if let Some(rep) = representative(&members) {
            for term in cluster {
                map.insert(term.clone(), rep.to_string());
            }
        }
    }
    Ok(map)
}

/// Builds φ_e and φ_r from entity and relation clusters.
pub fn build_mappings(
    entity_clusters: Vec<Vec<String>>,
    relation_clusters: Vec<Vec<String>>,
    entity_vectors: &BTreeMap<String, Vec<f32>>,
    relation_vectors: &BTreeMap<String, Vec<f32>>,
    theta_e: f64,
    theta_r: f64,
) -> Result<ClusterMapping, ClusterError> {
    Ok(ClusterMapping {
        entities: roster_mapping(&entity_clusters, entity_vectors)?,
        relations: roster_mapping(&relation_clusters, relation_vectors)?,
        theta_e,
        theta_r,
        entity_clusters,
        relation_clusters,
    })
}

/// Clusters named terms at `threshold` and returns the rosters by name.
pub fn cluster_terms(vectors: &BTreeMap<String, Vec<f32>>, threshold: f64) -> Result<Vec<Vec<String>>, ClusterError> {
    let names: Vec<&String> = vectors.keys().collect();
    let rows: Vec<&[f32]> = vectors.values().map(Vec::as_slice).collect();
    let clusters = agglomerative_cluster(&rows, threshold)?;
    Ok(clusters.into_iter().map(|c| c.into_iter().map(|i| names[i].clone()).collect()).collect())
}

/// Maps every triple through φ and collapses duplicates; membership records
/// are rewritten the same way.
pub fn refine_graph(g: &KnowledgeGraph, mapping: &ClusterMapping) -> Result<KnowledgeGraph, KgError> {
    let mut out = KnowledgeGraph::default();
    let mut cache: BTreeMap<&Triple, Triple> = BTreeMap::new();
    for (t, sources) in &g.triples {
        let mapped = mapping.map_triple(t)?;
        out.triples.entry(mapped.clone()).or_default().extend(sources.iter().copied());
        cache.insert(t, mapped);
    }
    for (concept, members) in &g.membership {
        let mut mapped: BTreeSet<Triple> = BTreeSet::new();
        for t in members {
            match cache.get(t) {
                Some(m) => {
                    mapped.insert(m.clone());
                }
                None => {
                    mapped.insert(mapping.map_triple(t)?);
                }
            }
        }
        out.membership.insert(concept.clone(), mapped);
    }
    Ok(out)
}

/// Cosine distance between two stored term vectors.
pub fn term_distance(a: &[f32], b: &[f32]) -> f64 {
    cosine_distance(a, b)
}
