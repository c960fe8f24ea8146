//! Hierarchical community detection over the refined graph.
//!
//! Each run applies Leiden modularity optimisation (resolution 1) with its
//! own seed. Communities with more nodes than `max_cluster_size` are
//! re-clustered on their induced subgraph to form the next level; all other
//! communities carry over unchanged so that every level is a partition of
//! the node set. Communities found by several runs or levels are merged by
//! node-set content hash.

use alloc::collections::{BTreeMap, BTreeSet, VecDeque};
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::kg::Triple;

pub const DEFAULT_RUNS: u32 = 25;
pub const DEFAULT_MAX_CLUSTER_SIZE: usize = 5;
/// Randomness of the refinement phase.
const REFINE_THETA: f64 = 0.01;
const MAX_OUTER_ITERATIONS: usize = 64;
const MAX_LEVELS: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CommunityError {
    #[error("graph has no nodes")]
    EmptyGraph,
    #[error("number of runs must be at least 1")]
    NoRuns,
    #[error("max_cluster_size must be at least 1")]
    MaxClusterSize,
}

/// Undirected weighted graph; edge weight is the number of triples linking
/// the pair in either direction. Self-loops carry no weight.
#[derive(Debug, Clone, Default)]
pub struct WeightedGraph {
    names: Vec<String>,
    adj: Vec<Vec<(usize, f64)>>,
}

impl WeightedGraph {
    pub fn from_triples<'a>(triples: impl IntoIterator<Item = &'a Triple>) -> Self {
        let mut names: BTreeSet<&str> = BTreeSet::new();
        let mut pairs: BTreeMap<(&str, &str), f64> = BTreeMap::new();
        for t in triples {
            names.insert(&t.head);
            names.insert(&t.tail);
            if t.head != t.tail {
                let key = if t.head < t.tail { (t.head.as_str(), t.tail.as_str()) } else { (t.tail.as_str(), t.head.as_str()) };
                *pairs.entry(key).or_insert(0.0) += 1.0;
            }
        }
        let names: Vec<String> = names.into_iter().map(String::from).collect();
        let index = |s: &str| names.binary_search_by(|n| n.as_str().cmp(s)).expect("node registered");
        let mut adj = vec![Vec::new(); names.len()];
        for ((a, b), w) in pairs {
            let (i, j) = (index(a), index(b));
            adj[i].push((j, w));
            adj[j].push((i, w));
        }
        for row in &mut adj {
            row.sort_by_key(|&(j, _)| j);
        }
        WeightedGraph { names, adj }
    }

    pub fn from_edges(n: usize, edges: &[(usize, usize, f64)]) -> Self {
        let mut merged: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for &(a, b, w) in edges {
            if a != b {
                *merged.entry((a.min(b), a.max(b))).or_insert(0.0) += w;
            }
        }
        let mut adj = vec![Vec::new(); n];
        for ((a, b), w) in merged {
            adj[a].push((b, w));
            adj[b].push((a, w));
        }
        for row in &mut adj {
            row.sort_by_key(|&(j, _)| j);
        }
        WeightedGraph { names: (0..n).map(|i| format!("{i}")).collect(), adj }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn neighbours(&self, v: usize) -> &[(usize, f64)] {
        &self.adj[v]
    }

    pub fn degree(&self, v: usize) -> f64 {
        self.adj[v].iter().map(|&(_, w)| w).sum()
    }

    pub fn total_weight(&self) -> f64 {
        (0..self.len()).map(|v| self.degree(v)).sum::<f64>() / 2.0
    }

    fn induced(&self, members: &[usize]) -> WeightedGraph {
        let local: BTreeMap<usize, usize> = members.iter().enumerate().map(|(i, &v)| (v, i)).collect();
        let mut edges = Vec::new();
        for (i, &v) in members.iter().enumerate() {
            for &(u, w) in &self.adj[v] {
                if let Some(&j) = local.get(&u) {
                    if i < j {
                        edges.push((i, j, w));
                    }
                }
            }
        }
        WeightedGraph::from_edges(members.len(), &edges)
    }
}

/// Newman modularity at resolution 1 of a labelling.
pub fn modularity(g: &WeightedGraph, labels: &[usize]) -> f64 {
    let m = g.total_weight();
    if m == 0.0 {
        return 0.0;
    }
    let mut internal: BTreeMap<usize, f64> = BTreeMap::new();
    let mut degree: BTreeMap<usize, f64> = BTreeMap::new();
    for v in 0..g.len() {
        *degree.entry(labels[v]).or_insert(0.0) += g.degree(v);
        for &(u, w) in g.neighbours(v) {
            if labels[u] == labels[v] && v < u {
                *internal.entry(labels[v]).or_insert(0.0) += w;
            }
        }
    }
    degree.iter().map(|(c, d)| internal.get(c).copied().unwrap_or(0.0) / m - (d / (2.0 * m)) * (d / (2.0 * m))).sum()
}

/// Aggregate graph used between Leiden passes: node self-weights and degrees
/// are carried explicitly.
struct Level {
    adj: Vec<Vec<(usize, f64)>>,
    degree: Vec<f64>,
}

impl Level {
    fn from_graph(g: &WeightedGraph) -> Self {
        let degree = (0..g.len()).map(|v| g.degree(v)).collect();
        Level { adj: g.adj.clone(), degree }
    }

    fn len(&self) -> usize {
        self.adj.len()
    }

    fn aggregate(&self, labels: &[usize], k: usize) -> Level {
        let mut degree = vec![0.0; k];
        let mut merged: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); k];
        for v in 0..self.len() {
            degree[labels[v]] += self.degree[v];
            for &(u, w) in &self.adj[v] {
                let (a, b) = (labels[v], labels[u]);
                if a != b {
                    *merged[a].entry(b).or_insert(0.0) += w;
                }
            }
        }
        Level { adj: merged.into_iter().map(|m| m.into_iter().collect()).collect(), degree }
    }
}

fn relabel(labels: &mut [usize]) -> usize {
    let mut map: BTreeMap<usize, usize> = BTreeMap::new();
    for l in labels.iter_mut() {
        let next = map.len();
        *l = *map.entry(*l).or_insert(next);
    }
    map.len()
}

fn neighbour_weights(level: &Level, v: usize, labels: &[usize]) -> Vec<(usize, f64)> {
    let mut out: Vec<(usize, f64)> = Vec::new();
    for &(u, w) in &level.adj[v] {
        let c = labels[u];
        match out.iter_mut().find(|(x, _)| *x == c) {
            Some(slot) => slot.1 += w,
            None => out.push((c, w)),
        }
    }
    out
}

/// Queue-based local moving. Returns whether any node moved.
fn move_nodes_fast(level: &Level, labels: &mut [usize], two_m: f64, rng: &mut ChaCha8Rng) -> bool {
    let n = level.len();
    let mut tot = vec![0.0; n];
    let mut size = vec![0usize; n];
    for v in 0..n {
        tot[labels[v]] += level.degree[v];
        size[labels[v]] += 1;
    }
    let mut empty: Vec<usize> = (0..n).filter(|&c| size[c] == 0).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut queue: VecDeque<usize> = order.into_iter().collect();
    let mut queued = vec![true; n];
    let mut moved = false;
    while let Some(v) = queue.pop_front() {
        queued[v] = false;
        let current = labels[v];
        let kv = level.degree[v];
        let weights = neighbour_weights(level, v, labels);
        tot[current] -= kv;
        size[current] -= 1;
        let gain = |c: usize, w: f64, tot: &[f64]| w - kv * tot[c] / two_m;
        let w_current = weights.iter().find(|(c, _)| *c == current).map_or(0.0, |x| x.1);
        let mut best = current;
        let mut best_gain = gain(current, w_current, &tot);
        for &(c, w) in &weights {
            let g = gain(c, w, &tot);
            if g > best_gain {
                best = c;
                best_gain = g;
            }
        }
        if best_gain < 0.0 && size[current] > 0 {
            if let Some(&c) = empty.last() {
                best = c;
            }
        }
        if best != current {
            if empty.last() == Some(&best) {
                empty.pop();
            }
            if size[current] == 0 {
                empty.push(current);
            }
            moved = true;
            for &(u, _) in &level.adj[v] {
                if labels[u] != best && !queued[u] {
                    queued[u] = true;
                    queue.push_back(u);
                }
            }
        }
        labels[v] = best;
        tot[best] += kv;
        size[best] += 1;
    }
    moved
}

/// Refinement: merges well-connected singletons inside each community,
/// choosing targets at random with probability ∝ exp(gain / θ).
fn refine(level: &Level, labels: &[usize], two_m: f64, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = level.len();
    let mut refined: Vec<usize> = (0..n).collect();
    let mut tot_refined = level.degree.clone();
    let mut singleton = vec![true; n];
    let mut members: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for v in 0..n {
        members.entry(labels[v]).or_default().push(v);
    }
    // External weight of each refined community towards the rest of its parent.
    let mut ext = vec![0.0; n];
    for v in 0..n {
        ext[v] = level.adj[v].iter().filter(|&&(u, _)| labels[u] == labels[v]).map(|&(_, w)| w).sum();
    }
    for (_, nodes) in members {
        let total: f64 = nodes.iter().map(|&v| level.degree[v]).sum();
        let mut order = nodes.clone();
        order.shuffle(rng);
        for v in order {
            if !singleton[v] {
                continue;
            }
            let kv = level.degree[v];
            if ext[v] < kv * (total - kv) / two_m {
                continue;
            }
            let weights: Vec<(usize, f64)> = neighbour_weights(level, v, &refined)
                .into_iter()
                .filter(|&(c, _)| c != refined[v] && labels[c] == labels[v])
                .collect();
            let mut options: Vec<(usize, f64)> = vec![(refined[v], 0.0)];
            for (c, w) in weights {
                let well_connected = ext[c] >= tot_refined[c] * (total - tot_refined[c]) / two_m;
                let delta = (w - kv * tot_refined[c] / two_m) / (two_m / 2.0);
                if well_connected && delta >= 0.0 {
                    options.push((c, delta));
                }
            }
            let top = options.iter().map(|o| o.1).fold(f64::NEG_INFINITY, f64::max);
            let weights: Vec<f64> = options.iter().map(|o| libm::exp((o.1 - top) / REFINE_THETA)).collect();
            let sum: f64 = weights.iter().sum();
            let mut pick = rng.gen::<f64>() * sum;
            let mut chosen = options[options.len() - 1].0;
            for (o, w) in options.iter().zip(&weights) {
                if pick < *w {
                    chosen = o.0;
                    break;
                }
                pick -= w;
            }
            if chosen == refined[v] {
                continue;
            }
            // v (a singleton with id v) joins `chosen`
            let w_to_chosen: f64 =
                level.adj[v].iter().filter(|&&(u, _)| refined[u] == chosen).map(|&(_, w)| w).sum();
            ext[chosen] = ext[chosen] + ext[v] - 2.0 * w_to_chosen;
            tot_refined[chosen] += kv;
            refined[v] = chosen;
            for &u in &nodes {
                if refined[u] == chosen {
                    singleton[u] = false;
                }
            }
        }
    }
    refined
}

/// One Leiden optimisation; labels numbered by smallest member index.
pub fn leiden(g: &WeightedGraph, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = g.len();
    let mut labels: Vec<usize> = (0..n).collect();
    let two_m = 2.0 * g.total_weight();
    if n == 0 || two_m == 0.0 {
        return labels;
    }
    let mut level = Level::from_graph(g);
    // node of the current aggregate level for every original node
    let mut owner: Vec<usize> = (0..n).collect();
    let mut partition: Vec<usize> = (0..n).collect();
    for _ in 0..MAX_OUTER_ITERATIONS {
        move_nodes_fast(&level, &mut partition, two_m, rng);
        let k = relabel(&mut partition);
        if k == level.len() {
            break;
        }
        let mut refined = refine(&level, &partition, two_m, rng);
        let mut kr = relabel(&mut refined);
        if kr == level.len() {
            refined = partition.clone();
            kr = k;
        }
        let mut parent = vec![0usize; kr];
        for v in 0..level.len() {
            parent[refined[v]] = partition[v];
        }
        level = level.aggregate(&refined, kr);
        for o in owner.iter_mut() {
            *o = refined[*o];
        }
        partition = parent;
    }
    for (v, l) in labels.iter_mut().enumerate() {
        *l = partition[owner[v]];
    }
    relabel(&mut labels);
    labels
}

/// Node-index partitions per level for one run; groups are sorted and
/// ordered by smallest member.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunHierarchy {
    pub run: u32,
    pub levels: Vec<Vec<Vec<usize>>>,
}

fn groups_of(labels: &[usize], members: &[usize]) -> Vec<Vec<usize>> {
    let k = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut out = vec![Vec::new(); k];
    for (i, &l) in labels.iter().enumerate() {
        out[l].push(members[i]);
    }
    out
}

/// Runs hierarchical Leiden once with seed `base_seed + run`.
pub fn run_hierarchy(g: &WeightedGraph, run: u32, base_seed: u64, max_cluster_size: usize) -> RunHierarchy {
    let mut rng = ChaCha8Rng::seed_from_u64(base_seed.wrapping_add(u64::from(run)));
    let all: Vec<usize> = (0..g.len()).collect();
    let mut levels = vec![groups_of(&leiden(g, &mut rng), &all)];
    while levels.len() < MAX_LEVELS {
        let mut next = Vec::new();
        let mut split = false;
        for community in levels.last().expect("level 0 exists") {
            if community.len() > max_cluster_size {
                let sub = g.induced(community);
                let labels = leiden(&sub, &mut rng);
                let parts = groups_of(&labels, community);
                if parts.len() >= 2 {
                    next.extend(parts);
                    split = true;
                    continue;
                }
            }
            next.push(community.clone());
        }
        if !split {
            break;
        }
        next.sort_by_key(|c| c[0]);
        levels.push(next);
    }
    RunHierarchy { run, levels }
}

/// A detected community with its content, provenance and (later) summaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Community {
    pub id: String,
    pub run: u32,
    pub level: u32,
    pub nodes: BTreeSet<String>,
    pub triples: BTreeSet<Triple>,
    #[serde(default)]
    pub provenance: Vec<(u32, u32)>,
    #[serde(default)]
    pub summaries: BTreeMap<String, String>,
}

impl Community {
    pub fn general_summary(&self) -> Option<&str> {
        self.summaries.get(crate::summary::GENERAL).map(String::as_str)
    }

    pub fn is_summarized(&self) -> bool {
        self.general_summary().is_some()
    }
}

/// Stable id from the sorted node set.
pub fn community_id(nodes: &BTreeSet<String>) -> String {
    let mut h = Sha256::new();
    for n in nodes {
        h.update(n.as_bytes());
        h.update([0x1f]);
    }
    let digest = h.finalize();
    let mut id = String::from("c");
    for b in &digest[..8] {
        id.push_str(&format!("{b:02x}"));
    }
    id
}

/// Deduplicates communities from all runs by node set and attaches triples
/// with both endpoints inside. Output is sorted by id.
pub fn assemble_communities<'a>(
    g: &WeightedGraph,
    triples: impl IntoIterator<Item = &'a Triple>,
    runs: &[RunHierarchy],
) -> Vec<Community> {
    let mut by_nodes: BTreeMap<Vec<usize>, Vec<(u32, u32)>> = BTreeMap::new();
    for r in runs {
        for (level, groups) in r.levels.iter().enumerate() {
            for group in groups {
                by_nodes.entry(group.clone()).or_default().push((r.run, level as u32));
            }
        }
    }
    let mut incident: Vec<Vec<&Triple>> = vec![Vec::new(); g.len()];
    for t in triples {
        let head = g.names.binary_search(&t.head);
        let tail = g.names.binary_search(&t.tail);
        if let (Ok(h), Ok(_)) = (head, tail) {
            incident[h].push(t);
        }
    }
    let mut out: Vec<Community> = by_nodes
        .into_iter()
        .map(|(members, mut provenance)| {
            provenance.sort_unstable();
            let nodes: BTreeSet<String> = members.iter().map(|&v| g.names[v].clone()).collect();
            let triples: BTreeSet<Triple> = members
                .iter()
                .flat_map(|&v| incident[v].iter())
                .filter(|t| nodes.contains(&t.tail))
                .map(|&t| t.clone())
                .collect();
            let (run, level) = provenance[0];
            Community { id: community_id(&nodes), run, level, nodes, triples, provenance, summaries: BTreeMap::new() }
        })
        .collect();
    out.sort_by(|a, b| a.id.cmp(&b.id));
    out
}

/// Hierarchical Leiden over `runs` seeds followed by deduplication.
pub fn hierarchical_leiden(
    triples: &[Triple],
    runs: u32,
    base_seed: u64,
    max_cluster_size: usize,
) -> Result<Vec<Community>, CommunityError> {
    if runs == 0 {
        return Err(CommunityError::NoRuns);
    }
    if max_cluster_size == 0 {
        return Err(CommunityError::MaxClusterSize);
    }
    let g = WeightedGraph::from_triples(triples);
    if g.is_empty() {
        return Err(CommunityError::EmptyGraph);
    }
    let hierarchies: Vec<RunHierarchy> =
        (1..=runs).map(|m| run_hierarchy(&g, m, base_seed, max_cluster_size)).collect();
    Ok(assemble_communities(&g, triples, &hierarchies))
}
