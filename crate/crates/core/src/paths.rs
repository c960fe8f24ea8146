//! External biomedical graph and bidirectional shortest-path search.
//!
//! Edges are traversed without direction; each stored edge keeps the
//! orientation and relation label it was loaded with, so triples emitted from
//! a path read the same way as in the source graph.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::ehr::MedicalCode;
use crate::kg::{ConceptKg, Source, Triple};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PathError {
    #[error("node {0:?} is not in the graph")]
    UnknownNode(String),
    #[error("start and end node are the same ({0:?})")]
    SameEndpoints(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PathParams {
    pub max_length: usize,
    pub max_paths: usize,
    pub max_nodes: usize,
}

impl Default for PathParams {
    fn default() -> Self {
        PathParams { max_length: 7, max_paths: 40, max_nodes: 12_000 }
    }
}

#[derive(Debug, Clone)]
struct Edge {
    from: usize,
    relation: String,
    to: usize,
}

/// Undirected-traversable multigraph over named entities.
#[derive(Debug, Clone, Default)]
pub struct ExternalGraph {
    names: Vec<String>,
    by_name: BTreeMap<String, usize>,
    by_folded_name: BTreeMap<String, usize>,
    edges: Vec<Edge>,
    /// node → sorted distinct neighbours
    neighbours: Vec<Vec<usize>>,
    /// unordered node pair → edge ids
    pair_edges: BTreeMap<(usize, usize), Vec<usize>>,
}

impl ExternalGraph {
    /// Builds the graph from `(head, relation, tail)` rows. Self-loops and
    /// exact duplicate rows are dropped.
    pub fn from_edges<'a>(rows: impl IntoIterator<Item = (&'a str, &'a str, &'a str)>) -> Self {
        let mut g = ExternalGraph::default();
        let mut seen: BTreeSet<(usize, String, usize)> = BTreeSet::new();
        for (head, relation, tail) in rows {
            let (head, relation, tail) = (head.trim(), relation.trim(), tail.trim());
            if head.is_empty() || tail.is_empty() || relation.is_empty() || head == tail {
                continue;
            }
            let from = g.intern(head);
            let to = g.intern(tail);
            if !seen.insert((from, relation.to_string(), to)) {
                continue;
            }
            let id = g.edges.len();
            g.edges.push(Edge { from, relation: relation.to_string(), to });
            g.pair_edges.entry((from.min(to), from.max(to))).or_default().push(id);
        }
        g.neighbours = vec![Vec::new(); g.names.len()];
        for &(a, b) in g.pair_edges.keys() {
            g.neighbours[a].push(b);
            g.neighbours[b].push(a);
        }
        for list in &mut g.neighbours {
            list.sort_unstable();
        }
        g
    }

    fn intern(&mut self, name: &str) -> usize {
        if let Some(&i) = self.by_name.get(name) {
            return i;
        }
        let i = self.names.len();
        self.names.push(name.to_string());
        self.by_name.insert(name.to_string(), i);
        self.by_folded_name.entry(name.to_lowercase()).or_insert(i);
        i
    }

    pub fn node_count(&self) -> usize {
        self.names.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn name(&self, node: usize) -> &str {
        &self.names[node]
    }

    pub fn node(&self, name: &str) -> Option<usize> {
        self.by_name.get(name).copied()
    }

    /// Exact match first, then case-insensitive match.
    pub fn resolve(&self, name: &str) -> Option<usize> {
        let name = name.trim();
        self.node(name).or_else(|| self.by_folded_name.get(&name.to_lowercase()).copied())
    }

    pub fn neighbours(&self, node: usize) -> &[usize] {
        &self.neighbours[node]
    }

    /// All stored edges between two nodes, in their original orientation.
    pub fn triples_between(&self, a: usize, b: usize) -> impl Iterator<Item = (usize, &str, usize)> + '_ {
        self.pair_edges
            .get(&(a.min(b), a.max(b)))
            .into_iter()
            .flatten()
            .map(move |&id| {
                let e = &self.edges[id];
                (e.from, e.relation.as_str(), e.to)
            })
    }

    pub fn edges(&self) -> impl Iterator<Item = (&str, &str, &str)> + '_ {
        self.edges.iter().map(move |e| (self.names[e.from].as_str(), e.relation.as_str(), self.names[e.to].as_str()))
    }
}

/// Layered breadth-first search state for one side of the search.
struct Frontier {
    dist: BTreeMap<usize, usize>,
    layer: Vec<usize>,
    depth: usize,
}

impl Frontier {
    fn new(start: usize) -> Self {
        Frontier { dist: BTreeMap::from([(start, 0)]), layer: vec![start], depth: 0 }
    }

    /// Expands one full layer; returns false when the node budget ran out.
    fn expand(&mut self, g: &ExternalGraph, explored: &mut usize, max_nodes: usize) -> bool {
        let mut next = Vec::new();
        for &u in &self.layer {
            for &v in g.neighbours(u) {
                if self.dist.contains_key(&v) {
                    continue;
                }
                if *explored >= max_nodes {
                    return false;
                }
                *explored += 1;
                self.dist.insert(v, self.depth + 1);
                next.push(v);
            }
        }
        self.layer = next;
        self.depth += 1;
        true
    }
}

/// Every shortest prefix from the frontier root to `node`, following strictly
/// decreasing distance labels. Neighbours are visited in index order.
fn walks_to_root(g: &ExternalGraph, dist: &BTreeMap<usize, usize>, node: usize, limit: usize) -> Vec<Vec<usize>> {
    let d = dist[&node];
    if d == 0 {
        return vec![vec![node]];
    }
    let mut out = Vec::new();
    for &p in g.neighbours(node) {
        if dist.get(&p) == Some(&(d - 1)) {
            for mut w in walks_to_root(g, dist, p, limit - out.len()) {
                w.push(node);
                out.push(w);
                if out.len() == limit {
                    return out;
                }
            }
        }
    }
    out
}

/// Shortest simple paths between `start` and `end`, found by alternating
/// full-layer breadth-first expansion from both ends (smaller frontier first).
///
/// Returns every shortest path up to `max_paths`, in lexicographic order of
/// node indices. An empty result means the ends are disconnected, farther
/// apart than `max_length` edges, or not reached within `max_nodes`
/// discovered nodes.
pub fn bidirectional_shortest_paths(
    g: &ExternalGraph,
    start: usize,
    end: usize,
    params: PathParams,
) -> Result<Vec<Vec<usize>>, PathError> {
    let n = g.node_count();
    for node in [start, end] {
        if node >= n {
            return Err(PathError::UnknownNode(alloc::format!("#{node}")));
        }
    }
    if start == end {
        return Err(PathError::SameEndpoints(g.name(start).to_string()));
    }
    if params.max_paths == 0 {
        return Ok(Vec::new());
    }

    let mut fwd = Frontier::new(start);
    let mut bwd = Frontier::new(end);
    let mut explored = 2usize;
    let distance = loop {
        let meet = fwd.dist.iter().filter_map(|(v, df)| bwd.dist.get(v).map(|db| df + db)).min();
        if let Some(d) = meet {
            break d;
        }
        if fwd.depth + bwd.depth >= params.max_length || fwd.layer.is_empty() || bwd.layer.is_empty() {
            return Ok(Vec::new());
        }
        let side = if fwd.layer.len() <= bwd.layer.len() { &mut fwd } else { &mut bwd };
        if !side.expand(g, &mut explored, params.max_nodes) {
            return Ok(Vec::new());
        }
    };
    if distance > params.max_length {
        return Ok(Vec::new());
    }

    // Split every shortest path at position k = min(fwd.depth, distance):
    // the node there has exact labels on both sides.
    let k = fwd.depth.min(distance);
    let mut paths = Vec::new();
    let middles: Vec<usize> = fwd
        .dist
        .iter()
        .filter(|&(v, &df)| df == k && bwd.dist.get(v) == Some(&(distance - k)))
        .map(|(&v, _)| v)
        .collect();
    for m in middles {
        let heads = walks_to_root(g, &fwd.dist, m, params.max_paths);
        let tails = walks_to_root(g, &bwd.dist, m, params.max_paths);
        for head in &heads {
            for tail in &tails {
                let mut path = head.clone();
                path.extend(tail.iter().rev().skip(1));
                paths.push(path);
            }
        }
    }
    paths.sort();
    paths.dedup();
    paths.truncate(params.max_paths);
    Ok(paths)
}

/// Name-based wrapper around [`bidirectional_shortest_paths`].
pub fn shortest_paths_by_name(
    g: &ExternalGraph,
    start: &str,
    end: &str,
    params: PathParams,
) -> Result<Vec<Vec<String>>, PathError> {
    let s = g.resolve(start).ok_or_else(|| PathError::UnknownNode(start.to_string()))?;
    let t = g.resolve(end).ok_or_else(|| PathError::UnknownNode(end.to_string()))?;
    let paths = bidirectional_shortest_paths(g, s, t, params)?;
    Ok(paths.into_iter().map(|p| p.into_iter().map(|v| g.name(v).to_string()).collect()).collect())
}

/// Outcome of a per-concept subgraph extraction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KgExtraction {
    pub kg: ConceptKg,
    /// Human-readable notes about concepts that could not be linked.
    pub warnings: Vec<String>,
}

/// Union of the edges on all shortest paths from `concept` to each related
/// concept. Concept endpoints are renamed to their exact display names.
pub fn extract_kg_subgraph(
    g: &ExternalGraph,
    concept: &MedicalCode,
    related: &[MedicalCode],
    params: PathParams,
) -> KgExtraction {
    let mut kg = ConceptKg::new(concept.clone());
    let mut warnings = Vec::new();
    let Some(source) = g.resolve(&concept.display) else {
        warnings.push(alloc::format!("concept {} ({}) has no node in the external graph", concept.key(), concept.display));
        return KgExtraction { kg, warnings };
    };
    let mut rename: BTreeMap<usize, &str> = BTreeMap::new();
    rename.insert(source, concept.display.as_str());
    let mut targets = Vec::new();
    for r in related {
        match g.resolve(&r.display) {
            Some(t) if t != source => {
                rename.entry(t).or_insert(r.display.as_str());
                targets.push(t);
            }
            Some(_) => {}
            None => warnings.push(alloc::format!("related concept {} ({}) has no node", r.key(), r.display)),
        }
    }
    let label = |v: usize| -> &str { rename.get(&v).copied().unwrap_or_else(|| g.name(v)) };
    for t in targets {
        let paths = bidirectional_shortest_paths(g, source, t, params).expect("endpoints resolved above");
        for path in paths {
            for pair in path.windows(2) {
                for (from, relation, to) in g.triples_between(pair[0], pair[1]) {
                    if let Ok(triple) = Triple::new(label(from), relation, label(to)) {
                        kg.insert(triple, Source::Kg);
                    }
                }
            }
        }
    }
    KgExtraction { kg, warnings }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ehr::Vocabulary;

    fn graph(rows: &[(&str, &str, &str)]) -> ExternalGraph {
        ExternalGraph::from_edges(rows.iter().copied())
    }

    #[test]
    fn adjacent_pair_gives_single_edge_path() {
        let g = graph(&[("a", "r", "b"), ("b", "r", "c")]);
        let paths = shortest_paths_by_name(&g, "a", "b", PathParams::default()).unwrap();
        assert_eq!(paths, vec![vec!["a".to_string(), "b".to_string()]]);
    }

    #[test]
    fn disconnected_pair_is_empty() {
        let g = graph(&[("a", "r", "b"), ("c", "r", "d")]);
        assert!(shortest_paths_by_name(&g, "a", "d", PathParams::default()).unwrap().is_empty());
    }

    #[test]
    fn endpoint_errors() {
        let g = graph(&[("a", "r", "b")]);
        assert!(matches!(shortest_paths_by_name(&g, "a", "zz", PathParams::default()), Err(PathError::UnknownNode(_))));
        assert!(matches!(shortest_paths_by_name(&g, "a", "A", PathParams::default()), Err(PathError::SameEndpoints(_))));
    }

    #[test]
    fn all_shortest_paths_through_diamond() {
        let g = graph(&[("s", "r", "a"), ("s", "r", "b"), ("a", "r", "t"), ("b", "r", "t"), ("s", "r", "x"), ("x", "r", "y"), ("y", "r", "t")]);
        let paths = shortest_paths_by_name(&g, "s", "t", PathParams::default()).unwrap();
        assert_eq!(paths.len(), 2);
        assert!(paths.iter().all(|p| p.len() == 3));
        let capped = shortest_paths_by_name(&g, "s", "t", PathParams { max_paths: 1, ..PathParams::default() }).unwrap();
        assert_eq!(capped.len(), 1);
    }

    #[test]
    fn max_length_bounds_results() {
        let g = graph(&[("a", "r", "b"), ("b", "r", "c"), ("c", "r", "d"), ("d", "r", "e")]);
        let p = PathParams { max_length: 3, ..PathParams::default() };
        assert!(shortest_paths_by_name(&g, "a", "e", p).unwrap().is_empty());
        assert_eq!(shortest_paths_by_name(&g, "a", "d", p).unwrap()[0].len(), 4);
    }

    #[test]
    fn node_budget_stops_search() {
        let rows: Vec<(String, String, String)> =
            (0..50).map(|i| (alloc::format!("n{i}"), "r".to_string(), alloc::format!("n{}", i + 1))).collect();
        let g = ExternalGraph::from_edges(rows.iter().map(|(a, b, c)| (a.as_str(), b.as_str(), c.as_str())));
        let p = PathParams { max_length: 100, max_paths: 5, max_nodes: 10 };
        assert!(shortest_paths_by_name(&g, "n0", "n50", p).unwrap().is_empty());
    }

    #[test]
    fn self_loops_and_duplicates_dropped() {
        let g = graph(&[("a", "r", "a"), ("a", "r", "b"), ("a", "r", "b"), ("b", "s", "a")]);
        assert_eq!(g.node_count(), 2);
        assert_eq!(g.edge_count(), 2);
    }

    #[test]
    fn subgraph_keeps_relation_orientation_and_multi_edges() {
        let g = graph(&[("Sepsis", "causes", "shock"), ("hypotension", "part_of", "shock"), ("shock", "assoc", "hypotension")]);
        let c = MedicalCode::new(Vocabulary::Condition, "C1", "sepsis").unwrap();
        let r = MedicalCode::new(Vocabulary::Condition, "C2", "hypotension").unwrap();
        let out = extract_kg_subgraph(&g, &c, &[r], PathParams::default());
        let triples: Vec<_> = out.kg.triples.keys().cloned().collect();
        assert_eq!(
            triples,
            vec![
                Triple::new("hypotension", "part_of", "shock").unwrap(),
                Triple::new("sepsis", "causes", "shock").unwrap(),
                Triple::new("shock", "assoc", "hypotension").unwrap(),
            ]
        );
        assert!(out.warnings.is_empty());
    }

    #[test]
    fn unresolvable_concept_degrades_to_empty() {
        let g = graph(&[("a", "r", "b")]);
        let c = MedicalCode::new(Vocabulary::Condition, "C1", "missing").unwrap();
        let out = extract_kg_subgraph(&g, &c, &[], PathParams::default());
        assert!(out.kg.is_empty());
        assert_eq!(out.warnings.len(), 1);
        let c = MedicalCode::new(Vocabulary::Condition, "C1", "a").unwrap();
        assert!(extract_kg_subgraph(&g, &c, &[], PathParams::default()).kg.is_empty());
    }
}
