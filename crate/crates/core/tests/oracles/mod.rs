//! Independent reference implementations and random instance generators
//! shared by the integration tests and the acceptance suite.
//!
//! Each oracle is written from the definitions directly (linear scans,
//! breadth-first search, explicit sums) and deliberately avoids the library
//! code it is compared against.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use kare_core::cluster::ClusterMapping;
use kare_core::community::{community_id, modularity, run_hierarchy, Community, WeightedGraph};
use kare_core::ehr::{MedicalCode, PatientRecord};
use kare_core::index::{build_index, CommunityIndex, IndexParams};
use kare_core::kg::Triple;
use kare_core::paths::ExternalGraph;
use kare_core::retrieval::{PatientGraph, RelevanceParams};
use kare_core::summary::GENERAL;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| f64::from(x) * f64::from(y)).sum()
}

pub fn cos(a: &[f32], b: &[f32]) -> f64 {
    let (na, nb) = (dot(a, a).sqrt(), dot(b, b).sqrt());
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot(a, b) / (na * nb)
    }
}

// ---------------------------------------------------------------- graphs

pub fn adjacency(n: usize, edges: &[(usize, usize)]) -> Vec<BTreeSet<usize>> {
    let mut adj = vec![BTreeSet::new(); n];
    for &(a, b) in edges {
        if a != b {
            adj[a].insert(b);
            adj[b].insert(a);
        }
    }
    adj
}

pub fn bfs(adj: &[BTreeSet<usize>], start: usize) -> Vec<Option<usize>> {
    let mut dist = vec![None; adj.len()];
    dist[start] = Some(0);
    let mut queue = VecDeque::from([start]);
    while let Some(u) = queue.pop_front() {
        let d = dist[u].unwrap();
        for &v in &adj[u] {
            if dist[v].is_none() {
                dist[v] = Some(d + 1);
                queue.push_back(v);
            }
        }
    }
    dist
}

/// Every shortest path from `s` to `t`, enumerated through BFS layers.
pub fn all_shortest_paths(adj: &[BTreeSet<usize>], s: usize, t: usize) -> Vec<Vec<usize>> {
    let from_s = bfs(adj, s);
    let Some(d) = from_s[t] else { return Vec::new() };
    let mut out = Vec::new();
    let mut stack = vec![vec![s]];
    while let Some(path) = stack.pop() {
        let last = *path.last().unwrap();
        if path.len() == d + 1 {
            if last == t {
                out.push(path);
            }
            continue;
        }
        for &v in &adj[last] {
            if from_s[v] == Some(path.len()) {
                let mut p = path.clone();
                p.push(v);
                stack.push(p);
            }
        }
    }
    out.sort();
    out
}

pub fn count_shortest_paths(adj: &[BTreeSet<usize>], s: usize, t: usize) -> u128 {
    let dist = bfs(adj, s);
    let mut order: Vec<usize> = (0..adj.len()).filter(|&v| dist[v].is_some()).collect();
    order.sort_by_key(|&v| dist[v]);
    let mut count = vec![0u128; adj.len()];
    count[s] = 1;
    for &u in &order {
        for &v in &adj[u] {
            if dist[v] == dist[u].map(|d| d + 1) {
                count[v] = count[v].saturating_add(count[u]);
            }
        }
    }
    count[t]
}

pub fn random_edges(rng: &mut ChaCha8Rng, n: usize, m: usize) -> Vec<(usize, usize)> {
    let mut set = BTreeSet::new();
    for _ in 0..m {
        let a = rng.gen_range(0..n);
        let b = rng.gen_range(0..n);
        if a != b {
            set.insert((a.min(b), a.max(b)));
        }
    }
    set.into_iter().collect()
}

/// Newman modularity from the edge list: Σ_c [ w_in(c)/m − (deg(c)/2m)² ].
pub fn modularity_oracle(edges: &[(usize, usize)], labels: &[usize]) -> f64 {
    let m = edges.len() as f64;
    if m == 0.0 {
        return 0.0;
    }
    let mut inside: BTreeMap<usize, f64> = BTreeMap::new();
    let mut degree: BTreeMap<usize, f64> = BTreeMap::new();
    for &(a, b) in edges {
        *degree.entry(labels[a]).or_default() += 1.0;
        *degree.entry(labels[b]).or_default() += 1.0;
        if labels[a] == labels[b] {
            *inside.entry(labels[a]).or_default() += 1.0;
        }
    }
    degree.iter().map(|(c, d)| inside.get(c).copied().unwrap_or(0.0) / m - (d / (2.0 * m)).powi(2)).sum()
}

/// Partition as a set of sets, independent of label numbering.
pub fn as_partition(labels: &[usize]) -> BTreeSet<BTreeSet<usize>> {
    let mut groups: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        groups.entry(l).or_default().insert(i);
    }
    groups.into_values().collect()
}

pub fn groups_to_partition(groups: &[Vec<usize>]) -> BTreeSet<BTreeSet<usize>> {
    groups.iter().map(|g| g.iter().copied().collect()).collect()
}

// ------------------------------------------------------------ clustering

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Three planted clusters of unit vectors on mutually orthogonal centres.
/// Returns the vectors and their planted labels.
pub fn planted_clusters(rng: &mut ChaCha8Rng, dim: usize) -> (Vec<Vec<f32>>, Vec<usize>) {
    let mut centres: Vec<Vec<f64>> = Vec::new();
    while centres.len() < 3 {
        let mut v: Vec<f64> = (0..dim).map(|_| gaussian(rng)).collect();
        for c in &centres {
            let p: f64 = v.iter().zip(c).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(c).for_each(|(x, y)| *x -= p * y);
        }
        centres.push(unit(v));
    }
    let mut vectors = Vec::new();
    let mut labels = Vec::new();
    for (k, c) in centres.iter().enumerate() {
        for _ in 0..rng.gen_range(3..=8) {
            let v: Vec<f64> = c.iter().map(|x| x + 0.04 * gaussian(rng) / (dim as f64).sqrt()).collect();
            vectors.push(unit(v).into_iter().map(|x| x as f32).collect());
            labels.push(k);
        }
    }
    (vectors, labels)
}

/// Naive average linkage: merge the closest pair (mean of original pairwise
/// distances) while that distance is within `threshold`.
pub fn average_linkage_oracle(vectors: &[Vec<f32>], threshold: f64) -> BTreeSet<BTreeSet<usize>> {
    let d = |i: usize, j: usize| 1.0 - cos(&vectors[i], &vectors[j]);
    let mut clusters: Vec<Vec<usize>> = (0..vectors.len()).map(|i| vec![i]).collect();
    loop {
        let mut best: Option<(f64, usize, usize)> = None;
        for a in 0..clusters.len() {
            for b in a + 1..clusters.len() {
                let total: f64 = clusters[a].iter().flat_map(|&i| clusters[b].iter().map(move |&j| (i, j))).map(|(i, j)| d(i, j)).sum();
                let avg = total / (clusters[a].len() * clusters[b].len()) as f64;
                if best.is_none_or(|(bd, _, _)| avg < bd) {
                    best = Some((avg, a, b));
                }
            }
        }
        match best {
            Some((dist, a, b)) if dist <= threshold => {
                let merged = clusters.remove(b);
                clusters[a].extend(merged);
            }
            _ => break,
        }
    }
    clusters.into_iter().map(|c| c.into_iter().collect()).collect()
}

/// `ExternalGraph` over `edges` with nodes named `v000`, `v001`, ...; also
/// returns the oracle adjacency and the graph index of each oracle node.
pub fn external_graph(n: usize, edges: &[(usize, usize)]) -> (ExternalGraph, Vec<BTreeSet<usize>>, Vec<Option<usize>>) {
    let names: Vec<String> = (0..n).map(|i| format!("v{i:03}")).collect();
    let rows: Vec<(&str, &str, &str)> = edges.iter().map(|&(a, b)| (names[a].as_str(), "r", names[b].as_str())).collect();
    let g = ExternalGraph::from_edges(rows);
    let to_graph: Vec<Option<usize>> = names.iter().map(|s| g.node(s)).collect();
    (g, adjacency(n, edges), to_graph)
}

// ------------------------------------------------------------ communities

/// Checks every level of every run: levels partition the nodes, each group
/// nests in exactly one parent, library modularity agrees with the oracle and
/// the top level is no worse than either trivial partition.
pub fn check_hierarchy(n: usize, edges: &[(usize, usize)], runs: u32, seed: u64, mcs: usize) -> Result<(), String> {
    let weighted: Vec<(usize, usize, f64)> = edges.iter().map(|&(a, b)| (a, b, 1.0)).collect();
    let g = WeightedGraph::from_edges(n, &weighted);
    for run in 1..=runs {
        let h = run_hierarchy(&g, run, seed, mcs);
        if h.levels.is_empty() {
            return Err(format!("run {run}: no levels"));
        }
        for (depth, level) in h.levels.iter().enumerate() {
            let mut seen = vec![0u32; n];
            for v in level.iter().flatten() {
                seen[*v] += 1;
            }
            if level.iter().any(Vec::is_empty) || seen.iter().any(|&c| c != 1) {
                return Err(format!("run {run} level {depth}: not a partition"));
            }
        }
        for (depth, pair) in h.levels.windows(2).enumerate() {
            for child in &pair[1] {
                let parents = pair[0].iter().filter(|p| child.iter().all(|v| p.contains(v))).count();
                if parents != 1 {
                    return Err(format!("run {run} level {}: group has {parents} parents", depth + 1));
                }
            }
        }
        let mut top = vec![usize::MAX; n];
        for (k, group) in h.levels[0].iter().enumerate() {
            for &v in group {
                top[v] = k;
            }
        }
        let q = modularity_oracle(edges, &top);
        if (q - modularity(&g, &top)).abs() > 1e-9 {
            return Err(format!("run {run}: modularity {} vs oracle {q}", modularity(&g, &top)));
        }
        let singletons = modularity_oracle(edges, &(0..n).collect::<Vec<_>>());
        let whole = modularity_oracle(edges, &vec![0; n]);
        if q + 1e-12 < singletons || q + 1e-12 < whole {
            return Err(format!("run {run}: modularity {q} below trivial ({singletons}, {whole})"));
        }
    }
    Ok(())
}

// ------------------------------------------------------------- retrieval

/// One randomized greedy-selection problem.
pub struct DgraInstance {
    pub index: CommunityIndex,
    pub graph: PatientGraph,
    pub base: Vec<f32>,
    pub affinity: BTreeMap<String, f64>,
}

fn random_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f32> {
    (0..dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect()
}

/// Up to 50 communities over up to 100 nodes. Embeddings and affinities are
/// drawn from small pools so exact score ties occur.
pub fn random_dgra_instance(rng: &mut ChaCha8Rng) -> DgraInstance {
    let n_nodes = rng.gen_range(5..=100);
    let names: Vec<String> = (0..n_nodes).map(|i| format!("n{i:03}")).collect();
    let pool: Vec<Vec<f32>> = (0..rng.gen_range(1..=6)).map(|_| random_vector(rng, 8)).collect();
    let mut communities: BTreeMap<String, Community> = BTreeMap::new();
    let mut summary_embeddings = BTreeMap::new();
    for _ in 0..rng.gen_range(1..=50) {
        let size = rng.gen_range(2..=8.min(n_nodes));
        let nodes: BTreeSet<String> = names.choose_multiple(rng, size).cloned().collect();
        let id = community_id(&nodes);
        if communities.contains_key(&id) {
            continue;
        }
        let ordered: Vec<&String> = nodes.iter().collect();
        let triples = ordered.windows(2).map(|w| Triple::new(w[0], "r", w[1]).unwrap()).collect();
        let mut summaries = BTreeMap::new();
        if rng.gen_bool(0.8) {
            summaries.insert(GENERAL.to_string(), format!("summary of {id}"));
            if rng.gen_bool(0.5) {
                summaries.insert("mortality".to_string(), format!("mortality summary of {id}"));
            }
            summary_embeddings.insert(id.clone(), pool.choose(rng).unwrap().clone());
        }
        communities.insert(
            id.clone(),
            Community { id, run: 1, level: 0, nodes, triples, provenance: vec![(1, 0)], summaries },
        );
    }
    let params = IndexParams { runs: 1, z_s: 20, z_c: 150, max_cluster_size: 5, seeds: vec![1] };
    let index = build_index(communities.into_values().collect(), summary_embeddings, BTreeMap::new(), params).unwrap();

    let n_visits = rng.gen_range(1..=5);
    let mut graph = PatientGraph { n_visits, ..PatientGraph::default() };
    for name in &names {
        let roll: f64 = rng.gen();
        if roll < 0.3 {
            graph.direct_nodes.insert(name.clone());
            graph.latest_visit.insert(name.clone(), rng.gen_range(0..n_visits));
        } else if roll < 0.5 {
            graph.indirect_nodes.insert(name.clone());
        }
    }
    let base = if rng.gen_bool(0.5) { pool.choose(rng).unwrap().clone() } else { random_vector(rng, 8) };
    let levels = [0.0, 0.25, 0.5];
    let affinity = index
        .summarized()
        .map(|c| (c.id.clone(), if rng.gen_bool(0.5) { *levels.choose(rng).unwrap() } else { rng.gen() }))
        .collect();
    DgraInstance { index, graph, base, affinity }
}

/// Straight-line evaluation of one community's relevance for the given hit
/// counts.
pub fn score_oracle(
    c: &Community,
    summary_embedding: &[f32],
    inst: &DgraInstance,
    hits: &BTreeMap<String, u32>,
    p: &RelevanceParams,
) -> f64 {
    let size = c.nodes.len() as f64;
    let direct: Vec<&String> = c.nodes.iter().filter(|n| inst.graph.direct_nodes.contains(*n)).collect();
    let indirect = c.nodes.iter().filter(|n| inst.graph.indirect_nodes.contains(*n)).count();
    let h = direct.len() as f64 / size + p.alpha * (indirect as f64 / size);
    let decay = if direct.is_empty() {
        1.0
    } else {
        direct.iter().map(|n| p.beta.powi(hits.get(*n).copied().unwrap_or(0) as i32)).sum::<f64>() / direct.len() as f64
    };
    let coherence = 1.0 + p.lambda1 * cos(summary_embedding, &inst.base);
    let last = (inst.graph.n_visits.max(2) - 1) as f64;
    let recency = if direct.is_empty() {
        1.0
    } else {
        1.0 + p.lambda2 * direct.iter().map(|n| inst.graph.latest_visit[*n] as f64 / last).sum::<f64>() / direct.len() as f64
    };
    let theme = 1.0 + p.lambda3 * inst.affinity.get(&c.id).copied().unwrap_or(0.0);
    h * decay * coherence * recency * theme
}

/// Brute force: every round rescans all summarized communities, picks the
/// highest positive score (smallest id on ties) and bumps hit counts.
pub fn greedy_oracle(inst: &DgraInstance, p: &RelevanceParams) -> Vec<String> {
    let mut remaining: Vec<&Community> = inst.index.communities.iter().filter(|c| c.summaries.contains_key(GENERAL)).collect();
    remaining.sort_by(|a, b| a.id.cmp(&b.id));
    let mut hits: BTreeMap<String, u32> = BTreeMap::new();
    let mut out = Vec::new();
    while out.len() < p.n {
        let mut best: Option<(usize, f64)> = None;
        for (i, c) in remaining.iter().enumerate() {
            let s = score_oracle(c, &inst.index.summary_embeddings[&c.id], inst, &hits, p);
            if s > 0.0 && best.is_none_or(|(_, b)| s > b) {
                best = Some((i, s));
            }
        }
        let Some((i, _)) = best else { break };
        let c = remaining.remove(i);
        for n in c.nodes.iter().filter(|n| inst.graph.direct_nodes.contains(*n)) {
            *hits.entry(n.clone()).or_default() += 1;
        }
        out.push(c.id.clone());
    }
    out
}

// ---------------------------------------------------------- patient graph

/// Random concept graphs over a term pool that includes the concept
/// displays, plus a random many-to-one mapping of every term.
pub fn random_concept_world(
    rng: &mut ChaCha8Rng,
    concepts: &[MedicalCode],
) -> (BTreeMap<String, BTreeSet<Triple>>, ClusterMapping) {
    let mut terms: Vec<String> = concepts.iter().map(|c| c.display.clone()).collect();
    terms.extend((0..30).map(|i| format!("term {i}")));
    let relations = ["causes", "treats", "associated with", "raises risk of"];
    let mut kgs = BTreeMap::new();
    let mut used_terms = BTreeSet::new();
    let mut used_relations = BTreeSet::new();
    for c in concepts {
        if rng.gen_bool(0.15) {
            continue;
        }
        let mut set = BTreeSet::new();
        for _ in 0..rng.gen_range(0..6) {
            let head = if rng.gen_bool(0.5) { c.display.clone() } else { terms.choose(rng).unwrap().clone() };
            let tail = terms.choose(rng).unwrap().clone();
            let relation = relations.choose(rng).unwrap().to_string();
            if let Ok(t) = Triple::new(&head, &relation, &tail) {
                used_terms.insert(head);
                used_terms.insert(tail);
                used_relations.insert(relation);
                set.insert(t);
            }
        }
        kgs.insert(c.key(), set);
    }
    let reps: Vec<String> = used_terms.iter().cloned().collect();
    let mut mapping = ClusterMapping::default();
    for t in &used_terms {
        let rep = if rng.gen_bool(0.3) { reps.choose(rng).unwrap().clone() } else { t.clone() };
        mapping.entities.insert(t.clone(), rep);
    }
    for r in &used_relations {
        let rep = if rng.gen_bool(0.3) { "related to".to_string() } else { r.clone() };
        mapping.relations.insert(r.clone(), rep);
    }
    (kgs, mapping)
}

pub struct PatientGraphOracle {
    pub triples: BTreeSet<Triple>,
    pub direct: BTreeSet<String>,
    pub indirect: BTreeSet<String>,
    pub latest: BTreeMap<String, usize>,
}

/// Union of mapped concept triples; direct nodes are the mapped concept
/// names that occur in the union, everything else is indirect.
pub fn patient_graph_oracle(
    record: &PatientRecord,
    kgs: &BTreeMap<String, BTreeSet<Triple>>,
    mapping: &ClusterMapping,
) -> PatientGraphOracle {
    let map_e = |s: &str| mapping.entities.get(s).cloned().unwrap_or_else(|| s.to_string());
    let map_r = |s: &str| mapping.relations.get(s).cloned().unwrap_or_else(|| s.to_string());
    let mut triples = BTreeSet::new();
    for v in &record.visits {
        for c in v.conditions.iter().chain(&v.procedures).chain(&v.medications) {
            for t in kgs.get(&c.key()).into_iter().flatten() {
                triples.insert(Triple { head: map_e(&t.head), relation: map_r(&t.relation), tail: map_e(&t.tail) });
            }
        }
    }
    let nodes: BTreeSet<String> = triples.iter().flat_map(|t| [t.head.clone(), t.tail.clone()]).collect();
    let mut latest = BTreeMap::new();
    for (i, v) in record.visits.iter().enumerate() {
        for c in v.conditions.iter().chain(&v.procedures).chain(&v.medications) {
            let name = map_e(&c.display);
            if nodes.contains(&name) {
                latest.insert(name, i);
            }
        }
    }
    let direct: BTreeSet<String> = latest.keys().cloned().collect();
    let indirect = nodes.difference(&direct).cloned().collect();
    PatientGraphOracle { triples, direct, indirect, latest }
}

// ---------------------------------------------------------------- metrics

/// (tp, tn, fp, fn) by a direct pass over the label map.
pub fn recount(predictions: &BTreeMap<String, u8>, labels: &BTreeMap<String, u8>) -> (u64, u64, u64, u64) {
    let (mut tp, mut tn, mut fp, mut fn_) = (0, 0, 0, 0);
    for (id, &y) in labels {
        match (predictions[id] == 1, y == 1) {
            (true, true) => tp += 1,
            (false, false) => tn += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
        }
    }
    (tp, tn, fp, fn_)
}

pub fn random_prediction_maps(rng: &mut ChaCha8Rng, max: usize) -> (BTreeMap<String, u8>, BTreeMap<String, u8>) {
    let n = rng.gen_range(0..=max);
    let positive_rate: f64 = rng.gen();
    let accuracy: f64 = rng.gen();
    let mut predictions = BTreeMap::new();
    let mut labels = BTreeMap::new();
    for i in 0..n {
        let y = u8::from(rng.gen_bool(positive_rate));
        let p = if rng.gen_bool(accuracy) { y } else { 1 - y };
        labels.insert(format!("P{i:05}"), y);
        predictions.insert(format!("P{i:05}"), p);
    }
    (predictions, labels)
}
