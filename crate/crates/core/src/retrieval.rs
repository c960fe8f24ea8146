//! Patient graphs, base contexts, community relevance and the greedy
//! dynamic retrieval loop.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::ClusterMapping;
use crate::community::Community;
use crate::ehr::{PatientRecord, TaskId, TaskSpec, Vocabulary};
use crate::index::CommunityIndex;
use crate::kg::Triple;
use crate::vector::cosine;

pub const SUPPLEMENT_HEADER: &str = "# Supplementary Knowledge";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RelevanceError {
    #[error("parameter {name} = {value} is outside {range}")]
    OutOfRange { name: &'static str, value: f64, range: &'static str },
}

/// Denominator of the node-hit fractions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HitNormalization {
    /// |V_C ∩ set| / |V_C|
    #[default]
    CommunitySize,
    /// |V_C ∩ set| / |set|
    PatientNodes,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecayMode {
    #[default]
    Mean,
    Product,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RelevanceParams {
    pub alpha: f64,
    pub beta: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    /// Number of summaries to select.
    pub n: usize,
    pub hit_normalization: HitNormalization,
    pub decay_mode: DecayMode,
    pub recency_normalize: bool,
}

impl Default for RelevanceParams {
    fn default() -> Self {
        RelevanceParams {
            alpha: 0.1,
            beta: 0.7,
            lambda1: 0.2,
            lambda2: 0.2,
            lambda3: 0.3,
            n: 10,
            hit_normalization: HitNormalization::CommunitySize,
            decay_mode: DecayMode::Mean,
            recency_normalize: true,
        }
    }
}

impl RelevanceParams {
    pub fn validate(&self) -> Result<(), RelevanceError> {
        let check = |name, value: f64, ok: bool, range| {
            if ok {
                Ok(())
            } else {
                Err(RelevanceError::OutOfRange { name, value, range })
            }
        };
        check("alpha", self.alpha, (0.0..1.0).contains(&self.alpha), "[0, 1)")?;
        check("beta", self.beta, self.beta > 0.0 && self.beta <= 1.0, "(0, 1]")?;
        for (name, v) in [("lambda1", self.lambda1), ("lambda2", self.lambda2), ("lambda3", self.lambda3)] {
            check(name, v, (0.0..=1.0).contains(&v), "[0, 1]")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatientGraph {
    pub triples: BTreeSet<Triple>,
    pub direct_nodes: BTreeSet<String>,
    pub indirect_nodes: BTreeSet<String>,
    /// Most recent 0-based visit position per direct node.
    pub latest_visit: BTreeMap<String, usize>,
    pub n_visits: usize,
}

impl PatientGraph {
    pub fn nodes(&self) -> impl Iterator<Item = &String> {
        self.direct_nodes.iter().chain(&self.indirect_nodes)
    }

    pub fn contains(&self, node: &str) -> bool {
        self.direct_nodes.contains(node) || self.indirect_nodes.contains(node)
    }
}

/// Union of the patient's concept graphs mapped through φ. Concept graphs
/// are looked up by [`MedicalCode::key`](crate::ehr::MedicalCode::key); missing entries count as empty.
pub fn build_patient_graph(
    record: &PatientRecord,
    concept_kgs: &BTreeMap<String, BTreeSet<Triple>>,
    mapping: &ClusterMapping,
) -> PatientGraph {
    let mut triples = BTreeSet::new();
    let mut candidates: BTreeMap<String, usize> = BTreeMap::new();
    for (position, visit) in record.visits.iter().enumerate() {
        for code in visit.codes() {
            if let Some(kg) = concept_kgs.get(&code.key()) {
                triples.extend(kg.iter().map(|t| mapping.map_triple_lenient(t)));
            }
            let node = mapping.entity_or_self(&code.display).to_string();
            let slot = candidates.entry(node).or_insert(position);
            *slot = (*slot).max(position);
        }
    }
    let mut nodes: BTreeSet<String> = BTreeSet::new();
    for t in &triples {
        nodes.insert(t.head.clone());
        nodes.insert(t.tail.clone());
    }
    let latest_visit: BTreeMap<String, usize> = candidates.into_iter().filter(|(n, _)| nodes.contains(n)).collect();
    let direct_nodes: BTreeSet<String> = latest_visit.keys().cloned().collect();
    let indirect_nodes = nodes.difference(&direct_nodes).cloned().collect();
    PatientGraph { triples, direct_nodes, indirect_nodes, latest_visit, n_visits: record.visits.len() }
}

pub fn hit_fraction(community_nodes: &BTreeSet<String>, set: &BTreeSet<String>, norm: HitNormalization) -> f64 {
    let hits = if community_nodes.len() <= set.len() {
        community_nodes.iter().filter(|n| set.contains(*n)).count()
    } else {
        set.iter().filter(|n| community_nodes.contains(*n)).count()
    };
    let denominator = match norm {
        HitNormalization::CommunitySize => community_nodes.len(),
        HitNormalization::PatientNodes => set.len(),
    };
    if denominator == 0 {
        0.0
    } else {
        hits as f64 / denominator as f64
    }
}

pub fn decay_factor(
    community_nodes: &BTreeSet<String>,
    direct: &BTreeSet<String>,
    hits: &BTreeMap<String, u32>,
    beta: f64,
    mode: DecayMode,
) -> f64 {
    let factors = community_nodes
        .iter()
        .filter(|n| direct.contains(*n))
        .map(|n| libm::pow(beta, f64::from(hits.get(n).copied().unwrap_or(0))));
    match mode {
        DecayMode::Product => factors.product(),
        DecayMode::Mean => {
            let (sum, count) = factors.fold((0.0, 0usize), |(s, c), f| (s + f, c + 1));
            if count == 0 {
                1.0
            } else {
                sum / count as f64
            }
        }
    }
}

pub fn coherence(summary: &[f32], base: &[f32], lambda1: f64) -> f64 {
    1.0 + lambda1 * cosine(summary, base)
}

pub fn recency(community_nodes: &BTreeSet<String>, pg: &PatientGraph, lambda2: f64, normalize: bool) -> f64 {
    let scale = if normalize { (pg.n_visits.saturating_sub(1)).max(1) as f64 } else { 1.0 };
    let (sum, count) = community_nodes
        .iter()
        .filter_map(|n| pg.latest_visit.get(n))
        .fold((0.0, 0usize), |(s, c), &v| (s + v as f64 / scale, c + 1));
    if count == 0 {
        1.0
    } else {
        1.0 + lambda2 * sum / count as f64
    }
}

/// `1 + λ3 · affinity` where affinity is the mean best theme cosine
/// (see [`CommunityIndex::theme_affinity`]).
pub fn theme_relevance(affinity: f64, lambda3: f64) -> f64 {
    1.0 + lambda3 * affinity
}

/// The five factors of one community's score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreParts {
    pub hits: f64,
    pub decay: f64,
    pub coherence: f64,
    pub recency: f64,
    pub theme: f64,
}

impl ScoreParts {
    pub fn total(&self) -> f64 {
        self.hits * self.decay * self.coherence * self.recency * self.theme
    }
}

/// Patient-level inputs shared by every candidate.
pub struct RetrievalInput<'a> {
    pub graph: &'a PatientGraph,
    pub base_embedding: &'a [f32],
    pub task: TaskId,
    /// Community id → theme affinity for `task`.
    pub theme_affinity: &'a BTreeMap<String, f64>,
}

pub fn score_parts(
    community: &Community,
    summary_embedding: &[f32],
    input: &RetrievalInput<'_>,
    hits: &BTreeMap<String, u32>,
    params: &RelevanceParams,
) -> ScoreParts {
    let pg = input.graph;
    let direct = hit_fraction(&community.nodes, &pg.direct_nodes, params.hit_normalization);
    let indirect = hit_fraction(&community.nodes, &pg.indirect_nodes, params.hit_normalization);
    ScoreParts {
        hits: direct + params.alpha * indirect,
        decay: decay_factor(&community.nodes, &pg.direct_nodes, hits, params.beta, params.decay_mode),
        coherence: coherence(summary_embedding, input.base_embedding, params.lambda1),
        recency: recency(&community.nodes, pg, params.lambda2, params.recency_normalize),
        theme: theme_relevance(input.theme_affinity.get(&community.id).copied().unwrap_or(0.0), params.lambda3),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selected {
    pub community_id: String,
    pub score: f64,
    pub summary: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub selected: Vec<Selected>,
    /// Fewer than `n` communities had a positive score.
    pub exhausted: bool,
}

/// Summary text offered for `task`: the theme summary if present, else the
/// general one.
pub fn summary_for_task(community: &Community, task: TaskId) -> Option<&str> {
    community.summaries.get(task.as_str()).or_else(|| community.summaries.get(crate::summary::GENERAL)).map(String::as_str)
}

/// Greedy selection: each round scores every remaining summarized candidate,
/// takes the maximum (ties → smallest id), then decays its direct nodes.
/// Only strictly positive scores are eligible.
pub fn dgra_select(index: &CommunityIndex, input: &RetrievalInput<'_>, params: &RelevanceParams) -> Selection {
    let pg = input.graph;
    let mut candidates: Vec<(&Community, &[f32], ScoreParts)> = index
        .touching(pg.nodes().map(String::as_str))
        .into_iter()
        .filter_map(|id| index.get(id))
        .filter(|c| c.is_summarized())
        .filter_map(|c| {
            let emb = index.summary_embeddings.get(&c.id)?;
            Some((c, emb.as_slice(), score_parts(c, emb, input, &BTreeMap::new(), params)))
        })
        .collect();
    let mut hits: BTreeMap<String, u32> = BTreeMap::new();
    let mut selected = Vec::new();
    while selected.len() < params.n {
        let mut best: Option<(usize, f64)> = None;
        for (i, (c, _, parts)) in candidates.iter_mut().enumerate() {
            parts.decay = decay_factor(&c.nodes, &pg.direct_nodes, &hits, params.beta, params.decay_mode);
            let score = parts.total();
            // candidates are in ascending id order, so strict > keeps the smallest id on ties
            if score > 0.0 && best.is_none_or(|(_, b)| score > b) {
                best = Some((i, score));
            }
        }
        let Some((i, score)) = best else { break };
        let (c, _, _) = candidates.remove(i);
        for n in c.nodes.iter().filter(|n| pg.direct_nodes.contains(*n)) {
            *hits.entry(n.clone()).or_insert(0) += 1;
        }
        let summary = summary_for_task(c, input.task).unwrap_or_default().to_string();
        selected.push(Selected { community_id: c.id.clone(), score, summary });
    }
    let exhausted = selected.len() < params.n;
    Selection { selected, exhausted }
}

/// Base context followed by the numbered selected summaries.
pub fn augmented_text(base: &str, selected: &[Selected]) -> String {
    if selected.is_empty() {
        return base.to_string();
    }
    let mut out = String::from(base);
    out.push_str("\n\n");
    out.push_str(SUPPLEMENT_HEADER);
    for (i, s) in selected.iter().enumerate() {
        let _ = write!(out, "\n{}. {}", i + 1, s.summary.trim());
    }
    out
}

/// Cosine similarity of multi-hot code vectors.
pub fn ehr_similarity(a: &PatientRecord, b: &PatientRecord) -> f64 {
    let ca = a.concepts();
    let cb = b.concepts();
    if ca.is_empty() || cb.is_empty() {
        return 0.0;
    }
    let shared = ca.intersection(&cb).count() as f64;
    shared / libm::sqrt(ca.len() as f64 * cb.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exhibits {
    pub same_label: Option<String>,
    pub different_label: Option<String>,
}

/// Most similar reference patient with the same label and with a different
/// label; the patient itself and patients without a label are skipped, ties
/// go to the smaller id.
pub fn similar_patients(target: &PatientRecord, label: u8, task: TaskId, reference: &[PatientRecord]) -> Exhibits {
    let mut same: Option<(f64, &str)> = None;
    let mut diff: Option<(f64, &str)> = None;
    for r in reference {
        if r.patient_id == target.patient_id {
            continue;
        }
        let Some(l) = r.label(task) else { continue };
        let s = ehr_similarity(target, r);
        let slot = if l == label { &mut same } else { &mut diff };
        let better = match slot {
            None => true,
            Some((bs, bid)) => s > *bs || (s == *bs && r.patient_id.as_str() < *bid),
        };
        if better {
            *slot = Some((s, &r.patient_id));
        }
    }
    Exhibits { same_label: same.map(|x| x.1.to_string()), different_label: diff.map(|x| x.1.to_string()) }
}

fn render_visits(out: &mut String, record: &PatientRecord) {
    for (i, visit) in record.visits.iter().enumerate() {
        let _ = write!(out, "\nVisit {}:", i + 1);
        for vocab in Vocabulary::ALL {
            let heading = match vocab {
                Vocabulary::Condition => "Conditions",
                Vocabulary::Procedure => "Procedures",
                Vocabulary::Medication => "Medications",
            };
            let codes = visit.codes_of(vocab);
            let _ = write!(out, "\n{heading}:");
            if codes.is_empty() {
                out.push_str("\n- none");
            }
            for (j, c) in codes.iter().enumerate() {
                let _ = write!(out, "\n{}. {}", j + 1, c.display);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BaseContext {
    pub text: String,
    pub exhibits: Exhibits,
    /// A needed exhibit label had no reference patient.
    pub missing_exhibit: bool,
}

/// Renders the base context: task description, the patient's visits, then
/// the two similar-patient exhibits with their labels. `target` is the
/// observation window; exhibits show the reference patients' observation
/// windows when they have one.
pub fn build_base_context(
    target: &PatientRecord,
    label: u8,
    task: &TaskSpec,
    reference: &[PatientRecord],
) -> BaseContext {
    let exhibits = similar_patients(target, label, task.task_id, reference);
    let mut text = String::from("# Task #\n");
    text.push_str(task.description.trim());
    text.push_str("\n\n# Patient EHR Context #\n");
    let _ = write!(text, "Patient ID: {}", target.patient_id);
    render_visits(&mut text, target);
    text.push_str("\n\n# Similar Patients #");
    let find = |id: &Option<String>| id.as_ref().and_then(|id| reference.iter().find(|r| &r.patient_id == id));
    let mut missing = false;
    for (title, exhibit) in [("Similar Patient 1", find(&exhibits.same_label)), ("Similar Patient 2", find(&exhibits.different_label))] {
        match exhibit {
            Some(r) => {
                let shown = r.history().unwrap_or_else(|| r.clone());
                let _ = write!(text, "\n\n## {title} ##");
                render_visits(&mut text, &shown);
                let _ = write!(text, "\nLabel: {}", r.label(task.task_id).unwrap_or_default());
            }
            None => missing = true,
        }
    }
    if missing && exhibits.same_label.is_none() && exhibits.different_label.is_none() {
        text.push_str("\nNone available.");
    }
    BaseContext { text, exhibits, missing_exhibit: missing }
}

/// Short one-line description used in logs.
pub fn describe(pg: &PatientGraph) -> String {
    format!("{} triples, {} direct, {} indirect nodes", pg.triples.len(), pg.direct_nodes.len(), pg.indirect_nodes.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::community::community_id;
    use crate::ehr::MedicalCode;
    use crate::ehr::Visit;
    use crate::index::{build_index, IndexParams};
    use crate::summary::GENERAL;
    use alloc::vec;
    use alloc::vec::Vec;

    fn set(items: &[&str]) -> BTreeSet<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    fn code(c: &str, name: &str) -> MedicalCode {
        MedicalCode::new(Vocabulary::Condition, c, name).unwrap()
    }

    fn record(id: &str, visits: &[&[MedicalCode]]) -> PatientRecord {
        PatientRecord {
            patient_id: id.into(),
            visits: visits
                .iter()
                .enumerate()
                .map(|(i, v)| Visit {
                    index: i,
                    timestamp: i as i64,
                    conditions: v.to_vec(),
                    procedures: vec![],
                    medications: vec![],
                })
                .collect(),
            labels: [(TaskId::Mortality, 0)].into(),
        }
    }

    #[test]
    fn hit_fraction_bounds() {
        assert_eq!(hit_fraction(&set(&["a", "b"]), &set(&["a", "b", "c"]), HitNormalization::CommunitySize), 1.0);
        assert_eq!(hit_fraction(&set(&["a", "b"]), &set(&["x"]), HitNormalization::CommunitySize), 0.0);
        assert_eq!(hit_fraction(&set(&["a", "b"]), &set(&["a", "x", "y", "z"]), HitNormalization::PatientNodes), 0.25);
        assert_eq!(hit_fraction(&set(&["a"]), &set(&[]), HitNormalization::PatientNodes), 0.0);
    }

    #[test]
    fn decay_values() {
        let nodes = set(&["a", "b"]);
        let direct = set(&["a"]);
        assert_eq!(decay_factor(&nodes, &direct, &BTreeMap::new(), 0.7, DecayMode::Mean), 1.0);
        let hits = [("a".to_string(), 1)].into();
        assert!((decay_factor(&nodes, &direct, &hits, 0.7, DecayMode::Mean) - 0.7).abs() < 1e-12);
        assert_eq!(decay_factor(&set(&["q"]), &direct, &hits, 0.7, DecayMode::Product), 1.0);
    }

    #[test]
    fn coherence_values() {
        assert!((coherence(&[1.0, 0.0], &[2.0, 0.0], 0.2) - 1.2).abs() < 1e-12);
        assert_eq!(coherence(&[1.0, 0.0], &[0.0, 1.0], 0.2), 1.0);
        assert_eq!(coherence(&[0.0, 0.0], &[0.0, 1.0], 0.2), 1.0);
    }

    #[test]
    fn recency_values() {
        let mut pg = PatientGraph { n_visits: 3, ..Default::default() };
        pg.latest_visit.insert("a".into(), 2);
        assert!((recency(&set(&["a"]), &pg, 0.2, true) - 1.2).abs() < 1e-12);
        assert_eq!(recency(&set(&["b"]), &pg, 0.2, true), 1.0);
        pg.n_visits = 1;
        pg.latest_visit.insert("a".into(), 0);
        assert_eq!(recency(&set(&["a"]), &pg, 0.2, true), 1.0);
    }

    #[test]
    fn patient_graph_single_concept() {
        let c = code("C1", "fever");
        let t = Triple::new("fever", "causes", "chills").unwrap();
        let kgs = [(c.key(), BTreeSet::from([t.clone()]))].into();
        let r = record("p", &[&[c]]);
        let pg = build_patient_graph(&r, &kgs, &ClusterMapping::default());
        assert_eq!(pg.triples, BTreeSet::from([t]));
        assert_eq!(pg.direct_nodes, set(&["fever"]));
        assert_eq!(pg.indirect_nodes, set(&["chills"]));
        assert_eq!(pg.latest_visit["fever"], 0);
    }

    #[test]
    fn patient_graph_set_union() {
        let (a, b) = (code("C1", "x"), code("C2", "y"));
        let t = Triple::new("x", "r", "y").unwrap();
        let kgs = [(a.key(), BTreeSet::from([t.clone()])), (b.key(), BTreeSet::from([t]))].into();
        let pg = build_patient_graph(&record("p", &[&[a], &[b]]), &kgs, &ClusterMapping::default());
        assert_eq!(pg.triples.len(), 1);
        assert_eq!(pg.latest_visit["y"], 1);
        assert!(pg.indirect_nodes.is_empty());
    }

    fn summarized(nodes: &[&str]) -> Community {
        let nodes = set(nodes);
        let first = nodes.iter().next().unwrap().clone();
        let last = nodes.iter().last().unwrap().clone();
        Community {
            id: community_id(&nodes),
            run: 1,
            level: 0,
            triples: [Triple::new(&first, "r", &last).unwrap()].into(),
            nodes,
            provenance: vec![(1, 0)],
            summaries: [(GENERAL.to_string(), "summary".to_string())].into(),
        }
    }

    fn index(cs: Vec<Community>) -> CommunityIndex {
        let embs = cs.iter().map(|c| (c.id.clone(), vec![1.0f32, 0.0])).collect();
        build_index(cs, embs, BTreeMap::new(), IndexParams { runs: 1, z_s: 20, z_c: 150, max_cluster_size: 5, seeds: vec![] })
            .unwrap()
    }

    #[test]
    fn neutral_score_is_one() {
        let idx = index(vec![summarized(&["a", "b"])]);
        let pg = PatientGraph { direct_nodes: set(&["a", "b"]), n_visits: 1, ..Default::default() };
        let aff = BTreeMap::new();
        let input = RetrievalInput { graph: &pg, base_embedding: &[1.0, 0.0], task: TaskId::Mortality, theme_affinity: &aff };
        let params = RelevanceParams { lambda1: 0.0, lambda2: 0.0, lambda3: 0.0, ..Default::default() };
        let c = &idx.communities[0];
        assert_eq!(score_parts(c, &[1.0, 0.0], &input, &BTreeMap::new(), &params).total(), 1.0);
    }

    #[test]
    fn dgra_exhaustion_and_zero_n() {
        let idx = index(vec![summarized(&["a", "b"]), summarized(&["x", "y"])]);
        let pg = PatientGraph { direct_nodes: set(&["a"]), n_visits: 1, latest_visit: [("a".into(), 0)].into(), ..Default::default() };
        let aff = BTreeMap::new();
        let input = RetrievalInput { graph: &pg, base_embedding: &[1.0, 0.0], task: TaskId::Mortality, theme_affinity: &aff };
        let sel = dgra_select(&idx, &input, &RelevanceParams { n: 3, ..Default::default() });
        assert_eq!(sel.selected.len(), 1);
        assert!(sel.exhausted);
        let none = dgra_select(&idx, &input, &RelevanceParams { n: 0, ..Default::default() });
        assert!(none.selected.is_empty());
        assert_eq!(augmented_text("base", &none.selected), "base");
        assert!(augmented_text("base", &sel.selected).contains("# Supplementary Knowledge\n1. summary"));
    }

    #[test]
    fn exhibits_pick_copy() {
        let c = [code("C1", "a"), code("C2", "b")];
        let p = record("p", &[&c, &c]);
        let mut copy = p.clone();
        copy.patient_id = "q".into();
        let mut other = record("r", &[&[code("C9", "z")], &[code("C1", "a")]]);
        other.labels.insert(TaskId::Mortality, 1);
        let ex = similar_patients(&p, 0, TaskId::Mortality, &[other.clone(), copy, p.clone()]);
        assert_eq!(ex.same_label.as_deref(), Some("q"));
        assert_eq!(ex.different_label.as_deref(), Some("r"));
        let base = build_base_context(&p, 0, &TaskSpec::mortality(), &[]);
        assert!(base.missing_exhibit);
        assert!(base.text.starts_with("# Task #"));
    }
}
