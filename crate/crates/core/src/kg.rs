//! Triples, per-concept knowledge graphs and the global union graph.

use alloc::collections::{BTreeMap, BTreeSet, VecDeque};
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ehr::MedicalCode;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum KgError {
    #[error("triple {field} is empty")]
    EmptyField { field: &'static str },
    #[error("triple {field} contains a control character: {value:?}")]
    ControlCharacter { field: &'static str, value: String },
    #[error("cannot merge knowledge graphs of {expected} and {found}")]
    ConceptMismatch { expected: String, found: String },
    #[error("no parts to merge")]
    NothingToMerge,
    #[error("term {0:?} has no cluster mapping")]
    Unmapped(String),
}

/// Which extraction pipeline produced a triple.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Source {
    #[serde(rename = "KG")]
    Kg,
    #[serde(rename = "BC")]
    Bc,
    #[serde(rename = "LLM")]
    Llm,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::Kg => "KG",
            Source::Bc => "BC",
            Source::Llm => "LLM",
        }
    }

    pub fn parse(s: &str) -> Option<Source> {
        match s {
            "KG" => Some(Source::Kg),
            "BC" => Some(Source::Bc),
            "LLM" => Some(Source::Llm),
            _ => None,
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A `(head, relation, tail)` fact with trimmed, non-empty names.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Triple {
    pub head: String,
    pub relation: String,
    pub tail: String,
}

fn clean(field: &'static str, value: &str) -> Result<String, KgError> {
    let trimmed = value.trim();
    if trimmed.is_empty() {
        return Err(KgError::EmptyField { field });
    }
    if trimmed.chars().any(char::is_control) {
        return Err(KgError::ControlCharacter { field, value: trimmed.to_string() });
    }
    Ok(trimmed.to_string())
}

impl Triple {
    pub fn new(head: &str, relation: &str, tail: &str) -> Result<Self, KgError> {
        Ok(Triple { head: clean("head", head)?, relation: clean("relation", relation)?, tail: clean("tail", tail)? })
    }

    pub fn with_source(self, source: Source) -> SourcedTriple {
        SourcedTriple { triple: self, source }
    }
}

impl fmt::Display for Triple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.head, self.relation, self.tail)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SourcedTriple {
    pub triple: Triple,
    pub source: Source,
}

/// Knowledge graph of one medical concept. A fact extracted by several
/// pipelines is stored once with every source tag.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConceptKg {
    pub concept: MedicalCode,
    pub triples: BTreeMap<Triple, BTreeSet<Source>>,
}

impl ConceptKg {
    pub fn new(concept: MedicalCode) -> Self {
        ConceptKg { concept, triples: BTreeMap::new() }
    }

    pub fn from_triples(concept: MedicalCode, triples: impl IntoIterator<Item = SourcedTriple>) -> Self {
        let mut kg = ConceptKg::new(concept);
        kg.extend(triples);
        kg
    }

    pub fn insert(&mut self, triple: Triple, source: Source) {
        self.triples.entry(triple).or_default().insert(source);
    }

    pub fn extend(&mut self, triples: impl IntoIterator<Item = SourcedTriple>) {
        for t in triples {
            self.insert(t.triple, t.source);
        }
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn sourced(&self) -> impl Iterator<Item = SourcedTriple> + '_ {
        self.triples
            .iter()
            .flat_map(|(t, sources)| sources.iter().map(move |&s| SourcedTriple { triple: t.clone(), source: s }))
    }
}

/// Set union of the per-source graphs of one concept.
pub fn merge_concept_kgs(parts: &[ConceptKg]) -> Result<ConceptKg, KgError> {
    let first = parts.first().ok_or(KgError::NothingToMerge)?;
    let mut merged = ConceptKg::new(first.concept.clone());
    for part in parts {
        if part.concept != merged.concept {
            return Err(KgError::ConceptMismatch { expected: merged.concept.key(), found: part.concept.key() });
        }
        for (triple, sources) in &part.triples {
            merged.triples.entry(triple.clone()).or_default().extend(sources.iter().copied());
        }
    }
    Ok(merged)
}

/// Global triple set plus the concept → triples membership it was built from.
///
/// Used both for the raw union graph and for the refined graph obtained by
/// mapping every term through the synonym clusters.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeGraph {
    pub triples: BTreeMap<Triple, BTreeSet<Source>>,
    /// Concept key (see [`MedicalCode::key`]) → triples contributed by that concept.
    pub membership: BTreeMap<String, BTreeSet<Triple>>,
}

impl KnowledgeGraph {
    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn nodes(&self) -> BTreeSet<&str> {
        self.triples.keys().flat_map(|t| [t.head.as_str(), t.tail.as_str()]).collect()
    }

    pub fn relations(&self) -> BTreeSet<&str> {
        self.triples.keys().map(|t| t.relation.as_str()).collect()
    }

    pub fn add_concept(&mut self, kg: &ConceptKg) {
        let members = self.membership.entry(kg.concept.key()).or_default();
        for (triple, sources) in &kg.triples {
            members.insert(triple.clone());
            self.triples.entry(triple.clone()).or_default().extend(sources.iter().copied());
        }
    }

    /// Triples of one concept, or an empty set when the concept contributed none.
    pub fn concept_triples(&self, key: &str) -> Option<&BTreeSet<Triple>> {
        self.membership.get(key)
    }
}

/// `G′ = ⋃ G_c` over all concept graphs.
pub fn union_global<'a>(kgs: impl IntoIterator<Item = &'a ConceptKg>) -> KnowledgeGraph {
    let mut g = KnowledgeGraph::default();
    for kg in kgs {
        g.add_concept(kg);
    }
    g
}

/// Triples reachable within `hops` undirected hops of `start`
/// (case-insensitive node match). An edge is kept when one of its endpoints
/// lies at distance `< hops`.
pub fn k_hop_triples(triples: &[Triple], start: &str, hops: usize) -> Vec<Triple> {
    let key = |s: &str| s.to_lowercase();
    let mut adjacency: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for t in triples {
        let (h, tl) = (key(&t.head), key(&t.tail));
        adjacency.entry(h.clone()).or_default().insert(tl.clone());
        adjacency.entry(tl).or_default().insert(h);
    }
    let start = key(start);
    if !adjacency.contains_key(&start) {
        return Vec::new();
    }
    let mut dist: BTreeMap<String, usize> = BTreeMap::new();
    dist.insert(start.clone(), 0);
    let mut queue = VecDeque::from([start]);
    while let Some(u) = queue.pop_front() {
        let d = dist[&u];
        if d + 1 >= hops {
            continue;
        }
        for v in &adjacency[&u] {
            if !dist.contains_key(v) {
                dist.insert(v.clone(), d + 1);
                queue.push_back(v.clone());
            }
        }
    }
    let near = |s: &str| dist.get(&key(s)).is_some_and(|&d| d < hops);
    let mut out: Vec<Triple> = triples.iter().filter(|t| near(&t.head) || near(&t.tail)).cloned().collect();
    out.sort();
    out.dedup();
    out
}

/// Replaces entities that match a concept display name (case-insensitive,
/// trimmed) with the exact display name, then keeps at most `cap` distinct
/// triples in input order.
pub fn normalize_to_concepts(parsed: Vec<Triple>, concepts: &[MedicalCode], cap: usize) -> Vec<Triple> {
    let canonical: BTreeMap<String, &str> =
        concepts.iter().map(|c| (c.display.trim().to_lowercase(), c.display.as_str())).collect();
    let fix = |s: String| -> String {
        match canonical.get(&s.trim().to_lowercase()) {
            Some(d) => (*d).to_string(),
            None => s,
        }
    };
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for t in parsed {
        if out.len() == cap {
            break;
        }
        let t = Triple { head: fix(t.head), relation: t.relation, tail: fix(t.tail) };
        if seen.insert(t.clone()) {
            out.push(t);
        }
    }
    out
}
