//! Concept-specific graphs from the three sources and their global union.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use kare_core::concept_sets::filter_concept_sets;
use kare_core::cooccur::{collect_cooccurrence, visit_concept_sets};
use kare_core::ehr::{MedicalCode, PatientRecord};
use kare_core::kg::{k_hop_triples, normalize_to_concepts, union_global, ConceptKg, KnowledgeGraph, Source, Triple};
use kare_core::paths::{extract_kg_subgraph, ExternalGraph};
use kare_core::text::{bracket_list, parse_triples};
use kare_core::vector::{top_n_by_cosine, Embedding};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::KgConfig;
use crate::gateway::templates::{KG_FROM_LLM, KG_FROM_TEXT};
use crate::gateway::{ChatRequest, Gateway};
use crate::io::{jsonl_bytes, write_atomic, write_concept_kg, write_graph, Document};
use crate::Result;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Warning {
    pub source: Source,
    pub concept: Option<String>,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KgBuild {
    /// One entry per cohort concept, possibly empty, sorted by concept.
    pub concepts: Vec<ConceptKg>,
    pub global: KnowledgeGraph,
    pub warnings: Vec<Warning>,
}

pub fn cohort_concepts(cohort: &[PatientRecord]) -> BTreeSet<MedicalCode> {
    cohort.iter().flat_map(|r| r.concepts().into_iter().cloned()).collect()
}

/// Shortest-path subgraphs between each concept and its co-occurring concepts.
pub fn kg_source(
    external: &ExternalGraph,
    cohort: &[PatientRecord],
    concepts: &BTreeSet<MedicalCode>,
    cfg: &KgConfig,
) -> (Vec<ConceptKg>, Vec<Warning>) {
    let table = collect_cooccurrence(cohort, cfg.top_x);
    let concepts: Vec<&MedicalCode> = concepts.iter().collect();
    let results: Vec<_> = concepts
        .par_iter()
        .map(|c| {
            let related: Vec<MedicalCode> = table.get(c).iter().map(|(r, _)| r.clone()).collect();
            extract_kg_subgraph(external, c, &related, cfg.path_params())
        })
        .collect();
    let mut warnings = Vec::new();
    let mut kgs = Vec::with_capacity(results.len());
    for (c, r) in concepts.iter().zip(results) {
        warnings.extend(r.warnings.into_iter().map(|message| Warning { source: Source::Kg, concept: Some(c.key()), message }));
        kgs.push(r.kg);
    }
    (kgs, warnings)
}

/// Top `n` documents by cosine similarity to `query`, ties by document id.
pub fn retrieve_documents<'a>(query: &[f32], corpus: &'a [(Document, Embedding)], n: usize) -> Vec<&'a Document> {
    let rows: Vec<(&str, &[f32])> = corpus.iter().map(|(d, e)| (d.id.as_str(), e.as_slice())).collect();
    let by_id: BTreeMap<&str, &Document> = corpus.iter().map(|(d, _)| (d.id.as_str(), d)).collect();
    top_n_by_cosine(query, &rows, n).into_iter().map(|(id, _)| by_id[id]).collect()
}

fn display_list(concepts: &[MedicalCode]) -> String {
    bracket_list(concepts.iter().map(|c| c.display.as_str()))
}

/// Triples the chat model extracts from one document, normalised to the
/// concepts' display names and capped at `cap`.
pub fn extract_triples_from_text(gw: &Gateway, text: &str, concepts: &[MedicalCode], cap: usize) -> Result<Vec<Triple>> {
    let request = ChatRequest::new(KG_FROM_TEXT, [("text", text.to_string()), ("concepts", display_list(concepts))]);
    let response = gw.complete(&request)?;
    let parsed = parse_triples(&response);
    if parsed.is_empty() && response.trim() != "[]" {
        log::warn!("no triples parsed from text extraction response: {response:?}");
    }
    Ok(normalize_to_concepts(parsed, concepts, cap))
}

/// Per-concept subgraphs within `hops` undirected hops of the concept in
/// the triples the chat model proposes for the whole set.
pub fn extract_triples_from_llm(
    gw: &Gateway,
    concepts: &[MedicalCode],
    hops: usize,
) -> Result<BTreeMap<MedicalCode, Vec<Triple>>> {
    let response = gw.complete(&ChatRequest::new(KG_FROM_LLM, [("concepts", display_list(concepts))]))?;
    let parsed = normalize_to_concepts(parse_triples(&response), concepts, usize::MAX);
    if parsed.is_empty() {
        log::warn!("no triples parsed from concept-set response: {response:?}");
    }
    Ok(concepts.iter().map(|c| (c.clone(), k_hop_triples(&parsed, &c.display, hops))).collect())
}

struct SetResult {
    text: Vec<(MedicalCode, Vec<Triple>)>,
    llm: BTreeMap<MedicalCode, Vec<Triple>>,
    warnings: Vec<Warning>,
}

fn process_set(
    gw: &Gateway,
    set: &BTreeSet<MedicalCode>,
    corpus: &[(Document, Embedding)],
    cfg: &KgConfig,
) -> Result<SetResult> {
    let concepts: Vec<MedicalCode> = set.iter().cloned().collect();
    let mut warnings = Vec::new();
    let mut text = Vec::new();
    if !corpus.is_empty() {
        let query = concepts.iter().map(|c| c.display.as_str()).collect::<Vec<_>>().join(", ");
        let q = gw.embed_one(&query)?;
        for doc in retrieve_documents(&q, corpus, cfg.top_documents) {
            let triples = extract_triples_from_text(gw, &doc.text, &concepts, cfg.max_triples_per_text)?;
            if triples.is_empty() {
                warnings.push(Warning { source: Source::Bc, concept: None, message: format!("document {} yielded no triples", doc.id) });
                continue;
            }
            let lower = doc.text.to_lowercase();
            for c in &concepts {
                let mentioned = lower.contains(&c.display.to_lowercase())
                    || triples.iter().any(|t| t.head == c.display || t.tail == c.display);
                if mentioned {
                    text.push((c.clone(), triples.clone()));
                }
            }
        }
    }
    let llm = extract_triples_from_llm(gw, &concepts, cfg.llm_hops)?;
    Ok(SetResult { text, llm, warnings })
}

/// Runs all three extractions and merges them per concept.
pub fn build_concept_kgs(
    gw: &Gateway,
    cohort: &[PatientRecord],
    external: Option<&ExternalGraph>,
    corpus: &[(Document, Embedding)],
    cfg: &KgConfig,
) -> Result<KgBuild> {
    let concepts = cohort_concepts(cohort);
    let mut merged: BTreeMap<MedicalCode, ConceptKg> =
        concepts.iter().map(|c| (c.clone(), ConceptKg::new(c.clone()))).collect();
    let mut warnings = Vec::new();

    if let Some(g) = external {
        let (kgs, w) = kg_source(g, cohort, &concepts, cfg);
        warnings.extend(w);
        for kg in kgs {
            merged.get_mut(&kg.concept).expect("cohort concept").extend(kg.sourced());
        }
    }

    let sets = filter_concept_sets(&visit_concept_sets(cohort), cfg.set_threshold);
    log::info!("{} concepts, {} concept sets after filtering", concepts.len(), sets.len());
    let results: Vec<SetResult> = sets.par_iter().map(|s| process_set(gw, s, corpus, cfg)).collect::<Result<_>>()?;
    for r in results {
        warnings.extend(r.warnings);
        for (c, triples) in r.text {
            let kg = merged.get_mut(&c).expect("cohort concept");
            for t in triples {
                kg.insert(t, Source::Bc);
            }
        }
        for (c, triples) in r.llm {
            let kg = merged.get_mut(&c).expect("cohort concept");
            for t in triples {
                kg.insert(t, Source::Llm);
            }
        }
    }
    for kg in merged.values().filter(|kg| kg.is_empty()) {
        warnings.push(Warning { source: Source::Llm, concept: Some(kg.concept.key()), message: "concept has no triples".into() });
    }
    warnings.sort();
    warnings.dedup();
    let concepts: Vec<ConceptKg> = merged.into_values().collect();
    let global = union_global(&concepts);
    Ok(KgBuild { concepts, global, warnings })
}

/// `concepts/<file>.json` per concept, `global.json` and `warnings.jsonl`.
pub fn write_kg_build(dir: &Path, build: &KgBuild) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let concept_dir = dir.join("concepts");
    for kg in &build.concepts {
        written.push(write_concept_kg(&concept_dir, kg)?);
    }
    let global = dir.join("global.json");
    write_graph(&global, &build.global)?;
    written.push(global);
    let warnings = dir.join("warnings.jsonl");
    write_atomic(&warnings, &jsonl_bytes(Some("kg build warnings"), &build.warnings))?;
    written.push(warnings);
    Ok(written)
}
