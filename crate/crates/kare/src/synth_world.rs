//! Seeded synthetic inputs for desk-scale runs: cohort, code book, an
//! external graph, a small corpus with embeddings, and noisy predictions.

use std::path::PathBuf;

use kare_core::ehr::{MedicalCode, TaskId};
use kare_core::synth::{generate_synthetic_cohort, SyntheticCohort};
use kare_core::vector::Embedding;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::Config;
use crate::embedding::EmbeddingMatrix;
use crate::error::KareError;
use crate::gateway::mock::HashEmbedder;
use crate::io::{external_kg_bytes, jsonl_bytes, save_codebook, save_cohort, write_atomic, Document, PredictionLine};
use crate::Result;

const EXTERNAL_RELATIONS: &[&str] = &["affects", "located in", "interacts with", "part of", "may cause", "treats"];

const SENTENCES: &[&str] = &[
    "{a} is frequently observed together with {b}.",
    "Patients with {a} who also present with {b} have a worse prognosis.",
    "{a} may precipitate {b} in elderly inpatients.",
    "Management of {a} often requires attention to {b}.",
    "A retrospective study linked {a} to subsequent {b}.",
];

#[derive(Debug, Clone, PartialEq)]
pub struct SynthWorld {
    pub cohort: SyntheticCohort,
    pub external_kg: Vec<(String, String, String)>,
    pub corpus: Vec<Document>,
    pub corpus_embeddings: Vec<Embedding>,
    pub predictions: Vec<PredictionLine>,
}

fn external_graph(rng: &mut ChaCha8Rng, concepts: &[MedicalCode], intermediates: usize) -> Vec<(String, String, String)> {
    let mids: Vec<String> = (1..=intermediates.max(1)).map(|i| format!("mechanism {i:02}")).collect();
    let mut rows = Vec::new();
    let relation = |rng: &mut ChaCha8Rng| EXTERNAL_RELATIONS[rng.gen_range(0..EXTERNAL_RELATIONS.len())].to_string();
    for c in concepts {
        for m in mids.choose_multiple(rng, 2.min(mids.len())) {
            rows.push((c.display.clone(), relation(rng), m.clone()));
        }
    }
    for (i, m) in mids.iter().enumerate() {
        for _ in 0..2 {
            let j = rng.gen_range(0..mids.len());
            if j != i {
                rows.push((m.clone(), relation(rng), mids[j].clone()));
            }
        }
    }
    rows.sort();
    rows.dedup();
    rows
}

fn corpus(rng: &mut ChaCha8Rng, cohort: &SyntheticCohort, n: usize) -> Vec<Document> {
    let all: Vec<MedicalCode> = cohort.codebook.codes().collect();
    let risk: Vec<MedicalCode> = cohort.risk_codes.iter().cloned().collect();
    let width = format!("{n}").len().max(3);
    (0..n)
        .map(|i| {
            let pool = if i % 2 == 0 && !risk.is_empty() { &risk } else { &all };
            let k = rng.gen_range(2..=4usize).min(pool.len());
            let picked: Vec<&MedicalCode> = pool.choose_multiple(rng, k).collect();
            let mut text = Vec::new();
            for pair in picked.windows(2) {
                let s = SENTENCES[rng.gen_range(0..SENTENCES.len())];
                text.push(s.replace("{a}", &pair[0].display).replace("{b}", &pair[1].display));
            }
            if text.is_empty() {
                text.push(format!("{} is a common finding in hospitalised patients.", picked[0].display));
            }
            let mut text = text.join(" ");
            if let Some(first) = text.get(..1) {
                text = first.to_uppercase() + &text[1..];
            }
            Document { id: format!("D{i:0width$}"), text }
        })
        .collect()
}

fn predictions(rng: &mut ChaCha8Rng, cohort: &SyntheticCohort, noise: f64) -> Vec<PredictionLine> {
    let mut out = Vec::new();
    for task in TaskId::ALL {
        for r in cohort.records.iter().filter(|r| r.visits.len() >= 2) {
            let Some(label) = r.label(task) else { continue };
            let flip = rng.gen_bool(noise);
            out.push(PredictionLine { patient_id: r.patient_id.clone(), task, prediction: if flip { 1 - label } else { label } });
        }
    }
    out
}

pub fn generate_world(cfg: &Config) -> Result<SynthWorld> {
    let s = &cfg.synth;
    let cohort = generate_synthetic_cohort(cfg.seed, s.patients, s.vocab, s.positive_rate)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let concepts: Vec<MedicalCode> = cohort.codebook.codes().collect();
    let external_kg = external_graph(&mut rng, &concepts, s.intermediate_entities);
    let corpus = corpus(&mut rng, &cohort, s.documents);
    let embedder = HashEmbedder::new(cfg.backend.embed_dim);
    let corpus_embeddings = corpus.iter().map(|d| embedder.embed_text(&d.text)).collect();
    let predictions = predictions(&mut rng, &cohort, s.prediction_noise);
    Ok(SynthWorld { cohort, external_kg, corpus, corpus_embeddings, predictions })
}

/// Writes every input file named by the configuration; returns the paths.
pub fn write_world(cfg: &Config, world: &SynthWorld) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let vocab = cfg.resolve(&cfg.data.vocab);
    save_codebook(&vocab, &world.cohort.codebook)?;
    written.push(vocab);
    let cohort = cfg.resolve(&cfg.data.cohort);
    save_cohort(&cohort, &world.cohort.records)?;
    written.push(cohort);
    if let Some(p) = &cfg.data.external_kg {
        let p = cfg.resolve(p);
        write_atomic(&p, &external_kg_bytes(&world.external_kg))?;
        written.push(p);
    }
    if let Some(p) = &cfg.data.corpus {
        let p = cfg.resolve(p);
        write_atomic(&p, &jsonl_bytes(None, &world.corpus))?;
        written.push(p);
    }
    if let Some(p) = &cfg.data.corpus_embeddings {
        let p = cfg.resolve(p);
        EmbeddingMatrix::new(cfg.backend.embed_dim, world.corpus_embeddings.clone())
            .map_err(|message| KareError::Format { path: p.clone(), message })?
            .write(&p)?;
        written.push(p);
    }
    let p = cfg.resolve(&cfg.evaluate.predictions);
    write_atomic(&p, &jsonl_bytes(None, &world.predictions))?;
    written.push(p);
    Ok(written)
}
