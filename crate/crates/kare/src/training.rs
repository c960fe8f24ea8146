//! Reasoning-chain generation and the multitask fine-tune dataset.

use std::collections::BTreeMap;
use std::path::Path;

use kare_core::ehr::{PatientRecord, TaskId, TaskSpec};
use kare_core::training::{order_samples, parse_candidate, sample_pair, select_best, FinetuneSample, ReasoningCandidate};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::AugmentedRecord;
use crate::error::KareError;
use crate::gateway::templates::CHAIN_GEN;
use crate::gateway::{ChatRequest, Gateway};
use crate::io::{jsonl_bytes, read_jsonl, write_atomic};
use crate::Result;

pub const FINETUNE_HEADER: &str = "kare fine-tune dataset: one [Reasoning] and one [Label Prediction] sample per patient-task pair";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainRecord {
    pub patient_id: String,
    pub task: TaskId,
    pub label: u8,
    /// The augmented context the chains were generated from; also the
    /// fine-tune input. It starts with the task description.
    pub input: String,
    /// One entry per request; `None` when the response had no usable chain.
    pub candidates: Vec<Option<ReasoningCandidate>>,
    pub best: Option<usize>,
}

/// Requests `k` chains for one pair; the k-th request carries determinism
/// knob k so the candidates differ.
pub fn generate_chains(gw: &Gateway, record: &AugmentedRecord, label: u8, k: usize, window: u32) -> Result<ChainRecord> {
    let spec = TaskSpec::for_task(record.task, window);
    let mut candidates = Vec::with_capacity(k);
    for i in 0..k {
        let request = ChatRequest::new(
            CHAIN_GEN,
            [
                ("task", spec.description.clone()),
                ("context", record.augmented_context.clone()),
                ("label", label.to_string()),
            ],
        )
        .with_determinism(i as u64);
        let response = gw.complete(&request)?;
        let candidate = parse_candidate(&response);
        if candidate.is_none() {
            log::warn!("{} {}: chain {i} is empty", record.patient_id, record.task);
        }
        candidates.push(candidate);
    }
    let best = select_best(&candidates);
    if best.is_none() {
        log::warn!("{} {}: no usable chain among {k}; pair skipped", record.patient_id, record.task);
    }
    Ok(ChainRecord {
        patient_id: record.patient_id.clone(),
        task: record.task,
        label,
        input: record.augmented_context.clone(),
        candidates,
        best,
    })
}

pub fn generate_all(
    gw: &Gateway,
    augmented: &[AugmentedRecord],
    cohort: &[PatientRecord],
    k: usize,
    window: u32,
) -> Result<Vec<ChainRecord>> {
    let labels: BTreeMap<(&str, TaskId), u8> = cohort
        .iter()
        .flat_map(|r| r.labels.iter().map(move |(t, l)| ((r.patient_id.as_str(), *t), *l)))
        .collect();
    augmented
        .par_iter()
        .map(|a| {
            let label = labels
                .get(&(a.patient_id.as_str(), a.task))
                .copied()
                .ok_or_else(|| KareError::MissingInput(format!("no {} label for patient {}", a.task, a.patient_id)))?;
            generate_chains(gw, a, label, k, window)
        })
        .collect()
}

/// Two samples for every pair with a usable chain, in dataset order.
pub fn finetune_samples(chains: &[ChainRecord]) -> Result<Vec<FinetuneSample>> {
    let mut samples = Vec::with_capacity(chains.len() * 2);
    for c in chains {
        let Some(best) = c.best else { continue };
        let chain = c.candidates[best].as_ref().expect("best points at a candidate");
        samples.extend(sample_pair(&c.patient_id, c.task, &c.input, &chain.chain, c.label)?);
    }
    Ok(order_samples(samples)?)
}

pub fn finetune_bytes(samples: &[FinetuneSample]) -> Vec<u8> {
    jsonl_bytes(Some(FINETUNE_HEADER), samples)
}

/// Writes the dataset, reads it back and checks it matches line for line.
pub fn write_finetune(path: &Path, samples: &[FinetuneSample]) -> Result<()> {
    write_atomic(path, &finetune_bytes(samples))?;
    let reloaded: Vec<FinetuneSample> = read_jsonl(path)?.into_iter().map(|(_, s)| s).collect();
    if reloaded != samples {
        return Err(KareError::Format { path: path.to_path_buf(), message: "dataset does not reload identically".into() });
    }
    Ok(())
}
