//! Reasoning-chain candidates and multitask fine-tune samples.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ehr::TaskId;

pub const DEFAULT_K: usize = 3;
/// Confidence assigned when a chain states none.
pub const LOWEST_CONFIDENCE: u8 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TrainingError {
    #[error("duplicate sample ({patient}, {task}, {prefix})")]
    Duplicate { patient: String, task: TaskId, prefix: &'static str },
    #[error("label {0} is not binary")]
    Label(u8),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Prefix {
    #[serde(rename = "[Reasoning]")]
    Reasoning,
    #[serde(rename = "[Label Prediction]")]
    LabelPrediction,
}

impl Prefix {
    pub fn as_str(self) -> &'static str {
        match self {
            Prefix::Reasoning => "[Reasoning]",
            Prefix::LabelPrediction => "[Label Prediction]",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReasoningCandidate {
    pub chain: String,
    pub confidence: u8,
    /// Whether the confidence was stated rather than defaulted.
    pub stated: bool,
}

/// Parses `Confidence: k` (k in 1..=5) from a line; markdown emphasis,
/// `level`/`score` and separators are tolerated.
fn confidence_in_line(line: &str) -> Option<u8> {
    let lower = line.to_ascii_lowercase();
    let start = lower.find("confidence")?;
    let mut rest = lower[start + "confidence".len()..].trim_start();
    for word in ["level", "score"] {
        rest = rest.strip_prefix(word).unwrap_or(rest).trim_start();
    }
    let rest = rest.trim_start_matches([':', '=', '*', '-', '#', ' ', '\t', '(']);
    let digits: String = rest.chars().take_while(char::is_ascii_digit).collect();
    let after = &rest[digits.len()..];
    let fractional = after.strip_prefix('.').is_some_and(|a| a.starts_with(|c: char| c.is_ascii_digit()));
    match digits.parse::<u8>() {
        Ok(k @ 1..=5) if !fractional => Some(k),
        _ => None,
    }
}

/// Splits a chain-generation response into the chain text and its
/// confidence (the last confidence line wins). Returns `None` when nothing
/// but the confidence line remains.
pub fn parse_candidate(response: &str) -> Option<ReasoningCandidate> {
    let lines: Vec<&str> = response.lines().collect();
    let found = lines.iter().enumerate().rev().find_map(|(i, l)| confidence_in_line(l).map(|k| (i, k)));
    let chain: Vec<&str> = match found {
        Some((i, _)) => lines.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, l)| *l).collect(),
        None => lines,
    };
    let chain = chain.join("\n").trim().to_string();
    if chain.is_empty() {
        return None;
    }
    Some(ReasoningCandidate {
        chain,
        confidence: found.map_or(LOWEST_CONFIDENCE, |f| f.1),
        stated: found.is_some(),
    })
}

/// Index of the highest-confidence candidate; ties go to the earliest.
pub fn select_best(candidates: &[Option<ReasoningCandidate>]) -> Option<usize> {
    let mut best: Option<(usize, u8)> = None;
    for (i, c) in candidates.iter().enumerate() {
        if let Some(c) = c {
            if best.is_none_or(|(_, b)| c.confidence > b) {
                best = Some((i, c.confidence));
            }
        }
    }
    best.map(|b| b.0)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinetuneSample {
    pub patient_id: String,
    pub task: TaskId,
    pub prefix: Prefix,
    pub input: String,
    pub target: String,
}

/// The two samples of one patient-task pair, sharing `input`.
pub fn sample_pair(patient_id: &str, task: TaskId, input: &str, chain: &str, label: u8) -> Result<[FinetuneSample; 2], TrainingError> {
    if label > 1 {
        return Err(TrainingError::Label(label));
    }
    let make = |prefix, target: String| FinetuneSample {
        patient_id: patient_id.to_string(),
        task,
        prefix,
        input: input.to_string(),
        target,
    };
    Ok([make(Prefix::Reasoning, chain.to_string()), make(Prefix::LabelPrediction, format!("{label}"))])
}

/// Sorts samples by (patient, task, prefix) and rejects duplicates.
pub fn order_samples(mut samples: Vec<FinetuneSample>) -> Result<Vec<FinetuneSample>, TrainingError> {
    samples.sort_by(|a, b| (&a.patient_id, a.task, a.prefix).cmp(&(&b.patient_id, b.task, b.prefix)));
    let mut seen = BTreeSet::new();
    for s in &samples {
        if !seen.insert((s.patient_id.as_str(), s.task, s.prefix)) {
            return Err(TrainingError::Duplicate { patient: s.patient_id.clone(), task: s.task, prefix: s.prefix.as_str() });
        }
    }
    Ok(samples)
}
