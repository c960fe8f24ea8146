//! Seeded synthetic cohort generator for desk-scale runs.
//!
//! Positive (mortality) patients draw most of their codes from a designated
//! risk subset of each vocabulary, so knowledge attached to those concepts is
//! correlated with the label. Readmission labels are realised through the gap
//! between the last two visits and therefore always agree with
//! [`derive_readmission_label`](crate::ehr::derive_readmission_label) at the
//! default window.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::ToString;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ehr::{CodeBook, MedicalCode, PatientRecord, TaskId, Visit, Vocabulary, DEFAULT_READMISSION_WINDOW_DAYS};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("n_patients must be at least 1")]
    NoPatients,
    #[error("positive_rate {0} is outside [0, 1]")]
    PositiveRate(f64),
    #[error("vocabulary size for {0} must be at least 1")]
    EmptyVocabulary(Vocabulary),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabSizes {
    pub condition: usize,
    pub procedure: usize,
    pub medication: usize,
}

impl VocabSizes {
    pub fn get(&self, vocabulary: Vocabulary) -> usize {
        match vocabulary {
            Vocabulary::Condition => self.condition,
            Vocabulary::Procedure => self.procedure,
            Vocabulary::Medication => self.medication,
        }
    }
}

impl Default for VocabSizes {
    fn default() -> Self {
        VocabSizes { condition: 30, procedure: 15, medication: 20 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCohort {
    pub codebook: CodeBook,
    pub records: Vec<PatientRecord>,
    /// Codes over-represented in mortality-positive patients.
    pub risk_codes: BTreeSet<MedicalCode>,
}

const CONDITIONS: &[&str] = &[
    "sepsis",
    "acute respiratory failure",
    "cardiac arrest",
    "septic shock",
    "acute renal failure",
    "congestive heart failure",
    "liver cirrhosis",
    "intracranial hemorrhage",
    "pneumonia",
    "hypertension",
    "diabetes mellitus",
    "atrial fibrillation",
    "coronary atherosclerosis",
    "chronic kidney disease",
    "chronic obstructive pulmonary disease",
    "asthma",
    "anemia",
    "hyperlipidemia",
    "urinary tract infection",
    "gastrointestinal hemorrhage",
    "pulmonary embolism",
    "delirium",
    "hypothyroidism",
    "osteoarthritis",
    "depression",
    "obesity",
    "fluid and electrolyte disorders",
    "coagulation defects",
    "malignant neoplasm",
    "peripheral vascular disease",
];

const PROCEDURES: &[&str] = &[
    "mechanical ventilation",
    "hemodialysis",
    "endotracheal intubation",
    "central venous catheter insertion",
    "cardiac catheterization",
    "blood transfusion",
    "chest radiography",
    "echocardiography",
    "colonoscopy",
    "appendectomy",
    "hip replacement",
    "physical therapy",
    "head computed tomography",
    "bronchoscopy",
    "lumbar puncture",
];

const MEDICATIONS: &[&str] = &[
    "norepinephrine",
    "vasopressin",
    "broad-spectrum antibiotics",
    "vancomycin",
    "morphine",
    "heparin",
    "insulin",
    "furosemide",
    "metoprolol",
    "lisinopril",
    "atorvastatin",
    "aspirin",
    "warfarin",
    "omeprazole",
    "acetaminophen",
    "albuterol",
    "prednisone",
    "levothyroxine",
    "metformin",
    "amlodipine",
];

fn names(vocabulary: Vocabulary) -> (&'static [&'static str], char) {
    match vocabulary {
        Vocabulary::Condition => (CONDITIONS, 'C'),
        Vocabulary::Procedure => (PROCEDURES, 'P'),
        Vocabulary::Medication => (MEDICATIONS, 'M'),
    }
}

/// Builds the code book for the requested vocabulary sizes. Names cycle
/// through the built-in lists with a numeric suffix once a list is exhausted.
pub fn synthetic_codebook(sizes: VocabSizes) -> CodeBook {
    let mut book = CodeBook::default();
    for vocabulary in Vocabulary::ALL {
        let (list, prefix) = names(vocabulary);
        let table = book.table_mut(vocabulary);
        for i in 0..sizes.get(vocabulary) {
            let base = list[i % list.len()];
            let display = if i < list.len() { base.to_string() } else { format!("{base} type {}", i / list.len() + 1) };
            table.insert(format!("{prefix}{:03}", i + 1), display);
        }
    }
    book
}

/// Risk subset: the first quarter (at least one code) of each vocabulary.
fn risk_count(size: usize) -> usize {
    (size / 4).max(1)
}

fn positive_count(n: usize, rate: f64) -> usize {
    let c = libm::round(rate * n as f64) as usize;
    c.min(n)
}

fn draw_codes(
    rng: &mut ChaCha8Rng,
    all: &[MedicalCode],
    risk: usize,
    high_risk: bool,
    count: usize,
) -> Vec<MedicalCode> {
    let count = count.min(all.len());
    let (preferred, other) = if high_risk { (0..risk, risk..all.len()) } else { (risk..all.len(), 0..risk) };
    let mut chosen: BTreeSet<usize> = BTreeSet::new();
    while chosen.len() < count {
        let use_preferred = rng.gen_bool(0.7);
        let mut pool: Vec<usize> = if use_preferred { preferred.clone().collect() } else { other.clone().collect() };
        pool.retain(|i| !chosen.contains(i));
        if pool.is_empty() {
            pool = (0..all.len()).filter(|i| !chosen.contains(i)).collect();
        }
        let pick = pool[rng.gen_range(0..pool.len())];
        chosen.insert(pick);
    }
    chosen.into_iter().map(|i| all[i].clone()).collect()
}

/// Deterministic synthetic cohort. Records are sorted by patient id and every
/// patient has between two and four visits.
pub fn generate_synthetic_cohort(
    seed: u64,
    n_patients: usize,
    vocab_sizes: VocabSizes,
    positive_rate: f64,
) -> Result<SyntheticCohort, SynthError> {
    if n_patients == 0 {
        return Err(SynthError::NoPatients);
    }
    if !(0.0..=1.0).contains(&positive_rate) || positive_rate.is_nan() {
        return Err(SynthError::PositiveRate(positive_rate));
    }
    for v in Vocabulary::ALL {
        if vocab_sizes.get(v) == 0 {
            return Err(SynthError::EmptyVocabulary(v));
        }
    }

    let codebook = synthetic_codebook(vocab_sizes);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let by_vocab: BTreeMap<Vocabulary, Vec<MedicalCode>> = Vocabulary::ALL
        .into_iter()
        .map(|v| (v, codebook.codes().filter(|c| c.vocabulary == v).collect()))
        .collect();
    let risk_codes: BTreeSet<MedicalCode> = by_vocab
        .values()
        .flat_map(|codes| codes[..risk_count(codes.len())].iter().cloned())
        .collect();

    let positives = positive_count(n_patients, positive_rate);
    let mut order: Vec<usize> = (0..n_patients).collect();
    order.shuffle(&mut rng);
    let mortality: BTreeSet<usize> = order[..positives].iter().copied().collect();
    order.shuffle(&mut rng);
    let readmitted: BTreeSet<usize> = order[..positives].iter().copied().collect();

    let width = format!("{n_patients}").len().max(4);
    let window = i64::from(DEFAULT_READMISSION_WINDOW_DAYS);
    let mut records = Vec::with_capacity(n_patients);
    for p in 0..n_patients {
        let high_risk = mortality.contains(&p);
        let n_visits = rng.gen_range(2..=4usize);
        let mut timestamp: i64 = rng.gen_range(0..365);
        let mut visits = Vec::with_capacity(n_visits);
        for index in 0..n_visits {
            if index > 0 {
                let gap = if index + 1 < n_visits {
                    rng.gen_range(20..=120)
                } else if readmitted.contains(&p) {
                    rng.gen_range(1..=window)
                } else {
                    rng.gen_range(window + 1..=90)
                };
                timestamp += gap;
            }
            let mut draw = |v: Vocabulary, max: usize| {
                let codes = &by_vocab[&v];
                let k = rng.gen_range(1..=max);
                draw_codes(&mut rng, codes, risk_count(codes.len()), high_risk, k)
            };
            let conditions = draw(Vocabulary::Condition, 4);
            let procedures = draw(Vocabulary::Procedure, 2);
            let medications = draw(Vocabulary::Medication, 4);
            visits.push(Visit { index, timestamp, conditions, procedures, medications });
        }
        let mut labels = BTreeMap::new();
        labels.insert(TaskId::Mortality, u8::from(high_risk));
        labels.insert(TaskId::Readmission, u8::from(readmitted.contains(&p)));
        records.push(PatientRecord { patient_id: format!("P{:0width$}", p + 1), visits, labels });
    }
    records.sort_by(|a, b| a.patient_id.cmp(&b.patient_id));
    Ok(SyntheticCohort { codebook, records, risk_codes })
}
