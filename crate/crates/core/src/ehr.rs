//! EHR data model: coded visits, patient records and prediction tasks.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Readmission window used when none is configured.
pub const DEFAULT_READMISSION_WINDOW_DAYS: u32 = 15;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EhrError {
    #[error("medical code has an empty identifier")]
    EmptyCode,
    #[error("medical code {code} has an empty display name")]
    EmptyDisplay { code: String },
    #[error("patient record has an empty patient_id")]
    EmptyPatientId,
    #[error("patient {patient}: record has no visits")]
    NoVisits { patient: String },
    #[error("patient {patient}: visit {visit} has no codes")]
    EmptyVisit { patient: String, visit: usize },
    #[error("patient {patient}: visit {visit} has index field {found}")]
    VisitIndex { patient: String, visit: usize, found: usize },
    #[error("patient {patient}: visit {visit} timestamp {timestamp} precedes previous visit at {previous}")]
    NonMonotoneTimestamps { patient: String, visit: usize, timestamp: i64, previous: i64 },
    #[error("patient {patient}: label for {task} is {value}, expected 0 or 1")]
    InvalidLabel { patient: String, task: TaskId, value: u8 },
    #[error("patient {patient}: task {task} needs at least two visits")]
    InapplicableTask { patient: String, task: TaskId },
    #[error("patient {patient}: stored readmission label {stored} disagrees with visit gaps (derived {derived})")]
    LabelMismatch { patient: String, stored: u8, derived: u8 },
    #[error("readmission window must be positive")]
    InvalidWindow,
}

/// Coding-system family of a medical concept.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Vocabulary {
    Condition,
    Procedure,
    Medication,
}

impl Vocabulary {
    pub const ALL: [Vocabulary; 3] = [Vocabulary::Condition, Vocabulary::Procedure, Vocabulary::Medication];

    pub fn as_str(self) -> &'static str {
        match self {
            Vocabulary::Condition => "condition",
            Vocabulary::Procedure => "procedure",
            Vocabulary::Medication => "medication",
        }
    }
}

impl fmt::Display for Vocabulary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A concept symbol from one of the EHR coding systems.
///
/// Ordering and equality use `(vocabulary, code)`; the display name is carried
/// along for rendering and for linking the concept to knowledge-graph entities.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MedicalCode {
    pub vocabulary: Vocabulary,
    pub code: String,
    pub display: String,
}

impl MedicalCode {
    pub fn new(vocabulary: Vocabulary, code: impl Into<String>, display: impl Into<String>) -> Result<Self, EhrError> {
        let code = code.into();
        let display = display.into();
        if code.trim().is_empty() {
            return Err(EhrError::EmptyCode);
        }
        if display.trim().is_empty() {
            return Err(EhrError::EmptyDisplay { code });
        }
        Ok(MedicalCode { vocabulary, code, display })
    }

    /// Stable key `"<vocabulary>:<code>"` used for per-concept maps and files.
    pub fn key(&self) -> String {
        let mut key = String::from(self.vocabulary.as_str());
        key.push(':');
        key.push_str(&self.code);
        key
    }
}

impl PartialEq for MedicalCode {
    fn eq(&self, other: &Self) -> bool {
        self.vocabulary == other.vocabulary && self.code == other.code
    }
}

impl Eq for MedicalCode {}

impl PartialOrd for MedicalCode {
    fn partial_cmp(&self, other: &Self) -> Option<core::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for MedicalCode {
    fn cmp(&self, other: &Self) -> core::cmp::Ordering {
        (self.vocabulary, &self.code).cmp(&(other.vocabulary, &other.code))
    }
}

impl core::hash::Hash for MedicalCode {
    fn hash<H: core::hash::Hasher>(&self, state: &mut H) {
        self.vocabulary.hash(state);
        self.code.hash(state);
    }
}

/// Code → display name tables, one per vocabulary family.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeBook {
    #[serde(default)]
    pub condition: BTreeMap<String, String>,
    #[serde(default)]
    pub procedure: BTreeMap<String, String>,
    #[serde(default)]
    pub medication: BTreeMap<String, String>,
}

impl CodeBook {
    pub fn table(&self, vocabulary: Vocabulary) -> &BTreeMap<String, String> {
        match vocabulary {
            Vocabulary::Condition => &self.condition,
            Vocabulary::Procedure => &self.procedure,
            Vocabulary::Medication => &self.medication,
        }
    }

    pub fn table_mut(&mut self, vocabulary: Vocabulary) -> &mut BTreeMap<String, String> {
        match vocabulary {
            Vocabulary::Condition => &mut self.condition,
            Vocabulary::Procedure => &mut self.procedure,
            Vocabulary::Medication => &mut self.medication,
        }
    }

    pub fn resolve(&self, vocabulary: Vocabulary, code: &str) -> Option<MedicalCode> {
        self.table(vocabulary).get(code).map(|display| MedicalCode {
            vocabulary,
            code: code.to_string(),
            display: display.clone(),
        })
    }

    pub fn codes(&self) -> impl Iterator<Item = MedicalCode> + '_ {
        Vocabulary::ALL.into_iter().flat_map(move |v| {
            self.table(v).iter().map(move |(code, display)| MedicalCode {
                vocabulary: v,
                code: code.clone(),
                display: display.clone(),
            })
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Visit {
    pub index: usize,
    /// Days since the cohort epoch.
    pub timestamp: i64,
    pub conditions: Vec<MedicalCode>,
    pub procedures: Vec<MedicalCode>,
    pub medications: Vec<MedicalCode>,
}

impl Visit {
    pub fn codes(&self) -> impl Iterator<Item = &MedicalCode> {
        self.conditions.iter().chain(&self.procedures).chain(&self.medications)
    }

    pub fn codes_of(&self, vocabulary: Vocabulary) -> &[MedicalCode] {
        match vocabulary {
            Vocabulary::Condition => &self.conditions,
            Vocabulary::Procedure => &self.procedures,
            Vocabulary::Medication => &self.medications,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.conditions.is_empty() && self.procedures.is_empty() && self.medications.is_empty()
    }
}

/// Prediction task identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskId {
    Mortality,
    Readmission,
}

impl TaskId {
    pub const ALL: [TaskId; 2] = [TaskId::Mortality, TaskId::Readmission];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskId::Mortality => "mortality",
            TaskId::Readmission => "readmission",
        }
    }

    pub fn parse(s: &str) -> Option<TaskId> {
        match s {
            "mortality" => Some(TaskId::Mortality),
            "readmission" => Some(TaskId::Readmission),
            _ => None,
        }
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatientRecord {
    pub patient_id: String,
    pub visits: Vec<Visit>,
    pub labels: BTreeMap<TaskId, u8>,
}

impl PatientRecord {
    /// Checks every record invariant, naming the patient and field on failure.
    pub fn validate(&self) -> Result<(), EhrError> {
        if self.patient_id.trim().is_empty() {
            return Err(EhrError::EmptyPatientId);
        }
        let patient = || self.patient_id.clone();
        if self.visits.is_empty() {
            return Err(EhrError::NoVisits { patient: patient() });
        }
        let mut previous: Option<i64> = None;
        for (i, visit) in self.visits.iter().enumerate() {
            if visit.index != i {
                return Err(EhrError::VisitIndex { patient: patient(), visit: i, found: visit.index });
            }
            if visit.is_empty() {
                return Err(EhrError::EmptyVisit { patient: patient(), visit: i });
            }
            if let Some(prev) = previous {
                if visit.timestamp < prev {
                    return Err(EhrError::NonMonotoneTimestamps {
                        patient: patient(),
                        visit: i,
                        timestamp: visit.timestamp,
                        previous: prev,
                    });
                }
            }
            previous = Some(visit.timestamp);
        }
        for (&task, &value) in &self.labels {
            if value > 1 {
                return Err(EhrError::InvalidLabel { patient: patient(), task, value });
            }
        }
        Ok(())
    }

    pub fn label(&self, task: TaskId) -> Option<u8> {
        self.labels.get(&task).copied()
    }

    /// The record without its final visit: the observation window used as
    /// prediction context. `None` when fewer than two visits exist.
    pub fn history(&self) -> Option<PatientRecord> {
        if self.visits.len() < 2 {
            return None;
        }
        Some(PatientRecord {
            patient_id: self.patient_id.clone(),
            visits: self.visits[..self.visits.len() - 1].to_vec(),
            labels: self.labels.clone(),
        })
    }

    /// Distinct concepts over all visits.
    pub fn concepts(&self) -> BTreeSet<&MedicalCode> {
        self.visits.iter().flat_map(Visit::codes).collect()
    }
}

/// 1 iff the gap between the last two visits is at most `window` days.
pub fn derive_readmission_label(record: &PatientRecord, window: u32) -> Result<u8, EhrError> {
    if window == 0 {
        return Err(EhrError::InvalidWindow);
    }
    let n = record.visits.len();
    if n < 2 {
        return Err(EhrError::InapplicableTask { patient: record.patient_id.clone(), task: TaskId::Readmission });
    }
    let gap = record.visits[n - 1].timestamp - record.visits[n - 2].timestamp;
    Ok(u8::from(gap <= i64::from(window)))
}

/// Verifies a stored readmission label against the visit timestamps.
pub fn check_readmission_label(record: &PatientRecord, window: u32) -> Result<(), EhrError> {
    let Some(stored) = record.label(TaskId::Readmission) else {
        return Ok(());
    };
    if record.visits.len() < 2 {
        return Ok(());
    }
    let derived = derive_readmission_label(record, window)?;
    if derived != stored {
        return Err(EhrError::LabelMismatch { patient: record.patient_id.clone(), stored, derived });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: TaskId,
    pub description: String,
    pub theme_terms: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub readmission_window_days: Option<u32>,
}

const MORTALITY_DESCRIPTION: &str = "\
Mortality prediction.
Given the patient's conditions, procedures and medications recorded over the observed hospital visits, \
predict whether the patient dies during the next hospital visit.
Answer 1 if the patient is expected to die at the next visit and 0 if the patient is expected to survive.";

const READMISSION_DESCRIPTION_HEAD: &str = "\
Readmission prediction.
Given the patient's conditions, procedures and medications recorded over the observed hospital visits, \
predict whether the patient is readmitted to the hospital within ";

const READMISSION_DESCRIPTION_TAIL: &str = " days after discharge from the latest observed visit.
Answer 1 if a readmission within the window is expected and 0 otherwise.";

impl TaskSpec {
    pub fn mortality() -> Self {
        TaskSpec {
            task_id: TaskId::Mortality,
            description: MORTALITY_DESCRIPTION.to_string(),
            theme_terms: [
                "end-stage",
                "life-threatening",
                "mortality",
                "death",
                "critical condition",
                "organ failure",
                "fatal",
                "terminal illness",
            ]
            .iter()
            .map(|s| s.to_string())
            .collect(),
            readmission_window_days: None,
        }
    }

    pub fn readmission(window_days: u32) -> Self {
        let mut description = String::from(READMISSION_DESCRIPTION_HEAD);
        description.push_str(&alloc::format!("{window_days}"));
        description.push_str(READMISSION_DESCRIPTION_TAIL);
        TaskSpec {
            task_id: TaskId::Readmission,
            description,
            theme_terms: [
                "readmission",
                "recurrence",
                "relapse",
                "chronic disease",
                "complication",
                "exacerbation",
                "poor medication adherence",
                "discharge",
            ]
            .iter()
            .map(|s| s.to_string())
            .collect(),
            readmission_window_days: Some(window_days),
        }
    }

    pub fn for_task(task: TaskId, readmission_window_days: u32) -> Self {
        match task {
            TaskId::Mortality => Self::mortality(),
            TaskId::Readmission => Self::readmission(readmission_window_days),
        }
    }

    /// Readmission window in days, falling back to the default.
    pub fn window(&self) -> u32 {
        self.readmission_window_days.unwrap_or(DEFAULT_READMISSION_WINDOW_DAYS)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn code(v: Vocabulary, c: &str) -> MedicalCode {
        MedicalCode::new(v, c, alloc::format!("name {c}")).unwrap()
    }

    fn record(timestamps: &[i64]) -> PatientRecord {
        PatientRecord {
            patient_id: "p1".into(),
            visits: timestamps
                .iter()
                .enumerate()
                .map(|(i, &t)| Visit {
                    index: i,
                    timestamp: t,
                    conditions: vec![code(Vocabulary::Condition, "C1")],
                    procedures: vec![],
                    medications: vec![],
                })
                .collect(),
            labels: BTreeMap::new(),
        }
    }

    #[test]
    fn readmission_gap_within_window() {
        assert_eq!(derive_readmission_label(&record(&[0, 10]), 15).unwrap(), 1);
        assert_eq!(derive_readmission_label(&record(&[0, 16]), 15).unwrap(), 0);
        assert_eq!(derive_readmission_label(&record(&[0, 15]), 15).unwrap(), 1);
        assert_eq!(derive_readmission_label(&record(&[0, 100, 110]), 15).unwrap(), 1);
    }

    #[test]
    fn readmission_needs_two_visits() {
        let err = derive_readmission_label(&record(&[3]), 15).unwrap_err();
        assert!(matches!(err, EhrError::InapplicableTask { .. }));
    }

    #[test]
    fn validation_names_patient_on_time_travel() {
        let err = record(&[5, 2]).validate().unwrap_err();
        match err {
            EhrError::NonMonotoneTimestamps { patient, visit, .. } => {
                assert_eq!(patient, "p1");
                assert_eq!(visit, 1);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn validation_rejects_bad_labels_and_empty_visits() {
        let mut r = record(&[0, 1]);
        r.labels.insert(TaskId::Mortality, 2);
        assert!(matches!(r.validate(), Err(EhrError::InvalidLabel { .. })));
        let mut r = record(&[0]);
        r.visits[0].conditions.clear();
        assert!(matches!(r.validate(), Err(EhrError::EmptyVisit { .. })));
    }

    #[test]
    fn code_identity_ignores_display() {
        let a = MedicalCode::new(Vocabulary::Condition, "C1", "x").unwrap();
        let b = MedicalCode::new(Vocabulary::Condition, "C1", "y").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.key(), "condition:C1");
        assert!(MedicalCode::new(Vocabulary::Condition, "C1", " ").is_err());
    }

    #[test]
    fn history_drops_final_visit() {
        let r = record(&[0, 4, 9]);
        let h = r.history().unwrap();
        assert_eq!(h.visits.len(), 2);
        assert!(record(&[1]).history().is_none());
    }

    #[test]
    fn task_defaults() {
        let t = TaskSpec::readmission(DEFAULT_READMISSION_WINDOW_DAYS);
        assert_eq!(t.window(), 15);
        assert!(!t.theme_terms.is_empty());
        assert!(!TaskSpec::mortality().theme_terms.is_empty());
    }
}
