//! Binary classification metrics computed from exact confusion counts.
//!
//! Every metric is first formed as an integer numerator/denominator pair and
//! converted to `f64` with a single division, so results are the correctly
//! rounded value of the exact ratio.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("prediction/label id sets differ (missing predictions: {missing_predictions:?}, missing labels: {missing_labels:?})")]
    KeyMismatch { missing_predictions: Vec<String>, missing_labels: Vec<String> },
    #[error("{kind} for {patient} is {value}, expected 0 or 1")]
    NotBinary { kind: &'static str, patient: String, value: u8 },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum F1Mode {
    /// Unweighted mean of the positive- and negative-class F1.
    #[default]
    Macro,
    /// F1 of the positive class only.
    Positive,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

/// Exact ratio; a zero denominator evaluates to 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ratio {
    pub num: u128,
    pub den: u128,
}

impl Ratio {
    pub fn value(self) -> f64 {
        if self.den == 0 {
            0.0
        } else {
            self.num as f64 / self.den as f64
        }
    }

    pub fn is_undefined(self) -> bool {
        self.den == 0
    }
}

impl Confusion {
    pub fn add(&mut self, prediction: u8, label: u8) {
        match (prediction, label) {
            (1, 1) => self.tp += 1,
            (0, 0) => self.tn += 1,
            (1, 0) => self.fp += 1,
            _ => self.fn_ += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    pub fn positives(&self) -> u64 {
        self.tp + self.fn_
    }

    pub fn negatives(&self) -> u64 {
        self.tn + self.fp
    }

    pub fn accuracy(&self) -> Ratio {
        Ratio { num: u128::from(self.tp + self.tn), den: u128::from(self.total()) }
    }

    pub fn sensitivity(&self) -> Ratio {
        Ratio { num: u128::from(self.tp), den: u128::from(self.positives()) }
    }

    pub fn specificity(&self) -> Ratio {
        Ratio { num: u128::from(self.tn), den: u128::from(self.negatives()) }
    }

    pub fn f1_positive(&self) -> Ratio {
        Ratio { num: 2 * u128::from(self.tp), den: u128::from(2 * self.tp + self.fp + self.fn_) }
    }

    pub fn f1_negative(&self) -> Ratio {
        Ratio { num: 2 * u128::from(self.tn), den: u128::from(2 * self.tn + self.fp + self.fn_) }
    }

    /// Mean of the two class F1 scores; an undefined class F1 counts as 0.
    pub fn macro_f1(&self) -> Ratio {
        let (p, n) = (self.f1_positive(), self.f1_negative());
        match (p.den, n.den) {
            (0, 0) => Ratio { num: 0, den: 0 },
            (0, d) => Ratio { num: n.num, den: 2 * d },
            (d, 0) => Ratio { num: p.num, den: 2 * d },
            (d1, d2) => Ratio { num: p.num * d2 + n.num * d1, den: 2 * d1 * d2 },
        }
    }

    pub fn f1(&self, mode: F1Mode) -> Ratio {
        match mode {
            F1Mode::Macro => self.macro_f1(),
            F1Mode::Positive => self.f1_positive(),
        }
    }

    /// accuracy · (P + N) = sensitivity · P + specificity · N, checked in
    /// integers.
    pub fn accuracy_identity_holds(&self) -> bool {
        let p = u128::from(self.positives());
        let n = u128::from(self.negatives());
        let sens = self.sensitivity();
        let spec = self.specificity();
        let acc = self.accuracy();
        // scale every term by the product of denominators (treating 0/0 as 0/1)
        let d = |r: Ratio| if r.den == 0 { 1 } else { r.den };
        let (ds, dp, da) = (d(sens), d(spec), d(acc));
        let lhs = acc.num * (p + n) * ds * dp;
        let rhs = (sens.num * p * dp + spec.num * n * ds) * da;
        lhs == rhs
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub confusion: Confusion,
    pub f1_mode: F1Mode,
    /// Names of metrics whose denominator was zero (reported as 0).
    pub undefined: Vec<String>,
}

impl MetricsReport {
    pub fn from_confusion(confusion: Confusion, mode: F1Mode) -> Self {
        let parts = [
            ("accuracy", confusion.accuracy()),
            ("macro_f1", confusion.f1(mode)),
            ("sensitivity", confusion.sensitivity()),
            ("specificity", confusion.specificity()),
        ];
        let mut undefined: Vec<String> = parts.iter().filter(|(_, r)| r.is_undefined()).map(|(n, _)| String::from(*n)).collect();
        if mode == F1Mode::Macro {
            for (name, r) in [("f1_positive", confusion.f1_positive()), ("f1_negative", confusion.f1_negative())] {
                if r.is_undefined() {
                    undefined.push(String::from(name));
                }
            }
        }
        MetricsReport {
            accuracy: parts[0].1.value(),
            macro_f1: parts[1].1.value(),
            sensitivity: parts[2].1.value(),
            specificity: parts[3].1.value(),
            confusion,
            f1_mode: mode,
            undefined,
        }
    }
}

/// Metrics over matching prediction and label maps.
pub fn compute_metrics(
    predictions: &BTreeMap<String, u8>,
    labels: &BTreeMap<String, u8>,
    mode: F1Mode,
) -> Result<MetricsReport, MetricsError> {
    let missing_predictions: Vec<String> = labels.keys().filter(|k| !predictions.contains_key(*k)).cloned().collect();
    let missing_labels: Vec<String> = predictions.keys().filter(|k| !labels.contains_key(*k)).cloned().collect();
    if !missing_predictions.is_empty() || !missing_labels.is_empty() {
        return Err(MetricsError::KeyMismatch { missing_predictions, missing_labels });
    }
    let mut confusion = Confusion::default();
    for (id, &label) in labels {
        let prediction = predictions[id];
        for (kind, value) in [("prediction", prediction), ("label", label)] {
            if value > 1 {
                return Err(MetricsError::NotBinary { kind, patient: id.clone(), value });
            }
        }
        confusion.add(prediction, label);
    }
    Ok(MetricsReport::from_confusion(confusion, mode))
}
