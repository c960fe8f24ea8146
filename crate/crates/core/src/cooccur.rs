//! Patient-level concept co-occurrence ranking.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;

use crate::ehr::{MedicalCode, PatientRecord};

/// Default number of related concepts kept per concept.
pub const DEFAULT_TOP_X: usize = 20;

/// concept → related concepts with the number of patients in which both
/// appear, sorted by count descending then code ascending, truncated to X.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CoOccurrenceTable {
    pub related: BTreeMap<MedicalCode, Vec<(MedicalCode, u32)>>,
}

impl CoOccurrenceTable {
    pub fn get(&self, concept: &MedicalCode) -> &[(MedicalCode, u32)] {
        self.related.get(concept).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn is_empty(&self) -> bool {
        self.related.is_empty()
    }
}

/// Counts, for every concept pair, the patients whose records contain both.
pub fn collect_cooccurrence(cohort: &[PatientRecord], top_x: usize) -> CoOccurrenceTable {
    let mut counts: BTreeMap<&MedicalCode, BTreeMap<&MedicalCode, u32>> = BTreeMap::new();
    for record in cohort {
        let concepts: Vec<&MedicalCode> = record.concepts().into_iter().collect();
        for (i, &a) in concepts.iter().enumerate() {
            let row = counts.entry(a).or_default();
            for (j, &b) in concepts.iter().enumerate() {
                if i != j {
                    *row.entry(b).or_insert(0) += 1;
                }
            }
        }
    }
    let related = counts
        .into_iter()
        .map(|(concept, row)| {
            let mut ranked: Vec<(MedicalCode, u32)> = row.into_iter().map(|(c, n)| (c.clone(), n)).collect();
            ranked.sort_by(|(ca, na), (cb, nb)| nb.cmp(na).then_with(|| ca.cmp(cb)));
            ranked.truncate(top_x);
            (concept.clone(), ranked)
        })
        .collect();
    CoOccurrenceTable { related }
}

/// Distinct concepts of every visit in the cohort, in cohort order.
pub fn visit_concept_sets(cohort: &[PatientRecord]) -> Vec<BTreeSet<MedicalCode>> {
    cohort
        .iter()
        .flat_map(|r| r.visits.iter().map(|v| v.codes().cloned().collect::<BTreeSet<_>>()))
        .collect()
}
