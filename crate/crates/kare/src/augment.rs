//! Per-patient context augmentation: base context, patient graph and the
//! greedy community selection.

use std::collections::{BTreeMap, BTreeSet};

use kare_core::cluster::ClusterMapping;
use kare_core::ehr::{PatientRecord, TaskId, TaskSpec};
use kare_core::index::CommunityIndex;
use kare_core::kg::Triple;
use kare_core::retrieval::{
    augmented_text, build_base_context, build_patient_graph, describe, dgra_select, Exhibits, RelevanceParams,
    RetrievalInput, Selected,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::gateway::Gateway;
use crate::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedRecord {
    pub patient_id: String,
    pub task: TaskId,
    pub base_context: String,
    pub selected: Vec<Selected>,
    pub augmented_context: String,
    /// Fewer than N communities were selectable.
    pub exhausted: bool,
    pub exhibits: Exhibits,
    pub missing_exhibit: bool,
}

/// Shared read-only inputs of the augmentation stage.
pub struct Augmenter<'a> {
    pub gateway: &'a Gateway,
    pub cohort: &'a [PatientRecord],
    pub index: &'a CommunityIndex,
    pub mapping: &'a ClusterMapping,
    /// Concept key → refined triples.
    pub membership: &'a BTreeMap<String, BTreeSet<Triple>>,
    pub params: &'a RelevanceParams,
    pub readmission_window_days: u32,
}

impl Augmenter<'_> {
    /// Community id → theme affinity for one task.
    pub fn theme_affinity(&self, spec: &TaskSpec) -> Result<BTreeMap<String, f64>> {
        let theme = self.gateway.embed(&spec.theme_terms)?;
        Ok(self.index.theme_affinities(&theme))
    }

    /// `None` when the patient has fewer than two visits or no label for
    /// the task.
    pub fn augment_patient(
        &self,
        record: &PatientRecord,
        spec: &TaskSpec,
        affinity: &BTreeMap<String, f64>,
    ) -> Result<Option<AugmentedRecord>> {
        let (Some(history), Some(label)) = (record.history(), record.label(spec.task_id)) else {
            return Ok(None);
        };
        let base = build_base_context(&history, label, spec, self.cohort);
        let base_embedding = self.gateway.embed_one(&base.text)?;
        let graph = build_patient_graph(&history, self.membership, self.mapping);
        log::debug!("{} {}: {}", record.patient_id, spec.task_id, describe(&graph));
        let input = RetrievalInput { graph: &graph, base_embedding: &base_embedding, task: spec.task_id, theme_affinity: affinity };
        let selection = dgra_select(self.index, &input, self.params);
        Ok(Some(AugmentedRecord {
            patient_id: record.patient_id.clone(),
            task: spec.task_id,
            augmented_context: augmented_text(&base.text, &selection.selected),
            base_context: base.text,
            selected: selection.selected,
            exhausted: selection.exhausted,
            exhibits: base.exhibits,
            missing_exhibit: base.missing_exhibit,
        }))
    }

    /// Every eligible (patient, task) pair, ordered by patient then task.
    pub fn augment_all(&self) -> Result<Vec<AugmentedRecord>> {
        let mut out = Vec::new();
        for task in TaskId::ALL {
            let spec = TaskSpec::for_task(task, self.readmission_window_days);
            let affinity = self.theme_affinity(&spec)?;
            let records: Vec<Option<AugmentedRecord>> =
                self.cohort.par_iter().map(|r| self.augment_patient(r, &spec, &affinity)).collect::<Result<_>>()?;
            out.extend(records.into_iter().flatten());
        }
        out.sort_by(|a, b| (&a.patient_id, a.task).cmp(&(&b.patient_id, b.task)));
        Ok(out)
    }
}
