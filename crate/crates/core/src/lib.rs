//! Core algorithms of the KARE knowledge-graph retrieval engine.
//!
//! Everything in this crate is pure computation over in-memory data and needs
//! only `alloc`: the EHR data model and synthetic cohorts, concept knowledge
//! graph construction primitives, embedding-based semantic clustering,
//! hierarchical Leiden community detection, the relevance score and greedy
//! retrieval loop, evaluation metrics and fine-tune sample assembly.
//!
//! File formats, LLM/embedding backends and the CLI live in the `kare` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod cluster;
pub mod community;
pub mod concept_sets;
pub mod cooccur;
pub mod ehr;
pub mod index;
pub mod kg;
pub mod metrics;
pub mod paths;
pub mod retrieval;
pub mod summary;
pub mod synth;
pub mod text;
pub mod training;
pub mod vector;

pub use ehr::{MedicalCode, PatientRecord, TaskId, TaskSpec, Visit, Vocabulary};
pub use kg::{ConceptKg, KnowledgeGraph, Source, SourcedTriple, Triple};
