//! IO, LLM gateway, pipeline stages and CLI support for the KARE engine.
//!
//! The algorithms live in [`kare_core`]; this crate reads and writes the
//! artifact formats, talks to chat and embedding backends (real or mock) and
//! drives the resumable stage pipeline.

pub mod augment;
pub mod clustering;
pub mod config;
pub mod embedding;
pub mod error;
pub mod gateway;
pub mod index_store;
pub mod io;
pub mod kgbuild;
pub mod pipeline;
pub mod summarize;
pub mod synth_world;
pub mod training;

pub use error::{KareError, Result};
