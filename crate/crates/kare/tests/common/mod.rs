#![allow(dead_code)]

use std::path::Path;

use kare::config::Config;
use kare::pipeline::{paths, Pipeline};
use kare::synth_world::{generate_world, write_world};
use kare::training::ChainRecord;

/// A synthetic project rooted at `dir`, with its data files written.
pub fn synthetic_project(dir: &Path, patients: usize) -> Config {
    let mut cfg = Config { base_dir: dir.to_path_buf(), ..Config::default() };
    cfg.synth.patients = patients;
    let world = generate_world(&cfg).unwrap();
    write_world(&cfg, &world).unwrap();
    cfg
}

/// Lines that are not the `#` header.
pub fn data_lines(path: &Path) -> usize {
    std::fs::read_to_string(path).unwrap().lines().filter(|l| !l.starts_with('#')).count()
}

/// Patient-task pairs that produced a usable chain.
pub fn usable_pairs(pipeline: &Pipeline) -> usize {
    let text = std::fs::read_to_string(pipeline.artifact(paths::CHAINS)).unwrap();
    text.lines()
        .filter_map(|l| serde_json::from_str::<ChainRecord>(l).ok())
        .filter(|c| c.best.is_some())
        .count()
}
