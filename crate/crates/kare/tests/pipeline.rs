mod common;

use std::fs;

use common::{data_lines, synthetic_project, usable_pairs};
use kare::pipeline::{paths, Pipeline, Stage};
use kare::KareError;

#[test]
fn full_run_then_rerun_skips_everything() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synthetic_project(dir.path(), 40);
    let first = Pipeline::new(cfg.clone()).unwrap().run(&Stage::ALL, false).unwrap();
    assert_eq!(first.executed, Stage::ALL);
    assert!(first.skipped.is_empty());
    assert!(first.gateway.chat_calls > 0);

    let pipeline = Pipeline::new(cfg).unwrap();
    let second = pipeline.run(&Stage::ALL, false).unwrap();
    assert!(second.executed.is_empty());
    assert_eq!(second.skipped, Stage::ALL);
    assert_eq!(second.gateway.chat_calls + second.gateway.embed_calls, 0);
    assert_eq!(second.manifest_hash, first.manifest_hash);

    let manifest = pipeline.read_manifest().unwrap().unwrap();
    let names: Vec<&str> = manifest.stages.iter().map(|s| s.name.as_str()).collect();
    assert_eq!(names, Stage::ALL.map(Stage::name));
    let ft = pipeline.artifact(paths::FINETUNE);
    assert_eq!(data_lines(&ft), 2 * usable_pairs(&pipeline));
    assert!(pipeline.artifact(paths::METRICS).exists());
}

#[test]
fn changes_rerun_downstream_stages_only() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = synthetic_project(dir.path(), 30);
    Pipeline::new(cfg.clone()).unwrap().run(&Stage::ALL, false).unwrap();

    cfg.training.k = 2;
    let report = Pipeline::new(cfg.clone()).unwrap().run(&Stage::ALL, false).unwrap();
    // evaluation scores the prediction file, not the training output
    assert_eq!(report.skipped, [Stage::BuildKg, Stage::Cluster, Stage::Index, Stage::Augment, Stage::Evaluate]);
    assert_eq!(report.executed, [Stage::GenTrain, Stage::Emit]);

    let pipeline = Pipeline::new(cfg.clone()).unwrap();
    fs::write(pipeline.artifact(paths::AUGMENTED), "tampered\n").unwrap();
    let report = pipeline.run(&[Stage::Augment], false).unwrap();
    assert_eq!(report.executed, [Stage::Augment]);

    let forced = Pipeline::new(cfg).unwrap().run(&[Stage::Emit], true).unwrap();
    assert_eq!(forced.executed, [Stage::Emit]);
}

#[test]
fn missing_input_names_the_stage() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synthetic_project(dir.path(), 10);
    let pipeline = Pipeline::new(cfg).unwrap();
    match pipeline.run(&[Stage::Index], false) {
        Err(KareError::Stage { stage, source }) => {
            assert_eq!(stage, "index");
            assert!(matches!(*source, KareError::MissingInput(_)), "{source}");
        }
        other => panic!("unexpected {other:?}"),
    }
    fs::remove_file(dir.path().join("data/cohort.jsonl")).unwrap();
    let err = pipeline.run(&[Stage::BuildKg], false).unwrap_err().to_string();
    assert!(err.contains("build-kg") && err.contains("cohort.jsonl"), "{err}");
}
