//! Resumable stage pipeline with a content-hashed manifest.
//!
//! Each stage records a fingerprint of its parameters and inputs together
//! with hashes of its outputs. A stage is skipped when its fingerprint is
//! unchanged and its outputs are intact, unless forced.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use kare_core::ehr::{CodeBook, PatientRecord, TaskId, TaskSpec};
use kare_core::metrics::{compute_metrics, MetricsReport};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::augment::{AugmentedRecord, Augmenter};
use crate::clustering::{cluster_graph, write_cluster_outcome};
use crate::config::Config;
use crate::error::KareError;
use crate::gateway::{Gateway, StatsSnapshot};
use crate::index_store::{build_community_index, load_index, save_index};
use crate::io::{
    load_codebook, load_cohort, load_corpus, load_external_kg, load_predictions, read_graph, read_json, read_jsonl,
    sha256_file, write_json, write_jsonl,
};
use crate::kgbuild::{build_concept_kgs, write_kg_build};
use crate::training::{finetune_samples, generate_all, write_finetune, ChainRecord};
use crate::Result;

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    BuildKg,
    Cluster,
    Index,
    Augment,
    GenTrain,
    Emit,
    Evaluate,
}

impl Stage {
    pub const ALL: [Stage; 7] =
        [Stage::BuildKg, Stage::Cluster, Stage::Index, Stage::Augment, Stage::GenTrain, Stage::Emit, Stage::Evaluate];

    pub fn name(self) -> &'static str {
        match self {
            Stage::BuildKg => "build-kg",
            Stage::Cluster => "cluster",
            Stage::Index => "index",
            Stage::Augment => "augment",
            Stage::GenTrain => "gen-train",
            Stage::Emit => "emit",
            Stage::Evaluate => "evaluate",
        }
    }

    pub fn parse(s: &str) -> Option<Stage> {
        Stage::ALL.into_iter().find(|st| st.name() == s)
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Artifact paths relative to the artifacts directory.
pub mod paths {
    pub const KG_DIR: &str = "kg";
    pub const KG_GLOBAL: &str = "kg/global.json";
    pub const CLUSTER_DIR: &str = "cluster";
    pub const MAPPING: &str = "cluster/mapping.json";
    pub const REFINED: &str = "cluster/refined.json";
    pub const INDEX_DIR: &str = "index";
    pub const SUMMARY_FAILURES: &str = "index/summary_failures.json";
    pub const AUGMENTED: &str = "augment/augmented.jsonl";
    pub const CHAINS: &str = "train/chains.jsonl";
    pub const FINETUNE: &str = "train/finetune.jsonl";
    pub const METRICS: &str = "eval/metrics.json";
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub seed: u64,
    pub fingerprint: String,
    /// Input path (relative to the config directory or artifacts) → sha256.
    pub inputs: BTreeMap<String, String>,
    /// Output path relative to the artifacts directory → sha256.
    pub outputs: BTreeMap<String, String>,
    pub summary: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub seed: u64,
    pub config: Value,
    pub stages: Vec<StageRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub executed: Vec<Stage>,
    pub skipped: Vec<Stage>,
    pub manifest_hash: String,
    pub gateway: StatsSnapshot,
}

pub fn stage_seed(seed: u64, stage: Stage) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(stage.name().as_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().expect("8 bytes"))
}

pub struct Pipeline {
    pub config: Config,
    pub gateway: Gateway,
}

struct Outcome {
    outputs: Vec<PathBuf>,
    summary: Value,
}

fn rel(path: &Path, base: &Path) -> String {
    path.strip_prefix(base).unwrap_or(path).to_string_lossy().replace('\\', "/")
}

fn files_under(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    if !dir.exists() {
        return Ok(out);
    }
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).map_err(crate::error::io_err(&d))? {
            let path = entry.map_err(crate::error::io_err(&d))?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push(path);
            }
        }
    }
    out.sort();
    Ok(out)
}

impl Pipeline {
    pub fn new(config: Config) -> Result<Self> {
        let cache = config.backend.cache_dir.as_ref().map(|p| config.resolve(p));
        let prompts = config.backend.prompt_dir.as_ref().map(|p| config.resolve(p));
        let gateway = Gateway::from_config(&config.backend, cache, prompts)?;
        Ok(Pipeline { config, gateway })
    }

    pub fn with_gateway(config: Config, gateway: Gateway) -> Self {
        Pipeline { config, gateway }
    }

    pub fn artifacts(&self) -> PathBuf {
        self.config.artifacts()
    }

    pub fn artifact(&self, rel: &str) -> PathBuf {
        self.artifacts().join(rel)
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.artifact(MANIFEST)
    }

    pub fn read_manifest(&self) -> Result<Option<Manifest>> {
        let path = self.manifest_path();
        if !path.exists() {
            return Ok(None);
        }
        read_json(&path).map(Some)
    }

    fn window(&self) -> u32 {
        self.config.data.readmission_window_days
    }

    fn load_cohort(&self) -> Result<(CodeBook, Vec<PatientRecord>)> {
        let data = &self.config.data;
        let book = load_codebook(&self.config.resolve(&data.vocab))?;
        let check = data.check_readmission_labels.then_some(data.readmission_window_days);
        let cohort = load_cohort(&self.config.resolve(&data.cohort), &book, check)?;
        Ok((book, cohort))
    }

    /// Files a stage reads; a missing one is reported before the stage runs.
    fn inputs(&self, stage: Stage) -> Result<Vec<PathBuf>> {
        let data = &self.config.data;
        let cohort = vec![self.config.resolve(&data.cohort), self.config.resolve(&data.vocab)];
        Ok(match stage {
            Stage::BuildKg => {
                let mut v = cohort;
                for p in [&data.external_kg, &data.corpus, &data.corpus_embeddings].into_iter().flatten() {
                    v.push(self.config.resolve(p));
                }
                v
            }
            Stage::Cluster => vec![self.artifact(paths::KG_GLOBAL)],
            Stage::Index => vec![self.artifact(paths::REFINED)],
            Stage::Augment => {
                let mut v = cohort;
                v.push(self.artifact(paths::MAPPING));
                v.push(self.artifact(paths::REFINED));
                v.extend(
                    files_under(&self.artifact(paths::INDEX_DIR))?
                        .into_iter()
                        .filter(|p| !p.ends_with("summary_failures.json")),
                );
                v
            }
            Stage::GenTrain => {
                let mut v = cohort;
                v.push(self.artifact(paths::AUGMENTED));
                v
            }
            Stage::Emit => vec![self.artifact(paths::CHAINS)],
            Stage::Evaluate => {
                let mut v = cohort;
                v.push(self.config.resolve(&self.config.evaluate.predictions));
                v
            }
        })
    }

    fn stage_params(&self, stage: Stage) -> Value {
        let c = &self.config;
        let chat = self.gateway.chat_backend_id();
        let embed = self.gateway.embed_backend_id();
        let prompts = self.gateway.templates().digest();
        match stage {
            Stage::BuildKg => json!({ "data": c.data, "kg": c.kg, "chat": chat, "embed": embed, "prompts": prompts }),
            Stage::Cluster => json!({ "cluster": c.cluster, "embed": embed }),
            Stage::Index => json!({
                "community": c.community,
                "window": c.data.readmission_window_days,
                "chat": chat,
                "embed": embed,
                "prompts": prompts,
            }),
            Stage::Augment => json!({ "retrieval": c.retrieval, "window": c.data.readmission_window_days, "embed": embed }),
            Stage::GenTrain => json!({ "training": c.training, "window": c.data.readmission_window_days, "chat": chat, "prompts": prompts }),
            Stage::Emit => json!({}),
            Stage::Evaluate => json!({ "evaluate": c.evaluate }),
        }
    }

    fn input_hashes(&self, stage: Stage) -> Result<BTreeMap<String, String>> {
        let mut out = BTreeMap::new();
        for p in self.inputs(stage)? {
            if !p.exists() {
                return Err(KareError::MissingInput(format!("{} (needed by {stage})", p.display())));
            }
            let key = if p.starts_with(self.artifacts()) {
                format!("artifacts/{}", rel(&p, &self.artifacts()))
            } else {
                rel(&p, &self.config.base_dir)
            };
            out.insert(key, sha256_file(&p)?);
        }
        Ok(out)
    }

    fn fingerprint(&self, stage: Stage, inputs: &BTreeMap<String, String>) -> String {
        let material = json!({
            "stage": stage.name(),
            "seed": stage_seed(self.config.seed, stage),
            "params": self.stage_params(stage),
            "inputs": inputs,
        });
        crate::io::sha256_hex(&serde_json::to_vec(&material).expect("serializable"))
    }

    fn outputs_intact(&self, record: &StageRecord) -> bool {
        record.outputs.iter().all(|(p, h)| {
            let path = self.artifact(p);
            path.exists() && sha256_file(&path).is_ok_and(|actual| &actual == h)
        })
    }

    /// Runs `stages` in pipeline order and rewrites the manifest.
    pub fn run(&self, stages: &[Stage], force: bool) -> Result<RunReport> {
        let mut manifest = self.read_manifest()?.unwrap_or_else(|| Manifest {
            schema_version: MANIFEST_SCHEMA_VERSION,
            seed: self.config.seed,
            config: Value::Null,
            stages: Vec::new(),
        });
        manifest.schema_version = MANIFEST_SCHEMA_VERSION;
        manifest.seed = self.config.seed;
        manifest.config = serde_json::to_value(&self.config).expect("serializable");
        let mut executed = Vec::new();
        let mut skipped = Vec::new();
        let mut ordered: Vec<Stage> = stages.to_vec();
        ordered.sort();
        ordered.dedup();
        for stage in ordered {
            let inputs = self.input_hashes(stage).map_err(|e| KareError::Stage { stage: stage.name(), source: Box::new(e) })?;
            let fingerprint = self.fingerprint(stage, &inputs);
            let previous = manifest.stages.iter().find(|r| r.name == stage.name());
            if !force && previous.is_some_and(|r| r.fingerprint == fingerprint && self.outputs_intact(r)) {
                log::info!("{stage}: up to date");
                skipped.push(stage);
                continue;
            }
            let started = Instant::now();
            log::info!("{stage}: running");
            let outcome = self.execute(stage).map_err(|e| KareError::Stage { stage: stage.name(), source: Box::new(e) })?;
            let mut outputs = BTreeMap::new();
            for p in &outcome.outputs {
                outputs.insert(rel(p, &self.artifacts()), sha256_file(p)?);
            }
            log::info!("{stage}: done in {:.2?}", started.elapsed());
            let record = StageRecord {
                name: stage.name().to_string(),
                seed: stage_seed(self.config.seed, stage),
                fingerprint,
                inputs,
                outputs,
                summary: outcome.summary,
            };
            manifest.stages.retain(|r| r.name != stage.name());
            manifest.stages.push(record);
            manifest.stages.sort_by_key(|r| Stage::parse(&r.name));
            write_json(&self.manifest_path(), &manifest)?;
            executed.push(stage);
        }
        write_json(&self.manifest_path(), &manifest)?;
        Ok(RunReport {
            executed,
            skipped,
            manifest_hash: sha256_file(&self.manifest_path())?,
            gateway: self.gateway.stats(),
        })
    }

    fn execute(&self, stage: Stage) -> Result<Outcome> {
        let seed = stage_seed(self.config.seed, stage);
        match stage {
            Stage::BuildKg => self.build_kg(),
            Stage::Cluster => self.cluster(seed),
            Stage::Index => self.index(seed),
            Stage::Augment => self.augment(),
            Stage::GenTrain => self.gen_train(),
            Stage::Emit => self.emit(),
            Stage::Evaluate => self.evaluate(),
        }
    }

    fn build_kg(&self) -> Result<Outcome> {
        let (_, cohort) = self.load_cohort()?;
        let data = &self.config.data;
        let external = data.external_kg.as_ref().map(|p| load_external_kg(&self.config.resolve(p))).transpose()?;
        let corpus = match (&data.corpus, &data.corpus_embeddings) {
            (Some(c), Some(e)) => load_corpus(&self.config.resolve(c), &self.config.resolve(e))?,
            (None, None) => Vec::new(),
            _ => return Err(KareError::Config("data.corpus and data.corpus_embeddings must be set together".into())),
        };
        let build = build_concept_kgs(&self.gateway, &cohort, external.as_ref(), &corpus, &self.config.kg)?;
        let dir = self.artifact(paths::KG_DIR);
        if dir.exists() {
            std::fs::remove_dir_all(&dir).map_err(crate::error::io_err(&dir))?;
        }
        let outputs = write_kg_build(&dir, &build)?;
        let summary = json!({
            "concepts": build.concepts.len(),
            "nonempty_concepts": build.concepts.iter().filter(|c| !c.is_empty()).count(),
            "triples": build.global.len(),
            "nodes": build.global.nodes().len(),
            "relations": build.global.relations().len(),
            "warnings": build.warnings.len(),
        });
        Ok(Outcome { outputs, summary })
    }

    fn cluster(&self, seed: u64) -> Result<Outcome> {
        let g = read_graph(&self.artifact(paths::KG_GLOBAL))?;
        let outcome = cluster_graph(&self.gateway, &g, &self.config.cluster, seed)?;
        let outputs = write_cluster_outcome(&self.artifact(paths::CLUSTER_DIR), &g, &outcome)?;
        let summary = json!({
            "theta_e": outcome.mapping.theta_e,
            "theta_r": outcome.mapping.theta_r,
            "entities": [g.nodes().len(), outcome.refined.nodes().len()],
            "relations": [g.relations().len(), outcome.refined.relations().len()],
            "triples": [g.len(), outcome.refined.len()],
        });
        Ok(Outcome { outputs, summary })
    }

    fn index(&self, seed: u64) -> Result<Outcome> {
        let refined = read_graph(&self.artifact(paths::REFINED))?;
        let themes: Vec<TaskSpec> = TaskId::ALL.iter().map(|&t| TaskSpec::for_task(t, self.window())).collect();
        let (index, failures) = build_community_index(&self.gateway, &refined, &self.config.community, &themes, seed)?;
        let mut outputs = save_index(&self.artifact(paths::INDEX_DIR), &index)?;
        let failures_path = self.artifact(paths::SUMMARY_FAILURES);
        write_json(&failures_path, &failures)?;
        outputs.push(failures_path);
        let summary = json!({
            "communities": index.len(),
            "summarized": index.summarized().count(),
            "summary_failures": failures.len(),
            "max_level": index.communities.iter().map(|c| c.level).max(),
        });
        Ok(Outcome { outputs, summary })
    }

    fn augment(&self) -> Result<Outcome> {
        let (_, cohort) = self.load_cohort()?;
        let mapping = read_json(&self.artifact(paths::MAPPING))?;
        let refined = read_graph(&self.artifact(paths::REFINED))?;
        let index = load_index(&self.artifact(paths::INDEX_DIR))?;
        let augmenter = Augmenter {
            gateway: &self.gateway,
            cohort: &cohort,
            index: &index,
            mapping: &mapping,
            membership: &refined.membership,
            params: &self.config.retrieval,
            readmission_window_days: self.window(),
        };
        let records = augmenter.augment_all()?;
        let path = self.artifact(paths::AUGMENTED);
        write_jsonl(&path, &records)?;
        let selected: usize = records.iter().map(|r| r.selected.len()).sum();
        let summary = json!({
            "pairs": records.len(),
            "selected": selected,
            "exhausted": records.iter().filter(|r| r.exhausted).count(),
            "missing_exhibit": records.iter().filter(|r| r.missing_exhibit).count(),
        });
        Ok(Outcome { outputs: vec![path], summary })
    }

    fn gen_train(&self) -> Result<Outcome> {
        let (_, cohort) = self.load_cohort()?;
        let augmented: Vec<AugmentedRecord> =
            read_jsonl(&self.artifact(paths::AUGMENTED))?.into_iter().map(|(_, r)| r).collect();
        let chains = generate_all(&self.gateway, &augmented, &cohort, self.config.training.k, self.window())?;
        let path = self.artifact(paths::CHAINS);
        write_jsonl(&path, &chains)?;
        let summary = json!({
            "pairs": chains.len(),
            "with_chain": chains.iter().filter(|c| c.best.is_some()).count(),
            "k": self.config.training.k,
        });
        Ok(Outcome { outputs: vec![path], summary })
    }

    fn emit(&self) -> Result<Outcome> {
        let chains: Vec<ChainRecord> = read_jsonl(&self.artifact(paths::CHAINS))?.into_iter().map(|(_, r)| r).collect();
        let samples = finetune_samples(&chains)?;
        let path = self.artifact(paths::FINETUNE);
        write_finetune(&path, &samples)?;
        let summary = json!({ "pairs": samples.len() / 2, "lines": samples.len() });
        Ok(Outcome { outputs: vec![path], summary })
    }

    fn evaluate(&self) -> Result<Outcome> {
        let (_, cohort) = self.load_cohort()?;
        let predictions = load_predictions(&self.config.resolve(&self.config.evaluate.predictions))?;
        let mut reports: BTreeMap<TaskId, MetricsReport> = BTreeMap::new();
        for (task, preds) in &predictions {
            let labels: BTreeMap<String, u8> = cohort
                .iter()
                .filter(|r| r.visits.len() >= 2)
                .filter_map(|r| r.label(*task).map(|l| (r.patient_id.clone(), l)))
                .collect();
            reports.insert(*task, compute_metrics(preds, &labels, self.config.evaluate.f1_mode)?);
        }
        let path = self.artifact(paths::METRICS);
        write_json(&path, &reports)?;
        let summary = serde_json::to_value(
            reports.iter().map(|(t, r)| (t.as_str(), (r.accuracy, r.macro_f1))).collect::<BTreeMap<_, _>>(),
        )
        .expect("serializable");
        Ok(Outcome { outputs: vec![path], summary })
    }
}
