//! Pipeline configuration (TOML). Every field has a default, so an empty
//! file is a valid configuration; relative paths resolve against the
//! directory containing the config file.

use std::fs;
use std::path::{Path, PathBuf};

use kare_core::cluster::{default_threshold_grid, DEFAULT_SAMPLE_SIZE};
use kare_core::community::{DEFAULT_MAX_CLUSTER_SIZE, DEFAULT_RUNS};
use kare_core::concept_sets::DEFAULT_SET_THRESHOLD;
use kare_core::cooccur::DEFAULT_TOP_X;
use kare_core::ehr::DEFAULT_READMISSION_WINDOW_DAYS;
use kare_core::metrics::F1Mode;
use kare_core::paths::PathParams;
use kare_core::retrieval::RelevanceParams;
use kare_core::summary::{DEFAULT_Z_C, DEFAULT_Z_S};
use kare_core::synth::VocabSizes;
use kare_core::training::DEFAULT_K;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, KareError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub artifacts_dir: PathBuf,
    pub data: DataConfig,
    pub kg: KgConfig,
    pub cluster: ClusterConfig,
    pub community: CommunityConfig,
    pub retrieval: RelevanceParams,
    pub training: TrainingConfig,
    pub evaluate: EvaluateConfig,
    pub backend: BackendConfig,
    pub synth: SynthConfig,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            seed: 42,
            artifacts_dir: "artifacts".into(),
            data: DataConfig::default(),
            kg: KgConfig::default(),
            cluster: ClusterConfig::default(),
            community: CommunityConfig::default(),
            retrieval: RelevanceParams::default(),
            training: TrainingConfig::default(),
            evaluate: EvaluateConfig::default(),
            backend: BackendConfig::default(),
            synth: SynthConfig::default(),
            base_dir: PathBuf::from("."),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub cohort: PathBuf,
    pub vocab: PathBuf,
    pub external_kg: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    /// Sidecar embedding matrix for the corpus, one row per document line.
    pub corpus_embeddings: Option<PathBuf>,
    pub readmission_window_days: u32,
    /// Reject cohorts whose stored readmission labels disagree with visit gaps.
    pub check_readmission_labels: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            cohort: "data/cohort.jsonl".into(),
            vocab: "data/vocab.json".into(),
            external_kg: Some("data/external_kg.tsv".into()),
            corpus: Some("data/corpus.jsonl".into()),
            corpus_embeddings: Some("data/corpus.emb".into()),
            readmission_window_days: DEFAULT_READMISSION_WINDOW_DAYS,
            check_readmission_labels: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KgConfig {
    /// Co-occurring concepts per concept (X).
    pub top_x: usize,
    /// Documents retrieved per concept set (n).
    pub top_documents: usize,
    pub set_threshold: usize,
    pub max_triples_per_text: usize,
    pub llm_hops: usize,
    pub max_length: usize,
    pub max_paths: usize,
    pub max_nodes: usize,
}

impl Default for KgConfig {
    fn default() -> Self {
        let p = PathParams::default();
        KgConfig {
            top_x: DEFAULT_TOP_X,
            top_documents: 3,
            set_threshold: DEFAULT_SET_THRESHOLD,
            max_triples_per_text: 10,
            llm_hops: 3,
            max_length: p.max_length,
            max_paths: p.max_paths,
            max_nodes: p.max_nodes,
        }
    }
}

impl KgConfig {
    pub fn path_params(&self) -> PathParams {
        PathParams { max_length: self.max_length, max_paths: self.max_paths, max_nodes: self.max_nodes }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterConfig {
    pub thresholds: Vec<f64>,
    pub sample_size: usize,
    /// Fixed thresholds that bypass the silhouette search.
    pub theta_e: Option<f64>,
    pub theta_r: Option<f64>,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig { thresholds: default_threshold_grid(), sample_size: DEFAULT_SAMPLE_SIZE, theta_e: None, theta_r: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CommunityConfig {
    pub runs: u32,
    pub max_cluster_size: usize,
    pub z_s: usize,
    pub z_c: usize,
}

impl Default for CommunityConfig {
    fn default() -> Self {
        CommunityConfig { runs: DEFAULT_RUNS, max_cluster_size: DEFAULT_MAX_CLUSTER_SIZE, z_s: DEFAULT_Z_S, z_c: DEFAULT_Z_C }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    /// Reasoning chains requested per patient-task pair.
    pub k: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig { k: DEFAULT_K }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    /// Externally produced predictions (`synth` writes a noisy mock here).
    pub predictions: PathBuf,
    pub f1_mode: F1Mode,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        EvaluateConfig { predictions: "data/predictions.jsonl".into(), f1_mode: F1Mode::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChatKind {
    /// Template-aware deterministic generator.
    Synthetic,
    /// Returns the bound values verbatim.
    Echo,
    Http,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbedKind {
    Hash,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub chat: ChatKind,
    pub embed: EmbedKind,
    pub chat_model: String,
    pub embed_model: String,
    /// Dimension of the hash embedder.
    pub embed_dim: usize,
    pub max_tokens: u32,
    pub max_in_flight: usize,
    pub max_attempts: u32,
    pub backoff_ms: u64,
    pub timeout_secs: u64,
    pub embed_batch: usize,
    /// Response cache directory; `None` keeps the cache in memory only.
    pub cache_dir: Option<PathBuf>,
    /// Directory with prompt template overrides (`<id>.txt`).
    pub prompt_dir: Option<PathBuf>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            chat: ChatKind::Synthetic,
            embed: EmbedKind::Hash,
            chat_model: "mock-chat".into(),
            embed_model: "mock-embed".into(),
            embed_dim: 64,
            max_tokens: 4096,
            max_in_flight: 8,
            max_attempts: 4,
            backoff_ms: 200,
            timeout_secs: 120,
            embed_batch: 64,
            cache_dir: Some("artifacts/cache".into()),
            prompt_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub patients: usize,
    pub positive_rate: f64,
    pub vocab: VocabSizes,
    pub documents: usize,
    pub intermediate_entities: usize,
    /// Fraction of mock predictions flipped away from the true label.
    pub prediction_noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            patients: 200,
            positive_rate: 0.2,
            vocab: VocabSizes::default(),
            documents: 60,
            intermediate_entities: 40,
            prediction_noise: 0.2,
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        Self::load_with_overrides(path, &[])
    }

    /// Loads `path` and then applies `section.key=value` overrides. Values
    /// are read as TOML literals, falling back to plain strings.
    pub fn load_with_overrides(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let mut table: toml::Table =
            toml::from_str(&text).map_err(|e| KareError::Config(format!("{}: {e}", path.display())))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let mut cfg: Config = table.try_into().map_err(|e| KareError::Config(format!("{}: {e}", path.display())))?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(KareError::Config(m));
        self.retrieval.validate()?;
        if self.cluster.thresholds.is_empty() {
            return bad("cluster.thresholds is empty".into());
        }
        for t in self.cluster.thresholds.iter().chain(self.cluster.theta_e.iter()).chain(self.cluster.theta_r.iter()) {
            if !(*t > 0.0 && *t < 2.0) {
                return bad(format!("cluster threshold {t} is outside (0, 2)"));
            }
        }
        if self.community.runs == 0 || self.community.max_cluster_size == 0 || self.community.z_s == 0 {
            return bad("community.runs, max_cluster_size and z_s must be positive".into());
        }
        if self.training.k == 0 {
            return bad("training.k must be at least 1".into());
        }
        if self.backend.max_in_flight == 0 || self.backend.max_attempts == 0 || self.backend.embed_batch == 0 {
            return bad("backend.max_in_flight, max_attempts and embed_batch must be positive".into());
        }
        if self.backend.embed_dim == 0 {
            return bad("backend.embed_dim must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.synth.positive_rate) || !(0.0..=1.0).contains(&self.synth.prediction_noise) {
            return bad("synth rates must lie in [0, 1]".into());
        }
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        self.base_dir.join(p)
    }

    pub fn artifacts(&self) -> PathBuf {
        self.resolve(&self.artifacts_dir)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) =
        assignment.split_once('=').ok_or_else(|| KareError::Config(format!("override `{assignment}` lacks `=`")))?;
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.trim().split('.').collect();
    let (last, sections) = parts.split_last().expect("split yields one part");
    let mut cur = table;
    for s in sections {
        cur = cur
            .entry(s.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| KareError::Config(format!("`{s}` in `{key}` is not a section")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}
