//! Artifact and input file formats.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use kare_core::ehr::{check_readmission_label, CodeBook, MedicalCode, PatientRecord, TaskId, Visit, Vocabulary};
use kare_core::kg::{ConceptKg, KnowledgeGraph, Source, Triple};
use kare_core::paths::ExternalGraph;
use kare_core::vector::Embedding;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::embedding::EmbeddingMatrix;
use crate::error::{io_err, KareError, Result};

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path).map_err(io_err(path))?))
}

/// Writes through a temporary sibling and renames, creating parent dirs.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(io_err(path))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| KareError::Parse { path: path.to_path_buf(), line: e.line(), message: e.to_string() })
}

/// One JSON value per line; blank lines and lines starting with `#` are
/// skipped.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<(usize, T)>> {
    let text = read_text(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let value = serde_json::from_str(line)
            .map_err(|e| KareError::Parse { path: path.to_path_buf(), line: i + 1, message: e.to_string() })?;
        out.push((i + 1, value));
    }
    Ok(out)
}

pub fn jsonl_bytes<T: Serialize>(header: Option<&str>, items: impl IntoIterator<Item = T>) -> Vec<u8> {
    let mut out = String::new();
    if let Some(h) = header {
        out.push_str("# ");
        out.push_str(h);
        out.push('\n');
    }
    for item in items {
        out.push_str(&serde_json::to_string(&item).expect("serializable"));
        out.push('\n');
    }
    out.into_bytes()
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<()> {
    write_atomic(path, &jsonl_bytes(None, items))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VisitLine {
    timestamp: i64,
    #[serde(default)]
    conditions: Vec<String>,
    #[serde(default)]
    procedures: Vec<String>,
    #[serde(default)]
    medications: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PatientLine {
    patient_id: String,
    visits: Vec<VisitLine>,
    #[serde(default)]
    labels: BTreeMap<TaskId, u8>,
}

pub fn load_codebook(path: &Path) -> Result<CodeBook> {
    read_json(path)
}

pub fn save_codebook(path: &Path, book: &CodeBook) -> Result<()> {
    write_json(path, book)
}

/// Loads, resolves and validates a cohort; records come back sorted by id.
/// With `check_window`, stored readmission labels must agree with visit gaps.
pub fn load_cohort(path: &Path, book: &CodeBook, check_window: Option<u32>) -> Result<Vec<PatientRecord>> {
    let mut seen = BTreeSet::new();
    let mut records = Vec::new();
    for (line, p) in read_jsonl::<PatientLine>(path)? {
        let err = |message: String| KareError::Parse { path: path.to_path_buf(), line, message };
        let resolve = |vocab: Vocabulary, codes: &[String]| -> Result<Vec<MedicalCode>> {
            codes
                .iter()
                .map(|c| book.resolve(vocab, c).ok_or_else(|| err(format!("unknown {vocab} code {c:?}"))))
                .collect()
        };
        let visits = p
            .visits
            .iter()
            .enumerate()
            .map(|(i, v)| {
                Ok(Visit {
                    index: i,
                    timestamp: v.timestamp,
                    conditions: resolve(Vocabulary::Condition, &v.conditions)?,
                    procedures: resolve(Vocabulary::Procedure, &v.procedures)?,
                    medications: resolve(Vocabulary::Medication, &v.medications)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let record = PatientRecord { patient_id: p.patient_id, visits, labels: p.labels };
        record.validate().map_err(|e| err(e.to_string()))?;
        if let Some(window) = check_window {
            if record.visits.len() >= 2 {
                check_readmission_label(&record, window).map_err(|e| err(e.to_string()))?;
            }
        }
        if !seen.insert(record.patient_id.clone()) {
            return Err(err(format!("duplicate patient id {:?}", record.patient_id)));
        }
        records.push(record);
    }
    records.sort_by(|a, b| a.patient_id.cmp(&b.patient_id));
    Ok(records)
}

pub fn cohort_bytes(records: &[PatientRecord]) -> Vec<u8> {
    let codes = |v: &[MedicalCode]| v.iter().map(|c| c.code.clone()).collect();
    jsonl_bytes(
        None,
        records.iter().map(|r| PatientLine {
            patient_id: r.patient_id.clone(),
            visits: r
                .visits
                .iter()
                .map(|v| VisitLine {
                    timestamp: v.timestamp,
                    conditions: codes(&v.conditions),
                    procedures: codes(&v.procedures),
                    medications: codes(&v.medications),
                })
                .collect(),
            labels: r.labels.clone(),
        }),
    )
}

pub fn save_cohort(path: &Path, records: &[PatientRecord]) -> Result<()> {
    write_atomic(path, &cohort_bytes(records))
}

/// `head<TAB>relation<TAB>tail` lines; blank and `#` lines are skipped.
pub fn load_external_kg(path: &Path) -> Result<ExternalGraph> {
    let text = read_text(path)?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let parts: Vec<&str> = line.split('\t').map(str::trim).collect();
        if parts.len() != 3 || parts.iter().any(|p| p.is_empty()) {
            return Err(KareError::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: "expected head<TAB>relation<TAB>tail".into(),
            });
        }
        rows.push((parts[0], parts[1], parts[2]));
    }
    Ok(ExternalGraph::from_edges(rows))
}

pub fn external_kg_bytes(rows: &[(String, String, String)]) -> Vec<u8> {
    let mut out = String::new();
    for (h, r, t) in rows {
        out.push_str(&format!("{h}\t{r}\t{t}\n"));
    }
    out.into_bytes()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Document {
    pub id: String,
    pub text: String,
}

/// Corpus documents with their sidecar embeddings, row i ↔ line i.
pub fn load_corpus(path: &Path, embeddings: &Path) -> Result<Vec<(Document, Embedding)>> {
    let docs: Vec<Document> = read_jsonl(path)?.into_iter().map(|(_, d)| d).collect();
    let matrix = EmbeddingMatrix::read(embeddings)?;
    if matrix.rows.len() != docs.len() {
        return Err(KareError::Format {
            path: embeddings.to_path_buf(),
            message: format!("{} embedding rows for {} documents", matrix.rows.len(), docs.len()),
        });
    }
    Ok(docs.into_iter().zip(matrix.rows).collect())
}

type Row = (String, String, String);

fn row(t: &Triple) -> Row {
    (t.head.clone(), t.relation.clone(), t.tail.clone())
}

fn triple(path: &Path, (h, r, t): &Row) -> Result<Triple> {
    Triple::new(h, r, t).map_err(|e| KareError::Format { path: path.to_path_buf(), message: e.to_string() })
}

#[derive(Debug, Serialize, Deserialize)]
struct ConceptKgFile {
    concept: MedicalCode,
    triples: Vec<(String, String, String, Source)>,
}

fn file_safe(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || matches!(c, '.' | '-' | '_') { c } else { '_' }).collect()
}

pub fn concept_file_name(c: &MedicalCode) -> String {
    format!("{}-{}.json", c.vocabulary, file_safe(&c.code))
}

pub fn write_concept_kg(dir: &Path, kg: &ConceptKg) -> Result<PathBuf> {
    let file = ConceptKgFile {
        concept: kg.concept.clone(),
        triples: kg.sourced().map(|s| (s.triple.head, s.triple.relation, s.triple.tail, s.source)).collect(),
    };
    let path = dir.join(concept_file_name(&kg.concept));
    write_json(&path, &file)?;
    Ok(path)
}

pub fn read_concept_kg(path: &Path) -> Result<ConceptKg> {
    let file: ConceptKgFile = read_json(path)?;
    let mut kg = ConceptKg::new(file.concept);
    for (h, r, t, s) in file.triples {
        kg.insert(triple(path, &(h, r, t))?, s);
    }
    Ok(kg)
}

#[derive(Debug, Serialize, Deserialize)]
struct GraphFile {
    triples: Vec<(String, String, String, BTreeSet<Source>)>,
    membership: BTreeMap<String, Vec<Row>>,
}

pub fn write_graph(path: &Path, g: &KnowledgeGraph) -> Result<()> {
    let file = GraphFile {
        triples: g.triples.iter().map(|(t, s)| (t.head.clone(), t.relation.clone(), t.tail.clone(), s.clone())).collect(),
        membership: g.membership.iter().map(|(k, ts)| (k.clone(), ts.iter().map(row).collect())).collect(),
    };
    write_json(path, &file)
}

pub fn read_graph(path: &Path) -> Result<KnowledgeGraph> {
    let file: GraphFile = read_json(path)?;
    let mut g = KnowledgeGraph::default();
    for (h, r, t, s) in file.triples {
        g.triples.insert(triple(path, &(h, r, t))?, s);
    }
    for (k, rows) in file.membership {
        let set = rows.iter().map(|r| triple(path, r)).collect::<Result<BTreeSet<_>>>()?;
        g.membership.insert(k, set);
    }
    Ok(g)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionLine {
    pub patient_id: String,
    pub task: TaskId,
    pub prediction: u8,
}

pub fn load_predictions(path: &Path) -> Result<BTreeMap<TaskId, BTreeMap<String, u8>>> {
    let mut out: BTreeMap<TaskId, BTreeMap<String, u8>> = BTreeMap::new();
    for (line, p) in read_jsonl::<PredictionLine>(path)? {
        if out.entry(p.task).or_default().insert(p.patient_id.clone(), p.prediction).is_some() {
            return Err(KareError::Parse {
                path: path.to_path_buf(),
                line,
                message: format!("duplicate prediction for ({}, {})", p.patient_id, p.task),
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use kare_core::synth::{generate_synthetic_cohort, VocabSizes};

    #[test]
    fn cohort_round_trip_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let cohort = generate_synthetic_cohort(3, 12, VocabSizes::default(), 0.25).unwrap();
        let path = dir.path().join("c.jsonl");
        save_cohort(&path, &cohort.records).unwrap();
        let loaded = load_cohort(&path, &cohort.codebook, Some(15)).unwrap();
        assert_eq!(loaded, cohort.records);
        assert_eq!(cohort_bytes(&loaded), fs::read(&path).unwrap());
    }

    #[test]
    fn cohort_errors_name_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let book = CodeBook::default();
        fs::write(&path, "{\"patient_id\":\"a\",\"visits\":[{\"timestamp\":0,\"conditions\":[\"X\"]}]}\n").unwrap();
        let err = load_cohort(&path, &book, None).unwrap_err().to_string();
        assert!(err.contains(":1:") && err.contains("unknown condition code"), "{err}");
    }

    #[test]
    fn external_kg_parsing() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("kg.tsv");
        fs::write(&path, "# comment\na\tr\tb\nb\tr\tb\n").unwrap();
        let g = load_external_kg(&path).unwrap();
        assert_eq!(g.edge_count(), 1);
        fs::write(&path, "a\tb\n").unwrap();
        assert!(load_external_kg(&path).is_err());
    }

    #[test]
    fn graph_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut g = KnowledgeGraph::default();
        let t = Triple::new("a", "r", "b").unwrap();
        g.triples.insert(t.clone(), [Source::Kg, Source::Llm].into());
        g.membership.insert("condition:C1".into(), [t].into());
        let path = dir.path().join("g.json");
        write_graph(&path, &g).unwrap();
        assert_eq!(read_graph(&path).unwrap(), g);
    }
}
