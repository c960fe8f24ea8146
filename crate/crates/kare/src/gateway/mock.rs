//! Offline backends: deterministic stand-ins for a chat model and an
//! embedding model, plus scripted doubles for tests.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::Mutex;

use kare_core::text::{parse_bracket_list, parse_triples};
use kare_core::vector::{normalized, Embedding};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use super::templates::{CHAIN_GEN, KG_FROM_LLM, KG_FROM_TEXT, SUMMARY_COMBINE, SUMMARY_GENERAL, SUMMARY_THEME};
use super::{BackendError, ChatBackend, EmbedBackend, Prompt};

fn digest(parts: &[&str]) -> [u8; 32] {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.as_bytes());
        h.update([0x1f]);
    }
    h.finalize().into()
}

fn hash64(parts: &[&str]) -> u64 {
    u64::from_le_bytes(digest(parts)[..8].try_into().expect("8 bytes"))
}

/// Replies with the bound values, one per line in binding-name order.
#[derive(Debug, Clone, Copy, Default)]
pub struct EchoChat;

impl ChatBackend for EchoChat {
    fn id(&self) -> String {
        "echo".into()
    }

    fn complete(&self, prompt: &Prompt<'_>) -> Result<String, BackendError> {
        Ok(prompt.bindings.values().cloned().collect::<Vec<_>>().join("\n"))
    }
}

/// Replays queued responses and records every call.
#[derive(Debug, Default)]
pub struct ScriptedChat {
    responses: Mutex<VecDeque<Result<String, BackendError>>>,
    transcript: Mutex<Vec<(String, BTreeMap<String, String>)>>,
}

impl ScriptedChat {
    pub fn new(responses: Vec<Result<String, BackendError>>) -> Self {
        ScriptedChat { responses: Mutex::new(responses.into()), transcript: Mutex::default() }
    }

    pub fn transcript(&self) -> Vec<(String, BTreeMap<String, String>)> {
        self.transcript.lock().expect("transcript lock").clone()
    }
}

impl ChatBackend for ScriptedChat {
    fn id(&self) -> String {
        "scripted".into()
    }

    fn complete(&self, prompt: &Prompt<'_>) -> Result<String, BackendError> {
        self.transcript.lock().expect("transcript lock").push((prompt.template_id.to_string(), prompt.bindings.clone()));
        self.responses
            .lock()
            .expect("responses lock")
            .pop_front()
            .unwrap_or_else(|| Err(BackendError::fatal("script exhausted")))
    }
}

const ENTITIES: &[&str] = &[
    "kidney injury",
    "hypotension",
    "tissue hypoxia",
    "fluid overload",
    "lactic acidosis",
    "systemic infection",
    "inflammation",
    "reduced cardiac output",
    "arrhythmia",
    "bleeding risk",
    "immune suppression",
    "confusion",
    "malnutrition",
    "pressure ulcer",
    "pulmonary edema",
    "electrolyte imbalance",
    "hyperglycemia",
    "hospital readmission",
    "multi-organ dysfunction",
    "blood clot",
    "respiratory distress",
    "liver dysfunction",
    "low hemoglobin",
    "dehydration",
    "falls",
    "medication toxicity",
    "poor wound healing",
    "functional decline",
    "chronic inflammation",
    "vascular damage",
];

const RELATIONS: &[&str] = &[
    "causes",
    "increases risk of",
    "treated with",
    "associated with",
    "worsens",
    "leads to",
    "may indicate",
    "complicates",
    "reduces",
];

/// Surface variant of a name: the same concept written differently, so the
/// clustering stage has synonyms to merge.
fn variant(name: &str, pick: u64) -> String {
    match pick % 5 {
        0 | 1 => name.to_string(),
        2 => {
            let mut c = name.chars();
            c.next().map(|f| f.to_uppercase().chain(c).collect()).unwrap_or_default()
        }
        3 if !name.ends_with('s') => format!("{name}s"),
        _ => name.replace(' ', "-"),
    }
}

fn fmt_triples(triples: &[(String, String, String)]) -> String {
    let items: Vec<String> = triples.iter().map(|(h, r, t)| format!("[{h}, {r}, {t}]")).collect();
    format!("[{}]", items.join(",\n"))
}

fn concept_facts(concept: &str, salt: &str, out: &mut Vec<(String, String, String)>) {
    let s = hash64(&[salt, &concept.to_lowercase()]);
    let e1 = ENTITIES[(s % ENTITIES.len() as u64) as usize];
    let e2 = ENTITIES[((s >> 16) % ENTITIES.len() as u64) as usize];
    let r1 = RELATIONS[((s >> 32) % RELATIONS.len() as u64) as usize];
    let r2 = RELATIONS[((s >> 40) % RELATIONS.len() as u64) as usize];
    out.push((concept.to_string(), variant(r1, s >> 48), variant(e1, s >> 52)));
    if e1 != e2 {
        out.push((variant(e1, s >> 56), r2.to_string(), e2.to_string()));
    }
}

/// Deterministic template-aware generator. Output depends only on the
/// template id, the bound values and the determinism knob.
#[derive(Debug, Clone, Copy, Default)]
pub struct SyntheticChat;

impl SyntheticChat {
    fn kg_from_llm(concepts: &[String]) -> String {
        let mut out = Vec::new();
        for c in concepts {
            concept_facts(c, "llm", &mut out);
        }
        for pair in concepts.windows(2).take(4) {
            out.push((pair[0].clone(), "associated with".into(), pair[1].clone()));
        }
        fmt_triples(&out)
    }

    fn kg_from_text(text: &str, concepts: &[String]) -> String {
        let lower = text.to_lowercase();
        let mentioned: Vec<&String> = concepts.iter().filter(|c| lower.contains(&c.to_lowercase())).collect();
        let mut out = Vec::new();
        for c in &mentioned {
            concept_facts(c, &format!("text:{}", hash64(&[text])), &mut out);
        }
        for pair in mentioned.windows(2) {
            out.push((pair[0].to_string(), "co-occurs with".into(), pair[1].to_string()));
        }
        out.truncate(12);
        fmt_triples(&out)
    }

    fn summarize(triples: &str, theme: Option<&str>) -> String {
        let parsed = parse_triples(triples);
        let mut degree: BTreeMap<&str, usize> = BTreeMap::new();
        for t in &parsed {
            *degree.entry(t.head.as_str()).or_default() += 1;
            *degree.entry(t.tail.as_str()).or_default() += 1;
        }
        let focus = degree.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0))).map(|(k, _)| *k).unwrap_or("these concepts");
        let mut s = match theme {
            Some(theme) => format!("For {theme}, this group centres on {focus}."),
            None => format!("This group centres on {focus}."),
        };
        for t in parsed.iter().take(6) {
            s.push_str(&format!(" {} {} {}.", t.head, t.relation, t.tail));
        }
        s
    }

    fn combine(summaries: &str) -> String {
        let firsts: Vec<&str> = summaries
            .split("\n\n")
            .filter_map(|part| {
                let part = part.trim().trim_start_matches(|c: char| c.is_ascii_digit() || c == '.' || c == ' ');
                part.split_inclusive('.').next().map(str::trim)
            })
            .filter(|s| !s.is_empty())
            .collect();
        firsts.join(" ")
    }

    fn chain(task: &str, context: &str, label: &str, determinism: u64) -> String {
        let knob = determinism.to_string();
        let s = hash64(&["chain", task, context, label, &knob]);
        let conditions: Vec<&str> = context
            .lines()
            .filter_map(|l| l.trim().strip_prefix("Conditions:"))
            .flat_map(|l| l.split(','))
            .map(str::trim)
            .filter(|c| !c.is_empty())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .take(3)
            .collect();
        let listed = if conditions.is_empty() { "the recorded findings".to_string() } else { conditions.join(", ") };
        let supported = context.contains("# Supplementary Knowledge");
        let mut out = format!("1. The patient history documents {listed}.\n");
        out.push_str(if supported {
            "2. The supplementary knowledge links these findings to downstream complications.\n"
        } else {
            "2. No supplementary knowledge is available, so the assessment rests on the history alone.\n"
        });
        out.push_str(&format!("3. Weighing these factors, the outcome label is {label}.\n"));
        out.push_str(&format!("Prediction: {label}\nConfidence: {}", 1 + s % 5));
        out
    }
}

impl ChatBackend for SyntheticChat {
    fn id(&self) -> String {
        "synthetic-v1".into()
    }

    fn complete(&self, prompt: &Prompt<'_>) -> Result<String, BackendError> {
        let b = |name: &str| {
            prompt.bindings.get(name).map(String::as_str).ok_or_else(|| BackendError::fatal(format!("missing binding {name}")))
        };
        Ok(match prompt.template_id {
            KG_FROM_LLM => Self::kg_from_llm(&parse_bracket_list(b("concepts")?)),
            KG_FROM_TEXT => Self::kg_from_text(b("text")?, &parse_bracket_list(b("concepts")?)),
            SUMMARY_GENERAL => Self::summarize(b("triples")?, None),
            SUMMARY_THEME => Self::summarize(b("triples")?, Some(b("theme")?)),
            SUMMARY_COMBINE => Self::combine(b("summaries")?),
            CHAIN_GEN => Self::chain(b("task")?, b("context")?, b("label")?, prompt.determinism),
            other => return Err(BackendError::fatal(format!("synthetic backend has no behaviour for {other}"))),
        })
    }
}

/// Text to a deterministic unit vector. Texts that differ only in case,
/// punctuation or a trailing plural `s` land close together.
#[derive(Debug, Clone, Copy)]
pub struct HashEmbedder {
    dim: usize,
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Self {
        HashEmbedder { dim }
    }

    fn gaussian(&self, text: &str) -> Vec<f64> {
        let mut rng = ChaCha8Rng::from_seed(digest(&["hash-embed", text]));
        (0..self.dim).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    fn canonical(text: &str) -> String {
        text.to_lowercase()
            .split(|c: char| !c.is_alphanumeric())
            .filter(|w| !w.is_empty())
            .map(|w| if w.len() > 3 && w.ends_with('s') && !w.ends_with("ss") { &w[..w.len() - 1] } else { w })
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn embed_text(&self, text: &str) -> Embedding {
        let base = self.gaussian(&Self::canonical(text));
        let exact = self.gaussian(text);
        let v: Vec<f32> = base.iter().zip(&exact).map(|(a, b)| (a + 0.05 * b) as f32).collect();
        normalized(&v)
    }
}

impl EmbedBackend for HashEmbedder {
    fn id(&self) -> String {
        format!("hash-{}", self.dim)
    }

    fn dim(&self) -> Option<usize> {
        Some(self.dim)
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Embedding>, BackendError> {
        Ok(texts.iter().map(|t| self.embed_text(t)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use kare_core::training::parse_candidate;
    use kare_core::vector::cosine;

    fn prompt<'a>(id: &'a str, bindings: &'a BTreeMap<String, String>, k: u64) -> Prompt<'a> {
        Prompt { template_id: id, bindings, text: "", max_tokens: 100, determinism: k }
    }

    fn bind(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn variants_embed_close_and_distinct_terms_far() {
        let e = HashEmbedder::new(64);
        let a = e.embed_text("kidney injury");
        assert!(cosine(&a, &e.embed_text("Kidney-injury")) > 0.99);
        assert!(cosine(&a, &e.embed_text("kidney injurys")) > 0.99);
        assert!(cosine(&a, &e.embed_text("hypotension")).abs() < 0.6);
        assert!((kare_core::vector::norm(&a) - 1.0).abs() < 1e-5);
    }

    #[test]
    fn llm_triples_keep_concept_names() {
        let b = bind(&[("concepts", "[sepsis, heparin]")]);
        let out = SyntheticChat.complete(&prompt(KG_FROM_LLM, &b, 0)).unwrap();
        let triples = parse_triples(&out);
        assert!(triples.iter().any(|t| t.head == "sepsis"));
        assert!(triples.iter().any(|t| t.head == "heparin"));
        assert_eq!(out, SyntheticChat.complete(&prompt(KG_FROM_LLM, &b, 0)).unwrap());
    }

    #[test]
    fn text_extraction_only_uses_mentioned_concepts() {
        let b = bind(&[("text", "Sepsis often follows pneumonia."), ("concepts", "[sepsis, pneumonia, heparin]")]);
        let triples = parse_triples(&SyntheticChat.complete(&prompt(KG_FROM_TEXT, &b, 0)).unwrap());
        assert!(!triples.is_empty());
        assert!(triples.iter().all(|t| t.head != "heparin" && t.tail != "heparin"));
    }

    #[test]
    fn chains_parse_and_vary_with_knob() {
        let b = bind(&[("task", "t"), ("context", "Conditions: sepsis, anemia"), ("label", "1")]);
        let confidences: BTreeSet<u8> = (0..12)
            .map(|k| parse_candidate(&SyntheticChat.complete(&prompt(CHAIN_GEN, &b, k)).unwrap()).unwrap().confidence)
            .collect();
        assert!(confidences.len() > 1);
        assert!(confidences.iter().all(|c| (1..=5).contains(c)));
    }

    #[test]
    fn combine_keeps_one_sentence_per_part() {
        let out = SyntheticChat::combine("1. First a. more.\n\n2. Second b. more.");
        assert_eq!(out, "First a. Second b.");
    }
}
