//! Prompt templates with `{name}` placeholders.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use super::GatewayError;

pub const KG_FROM_TEXT: &str = "kg_from_text";
pub const KG_FROM_LLM: &str = "kg_from_llm";
pub const SUMMARY_GENERAL: &str = "summary_general";
pub const SUMMARY_THEME: &str = "summary_theme";
pub const SUMMARY_COMBINE: &str = "summary_combine";
pub const CHAIN_GEN: &str = "chain_gen";

const BUILTIN: &[(&str, &str)] = &[
    (KG_FROM_TEXT, include_str!("../../assets/prompts/kg_from_text.txt")),
    (KG_FROM_LLM, include_str!("../../assets/prompts/kg_from_llm.txt")),
    (SUMMARY_GENERAL, include_str!("../../assets/prompts/summary_general.txt")),
    (SUMMARY_THEME, include_str!("../../assets/prompts/summary_theme.txt")),
    (SUMMARY_COMBINE, include_str!("../../assets/prompts/summary_combine.txt")),
    (CHAIN_GEN, include_str!("../../assets/prompts/chain_gen.txt")),
];

#[derive(Debug, Clone, PartialEq, Eq)]
enum Piece {
    Text(String),
    Slot(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub id: String,
    pub text: String,
    pieces: Vec<Piece>,
    pub placeholders: BTreeSet<String>,
}

fn is_name(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
}

impl PromptTemplate {
    /// `{name}` with a lowercase identifier is a placeholder; any other
    /// brace is literal text.
    pub fn parse(id: &str, text: &str) -> Self {
        let mut pieces = Vec::new();
        let mut placeholders = BTreeSet::new();
        let mut literal = String::new();
        let mut rest = text;
        while let Some(open) = rest.find('{') {
            let after = &rest[open + 1..];
            match after.find('}') {
                Some(close) if is_name(&after[..close]) => {
                    literal.push_str(&rest[..open]);
                    if !literal.is_empty() {
                        pieces.push(Piece::Text(std::mem::take(&mut literal)));
                    }
                    let name = after[..close].to_string();
                    placeholders.insert(name.clone());
                    pieces.push(Piece::Slot(name));
                    rest = &after[close + 1..];
                }
                _ => {
                    literal.push_str(&rest[..=open]);
                    rest = after;
                }
            }
        }
        literal.push_str(rest);
        if !literal.is_empty() {
            pieces.push(Piece::Text(literal));
        }
        PromptTemplate { id: id.to_string(), text: text.to_string(), pieces, placeholders }
    }

    /// Substitutes every placeholder; unbound placeholders and bindings that
    /// name no placeholder are errors.
    pub fn render(&self, bindings: &BTreeMap<String, String>) -> Result<String, GatewayError> {
        if let Some(missing) = self.placeholders.iter().find(|p| !bindings.contains_key(*p)) {
            return Err(GatewayError::Render { template: self.id.clone(), message: format!("unbound placeholder {{{missing}}}") });
        }
        if let Some(extra) = bindings.keys().find(|k| !self.placeholders.contains(*k)) {
            return Err(GatewayError::Render { template: self.id.clone(), message: format!("binding {extra:?} has no placeholder") });
        }
        let mut out = String::new();
        for piece in &self.pieces {
            match piece {
                Piece::Text(t) => out.push_str(t),
                Piece::Slot(name) => out.push_str(&bindings[name]),
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateSet {
    templates: BTreeMap<String, PromptTemplate>,
}

impl TemplateSet {
    pub fn builtin() -> Self {
        let templates = BUILTIN.iter().map(|(id, text)| (id.to_string(), PromptTemplate::parse(id, text))).collect();
        TemplateSet { templates }
    }

    /// Built-ins overridden by any `<id>.txt` found in `dir`.
    pub fn with_overrides(dir: &Path) -> Result<Self, GatewayError> {
        let mut set = Self::builtin();
        for (id, _) in BUILTIN {
            let path = dir.join(format!("{id}.txt"));
            if path.exists() {
                let text = fs::read_to_string(&path)
                    .map_err(|e| GatewayError::Render { template: id.to_string(), message: format!("{}: {e}", path.display()) })?;
                set.templates.insert(id.to_string(), PromptTemplate::parse(id, &text));
            }
        }
        Ok(set)
    }

    pub fn get(&self, id: &str) -> Result<&PromptTemplate, GatewayError> {
        self.templates.get(id).ok_or_else(|| GatewayError::UnknownTemplate(id.to_string()))
    }

    /// Digest over every template id and text.
    pub fn digest(&self) -> String {
        let mut material = Vec::new();
        for t in self.templates.values() {
            material.extend_from_slice(t.id.as_bytes());
            material.push(0x1f);
            material.extend_from_slice(t.text.as_bytes());
            material.push(0x1e);
        }
        crate::io::sha256_hex(&material)
    }

    pub fn insert(&mut self, template: PromptTemplate) {
        self.templates.insert(template.id.clone(), template);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn parse_and_render() {
        let t = PromptTemplate::parse("t", "a {x} b {y}{x} {Not} {}");
        assert_eq!(t.placeholders, ["x".to_string(), "y".to_string()].into());
        assert_eq!(t.render(&b(&[("x", "1"), ("y", "{x}")])).unwrap(), "a 1 b {x}1 {Not} {}");
        assert!(t.render(&b(&[("x", "1")])).is_err());
        assert!(t.render(&b(&[("x", "1"), ("y", "2"), ("z", "3")])).is_err());
    }

    #[test]
    fn builtin_placeholders() {
        let set = TemplateSet::builtin();
        let names = |id| set.get(id).unwrap().placeholders.iter().cloned().collect::<Vec<_>>();
        assert_eq!(names(KG_FROM_TEXT), ["concepts", "text"]);
        assert_eq!(names(KG_FROM_LLM), ["concepts"]);
        assert_eq!(names(SUMMARY_GENERAL), ["triples"]);
        assert_eq!(names(SUMMARY_THEME), ["theme", "theme_terms", "triples"]);
        assert_eq!(names(SUMMARY_COMBINE), ["summaries"]);
        assert_eq!(names(CHAIN_GEN), ["context", "label", "task"]);
    }
}
