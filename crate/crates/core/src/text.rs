//! Tolerant parsing of bracketed triple lists emitted by language models.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::kg::Triple;

fn strip_quotes(s: &str) -> &str {
    let s = s.trim();
    for q in ['"', '\'', '`'] {
        if s.len() >= 2 && s.starts_with(q) && s.ends_with(q) {
            return s[1..s.len() - 1].trim();
        }
    }
    s
}

/// Extracts every innermost `[a, b, c]` group from `text`.
///
/// Items are trimmed and unquoted; groups that do not have exactly three
/// non-empty, control-free parts are dropped one by one. Never fails.
pub fn parse_bracketed_triples(text: &str) -> Vec<(String, String, String)> {
    let mut out = Vec::new();
    let mut open: Option<usize> = None;
    for (i, ch) in text.char_indices() {
        match ch {
            '[' => open = Some(i + 1),
            ']' => {
                if let Some(start) = open.take() {
                    let parts: Vec<&str> = text[start..i].split(',').map(strip_quotes).collect();
                    let well_formed = parts.len() == 3
                        && parts.iter().all(|p| !p.is_empty() && !p.chars().any(char::is_control));
                    if well_formed {
                        out.push((parts[0].to_string(), parts[1].to_string(), parts[2].to_string()));
                    }
                }
            }
            _ => {}
        }
    }
    out
}

/// [`parse_bracketed_triples`] converted to validated [`Triple`]s.
pub fn parse_triples(text: &str) -> Vec<Triple> {
    parse_bracketed_triples(text).into_iter().filter_map(|(h, r, t)| Triple::new(&h, &r, &t).ok()).collect()
}

/// Renders names as `[a, b, c]`, the concept-list format used in prompts.
pub fn bracket_list<'a>(items: impl IntoIterator<Item = &'a str>) -> String {
    let mut s = String::from("[");
    for (i, item) in items.into_iter().enumerate() {
        if i > 0 {
            s.push_str(", ");
        }
        s.push_str(item);
    }
    s.push(']');
    s
}

/// Inverse of [`bracket_list`] for a single flat list.
pub fn parse_bracket_list(text: &str) -> Vec<String> {
    let inner = text.trim().trim_start_matches('[').trim_end_matches(']');
    inner.split(',').map(strip_quotes).filter(|s| !s.is_empty()).map(|s| s.to_string()).collect()
}
