//! Parsers for free-text model answers.

use std::collections::HashSet;
use std::sync::LazyLock;

use regex::Regex;

static INTEGER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\d+").unwrap());
static LIST_MARKER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?:^|\s)\d+[.)]\s*").unwrap());

pub const MAX_OBJECTS: usize = 5;

/// First integer in the answer, as a 0-based position among `n` options.
/// Out-of-range numbers and answers without a number yield `None`.
pub fn parse_choice(text: &str, n: usize) -> Option<usize> {
    let m = INTEGER.find(text)?;
    let label: usize = m.as_str().parse().ok()?;
    (1..=n).contains(&label).then(|| label - 1)
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RankedParse {
    /// 0-based positions, best first, no duplicates, at most `k`.
    pub positions: Vec<usize>,
    pub had_duplicates: bool,
    pub had_out_of_range: bool,
}

impl RankedParse {
    pub fn is_short(&self, k: usize) -> bool {
        self.positions.len() < k
    }
}

/// Every integer in answer order, deduplicated and truncated to `k`.
pub fn parse_ranked(text: &str, n: usize, k: usize) -> RankedParse {
    let mut out = RankedParse::default();
    let mut seen = HashSet::new();
    for m in INTEGER.find_iter(text) {
        let Ok(label) = m.as_str().parse::<usize>() else {
            out.had_out_of_range = true;
            continue;
        };
        if !(1..=n).contains(&label) {
            out.had_out_of_range = true;
            continue;
        }
        if !seen.insert(label) {
            out.had_duplicates = true;
            continue;
        }
        if out.positions.len() < k {
            out.positions.push(label - 1);
        }
    }
    out
}

fn clean_object(raw: &str) -> Option<String> {
    let s = raw
        .trim()
        .trim_start_matches(['-', '*', '•'])
        .trim()
        .trim_end_matches(['.', ',', ';', ':'])
        .trim();
    let lower = s.to_lowercase();
    let s = ["a ", "an ", "the "]
        .iter()
        .find(|a| lower.starts_with(*a))
        .map_or(s, |a| s[a.len()..].trim_start());
    (!s.is_empty()).then(|| s.to_string())
}

/// Object list from a numbered, comma-separated or line-per-object answer.
/// Articles are stripped, duplicates removed (case-insensitive), at most five kept.
pub fn parse_objects(text: &str) -> Vec<String> {
    let chunks: Vec<&str> = if LIST_MARKER.is_match(text) {
        LIST_MARKER.split(text).collect()
    } else if text.lines().filter(|l| !l.trim().is_empty()).count() > 1 {
        text.lines().collect()
    } else {
        text.split([',', ';']).collect()
    };
    let mut seen = HashSet::new();
    chunks
        .into_iter()
        .filter_map(clean_object)
        .filter(|o| seen.insert(o.to_lowercase()))
        .take(MAX_OBJECTS)
        .collect()
}

/// Primary/secondary objects from an AOR fill-in answer.
///
/// Accepts `primary: X` / `secondary: Y` lines, or two values separated by a newline,
/// semicolon, `|` or comma.
pub fn parse_fill(text: &str) -> Option<(String, String)> {
    let mut primary = None;
    let mut secondary = None;
    let mut keyed = false;
    for line in text.lines() {
        if let Some((key, value)) = line.split_once(':') {
            let key = key.trim().to_lowercase();
            keyed |= key.contains("primary") || key.contains("secondary");
            if key.contains("primary") {
                primary = clean_object(value);
            } else if key.contains("secondary") {
                secondary = clean_object(value);
            }
        }
    }
    if let (Some(p), Some(s)) = (&primary, &secondary) {
        return Some((p.clone(), s.clone()));
    }
    if keyed {
        return None;
    }
    for sep in ['\n', ';', '|', ','] {
        let parts: Vec<String> = text.split(sep).filter_map(clean_object).collect();
        if parts.len() == 2 {
            return Some((parts[0].clone(), parts[1].clone()));
        }
    }
    None
}
