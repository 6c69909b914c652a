//! Prompt catalog: prompt id → template with named `{placeholder}` slots.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::seeding::sha256_hex;

const DEFAULT_CATALOG: &str = include_str!("../resources/prompts.toml");

pub mod ids {
    pub const OBJECTS: &str = "verbalize.objects";
    pub const SCENE_TEXT: &str = "verbalize.scene_text";
    pub const NARRATION: &str = "verbalize.narration";
    pub const UNUSUAL: &str = "verbalize.unusual";
    pub const COMBINE: &str = "combine";
    pub const DETECT_STATEMENT: &str = "detect_statement";
    pub const MAC: &str = "mac";
    pub const ASR: &str = "asr";
    pub const AOR: &str = "aor";
    pub const ARR_SINGLE: &str = "arr_single";
    pub const ARR_MULTI: &str = "arr_multi";
    pub const HARDNEG_RETRY: &str = "hardneg.retry";
    pub const REPROMPT_CHOICE: &str = "reprompt.choice";
    pub const REPROMPT_CHOICES: &str = "reprompt.choices";
}

/// Prompts the harness issues and the placeholders each must contain.
pub const REQUIRED: &[(&str, &[&str])] = &[
    (ids::OBJECTS, &[]),
    (ids::SCENE_TEXT, &[]),
    (ids::NARRATION, &[]),
    (ids::UNUSUAL, &[]),
    (ids::COMBINE, &["objects", "scene_text", "narration", "unusualness"]),
    (ids::DETECT_STATEMENT, &["description", "options"]),
    (ids::MAC, &["definitions", "input"]),
    (ids::ASR, &["input", "options"]),
    (ids::AOR, &["input", "statement_template"]),
    (ids::ARR_SINGLE, &["input", "options"]),
    (ids::ARR_MULTI, &["input", "options", "k"]),
    ("hardneg.action_alter", &["positive"]),
    ("hardneg.reason_alter", &["positive"]),
    ("hardneg.adjective_alter", &["positive"]),
    ("hardneg.object_swap", &["positive"]),
    ("hardneg.statement_alter", &["positive"]),
    (ids::HARDNEG_RETRY, &["problem"]),
    (ids::REPROMPT_CHOICE, &["count"]),
    (ids::REPROMPT_CHOICES, &["count", "k"]),
];

#[derive(Deserialize)]
struct CatalogFile {
    prompts: BTreeMap<String, String>,
}

#[derive(Debug, Clone)]
pub struct PromptCatalog {
    prompts: BTreeMap<String, String>,
    digest: String,
}

fn placeholders(template: &str) -> BTreeSet<&str> {
    let mut out = BTreeSet::new();
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close)
                if close > 0
                    && after[..close]
                        .chars()
                        .all(|c| c.is_ascii_lowercase() || c == '_') =>
            {
                out.insert(&after[..close]);
                rest = &after[close + 1..];
            }
            _ => rest = after,
        }
    }
    out
}

impl Default for PromptCatalog {
    fn default() -> Self {
        Self::from_toml_str(DEFAULT_CATALOG).expect("bundled prompt catalog is valid")
    }
}

impl PromptCatalog {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: CatalogFile =
            toml::from_str(text).map_err(|e| Error::PromptCatalog(e.to_string()))?;
        Self::from_map(file.prompts)
    }

    pub fn from_map(prompts: BTreeMap<String, String>) -> Result<Self> {
        for (id, needed) in REQUIRED {
            let template = prompts
                .get(*id)
                .ok_or_else(|| Error::PromptCatalog(format!("missing prompt {id:?}")))?;
            let present = placeholders(template);
            for p in *needed {
                if !present.contains(p) {
                    return Err(Error::PromptCatalog(format!(
                        "prompt {id:?} lacks placeholder {{{p}}}"
                    )));
                }
            }
        }
        let canonical = serde_json::to_vec(&prompts)?;
        Ok(Self {
            digest: sha256_hex(&canonical),
            prompts,
        })
    }

    /// Content digest recorded in every report.
    pub fn digest(&self) -> &str {
        &self.digest
    }

    pub fn template(&self, id: &str) -> Result<&str> {
        self.prompts
            .get(id)
            .map(String::as_str)
            .ok_or_else(|| Error::PromptCatalog(format!("unknown prompt id {id:?}")))
    }

    /// Fills every placeholder of a template. Missing values are an error.
    pub fn render(&self, id: &str, values: &[(&str, &str)]) -> Result<String> {
        let template = self.template(id)?;
        let names = placeholders(template);
        for name in &names {
            if !values.iter().any(|(k, _)| k == name) {
                return Err(Error::PromptCatalog(format!(
                    "prompt {id:?} needs a value for {{{name}}}"
                )));
            }
        }
        // single pass, so substituted values are never re-scanned
        let mut out = String::with_capacity(template.len());
        let mut rest = template;
        while let Some(open) = rest.find('{') {
            out.push_str(&rest[..open]);
            let after = &rest[open + 1..];
            let slot = after
                .find('}')
                .map(|close| &after[..close])
                .filter(|name| names.contains(name));
            match slot {
                Some(name) => {
                    let value = values.iter().find(|(k, _)| *k == name).unwrap().1;
                    out.push_str(value);
                    rest = &after[name.len() + 1..];
                }
                None => {
                    out.push('{');
                    rest = after;
                }
            }
        }
        out.push_str(rest);
        Ok(out)
    }
}

/// Numbered option list with 1-based labels, one per line.
pub fn numbered_options<S: AsRef<str>>(options: &[S]) -> String {
    options
        .iter()
        .enumerate()
        .map(|(i, o)| format!("{}. {}", i + 1, o.as_ref()))
        .collect::<Vec<_>>()
        .join("\n")
}
