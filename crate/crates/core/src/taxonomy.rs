//! Atypicality categories, their definitions and statement templates.
//!
//! The default resource ships with the crate (`resources/taxonomy.toml`) and can be
//! replaced by any document with the same shape: one table per category id holding
//! `name`, `definition` and (for the four two-object categories) `template`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

const DEFAULT_RESOURCE: &str = include_str!("../resources/taxonomy.toml");

const PRIMARY_SLOT: &str = "{primary}";
const SECONDARY_SLOT: &str = "{secondary}";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AtypicalityCategory {
    TR1,
    TR2,
    OIO,
    OR,
    NA,
}

use AtypicalityCategory::*;

impl AtypicalityCategory {
    pub const ALL: [AtypicalityCategory; 5] = [TR1, TR2, OIO, OR, NA];
    pub const ATYPICAL: [AtypicalityCategory; 4] = [TR1, TR2, OIO, OR];

    pub fn id(self) -> &'static str {
        match self {
            TR1 => "TR1",
            TR2 => "TR2",
            OIO => "OIO",
            OR => "OR",
            NA => "NA",
        }
    }

    pub fn long_name(self) -> &'static str {
        match self {
            TR1 => "Texture Replacement 1",
            TR2 => "Texture Replacement 2",
            OIO => "Object Inside Object",
            OR => "Object Replacement",
            NA => "Not Atypical",
        }
    }

    pub fn is_atypical(self) -> bool {
        self != NA
    }

    /// Position in [`AtypicalityCategory::ALL`].
    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for AtypicalityCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

/// The five categories in fixed order TR1, TR2, OIO, OR, NA.
pub fn all_categories() -> Vec<AtypicalityCategory> {
    AtypicalityCategory::ALL.to_vec()
}

pub fn atypical_categories() -> Vec<AtypicalityCategory> {
    AtypicalityCategory::ATYPICAL.to_vec()
}

struct Alias {
    tokens: &'static [&'static str],
    category: AtypicalityCategory,
    // Matched against the original token case. Two-letter abbreviations that are
    // also English words ("or", "na") only count when written in capitals.
    exact_case: bool,
}

const ALIASES: &[Alias] = &[
    Alias { tokens: &["texture", "replacement", "1"], category: TR1, exact_case: false },
    Alias { tokens: &["texture", "replacement", "one"], category: TR1, exact_case: false },
    Alias { tokens: &["tr", "1"], category: TR1, exact_case: false },
    Alias { tokens: &["tr1"], category: TR1, exact_case: false },
    Alias { tokens: &["texture", "replacement", "2"], category: TR2, exact_case: false },
    Alias { tokens: &["texture", "replacement", "two"], category: TR2, exact_case: false },
    Alias { tokens: &["tr", "2"], category: TR2, exact_case: false },
    Alias { tokens: &["tr2"], category: TR2, exact_case: false },
    Alias { tokens: &["object", "inside", "of", "object"], category: OIO, exact_case: false },
    Alias { tokens: &["object", "inside", "object"], category: OIO, exact_case: false },
    Alias { tokens: &["objectinsideobject"], category: OIO, exact_case: false },
    Alias { tokens: &["oio"], category: OIO, exact_case: false },
    Alias { tokens: &["object", "replacement"], category: OR, exact_case: false },
    Alias { tokens: &["objectreplacement"], category: OR, exact_case: false },
    Alias { tokens: &["OR"], category: OR, exact_case: true },
    Alias { tokens: &["not", "atypical"], category: NA, exact_case: false },
    Alias { tokens: &["non", "atypical"], category: NA, exact_case: false },
    Alias { tokens: &["notatypical"], category: NA, exact_case: false },
    Alias { tokens: &["NA"], category: NA, exact_case: true },
    Alias { tokens: &["N", "A"], category: NA, exact_case: true },
];

fn tokenize(text: &str) -> Vec<&str> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .collect()
}

fn alias_matches(alias: &Alias, tokens: &[&str]) -> bool {
    alias.tokens.len() <= tokens.len()
        && alias.tokens.iter().zip(tokens).all(|(want, got)| {
            if alias.exact_case {
                want == got
            } else {
                want.eq_ignore_ascii_case(got)
            }
        })
}

fn aliases_longest_first() -> Vec<&'static Alias> {
    let mut aliases: Vec<&Alias> = ALIASES.iter().collect();
    aliases.sort_by_key(|a| std::cmp::Reverse(a.tokens.len()));
    aliases
}

/// Finds every category mentioned in free text (case-insensitive names and aliases).
pub fn parse_category(answer_text: &str) -> Result<BTreeSet<AtypicalityCategory>> {
    let tokens = tokenize(answer_text);
    let aliases = aliases_longest_first();
    let mut found = BTreeSet::new();
    let mut i = 0;
    while i < tokens.len() {
        match aliases.iter().find(|a| alias_matches(a, &tokens[i..])) {
            Some(alias) => {
                found.insert(alias.category);
                i += alias.tokens.len();
            }
            None => i += 1,
        }
    }
    if found.is_empty() {
        Err(Error::UnrecognizedCategoryText(answer_text.to_string()))
    } else {
        Ok(found)
    }
}

impl FromStr for AtypicalityCategory {
    type Err = Error;

    /// Whole-string lookup: the text must be exactly one alias.
    fn from_str(s: &str) -> Result<Self> {
        let tokens = tokenize(s);
        ALIASES
            .iter()
            .find(|a| a.tokens.len() == tokens.len() && alias_matches(a, &tokens))
            .or_else(|| {
                // labels in files are identifiers, so accept "or"/"na" in any case here
                ALIASES.iter().find(|a| {
                    a.exact_case
                        && a.tokens.len() == tokens.len()
                        && a.tokens.iter().zip(&tokens).all(|(w, g)| w.eq_ignore_ascii_case(g))
                })
            })
            .map(|a| a.category)
            .ok_or_else(|| Error::UnrecognizedCategoryText(s.to_string()))
    }
}

impl Serialize for AtypicalityCategory {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(self.id())
    }
}

impl<'de> Deserialize<'de> for AtypicalityCategory {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A statement template with one `{primary}` and one `{secondary}` slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StatementTemplate {
    text: String,
    // literal text before, between and after the two slots
    pieces: [String; 3],
    primary_first: bool,
}

impl StatementTemplate {
    pub fn new(text: &str) -> Result<Self> {
        let count = |slot: &str| text.matches(slot).count();
        if count(PRIMARY_SLOT) != 1 || count(SECONDARY_SLOT) != 1 {
            return Err(Error::TaxonomyResource(format!(
                "template {text:?} must contain {PRIMARY_SLOT} and {SECONDARY_SLOT} exactly once"
            )));
        }
        let p = text.find(PRIMARY_SLOT).unwrap();
        let s = text.find(SECONDARY_SLOT).unwrap();
        let primary_first = p < s;
        let (first, first_len, second, second_len) = if primary_first {
            (p, PRIMARY_SLOT.len(), s, SECONDARY_SLOT.len())
        } else {
            (s, SECONDARY_SLOT.len(), p, PRIMARY_SLOT.len())
        };
        let pieces = [
            text[..first].to_string(),
            text[first + first_len..second].to_string(),
            text[second + second_len..].to_string(),
        ];
        if pieces[1].is_empty() {
            return Err(Error::TaxonomyResource(format!(
                "template {text:?} needs literal text between its slots"
            )));
        }
        Ok(Self {
            text: text.to_string(),
            pieces,
            primary_first,
        })
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn fill(&self, primary: &str, secondary: &str) -> String {
        let (a, b) = if self.primary_first {
            (primary, secondary)
        } else {
            (secondary, primary)
        };
        format!("{}{a}{}{b}{}", self.pieces[0], self.pieces[1], self.pieces[2])
    }

    /// Splits a rendered text back into (primary, secondary) if it follows this template.
    pub fn match_text(&self, text: &str) -> Option<(String, String)> {
        let rest = text.strip_prefix(self.pieces[0].as_str())?;
        let rest = rest.strip_suffix(self.pieces[2].as_str())?;
        let mid = rest.find(self.pieces[1].as_str())?;
        let a = &rest[..mid];
        let b = &rest[mid + self.pieces[1].len()..];
        if a.is_empty() || b.is_empty() {
            return None;
        }
        Some(if self.primary_first {
            (a.to_string(), b.to_string())
        } else {
            (b.to_string(), a.to_string())
        })
    }
}

#[derive(Debug, Clone)]
pub struct CategoryDefinition {
    pub category: AtypicalityCategory,
    pub name: String,
    pub definition_text: String,
}

#[derive(Debug, Deserialize)]
struct ResourceEntry {
    name: Option<String>,
    definition: String,
    template: Option<String>,
}

/// Definitions and templates for all five categories. Immutable after load.
#[derive(Debug, Clone)]
pub struct Taxonomy {
    definitions: BTreeMap<AtypicalityCategory, CategoryDefinition>,
    templates: BTreeMap<AtypicalityCategory, StatementTemplate>,
}

impl Default for Taxonomy {
    fn default() -> Self {
        Self::from_toml_str(DEFAULT_RESOURCE).expect("bundled taxonomy resource is valid")
    }
}

impl Taxonomy {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let raw: BTreeMap<String, ResourceEntry> =
            toml::from_str(text).map_err(|e| Error::TaxonomyResource(e.to_string()))?;
        let mut definitions = BTreeMap::new();
        let mut templates = BTreeMap::new();
        for (key, entry) in raw {
            let category: AtypicalityCategory = key
                .parse()
                .map_err(|_| Error::TaxonomyResource(format!("unknown category id {key:?}")))?;
            if entry.definition.trim().is_empty() {
                return Err(Error::TaxonomyResource(format!("{key}: empty definition")));
            }
            match (category, entry.template) {
                (NA, Some(_)) => {
                    return Err(Error::TaxonomyResource("NA must not carry a template".into()))
                }
                (NA, None) => {}
                (c, Some(t)) => {
                    templates.insert(c, StatementTemplate::new(&t)?);
                }
                (c, None) => {
                    return Err(Error::TaxonomyResource(format!("{c}: missing template")));
                }
            }
            definitions.insert(
                category,
                CategoryDefinition {
                    category,
                    name: entry.name.unwrap_or_else(|| category.long_name().to_string()),
                    definition_text: entry.definition.trim().to_string(),
                },
            );
        }
        for c in AtypicalityCategory::ALL {
            if !definitions.contains_key(&c) {
                return Err(Error::TaxonomyResource(format!("missing entry for {c}")));
            }
        }
        let taxonomy = Self {
            definitions,
            templates,
        };
        taxonomy.check_relations_disjoint()?;
        Ok(taxonomy)
    }

    // Every template's rendering must be recognized by its own template only.
    fn check_relations_disjoint(&self) -> Result<()> {
        for (c, t) in &self.templates {
            let probe = t.fill("alpha", "omega");
            let hits: Vec<_> = self
                .templates
                .iter()
                .filter(|(_, other)| other.match_text(&probe).is_some())
                .map(|(k, _)| *k)
                .collect();
            if hits != [*c] {
                return Err(Error::TaxonomyResource(format!(
                    "template for {c} is ambiguous with {hits:?}"
                )));
            }
        }
        Ok(())
    }

    pub fn definition(&self, category: AtypicalityCategory) -> &CategoryDefinition {
        &self.definitions[&category]
    }

    /// All definitions as a prompt-ready block, one category per line.
    pub fn definitions_text(&self) -> String {
        self.definitions
            .values()
            .map(|d| format!("- {} ({}): {}", d.name, d.category, d.definition_text))
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn template(&self, category: AtypicalityCategory) -> Result<&StatementTemplate> {
        self.templates
            .get(&category)
            .ok_or(Error::NoTemplateForNA(category))
    }

    pub fn render_statement(
        &self,
        category: AtypicalityCategory,
        primary: &str,
        secondary: &str,
    ) -> Result<String> {
        let template = self.template(category)?;
        let primary = checked_object_name(primary)?;
        let secondary = checked_object_name(secondary)?;
        Ok(template.fill(primary, secondary))
    }

    /// Identifies which category's relation phrase a rendered statement uses.
    pub fn relation_of(&self, statement_text: &str) -> Option<AtypicalityCategory> {
        let mut hits = self
            .templates
            .iter()
            .filter(|(_, t)| t.match_text(statement_text).is_some())
            .map(|(c, _)| *c);
        let first = hits.next()?;
        hits.next().is_none().then_some(first)
    }

    /// Template text with both slots replaced by visible blanks.
    pub fn blank_template(&self, category: AtypicalityCategory) -> Result<String> {
        Ok(self
            .template(category)?
            .fill("[primary object]", "[secondary object]"))
    }
}

fn checked_object_name(name: &str) -> Result<&str> {
    let trimmed = name.trim();
    if trimmed.is_empty() {
        Err(Error::InvalidObjectName(name.to_string()))
    } else {
        Ok(trimmed)
    }
}
