//! Annotation records: line-delimited ingestion, validation, ground truth and subsets.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::seeding::SeededRng;
use crate::statements::AtypicalityStatement;
use crate::taxonomy::{AtypicalityCategory, Taxonomy};

pub const ACTION_REASONS_PER_RECORD: usize = 3;
pub const MAX_ANNOTATOR_LABELS: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdRecord {
    pub image_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_path: Option<String>,
    pub action_reasons: Vec<String>,
    pub atypicality_labels: Vec<AtypicalityCategory>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub primary_object: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub secondary_object: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topic: Option<String>,
}

impl AdRecord {
    pub fn is_atypical(&self) -> bool {
        self.atypicality_labels.iter().any(|l| l.is_atypical())
    }

    /// Both objects, when present.
    pub fn objects(&self) -> Option<(&str, &str)> {
        Some((self.primary_object.as_deref()?, self.secondary_object.as_deref()?))
    }

    /// Checks the record invariants; `line` is only used for error messages.
    pub fn validate(&self, line: usize) -> Result<()> {
        let schema = |field: &str, message: String| Error::SchemaError {
            line,
            field: field.to_string(),
            message,
        };
        if self.image_id.trim().is_empty() {
            return Err(schema("image_id", "must be non-empty".into()));
        }
        if self.action_reasons.len() != ACTION_REASONS_PER_RECORD {
            return Err(schema(
                "action_reasons",
                format!(
                    "expected exactly {ACTION_REASONS_PER_RECORD} entries, got {}",
                    self.action_reasons.len()
                ),
            ));
        }
        if self.action_reasons.iter().any(|a| a.trim().is_empty()) {
            return Err(schema("action_reasons", "entries must be non-empty".into()));
        }
        if self.atypicality_labels.is_empty() || self.atypicality_labels.len() > MAX_ANNOTATOR_LABELS
        {
            return Err(schema(
                "atypicality_labels",
                format!(
                    "expected 1 to {MAX_ANNOTATOR_LABELS} labels, got {}",
                    self.atypicality_labels.len()
                ),
            ));
        }
        if self.is_atypical() {
            match self.objects() {
                Some((p, s)) if !p.is_empty() && !s.is_empty() && p != s => {}
                _ => {
                    return Err(Error::MissingObjectsForAtypical {
                        image_id: self.image_id.clone(),
                        line,
                    })
                }
            }
        }
        Ok(())
    }
}

/// Union of annotator labels. NA stays in the set whenever any annotator chose it.
pub fn gt_label_set(record: &AdRecord) -> BTreeSet<AtypicalityCategory> {
    record.atypicality_labels.iter().copied().collect()
}

/// Ground-truth statement built from the first non-NA annotator label.
pub fn gt_statement(taxonomy: &Taxonomy, record: &AdRecord) -> Result<AtypicalityStatement> {
    let category = record
        .atypicality_labels
        .iter()
        .copied()
        .find(|l| l.is_atypical())
        .ok_or_else(|| Error::NoAtypicalAnnotation(record.image_id.clone()))?;
    let (p, s) = record
        .objects()
        .ok_or_else(|| Error::NoAtypicalAnnotation(record.image_id.clone()))?;
    AtypicalityStatement::new(taxonomy, category, p, s)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: PathBuf,
    pub loaded_at_unix: u64,
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub name: String,
    pub provenance: Option<Provenance>,
    records: Vec<AdRecord>,
    index: HashMap<String, usize>,
}

impl Corpus {
    /// Builds a corpus from already-parsed records, enforcing every invariant.
    pub fn from_records(name: impl Into<String>, records: Vec<AdRecord>) -> Result<Self> {
        let mut index = HashMap::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            r.validate(i + 1)?;
            if index.insert(r.image_id.clone(), i).is_some() {
                return Err(Error::DuplicateImageId {
                    image_id: r.image_id.clone(),
                    line: i + 1,
                });
            }
        }
        Ok(Self {
            name: name.into(),
            provenance: None,
            records,
            index,
        })
    }

    pub fn records(&self) -> &[AdRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, image_id: &str) -> Option<&AdRecord> {
        self.index.get(image_id).map(|&i| &self.records[i])
    }

    pub fn label_counts(&self) -> BTreeMap<AtypicalityCategory, usize> {
        let mut counts: BTreeMap<_, _> = AtypicalityCategory::ALL.iter().map(|&c| (c, 0)).collect();
        for r in &self.records {
            for c in gt_label_set(r) {
                *counts.get_mut(&c).unwrap() += 1;
            }
        }
        counts
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("records serialize"));
            out.push('\n');
        }
        out
    }
}

/// Outcome of validating every line of a corpus file without stopping at the first error.
#[derive(Debug, Default)]
pub struct IngestReport {
    pub records: Vec<AdRecord>,
    pub errors: Vec<Error>,
}

fn field_err(line: usize, field: &str, message: impl Into<String>) -> Error {
    Error::SchemaError {
        line,
        field: field.to_string(),
        message: message.into(),
    }
}

fn opt_string(obj: &Map<String, Value>, line: usize, field: &str) -> Result<Option<String>> {
    match obj.get(field) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::String(s)) => {
            let t = s.trim();
            Ok((!t.is_empty()).then(|| t.to_string()))
        }
        Some(_) => Err(field_err(line, field, "expected a string")),
    }
}

fn string_array(obj: &Map<String, Value>, line: usize, field: &str) -> Result<Vec<String>> {
    let arr = obj
        .get(field)
        .ok_or_else(|| field_err(line, field, "missing"))?
        .as_array()
        .ok_or_else(|| field_err(line, field, "expected an array"))?;
    arr.iter()
        .map(|v| {
            v.as_str()
                .map(|s| s.trim().to_string())
                .ok_or_else(|| field_err(line, field, "expected an array of strings"))
        })
        .collect()
}

/// Parses and validates a single corpus line (1-based `line`).
pub fn parse_record_line(text: &str, line: usize) -> Result<AdRecord> {
    let value: Value =
        serde_json::from_str(text).map_err(|e| field_err(line, "<record>", e.to_string()))?;
    let obj = value
        .as_object()
        .ok_or_else(|| field_err(line, "<record>", "expected an object"))?;
    let image_id = match obj.get("image_id") {
        Some(Value::String(s)) if !s.trim().is_empty() => s.trim().to_string(),
        Some(Value::String(_)) => return Err(field_err(line, "image_id", "must be non-empty")),
        Some(_) => return Err(field_err(line, "image_id", "expected a string")),
        None => return Err(field_err(line, "image_id", "missing")),
    };
    let labels = string_array(obj, line, "atypicality_labels")?
        .iter()
        .map(|s| {
            s.parse::<AtypicalityCategory>()
                .map_err(|_| field_err(line, "atypicality_labels", format!("unknown label {s:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let record = AdRecord {
        image_id,
        image_path: opt_string(obj, line, "image_path")?,
        action_reasons: string_array(obj, line, "action_reasons")?,
        atypicality_labels: labels,
        primary_object: opt_string(obj, line, "primary_object")?,
        secondary_object: opt_string(obj, line, "secondary_object")?,
        topic: opt_string(obj, line, "topic")?,
    };
    record.validate(line)?;
    Ok(record)
}

/// Validates every non-blank line, collecting all errors.
pub fn ingest_str(text: &str) -> IngestReport {
    let mut report = IngestReport::default();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        match parse_record_line(raw, line) {
            Ok(record) => {
                if seen.insert(record.image_id.clone(), line).is_some() {
                    report.errors.push(Error::DuplicateImageId {
                        image_id: record.image_id,
                        line,
                    });
                } else {
                    report.records.push(record);
                }
            }
            Err(e) => report.errors.push(e),
        }
    }
    report
}

pub fn load_corpus(path: &Path) -> Result<Corpus> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut report = ingest_str(&text);
    if !report.errors.is_empty() {
        return Err(report.errors.swap_remove(0));
    }
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "corpus".to_string());
    let mut corpus = Corpus::from_records(name, report.records)?;
    corpus.provenance = Some(Provenance {
        source: path.to_path_buf(),
        loaded_at_unix: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
    });
    Ok(corpus)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SubsetFilter {
    #[default]
    All,
    AtypicalOnly,
    TypicalOnly,
}

impl SubsetFilter {
    pub fn keeps(self, record: &AdRecord) -> bool {
        match self {
            SubsetFilter::All => true,
            SubsetFilter::AtypicalOnly => record.is_atypical(),
            SubsetFilter::TypicalOnly => !record.is_atypical(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubsetSpec {
    pub size: usize,
    pub seed: u64,
    #[serde(default)]
    pub filter: SubsetFilter,
}

/// Seeded sample of `spec.size` filtered records, returned in corpus order.
pub fn sample_subset(corpus: &Corpus, spec: &SubsetSpec) -> Result<Corpus> {
    let eligible: Vec<usize> = corpus
        .records
        .iter()
        .enumerate()
        .filter(|(_, r)| spec.filter.keeps(r))
        .map(|(i, _)| i)
        .collect();
    if spec.size > eligible.len() {
        return Err(Error::SubsetTooLarge {
            requested: spec.size,
            available: eligible.len(),
        });
    }
    let mut picked = eligible;
    SeededRng::new(spec.seed).shuffle(&mut picked);
    picked.truncate(spec.size);
    picked.sort_unstable();
    let records = picked.iter().map(|&i| corpus.records[i].clone()).collect();
    let mut subset = Corpus::from_records(format!("{}-subset", corpus.name), records)?;
    subset.provenance = corpus.provenance.clone();
    Ok(subset)
}
