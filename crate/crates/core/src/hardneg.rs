//! LLM-generated hard negatives for action-reason retrieval, ARR option sets, and
//! bookkeeping for human validation of the generated negatives.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backends::{ChatBackend, ChatRequest, Role};
use crate::corpus::AdRecord;
use crate::error::{Error, Result};
use crate::prompts::{ids, PromptCatalog};
use crate::seeding::SeededRng;

pub const DEFAULT_MAX_ATTEMPTS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeStrategy {
    ActionAlter,
    ReasonAlter,
    AdjectiveAlter,
    ObjectSwap,
    #[serde(alias = "semantic")]
    StatementAlter,
}

impl NegativeStrategy {
    pub const ALL: [NegativeStrategy; 5] = [
        NegativeStrategy::ActionAlter,
        NegativeStrategy::ReasonAlter,
        NegativeStrategy::AdjectiveAlter,
        NegativeStrategy::ObjectSwap,
        NegativeStrategy::StatementAlter,
    ];

    pub fn name(self) -> &'static str {
        match self {
            NegativeStrategy::ActionAlter => "action_alter",
            NegativeStrategy::ReasonAlter => "reason_alter",
            NegativeStrategy::AdjectiveAlter => "adjective_alter",
            NegativeStrategy::ObjectSwap => "object_swap",
            NegativeStrategy::StatementAlter => "statement_alter",
        }
    }

    pub fn prompt_id(self) -> String {
        format!("hardneg.{}", self.name())
    }
}

impl fmt::Display for NegativeStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HardNegative {
    pub image_id: String,
    pub positive_index: usize,
    pub strategy: NegativeStrategy,
    pub text: String,
    pub source_positive: String,
}

fn normalized(text: &str) -> String {
    text.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

/// Loose action-reason shape check: a "because" clause, or a comma splitting two
/// non-empty halves.
pub fn has_action_reason_shape(text: &str) -> bool {
    let lower = text.to_lowercase();
    if lower
        .split(|c: char| !c.is_alphanumeric())
        .any(|w| w == "because")
    {
        return true;
    }
    match text.split_once(',') {
        Some((a, b)) => !a.trim().is_empty() && !b.trim().is_empty(),
        None => false,
    }
}

/// Why a generated negative is unusable, if it is.
pub fn check_negative(positive: &str, candidate: &str) -> std::result::Result<(), String> {
    if candidate.trim().is_empty() {
        return Err("the answer was empty".into());
    }
    if normalized(candidate) == normalized(positive) {
        return Err("the answer repeats the original statement".into());
    }
    if !has_action_reason_shape(candidate) {
        return Err("the answer is not an action-reason statement".into());
    }
    Ok(())
}

/// Strips wrapping quotes and list markers from a one-statement answer.
pub fn clean_generation(raw: &str) -> String {
    let line = raw
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty())
        .unwrap_or("");
    let line = line.trim_start_matches(['-', '*']).trim_start();
    let quotes: &[char] = &['"', '\'', '`', '“', '”'];
    line.trim_matches(quotes).trim().to_string()
}

pub struct NegativeGenerator<'a> {
    llm: &'a dyn ChatBackend,
    catalog: &'a PromptCatalog,
    pub max_attempts: usize,
    pub max_tokens: u32,
}

impl<'a> NegativeGenerator<'a> {
    pub fn new(llm: &'a dyn ChatBackend, catalog: &'a PromptCatalog) -> Self {
        Self {
            llm,
            catalog,
            max_attempts: DEFAULT_MAX_ATTEMPTS,
            max_tokens: 128,
        }
    }

    pub fn request_for(&self, strategy: NegativeStrategy, positive: &str) -> Result<ChatRequest> {
        let prompt = self
            .catalog
            .render(&strategy.prompt_id(), &[("positive", positive)])?;
        Ok(ChatRequest::user(prompt).with_max_tokens(self.max_tokens))
    }

    fn generate_one(&self, strategy: NegativeStrategy, positive: &str) -> Result<String> {
        let mut request = self.request_for(strategy, positive)?;
        for attempt in 0..self.max_attempts {
            let raw = self.llm.complete(&request)?.text;
            let candidate = clean_generation(&raw);
            match check_negative(positive, &candidate) {
                Ok(()) => return Ok(candidate),
                Err(problem) => {
                    log::debug!("{strategy} attempt {} rejected: {problem}", attempt + 1);
                    request = request.with_message(Role::Assistant, raw).with_message(
                        Role::User,
                        self.catalog
                            .render(ids::HARDNEG_RETRY, &[("problem", &problem)])?,
                    );
                }
            }
        }
        Err(Error::ValidationFailedAfterRetries {
            strategy,
            attempts: self.max_attempts,
        })
    }

    /// One validated negative per requested strategy, in strategy order.
    pub fn gen_hard_negatives(
        &self,
        image_id: &str,
        positive_index: usize,
        positive: &str,
        strategies: &[NegativeStrategy],
    ) -> Result<Vec<HardNegative>> {
        if positive.trim().is_empty() {
            return Err(Error::InvalidRequest("positive statement is empty".into()));
        }
        strategies
            .iter()
            .map(|&strategy| {
                Ok(HardNegative {
                    image_id: image_id.to_string(),
                    positive_index,
                    strategy,
                    text: self.generate_one(strategy, positive)?,
                    source_positive: positive.to_string(),
                })
            })
            .collect()
    }

    /// Negatives for all three positives of a record.
    pub fn for_record(&self, record: &AdRecord, strategies: &[NegativeStrategy]) -> Result<Vec<HardNegative>> {
        let mut out = Vec::new();
        for (i, positive) in record.action_reasons.iter().enumerate() {
            out.extend(self.gen_hard_negatives(&record.image_id, i, positive, strategies)?);
        }
        Ok(out)
    }
}

/// ARR instance. Canonical options are `[positives..., negatives...]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArrOptionSet {
    pub image_id: String,
    pub positives: Vec<String>,
    pub negatives: Vec<HardNegative>,
    pub shuffled_order: Vec<usize>,
    /// Presented positions of the positives, ascending.
    pub answer_indices: Vec<usize>,
    pub seed: u64,
}

impl ArrOptionSet {
    pub fn len(&self) -> usize {
        self.shuffled_order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shuffled_order.is_empty()
    }

    fn canonical_text(&self, idx: usize) -> &str {
        match idx.checked_sub(self.positives.len()) {
            None => &self.positives[idx],
            Some(n) => &self.negatives[n].text,
        }
    }

    pub fn options(&self) -> Vec<&str> {
        self.shuffled_order.iter().map(|&i| self.canonical_text(i)).collect()
    }

    pub fn is_positive(&self, position: usize) -> bool {
        self.shuffled_order
            .get(position)
            .is_some_and(|&i| i < self.positives.len())
    }

    pub fn strategy_at(&self, position: usize) -> Option<NegativeStrategy> {
        let idx = *self.shuffled_order.get(position)?;
        idx.checked_sub(self.positives.len())
            .map(|n| self.negatives[n].strategy)
    }

    pub fn positive_option_id(&self, i: usize) -> String {
        format!("{}:p{i}", self.image_id)
    }

    pub fn negative_option_id(&self, i: usize) -> String {
        format!("{}:n{i}", self.image_id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssemblyWarning {
    pub image_id: String,
    pub text: String,
    pub reason: &'static str,
}

/// Merges a record's positives with its negatives and shuffles them.
///
/// Negatives that repeat a positive or an earlier negative are dropped and reported.
pub fn assemble_arr_options(
    record: &AdRecord,
    negatives: &[HardNegative],
    seed: u64,
) -> Result<(ArrOptionSet, Vec<AssemblyWarning>)> {
    let positives = record.action_reasons.clone();
    let mut seen: HashSet<String> = positives.iter().map(|p| normalized(p)).collect();
    let mut kept = Vec::with_capacity(negatives.len());
    let mut warnings = Vec::new();
    for n in negatives {
        let key = normalized(&n.text);
        if positives.iter().any(|p| normalized(p) == key) {
            warnings.push(AssemblyWarning {
                image_id: record.image_id.clone(),
                text: n.text.clone(),
                reason: "negative equals a positive",
            });
        } else if !seen.insert(key) {
            warnings.push(AssemblyWarning {
                image_id: record.image_id.clone(),
                text: n.text.clone(),
                reason: "duplicate negative",
            });
        } else {
            kept.push(n.clone());
        }
    }
    if kept.is_empty() {
        return Err(Error::NoNegatives(record.image_id.clone()));
    }
    let shuffled_order = SeededRng::new(seed).permutation(positives.len() + kept.len());
    let mut answer_indices: Vec<usize> = shuffled_order
        .iter()
        .enumerate()
        .filter(|(_, &i)| i < positives.len())
        .map(|(pos, _)| pos)
        .collect();
    answer_indices.sort_unstable();
    Ok((
        ArrOptionSet {
            image_id: record.image_id.clone(),
            positives,
            negatives: kept,
            shuffled_order,
            answer_indices,
            seed,
        },
        warnings,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Positive,
    Negative,
}

/// One annotator verdict on one option.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Judgment {
    pub option_id: String,
    pub verdict: Verdict,
}

pub fn load_judgments(path: &Path) -> Result<Vec<Judgment>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::SchemaError {
                line: i + 1,
                field: "<judgment>".into(),
                message: e.to_string(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Offender {
    pub option_id: String,
    pub strategy: NegativeStrategy,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationSummary {
    pub generated_negatives: usize,
    pub judged_negatives: usize,
    pub marked_negative: usize,
    pub marked_positive: usize,
    /// Share of judged negatives that annotators confirmed as negative.
    pub true_negative_rate: Option<f64>,
    pub judged_positives: usize,
    pub positives_confirmed: usize,
    pub offenders: Vec<Offender>,
    pub note: Option<String>,
}

/// Aggregates human verdicts on generated negatives.
///
/// Several verdicts for the same option are merged by majority; a tie counts as
/// positive, so an option only counts as a true negative when most annotators agree.
pub fn validation_summary(option_sets: &[ArrOptionSet], judgments: &[Judgment]) -> Result<ValidationSummary> {
    enum Target<'a> {
        Negative(&'a HardNegative),
        Positive,
    }
    let mut targets: HashMap<String, Target> = HashMap::new();
    let mut generated = 0;
    for set in option_sets {
        for i in 0..set.positives.len() {
            targets.insert(set.positive_option_id(i), Target::Positive);
        }
        for (i, n) in set.negatives.iter().enumerate() {
            targets.insert(set.negative_option_id(i), Target::Negative(n));
            generated += 1;
        }
    }

    let mut tallies: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for j in judgments {
        if !targets.contains_key(&j.option_id) {
            return Err(Error::UnknownOptionId(j.option_id.clone()));
        }
        let t = tallies.entry(&j.option_id).or_default();
        match j.verdict {
            Verdict::Positive => t.0 += 1,
            Verdict::Negative => t.1 += 1,
        }
    }

    let mut summary = ValidationSummary {
        generated_negatives: generated,
        judged_negatives: 0,
        marked_negative: 0,
        marked_positive: 0,
        true_negative_rate: None,
        judged_positives: 0,
        positives_confirmed: 0,
        offenders: Vec::new(),
        note: None,
    };
    for (id, (pos, neg)) in tallies {
        let says_positive = pos >= neg;
        match &targets[id] {
            Target::Negative(n) => {
                summary.judged_negatives += 1;
                if says_positive {
                    summary.marked_positive += 1;
                    summary.offenders.push(Offender {
                        option_id: id.to_string(),
                        strategy: n.strategy,
                        text: n.text.clone(),
                    });
                } else {
                    summary.marked_negative += 1;
                }
            }
            Target::Positive => {
                summary.judged_positives += 1;
                if says_positive {
                    summary.positives_confirmed += 1;
                }
            }
        }
    }
    if summary.judged_negatives == 0 {
        summary.note = Some("no judgments on generated negatives".into());
    } else {
        summary.true_negative_rate =
            Some(summary.marked_negative as f64 / summary.judged_negatives as f64);
    }
    Ok(summary)
}
