//! Atypicality statements: the candidate space for an object list and ASR option sets.

use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use crate::corpus::{gt_label_set, gt_statement, AdRecord, Corpus};
use crate::error::{Error, Result};
use crate::seeding::SeededRng;
use crate::taxonomy::{AtypicalityCategory, Taxonomy};

/// Default number of distractor images for wrong-object negatives.
pub const DEFAULT_K: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AtypicalityStatement {
    pub category: AtypicalityCategory,
    pub primary: String,
    pub secondary: String,
    pub text: String,
}

impl AtypicalityStatement {
    pub fn new(
        taxonomy: &Taxonomy,
        category: AtypicalityCategory,
        primary: &str,
        secondary: &str,
    ) -> Result<Self> {
        let text = taxonomy.render_statement(category, primary, secondary)?;
        let (primary, secondary) = (primary.trim(), secondary.trim());
        if primary == secondary {
            return Err(Error::InvalidObjectName(format!(
                "primary and secondary objects are both {primary:?}"
            )));
        }
        Ok(Self {
            category,
            primary: primary.to_string(),
            secondary: secondary.to_string(),
            text,
        })
    }

    pub fn triple(&self) -> (AtypicalityCategory, &str, &str) {
        (self.category, &self.primary, &self.secondary)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CandidateWarning {
    /// Fewer than two objects were supplied, so no pair exists.
    EmptyCandidateSet,
}

/// All statements one object list can express (S_I).
#[derive(Debug, Clone)]
pub struct CandidateSet {
    pub image_id: String,
    pub statements: Vec<AtypicalityStatement>,
    pub warning: Option<CandidateWarning>,
}

impl CandidateSet {
    pub fn is_empty(&self) -> bool {
        self.statements.is_empty()
    }
}

/// Pairs every two objects with every category in both orders.
///
/// Order is object-list major, category minor: for `i < j` and each category the
/// output holds `(a, o_i, o_j)` then `(a, o_j, o_i)`.
pub fn generate_candidates(
    taxonomy: &Taxonomy,
    image_id: &str,
    objects: &[String],
    categories: &[AtypicalityCategory],
) -> Result<CandidateSet> {
    let mut seen = HashSet::new();
    let mut unique: Vec<&str> = Vec::with_capacity(objects.len());
    for o in objects {
        let o = o.trim();
        if o.is_empty() {
            return Err(Error::InvalidObjectName(o.to_string()));
        }
        if seen.insert(o) {
            unique.push(o);
        }
    }
    let mut cats: Vec<AtypicalityCategory> = Vec::new();
    for &c in categories {
        if c.is_atypical() && !cats.contains(&c) {
            cats.push(c);
        }
    }
    if unique.len() < 2 {
        return Ok(CandidateSet {
            image_id: image_id.to_string(),
            statements: Vec::new(),
            warning: Some(CandidateWarning::EmptyCandidateSet),
        });
    }
    let mut statements = Vec::with_capacity(unique.len() * (unique.len() - 1) * cats.len());
    for i in 0..unique.len() {
        for j in i + 1..unique.len() {
            for &c in &cats {
                statements.push(AtypicalityStatement::new(taxonomy, c, unique[i], unique[j])?);
                statements.push(AtypicalityStatement::new(taxonomy, c, unique[j], unique[i])?);
            }
        }
    }
    Ok(CandidateSet {
        image_id: image_id.to_string(),
        statements,
        warning: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeKind {
    WrongObject,
    WrongRelation,
    Swapped,
}

impl NegativeKind {
    pub const ALL: [NegativeKind; 3] = [
        NegativeKind::WrongObject,
        NegativeKind::WrongRelation,
        NegativeKind::Swapped,
    ];

    pub fn name(self) -> &'static str {
        match self {
            NegativeKind::WrongObject => "wrong_object",
            NegativeKind::WrongRelation => "wrong_relation",
            NegativeKind::Swapped => "swapped",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaggedStatement {
    pub statement: AtypicalityStatement,
    pub kind: NegativeKind,
}

/// An ASR retrieval instance. Canonical option list is `[positive, negatives...]`;
/// `shuffled_order[pos]` is the canonical index shown at presented position `pos`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "AsrOptionLine", try_from = "AsrOptionLine")]
pub struct AsrOptionSet {
    pub image_id: String,
    pub positive: AtypicalityStatement,
    pub negatives: Vec<TaggedStatement>,
    pub shuffled_order: Vec<usize>,
    pub answer_index: usize,
    pub seed: u64,
    pub k: usize,
}

impl AsrOptionSet {
    pub fn len(&self) -> usize {
        self.shuffled_order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shuffled_order.is_empty()
    }

    fn canonical(&self, idx: usize) -> &AtypicalityStatement {
        if idx == 0 {
            &self.positive
        } else {
            &self.negatives[idx - 1].statement
        }
    }

    /// Options in presented order.
    pub fn options(&self) -> Vec<&AtypicalityStatement> {
        self.shuffled_order.iter().map(|&i| self.canonical(i)).collect()
    }

    /// Negative kind of the option at a presented position; `None` for the positive.
    pub fn kind_at(&self, position: usize) -> Option<NegativeKind> {
        match self.shuffled_order.get(position) {
            Some(0) | None => None,
            Some(&i) => Some(self.negatives[i - 1].kind),
        }
    }

    pub fn count_kind(&self, kind: NegativeKind) -> usize {
        self.negatives.iter().filter(|n| n.kind == kind).count()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptionTag {
    Positive,
    WrongObject,
    WrongRelation,
    Swapped,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AsrOptionEntry {
    pub text: String,
    pub category: AtypicalityCategory,
    pub primary: String,
    pub secondary: String,
    pub kind: OptionTag,
}

/// One line of the ASR option-set file: options in presented order plus the key.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AsrOptionLine {
    pub image_id: String,
    pub seed: u64,
    pub k: usize,
    pub answer_index: usize,
    pub shuffled_order: Vec<usize>,
    pub options: Vec<AsrOptionEntry>,
}

impl From<AsrOptionSet> for AsrOptionLine {
    fn from(set: AsrOptionSet) -> Self {
        let options = set
            .shuffled_order
            .iter()
            .enumerate()
            .map(|(pos, _)| {
                let s = set.options()[pos].clone();
                let kind = match set.kind_at(pos) {
                    None => OptionTag::Positive,
                    Some(NegativeKind::WrongObject) => OptionTag::WrongObject,
                    Some(NegativeKind::WrongRelation) => OptionTag::WrongRelation,
                    Some(NegativeKind::Swapped) => OptionTag::Swapped,
                };
                AsrOptionEntry {
                    text: s.text,
                    category: s.category,
                    primary: s.primary,
                    secondary: s.secondary,
                    kind,
                }
            })
            .collect();
        AsrOptionLine {
            image_id: set.image_id,
            seed: set.seed,
            k: set.k,
            answer_index: set.answer_index,
            shuffled_order: set.shuffled_order,
            options,
        }
    }
}

impl TryFrom<AsrOptionLine> for AsrOptionSet {
    type Error = String;

    fn try_from(line: AsrOptionLine) -> std::result::Result<Self, String> {
        let n = line.options.len();
        let mut sorted = line.shuffled_order.clone();
        sorted.sort_unstable();
        if sorted != (0..n).collect::<Vec<_>>() {
            return Err(format!("{}: shuffled_order is not a permutation", line.image_id));
        }
        let mut canonical: Vec<Option<(AtypicalityStatement, OptionTag)>> = vec![None; n];
        for (pos, entry) in line.options.into_iter().enumerate() {
            let stmt = AtypicalityStatement {
                category: entry.category,
                primary: entry.primary,
                secondary: entry.secondary,
                text: entry.text,
            };
            canonical[line.shuffled_order[pos]] = Some((stmt, entry.kind));
        }
        let mut canonical = canonical.into_iter().map(Option::unwrap);
        let positive = match canonical.next() {
            Some((s, OptionTag::Positive)) => s,
            _ => return Err(format!("{}: canonical option 0 must be the positive", line.image_id)),
        };
        let negatives = canonical
            .map(|(statement, tag)| {
                let kind = match tag {
                    OptionTag::WrongObject => NegativeKind::WrongObject,
                    OptionTag::WrongRelation => NegativeKind::WrongRelation,
                    OptionTag::Swapped => NegativeKind::Swapped,
                    OptionTag::Positive => return Err(format!("{}: two positives", line.image_id)),
                };
                Ok(TaggedStatement { statement, kind })
            })
            .collect::<std::result::Result<Vec<_>, String>>()?;
        if line.shuffled_order.get(line.answer_index) != Some(&0) {
            return Err(format!("{}: answer_index does not address the positive", line.image_id));
        }
        Ok(AsrOptionSet {
            image_id: line.image_id,
            positive,
            negatives,
            shuffled_order: line.shuffled_order,
            answer_index: line.answer_index,
            seed: line.seed,
            k: line.k,
        })
    }
}

fn unordered_pair(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_string(), b.to_string())
    } else {
        (b.to_string(), a.to_string())
    }
}

/// Builds the ASR option set for one record.
///
/// Wrong-object distractors come from other records that carry a non-NA label and both
/// objects. A distractor whose object pair equals the positive's pair (or a pair
/// already used) is skipped in favour of the next seeded candidate.
pub fn build_asr_options(
    taxonomy: &Taxonomy,
    record: &AdRecord,
    corpus: &Corpus,
    k: usize,
    seed: u64,
) -> Result<AsrOptionSet> {
    let positive = gt_statement(taxonomy, record)?;
    let mut rng = SeededRng::new(seed);

    let mut pool: Vec<&AdRecord> = corpus
        .records()
        .iter()
        .filter(|r| r.image_id != record.image_id && r.is_atypical() && r.objects().is_some())
        .collect();
    rng.shuffle(&mut pool);

    let mut used_pairs: BTreeSet<(String, String)> = BTreeSet::new();
    used_pairs.insert(unordered_pair(&positive.primary, &positive.secondary));
    let mut negatives = Vec::new();
    let mut accepted = 0;
    for distractor in pool {
        if accepted == k {
            break;
        }
        let (p, s) = distractor.objects().unwrap();
        if !used_pairs.insert(unordered_pair(p, s)) {
            continue;
        }
        for (a, b) in [(p, s), (s, p)] {
            negatives.push(TaggedStatement {
                statement: AtypicalityStatement::new(taxonomy, positive.category, a, b)?,
                kind: NegativeKind::WrongObject,
            });
        }
        accepted += 1;
    }
    if accepted < k {
        return Err(Error::InsufficientDistractors {
            image_id: record.image_id.clone(),
            needed: k,
            available: accepted,
        });
    }

    let gt = gt_label_set(record);
    for c in AtypicalityCategory::ATYPICAL {
        if !gt.contains(&c) {
            negatives.push(TaggedStatement {
                statement: AtypicalityStatement::new(
                    taxonomy,
                    c,
                    &positive.primary,
                    &positive.secondary,
                )?,
                kind: NegativeKind::WrongRelation,
            });
        }
    }

    negatives.push(TaggedStatement {
        statement: AtypicalityStatement::new(
            taxonomy,
            positive.category,
            &positive.secondary,
            &positive.primary,
        )?,
        kind: NegativeKind::Swapped,
    });

    let shuffled_order = rng.permutation(negatives.len() + 1);
    let answer_index = shuffled_order.iter().position(|&i| i == 0).unwrap();
    Ok(AsrOptionSet {
        image_id: record.image_id.clone(),
        positive,
        negatives,
        shuffled_order,
        answer_index,
        seed,
        k,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taxonomy::AtypicalityCategory::*;

    fn objs(names: &[&str]) -> Vec<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    fn rec(id: &str, labels: &[AtypicalityCategory], p: &str, s: &str) -> AdRecord {
        AdRecord {
            image_id: id.into(),
            image_path: None,
            action_reasons: vec!["I should x, because y".into(); 3],
            atypicality_labels: labels.to_vec(),
            primary_object: Some(p.into()),
            secondary_object: Some(s.into()),
            topic: None,
        }
    }

    fn corpus() -> Corpus {
        Corpus::from_records(
            "t",
            vec![
                rec("a", &[TR1], "bottle", "feather"),
                rec("b", &[TR1, OR], "earth", "cup"),
                rec("c", &[OIO], "lipstick", "bullet"),
                rec("d", &[OR], "search bar", "mouth"),
                rec("e", &[TR2], "car", "flowers"),
            ],
        )
        .unwrap()
    }

    #[test]
    fn candidate_counts() {
        let tax = Taxonomy::default();
        let cats = AtypicalityCategory::ATYPICAL;
        let five = generate_candidates(&tax, "x", &objs(&["a", "b", "c", "d", "e"]), &cats).unwrap();
        assert_eq!(five.statements.len(), 80);
        let two = generate_candidates(&tax, "x", &objs(&["a", "b"]), &cats).unwrap();
        assert_eq!(two.statements.len(), 8);
        assert_eq!(two.statements[0].triple(), (TR1, "a", "b"));
        assert_eq!(two.statements[1].triple(), (TR1, "b", "a"));
        assert_eq!(two.statements[2].triple(), (TR2, "a", "b"));
        let one = generate_candidates(&tax, "x", &objs(&["a"]), &cats).unwrap();
        assert!(one.is_empty());
        assert_eq!(one.warning, Some(CandidateWarning::EmptyCandidateSet));
    }

    #[test]
    fn candidates_ignore_na_and_duplicates() {
        let tax = Taxonomy::default();
        let set = generate_candidates(&tax, "x", &objs(&["a", "b", "a"]), &[TR1, NA]).unwrap();
        assert_eq!(set.statements.len(), 2);
        assert!(generate_candidates(&tax, "x", &objs(&["a", " "]), &[TR1]).is_err());
    }

    #[test]
    fn asr_counts() {
        let tax = Taxonomy::default();
        let c = corpus();
        let set = build_asr_options(&tax, c.get("a").unwrap(), &c, 2, 7).unwrap();
        assert_eq!(set.count_kind(NegativeKind::WrongObject), 4);
        assert_eq!(set.count_kind(NegativeKind::WrongRelation), 3);
        assert_eq!(set.count_kind(NegativeKind::Swapped), 1);
        assert_eq!(set.len(), 9);
        let set = build_asr_options(&tax, c.get("b").unwrap(), &c, 2, 7).unwrap();
        assert_eq!(set.negatives.len(), 7);
        let set = build_asr_options(&tax, c.get("a").unwrap(), &c, 0, 7).unwrap();
        assert_eq!(set.negatives.len(), 4);
    }

    #[test]
    fn asr_errors() {
        let tax = Taxonomy::default();
        let c = corpus();
        assert!(matches!(
            build_asr_options(&tax, c.get("a").unwrap(), &c, 5, 1),
            Err(Error::InsufficientDistractors { needed: 5, available: 4, .. })
        ));
        let typical = AdRecord {
            atypicality_labels: vec![NA],
            primary_object: None,
            secondary_object: None,
            ..rec("z", &[NA], "p", "s")
        };
        assert!(matches!(
            build_asr_options(&tax, &typical, &c, 2, 1),
            Err(Error::NoAtypicalAnnotation(_))
        ));
    }

    #[test]
    fn colliding_pair_is_resampled() {
        let tax = Taxonomy::default();
        let c = Corpus::from_records(
            "t",
            vec![
                rec("a", &[TR1], "bottle", "feather"),
                rec("dup", &[OR], "feather", "bottle"),
                rec("c", &[OIO], "lipstick", "bullet"),
                rec("d", &[OR], "search bar", "mouth"),
            ],
        )
        .unwrap();
        for seed in 0..50 {
            let set = build_asr_options(&tax, c.get("a").unwrap(), &c, 2, seed).unwrap();
            assert_eq!(set.count_kind(NegativeKind::WrongObject), 4);
            let texts: HashSet<_> = set.options().iter().map(|s| s.text.clone()).collect();
            assert_eq!(texts.len(), set.len());
        }
    }

    #[test]
    fn option_line_round_trip() {
        let tax = Taxonomy::default();
        let c = corpus();
        let set = build_asr_options(&tax, c.get("d").unwrap(), &c, 2, 99).unwrap();
        let line = serde_json::to_string(&set).unwrap();
        assert!(line.contains("\"kind\":\"swapped\""));
        let back: AsrOptionSet = serde_json::from_str(&line).unwrap();
        assert_eq!(back, set);
    }
}
