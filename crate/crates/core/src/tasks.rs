//! Task runners: MAC, ASR, AOR and action-reason retrieval (single and multi).
//!
//! Option prompts always show 1-based numeric labels. Predictions store 0-based
//! presented positions; scoring maps them through each option set's permutation.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::answers::{parse_choice, parse_fill, parse_ranked};
use crate::backends::{ChatBackend, ChatRequest, ImageAttachment, Role};
use crate::error::{Error, Result};
use crate::hardneg::ArrOptionSet;
use crate::prompts::{ids, numbered_options, PromptCatalog};
use crate::statements::{AsrOptionSet, AtypicalityStatement};
use crate::taxonomy::{parse_category, AtypicalityCategory, Taxonomy};
use crate::verbalizer::{render_variant, Verbalization, VerbalizationVariant};

pub const DEFAULT_K_SELECT: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Mac,
    Asr,
    Aor,
    ArrSingle,
    ArrMulti,
}

impl TaskKind {
    pub const ALL: [TaskKind; 5] = [
        TaskKind::Mac,
        TaskKind::Asr,
        TaskKind::Aor,
        TaskKind::ArrSingle,
        TaskKind::ArrMulti,
    ];

    pub fn prompt_id(self) -> &'static str {
        match self {
            TaskKind::Mac => ids::MAC,
            TaskKind::Asr => ids::ASR,
            TaskKind::Aor => ids::AOR,
            TaskKind::ArrSingle => ids::ARR_SINGLE,
            TaskKind::ArrMulti => ids::ARR_MULTI,
        }
    }

    pub fn needs_options(self) -> bool {
        matches!(self, TaskKind::Asr | TaskKind::ArrSingle | TaskKind::ArrMulti)
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskKind::Mac => "mac",
            TaskKind::Asr => "asr",
            TaskKind::Aor => "aor",
            TaskKind::ArrSingle => "arr_single",
            TaskKind::ArrMulti => "arr_multi",
        })
    }
}

/// What the model sees: the image itself, or one textual verbalization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InputVariant {
    DirectImage,
    Verbal(VerbalizationVariant),
}

impl InputVariant {
    pub fn name(self) -> &'static str {
        match self {
            InputVariant::DirectImage => "direct_image",
            InputVariant::Verbal(v) => v.name(),
        }
    }
}

impl std::str::FromStr for InputVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "direct_image" {
            return Ok(InputVariant::DirectImage);
        }
        VerbalizationVariant::ALL
            .iter()
            .find(|v| v.name() == s)
            .map(|&v| InputVariant::Verbal(v))
            .ok_or_else(|| Error::Config(format!("unknown input variant {s:?}")))
    }
}

impl Serialize for InputVariant {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for InputVariant {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskInstance {
    pub task: TaskKind,
    pub image_id: String,
    pub input_variant: InputVariant,
    pub prompt_id: String,
}

impl TaskInstance {
    pub fn new(task: TaskKind, image_id: impl Into<String>, input_variant: InputVariant) -> Self {
        Self {
            task,
            image_id: image_id.into(),
            input_variant,
            prompt_id: task.prompt_id().to_string(),
        }
    }
}

/// Materialized model input for one instance.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskInput {
    pub text: String,
    pub image: Option<ImageAttachment>,
}

const IMAGE_PLACEHOLDER: &str = "(the advertisement image is attached)";

impl TaskInput {
    pub fn text(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            image: None,
        }
    }

    pub fn image(image: ImageAttachment) -> Self {
        Self {
            text: IMAGE_PLACEHOLDER.to_string(),
            image: Some(image),
        }
    }

    pub fn for_variant(
        variant: InputVariant,
        verbalization: Option<&Verbalization>,
        image: Option<ImageAttachment>,
    ) -> Result<Self> {
        match variant {
            InputVariant::DirectImage => image
                .map(Self::image)
                .ok_or_else(|| Error::ImageMissing(verbalization.map(|v| v.image_id.clone()).unwrap_or_default())),
            InputVariant::Verbal(v) => {
                let verb = verbalization.ok_or(Error::MissingField {
                    variant: v.name(),
                    field: "verbalization",
                })?;
                Ok(Self::text(render_variant(verb, v)?))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Payload {
    Labels { labels: BTreeSet<AtypicalityCategory> },
    Choice { position: usize },
    Ranked { positions: Vec<usize> },
    Objects { primary: String, secondary: String, statement: String },
    /// The model answered but no payload could be read; scored as wrong.
    Unparsed { error: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub task: TaskKind,
    pub image_id: String,
    pub input_variant: InputVariant,
    #[serde(default)]
    pub backend_id: String,
    pub payload: Payload,
    pub raw_response: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

impl Prediction {
    pub fn failed(instance: &TaskInstance, backend_id: &str, error: &Error) -> Self {
        let raw = match error {
            Error::UnparseableChoice { response, .. } => response.clone(),
            Error::UnparseableFill(r) => r.clone(),
            _ => String::new(),
        };
        Self {
            task: instance.task,
            image_id: instance.image_id.clone(),
            input_variant: instance.input_variant,
            backend_id: backend_id.to_string(),
            payload: Payload::Unparsed {
                error: error.to_string(),
            },
            raw_response: raw,
            flags: vec!["error".into()],
        }
    }
}

/// Asks for one numbered option, reprompting once if the answer has no usable number.
/// Returns the 0-based position and the raw answer that produced it.
pub fn choose_one(
    backend: &dyn ChatBackend,
    catalog: &PromptCatalog,
    request: ChatRequest,
    count: usize,
) -> Result<(usize, String)> {
    let first = backend.complete(&request)?.text;
    if let Some(p) = parse_choice(&first, count) {
        return Ok((p, first));
    }
    let retry = request
        .with_message(Role::Assistant, first)
        .with_message(
            Role::User,
            catalog.render(ids::REPROMPT_CHOICE, &[("count", &count.to_string())])?,
        );
    let second = backend.complete(&retry)?.text;
    parse_choice(&second, count)
        .map(|p| (p, second.clone()))
        .ok_or(Error::UnparseableChoice {
            response: second,
            options: count,
        })
}

pub struct TaskRunner<'a> {
    pub taxonomy: &'a Taxonomy,
    pub catalog: &'a PromptCatalog,
    pub backend: &'a dyn ChatBackend,
    pub max_tokens: u32,
}

impl<'a> TaskRunner<'a> {
    pub fn new(taxonomy: &'a Taxonomy, catalog: &'a PromptCatalog, backend: &'a dyn ChatBackend) -> Self {
        Self {
            taxonomy,
            catalog,
            backend,
            max_tokens: 256,
        }
    }

    fn check(&self, instance: &TaskInstance, expected: &[TaskKind], input: &TaskInput) -> Result<()> {
        if !expected.contains(&instance.task) {
            return Err(Error::TaskMismatch(format!(
                "instance is {} but runner expects {expected:?}",
                instance.task
            )));
        }
        if input.image.is_some() && !self.backend.supports_images() {
            return Err(Error::ImageUnsupported(self.backend.backend_id().to_string()));
        }
        Ok(())
    }

    fn request(&self, prompt: String, input: &TaskInput) -> ChatRequest {
        let req = ChatRequest::user(prompt).with_max_tokens(self.max_tokens);
        match &input.image {
            Some(img) => req.with_image(img.clone()),
            None => req,
        }
    }

    fn prediction(&self, instance: &TaskInstance, payload: Payload, raw: String, flags: Vec<String>) -> Prediction {
        Prediction {
            task: instance.task,
            image_id: instance.image_id.clone(),
            input_variant: instance.input_variant,
            backend_id: self.backend.backend_id().to_string(),
            payload,
            raw_response: raw,
            flags,
        }
    }

    pub fn mac_request(&self, input: &TaskInput) -> Result<ChatRequest> {
        let prompt = self.catalog.render(
            ids::MAC,
            &[("definitions", &self.taxonomy.definitions_text()), ("input", &input.text)],
        )?;
        Ok(self.request(prompt, input))
    }

    pub fn run_mac(&self, instance: &TaskInstance, input: &TaskInput) -> Result<Prediction> {
        self.check(instance, &[TaskKind::Mac], input)?;
        let raw = self.backend.complete(&self.mac_request(input)?)?.text;
        let (labels, flags) = match parse_category(&raw) {
            Ok(labels) => (labels, vec![]),
            Err(_) => (BTreeSet::new(), vec!["unparseable".to_string()]),
        };
        Ok(self.prediction(instance, Payload::Labels { labels }, raw, flags))
    }

    pub fn asr_request(&self, input: &TaskInput, options: &AsrOptionSet) -> Result<ChatRequest> {
        let texts: Vec<&str> = options.options().iter().map(|s| s.text.as_str()).collect();
        let prompt = self.catalog.render(
            ids::ASR,
            &[("input", &input.text), ("options", &numbered_options(&texts))],
        )?;
        Ok(self.request(prompt, input))
    }

    pub fn run_asr(&self, instance: &TaskInstance, input: &TaskInput, options: &AsrOptionSet) -> Result<Prediction> {
        self.check(instance, &[TaskKind::Asr], input)?;
        let request = self.asr_request(input, options)?;
        let (position, raw) = choose_one(self.backend, self.catalog, request, options.len())?;
        Ok(self.prediction(instance, Payload::Choice { position }, raw, vec![]))
    }

    pub fn aor_request(&self, input: &TaskInput, category: AtypicalityCategory) -> Result<ChatRequest> {
        let blank = self.taxonomy.blank_template(category)?;
        let prompt = self
            .catalog
            .render(ids::AOR, &[("input", &input.text), ("statement_template", &blank)])?;
        Ok(self.request(prompt, input))
    }

    /// Fill-in-the-blank against the ground-truth category; the filled template is the
    /// predicted statement.
    pub fn run_aor(&self, instance: &TaskInstance, input: &TaskInput, gt: &AtypicalityStatement) -> Result<Prediction> {
        self.check(instance, &[TaskKind::Aor], input)?;
        let raw = self.backend.complete(&self.aor_request(input, gt.category)?)?.text;
        let (primary, secondary) = parse_fill(&raw).ok_or_else(|| Error::UnparseableFill(raw.clone()))?;
        let statement = self.taxonomy.render_statement(gt.category, &primary, &secondary)?;
        Ok(self.prediction(
            instance,
            Payload::Objects {
                primary,
                secondary,
                statement,
            },
            raw,
            vec![],
        ))
    }

    pub fn arr_request(&self, input: &TaskInput, options: &ArrOptionSet, k_select: usize) -> Result<ChatRequest> {
        let list = numbered_options(&options.options());
        let prompt = if k_select == 1 {
            self.catalog
                .render(ids::ARR_SINGLE, &[("input", &input.text), ("options", &list)])?
        } else {
            self.catalog.render(
                ids::ARR_MULTI,
                &[("input", &input.text), ("options", &list), ("k", &k_select.to_string())],
            )?
        };
        Ok(self.request(prompt, input))
    }

    pub fn run_arr_single(&self, instance: &TaskInstance, input: &TaskInput, options: &ArrOptionSet) -> Result<Prediction> {
        self.check(instance, &[TaskKind::ArrSingle], input)?;
        let request = self.arr_request(input, options, 1)?;
        let (position, raw) = choose_one(self.backend, self.catalog, request, options.len())?;
        Ok(self.prediction(instance, Payload::Choice { position }, raw, vec![]))
    }

    /// Ranked selection of `k_select` options. Duplicates are dropped keeping first
    /// occurrence; an unordered answer is ranked in the order given.
    pub fn run_arr_multi(
        &self,
        instance: &TaskInstance,
        input: &TaskInput,
        options: &ArrOptionSet,
        k_select: usize,
    ) -> Result<Prediction> {
        self.check(instance, &[TaskKind::ArrMulti, TaskKind::ArrSingle], input)?;
        if k_select == 0 || k_select > options.len() {
            return Err(Error::InvalidRequest(format!(
                "k_select {k_select} must be between 1 and {}",
                options.len()
            )));
        }
        let request = self.arr_request(input, options, k_select)?;
        let mut raw = self.backend.complete(&request)?.text;
        let mut parsed = parse_ranked(&raw, options.len(), k_select);
        if parsed.positions.is_empty() {
            let retry = request.with_message(Role::Assistant, raw.clone()).with_message(
                Role::User,
                self.catalog.render(
                    ids::REPROMPT_CHOICES,
                    &[("count", &options.len().to_string()), ("k", &k_select.to_string())],
                )?,
            );
            raw = self.backend.complete(&retry)?.text;
            parsed = parse_ranked(&raw, options.len(), k_select);
            if parsed.positions.is_empty() {
                return Err(Error::UnparseableChoice {
                    response: raw,
                    options: options.len(),
                });
            }
        }
        let mut flags = Vec::new();
        if parsed.is_short(k_select) {
            flags.push("short".to_string());
        }
        if parsed.had_duplicates {
            flags.push("duplicates".to_string());
        }
        if parsed.had_out_of_range {
            flags.push("out_of_range".to_string());
        }
        Ok(self.prediction(
            instance,
            Payload::Ranked {
                positions: parsed.positions,
            },
            raw,
            flags,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{Backend, BackendSpec, MockRule, ScriptedMock};
    use crate::corpus::{AdRecord, Corpus};
    use crate::hardneg::{assemble_arr_options, HardNegative, NegativeStrategy};
    use crate::statements::build_asr_options;
    use crate::taxonomy::AtypicalityCategory::*;

    fn scripted(response: &str) -> Backend {
        Backend::with_transport(
            BackendSpec::scripted("llm", false),
            Box::new(ScriptedMock::from_rules(vec![MockRule::contains("", response)])),
        )
        .unwrap()
    }

    fn inst(task: TaskKind) -> TaskInstance {
        TaskInstance::new(task, "ad", InputVariant::Verbal(VerbalizationVariant::UhOnly))
    }

    fn rec(id: &str, p: &str, s: &str) -> AdRecord {
        AdRecord {
            image_id: id.into(),
            image_path: None,
            action_reasons: vec![
                format!("I should buy {p}, because it is light"),
                format!("I should try {p}, because it is fresh"),
                format!("I should love {p}, because it is fun"),
            ],
            atypicality_labels: vec![TR1],
            primary_object: Some(p.into()),
            secondary_object: Some(s.into()),
            topic: None,
        }
    }

    fn asr_set() -> AsrOptionSet {
        let tax = Taxonomy::default();
        let c = Corpus::from_records(
            "c",
            vec![rec("ad", "bottle", "feather"), rec("b", "earth", "cup"), rec("c", "car", "flower")],
        )
        .unwrap();
        build_asr_options(&tax, c.get("ad").unwrap(), &c, 2, 5).unwrap()
    }

    fn arr_set(n_neg: usize) -> ArrOptionSet {
        let r = rec("ad", "bottle", "feather");
        let negs: Vec<HardNegative> = (0..n_neg)
            .map(|i| HardNegative {
                image_id: "ad".into(),
                positive_index: i % 3,
                strategy: NegativeStrategy::ALL[i % 5],
                text: format!("I should not buy thing {i}, because nothing"),
                source_positive: r.action_reasons[i % 3].clone(),
            })
            .collect();
        assemble_arr_options(&r, &negs, 11).unwrap().0
    }

    #[test]
    fn mac_parsing() {
        let tax = Taxonomy::default();
        let cat = PromptCatalog::default();
        let input = TaskInput::text("Unusual aspects: Earth in a cup sleeve");
        let b = scripted("Object Inside Object, Object Replacement");
        let p = TaskRunner::new(&tax, &cat, &b).run_mac(&inst(TaskKind::Mac), &input).unwrap();
        assert_eq!(p.payload, Payload::Labels { labels: BTreeSet::from([OIO, OR]) });
        let b = scripted("Not Atypical");
        let p = TaskRunner::new(&tax, &cat, &b).run_mac(&inst(TaskKind::Mac), &input).unwrap();
        assert_eq!(p.payload, Payload::Labels { labels: BTreeSet::from([NA]) });
        let b = scripted("beautiful image");
        let p = TaskRunner::new(&tax, &cat, &b).run_mac(&inst(TaskKind::Mac), &input).unwrap();
        assert_eq!(p.payload, Payload::Labels { labels: BTreeSet::new() });
        assert_eq!(p.flags, vec!["unparseable"]);
    }

    #[test]
    fn mac_prompt_embeds_definitions() {
        let tax = Taxonomy::default();
        let cat = PromptCatalog::default();
        let b = scripted("x");
        let req = TaskRunner::new(&tax, &cat, &b).mac_request(&TaskInput::text("AD TEXT")).unwrap();
        let prompt = req.prompt_text();
        assert!(prompt.contains("Texture created by combining several small objects"));
        assert!(prompt.contains("AD TEXT"));
    }

    #[test]
    fn asr_choices() {
        let tax = Taxonomy::default();
        let cat = PromptCatalog::default();
        let set = asr_set();
        assert_eq!(set.len(), 9);
        let input = TaskInput::text("x");
        let b = scripted("7");
        let p = TaskRunner::new(&tax, &cat, &b).run_asr(&inst(TaskKind::Asr), &input, &set).unwrap();
        assert_eq!(p.payload, Payload::Choice { position: 6 });
        let key = (set.answer_index + 1).to_string();
        let b = scripted(&key);
        let p = TaskRunner::new(&tax, &cat, &b).run_asr(&inst(TaskKind::Asr), &input, &set).unwrap();
        assert_eq!(p.payload, Payload::Choice { position: set.answer_index });
        let b = scripted("10");
        let err = TaskRunner::new(&tax, &cat, &b).run_asr(&inst(TaskKind::Asr), &input, &set).unwrap_err();
        assert!(matches!(err, Error::UnparseableChoice { options: 9, .. }));
        // one reprompt
        assert_eq!(b.call_count(), 2);
    }

    #[test]
    fn aor_fill() {
        let tax = Taxonomy::default();
        let cat = PromptCatalog::default();
        let gt = AtypicalityStatement::new(&tax, TR1, "bottle", "feather").unwrap();
        let input = TaskInput::text("x");
        let b = scripted("primary: bottle\nsecondary: feather");
        let runner = TaskRunner::new(&tax, &cat, &b);
        let p = runner.run_aor(&inst(TaskKind::Aor), &input, &gt).unwrap();
        match p.payload {
            Payload::Objects { statement, .. } => assert_eq!(statement, gt.text),
            other => panic!("{other:?}"),
        }
        let prompt = runner.aor_request(&input, TR1).unwrap().prompt_text();
        assert!(prompt.contains("The surface of the [primary object] mimics the texture of [secondary object]"));
        let b = scripted("glass of beer; feathers");
        let p = TaskRunner::new(&tax, &cat, &b).run_aor(&inst(TaskKind::Aor), &input, &gt).unwrap();
        assert!(matches!(p.payload, Payload::Objects { ref primary, .. } if primary == "glass of beer"));
        let b = scripted("");
        assert!(matches!(
            TaskRunner::new(&tax, &cat, &b).run_aor(&inst(TaskKind::Aor), &input, &gt),
            Err(Error::UnparseableFill(_))
        ));
    }

    #[test]
    fn arr_multi_ranking() {
        let tax = Taxonomy::default();
        let cat = PromptCatalog::default();
        let set = arr_set(15);
        assert_eq!(set.len(), 18);
        let input = TaskInput::text("x");
        let b = scripted("1, 4, 7");
        let p = TaskRunner::new(&tax, &cat, &b)
            .run_arr_multi(&inst(TaskKind::ArrMulti), &input, &set, 3)
            .unwrap();
        assert_eq!(p.payload, Payload::Ranked { positions: vec![0, 3, 6] });
        let b = scripted("4, 4, 7");
        let p = TaskRunner::new(&tax, &cat, &b)
            .run_arr_multi(&inst(TaskKind::ArrMulti), &input, &set, 3)
            .unwrap();
        assert_eq!(p.payload, Payload::Ranked { positions: vec![3, 6] });
        assert!(p.flags.contains(&"short".to_string()));
        let b = scripted("5, 2");
        let p = TaskRunner::new(&tax, &cat, &b)
            .run_arr_multi(&inst(TaskKind::ArrMulti), &input, &set, 1)
            .unwrap();
        assert_eq!(p.payload, Payload::Ranked { positions: vec![4] });
        let b = scripted("no idea");
        assert!(TaskRunner::new(&tax, &cat, &b)
            .run_arr_multi(&inst(TaskKind::ArrMulti), &input, &set, 3)
            .is_err());
        assert_eq!(b.call_count(), 2);
    }

    #[test]
    fn direct_image_needs_capable_backend() {
        let tax = Taxonomy::default();
        let cat = PromptCatalog::default();
        let b = scripted("TR1");
        let input = TaskInput::image(ImageAttachment { mime: "image/png".into(), data: vec![1] });
        let i = TaskInstance::new(TaskKind::Mac, "ad", InputVariant::DirectImage);
        assert!(matches!(
            TaskRunner::new(&tax, &cat, &b).run_mac(&i, &input),
            Err(Error::ImageUnsupported(_))
        ));
    }

    #[test]
    fn task_mismatch() {
        let tax = Taxonomy::default();
        let cat = PromptCatalog::default();
        let b = scripted("1");
        assert!(matches!(
            TaskRunner::new(&tax, &cat, &b).run_mac(&inst(TaskKind::Asr), &TaskInput::text("x")),
            Err(Error::TaskMismatch(_))
        ));
    }

    #[test]
    fn prediction_serde() {
        let p = Prediction {
            task: TaskKind::Mac,
            image_id: "a".into(),
            input_variant: InputVariant::DirectImage,
            backend_id: "llm".into(),
            payload: Payload::Labels { labels: BTreeSet::from([TR1, NA]) },
            raw_response: "TR1, NA".into(),
            flags: vec![],
        };
        let s = serde_json::to_string(&p).unwrap();
        assert!(s.contains("\"input_variant\":\"direct_image\""));
        assert_eq!(serde_json::from_str::<Prediction>(&s).unwrap(), p);
    }
}
