//! Atypicality-aware verbalization of an ad image and atypicality statement detection.
//!
//! A vision-language backend answers four questions about the image (objects, scene
//! text, a detailed narration, and what is unusual about it). A text backend merges
//! the four views into one description, and picks the best atypicality statement out
//! of every statement the detected objects allow.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::answers::parse_objects;
use crate::backends::{ChatBackend, ChatRequest, ImageAttachment};
use crate::corpus::AdRecord;
use crate::error::{Error, Result};
use crate::prompts::{ids, numbered_options, PromptCatalog};
use crate::statements::{generate_candidates, AtypicalityStatement};
use crate::taxonomy::{AtypicalityCategory, Taxonomy};
use crate::tasks::choose_one;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvenanceEntry {
    pub step: String,
    pub prompt_id: String,
    pub backend_id: String,
    pub raw_response: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verbalization {
    pub image_id: String,
    /// V: up to five object names.
    pub objects: Option<Vec<String>>,
    /// T: scene text.
    pub scene_text: Option<String>,
    /// IN: image narration.
    pub narration: Option<String>,
    /// UH: what is unusual about the image.
    pub unusualness: Option<String>,
    /// T_V: LLM combination of the four views.
    pub combined: Option<String>,
    /// ŝ: statement detected from the combined description.
    pub s_hat: Option<AtypicalityStatement>,
    /// ŝ_IN: statement detected from the narration.
    pub s_hat_in: Option<AtypicalityStatement>,
    pub provenance: Vec<ProvenanceEntry>,
}

impl Verbalization {
    pub fn new(image_id: impl Into<String>) -> Self {
        Self {
            image_id: image_id.into(),
            ..Default::default()
        }
    }

    fn need<'a, T>(field: &'a Option<T>, variant: &'static str, name: &'static str) -> Result<&'a T> {
        field.as_ref().ok_or(Error::MissingField {
            variant,
            field: name,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerbalizationVariant {
    VPlusT,
    ConcatAll,
    TV,
    TVPlusSHatIn,
    InOnly,
    UhOnly,
}

impl VerbalizationVariant {
    pub const ALL: [VerbalizationVariant; 6] = [
        VerbalizationVariant::VPlusT,
        VerbalizationVariant::ConcatAll,
        VerbalizationVariant::TV,
        VerbalizationVariant::TVPlusSHatIn,
        VerbalizationVariant::InOnly,
        VerbalizationVariant::UhOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            VerbalizationVariant::VPlusT => "v_plus_t",
            VerbalizationVariant::ConcatAll => "concat_all",
            VerbalizationVariant::TV => "t_v",
            VerbalizationVariant::TVPlusSHatIn => "t_v_plus_s_hat_in",
            VerbalizationVariant::InOnly => "in_only",
            VerbalizationVariant::UhOnly => "uh_only",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DetectionBasis {
    #[default]
    Narration,
    Combined,
}

const SECTION_OBJECTS: &str = "Objects";
const SECTION_SCENE_TEXT: &str = "Scene text";
const SECTION_NARRATION: &str = "Image description";
const SECTION_UNUSUAL: &str = "Unusual aspects";
const SECTION_COMBINED: &str = "Description";
const SECTION_STATEMENT: &str = "Atypicality";

/// Labeled-section text for one input variant.
pub fn render_variant(v: &Verbalization, variant: VerbalizationVariant) -> Result<String> {
    use VerbalizationVariant::*;
    let name = variant.name();
    let objects = || Verbalization::need(&v.objects, name, "objects").map(|o| o.join(", "));
    let scene = || Verbalization::need(&v.scene_text, name, "scene_text");
    let narration = || Verbalization::need(&v.narration, name, "narration");
    let unusual = || Verbalization::need(&v.unusualness, name, "unusualness");
    let combined = || Verbalization::need(&v.combined, name, "combined");
    let sections: Vec<(&str, String)> = match variant {
        VPlusT => vec![
            (SECTION_OBJECTS, objects()?),
            (SECTION_SCENE_TEXT, scene()?.clone()),
        ],
        ConcatAll => vec![
            (SECTION_OBJECTS, objects()?),
            (SECTION_SCENE_TEXT, scene()?.clone()),
            (SECTION_NARRATION, narration()?.clone()),
            (SECTION_UNUSUAL, unusual()?.clone()),
        ],
        TV => vec![(SECTION_COMBINED, combined()?.clone())],
        TVPlusSHatIn => vec![
            (SECTION_COMBINED, combined()?.clone()),
            (
                SECTION_STATEMENT,
                Verbalization::need(&v.s_hat_in, name, "s_hat_in")?.text.clone(),
            ),
        ],
        InOnly => vec![(SECTION_NARRATION, narration()?.clone())],
        UhOnly => vec![(SECTION_UNUSUAL, unusual()?.clone())],
    };
    Ok(sections
        .into_iter()
        .map(|(label, body)| format!("{label}: {body}"))
        .collect::<Vec<_>>()
        .join("\n"))
}

pub struct Verbalizer<'a> {
    pub taxonomy: &'a Taxonomy,
    pub catalog: &'a PromptCatalog,
    pub max_tokens: u32,
}

impl<'a> Verbalizer<'a> {
    pub fn new(taxonomy: &'a Taxonomy, catalog: &'a PromptCatalog) -> Self {
        Self {
            taxonomy,
            catalog,
            max_tokens: 512,
        }
    }

    pub fn load_image(record: &AdRecord, image_root: &Path) -> Result<ImageAttachment> {
        let rel = record
            .image_path
            .as_deref()
            .ok_or_else(|| Error::ImageMissing(record.image_id.clone()))?;
        ImageAttachment::from_file(&image_root.join(rel))
    }

    fn ask(
        &self,
        v: &mut Verbalization,
        step: &str,
        prompt_id: &str,
        backend: &dyn ChatBackend,
        request: ChatRequest,
    ) -> Result<String> {
        let text = backend.complete(&request.with_max_tokens(self.max_tokens))?.text;
        v.provenance.push(ProvenanceEntry {
            step: step.to_string(),
            prompt_id: prompt_id.to_string(),
            backend_id: backend.backend_id().to_string(),
            raw_response: text.clone(),
        });
        Ok(text.trim().to_string())
    }

    /// Fills V, T, IN and UH from four image questions.
    pub fn extract_views(&self, record: &AdRecord, vlm: &dyn ChatBackend, image_root: &Path) -> Result<Verbalization> {
        if record.image_path.is_none() {
            return Err(Error::ImageMissing(record.image_id.clone()));
        }
        if !vlm.supports_images() {
            return Err(Error::ImageUnsupported(vlm.backend_id().to_string()));
        }
        let image = Self::load_image(record, image_root)?;
        let mut v = Verbalization::new(&record.image_id);
        let ask = |v: &mut Verbalization, step: &str, id: &str| -> Result<String> {
            let request = ChatRequest::user(self.catalog.template(id)?).with_image(image.clone());
            self.ask(v, step, id, vlm, request)
        };
        let objects = ask(&mut v, "objects", ids::OBJECTS)?;
        let scene = ask(&mut v, "scene_text", ids::SCENE_TEXT)?;
        let narration = ask(&mut v, "narration", ids::NARRATION)?;
        let unusual = ask(&mut v, "unusualness", ids::UNUSUAL)?;
        v.objects = Some(parse_objects(&objects));
        v.scene_text = Some(scene);
        v.narration = Some(narration);
        v.unusualness = Some(unusual);
        Ok(v)
    }

    pub fn combine_request(&self, v: &Verbalization) -> Result<ChatRequest> {
        let objects = Verbalization::need(&v.objects, "combine", "objects")?.join(", ");
        let prompt = self.catalog.render(
            ids::COMBINE,
            &[
                ("objects", &objects),
                ("scene_text", Verbalization::need(&v.scene_text, "combine", "scene_text")?),
                ("narration", Verbalization::need(&v.narration, "combine", "narration")?),
                ("unusualness", Verbalization::need(&v.unusualness, "combine", "unusualness")?),
            ],
        )?;
        Ok(ChatRequest::user(prompt))
    }

    /// Merges the four views into T_V with a single LLM call.
    pub fn combine(&self, mut v: Verbalization, llm: &dyn ChatBackend) -> Result<Verbalization> {
        let request = self.combine_request(&v)?;
        let text = self.ask(&mut v, "combine", ids::COMBINE, llm, request)?;
        v.combined = Some(text);
        Ok(v)
    }

    /// Picks one statement from the candidate space of `objects` given the basis text,
    /// and stores it in `s_hat_in` (narration basis) or `s_hat` (combined basis).
    pub fn detect_statement(
        &self,
        v: &mut Verbalization,
        basis: DetectionBasis,
        objects: &[String],
        llm: &dyn ChatBackend,
    ) -> Result<AtypicalityStatement> {
        let description = match basis {
            DetectionBasis::Narration => Verbalization::need(&v.narration, "detect_statement", "narration")?,
            DetectionBasis::Combined => Verbalization::need(&v.combined, "detect_statement", "combined")?,
        }
        .clone();
        let candidates = generate_candidates(self.taxonomy, &v.image_id, objects, &AtypicalityCategory::ATYPICAL)?;
        if candidates.is_empty() {
            return Err(Error::NoCandidates(objects.len()));
        }
        let texts: Vec<&str> = candidates.statements.iter().map(|s| s.text.as_str()).collect();
        let prompt = self.catalog.render(
            ids::DETECT_STATEMENT,
            &[("description", &description), ("options", &numbered_options(&texts))],
        )?;
        let request = ChatRequest::user(prompt).with_max_tokens(self.max_tokens);
        let (position, raw) = choose_one(llm, self.catalog, request, texts.len())?;
        v.provenance.push(ProvenanceEntry {
            step: format!("detect_statement.{}", match basis {
                DetectionBasis::Narration => "in",
                DetectionBasis::Combined => "t_v",
            }),
            prompt_id: ids::DETECT_STATEMENT.to_string(),
            backend_id: llm.backend_id().to_string(),
            raw_response: raw,
        });
        let chosen = candidates.statements[position].clone();
        match basis {
            DetectionBasis::Narration => v.s_hat_in = Some(chosen.clone()),
            DetectionBasis::Combined => v.s_hat = Some(chosen.clone()),
        }
        Ok(chosen)
    }
}
