//! Run configuration: one TOML document naming the corpus, backends and tasks.
//!
//! Relative paths resolve against the directory of the config file. The config digest
//! covers everything that can change results, so it leaves out the cache and output
//! directories and the concurrency limit.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backends::{BackendKind, BackendSpec};
use crate::error::{Error, Result};
use crate::hardneg::NegativeStrategy;
use crate::seeding::sha256_hex;
use crate::statements::DEFAULT_K;
use crate::tasks::{InputVariant, TaskKind, DEFAULT_K_SELECT};
use crate::verbalizer::DetectionBasis;

fn default_k() -> usize {
    DEFAULT_K
}

fn default_k_select() -> usize {
    DEFAULT_K_SELECT
}

fn default_concurrency() -> usize {
    4
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_strategies() -> Vec<NegativeStrategy> {
    NegativeStrategy::ALL.to_vec()
}

fn default_embedder() -> String {
    "mock".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    pub task: TaskKind,
    pub backend: String,
    pub input_variant: InputVariant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: PathBuf,
    /// Directory image paths are relative to; defaults to the corpus directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_root: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_catalog: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub taxonomy: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_k_select")]
    pub k_select: usize,
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Image-capable backend for the four verbalization views.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vlm: Option<String>,
    /// Text backend for combination, statement detection and hard negatives.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub llm: Option<String>,
    /// `"mock"` or the id of a remote backend serving embeddings.
    #[serde(default = "default_embedder")]
    pub embedder: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding_dim: Option<usize>,
    #[serde(default)]
    pub detection_basis: DetectionBasis,
    #[serde(default = "default_strategies")]
    pub strategies: Vec<NegativeStrategy>,
    #[serde(default)]
    pub backends: Vec<BackendSpec>,
    #[serde(default)]
    pub tasks: Vec<TaskConfig>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml_str(&text, &base)
    }

    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.base_dir = base_dir.to_path_buf();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn corpus_path(&self) -> PathBuf {
        self.resolve(&self.corpus)
    }

    pub fn image_root(&self) -> PathBuf {
        match &self.image_root {
            Some(p) => self.resolve(p),
            None => self.corpus_path().parent().map(Path::to_path_buf).unwrap_or_default(),
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.output_dir)
    }

    pub fn cache_dir(&self) -> Option<PathBuf> {
        self.cache_dir.as_deref().map(|p| self.resolve(p))
    }

    /// Backend specs with rule paths made absolute.
    pub fn resolved_backends(&self) -> Vec<BackendSpec> {
        self.backends
            .iter()
            .map(|b| {
                let mut b = b.clone();
                b.rules_path = b.rules_path.as_deref().map(|p| self.resolve(p));
                b
            })
            .collect()
    }

    pub fn backend(&self, id: &str) -> Result<&BackendSpec> {
        self.backends
            .iter()
            .find(|b| b.backend_id == id)
            .ok_or_else(|| Error::UnknownBackend(id.to_string()))
    }

    pub fn needs_verbalization(&self) -> bool {
        self.tasks
            .iter()
            .any(|t| matches!(t.input_variant, InputVariant::Verbal(_)))
    }

    pub fn needs_arr(&self) -> bool {
        self.tasks
            .iter()
            .any(|t| matches!(t.task, TaskKind::ArrSingle | TaskKind::ArrMulti))
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids = BTreeSet::new();
        for b in &self.backends {
            b.validate()?;
            if !ids.insert(b.backend_id.as_str()) {
                return Err(Error::Config(format!("duplicate backend_id {:?}", b.backend_id)));
            }
        }
        if self.k == 0 || self.k_select == 0 || self.concurrency == 0 {
            return Err(Error::Config("k, k_select and concurrency must be at least 1".into()));
        }
        for t in &self.tasks {
            let spec = self.backend(&t.backend)?;
            if t.input_variant == InputVariant::DirectImage && !spec.supports_images {
                return Err(Error::Config(format!(
                    "task {} uses direct_image but backend {} has no image support",
                    t.task, t.backend
                )));
            }
        }
        if self.needs_verbalization() {
            let vlm = self.vlm.as_deref().ok_or_else(|| Error::Config("verbal input variants need `vlm`".into()))?;
            if !self.backend(vlm)?.supports_images {
                return Err(Error::Config(format!("vlm backend {vlm} has no image support")));
            }
        }
        if self.needs_verbalization() || self.needs_arr() {
            let llm = self.llm.as_deref().ok_or_else(|| Error::Config("this run needs `llm`".into()))?;
            self.backend(llm)?;
        }
        if self.embedder != "mock" && self.backend(&self.embedder)?.kind != BackendKind::RemoteChat {
            return Err(Error::Config("embedder must be \"mock\" or a remote backend".into()));
        }
        Ok(())
    }

    /// Content digest of the settings that affect results.
    pub fn digest(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(obj) = v.as_object_mut() {
            for key in ["cache_dir", "output_dir", "concurrency"] {
                obj.remove(key);
            }
        }
        sha256_hex(v.to_string().as_bytes())
    }
}
