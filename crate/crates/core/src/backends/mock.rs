//! Scripted mock backend: ordered rules, first match wins.
//!
//! A rule matches when every condition it sets holds: all `contains` substrings occur
//! in the prompt text, `digest` equals the SHA-256 of the prompt text, and
//! `image_sha256` equals the digest of the attached image. The response depends only
//! on the request content.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BackendSpec, ChatRequest, ChatResponse, ChatTransport, TransportFailure};
use crate::error::{Error, Result};
use crate::seeding::sha256_hex;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Needles {
    One(String),
    All(Vec<String>),
}

impl Needles {
    fn all_in(&self, haystack: &str) -> bool {
        match self {
            Needles::One(s) => haystack.contains(s.as_str()),
            Needles::All(v) => v.iter().all(|s| haystack.contains(s.as_str())),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MockRule {
    #[serde(default, rename = "match", alias = "contains", skip_serializing_if = "Option::is_none")]
    pub contains: Option<Needles>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub digest: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_sha256: Option<String>,
    pub response: String,
}

impl MockRule {
    pub fn contains(needle: impl Into<String>, response: impl Into<String>) -> Self {
        Self {
            contains: Some(Needles::One(needle.into())),
            digest: None,
            image_sha256: None,
            response: response.into(),
        }
    }

    pub fn contains_all(needles: &[&str], response: impl Into<String>) -> Self {
        Self {
            contains: Some(Needles::All(needles.iter().map(|s| s.to_string()).collect())),
            digest: None,
            image_sha256: None,
            response: response.into(),
        }
    }

    pub fn digest(digest: impl Into<String>, response: impl Into<String>) -> Self {
        Self {
            contains: None,
            digest: Some(digest.into()),
            image_sha256: None,
            response: response.into(),
        }
    }

    pub fn for_image(mut self, image_sha256: impl Into<String>) -> Self {
        self.image_sha256 = Some(image_sha256.into());
        self
    }

    fn matches(&self, prompt: &str, digest: &str, image: Option<&str>) -> bool {
        self.contains.as_ref().is_none_or(|n| n.all_in(prompt))
            && self.digest.as_deref().is_none_or(|d| d.eq_ignore_ascii_case(digest))
            && self
                .image_sha256
                .as_deref()
                .is_none_or(|want| image.is_some_and(|got| want.eq_ignore_ascii_case(got)))
    }
}

/// Rule file contents.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MockRules {
    pub rules: Vec<MockRule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default: Option<String>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RuleFile {
    Full(MockRules),
    Bare(Vec<MockRule>),
}

type Responder = Box<dyn Fn(&ChatRequest) -> Option<String> + Send + Sync>;

pub struct ScriptedMock {
    rules: MockRules,
    responder: Option<Responder>,
}

impl ScriptedMock {
    pub fn new(rules: MockRules) -> Self {
        Self {
            rules,
            responder: None,
        }
    }

    pub fn from_rules(rules: Vec<MockRule>) -> Self {
        Self::new(MockRules {
            rules,
            default: None,
        })
    }

    /// A mock computed by a pure function of the request, consulted after the rules.
    pub fn from_fn(f: impl Fn(&ChatRequest) -> Option<String> + Send + Sync + 'static) -> Self {
        Self {
            rules: MockRules::default(),
            responder: Some(Box::new(f)),
        }
    }

    pub fn with_default(mut self, response: impl Into<String>) -> Self {
        self.rules.default = Some(response.into());
        self
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let rules = match serde_json::from_str::<RuleFile>(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        {
            RuleFile::Full(r) => r,
            RuleFile::Bare(rules) => MockRules {
                rules,
                default: None,
            },
        };
        Ok(Self::new(rules))
    }

    pub fn prompt_digest(request: &ChatRequest) -> String {
        sha256_hex(request.prompt_text().as_bytes())
    }

    pub fn respond(&self, request: &ChatRequest) -> Option<String> {
        let prompt = request.prompt_text();
        let digest = sha256_hex(prompt.as_bytes());
        let image = request.image_attachment.as_ref().map(|i| i.sha256());
        self.rules
            .rules
            .iter()
            .find(|r| r.matches(&prompt, &digest, image.as_deref()))
            .map(|r| r.response.clone())
            .or_else(|| self.responder.as_ref().and_then(|f| f(request)))
            .or_else(|| self.rules.default.clone())
    }
}

impl ChatTransport for ScriptedMock {
    fn send(&self, spec: &BackendSpec, request: &ChatRequest) -> std::result::Result<ChatResponse, TransportFailure> {
        self.respond(request).map(ChatResponse::text).ok_or_else(|| {
            TransportFailure::Fatal(Error::backend(
                &spec.backend_id,
                format!(
                    "no scripted rule matches prompt (digest {})",
                    Self::prompt_digest(request)
                ),
            ))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::super::{Backend, ChatBackend, ImageAttachment};
    use super::*;

    #[test]
    fn first_match_wins() {
        let mock = ScriptedMock::from_rules(vec![
            MockRule::contains("What is unusual", "The beer has a feather texture"),
            MockRule::contains("unusual", "second"),
        ]);
        let backend = Backend::with_transport(BackendSpec::scripted("m", true), Box::new(mock)).unwrap();
        let r = backend
            .complete(&ChatRequest::user("What is unusual about the image?"))
            .unwrap();
        assert_eq!(r.text, "The beer has a feather texture");
        assert_eq!(backend.call_count(), 1);
    }

    #[test]
    fn digest_and_image_conditions() {
        let req = ChatRequest::user("exact prompt");
        let img = ImageAttachment {
            mime: "image/png".into(),
            data: b"pixels".to_vec(),
        };
        let mock = ScriptedMock::from_rules(vec![
            MockRule::contains("exact", "for image").for_image(img.sha256()),
            MockRule::digest(ScriptedMock::prompt_digest(&req), "by digest"),
        ]);
        assert_eq!(mock.respond(&req).as_deref(), Some("by digest"));
        assert_eq!(mock.respond(&req.clone().with_image(img)).as_deref(), Some("for image"));
        assert_eq!(mock.respond(&ChatRequest::user("other")), None);
    }

    #[test]
    fn unmatched_prompt_is_a_backend_error() {
        let backend =
            Backend::with_transport(BackendSpec::scripted("m", false), Box::new(ScriptedMock::from_rules(vec![])))
                .unwrap();
        assert!(matches!(
            backend.complete(&ChatRequest::user("x")),
            Err(Error::BackendError { .. })
        ));
        // fatal failures are not retried
        assert_eq!(backend.call_count(), 1);
    }

    #[test]
    fn rule_file_formats() {
        let dir = tempfile::tempdir().unwrap();
        let full = dir.path().join("full.json");
        std::fs::write(
            &full,
            r#"{"rules":[{"match":["a","b"],"response":"ab"}],"default":"d"}"#,
        )
        .unwrap();
        let mock = ScriptedMock::from_file(&full).unwrap();
        assert_eq!(mock.respond(&ChatRequest::user("b and a")).as_deref(), Some("ab"));
        assert_eq!(mock.respond(&ChatRequest::user("a")).as_deref(), Some("d"));
        let bare = dir.path().join("bare.json");
        std::fs::write(&bare, r#"[{"contains":"x","response":"y"}]"#).unwrap();
        assert_eq!(
            ScriptedMock::from_file(&bare).unwrap().respond(&ChatRequest::user("x")).as_deref(),
            Some("y")
        );
    }
}
