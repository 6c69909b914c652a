//! JSON-over-HTTP chat-completion client.
//!
//! Request body: `{model, messages: [{role, content}], temperature, max_tokens}`. An
//! attached image turns the last user message's content into a parts array with a
//! `text` part and an `image_url` part carrying a base64 data URL. The completion is
//! the first choice's message content.

use std::time::Duration;

use serde_json::{json, Value};

use super::{BackendSpec, ChatRequest, ChatResponse, ChatTransport, Role, TransportFailure, Usage};
use crate::error::{Error, Result};

pub(crate) fn api_key(spec: &BackendSpec) -> Result<String> {
    let var = spec.api_key_env.clone().unwrap_or_default();
    match std::env::var(&var) {
        Ok(v) if !v.is_empty() => Ok(v),
        _ => Err(Error::AuthMissing {
            backend_id: spec.backend_id.clone(),
            env_var: var,
        }),
    }
}

pub(crate) fn endpoint_url(base: &str, path: &str) -> String {
    let base = base.trim_end_matches('/');
    if base.ends_with(path) {
        base.to_string()
    } else {
        format!("{base}/{path}")
    }
}

pub struct RemoteChat {
    client: reqwest::blocking::Client,
    url: String,
}

impl RemoteChat {
    pub fn new(spec: &BackendSpec) -> Result<Self> {
        let endpoint = spec
            .endpoint
            .as_deref()
            .ok_or_else(|| Error::Config(format!("{}: missing endpoint", spec.backend_id)))?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(spec.timeout_secs))
            .build()
            .map_err(|e| Error::backend(&spec.backend_id, e.to_string()))?;
        Ok(Self {
            client,
            url: endpoint_url(endpoint, "chat/completions"),
        })
    }
}

/// Wire body for a request.
pub fn request_body(model: &str, request: &ChatRequest) -> Value {
    let last_user = request.messages.iter().rposition(|m| m.role == Role::User);
    let messages: Vec<Value> = request
        .messages
        .iter()
        .enumerate()
        .map(|(i, m)| match (&request.image_attachment, Some(i) == last_user) {
            (Some(image), true) => json!({
                "role": m.role,
                "content": [
                    {"type": "text", "text": m.content},
                    {"type": "image_url", "image_url": {"url": image.data_url()}},
                ],
            }),
            _ => json!({"role": m.role, "content": m.content}),
        })
        .collect();
    json!({
        "model": model,
        "messages": messages,
        "temperature": request.temperature,
        "max_tokens": request.max_tokens,
    })
}

pub fn parse_response(body: &Value) -> Option<(String, Option<Usage>)> {
    let content = &body["choices"][0]["message"]["content"];
    let text = match content {
        Value::String(s) => s.clone(),
        Value::Array(parts) => parts
            .iter()
            .filter_map(|p| p["text"].as_str())
            .collect::<Vec<_>>()
            .join(""),
        _ => return None,
    };
    let usage = body.get("usage").and_then(|u| {
        Some(Usage {
            prompt_tokens: u["prompt_tokens"].as_u64()?,
            completion_tokens: u["completion_tokens"].as_u64().unwrap_or(0),
            total_tokens: u["total_tokens"].as_u64().unwrap_or(0),
        })
    });
    Some((text, usage))
}

impl ChatTransport for RemoteChat {
    fn send(&self, spec: &BackendSpec, request: &ChatRequest) -> std::result::Result<ChatResponse, TransportFailure> {
        let key = api_key(spec).map_err(TransportFailure::Fatal)?;
        let body = request_body(&spec.model_name, request);
        let resp = self
            .client
            .post(&self.url)
            .bearer_auth(key)
            .json(&body)
            .send()
            .map_err(|e| TransportFailure::Retryable(e.to_string()))?;
        let status = resp.status();
        if status.as_u16() == 429 {
            return Err(TransportFailure::RateLimited(format!("HTTP {status}")));
        }
        let text = resp
            .text()
            .map_err(|e| TransportFailure::Retryable(e.to_string()))?;
        if status.is_server_error() {
            return Err(TransportFailure::Retryable(format!("HTTP {status}: {text}")));
        }
        if !status.is_success() {
            return Err(TransportFailure::Fatal(Error::backend(
                &spec.backend_id,
                format!("HTTP {status}: {text}"),
            )));
        }
        let value: Value = serde_json::from_str(&text).map_err(|e| {
            TransportFailure::Fatal(Error::backend(&spec.backend_id, format!("bad JSON: {e}")))
        })?;
        let (text, usage) = parse_response(&value).ok_or_else(|| {
            TransportFailure::Fatal(Error::backend(&spec.backend_id, "response has no choices[0].message.content"))
        })?;
        Ok(ChatResponse {
            text,
            usage,
            from_cache: false,
            latency: Duration::ZERO,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::super::ImageAttachment;
    use super::*;

    #[test]
    fn body_shape() {
        let req = ChatRequest::user("Describe the image in detail.")
            .with_system("be brief")
            .with_image(ImageAttachment {
                mime: "image/png".into(),
                data: vec![0, 1],
            });
        let body = request_body("llava", &req);
        assert_eq!(body["model"], "llava");
        assert_eq!(body["temperature"], 0.0);
        assert_eq!(body["messages"][0]["role"], "system");
        assert_eq!(body["messages"][0]["content"], "be brief");
        let parts = &body["messages"][1]["content"];
        assert_eq!(parts[0]["text"], "Describe the image in detail.");
        assert_eq!(parts[1]["image_url"]["url"], "data:image/png;base64,AAE=");
    }

    #[test]
    fn parses_first_choice() {
        let body = json!({
            "choices": [{"message": {"role": "assistant", "content": "3"}}, {"message": {"content": "4"}}],
            "usage": {"prompt_tokens": 10, "completion_tokens": 1, "total_tokens": 11}
        });
        let (text, usage) = parse_response(&body).unwrap();
        assert_eq!(text, "3");
        assert_eq!(usage.unwrap().total_tokens, 11);
        assert!(parse_response(&json!({"choices": []})).is_none());
    }

    #[test]
    fn endpoint_joining() {
        assert_eq!(endpoint_url("http://h/v1/", "chat/completions"), "http://h/v1/chat/completions");
        assert_eq!(endpoint_url("http://h/v1/chat/completions", "chat/completions"), "http://h/v1/chat/completions");
    }
}
