//! On-disk response cache.
//!
//! Layout: `<dir>/<d[0..2]>/<d[2..4]>/<digest>.json`, where the digest is the SHA-256
//! of the request fingerprint. Entries are written to a temp file in the target
//! directory and renamed into place.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{ChatBackend, ChatRequest, ChatResponse, Message, Usage};
use crate::error::{Error, Result};
use crate::seeding::sha256_hex;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fingerprint {
    pub backend_id: String,
    pub model_name: String,
    pub messages: Vec<Message>,
    pub image_sha256: Option<String>,
    pub temperature: f64,
    pub max_tokens: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CacheKey(pub String);

impl CacheKey {
    pub fn fingerprint(backend_id: &str, model_name: &str, request: &ChatRequest) -> Fingerprint {
        Fingerprint {
            backend_id: backend_id.to_string(),
            model_name: model_name.to_string(),
            messages: request.messages.clone(),
            image_sha256: request.image_attachment.as_ref().map(|i| i.sha256()),
            temperature: request.temperature,
            max_tokens: request.max_tokens,
        }
    }

    pub fn of(fingerprint: &Fingerprint) -> Self {
        let canonical = serde_json::to_vec(fingerprint).expect("fingerprint serializes");
        CacheKey(sha256_hex(&canonical))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    fingerprint: Fingerprint,
    text: String,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct CacheStats {
    pub entries: usize,
    pub bytes: u64,
}

#[derive(Debug, Clone)]
pub struct ResponseCache {
    dir: PathBuf,
}

impl ResponseCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, key: &CacheKey) -> PathBuf {
        self.dir.join(&key.0[..2]).join(&key.0[2..4]).join(format!("{}.json", key.0))
    }

    /// `Ok(None)` on a miss; `Err(CacheCorrupt)` when an entry exists but cannot be used.
    pub fn get(&self, key: &CacheKey, fingerprint: &Fingerprint) -> Result<Option<(String, Option<Usage>)>> {
        let path = self.path_for(key);
        let bytes = match std::fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(Error::io(path, e)),
        };
        match serde_json::from_slice::<Entry>(&bytes) {
            Ok(entry) if entry.fingerprint == *fingerprint => Ok(Some((entry.text, entry.usage))),
            _ => Err(Error::CacheCorrupt(path)),
        }
    }

    pub fn put(&self, key: &CacheKey, fingerprint: &Fingerprint, response: &ChatResponse) -> Result<()> {
        let path = self.path_for(key);
        let parent = path.parent().unwrap();
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        let entry = Entry {
            fingerprint: fingerprint.clone(),
            text: response.text.clone(),
            usage: response.usage,
        };
        let mut tmp = tempfile::NamedTempFile::new_in(parent).map_err(|e| Error::io(parent, e))?;
        tmp.write_all(&serde_json::to_vec_pretty(&entry)?)
            .map_err(|e| Error::io(tmp.path(), e))?;
        tmp.persist(&path).map_err(|e| Error::io(&path, e.error))?;
        Ok(())
    }

    pub fn stats(&self) -> Result<CacheStats> {
        let mut stats = CacheStats::default();
        if !self.dir.exists() {
            return Ok(stats);
        }
        for entry in walkdir::WalkDir::new(&self.dir) {
            let entry = entry.map_err(|e| Error::io(&self.dir, e.into()))?;
            if entry.file_type().is_file() && entry.path().extension().is_some_and(|e| e == "json") {
                stats.entries += 1;
                stats.bytes += entry.metadata().map(|m| m.len()).unwrap_or(0);
            }
        }
        Ok(stats)
    }

    /// Removes every entry. Returns how many were removed.
    pub fn clear(&self) -> Result<usize> {
        let n = self.stats()?.entries;
        if self.dir.exists() {
            std::fs::remove_dir_all(&self.dir).map_err(|e| Error::io(&self.dir, e))?;
        }
        Ok(n)
    }
}

/// A backend whose completions go through the response cache.
pub struct CachedBackend<B> {
    inner: B,
    cache: ResponseCache,
}

impl<B: ChatBackend> CachedBackend<B> {
    pub fn new(inner: B, cache: ResponseCache) -> Self {
        Self { inner, cache }
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }

    pub fn cache(&self) -> &ResponseCache {
        &self.cache
    }

    pub fn cached_complete(&self, request: &ChatRequest) -> Result<ChatResponse> {
        request.validate()?;
        let fingerprint = CacheKey::fingerprint(self.inner.backend_id(), self.inner.model_name(), request);
        let key = CacheKey::of(&fingerprint);
        match self.cache.get(&key, &fingerprint) {
            Ok(Some((text, usage))) => {
                return Ok(ChatResponse {
                    text,
                    usage,
                    from_cache: true,
                    latency: Duration::ZERO,
                })
            }
            Ok(None) => {}
            Err(Error::CacheCorrupt(path)) => {
                log::warn!("corrupt cache entry {}, recomputing", path.display());
            }
            Err(e) => return Err(e),
        }
        let response = self.inner.complete(request)?;
        self.cache.put(&key, &fingerprint, &response)?;
        Ok(response)
    }
}

impl<B: ChatBackend> ChatBackend for CachedBackend<B> {
    fn backend_id(&self) -> &str {
        self.inner.backend_id()
    }

    fn model_name(&self) -> &str {
        self.inner.model_name()
    }

    fn supports_images(&self) -> bool {
        self.inner.supports_images()
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse> {
        self.cached_complete(request)
    }

    fn call_count(&self) -> usize {
        self.inner.call_count()
    }
}

#[cfg(test)]
mod tests {
    use super::super::{Backend, BackendSpec, MockRule, ScriptedMock};
    use super::*;

    fn cached(dir: &Path) -> CachedBackend<Backend> {
        let mock = ScriptedMock::from_rules(vec![MockRule::contains("", "echo")]);
        let backend = Backend::with_transport(BackendSpec::scripted("llm", false), Box::new(mock)).unwrap();
        CachedBackend::new(backend, ResponseCache::new(dir))
    }

    #[test]
    fn second_request_hits_cache() {
        let dir = tempfile::tempdir().unwrap();
        let b = cached(dir.path());
        let req = ChatRequest::user("hello");
        assert!(!b.cached_complete(&req).unwrap().from_cache);
        let again = b.cached_complete(&req).unwrap();
        assert!(again.from_cache);
        assert_eq!(again.text, "echo");
        assert_eq!(b.call_count(), 1);
        assert_eq!(b.cache().stats().unwrap().entries, 1);
    }

    #[test]
    fn key_is_sensitive_to_every_field() {
        let base = ChatRequest::user("hello");
        let fp = |r: &ChatRequest| CacheKey::of(&CacheKey::fingerprint("llm", "m", r));
        let k0 = fp(&base);
        assert_eq!(k0, fp(&base.clone()));
        assert_ne!(k0, fp(&base.clone().with_temperature(0.2)));
        assert_ne!(k0, fp(&base.clone().with_max_tokens(7)));
        assert_ne!(k0, fp(&ChatRequest::user("hello!")));
        assert_ne!(k0, CacheKey::of(&CacheKey::fingerprint("other", "m", &base)));
        assert_ne!(k0, CacheKey::of(&CacheKey::fingerprint("llm", "m2", &base)));
        let img = super::super::ImageAttachment {
            mime: "image/png".into(),
            data: vec![9],
        };
        assert_ne!(k0, fp(&base.clone().with_image(img)));
    }

    #[test]
    fn temperature_change_misses() {
        let dir = tempfile::tempdir().unwrap();
        let b = cached(dir.path());
        b.cached_complete(&ChatRequest::user("q")).unwrap();
        let r = b.cached_complete(&ChatRequest::user("q").with_temperature(0.2)).unwrap();
        assert!(!r.from_cache);
        assert_eq!(b.call_count(), 2);
    }

    #[test]
    fn corrupt_entry_is_recomputed_and_replaced() {
        let dir = tempfile::tempdir().unwrap();
        let b = cached(dir.path());
        let req = ChatRequest::user("q");
        b.cached_complete(&req).unwrap();
        let fp = CacheKey::fingerprint("llm", "llm-scripted", &req);
        let path = b.cache().path_for(&CacheKey::of(&fp));
        std::fs::write(&path, b"{ not json").unwrap();
        let r = b.cached_complete(&req).unwrap();
        assert!(!r.from_cache);
        assert_eq!(b.call_count(), 2);
        assert!(b.cached_complete(&req).unwrap().from_cache);
    }

    #[test]
    fn clear_removes_entries() {
        let dir = tempfile::tempdir().unwrap();
        let b = cached(&dir.path().join("c"));
        b.cached_complete(&ChatRequest::user("a")).unwrap();
        b.cached_complete(&ChatRequest::user("b")).unwrap();
        assert_eq!(b.cache().clear().unwrap(), 2);
        assert_eq!(b.cache().stats().unwrap(), CacheStats::default());
    }
}
