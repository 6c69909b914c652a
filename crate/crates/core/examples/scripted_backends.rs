// Scripted backends, the response cache and call accounting.

use atyp_harness::backends::{Backend, BackendSpec, CachedBackend, ChatBackend, ChatRequest, MockRule, ResponseCache, ScriptedMock};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let mock = ScriptedMock::from_rules(vec![MockRule::contains("What is unusual", "The beer has a feather texture")]);
    let backend = Backend::with_transport(BackendSpec::scripted("vlm", true), Box::new(mock))?;
    let cached = CachedBackend::new(backend, ResponseCache::new(dir.path()));

    let request = ChatRequest::user("What is unusual about the image?");
    let first = cached.complete(&request)?;
    let second = cached.complete(&request)?;
    println!("{:?} (from cache: {}, then {})", first.text, first.from_cache, second.from_cache);
    println!("transport calls: {}", cached.call_count());

    let warmer = cached.complete(&request.clone().with_temperature(0.2));
    println!("temperature change is a new key: {}", warmer.is_ok() && cached.call_count() == 2);
    let stats = cached.cache().stats()?;
    println!("cache holds {} entries", stats.entries);

    let unmatched = cached.complete(&ChatRequest::user("something else"));
    println!("unmatched prompt: {}", unmatched.unwrap_err());
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().expect("backend example failed");
}
