#![allow(dead_code)]

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use atyp_harness::backends::{Backend, BackendSpec, ChatRequest, ImageAttachment, ScriptedMock};
use atyp_harness::config::RunConfig;
use atyp_harness::corpus::{gt_label_set, load_corpus, AdRecord, Corpus};
use atyp_harness::pipeline::Backends;

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

pub fn corpus() -> Corpus {
    load_corpus(&fixtures().join("corpus.jsonl")).unwrap()
}

/// The fixture run config with output and cache redirected into `dir`.
pub fn fixture_config(dir: &Path) -> RunConfig {
    let mut c = RunConfig::load(&fixtures().join("run.toml")).unwrap();
    c.output_dir = dir.join("out");
    c.cache_dir = Some(dir.join("cache"));
    c
}

/// Numbered options of a prompt, 1-based label stripped.
pub fn numbered_options(prompt: &str) -> Vec<String> {
    let re = regex::Regex::new(r"^(\d+)\. (.*)$").unwrap();
    prompt
        .lines()
        .filter_map(|l| re.captures(l).map(|c| c[2].to_string()))
        .collect()
}

fn marker(id: &str) -> String {
    format!("[[{id}]]")
}

/// A backend that knows the answer key. Verbalization views carry a record marker
/// so text-only task prompts can be traced back to their record; task prompts are
/// answered from the record's ground truth.
pub fn oracle_backend(id: &str) -> Backend {
    let records: Arc<HashMap<String, AdRecord>> = Arc::new(
        corpus()
            .records()
            .iter()
            .map(|r| (r.image_id.clone(), r.clone()))
            .collect(),
    );
    let by_image: HashMap<String, String> = records
        .values()
        .map(|r| {
            let path = fixtures().join(r.image_path.as_deref().unwrap());
            (ImageAttachment::from_file(&path).unwrap().sha256(), r.image_id.clone())
        })
        .collect();
    let marker_re = regex::Regex::new(r"\[\[(ad\d+)\]\]").unwrap();
    let tax = atyp_harness::taxonomy::Taxonomy::default();

    let answer = move |req: &ChatRequest| -> Option<String> {
        let prompt = req.prompt_text();
        if let Some(pos) = prompt.find("Action-reason statement: ") {
            let positive = prompt[pos + 25..].lines().next()?.to_string();
            let (action, reason) = positive.split_once(", because ")?;
            let out = if prompt.contains("changing the action") {
                format!("{} never, because {reason}", action)
            } else if prompt.contains("changing the reason") {
                format!("{action}, because it is expensive")
            } else if prompt.contains("negating or modifying an adjective") {
                format!("{action}, because it is not true that {reason}")
            } else if prompt.contains("substituting at least one object") {
                format!("{action} with a rusty nail, because {reason}")
            } else {
                format!("I should paint my fence, because {reason}")
            };
            return Some(out);
        }
        let id = match &req.image_attachment {
            Some(img) if !prompt.contains("Combine this information") => by_image.get(&img.sha256())?.clone(),
            _ => marker_re.captures(&prompt)?[1].to_string(),
        };
        let r = &records[&id];
        let m = marker(&id);
        if prompt.contains("List the top 5 objects") {
            return Some(match r.objects() {
                Some((p, s)) => format!("{p}\n{s}\ntable"),
                None => "table\nchair".into(),
            });
        }
        if prompt.contains("What text appears") {
            return Some(m);
        }
        if prompt.contains("Describe the image in detail") || prompt.contains("What is unusual") {
            return Some(format!("{m} an advertisement"));
        }
        if prompt.contains("Combine this information") {
            return Some(format!("{m} combined description"));
        }
        if prompt.contains("best describes the atypical portrayal") {
            return Some("1".into());
        }
        if prompt.contains("Which of the categories above apply") {
            let ids: Vec<&str> = gt_label_set(r).iter().map(|c| c.id()).collect();
            return Some(ids.join(", "));
        }
        if prompt.contains("Fill in the primary and secondary objects") {
            let (p, s) = r.objects()?;
            return Some(format!("primary: {p}\nsecondary: {s}"));
        }
        let options = numbered_options(&prompt);
        if prompt.contains("correctly describes the atypicality") {
            let gt = atyp_harness::corpus::gt_statement(&tax, r).ok()?;
            let i = options.iter().position(|o| *o == gt.text)?;
            return Some((i + 1).to_string());
        }
        let hits: Vec<String> = options
            .iter()
            .enumerate()
            .filter(|(_, o)| r.action_reasons.contains(o))
            .map(|(i, _)| (i + 1).to_string())
            .collect();
        if prompt.contains("correct interpretation of this advertisement") {
            return hits.first().cloned();
        }
        if prompt.contains("Choose the") {
            return Some(hits.join(", "));
        }
        None
    };
    Backend::with_transport(BackendSpec::scripted(id, true), Box::new(ScriptedMock::from_fn(answer))).unwrap()
}

/// Config for the oracle: every task, both direct-image and verbal inputs.
pub fn oracle_config(dir: &Path) -> RunConfig {
    let text = format!(
        r#"
corpus = {corpus:?}
seed = 11
vlm = "oracle"
llm = "oracle"
output_dir = {out:?}
cache_dir = {cache:?}

[[backends]]
backend_id = "oracle"
kind = "scripted_mock"
supports_images = true

[[tasks]]
task = "mac"
backend = "oracle"
input_variant = "t_v"

[[tasks]]
task = "mac"
backend = "oracle"
input_variant = "direct_image"

[[tasks]]
task = "asr"
backend = "oracle"
input_variant = "t_v"

[[tasks]]
task = "aor"
backend = "oracle"
input_variant = "direct_image"

[[tasks]]
task = "arr_single"
backend = "oracle"
input_variant = "direct_image"

[[tasks]]
task = "arr_multi"
backend = "oracle"
input_variant = "t_v"
"#,
        corpus = fixtures().join("corpus.jsonl").to_str().unwrap(),
        out = dir.join("out").to_str().unwrap(),
        cache = dir.join("cache").to_str().unwrap(),
    );
    RunConfig::from_toml_str(&text, dir).unwrap()
}

pub fn oracle_backends(config: &RunConfig) -> Backends {
    let mut b = Backends::new(config.cache_dir());
    b.add(oracle_backend("oracle"));
    b
}
