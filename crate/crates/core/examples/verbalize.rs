// Verbalizes one fixture image with the scripted VLM and LLM rule files, then
// renders every input variant.

use std::path::Path;

use atyp_harness::backends::{Backend, BackendSpec};
use atyp_harness::corpus::load_corpus;
use atyp_harness::prompts::PromptCatalog;
use atyp_harness::taxonomy::Taxonomy;
use atyp_harness::verbalizer::{render_variant, DetectionBasis, VerbalizationVariant, Verbalizer};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let corpus = load_corpus(&fixtures.join("corpus.jsonl"))?;
    let mut vlm_spec = BackendSpec::scripted("vlm", true);
    vlm_spec.rules_path = Some(fixtures.join("vlm_rules.json"));
    let mut llm_spec = BackendSpec::scripted("llm", false);
    llm_spec.rules_path = Some(fixtures.join("llm_rules.json"));
    let vlm = Backend::from_spec(vlm_spec)?;
    let llm = Backend::from_spec(llm_spec)?;

    let tax = Taxonomy::default();
    let catalog = PromptCatalog::default();
    let verbalizer = Verbalizer::new(&tax, &catalog);
    let record = corpus.get("ad01").expect("fixture record");
    let v = verbalizer.extract_views(record, &vlm, &fixtures)?;
    let mut v = verbalizer.combine(v, &llm)?;
    let objects = v.objects.clone().unwrap_or_default();
    let s_hat_in = verbalizer.detect_statement(&mut v, DetectionBasis::Narration, &objects, &llm)?;
    println!("objects: {objects:?}");
    println!("detected statement: {}", s_hat_in.text);
    for variant in VerbalizationVariant::ALL {
        println!("--- {}\n{}", variant.name(), render_variant(&v, variant)?);
    }
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().expect("verbalize example failed");
}
