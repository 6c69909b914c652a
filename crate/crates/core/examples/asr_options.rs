// Statement retrieval options for one fixture record: the ground truth plus
// wrong-object, wrong-relation and swapped negatives, shuffled by seed.

use std::path::Path;

use atyp_harness::corpus::load_corpus;
use atyp_harness::statements::{build_asr_options, NegativeKind, DEFAULT_K};
use atyp_harness::taxonomy::Taxonomy;

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let corpus = load_corpus(&Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/corpus.jsonl"))?;
    let tax = Taxonomy::default();
    for id in ["ad01", "ad05"] {
        let record = corpus.get(id).expect("fixture record");
        let set = build_asr_options(&tax, record, &corpus, DEFAULT_K, 7)?;
        println!("{id} labels {:?}: {} options, answer {}", record.atypicality_labels, set.len(), set.answer_index + 1);
        for (i, s) in set.options().iter().enumerate() {
            let tag = set.kind_at(i).map_or("positive", NegativeKind::name);
            println!("  {}. [{tag}] {}", i + 1, s.text);
        }
    }
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().expect("asr example failed");
}
