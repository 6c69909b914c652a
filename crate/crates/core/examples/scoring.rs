// Metrics on hand-made predictions: MAC, precision@k and similarity buckets.

use std::collections::{BTreeSet, HashSet};

use atyp_harness::backends::{cosine_similarity, MockEmbedder};
use atyp_harness::metrics::{bucket_scores, mac_scores, precision_at_k, SimilarityBucket};
use atyp_harness::taxonomy::AtypicalityCategory::{self, *};

fn labels(v: &[AtypicalityCategory]) -> BTreeSet<AtypicalityCategory> {
    v.iter().copied().collect()
}

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let preds = [labels(&[TR1]), labels(&[]), labels(&[TR1])];
    let gts = [labels(&[TR1]), labels(&[TR1]), labels(&[OR])];
    let m = mac_scores(&preds, &gts)?;
    for l in &m.per_label {
        println!("{:<4} P {:.2} R {:.2} F1 {:.2}", l.label.id(), l.precision, l.recall, l.f1);
    }
    println!("macro F1 without NA {:.3}, subset accuracy {:.3}", m.macro_f1_no_na, m.subset_accuracy);

    let positives: HashSet<usize> = [0, 2, 5].into();
    for k in 1..=3 {
        println!("precision@{k} of [0, 4, 2] = {:.3}", precision_at_k(&[0, 4, 2], &positives, k));
    }

    let e = MockEmbedder::default();
    let sim = cosine_similarity(&e.embed_one("red bottle"), &e.embed_one("bottle"));
    println!("cos(red bottle, bottle) = {sim:.4} -> {}", SimilarityBucket::of(sim).name());
    let s = bucket_scores(&[1.0, 0.7, 0.55, 0.2]);
    println!("strong {:.2} moderate {:.2} low {:.2} (boundary values {})", s.strong, s.moderate, s.low, s.boundary_values);
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().expect("scoring example failed");
}
