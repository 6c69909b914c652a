// Hard-negative generation against a scripted LLM, ARR option assembly and the
// human-validation summary.

use atyp_harness::backends::{Backend, BackendSpec, MockRule, ScriptedMock};
use atyp_harness::corpus::AdRecord;
use atyp_harness::hardneg::{assemble_arr_options, validation_summary, Judgment, NegativeGenerator, NegativeStrategy, Verdict};
use atyp_harness::prompts::PromptCatalog;
use atyp_harness::taxonomy::AtypicalityCategory;

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let positive = "I should buy Heineken beer, because it is refreshing";
    let llm = Backend::with_transport(
        BackendSpec::scripted("llm", false),
        Box::new(ScriptedMock::from_rules(vec![
            MockRule::contains("changing the action", "I shouldn't buy Heineken Beer, because it is refreshing"),
            MockRule::contains("changing the reason", "I should buy Heineken beer, because it is not refreshing"),
            MockRule::contains("negating or modifying an adjective", "I should buy Heineken beer, because it is bitter"),
            MockRule::contains("substituting at least one object", "I should buy Corona beer, because it is refreshing"),
            MockRule::contains("completely unrelated", "I should sell my car, because it is refreshing"),
        ])),
    )?;
    let catalog = PromptCatalog::default();
    let generator = NegativeGenerator::new(&llm, &catalog);
    let negatives = generator.gen_hard_negatives("ad01", 0, positive, &NegativeStrategy::ALL)?;
    for n in &negatives {
        println!("{:<16} {}", n.strategy.name(), n.text);
    }

    let record = AdRecord {
        image_id: "ad01".into(),
        image_path: None,
        action_reasons: vec![
            positive.into(),
            "I should drink Heineken, because it feels light".into(),
            "I should choose this lager, because it is smooth".into(),
        ],
        atypicality_labels: vec![AtypicalityCategory::TR1],
        primary_object: Some("beer bottle".into()),
        secondary_object: Some("feather".into()),
        topic: None,
    };
    let (set, warnings) = assemble_arr_options(&record, &negatives, 3)?;
    println!("{} options, positives at {:?}, {} warnings", set.len(), set.answer_indices, warnings.len());

    let judgments: Vec<Judgment> = (0..set.negatives.len())
        .map(|i| Judgment {
            option_id: set.negative_option_id(i),
            verdict: if i == 4 { Verdict::Positive } else { Verdict::Negative },
        })
        .collect();
    let summary = validation_summary(&[set], &judgments)?;
    println!(
        "true-negative rate {:.2}% ({} of {} judged), offenders: {:?}",
        100.0 * summary.true_negative_rate.unwrap_or(0.0),
        summary.marked_negative,
        summary.judged_negatives,
        summary.offenders.iter().map(|o| o.strategy.name()).collect::<Vec<_>>()
    );
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().expect("hard negative example failed");
}
