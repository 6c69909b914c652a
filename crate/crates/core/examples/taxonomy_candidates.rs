// Category parsing, statement rendering and the candidate space of an object list.

use atyp_harness::statements::generate_candidates;
use atyp_harness::taxonomy::{parse_category, AtypicalityCategory, Taxonomy};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let tax = Taxonomy::default();
    for cat in AtypicalityCategory::ATYPICAL {
        println!("{cat}: {}", tax.render_statement(cat, "beer bottle", "feather")?);
    }

    let labels = parse_category("Object Inside Object, Object Replacement")?;
    println!("parsed labels: {labels:?}");

    let objects: Vec<String> = ["beer bottle", "feather", "table"].map(String::from).to_vec();
    let set = generate_candidates(&tax, "ad01", &objects, &AtypicalityCategory::ATYPICAL)?;
    println!("{} objects give {} candidate statements", objects.len(), set.statements.len());
    for s in set.statements.iter().take(4) {
        println!("  {}", s.text);
    }
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().expect("taxonomy example failed");
}
