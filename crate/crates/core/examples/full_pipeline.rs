// The whole pipeline on the ten-record fixture, written to a temporary directory.
// A second run reuses the response cache and makes no backend calls.

use std::path::Path;

use atyp_harness::cli::render_text;
use atyp_harness::config::RunConfig;
use atyp_harness::pipeline::Pipeline;

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let config_path = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/run.toml");
    let mut config = RunConfig::load(&config_path)?;
    config.output_dir = dir.path().join("out");
    config.cache_dir = Some(dir.path().join("cache"));

    let first = Pipeline::from_config(config.clone())?.run()?;
    print!("{}", render_text(&first.report));
    println!("backend calls: {:?}", first.manifest.backend_calls);

    let second = Pipeline::from_config(config)?.run()?;
    println!("rerun calls: {:?}", second.manifest.backend_calls);
    println!("identical report: {}", first.report == second.report);
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().expect("pipeline example failed");
}
