//! The `atyp` command line. Exit codes: 0 success, 1 runtime failure, 2 usage,
//! configuration or schema error.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::backends::ResponseCache;
use crate::config::RunConfig;
use crate::corpus::{ingest_str, load_corpus, sample_subset, SubsetFilter, SubsetSpec};
use crate::error::{Error, Result};
use crate::hardneg::{load_judgments, validation_summary, ArrOptionSet};
use crate::metrics::{ScoreReport, TaskScores};
use crate::pipeline::{
    read_artifact, write_artifact, write_atomic, ArtifactHeader, Pipeline, ARR_OPTIONS, ASR_OPTIONS,
    HARD_NEGATIVES, PREDICTIONS, REPORT_CSV, REPORT_JSON, VERBALIZATIONS,
};
use crate::seeding::derive_seed;
use crate::statements::{build_asr_options, generate_candidates, AsrOptionSet, DEFAULT_K};
use crate::tasks::Prediction;
use crate::taxonomy::{parse_category, AtypicalityCategory, Taxonomy};
use crate::verbalizer::Verbalization;

#[derive(Parser, Debug)]
#[command(name = "atyp", version, about = "Atypicality-aware ad understanding benchmark harness")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct ConfigArgs {
    /// Run configuration (TOML).
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
    #[arg(long)]
    pub concurrency: Option<usize>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum FilterArg {
    All,
    AtypicalOnly,
    TypicalOnly,
}

#[derive(Clone, Copy, Debug, ValueEnum, Default)]
pub enum ReportFormat {
    #[default]
    Text,
    Csv,
    Json,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Validate a corpus file and print label counts.
    Ingest { corpus: PathBuf },
    /// Seeded sample of a corpus, written as JSONL.
    Subset {
        corpus: PathBuf,
        #[arg(long)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value = "all")]
        filter: FilterArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Every atypicality statement an object list allows.
    Candidates {
        /// Comma-separated object names.
        #[arg(long, value_delimiter = ',')]
        objects: Vec<String>,
        /// Categories to use, e.g. "TR1, OR". Defaults to all four atypical ones.
        #[arg(long)]
        categories: Option<String>,
    },
    /// ASR option sets for every atypical record.
    AsrOptions {
        corpus: PathBuf,
        #[arg(long, default_value_t = DEFAULT_K)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Hard-negative generation and validation.
    #[command(subcommand)]
    Hardneg(HardnegCommand),
    /// Verbalize every image with the configured backends.
    Verbalize(ConfigArgs),
    /// Full pipeline: verbalize, build options, run tasks, score, report.
    Run(ConfigArgs),
    /// Score predictions already present in the output directory.
    Score(ConfigArgs),
    /// Print a score report as tables.
    Report {
        report: PathBuf,
        #[arg(long, value_enum, default_value = "text")]
        format: ReportFormat,
    },
    /// Response cache management.
    #[command(subcommand)]
    Cache(CacheCommand),
}

#[derive(Subcommand, Debug)]
pub enum HardnegCommand {
    /// Generate negatives and ARR option sets.
    Generate(ConfigArgs),
    /// Summarize human verdicts on generated negatives.
    Validate {
        #[arg(long)]
        options: PathBuf,
        #[arg(long)]
        judgments: PathBuf,
    },
}

#[derive(Subcommand, Debug)]
pub enum CacheCommand {
    Stats {
        #[arg(long)]
        dir: PathBuf,
    },
    Clear {
        #[arg(long)]
        dir: PathBuf,
    },
}

fn absolute(p: &Path) -> PathBuf {
    std::env::current_dir().map(|d| d.join(p)).unwrap_or_else(|_| p.to_path_buf())
}

impl ConfigArgs {
    /// Loads the config and applies flag overrides; flags win.
    pub fn load(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::load(&self.config)?;
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(d) = &self.output_dir {
            cfg.output_dir = absolute(d);
        }
        if let Some(d) = &self.cache_dir {
            cfg.cache_dir = Some(absolute(d));
        }
        if let Some(c) = self.concurrency {
            cfg.concurrency = c;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn emit(out: &mut dyn Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes())
        .map_err(|e| Error::io("<stdout>", e))
}

fn write_or_print<T: serde::Serialize>(
    out: &mut dyn Write,
    path: Option<&Path>,
    header: &ArtifactHeader,
    items: &[T],
) -> Result<()> {
    match path {
        Some(p) => write_artifact(p, header, items),
        None => {
            let mut text = String::new();
            for item in items {
                text.push_str(&serde_json::to_string(item)?);
                text.push('\n');
            }
            emit(out, &text)
        }
    }
}

fn plain_header(artifact: &str, seed: u64) -> ArtifactHeader {
    ArtifactHeader {
        artifact: artifact.to_string(),
        seed,
        config_digest: String::new(),
        catalog_digest: String::new(),
    }
}

/// Runs one command, writing normal output to `out`. Returns the exit code.
pub fn execute(cli: Cli, out: &mut dyn Write) -> Result<i32> {
    match cli.command {
        Command::Ingest { corpus } => {
            let text = std::fs::read_to_string(&corpus).map_err(|e| Error::io(&corpus, e))?;
            let report = ingest_str(&text);
            let mut msg = format!("{} records, {} errors\n", report.records.len(), report.errors.len());
            for cat in AtypicalityCategory::ALL {
                let n = report
                    .records
                    .iter()
                    .filter(|r| r.atypicality_labels.contains(&cat))
                    .count();
                msg.push_str(&format!("  {cat}: {n}\n"));
            }
            for e in &report.errors {
                msg.push_str(&format!("error: {e}\n"));
            }
            emit(out, &msg)?;
            Ok(if report.errors.is_empty() { 0 } else { 2 })
        }
        Command::Subset {
            corpus,
            size,
            seed,
            filter,
            out: path,
        } => {
            let c = load_corpus(&corpus)?;
            let filter = match filter {
                FilterArg::All => SubsetFilter::All,
                FilterArg::AtypicalOnly => SubsetFilter::AtypicalOnly,
                FilterArg::TypicalOnly => SubsetFilter::TypicalOnly,
            };
            let sub = sample_subset(&c, &SubsetSpec { size, seed, filter })?;
            match path {
                Some(p) => write_atomic(&p, sub.to_jsonl().as_bytes())?,
                None => emit(out, &sub.to_jsonl())?,
            }
            Ok(0)
        }
        Command::Candidates { objects, categories } => {
            let tax = Taxonomy::default();
            let cats: Vec<AtypicalityCategory> = match categories {
                Some(text) => parse_category(&text)?.into_iter().collect(),
                None => AtypicalityCategory::ATYPICAL.to_vec(),
            };
            let objects: Vec<String> = objects.iter().map(|o| o.trim().to_string()).collect();
            let set = generate_candidates(&tax, "cli", &objects, &cats)?;
            let mut msg = String::new();
            for (i, s) in set.statements.iter().enumerate() {
                msg.push_str(&format!("{}\t{}\t{}\t{}\t{}\n", i + 1, s.category, s.primary, s.secondary, s.text));
            }
            if let Some(w) = set.warning {
                msg.push_str(&format!("warning: {w:?}\n"));
            }
            emit(out, &msg)?;
            Ok(0)
        }
        Command::AsrOptions {
            corpus,
            k,
            seed,
            out: path,
        } => {
            let tax = Taxonomy::default();
            let c = load_corpus(&corpus)?;
            let mut sets = Vec::new();
            for r in c.records().iter().filter(|r| r.is_atypical() && r.objects().is_some()) {
                let s = derive_seed(seed, &format!("asr/{}", r.image_id));
                match build_asr_options(&tax, r, &c, k, s) {
                    Ok(set) => sets.push(set),
                    Err(e) => log::warn!("{}: {e}", r.image_id),
                }
            }
            write_or_print(out, path.as_deref(), &plain_header("asr_options", seed), &sets)?;
            Ok(0)
        }
        Command::Hardneg(HardnegCommand::Generate(args)) => {
            let p = Pipeline::from_config(args.load()?)?;
            let mut warnings = Vec::new();
            let (negs, sets) = p.hard_negatives(&mut warnings)?;
            let dir = p.config.output_dir();
            write_artifact(&dir.join(HARD_NEGATIVES), &p.header("hard_negatives"), &negs)?;
            write_artifact(&dir.join(ARR_OPTIONS), &p.header("arr_options"), &sets)?;
            for w in &warnings {
                log::warn!("{w}");
            }
            emit(
                out,
                &format!("{} negatives, {} option sets, {} warnings\n", negs.len(), sets.len(), warnings.len()),
            )?;
            Ok(0)
        }
        Command::Hardneg(HardnegCommand::Validate { options, judgments }) => {
            let (_, sets): (_, Vec<ArrOptionSet>) = read_artifact(&options)?;
            let judgments = load_judgments(&judgments)?;
            let summary = validation_summary(&sets, &judgments)?;
            let mut text = serde_json::to_string_pretty(&summary)?;
            text.push('\n');
            emit(out, &text)?;
            Ok(0)
        }
        Command::Verbalize(args) => {
            let p = Pipeline::from_config(args.load()?)?;
            let mut warnings = Vec::new();
            let verbs = p.verbalize(&mut warnings)?;
            let verbs: Vec<&Verbalization> = verbs.iter().flatten().collect();
            write_artifact(&p.config.output_dir().join(VERBALIZATIONS), &p.header("verbalizations"), &verbs)?;
            for w in &warnings {
                log::warn!("{w}");
            }
            emit(out, &format!("{} verbalized, {} warnings\n", verbs.len(), warnings.len()))?;
            Ok(0)
        }
        Command::Run(args) => {
            let p = Pipeline::from_config(args.load()?)?;
            let summary = p.run()?;
            emit(
                out,
                &format!(
                    "report: {}\nconfig digest: {}\nbackend calls: {}\nwarnings: {}\n",
                    summary.output_dir.join(REPORT_JSON).display(),
                    summary.manifest.config_digest,
                    summary.manifest.backend_calls.values().sum::<usize>(),
                    summary.manifest.warnings.len()
                ),
            )?;
            Ok(0)
        }
        Command::Score(args) => {
            let p = Pipeline::from_config(args.load()?)?;
            let dir = p.config.output_dir();
            let (_, predictions): (_, Vec<Prediction>) = read_artifact(&dir.join(PREDICTIONS))?;
            let optional = |name: &str| dir.join(name).exists().then(|| dir.join(name));
            let asr: Vec<AsrOptionSet> = match optional(ASR_OPTIONS) {
                Some(path) => read_artifact(&path)?.1,
                None => vec![],
            };
            let arr: Vec<ArrOptionSet> = match optional(ARR_OPTIONS) {
                Some(path) => read_artifact(&path)?.1,
                None => vec![],
            };
            let report = p.score(&predictions, &asr, &arr)?;
            write_atomic(&dir.join(REPORT_JSON), report.to_json().as_bytes())?;
            write_atomic(&dir.join(REPORT_CSV), report.to_csv().as_bytes())?;
            emit(out, &render_text(&report))?;
            Ok(0)
        }
        Command::Report { report, format } => {
            let text = std::fs::read_to_string(&report).map_err(|e| Error::io(&report, e))?;
            let parsed: ScoreReport = serde_json::from_str(&text)?;
            let rendered = match format {
                ReportFormat::Text => render_text(&parsed),
                ReportFormat::Csv => parsed.to_csv(),
                ReportFormat::Json => parsed.to_json(),
            };
            emit(out, &rendered)?;
            Ok(0)
        }
        Command::Cache(CacheCommand::Stats { dir }) => {
            let stats = ResponseCache::new(dir).stats()?;
            emit(out, &format!("{} entries, {} bytes\n", stats.entries, stats.bytes))?;
            Ok(0)
        }
        Command::Cache(CacheCommand::Clear { dir }) => {
            let n = ResponseCache::new(dir).clear()?;
            emit(out, &format!("removed {n} entries\n"))?;
            Ok(0)
        }
    }
}

/// Human-readable tables, one block per section.
pub fn render_text(report: &ScoreReport) -> String {
    let mut s = format!(
        "seed {}  config {}  prompts {}\n",
        report.seed,
        &report.config_digest[..report.config_digest.len().min(12)],
        &report.catalog_digest[..report.catalog_digest.len().min(12)]
    );
    for sec in &report.sections {
        s.push_str(&format!(
            "\n[{} / {} / {}]  unparsed {}\n",
            sec.task, sec.input_variant, sec.backend_id, sec.unparsed
        ));
        match &sec.scores {
            TaskScores::Mac(m) => {
                s.push_str("label  P      R      F1\n");
                for l in &m.per_label {
                    s.push_str(&format!("{:<6} {:.3}  {:.3}  {:.3}\n", l.label.id(), l.precision, l.recall, l.f1));
                }
                s.push_str(&format!(
                    "macro F1 {:.3}  macro F1 without NA {:.3}  subset acc {:.3}\n",
                    m.macro_f1, m.macro_f1_no_na, m.subset_accuracy
                ));
            }
            TaskScores::Asr(a) => {
                s.push_str(&format!("accuracy {:.3} ({}/{})\n", a.accuracy, a.correct, a.n));
                for (k, v) in &a.errors_by_kind {
                    s.push_str(&format!("  errors {k}: {v}\n"));
                }
            }
            TaskScores::Aor(a) => s.push_str(&format!(
                "mean similarity {:.3}  strong {:.3}  moderate {:.3}  low {:.3}\n",
                a.mean_similarity, a.strong, a.moderate, a.low
            )),
            TaskScores::Arr(a) => {
                let p: Vec<String> = a.precision_at.iter().map(|v| format!("{v:.3}")).collect();
                let h: Vec<String> = a.hit_at.iter().map(|v| format!("{v:.3}")).collect();
                s.push_str(&format!("precision@1..3 {}  hit@1..3 {}\n", p.join(" "), h.join(" ")));
                for (k, v) in &a.errors_by_strategy {
                    s.push_str(&format!("  errors {k}: {v}\n"));
                }
            }
        }
    }
    for w in &report.warnings {
        s.push_str(&format!("warning: {w}\n"));
    }
    s
}

/// Parses `args` and runs the command. Errors are printed to stderr.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    match execute(cli, &mut lock) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_usage() {
                2
            } else {
                1
            }
        }
    }
}
