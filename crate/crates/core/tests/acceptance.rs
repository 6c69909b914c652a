//! Acceptance criteria, each checked against an independent oracle and a time budget.
//! Prints one PASS/FAIL line per criterion and exits non-zero if any fails.

mod common;

use std::collections::{BTreeSet, HashMap, HashSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use atyp_harness::backends::{cosine_similarity, Backend, BackendSpec, Embedder, MockEmbedder, ScriptedMock};
use atyp_harness::corpus::AdRecord;
use atyp_harness::hardneg::{assemble_arr_options, validation_summary, HardNegative, Judgment, NegativeGenerator, NegativeStrategy, Verdict};
use atyp_harness::metrics::{bucket_scores, mac_scores, precision_at_k, relevant_in_top_k, ScoreReport, SimilarityBucket, TaskScores};
use atyp_harness::pipeline::{Pipeline, REPORT_JSON};
use atyp_harness::prompts::PromptCatalog;
use atyp_harness::seeding::SeededRng;
use atyp_harness::statements::{build_asr_options, generate_candidates, NegativeKind};
use atyp_harness::taxonomy::{AtypicalityCategory, Taxonomy};
use proptest::test_runner::{Config, TestRunner};

type Outcome = Result<(), String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {{
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($msg)+));
        }
    }};
}

fn criterion(n: usize, name: &str, budget: Duration, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let result = match catch_unwind(AssertUnwindSafe(f)) {
        Ok(r) => r,
        Err(p) => Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into())),
    };
    let elapsed = start.elapsed();
    let result = result.and_then(|()| {
        if elapsed <= budget {
            Ok(())
        } else {
            Err(format!("took {elapsed:?}, budget {budget:?}"))
        }
    });
    match &result {
        Ok(()) => println!("PASS criterion {n}: {name} ({:.3}s)", elapsed.as_secs_f64()),
        Err(e) => println!("FAIL criterion {n}: {name} ({:.3}s): {e}", elapsed.as_secs_f64()),
    }
    result.is_ok()
}

fn secs(s: u64) -> Duration {
    Duration::from_secs(s)
}

// 1. candidate combinatorics

fn brute_candidates(objects: &[String], cats: &[AtypicalityCategory]) -> BTreeSet<(AtypicalityCategory, String, String)> {
    let mut out = BTreeSet::new();
    for a in objects {
        for b in objects {
            if a != b {
                for &c in cats {
                    out.insert((c, a.clone(), b.clone()));
                }
            }
        }
    }
    out
}

fn candidate_combinatorics() -> Outcome {
    let tax = Taxonomy::default();
    let cats = AtypicalityCategory::ATYPICAL;
    let five: Vec<String> = ["bottle", "feather", "tree", "lung", "cup"].map(String::from).to_vec();
    let set = generate_candidates(&tax, "x", &five, &cats).map_err(|e| e.to_string())?;
    ensure!(set.statements.len() == 80, "5 objects gave {}", set.statements.len());

    let mut runner = TestRunner::new(Config {
        cases: 200,
        failure_persistence: None,
        ..Config::default()
    });
    let strategy = proptest::collection::btree_set("[a-z]{1,8}", 2..=6);
    runner
        .run(&strategy, |names| {
            let objects: Vec<String> = names.into_iter().collect();
            let n = objects.len();
            let set = generate_candidates(&tax, "x", &objects, &cats).unwrap();
            let closed_form = n * (n - 1) / 2 * 2 * 4;
            let got: BTreeSet<_> = set
                .statements
                .iter()
                .map(|s| (s.category, s.primary.clone(), s.secondary.clone()))
                .collect();
            proptest::prop_assert_eq!(set.statements.len(), closed_form);
            proptest::prop_assert_eq!(got.len(), closed_form);
            proptest::prop_assert_eq!(got, brute_candidates(&objects, &cats));
            Ok(())
        })
        .map_err(|e| e.to_string())
}

// 2. ASR option counts

fn asr_counts() -> Outcome {
    let tax = Taxonomy::default();
    let corpus = common::corpus();
    let cases = [("ad01", 8, 3), ("ad05", 7, 2)];
    for (id, total, relations) in cases {
        let record = corpus.get(id).unwrap();
        let mut first_text: Option<Vec<String>> = None;
        for seed in 0..100u64 {
            let set = build_asr_options(&tax, record, &corpus, 2, seed).map_err(|e| e.to_string())?;
            let again = build_asr_options(&tax, record, &corpus, 2, seed).unwrap();
            ensure!(set == again, "{id} seed {seed} not reproducible");
            ensure!(set.negatives.len() == total, "{id} seed {seed}: {} negatives", set.negatives.len());
            ensure!(set.count_kind(NegativeKind::WrongObject) == 4, "{id}: wrong-object count");
            ensure!(set.count_kind(NegativeKind::WrongRelation) == relations, "{id}: wrong-relation count");
            ensure!(set.count_kind(NegativeKind::Swapped) == 1, "{id}: swapped count");

            let (p, s) = record.objects().unwrap();
            let gt: HashSet<AtypicalityCategory> = record.atypicality_labels.iter().copied().collect();
            for n in &set.negatives {
                let st = &n.statement;
                let ok = match n.kind {
                    NegativeKind::WrongObject => st.category == set.positive.category && (st.primary.as_str(), st.secondary.as_str()) != (p, s),
                    NegativeKind::WrongRelation => st.primary == p && st.secondary == s && !gt.contains(&st.category),
                    NegativeKind::Swapped => st.primary == s && st.secondary == p && st.category == set.positive.category,
                };
                ensure!(ok, "{id}: mislabelled {:?} {}", n.kind, st.text);
            }
            ensure!(set.options()[set.answer_index] == &set.positive, "{id}: answer index");
            let mut sorted: Vec<usize> = set.shuffled_order.clone();
            sorted.sort_unstable();
            ensure!(sorted == (0..=total).collect::<Vec<_>>(), "{id}: order is not a permutation");
            if seed == 0 {
                first_text = Some(set.options().iter().map(|s| s.text.clone()).collect());
            }
        }
        ensure!(first_text.is_some(), "no sets built");
    }
    Ok(())
}

// 3. precision@k

fn precision_oracle() -> Outcome {
    let positives: HashSet<usize> = [0, 1, 7].into();
    ensure!(precision_at_k(&[0, 5, 1], &positives, 3) == 2.0 / 3.0, "2 relevant in top 3 is not 2/3");

    let mut rng = SeededRng::new(99);
    for trial in 0..10_000 {
        let n = 1 + rng.below(18);
        let len = rng.below(n + 1);
        let ranked: Vec<usize> = rng.permutation(n).into_iter().take(len).collect();
        let npos = rng.below(n + 1);
        let pos: HashSet<usize> = rng.permutation(n).into_iter().take(npos).collect();
        let k = 1 + rng.below(5);
        let mut hits = 0usize;
        for slot in 0..k {
            if let Some(item) = ranked.get(slot) {
                if pos.contains(item) {
                    hits += 1;
                }
            }
        }
        let got = precision_at_k(&ranked, &pos, k);
        // got == hits/k exactly, compared as the integer numerator over k
        ensure!(relevant_in_top_k(&ranked, &pos, k) == hits, "trial {trial}: count mismatch");
        ensure!(got * k as f64 == hits as f64 && got == hits as f64 / k as f64, "trial {trial}: {got} != {hits}/{k}");
    }
    Ok(())
}

// 4. MAC scoring

struct BruteLabel {
    p: f64,
    r: f64,
    f1: f64,
}

fn brute_mac(preds: &[BTreeSet<AtypicalityCategory>], gts: &[BTreeSet<AtypicalityCategory>]) -> (Vec<BruteLabel>, [f64; 6], f64) {
    let div = |a: f64, b: f64| if b == 0.0 { 0.0 } else { a / b };
    let labels: Vec<BruteLabel> = AtypicalityCategory::ALL
        .iter()
        .map(|l| {
            let tp = preds.iter().zip(gts).filter(|(p, g)| p.contains(l) && g.contains(l)).count() as f64;
            let np = preds.iter().filter(|p| p.contains(l)).count() as f64;
            let ng = gts.iter().filter(|g| g.contains(l)).count() as f64;
            let p = div(tp, np);
            let r = div(tp, ng);
            BruteLabel { p, r, f1: div(2.0 * p * r, p + r) }
        })
        .collect();
    let mean = |sel: &dyn Fn(&BruteLabel) -> f64, upto: usize| labels[..upto].iter().map(sel).sum::<f64>() / upto as f64;
    // ALL lists the four atypical categories first, NA last
    let macros = [
        mean(&|l| l.p, 5),
        mean(&|l| l.r, 5),
        mean(&|l| l.f1, 5),
        mean(&|l| l.p, 4),
        mean(&|l| l.r, 4),
        mean(&|l| l.f1, 4),
    ];
    let subset = preds.iter().zip(gts).filter(|(p, g)| p == g).count() as f64 / gts.len() as f64;
    (labels, macros, subset)
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() < 1e-12
}

fn check_mac(preds: &[BTreeSet<AtypicalityCategory>], gts: &[BTreeSet<AtypicalityCategory>]) -> Outcome {
    let m = mac_scores(preds, gts).map_err(|e| e.to_string())?;
    let (labels, macros, subset) = brute_mac(preds, gts);
    for (l, b) in AtypicalityCategory::ALL.iter().zip(&labels) {
        let s = m.label(*l);
        ensure!(close(s.precision, b.p) && close(s.recall, b.r) && close(s.f1, b.f1), "label {l:?} differs");
    }
    let got = [
        m.macro_precision,
        m.macro_recall,
        m.macro_f1,
        m.macro_precision_no_na,
        m.macro_recall_no_na,
        m.macro_f1_no_na,
    ];
    for (g, b) in got.iter().zip(macros) {
        ensure!(close(*g, b), "macro {g} != {b}");
    }
    ensure!(close(m.subset_accuracy, subset), "subset accuracy");
    Ok(())
}

fn mac_oracle() -> Outcome {
    use AtypicalityCategory::*;
    let set = |v: &[AtypicalityCategory]| v.iter().copied().collect::<BTreeSet<_>>();
    let preds = [set(&[TR1]), set(&[]), set(&[TR1])];
    let gts = [set(&[TR1]), set(&[TR1]), set(&[OR])];
    let m = mac_scores(&preds, &gts).map_err(|e| e.to_string())?;
    let tr1 = m.label(TR1);
    ensure!(close(tr1.precision, 0.5) && close(tr1.recall, 0.5) && close(tr1.f1, 0.5), "TR1 scores");
    ensure!(m.label(OR).f1 == 0.0, "OR F1");
    ensure!(close(m.subset_accuracy, 1.0 / 3.0), "subset accuracy");
    ensure!(close(m.macro_f1_no_na, 0.125), "macro F1 without NA {}", m.macro_f1_no_na);
    check_mac(&preds, &gts)?;

    let mut rng = SeededRng::new(4);
    let random_set = |rng: &mut SeededRng| -> BTreeSet<AtypicalityCategory> {
        AtypicalityCategory::ALL.iter().copied().filter(|_| rng.below(3) == 0).collect()
    };
    for _ in 0..200 {
        let n = 1 + rng.below(30);
        let gts: Vec<_> = (0..n).map(|_| random_set(&mut rng)).collect();
        let preds: Vec<_> = (0..n).map(|_| random_set(&mut rng)).collect();
        check_mac(&preds, &gts)?;
        let base = mac_scores(&preds, &gts).unwrap().macro_f1_no_na;
        let mutated: Vec<_> = preds
            .iter()
            .map(|p| {
                let mut p = p.clone();
                if !p.remove(&NA) {
                    p.insert(NA);
                }
                p
            })
            .collect();
        ensure!(mac_scores(&mutated, &gts).unwrap().macro_f1_no_na == base, "NA mutation moved macro F1 without NA");
    }
    Ok(())
}

// 5. end-to-end determinism

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let a = common::fixture_config(&dir.path().join("a"));
    let b = common::fixture_config(&dir.path().join("b"));
    let ra = Pipeline::from_config(a.clone()).map_err(|e| e.to_string())?.run().map_err(|e| e.to_string())?;
    Pipeline::from_config(b.clone()).unwrap().run().unwrap();
    let bytes_a = std::fs::read(a.output_dir().join(REPORT_JSON)).unwrap();
    let bytes_b = std::fs::read(b.output_dir().join(REPORT_JSON)).unwrap();
    ensure!(bytes_a == bytes_b, "reports differ between runs");
    ensure!(ra.manifest.backend_calls.values().sum::<usize>() > 0, "first run made no calls");

    let third = Pipeline::from_config(a.clone()).unwrap();
    let summary = third.run().map_err(|e| e.to_string())?;
    let calls: usize = summary.manifest.backend_calls.values().sum();
    ensure!(calls == 0, "cached rerun made {calls} backend calls");
    ensure!(std::fs::read(a.output_dir().join(REPORT_JSON)).unwrap() == bytes_a, "cached rerun changed the report");
    Ok(())
}

// 6. oracle soundness

/// Character-trigram embedder, unrelated to the mock embedder's token hashing.
struct TrigramEmbedder;

impl Embedder for TrigramEmbedder {
    fn embedder_id(&self) -> &str {
        "trigram"
    }

    fn dimension(&self) -> usize {
        97
    }

    fn embed(&self, texts: &[String]) -> atyp_harness::Result<Vec<Vec<f64>>> {
        Ok(texts
            .iter()
            .map(|t| {
                let mut v = vec![0.0; 97];
                let b = t.as_bytes();
                for w in b.windows(3) {
                    v[(w[0] as usize * 31 + w[1] as usize * 7 + w[2] as usize) % 97] += 1.0;
                }
                let n = v.iter().map(|x: &f64| x * x).sum::<f64>().sqrt();
                v.iter_mut().for_each(|x| *x /= n);
                v
            })
            .collect())
    }
}

fn check_perfect(report: &ScoreReport) -> Outcome {
    ensure!(report.sections.len() == 6, "expected 6 sections, got {}", report.sections.len());
    for s in &report.sections {
        ensure!(s.unparsed == 0, "{} / {} has unparsed answers", s.task, s.input_variant);
        match (&s.scores, s.task.as_str()) {
            (TaskScores::Mac(m), _) => ensure!(m.subset_accuracy == 1.0, "MAC {} subset accuracy {}", s.input_variant, m.subset_accuracy),
            (TaskScores::Asr(a), _) => ensure!(a.accuracy == 1.0, "ASR accuracy {}", a.accuracy),
            (TaskScores::Aor(a), _) => ensure!(close(a.mean_similarity, 1.0) && a.n == 7, "AOR mean {}", a.mean_similarity),
            (TaskScores::Arr(a), "arr_multi") => ensure!(a.precision_at == vec![1.0; 3], "ARR multi precision {:?}", a.precision_at),
            (TaskScores::Arr(a), _) => ensure!(a.precision_at[0] == 1.0, "ARR single precision@1 {}", a.precision_at[0]),
        }
    }
    Ok(())
}

fn oracle_soundness() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let config = common::oracle_config(dir.path());
    let embedders: Vec<Box<dyn Embedder>> = vec![
        Box::new(MockEmbedder::default()),
        Box::new(MockEmbedder::with_dimension(16)),
        Box::new(TrigramEmbedder),
    ];
    for e in embedders {
        let id = e.embedder_id().to_string();
        let backends = common::oracle_backends(&config);
        let p = Pipeline::with_backends(config.clone(), backends, e).map_err(|e| e.to_string())?;
        let summary = p.run().map_err(|e| e.to_string())?;
        ensure!(summary.manifest.warnings.is_empty(), "warnings: {:?}", summary.manifest.warnings);
        check_perfect(&summary.report).map_err(|m| format!("{id}: {m}"))?;
    }
    Ok(())
}

// 7. hard-negative plumbing

const HEINEKEN: [&str; 3] = [
    "I should buy Heineken beer, because it is refreshing",
    "I should drink Heineken, because it feels light",
    "I should choose this lager, because it is smooth",
];

fn alteration(strategy: NegativeStrategy, positive: usize) -> String {
    use NegativeStrategy::*;
    let table: [[&str; 3]; 5] = [
        [
            "I shouldn't buy Heineken Beer, because it is refreshing",
            "I shouldn't drink Heineken, because it feels light",
            "I should avoid this lager, because it is smooth",
        ],
        [
            "I should buy Heineken beer, because it is not refreshing",
            "I should drink Heineken, because it is cheap",
            "I should choose this lager, because it is sold everywhere",
        ],
        [
            "I should buy Heineken beer, because it is bitter",
            "I should drink Heineken, because it feels heavy",
            "I should choose this lager, because it is rough",
        ],
        [
            "I should buy Corona beer, because it is refreshing",
            "I should drink Guinness, because it feels light",
            "I should choose this wine, because it is smooth",
        ],
        [
            "I should sell my car, because it is refreshing",
            "I should learn to swim, because it feels light",
            "I should paint the wall, because it is smooth",
        ],
    ];
    let row = match strategy {
        ActionAlter => 0,
        ReasonAlter => 1,
        AdjectiveAlter => 2,
        ObjectSwap => 3,
        StatementAlter => 4,
    };
    table[row][positive].to_string()
}

fn heineken_llm() -> Backend {
    let phrase = [
        (NegativeStrategy::ActionAlter, "changing the action"),
        (NegativeStrategy::ReasonAlter, "changing the reason"),
        (NegativeStrategy::AdjectiveAlter, "negating or modifying an adjective"),
        (NegativeStrategy::ObjectSwap, "substituting at least one object"),
        (NegativeStrategy::StatementAlter, "completely unrelated"),
    ];
    let mock = ScriptedMock::from_fn(move |req| {
        let prompt = req.prompt_text();
        let positive = HEINEKEN.iter().position(|p| prompt.contains(&format!("Action-reason statement: {p}\n")))?;
        let strategy = phrase.iter().find(|(_, ph)| prompt.contains(ph))?.0;
        Some(alteration(strategy, positive))
    });
    Backend::with_transport(BackendSpec::scripted("llm", false), Box::new(mock)).unwrap()
}

fn hardneg_plumbing() -> Outcome {
    let llm = heineken_llm();
    let catalog = PromptCatalog::default();
    let generator = NegativeGenerator::new(&llm, &catalog);
    let mut negatives: Vec<HardNegative> = Vec::new();
    for (i, positive) in HEINEKEN.iter().enumerate() {
        let negs = generator
            .gen_hard_negatives("ad01", i, positive, &NegativeStrategy::ALL)
            .map_err(|e| e.to_string())?;
        ensure!(negs.len() == 5, "positive {i}: {} negatives", negs.len());
        for n in &negs {
            ensure!(n.text == alteration(n.strategy, i), "positive {i}: {:?} tagged {}", n.text, n.strategy);
            ensure!(n.positive_index == i && n.source_positive == *positive, "positive {i}: provenance");
        }
        let tags: BTreeSet<_> = negs.iter().map(|n| n.strategy).collect();
        ensure!(tags.len() == 5, "positive {i}: repeated strategy tags");
        negatives.extend(negs);
    }

    let record = AdRecord {
        image_id: "ad01".into(),
        image_path: None,
        action_reasons: HEINEKEN.map(String::from).to_vec(),
        atypicality_labels: vec![AtypicalityCategory::TR1],
        primary_object: Some("beer bottle".into()),
        secondary_object: Some("feather".into()),
        topic: None,
    };
    let expected: BTreeSet<String> = HEINEKEN
        .iter()
        .map(|s| s.to_string())
        .chain(negatives.iter().map(|n| n.text.clone()))
        .collect();
    for seed in 0..1000u64 {
        let (set, warnings) = assemble_arr_options(&record, &negatives, seed).map_err(|e| e.to_string())?;
        ensure!(warnings.is_empty(), "seed {seed}: warnings {warnings:?}");
        let options = set.options();
        ensure!(options.len() == 18, "seed {seed}: {} options", options.len());
        let shown: BTreeSet<String> = options.iter().map(|s| s.to_string()).collect();
        ensure!(shown == expected, "seed {seed}: option texts differ");
        let recovered: BTreeSet<&str> = set.answer_indices.iter().map(|&i| options[i]).collect();
        ensure!(recovered == HEINEKEN.iter().copied().collect(), "seed {seed}: answer indices miss positives");
        let brute: Vec<usize> = (0..18).filter(|&i| HEINEKEN.contains(&options[i])).collect();
        ensure!(set.answer_indices == brute, "seed {seed}: answer indices {:?} vs {brute:?}", set.answer_indices);
        for (i, o) in options.iter().enumerate() {
            if let Some(st) = set.strategy_at(i) {
                ensure!(negatives.iter().any(|n| n.text == *o && n.strategy == st), "seed {seed}: strategy tag lost");
            }
        }
    }
    Ok(())
}

// 8. validation bookkeeping

fn validation_arithmetic() -> Outcome {
    let total = 1669usize;
    let mut option_sets = Vec::new();
    let mut made = 0;
    let mut r = 0;
    while made < total {
        let id = format!("r{r}");
        let count = (total - made).min(15);
        let negatives: Vec<HardNegative> = (0..count)
            .map(|j| HardNegative {
                image_id: id.clone(),
                positive_index: j % 3,
                strategy: NegativeStrategy::ALL[j % 5],
                text: format!("I should try option {r}-{j}, because reason {j}"),
                source_positive: format!("I should do {j}, because of p"),
            })
            .collect();
        let record = AdRecord {
            image_id: id,
            image_path: None,
            action_reasons: (0..3).map(|i| format!("I should act {i}, because of {r}")).collect(),
            atypicality_labels: vec![AtypicalityCategory::NA],
            primary_object: None,
            secondary_object: None,
            topic: None,
        };
        option_sets.push(assemble_arr_options(&record, &negatives, r as u64).unwrap().0);
        made += count;
        r += 1;
    }
    let mut judgments = Vec::new();
    let mut flagged = 0;
    for set in &option_sets {
        for i in 0..set.negatives.len() {
            let verdict = if flagged < 12 && i == 7 {
                flagged += 1;
                Verdict::Positive
            } else {
                Verdict::Negative
            };
            judgments.push(Judgment {
                option_id: set.negative_option_id(i),
                verdict,
            });
        }
    }
    let s = validation_summary(&option_sets, &judgments).map_err(|e| e.to_string())?;
    ensure!(s.generated_negatives == total && s.judged_negatives == total, "negative counts {}/{}", s.generated_negatives, s.judged_negatives);
    ensure!(s.marked_positive == 12 && s.offenders.len() == 12, "positive verdicts {}", s.marked_positive);
    let pct = 100.0 * s.true_negative_rate.ok_or("no rate")?;
    let brute = 100.0 * (total - 12) as f64 / total as f64;
    ensure!(close(pct, brute), "rate {pct} vs recount {brute}");
    ensure!((pct - 99.28).abs() < 0.01 + 1e-9, "true-negative rate {pct:.4}%");
    Ok(())
}

// 9. similarity bucketing

fn bucketing() -> Outcome {
    let e = MockEmbedder::default();
    let sim = |a: &str, b: &str| cosine_similarity(&e.embed_one(a), &e.embed_one(b));
    let same = sim("beer bottle", "beer bottle");
    ensure!(close(same, 1.0) && SimilarityBucket::of(same) == SimilarityBucket::Strong, "identity pair {same}");
    let disjoint = sim("beer bottle", "feather");
    ensure!(disjoint == 0.0 && SimilarityBucket::of(disjoint) == SimilarityBucket::Low, "disjoint pair {disjoint}");
    let half = sim("red bottle", "bottle");
    ensure!(close(half, std::f64::consts::FRAC_1_SQRT_2), "overlap pair {half}");
    // strong is strictly above 0.7 and 1/sqrt(2) = 0.7071 clears it
    ensure!(SimilarityBucket::of(half) == SimilarityBucket::Strong, "1/sqrt(2) bucket");
    ensure!(SimilarityBucket::of(0.7) == SimilarityBucket::Moderate, "0.7 is moderate");
    ensure!(SimilarityBucket::of(0.5) == SimilarityBucket::Moderate, "0.5 is moderate");

    let mut rng = SeededRng::new(17);
    for _ in 0..500 {
        let n = 1 + rng.below(40);
        let vals: Vec<f64> = (0..n)
            .map(|_| match rng.below(6) {
                0 => 0.7,
                1 => 0.5,
                _ => rng.below(10_001) as f64 / 10_000.0,
            })
            .collect();
        let s = bucket_scores(&vals);
        ensure!(close(s.strong + s.moderate + s.low, 1.0), "fractions sum to {}", s.strong + s.moderate + s.low);
        let mut brute: HashMap<&str, usize> = HashMap::new();
        for v in &vals {
            let b = if *v > 0.7 { "strong" } else if *v >= 0.5 { "moderate" } else { "low" };
            *brute.entry(b).or_default() += 1;
        }
        let frac = |k| *brute.get(k).unwrap_or(&0) as f64 / n as f64;
        ensure!(close(s.strong, frac("strong")) && close(s.moderate, frac("moderate")) && close(s.low, frac("low")), "bucket fractions");
    }
    Ok(())
}

fn main() {
    let results = [
        criterion(1, "candidate combinatorics", secs(1), candidate_combinatorics),
        criterion(2, "ASR option counts", secs(1), asr_counts),
        criterion(3, "precision@k oracle equivalence", secs(5), precision_oracle),
        criterion(4, "MAC scoring oracle", secs(5), mac_oracle),
        criterion(5, "end-to-end determinism", secs(10), determinism),
        criterion(6, "oracle soundness", secs(10), oracle_soundness),
        criterion(7, "hard-negative plumbing", secs(5), hardneg_plumbing),
        criterion(8, "validation-summary arithmetic", secs(1), validation_arithmetic),
        criterion(9, "similarity bucketing", secs(1), bucketing),
    ];
    let failed = results.iter().filter(|ok| !**ok).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
