//! One line per acceptance criterion. Exits nonzero if any criterion fails.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::collections::HashSet;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use clap::Parser;
use ndarray::{Array1, Array2};
use nlu_cli::{run, Cli, RunManifest, RunSummary};
use nlu_core::align::{align, de_align};
use nlu_core::crf::{log_partition, viterbi, CrfView};
use nlu_core::features::{
    Annotator, CaseClass, EntityClass, ResourceText, CASE_CLASSES, ENTITY_CLASSES, FEATURE_DIM,
};
use nlu_core::intent::{attention_logits, attention_weights, IntentPool};
use nlu_core::metrics::{per_token_micro_f1, slot_f1, EvalReport};
use nlu_core::model::{Batch, JointModel};
use nlu_core::slot::{SlotHead, SlotMode};
use nlu_core::tags::{extract_chunks, SlotTag};
use nlu_core::tokenizer::train_vocab;
use nlu_core::toy::toy_grammar;
use nlu_core::train::{train, TrainConfig, TrainEvent};
use nlu_oracles::{all_paths, chunks_by_enumeration, token_counts, Crf};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn nlu(args: &[&str]) -> Result<String, String> {
    let mut argv = vec!["nlu"];
    argv.extend_from_slice(args);
    let cli = Cli::try_parse_from(argv).map_err(|e| e.to_string())?;
    run(cli).map_err(|e| e.to_string())
}

fn path(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

// Intent accuracy, sentence accuracy, slot F1 per row.
const ATIS_PRIOR: [[f64; 3]; 6] = [
    [92.60, 80.70, 94.30],
    [91.10, 78.90, 94.20],
    [95.41, 83.73, 95.42],
    [95.00, 83.40, 95.20],
    [97.76, 86.79, 95.75],
    [97.09, 86.90, 95.80],
];
const SNIPS_PRIOR: [[f64; 3]; 6] = [
    [96.90, 73.20, 87.30],
    [96.70, 74.10, 87.80],
    [96.86, 76.43, 89.27],
    [97.30, 80.90, 91.80],
    [97.43, 80.57, 91.43],
    [97.29, 80.43, 92.23],
];
const ATIS_OURS: [f64; 3] = [97.87, 88.69, 96.25];
const SNIPS_OURS: [f64; 3] = [98.86, 91.86, 96.57];
const ATIS_RER: [f64; 3] = [4.91, 13.66, 10.71];
const SNIPS_RER: [f64; 3] = [55.64, 57.38, 55.86];

fn report_text(scores: [f64; 3]) -> String {
    format!(
        "intent_acc={}\nsent_acc={}\nslot_f1={}\n",
        scores[0] / 100.0,
        scores[1] / 100.0,
        scores[2] / 100.0
    )
}

/// The baseline is the best prior result in each column.
fn rer_reproduction() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut got = Vec::new();
    for (name, prior, ours, want) in [
        ("atis", ATIS_PRIOR, ATIS_OURS, ATIS_RER),
        ("snips", SNIPS_PRIOR, SNIPS_OURS, SNIPS_RER),
    ] {
        let best: [f64; 3] =
            std::array::from_fn(|c| prior.iter().map(|r| r[c]).fold(f64::MIN, f64::max));
        let a = dir.path().join(format!("{name}_ours.txt"));
        let b = dir.path().join(format!("{name}_sota.txt"));
        std::fs::write(&a, report_text(ours)).map_err(|e| e.to_string())?;
        std::fs::write(&b, report_text(best)).map_err(|e| e.to_string())?;
        let tsv = nlu(&["compare", path(&a), path(&b)])?;
        let values: Vec<f64> = tsv
            .lines()
            .skip(1)
            .map(|l| l.split('\t').nth(1).unwrap().parse().unwrap())
            .collect();
        for (v, w) in values.iter().zip(want) {
            ensure((v - w).abs() <= 0.01 + 1e-9, || format!("{name}: got {v}, published {w}"))?;
        }
        got.push(format!(
            "{name} {}",
            values.iter().map(|v| format!("{v:.2}")).collect::<Vec<_>>().join("/")
        ));
    }
    Ok(got.join(", "))
}

fn gradient_integrity() -> Outcome {
    let variants = [
        (SlotMode::Softmax, true, IntentPool::Attention),
        (SlotMode::Softmax, false, IntentPool::Attention),
        (SlotMode::Crf, true, IntentPool::Attention),
        (SlotMode::Crf, false, IntentPool::StartToken),
    ];
    let mut worst = (0.0, String::new());
    for draw in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + draw);
        let (mode, features, pool) = variants[draw as usize % variants.len()];
        let mut model = JointModel::init(common::desk_config(mode, features, pool), draw)
            .map_err(|e| e.to_string())?;
        let examples = common::random_batch(&mut rng, 6);
        let refs: Vec<_> = examples.iter().collect();
        let batch = Batch::new(&refs);
        common::smooth_draw(&mut model, &batch, &mut rng);
        let gamma = rng.random_range(0.05..0.95);
        let (err, name) = common::gradient_error(&mut model, &batch, gamma, 12, &mut rng);
        if err > worst.0 {
            worst = (err, format!("{name} (draw {draw})"));
        }
    }
    ensure(worst.0 <= 1e-4, || format!("max relative error {:.2e} at {}", worst.0, worst.1))?;
    Ok(format!("100 draws, 12 entries per tensor; max relative error {:.2e} at {}", worst.0, worst.1))
}

fn crf_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut max_dev = 0.0f64;
    for i in 0..1000 {
        let n = rng.random_range(1..=6);
        let k = rng.random_range(1..=5);
        let mut draw = |r, c| Array2::from_shape_fn((r, c), |_| rng.random_range(-3.0..3.0));
        let e = draw(n, k);
        let t = draw(k, k);
        let s: Array1<f64> = draw(1, k).row(0).to_owned();
        let f: Array1<f64> = draw(1, k).row(0).to_owned();
        let view = CrfView { transitions: t.view(), start: s.view(), end: f.view() };
        let oracle = Crf { transitions: &t, start: &s, end: &f };
        let dz = (log_partition(e.view(), &view) - oracle.log_partition(&e)).abs();
        let (path, score) = viterbi(e.view(), &view);
        let (best, best_score) = oracle.best_path(&e);
        max_dev = max_dev.max(dz).max((score - best_score).abs());
        ensure(dz <= 1e-8, || format!("instance {i}: log Z off by {dz:e}"))?;
        ensure(path == best, || format!("instance {i}: viterbi {path:?} vs {best:?}"))?;
    }
    Ok(format!("1000 instances, max deviation {max_dev:.1e}"))
}

fn chunker_equivalence() -> Outcome {
    let tags = ["O", "B-a", "I-a", "B-b", "I-b", "B-c", "I-c"];
    let ours = |seq: &[&str]| -> Vec<(String, usize, usize)> {
        let parsed: Vec<SlotTag> = seq.iter().map(|t| t.parse().unwrap()).collect();
        extract_chunks(&parsed).into_iter().map(|c| (c.label, c.start, c.end)).collect()
    };
    let mut exhaustive = 0;
    for n in 0..=6 {
        for p in all_paths(n, tags.len()) {
            let seq: Vec<&str> = p.iter().map(|&i| tags[i]).collect();
            ensure(ours(&seq) == chunks_by_enumeration(&seq), || format!("{seq:?}"))?;
            exhaustive += 1;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..1000 {
        let n = rng.random_range(7..=40);
        let seq: Vec<&str> = (0..n).map(|_| tags[rng.random_range(0..tags.len())]).collect();
        ensure(ours(&seq) == chunks_by_enumeration(&seq), || format!("{seq:?}"))?;
    }
    Ok(format!("{exhaustive} exhaustive + 1000 random sequences"))
}

fn alignment_round_trip() -> Outcome {
    let toy = toy_grammar(11, 1000, 0, 0);
    let words = toy.train.iter().flat_map(|u| u.words.clone());
    let vocab = train_vocab(words, 150).map_err(|e| e.to_string())?;
    let annotator = Annotator::new(&toy.resources).map_err(|e| e.to_string())?;
    let mut split = 0;
    for (i, u) in toy.train.iter().enumerate() {
        let feats = annotator.features(&u.words);
        let seq = align(&u.words, &u.tags, &feats, &vocab, 50).map_err(|e| e.to_string())?;
        let back = de_align(&seq, &seq.piece_tags).map_err(|e| e.to_string())?;
        ensure(back == u.tags, || format!("utterance {i} did not round-trip"))?;
        ensure(seq.active_count() == u.words.len(), || format!("utterance {i}: active count"))?;
        split += seq.piece_tags.iter().filter(|t| **t == SlotTag::X).count() - 2;
    }
    Ok(format!("1000 utterances; {split} continuation pieces"))
}

fn attention_simplex() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0f64;
    for i in 0..1000 {
        let n = rng.random_range(1..=20);
        let d = rng.random_range(1..=16);
        let valid = rng.random_range(1..=n);
        let mut draw = |r, c| Array2::from_shape_fn((r, c), |_| rng.random_range(-2.0..2.0));
        let h = draw(n, d);
        let w = draw(d, d);
        let v = draw(1, d).row(0).to_owned();
        let mask: Vec<bool> = (0..n).map(|t| t >= valid).collect();
        let logits = attention_logits(h.view(), &mask, w.view(), v.view()).map_err(|e| e.to_string())?;
        let alpha = attention_weights(logits.view(), d).map_err(|e| e.to_string())?;
        let sum_err = (alpha.sum() - 1.0).abs();
        worst = worst.max(sum_err);
        ensure(sum_err <= 1e-6, || format!("input {i}: weights sum to {}", alpha.sum()))?;
        ensure(alpha.iter().zip(&mask).all(|(a, &p)| !p || *a == 0.0), || {
            format!("input {i}: mass on padding")
        })?;
        // Unscaled softmax of logits / sqrt(d) must give the same weights.
        let divided: Vec<f64> = logits.iter().map(|l| l / (d as f64).sqrt()).collect();
        let top = divided.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = divided.iter().map(|x| (x - top).exp()).sum();
        for (a, x) in alpha.iter().zip(&divided) {
            let want = (x - top).exp() / z;
            ensure((a - want).abs() < 1e-12, || format!("input {i}: scaling mismatch"))?;
        }
    }
    Ok(format!("1000 inputs, max |sum - 1| {worst:.1e}"))
}

struct Run {
    test: EvalReport,
    elapsed: Duration,
}

fn train_runs(data: &Path, out: &Path, seeds: u64, ablate: bool) -> Result<Vec<Run>, String> {
    let base = std::fs::read_to_string(data.join("config.txt")).map_err(|e| e.to_string())?;
    let mut runs = Vec::new();
    for seed in 0..seeds {
        let tag = if ablate { "nofeat" } else { "full" };
        let cfg = out.join(format!("{tag}-{seed}.txt"));
        std::fs::write(&cfg, base.replace("seed=0", &format!("seed={seed}"))).map_err(|e| e.to_string())?;
        let dir = out.join(format!("{tag}-{seed}"));
        let mut args = vec!["train", "--config", path(&cfg), "--data", path(data), "--out", path(&dir), "--quiet"];
        if ablate {
            args.push("--no-slot-features");
        }
        let started = Instant::now();
        nlu(&args)?;
        let elapsed = started.elapsed();
        let summary = RunSummary::load(&dir.join("summary.json")).map_err(|e| e.to_string())?;
        let manifest =
            RunManifest::load(&summary.best_run().dir.join("manifest.json")).map_err(|e| e.to_string())?;
        let test = manifest.test.ok_or("no test report")?;
        eprintln!(
            "  {tag} seed {seed}: best epoch {} intent {:.4} sent {:.4} slot {:.4} in {:.0?}",
            manifest.best_epoch, test.intent_acc, test.sent_acc, test.slot_f1, elapsed
        );
        runs.push(Run { test, elapsed });
    }
    Ok(runs)
}

fn mean(runs: &[Run], f: impl Fn(&EvalReport) -> f64) -> f64 {
    runs.iter().map(|r| f(&r.test)).sum::<f64>() / runs.len() as f64
}

fn toy_training() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = tmp.path().join("data");
    nlu(&["toy", "--out", path(&data), "--train", "2000", "--dev", "300", "--test", "300"])?;
    let full = train_runs(&data, tmp.path(), 3, false)?;
    let ablated = train_runs(&data, tmp.path(), 3, true)?;

    let slowest = full.iter().chain(&ablated).map(|r| r.elapsed).max().unwrap();
    ensure(slowest <= Duration::from_secs(300), || format!("slowest run took {slowest:.0?}"))?;
    let (intent, sent, slot) = (
        mean(&full, |r| r.intent_acc),
        mean(&full, |r| r.sent_acc),
        mean(&full, |r| r.slot_f1),
    );
    let summary = format!(
        "lr {}, mean test intent {intent:.4} sent {sent:.4} slot F1 {slot:.4}",
        TrainConfig::desk().learning_rate
    );
    ensure(intent >= 0.95 && slot >= 0.90 && sent >= 0.85, || summary.clone())?;
    let ablated_slot = mean(&ablated, |r| r.slot_f1);
    ensure(ablated_slot <= slot + 0.01, || {
        format!("{summary}; no-feature slot F1 {ablated_slot:.4} beats the full model")
    })?;
    Ok(format!("{summary}; no-feature slot F1 {ablated_slot:.4}; slowest run {slowest:.0?}"))
}

fn token_inflation() -> Outcome {
    let parse = |s: &str| -> Vec<SlotTag> { s.split_whitespace().map(|t| t.parse().unwrap()).collect() };
    // Each prediction clips or extends a multi-word gold chunk by one word.
    let pairs = [
        ("O B-fromloc I-fromloc I-fromloc O B-toloc I-toloc", "O B-fromloc I-fromloc O O B-toloc I-toloc"),
        ("B-artist I-artist I-artist O B-year", "B-artist I-artist O O B-year"),
        ("O B-song I-song I-song I-song", "O O I-song I-song I-song"),
        ("B-city I-city O B-date I-date I-date", "B-city I-city I-city B-date I-date O"),
    ];
    let gold: Vec<Vec<SlotTag>> = pairs.iter().map(|(g, _)| parse(g)).collect();
    let pred: Vec<Vec<SlotTag>> = pairs.iter().map(|(_, p)| parse(p)).collect();
    let chunk = slot_f1(&gold, &pred).map_err(|e| e.to_string())?.f1();
    let token = per_token_micro_f1(&gold, &pred).map_err(|e| e.to_string())?.f1();

    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (g, p) in pairs {
        let (a, b, c) = token_counts(
            &g.split_whitespace().collect::<Vec<_>>(),
            &p.split_whitespace().collect::<Vec<_>>(),
        );
        (tp, fp, fn_) = (tp + a, fp + b, fn_ + c);
    }
    let direct = nlu_oracles::f1(tp, fp, fn_);
    ensure((direct - token).abs() < 1e-12, || format!("token F1 {token} vs direct count {direct}"))?;
    let gap = token - chunk;
    ensure(gap >= 0.1, || format!("gap {gap:.4}"))?;
    Ok(format!("per-token {token:.4} vs chunk {chunk:.4} (gap {gap:.4})"))
}

fn gamma_boundary() -> Outcome {
    let toy = toy_grammar(8, 320, 40, 0);
    let mut checked = 0;
    for gamma in [1.0, 0.6] {
        let mut config = TrainConfig::desk();
        config.gamma = gamma;
        config.epochs = 1;
        config.batch_size = 32;
        let mut failure = None;
        train(&toy.train, &toy.dev, &toy.resources, &config, |e| {
            let TrainEvent::Step { step, loss, grads, model, .. } = e else { return };
            let want = gamma * loss.l_intent + (1.0 - gamma) * loss.l_slot;
            if (loss.l_joint - want).abs() > 4.0 * f64::EPSILON * want.abs() {
                failure.get_or_insert(format!("step {step}: breakdown identity off"));
            }
            if gamma == 1.0 {
                for id in model.slot.own_params() {
                    if grads.get(id).is_some_and(|g| g.iter().any(|&x| x != 0.0)) {
                        failure.get_or_insert(format!("step {step}: {} has gradient", model.store.name(id)));
                    }
                }
                checked += 1;
            }
        })
        .map_err(|e| e.to_string())?;
        if let Some(f) = failure {
            return Err(format!("gamma {gamma}: {f}"));
        }
    }
    ensure(checked == 10, || format!("expected 10 steps at gamma 1, saw {checked}"))?;
    Ok(format!("{checked} steps at gamma 1 with zero slot-only gradients; identity held at gamma 1 and 0.6"))
}

fn word_features() -> Outcome {
    let res = |dictionary: &str| ResourceText {
        lexicon: "FOR\nMcVey\nChristine\n".into(),
        gazetteer: "christine mcvey\tPERSON\n".into(),
        dictionary: dictionary.into(),
    };
    let words = ["flights", "for", "christine", "mcvey"];
    let plain = Annotator::new(&res("")).map_err(|e| e.to_string())?.annotate(&words);
    let guarded = Annotator::new(&res("for\nflights\n")).map_err(|e| e.to_string())?.annotate(&words);
    ensure(plain[1].entity == EntityClass::AirportCode, || {
        format!("without the dictionary `for` is {:?}", plain[1].entity)
    })?;
    ensure(guarded[1].entity == EntityClass::None, || {
        format!("dictionary lookup left `for` as {:?}", guarded[1].entity)
    })?;
    ensure(guarded[3].case == CaseClass::Other && guarded[3].cased == "McVey", || {
        format!("mcvey cased as {:?} / {}", guarded[3].case, guarded[3].cased)
    })?;
    ensure(ENTITY_CLASSES == 19 && CASE_CLASSES == 4 && FEATURE_DIM == 23, || "inventory drifted".into())?;
    let names: HashSet<&str> = EntityClass::ALL.iter().map(|e| e.name()).collect();
    ensure(names.len() == 19, || "entity names collide".into())?;
    let width = SlotHead::input_width(4, 64, true) - SlotHead::input_width(4, 64, false);
    ensure(width == 32, || format!("feature block width {width}"))?;
    Ok("`for` suppressed by dictionary, McVey -> O, 19 + 4 = 23 inputs".into())
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("relative error reduction reproduces the published table", rer_reproduction),
        ("full-loss gradients match central differences", gradient_integrity),
        ("CRF forward and Viterbi match enumeration", crf_equivalence),
        ("BIO chunker matches brute-force reference", chunker_equivalence),
        ("sub-word alignment round trip", alignment_round_trip),
        ("intent attention is a scaled simplex", attention_simplex),
        ("end-to-end toy training and feature ablation", toy_training),
        ("per-token F1 inflates over chunk F1", token_inflation),
        ("joint loss boundary at gamma = 1", gamma_boundary),
        ("word feature pipeline", word_features),
    ];
    // Criterion numbers given on the command line restrict the run.
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        if !only.is_empty() && !only.contains(&(i + 1)) {
            continue;
        }
        let started = Instant::now();
        let outcome = check();
        let took = started.elapsed();
        match outcome {
            Ok(detail) => println!("[PASS] {} {name}: {detail} ({took:.1?})", i + 1),
            Err(why) => {
                failed += 1;
                println!("[FAIL] {} {name}: {why} ({took:.1?})", i + 1);
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
