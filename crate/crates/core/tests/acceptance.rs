//! Acceptance suite. Prints one PASS/FAIL line per criterion.
//!
//! Criteria 6-13 are hard assertions. The experiment criteria 1-5 are
//! reported and only asserted with `SCIL_ACCEPTANCE_STRICT=1`.
//! `SCIL_ACCEPTANCE_RUNS` overrides the number of seeds (default 10).

mod common;

use std::collections::BTreeMap;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use scil_core::corrector::geometric_median;
use scil_core::experiment::{default_config, run_experiment, run_single, ExperimentConfig, RunResult};
use scil_core::memory::{DynamicMemory, QueueItem, Slot};
use scil_core::metrics::PrequentialScorer;
use scil_core::model::{ModelConfig, UnifiedModel};
use scil_core::nn::ReconLoss;
use scil_core::novelty::compute_thresholds;
use scil_core::smote::smote_class;

struct Verdict {
    id: u8,
    pass: bool,
    line: String,
}

/// Writes past the test harness capture so the lines show up in plain
/// `cargo test` output.
fn report(v: &Verdict) {
    let tag = if v.pass { "PASS" } else { "FAIL" };
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "acceptance {tag} [{:>2}] {}", v.id, v.line);
    let _ = out.flush();
}

fn runs() -> usize {
    std::env::var("SCIL_ACCEPTANCE_RUNS").ok().and_then(|v| v.parse().ok()).unwrap_or(10)
}

fn strict() -> bool {
    std::env::var("SCIL_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1")
}

/// What the experiment criteria need from one configuration.
struct Outcome {
    en: f64,
    g: f64,
    fnr: f64,
    per_run: Vec<RunStats>,
    /// Mean faded G-mean over seeds at each source timestep.
    g_series: BTreeMap<u64, f64>,
}

struct RunStats {
    seed: u64,
    late_new_models: usize,
    max_classes: usize,
    memory_ok: bool,
}

fn experiment(dataset: &str, edit: impl FnOnce(&mut ExperimentConfig)) -> Outcome {
    let mut cfg = default_config(dataset).unwrap();
    cfg.runs = runs();
    cfg.write_outputs = false;
    cfg.jobs = std::thread::available_parallelism().map_or(1, |n| n.get());
    edit(&mut cfg);
    let (summary, results) = run_experiment(&cfg).unwrap();
    let mut sums: BTreeMap<u64, (f64, usize)> = BTreeMap::new();
    for r in &results {
        for s in &r.steps {
            let e = sums.entry(s.t).or_default();
            e.0 += s.g_mean;
            e.1 += 1;
        }
    }
    Outcome {
        en: summary.en_accuracy.mean,
        g: summary.g_mean.mean,
        fnr: summary.false_negative_rate.mean,
        per_run: results.iter().map(run_stats).collect(),
        g_series: sums.into_iter().map(|(t, (s, n))| (t, s / n as f64)).collect(),
    }
}

fn run_stats(r: &RunResult) -> RunStats {
    RunStats {
        seed: r.summary.seed,
        late_new_models: r.new_model_times().iter().filter(|&&t| t > 7000).count(),
        max_classes: r.steps.iter().map(|s| s.class_count).max().unwrap_or(0),
        memory_ok: r.summary.memory_bound_held,
    }
}

fn classes_note(o: &Outcome) -> String {
    let max = o.per_run.iter().map(|r| r.max_classes).max().unwrap_or(0);
    format!("max classes over seeds {max}")
}

fn criterion_blob(o: &Outcome) -> Verdict {
    let few: Vec<u64> = o.per_run.iter().filter(|r| r.late_new_models < 3).map(|r| r.seed).collect();
    let pass = o.en >= 0.97 && o.g >= 0.95 && few.is_empty();
    Verdict {
        id: 1,
        pass,
        line: format!(
            "Blob: EN {:.4} (>= 0.97), G-mean {:.4} (>= 0.95), seeds with < 3 new models after t=7000: {few:?}; {}",
            o.en,
            o.g,
            classes_note(o)
        ),
    }
}

/// Smallest mean G-mean peak within 3000 steps after each drift window.
fn recovery(o: &Outcome, window_ends: &[u64]) -> Vec<(u64, f64)> {
    window_ends
        .iter()
        .map(|&end| {
            let best = o
                .g_series
                .range(end + 1..=end + 3000)
                .map(|(_, g)| *g)
                .fold(0.0, f64::max);
            (end, best)
        })
        .collect()
}

fn criterion_vib(o: &Outcome) -> Verdict {
    let rec = recovery(o, &[5050, 10050]);
    let recovered = rec.iter().all(|(_, g)| *g >= 0.90);
    Verdict {
        id: 2,
        pass: o.en >= 0.97 && o.g >= 0.95 && recovered,
        line: format!(
            "Vib: EN {:.4} (>= 0.97), G-mean {:.4} (>= 0.95), best mean G-mean within 3000 steps of each window end {:?} (>= 0.90); {}",
            o.en,
            o.g,
            rec.iter().map(|(t, g)| format!("t={t}: {g:.3}")).collect::<Vec<_>>(),
            classes_note(o)
        ),
    }
}

fn criterion_sea(o: &Outcome) -> Verdict {
    Verdict {
        id: 3,
        pass: o.en >= 0.97 && o.g >= 0.78,
        line: format!("Sea: EN {:.4} (>= 0.97), G-mean {:.4} (>= 0.78); {}", o.en, o.g, classes_note(o)),
    }
}

fn criterion_gap(scil: &Outcome, baseline: &Outcome) -> Verdict {
    let gap = scil.g - baseline.g;
    Verdict {
        id: 4,
        pass: gap >= 0.3,
        line: format!(
            "Blob SCIL vs baseline: G-mean {:.4} vs {:.4}, gap {gap:.4} (>= 0.3)",
            scil.g, baseline.g
        ),
    }
}

fn criterion_fnr(rows: &[(String, f64)]) -> Verdict {
    Verdict {
        id: 5,
        pass: rows.iter().all(|(_, f)| *f <= 0.15),
        line: format!(
            "FNR (<= 0.15 each): {}",
            rows.iter().map(|(n, f)| format!("{n} {f:.4}")).collect::<Vec<_>>().join(", ")
        ),
    }
}

fn criterion_gradients() -> Verdict {
    let se = (0..20).map(|s| common::max_gradient_error(s, ReconLoss::SquaredError)).fold(0.0, f64::max);
    let bce = (0..20).map(|s| common::max_gradient_error(100 + s, ReconLoss::BinaryCrossEntropy)).fold(0.0, f64::max);
    Verdict {
        id: 6,
        pass: se < 1e-4 && bce < 1e-4,
        line: format!("gradients on 20 random nets: worst relative error {se:.2e} (squared error), {bce:.2e} (cross-entropy), < 1e-4"),
    }
}

fn criterion_weiszfeld() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst_obj: f64 = 0.0;
    let mut worst_loc: f64 = 0.0;
    for trial in 0..50 {
        let d = 1 + trial % 2;
        let n = rng.random_range(1..=10);
        let pts: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random_range(-5.0..5.0)).collect()).collect();
        let w = geometric_median(&pts).unwrap();
        let g = common::grid_minimizer(&pts);
        worst_obj = worst_obj.max(common::sum_dist(&pts, &w) - common::sum_dist(&pts, &g));
        if n % 2 == 1 || !common::collinear(&pts) {
            worst_loc = worst_loc.max(scil_core::euclidean(&w, &g));
        }
    }
    Verdict {
        id: 7,
        pass: worst_obj <= 1e-3 && worst_loc < 1e-3,
        line: format!("geometric median on 50 sets: worst distance to grid minimizer {worst_loc:.2e}, objective excess {worst_obj:.2e}"),
    }
}

fn criterion_smote() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(88);
    let (mut total, mut off) = (0, 0);
    while total < 1000 {
        let n = rng.random_range(2..=30);
        let d = rng.random_range(1..=4);
        let queue: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random_range(-3.0..3.0)).collect()).collect();
        let out = smote_class(&queue, n + 50, 5, &mut rng).unwrap();
        for s in &out[n..] {
            total += 1;
            if !common::on_some_segment(s, &queue) {
                off += 1;
            }
        }
    }
    Verdict {
        id: 8,
        pass: off == 0,
        line: format!("SMOTE: {off} of {total} synthetics off every member segment (tolerance 1e-9)"),
    }
}

fn criterion_thresholds() -> Verdict {
    let mut mismatches = 0;
    let mut checked = 0;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = rng.random_range(1..=6);
        let classes = rng.random_range(2..=6);
        let mut model = UnifiedModel::new(ModelConfig::small(d), classes, seed, &mut rng).unwrap();
        let mut memory = DynamicMemory::new(100, 30, classes - 1).unwrap();
        let mut rows = Vec::new();
        for c in 0..classes {
            for t in 0..rng.random_range(1..=120) {
                let x: Vec<f64> = (0..d).map(|_| rng.random_range(0.0..1.0)).collect();
                rows.push((x.clone(), c));
                memory.append(Slot::Class(c), QueueItem::new(x, t, None)).unwrap();
            }
        }
        model.train_session(&rows, 3, &mut rng).unwrap();
        let th = compute_thresholds(&model, &memory, 0).unwrap();
        for c in 0..classes {
            let brute = memory
                .queue(c)
                .unwrap()
                .items()
                .map(|it| model.predict(&it.features).unwrap().recon_loss)
                .fold(f64::NEG_INFINITY, f64::max);
            checked += 1;
            if th.theta[c] != brute {
                mismatches += 1;
            }
        }
    }
    Verdict {
        id: 9,
        pass: mismatches == 0,
        line: format!("thresholds: {mismatches} of {checked} differ from the brute-force queue maximum"),
    }
}

fn criterion_corrector() -> Verdict {
    let ok = (0..50).filter(|&t| common::planted_trial(t)).count();
    Verdict {
        id: 10,
        pass: ok == 50,
        line: format!("corrector removed all 5 planted contaminants in {ok}/50 trials"),
    }
}

fn criterion_faded_recall() -> Verdict {
    let mut worst: f64 = 0.0;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gamma = 0.99;
        let mut scorer = PrequentialScorer::new(gamma, &[0, 1, 2, 3, 4]);
        let mut history = Vec::new();
        for _ in 0..1000 {
            let y = rng.random_range(0..5);
            let ok = rng.random_bool(0.8);
            scorer.record(y, Some(if ok { y } else { (y + 1) % 5 }));
            history.push((y, ok));
        }
        for c in 0..5 {
            if let (Some(a), Some(b)) = (scorer.recall(c), common::brute_recall(&history, c, gamma)) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    Verdict {
        id: 11,
        pass: worst < 1e-9,
        line: format!("faded recall over 20 sequences of 1000 steps: worst deviation {worst:.2e} (< 1e-9)"),
    }
}

fn criterion_memory(outcomes: &[&Outcome]) -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut memory = DynamicMemory::new(50, 7, 1).unwrap();
    let mut random_ok = true;
    for t in 0..20_000u64 {
        let n = memory.class_count();
        let pick = rng.random_range(0..=n);
        let slot = if pick == n { Slot::Novel } else { Slot::Class(pick) };
        memory.append(slot, QueueItem::new(vec![0.0], t, None)).unwrap();
        if memory.is_novel_full() {
            memory.promote_novel().unwrap();
        }
        random_ok &= memory.total_stored() <= 50 + (memory.minority_count() + 1) * 7;
    }
    let runs: Vec<&RunStats> = outcomes.iter().flat_map(|o| &o.per_run).collect();
    let bad = runs.iter().filter(|r| !r.memory_ok).count();
    Verdict {
        id: 12,
        pass: random_ok && bad == 0,
        line: format!(
            "memory bound m + (n+1)l: held over 20000 random operations: {random_ok}; violated in {bad} of {} experiment runs",
            runs.len()
        ),
    }
}

fn criterion_determinism() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = default_config("blob").unwrap();
    cfg.stream.length = 8000;
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    run_single(&cfg, 3, Some(&a)).unwrap();
    run_single(&cfg, 3, Some(&b)).unwrap();
    let fa = std::fs::read(a.join("steps.csv")).unwrap();
    let fb = std::fs::read(b.join("steps.csv")).unwrap();
    Verdict {
        id: 13,
        pass: !fa.is_empty() && fa == fb,
        line: format!("determinism: two Blob runs with seed 3 wrote byte-identical steps.csv ({} bytes): {}", fa.len(), fa == fb),
    }
}

#[test]
fn acceptance_criteria() {
    let mut verdicts = Vec::new();
    let mut record = |v: Verdict| {
        report(&v);
        verdicts.push(v);
    };

    record(criterion_gradients());
    record(criterion_weiszfeld());
    record(criterion_smote());
    record(criterion_thresholds());
    record(criterion_corrector());
    record(criterion_faded_recall());
    record(criterion_determinism());

    let blob = experiment("blob", |_| {});
    record(criterion_blob(&blob));
    let vib = experiment("vib", |_| {});
    record(criterion_vib(&vib));
    let sea = experiment("sea", |_| {});
    record(criterion_sea(&sea));
    let baseline = experiment("blob", |c| c.engine.incremental_enabled = false);
    record(criterion_gap(&blob, &baseline));

    let mut fnr = vec![("Blob 2%".to_string(), blob.fnr), ("Vib 2%".to_string(), vib.fnr)];
    let mut extra = Vec::new();
    for rate in [0.05, 0.10] {
        for dataset in ["blob", "vib"] {
            let o = experiment(dataset, |c| c.stream.imbalance_rate = rate);
            fnr.push((format!("{} {}%", title(dataset), (rate * 100.0).round()), o.fnr));
            extra.push(o);
        }
    }
    record(criterion_fnr(&fnr));

    let mut all = vec![&blob, &vib, &sea, &baseline];
    all.extend(extra.iter());
    record(criterion_memory(&all));

    let experiment_ids = [1, 2, 3, 4, 5];
    let failed: Vec<u8> = verdicts
        .iter()
        .filter(|v| !v.pass && (strict() || !experiment_ids.contains(&v.id)))
        .map(|v| v.id)
        .collect();
    let reported: Vec<u8> = verdicts.iter().filter(|v| !v.pass).map(|v| v.id).collect();
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "acceptance: {} of {} criteria pass; failing {reported:?}", verdicts.len() - reported.len(), verdicts.len());
    assert!(failed.is_empty(), "acceptance criteria failed: {failed:?}");
}

fn title(dataset: &str) -> String {
    let mut c = dataset.chars();
    c.next().map(|f| f.to_uppercase().chain(c).collect()).unwrap_or_default()
}
