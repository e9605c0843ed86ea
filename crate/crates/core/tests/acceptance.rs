//! Acceptance checks, run in order with one PASS/FAIL line each.
//!
//! Runtime limits are measured per criterion, so this target runs without the
//! libtest harness and never in parallel with itself.

use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use mbo::density::{CategoricalSeqDensity, GaussianDensity};
use mbo::harness::{iqm, run, save_results, RunConfig, RunRecord, TrialResult};
use mbo::optimizers::{run_cbas, CmaEs, CmaEsConfig, MethodSpec, METHOD_NAMES};
use mbo::rng;
use mbo::space::{Design, Normalizer};
use mbo::surrogate::MlpModel;
use mbo::tasks::{build_dataset, slice_sensitivity, HistogramPair, Task, TASK_NAMES};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn run_method(task: &Task, method: &str, options: &[&str]) -> Result<(RunRecord, Duration), String> {
    let mut cfg = RunConfig::new(task, method, 0).map_err(err)?;
    cfg.method = cfg.method.with_options(options).map_err(err)?;
    let start = Instant::now();
    let record = run(&cfg).map_err(err)?;
    Ok((record, start.elapsed()))
}

/// Trials collected from the optimizer criteria, for the protocol checks.
#[derive(Default)]
struct Collected {
    trials: Vec<(usize, TrialResult)>,
}

impl Collected {
    fn add(&mut self, record: &RunRecord) {
        self.trials
            .extend(record.trials.iter().map(|t| (record.config.k, t.clone())));
    }
}

fn toy_improvement(seen: &mut Collected) -> Outcome {
    let task = Task::by_name("toy-quadratic").map_err(err)?;
    let (rec, took) = run_method(&task, "grad-mean", &[])?;
    seen.add(&rec);
    let beats = rec.trials.iter().all(|t| t.p100 > t.dataset_best);
    let mean = rec.aggregate.p100.mean;
    check(
        mean >= 0.95 && beats && took <= Duration::from_secs(60),
        format!(
            "mean p100 {mean:.4}, above dataset-best in every trial: {beats}, {:.1}s",
            took.as_secs_f64()
        ),
    )
}

fn compositionality(seen: &mut Collected) -> Outcome {
    let task = Task::by_name("separable-4").map_err(err)?;
    let mut total = Duration::ZERO;
    let mut ok = true;
    let mut parts = Vec::new();
    for method in ["grad-mean", "cma-es"] {
        let (rec, took) = run_method(&task, method, &[])?;
        seen.add(&rec);
        total += took;
        let wins = rec.trials.iter().filter(|t| t.p100 > t.dataset_best).count();
        ok &= wins >= 7;
        parts.push(format!("{method} wins {wins}/8"));
    }
    ok &= total <= Duration::from_secs(300);
    check(ok, format!("{}, {:.1}s", parts.join(", "), total.as_secs_f64()))
}

/// Reduced settings that keep the 32,768-row discrete task inside its budget.
fn discrete_options(method: &str) -> Vec<&'static str> {
    match method {
        "dataset-best" => vec![],
        "autofocused-cbas" => vec!["train.epochs=10", "iterations=5", "ensemble=2"],
        "coms" => vec!["train.epochs=2"],
        _ => vec!["train.epochs=10"],
    }
}

fn enumerable_gap(seen: &mut Collected) -> Outcome {
    let task = Task::by_name("discrete-lookup-8x4").map_err(err)?;
    let (_, y_opt) = task.enumerate_optimum().map_err(err)?;
    let optimum = task.score_normalize(y_opt);
    let mut total = Duration::ZERO;
    let mut all_above = true;
    let mut best = f64::NEG_INFINITY;
    let mut parts = Vec::new();
    for method in METHOD_NAMES {
        let (rec, took) = run_method(&task, method, &discrete_options(method))?;
        seen.add(&rec);
        total += took;
        let a = &rec.aggregate;
        all_above &= a.p100.mean >= a.dataset_best.mean;
        if method != "dataset-best" {
            best = best.max(a.p100.mean);
        }
        parts.push(format!("{method} {:.3}", a.p100.mean));
    }
    let reaches = best >= 0.8 * optimum;
    check(
        all_above && reaches && total <= Duration::from_secs(600),
        format!(
            "optimum {optimum:.3}, best method {best:.3}, all >= dataset-best: {all_above}, {:.1}s [{}]",
            total.as_secs_f64(),
            parts.join(", ")
        ),
    )
}

fn gradient_correctness() -> Outcome {
    let shapes: [(usize, &[usize]); 4] = [(2, &[8]), (5, &[16, 16]), (8, &[64, 64]), (32, &[32, 8])];
    let h = 1e-5;
    let mut failures = 0;
    let (mut worst_abs, mut worst_rel): (f64, f64) = (0.0, 0.0);
    for pair in 0..100u64 {
        let (d, hidden) = shapes[pair as usize % shapes.len()];
        let model = MlpModel::init(d, hidden, rng::derive(4242, pair)).map_err(err)?;
        let mut r = rng::stream(pair, 11);
        let x: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut r)).collect();
        let analytic = model.input_gradient(&x).map_err(err)?;
        for i in 0..d {
            let (mut up, mut down) = (x.clone(), x.clone());
            up[i] += h;
            down[i] -= h;
            let numeric = (model.predict(&up).map_err(err)? - model.predict(&down).map_err(err)?) / (2.0 * h);
            let gap = (analytic[i] - numeric).abs();
            worst_abs = worst_abs.max(gap);
            if numeric.abs() >= 1e-6 {
                worst_rel = worst_rel.max(gap / numeric.abs());
            }
            if gap > 1e-6 && gap > 1e-4 * numeric.abs() {
                failures += 1;
            }
        }
    }
    check(
        failures == 0,
        format!("100 pairs, {failures} component failures, worst gap {worst_abs:.1e} absolute, {worst_rel:.1e} relative"),
    )
}

fn normalization_identities() -> Outcome {
    let mut worst_round: f64 = 0.0;
    let mut worst_mean: f64 = 0.0;
    let mut worst_std: f64 = 0.0;
    let mut endpoints = true;
    for name in TASK_NAMES {
        let task = Task::by_name(name).map_err(err)?;
        endpoints &= task.score_normalize(task.y_min()) == 0.0 && task.score_normalize(task.y_max()) == 1.0;
        let data = build_dataset(&task, 3).map_err(err)?;
        let rows: Vec<Vec<f64>> = data
            .designs()
            .iter()
            .map(|d| task.space().encode(d))
            .collect::<Result<_, _>>()
            .map_err(err)?;
        let norm = Normalizer::fit(&rows).map_err(err)?;
        let z: Vec<Vec<f64>> = rows.iter().map(|r| norm.normalize(r)).collect::<Result<_, _>>().map_err(err)?;
        for (r, zr) in rows.iter().zip(&z) {
            let back = norm.denormalize(zr).map_err(err)?;
            for (a, b) in r.iter().zip(&back) {
                worst_round = worst_round.max((a - b).abs());
            }
        }
        let n = z.len() as f64;
        for j in 0..norm.dim() {
            let m = z.iter().map(|r| r[j]).sum::<f64>() / n;
            let s = (z.iter().map(|r| (r[j] - m).powi(2)).sum::<f64>() / n).sqrt();
            worst_mean = worst_mean.max(m.abs());
            worst_std = worst_std.max((s - 1.0).abs());
        }
        let ys = Normalizer::fit_scalar(data.scores()).map_err(err)?;
        for &y in data.scores() {
            worst_round = worst_round.max((ys.denormalize_scalar(ys.normalize_scalar(y)) - y).abs());
        }
    }
    check(
        worst_round <= 1e-9 && worst_mean <= 1e-9 && worst_std <= 1e-9 && endpoints,
        format!(
            "round trip {worst_round:.1e}, |mean| {worst_mean:.1e}, |std - 1| {worst_std:.1e}, exact endpoints: {endpoints}"
        ),
    )
}

fn cbas_reductions() -> Outcome {
    let task = Task::by_name("toy-quadratic").map_err(err)?;
    let data = build_dataset(&task, 1).map_err(err)?;
    let spec = MethodSpec::new("autofocused-cbas", task.space())
        .and_then(|s| s.with_options(&["iterations=4", "samples_per_iter=256", "ensemble=2", "train.epochs=20"]))
        .map_err(err)?;
    let (_, trace) = run_cbas(&spec, &data, task.space(), 16, 1).map_err(err)?;
    let first = trace.autofocus_weights.first().ok_or("no autofocus weights recorded")?;
    let ratio_gap = first.iter().map(|w| w.ln().abs()).fold(0.0, f64::max);
    let (lo, hi) = trace
        .autofocus_weights
        .iter()
        .flatten()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &w| (a.min(w), b.max(w)));
    let bounded = lo >= 1.0 / 20.0 && hi <= 20.0;

    // Uniform weights against a direct maximum-likelihood computation.
    let mut r = rng::stream(8, 0);
    let pts: Vec<Vec<f64>> = (0..200)
        .map(|_| (0..3).map(|j| r.random::<f64>() * (j + 1) as f64).collect())
        .collect();
    let n = pts.len() as f64;
    let mean: Vec<f64> = (0..3).map(|j| pts.iter().map(|p| p[j]).sum::<f64>() / n).collect();
    let mut gap: f64 = 0.0;
    for w in [1.0, 3.7] {
        let g = GaussianDensity::fit_weighted(&pts, &vec![w; pts.len()]).map_err(err)?;
        for j in 0..3 {
            gap = gap.max((g.mean()[j] - mean[j]).abs());
            for k in 0..3 {
                let c = pts.iter().map(|p| (p[j] - mean[j]) * (p[k] - mean[k])).sum::<f64>() / n;
                gap = gap.max((g.covariance()[(j, k)] - c).abs());
            }
        }
    }
    let seqs: Vec<Vec<usize>> = (0..300).map(|_| (0..6).map(|_| r.random_range(0..4)).collect()).collect();
    let cat = CategoricalSeqDensity::fit_weighted(&seqs, 4, &vec![2.0; seqs.len()]).map_err(err)?;
    let keep = 1.0 - 4.0 * cat.floor();
    for p in 0..6 {
        for c in 0..4 {
            let freq = seqs.iter().filter(|s| s[p] == c).count() as f64 / seqs.len() as f64;
            gap = gap.max((cat.probs()[p][c] - (cat.floor() + keep * freq)).abs());
        }
    }
    check(
        ratio_gap <= 1e-12 && gap <= 1e-10 && bounded,
        format!("t=0 |log ratio| {ratio_gap:.1e}, uniform refit gap {gap:.1e}, weights in [{lo:.3}, {hi:.3}]"),
    )
}

fn cma_sanity() -> Outcome {
    let lambda = CmaEsConfig::default().population_for(2, 128);
    let mut worst: f64 = 0.0;
    for seed in 0..5 {
        let mut es = CmaEs::new(vec![1.0, 0.0], 0.5, lambda, 0.25, seed).map_err(err)?;
        let mut reached = f64::INFINITY;
        for _ in 0..200 {
            let xs = es.ask();
            let f: Vec<f64> = xs.iter().map(|x| -x.iter().map(|v| v * v).sum::<f64>()).collect();
            es.tell(&xs, &f).map_err(err)?;
            reached = reached.min(es.mean().iter().map(|v| v * v).sum::<f64>().sqrt());
        }
        worst = worst.max(reached);
    }
    check(worst <= 1e-2, format!("lambda {lambda}, worst best ||mu|| over 5 seeds {worst:.2e}"))
}

fn protocol_integrity(seen: &Collected) -> Outcome {
    let calls = seen
        .trials
        .iter()
        .all(|(k, t)| t.oracle_calls == *k && t.oracle_calls_during_propose == 0);
    let ordered = seen.trials.iter().all(|(_, t)| t.p100 >= t.p50);
    let v: Vec<f64> = (1..=100).map(f64::from).collect();
    let iqm_ok = iqm(&v).map_err(err)? == 50.5;

    let task = Task::by_name("toy-quadratic").map_err(err)?;
    let mut cfg = RunConfig::new(&task, "grad-mean", 21).map_err(err)?;
    cfg.k = 32;
    cfg.trials = 3;
    cfg.method = cfg.method.with_options(&["train.epochs=20", "steps=50"]).map_err(err)?;
    let dir = tempfile::tempdir().map_err(err)?;
    let mut files = Vec::new();
    for (i, threads) in ["1", "3"].iter().enumerate() {
        std::env::set_var(mbo::harness::THREADS_ENV, threads);
        let path = dir.path().join(format!("run{i}.json"));
        save_results(&path, &run(&cfg).map_err(err)?).map_err(err)?;
        files.push(std::fs::read(&path).map_err(err)?);
    }
    std::env::remove_var(mbo::harness::THREADS_ENV);
    let deterministic = files[0] == files[1];
    check(
        calls && ordered && iqm_ok && deterministic,
        format!(
            "{} trials: K calls after propose and none during: {calls}, p100 >= p50: {ordered}, iqm(1..100) = 50.5: {iqm_ok}, identical reruns: {deterministic}",
            seen.trials.len()
        ),
    )
}

fn sensitivity_slice() -> Outcome {
    let task = Task::by_name("sensitive-ridge-16").map_err(err)?;
    let peak = Design::Continuous(vec![1.0; 16]);
    let s = slice_sensitivity(&task, &peak, 0, 0.2, 401).map_err(err)?;
    let dir = tempfile::tempdir().map_err(err)?;
    let out = dir.path().join("hist.json");
    let status = Command::new(env!("CARGO_BIN_EXE_mbo"))
        .args(["histogram", "--task", "sensitive-ridge-16", "--n", "3200", "--bins", "40", "--out"])
        .arg(&out)
        .output()
        .map_err(err)?;
    if !status.status.success() {
        return Err(format!("mbo histogram failed: {}", String::from_utf8_lossy(&status.stderr)));
    }
    let pair: HistogramPair = serde_json::from_str(&std::fs::read_to_string(&out).map_err(err)?).map_err(err)?;
    check(
        s.drop_fraction >= 0.5 && pair.resampled.mean < pair.dataset.mean,
        format!(
            "drop within 0.2 of the peak {:.1}%, uniform mean {:.4} vs dataset mean {:.4}",
            100.0 * s.drop_fraction,
            pair.resampled.mean,
            pair.dataset.mean
        ),
    )
}

fn main() -> ExitCode {
    let mut seen = Collected::default();
    let results: Vec<(&str, Outcome)> = vec![
        ("toy-quadratic improvement", toy_improvement(&mut seen)),
        ("compositionality", compositionality(&mut seen)),
        ("enumerable-optimum gap", enumerable_gap(&mut seen)),
        ("gradient correctness", gradient_correctness()),
        ("normalization identities", normalization_identities()),
        ("cbas reductions", cbas_reductions()),
        ("cma-es sanity", cma_sanity()),
        ("protocol integrity", protocol_integrity(&seen)),
        ("sensitivity slice", sensitivity_slice()),
    ];
    let mut failed = 0;
    for (i, (name, outcome)) in results.iter().enumerate() {
        match outcome {
            Ok(detail) => println!("criterion {} ({name}): PASS: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {} ({name}): FAIL: {detail}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
