use mbo::optimizers::{propose, run_cbas, MethodSpec, METHOD_NAMES};
use mbo::space::Design;
use mbo::surrogate::{fit_reweighted, fit_surrogate, TrainConfig};
use mbo::tasks::{build_dataset, Dataset, Task};
use ndarray::{Array1, Array2};

fn quick_options(method: &str) -> Vec<&'static str> {
    let mut o = vec!["train.epochs=3", "train.hidden=8"];
    o.extend(match method {
        "grad" | "grad-min" | "grad-mean" => vec!["steps=10"],
        "cma-es" => vec!["iterations=5"],
        "reinforce" => vec!["iterations=5", "batch=32"],
        "cbas" | "autofocused-cbas" => vec!["iterations=3", "samples_per_iter=64", "ensemble=2"],
        "bo-qei" => vec!["rounds=2", "pool=64", "gp_samples=32", "mc_samples=16"],
        "coms" => vec!["ascent_steps=5"],
        _ => vec![],
    });
    o
}

fn spec(task: &Task, method: &str, options: &[&str]) -> MethodSpec {
    MethodSpec::new(method, task.space()).unwrap().with_options(options).unwrap()
}

#[test]
fn every_method_returns_k_valid_designs_deterministically() {
    for name in ["toy-quadratic", "discrete-lookup-4x3"] {
        let task = Task::by_name(name).unwrap();
        let data = build_dataset(&task, 2).unwrap();
        for method in METHOD_NAMES {
            let s = spec(&task, method, &quick_options(method));
            let a = propose(&s, &data, task.space(), 8, 17).unwrap();
            assert_eq!(a.designs.len(), 8, "{method} on {name}");
            assert_eq!(a.surrogate_scores.len(), 8);
            for d in &a.designs {
                task.space().validate(d).unwrap();
            }
            let b = propose(&s, &data, task.space(), 8, 17).unwrap();
            assert_eq!(a, b, "{method} on {name} is not deterministic");
        }
    }
}

#[test]
fn gradient_ascent_escapes_the_data_on_the_toy_task() {
    let task = Task::by_name("toy-quadratic").unwrap();
    let data = build_dataset(&task, 0).unwrap();
    let found = propose(&spec(&task, "grad", &[]), &data, task.space(), 16, 0).unwrap();
    let best = found
        .designs
        .iter()
        .map(|d| task.oracle_evaluate(d).unwrap())
        .fold(f64::NEG_INFINITY, f64::max);
    assert!(best > data.max_score());
}

fn mean_oracle(task: &Task, designs: &[Design]) -> f64 {
    designs.iter().map(|d| task.oracle_evaluate(d).unwrap()).sum::<f64>() / designs.len() as f64
}

/// Most runs end with a batch scoring at least as well as the first. Later
/// batches plateau, so single steps may dip.
#[test]
fn cbas_search_density_climbs() {
    let task = Task::by_name("toy-quadratic").unwrap();
    let s = spec(
        &task,
        "cbas",
        &["iterations=8", "samples_per_iter=256", "ensemble=2", "train.epochs=30"],
    );
    let mut climbing = 0;
    for run in 0..20u64 {
        let data = build_dataset(&task, run).unwrap();
        let (_, trace) = run_cbas(&s, &data, task.space(), 8, run).unwrap();
        let means: Vec<f64> = trace.batches.iter().map(|b| mean_oracle(&task, b)).collect();
        if means.last().unwrap() >= means.first().unwrap() {
            climbing += 1;
        }
    }
    assert!(climbing >= 16, "{climbing} of 20 runs climbed");
}

#[test]
fn autofocus_starts_from_unit_weights() {
    let task = Task::by_name("toy-quadratic").unwrap();
    let data = build_dataset(&task, 4).unwrap();
    let s = spec(
        &task,
        "autofocused-cbas",
        &["iterations=3", "samples_per_iter=128", "ensemble=2", "train.epochs=10"],
    );
    let (_, trace) = run_cbas(&s, &data, task.space(), 8, 4).unwrap();
    assert!(trace.autofocus_weights[0].iter().all(|&w| w == 1.0));
    for w in trace.autofocus_weights.iter().flatten() {
        assert!((1.0 / 20.0..=20.0).contains(w));
    }
}

/// Two clusters with opposite slopes; a linear surrogate can fit only one.
#[test]
fn reweighting_favours_the_heavy_cluster() {
    let n = 200;
    let x = Array2::from_shape_fn((n, 1), |(i, _)| {
        let t = (i % 100) as f64 / 100.0 - 0.5;
        if i < 100 { -1.0 + t } else { 1.0 + t }
    });
    let y: Array1<f64> = x
        .column(0)
        .iter()
        .enumerate()
        .map(|(i, &v)| if i < 100 { 4.0 * v + 6.0 } else { 6.0 - 4.0 * v })
        .collect();
    let weights: Vec<f64> = (0..n).map(|i| if i < 100 { 20.0 } else { 0.05 }).collect();
    let cfg = TrainConfig {
        hidden: vec![],
        epochs: 300,
        batch: 32,
        step_size: 1e-2,
        val_fraction: 0.1,
        seed: 5,
    };
    let plain = fit_surrogate(x.view(), y.view(), &cfg).unwrap().model;
    let heavy = fit_reweighted(x.view(), y.view(), &weights, &cfg).unwrap().model;
    let mse = |m: &mbo::surrogate::MlpModel| {
        (0..100)
            .map(|i| (m.predict(&[x[(i, 0)]]).unwrap() - y[i]).powi(2))
            .sum::<f64>()
            / 100.0
    };
    assert!(mse(&heavy) < mse(&plain), "{} vs {}", mse(&heavy), mse(&plain));
}

#[test]
fn mins_with_a_sharp_kernel_returns_the_best_design() {
    let task = Task::by_name("toy-quadratic").unwrap();
    let data = build_dataset(&task, 3).unwrap();
    let best = &data.designs()[data.top_k(1)[0]];
    let b = best.as_continuous().unwrap();
    let s = spec(&task, "mins", &["y_margin=0", "bandwidth=1e-9", "train.epochs=5"]);
    let found = propose(&s, &data, task.space(), 16, 3).unwrap();
    for d in &found.designs {
        let x = d.as_continuous().unwrap();
        let dist = x.iter().zip(b).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt();
        assert!(dist < 0.1, "{dist}");
    }
}

#[test]
fn mins_targets_high_scores() {
    let task = Task::by_name("toy-quadratic").unwrap();
    let data = build_dataset(&task, 1).unwrap();
    let found = propose(&spec(&task, "mins", &["train.epochs=5"]), &data, task.space(), 128, 1).unwrap();
    assert!(mean_oracle(&task, &found.designs) > data.mean_score());
}

#[test]
fn mins_decodes_valid_sequences() {
    let task = Task::by_name("discrete-lookup-8x4").unwrap();
    let data = build_dataset(&task, 0).unwrap();
    let found = propose(&spec(&task, "mins", &["train.epochs=1"]), &data, task.space(), 32, 0).unwrap();
    for d in &found.designs {
        task.space().validate(d).unwrap();
    }
}

#[test]
fn bo_without_rounds_returns_the_seed_rows() {
    let task = Task::by_name("toy-quadratic").unwrap();
    let data = build_dataset(&task, 6).unwrap();
    let s = spec(&task, "bo-qei", &["rounds=0", "gp_samples=12", "train.epochs=5"]);
    let found = propose(&s, &data, task.space(), 12, 6).unwrap();
    let mut top: Vec<&Design> = data.top_k(12).into_iter().map(|i| &data.designs()[i]).collect();
    for d in &found.designs {
        let pos = top.iter().position(|t| *t == d).expect("candidate is a seed row");
        top.remove(pos);
    }
    assert!(found.surrogate_scores.windows(2).all(|w| w[0] >= w[1]));
}

/// Distance from a point to the convex hull of a planar point set.
fn hull_distance(hull: &[[f64; 2]], p: [f64; 2]) -> f64 {
    let n = hull.len();
    let cross = |o: [f64; 2], a: [f64; 2], b: [f64; 2]| (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
    if (0..n).all(|i| cross(hull[i], hull[(i + 1) % n], p) >= 0.0) {
        return 0.0;
    }
    (0..n)
        .map(|i| {
            let (a, b) = (hull[i], hull[(i + 1) % n]);
            let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
            let t = (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / (dx * dx + dy * dy)).clamp(0.0, 1.0);
            ((p[0] - a[0] - t * dx).powi(2) + (p[1] - a[1] - t * dy).powi(2)).sqrt()
        })
        .fold(f64::INFINITY, f64::min)
}

/// Counter-clockwise hull by the monotone chain.
fn convex_hull(data: &Dataset) -> Vec<[f64; 2]> {
    let mut pts: Vec<[f64; 2]> = data
        .designs()
        .iter()
        .map(|d| {
            let x = d.as_continuous().unwrap();
            [x[0], x[1]]
        })
        .collect();
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let cross = |o: [f64; 2], a: [f64; 2], b: [f64; 2]| (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
    let mut hull: Vec<[f64; 2]> = Vec::new();
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &[f64; 2]>> = if pass == 0 { Box::new(pts.iter()) } else { Box::new(pts.iter().rev()) };
        for &p in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

#[test]
fn conservative_models_stay_nearer_the_data() {
    let task = Task::by_name("toy-quadratic").unwrap();
    let (mut conservative, mut plain) = (0.0, 0.0);
    for seed in 0..20u64 {
        let data = build_dataset(&task, seed).unwrap();
        let hull = convex_hull(&data);
        let dist = |alpha: &str| {
            let s = spec(&task, "coms", &[alpha, "train.epochs=3", "ascent_steps=10"]);
            let found = propose(&s, &data, task.space(), 16, seed).unwrap();
            found
                .designs
                .iter()
                .map(|d| {
                    let x = d.as_continuous().unwrap();
                    hull_distance(&hull, [x[0], x[1]])
                })
                .sum::<f64>()
                / 16.0
        };
        conservative += dist("alpha=0.5");
        plain += dist("alpha=0");
    }
    assert!(conservative <= plain, "{conservative} vs {plain}");
}
