//! Acceptance suite. Each test checks one criterion and prints a single
//! `[criterion N] PASS|FAIL ...` line with the measured values.
//!
//! The training criteria run full schedules and take tens of minutes on one
//! core; they hold a shared lock so their wall-clock budgets are not inflated
//! by each other.

use std::f64::consts::{PI, TAU};
use std::io::Write as _;
use std::path::Path;
use std::sync::{Mutex, OnceLock};
use std::time::{Duration, Instant};

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use bmnet::cli::{run_cli, EXIT_OK};
use bmnet::config::RunConfig;
use bmnet::datasets::{generate_dataset, sample_pair, DatasetId};
use bmnet::flow::{CirclePrior, FlowConfig, FlowNetwork, DIM};
use bmnet::inference::{sample_forward, InferenceConfig};
use bmnet::metrics::{evaluate, exact_wasserstein, knn_kl, mmd, msmd, EvalProtocol};
use bmnet::numerics::{finite_diff_check, Matrix};
use bmnet::seeded_rng;
use bmnet::training::{record_batch_loss, train, Batch, TrainedModel};

static HEAVY: Mutex<()> = Mutex::new(());

fn heavy() -> std::sync::MutexGuard<'static, ()> {
    HEAVY.lock().unwrap_or_else(|e| e.into_inner())
}

/// Prints past the test harness's output capture.
fn report(criterion: u32, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "[criterion {criterion}] {verdict}: {detail}");
    let _ = out.flush();
}

fn max_abs(a: &Matrix, b: &Matrix) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(u, v)| (u - v).abs())
        .fold(0.0, f64::max)
}

fn uniform_rows(rng: &mut bmnet::Rng, rows: usize, cols: usize, half_width: f64) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-half_width..half_width))
        .collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

fn short_trained_network() -> FlowNetwork {
    let data = generate_dataset(DatasetId::Torus1, 1000, 17).unwrap();
    let mut config = RunConfig::default();
    config.train.epochs = 30;
    config.train.learning_rate = 1e-3;
    train(&data, &config).unwrap().0.network
}

#[test]
fn criterion_1_invertibility() {
    let start = Instant::now();
    let untrained = FlowNetwork::new(&FlowConfig::default()).unwrap();
    let trained = short_trained_network();
    let mut rng = seeded_rng(2024, 1);
    let mut worst = [0.0f64; 2];
    for (slot, net) in [&untrained, &trained].into_iter().enumerate() {
        for _ in 0..1000 {
            let v = uniform_rows(&mut rng, 1, DIM, 2.0);
            let rx = uniform_rows(&mut rng, 1, 3, 1.5).into_data();
            let ry = uniform_rows(&mut rng, 1, 2, 1.5).into_data();
            let there = net.forward_full(&v, &rx, &ry).unwrap();
            let back = net.inverse_full(&there, &rx, &ry).unwrap();
            let w = uniform_rows(&mut rng, 1, DIM, 2.0);
            let w_back = net
                .forward_full(&net.inverse_full(&w, &rx, &ry).unwrap(), &rx, &ry)
                .unwrap();
            worst[slot] = worst[slot]
                .max(max_abs(&v, &back))
                .max(max_abs(&w, &w_back));
        }
    }
    let pass = worst.iter().all(|&e| e <= 1e-6);
    report(
        1,
        pass,
        &format!(
            "max round-trip error untrained {:.3e}, trained {:.3e} (<= 1e-6), {:.1?}",
            worst[0],
            worst[1],
            start.elapsed()
        ),
    );
    assert!(pass);
}

/// Smallest gap between the nearest and second-nearest squared distance over
/// every point of either set; near zero means the chamfer argmin is a tie.
fn argmin_margin(a: &Matrix, b: &Matrix) -> f64 {
    let gap = |p: &Matrix, q: &Matrix| {
        let mut worst = f64::INFINITY;
        for i in 0..p.rows() {
            let mut d: Vec<f64> = (0..q.rows())
                .map(|j| {
                    p.row(i)
                        .iter()
                        .zip(q.row(j))
                        .map(|(u, v)| (u - v) * (u - v))
                        .sum()
                })
                .collect();
            d.sort_by(f64::total_cmp);
            if d.len() > 1 {
                worst = worst.min(d[1] - d[0]);
            }
        }
        worst
    };
    gap(a, b).min(gap(b, a))
}

#[test]
fn criterion_2_gradient_correctness() {
    let start = Instant::now();
    let config = FlowConfig {
        blocks: 2,
        hidden_width: 16,
        ..FlowConfig::default()
    };
    let mut worst: f64 = 0.0;
    let (mut checked, mut skipped) = (0, 0);
    let mut seed = 0;
    while checked < 20 {
        seed += 1;
        let mut rng = seeded_rng(seed, 2);
        let mut net = FlowNetwork::new(&FlowConfig {
            seed,
            ..config.clone()
        })
        .unwrap();
        let ids: Vec<_> = net.params.iter().map(|(id, _, _)| id).collect();
        for id in ids {
            for v in net.params.get_mut(id).data_mut() {
                *v = rng.random_range(-0.5..0.5);
            }
        }
        let pairs: Vec<_> = (0..4)
            .map(|_| sample_pair(DatasetId::Torus1, &mut rng))
            .collect();
        let circle = |rng: &mut bmnet::Rng, pad: bool| -> Vec<f64> {
            let t = rng.random_range(0.0..TAU);
            let mut p = vec![t.cos(), t.sin()];
            if pad {
                p.push(0.0);
            }
            p
        };
        let batch = Batch {
            x: Matrix::from_rows(&pairs.iter().map(|p| p.x).collect::<Vec<_>>()).unwrap(),
            y: Matrix::from_rows(&pairs.iter().map(|p| p.y).collect::<Vec<_>>()).unwrap(),
            z1: Matrix::from_rows(&(0..4).map(|_| circle(&mut rng, false)).collect::<Vec<_>>())
                .unwrap(),
            z2: Matrix::from_rows(&(0..4).map(|_| circle(&mut rng, true)).collect::<Vec<_>>())
                .unwrap(),
            rx: pairs[0].x.to_vec(),
            ry: pairs[0].y.to_vec(),
            prior_z1: CirclePrior {
                center: [0.05, -0.02],
                radius: 0.95,
            },
            prior_z2: CirclePrior {
                center: [-0.03, 0.01],
                radius: 1.05,
            },
        };
        let (y_hat, _) = net
            .forward(&batch.x, &batch.z1, &batch.rx, &batch.ry)
            .unwrap();
        let (x_hat, _) = net
            .inverse(&batch.y, &batch.z2, &batch.rx, &batch.ry)
            .unwrap();
        if argmin_margin(&y_hat, &batch.y).min(argmin_margin(&x_hat, &batch.x)) < 1e-4 {
            skipped += 1;
            continue;
        }
        // At h = 1e-5 rounding in the loss (~1e-11 absolute) swamps entries of
        // order 1e-7; 1e-4 keeps both rounding and truncation small.
        let err = finite_diff_check(&net.params, 1e-4, |tape| {
            Ok(record_batch_loss(tape, &net, &batch, 0.05).total)
        })
        .unwrap();
        worst = worst.max(err);
        checked += 1;
    }
    let pass = worst <= 1e-4;
    report(
        2,
        pass,
        &format!(
            "worst relative gradient error {worst:.3e} over {checked} seeds ({skipped} tie configurations skipped) (<= 1e-4), {:.1?}",
            start.elapsed()
        ),
    );
    assert!(pass);
}

/// `W_p` by enumerating every matching.
fn enumerated_wasserstein(a: &[Vec<f64>], b: &[Vec<f64>], p: i32) -> f64 {
    fn visit(k: usize, perm: &mut [usize], best: &mut f64, cost: &dyn Fn(&[usize]) -> f64) {
        if k == perm.len() {
            *best = best.min(cost(perm));
            return;
        }
        for i in k..perm.len() {
            perm.swap(k, i);
            visit(k + 1, perm, best, cost);
            perm.swap(k, i);
        }
    }
    let n = a.len();
    let cost = |perm: &[usize]| -> f64 {
        (0..n)
            .map(|i| {
                let d: f64 = a[i]
                    .iter()
                    .zip(&b[perm[i]])
                    .map(|(u, v)| (u - v) * (u - v))
                    .sum();
                d.sqrt().powi(p)
            })
            .sum()
    };
    let mut best = f64::INFINITY;
    visit(0, &mut (0..n).collect::<Vec<_>>(), &mut best, &cost);
    (best / n as f64).powf(1.0 / p as f64)
}

fn normal_set(rng: &mut bmnet::Rng, n: usize, dim: usize, shift: f64) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            (0..dim)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(rng);
                    z + shift
                })
                .collect()
        })
        .collect()
}

#[test]
fn criterion_3_metric_oracles() {
    let start = Instant::now();
    let mut rng = seeded_rng(3, 3);
    let mut worst_w: f64 = 0.0;
    for trial in 0..100 {
        let n = 1 + trial % 6;
        let p = 1 + (trial / 6) as i32 % 2;
        let a: Vec<Vec<f64>> = uniform_rows(&mut rng, n, 2, 3.0).to_rows();
        let b: Vec<Vec<f64>> = uniform_rows(&mut rng, n, 2, 3.0).to_rows();
        let w = exact_wasserstein(&a, &b, p as u32).unwrap();
        worst_w = worst_w.max((w - enumerated_wasserstein(&a, &b, p)).abs());
    }

    let chamfer = msmd(&[vec![0.0, 0.0]], &[vec![1.0, 0.0], vec![0.0, 2.0]]).unwrap();

    // KL(N(0,1) ‖ N(1,1)) = 1/2.
    let p = normal_set(&mut rng, 5000, 1, 0.0);
    let q = normal_set(&mut rng, 5000, 1, 1.0);
    let kl = knn_kl(&p, &q, 5).unwrap();

    let a = normal_set(&mut rng, 2000, 2, 0.0);
    let b = normal_set(&mut rng, 2000, 2, 0.0);
    let null = mmd(&a, &b).unwrap();

    let checks = [
        worst_w <= 1e-9,
        chamfer == 3.5,
        (kl - 0.5).abs() <= 0.15,
        null <= 0.01,
    ];
    let pass = checks.iter().all(|&c| c);
    report(
        3,
        pass,
        &format!(
            "exact-vs-enumerated W max diff {worst_w:.2e} (<= 1e-9); msmd example {chamfer} (= 3.5); \
             kNN KL {kl:.4} (0.5 +/- 0.15); MMD null {null:.2e} (<= 0.01); {:.1?}",
            start.elapsed()
        ),
    );
    assert!(pass);
}

/// Distance of `x` to the torus with radii 1 and 0.25.
fn torus_residual(x: &[f64; 3]) -> f64 {
    let rho = x[0].hypot(x[1]);
    ((rho - 1.0).hypot(x[2]) - 0.25).abs()
}

/// Distance of `x` to the Möbius band with center radius 1 and half-width 0.25,
/// measured in the meridian plane through `x`.
fn mobius_residual(x: &[f64; 3]) -> f64 {
    let theta = x[1].atan2(x[0]);
    let (u, w) = (1.0 - x[0].hypot(x[1]), x[2]);
    let (c, s) = ((theta / 2.0).cos(), (theta / 2.0).sin());
    let off_line = (-u * s + w * c).abs();
    let along = u * c + w * s;
    off_line + (along.abs() - 0.25).max(0.0)
}

#[test]
fn criterion_4_dataset_fidelity() {
    let start = Instant::now();
    let mut worst = [0.0f64; 3];
    let mut branch_frequency = 0.0;
    for (slot, id) in DatasetId::ALL.into_iter().enumerate() {
        let data = generate_dataset(id, 100_000, 4).unwrap();
        let mut first_branch = 0usize;
        for pair in &data.pairs {
            let rx = match id {
                DatasetId::Mobius => mobius_residual(&pair.x),
                _ => torus_residual(&pair.x),
            };
            let ry = (pair.y[0].hypot(pair.y[1]) - 1.0).abs();
            worst[slot] = worst[slot].max(rx).max(ry);
            if id == DatasetId::Torus2 {
                let half = pair.x[1].atan2(pair.x[0]).rem_euclid(TAU) / 2.0;
                let d = (pair.y[0] - half.cos()).hypot(pair.y[1] - half.sin());
                if d < 1.0 {
                    first_branch += 1;
                }
            }
        }
        if id == DatasetId::Torus2 {
            branch_frequency = first_branch as f64 / data.len() as f64;
        }
    }
    let pass = worst.iter().all(|&r| r <= 1e-12) && (branch_frequency - 0.5).abs() <= 0.01;
    report(
        4,
        pass,
        &format!(
            "max residual torus1 {:.2e}, torus2 {:.2e}, mobius {:.2e} (<= 1e-12); torus2 branch frequency {branch_frequency:.4} (0.5 +/- 0.01); {:.1?}",
            worst[0],
            worst[1],
            worst[2],
            start.elapsed()
        ),
    );
    assert!(pass);
}

fn full_schedule_model(id: DatasetId, data_seed: u64) -> (TrainedModel, Duration) {
    let data = generate_dataset(id, 5000, data_seed).unwrap();
    let config = RunConfig::default();
    assert_eq!(config.train.epochs, 2000);
    assert_eq!(config.train.learning_rate, 1e-4);
    assert_eq!(config.train.milestones, vec![1000, 1500]);
    let start = Instant::now();
    let model = train(&data, &config).unwrap().0;
    (model, start.elapsed())
}

#[test]
fn criterion_5_full_scale_torus1() {
    let _guard = heavy();
    let (model, elapsed) = full_schedule_model(DatasetId::Torus1, 5);
    let protocol = EvalProtocol {
        seed: 5,
        ..EvalProtocol::default()
    };
    let report5 = evaluate(&model, DatasetId::Torus1, &protocol)
        .unwrap()
        .report;
    let fwd = report5.value("forward.global.w1").unwrap();
    let rev = report5.value("reverse.global.w1").unwrap();
    let local = report5.value("forward.local.w1").unwrap();
    let pass = fwd <= 0.06 && rev <= 0.14 && local <= 0.28 && elapsed <= Duration::from_secs(7200);
    report(
        5,
        pass,
        &format!(
            "torus1 n=5000, 2000 epochs: global W1 forward {fwd:.4} (<= 0.06), reverse {rev:.4} (<= 0.14); \
             local W1 forward {local:.4} (<= 0.28); training {:.1?} (<= 2 h)",
            elapsed
        ),
    );
    assert!(pass);
}

/// Splits angles on the circle into two groups around the dominant axis.
///
/// Returns the circular distance between the group means and the larger
/// group's share.
fn two_mode_split(angles: &[f64]) -> (f64, f64) {
    let (mut c2, mut s2) = (0.0, 0.0);
    for &a in angles {
        c2 += (2.0 * a).cos();
        s2 += (2.0 * a).sin();
    }
    let axis = s2.atan2(c2) / 2.0;
    let (mut sums, mut counts) = ([[0.0f64; 2]; 2], [0usize; 2]);
    for &a in angles {
        let g = usize::from((a - axis).cos() < 0.0);
        sums[g][0] += a.cos();
        sums[g][1] += a.sin();
        counts[g] += 1;
    }
    if counts.contains(&0) {
        return (0.0, 1.0);
    }
    let means = sums.map(|s| s[1].atan2(s[0]));
    let d = (means[0] - means[1]).rem_euclid(TAU);
    let separation = d.min(TAU - d);
    let share = *counts.iter().max().unwrap() as f64 / angles.len() as f64;
    (separation, share)
}

#[test]
fn criterion_6_torus2_bimodality() {
    let _guard = heavy();
    let (model, elapsed) = full_schedule_model(DatasetId::Torus2, 6);
    let mut rng = seeded_rng(6, 6);
    let mut worst_sep: f64 = 0.0;
    let mut worst_mass: f64 = 0.0;
    for a in 0..10 {
        let x = sample_pair(DatasetId::Torus2, &mut rng).x;
        let cfg = InferenceConfig {
            n: 200,
            seed: a,
            ..InferenceConfig::default()
        };
        let ys = sample_forward(&model, &x, &cfg).unwrap();
        let angles: Vec<f64> = ys.iter().map(|y| y[1].atan2(y[0])).collect();
        let (separation, share) = two_mode_split(&angles);
        worst_sep = worst_sep.max((separation - PI).abs());
        // Both modes carry 1 - share and share; the larger one bounds the deviation.
        worst_mass = worst_mass.max(share - 0.5);
    }
    let protocol = EvalProtocol {
        seed: 6,
        ..EvalProtocol::default()
    };
    let eval = evaluate(&model, DatasetId::Torus2, &protocol)
        .unwrap()
        .report;
    let fwd = eval.value("forward.global.w1").unwrap();
    let pass = worst_sep <= 0.3 && worst_mass <= 0.15 && fwd <= 0.03;
    report(
        6,
        pass,
        &format!(
            "torus2, 10 anchors: max |separation - pi| {worst_sep:.3} (<= 0.3), max |mode mass - 0.5| {worst_mass:.3} (<= 0.15); \
             global W1 forward {fwd:.4} (<= 0.03); training {elapsed:.1?}"
        ),
    );
    assert!(pass);
}

struct SmokeRun {
    elapsed: Duration,
    checkpoint: Vec<u8>,
    report: Vec<u8>,
    forward_w1: f64,
}

const SMOKE_CONFIG: &str = r#"{
  "train": { "epochs": 500, "milestones": [250, 375], "seed": 7 },
  "protocol": { "seed": 7 }
}"#;

fn cli(args: &[&str]) {
    let status = run_cli(std::iter::once("bmnet").chain(args.iter().copied()));
    assert_eq!(status, EXIT_OK, "bmnet {}", args.join(" "));
}

fn smoke_run(dir: &Path, tag: &str) -> SmokeRun {
    let start = Instant::now();
    let s = |p: &Path| p.to_str().unwrap().to_string();
    let data = dir.join("train.csv");
    let config = dir.join("smoke.json");
    std::fs::write(&config, SMOKE_CONFIG).unwrap();
    let model = dir.join(format!("model_{tag}.json"));
    let report = dir.join(format!("report_{tag}.json"));
    cli(&[
        "gen-data",
        "--dataset",
        "torus1",
        "--n",
        "2000",
        "--seed",
        "7",
        "--out",
        &s(&data),
    ]);
    cli(&[
        "train",
        "--data",
        &s(&data),
        "--config",
        &s(&config),
        "--out",
        &s(&model),
        "--quiet",
    ]);
    cli(&[
        "eval",
        "--model",
        &s(&model),
        "--dataset",
        "torus1",
        "--seed",
        "7",
        "--report",
        &s(&report),
    ]);
    let elapsed = start.elapsed();
    let report_bytes = std::fs::read(&report).unwrap();
    let json: serde_json::Value = serde_json::from_slice(&report_bytes).unwrap();
    SmokeRun {
        elapsed,
        checkpoint: std::fs::read(&model).unwrap(),
        report: report_bytes,
        forward_w1: json["forward.global.w1"].as_f64().unwrap(),
    }
}

fn smoke_runs() -> &'static (SmokeRun, SmokeRun) {
    static RUNS: OnceLock<(SmokeRun, SmokeRun)> = OnceLock::new();
    RUNS.get_or_init(|| {
        let _guard = heavy();
        let dir = tempfile::tempdir().unwrap();
        let first = smoke_run(dir.path(), "a");
        let second = smoke_run(dir.path(), "b");
        (first, second)
    })
}

#[test]
fn criterion_7_smoke_pipeline() {
    let (run, _) = smoke_runs();
    let pass = run.elapsed <= Duration::from_secs(600) && run.forward_w1 <= 0.15;
    report(
        7,
        pass,
        &format!(
            "gen-data/train/eval torus1 n=2000, 500 epochs: {:.1?} (<= 10 min), global W1 forward {:.4} (<= 0.15)",
            run.elapsed, run.forward_w1
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_8_determinism() {
    let (a, b) = smoke_runs();
    let same_checkpoint = a.checkpoint == b.checkpoint;
    let same_report = a.report == b.report;
    let pass = same_checkpoint && same_report;
    report(
        8,
        pass,
        &format!(
            "two seeded smoke runs: checkpoints identical {same_checkpoint} ({} bytes), reports identical {same_report}",
            a.checkpoint.len()
        ),
    );
    assert!(pass);
}
