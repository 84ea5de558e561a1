//! End-to-end training behaviour on problems with known answers.

use fmmi::benchdist::{gaussian_pair_mi, DatasetSpec, Family};
use fmmi::diffkernel::Matrix;
use fmmi::estimators::{
    cfmmi, fmdoe_estimate, jfmmi, ConditionOn, Direction, EstimateResult, MiConfig, VelocityModel,
};
use fmmi::flowmatch::{train, CouplingBatch, DivergenceMode, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn normals(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

fn small(seed: u64, width: usize, n_iters: usize) -> TrainConfig {
    TrainConfig {
        hidden_width: width,
        n_iters,
        seed,
        ..TrainConfig::default()
    }
}

/// Independent coupling of `N(0, I)` and `N(0, s²I)`.
fn scaled_gaussian_sampler(d: usize, s: f64) -> impl FnMut(usize, &mut ChaCha8Rng) -> fmmi::Result<CouplingBatch> {
    move |n, r| {
        let x0 = normals(n, d, r);
        let mut x1 = normals(n, d, r);
        x1.map_inplace(|v| v * s);
        CouplingBatch::new(x0, x1, None)
    }
}

fn eval_batch(d: usize, s: f64, n: usize, seed: u64) -> CouplingBatch {
    scaled_gaussian_sampler(d, s)(n, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

#[test]
fn learned_field_matches_analytic_gaussian_velocity() {
    let e = std::f64::consts::E;
    let out = train(scaled_gaussian_sampler(1, e), &small(3, 128, 6000)).unwrap();
    // E[X1 − X0 | X_t = x] = (t e² − (1 − t)) / ((1 − t)² + t² e²) · x,
    // compared in L2 under the path distribution
    let mut r = ChaCha8Rng::seed_from_u64(77);
    let n = 20_000;
    let t: Vec<f64> = (0..n).map(|_| r.random::<f64>()).collect();
    let var = |t: f64| (1.0 - t).powi(2) + t * t * e * e;
    let xt: Vec<f64> = t
        .iter()
        .map(|&t| var(t).sqrt() * r.sample::<f64, _>(StandardNormal))
        .collect();
    let v = out.model.velocity(&Matrix::column(&xt).unwrap(), None, &t).unwrap();
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..n {
        let exact = (t[i] * e * e - (1.0 - t[i])) / var(t[i]) * xt[i];
        num += (v.get(i, 0) - exact).powi(2);
        den += exact * exact;
    }
    let rel = (num / den).sqrt();
    assert!(rel < 0.2, "relative L2 velocity error {rel}");
    let est = fmdoe_estimate(&out.model, &[eval_batch(1, e, 20_000, 99)], &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    assert!((est.value_nats - 1.0).abs() < 0.1, "{est:?}");
}

#[test]
fn loss_decreases_for_every_seed() {
    for seed in 0..5 {
        let out = train(scaled_gaussian_sampler(2, 2.0), &small(seed, 32, 600)).unwrap();
        let k = out.loss_trace.len() / 10;
        let head: f64 = out.loss_trace[..k].iter().sum::<f64>() / k as f64;
        let tail: f64 = out.loss_trace[out.loss_trace.len() - k..].iter().sum::<f64>() / k as f64;
        assert!(tail < head, "seed {seed}: {head} -> {tail}");
    }
}

#[test]
fn training_is_bit_reproducible() {
    let a = train(scaled_gaussian_sampler(2, 2.0), &small(7, 16, 200)).unwrap();
    let b = train(scaled_gaussian_sampler(2, 2.0), &small(7, 16, 200)).unwrap();
    let c = train(scaled_gaussian_sampler(2, 2.0), &small(8, 16, 200)).unwrap();
    assert_eq!(a.loss_trace, b.loss_trace);
    assert_eq!(a.model.params.flat(), b.model.params.flat());
    assert_ne!(a.model.params.flat(), c.model.params.flat());
}

#[test]
fn loss_trace_file_is_written() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trace.csv");
    let cfg = TrainConfig {
        trace_path: Some(path.clone()),
        ..small(1, 8, 25)
    };
    let out = train(scaled_gaussian_sampler(1, 1.0), &cfg).unwrap();
    let text = std::fs::read_to_string(path).unwrap();
    assert_eq!(text.lines().count(), 25);
    let last: f64 = text.lines().last().unwrap().split(',').nth(1).unwrap().parse().unwrap();
    assert_eq!(last, out.loss_trace[24]);
}

#[test]
fn identical_endpoints_give_zero_gap() {
    let sampler = |n: usize, r: &mut ChaCha8Rng| {
        let x = normals(n, 2, r);
        CouplingBatch::new(x.clone(), x, None)
    };
    let out = train(sampler, &small(2, 32, 800)).unwrap();
    let x = normals(5000, 2, &mut ChaCha8Rng::seed_from_u64(1));
    let b = CouplingBatch::new(x.clone(), x, None).unwrap();
    let est = fmdoe_estimate(&out.model, &[b], &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    assert!(est.value_nats.abs() < 0.05, "{est:?}");
}

#[test]
fn expansion_is_positive_and_reversal_flips_sign() {
    let d = 2;
    let truth = d as f64 * 2f64.ln();
    let fwd = train(scaled_gaussian_sampler(d, 2.0), &small(4, 64, 2500)).unwrap();
    let rev_sampler = |n: usize, r: &mut ChaCha8Rng| scaled_gaussian_sampler(d, 2.0)(n, r).map(CouplingBatch::reversed);
    let rev = train(rev_sampler, &small(5, 64, 2500)).unwrap();
    let mut r = ChaCha8Rng::seed_from_u64(6);
    let b = eval_batch(d, 2.0, 10_000, 7);
    let up = fmdoe_estimate(&fwd.model, std::slice::from_ref(&b), &mut r).unwrap();
    let down = fmdoe_estimate(&rev.model, &[b.reversed()], &mut r).unwrap();
    assert!((up.value_nats - truth).abs() < 0.15, "{up:?}");
    assert!((down.value_nats + truth).abs() < 0.15, "{down:?}");
}

#[test]
fn hutchinson_and_exact_agree_on_a_trained_field() {
    let out = train(scaled_gaussian_sampler(3, 1.5), &small(9, 32, 1000)).unwrap();
    let b = eval_batch(3, 1.5, 5000, 10);
    let exact = fmdoe_estimate(&out.model, std::slice::from_ref(&b), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let mut hutch_model: VelocityModel = out.model.clone();
    hutch_model.config.divergence_mode = DivergenceMode::Hutchinson { n_probes: 4 };
    let hutch = fmdoe_estimate(&hutch_model, &[b], &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    // identical time draws, so the difference is probe noise only
    let se = (exact.stderr_nats.powi(2) + hutch.stderr_nats.powi(2)).sqrt();
    assert!((exact.value_nats - hutch.value_nats).abs() < 3.0 * se, "{exact:?} {hutch:?}");
    assert_ne!(exact.value_nats, hutch.value_nats);
}

fn gaussian_joint(rho_mi: f64, n: usize, seed: u64) -> (Matrix, f64) {
    let spec = DatasetSpec::new(Family::CorrelatedNormal, 1, 1, rho_mi, seed).unwrap();
    let joint = spec.sample(n, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    (joint, spec.ground_truth_mi())
}

fn mi_cfg(seed: u64) -> MiConfig {
    MiConfig {
        train: small(seed, 64, 3000),
        eval_size: 5000,
        ..MiConfig::default()
    }
}

fn close(a: &EstimateResult, b: &EstimateResult, slack: f64) -> bool {
    (a.value_nats - b.value_nats).abs() <= 3.0 * (a.stderr_nats.powi(2) + b.stderr_nats.powi(2)).sqrt() + slack
}

#[test]
fn jfmmi_recovers_one_dimensional_gaussian_mi() {
    let (joint, truth) = gaussian_joint(gaussian_pair_mi(0.9), 20_000, 11);
    assert!((truth - 0.830_366_3).abs() < 1e-6);
    let mut r = ChaCha8Rng::seed_from_u64(12);
    let fwd = jfmmi(&joint, 1, &mi_cfg(13), Direction::Forward, &mut r).unwrap();
    let rev = jfmmi(&joint, 1, &mi_cfg(14), Direction::Reverse, &mut r).unwrap();
    assert!((fwd.value_nats - truth).abs() < 0.1, "{fwd:?}");
    assert!((rev.value_nats - truth).abs() < 0.1, "{rev:?}");
    assert!(close(&fwd, &rev, 0.1), "{fwd:?} {rev:?}");
}

#[test]
fn cfmmi_is_symmetric_in_the_conditioning_block() {
    let (joint, truth) = gaussian_joint(0.6, 20_000, 21);
    let mut r = ChaCha8Rng::seed_from_u64(22);
    let on_y = cfmmi(&joint, 1, ConditionOn::Y, &mi_cfg(23), &mut r).unwrap();
    let on_x = cfmmi(&joint, 1, ConditionOn::X, &mi_cfg(24), &mut r).unwrap();
    assert!((on_y.value_nats - truth).abs() < 0.1, "{on_y:?}");
    assert!(close(&on_y, &on_x, 0.1), "{on_y:?} {on_x:?}");
}

#[test]
fn independent_blocks_give_near_zero_mi() {
    let (joint, _) = gaussian_joint(0.0, 15_000, 31);
    let mut r = ChaCha8Rng::seed_from_u64(32);
    let est = jfmmi(&joint, 1, &mi_cfg(33), Direction::Forward, &mut r).unwrap();
    assert!(est.value_nats.abs() < 0.1, "{est:?}");
}

#[test]
fn estimates_are_reproducible_per_seed() {
    let (joint, _) = gaussian_joint(0.5, 3000, 41);
    let cfg = MiConfig {
        train: small(42, 16, 100),
        eval_size: 500,
        ..MiConfig::default()
    };
    let a = jfmmi(&joint, 1, &cfg, Direction::Forward, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let b = jfmmi(&joint, 1, &cfg, Direction::Forward, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    assert_eq!(a, b);
}
