use fmmi::benchdist::{
    gaussian_pair_mi, ground_truth_mi, halfcube, halfcube_inverse, smoothed_uniform_pair_mi, solve_params,
    DatasetSpec, DerivedParams, Family, SMOOTHED_UNIFORM_MIN_NATS,
};
use fmmi::diffkernel::{divergence_exact, divergence_hutchinson, mlp_forward, Activation, Matrix, MlpParams};
use fmmi::estimators::{permute_product, shuffle_conditional, EstimateResult};
use fmmi::flowmatch::{sample_path, target_velocity};
use fmmi::oracle::ksg_estimate;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn family() -> impl Strategy<Value = Family> {
    prop::sample::select(Family::ALL.to_vec())
}

fn random_net(widths: &[usize], seed: u64) -> MlpParams {
    MlpParams::init(widths, Activation::Tanh, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn sorted_bits(m: &Matrix) -> Vec<Vec<u64>> {
    let mut rows: Vec<Vec<u64>> = m.iter_rows().map(|r| r.iter().map(|v| v.to_bits()).collect()).collect();
    rows.sort();
    rows
}

proptest! {
    #[test]
    fn path_hits_endpoints(x0 in prop::collection::vec(-1e3..1e3f64, 1..6), shift in -10.0..10.0f64) {
        let x1: Vec<f64> = x0.iter().map(|v| v * 0.5 + shift).collect();
        prop_assert_eq!(sample_path(&x0, &x1, 0.0).unwrap(), x0.clone());
        prop_assert_eq!(sample_path(&x0, &x1, 1.0).unwrap(), x1.clone());
        let v = target_velocity(&x0, &x1).unwrap();
        let mid = sample_path(&x0, &x1, 0.5).unwrap();
        for i in 0..x0.len() {
            prop_assert!((mid[i] - (x0[i] + 0.5 * v[i])).abs() <= 1e-9 * (1.0 + x0[i].abs()));
        }
    }

    #[test]
    fn solve_and_ground_truth_round_trip(f in family(), dim in 1usize..10, per_pair in 0.0..4.0f64) {
        let target = if f == Family::SmoothedUniform {
            (SMOOTHED_UNIFORM_MIN_NATS + per_pair) * dim as f64
        } else {
            per_pair * dim as f64
        };
        let spec = DatasetSpec::new(f, dim, dim, target, 0).unwrap();
        prop_assert!((ground_truth_mi(&spec) - target).abs() < 1e-9);
        let pairs = match solve_params(f, dim, target).unwrap() {
            DerivedParams::Rho(r) => r.iter().map(|&p| gaussian_pair_mi(p)).collect::<Vec<_>>(),
            DerivedParams::Epsilon(e) => e.iter().map(|&p| smoothed_uniform_pair_mi(p)).collect(),
        };
        prop_assert_eq!(pairs.len(), dim);
    }

    #[test]
    fn smoothed_uniform_below_floor_is_infeasible(dim in 1usize..6, frac in 0.0..0.99f64) {
        let target = frac * SMOOTHED_UNIFORM_MIN_NATS * dim as f64;
        prop_assert!(DatasetSpec::new(Family::SmoothedUniform, dim, dim, target, 0).is_err());
    }

    #[test]
    fn halfcube_is_monotone_and_invertible(a in -50.0..50.0f64, b in -50.0..50.0f64) {
        if a < b {
            prop_assert!(halfcube(a) < halfcube(b));
        }
        let back = halfcube_inverse(halfcube(a));
        prop_assert!((back - a).abs() <= 1e-9 * (1.0 + a.abs()));
    }

    #[test]
    fn smoothed_uniform_support(seed in any::<u64>(), target in 0.5..3.0f64) {
        let spec = DatasetSpec::new(Family::SmoothedUniform, 1, 1, target, seed).unwrap();
        let DerivedParams::Epsilon(eps) = solve_params(Family::SmoothedUniform, 1, target).unwrap() else {
            panic!("expected a smoothing width");
        };
        let s = spec.sample(500, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        for r in s.iter_rows() {
            prop_assert!((0.0..=1.0).contains(&r[0]));
            prop_assert!(r[1] >= r[0] && r[1] <= r[0] + eps[0]);
        }
    }

    #[test]
    fn divergence_is_linear_in_the_output(seed in any::<u64>(), c in -3.0..3.0f64) {
        let p = random_net(&[4, 8, 3], seed);
        let mut scaled = p.clone();
        let last = scaled.layers_mut().last_mut().unwrap();
        last.weight.map_inplace(|w| w * c);
        last.bias.iter_mut().for_each(|b| *b *= c);
        let x = Matrix::from_fn(5, 4, |i, j| ((i * 4 + j) as f64 * 0.37 + seed as f64 % 7.0).sin());
        let d = divergence_exact(&p, &x, 3).unwrap();
        let ds = divergence_exact(&scaled, &x, 3).unwrap();
        for (a, b) in d.iter().zip(&ds) {
            prop_assert!((c * a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        }
        let out = mlp_forward(&scaled, &x).unwrap();
        prop_assert!(out.check_finite("scaled output").is_ok());
    }

    #[test]
    fn single_probe_hutchinson_on_diagonal_fields_is_exact(seed in any::<u64>()) {
        // aᵀ D a = tr D for Rademacher a and diagonal D
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let diag: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
        let w = Matrix::from_fn(3, 4, |i, j| if i == j { diag[i] } else { 0.0 });
        let layer = fmmi::diffkernel::Layer::new(w, vec![0.1, 0.2, 0.3]).unwrap();
        let p = MlpParams::new(vec![layer], Activation::Tanh).unwrap();
        let x = Matrix::from_fn(6, 4, |_, _| rng.sample(StandardNormal));
        let h = divergence_hutchinson(&p, &x, 3, 1, &mut rng).unwrap();
        let trace: f64 = diag.iter().sum();
        for v in h {
            prop_assert!((v - trace).abs() < 1e-12);
        }
    }

    #[test]
    fn couplings_preserve_marginals(seed in any::<u64>(), n in 1usize..40, dx in 1usize..3, dy in 1usize..3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let joint = Matrix::from_fn(n, dx + dy, |_, _| rng.random::<f64>());
        let y = joint.columns(dx..dx + dy).unwrap();
        let b = permute_product(&joint, dx, &mut rng).unwrap();
        prop_assert_eq!(&b.x1, &joint);
        prop_assert_eq!(b.x0.columns(0..dx).unwrap(), joint.columns(0..dx).unwrap());
        prop_assert_eq!(sorted_bits(&b.x0.columns(dx..dx + dy).unwrap()), sorted_bits(&y));
        let c = shuffle_conditional(&joint, dx, &mut rng).unwrap();
        prop_assert_eq!(c.cond.as_ref().unwrap(), &y);
        prop_assert_eq!(sorted_bits(&c.x0), sorted_bits(&c.x1));
    }

    #[test]
    fn estimate_moments(terms in prop::collection::vec(-100.0..100.0f64, 2..200)) {
        let r = EstimateResult::from_terms(&terms).unwrap();
        let n = terms.len() as f64;
        let mean = terms.iter().sum::<f64>() / n;
        prop_assert!((r.value_nats - mean).abs() < 1e-9);
        prop_assert!(r.stderr_nats >= 0.0);
        prop_assert_eq!(r.n_eval, terms.len());
    }

    #[test]
    fn ksg_is_symmetric(seed in any::<u64>(), rho in -0.9..0.9f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Matrix::from_fn(300, 1, |_, _| rng.sample(StandardNormal));
        let y = Matrix::from_fn(300, 1, |i, _| {
            let z: f64 = rng.sample(StandardNormal);
            rho * x.get(i, 0) + (1.0 - rho * rho).sqrt() * z
        });
        let a = ksg_estimate(&x, &y, 4).unwrap();
        let b = ksg_estimate(&y, &x, 4).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
    }
}

/// Kolmogorov–Smirnov statistic against U[0, 1].
fn ks_uniform(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, &x)| f64::max(x - i as f64 / n, (i + 1) as f64 / n - x))
        .fold(0.0, f64::max)
}

#[test]
fn copula_marginals_are_uniform() {
    let n = 20_000;
    // 0.1% critical value of the one-sample KS statistic
    let crit = 1.95 / (n as f64).sqrt();
    for seed in 0..3 {
        let spec = DatasetSpec::new(Family::CorrelatedUniform, 2, 3, 1.5, seed).unwrap();
        let s = spec.sample(n, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        for c in 0..5 {
            let col: Vec<f64> = s.iter_rows().map(|r| r[c]).collect();
            let d = ks_uniform(col);
            assert!(d < crit, "seed {seed} column {c}: KS {d}");
        }
    }
}

#[test]
fn halfcube_preserves_ranks_of_the_base_sample() {
    let base = DatasetSpec::new(Family::CorrelatedNormal, 2, 2, 1.0, 5).unwrap();
    let cube = DatasetSpec::new(Family::HalfcubeNormal, 2, 2, 1.0, 5).unwrap();
    let a = base.sample(1000, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    let b = cube.sample(1000, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    for (ra, rb) in a.iter_rows().zip(b.iter_rows()) {
        for (x, y) in ra.iter().zip(rb) {
            assert!((halfcube(*x) - y).abs() < 1e-12);
        }
    }
}
