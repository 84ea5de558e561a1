//! Offline self-checks behind `fmmi selftest`: analytic fields with known
//! divergence and entropy gap, derivative checks, and the oracle suite.
//! Everything runs on synthetic data in a few seconds.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::benchdist::{ground_truth_mi, DatasetSpec, Family};
use crate::diffkernel::{
    divergence_basis_probes, divergence_exact, divergence_hutchinson, fm_loss_and_grads, mlp_forward, Activation,
    Layer, Matrix, MlpParams,
};
use crate::error::Result;
use crate::estimators::{fmdoe_estimate, VelocityModel};
use crate::flowmatch::CouplingBatch;
use crate::oracle::{
    bound_check, gaussian_corollary_check, gaussian_entropy, ksg_estimate, quad_entropy_1d, GaussianPathSpec,
};

#[derive(Clone, Debug)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn outcome(name: &'static str, result: Result<(bool, String)>) -> CheckOutcome {
    match result {
        Ok((passed, detail)) => CheckOutcome { name, passed, detail },
        Err(e) => CheckOutcome {
            name,
            passed: false,
            detail: format!("error: {e}"),
        },
    }
}

fn normals(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// Single affine layer `v(x, t) = A x + b` on inputs `[x | t]`.
fn affine_field(a: &Matrix, b: &[f64]) -> Result<VelocityModel> {
    let d = a.rows();
    let w = Matrix::hcat(&[a, &Matrix::zeros(d, 1)])?;
    let params = MlpParams::new(vec![Layer::new(w, b.to_vec())?], Activation::Tanh)?;
    VelocityModel::from_params(params, d, 0)
}

fn identity_field() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut detail = Vec::new();
    let mut ok = true;
    for d in [1usize, 4] {
        let model = affine_field(&Matrix::identity(d), &vec![0.0; d])?;
        let x0 = normals(5000, d, &mut rng);
        let mut x1 = x0.clone();
        x1.map_inplace(|v| v * std::f64::consts::E);
        let est = fmdoe_estimate(&model, &[CouplingBatch::new(x0, x1, None)?], &mut rng)?;
        ok &= (est.value_nats - d as f64).abs() <= 3.0 * est.stderr_nats + 1e-12;
        detail.push(format!("d={d}: {:.6}±{:.2e}", est.value_nats, est.stderr_nats));
    }
    // entropy gap of N(0,1) -> N(0,e²) by quadrature
    let e = std::f64::consts::E;
    let dens = |s: f64| move |x: f64| (-0.5 * x * x / (s * s)).exp() / (s * (2.0 * std::f64::consts::PI).sqrt());
    let gap = quad_entropy_1d(dens(e), (-30.0, 30.0), 20_001)? - quad_entropy_1d(dens(1.0), (-12.0, 12.0), 20_001)?;
    ok &= (gap - 1.0).abs() < 1e-6;
    detail.push(format!("quadrature gap {gap:.9}"));
    Ok((ok, detail.join(", ")))
}

fn gradients() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for _ in 0..5 {
        let mut p = MlpParams::init(&[3, 8, 2], Activation::Tanh, &mut rng)?;
        let x = normals(6, 3, &mut rng);
        let y = normals(6, 2, &mut rng);
        let (_, g) = fm_loss_and_grads(&p, &x, &y)?;
        let base = p.flat();
        for (i, gi) in g.flat().into_iter().enumerate() {
            let mut v = base.clone();
            v[i] = base[i] + h;
            p.set_flat(&v)?;
            let up = fm_loss_and_grads(&p, &x, &y)?.0;
            v[i] = base[i] - h;
            p.set_flat(&v)?;
            let down = fm_loss_and_grads(&p, &x, &y)?.0;
            let fd = (up - down) / (2.0 * h);
            worst = worst.max((gi - fd).abs() / gi.abs().max(fd.abs()).max(1e-6));
        }
        p.set_flat(&base)?;
    }
    Ok((worst < 1e-5, format!("max relative error {worst:.2e}")))
}

fn divergences() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut max_gap: f64 = 0.0;
    let mut worst_z: f64 = 0.0;
    for _ in 0..10 {
        let p = MlpParams::init(&[4, 16, 3], Activation::Tanh, &mut rng)?;
        let x = normals(1, 4, &mut rng);
        let exact = divergence_exact(&p, &x, 3)?[0];
        let basis = divergence_basis_probes(&p, &x, 3)?[0];
        max_gap = max_gap.max((exact - basis).abs());
        let rep = x.select_rows(&[0; 4000]);
        let h = divergence_hutchinson(&p, &rep, 3, 1, &mut rng)?;
        let n = h.len() as f64;
        let mean = h.iter().sum::<f64>() / n;
        let sd = (h.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        if sd > 0.0 {
            worst_z = worst_z.max((mean - exact).abs() / (sd / n.sqrt()));
        }
    }
    Ok((
        max_gap < 1e-12 && worst_z < 3.0,
        format!("exact vs basis {max_gap:.1e}, worst Hutchinson z {worst_z:.2}"),
    ))
}

fn bounds() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let path = GaussianPathSpec::independent_pair(1, (0.0, 1.0), (0.0, std::f64::consts::E), 5000, &mut rng)?;
    let mut held = 0;
    for _ in 0..20 {
        let p = MlpParams::init(&[2, 8, 1], Activation::Tanh, &mut rng)?;
        let model = VelocityModel::from_params(p, 1, 0)?;
        held += bound_check(&path, &model, 2000, &mut rng)?.holds() as usize;
    }
    let mut corollary = 0;
    for _ in 0..10 {
        let a = (rng.random_range(-2.0..2.0), rng.random_range(0.3..3.0));
        let b = (rng.random_range(-2.0..2.0), rng.random_range(0.3..3.0));
        corollary += gaussian_corollary_check(a, b, 2000, &mut rng)?.holds() as usize;
    }
    Ok((
        held == 20 && corollary == 10,
        format!("field bound {held}/20, corollary {corollary}/10"),
    ))
}

fn ksg() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let n = 10_000;
    let u = Matrix::from_fn(n, 1, |_, _| rng.random::<f64>());
    let v = Matrix::from_fn(n, 1, |_, _| rng.random::<f64>());
    let null = ksg_estimate(&u, &v, 5)?;
    let spec = DatasetSpec::new(Family::CorrelatedNormal, 1, 1, crate::benchdist::gaussian_pair_mi(0.5), 0)?;
    let joint = spec.sample(n, &mut rng)?;
    let dep = ksg_estimate(&joint.columns(0..1)?, &joint.columns(1..2)?, 5)?;
    let truth = spec.ground_truth_mi();
    Ok((
        null.abs() < 0.05 && (dep - truth).abs() < 0.05,
        format!("null {null:.4}, rho=0.5 {dep:.4} (truth {truth:.5})"),
    ))
}

fn quadrature() -> Result<(bool, String)> {
    let u = quad_entropy_1d(|_| 1.0, (0.0, 1.0), 101)?;
    let g = quad_entropy_1d(
        |x| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt(),
        (-10.0, 10.0),
        10_000,
    )?;
    let tri = quad_entropy_1d(|z| if z <= 1.0 { z } else { 2.0 - z }, (0.0, 2.0), 10_001)?;
    let ok = u.abs() < 1e-12 && (g - gaussian_entropy(1.0)).abs() < 1e-6 && (tri - 0.5).abs() < 1e-6;
    Ok((ok, format!("uniform {u:.2e}, normal {g:.8}, triangular {tri:.8}")))
}

fn ground_truth() -> Result<(bool, String)> {
    let mut worst: f64 = 0.0;
    for family in Family::ALL {
        for dim in [1, 3, 8] {
            for per_pair in [0.6, 1.0, 2.5] {
                let target = per_pair * dim as f64;
                let spec = DatasetSpec::new(family, dim, dim, target, 0)?;
                worst = worst.max((ground_truth_mi(&spec) - target).abs());
            }
        }
    }
    Ok((worst < 1e-9, format!("max round-trip error {worst:.1e}")))
}

fn forward_smoke() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let p = MlpParams::init(&[3, 4, 2], Activation::Tanh, &mut rng)?;
    let out = mlp_forward(&p, &normals(3, 3, &mut rng))?;
    Ok((out.shape() == (3, 2), "shape ok".into()))
}

/// Run every check, in a fixed order.
pub fn run_selftest() -> Vec<CheckOutcome> {
    vec![
        outcome("forward pass", forward_smoke()),
        outcome("identity field entropy gap", identity_field()),
        outcome("loss gradients vs finite differences", gradients()),
        outcome("divergence: exact, basis, Hutchinson", divergences()),
        outcome("score/field bounds", bounds()),
        outcome("KSG oracle", ksg()),
        outcome("quadrature entropies", quadrature()),
        outcome("benchmark ground truth", ground_truth()),
    ]
}
