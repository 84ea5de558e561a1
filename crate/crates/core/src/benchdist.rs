//! Synthetic benchmark distributions with closed-form mutual information.
//!
//! Mutual information is split equally across `min(dim_x, dim_y)`
//! coordinate pairs `(x_i, y_i)`; unpaired coordinates carry independent
//! noise. Per pair:
//!
//! | family | construction | I₁ (nats) |
//! |--------|--------------|-----------|
//! | `correlated_normal` | bivariate standard normal, correlation ρ | −½ ln(1 − ρ²) |
//! | `halfcube_normal` | `t ↦ sign(t)|t|^{3/2}` on each coordinate | same as normal |
//! | `correlated_uniform` | standard normal CDF on each coordinate | same as normal |
//! | `smoothed_uniform` | `X ~ U[0,1]`, `Y = X + ε·U`, `U ~ U[0,1]` | ε/2 − ln ε |

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::diffkernel::Matrix;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Family {
    CorrelatedNormal,
    HalfcubeNormal,
    CorrelatedUniform,
    SmoothedUniform,
}

impl Family {
    pub const ALL: [Family; 4] = [
        Family::CorrelatedNormal,
        Family::HalfcubeNormal,
        Family::CorrelatedUniform,
        Family::SmoothedUniform,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::CorrelatedNormal => "correlated_normal",
            Family::HalfcubeNormal => "halfcube_normal",
            Family::CorrelatedUniform => "correlated_uniform",
            Family::SmoothedUniform => "smoothed_uniform",
        }
    }

    fn gaussian_copula(self) -> bool {
        self != Family::SmoothedUniform
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::Validation(format!("unknown distribution family `{s}`")))
    }
}

/// Smallest per-pair information reachable by the smoothed-uniform family (ε = 1).
pub const SMOOTHED_UNIFORM_MIN_NATS: f64 = 0.5;

/// Per-pair dependence parameters.
#[derive(Clone, Debug, PartialEq)]
pub enum DerivedParams {
    /// Correlation of each Gaussian pair.
    Rho(Vec<f64>),
    /// Smoothing width of each pair.
    Epsilon(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSpec {
    pub family: Family,
    pub dim_x: usize,
    pub dim_y: usize,
    pub target_mi_nats: f64,
    pub params: DerivedParams,
    pub seed: u64,
}

/// `−½ ln(1 − ρ²)`
pub fn gaussian_pair_mi(rho: f64) -> f64 {
    -0.5 * (-rho * rho).ln_1p()
}

/// `ε/2 − ln ε`
pub fn smoothed_uniform_pair_mi(eps: f64) -> f64 {
    eps / 2.0 - eps.ln()
}

fn rho_for(i1: f64) -> f64 {
    (-(-2.0 * i1).exp_m1()).sqrt()
}

fn epsilon_for(i1: f64) -> Result<f64> {
    if i1 < SMOOTHED_UNIFORM_MIN_NATS {
        return Err(Error::Infeasible(format!(
            "smoothed_uniform needs at least {SMOOTHED_UNIFORM_MIN_NATS} nats per pair, got {i1}"
        )));
    }
    // ε/2 − ln ε decreases on (0, 1]; bisect in log space for small ε
    let (mut lo, mut hi) = (f64::MIN_POSITIVE.ln(), 0.0_f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if smoothed_uniform_pair_mi(mid.exp()) > i1 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    Ok((0.5 * (lo + hi)).exp())
}

/// Invert the per-pair formula after splitting `target_mi_nats` equally
/// across `dim` pairs.
pub fn solve_params(family: Family, dim: usize, target_mi_nats: f64) -> Result<DerivedParams> {
    if dim == 0 {
        return Err(Error::Validation("dimension must be at least 1".into()));
    }
    if !(target_mi_nats >= 0.0 && target_mi_nats.is_finite()) {
        return Err(Error::Validation(format!(
            "target MI must be finite and non-negative, got {target_mi_nats}"
        )));
    }
    let i1 = target_mi_nats / dim as f64;
    if family.gaussian_copula() {
        Ok(DerivedParams::Rho(vec![rho_for(i1); dim]))
    } else {
        Ok(DerivedParams::Epsilon(vec![epsilon_for(i1)?; dim]))
    }
}

/// `sign(t)·|t|^{3/2}`
pub fn halfcube(t: f64) -> f64 {
    t.signum() * t.abs().powf(1.5)
}

/// Inverse of [`halfcube`].
pub fn halfcube_inverse(s: f64) -> f64 {
    s.signum() * s.abs().powf(2.0 / 3.0)
}

impl DatasetSpec {
    pub fn new(family: Family, dim_x: usize, dim_y: usize, target_mi_nats: f64, seed: u64) -> Result<Self> {
        if dim_x == 0 || dim_y == 0 {
            return Err(Error::Validation("dimensions must be at least 1".into()));
        }
        let params = solve_params(family, dim_x.min(dim_y), target_mi_nats)?;
        Ok(Self {
            family,
            dim_x,
            dim_y,
            target_mi_nats,
            params,
            seed,
        })
    }

    pub fn n_pairs(&self) -> usize {
        self.dim_x.min(self.dim_y)
    }

    pub fn ground_truth_mi(&self) -> f64 {
        ground_truth_mi(self)
    }

    /// Draw `n` rows laid out as `[x | y]`.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Matrix> {
        sample(self, n, rng)
    }
}

/// Analytic mutual information implied by the derived parameters.
pub fn ground_truth_mi(spec: &DatasetSpec) -> f64 {
    match &spec.params {
        DerivedParams::Rho(r) => r.iter().map(|&p| gaussian_pair_mi(p)).sum(),
        DerivedParams::Epsilon(e) => e.iter().map(|&p| smoothed_uniform_pair_mi(p)).sum(),
    }
}

pub fn sample<R: Rng + ?Sized>(spec: &DatasetSpec, n: usize, rng: &mut R) -> Result<Matrix> {
    if n == 0 {
        return Err(Error::Validation("sample size must be at least 1".into()));
    }
    let (dx, dy) = (spec.dim_x, spec.dim_y);
    let pairs = spec.n_pairs();
    let mut out = Matrix::zeros(n, dx + dy);
    let std_normal = Normal::standard();
    let mut gauss = || -> f64 { StandardNormal.sample(rng) };

    match &spec.params {
        DerivedParams::Rho(rho) => {
            for r in 0..n {
                let row = out.row_mut(r);
                for v in row.iter_mut().take(dx) {
                    *v = gauss();
                }
                for j in 0..dy {
                    let z = gauss();
                    row[dx + j] = if j < pairs {
                        let p = rho[j];
                        p * row[j] + (1.0 - p * p).sqrt() * z
                    } else {
                        z
                    };
                }
                match spec.family {
                    Family::HalfcubeNormal => row.iter_mut().for_each(|v| *v = halfcube(*v)),
                    Family::CorrelatedUniform => row.iter_mut().for_each(|v| *v = std_normal.cdf(*v)),
                    _ => {}
                }
            }
        }
        DerivedParams::Epsilon(eps) => {
            for r in 0..n {
                let row = out.row_mut(r);
                for v in row.iter_mut().take(dx) {
                    *v = rng.random::<f64>();
                }
                for j in 0..dy {
                    let u = rng.random::<f64>();
                    row[dx + j] = if j < pairs { row[j] + eps[j] * u } else { u };
                }
            }
        }
    }
    Ok(out)
}
