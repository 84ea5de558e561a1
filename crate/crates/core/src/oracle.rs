//! Independent cross-checks for the flow-based estimators.
//!
//! * [`ksg_estimate`]: Kraskov–Stögbauer–Grassberger k-NN mutual
//!   information (variant 1, max-norm neighbourhoods).
//! * [`quad_entropy_1d`]: differential entropy of a 1-D density by
//!   composite trapezoid quadrature.
//! * [`bound_check`] and [`gaussian_corollary_check`]: numerical checks of
//!   the score/field inequality `|E div ε| ≤ L·√(E‖ε‖²)` on Gaussian paths.
//!
//! The score bound used here is the largest score norm seen on a sample,
//! not a global Lipschitz constant (which does not exist for Gaussians on
//! unbounded support). These are sanity harnesses, not proofs.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use rayon::prelude::*;
use statrs::function::gamma::digamma;

use crate::diffkernel::Matrix;
use crate::error::{check_dim, Error, Result};
use crate::estimators::VelocityModel;

/// Tolerance on the trapezoid mass of a density passed to
/// [`quad_entropy_1d`].
pub const NORMALIZATION_TOL: f64 = 1e-6;

fn max_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (p, q)| f64::max(m, (p - q).abs()))
}

#[derive(PartialEq, PartialOrd)]
struct Dist(f64);

impl Eq for Dist {}

impl Ord for Dist {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Points sorted by their first coordinate, for pruned neighbour sweeps.
struct SortedPoints<'a> {
    m: &'a Matrix,
    order: Vec<usize>,
    rank: Vec<usize>,
}

impl<'a> SortedPoints<'a> {
    fn new(m: &'a Matrix) -> Self {
        let mut order: Vec<usize> = (0..m.rows()).collect();
        order.sort_by(|&a, &b| m.get(a, 0).total_cmp(&m.get(b, 0)).then(a.cmp(&b)));
        let mut rank = vec![0; order.len()];
        for (r, &i) in order.iter().enumerate() {
            rank[i] = r;
        }
        Self { m, order, rank }
    }

    /// Visit points other than `i` outward from `i` in sorted order. The
    /// visitor receives the index and returns the current pruning radius;
    /// a direction stops once the key gap reaches it.
    fn sweep(&self, i: usize, mut visit: impl FnMut(usize) -> f64) {
        let key = self.m.get(i, 0);
        let pos = self.rank[i];
        let n = self.order.len();
        let mut radius = f64::INFINITY;
        let (mut lo, mut hi) = (pos, pos + 1);
        let (mut lo_open, mut hi_open) = (pos > 0, hi < n);
        while lo_open || hi_open {
            let go_low = match (lo_open, hi_open) {
                (true, true) => {
                    key - self.m.get(self.order[lo - 1], 0) <= self.m.get(self.order[hi], 0) - key
                }
                (l, _) => l,
            };
            let j = if go_low {
                lo -= 1;
                self.order[lo]
            } else {
                hi += 1;
                self.order[hi - 1]
            };
            if (self.m.get(j, 0) - key).abs() > radius {
                if go_low {
                    lo_open = false;
                } else {
                    hi_open = false;
                }
                continue;
            }
            radius = visit(j);
            lo_open = lo_open && lo > 0;
            hi_open = hi_open && hi < n;
        }
    }

    /// Number of points `j ≠ i` with max-norm distance strictly below `eps`.
    fn count_within(&self, i: usize, eps: f64) -> usize {
        let xi = self.m.row(i);
        let mut count = 0;
        self.sweep(i, |j| {
            if max_dist(xi, self.m.row(j)) < eps {
                count += 1;
            }
            eps
        });
        count
    }
}

/// KSG mutual information (variant 1), in nats.
///
/// `ε_i` is the max-norm distance from row `i` to its k-th neighbour in the
/// joint space; `n_x`, `n_y` count marginal neighbours strictly inside
/// `ε_i`. The estimate is `ψ(k) + ψ(N) − ⟨ψ(n_x+1) + ψ(n_y+1)⟩`.
///
/// A row whose k-th neighbour distance is zero, or whose k-th neighbour is
/// equally far in both marginals (points on a diagonal copy), is rejected
/// as degenerate.
pub fn ksg_estimate(x: &Matrix, y: &Matrix, k: usize) -> Result<f64> {
    check_dim("KSG row count", x.rows(), y.rows())?;
    let n = x.rows();
    if k == 0 || k >= n {
        return Err(Error::Validation(format!(
            "KSG needs 1 <= k < N, got k={k}, N={n}"
        )));
    }
    if x.cols() == 0 || y.cols() == 0 {
        return Err(Error::Validation("KSG needs non-empty x and y blocks".into()));
    }
    x.check_finite("KSG x")?;
    y.check_finite("KSG y")?;
    let joint = Matrix::hcat(&[x, y])?;
    let sj = SortedPoints::new(&joint);
    let sx = SortedPoints::new(x);
    let sy = SortedPoints::new(y);

    let terms: Vec<Result<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let zi = joint.row(i);
            let mut heap: BinaryHeap<(Dist, usize)> = BinaryHeap::with_capacity(k + 1);
            sj.sweep(i, |j| {
                let d = max_dist(zi, joint.row(j));
                if heap.len() < k {
                    heap.push((Dist(d), j));
                } else if d < heap.peek().map_or(f64::INFINITY, |h| h.0 .0) {
                    heap.pop();
                    heap.push((Dist(d), j));
                }
                if heap.len() < k {
                    f64::INFINITY
                } else {
                    heap.peek().map_or(f64::INFINITY, |h| h.0 .0)
                }
            });
            let (Dist(eps), jk) = heap.pop().expect("k < N guarantees k neighbours");
            if eps == 0.0 {
                return Err(Error::DegenerateSample {
                    row: i,
                    reason: "zero k-NN distance (duplicate points)",
                });
            }
            let dx = max_dist(x.row(i), x.row(jk));
            let dy = max_dist(y.row(i), y.row(jk));
            if dx == eps && dy == eps {
                return Err(Error::DegenerateSample {
                    row: i,
                    reason: "k-th neighbour distance tied in both marginals",
                });
            }
            let nx = sx.count_within(i, eps);
            let ny = sy.count_within(i, eps);
            Ok(digamma(nx as f64 + 1.0) + digamma(ny as f64 + 1.0))
        })
        .collect();

    let mut sum = 0.0;
    for t in terms {
        sum += t?;
    }
    Ok(digamma(k as f64) + digamma(n as f64) - sum / n as f64)
}

/// Composite trapezoid sum of equispaced samples with spacing `h`.
fn trapezoid(values: impl ExactSizeIterator<Item = f64>, h: f64) -> f64 {
    let last = values.len() - 1;
    values
        .enumerate()
        .map(|(i, v)| if i == 0 || i == last { 0.5 * v } else { v })
        .sum::<f64>()
        * h
}

/// `−∫ p ln p` over `support` by the composite trapezoid rule on `n_nodes`
/// equispaced nodes (endpoints included).
///
/// The density must integrate to 1 within [`NORMALIZATION_TOL`] under the
/// same rule, otherwise [`Error::Normalization`] is returned.
pub fn quad_entropy_1d(
    density: impl Fn(f64) -> f64,
    support: (f64, f64),
    n_nodes: usize,
) -> Result<f64> {
    let (a, b) = support;
    if !(a.is_finite() && b.is_finite() && a < b) {
        return Err(Error::Validation(format!("invalid support [{a}, {b}]")));
    }
    if n_nodes < 2 {
        return Err(Error::Validation("quadrature needs at least 2 nodes".into()));
    }
    let h = (b - a) / (n_nodes - 1) as f64;
    let mut values = Vec::with_capacity(n_nodes);
    for i in 0..n_nodes {
        let p = density(a + i as f64 * h);
        if !p.is_finite() || p < 0.0 {
            return Err(Error::Validation(format!(
                "density value {p} at node {i} is not a finite non-negative number"
            )));
        }
        values.push(p);
    }
    let mass = trapezoid(values.iter().copied(), h);
    if (mass - 1.0).abs() > NORMALIZATION_TOL {
        return Err(Error::Normalization { mass });
    }
    let plogp = values.iter().map(|&p| if p > 0.0 { p * p.ln() } else { 0.0 });
    Ok(-trapezoid(plogp, h))
}

/// `½ ln(2πe σ²)`
pub fn gaussian_entropy(sigma: f64) -> f64 {
    0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E * sigma * sigma).ln()
}

type TimeFn = Box<dyn Fn(f64) -> f64 + Send + Sync>;

/// Isotropic Gaussian path `X_t = mean_t(t)·1 + scale_t(t)·Z`, `Z ~ N(0, I)`,
/// with an empirical score bound.
pub struct GaussianPathSpec {
    dim: usize,
    mean_t: TimeFn,
    scale_t: TimeFn,
    score_bound_emp: f64,
}

impl std::fmt::Debug for GaussianPathSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GaussianPathSpec")
            .field("dim", &self.dim)
            .field("score_bound_emp", &self.score_bound_emp)
            .finish_non_exhaustive()
    }
}

/// A draw from a Gaussian path with its analytic scores.
pub struct PathSample {
    pub x: Matrix,
    pub t: Vec<f64>,
    pub score: Matrix,
}

impl GaussianPathSpec {
    /// `scale_t` is checked to be finite and positive on a grid over
    /// `[0, 1]`; `score_bound_emp` must be finite and non-negative.
    pub fn new(
        dim: usize,
        mean_t: impl Fn(f64) -> f64 + Send + Sync + 'static,
        scale_t: impl Fn(f64) -> f64 + Send + Sync + 'static,
        score_bound_emp: f64,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Validation("path dimension must be positive".into()));
        }
        for i in 0..=100 {
            let t = i as f64 / 100.0;
            let s = scale_t(t);
            if !(s.is_finite() && s > 0.0) || !mean_t(t).is_finite() {
                return Err(Error::Validation(format!(
                    "path moments invalid at t={t}: scale {s}"
                )));
            }
        }
        if !(score_bound_emp.is_finite() && score_bound_emp >= 0.0) {
            return Err(Error::Validation(format!(
                "score bound {score_bound_emp} must be finite and non-negative"
            )));
        }
        Ok(Self {
            dim,
            mean_t: Box::new(mean_t),
            scale_t: Box::new(scale_t),
            score_bound_emp,
        })
    }

    /// Like [`GaussianPathSpec::new`], with the score bound set to the
    /// largest score norm over `n_samples` path draws.
    pub fn calibrated<R: Rng + ?Sized>(
        dim: usize,
        mean_t: impl Fn(f64) -> f64 + Send + Sync + 'static,
        scale_t: impl Fn(f64) -> f64 + Send + Sync + 'static,
        n_samples: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let mut path = Self::new(dim, mean_t, scale_t, 0.0)?;
        let s = path.sample(n_samples, rng)?;
        path.score_bound_emp = s
            .score
            .iter_rows()
            .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0, f64::max);
        Ok(path)
    }

    /// Path of the monotone coupling between `N(μ0, σ0²)` and `N(μ1, σ1²)`
    /// in every coordinate: mean and scale interpolate linearly.
    pub fn monotone_pair<R: Rng + ?Sized>(
        dim: usize,
        (mu0, s0): (f64, f64),
        (mu1, s1): (f64, f64),
        n_samples: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Self::calibrated(
            dim,
            move |t| (1.0 - t) * mu0 + t * mu1,
            move |t| (1.0 - t) * s0 + t * s1,
            n_samples,
            rng,
        )
    }

    /// Path of the independent coupling between the same endpoints:
    /// `scale_t² = (1−t)²σ0² + t²σ1²`.
    pub fn independent_pair<R: Rng + ?Sized>(
        dim: usize,
        (mu0, s0): (f64, f64),
        (mu1, s1): (f64, f64),
        n_samples: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Self::calibrated(
            dim,
            move |t| (1.0 - t) * mu0 + t * mu1,
            move |t| ((1.0 - t).powi(2) * s0 * s0 + t * t * s1 * s1).sqrt(),
            n_samples,
            rng,
        )
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn score_bound_emp(&self) -> f64 {
        self.score_bound_emp
    }

    pub fn mean_at(&self, t: f64) -> f64 {
        (self.mean_t)(t)
    }

    pub fn scale_at(&self, t: f64) -> f64 {
        (self.scale_t)(t)
    }

    /// `n` draws of `(t, X_t)` with `t ~ U[0, 1]`, plus scores
    /// `−(x − mean_t) / scale_t²`.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<PathSample> {
        let mut t = Vec::with_capacity(n);
        let mut x = Matrix::zeros(n, self.dim);
        let mut score = Matrix::zeros(n, self.dim);
        for r in 0..n {
            let tr: f64 = rng.random();
            let (m, s) = (self.mean_at(tr), self.scale_at(tr));
            if !(s.is_finite() && s > 0.0 && m.is_finite()) {
                return Err(Error::Validation(format!(
                    "path moments invalid at t={tr}: scale {s}"
                )));
            }
            for c in 0..self.dim {
                let z: f64 = rng.sample(StandardNormal);
                x.set(r, c, m + s * z);
                score.set(r, c, -z / s);
            }
            t.push(tr);
        }
        Ok(PathSample { x, t, score })
    }
}

/// A time-dependent vector field on `R^d` with a computable divergence.
pub trait PathField {
    fn dim(&self) -> usize;
    fn velocity(&self, x: &Matrix, t: &[f64]) -> Result<Matrix>;
    fn divergence(&self, x: &Matrix, t: &[f64], rng: &mut dyn RngCore) -> Result<Vec<f64>>;
}

impl PathField for VelocityModel {
    fn dim(&self) -> usize {
        self.d_spatial
    }

    fn velocity(&self, x: &Matrix, t: &[f64]) -> Result<Matrix> {
        VelocityModel::velocity(self, x, None, t)
    }

    fn divergence(&self, x: &Matrix, t: &[f64], rng: &mut dyn RngCore) -> Result<Vec<f64>> {
        VelocityModel::divergence(self, x, None, t, rng)
    }
}

/// A field given by row-wise closures for its value and divergence.
pub struct AnalyticField<V, D> {
    dim: usize,
    value: V,
    div: D,
}

impl<V, D> AnalyticField<V, D>
where
    V: Fn(&[f64], f64) -> Vec<f64>,
    D: Fn(&[f64], f64) -> f64,
{
    pub fn new(dim: usize, value: V, div: D) -> Self {
        Self { dim, value, div }
    }
}

impl<V, D> PathField for AnalyticField<V, D>
where
    V: Fn(&[f64], f64) -> Vec<f64>,
    D: Fn(&[f64], f64) -> f64,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn velocity(&self, x: &Matrix, t: &[f64]) -> Result<Matrix> {
        check_dim("field input width", self.dim, x.cols())?;
        check_dim("field time count", x.rows(), t.len())?;
        let mut data = Vec::with_capacity(x.rows() * self.dim);
        for (r, tr) in x.iter_rows().zip(t) {
            let v = (self.value)(r, *tr);
            check_dim("field output width", self.dim, v.len())?;
            data.extend(v);
        }
        Matrix::new(x.rows(), self.dim, data)
    }

    fn divergence(&self, x: &Matrix, t: &[f64], _rng: &mut dyn RngCore) -> Result<Vec<f64>> {
        check_dim("field input width", self.dim, x.cols())?;
        check_dim("field time count", x.rows(), t.len())?;
        Ok(x.iter_rows().zip(t).map(|(r, tr)| (self.div)(r, *tr)).collect())
    }
}

/// Both sides of a checked inequality `lhs ≤ rhs`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundCheck {
    pub lhs: f64,
    pub rhs: f64,
}

impl BoundCheck {
    pub fn holds(&self) -> bool {
        self.lhs <= self.rhs
    }
}

/// `lhs = |mean div ε(X_T, T)|`, `rhs = L_emp · √(mean ‖ε(X_T, T)‖²)` over
/// `n_mc` path draws.
pub fn bound_check<R: RngCore>(
    path: &GaussianPathSpec,
    field: &dyn PathField,
    n_mc: usize,
    rng: &mut R,
) -> Result<BoundCheck> {
    check_dim("field dimension", path.dim(), field.dim())?;
    if n_mc == 0 {
        return Err(Error::Validation("bound check needs n_mc > 0".into()));
    }
    let s = path.sample(n_mc, rng)?;
    let v = field.velocity(&s.x, &s.t)?;
    v.check_finite("field value")?;
    let div = field.divergence(&s.x, &s.t, rng)?;
    if let Some(row) = div.iter().position(|d| !d.is_finite()) {
        return Err(Error::NonFinite {
            context: "field divergence",
            row,
            col: 0,
        });
    }
    let n = n_mc as f64;
    let mean_div = div.iter().sum::<f64>() / n;
    let mean_sq = v.as_slice().iter().map(|e| e * e).sum::<f64>() / n;
    Ok(BoundCheck {
        lhs: mean_div.abs(),
        rhs: (path.score_bound_emp().powi(2) * mean_sq).sqrt(),
    })
}

/// `|h(X1) − h(X0)| ≤ L·W2` for `X0 ~ N(μ0, σ0²)`, `X1 ~ N(μ1, σ1²)` in
/// one dimension, with analytic entropies and `W2`, and `L` the empirical
/// score bound over `n_mc` draws of the monotone (optimal) path.
pub fn gaussian_corollary_check<R: Rng + ?Sized>(
    (mu0, s0): (f64, f64),
    (mu1, s1): (f64, f64),
    n_mc: usize,
    rng: &mut R,
) -> Result<BoundCheck> {
    if !(s0 > 0.0 && s1 > 0.0) {
        return Err(Error::Validation("Gaussian scales must be positive".into()));
    }
    let path = GaussianPathSpec::monotone_pair(1, (mu0, s0), (mu1, s1), n_mc, rng)?;
    let gap = gaussian_entropy(s1) - gaussian_entropy(s0);
    let w2 = ((mu1 - mu0).powi(2) + (s1 - s0).powi(2)).sqrt();
    Ok(BoundCheck {
        lhs: gap.abs(),
        rhs: path.score_bound_emp() * w2,
    })
}
