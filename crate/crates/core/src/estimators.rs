//! Simulation-free estimation of entropy differences and mutual information
//! from a learned velocity field.
//!
//! For a field transporting `P0` into `P1` along the linear path, the
//! entropy gap `h(X1) − h(X0)` equals the expected divergence of the field
//! at a uniformly random time. Mutual information follows by transporting
//! the product of marginals into the joint (jFMMI), or the marginal of `X`
//! into its conditional given `Y` (cFMMI).

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::diffkernel::{divergence_exact, divergence_hutchinson, mlp_forward, Matrix, MlpParams};
use crate::error::{check_dim, Error, Result};
use crate::flowmatch::{
    assemble_inputs, interpolate_rows, train, CouplingBatch, DivergenceMode, TrainConfig,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    /// Product of marginals (or marginal) towards the joint (or conditional).
    Forward,
    /// Joint towards the product of marginals.
    Reverse,
}

/// Which block the conditional estimator conditions on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConditionOn {
    Y,
    X,
}

/// A velocity network `v(x, cond, t)` with its training configuration.
#[derive(Clone, Debug)]
pub struct VelocityModel {
    pub params: MlpParams,
    pub d_spatial: usize,
    pub d_cond: usize,
    pub direction: Direction,
    pub config: TrainConfig,
}

impl VelocityModel {
    pub fn new(
        params: MlpParams,
        d_spatial: usize,
        d_cond: usize,
        direction: Direction,
        config: TrainConfig,
    ) -> Result<Self> {
        check_dim("velocity output width", d_spatial, params.d_out())?;
        check_dim("velocity input width", d_spatial + d_cond + 1, params.d_in())?;
        Ok(Self {
            params,
            d_spatial,
            d_cond,
            direction,
            config,
        })
    }

    /// Wrap raw parameters with default metadata, e.g. for analytic fields.
    pub fn from_params(params: MlpParams, d_spatial: usize, d_cond: usize) -> Result<Self> {
        Self::new(params, d_spatial, d_cond, Direction::Forward, TrainConfig::default())
    }

    fn inputs(&self, x: &Matrix, cond: Option<&Matrix>, t: &[f64]) -> Result<Matrix> {
        check_dim("spatial width", self.d_spatial, x.cols())?;
        match (cond, self.d_cond) {
            (None, 0) => {}
            (Some(c), d) => check_dim("conditioning width", d, c.cols())?,
            (None, d) => {
                return Err(Error::Validation(format!(
                    "model expects a conditioning block of width {d}"
                )))
            }
        }
        assemble_inputs(x, cond, t)
    }

    pub fn velocity(&self, x: &Matrix, cond: Option<&Matrix>, t: &[f64]) -> Result<Matrix> {
        mlp_forward(&self.params, &self.inputs(x, cond, t)?)
    }

    /// Spatial divergence per row, using the configured divergence mode.
    pub fn divergence<R: Rng + ?Sized>(
        &self,
        x: &Matrix,
        cond: Option<&Matrix>,
        t: &[f64],
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        let inputs = self.inputs(x, cond, t)?;
        match self.config.divergence_mode.resolve(self.d_spatial) {
            DivergenceMode::Hutchinson { n_probes } => {
                divergence_hutchinson(&self.params, &inputs, self.d_spatial, n_probes, rng)
            }
            _ => divergence_exact(&self.params, &inputs, self.d_spatial),
        }
    }
}

/// Order and value of the path-norm surrogate `(1/N Σ‖v‖_p^p)^{1/p}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WpSurrogate {
    pub p: f64,
    pub value: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EstimateResult {
    pub value_nats: f64,
    /// Sample standard deviation of the per-row terms over `√n_eval`.
    pub stderr_nats: f64,
    pub n_eval: usize,
    pub wp_surrogate: Option<WpSurrogate>,
}

impl EstimateResult {
    pub fn from_terms(terms: &[f64]) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::Validation("no evaluation samples".into()));
        }
        let n = terms.len() as f64;
        let mean = terms.iter().sum::<f64>() / n;
        let stderr = if terms.len() > 1 {
            let var = terms.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            (var / n).sqrt()
        } else {
            0.0
        };
        Ok(Self {
            value_nats: mean,
            stderr_nats: stderr,
            n_eval: terms.len(),
            wp_surrogate: None,
        })
    }

    fn negated(self) -> Self {
        Self {
            value_nats: -self.value_nats,
            ..self
        }
    }
}

fn check_split(joint: &Matrix, dx: usize) -> Result<()> {
    if dx == 0 || dx >= joint.cols() {
        return Err(Error::Validation(format!(
            "x-block width {dx} out of range for {} columns",
            joint.cols()
        )));
    }
    if joint.rows() == 0 {
        return Err(Error::Validation("empty sample".into()));
    }
    Ok(())
}

fn permutation<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx
}

/// Turn joint samples into a (product → joint) coupling: `x1` is the joint
/// sample, `x0` keeps the x-block and takes a permuted y-block.
pub fn permute_product<R: Rng + ?Sized>(joint: &Matrix, dx: usize, rng: &mut R) -> Result<CouplingBatch> {
    check_split(joint, dx)?;
    let perm = permutation(joint.rows(), rng);
    let x0 = Matrix::from_fn(joint.rows(), joint.cols(), |n, j| {
        if j < dx {
            joint.get(n, j)
        } else {
            joint.get(perm[n], j)
        }
    });
    CouplingBatch::new(x0, joint.clone(), None)
}

/// Conditional coupling: `x1` is the x-block, `cond` the matching y-block,
/// `x0` a permuted x-block (marginal samples attached to each y).
pub fn shuffle_conditional<R: Rng + ?Sized>(joint: &Matrix, dx: usize, rng: &mut R) -> Result<CouplingBatch> {
    check_split(joint, dx)?;
    let x1 = joint.columns(0..dx)?;
    let cond = joint.columns(dx..joint.cols())?;
    let perm = permutation(joint.rows(), rng);
    let x0 = x1.select_rows(&perm);
    CouplingBatch::new(x0, x1, Some(cond))
}

fn check_batch(model: &VelocityModel, b: &CouplingBatch) -> Result<()> {
    check_dim("evaluation batch width", model.d_spatial, b.dim())?;
    check_dim("evaluation conditioning width", model.d_cond, b.cond_dim())
}

/// How evaluation times are drawn.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum TimeSampling {
    /// Independent `t ~ U[0, 1]` per row.
    #[default]
    Uniform,
    /// One draw per stratum `[k/N, (k+1)/N)`, strata assigned to rows by a
    /// random permutation. Every row is still marginally `U[0, 1]`.
    Stratified,
}

impl TimeSampling {
    pub fn draw<R: Rng + ?Sized>(self, n: usize, rng: &mut R) -> Vec<f64> {
        match self {
            TimeSampling::Uniform => (0..n).map(|_| rng.random::<f64>()).collect(),
            TimeSampling::Stratified => {
                let strata = permutation(n, rng);
                strata
                    .into_iter()
                    .map(|k| (k as f64 + rng.random::<f64>()) / n as f64)
                    .collect()
            }
        }
    }
}

/// Per-row divergence terms and, optionally, the mean p-th power of the
/// velocity p-norm (after scaling each coordinate by `scale`).
fn path_pass<R: Rng + ?Sized>(
    model: &VelocityModel,
    batches: &[CouplingBatch],
    times: TimeSampling,
    rng: &mut R,
    norm: Option<(f64, Option<&[f64]>)>,
) -> Result<(Vec<f64>, f64)> {
    let total: usize = batches.iter().map(CouplingBatch::len).sum();
    if total == 0 {
        return Err(Error::Validation("empty evaluation pool".into()));
    }
    let mut terms = Vec::with_capacity(total);
    let mut norm_acc = 0.0;
    for b in batches {
        check_batch(model, b)?;
        if b.is_empty() {
            continue;
        }
        let t = times.draw(b.len(), rng);
        let xt = interpolate_rows(b, &t);
        if norm.is_none() {
            terms.extend(model.divergence(&xt, b.cond.as_ref(), &t, rng)?);
        }
        if let Some((p, scale)) = norm {
            let v = model.velocity(&xt, b.cond.as_ref(), &t)?;
            for row in v.iter_rows() {
                norm_acc += row
                    .iter()
                    .enumerate()
                    .map(|(j, x)| (x * scale.map_or(1.0, |s| s[j])).abs().powf(p))
                    .sum::<f64>();
            }
        }
    }
    Ok((terms, norm_acc / total as f64))
}

/// Monte-Carlo estimate of `h(X1) − h(X0)`: the mean divergence of the
/// field at fresh `t ~ U[0, 1]` along each evaluation pair's path.
pub fn fmdoe_estimate<R: Rng + ?Sized>(
    model: &VelocityModel,
    eval_batches: &[CouplingBatch],
    rng: &mut R,
) -> Result<EstimateResult> {
    fmdoe_estimate_with(model, eval_batches, TimeSampling::Uniform, rng)
}

/// [`fmdoe_estimate`] with a chosen time-sampling scheme. The reported
/// stderr is always the i.i.d. formula, which is conservative under
/// stratification.
pub fn fmdoe_estimate_with<R: Rng + ?Sized>(
    model: &VelocityModel,
    eval_batches: &[CouplingBatch],
    times: TimeSampling,
    rng: &mut R,
) -> Result<EstimateResult> {
    let (terms, _) = path_pass(model, eval_batches, times, rng, None)?;
    EstimateResult::from_terms(&terms)
}

/// `(1/N Σ ‖v(x_t, t)‖_p^p)^{1/p}` along the evaluation paths.
pub fn wasserstein_surrogate<R: Rng + ?Sized>(
    model: &VelocityModel,
    eval_batches: &[CouplingBatch],
    p: f64,
    rng: &mut R,
) -> Result<f64> {
    scaled_surrogate(model, eval_batches, p, None, rng)
}

fn scaled_surrogate<R: Rng + ?Sized>(
    model: &VelocityModel,
    eval_batches: &[CouplingBatch],
    p: f64,
    scale: Option<&[f64]>,
    rng: &mut R,
) -> Result<f64> {
    if !(p >= 1.0 && p.is_finite()) {
        return Err(Error::Validation(format!("surrogate order must be >= 1, got {p}")));
    }
    let (_, mean_pow) = path_pass(model, eval_batches, TimeSampling::Uniform, rng, Some((p, scale)))?;
    Ok(mean_pow.powf(1.0 / p))
}

/// Settings shared by the mutual-information estimators.
#[derive(Clone, Debug, PartialEq)]
pub struct MiConfig {
    pub train: TrainConfig,
    /// Trailing rows of the sample held out for estimation.
    pub eval_size: usize,
    /// Order of the path-norm surrogate reported with the estimate.
    pub wp_order: f64,
    /// Standardise every column with training-pool statistics first.
    /// Per-coordinate affine maps leave mutual information unchanged.
    pub standardize: bool,
    pub time_sampling: TimeSampling,
}

impl Default for MiConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            eval_size: 10_000,
            wp_order: 2.0,
            standardize: true,
            time_sampling: TimeSampling::Stratified,
        }
    }
}

/// Everything produced by one estimator run.
#[derive(Clone, Debug)]
pub struct MiRun {
    /// Mutual information (sign already applied).
    pub estimate: EstimateResult,
    /// Raw entropy-gap estimate of the trained transport.
    pub fmdoe: EstimateResult,
    pub model: VelocityModel,
    pub loss_trace: Vec<f64>,
    /// Wall-clock seconds spent training and evaluating.
    pub train_seconds: f64,
    pub eval_seconds: f64,
}

struct Pools {
    train: Matrix,
    eval: Matrix,
    scale: Vec<f64>,
}

fn split_pools(joint: &Matrix, cfg: &MiConfig) -> Result<Pools> {
    joint.check_finite("joint sample")?;
    let needed = cfg.eval_size + 1;
    if cfg.eval_size == 0 || joint.rows() < needed {
        return Err(Error::InsufficientSamples {
            needed,
            available: joint.rows(),
        });
    }
    let n_train = joint.rows() - cfg.eval_size;
    let train_idx: Vec<usize> = (0..n_train).collect();
    let eval_idx: Vec<usize> = (n_train..joint.rows()).collect();
    let mut train = joint.select_rows(&train_idx);
    let mut eval = joint.select_rows(&eval_idx);
    let mut scale = vec![1.0; joint.cols()];
    if cfg.standardize {
        let n = n_train as f64;
        let mean = train.column_sums().into_iter().map(|s| s / n).collect::<Vec<_>>();
        for (j, s) in scale.iter_mut().enumerate() {
            let var = train.iter_rows().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n;
            if var > 0.0 {
                *s = var.sqrt();
            }
        }
        for m in [&mut train, &mut eval] {
            for r in 0..m.rows() {
                for (j, v) in m.row_mut(r).iter_mut().enumerate() {
                    *v = (*v - mean[j]) / scale[j];
                }
            }
        }
    }
    Ok(Pools { train, eval, scale })
}

fn pool_batch(pool: &Matrix, size: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let idx: Vec<usize> = (0..size).map(|_| rng.random_range(0..pool.rows())).collect();
    pool.select_rows(&idx)
}

fn finish<R: Rng + ?Sized>(
    model: &VelocityModel,
    eval: &CouplingBatch,
    cfg: &MiConfig,
    scale: &[f64],
    negate: bool,
    (loss_trace, train_seconds): (Vec<f64>, f64),
    rng: &mut R,
) -> Result<MiRun> {
    let started = Instant::now();
    let batches = std::slice::from_ref(eval);
    let mut fmdoe = fmdoe_estimate_with(model, batches, cfg.time_sampling, rng)?;
    let wp = scaled_surrogate(model, batches, cfg.wp_order, Some(scale), rng)?;
    fmdoe.wp_surrogate = Some(WpSurrogate {
        p: cfg.wp_order,
        value: wp,
    });
    let estimate = if negate { fmdoe.negated() } else { fmdoe };
    Ok(MiRun {
        estimate,
        fmdoe,
        model: model.clone(),
        loss_trace,
        train_seconds,
        eval_seconds: started.elapsed().as_secs_f64(),
    })
}

/// Joint-space estimator. Forward transports the product of marginals
/// into the joint and reports `−FMDoE`; reverse transports the joint into
/// the product and reports `+FMDoE`.
pub fn jfmmi<R: Rng + ?Sized>(
    joint_samples: &Matrix,
    dx: usize,
    cfg: &MiConfig,
    direction: Direction,
    rng: &mut R,
) -> Result<EstimateResult> {
    jfmmi_run(joint_samples, dx, cfg, direction, rng).map(|r| r.estimate)
}

pub fn jfmmi_run<R: Rng + ?Sized>(
    joint_samples: &Matrix,
    dx: usize,
    cfg: &MiConfig,
    direction: Direction,
    rng: &mut R,
) -> Result<MiRun> {
    check_split(joint_samples, dx)?;
    let pools = split_pools(joint_samples, cfg)?;
    let orient = |b: CouplingBatch| match direction {
        Direction::Forward => b,
        Direction::Reverse => b.reversed(),
    };
    let sampler = |n: usize, r: &mut ChaCha8Rng| {
        let sub = pool_batch(&pools.train, n, r);
        permute_product(&sub, dx, r).map(orient)
    };
    let started = Instant::now();
    let out = train(sampler, &cfg.train)?;
    let train_seconds = started.elapsed().as_secs_f64();
    let mut model = out.model;
    model.direction = direction;
    let eval = orient(permute_product(&pools.eval, dx, rng)?);
    finish(
        &model,
        &eval,
        cfg,
        &pools.scale,
        direction == Direction::Forward,
        (out.loss_trace, train_seconds),
        rng,
    )
}

/// Conditional estimator: transports the marginal of one block into its
/// conditional given the other and reports `−FMDoE`.
pub fn cfmmi<R: Rng + ?Sized>(
    joint_samples: &Matrix,
    dx: usize,
    condition_on: ConditionOn,
    cfg: &MiConfig,
    rng: &mut R,
) -> Result<EstimateResult> {
    cfmmi_run(joint_samples, dx, condition_on, cfg, rng).map(|r| r.estimate)
}

pub fn cfmmi_run<R: Rng + ?Sized>(
    joint_samples: &Matrix,
    dx: usize,
    condition_on: ConditionOn,
    cfg: &MiConfig,
    rng: &mut R,
) -> Result<MiRun> {
    check_split(joint_samples, dx)?;
    let (joint, d_moving) = match condition_on {
        ConditionOn::Y => (joint_samples.clone(), dx),
        ConditionOn::X => {
            let x = joint_samples.columns(0..dx)?;
            let y = joint_samples.columns(dx..joint_samples.cols())?;
            (Matrix::hcat(&[&y, &x])?, joint_samples.cols() - dx)
        }
    };
    let pools = split_pools(&joint, cfg)?;
    let sampler = |n: usize, r: &mut ChaCha8Rng| {
        let sub = pool_batch(&pools.train, n, r);
        shuffle_conditional(&sub, d_moving, r)
    };
    let started = Instant::now();
    let out = train(sampler, &cfg.train)?;
    let train_seconds = started.elapsed().as_secs_f64();
    let eval = shuffle_conditional(&pools.eval, d_moving, rng)?;
    finish(
        &out.model,
        &eval,
        cfg,
        &pools.scale[..d_moving],
        true,
        (out.loss_trace, train_seconds),
        rng,
    )
}

/// Integrate `dx/dt = v(x, cond, t)` from `t = 0` to `t = 1` with classical
/// fixed-step RK4. Diagnostic only; estimation never simulates the ODE.
pub fn ode_push(model: &VelocityModel, x0: &Matrix, cond: Option<&Matrix>, n_steps: usize) -> Result<Matrix> {
    if n_steps == 0 {
        return Err(Error::Validation("ODE integration needs at least one step".into()));
    }
    let h = 1.0 / n_steps as f64;
    let rows = x0.rows();
    let mut x = x0.clone();
    let axpy = |base: &Matrix, k: &Matrix, a: f64| {
        let mut out = base.clone();
        for (o, v) in out.as_mut_slice().iter_mut().zip(k.as_slice()) {
            *o += a * v;
        }
        out
    };
    for step in 0..n_steps {
        let t = step as f64 * h;
        let eval = |state: &Matrix, tt: f64| {
            model.velocity(state, cond, &vec![tt; rows]).map_err(|e| match e {
                Error::NonFinite { .. } => Error::Integration { step },
                other => other,
            })
        };
        let k1 = eval(&x, t)?;
        let k2 = eval(&axpy(&x, &k1, 0.5 * h), t + 0.5 * h)?;
        let k3 = eval(&axpy(&x, &k2, 0.5 * h), t + 0.5 * h)?;
        let k4 = eval(&axpy(&x, &k3, h), t + h)?;
        for i in 0..x.as_slice().len() {
            let incr = h / 6.0
                * (k1.as_slice()[i] + 2.0 * k2.as_slice()[i] + 2.0 * k3.as_slice()[i] + k4.as_slice()[i]);
            x.as_mut_slice()[i] += incr;
        }
        if x.check_finite("ODE state").is_err() {
            return Err(Error::Integration { step });
        }
    }
    Ok(x)
}
