//! Flow-matching training of a velocity network along the linear
//! interpolation path `x_t = (1 − t)·x0 + t·x1`.

use std::fmt::Write as _;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diffkernel::{fm_loss_and_grads, Activation, GradBuffer, Matrix, MlpParams};
use crate::error::{check_dim, Error, Result};
use crate::estimators::{Direction, VelocityModel};

/// Spatial widths at or below this use the exact divergence under
/// [`DivergenceMode::Auto`].
pub const AUTO_EXACT_MAX_DIM: usize = 64;
/// Probe count used by [`DivergenceMode::Auto`] above [`AUTO_EXACT_MAX_DIM`].
pub const AUTO_HUTCHINSON_PROBES: usize = 16;

/// Paired endpoint samples, optionally with a conditioning block.
#[derive(Clone, Debug, PartialEq)]
pub struct CouplingBatch {
    pub x0: Matrix,
    pub x1: Matrix,
    pub cond: Option<Matrix>,
}

impl CouplingBatch {
    pub fn new(x0: Matrix, x1: Matrix, cond: Option<Matrix>) -> Result<Self> {
        check_dim("coupling rows", x0.rows(), x1.rows())?;
        check_dim("coupling width", x0.cols(), x1.cols())?;
        if let Some(c) = &cond {
            check_dim("conditioning rows", x0.rows(), c.rows())?;
        }
        Ok(Self { x0, x1, cond })
    }

    pub fn len(&self) -> usize {
        self.x0.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.x0.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.x0.cols()
    }

    pub fn cond_dim(&self) -> usize {
        self.cond.as_ref().map_or(0, Matrix::cols)
    }

    /// Swap the endpoints, reversing the transport direction.
    pub fn reversed(self) -> Self {
        Self {
            x0: self.x1,
            x1: self.x0,
            cond: self.cond,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DivergenceMode {
    /// Exact for small spatial width, Hutchinson above it.
    Auto,
    Exact,
    Hutchinson { n_probes: usize },
}

impl DivergenceMode {
    pub fn resolve(self, d_spatial: usize) -> DivergenceMode {
        match self {
            DivergenceMode::Auto if d_spatial <= AUTO_EXACT_MAX_DIM => DivergenceMode::Exact,
            DivergenceMode::Auto => DivergenceMode::Hutchinson {
                n_probes: AUTO_HUTCHINSON_PROBES,
            },
            other => other,
        }
    }
}

/// Regression target of the flow-matching loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum TargetKind {
    /// `x1 − x0`, the velocity of the straight path through the pair.
    #[default]
    PairDifference,
    /// `x1 − x_t`, kept for comparison only: it equals `(1 − t)(x1 − x0)`.
    Literal,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub hidden_width: usize,
    pub hidden_depth: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub n_iters: usize,
    pub seed: u64,
    pub divergence_mode: DivergenceMode,
    pub target: TargetKind,
    /// When set, the loss trace is written here as `iter,loss` lines.
    pub trace_path: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden_width: 512,
            hidden_depth: 1,
            learning_rate: 1e-3,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 512,
            n_iters: 10_000,
            seed: 0,
            divergence_mode: DivergenceMode::Auto,
            target: TargetKind::PairDifference,
            trace_path: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Validation(msg));
        if self.hidden_width == 0 || self.hidden_depth == 0 || self.batch_size == 0 || self.n_iters == 0 {
            return fail("width, depth, batch size and iteration count must all be at least 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return fail(format!("weight decay must be non-negative, got {}", self.weight_decay));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return fail(format!("{name} must lie in (0, 1), got {b}"));
            }
        }
        if !(self.adam_eps > 0.0) {
            return fail(format!("adam_eps must be positive, got {}", self.adam_eps));
        }
        if let DivergenceMode::Hutchinson { n_probes: 0 } = self.divergence_mode {
            return fail("Hutchinson divergence needs at least one probe".into());
        }
        Ok(())
    }

    /// Layer boundaries `[d_in, hidden.., d_out]`.
    pub fn widths(&self, d_in: usize, d_out: usize) -> Vec<usize> {
        let mut w = vec![d_in];
        w.extend(std::iter::repeat_n(self.hidden_width, self.hidden_depth));
        w.push(d_out);
        w
    }
}

/// AdamW moment buffers.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl OptimizerState {
    pub fn new(params: &MlpParams) -> Self {
        let n = params.n_params();
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// `(1 − t)·x0 + t·x1`
pub fn sample_path(x0: &[f64], x1: &[f64], t: f64) -> Result<Vec<f64>> {
    check_dim("path endpoints", x0.len(), x1.len())?;
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Validation(format!("path time {t} outside [0, 1]")));
    }
    Ok(x0.iter().zip(x1).map(|(a, b)| (1.0 - t) * a + t * b).collect())
}

/// `x1 − x0`, the constant velocity of the straight path through the pair.
pub fn target_velocity(x0: &[f64], x1: &[f64]) -> Result<Vec<f64>> {
    check_dim("path endpoints", x0.len(), x1.len())?;
    Ok(x0.iter().zip(x1).map(|(a, b)| b - a).collect())
}

/// Row-wise path points for per-row times.
pub(crate) fn interpolate_rows(batch: &CouplingBatch, t: &[f64]) -> Matrix {
    Matrix::from_fn(batch.len(), batch.dim(), |n, j| {
        (1.0 - t[n]) * batch.x0.get(n, j) + t[n] * batch.x1.get(n, j)
    })
}

fn block_name(layer: usize, idx: usize, params: &MlpParams) -> String {
    let l = &params.layers()[layer];
    let n_w = l.weight.rows() * l.weight.cols();
    if idx < n_w {
        format!("layer {layer} weight")
    } else {
        format!("layer {layer} bias")
    }
}

/// One decoupled-weight-decay Adam update with bias correction.
pub fn adamw_step(
    params: &mut MlpParams,
    state: &mut OptimizerState,
    grads: &GradBuffer,
    cfg: &TrainConfig,
) -> Result<()> {
    let g = grads.flat();
    check_dim("gradient size", params.n_params(), g.len())?;
    check_dim("optimizer state size", params.n_params(), state.m.len())?;

    if let Some(bad) = g.iter().position(|v| !v.is_finite()) {
        let mut offset = bad;
        for (k, l) in params.layers().iter().enumerate() {
            let size = l.weight.rows() * l.weight.cols() + l.bias.len();
            if offset < size {
                return Err(Error::TrainingDiverged {
                    step: state.step + 1,
                    block: block_name(k, offset, params),
                });
            }
            offset -= size;
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let decay = 1.0 - cfg.learning_rate * cfg.weight_decay;

    let mut p = params.flat();
    for i in 0..p.len() {
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g[i];
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        p[i] = p[i] * decay - cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.adam_eps);
    }
    params.set_flat(&p)
}

/// A trained velocity network and its per-iteration training loss.
#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub model: VelocityModel,
    pub loss_trace: Vec<f64>,
}

/// Network input `[x | cond | t]`.
pub(crate) fn assemble_inputs(x: &Matrix, cond: Option<&Matrix>, t: &[f64]) -> Result<Matrix> {
    check_dim("time vector length", x.rows(), t.len())?;
    let t_col = Matrix::column(t)?;
    match cond {
        Some(c) => Matrix::hcat(&[x, c, &t_col]),
        None => Matrix::hcat(&[x, &t_col]),
    }
}

/// Fit a velocity network by flow matching.
///
/// Each iteration draws a fresh coupling batch from `sampler`, one time per
/// row from `U[0, 1]`, and regresses the network at `[x_t | cond | t]` onto
/// the configured target. All randomness, including the sampler's, flows
/// from a single generator seeded with `cfg.seed`.
pub fn train<F>(mut sampler: F, cfg: &TrainConfig) -> Result<TrainOutput>
where
    F: FnMut(usize, &mut ChaCha8Rng) -> Result<CouplingBatch>,
{
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut draw = |iter: usize, rng: &mut ChaCha8Rng| -> Result<CouplingBatch> {
        let b = sampler(cfg.batch_size, rng).map_err(|e| Error::Sampler {
            iter,
            source: Box::new(e),
        })?;
        if b.is_empty() {
            return Err(Error::Sampler {
                iter,
                source: Box::new(Error::Validation("sampler returned an empty batch".into())),
            });
        }
        Ok(b)
    };

    let first = draw(0, &mut rng)?;
    let d_spatial = first.dim();
    let d_cond = first.cond_dim();
    let d_in = d_spatial + d_cond + 1;
    let mut params = MlpParams::init(&cfg.widths(d_in, d_spatial), Activation::Tanh, &mut rng)?;
    let mut state = OptimizerState::new(&params);
    let mut loss_trace = Vec::with_capacity(cfg.n_iters);

    let mut batch = first;
    for iter in 0..cfg.n_iters {
        if iter > 0 {
            batch = draw(iter, &mut rng)?;
        }
        if batch.dim() != d_spatial || batch.cond_dim() != d_cond {
            return Err(Error::Sampler {
                iter,
                source: Box::new(Error::Validation(format!(
                    "batch shape changed from ({d_spatial}, {d_cond}) to ({}, {})",
                    batch.dim(),
                    batch.cond_dim()
                ))),
            });
        }
        let t: Vec<f64> = (0..batch.len()).map(|_| rng.random::<f64>()).collect();
        let xt = interpolate_rows(&batch, &t);
        let target = match cfg.target {
            TargetKind::PairDifference => Matrix::from_fn(batch.len(), d_spatial, |n, j| {
                batch.x1.get(n, j) - batch.x0.get(n, j)
            }),
            TargetKind::Literal => {
                Matrix::from_fn(batch.len(), d_spatial, |n, j| batch.x1.get(n, j) - xt.get(n, j))
            }
        };
        let inputs = assemble_inputs(&xt, batch.cond.as_ref(), &t)?;
        let (loss, grads) = fm_loss_and_grads(&params, &inputs, &target)?;
        adamw_step(&mut params, &mut state, &grads, cfg)?;
        loss_trace.push(loss);
    }

    if let Some(path) = &cfg.trace_path {
        let mut text = String::with_capacity(loss_trace.len() * 24);
        for (i, l) in loss_trace.iter().enumerate() {
            let _ = writeln!(text, "{i},{l}");
        }
        std::fs::write(path, text)?;
    }

    let model = VelocityModel::new(params, d_spatial, d_cond, Direction::Forward, cfg.clone())?;
    Ok(TrainOutput { model, loss_trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffkernel::Layer;

    fn scalar_params(v: f64) -> MlpParams {
        MlpParams::new(
            vec![Layer::new(Matrix::new(1, 1, vec![v]).unwrap(), vec![0.0]).unwrap()],
            Activation::Identity,
        )
        .unwrap()
    }

    fn scalar_grads(g: f64) -> GradBuffer {
        GradBuffer {
            layers: vec![Layer {
                weight: Matrix::new(1, 1, vec![g]).unwrap(),
                bias: vec![0.0],
            }],
        }
    }

    #[test]
    fn path_endpoints_and_midpoint() {
        let x0 = [1.0, -2.0];
        let x1 = [3.0, 4.0];
        assert_eq!(sample_path(&x0, &x1, 0.0).unwrap(), x0);
        assert_eq!(sample_path(&x0, &x1, 1.0).unwrap(), x1);
        assert_eq!(sample_path(&x0, &x1, 0.5).unwrap(), vec![2.0, 1.0]);
        assert_eq!(sample_path(&[0.0], &[2.0], 0.25).unwrap(), vec![0.5]);
    }

    #[test]
    fn path_rejects_out_of_range_time() {
        assert!(sample_path(&[0.0], &[1.0], 1.5).is_err());
        assert!(sample_path(&[0.0], &[1.0], -0.1).is_err());
        assert!(sample_path(&[0.0], &[1.0, 2.0], 0.5).is_err());
    }

    #[test]
    fn target_velocity_examples() {
        assert_eq!(target_velocity(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), vec![0.0, 0.0]);
        assert_eq!(target_velocity(&[0.0, 0.0], &[2.0, -1.0]).unwrap(), vec![2.0, -1.0]);
    }

    #[test]
    fn zero_grad_zero_decay_is_fixed_point() {
        let mut p = scalar_params(0.7);
        let mut s = OptimizerState::new(&p);
        let cfg = TrainConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        adamw_step(&mut p, &mut s, &scalar_grads(0.0), &cfg).unwrap();
        assert_eq!(p.flat()[0], 0.7);
        assert_eq!(s.step(), 1);
    }

    #[test]
    fn zero_grad_decay_scales_parameters() {
        let mut p = scalar_params(2.0);
        let mut s = OptimizerState::new(&p);
        let cfg = TrainConfig {
            weight_decay: 0.1,
            learning_rate: 0.01,
            ..Default::default()
        };
        adamw_step(&mut p, &mut s, &scalar_grads(0.0), &cfg).unwrap();
        assert_eq!(p.flat()[0], 2.0 * (1.0 - 0.01 * 0.1));
    }

    #[test]
    fn first_step_matches_hand_computation() {
        // m = 0.1, v = 0.001; bias corrected m̂ = 1, v̂ = 1
        // p ← p − lr · 1 / (1 + ε)
        let cfg = TrainConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut p = scalar_params(0.5);
        let mut s = OptimizerState::new(&p);
        adamw_step(&mut p, &mut s, &scalar_grads(1.0), &cfg).unwrap();
        let m_hat = (0.1_f64) / (1.0 - 0.9);
        let v_hat = (1.0 - 0.999_f64) / (1.0 - 0.999);
        let expect = 0.5 - 1e-3 * m_hat / (v_hat.sqrt() + 1e-8);
        assert!((p.flat()[0] - expect).abs() < 1e-15);
        assert!((p.flat()[0] - (0.5 - 1e-3 / (1.0 + 1e-8))).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_names_block() {
        let mut p = scalar_params(1.0);
        let mut s = OptimizerState::new(&p);
        let mut g = scalar_grads(0.0);
        g.layers[0].bias[0] = f64::NAN;
        let err = adamw_step(&mut p, &mut s, &g, &TrainConfig::default()).unwrap_err();
        match err {
            Error::TrainingDiverged { block, step } => {
                assert_eq!(block, "layer 0 bias");
                assert_eq!(step, 1);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(p.flat()[0], 1.0);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            learning_rate: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            divergence_mode: DivergenceMode::Hutchinson { n_probes: 0 },
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert_eq!(TrainConfig::default().widths(3, 2), vec![3, 512, 2]);
    }

    #[test]
    fn auto_mode_switches_at_threshold() {
        assert_eq!(DivergenceMode::Auto.resolve(64), DivergenceMode::Exact);
        assert_eq!(
            DivergenceMode::Auto.resolve(65),
            DivergenceMode::Hutchinson { n_probes: 16 }
        );
    }

    #[test]
    fn sampler_failure_is_wrapped_with_iteration() {
        let cfg = TrainConfig {
            n_iters: 5,
            hidden_width: 4,
            batch_size: 3,
            ..Default::default()
        };
        let mut calls = 0;
        let sampler = |n: usize, _: &mut ChaCha8Rng| {
            calls += 1;
            if calls > 2 {
                return Err(Error::Validation("pool exhausted".into()));
            }
            CouplingBatch::new(Matrix::zeros(n, 1), Matrix::zeros(n, 1), None)
        };
        match train(sampler, &cfg) {
            Err(Error::Sampler { iter: 2, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }
}
