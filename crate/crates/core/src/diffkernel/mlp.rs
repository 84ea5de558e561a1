//! A small fully connected network with hand-written derivatives.
//!
//! Three derivative routes are provided:
//! - reverse mode for the parameter gradient of the squared-error loss,
//! - stacked forward mode over the spatial basis for the exact divergence,
//! - one tangent pass per probe for Hutchinson trace estimates.

use rand::Rng;
use rand_distr::{Distribution, Uniform};

use super::matrix::Matrix;
use crate::error::{check_dim, Error, Result};

/// Rows processed at once by the stacked divergence pass.
const DIVERGENCE_CHUNK: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the activation output.
    #[inline]
    fn slope_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Identity => 1.0,
        }
    }
}

/// One affine map `x ↦ W x + b` with `W` stored as `[out × in]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn new(weight: Matrix, bias: Vec<f64>) -> Result<Self> {
        check_dim("layer bias length", weight.rows(), bias.len())?;
        if let Some(c) = bias.iter().position(|b| !b.is_finite()) {
            return Err(Error::NonFinite {
                context: "layer bias",
                row: 0,
                col: c,
            });
        }
        Ok(Self { weight, bias })
    }

    pub fn zeros(d_out: usize, d_in: usize) -> Self {
        Self {
            weight: Matrix::zeros(d_out, d_in),
            bias: vec![0.0; d_out],
        }
    }

    pub fn d_in(&self) -> usize {
        self.weight.cols()
    }

    pub fn d_out(&self) -> usize {
        self.weight.rows()
    }
}

/// Network parameters. The activation follows every layer but the last.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    layers: Vec<Layer>,
    activation: Activation,
}

/// Parameter-shaped container of loss derivatives.
#[derive(Clone, Debug, PartialEq)]
pub struct GradBuffer {
    pub layers: Vec<Layer>,
}

impl MlpParams {
    pub fn new(layers: Vec<Layer>, activation: Activation) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Validation("network needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            check_dim("adjacent layer widths", pair[0].d_out(), pair[1].d_in())?;
        }
        Ok(Self { layers, activation })
    }

    /// Random initialisation with `U(-1/√fan_in, 1/√fan_in)` weights and biases.
    /// `widths` lists every layer boundary: `[d_in, hidden.., d_out]`.
    pub fn init<R: Rng + ?Sized>(widths: &[usize], activation: Activation, rng: &mut R) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::Validation(format!("invalid layer widths {widths:?}")));
        }
        let layers = widths
            .windows(2)
            .map(|w| {
                let bound = 1.0 / (w[0] as f64).sqrt();
                let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
                let weight = Matrix::from_fn(w[1], w[0], |_, _| dist.sample(rng));
                let bias = (0..w[1]).map(|_| dist.sample(rng)).collect();
                Layer { weight, bias }
            })
            .collect();
        Self::new(layers, activation)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn d_in(&self) -> usize {
        self.layers[0].d_in()
    }

    pub fn d_out(&self) -> usize {
        self.layers[self.layers.len() - 1].d_out()
    }

    pub fn n_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.rows() * l.weight.cols() + l.bias.len())
            .sum()
    }

    pub fn zero_grads(&self) -> GradBuffer {
        GradBuffer {
            layers: self
                .layers
                .iter()
                .map(|l| Layer::zeros(l.d_out(), l.d_in()))
                .collect(),
        }
    }

    /// Flattened parameter values, layer by layer (weights then bias).
    pub fn flat(&self) -> Vec<f64> {
        flatten(&self.layers)
    }

    /// Overwrite parameters from a vector laid out as [`MlpParams::flat`].
    pub fn set_flat(&mut self, values: &[f64]) -> Result<()> {
        check_dim("flat parameter length", self.n_params(), values.len())?;
        let mut it = values.iter().copied();
        for l in &mut self.layers {
            for w in l.weight.as_mut_slice() {
                *w = it.next().unwrap_or_default();
            }
            for b in &mut l.bias {
                *b = it.next().unwrap_or_default();
            }
        }
        Ok(())
    }
}

impl GradBuffer {
    pub fn flat(&self) -> Vec<f64> {
        flatten(&self.layers)
    }
}

fn flatten(layers: &[Layer]) -> Vec<f64> {
    let mut out = Vec::new();
    for l in layers {
        out.extend_from_slice(l.weight.as_slice());
        out.extend_from_slice(&l.bias);
    }
    out
}

/// Post-activation outputs of every layer; `acts[0]` is the input.
struct Trace {
    acts: Vec<Matrix>,
}

impl Trace {
    fn output(&self) -> &Matrix {
        &self.acts[self.acts.len() - 1]
    }
}

fn validate_inputs(params: &MlpParams, inputs: &Matrix) -> Result<()> {
    check_dim("network input width", params.d_in(), inputs.cols())?;
    inputs.check_finite("network input")
}

fn forward_trace(params: &MlpParams, inputs: &Matrix) -> Result<Trace> {
    let n_layers = params.layers.len();
    let mut acts = Vec::with_capacity(n_layers + 1);
    acts.push(inputs.clone());
    for (k, layer) in params.layers.iter().enumerate() {
        let mut z = acts[k].matmul_nt(&layer.weight)?;
        z.add_row_vector(&layer.bias)?;
        if k + 1 < n_layers {
            let act = params.activation;
            z.map_inplace(|v| act.apply(v));
        }
        acts.push(z);
    }
    Ok(Trace { acts })
}

/// Evaluate the network on every input row.
pub fn mlp_forward(params: &MlpParams, inputs: &Matrix) -> Result<Matrix> {
    validate_inputs(params, inputs)?;
    Ok(forward_trace(params, inputs)?.acts.pop().expect("non-empty trace"))
}

/// Mean squared residual norm `1/N Σ‖f(xₙ) − yₙ‖²` and its exact gradient.
pub fn fm_loss_and_grads(
    params: &MlpParams,
    inputs: &Matrix,
    targets: &Matrix,
) -> Result<(f64, GradBuffer)> {
    validate_inputs(params, inputs)?;
    check_dim("target rows", inputs.rows(), targets.rows())?;
    check_dim("target width", params.d_out(), targets.cols())?;
    if inputs.rows() == 0 {
        return Err(Error::Validation("empty batch".into()));
    }
    targets.check_finite("regression targets")?;

    let n = inputs.rows() as f64;
    let trace = forward_trace(params, inputs)?;
    let out = trace.output();

    let mut loss = 0.0;
    let mut delta = Matrix::zeros(out.rows(), out.cols());
    for ((d, o), t) in delta
        .as_mut_slice()
        .iter_mut()
        .zip(out.as_slice())
        .zip(targets.as_slice())
    {
        let r = o - t;
        loss += r * r;
        *d = 2.0 * r / n;
    }
    loss /= n;

    let act = params.activation;
    let mut grads = Vec::with_capacity(params.layers.len());
    for k in (0..params.layers.len()).rev() {
        let layer = &params.layers[k];
        let weight = delta.matmul_tn(&trace.acts[k])?;
        let bias = delta.column_sums();
        grads.push(Layer { weight, bias });
        if k > 0 {
            let mut upstream = delta.matmul(&layer.weight)?;
            for (u, a) in upstream
                .as_mut_slice()
                .iter_mut()
                .zip(trace.acts[k].as_slice())
            {
                *u *= act.slope_from_output(*a);
            }
            delta = upstream;
        }
    }
    grads.reverse();
    Ok((loss, GradBuffer { layers: grads }))
}

fn check_spatial(params: &MlpParams, d_spatial: usize) -> Result<()> {
    if d_spatial != params.d_out() || d_spatial > params.d_in() {
        return Err(Error::Validation(format!(
            "divergence block of width {d_spatial} incompatible with network {} -> {}",
            params.d_in(),
            params.d_out()
        )));
    }
    Ok(())
}

/// Exact `Σᵢ ∂vᵢ/∂xᵢ` over the leading `d_spatial` input columns.
///
/// All `d_spatial` basis tangents are pushed through the network at once as
/// a stacked `(rows·d) × width` matrix.
pub fn divergence_exact(params: &MlpParams, inputs: &Matrix, d_spatial: usize) -> Result<Vec<f64>> {
    check_spatial(params, d_spatial)?;
    validate_inputs(params, inputs)?;
    let n_layers = params.layers.len();
    let first = &params.layers[0];

    if n_layers == 1 {
        let tr: f64 = (0..d_spatial).map(|i| first.weight.get(i, i)).sum();
        return Ok(vec![tr; inputs.rows()]);
    }

    let act = params.activation;
    let last = &params.layers[n_layers - 1];
    let mut out = Vec::with_capacity(inputs.rows());
    let mut start = 0;
    while start < inputs.rows() {
        let end = (start + DIVERGENCE_CHUNK).min(inputs.rows());
        let idx: Vec<usize> = (start..end).collect();
        let chunk = inputs.select_rows(&idx);
        let trace = forward_trace(params, &chunk)?;
        let rows = chunk.rows();

        // tangent of the first hidden layer for basis direction i is column i of W₀
        let h1 = first.d_out();
        let mut tangent = Matrix::zeros(rows * d_spatial, h1);
        for n in 0..rows {
            let a1 = trace.acts[1].row(n);
            for i in 0..d_spatial {
                let t_row = tangent.row_mut(n * d_spatial + i);
                for j in 0..h1 {
                    t_row[j] = act.slope_from_output(a1[j]) * first.weight.get(j, i);
                }
            }
        }
        for k in 1..n_layers - 1 {
            let mut next = tangent.matmul_nt(&params.layers[k].weight)?;
            let a = &trace.acts[k + 1];
            for n in 0..rows {
                let slopes: Vec<f64> = a.row(n).iter().map(|&v| act.slope_from_output(v)).collect();
                for i in 0..d_spatial {
                    for (t, s) in next.row_mut(n * d_spatial + i).iter_mut().zip(&slopes) {
                        *t *= s;
                    }
                }
            }
            tangent = next;
        }
        // only the diagonal of the output Jacobian is needed
        for n in 0..rows {
            let mut div = 0.0;
            for i in 0..d_spatial {
                let t_row = tangent.row(n * d_spatial + i);
                div += t_row
                    .iter()
                    .zip(last.weight.row(i))
                    .map(|(t, w)| t * w)
                    .sum::<f64>();
            }
            out.push(div);
        }
        start = end;
    }
    Ok(out)
}

/// Push input-space tangents through a recorded forward pass.
fn tangent_pass(params: &MlpParams, trace: &Trace, tangents: &Matrix) -> Result<Matrix> {
    let n_layers = params.layers.len();
    let act = params.activation;
    let mut t = tangents.clone();
    for (k, layer) in params.layers.iter().enumerate() {
        t = t.matmul_nt(&layer.weight)?;
        if k + 1 < n_layers {
            for (v, a) in t.as_mut_slice().iter_mut().zip(trace.acts[k + 1].as_slice()) {
                *v *= act.slope_from_output(*a);
            }
        }
    }
    Ok(t)
}

/// Jacobian-vector product: returns the outputs and `J·tangent` row by row.
pub fn jvp(params: &MlpParams, inputs: &Matrix, tangents: &Matrix) -> Result<(Matrix, Matrix)> {
    validate_inputs(params, inputs)?;
    check_dim("tangent rows", inputs.rows(), tangents.rows())?;
    check_dim("tangent width", inputs.cols(), tangents.cols())?;
    let trace = forward_trace(params, inputs)?;
    let jt = tangent_pass(params, &trace, tangents)?;
    Ok((trace.acts[trace.acts.len() - 1].clone(), jt))
}

fn probe_quadratic_forms(
    params: &MlpParams,
    trace: &Trace,
    probes: &Matrix,
    d_spatial: usize,
    acc: &mut [f64],
) -> Result<()> {
    let jt = tangent_pass(params, trace, probes)?;
    for (n, a) in acc.iter_mut().enumerate() {
        let p = &probes.row(n)[..d_spatial];
        *a += p.iter().zip(jt.row(n)).map(|(x, y)| x * y).sum::<f64>();
    }
    Ok(())
}

/// Hutchinson estimate of the spatial divergence with Rademacher probes:
/// the mean of `aᵀ(∂v/∂x)a` over `n_probes` independent probes per row.
pub fn divergence_hutchinson<R: Rng + ?Sized>(
    params: &MlpParams,
    inputs: &Matrix,
    d_spatial: usize,
    n_probes: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    check_spatial(params, d_spatial)?;
    validate_inputs(params, inputs)?;
    if n_probes == 0 {
        return Err(Error::Validation("Hutchinson estimator needs at least one probe".into()));
    }
    let trace = forward_trace(params, inputs)?;
    let mut acc = vec![0.0; inputs.rows()];
    let mut probes = Matrix::zeros(inputs.rows(), inputs.cols());
    for _ in 0..n_probes {
        for n in 0..inputs.rows() {
            for v in &mut probes.row_mut(n)[..d_spatial] {
                *v = if rng.random::<bool>() { 1.0 } else { -1.0 };
            }
        }
        probe_quadratic_forms(params, &trace, &probes, d_spatial, &mut acc)?;
    }
    let scale = 1.0 / n_probes as f64;
    acc.iter_mut().for_each(|a| *a *= scale);
    Ok(acc)
}

/// Deterministic probing with every spatial basis vector; recovers the
/// trace through the tangent route instead of the stacked one.
pub fn divergence_basis_probes(params: &MlpParams, inputs: &Matrix, d_spatial: usize) -> Result<Vec<f64>> {
    check_spatial(params, d_spatial)?;
    validate_inputs(params, inputs)?;
    let trace = forward_trace(params, inputs)?;
    let mut acc = vec![0.0; inputs.rows()];
    for i in 0..d_spatial {
        let probes = Matrix::from_fn(inputs.rows(), inputs.cols(), |_, j| if j == i { 1.0 } else { 0.0 });
        probe_quadratic_forms(params, &trace, &probes, d_spatial, &mut acc)?;
    }
    Ok(acc)
}
