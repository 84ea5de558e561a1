//! Dense matrices and a differentiable MLP velocity network.

mod matrix;
mod mlp;

pub use matrix::Matrix;
pub use mlp::{
    divergence_basis_probes, divergence_exact, divergence_hutchinson, fm_loss_and_grads, jvp,
    mlp_forward, Activation, GradBuffer, Layer, MlpParams,
};
