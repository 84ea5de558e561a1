//! Mutual-information and entropy-difference estimation by flow matching.
//!
//! A velocity network is trained to transport one sample distribution into
//! another along the straight-line interpolation path; the expected
//! divergence of that field at a uniform random time is the entropy gap
//! between the endpoints. Choosing the endpoints as the product of
//! marginals and the joint (or a marginal and a conditional) turns the gap
//! into mutual information.
//!
//! - [`diffkernel`]: matrices, MLP forward/backward, exact and Hutchinson divergence
//! - [`flowmatch`]: path construction, AdamW, the training loop
//! - [`estimators`]: entropy-gap, jFMMI and cFMMI estimators, path-norm surrogate, RK4 pushforward
//! - [`benchdist`]: benchmark distributions with closed-form MI
//! - [`oracle`]: KSG estimator, quadrature, and numeric bound checks
//! - [`sweep`]: configuration, grid runner, CSV and plot-data output

pub mod benchdist;
pub mod diffkernel;
pub mod error;
pub mod estimators;
pub mod flowmatch;
pub mod oracle;
pub mod selftest;
pub mod sweep;

pub use error::{Error, Result};
