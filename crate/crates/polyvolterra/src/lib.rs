//! Moments of polynomial Volterra processes.
//!
//! `X_t = g0(t) + int_0^t K(t-s) b(X_s) ds + int_0^t K(t-s) sigma(X_s) dW_s` with affine drift
//! `b(x) = b0 + B x` and quadratic diffusion matrix `a = sigma sigma^T`.
//!
//! - [`kernels`]: kernel families and exact cell integrals.
//! - [`convolution`]: grids, discrete convolutions and resolvents.
//! - [`model`]: coefficient bundles and state spaces.
//! - [`moments`]: deterministic moment solvers.
//! - [`sim`]: Monte Carlo paths and estimators.
//! - [`jump`]: moments from a killed pure-jump dual process.

mod quad;

pub mod convolution;
pub mod jump;
pub mod kernels;
pub mod model;
pub mod moments;
pub mod sim;
pub mod stats;
