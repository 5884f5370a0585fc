//! Moment systems of polynomial Volterra processes.
//!
//! For each level `p` the lifted moments `m(t, T_1..T_p; w) = E[prod_n g_{i_n, t}(T_n)]`
//! are stored as symmetric tensors over sorted `(maturity, letter)` slots. The diagonal
//! `t = T_1 = ... = T_p` gives `E[X_t^alpha(w)]`.

mod classical;
mod coefficients;
mod picard;
mod stepper;
pub(crate) mod storage;
mod voc;

pub use classical::{classical_moments_ode, generator_matrix, ClassicalMoments};
pub use coefficients::{reconstruct_moment, solve_all_coefficients, solve_coefficients, CoeffTable};
pub use picard::{solve_moments_picard, PicardOptions, PicardReport};
pub use voc::{affine_moments_recursive, first_moment_voc, second_moment_voc, Resolvent};

use crate::convolution::{ConvolutionError, Grid, KernelWeights};
use crate::kernels::{Kernel, KernelError};
use crate::model::{multi_indices, InitialCurve, ModelError, PolyModel};
use stepper::{Init, Layout, PairChannel, PairSource, StepProblem};
use storage::Binomial;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MomentError {
    #[error("moment storage needs {required_mb:.0} MB, above the {limit_mb:.0} MB limit; {advice}")]
    Memory { required_mb: f64, limit_mb: f64, advice: String },
    #[error("moments blew up after t = {last_valid_time}")]
    Blowup { last_valid_time: f64 },
    #[error("time {0} is not a grid point")]
    OffGrid(f64),
    #[error("level {requested} unavailable (table holds levels up to {order})")]
    Level { requested: usize, order: usize },
    #[error("multi-index has length {got}, expected {dim}")]
    MultiIndex { got: usize, dim: usize },
    #[error("method needs A_ij = 0 for all i, j (model is not affine)")]
    NotAffine,
    #[error("method needs a constant initial value X0")]
    NonConstantInitial,
    #[error("Picard iteration did not contract after {doublings} doublings of lambda (factor {factor:.3})")]
    NoContraction { doublings: usize, factor: f64 },
    #[error("Picard iteration reached {0} iterations without converging")]
    MaxIterations(usize),
    #[error("invalid request: {0}")]
    Invalid(String),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Convolution(#[from] ConvolutionError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    /// Upper bound on the bytes of symmetric moment storage.
    pub memory_limit: usize,
    /// Stop after this many steps and keep that slice (default: run to the horizon).
    pub stop_at: Option<usize>,
    /// Collapse all maturities into one class when the kernel and `g0` are constant.
    pub allow_collapse: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self { memory_limit: 3 << 30, stop_at: None, allow_collapse: true }
    }
}

/// Lifted-moment tensors at one time `t_j`, for maturities `T >= t_j`.
#[derive(Debug, Clone)]
pub struct Slice {
    step: usize,
    steps: usize,
    dim: usize,
    collapsed: bool,
    levels: Vec<Vec<f64>>,
    binom: Binomial,
}

impl Slice {
    pub fn step(&self) -> usize {
        self.step
    }

    /// `m(t_j, T_1..T_p; w)` for pairs `(maturity grid index, 1-based letter)` in any order.
    pub fn value(&self, pairs: &[(usize, usize)]) -> Result<f64, MomentError> {
        let p = pairs.len();
        if p >= self.levels.len() {
            return Err(MomentError::Level { requested: p, order: self.levels.len() - 1 });
        }
        let mut slots = Vec::with_capacity(p);
        for &(t, l) in pairs {
            if t < self.step || t > self.steps || l == 0 || l > self.dim {
                return Err(MomentError::Invalid(format!("pair ({t}, {l}) outside the active slice")));
            }
            let tp = if self.collapsed { 0 } else { self.steps - t };
            slots.push(tp * self.dim + l - 1);
        }
        Ok(self.levels[p][storage::rank_unsorted(&self.binom, &mut slots)])
    }
}

/// Diagonal moment history `E[X_{t_j}^alpha]` for `|alpha| <= N`, plus the last computed slice.
#[derive(Debug, Clone)]
pub struct MomentTable {
    method: &'static str,
    grid: Grid,
    order: usize,
    dim: usize,
    alphas: Vec<Vec<usize>>,
    diagonal: Vec<f64>,
    slice: Option<Slice>,
}

impl MomentTable {
    pub(crate) fn new(
        method: &'static str,
        grid: Grid,
        order: usize,
        dim: usize,
        diagonal: Vec<f64>,
        slice: Option<Slice>,
    ) -> Self {
        let alphas = multi_indices(order, dim);
        debug_assert_eq!(diagonal.len() % alphas.len(), 0);
        Self { method, grid, order, dim, alphas, diagonal, slice }
    }

    pub fn method(&self) -> &'static str {
        self.method
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Multi-indices in storage order.
    pub fn alphas(&self) -> &[Vec<usize>] {
        &self.alphas
    }

    /// Number of grid points with diagonal values.
    pub fn len(&self) -> usize {
        self.diagonal.len() / self.alphas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diagonal.is_empty()
    }

    pub fn slice(&self) -> Option<&Slice> {
        self.slice.as_ref()
    }

    pub(crate) fn alpha_index(&self, alpha: &[usize]) -> Result<usize, MomentError> {
        if alpha.len() != self.dim {
            return Err(MomentError::MultiIndex { got: alpha.len(), dim: self.dim });
        }
        let p: usize = alpha.iter().sum();
        if p > self.order {
            return Err(MomentError::Level { requested: p, order: self.order });
        }
        Ok(self.alphas.iter().position(|a| a == alpha).expect("all multi-indices are listed"))
    }

    /// `E[X_{t_j}^alpha]` at grid index `j`.
    pub fn at_step(&self, j: usize, alpha: &[usize]) -> Result<f64, MomentError> {
        let a = self.alpha_index(alpha)?;
        if j >= self.len() {
            return Err(MomentError::OffGrid(self.grid.time(j)));
        }
        Ok(self.diagonal[j * self.alphas.len() + a])
    }

    /// `E[X_t^alpha]` for a grid time `t`.
    pub fn moment(&self, t: f64, alpha: &[usize]) -> Result<f64, MomentError> {
        let j = self.grid.index_of(t).ok_or(MomentError::OffGrid(t))?;
        self.at_step(j, alpha)
    }

    pub fn series(&self, alpha: &[usize]) -> Result<Vec<f64>, MomentError> {
        (0..self.len()).map(|j| self.at_step(j, alpha)).collect()
    }
}

/// Alias matching the diagonal read used by callers that hold only a table.
pub fn moments_at_diagonal(table: &MomentTable, t: f64, alpha: &[usize]) -> Result<f64, MomentError> {
    table.moment(t, alpha)
}

/// Flattened model coefficients in the layout used by the steppers.
pub(crate) struct Coefficients {
    pub b0: Vec<f64>,
    /// `b[i * d + j] = (b_j)_i`.
    pub b: Vec<f64>,
    pub a0: Vec<f64>,
    /// `a_lin[(j * d + i) * d + k] = (A_j)_{ik}`.
    pub a_lin: Vec<f64>,
    /// `a_quad[((j * d + l) * d + i) * d + k] = (A_jl)_{ik}`.
    pub a_quad: Vec<f64>,
}

impl Coefficients {
    pub fn of(model: &PolyModel) -> Self {
        let d = model.dim();
        let mut c = Self {
            b0: model.b0().iter().copied().collect(),
            b: vec![0.0; d * d],
            a0: vec![0.0; d * d],
            a_lin: vec![0.0; d * d * d],
            a_quad: vec![0.0; d * d * d * d],
        };
        for i in 0..d {
            for k in 0..d {
                c.b[i * d + k] = model.b()[(i, k)];
                c.a0[i * d + k] = 0.5 * (model.a0()[(i, k)] + model.a0()[(k, i)]);
            }
        }
        for j in 0..d {
            for i in 0..d {
                for k in 0..d {
                    let a = model.a_lin(j);
                    c.a_lin[(j * d + i) * d + k] = 0.5 * (a[(i, k)] + a[(k, i)]);
                    for l in 0..d {
                        let q = model.a_quad(j, l);
                        c.a_quad[((j * d + l) * d + i) * d + k] = q[(i, k)];
                    }
                }
            }
        }
        c
    }
}

/// Values `g0_i(t_T)` per letter and maturity index.
fn initial_table(model: &PolyModel, grid: Grid) -> Vec<Vec<f64>> {
    let d = model.dim();
    let mut g = vec![vec![0.0; grid.steps() + 1]; d];
    for t in 0..=grid.steps() {
        let v = model.g0(grid.time(t));
        for i in 0..d {
            g[i][t] = v[i];
        }
    }
    g
}

pub(crate) fn full_step_problem(
    model: &PolyModel,
    kernel: &Kernel,
    order: usize,
    grid: Grid,
    opts: &SolveOptions,
    init: Init,
    level0: f64,
) -> Result<StepProblem, MomentError> {
    let collapsible = kernel.constant_value().is_some() && matches!(model.initial(), InitialCurve::Constant(_));
    let layout = if opts.allow_collapse && collapsible && opts.stop_at.is_none() { Layout::Collapsed } else { Layout::Full };
    let weights = KernelWeights::with_pairs(kernel, grid)?;
    let d = model.dim();
    let table = weights.pair_table().expect("pairs tabulated").to_vec();
    Ok(StepProblem {
        dim: d,
        order,
        steps: grid.steps(),
        horizon: grid.horizon(),
        layout,
        coeffs: Coefficients::of(model),
        cells: Some(weights.cells_slice().to_vec()),
        tables: vec![table],
        channels: vec![PairChannel { weights: vec![0; d * d], source: PairSource::Diffusion }],
        init,
        level0,
        memory_limit: opts.memory_limit,
    })
}

/// Solves the lifted moment system by explicit left-endpoint stepping in `t`.
pub fn solve_moments(
    model: &PolyModel,
    kernel: &Kernel,
    order: usize,
    grid: Grid,
    opts: &SolveOptions,
) -> Result<MomentTable, MomentError> {
    if order == 0 {
        return Err(MomentError::Invalid("order N must be at least 1".into()));
    }
    let init = Init::Product(initial_table(model, grid));
    let problem = full_step_problem(model, kernel, order, grid, opts, init, 1.0)?;
    let out = problem.run(opts.stop_at)?;
    Ok(MomentTable::new("step", grid, order, model.dim(), out.diagonal, Some(out.slice)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};

    fn bs() -> PolyModel {
        PolyModel::scalar(1.0, 0.0, 0.1, 0.0, 0.0, 0.04)
    }

    #[test]
    fn black_scholes_constant_kernel() {
        let grid = Grid::new(1.0, 2000).unwrap();
        let k = Kernel::constant(1.0).unwrap();
        let table = solve_moments(&bs(), &k, 4, grid, &SolveOptions::default()).unwrap();
        for n in 1..=4usize {
            let nf = n as f64;
            let exact = (0.1 * nf + 0.02 * nf * (nf - 1.0)).exp();
            let got = table.moment(1.0, &[n]).unwrap();
            assert!((got / exact - 1.0).abs() < 1e-3, "k={n}: {got} vs {exact}");
        }
    }

    #[test]
    fn full_layout_matches_collapsed() {
        let grid = Grid::new(1.0, 40).unwrap();
        let k = Kernel::constant(1.0).unwrap();
        let a = solve_moments(&bs(), &k, 3, grid, &SolveOptions::default()).unwrap();
        let opts = SolveOptions { allow_collapse: false, ..Default::default() };
        let b = solve_moments(&bs(), &k, 3, grid, &opts).unwrap();
        for n in 0..=3usize {
            for j in 0..=40 {
                let (x, y) = (a.at_step(j, &[n]).unwrap(), b.at_step(j, &[n]).unwrap());
                assert!((x - y).abs() < 1e-12 * x.abs().max(1.0));
            }
        }
    }

    #[test]
    fn frozen_model_keeps_initial_products() {
        let model = PolyModel::new(DVector::from_vec(vec![0.5, -2.0])).unwrap();
        let k = Kernel::fractional(0.3).unwrap();
        let grid = Grid::new(1.0, 12).unwrap();
        let table = solve_moments(&model, &k, 3, grid, &SolveOptions::default()).unwrap();
        assert_eq!(table.moment(1.0, &[1, 2]).unwrap(), 0.5 * 4.0);
        assert_eq!(table.moment(0.5, &[0, 0]).unwrap(), 1.0);
        let s = table.slice().unwrap();
        assert_eq!(s.value(&[(12, 1), (12, 2), (12, 2)]).unwrap(), 2.0);
    }

    #[test]
    fn memory_limit_gives_advice() {
        let grid = Grid::new(1.0, 400).unwrap();
        let k = Kernel::exponential(1.0).unwrap();
        let opts = SolveOptions { memory_limit: 1 << 20, ..Default::default() };
        match solve_moments(&bs(), &k, 3, grid, &opts) {
            Err(MomentError::Memory { advice, .. }) => assert!(advice.contains("reduce M")),
            other => panic!("expected a memory error, got {other:?}"),
        }
    }

    #[test]
    fn step_and_picard_agree_small() {
        let model = PolyModel::scalar(0.8, 0.1, -0.4, 0.05, 0.1, 0.05);
        let k = Kernel::fractional(0.35).unwrap();
        let grid = Grid::new(1.0, 16).unwrap();
        let a = solve_moments(&model, &k, 3, grid, &SolveOptions::default()).unwrap();
        let (b, _) = solve_moments_picard(&model, &k, 3, grid, &PicardOptions::default()).unwrap();
        for n in 1..=3usize {
            let (x, y) = (a.moment(1.0, &[n]).unwrap(), b.moment(1.0, &[n]).unwrap());
            assert!((x - y).abs() < 1e-8 * x.abs(), "{n}: {x} vs {y}");
        }
    }

    #[test]
    fn step_and_picard_agree_two_dimensional() {
        let model = PolyModel::new(DVector::from_vec(vec![0.5, 0.3]))
            .unwrap()
            .with_b0(DVector::from_vec(vec![0.1, 0.05]))
            .unwrap()
            .with_b(DMatrix::from_row_slice(2, 2, &[-0.5, 0.2, 0.1, -0.3]))
            .unwrap()
            .with_a0(DMatrix::from_row_slice(2, 2, &[0.04, 0.01, 0.01, 0.03]))
            .unwrap()
            .with_a_quad(1, 1, DMatrix::from_row_slice(2, 2, &[0.05, 0.0, 0.0, 0.0]))
            .unwrap()
            .with_a_quad(1, 2, DMatrix::from_row_slice(2, 2, &[0.0, 0.02, 0.02, 0.0]))
            .unwrap()
            .with_a_quad(2, 1, DMatrix::from_row_slice(2, 2, &[0.0, 0.02, 0.02, 0.0]))
            .unwrap()
            .with_a_quad(2, 2, DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 0.06]))
            .unwrap();
        let k = Kernel::exponential(1.5).unwrap();
        let grid = Grid::new(1.0, 10).unwrap();
        let a = solve_moments(&model, &k, 2, grid, &SolveOptions::default()).unwrap();
        let (b, _) = solve_moments_picard(&model, &k, 2, grid, &PicardOptions::default()).unwrap();
        for alpha in a.alphas() {
            let (x, y) = (a.moment(1.0, alpha).unwrap(), b.moment(1.0, alpha).unwrap());
            assert!((x - y).abs() < 1e-8 * x.abs().max(1e-3), "{alpha:?}: {x} vs {y}");
        }
    }
}
