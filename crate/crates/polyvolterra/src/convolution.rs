//! Uniform grids, kernel weight tables, discrete convolution and resolvents.

use crate::kernels::{pair_integral, Kernel, KernelError};
use nalgebra::DMatrix;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConvolutionError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("grid mismatch: ({0} steps of {1}) vs ({2} steps of {3})")]
    GridMismatch(usize, f64, usize, f64),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("implicit resolvent step is ill-conditioned (reciprocal condition {rcond:.3e}); refine the grid")]
    IllConditioned { rcond: f64 },
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

/// Uniform grid `t_j = j T / M`, `j = 0..=M`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    horizon: f64,
    steps: usize,
}

impl Grid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self, ConvolutionError> {
        if !(horizon > 0.0 && horizon.is_finite()) || steps == 0 {
            return Err(ConvolutionError::InvalidGrid(format!("need T > 0 and M >= 1 (T = {horizon}, M = {steps})")));
        }
        Ok(Self { horizon, steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn step(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn time(&self, j: usize) -> f64 {
        if j == self.steps {
            self.horizon
        } else {
            j as f64 * self.step()
        }
    }

    /// Grid index of `t` when it lies on the grid (to `1e-9` of a step).
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let x = t / self.step();
        let j = x.round();
        if (x - j).abs() <= 1e-9 && j >= 0.0 && j <= self.steps as f64 {
            Some(j as usize)
        } else {
            None
        }
    }

    fn check_same(&self, other: &Grid) -> Result<(), ConvolutionError> {
        if self.steps != other.steps || (self.horizon - other.horizon).abs() > 1e-12 * self.horizon {
            return Err(ConvolutionError::GridMismatch(self.steps, self.step(), other.steps, other.step()));
        }
        Ok(())
    }
}

/// Exact kernel integrals over grid cells.
///
/// `cell(k) = int_{(k-1)D}^{kD} K(u) du` is the weight of a cell `k` steps before the maturity,
/// `pair(k1, k2) = int_0^D K((k1-1)D + v) K((k2-1)D + v) dv` the weight of a product of two
/// kernels evaluated at maturities `k1` and `k2` steps after the cell start.
#[derive(Debug, Clone)]
pub struct KernelWeights {
    grid: Grid,
    cell: Vec<f64>,
    pair: Option<Vec<f64>>,
    pair_diag: Vec<f64>,
}

impl KernelWeights {
    pub fn cells(kernel: &Kernel, grid: Grid) -> Result<Self, ConvolutionError> {
        let m = grid.steps();
        let dt = grid.step();
        let mut cell = vec![0.0; m + 1];
        let mut pair_diag = vec![0.0; m + 1];
        for k in 1..=m {
            cell[k] = kernel.integral((k - 1) as f64 * dt, k as f64 * dt);
            pair_diag[k] = pair_integral(kernel, kernel, k as f64 * dt, k as f64 * dt, 0.0, dt)?;
        }
        Ok(Self { grid, cell, pair: None, pair_diag })
    }

    pub fn with_pairs(kernel: &Kernel, grid: Grid) -> Result<Self, ConvolutionError> {
        let mut w = Self::cells(kernel, grid)?;
        let m = grid.steps();
        let n = m + 1;
        let dt = grid.step();
        let mut pair = vec![0.0; n * n];
        for k1 in 1..=m {
            pair[k1 * n + k1] = w.pair_diag[k1];
            for k2 in k1 + 1..=m {
                let v = pair_integral(kernel, kernel, k1 as f64 * dt, k2 as f64 * dt, 0.0, dt)?;
                pair[k1 * n + k2] = v;
                pair[k2 * n + k1] = v;
            }
        }
        w.pair = Some(pair);
        Ok(w)
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn cell(&self, k: usize) -> f64 {
        self.cell[k]
    }

    pub fn cells_slice(&self) -> &[f64] {
        &self.cell
    }

    /// `int` of `K^2` over the cell `k` steps before the maturity.
    pub fn square(&self, k: usize) -> f64 {
        self.pair_diag[k]
    }

    pub fn pair(&self, k1: usize, k2: usize) -> f64 {
        match &self.pair {
            Some(p) => p[k1 * (self.grid.steps() + 1) + k2],
            None if k1 == k2 => self.pair_diag[k1],
            None => panic!("pair weights were not tabulated"),
        }
    }

    pub(crate) fn pair_table(&self) -> Option<&[f64]> {
        self.pair.as_deref()
    }
}

/// Matrix-valued function sampled on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    grid: Grid,
    values: Vec<DMatrix<f64>>,
}

impl GridFunction {
    pub fn new(grid: Grid, values: Vec<DMatrix<f64>>) -> Result<Self, ConvolutionError> {
        if values.len() != grid.steps() + 1 {
            return Err(ConvolutionError::Dimension(format!(
                "expected {} samples, got {}",
                grid.steps() + 1,
                values.len()
            )));
        }
        let (r, c) = values[0].shape();
        if values.iter().any(|v| v.shape() != (r, c)) {
            return Err(ConvolutionError::Dimension("samples must share a shape".into()));
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn<F: Fn(f64) -> DMatrix<f64>>(grid: Grid, f: F) -> Self {
        let values = (0..=grid.steps()).map(|j| f(grid.time(j))).collect();
        Self { grid, values }
    }

    pub fn constant(grid: Grid, value: DMatrix<f64>) -> Self {
        Self { grid, values: vec![value; grid.steps() + 1] }
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn values(&self) -> &[DMatrix<f64>] {
        &self.values
    }

    pub fn at(&self, j: usize) -> &DMatrix<f64> {
        &self.values[j]
    }

    /// Value at `t`; off-grid times are linearly interpolated and flagged with `false`.
    pub fn sample(&self, t: f64) -> (DMatrix<f64>, bool) {
        if let Some(j) = self.grid.index_of(t) {
            return (self.values[j].clone(), true);
        }
        let x = (t / self.grid.step()).clamp(0.0, self.grid.steps() as f64);
        let j = (x.floor() as usize).min(self.grid.steps() - 1);
        let w = x - j as f64;
        (&self.values[j] * (1.0 - w) + &self.values[j + 1] * w, false)
    }

    /// Scalar entry `(0, 0)` at every grid point.
    pub fn scalar_series(&self) -> Vec<f64> {
        self.values.iter().map(|v| v[(0, 0)]).collect()
    }
}

/// Left operand of a discrete convolution.
pub enum Convolver<'a> {
    Kernel(&'a Kernel),
    Grid(&'a GridFunction),
}

/// `(f * g)(t_j)` for every grid point.
///
/// A kernel operand is integrated exactly over each cell against the left-endpoint value of `g`.
/// Two sampled operands use the trapezoidal rule, which commutes for scalars.
pub fn discrete_convolve(f: Convolver<'_>, g: &GridFunction) -> Result<GridFunction, ConvolutionError> {
    let grid = g.grid;
    let m = grid.steps();
    let zero = g.values[0].clone() * 0.0;
    match f {
        Convolver::Kernel(kernel) => {
            let w = KernelWeights::cells(kernel, grid)?;
            let values = (0..=m)
                .map(|j| {
                    let mut acc = zero.clone();
                    for l in 0..j {
                        acc += &g.values[l] * w.cell(j - l);
                    }
                    acc
                })
                .collect();
            Ok(GridFunction { grid, values })
        }
        Convolver::Grid(fg) => {
            fg.grid.check_same(&grid)?;
            if fg.values[0].ncols() != g.values[0].nrows() {
                return Err(ConvolutionError::Dimension("inner dimensions differ".into()));
            }
            let dt = grid.step();
            let values = (0..=m)
                .map(|j| {
                    let mut acc = &fg.values[0] * &g.values[0] * 0.0;
                    for l in 0..=j {
                        let w = if l == 0 || l == j { 0.5 } else { 1.0 };
                        acc += &fg.values[j - l] * &g.values[l] * (w * dt);
                    }
                    if j == 0 {
                        acc *= 0.0;
                    }
                    acc
                })
                .collect();
            Ok(GridFunction { grid, values })
        }
    }
}

/// Kernel value used at grid point `j`; the cell average stands in for `K(0+)`.
fn kernel_node(kernel: &Kernel, w: &KernelWeights, j: usize) -> f64 {
    if j == 0 {
        w.cell(1) / w.grid().step()
    } else {
        kernel.value(w.grid().time(j))
    }
}

/// `sum_{l=1}^{j} cell(j - l + 1) X_l`: the product-integration rule with `X` constant on `(t_{l-1}, t_l]`.
fn right_convolve(w: &KernelWeights, x: &[DMatrix<f64>], j: usize) -> DMatrix<f64> {
    let mut acc = x[0].clone() * 0.0;
    for l in 1..=j {
        acc += &x[l] * w.cell(j - l + 1);
    }
    acc
}

/// Resolvent `R_B` of `-KB`: the solution of `KB * R = KB + R`.
///
/// The `j`-th cell contains `R(t_j)`, so every step solves `(I - cell(1) B) R_j = rhs`.
pub fn solve_resolvent(kernel: &Kernel, b: &DMatrix<f64>, grid: Grid) -> Result<GridFunction, ConvolutionError> {
    if !b.is_square() {
        return Err(ConvolutionError::Dimension("B must be square".into()));
    }
    let d = b.nrows();
    let w = KernelWeights::cells(kernel, grid)?;
    let lhs = DMatrix::identity(d, d) - b * w.cell(1);
    let sv = lhs.clone().singular_values();
    let rcond = sv.min() / sv.max();
    if !(rcond > 1e-10) {
        return Err(ConvolutionError::IllConditioned { rcond });
    }
    let lu = lhs.lu();
    let mut r: Vec<DMatrix<f64>> = Vec::with_capacity(grid.steps() + 1);
    r.push(-b * kernel_node(kernel, &w, 0));
    for j in 1..=grid.steps() {
        let mut rhs = -b * kernel.value(grid.time(j));
        for l in 1..j {
            rhs += b * &r[l] * w.cell(j - l + 1);
        }
        let rj = lu.solve(&rhs).ok_or(ConvolutionError::IllConditioned { rcond })?;
        r.push(rj);
    }
    Ok(GridFunction { grid, values: r })
}

/// `E_B = K - R_B * K`.
pub fn compute_eb(kernel: &Kernel, r_b: &GridFunction) -> Result<GridFunction, ConvolutionError> {
    let grid = r_b.grid;
    let w = KernelWeights::cells(kernel, grid)?;
    let d = r_b.values[0].nrows();
    let values = (0..=grid.steps())
        .map(|j| DMatrix::identity(d, d) * kernel_node(kernel, &w, j) - right_convolve(&w, &r_b.values, j))
        .collect();
    Ok(GridFunction { grid, values })
}

/// `max_j |(KB * R)(t_j) - KB(t_j) - R(t_j)|` with the discretization of [`solve_resolvent`].
pub fn verify_resolvent(kernel: &Kernel, b: &DMatrix<f64>, r_b: &GridFunction) -> Result<f64, ConvolutionError> {
    let grid = r_b.grid;
    let w = KernelWeights::cells(kernel, grid)?;
    let mut worst: f64 = 0.0;
    for j in 0..=grid.steps() {
        let conv = b * right_convolve(&w, &r_b.values, j);
        let res = conv - b * kernel_node(kernel, &w, j) - &r_b.values[j];
        worst = worst.max(res.amax());
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn scalar(x: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, x)
    }

    #[test]
    fn grid_indexing() {
        let g = Grid::new(1.0, 64).unwrap();
        assert_eq!(g.index_of(0.5), Some(32));
        assert_eq!(g.index_of(1.0), Some(64));
        assert_eq!(g.index_of(0.501), None);
        assert!(Grid::new(0.0, 4).is_err());
    }

    #[test]
    fn convolution_examples() {
        let grid = Grid::new(1.0, 200).unwrap();
        let one = GridFunction::constant(grid, scalar(1.0));
        let c = discrete_convolve(Convolver::Kernel(&Kernel::constant(1.0).unwrap()), &one).unwrap();
        for j in 0..=200 {
            assert_relative_eq!(c.at(j)[(0, 0)], grid.time(j), epsilon = 1e-13);
        }
        let e = discrete_convolve(Convolver::Kernel(&Kernel::exponential(1.0).unwrap()), &one).unwrap();
        assert_relative_eq!(e.at(200)[(0, 0)], 1.0 - (-1f64).exp(), epsilon = 1e-12);
        let three = GridFunction::constant(grid, scalar(3.0));
        let f = discrete_convolve(Convolver::Kernel(&Kernel::fractional(0.5).unwrap()), &three).unwrap();
        assert_relative_eq!(f.at(77)[(0, 0)], 3.0 * grid.time(77), epsilon = 1e-12);
    }

    #[test]
    fn grid_mismatch_is_reported() {
        let a = GridFunction::constant(Grid::new(1.0, 10).unwrap(), scalar(1.0));
        let b = GridFunction::constant(Grid::new(1.0, 20).unwrap(), scalar(1.0));
        assert!(matches!(discrete_convolve(Convolver::Grid(&a), &b), Err(ConvolutionError::GridMismatch(..))));
    }

    #[test]
    fn resolvent_closed_forms() {
        let grid = Grid::new(1.0, 2000).unwrap();
        let b = scalar(0.5);
        let r = solve_resolvent(&Kernel::constant(1.0).unwrap(), &b, grid).unwrap();
        assert!((r.at(2000)[(0, 0)] + 0.5 * 0.5f64.exp()).abs() < 2e-3);
        let e = compute_eb(&Kernel::constant(1.0).unwrap(), &r).unwrap();
        assert!((e.at(2000)[(0, 0)] - 0.5f64.exp()).abs() < 2e-3);
        let k = Kernel::exponential(1.0).unwrap();
        let r = solve_resolvent(&k, &b, grid).unwrap();
        assert!((r.at(2000)[(0, 0)] + 0.5 * (-0.5f64).exp()).abs() < 2e-3);
        let e = compute_eb(&k, &r).unwrap();
        assert!((e.at(2000)[(0, 0)] - (-0.5f64).exp()).abs() < 2e-3);
    }

    #[test]
    fn zero_b_gives_zero_resolvent() {
        let grid = Grid::new(1.0, 50).unwrap();
        let k = Kernel::fractional(0.3).unwrap();
        let r = solve_resolvent(&k, &scalar(0.0), grid).unwrap();
        assert!(r.values().iter().all(|v| v[(0, 0)] == 0.0));
        assert_eq!(verify_resolvent(&k, &scalar(0.0), &r).unwrap(), 0.0);
        let e = compute_eb(&k, &r).unwrap();
        assert_relative_eq!(e.at(10)[(0, 0)], k.value(grid.time(10)), max_relative = 1e-15);
    }

    #[test]
    fn residual_detects_perturbation() {
        let grid = Grid::new(1.0, 100).unwrap();
        let k = Kernel::fractional(0.3).unwrap();
        let b = DMatrix::from_row_slice(2, 2, &[-0.4, 0.1, 0.2, -0.3]);
        let mut r = solve_resolvent(&k, &b, grid).unwrap();
        assert!(verify_resolvent(&k, &b, &r).unwrap() <= 1e-12);
        r.values[40][(0, 0)] += 0.1;
        assert!(verify_resolvent(&k, &b, &r).unwrap() >= 0.05);
    }

    #[test]
    fn eb_matches_matrix_exponential_for_unit_kernel() {
        let b = DMatrix::from_row_slice(2, 2, &[-0.5, 0.3, 0.1, 0.2]);
        let grid = Grid::new(1.0, 1000).unwrap();
        let k = Kernel::constant(1.0).unwrap();
        let e = compute_eb(&k, &solve_resolvent(&k, &b, grid).unwrap()).unwrap();
        let exact = (b.clone() * 1.0).exp();
        assert!((e.at(1000) - exact).amax() < 2e-3);
    }

    #[test]
    fn first_order_refinement() {
        let k = Kernel::exponential(1.0).unwrap();
        let b = scalar(0.5);
        let at_one = |m: usize| {
            let g = Grid::new(1.0, m).unwrap();
            compute_eb(&k, &solve_resolvent(&k, &b, g).unwrap()).unwrap().at(m)[(0, 0)]
        };
        let (a, c, f) = (at_one(100), at_one(200), at_one(400));
        assert!((a - c).abs() / (c - f).abs() >= 1.8);
    }

    #[test]
    fn sampled_convolution_commutes() {
        let grid = Grid::new(1.0, 100).unwrap();
        let f = GridFunction::from_fn(grid, |t| scalar((-t).exp()));
        let g = GridFunction::from_fn(grid, |t| scalar(1.0 + t * t));
        let fg = discrete_convolve(Convolver::Grid(&f), &g).unwrap();
        let gf = discrete_convolve(Convolver::Grid(&g), &f).unwrap();
        for j in 0..=100 {
            assert!((fg.at(j)[(0, 0)] - gf.at(j)[(0, 0)]).abs() <= 1e-12);
        }
    }
}
