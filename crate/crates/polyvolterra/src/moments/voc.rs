//! Variation-of-constants formulas.
//!
//! `g~_t(T) = E_t[X_T]` is a martingale in `t` with `dg~_t(T) = E_B(T - t) sigma(X_t) dW_t`,
//! where `E_B = K - Phi` and `Phi = R_B * K`. Products of `g~` therefore only pick up
//! quadratic-covariation terms, which gives a closed recursion for affine models.

use super::stepper::{Init, Layout, PairChannel, PairSource, StepProblem};
use super::{Coefficients, MomentError, MomentTable, SolveOptions};
use crate::convolution::{compute_eb, solve_resolvent, Grid, GridFunction, KernelWeights};
use crate::kernels::Kernel;
use crate::model::PolyModel;
use nalgebra::{DMatrix, DVector};

/// `R_B`, `E_B` and `Phi = K - E_B` for one kernel and drift matrix.
#[derive(Debug, Clone)]
pub struct Resolvent {
    r_b: GridFunction,
    e_b: GridFunction,
    phi: Vec<DMatrix<f64>>,
    weights: KernelWeights,
}

impl Resolvent {
    pub fn new(kernel: &Kernel, b: &DMatrix<f64>, grid: Grid) -> Result<Self, MomentError> {
        let r_b = solve_resolvent(kernel, b, grid)?;
        let e_b = compute_eb(kernel, &r_b)?;
        let weights = KernelWeights::cells(kernel, grid)?;
        let d = b.nrows();
        let mut phi = vec![DMatrix::zeros(d, d)];
        for j in 1..=grid.steps() {
            let mut acc = DMatrix::zeros(d, d);
            for l in 1..=j {
                acc += r_b.at(l) * weights.cell(j - l + 1);
            }
            phi.push(acc);
        }
        Ok(Self { r_b, e_b, phi, weights })
    }

    pub fn r_b(&self) -> &GridFunction {
        &self.r_b
    }

    pub fn e_b(&self) -> &GridFunction {
        &self.e_b
    }

    pub fn grid(&self) -> Grid {
        self.r_b.grid()
    }

    /// `Phi(t_j) = (R_B * K)(t_j)`.
    pub fn phi(&self, j: usize) -> &DMatrix<f64> {
        &self.phi[j]
    }

    /// Average of `Phi` over the cell `k` steps before a maturity.
    pub fn phi_bar(&self, k: usize) -> DMatrix<f64> {
        (&self.phi[k - 1] + &self.phi[k]) * 0.5
    }

    /// `int_0^{t_j} E_B(s) ds`.
    pub fn integral_e_b(&self, kernel: &Kernel, j: usize) -> DMatrix<f64> {
        let d = self.phi[0].nrows();
        let dt = self.grid().step();
        let mut acc = DMatrix::identity(d, d) * kernel.integral(0.0, self.grid().time(j));
        for l in 1..=j {
            acc -= (&self.phi[l - 1] + &self.phi[l]) * (0.5 * dt);
        }
        acc
    }

    /// `int` over the cell `k` steps before the maturity of `E_B M E_B^T`.
    fn cell_quadratic(&self, k: usize, m: &DMatrix<f64>) -> DMatrix<f64> {
        let pb = self.phi_bar(k);
        let kc = self.weights.cell(k);
        let dt = self.grid().step();
        m * self.weights.square(k) - (m * pb.transpose() + &pb * m) * kc + &pb * m * pb.transpose() * dt
    }
}

fn check_constant_initial(model: &PolyModel) -> Result<DVector<f64>, MomentError> {
    model.x0().cloned().ok_or(MomentError::NonConstantInitial)
}

/// `E[X_t] = g~_0(t)` on the grid, as `d x 1` columns.
pub fn first_moment_voc(model: &PolyModel, kernel: &Kernel, grid: Grid) -> Result<GridFunction, MomentError> {
    let res = Resolvent::new(kernel, model.b(), grid)?;
    Ok(first_moment_from(model, kernel, &res))
}

fn first_moment_from(model: &PolyModel, kernel: &Kernel, res: &Resolvent) -> GridFunction {
    let grid = res.grid();
    let dt = grid.step();
    let values = (0..=grid.steps())
        .map(|j| {
            let t = grid.time(j);
            let mut g = model.g0(t);
            // The resolvent holds R_B(t_l) on the lag cell (t_{l-1}, t_l].
            for l in 1..=j {
                let s = t - (l as f64 - 0.5) * dt;
                g -= res.r_b.at(l) * model.g0(s) * dt;
            }
            g += res.integral_e_b(kernel, j) * model.b0();
            DMatrix::from_column_slice(g.len(), 1, g.as_slice())
        })
        .collect();
    GridFunction::new(grid, values).expect("one value per grid point")
}

/// `E[X_t X_t^T]` on the grid by forward substitution in the second-moment convolution system.
pub fn second_moment_voc(model: &PolyModel, kernel: &Kernel, grid: Grid) -> Result<GridFunction, MomentError> {
    check_constant_initial(model)?;
    let d = model.dim();
    let res = Resolvent::new(kernel, model.b(), grid)?;
    let first = first_moment_from(model, kernel, &res);
    let m = grid.steps();
    // Expected diffusion matrix E[a(X_{t_l})] given the first and second moments at t_l.
    let mean_a = |g: &DMatrix<f64>, f: &DMatrix<f64>| {
        let mut a = model.a0().clone();
        for j in 0..d {
            a += model.a_lin(j) * g[(j, 0)];
            for l in 0..d {
                a += model.a_quad(j, l) * f[(j, l)];
            }
        }
        a
    };
    let mut out: Vec<DMatrix<f64>> = Vec::with_capacity(m + 1);
    let mut ea: Vec<DMatrix<f64>> = Vec::with_capacity(m + 1);
    for j in 0..=m {
        let g = first.at(j);
        let mut f = g * g.transpose();
        for (l, a) in ea.iter().enumerate() {
            f += res.cell_quadratic(j - l, a);
        }
        ea.push(mean_a(g, &f));
        out.push(f);
    }
    Ok(GridFunction::new(grid, out)?)
}

/// Moments of an affine model from the martingale recursion for `E[prod g~_t(T_n)]`.
///
/// Level `p` is driven by levels `p - 1` and `p - 2` only.
pub fn affine_moments_recursive(
    model: &PolyModel,
    kernel: &Kernel,
    order: usize,
    grid: Grid,
    opts: &SolveOptions,
) -> Result<MomentTable, MomentError> {
    if !model.is_affine() {
        return Err(MomentError::NotAffine);
    }
    if order == 0 {
        return Err(MomentError::Invalid("order N must be at least 1".into()));
    }
    let d = model.dim();
    let m = grid.steps();
    let n1 = m + 1;
    let res = Resolvent::new(kernel, model.b(), grid)?;
    let first = first_moment_from(model, kernel, &res);
    let weights = KernelWeights::with_pairs(kernel, grid)?;
    let dt = grid.step();
    let phi_bar: Vec<DMatrix<f64>> =
        std::iter::once(DMatrix::zeros(d, d)).chain((1..=m).map(|k| res.phi_bar(k))).collect();

    let sym = |a: &DMatrix<f64>| (a + a.transpose()) * 0.5;
    let mut mats = vec![(sym(model.a0()), PairSource::Lower)];
    for j in 0..d {
        mats.push((sym(model.a_lin(j)), PairSource::Insert(j)));
    }
    let mut tables = Vec::new();
    let mut channels = Vec::new();
    for (a, source) in mats {
        if a.amax() == 0.0 {
            continue;
        }
        let first_table = tables.len();
        let mut per_pair = vec![vec![0.0; n1 * n1]; d * d];
        for kn in 1..=m {
            let pa = &phi_bar[kn] * &a;
            for km in 1..=m {
                let pbt = phi_bar[km].transpose();
                let w = &a * weights.pair(kn, km) - &a * &pbt * weights.cell(kn) - &pa * weights.cell(km)
                    + &pa * &pbt * dt;
                for i in 0..d {
                    for k in 0..d {
                        per_pair[i * d + k][kn * n1 + km] = w[(i, k)];
                    }
                }
            }
        }
        tables.extend(per_pair);
        channels.push(PairChannel { weights: (0..d * d).map(|p| first_table + p).collect(), source });
    }

    let mut g = vec![vec![0.0; n1]; d];
    for t in 0..=m {
        for i in 0..d {
            g[i][t] = first.at(t)[(i, 0)];
        }
    }
    // Without drift and with a constant kernel the weights do not depend on the lags.
    let driftless = model.b0().amax() == 0.0 && model.b().amax() == 0.0;
    let collapsible = driftless && kernel.constant_value().is_some() && model.x0().is_some();
    let layout = if opts.allow_collapse && collapsible && opts.stop_at.is_none() { Layout::Collapsed } else { Layout::Full };
    let problem = StepProblem {
        dim: d,
        order,
        steps: m,
        horizon: grid.horizon(),
        layout,
        coeffs: Coefficients::of(model),
        cells: None,
        tables,
        channels,
        init: Init::Product(g),
        level0: 1.0,
        memory_limit: opts.memory_limit,
    };
    let out = problem.run(opts.stop_at)?;
    Ok(MomentTable::new("affine", grid, order, d, out.diagonal, Some(out.slice)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::moments::solve_moments;

    #[test]
    fn first_moment_constant_kernel() {
        let model = PolyModel::scalar(1.0, 0.0, 0.1, 0.0, 0.0, 0.0);
        let grid = Grid::new(1.0, 1000).unwrap();
        let g = first_moment_voc(&model, &Kernel::constant(1.0).unwrap(), grid).unwrap();
        assert!((g.at(1000)[(0, 0)] - 0.1f64.exp()).abs() < 2e-3);
    }

    #[test]
    fn first_moment_without_drift_is_initial() {
        let model = PolyModel::scalar(0.7, 0.0, 0.0, 0.1, 0.0, 0.0);
        let grid = Grid::new(1.0, 50).unwrap();
        let g = first_moment_voc(&model, &Kernel::fractional(0.2).unwrap(), grid).unwrap();
        assert!(g.values().iter().all(|v| v[(0, 0)] == 0.7));
    }

    #[test]
    fn second_moment_brownian() {
        let model = PolyModel::scalar(1.0, 0.0, 0.0, 0.04, 0.0, 0.0);
        let grid = Grid::new(1.0, 500).unwrap();
        let f = second_moment_voc(&model, &Kernel::constant(1.0).unwrap(), grid).unwrap();
        assert!((f.at(500)[(0, 0)] - 1.04).abs() < 1e-10);
    }

    #[test]
    fn second_moment_without_diffusion() {
        let model = PolyModel::scalar(1.0, 0.2, -0.5, 0.0, 0.0, 0.0);
        let kernel = Kernel::exponential(1.0).unwrap();
        let grid = Grid::new(1.0, 100).unwrap();
        let g = first_moment_voc(&model, &kernel, grid).unwrap();
        let f = second_moment_voc(&model, &kernel, grid).unwrap();
        for j in 0..=100 {
            assert!((f.at(j)[(0, 0)] - g.at(j)[(0, 0)].powi(2)).abs() < 1e-14);
        }
    }

    #[test]
    fn second_moment_black_scholes() {
        let model = PolyModel::scalar(1.0, 0.0, 0.1, 0.0, 0.0, 0.04);
        let grid = Grid::new(1.0, 2000).unwrap();
        let f = second_moment_voc(&model, &Kernel::constant(1.0).unwrap(), grid).unwrap();
        assert!((f.at(2000)[(0, 0)] / 0.24f64.exp() - 1.0).abs() < 1e-2);
    }

    #[test]
    fn affine_recursion_gaussian_fourth_moment() {
        let model = PolyModel::scalar(0.0, 0.0, 0.0, 0.09, 0.0, 0.0);
        let grid = Grid::new(1.0, 2000).unwrap();
        let t = affine_moments_recursive(&model, &Kernel::constant(1.0).unwrap(), 4, grid, &SolveOptions::default())
            .unwrap();
        let exact = 3.0 * 0.09f64.powi(2);
        assert!((t.moment(1.0, &[4]).unwrap() / exact - 1.0).abs() < 1e-2);
    }

    #[test]
    fn affine_recursion_tracks_step() {
        let model = PolyModel::scalar(0.5, 0.0, -0.3, 0.02, 0.1, 0.0);
        let kernel = Kernel::exponential(1.0).unwrap();
        let grid = Grid::new(1.0, 200).unwrap();
        let a = affine_moments_recursive(&model, &kernel, 3, grid, &SolveOptions::default()).unwrap();
        let b = solve_moments(&model, &kernel, 3, grid, &SolveOptions::default()).unwrap();
        for n in 1..=3usize {
            let (x, y) = (a.moment(1.0, &[n]).unwrap(), b.moment(1.0, &[n]).unwrap());
            assert!((x / y - 1.0).abs() < 1e-2, "{n}: {x} vs {y}");
        }
    }

    #[test]
    fn affine_rejects_quadratic_diffusion() {
        let model = PolyModel::scalar(1.0, 0.0, 0.1, 0.0, 0.0, 0.04);
        let grid = Grid::new(1.0, 10).unwrap();
        let r = affine_moments_recursive(&model, &Kernel::constant(1.0).unwrap(), 2, grid, &SolveOptions::default());
        assert_eq!(r.unwrap_err(), MomentError::NotAffine);
    }
}
