//! Moments as polynomials in the initial state.
//!
//! With constant `g0 = X0`, the lifted moments are `sum_beta C_beta X0^beta`. Each
//! `C_beta` solves the same linear system as the moments, started from the indicator
//! `1{alpha(w) = beta}`, so the stepper is reused unchanged.

use super::stepper::Init;
use super::{full_step_problem, MomentError, MomentTable, SolveOptions};
use crate::convolution::Grid;
use crate::kernels::Kernel;
use crate::model::{multi_indices, PolyModel};

/// Coefficient tables `C_beta` for every `|beta| <= N`.
#[derive(Debug, Clone)]
pub struct CoeffTable {
    order: usize,
    dim: usize,
    betas: Vec<Vec<usize>>,
    tables: Vec<MomentTable>,
}

impl CoeffTable {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn betas(&self) -> &[Vec<usize>] {
        &self.betas
    }

    pub fn table(&self, beta: &[usize]) -> Option<&MomentTable> {
        self.betas.iter().position(|b| b == beta).map(|i| &self.tables[i])
    }

    /// Diagonal coefficient `c_beta(t)` of `E[X_t^alpha]`.
    pub fn coefficient(&self, t: f64, alpha: &[usize], beta: &[usize]) -> Result<f64, MomentError> {
        let table = self
            .table(beta)
            .ok_or_else(|| MomentError::Invalid(format!("no coefficient table for beta = {beta:?}")))?;
        table.moment(t, alpha)
    }
}

/// Solves for one coefficient family `C_beta` (the initial state of `model` is ignored).
pub fn solve_coefficients(
    model: &PolyModel,
    kernel: &Kernel,
    order: usize,
    beta: &[usize],
    grid: Grid,
    opts: &SolveOptions,
) -> Result<MomentTable, MomentError> {
    let d = model.dim();
    if beta.len() != d {
        return Err(MomentError::MultiIndex { got: beta.len(), dim: d });
    }
    let p: usize = beta.iter().sum();
    if p > order {
        return Err(MomentError::Level { requested: p, order });
    }
    if order == 0 {
        return Err(MomentError::Invalid("order N must be at least 1".into()));
    }
    let level0 = if p == 0 { 1.0 } else { 0.0 };
    let problem = full_step_problem(model, kernel, order, grid, opts, Init::Indicator(beta.to_vec()), level0)?;
    let out = problem.run(opts.stop_at)?;
    Ok(MomentTable::new("coefficients", grid, order, d, out.diagonal, Some(out.slice)))
}

pub fn solve_all_coefficients(
    model: &PolyModel,
    kernel: &Kernel,
    order: usize,
    grid: Grid,
    opts: &SolveOptions,
) -> Result<CoeffTable, MomentError> {
    let d = model.dim();
    let betas = multi_indices(order, d);
    let tables = betas
        .iter()
        .map(|b| solve_coefficients(model, kernel, order, b, grid, opts))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(CoeffTable { order, dim: d, betas, tables })
}

/// `sum_beta c_beta(t) x0^beta` for the diagonal moment `alpha`.
pub fn reconstruct_moment(table: &CoeffTable, x0: &[f64], t: f64, alpha: &[usize]) -> Result<f64, MomentError> {
    if x0.len() != table.dim {
        return Err(MomentError::MultiIndex { got: x0.len(), dim: table.dim });
    }
    let mut total = 0.0;
    for (beta, tab) in table.betas.iter().zip(&table.tables) {
        let c = tab.moment(t, alpha)?;
        let mono: f64 = beta.iter().zip(x0).map(|(&k, &x)| x.powi(k as i32)).product();
        total += c * mono;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indicator_at_time_zero() {
        let model = PolyModel::scalar(1.0, 0.1, -0.2, 0.03, 0.05, 0.02);
        let kernel = Kernel::exponential(1.0).unwrap();
        let grid = Grid::new(0.5, 10).unwrap();
        let all = solve_all_coefficients(&model, &kernel, 2, grid, &SolveOptions::default()).unwrap();
        for beta in all.betas() {
            for alpha in all.betas() {
                let c = all.coefficient(0.0, alpha, beta).unwrap();
                assert_eq!(c, if alpha == beta { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn homogeneous_linear_keeps_top_degree_only() {
        let model = PolyModel::scalar(1.0, 0.0, 0.3, 0.0, 0.0, 0.1);
        let kernel = Kernel::exponential(2.0).unwrap();
        let grid = Grid::new(1.0, 20).unwrap();
        let all = solve_all_coefficients(&model, &kernel, 3, grid, &SolveOptions::default()).unwrap();
        for k in 1..=3usize {
            for b in 0..k {
                assert_eq!(all.coefficient(1.0, &[k], &[b]).unwrap(), 0.0);
            }
            assert!(all.coefficient(1.0, &[k], &[k]).unwrap() > 1.0);
        }
    }
}
