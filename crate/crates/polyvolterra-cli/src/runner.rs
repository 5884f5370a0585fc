//! Method dispatch, cross-method comparison and convergence studies.

use crate::config::{ExperimentConfig, Method, Target};
use crate::CliError;
use nalgebra::DVector;
use polyvolterra::convolution::Grid;
use polyvolterra::jump::{jump_dual_moment_inhom, jump_dual_moment_multi, JumpRun, ScalarCoefficients};
use polyvolterra::kernels::Kernel;
use polyvolterra::model::{PolyModel, StateSpace};
use polyvolterra::moments::{
    affine_moments_recursive, classical_moments_ode, first_moment_voc, second_moment_voc, solve_moments,
    solve_moments_picard, MomentTable, PicardOptions, SolveOptions,
};
use polyvolterra::sim::{mc_moment, simulate_ball, simulate_paths, PathEnsemble, SimConfig};
use polyvolterra::stats::Estimate;
use std::time::Instant;

/// Everything a method needs, built once from a config.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub model: PolyModel,
    pub kernel: Kernel,
    pub grid: Grid,
    pub order: usize,
    pub mc_seed: u64,
    pub jump_seed: u64,
}

impl Experiment {
    pub fn new(config: ExperimentConfig, seed: Option<u64>) -> Result<Self, CliError> {
        let model = config.model()?;
        let kernel = config.kernel()?;
        let grid = config.grid()?;
        let order = config.order();
        let mc_seed = seed.unwrap_or(config.mc.seed);
        let jump_seed = seed.unwrap_or(config.jump.seed);
        Ok(Self { config, model, kernel, grid, order, mc_seed, jump_seed })
    }

    pub fn targets(&self) -> &[Target] {
        &self.config.targets
    }

    fn mc_grid(&self) -> Result<Grid, String> {
        Grid::new(self.grid.horizon(), self.config.mc.m.unwrap_or(self.grid.steps())).map_err(|e| e.to_string())
    }

    fn picard_grid(&self) -> Result<Grid, String> {
        Grid::new(self.grid.horizon(), self.config.picard.m.unwrap_or(self.grid.steps())).map_err(|e| e.to_string())
    }

    /// Grid size a method runs on, for output rows.
    pub fn steps_for(&self, method: Method) -> usize {
        match method {
            Method::Mc => self.config.mc.m.unwrap_or(self.grid.steps()),
            Method::Picard => self.config.picard.m.unwrap_or(self.grid.steps()),
            Method::Jump | Method::Classical => 0,
            _ => self.grid.steps(),
        }
    }
}

/// One estimate of `E[X_t^alpha]`; `stderr` is zero for deterministic methods.
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub method: Method,
    pub t: f64,
    pub alpha: Vec<usize>,
    pub value: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone)]
pub struct MethodRun {
    pub method: Method,
    pub rows: Vec<Row>,
    /// Why the method did not run at all.
    pub inapplicable: Option<String>,
    /// Targets the method skipped, with reasons.
    pub skipped: Vec<(Target, String)>,
    pub seconds: f64,
}

/// Static applicability check; runtime failures are reported by [`run_method`].
pub fn applicability(exp: &Experiment, method: Method) -> Result<(), String> {
    let constant_x0 = exp.model.x0().is_some();
    match method {
        Method::Step | Method::Picard => Ok(()),
        Method::Voc => {
            if !constant_x0 {
                Err("needs a constant initial value".into())
            } else {
                Ok(())
            }
        }
        Method::Affine => {
            if exp.model.is_affine() {
                Ok(())
            } else {
                Err("needs A_ij = 0 (affine diffusion)".into())
            }
        }
        Method::Classical => {
            if exp.kernel.constant_value().is_none() {
                Err(format!("needs a constant kernel, got {}", exp.kernel.name()))
            } else if !constant_x0 {
                Err("needs a constant initial value".into())
            } else {
                Ok(())
            }
        }
        Method::Mc => Ok(()),
        Method::Jump => {
            let e = exp.kernel.jump_dual_eligibility(exp.grid.horizon());
            if !e.eligible {
                Err(format!("kernel not eligible: {}", e.reason))
            } else if !constant_x0 {
                Err("needs a constant initial value".into())
            } else {
                Ok(())
            }
        }
    }
}

fn lookup(table: &MomentTable, targets: &[Target], method: Method, skipped: &mut Vec<(Target, String)>) -> Vec<Row> {
    let mut rows = Vec::new();
    for t in targets {
        match table.moment(t.t, &t.alpha) {
            Ok(v) => rows.push(Row { method, t: t.t, alpha: t.alpha.clone(), value: v, stderr: 0.0 }),
            Err(e) => skipped.push((t.clone(), e.to_string())),
        }
    }
    rows
}

fn simulate(exp: &Experiment, grid: Grid, store: Vec<usize>, paths: usize) -> Result<PathEnsemble, String> {
    let mc = &exp.config.mc;
    let mut cfg = SimConfig::new(paths, exp.mc_seed).storing(store).with_policy(mc.policy.policy());
    cfg.assume_monotone_kernel = mc.assume_monotone_kernel;
    let out = match exp.model.state_space() {
        StateSpace::UnitBall { .. } => simulate_ball(&exp.model, &exp.kernel, grid, &cfg),
        _ => simulate_paths(&exp.model, &exp.kernel, grid, &cfg),
    };
    out.map_err(|e| e.to_string())
}

/// Runs one method on every target of the experiment.
pub fn run_method(exp: &Experiment, method: Method) -> MethodRun {
    let start = Instant::now();
    let mut skipped = Vec::new();
    let result = applicability(exp, method).and_then(|_| eval(exp, method, &mut skipped));
    let (rows, inapplicable) = match result {
        Ok(rows) => (rows, None),
        Err(reason) => (Vec::new(), Some(reason)),
    };
    MethodRun { method, rows, inapplicable, skipped, seconds: start.elapsed().as_secs_f64() }
}

fn eval(exp: &Experiment, method: Method, skipped: &mut Vec<(Target, String)>) -> Result<Vec<Row>, String> {
    let targets = exp.targets();
    let (model, kernel, grid, order) = (&exp.model, &exp.kernel, exp.grid, exp.order);
    let opts = SolveOptions::default();
    let s = |e: polyvolterra::moments::MomentError| e.to_string();
    match method {
        Method::Step => Ok(lookup(&solve_moments(model, kernel, order, grid, &opts).map_err(s)?, targets, method, skipped)),
        Method::Picard => {
            let mut popts = PicardOptions::default();
            if let Some(tol) = exp.config.picard.tol {
                popts.tol = tol;
            }
            let (table, _) = solve_moments_picard(model, kernel, order, exp.picard_grid()?, &popts).map_err(s)?;
            Ok(lookup(&table, targets, method, skipped))
        }
        Method::Affine => {
            Ok(lookup(&affine_moments_recursive(model, kernel, order, grid, &opts).map_err(s)?, targets, method, skipped))
        }
        Method::Voc => {
            let first = first_moment_voc(model, kernel, grid).map_err(s)?;
            let second = if targets.iter().any(|t| t.alpha.iter().sum::<usize>() == 2) {
                Some(second_moment_voc(model, kernel, grid).map_err(s)?)
            } else {
                None
            };
            let mut rows = Vec::new();
            for t in targets {
                let Some(j) = grid.index_of(t.t) else {
                    skipped.push((t.clone(), format!("time {} is not on the grid", t.t)));
                    continue;
                };
                let letters: Vec<usize> =
                    t.alpha.iter().enumerate().flat_map(|(i, &k)| std::iter::repeat_n(i, k)).collect();
                let value = match (letters.as_slice(), &second) {
                    ([], _) => 1.0,
                    ([i], _) => first.at(j)[(*i, 0)],
                    ([i, k], Some(f)) => f.at(j)[(*i, *k)],
                    _ => {
                        skipped.push((t.clone(), "only degrees up to 2 have closed variation-of-constants forms".into()));
                        continue;
                    }
                };
                rows.push(Row { method, t: t.t, alpha: t.alpha.clone(), value, stderr: 0.0 });
            }
            Ok(rows)
        }
        Method::Classical => {
            let c = kernel.constant_value().expect("checked by applicability");
            let scaled = model.scaled(c, c * c);
            let x0: DVector<f64> = model.x0().expect("checked by applicability").clone();
            let mut rows = Vec::new();
            for t in targets {
                let m = classical_moments_ode(&scaled, &x0, order, t.t);
                match m.get(&t.alpha) {
                    Some(v) => rows.push(Row { method, t: t.t, alpha: t.alpha.clone(), value: v, stderr: 0.0 }),
                    None => skipped.push((t.clone(), "degree above N".into())),
                }
            }
            Ok(rows)
        }
        Method::Mc => {
            let g = exp.mc_grid()?;
            let mut store = Vec::new();
            for t in targets {
                match g.index_of(t.t) {
                    Some(j) => store.push(j),
                    None => skipped.push((t.clone(), format!("time {} is not on the simulation grid", t.t))),
                }
            }
            if store.is_empty() {
                return Ok(Vec::new());
            }
            let ens = simulate(exp, g, store, exp.config.mc.paths)?;
            let mut rows = Vec::new();
            for t in targets.iter().filter(|t| g.index_of(t.t).is_some()) {
                let e = mc_moment(&ens, t.t, &t.alpha).map_err(|e| e.to_string())?;
                rows.push(Row { method, t: t.t, alpha: t.alpha.clone(), value: e.value, stderr: e.stderr });
            }
            Ok(rows)
        }
        Method::Jump => {
            let jb = &exp.config.jump;
            let mut run = JumpRun::new(jb.samples, exp.jump_seed);
            run.mode = jb.mode.mode();
            let mut rows = Vec::new();
            for t in targets {
                let e = jump_estimate(model, kernel, &t.alpha, t.t, &run)?;
                rows.push(Row { method, t: t.t, alpha: t.alpha.clone(), value: e.value, stderr: e.stderr });
            }
            Ok(rows)
        }
    }
}

/// Jump-dual estimate of `E[X_t^alpha]` for scalar or homogeneous multivariate models.
pub fn jump_estimate(model: &PolyModel, kernel: &Kernel, alpha: &[usize], t: f64, run: &JumpRun) -> Result<Estimate, String> {
    let x0 = model.x0().ok_or("needs a constant initial value")?;
    let out = if model.dim() == 1 {
        let c = ScalarCoefficients::of(model).map_err(|e| e.to_string())?;
        jump_dual_moment_inhom(c, kernel, x0[0], alpha[0], t, run)
    } else {
        jump_dual_moment_multi(model, kernel, alpha, t, run)
    };
    out.map_err(|e| e.to_string())
}

/// Runs every configured method (or all methods when none are listed).
pub fn run_experiment(exp: &Experiment) -> Vec<MethodRun> {
    let methods: Vec<Method> =
        if exp.config.methods.is_empty() { Method::ALL.to_vec() } else { exp.config.methods.clone() };
    methods.into_iter().map(|m| run_method(exp, m)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub t: f64,
    pub alpha: Vec<usize>,
    pub a: Method,
    pub b: Method,
    pub value_a: f64,
    pub value_b: f64,
    pub difference: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Pairwise comparison of all rows sharing a target.
///
/// Two deterministic methods must agree to `rel_tol` relative; a stochastic pair to
/// `sigmas` combined standard errors; a mixed pair gets both allowances added.
pub fn compare_estimators(runs: &[MethodRun], rel_tol: f64, sigmas: f64) -> Result<Vec<Comparison>, CliError> {
    let active: Vec<&MethodRun> = runs.iter().filter(|r| r.inapplicable.is_none()).collect();
    if active.len() < 2 {
        return Err(CliError::Config(format!("need >= 2 methods, {} applicable", active.len())));
    }
    let rows: Vec<&Row> = active.iter().flat_map(|r| r.rows.iter()).collect();
    let mut out = Vec::new();
    for (i, ra) in rows.iter().enumerate() {
        for rb in &rows[i + 1..] {
            if ra.t != rb.t || ra.alpha != rb.alpha || ra.method == rb.method {
                continue;
            }
            let diff = (ra.value - rb.value).abs();
            let scale = ra.value.abs().max(rb.value.abs());
            let se = (ra.stderr * ra.stderr + rb.stderr * rb.stderr).sqrt();
            let deterministic = !ra.method.is_stochastic() || !rb.method.is_stochastic();
            let mut tol = sigmas * se;
            if deterministic {
                tol += rel_tol * scale;
            }
            let tol = tol.max(1e-12 * scale.max(1.0));
            out.push(Comparison {
                t: ra.t,
                alpha: ra.alpha.clone(),
                a: ra.method,
                b: rb.method,
                value_a: ra.value,
                value_b: rb.value,
                difference: diff,
                tolerance: tol,
                pass: diff <= tol,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRow {
    pub param: usize,
    pub error: f64,
    /// Log-log slope against the previous row (`None` for the first row or zero errors).
    pub rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceStudy {
    pub method: Method,
    pub target: Target,
    pub reference: String,
    pub rows: Vec<ConvergenceRow>,
}

/// Step method: error against the classical closed form when the kernel is constant,
/// otherwise against the finest run; rates are orders in the step size.
/// Monte Carlo: the error column is the standard error; rates are slopes in the path count.
pub fn convergence_study(exp: &Experiment, method: Method, params: &[usize]) -> Result<ConvergenceStudy, CliError> {
    let target = exp
        .targets()
        .first()
        .cloned()
        .ok_or_else(|| CliError::Config("a convergence study needs at least one target".into()))?;
    if params.len() < 2 {
        return Err(CliError::Config("a convergence study needs at least two parameters".into()));
    }
    let mut params = params.to_vec();
    params.sort_unstable();
    let fail = |e: String| CliError::Method(e);
    let (reference, errors, xs): (String, Vec<(usize, f64)>, Vec<f64>) = match method {
        Method::Step => {
            let at = |m: usize| -> Result<f64, CliError> {
                let g = Grid::new(exp.grid.horizon(), m).map_err(|e| CliError::Config(e.to_string()))?;
                let t = solve_moments(&exp.model, &exp.kernel, exp.order, g, &SolveOptions::default())
                    .map_err(|e| fail(e.to_string()))?;
                t.moment(target.t, &target.alpha).map_err(|e| fail(e.to_string()))
            };
            let closed = match (exp.kernel.constant_value(), exp.model.x0()) {
                (Some(c), Some(x0)) => classical_moments_ode(&exp.model.scaled(c, c * c), x0, exp.order, target.t)
                    .get(&target.alpha),
                _ => None,
            };
            let (label, reference, used) = match closed {
                Some(v) => ("closed form".to_string(), v, params.clone()),
                None => {
                    let finest = *params.last().unwrap();
                    (format!("step M={finest}"), at(finest)?, params[..params.len() - 1].to_vec())
                }
            };
            let mut errs = Vec::new();
            for &m in &used {
                errs.push((m, (at(m)? - reference).abs()));
            }
            let xs = used.iter().map(|&m| exp.grid.horizon() / m as f64).collect();
            (label, errs, xs)
        }
        Method::Mc => {
            let g = exp.mc_grid().map_err(CliError::Config)?;
            let j = g.index_of(target.t).ok_or_else(|| CliError::Config("target time is off the simulation grid".into()))?;
            let mut errs = Vec::new();
            for &n in &params {
                let ens = simulate(exp, g, vec![j], n).map_err(fail)?;
                let e = mc_moment(&ens, target.t, &target.alpha).map_err(|e| fail(e.to_string()))?;
                errs.push((n, e.stderr));
            }
            ("standard error".to_string(), errs, params.iter().map(|&n| n as f64).collect())
        }
        other => return Err(CliError::Config(format!("convergence studies support step and mc, not {}", other.name()))),
    };
    let mut rows = Vec::new();
    for (i, &(p, e)) in errors.iter().enumerate() {
        let rate = if i == 0 || e <= 0.0 || errors[i - 1].1 <= 0.0 {
            None
        } else {
            Some((e / errors[i - 1].1).ln() / (xs[i] / xs[i - 1]).ln())
        };
        rows.push(ConvergenceRow { param: p, error: e, rate });
    }
    Ok(ConvergenceStudy { method, target, reference, rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bs() -> Experiment {
        let text = r#"
            targets = [{ t = 1.0, alpha = [1] }, { t = 1.0, alpha = [2] }]
            [model]
            d = 1
            x0 = [1.0]
            B = [0.1]
            Aij = [{ i = 1, j = 1, A = [0.04] }]
            [kernel]
            type = "constant"
            [grid]
            T = 1.0
            M = 400
            [mc]
            paths = 20000
            seed = 3
            M = 50
            [jump]
            samples = 100
            seed = 1
            [picard]
            M = 16
        "#;
        Experiment::new(ExperimentConfig::from_toml(text).unwrap(), None).unwrap()
    }

    #[test]
    fn affine_is_inapplicable_for_quadratic_diffusion() {
        let exp = bs();
        let r = run_method(&exp, Method::Affine);
        assert!(r.inapplicable.is_some());
        assert!(r.rows.is_empty());
    }

    #[test]
    fn classical_and_jump_are_exact_for_black_scholes() {
        let exp = bs();
        for m in [Method::Classical, Method::Jump] {
            let r = run_method(&exp, m);
            assert!(r.inapplicable.is_none(), "{:?}", r.inapplicable);
            let exact = [0.1f64.exp(), 0.24f64.exp()];
            for (row, e) in r.rows.iter().zip(exact) {
                assert!((row.value / e - 1.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn single_method_cannot_be_compared() {
        let exp = bs();
        let runs = vec![run_method(&exp, Method::Classical), run_method(&exp, Method::Affine)];
        assert!(matches!(compare_estimators(&runs, 1e-3, 3.0), Err(CliError::Config(_))));
    }

    #[test]
    fn mixed_pair_tolerance_adds_both_allowances() {
        let row = |method, value, stderr| Row { method, t: 1.0, alpha: vec![1], value, stderr };
        let runs = vec![
            MethodRun { method: Method::Step, rows: vec![row(Method::Step, 1.0, 0.0)], inapplicable: None, skipped: vec![], seconds: 0.0 },
            MethodRun { method: Method::Mc, rows: vec![row(Method::Mc, 1.02, 0.01)], inapplicable: None, skipped: vec![], seconds: 0.0 },
        ];
        let c = compare_estimators(&runs, 1e-2, 3.0).unwrap();
        assert_eq!(c.len(), 1);
        assert!((c[0].tolerance - (0.03 + 0.0102)).abs() < 1e-12);
        assert!(c[0].pass);
    }
}
