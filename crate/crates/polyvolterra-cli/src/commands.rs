//! Subcommand bodies shared by the binary and the tests.

use crate::config::{ExperimentConfig, Method, Target};
use crate::output::*;
use crate::runner::*;
use crate::CliError;
use polyvolterra::jump::JumpRun;
use polyvolterra::model::{check_ball_drift_condition, multi_indices, DriftCheck, StateSpace};
use polyvolterra::sim::{invariance_report, mc_moment, simulate_ball, simulate_paths, SimConfig};
use serde_json::json;
use std::path::{Path, PathBuf};

/// Result of a subcommand: whether every check passed and the files written.
#[derive(Debug, Clone, Default)]
pub struct Outcome {
    pub pass: bool,
    pub files: Vec<PathBuf>,
    pub lines: Vec<String>,
}

impl Outcome {
    fn ok(files: Vec<PathBuf>, lines: Vec<String>) -> Self {
        Self { pass: true, files, lines }
    }
}

/// Options shared by all subcommands.
#[derive(Debug, Clone, Default)]
pub struct Global {
    pub config: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
}

impl Global {
    fn load(&self) -> Result<ExperimentConfig, CliError> {
        let path = self.config.as_ref().ok_or_else(|| CliError::Config("--config is required".into()))?;
        ExperimentConfig::load(path)
    }

    fn dir(&self, cfg: &ExperimentConfig) -> PathBuf {
        self.out_dir.clone().or_else(|| cfg.output.dir.as_ref().map(PathBuf::from)).unwrap_or_else(|| PathBuf::from("."))
    }

    fn output(&self, cfg: &ExperimentConfig, given: &Option<PathBuf>, default: &str) -> PathBuf {
        match given {
            Some(p) if p.is_absolute() || self.out_dir.is_none() => p.clone(),
            Some(p) => self.dir(cfg).join(p),
            None => self.dir(cfg).join(default),
        }
    }
}

fn base_manifest(g: &Global, cfg: &ExperimentConfig, exp: &Experiment, command: &str) -> serde_json::Value {
    json!({
        "command": command,
        "config_path": g.config.as_ref().map(|p| p.display().to_string()),
        "config": cfg,
        "seeds": { "mc": exp.mc_seed, "jump": exp.jump_seed },
        "grid": {
            "T": exp.grid.horizon(),
            "M": exp.grid.steps(),
            "N": exp.order,
            "mc_M": exp.steps_for(Method::Mc),
            "picard_M": exp.steps_for(Method::Picard),
        },
        "threads": g.threads,
        "assumptions": { "jump_moment_bounds": cfg.jump.assume_moment_bounds },
    })
}

fn merge(mut a: serde_json::Value, b: serde_json::Value) -> serde_json::Value {
    if let (serde_json::Value::Object(x), serde_json::Value::Object(y)) = (&mut a, b) {
        x.extend(y);
    }
    a
}

#[derive(Debug, Clone, Default)]
pub struct MomentsArgs {
    pub n: Option<usize>,
    pub m: Option<usize>,
    pub t: Option<f64>,
    pub method: Option<String>,
    pub out: Option<PathBuf>,
}

fn apply_grid_overrides(cfg: &mut ExperimentConfig, n: Option<usize>, m: Option<usize>, t: Option<f64>) -> Result<(), CliError> {
    if let Some(n) = n {
        cfg.grid.n = Some(n);
    }
    if let Some(m) = m {
        cfg.grid.m = m;
    }
    if let Some(t) = t {
        cfg.grid.t = t;
    }
    cfg.check()
}

/// Targets from the config, or every multi-index of degree `<= N` on the method's grid.
fn targets_or_all(exp: &Experiment, method: Method) -> Vec<Target> {
    if !exp.targets().is_empty() {
        return exp.targets().to_vec();
    }
    let horizon = exp.grid.horizon();
    let times: Vec<f64> = match method {
        Method::Classical | Method::Jump => vec![horizon],
        _ => {
            let m = exp.steps_for(method);
            (0..=m).map(|j| horizon * j as f64 / m as f64).collect()
        }
    };
    let alphas = multi_indices(exp.order, exp.model.dim());
    times.iter().flat_map(|&t| alphas.iter().map(move |a| Target { t, alpha: a.clone() })).collect()
}

pub fn moments(g: &Global, a: &MomentsArgs) -> Result<Outcome, CliError> {
    let mut cfg = g.load()?;
    apply_grid_overrides(&mut cfg, a.n, a.m, a.t)?;
    let method = match &a.method {
        None => Method::Step,
        Some(s) => Method::parse(s).ok_or_else(|| CliError::Config(format!("unknown method {s}")))?,
    };
    if method.is_stochastic() {
        return Err(CliError::Config("use `simulate` or `jump-dual` for stochastic methods".into()));
    }
    let mut exp = Experiment::new(cfg.clone(), g.seed)?;
    exp.config.targets = targets_or_all(&exp, method);
    let run = run_method(&exp, method);
    if let Some(why) = &run.inapplicable {
        return Err(CliError::Method(format!("{}: {why}", method.name())));
    }
    let path = g.output(&cfg, &a.out, &format!("moments_{}.csv", method.name()));
    write_csv(&path, &MOMENT_HEADER, moment_rows(&run, exp.steps_for(method), exp.order))?;
    let manifest = write_manifest(
        &g.dir(&cfg),
        merge(
            base_manifest(g, &cfg, &exp, "moments"),
            json!({ "methods": [method_summary(&run, exp.steps_for(method))], "outputs": [path.display().to_string()] }),
        ),
    )?;
    let mut lines = vec![format!("{} rows from {} written to {}", run.rows.len(), method.name(), path.display())];
    lines.extend(run.skipped.iter().map(|(t, why)| format!("skipped {} at t={}: {why}", alpha_label(&t.alpha), t.t)));
    Ok(Outcome { pass: !run.rows.is_empty(), files: vec![path, manifest], lines })
}

#[derive(Debug, Clone, Default)]
pub struct SimulateArgs {
    pub paths: Option<usize>,
    pub m: Option<usize>,
    pub out: Option<PathBuf>,
    /// Also write the first `n` paths at every grid time.
    pub dump_paths: Option<usize>,
}

pub fn simulate(g: &Global, a: &SimulateArgs) -> Result<Outcome, CliError> {
    let mut cfg = g.load()?;
    if let Some(p) = a.paths {
        cfg.mc.paths = p;
    }
    if let Some(m) = a.m {
        cfg.mc.m = Some(m);
    }
    let exp = Experiment::new(cfg.clone(), g.seed)?;
    let steps = exp.steps_for(Method::Mc);
    let grid = polyvolterra::convolution::Grid::new(exp.grid.horizon(), steps).map_err(|e| CliError::Config(e.to_string()))?;
    let mut times: Vec<f64> = exp.targets().iter().map(|t| t.t).collect();
    if times.is_empty() {
        times = vec![0.5 * grid.horizon(), grid.horizon()];
    }
    times.sort_by(|x, y| x.total_cmp(y));
    times.dedup();
    let store: Vec<usize> = times
        .iter()
        .map(|&t| grid.index_of(t).ok_or_else(|| CliError::Config(format!("time {t} is not on the simulation grid"))))
        .collect::<Result<_, _>>()?;
    let run = |paths: usize, store: Option<Vec<usize>>| {
        let mut sc = SimConfig::new(paths, exp.mc_seed).with_policy(cfg.mc.policy.policy());
        sc.store = store;
        sc.assume_monotone_kernel = cfg.mc.assume_monotone_kernel;
        match exp.model.state_space() {
            StateSpace::UnitBall { .. } => simulate_ball(&exp.model, &exp.kernel, grid, &sc),
            _ => simulate_paths(&exp.model, &exp.kernel, grid, &sc),
        }
        .map_err(|e| CliError::Method(e.to_string()))
    };
    let ens = run(cfg.mc.paths, Some(store))?;
    let alphas = multi_indices(exp.order, exp.model.dim());
    let mut rows = Vec::new();
    for &t in &times {
        for alpha in &alphas {
            let e = mc_moment(&ens, t, alpha).map_err(|e| CliError::Method(e.to_string()))?;
            rows.push(vec![num(t), alpha_label(alpha), num(e.value), num(e.stderr)]);
        }
    }
    let path = g.output(&cfg, &a.out, "simulate.csv");
    write_csv(&path, &["t", "alpha", "estimate", "stderr"], rows)?;
    let mut files = vec![path.clone()];
    if let Some(n) = a.dump_paths {
        // Paths depend only on the seed and their index, so a small ensemble reproduces them.
        let small = run(n.min(cfg.mc.paths), None)?;
        let d = exp.model.dim();
        let mut header: Vec<String> = vec!["path_id".into(), "t".into()];
        header.extend((1..=d).map(|i| format!("x_{i}")));
        let mut dump = Vec::new();
        for p in 0..small.n_paths() {
            for j in 0..=steps {
                if let Some(x) = small.state(j, p) {
                    let mut r = vec![p.to_string(), num(grid.time(j))];
                    r.extend(x.iter().map(|&v| num(v)));
                    dump.push(r);
                }
            }
        }
        let dump_path = path.with_file_name(format!(
            "{}_paths.csv",
            path.file_stem().and_then(|s| s.to_str()).unwrap_or("simulate")
        ));
        let h: Vec<&str> = header.iter().map(String::as_str).collect();
        write_csv(&dump_path, &h, dump)?;
        files.push(dump_path);
    }
    let invariance = invariance_report(&ens, exp.model.state_space()).map(|r| {
        json!({
            "max_excursion": r.max_excursion,
            "q99_excursion": r.q99_excursion,
            "projected_fraction": r.projected_fraction,
            "post_violation": r.post_violation,
            "inside_fraction": r.inside_fraction,
        })
    });
    let manifest = write_manifest(
        &g.dir(&cfg),
        merge(
            base_manifest(g, &cfg, &exp, "simulate"),
            json!({
                "scheme": ens.scheme(),
                "paths": ens.n_paths(),
                "aborted_paths": ens.aborted_paths(),
                "clip_magnitude": ens.clip_magnitude(),
                "invariance": invariance,
                "outputs": files.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
            }),
        ),
    )?;
    files.push(manifest);
    let lines = vec![format!(
        "{} paths ({} aborted) summarized in {}",
        ens.n_paths(),
        ens.aborted_paths(),
        path.display()
    )];
    Ok(Outcome::ok(files, lines))
}

#[derive(Debug, Clone, Default)]
pub struct JumpArgs {
    /// Scalar exponents, one row each.
    pub k: Vec<usize>,
    pub kvec: Option<Vec<usize>>,
    pub samples: Option<usize>,
    pub signed: bool,
    pub out: Option<PathBuf>,
}

pub fn jump_dual(g: &Global, a: &JumpArgs) -> Result<Outcome, CliError> {
    let mut cfg = g.load()?;
    if let Some(s) = a.samples {
        cfg.jump.samples = s;
    }
    if a.signed {
        cfg.jump.mode = crate::config::ModeName::Signed;
    }
    let exp = Experiment::new(cfg.clone(), g.seed)?;
    let d = exp.model.dim();
    let kvecs: Vec<Vec<usize>> = match (&a.kvec, a.k.is_empty()) {
        (Some(v), true) => vec![v.clone()],
        (None, false) if d == 1 => a.k.iter().map(|&k| vec![k]).collect(),
        (None, false) => return Err(CliError::Config("--k is for one-dimensional models; use --kvec".into())),
        (Some(_), false) => return Err(CliError::Config("give either --k or --kvec".into())),
        (None, true) => return Err(CliError::Config("one of --k or --kvec is required".into())),
    };
    if let Some(v) = kvecs.iter().find(|v| v.len() != d) {
        return Err(CliError::Config(format!("--kvec {v:?} does not have length {d}")));
    }
    let mut run = JumpRun::new(cfg.jump.samples, exp.jump_seed);
    run.mode = cfg.jump.mode.mode();
    let mut rows = Vec::new();
    let mut lines = Vec::new();
    for kv in &kvecs {
        let e = jump_estimate(&exp.model, &exp.kernel, kv, exp.grid.horizon(), &run).map_err(CliError::Method)?;
        let label = if d == 1 { kv[0].to_string() } else { alpha_label(kv) };
        lines.push(format!("k={label}: {} (stderr {:.3e})", num(e.value), e.stderr));
        rows.push(vec![label, num(e.value), num(e.stderr), e.samples.to_string(), run.mode.name().into()]);
    }
    let path = g.output(&cfg, &a.out, "jump_dual.csv");
    write_csv(&path, &["k", "estimate", "stderr", "n", "mode"], rows)?;
    let manifest = write_manifest(
        &g.dir(&cfg),
        merge(base_manifest(g, &cfg, &exp, "jump-dual"), json!({ "mode": run.mode.name(), "outputs": [path.display().to_string()] })),
    )?;
    Ok(Outcome::ok(vec![path, manifest], lines))
}

/// Runs every configured method, writes per-method CSVs, the pairwise comparison and a manifest.
pub fn compare(g: &Global) -> Result<Outcome, CliError> {
    let cfg = g.load()?;
    compare_config(g, cfg)
}

pub fn compare_config(g: &Global, cfg: ExperimentConfig) -> Result<Outcome, CliError> {
    let exp = Experiment::new(cfg.clone(), g.seed)?;
    let dir = g.dir(&cfg);
    let base = base_manifest(g, &cfg, &exp, "compare");
    if exp.targets().is_empty() {
        let manifest = write_manifest(&dir, merge(base, json!({ "methods": [], "outputs": [] })))?;
        return Ok(Outcome::ok(vec![manifest], vec!["no targets; manifest only".into()]));
    }
    let runs = run_experiment(&exp);
    let comparisons = compare_estimators(&runs, cfg.compare.rel_tol, cfg.compare.sigmas)?;
    let mut files = Vec::new();
    let mut lines = Vec::new();
    for r in &runs {
        match &r.inapplicable {
            Some(why) => lines.push(format!("{:<9} inapplicable: {why}", r.method.name())),
            None => {
                let p = method_file(&dir, r.method);
                write_csv(&p, &RESULT_HEADER, result_rows(r))?;
                files.push(p);
            }
        }
    }
    let cpath = dir.join("comparison.csv");
    write_csv(&cpath, &COMPARE_HEADER, comparison_rows(&comparisons))?;
    files.push(cpath);
    for c in &comparisons {
        lines.push(format!(
            "{} t={} {} vs {}: |diff| {:.3e} <= {:.3e}  {}",
            alpha_label(&c.alpha),
            c.t,
            c.a.name(),
            c.b.name(),
            c.difference,
            c.tolerance,
            if c.pass { "PASS" } else { "FAIL" }
        ));
    }
    let failures = comparisons.iter().filter(|c| !c.pass).count();
    let manifest = write_manifest(
        &dir,
        merge(
            base,
            json!({
                "methods": runs.iter().map(|r| method_summary(r, exp.steps_for(r.method))).collect::<Vec<_>>(),
                "comparisons": comparisons.len(),
                "failures": failures,
                "tolerances": { "rel_tol": cfg.compare.rel_tol, "sigmas": cfg.compare.sigmas },
                "outputs": files.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
            }),
        ),
    )?;
    files.push(manifest);
    Ok(Outcome { pass: failures == 0, files, lines })
}

#[derive(Debug, Clone, Default)]
pub struct ConvergeArgs {
    pub method: String,
    pub list: Vec<usize>,
    pub out: Option<PathBuf>,
}

pub fn converge(g: &Global, a: &ConvergeArgs) -> Result<Outcome, CliError> {
    let cfg = g.load()?;
    let method = Method::parse(&a.method).ok_or_else(|| CliError::Config(format!("unknown method {}", a.method)))?;
    let exp = Experiment::new(cfg.clone(), g.seed)?;
    let study = convergence_study(&exp, method, &a.list)?;
    let path = g.output(&cfg, &a.out, &format!("converge_{}.csv", method.name()));
    write_csv(&path, &CONVERGE_HEADER, convergence_rows(&study))?;
    let manifest = write_manifest(
        &g.dir(&cfg),
        merge(
            base_manifest(g, &cfg, &exp, "converge"),
            json!({
                "method": method.name(),
                "params": a.list,
                "target": { "t": study.target.t, "alpha": study.target.alpha },
                "reference": study.reference,
                "outputs": [path.display().to_string()],
            }),
        ),
    )?;
    let lines = study
        .rows
        .iter()
        .map(|r| format!("{:>8}  {:.3e}  {}", r.param, r.error, r.rate.map(|x| format!("{x:.3}")).unwrap_or_default()))
        .collect();
    Ok(Outcome::ok(vec![path, manifest], lines))
}

pub fn validate(g: &Global) -> Result<Outcome, CliError> {
    let cfg = g.load()?;
    let exp = Experiment::new(cfg.clone(), g.seed)?;
    let mut pass = true;
    let mut lines = Vec::new();
    let model_report = match exp.model.validate(2000, g.seed.unwrap_or(1)) {
        Ok(r) => {
            lines.push(format!(
                "model: PASS (min eigenvalue {:.3e}, growth constant {:.3})",
                r.min_eigenvalue, r.growth_constant
            ));
            json!({ "status": "PASS", "min_eigenvalue": r.min_eigenvalue, "symmetry_residual": r.symmetry_residual,
                    "growth_constant": r.growth_constant, "affine": r.affine, "samples": r.samples })
        }
        Err(e) => {
            pass = false;
            lines.push(format!("model: FAIL ({e})"));
            json!({ "status": "FAIL", "error": e.to_string() })
        }
    };
    let drift = if matches!(exp.model.state_space(), StateSpace::UnitBall { .. }) {
        match check_ball_drift_condition(exp.model.b0(), exp.model.b(), 10_000) {
            DriftCheck::Fail { witness, value } => {
                pass = false;
                lines.push(format!("ball drift condition: FAIL at {witness:?} (value {value:.3e})"));
                json!({ "status": "FAIL", "witness": witness, "value": value })
            }
            _ => {
                lines.push("ball drift condition: PASS".into());
                json!({ "status": "PASS" })
            }
        }
    } else {
        serde_json::Value::Null
    };
    let elig = exp.kernel.jump_dual_eligibility(exp.grid.horizon());
    let gamma = exp.kernel.estimate_gamma(exp.grid.horizon());
    lines.push(format!(
        "kernel {}: gamma ~ {:.3}{}, jump eligible: {} ({})",
        exp.kernel.name(),
        gamma.gamma,
        if gamma.poor_fit { " (poor fit)" } else { "" },
        elig.eligible,
        elig.reason
    ));
    let methods: Vec<Method> = if cfg.methods.is_empty() { Method::ALL.to_vec() } else { cfg.methods.clone() };
    let mut applic = serde_json::Map::new();
    for m in methods {
        let r = applicability(&exp, m);
        lines.push(format!("{:<9} {}", m.name(), r.as_ref().map(|_| "applicable".to_string()).unwrap_or_else(|e| e.clone())));
        applic.insert(m.name().into(), json!(r.err().unwrap_or_else(|| "applicable".into())));
    }
    let manifest = write_manifest(
        &g.dir(&cfg),
        merge(
            base_manifest(g, &cfg, &exp, "validate"),
            json!({
                "model": model_report,
                "ball_drift": drift,
                "kernel": { "name": exp.kernel.name(), "gamma": gamma.gamma, "gamma_poor_fit": gamma.poor_fit,
                            "jump_eligible": elig.eligible, "reason": elig.reason },
                "applicability": applic,
            }),
        ),
    )?;
    Ok(Outcome { pass, files: vec![manifest], lines })
}

pub fn ensure_dir(p: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))
}
