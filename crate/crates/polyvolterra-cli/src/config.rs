//! Experiment configuration in TOML.
//!
//! ```toml
//! [model]
//! d = 1
//! x0 = [1.0]
//! B = [0.1]                     # row-major
//! Aij = [{ i = 1, j = 1, A = [0.04] }]
//!
//! [kernel]
//! type = "constant"
//! value = 1.0
//!
//! [grid]
//! T = 1.0
//! M = 2000
//!
//! targets = [{ t = 1.0, alpha = [2] }]
//! methods = ["step", "classical", "jump"]
//! ```

use crate::CliError;
use nalgebra::{DMatrix, DVector};
use polyvolterra::convolution::Grid;
use polyvolterra::jump::SignMode;
use polyvolterra::kernels::Kernel;
use polyvolterra::model::{InitialCurve, JacobiParams, PolyModel, StateSpace};
use polyvolterra::sim::NegativeDiffusion;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelBlock,
    pub kernel: KernelBlock,
    pub grid: GridBlock,
    #[serde(default)]
    pub targets: Vec<Target>,
    #[serde(default)]
    pub methods: Vec<Method>,
    #[serde(default)]
    pub mc: McBlock,
    #[serde(default)]
    pub jump: JumpBlock,
    #[serde(default)]
    pub picard: PicardBlock,
    #[serde(default)]
    pub compare: CompareBlock,
    #[serde(default)]
    pub output: OutputBlock,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBlock {
    pub d: usize,
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
    #[serde(default)]
    pub g0_table: Option<G0Table>,
    #[serde(default)]
    pub b0: Option<Vec<f64>>,
    #[serde(default, rename = "B")]
    pub b: Option<Vec<f64>>,
    #[serde(default, rename = "A0")]
    pub a0: Option<Vec<f64>>,
    /// `A_i` for `i = 1..d`, each row-major.
    #[serde(default, rename = "Ai")]
    pub a_lin: Vec<Vec<f64>>,
    #[serde(default, rename = "Aij")]
    pub a_quad: Vec<QuadTerm>,
    #[serde(default)]
    pub state_space: StateSpaceBlock,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct G0Table {
    pub times: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct QuadTerm {
    pub i: usize,
    pub j: usize,
    #[serde(rename = "A")]
    pub a: Vec<f64>,
}

#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum StateSpaceBlock {
    #[default]
    Free,
    Ball {
        c: f64,
    },
    Jacobi {
        lower: f64,
        upper: f64,
        lambda: f64,
        mean: f64,
        c: f64,
    },
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelBlock {
    Constant {
        #[serde(default = "one")]
        value: f64,
    },
    Fractional {
        hurst: f64,
    },
    Exponential {
        beta: f64,
    },
    Sum {
        members: Vec<KernelBlock>,
    },
    Product {
        members: Vec<KernelBlock>,
    },
    Tabulated {
        times: Vec<f64>,
        values: Vec<f64>,
    },
    ShiftedFractional {
        hurst: f64,
        shift: f64,
        #[serde(default = "default_samples")]
        samples: usize,
    },
}

fn one() -> f64 {
    1.0
}

fn default_samples() -> usize {
    400
}

#[derive(Debug, Clone, Copy, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct GridBlock {
    #[serde(rename = "T")]
    pub t: f64,
    #[serde(rename = "M")]
    pub m: usize,
    /// Moment order; defaults to the largest target degree.
    #[serde(default, rename = "N")]
    pub n: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct Target {
    pub t: f64,
    pub alpha: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Deserialize, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Step,
    Picard,
    Voc,
    Affine,
    Classical,
    Mc,
    Jump,
}

impl Method {
    pub const ALL: [Method; 7] =
        [Method::Step, Method::Picard, Method::Voc, Method::Affine, Method::Classical, Method::Mc, Method::Jump];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Step => "step",
            Method::Picard => "picard",
            Method::Voc => "voc",
            Method::Affine => "affine",
            Method::Classical => "classical",
            Method::Mc => "mc",
            Method::Jump => "jump",
        }
    }

    pub fn parse(s: &str) -> Option<Method> {
        Method::ALL.into_iter().find(|m| m.name() == s)
    }

    pub fn is_stochastic(&self) -> bool {
        matches!(self, Method::Mc | Method::Jump)
    }
}

#[derive(Debug, Clone, Copy, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct McBlock {
    pub paths: usize,
    pub seed: u64,
    /// Grid size for simulation; defaults to `grid.M`.
    #[serde(default, rename = "M")]
    pub m: Option<usize>,
    #[serde(default)]
    pub policy: PolicyName,
    #[serde(default)]
    pub assume_monotone_kernel: bool,
}

impl Default for McBlock {
    fn default() -> Self {
        Self { paths: 100_000, seed: 1, m: None, policy: PolicyName::Abort, assume_monotone_kernel: false }
    }
}

#[derive(Debug, Clone, Copy, Default, Deserialize, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyName {
    #[default]
    Abort,
    Clip,
}

impl PolicyName {
    pub fn policy(&self) -> NegativeDiffusion {
        match self {
            PolicyName::Abort => NegativeDiffusion::Abort,
            PolicyName::Clip => NegativeDiffusion::Clip,
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct JumpBlock {
    pub samples: usize,
    pub seed: u64,
    #[serde(default)]
    pub mode: ModeName,
    /// Records that the moment bounds required by the jump representation are assumed.
    #[serde(default = "yes")]
    pub assume_moment_bounds: bool,
}

fn yes() -> bool {
    true
}

impl Default for JumpBlock {
    fn default() -> Self {
        Self { samples: 100_000, seed: 1, mode: ModeName::Strict, assume_moment_bounds: true }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeName {
    #[default]
    Strict,
    Signed,
}

impl ModeName {
    pub fn mode(&self) -> SignMode {
        match self {
            ModeName::Strict => SignMode::Strict,
            ModeName::Signed => SignMode::Signed,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct PicardBlock {
    /// Grid size for the Picard oracle; defaults to `grid.M`.
    #[serde(default, rename = "M")]
    pub m: Option<usize>,
    #[serde(default)]
    pub tol: Option<f64>,
}

#[derive(Debug, Clone, Copy, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareBlock {
    /// Relative tolerance between deterministic methods.
    pub rel_tol: f64,
    /// Multiple of the combined standard error for stochastic pairs.
    pub sigmas: f64,
}

impl Default for CompareBlock {
    fn default() -> Self {
        Self { rel_tol: 5e-3, sigmas: 3.0 }
    }
}

#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    #[serde(default)]
    pub dir: Option<String>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub(crate) fn check(&self) -> Result<(), CliError> {
        let d = self.model.d;
        for t in &self.targets {
            if t.alpha.len() != d {
                return Err(CliError::Config(format!("target alpha {:?} does not have length d = {d}", t.alpha)));
            }
            if !(t.t >= 0.0 && t.t <= self.grid.t) {
                return Err(CliError::Config(format!("target time {} outside [0, T]", t.t)));
            }
        }
        if self.grid.m == 0 {
            return Err(CliError::Config("grid.M must be positive".into()));
        }
        Ok(())
    }

    /// Moment order: `grid.N` or the largest target degree (at least 1).
    pub fn order(&self) -> usize {
        self.grid.n.unwrap_or_else(|| self.targets.iter().map(|t| t.alpha.iter().sum()).max().unwrap_or(1).max(1))
    }

    pub fn grid(&self) -> Result<Grid, CliError> {
        Grid::new(self.grid.t, self.grid.m).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn kernel(&self) -> Result<Kernel, CliError> {
        build_kernel(&self.kernel, self.grid.t).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn model(&self) -> Result<PolyModel, CliError> {
        build_model(&self.model).map_err(CliError::Config)
    }
}

fn build_kernel(k: &KernelBlock, horizon: f64) -> Result<Kernel, polyvolterra::kernels::KernelError> {
    match k {
        KernelBlock::Constant { value } => Kernel::constant(*value),
        KernelBlock::Fractional { hurst } => Kernel::fractional(*hurst),
        KernelBlock::Exponential { beta } => Kernel::exponential(*beta),
        KernelBlock::Sum { members } => {
            Kernel::sum(members.iter().map(|m| build_kernel(m, horizon)).collect::<Result<_, _>>()?)
        }
        KernelBlock::Product { members } => {
            Kernel::product(members.iter().map(|m| build_kernel(m, horizon)).collect::<Result<_, _>>()?)
        }
        KernelBlock::Tabulated { times, values } => Kernel::tabulated(times.clone(), values.clone()),
        KernelBlock::ShiftedFractional { hurst, shift, samples } => {
            Kernel::shifted_fractional(*hurst, *shift, horizon, *samples)
        }
    }
}

fn matrix(d: usize, v: &[f64], what: &str) -> Result<DMatrix<f64>, String> {
    if v.len() != d * d {
        return Err(format!("{what} needs {} entries, got {}", d * d, v.len()));
    }
    Ok(DMatrix::from_row_slice(d, d, v))
}

fn vector(d: usize, v: &[f64], what: &str) -> Result<DVector<f64>, String> {
    if v.len() != d {
        return Err(format!("{what} needs {d} entries, got {}", v.len()));
    }
    Ok(DVector::from_column_slice(v))
}

fn build_model(m: &ModelBlock) -> Result<PolyModel, String> {
    let d = m.d;
    if d == 0 {
        return Err("model.d must be at least 1".into());
    }
    let err = |e: polyvolterra::model::ModelError| e.to_string();
    let x0 = match (&m.x0, &m.g0_table) {
        (Some(x), None) => vector(d, x, "model.x0")?,
        (None, Some(t)) => {
            if t.values.len() != t.times.len() || t.times.is_empty() {
                return Err("model.g0_table needs one value per time".into());
            }
            vector(d, &t.values[0], "model.g0_table.values")?
        }
        _ => return Err("give exactly one of model.x0 and model.g0_table".into()),
    };
    match &m.state_space {
        StateSpaceBlock::Jacobi { lower, upper, lambda, mean, c } => {
            let p = JacobiParams { lower: *lower, upper: *upper, lambda: *lambda, mean: *mean, c: *c };
            if d != 1 {
                return Err("a Jacobi model is one-dimensional".into());
            }
            return PolyModel::jacobi(p, x0[0]).map_err(err);
        }
        StateSpaceBlock::Ball { c } => {
            let b0 = m.b0.as_deref().map(|v| vector(d, v, "model.b0")).transpose()?.unwrap_or_else(|| DVector::zeros(d));
            let b = m.b.as_deref().map(|v| matrix(d, v, "model.B")).transpose()?.unwrap_or_else(|| DMatrix::zeros(d, d));
            return PolyModel::unit_ball(b0, b, *c, x0).map_err(err);
        }
        StateSpaceBlock::Free => {}
    }
    let mut model = PolyModel::new(x0).map_err(err)?;
    if let Some(t) = &m.g0_table {
        let values = t.values.iter().map(|v| vector(d, v, "model.g0_table.values")).collect::<Result<_, _>>()?;
        model = model.with_initial(InitialCurve::Tabulated { times: t.times.clone(), values }).map_err(err)?;
    }
    if let Some(v) = &m.b0 {
        model = model.with_b0(vector(d, v, "model.b0")?).map_err(err)?;
    }
    if let Some(v) = &m.b {
        model = model.with_b(matrix(d, v, "model.B")?).map_err(err)?;
    }
    if let Some(v) = &m.a0 {
        model = model.with_a0(matrix(d, v, "model.A0")?).map_err(err)?;
    }
    if !m.a_lin.is_empty() && m.a_lin.len() != d {
        return Err(format!("model.Ai needs {d} matrices, got {}", m.a_lin.len()));
    }
    for (i, a) in m.a_lin.iter().enumerate() {
        model = model.with_a_lin(i + 1, matrix(d, a, "model.Ai")?).map_err(err)?;
    }
    for q in &m.a_quad {
        model = model.with_a_quad(q.i, q.j, matrix(d, &q.a, "model.Aij")?).map_err(err)?;
    }
    Ok(model)
}

pub fn state_space_name(s: &StateSpace) -> &'static str {
    match s {
        StateSpace::Free => "free",
        StateSpace::UnitBall { .. } => "ball",
        StateSpace::Jacobi(_) => "jacobi",
    }
}
