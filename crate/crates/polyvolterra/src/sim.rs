//! Monte Carlo for stochastic Volterra equations.
//!
//! Left-point Euler scheme
//! `X_{j+1} = g0(t_{j+1}) + sum_{l<=j} w_{j+1-l} b(X_l) + sum_{l<=j} kappa_{j+1-l} sigma(X_l) xi_l`
//! with exact drift cells `w_k = int K` and `kappa_k = (int K^2)^(1/2)` over the cell `k` steps
//! back. Paths run in batches of 64 lanes so the convolution loop vectorizes; each path draws
//! its normals from its own ChaCha stream, so results do not depend on batching or threads.

use crate::convolution::{ConvolutionError, Grid, KernelWeights};
use crate::kernels::{Kernel, KernelError};
use crate::model::{check_ball_drift_condition, psd_sqrt, DriftCheck, JacobiParams, ModelError, PolyModel, StateSpace};
use crate::stats::{mean_stderr, Estimate};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

const LANES: usize = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Convolution(#[from] ConvolutionError),
    #[error("drift condition for the unit ball fails at {witness:?} (value {value:.3e})")]
    DriftCondition { witness: Vec<f64>, value: f64 },
    #[error("kernel {0} is not known to be nonnegative and non-increasing; assert it explicitly")]
    KernelAssumption(String),
    #[error("wrong state space: {0}")]
    StateSpace(String),
    #[error("invalid request: {0}")]
    Invalid(String),
    #[error("grid index for t = {0} is not stored")]
    NotStored(f64),
    #[error("multi-index has length {got}, expected {dim}")]
    MultiIndex { got: usize, dim: usize },
}

/// What to do when `a(x)` has an eigenvalue below `-1e-8` at a visited state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NegativeDiffusion {
    /// Flag the path and leave it out of every estimate.
    #[default]
    Abort,
    /// Clip negative eigenvalues to zero and keep the path.
    Clip,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub paths: usize,
    pub seed: u64,
    /// Grid indices to keep; `None` keeps every step.
    pub store: Option<Vec<usize>>,
    pub negative_diffusion: NegativeDiffusion,
    /// Accept a kernel that is not recognised as completely monotone for ball dynamics.
    pub assume_monotone_kernel: bool,
}

impl SimConfig {
    pub fn new(paths: usize, seed: u64) -> Self {
        Self { paths, seed, store: None, negative_diffusion: NegativeDiffusion::Abort, assume_monotone_kernel: false }
    }

    pub fn storing(mut self, steps: Vec<usize>) -> Self {
        self.store = Some(steps);
        self
    }

    pub fn with_policy(mut self, policy: NegativeDiffusion) -> Self {
        self.negative_diffusion = policy;
        self
    }
}

/// Simulated states at the stored grid indices.
#[derive(Debug, Clone, PartialEq)]
pub struct PathEnsemble {
    grid: Grid,
    dim: usize,
    n_paths: usize,
    seed: u64,
    scheme: &'static str,
    domain: StateSpace,
    stored: Vec<usize>,
    /// `[stored index][path][coordinate]`.
    states: Vec<f64>,
    aborted: Vec<bool>,
    /// Largest pre-projection distance outside the domain, per path.
    excursion: Vec<f64>,
    projected_steps: usize,
    clip_magnitude: f64,
    non_finite: usize,
}

impl PathEnsemble {
    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn scheme(&self) -> &'static str {
        self.scheme
    }

    pub fn stored_steps(&self) -> &[usize] {
        &self.stored
    }

    pub fn aborted_paths(&self) -> usize {
        self.aborted.iter().filter(|&&a| a).count()
    }

    pub fn is_aborted(&self, path: usize) -> bool {
        self.aborted[path]
    }

    /// Largest clipped negative eigenvalue of `a(x)` over all visited states.
    pub fn clip_magnitude(&self) -> f64 {
        self.clip_magnitude
    }

    /// Number of paths with a non-finite stored state.
    pub fn blow_ups(&self) -> usize {
        self.non_finite
    }

    /// State of `path` at grid index `step`, if stored.
    pub fn state(&self, step: usize, path: usize) -> Option<&[f64]> {
        let k = self.stored.iter().position(|&s| s == step)?;
        let off = (k * self.n_paths + path) * self.dim;
        Some(&self.states[off..off + self.dim])
    }

    fn stored_index(&self, t: f64) -> Result<usize, SimError> {
        let j = self.grid.index_of(t).ok_or(SimError::NotStored(t))?;
        self.stored.iter().position(|&s| s == j).ok_or(SimError::NotStored(t))
    }
}

/// Sample mean of `X_t^alpha` over non-aborted paths, with its standard error.
pub fn mc_moment(ens: &PathEnsemble, t: f64, alpha: &[usize]) -> Result<Estimate, SimError> {
    if alpha.len() != ens.dim {
        return Err(SimError::MultiIndex { got: alpha.len(), dim: ens.dim });
    }
    let k = ens.stored_index(t)?;
    let d = ens.dim;
    let base = k * ens.n_paths * d;
    let ys: Vec<f64> = (0..ens.n_paths)
        .filter(|&p| !ens.aborted[p])
        .map(|p| {
            let x = &ens.states[base + p * d..base + (p + 1) * d];
            alpha.iter().zip(x).map(|(&a, &v)| v.powi(a as i32)).product()
        })
        .collect();
    Ok(mean_stderr(&ys))
}

/// Domain-violation statistics of a constrained ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct InvarianceReport {
    /// Largest pre-projection excursion outside the domain.
    pub max_excursion: f64,
    /// 99th percentile over paths of the per-path maximum excursion.
    pub q99_excursion: f64,
    /// Fraction of simulated steps that needed a projection.
    pub projected_fraction: f64,
    /// Largest violation among stored (post-projection) states.
    pub post_violation: f64,
    /// Fraction of stored states inside the domain.
    pub inside_fraction: f64,
}

fn violation(domain: &StateSpace, x: &[f64]) -> f64 {
    match domain {
        StateSpace::Free => 0.0,
        StateSpace::UnitBall { .. } => (x.iter().map(|v| v * v).sum::<f64>().sqrt() - 1.0).max(0.0),
        StateSpace::Jacobi(p) => (p.lower - x[0]).max(x[0] - p.upper).max(0.0),
    }
}

/// `None` for the free state space.
pub fn invariance_report(ens: &PathEnsemble, domain: &StateSpace) -> Option<InvarianceReport> {
    if matches!(domain, StateSpace::Free) {
        return None;
    }
    let d = ens.dim;
    let mut post: f64 = 0.0;
    let mut inside = 0usize;
    for x in ens.states.chunks(d) {
        let v = violation(domain, x);
        post = post.max(v);
        if v == 0.0 {
            inside += 1;
        }
    }
    let mut exc = ens.excursion.clone();
    exc.sort_by(|a, b| a.total_cmp(b));
    let q99 = exc.get(((exc.len() as f64 * 0.99) as usize).min(exc.len().saturating_sub(1))).copied().unwrap_or(0.0);
    let steps = ens.n_paths * ens.grid.steps();
    Some(InvarianceReport {
        max_excursion: exc.last().copied().unwrap_or(0.0),
        q99_excursion: q99,
        projected_fraction: if steps > 0 { ens.projected_steps as f64 / steps as f64 } else { 0.0 },
        post_violation: post,
        inside_fraction: inside as f64 / (ens.states.len() / d).max(1) as f64,
    })
}

/// Flattened coefficients for per-lane evaluation.
struct Coeffs {
    d: usize,
    b0: Vec<f64>,
    b: Vec<f64>,
    a0: Vec<f64>,
    a_lin: Vec<f64>,
    a_quad: Vec<f64>,
}

impl Coeffs {
    fn of(model: &PolyModel) -> Self {
        let d = model.dim();
        let flat = |m: &DMatrix<f64>| -> Vec<f64> { (0..d * d).map(|i| m[(i / d, i % d)]).collect() };
        Self {
            d,
            b0: model.b0().iter().copied().collect(),
            b: flat(model.b()),
            a0: flat(model.a0()),
            a_lin: (0..d).flat_map(|j| flat(model.a_lin(j))).collect(),
            a_quad: (0..d * d).flat_map(|jl| flat(model.a_quad(jl / d, jl % d))).collect(),
        }
    }

    fn diffusion(&self, x: &[f64], a: &mut [f64]) {
        let d = self.d;
        a.copy_from_slice(&self.a0);
        for j in 0..d {
            let xj = x[j];
            for (v, c) in a.iter_mut().zip(&self.a_lin[j * d * d..(j + 1) * d * d]) {
                *v += c * xj;
            }
            for l in 0..d {
                let xx = xj * x[l];
                let off = (j * d + l) * d * d;
                for (v, c) in a.iter_mut().zip(&self.a_quad[off..off + d * d]) {
                    *v += c * xx;
                }
            }
        }
    }
}

/// Symmetric square root of a PSD matrix with negative eigenvalues clipped.
/// Returns the smallest eigenvalue.
fn sqrt_psd(a: &[f64], d: usize, out: &mut [f64]) -> f64 {
    match d {
        1 => {
            out[0] = a[0].max(0.0).sqrt();
            a[0]
        }
        2 => {
            let (p, q, r) = (a[0], 0.5 * (a[1] + a[2]), a[3]);
            let mid = 0.5 * (p + r);
            let rad = (0.25 * (p - r) * (p - r) + q * q).sqrt();
            let (hi, lo) = (mid + rad, mid - rad);
            if hi <= 0.0 {
                out.fill(0.0);
            } else if lo >= 0.0 {
                let s = (hi * lo).max(0.0).sqrt();
                let t = (p + r + 2.0 * s).sqrt();
                out[0] = (p + s) / t;
                out[1] = q / t;
                out[2] = q / t;
                out[3] = (r + s) / t;
            } else {
                let (v0, v1) = if (hi - r).abs() > (hi - p).abs() { (hi - r, q) } else { (q, hi - p) };
                let n2 = v0 * v0 + v1 * v1;
                let f = hi.sqrt() / n2;
                out[0] = f * v0 * v0;
                out[1] = f * v0 * v1;
                out[2] = f * v0 * v1;
                out[3] = f * v1 * v1;
            }
            lo
        }
        _ => {
            let m = DMatrix::from_row_slice(d, d, a);
            let (root, clip) = psd_sqrt(&m);
            for i in 0..d {
                for k in 0..d {
                    out[i * d + k] = root[(i, k)];
                }
            }
            let min = nalgebra::SymmetricEigen::new(m).eigenvalues.min();
            if clip > 0.0 {
                -clip
            } else {
                min
            }
        }
    }
}

struct Context<'a> {
    coeffs: Coeffs,
    g0: Vec<Vec<f64>>,
    w: Vec<f64>,
    kappa: Vec<f64>,
    steps: usize,
    domain: &'a StateSpace,
    store_mask: Vec<bool>,
    n_store: usize,
    seed: u64,
    policy: NegativeDiffusion,
}

struct BatchOut {
    /// `[stored index][lane][coordinate]` for the lanes in use.
    states: Vec<f64>,
    aborted: Vec<bool>,
    excursion: Vec<f64>,
    projected: usize,
    clip: f64,
}

fn project(domain: &StateSpace, x: &mut [f64]) -> f64 {
    match domain {
        StateSpace::Free => 0.0,
        StateSpace::UnitBall { .. } => {
            let n = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n > 1.0 {
                x.iter_mut().for_each(|v| *v /= n);
                // Rounding can leave the norm a few ulps above 1.
                while x.iter().map(|v| v * v).sum::<f64>().sqrt() > 1.0 {
                    x.iter_mut().for_each(|v| *v *= 1.0 - f64::EPSILON);
                }
                n - 1.0
            } else {
                0.0
            }
        }
        StateSpace::Jacobi(p) => {
            let y = x[0];
            if y < p.lower {
                x[0] = p.lower;
                p.lower - y
            } else if y > p.upper {
                x[0] = p.upper;
                y - p.upper
            } else {
                0.0
            }
        }
    }
}

fn run_batch(ctx: &Context<'_>, first: usize, count: usize) -> BatchOut {
    let d = ctx.coeffs.d;
    let m = ctx.steps;
    let mut rngs: Vec<ChaCha8Rng> = (0..count)
        .map(|i| {
            let mut r = ChaCha8Rng::seed_from_u64(ctx.seed);
            r.set_stream((first + i) as u64);
            r
        })
        .collect();
    // Histories laid out as [step][coordinate][lane].
    let mut drift = vec![0.0; (m + 1) * d * LANES];
    let mut noise = vec![0.0; (m + 1) * d * LANES];
    let mut x = vec![0.0; d * LANES];
    for i in 0..d {
        x[i * LANES..(i + 1) * LANES].fill(ctx.g0[0][i]);
    }
    let mut out = BatchOut {
        states: Vec::with_capacity(ctx.n_store * count * d),
        aborted: vec![false; count],
        excursion: vec![0.0; count],
        projected: 0,
        clip: 0.0,
    };
    let store = |x: &[f64], out: &mut BatchOut| {
        for p in 0..count {
            for i in 0..d {
                out.states.push(x[i * LANES + p]);
            }
        }
    };
    if ctx.store_mask[0] {
        store(&x, &mut out);
    }
    let mut xp = vec![0.0; d];
    let mut a = vec![0.0; d * d];
    let mut s = vec![0.0; d * d];
    let mut xi = vec![0.0; d];
    for j in 0..m {
        let base = j * d * LANES;
        for p in 0..count {
            for i in 0..d {
                xp[i] = x[i * LANES + p];
            }
            ctx.coeffs.diffusion(&xp, &mut a);
            let min_eig = sqrt_psd(&a, d, &mut s);
            if min_eig < -1e-8 {
                out.clip = out.clip.max(-min_eig);
                if ctx.policy == NegativeDiffusion::Abort {
                    out.aborted[p] = true;
                }
            }
            for v in xi.iter_mut() {
                *v = rngs[p].sample(StandardNormal);
            }
            for i in 0..d {
                let mut b = ctx.coeffs.b0[i];
                let mut n = 0.0;
                for k in 0..d {
                    b += ctx.coeffs.b[i * d + k] * xp[k];
                    n += s[i * d + k] * xi[k];
                }
                drift[base + i * LANES + p] = b;
                noise[base + i * LANES + p] = n;
            }
        }
        for i in 0..d {
            let mut acc = [ctx.g0[j + 1][i]; LANES];
            for l in 0..=j {
                let (wl, kl) = (ctx.w[j + 1 - l], ctx.kappa[j + 1 - l]);
                let off = (l * d + i) * LANES;
                let dr: &[f64; LANES] = drift[off..off + LANES].try_into().expect("lane block");
                let nz: &[f64; LANES] = noise[off..off + LANES].try_into().expect("lane block");
                for q in 0..LANES {
                    acc[q] += wl * dr[q] + kl * nz[q];
                }
            }
            x[i * LANES..(i + 1) * LANES].copy_from_slice(&acc);
        }
        if !matches!(ctx.domain, StateSpace::Free) {
            for p in 0..count {
                for i in 0..d {
                    xp[i] = x[i * LANES + p];
                }
                let e = project(ctx.domain, &mut xp);
                if e > 0.0 {
                    out.projected += 1;
                    out.excursion[p] = out.excursion[p].max(e);
                    for i in 0..d {
                        x[i * LANES + p] = xp[i];
                    }
                }
            }
        }
        if ctx.store_mask[j + 1] {
            store(&x, &mut out);
        }
    }
    out
}

/// Simulates `model` on `grid`; constrained state spaces are enforced by projection.
pub fn simulate_paths(model: &PolyModel, kernel: &Kernel, grid: Grid, cfg: &SimConfig) -> Result<PathEnsemble, SimError> {
    if cfg.paths == 0 {
        return Err(SimError::Invalid("at least one path is needed".into()));
    }
    let m = grid.steps();
    let weights = KernelWeights::cells(kernel, grid)?;
    let stored: Vec<usize> = match &cfg.store {
        None => (0..=m).collect(),
        Some(v) => {
            let mut v = v.clone();
            v.sort_unstable();
            v.dedup();
            if v.last().is_some_and(|&s| s > m) {
                return Err(SimError::Invalid(format!("stored step beyond M = {m}")));
            }
            v
        }
    };
    let mut store_mask = vec![false; m + 1];
    stored.iter().for_each(|&s| store_mask[s] = true);
    let ctx = Context {
        coeffs: Coeffs::of(model),
        g0: (0..=m).map(|j| model.g0(grid.time(j)).iter().copied().collect()).collect(),
        w: weights.cells_slice().to_vec(),
        kappa: (0..=m).map(|k| weights.square(k).max(0.0).sqrt()).collect(),
        steps: m,
        domain: model.state_space(),
        store_mask,
        n_store: stored.len(),
        seed: cfg.seed,
        policy: cfg.negative_diffusion,
    };
    let d = model.dim();
    let n = cfg.paths;
    let batches: Vec<(usize, usize)> = (0..n.div_ceil(LANES)).map(|b| (b * LANES, LANES.min(n - b * LANES))).collect();
    let outs: Vec<BatchOut> = batches.par_iter().map(|&(first, count)| run_batch(&ctx, first, count)).collect();

    let mut states = vec![0.0; stored.len() * n * d];
    let mut aborted = Vec::with_capacity(n);
    let mut excursion = Vec::with_capacity(n);
    let mut projected = 0;
    let mut clip: f64 = 0.0;
    for (&(first, count), out) in batches.iter().zip(&outs) {
        for k in 0..stored.len() {
            let src = &out.states[k * count * d..(k + 1) * count * d];
            let dst = (k * n + first) * d;
            states[dst..dst + count * d].copy_from_slice(src);
        }
        aborted.extend_from_slice(&out.aborted);
        excursion.extend_from_slice(&out.excursion);
        projected += out.projected;
        clip = clip.max(out.clip);
    }
    let non_finite = (0..n)
        .filter(|&p| (0..stored.len()).any(|k| states[(k * n + p) * d..(k * n + p + 1) * d].iter().any(|v| !v.is_finite())))
        .count();
    let scheme = match model.state_space() {
        StateSpace::Free => "euler-volterra",
        StateSpace::UnitBall { .. } => "euler-volterra+radial-projection",
        StateSpace::Jacobi(_) => "euler-volterra+clamp",
    };
    Ok(PathEnsemble {
        grid,
        dim: d,
        n_paths: n,
        seed: cfg.seed,
        scheme,
        domain: model.state_space().clone(),
        stored,
        states,
        aborted,
        excursion,
        projected_steps: projected,
        clip_magnitude: clip,
        non_finite,
    })
}

/// Unit-ball dynamics with `sigma(x) = c (1 - |x|^2)^(1/2) I`.
pub fn simulate_ball(model: &PolyModel, kernel: &Kernel, grid: Grid, cfg: &SimConfig) -> Result<PathEnsemble, SimError> {
    if !matches!(model.state_space(), StateSpace::UnitBall { .. }) {
        return Err(SimError::StateSpace("simulate_ball needs a unit-ball model".into()));
    }
    if let DriftCheck::Fail { witness, value } = check_ball_drift_condition(model.b0(), model.b(), 4000) {
        return Err(SimError::DriftCondition { witness, value });
    }
    if !(kernel.is_completely_monotone() || cfg.assume_monotone_kernel) {
        return Err(SimError::KernelAssumption(kernel.name().into()));
    }
    simulate_paths(model, kernel, grid, cfg)
}

/// Jacobi dynamics on `[lower, upper]` started at `y0`.
pub fn simulate_jacobi(
    params: JacobiParams,
    y0: f64,
    kernel: &Kernel,
    grid: Grid,
    cfg: &SimConfig,
) -> Result<PathEnsemble, SimError> {
    params.validate()?;
    let model = PolyModel::jacobi(params, y0)?;
    simulate_paths(&model, kernel, grid, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;

    #[test]
    fn frozen_model_is_deterministic() {
        let model = PolyModel::new(DVector::from_vec(vec![0.3, -0.2])).unwrap();
        let grid = Grid::new(1.0, 20).unwrap();
        let ens = simulate_paths(&model, &Kernel::fractional(0.3).unwrap(), grid, &SimConfig::new(100, 1)).unwrap();
        for p in 0..100 {
            assert_eq!(ens.state(20, p).unwrap(), &[0.3, -0.2]);
        }
        let e = mc_moment(&ens, 1.0, &[1, 1]).unwrap();
        assert_eq!(e.stderr, 0.0);
        assert!((e.value - (-0.06)).abs() < 1e-15);
        let one = mc_moment(&ens, 0.5, &[0, 0]).unwrap();
        assert_eq!((one.value, one.stderr), (1.0, 0.0));
    }

    #[test]
    fn seeds_are_reproducible() {
        let model = PolyModel::scalar(1.0, 0.0, 0.1, 0.0, 0.0, 0.04);
        let grid = Grid::new(1.0, 30).unwrap();
        let k = Kernel::fractional(0.4).unwrap();
        let a = simulate_paths(&model, &k, grid, &SimConfig::new(130, 7)).unwrap();
        let b = simulate_paths(&model, &k, grid, &SimConfig::new(130, 7)).unwrap();
        let c = simulate_paths(&model, &k, grid, &SimConfig::new(130, 8)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.state(30, 0), c.state(30, 0));
        // Path streams do not depend on the ensemble size.
        let small = simulate_paths(&model, &k, grid, &SimConfig::new(3, 7)).unwrap();
        assert_eq!(small.state(30, 2), a.state(30, 2));
        assert_ne!(a.state(30, 0), a.state(30, 1));
    }

    #[test]
    fn two_by_two_root() {
        let a = [0.5, 0.2, 0.2, 0.3];
        let mut s = [0.0; 4];
        let lo = sqrt_psd(&a, 2, &mut s);
        assert!(lo > 0.0);
        let sq = [s[0] * s[0] + s[1] * s[2], s[0] * s[1] + s[1] * s[3], s[2] * s[0] + s[3] * s[2], s[2] * s[1] + s[3] * s[3]];
        for i in 0..4 {
            assert!((sq[i] - a[i]).abs() < 1e-14);
        }
        let b = [1.0, 2.0, 2.0, 1.0];
        let lo = sqrt_psd(&b, 2, &mut s);
        assert!((lo + 1.0).abs() < 1e-14);
        // Clipped root keeps the positive eigenpair: eigenvalue 3 along (1, 1).
        assert!((s[0] - 3f64.sqrt() / 2.0).abs() < 1e-14);
        let sq00 = s[0] * s[0] + s[1] * s[2];
        assert!((sq00 - 1.5).abs() < 1e-14);
    }
}
