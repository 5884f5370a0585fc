//! Moments from a killed pure-jump dual process.
//!
//! Coordinates carry an age that grows at unit rate and a letter. A jump resets the
//! affected coordinates to age 0 with a new letter, or sends them to the cemetery `†`
//! where the kernel vanishes. With `kappa` the total jump rate,
//! `E[X_t^k] = E[exp(int_0^t kappa(Y) ds) prod_{alive m} X0_{letter(m)}]`.
//! Paths are sampled exactly by thinning against a constant majorant, and `int kappa` is
//! integrated in closed form between events, so the estimator has no time-discretization bias.

use crate::kernels::{kappa_integral, kappa_pair_integral, Kernel, KernelError};
use crate::model::PolyModel;
use crate::stats::{mean_stderr, Estimate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum JumpError {
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("kernel is not eligible for the jump representation: {0}")]
    Ineligible(String),
    #[error("jump rate {channel} is negative ({value}); use signed mode")]
    NegativeRate { channel: String, value: f64 },
    #[error("model has terms outside the homogeneous jump representation: {0}")]
    NotHomogeneous(String),
    #[error("invalid request: {0}")]
    Invalid(String),
}

/// Treatment of negative channel rates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SignMode {
    /// Refuse negative rates.
    #[default]
    Strict,
    /// Simulate with absolute rates and carry the product of channel signs as a path weight.
    /// Unbiased but the variance can grow quickly with the number of sign flips.
    Signed,
}

impl SignMode {
    pub fn name(&self) -> &'static str {
        match self {
            SignMode::Strict => "strict",
            SignMode::Signed => "signed",
        }
    }
}

/// Sample count, seed and sign handling for an estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JumpRun {
    pub samples: usize,
    pub seed: u64,
    pub mode: SignMode,
}

impl JumpRun {
    pub fn new(samples: usize, seed: u64) -> Self {
        Self { samples, seed, mode: SignMode::Strict }
    }

    pub fn signed(mut self) -> Self {
        self.mode = SignMode::Signed;
        self
    }
}

/// One sampled path of the dual process on `[0, T]`.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpPath {
    /// Terminal age per coordinate, `None` for the cemetery.
    pub ages: Vec<Option<f64>>,
    /// Terminal letters (0-based).
    pub letters: Vec<usize>,
    /// Accepted event times.
    pub event_times: Vec<f64>,
    /// `int_0^T kappa(Y_s) ds`.
    pub exponent: f64,
    /// Product of channel signs (always `1` in strict mode).
    pub sign: f64,
}

impl JumpPath {
    pub fn survivors(&self) -> usize {
        self.ages.iter().filter(|a| a.is_some()).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Target {
    Reset(usize),
    Kill,
}

/// Jump channels of a dual process; rates are multiplied by kernel values at the ages.
#[derive(Debug, Clone)]
struct DualSystem {
    letters: usize,
    /// Per letter: `(coefficient, target)`.
    single: Vec<Vec<(f64, Target)>>,
    /// Per ordered letter pair `(i_m, i_n)` with `m > n`: `(coefficient, target m, target n)`.
    pair: Vec<Vec<(f64, Target, Target)>>,
    single_abs: Vec<f64>,
    pair_abs: Vec<f64>,
}

impl DualSystem {
    fn new(letters: usize, single: Vec<Vec<(f64, Target)>>, pair: Vec<Vec<(f64, Target, Target)>>) -> Self {
        let single: Vec<Vec<_>> = single.into_iter().map(|v| v.into_iter().filter(|c| c.0 != 0.0).collect()).collect();
        let pair: Vec<Vec<_>> = pair.into_iter().map(|v| v.into_iter().filter(|c| c.0 != 0.0).collect()).collect();
        let single_abs = single.iter().map(|v| v.iter().map(|c| c.0.abs()).sum()).collect();
        let pair_abs = pair.iter().map(|v| v.iter().map(|c| c.0.abs()).sum()).collect();
        Self { letters, single, pair, single_abs, pair_abs }
    }

    fn check_signs(&self, mode: SignMode) -> Result<bool, JumpError> {
        let neg_single = self.single.iter().flatten().find(|c| c.0 < 0.0).map(|c| c.0);
        let neg_pair = self.pair.iter().flatten().find(|c| c.0 < 0.0).map(|c| c.0);
        let negative = neg_single.or(neg_pair);
        match (negative, mode) {
            (Some(v), SignMode::Strict) => Err(JumpError::NegativeRate {
                channel: if neg_single.is_some() { "single".into() } else { "pair".into() },
                value: v,
            }),
            (Some(_), SignMode::Signed) => Ok(true),
            (None, _) => Ok(false),
        }
    }

    /// True when every jump keeps the coordinate alive with its letter, so with a
    /// constant kernel `kappa` never changes.
    fn preserves_state(&self) -> bool {
        let l = self.letters;
        self.single
            .iter()
            .enumerate()
            .all(|(i, v)| v.iter().all(|c| c.1 == Target::Reset(i)))
            && self.pair.iter().enumerate().all(|(p, v)| {
                let (im, in_) = (p / l, p % l);
                v.iter().all(|c| c.1 == Target::Reset(im) && c.2 == Target::Reset(in_))
            })
    }
}

struct Coord {
    /// Time of the last reset; `None` once killed.
    born: Option<f64>,
    letter: usize,
}

fn check_kernel(kernel: &Kernel, horizon: f64) -> Result<f64, JumpError> {
    let e = kernel.jump_dual_eligibility(horizon);
    if !e.eligible {
        return Err(JumpError::Ineligible(e.reason));
    }
    let kbar = kernel.sup_abs(horizon);
    if !kbar.is_finite() {
        return Err(JumpError::Ineligible("kernel is unbounded on [0, T]".into()));
    }
    if !kernel.is_nonnegative() {
        return Err(JumpError::Ineligible("kernel takes negative values".into()));
    }
    Ok(kbar)
}

fn sample_path(
    sys: &DualSystem,
    kernel: &Kernel,
    kbar: f64,
    start: &[usize],
    horizon: f64,
    rng: &mut ChaCha8Rng,
) -> Result<JumpPath, JumpError> {
    let l = sys.letters;
    let mut coords: Vec<Coord> = start.iter().map(|&i| Coord { born: Some(0.0), letter: i }).collect();
    let mut t = 0.0;
    let mut last = 0.0;
    let mut exponent = 0.0;
    let mut sign = 1.0;
    let mut events = Vec::new();
    let mut singles: Vec<f64> = Vec::with_capacity(coords.len());
    let kval = |c: &Coord, at: f64| c.born.map_or(0.0, |b| kernel.value(at - b));

    // int of kappa from `last` to `to` with the current configuration.
    let accumulate = |coords: &[Coord], from: f64, to: f64| -> Result<f64, JumpError> {
        let dur = to - from;
        let mut acc = 0.0;
        for (m, cm) in coords.iter().enumerate() {
            let Some(bm) = cm.born else { continue };
            let r1 = sys.single_abs[cm.letter];
            if r1 != 0.0 {
                acc += r1 * kappa_integral(kernel, from - bm, dur)?;
            }
            for cn in &coords[..m] {
                let Some(bn) = cn.born else { continue };
                let r2 = sys.pair_abs[cm.letter * l + cn.letter];
                if r2 != 0.0 {
                    acc += r2 * kappa_pair_integral(kernel, from - bm, from - bn, dur);
                }
            }
        }
        Ok(acc)
    };

    loop {
        let mut bound = 0.0;
        for (m, cm) in coords.iter().enumerate() {
            if cm.born.is_none() {
                continue;
            }
            bound += kbar * sys.single_abs[cm.letter];
            for cn in coords[..m].iter().filter(|c| c.born.is_some()) {
                bound += kbar * kbar * sys.pair_abs[cm.letter * l + cn.letter];
            }
        }
        if bound <= 0.0 {
            break;
        }
        let e: f64 = rng.sample(Exp1);
        t += e / bound;
        if t >= horizon {
            break;
        }
        // Current rates.
        singles.clear();
        let mut total = 0.0;
        for cm in &coords {
            let r = kval(cm, t) * sys.single_abs[cm.letter];
            singles.push(r);
            total += r;
        }
        let mut pair_total = 0.0;
        for m in 0..coords.len() {
            for n in 0..m {
                pair_total += kval(&coords[m], t) * kval(&coords[n], t) * sys.pair_abs[coords[m].letter * l + coords[n].letter];
            }
        }
        total += pair_total;
        let u: f64 = rng.random::<f64>() * bound;
        if u >= total {
            continue;
        }
        exponent += accumulate(&coords, last, t)?;
        last = t;
        events.push(t);
        // Pick the channel proportional to its rate.
        let mut pick = rng.random::<f64>() * total;
        let mut chosen = false;
        for m in 0..coords.len() {
            if pick < singles[m] {
                let opts = &sys.single[coords[m].letter];
                let mut q = pick / kval(&coords[m], t);
                let mut sel = opts.len() - 1;
                for (idx, c) in opts.iter().enumerate() {
                    if q < c.0.abs() {
                        sel = idx;
                        break;
                    }
                    q -= c.0.abs();
                }
                let (c, target) = opts[sel];
                apply(&mut coords[m], target, t);
                sign *= c.signum();
                chosen = true;
                break;
            }
            pick -= singles[m];
        }
        if !chosen {
            'outer: for m in 0..coords.len() {
                for n in 0..m {
                    let kk = kval(&coords[m], t) * kval(&coords[n], t);
                    let p = coords[m].letter * l + coords[n].letter;
                    let r = kk * sys.pair_abs[p];
                    if pick < r || (m == coords.len() - 1 && n == m - 1) {
                        let opts = &sys.pair[p];
                        let mut q = pick / kk;
                        let mut sel = opts.len() - 1;
                        for (idx, c) in opts.iter().enumerate() {
                            if q < c.0.abs() {
                                sel = idx;
                                break;
                            }
                            q -= c.0.abs();
                        }
                        let (c, tm, tn) = opts[sel];
                        apply(&mut coords[m], tm, t);
                        apply(&mut coords[n], tn, t);
                        sign *= c.signum();
                        break 'outer;
                    }
                    pick -= r;
                }
            }
        }
    }
    exponent += accumulate(&coords, last, horizon)?;
    Ok(JumpPath {
        ages: coords.iter().map(|c| c.born.map(|b| horizon - b)).collect(),
        letters: coords.iter().map(|c| c.letter).collect(),
        event_times: events,
        exponent,
        sign,
    })
}

fn apply(c: &mut Coord, target: Target, t: f64) {
    match target {
        Target::Reset(j) => {
            c.born = Some(t);
            c.letter = j;
        }
        Target::Kill => c.born = None,
    }
}

fn path_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Averages `sign * exp(exponent) * prod_{alive} x0[letter]` over independent paths.
fn estimate(
    sys: &DualSystem,
    kernel: &Kernel,
    start: &[usize],
    x0: &[f64],
    horizon: f64,
    run: &JumpRun,
) -> Result<Estimate, JumpError> {
    if run.samples == 0 {
        return Err(JumpError::Invalid("at least one sample is needed".into()));
    }
    if !(horizon >= 0.0) {
        return Err(JumpError::Invalid("horizon must be nonnegative".into()));
    }
    if start.is_empty() {
        return Ok(Estimate { value: 1.0, stderr: 0.0, samples: run.samples });
    }
    let kbar = check_kernel(kernel, horizon)?;
    let signed = sys.check_signs(run.mode)?;
    let mono = |letters: &[usize], alive: &[bool]| -> f64 {
        letters.iter().zip(alive).filter(|(_, &a)| a).map(|(&i, _)| x0[i]).product()
    };
    // Constant kernel and state-preserving jumps: kappa is constant along every path.
    if let Some(c) = kernel.constant_value() {
        if !signed && sys.preserves_state() {
            let l = sys.letters;
            let mut kappa = 0.0;
            for (m, &im) in start.iter().enumerate() {
                kappa += c * sys.single_abs[im];
                for &in_ in &start[..m] {
                    kappa += c * c * sys.pair_abs[im * l + in_];
                }
            }
            let value = (kappa * horizon).exp() * mono(start, &vec![true; start.len()]);
            return Ok(Estimate { value, stderr: 0.0, samples: run.samples });
        }
    }
    let values: Vec<f64> = (0..run.samples)
        .into_par_iter()
        .map(|s| {
            let mut rng = path_rng(run.seed, s as u64);
            let p = sample_path(sys, kernel, kbar, start, horizon, &mut rng)?;
            let alive: Vec<bool> = p.ages.iter().map(|a| a.is_some()).collect();
            Ok(p.sign * p.exponent.exp() * mono(&p.letters, &alive))
        })
        .collect::<Result<_, JumpError>>()?;
    Ok(mean_stderr(&values))
}

/// Coefficients `b(x) = b0 + b1 x`, `sigma(x)^2 = a0 + a1 x + a11 x^2` of a scalar model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarCoefficients {
    pub b0: f64,
    pub b1: f64,
    pub a0: f64,
    pub a1: f64,
    pub a11: f64,
}

impl ScalarCoefficients {
    pub fn homogeneous(b1: f64, a11: f64) -> Self {
        Self { b0: 0.0, b1, a0: 0.0, a1: 0.0, a11 }
    }

    pub fn of(model: &PolyModel) -> Result<Self, JumpError> {
        if model.dim() != 1 {
            return Err(JumpError::Invalid("scalar coefficients need d = 1".into()));
        }
        Ok(Self {
            b0: model.b0()[0],
            b1: model.b()[(0, 0)],
            a0: model.a0()[(0, 0)],
            a1: model.a_lin(0)[(0, 0)],
            a11: model.a_quad(0, 0)[(0, 0)],
        })
    }

    fn system(&self) -> DualSystem {
        let r = Target::Reset(0);
        let k = Target::Kill;
        DualSystem::new(
            1,
            vec![vec![(self.b1, r), (self.b0, k)]],
            vec![vec![(self.a11, r, r), (self.a0, k, k), (0.5 * self.a1, r, k), (0.5 * self.a1, k, r)]],
        )
    }
}

/// One path of the homogeneous scalar dual (`b0 = a0 = a1 = 0`).
pub fn simulate_jump_dual_1d(
    b1: f64,
    a11: f64,
    kernel: &Kernel,
    k: usize,
    horizon: f64,
    seed: u64,
    mode: SignMode,
) -> Result<JumpPath, JumpError> {
    simulate_jump_dual_inhom(ScalarCoefficients::homogeneous(b1, a11), kernel, k, horizon, seed, mode)
}

/// One path of the scalar dual with cemetery channels.
pub fn simulate_jump_dual_inhom(
    coeffs: ScalarCoefficients,
    kernel: &Kernel,
    k: usize,
    horizon: f64,
    seed: u64,
    mode: SignMode,
) -> Result<JumpPath, JumpError> {
    let sys = coeffs.system();
    sys.check_signs(mode)?;
    let kbar = check_kernel(kernel, horizon)?;
    sample_path(&sys, kernel, kbar, &vec![0; k], horizon, &mut path_rng(seed, 0))
}

/// `E[X_T^k]` for the homogeneous scalar model started at `x0`.
pub fn jump_dual_moment_1d(
    b1: f64,
    a11: f64,
    kernel: &Kernel,
    x0: f64,
    k: usize,
    horizon: f64,
    run: &JumpRun,
) -> Result<Estimate, JumpError> {
    jump_dual_moment_inhom(ScalarCoefficients::homogeneous(b1, a11), kernel, x0, k, horizon, run)
}

/// `E[X_T^k]` for a scalar model with general affine drift and quadratic diffusion.
pub fn jump_dual_moment_inhom(
    coeffs: ScalarCoefficients,
    kernel: &Kernel,
    x0: f64,
    k: usize,
    horizon: f64,
    run: &JumpRun,
) -> Result<Estimate, JumpError> {
    estimate(&coeffs.system(), kernel, &vec![0; k], &[x0], horizon, run)
}

/// `E[X_T^kvec]` for a homogeneous `d`-dimensional model (`b0 = 0`, `A0 = 0`, `A_i = 0`)
/// with a scalar kernel acting on every coordinate.
pub fn jump_dual_moment_multi(
    model: &PolyModel,
    kernel: &Kernel,
    kvec: &[usize],
    horizon: f64,
    run: &JumpRun,
) -> Result<Estimate, JumpError> {
    let d = model.dim();
    if kvec.len() != d {
        return Err(JumpError::Invalid(format!("multi-index has length {}, expected {d}", kvec.len())));
    }
    if model.b0().amax() != 0.0 || model.a0().amax() != 0.0 || (0..d).any(|j| model.a_lin(j).amax() != 0.0) {
        return Err(JumpError::NotHomogeneous("b0, A0 and A_i must vanish".into()));
    }
    let x0 = model.x0().ok_or_else(|| JumpError::Invalid("a constant initial value is needed".into()))?;
    let single = (0..d).map(|i| (0..d).map(|j| (model.b()[(i, j)], Target::Reset(j))).collect()).collect();
    let mut pair = Vec::with_capacity(d * d);
    for im in 0..d {
        for in_ in 0..d {
            let mut v = Vec::new();
            for j1 in 0..d {
                for j2 in 0..d {
                    v.push((model.a_quad(j1, j2)[(im, in_)], Target::Reset(j1), Target::Reset(j2)));
                }
            }
            pair.push(v);
        }
    }
    let sys = DualSystem::new(d, single, pair);
    let start: Vec<usize> = kvec.iter().enumerate().flat_map(|(i, &k)| std::iter::repeat_n(i, k)).collect();
    let x0: Vec<f64> = x0.iter().copied().collect();
    estimate(&sys, kernel, &start, &x0, horizon, run)
}
