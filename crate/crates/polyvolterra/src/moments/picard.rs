//! Fixed-point iteration on the full `(t, T_1..T_p)` tensor.
//!
//! Each sweep rebuilds `f(t_j, .)` as the initial slice plus the left-endpoint increments
//! evaluated on the previous iterate. Tuples are looked up by sorting explicit
//! `(maturity, letter)` lists, independently of the index arithmetic in the stepper.

use super::storage::{rank_unsorted, Binomial, Multisets};
use super::{Coefficients, MomentError, MomentTable};
use crate::convolution::{Grid, KernelWeights};
use crate::kernels::Kernel;
use crate::model::{multi_indices, PolyModel};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PicardOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Upper bound on the bytes held by two iterates and the cached increments.
    pub memory_limit: usize,
}

impl Default for PicardOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 200, memory_limit: 1 << 30 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PicardReport {
    pub iterations: usize,
    pub lambda: f64,
    /// Weighted sup-norm of the last difference.
    pub last_difference: f64,
    /// Largest observed ratio of successive weighted differences.
    pub contraction: f64,
}

/// Per time index, the levels `0..=N` over slots active at that time.
type Iterate = Vec<Vec<Vec<f64>>>;

struct Layout {
    d: usize,
    m: usize,
    binom: Binomial,
}

impl Layout {
    /// Slot of maturity index `t` and 0-based letter `l`.
    fn slot(&self, t: usize, l: usize) -> usize {
        (self.m - t) * self.d + l
    }

    fn maturity(&self, s: usize) -> usize {
        self.m - s / self.d
    }

    fn active(&self, j: usize) -> usize {
        (self.m - j + 1) * self.d
    }

    fn lookup(&self, f: &[Vec<f64>], tuple: &mut Vec<usize>) -> f64 {
        let idx = rank_unsorted(&self.binom, tuple);
        f[tuple.len()][idx]
    }
}

/// Increment of every tuple active after step `j` given the slice `f` at `t_j`.
///
/// Slots of maturity `t_j` sort above every slot still active after step `j`, so a tuple
/// extended by them has the rank of its remainder plus one term per appended slot.
fn increment(lay: &Layout, c: &Coefficients, quad: &[f64], w: &KernelWeights, order: usize, j: usize, f: &[Vec<f64>], out: &mut [Vec<f64>]) {
    let d = lay.d;
    let live = lay.active(j + 1);
    let top: Vec<usize> = (0..d).map(|l| lay.slot(j, l)).collect();
    let bn = &lay.binom;
    let mut rest = Vec::with_capacity(order);
    let mut rest2 = Vec::with_capacity(order);
    for p in 1..=order {
        let mut it = Multisets::new(live, p);
        let mut idx = 0;
        while let Some(s) = it.next() {
            let mut acc = 0.0;
            for n in 0..p {
                let kn = lay.maturity(s[n]) - j;
                let ln = s[n] % d;
                rest.clear();
                rest.extend(s.iter().enumerate().filter(|&(i, _)| i != n).map(|(_, &x)| x));
                let q = p - 1;
                let r = bn.rank(&rest);
                let mut drift = c.b0[ln] * f[q][r];
                for jj in 0..d {
                    let coef = c.b[ln * d + jj];
                    if coef != 0.0 {
                        drift += coef * f[q + 1][r + bn.c(top[jj] + q, q + 1)];
                    }
                }
                acc += w.cell(kn) * drift;
                for m in n + 1..p {
                    let km = lay.maturity(s[m]) - j;
                    let lm = s[m] % d;
                    rest2.clear();
                    rest2.extend(s.iter().enumerate().filter(|&(i, _)| i != n && i != m).map(|(_, &x)| x));
                    let q = p - 2;
                    let r = bn.rank(&rest2);
                    let mut diff = c.a0[ln * d + lm] * f[q][r];
                    for a in 0..d {
                        let coef = c.a_lin[(a * d + ln) * d + lm];
                        let ra = r + bn.c(top[a] + q, q + 1);
                        if coef != 0.0 {
                            diff += coef * f[q + 1][ra];
                        }
                        for b in a..d {
                            let coef = quad[((a * d + b) * d + ln) * d + lm];
                            if coef != 0.0 {
                                diff += coef * f[q + 2][ra + bn.c(top[b] + q + 1, q + 2)];
                            }
                        }
                    }
                    acc += w.pair(kn, km) * diff;
                }
            }
            out[p][idx] = acc;
            idx += 1;
        }
    }
}

/// `A_ab` symmetrized in `(l, m)` and folded onto `a <= b`, indexed `((a d + b) d + l) d + m`.
fn folded_quadratic(c: &Coefficients, d: usize) -> Vec<f64> {
    let at = |a: usize, b: usize, l: usize, m: usize| c.a_quad[((a * d + b) * d + l) * d + m];
    let mut out = vec![0.0; d * d * d * d];
    for a in 0..d {
        for b in a..d {
            for l in 0..d {
                for m in 0..d {
                    let mut v = 0.5 * (at(a, b, l, m) + at(a, b, m, l));
                    if b != a {
                        v += 0.5 * (at(b, a, l, m) + at(b, a, m, l));
                    }
                    out[((a * d + b) * d + l) * d + m] = v;
                }
            }
        }
    }
    out
}

/// Picard iteration for the lifted moment system, used as an oracle for small `M` and `N`.
pub fn solve_moments_picard(
    model: &PolyModel,
    kernel: &Kernel,
    order: usize,
    grid: Grid,
    opts: &PicardOptions,
) -> Result<(MomentTable, PicardReport), MomentError> {
    if order == 0 {
        return Err(MomentError::Invalid("order N must be at least 1".into()));
    }
    let d = model.dim();
    let m = grid.steps();
    let slots = (m + 1) * d;
    let lay = Layout { d, m, binom: Binomial::new(slots + order + 2, order + 1) };
    let mut bytes = 0.0;
    for j in 0..=m {
        for p in 0..=order {
            bytes += 24.0 * lay.binom.count(lay.active(j), p) as f64;
        }
    }
    if bytes > opts.memory_limit as f64 {
        return Err(MomentError::Memory {
            required_mb: bytes / 1048576.0,
            limit_mb: opts.memory_limit as f64 / 1048576.0,
            advice: "the Picard oracle is meant for M <= 64 and N <= 3".into(),
        });
    }
    let w = KernelWeights::with_pairs(kernel, grid)?;
    let c = Coefficients::of(model);
    let quad = folded_quadratic(&c, d);

    // Initial slice: products of g0 over the tuple's maturities.
    let g0: Vec<Vec<f64>> = (0..=m).map(|t| model.g0(grid.time(t)).iter().copied().collect()).collect();
    let mut f0: Vec<Vec<f64>> = vec![vec![1.0]];
    for p in 1..=order {
        let mut lv = Vec::with_capacity(lay.binom.count(slots, p));
        let mut it = Multisets::new(slots, p);
        while let Some(s) = it.next() {
            lv.push(s.iter().map(|&x| g0[lay.maturity(x)][x % d]).product::<f64>());
        }
        f0.push(lv);
    }
    let restrict = |levels: &[Vec<f64>], j: usize| -> Vec<Vec<f64>> {
        (0..=order).map(|p| levels[p][..lay.binom.count(lay.active(j), p)].to_vec()).collect()
    };
    let mut cur: Iterate = (0..=m).map(|j| restrict(&f0, j)).collect();
    let mut inc: Vec<Vec<f64>> = (0..=order).map(|p| vec![0.0; lay.binom.count(slots, p)]).collect();
    // The map is causal: the increment over step j only changes when the slice at t_j does.
    let mut incs: Vec<Vec<Vec<f64>>> = vec![Vec::new(); m];
    let mut changed = vec![true; m + 1];

    let mut lambda: f64 = 1.0;
    let mut doublings = 0;
    let mut prev_diffs: Option<Vec<f64>> = None;
    let mut worst_factor: f64 = 0.0;
    for iter in 1..=opts.max_iter {
        let mut next: Iterate = Vec::with_capacity(m + 1);
        next.push(cur[0].clone());
        for j in 1..=m {
            if changed[j - 1] {
                increment(&lay, &c, &quad, &w, order, j - 1, &cur[j - 1], &mut inc);
                incs[j - 1] = restrict(&inc, j);
            }
            let inc = &incs[j - 1];
            let prev = &next[j - 1];
            let lv: Vec<Vec<f64>> = (0..=order)
                .map(|p| {
                    let n = lay.binom.count(lay.active(j), p);
                    if p == 0 {
                        vec![1.0]
                    } else {
                        (0..n).map(|i| prev[p][i] + inc[p][i]).collect()
                    }
                })
                .collect();
            next.push(lv);
        }
        // Per-time sup differences; weighting is applied afterwards so lambda can change.
        let diffs: Vec<f64> = (0..=m)
            .map(|j| {
                next[j]
                    .iter()
                    .zip(&cur[j])
                    .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
                    .fold(0.0, f64::max)
            })
            .collect();
        if diffs.iter().any(|v| !v.is_finite()) {
            return Err(MomentError::Blowup { last_valid_time: 0.0 });
        }
        cur = next;
        changed = diffs.iter().map(|&v| v != 0.0).collect();
        let weighted = |ds: &[f64], lam: f64| {
            ds.iter().enumerate().map(|(j, v)| (-lam * grid.time(j)).exp() * v).fold(0.0, f64::max)
        };
        let plain = diffs.iter().copied().fold(0.0, f64::max);
        let now = weighted(&diffs, lambda);
        if let Some(prev) = &prev_diffs {
            loop {
                let before = weighted(prev, lambda);
                let factor = if before > 0.0 { weighted(&diffs, lambda) / before } else { 0.0 };
                if factor <= 0.5 {
                    worst_factor = worst_factor.max(factor);
                    break;
                }
                if doublings == 10 {
                    return Err(MomentError::NoContraction { doublings, factor });
                }
                lambda *= 2.0;
                doublings += 1;
            }
        }
        let now = now.min(weighted(&diffs, lambda));
        if now < opts.tol && plain < opts.tol {
            let alphas = multi_indices(order, d);
            let mut diagonal = Vec::with_capacity((m + 1) * alphas.len());
            for (j, slice) in cur.iter().enumerate() {
                for a in &alphas {
                    let mut tuple: Vec<usize> = Vec::new();
                    for (l, &k) in a.iter().enumerate() {
                        tuple.extend(std::iter::repeat_n(lay.slot(j, l), k));
                    }
                    diagonal.push(lay.lookup(slice, &mut tuple));
                }
            }
            let table = MomentTable::new("picard", grid, order, d, diagonal, None);
            let report = PicardReport { iterations: iter, lambda, last_difference: now, contraction: worst_factor };
            return Ok((table, report));
        }
        prev_diffs = Some(diffs);
    }
    Err(MomentError::MaxIterations(opts.max_iter))
}
