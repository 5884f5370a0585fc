//! Explicit time stepping of the lifted moment system on symmetric storage.
//!
//! Slots are `s = T' d + letter` with reversed maturity `T' = M - T`, so the tuples that
//! are still active after each step form a prefix of every level array. At step `j` the
//! integrand is frozen at `r = t_j`, whose maturity class `rho` holds the largest active
//! slots; tuples containing `rho` expire after the step and are never updated.

use super::storage::{Binomial, Multisets};
use super::{Coefficients, MomentError, Slice};
use crate::model::multi_indices;

const MAX_LEVEL: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Layout {
    /// One slot class per maturity on the grid.
    Full,
    /// All maturities share one class (constant kernel and constant `g0`).
    Collapsed,
}

pub(crate) enum Init {
    /// `prod_n g[i_n][T_n]`.
    Product(Vec<Vec<f64>>),
    /// `1{alpha(w) = beta}`.
    Indicator(Vec<usize>),
}

pub(crate) enum PairSource {
    /// `A0 m^(p-2) + sum_j A_j m^(p-1)(. (r,j)) + sum_jl A_jl m^(p)(. (r,j) (r,l))`.
    Diffusion,
    /// `m^(p-2)(tau)`.
    Lower,
    /// `m^(p-1)(tau, (r, j))`.
    Insert(usize),
}

pub(crate) struct PairChannel {
    /// Table index per ordered letter pair `i * d + k`.
    pub weights: Vec<usize>,
    pub source: PairSource,
}

pub(crate) struct StepProblem {
    pub dim: usize,
    pub order: usize,
    pub steps: usize,
    pub horizon: f64,
    pub layout: Layout,
    pub coeffs: Coefficients,
    /// Single-kernel cell weights indexed by lag; `None` drops the drift terms.
    pub cells: Option<Vec<f64>>,
    /// Pair weight tables, `(M + 1) x (M + 1)` indexed by the two lags.
    pub tables: Vec<Vec<f64>>,
    pub channels: Vec<PairChannel>,
    pub init: Init,
    pub level0: f64,
    pub memory_limit: usize,
}

pub(crate) struct StepOutput {
    pub diagonal: Vec<f64>,
    pub slice: Slice,
}

impl StepProblem {
    fn classes(&self) -> usize {
        match self.layout {
            Layout::Full => self.steps + 1,
            Layout::Collapsed => 1,
        }
    }

    fn bytes_needed(&self, binom: &Binomial, slots: usize) -> f64 {
        let d = self.dim;
        let mut total = 0.0;
        for p in 1..=self.order {
            total += binom.count(slots, p) as f64;
            total += (d * binom.count(slots, p - 1)) as f64;
            if p >= 2 {
                total += (d * d * binom.count(slots, p - 2)) as f64;
            }
        }
        8.0 * total
    }

    fn check_memory(&self) -> Result<(), MomentError> {
        let slots = self.classes() * self.dim;
        let binom = Binomial::new(slots + self.order + 2, self.order.max(1));
        let need = self.bytes_needed(&binom, slots);
        if need <= self.memory_limit as f64 {
            return Ok(());
        }
        let mut m_fit = self.steps;
        while m_fit > 1 {
            m_fit = m_fit * 9 / 10;
            let s = (m_fit + 1) * self.dim;
            if self.bytes_needed(&Binomial::new(s + self.order + 2, self.order), s) <= self.memory_limit as f64 {
                break;
            }
        }
        let mut n_fit = self.order;
        while n_fit > 1 {
            n_fit -= 1;
            let probe = StepProblem { order: n_fit, ..self.shallow() };
            if probe.bytes_needed(&binom, slots) <= self.memory_limit as f64 {
                break;
            }
        }
        Err(MomentError::Memory {
            required_mb: need / 1048576.0,
            limit_mb: self.memory_limit as f64 / 1048576.0,
            advice: format!("reduce M to about {m_fit} or N to {n_fit}"),
        })
    }

    fn shallow(&self) -> StepProblem {
        StepProblem {
            dim: self.dim,
            order: self.order,
            steps: self.steps,
            horizon: self.horizon,
            layout: self.layout,
            coeffs: Coefficients {
                b0: vec![],
                b: vec![],
                a0: vec![],
                a_lin: vec![],
                a_quad: vec![],
            },
            cells: None,
            tables: vec![],
            channels: vec![],
            init: Init::Indicator(vec![]),
            level0: 0.0,
            memory_limit: self.memory_limit,
        }
    }

    fn initial_levels(&self, binom: &Binomial, slots: usize) -> Vec<Vec<f64>> {
        let d = self.dim;
        let mut levels: Vec<Vec<f64>> = vec![vec![self.level0]];
        for p in 1..=self.order {
            levels.push(vec![0.0; binom.count(slots, p)]);
        }
        match &self.init {
            Init::Product(g) => {
                let value = |s: usize| {
                    let tp = s / d;
                    let t = match self.layout {
                        Layout::Full => self.steps - tp,
                        Layout::Collapsed => 0,
                    };
                    g[s % d][t]
                };
                // Level p restricted to maximum slot s is level p-1 over 0..=s times g(s).
                for p in 1..=self.order {
                    let (lower, upper) = levels.split_at_mut(p);
                    let prev = &lower[p - 1];
                    let cur = &mut upper[0];
                    for s in 0..slots {
                        let gv = value(s);
                        let start = binom.c(s + p - 1, p);
                        let len = binom.count(s + 1, p - 1);
                        for i in 0..len {
                            cur[start + i] = prev[i] * gv;
                        }
                    }
                }
            }
            Init::Indicator(beta) => {
                let p: usize = beta.iter().sum();
                if p == 0 {
                    levels[0][0] = 1.0;
                } else if p <= self.order {
                    let mut it = Multisets::new(slots, p);
                    let mut idx = 0;
                    let mut counts = vec![0usize; d];
                    while let Some(s) = it.next() {
                        counts.iter_mut().for_each(|c| *c = 0);
                        for &x in s {
                            counts[x % d] += 1;
                        }
                        if counts == *beta {
                            levels[p][idx] = 1.0;
                        }
                        idx += 1;
                    }
                }
            }
        }
        levels
    }

    pub fn run(&self, stop_at: Option<usize>) -> Result<StepOutput, MomentError> {
        if self.order > MAX_LEVEL {
            return Err(MomentError::Invalid(format!("order N above {MAX_LEVEL} is not supported")));
        }
        self.check_memory()?;
        let d = self.dim;
        let n_cls = self.classes();
        let slots = n_cls * d;
        let binom = Binomial::new(slots + self.order + 2, self.order.max(1) + 1);
        let mut levels = self.initial_levels(&binom, slots);
        let alphas = multi_indices(self.order, d);
        let last = stop_at.unwrap_or(self.steps).min(self.steps);
        let mut diagonal = Vec::with_capacity((last + 1) * alphas.len());

        let mut scratch = Scratch::new(self, &binom, slots);
        for j in 0..=last {
            let rho = match self.layout {
                Layout::Full => self.steps - j,
                Layout::Collapsed => 0,
            };
            let before = diagonal.len();
            for a in &alphas {
                let mut s: Vec<usize> = Vec::new();
                for (l, &k) in a.iter().enumerate() {
                    s.extend(std::iter::repeat_n(rho * d + l, k));
                }
                diagonal.push(levels[s.len()][binom.rank(&s)]);
            }
            if diagonal[before..].iter().any(|v| !v.is_finite()) {
                let t = (j.max(1) - 1) as f64 * self.horizon / self.steps as f64;
                return Err(MomentError::Blowup { last_valid_time: t });
            }
            if j == last {
                break;
            }
            self.step(j, &binom, &mut levels, &mut scratch);
        }

        let active = match self.layout {
            Layout::Full => (self.steps - last + 1) * d,
            Layout::Collapsed => d,
        };
        for (p, lv) in levels.iter_mut().enumerate() {
            lv.truncate(binom.count(active, p));
        }
        Ok(StepOutput {
            diagonal,
            slice: Slice {
                step: last,
                steps: self.steps,
                dim: d,
                collapsed: self.layout == Layout::Collapsed,
                levels,
                binom,
            },
        })
    }

    /// Index of `tau` with slot `x` inserted (`x` from the expiring class).
    #[inline]
    fn insert(&self, binom: &Binomial, idx: usize, tau: &[usize], x: usize) -> usize {
        match self.layout {
            Layout::Full => idx + binom.c(x + tau.len(), tau.len() + 1),
            Layout::Collapsed => binom.rank_with(tau, x),
        }
    }

    fn insert2(&self, binom: &Binomial, idx: usize, tau: &[usize], x: usize, y: usize) -> usize {
        let q = tau.len();
        match self.layout {
            Layout::Full => idx + binom.c(x + q, q + 1) + binom.c(y + q + 1, q + 2),
            Layout::Collapsed => {
                let mut v = tau.to_vec();
                v.push(x);
                v.push(y);
                v.sort_unstable();
                binom.rank(&v)
            }
        }
    }

    fn step(&self, j: usize, binom: &Binomial, levels: &mut [Vec<f64>], sc: &mut Scratch) {
        let d = self.dim;
        let (live, rho) = match self.layout {
            Layout::Full => (self.steps - j, self.steps - j),
            Layout::Collapsed => (1, 0),
        };
        let upd = live * d;
        for s in 0..upd {
            sc.slot_k[s] = match self.layout {
                Layout::Full => live - s / d,
                Layout::Collapsed => 1,
            };
            sc.slot_l[s] = s % d;
        }
        let c = &self.coeffs;
        for p in (1..=self.order).rev() {
            // Single-kernel sources over level p-1.
            if self.cells.is_some() {
                let q = p - 1;
                let mut it = Multisets::new(upd, q);
                let mut idx = 0;
                while let Some(tau) = it.next() {
                    for i in 0..d {
                        let mut v = c.b0[i] * levels[q][idx];
                        for jj in 0..d {
                            let bij = c.b[i * d + jj];
                            if bij != 0.0 {
                                v += bij * levels[p][self.insert(binom, idx, tau, rho * d + jj)];
                            }
                        }
                        sc.dsrc[i][idx] = v;
                    }
                    idx += 1;
                }
            }
            // Pair sources over level p-2.
            if p >= 2 {
                let q = p - 2;
                for (ci, ch) in self.channels.iter().enumerate() {
                    match ch.source {
                        PairSource::Lower => {}
                        PairSource::Insert(jj) => {
                            let mut it = Multisets::new(upd, q);
                            let mut idx = 0;
                            while let Some(tau) = it.next() {
                                sc.psrc[ci][0][idx] = levels[q + 1][self.insert(binom, idx, tau, rho * d + jj)];
                                idx += 1;
                            }
                        }
                        PairSource::Diffusion => {
                            let mut it = Multisets::new(upd, q);
                            let mut idx = 0;
                            let mut u1 = vec![0.0; d];
                            let mut u2 = vec![0.0; d * d];
                            while let Some(tau) = it.next() {
                                let v0 = levels[q][idx];
                                for a in 0..d {
                                    u1[a] = levels[q + 1][self.insert(binom, idx, tau, rho * d + a)];
                                    for b in a..d {
                                        let v = levels[q + 2][self.insert2(binom, idx, tau, rho * d + a, rho * d + b)];
                                        u2[a * d + b] = v;
                                        u2[b * d + a] = v;
                                    }
                                }
                                for i in 0..d {
                                    for k in i..d {
                                        let mut v = c.a0[i * d + k] * v0;
                                        for a in 0..d {
                                            v += c.a_lin[(a * d + i) * d + k] * u1[a];
                                            for b in 0..d {
                                                v += c.a_quad[((a * d + b) * d + i) * d + k] * u2[a * d + b];
                                            }
                                        }
                                        if k != i {
                                            let mut w = c.a0[k * d + i] * v0;
                                            for a in 0..d {
                                                w += c.a_lin[(a * d + k) * d + i] * u1[a];
                                                for b in 0..d {
                                                    w += c.a_quad[((a * d + b) * d + k) * d + i] * u2[a * d + b];
                                                }
                                            }
                                            v = 0.5 * (v + w);
                                            sc.psrc[ci][k * d + i][idx] = v;
                                        }
                                        sc.psrc[ci][i * d + k][idx] = v;
                                    }
                                }
                                idx += 1;
                            }
                        }
                    }
                }
            }
            let (lower, upper) = levels.split_at_mut(p);
            self.update_level(p, upd, binom, &mut upper[0], lower.get(p.wrapping_sub(2)).map(|v| v.as_slice()), sc);
        }
    }

    fn update_level(
        &self,
        p: usize,
        upd: usize,
        binom: &Binomial,
        lv: &mut [f64],
        lower2: Option<&[f64]>,
        sc: &Scratch,
    ) {
        let d = self.dim;
        let n1 = self.steps + 1;
        let cells: &[f64] = self.cells.as_deref().unwrap_or(&[]);
        let has_single = self.cells.is_some();
        let slot_k = &sc.slot_k[..upd];
        let slot_l = &sc.slot_l[..upd];
        // Source slice for channel `ci` and ordered letter pair `pair`.
        let src = |ci: usize, pair: usize| -> &[f64] {
            match self.channels[ci].source {
                PairSource::Lower => lower2.expect("level p-2 exists"),
                PairSource::Insert(_) => &sc.psrc[ci][0],
                PairSource::Diffusion => &sc.psrc[ci][pair],
            }
        };
        if p == 1 {
            if has_single {
                for s in 0..upd {
                    lv[s] += cells[slot_k[s]] * sc.dsrc[slot_l[s]][0];
                }
            }
            return;
        }
        let nch = self.channels.len();
        let mut outer = Multisets::new(upd, p - 1);
        let mut single_w = [0.0f64; MAX_LEVEL];
        let mut single_off = [0usize; MAX_LEVEL];
        let mut single_src = [0usize; MAX_LEVEL];
        let mut dconst = [0.0f64; 4];
        // Pairs (s_1, o_m): per (channel, m, letter of s_1) a table row and a source value.
        let mut p1_row: Vec<usize> = vec![0; nch * MAX_LEVEL * d];
        let mut p1_val: Vec<f64> = vec![0.0; nch * MAX_LEVEL * d];
        // Pairs inside the outer tuple: weight, source (channel, letter pair), offset.
        let mut pp_w: Vec<f64> = Vec::with_capacity(nch * MAX_LEVEL * MAX_LEVEL);
        let mut pp_src: Vec<&[f64]> = Vec::with_capacity(nch * MAX_LEVEL * MAX_LEVEL);
        let mut pp_off: Vec<usize> = Vec::with_capacity(nch * MAX_LEVEL * MAX_LEVEL);
        let mut dl = vec![0.0f64; d.max(4)];
        while let Some(o) = outer.next() {
            let q = o.len();
            let s2 = o[0];
            let mut base = 0;
            let mut rem1 = 0;
            for (i, &s) in o.iter().enumerate() {
                base += binom.c(s + i + 1, i + 2);
                rem1 += binom.c(s + i, i + 1);
            }
            if has_single {
                for l in 0..d {
                    dl[l] = sc.dsrc[l][rem1];
                }
                if d <= 4 {
                    dconst[..d].copy_from_slice(&dl[..d]);
                }
                for n in 0..q {
                    let mut off = 0;
                    for (i, &s) in o.iter().enumerate() {
                        if i < n {
                            off += binom.c(s + i + 1, i + 2);
                        } else if i > n {
                            off += binom.c(s + i, i + 1);
                        }
                    }
                    single_w[n] = cells[slot_k[o[n]]];
                    single_off[n] = off;
                    single_src[n] = slot_l[o[n]];
                }
            }
            let mut n_p1 = 0;
            pp_w.clear();
            pp_src.clear();
            pp_off.clear();
            for m in 0..q {
                let mut e1 = 0;
                for (i, &s) in o.iter().enumerate() {
                    if i < m {
                        e1 += binom.c(s + i, i + 1);
                    } else if i > m {
                        e1 += binom.c(s + i - 1, i);
                    }
                }
                let km = slot_k[o[m]];
                let lm = slot_l[o[m]];
                for ci in 0..nch {
                    for l1 in 0..d {
                        // Pair weights are symmetric under swapping (letter, lag) jointly,
                        // so read the transposed entry to keep the lag of s_1 contiguous.
                        let pair = l1 * d + lm;
                        let tab = self.channels[ci].weights[lm * d + l1];
                        p1_row[n_p1 * d + l1] = tab * n1 * n1 + km * n1;
                        p1_val[n_p1 * d + l1] = src(ci, pair)[e1];
                    }
                    n_p1 += 1;
                }
                for n in 0..m {
                    let mut off = 0;
                    for (i, &s) in o.iter().enumerate() {
                        if i < n {
                            off += binom.c(s + i + 1, i + 2);
                        } else if i > n && i < m {
                            off += binom.c(s + i, i + 1);
                        } else if i > m {
                            off += binom.c(s + i - 1, i);
                        }
                    }
                    let kn = slot_k[o[n]];
                    let ln = slot_l[o[n]];
                    let pair = ln * d + lm;
                    for ci in 0..nch {
                        let tab = self.channels[ci].weights[pair];
                        pp_w.push(self.tables[tab][kn * n1 + km]);
                        pp_src.push(src(ci, pair));
                        pp_off.push(off);
                    }
                }
            }
            let dst = &mut lv[base..base + s2 + 1];
            if d == 1 {
                self.inner_scalar(
                    dst,
                    slot_k,
                    cells,
                    has_single,
                    dconst[0],
                    &single_w[..q],
                    &single_off[..q],
                    sc,
                    &p1_row[..n_p1],
                    &p1_val[..n_p1],
                    &pp_w,
                    &pp_src,
                    &pp_off,
                );
            } else {
                for (s1, out) in dst.iter_mut().enumerate() {
                    let k1 = slot_k[s1];
                    let l1 = slot_l[s1];
                    let mut acc = 0.0;
                    if has_single {
                        acc += cells[k1] * dl[l1];
                        for n in 0..q {
                            acc += single_w[n] * sc.dsrc[single_src[n]][single_off[n] + s1];
                        }
                    }
                    for t in 0..n_p1 {
                        let row = p1_row[t * d + l1];
                        acc += self.table_flat(row + k1) * p1_val[t * d + l1];
                    }
                    for t in 0..pp_w.len() {
                        acc += pp_w[t] * pp_src[t][pp_off[t] + s1];
                    }
                    *out += acc;
                }
            }
        }
    }

    #[inline(always)]
    fn table_flat(&self, flat: usize) -> f64 {
        let n = (self.steps + 1) * (self.steps + 1);
        self.tables[flat / n][flat % n]
    }

    #[allow(clippy::too_many_arguments)]
    #[inline(always)]
    fn inner_scalar(
        &self,
        dst: &mut [f64],
        slot_k: &[usize],
        cells: &[f64],
        has_single: bool,
        dconst: f64,
        single_w: &[f64],
        single_off: &[usize],
        sc: &Scratch,
        p1_row: &[usize],
        p1_val: &[f64],
        pp_w: &[f64],
        pp_src: &[&[f64]],
        pp_off: &[usize],
    ) {
        let len = dst.len();
        let n = (self.steps + 1) * (self.steps + 1);
        let ks = &slot_k[..len];
        if has_single {
            for (out, &k1) in dst.iter_mut().zip(ks) {
                *out += cells[k1] * dconst;
            }
            for (w, off) in single_w.iter().zip(single_off) {
                let s = &sc.dsrc[0][*off..*off + len];
                for (out, v) in dst.iter_mut().zip(s) {
                    *out += w * v;
                }
            }
        }
        for (row, val) in p1_row.iter().zip(p1_val) {
            let tab = &self.tables[row / n];
            let r = &tab[row % n..];
            for (out, &k1) in dst.iter_mut().zip(ks) {
                *out += r[k1] * val;
            }
        }
        for ((w, s), off) in pp_w.iter().zip(pp_src).zip(pp_off) {
            let s = &s[*off..*off + len];
            for (out, v) in dst.iter_mut().zip(s) {
                *out += w * v;
            }
        }
    }
}

struct Scratch {
    slot_k: Vec<usize>,
    slot_l: Vec<usize>,
    /// Per letter, sources over level p-1.
    dsrc: Vec<Vec<f64>>,
    /// Per channel and ordered letter pair, sources over level p-2.
    psrc: Vec<Vec<Vec<f64>>>,
}

impl Scratch {
    fn new(pb: &StepProblem, binom: &Binomial, slots: usize) -> Self {
        let d = pb.dim;
        let n = pb.order;
        let dlen = if pb.cells.is_some() { binom.count(slots, n - 1) } else { 0 };
        let plen = if n >= 2 { binom.count(slots, n - 2) } else { 0 };
        let psrc = pb
            .channels
            .iter()
            .map(|ch| match ch.source {
                PairSource::Lower => vec![],
                PairSource::Insert(_) => vec![vec![0.0; plen]],
                PairSource::Diffusion => vec![vec![0.0; plen]; d * d],
            })
            .collect();
        Self { slot_k: vec![0; slots], slot_l: vec![0; slots], dsrc: vec![vec![0.0; dlen]; d], psrc }
    }
}
