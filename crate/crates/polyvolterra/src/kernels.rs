//! Convolution kernels and their integrals over grid cells.
//!
//! Kernels are scalar and act on vectors as `K(t) * I_d`. Cell integrals use
//! closed-form antiderivatives where one exists and adaptive Gauss-Kronrod
//! quadrature otherwise. Endpoint power singularities are removed by the
//! substitution `v = u^(1+e)` before quadrature, `e` being the exponent of the
//! integrand at `u = 0`.

use crate::quad;
use thiserror::Error;

const CELL_TOL: f64 = 1e-13;
const PAIR_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("invalid kernel parameter: {0}")]
    InvalidParameter(String),
    #[error("{family} kernel is singular at t = {t} (requires t > 0)")]
    Domain { family: &'static str, t: f64 },
    #[error("kernel product is not integrable: exponent {exponent} <= -1 at a coincident singularity")]
    NonIntegrable { exponent: f64 },
    #[error("integration bounds violate 0 <= a <= b <= T (a = {a}, b = {b}, T = {t})")]
    Bounds { a: f64, b: f64, t: f64 },
    #[error("kernel is not eligible for the jump representation: {0}")]
    Ineligible(String),
}

/// Sampled kernel with monotone piecewise-cubic (Fritsch-Carlson) interpolation.
/// Outside the sampled range the end values are held constant.
#[derive(Debug, Clone, PartialEq)]
pub struct TabulatedKernel {
    times: Vec<f64>,
    values: Vec<f64>,
    slopes: Vec<f64>,
}

impl TabulatedKernel {
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Result<Self, KernelError> {
        if times.len() < 2 || times.len() != values.len() {
            return Err(KernelError::InvalidParameter(
                "tabulated kernel needs at least two (time, value) samples".into(),
            ));
        }
        if times[0] < 0.0 || times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(KernelError::InvalidParameter(
                "tabulated times must be nonnegative and strictly increasing".into(),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(KernelError::InvalidParameter("tabulated values must be finite".into()));
        }
        let n = times.len();
        let h: Vec<f64> = times.windows(2).map(|w| w[1] - w[0]).collect();
        let delta: Vec<f64> = (0..n - 1).map(|i| (values[i + 1] - values[i]) / h[i]).collect();
        let mut slopes = vec![0.0; n];
        for i in 1..n - 1 {
            if delta[i - 1] * delta[i] > 0.0 {
                let w1 = 2.0 * h[i] + h[i - 1];
                let w2 = h[i] + 2.0 * h[i - 1];
                slopes[i] = (w1 + w2) / (w1 / delta[i - 1] + w2 / delta[i]);
            }
        }
        slopes[0] = end_slope(h[0], h.get(1).copied().unwrap_or(h[0]), delta[0], *delta.get(1).unwrap_or(&delta[0]));
        slopes[n - 1] = end_slope(
            h[n - 2],
            if n > 2 { h[n - 3] } else { h[n - 2] },
            delta[n - 2],
            if n > 2 { delta[n - 3] } else { delta[n - 2] },
        );
        Ok(Self { times, values, slopes })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    fn segment(&self, t: f64) -> Option<usize> {
        let n = self.times.len();
        if t <= self.times[0] || t >= self.times[n - 1] {
            return None;
        }
        Some(self.times.partition_point(|&x| x <= t) - 1)
    }

    fn eval(&self, t: f64) -> f64 {
        let n = self.times.len();
        match self.segment(t) {
            None if t <= self.times[0] => self.values[0],
            None => self.values[n - 1],
            Some(i) => {
                let h = self.times[i + 1] - self.times[i];
                let s = (t - self.times[i]) / h;
                let (h00, h10, h01, h11) = hermite(s);
                h00 * self.values[i]
                    + h10 * h * self.slopes[i]
                    + h01 * self.values[i + 1]
                    + h11 * h * self.slopes[i + 1]
            }
        }
    }

    fn derivative(&self, t: f64) -> f64 {
        match self.segment(t) {
            None => 0.0,
            Some(i) => {
                let h = self.times[i + 1] - self.times[i];
                let s = (t - self.times[i]) / h;
                let d00 = 6.0 * s * s - 6.0 * s;
                let d10 = 3.0 * s * s - 4.0 * s + 1.0;
                let d01 = -d00;
                let d11 = 3.0 * s * s - 2.0 * s;
                (d00 * self.values[i] + d01 * self.values[i + 1]) / h
                    + d10 * self.slopes[i]
                    + d11 * self.slopes[i + 1]
            }
        }
    }

    /// Composite 8-node Gauss over every table cell meeting `[u0, u1]`.
    fn integral<F: Fn(f64) -> f64>(&self, f: &F, u0: f64, u1: f64) -> f64 {
        let mut breaks = vec![u0];
        breaks.extend(self.times.iter().copied().filter(|&t| t > u0 && t < u1));
        breaks.push(u1);
        breaks.windows(2).map(|w| quad::gauss_legendre8(f, w[0], w[1])).sum()
    }
}

fn end_slope(h0: f64, h1: f64, d0: f64, d1: f64) -> f64 {
    let m = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
    if m * d0 <= 0.0 {
        0.0
    } else if d0 * d1 <= 0.0 && m.abs() > 3.0 * d0.abs() {
        3.0 * d0
    } else {
        m
    }
}

fn hermite(s: f64) -> (f64, f64, f64, f64) {
    let s2 = s * s;
    let s3 = s2 * s;
    (2.0 * s3 - 3.0 * s2 + 1.0, s3 - 2.0 * s2 + s, -2.0 * s3 + 3.0 * s2, s3 - s2)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Family {
    Constant(f64),
    /// `t^(H - 1/2)`, unnormalized.
    Fractional(f64),
    /// `exp(-beta t)`.
    Exponential(f64),
    Sum(Vec<Kernel>),
    Product(Vec<Kernel>),
    Tabulated(TabulatedKernel),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    family: Family,
    gamma: Option<f64>,
}

/// Outcome of the `K in B` proxy test used by the jump representation.
#[derive(Debug, Clone, PartialEq)]
pub struct Eligibility {
    pub eligible: bool,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GammaEstimate {
    pub gamma: f64,
    pub residual: f64,
    pub poor_fit: bool,
}

impl Kernel {
    pub fn constant(c: f64) -> Result<Self, KernelError> {
        if !c.is_finite() {
            return Err(KernelError::InvalidParameter("constant must be finite".into()));
        }
        Ok(Self::wrap(Family::Constant(c)))
    }

    pub fn fractional(hurst: f64) -> Result<Self, KernelError> {
        if !(hurst > 0.0 && hurst < 1.0) {
            return Err(KernelError::InvalidParameter(format!("fractional kernel needs H in (0,1), got {hurst}")));
        }
        Ok(Self::wrap(Family::Fractional(hurst)))
    }

    pub fn exponential(beta: f64) -> Result<Self, KernelError> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(KernelError::InvalidParameter(format!("exponential kernel needs beta > 0, got {beta}")));
        }
        Ok(Self::wrap(Family::Exponential(beta)))
    }

    pub fn sum(members: Vec<Kernel>) -> Result<Self, KernelError> {
        if members.is_empty() {
            return Err(KernelError::InvalidParameter("sum kernel needs at least one member".into()));
        }
        Ok(Self::wrap(Family::Sum(members)))
    }

    pub fn product(members: Vec<Kernel>) -> Result<Self, KernelError> {
        if members.is_empty() {
            return Err(KernelError::InvalidParameter("product kernel needs at least one member".into()));
        }
        let k = Self::wrap(Family::Product(members));
        if k.singular_exponent() <= -0.5 {
            return Err(KernelError::InvalidParameter(format!(
                "product kernel is not locally square integrable (exponent {})",
                k.singular_exponent()
            )));
        }
        Ok(k)
    }

    pub fn tabulated(times: Vec<f64>, values: Vec<f64>) -> Result<Self, KernelError> {
        Ok(Self::wrap(Family::Tabulated(TabulatedKernel::new(times, values)?)))
    }

    /// `(t + shift)^(H - 1/2)` sampled on `samples + 1` points of `[0, horizon]`,
    /// with points clustered near zero.
    pub fn shifted_fractional(hurst: f64, shift: f64, horizon: f64, samples: usize) -> Result<Self, KernelError> {
        if !(hurst > 0.0 && hurst < 1.0) || !(shift > 0.0) || !(horizon > 0.0) || samples < 2 {
            return Err(KernelError::InvalidParameter(
                "shifted fractional kernel needs H in (0,1), shift > 0, horizon > 0, samples >= 2".into(),
            ));
        }
        let times: Vec<f64> = (0..=samples)
            .map(|i| {
                let s = i as f64 / samples as f64;
                horizon * s * s
            })
            .collect();
        let values = times.iter().map(|t| (t + shift).powf(hurst - 0.5)).collect();
        Self::tabulated(times, values)
    }

    fn wrap(family: Family) -> Self {
        Self { family, gamma: None }
    }

    /// Attach a declared regularity exponent from the `O(h^gamma)` bound on `int_0^h K^2`.
    pub fn with_gamma(mut self, gamma: f64) -> Result<Self, KernelError> {
        if !(gamma > 0.0 && gamma <= 2.0) {
            return Err(KernelError::InvalidParameter(format!("gamma must lie in (0, 2], got {gamma}")));
        }
        self.gamma = Some(gamma);
        Ok(self)
    }

    pub fn declared_gamma(&self) -> Option<f64> {
        self.gamma
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    pub fn name(&self) -> &'static str {
        match self.family {
            Family::Constant(_) => "constant",
            Family::Fractional(_) => "fractional",
            Family::Exponential(_) => "exponential",
            Family::Sum(_) => "sum",
            Family::Product(_) => "product",
            Family::Tabulated(_) => "tabulated",
        }
    }

    /// True when the kernel is the same value at every `t > 0`.
    pub fn constant_value(&self) -> Option<f64> {
        match &self.family {
            Family::Constant(c) => Some(*c),
            Family::Fractional(h) if *h == 0.5 => Some(1.0),
            Family::Sum(m) => m.iter().map(|k| k.constant_value()).sum(),
            Family::Product(m) => m.iter().map(|k| k.constant_value()).product(),
            _ => None,
        }
    }

    /// Exponent `e` with `K(u) ~ u^e` as `u -> 0` (zero for bounded kernels).
    pub fn singular_exponent(&self) -> f64 {
        match &self.family {
            Family::Fractional(h) => h - 0.5,
            Family::Sum(m) => m.iter().map(|k| k.singular_exponent()).fold(0.0, f64::min),
            Family::Product(m) => m.iter().map(|k| k.singular_exponent()).sum(),
            _ => 0.0,
        }
    }

    /// `K(t)`, failing at `t <= 0` for kernels singular at the origin.
    pub fn eval(&self, t: f64) -> Result<f64, KernelError> {
        if t <= 0.0 && self.singular_exponent() < 0.0 {
            return Err(KernelError::Domain { family: self.name(), t });
        }
        Ok(self.value(t.max(0.0)))
    }

    /// `K(t)` without the domain check.
    pub fn value(&self, t: f64) -> f64 {
        match &self.family {
            Family::Constant(c) => *c,
            Family::Fractional(h) => {
                if *h == 0.5 {
                    1.0
                } else {
                    t.powf(h - 0.5)
                }
            }
            Family::Exponential(b) => (-b * t).exp(),
            Family::Sum(m) => m.iter().map(|k| k.value(t)).sum(),
            Family::Product(m) => m.iter().map(|k| k.value(t)).product(),
            Family::Tabulated(tab) => tab.eval(t),
        }
    }

    pub fn derivative(&self, t: f64) -> f64 {
        match &self.family {
            Family::Constant(_) => 0.0,
            Family::Fractional(h) => {
                if *h == 0.5 {
                    0.0
                } else {
                    (h - 0.5) * t.powf(h - 1.5)
                }
            }
            Family::Exponential(b) => -b * (-b * t).exp(),
            Family::Sum(m) => m.iter().map(|k| k.derivative(t)).sum(),
            Family::Product(m) => {
                let vals: Vec<f64> = m.iter().map(|k| k.value(t)).collect();
                (0..m.len())
                    .map(|i| {
                        let others: f64 = vals.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, v)| v).product();
                        m[i].derivative(t) * others
                    })
                    .sum()
            }
            Family::Tabulated(tab) => tab.derivative(t),
        }
    }

    pub fn is_completely_monotone(&self) -> bool {
        match &self.family {
            Family::Constant(c) => *c >= 0.0,
            Family::Fractional(h) => *h <= 0.5,
            Family::Exponential(_) => true,
            Family::Sum(m) | Family::Product(m) => m.iter().all(|k| k.is_completely_monotone()),
            Family::Tabulated(_) => false,
        }
    }

    pub fn is_nonnegative(&self) -> bool {
        match &self.family {
            Family::Constant(c) => *c >= 0.0,
            Family::Fractional(_) | Family::Exponential(_) => true,
            Family::Sum(m) | Family::Product(m) => m.iter().all(|k| k.is_nonnegative()),
            Family::Tabulated(tab) => tab.values.iter().all(|v| *v >= 0.0),
        }
    }

    /// Upper bound of `|K|` on `(0, horizon]`; infinite for kernels singular at zero.
    pub fn sup_abs(&self, horizon: f64) -> f64 {
        match &self.family {
            Family::Constant(c) => c.abs(),
            Family::Fractional(h) => {
                if *h < 0.5 {
                    f64::INFINITY
                } else {
                    horizon.powf(h - 0.5)
                }
            }
            Family::Exponential(_) => 1.0,
            Family::Sum(m) => m.iter().map(|k| k.sup_abs(horizon)).sum(),
            Family::Product(m) => m.iter().map(|k| k.sup_abs(horizon)).product(),
            Family::Tabulated(tab) => tab.values.iter().fold(0.0, |a, v| a.max(v.abs())),
        }
    }

    /// `int_{u0}^{u1} K(u) du` for `0 <= u0 <= u1`.
    pub fn integral(&self, u0: f64, u1: f64) -> f64 {
        if u1 <= u0 {
            return 0.0;
        }
        match &self.family {
            Family::Constant(c) => c * (u1 - u0),
            Family::Fractional(h) => power_integral(h - 0.5, 1.0, u0, u1),
            Family::Exponential(b) => exp_integral(*b, 1.0, u0, u1),
            Family::Sum(m) => m.iter().map(|k| k.integral(u0, u1)).sum(),
            Family::Product(m) => match product_closed_form(m) {
                Some(ClosedForm::Power { coef, exponent }) => power_integral(exponent, coef, u0, u1),
                Some(ClosedForm::Exp { coef, rate }) => exp_integral(rate, coef, u0, u1),
                None => singular_quadrature(&|u| self.value(u), self.singular_exponent(), u0, u1, CELL_TOL),
            },
            Family::Tabulated(tab) => tab.integral(&|u| tab.eval(u), u0, u1),
        }
    }

    /// `int_a^b K(T - r) dr`.
    pub fn cell_integral(&self, t: f64, a: f64, b: f64) -> Result<f64, KernelError> {
        if !(0.0 <= a && a <= b && b <= t) {
            return Err(KernelError::Bounds { a, b, t });
        }
        Ok(self.integral(t - b, t - a))
    }

    /// `int_0^h K(u)^2 du`.
    pub fn square_integral(&self, h: f64) -> f64 {
        pair_lag(self, self, 0.0, 0.0, h).expect("kernels are locally square integrable")
    }

    /// Least-squares slope of `log int_0^h K^2` against `log h` for `h = T 2^-j`, `j = 4..15`.
    pub fn estimate_gamma(&self, horizon: f64) -> GammaEstimate {
        let pts: Vec<(f64, f64)> = (4..=15)
            .map(|j| {
                let h = horizon * 2f64.powi(-j);
                (h.ln(), self.square_integral(h))
            })
            .collect();
        if pts.iter().any(|p| !(p.1 > 0.0) || !p.1.is_finite()) {
            return GammaEstimate { gamma: f64::NAN, residual: f64::INFINITY, poor_fit: true };
        }
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1.ln()).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1.ln() - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        let slope = sxy / sxx;
        let residual =
            (pts.iter().map(|p| (p.1.ln() - my - slope * (p.0 - mx)).powi(2)).sum::<f64>() / n).sqrt();
        GammaEstimate { gamma: slope, residual, poor_fit: residual > 0.05 || slope <= 0.0 || slope > 2.0 + 1e-6 }
    }

    /// Proxy for membership in the Filipovic-type space of the jump representation:
    /// `K` bounded on `[0, T]` and `int_0^T K'(t)^2 dt` finite.
    pub fn jump_dual_eligibility(&self, horizon: f64) -> Eligibility {
        if self.singular_exponent() < 0.0 || !self.sup_abs(horizon).is_finite() {
            return Eligibility { eligible: false, reason: "kernel is unbounded near t = 0".into() };
        }
        // Derivative energy on dyadic bands [T 2^-(j+1), T 2^-j].
        let band = |j: i32| {
            let hi = horizon * 2f64.powi(-j);
            quad::adaptive(&|t| self.derivative(t).powi(2), 0.5 * hi, hi, 1e-8)
        };
        let head: f64 = (0..20).map(band).sum();
        let tail: f64 = (20..60).map(band).sum();
        if !(head.is_finite() && tail.is_finite()) || tail > 1e-3 * head + 1e-12 {
            return Eligibility {
                eligible: false,
                reason: "derivative is not square integrable near t = 0".into(),
            };
        }
        Eligibility { eligible: true, reason: "bounded with square-integrable derivative".into() }
    }

    pub fn is_jump_dual_eligible(&self, horizon: f64) -> bool {
        self.jump_dual_eligibility(horizon).eligible
    }
}

enum ClosedForm {
    Power { coef: f64, exponent: f64 },
    Exp { coef: f64, rate: f64 },
}

fn product_closed_form(members: &[Kernel]) -> Option<ClosedForm> {
    let mut coef = 1.0;
    let mut exponent = 0.0;
    let mut rate = 0.0;
    for k in members {
        match &k.family {
            Family::Constant(c) => coef *= c,
            Family::Fractional(h) => exponent += h - 0.5,
            Family::Exponential(b) => rate += b,
            _ => return None,
        }
    }
    match (exponent != 0.0, rate != 0.0) {
        (_, false) => Some(ClosedForm::Power { coef, exponent }),
        (false, true) => Some(ClosedForm::Exp { coef, rate }),
        (true, true) => None,
    }
}

/// `coef * int_{u0}^{u1} u^e du` for `e > -1`.
fn power_integral(e: f64, coef: f64, u0: f64, u1: f64) -> f64 {
    let p = e + 1.0;
    if u0 > 0.0 {
        // u1^p - u0^p without cancellation.
        coef * u0.powf(p) * (p * ((u1 - u0) / u0).ln_1p()).exp_m1() / p
    } else {
        coef * u1.powf(p) / p
    }
}

/// `coef * int_{u0}^{u1} exp(-rate u) du`.
fn exp_integral(rate: f64, coef: f64, u0: f64, u1: f64) -> f64 {
    -coef * (-rate * u0).exp() * (-rate * (u1 - u0)).exp_m1() / rate
}

/// Quadrature of `f` on `[u0, u1]` where `f(u) ~ u^e` at the origin.
fn singular_quadrature<F: Fn(f64) -> f64>(f: &F, e: f64, u0: f64, u1: f64, tol: f64) -> f64 {
    if e == 0.0 {
        return quad::adaptive(f, u0, u1, tol);
    }
    let p = 1.0 + e;
    let q = 1.0 / p;
    let g = |v: f64| {
        if v <= 0.0 {
            return 0.0;
        }
        let u = v.powf(q);
        f(u) * q * u / v
    };
    quad::adaptive(&g, u0.powf(p), u1.powf(p), tol)
}

/// `int_{u0}^{u1} K1(u) K2(u + lag) du` with `lag >= 0`.
fn pair_lag(k1: &Kernel, k2: &Kernel, lag: f64, u0: f64, u1: f64) -> Result<f64, KernelError> {
    if u1 <= u0 {
        return Ok(0.0);
    }
    if let Family::Sum(m) = &k1.family {
        return m.iter().map(|k| pair_lag(k, k2, lag, u0, u1)).sum();
    }
    if let Family::Sum(m) = &k2.family {
        return m.iter().map(|k| pair_lag(k1, k, lag, u0, u1)).sum();
    }
    if let Some(c) = k2.constant_value() {
        return Ok(c * k1.integral(u0, u1));
    }
    if let Some(c) = k1.constant_value() {
        return Ok(c * k2.integral(u0 + lag, u1 + lag));
    }
    let coincident = lag == 0.0;
    let e = if coincident {
        k1.singular_exponent() + k2.singular_exponent()
    } else {
        k1.singular_exponent()
    };
    if coincident && u0 == 0.0 && e <= -1.0 {
        return Err(KernelError::NonIntegrable { exponent: e });
    }
    match (&k1.family, &k2.family) {
        (Family::Exponential(b1), Family::Exponential(b2)) => {
            return Ok(exp_integral(b1 + b2, (-b2 * lag).exp(), u0, u1));
        }
        (Family::Fractional(h1), Family::Fractional(h2)) if coincident => {
            return Ok(power_integral(h1 + h2 - 1.0, 1.0, u0, u1));
        }
        _ => {}
    }
    let f = |u: f64| k1.value(u) * k2.value(u + lag);
    Ok(singular_quadrature(&f, e, u0, u1, PAIR_TOL))
}

/// `int_a^b K1(T1 - r) K2(T2 - r) dr` for `0 <= a <= b <= min(T1, T2)`.
pub fn pair_integral(k1: &Kernel, k2: &Kernel, t1: f64, t2: f64, a: f64, b: f64) -> Result<f64, KernelError> {
    let tmin = t1.min(t2);
    if !(0.0 <= a && a <= b && b <= tmin) {
        return Err(KernelError::Bounds { a, b, t: tmin });
    }
    if t1 <= t2 {
        pair_lag(k1, k2, t2 - t1, t1 - b, t1 - a)
    } else {
        pair_lag(k2, k1, t1 - t2, t2 - b, t2 - a)
    }
}

/// `int_0^u K(x0 + s) ds` along a unit-speed age trajectory.
pub fn kappa_integral(kernel: &Kernel, start_age: f64, duration: f64) -> Result<f64, KernelError> {
    if kernel.singular_exponent() < 0.0 {
        return Err(KernelError::Ineligible("kernel is unbounded near t = 0".into()));
    }
    if !(start_age >= 0.0 && duration >= 0.0) {
        return Err(KernelError::InvalidParameter("age and duration must be nonnegative".into()));
    }
    Ok(kernel.integral(start_age, start_age + duration))
}

/// `int_0^u K(x + s) K(y + s) ds` for two ages drifting together.
pub fn kappa_pair_integral(kernel: &Kernel, x: f64, y: f64, duration: f64) -> f64 {
    let (lo, hi) = if x <= y { (x, y) } else { (y, x) };
    pair_lag(kernel, kernel, hi - lo, lo, lo + duration).unwrap_or(f64::NAN)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn evaluation_examples() {
        assert_eq!(Kernel::fractional(0.5).unwrap().eval(3.7).unwrap(), 1.0);
        assert_eq!(Kernel::constant(1.0).unwrap().eval(0.2).unwrap(), 1.0);
        assert_relative_eq!(Kernel::exponential(2.0).unwrap().eval(0.5).unwrap(), 0.367_879_441_171_442_3, max_relative = 1e-15);
        assert!(matches!(Kernel::fractional(0.3).unwrap().eval(0.0), Err(KernelError::Domain { .. })));
    }

    #[test]
    fn parameter_validation() {
        assert!(Kernel::fractional(1.0).is_err());
        assert!(Kernel::fractional(0.0).is_err());
        assert!(Kernel::exponential(0.0).is_err());
        assert!(Kernel::sum(vec![]).is_err());
        assert!(Kernel::constant(1.0).unwrap().with_gamma(2.5).is_err());
    }

    #[test]
    fn cell_integral_examples() {
        let c = Kernel::constant(1.0).unwrap();
        assert_eq!(c.cell_integral(1.0, 0.0, 1.0).unwrap(), 1.0);
        let f = Kernel::fractional(0.1).unwrap();
        assert_relative_eq!(f.cell_integral(1.0, 0.0, 1.0).unwrap(), 1.0 / 0.6, max_relative = 1e-14);
        let e = Kernel::exponential(1.0).unwrap();
        assert_relative_eq!(e.cell_integral(1.0, 0.0, 1.0).unwrap(), 1.0 - (-1f64).exp(), max_relative = 1e-14);
        assert!(c.cell_integral(1.0, 0.5, 1.5).is_err());
    }

    #[test]
    fn product_quadrature_matches_closed_form() {
        // Fractional times exponential has no closed form; compare against a fine midpoint sum of
        // the substituted integrand computed independently.
        let k = Kernel::product(vec![Kernel::fractional(0.2).unwrap(), Kernel::exponential(1.5).unwrap()]).unwrap();
        let got = k.integral(0.0, 1.0);
        let p: f64 = 0.7;
        let n = 2_000_000;
        let mut s = 0.0;
        for i in 0..n {
            let v = (i as f64 + 0.5) / n as f64;
            let u = v.powf(1.0 / p);
            s += (-1.5 * u).exp() / p;
        }
        assert_relative_eq!(got, s / n as f64, max_relative = 1e-9);
    }

    #[test]
    fn pair_integral_examples() {
        let f = Kernel::fractional(0.25).unwrap();
        assert_relative_eq!(pair_integral(&f, &f, 1.0, 1.0, 0.0, 1.0).unwrap(), 2.0, max_relative = 1e-13);
        let c = Kernel::constant(1.0).unwrap();
        assert_eq!(pair_integral(&c, &c, 3.0, 2.0, 0.0, 0.5).unwrap(), 0.5);
        let e = Kernel::exponential(1.0).unwrap();
        assert_relative_eq!(
            pair_integral(&e, &e, 1.0, 1.0, 0.0, 1.0).unwrap(),
            (1.0 - (-2f64).exp()) / 2.0,
            max_relative = 1e-14
        );
    }

    #[test]
    fn product_must_stay_square_integrable() {
        let f = Kernel::fractional(0.2).unwrap();
        assert!(matches!(Kernel::product(vec![f.clone(), f.clone()]), Err(KernelError::InvalidParameter(_))));
        let g = Kernel::fractional(0.45).unwrap();
        let p = Kernel::product(vec![g.clone(), g.clone()]).unwrap();
        assert!(pair_integral(&p, &f, 1.0, 1.0, 0.0, 1.0).unwrap().is_finite());
    }

    #[test]
    fn fractional_pair_with_distinct_maturities() {
        // int_0^1 (1-r)^(-0.3) (1.5-r)^(-0.3) dr by an independent substitution
        // s = (1-r)^0.7 and a fine midpoint rule.
        let f = Kernel::fractional(0.2).unwrap();
        let got = pair_integral(&f, &f, 1.0, 1.5, 0.0, 1.0).unwrap();
        let n = 1_000_000;
        let mut s = 0.0;
        for i in 0..n {
            let v = (i as f64 + 0.5) / n as f64;
            let u = v.powf(1.0 / 0.7);
            s += (u + 0.5).powf(-0.3) / 0.7;
        }
        assert_relative_eq!(got, s / n as f64, max_relative = 1e-9);
    }

    #[test]
    fn gamma_estimates() {
        let g = Kernel::fractional(0.3).unwrap().estimate_gamma(1.0);
        assert!((g.gamma - 0.6).abs() < 0.05 && !g.poor_fit);
        assert!((Kernel::constant(1.0).unwrap().estimate_gamma(1.0).gamma - 1.0).abs() < 1e-9);
        assert!((Kernel::exponential(1.0).unwrap().estimate_gamma(1.0).gamma - 1.0).abs() < 0.05);
    }

    #[test]
    fn eligibility() {
        assert!(Kernel::exponential(2.0).unwrap().is_jump_dual_eligible(1.0));
        assert!(Kernel::constant(1.0).unwrap().is_jump_dual_eligible(1.0));
        assert!(!Kernel::fractional(0.7).unwrap().is_jump_dual_eligible(1.0));
        assert!(!Kernel::fractional(0.3).unwrap().is_jump_dual_eligible(1.0));
        assert!(Kernel::shifted_fractional(0.3, 0.1, 1.0, 400).unwrap().is_jump_dual_eligible(1.0));
        let shifted = Kernel::sum(vec![Kernel::exponential(1.0).unwrap(), Kernel::constant(0.5).unwrap()]).unwrap();
        assert!(shifted.is_jump_dual_eligible(1.0));
    }

    #[test]
    fn kappa_examples() {
        let c = Kernel::constant(1.0).unwrap();
        assert_eq!(kappa_integral(&c, 0.3, 0.5).unwrap(), 0.5);
        let e = Kernel::exponential(1.0).unwrap();
        assert_relative_eq!(kappa_integral(&e, 0.0, 1.0).unwrap(), 1.0 - (-1f64).exp(), max_relative = 1e-14);
        assert_eq!(kappa_integral(&e, 0.4, 0.0).unwrap(), 0.0);
        assert!(kappa_integral(&Kernel::fractional(0.3).unwrap(), 0.0, 1.0).is_err());
    }

    #[test]
    fn tabulated_interpolation_is_monotone_and_exact_at_nodes() {
        let t: Vec<f64> = (0..20).map(|i| i as f64 * 0.1).collect();
        let v: Vec<f64> = t.iter().map(|x| (-x * 2.0f64).exp()).collect();
        let k = Kernel::tabulated(t.clone(), v.clone()).unwrap();
        for (x, y) in t.iter().zip(&v) {
            assert_relative_eq!(k.value(*x), *y, max_relative = 1e-15);
        }
        let mut prev = f64::INFINITY;
        for i in 0..2000 {
            let x = i as f64 * 0.001;
            let y = k.value(x);
            assert!(y <= prev + 1e-15);
            prev = y;
        }
        assert_relative_eq!(k.integral(0.0, 1.9), (1.0 - (-3.8f64).exp()) / 2.0, max_relative = 1e-4);
    }
}
