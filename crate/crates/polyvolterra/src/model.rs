//! Polynomial Volterra model coefficients and moment-index combinatorics.
//!
//! Drift `b(x) = b0 + B x` (column `i` of `B` is `b_i`) and diffusion
//! `a(x) = A0 + sum_i A_i x_i + sum_{i,j} A_ij x_i x_j`. Letters of words are 1-based.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("letter {letter} is outside 1..={dim}")]
    LetterOutOfRange { letter: usize, dim: usize },
    #[error("diffusion matrix is not symmetric (residual {residual:.3e})")]
    Asymmetric { residual: f64 },
    #[error("diffusion matrix is indefinite: eigenvalue {eigenvalue:.6e} at x = {at:?}")]
    Indefinite { eigenvalue: f64, at: Vec<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JacobiParams {
    pub lower: f64,
    pub upper: f64,
    pub lambda: f64,
    pub mean: f64,
    pub c: f64,
}

impl JacobiParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.lower < self.upper) || !(self.lower <= self.mean && self.mean <= self.upper) {
            return Err(ModelError::InvalidParameter("Jacobi needs lower <= mean <= upper and lower < upper".into()));
        }
        if !(self.lambda >= 0.0) || !(self.c > 0.0) {
            return Err(ModelError::InvalidParameter("Jacobi needs lambda >= 0 and c > 0".into()));
        }
        Ok(())
    }

    pub fn half_width(&self) -> f64 {
        0.5 * (self.upper - self.lower)
    }

    pub fn center(&self) -> f64 {
        0.5 * (self.upper + self.lower)
    }

    /// Image of a point of `[-1, 1]` under the affine map onto `[lower, upper]`.
    pub fn from_ball(&self, x: f64) -> f64 {
        self.half_width() * x + self.center()
    }

    pub fn to_ball(&self, y: f64) -> f64 {
        (y - self.center()) / self.half_width()
    }

    /// Drift coefficients `(b0, b1)` of the one-dimensional ball model mapped onto this interval.
    pub fn ball_drift(&self) -> (f64, f64) {
        (self.lambda * self.to_ball(self.mean), -self.lambda)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StateSpace {
    Free,
    UnitBall { c: f64 },
    Jacobi(JacobiParams),
}

/// Initial curve `g0`: constant `X0` or a table with linear interpolation.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialCurve {
    Constant(DVector<f64>),
    Tabulated { times: Vec<f64>, values: Vec<DVector<f64>> },
}

impl InitialCurve {
    pub fn at(&self, t: f64) -> DVector<f64> {
        match self {
            InitialCurve::Constant(x) => x.clone(),
            InitialCurve::Tabulated { times, values } => {
                let n = times.len();
                if t <= times[0] {
                    return values[0].clone();
                }
                if t >= times[n - 1] {
                    return values[n - 1].clone();
                }
                let i = times.partition_point(|&s| s <= t) - 1;
                let w = (t - times[i]) / (times[i + 1] - times[i]);
                &values[i] * (1.0 - w) + &values[i + 1] * w
            }
        }
    }

    fn dim(&self) -> usize {
        match self {
            InitialCurve::Constant(x) => x.len(),
            InitialCurve::Tabulated { values, .. } => values[0].len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolyModel {
    dim: usize,
    b0: DVector<f64>,
    b: DMatrix<f64>,
    a0: DMatrix<f64>,
    a_lin: Vec<DMatrix<f64>>,
    a_quad: Vec<DMatrix<f64>>,
    initial: InitialCurve,
    state_space: StateSpace,
}

impl PolyModel {
    /// Model with all coefficients zero and constant initial value `x0`.
    pub fn new(x0: DVector<f64>) -> Result<Self, ModelError> {
        let d = x0.len();
        if d == 0 {
            return Err(ModelError::Dimension("dimension must be at least 1".into()));
        }
        Ok(Self {
            dim: d,
            b0: DVector::zeros(d),
            b: DMatrix::zeros(d, d),
            a0: DMatrix::zeros(d, d),
            a_lin: vec![DMatrix::zeros(d, d); d],
            a_quad: vec![DMatrix::zeros(d, d); d * d],
            initial: InitialCurve::Constant(x0),
            state_space: StateSpace::Free,
        })
    }

    /// One-dimensional model `b(x) = b0 + b1 x`, `a(x) = a0 + a1 x + a11 x^2`.
    pub fn scalar(x0: f64, b0: f64, b1: f64, a0: f64, a1: f64, a11: f64) -> Self {
        let s = |v: f64| DMatrix::from_element(1, 1, v);
        Self {
            dim: 1,
            b0: DVector::from_element(1, b0),
            b: s(b1),
            a0: s(a0),
            a_lin: vec![s(a1)],
            a_quad: vec![s(a11)],
            initial: InitialCurve::Constant(DVector::from_element(1, x0)),
            state_space: StateSpace::Free,
        }
    }

    /// Unit-ball model with `a(x) = c^2 (1 - |x|^2) I`.
    pub fn unit_ball(b0: DVector<f64>, b: DMatrix<f64>, c: f64, x0: DVector<f64>) -> Result<Self, ModelError> {
        let d = x0.len();
        if x0.norm() > 1.0 {
            return Err(ModelError::InvalidParameter("initial value must lie in the closed unit ball".into()));
        }
        let eye = DMatrix::<f64>::identity(d, d);
        let mut m = Self::new(x0)?.with_b0(b0)?.with_b(b)?.with_a0(&eye * (c * c))?;
        for i in 0..d {
            m = m.with_a_quad(i + 1, i + 1, &eye * (-c * c))?;
        }
        m.state_space = StateSpace::UnitBall { c };
        Ok(m)
    }

    /// Jacobi model `b(y) = lambda (mean - y)`, `a(y) = c^2 (y - lower)(upper - y)`.
    pub fn jacobi(p: JacobiParams, y0: f64) -> Result<Self, ModelError> {
        p.validate()?;
        if !(p.lower <= y0 && y0 <= p.upper) {
            return Err(ModelError::InvalidParameter("initial value must lie in [lower, upper]".into()));
        }
        let c2 = p.c * p.c;
        let mut m = Self::scalar(y0, p.lambda * p.mean, -p.lambda, -c2 * p.lower * p.upper, c2 * (p.lower + p.upper), -c2);
        m.state_space = StateSpace::Jacobi(p);
        Ok(m)
    }

    fn square(&self, m: &DMatrix<f64>, what: &str) -> Result<(), ModelError> {
        if m.shape() != (self.dim, self.dim) {
            return Err(ModelError::Dimension(format!("{what} must be {0}x{0}", self.dim)));
        }
        Ok(())
    }

    pub fn with_b0(mut self, b0: DVector<f64>) -> Result<Self, ModelError> {
        if b0.len() != self.dim {
            return Err(ModelError::Dimension(format!("b0 must have length {}", self.dim)));
        }
        self.b0 = b0;
        Ok(self)
    }

    pub fn with_b(mut self, b: DMatrix<f64>) -> Result<Self, ModelError> {
        self.square(&b, "B")?;
        self.b = b;
        Ok(self)
    }

    pub fn with_a0(mut self, a0: DMatrix<f64>) -> Result<Self, ModelError> {
        self.square(&a0, "A0")?;
        self.a0 = a0;
        Ok(self)
    }

    /// Set `A_i` (1-based).
    pub fn with_a_lin(mut self, i: usize, a: DMatrix<f64>) -> Result<Self, ModelError> {
        self.square(&a, "A_i")?;
        self.letter(i)?;
        self.a_lin[i - 1] = a;
        Ok(self)
    }

    /// Set `A_ij` (1-based).
    pub fn with_a_quad(mut self, i: usize, j: usize, a: DMatrix<f64>) -> Result<Self, ModelError> {
        self.square(&a, "A_ij")?;
        self.letter(i)?;
        self.letter(j)?;
        self.a_quad[(i - 1) * self.dim + j - 1] = a;
        Ok(self)
    }

    pub fn with_initial(mut self, g0: InitialCurve) -> Result<Self, ModelError> {
        if g0.dim() != self.dim {
            return Err(ModelError::Dimension("initial curve has the wrong dimension".into()));
        }
        if let InitialCurve::Tabulated { times, values } = &g0 {
            if times.len() < 2 || times.len() != values.len() || times.windows(2).any(|w| w[1] <= w[0]) {
                return Err(ModelError::InvalidParameter("g0 table needs increasing times matching values".into()));
            }
        }
        self.initial = g0;
        Ok(self)
    }

    pub fn with_state_space(mut self, s: StateSpace) -> Self {
        self.state_space = s;
        self
    }

    fn letter(&self, i: usize) -> Result<(), ModelError> {
        if i == 0 || i > self.dim {
            return Err(ModelError::LetterOutOfRange { letter: i, dim: self.dim });
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn b0(&self) -> &DVector<f64> {
        &self.b0
    }

    /// Matrix whose column `j` is `b_j`.
    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn a0(&self) -> &DMatrix<f64> {
        &self.a0
    }

    /// `A_i` for 0-based `i`.
    pub fn a_lin(&self, i: usize) -> &DMatrix<f64> {
        &self.a_lin[i]
    }

    /// `A_ij` for 0-based `i, j`.
    pub fn a_quad(&self, i: usize, j: usize) -> &DMatrix<f64> {
        &self.a_quad[i * self.dim + j]
    }

    pub fn initial(&self) -> &InitialCurve {
        &self.initial
    }

    pub fn state_space(&self) -> &StateSpace {
        &self.state_space
    }

    /// Constant initial value, if `g0` is constant.
    pub fn x0(&self) -> Option<&DVector<f64>> {
        match &self.initial {
            InitialCurve::Constant(x) => Some(x),
            InitialCurve::Tabulated { .. } => None,
        }
    }

    pub fn g0(&self, t: f64) -> DVector<f64> {
        self.initial.at(t)
    }

    pub fn is_affine(&self) -> bool {
        self.a_quad.iter().all(|a| a.iter().all(|v| *v == 0.0))
    }

    pub fn drift(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.b0 + &self.b * x
    }

    pub fn diffusion(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let d = self.dim;
        let mut a = self.a0.clone();
        for i in 0..d {
            a += &self.a_lin[i] * x[i];
            for j in 0..d {
                a += &self.a_quad[i * d + j] * (x[i] * x[j]);
            }
        }
        a
    }

    /// Copy with drift coefficients scaled by `drift` and diffusion coefficients by `diffusion`.
    pub fn scaled(&self, drift: f64, diffusion: f64) -> Self {
        let mut m = self.clone();
        m.b0 *= drift;
        m.b *= drift;
        m.a0 *= diffusion;
        m.a_lin.iter_mut().for_each(|a| *a *= diffusion);
        m.a_quad.iter_mut().for_each(|a| *a *= diffusion);
        m
    }

    /// Sample points used to validate `a(x)` on the declared state space.
    fn sample_points(&self, n: usize, seed: u64) -> Vec<DVector<f64>> {
        let d = self.dim;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x0 = self.g0(0.0);
        let mut pts = vec![x0.clone()];
        let in_ball = |rng: &mut ChaCha8Rng, center: &DVector<f64>, radius: f64| loop {
            let v = DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0));
            if v.norm() <= 1.0 {
                return center + v * radius;
            }
        };
        for _ in 0..n {
            let p = match &self.state_space {
                StateSpace::Free => {
                    let r = if x0.norm() > 0.0 { x0.norm() } else { 1.0 };
                    in_ball(&mut rng, &x0, r)
                }
                StateSpace::UnitBall { .. } => in_ball(&mut rng, &DVector::zeros(d), 1.0),
                StateSpace::Jacobi(p) => DVector::from_element(1, rng.random_range(p.lower..=p.upper)),
            };
            pts.push(p);
        }
        pts
    }

    /// Checks symmetry and positive semidefiniteness of `a(x)` at sampled points of the state
    /// space (the ball of radius `|x0|` around `x0` for free models) and estimates the
    /// linear-growth constant.
    pub fn validate(&self, sample_count: usize, seed: u64) -> Result<ValidationReport, ModelError> {
        let pts = self.sample_points(sample_count, seed);
        let mut report = ValidationReport {
            samples: pts.len(),
            symmetry_residual: 0.0,
            min_eigenvalue: f64::INFINITY,
            argmin: pts[0].iter().copied().collect(),
            growth_constant: 0.0,
            affine: self.is_affine(),
        };
        for x in &pts {
            let a = self.diffusion(x);
            report.symmetry_residual = report.symmetry_residual.max((&a - a.transpose()).amax());
            let eig = SymmetricEigen::new(a.clone()).eigenvalues.min();
            if eig < report.min_eigenvalue {
                report.min_eigenvalue = eig;
                report.argmin = x.iter().copied().collect();
            }
            let (s, _) = psd_sqrt(&a);
            let g = self.drift(x).norm().max(s.norm()) / (1.0 + x.norm());
            report.growth_constant = report.growth_constant.max(g);
        }
        if report.symmetry_residual > 1e-10 {
            return Err(ModelError::Asymmetric { residual: report.symmetry_residual });
        }
        if report.min_eigenvalue < -1e-10 {
            return Err(ModelError::Indefinite { eigenvalue: report.min_eigenvalue, at: report.argmin });
        }
        Ok(report)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub samples: usize,
    pub symmetry_residual: f64,
    pub min_eigenvalue: f64,
    pub argmin: Vec<f64>,
    pub growth_constant: f64,
    pub affine: bool,
}

/// Symmetric PSD square root with negative eigenvalues clipped to zero.
/// Returns the root and the magnitude of the most negative clipped eigenvalue.
pub fn psd_sqrt(a: &DMatrix<f64>) -> (DMatrix<f64>, f64) {
    if a.nrows() == 1 {
        let v = a[(0, 0)];
        return (DMatrix::from_element(1, 1, v.max(0.0).sqrt()), (-v).max(0.0));
    }
    let eig = SymmetricEigen::new(a.clone());
    let mut clip: f64 = 0.0;
    let roots = eig.eigenvalues.map(|l| {
        clip = clip.max(-l);
        l.max(0.0).sqrt()
    });
    (&eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose(), clip)
}

#[derive(Debug, Clone, PartialEq)]
pub enum DriftCheck {
    /// Passed; `sufficient` tells whether the eigenvalue bound alone decided it.
    Pass { sufficient: bool },
    Fail { witness: Vec<f64>, value: f64 },
}

impl DriftCheck {
    pub fn passed(&self) -> bool {
        matches!(self, DriftCheck::Pass { .. })
    }
}

fn halton(index: usize, base: usize) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    let mut i = index;
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

const PRIMES: [usize; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];

/// Inward-pointing drift on the unit sphere: `x^T (b0 + B x) <= 0` for `|x| = 1`.
pub fn check_ball_drift_condition(b0: &DVector<f64>, b: &DMatrix<f64>, n_samples: usize) -> DriftCheck {
    let d = b0.len();
    let sym = (b + b.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym.clone());
    if b0.norm() + eig.eigenvalues.max() <= 0.0 {
        return DriftCheck::Pass { sufficient: true };
    }
    let value = |x: &DVector<f64>| x.dot(&(b0 + b * x));
    let mut candidates: Vec<DVector<f64>> = Vec::new();
    for i in 0..d {
        for s in [1.0, -1.0] {
            let mut e = DVector::zeros(d);
            e[i] = s;
            candidates.push(e);
            candidates.push(eig.eigenvectors.column(i).into_owned() * s);
        }
    }
    if b0.norm() > 0.0 {
        candidates.push(b0.normalize());
    }
    if d > 1 {
        for n in 1..=n_samples {
            let v = DVector::from_fn(d, |i, _| 2.0 * halton(n, PRIMES[i % PRIMES.len()]) - 1.0);
            if v.norm() > 1e-12 {
                candidates.push(v.normalize());
            }
        }
    }
    let (best, val) = candidates
        .iter()
        .map(|x| (x, value(x)))
        .fold((None, f64::NEG_INFINITY), |acc, (x, v)| if v > acc.1 { (Some(x), v) } else { acc });
    if val > 0.0 {
        DriftCheck::Fail { witness: best.unwrap().iter().copied().collect(), value: val }
    } else {
        DriftCheck::Pass { sufficient: false }
    }
}

/// `alpha(w)`: letter counts of a 1-based word.
pub fn multi_index_of_word(word: &[usize], d: usize) -> Result<Vec<usize>, ModelError> {
    let mut alpha = vec![0; d];
    for &l in word {
        if l == 0 || l > d {
            return Err(ModelError::LetterOutOfRange { letter: l, dim: d });
        }
        alpha[l - 1] += 1;
    }
    Ok(alpha)
}

/// Canonical nondecreasing word with the given letter counts.
pub fn word_of_multi_index(alpha: &[usize]) -> Vec<usize> {
    alpha.iter().enumerate().flat_map(|(i, &k)| std::iter::repeat_n(i + 1, k)).collect()
}

/// All multi-indices with `|alpha| <= n`, by degree and then lexicographically descending.
pub fn multi_indices(n: usize, d: usize) -> Vec<Vec<usize>> {
    fn rec(d: usize, left: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == d - 1 {
            cur.push(left);
            out.push(cur.clone());
            cur.pop();
            return;
        }
        for k in (0..=left).rev() {
            cur.push(k);
            rec(d, left - k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    for p in 0..=n {
        rec(d, p, &mut Vec::new(), &mut out);
    }
    out
}

/// Enumeration of `{(p, w) : p <= N, w in {1..d}^p}` by level then lexicographic word order.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexSet {
    order: usize,
    dim: usize,
    offsets: Vec<usize>,
}

impl IndexSet {
    pub fn new(order: usize, dim: usize) -> Result<Self, ModelError> {
        if dim == 0 {
            return Err(ModelError::Dimension("dimension must be at least 1".into()));
        }
        let mut offsets = vec![0];
        for p in 0..=order {
            offsets.push(offsets[p] + dim.pow(p as u32));
        }
        Ok(Self { order, dim, offsets })
    }

    /// `D_N`.
    pub fn len(&self) -> usize {
        self.offsets[self.order + 1]
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn index_of(&self, word: &[usize]) -> Result<usize, ModelError> {
        let p = word.len();
        if p > self.order {
            return Err(ModelError::InvalidParameter(format!("word longer than N = {}", self.order)));
        }
        let mut rank = 0;
        for &l in word {
            if l == 0 || l > self.dim {
                return Err(ModelError::LetterOutOfRange { letter: l, dim: self.dim });
            }
            rank = rank * self.dim + (l - 1);
        }
        Ok(self.offsets[p] + rank)
    }

    pub fn word(&self, index: usize) -> Option<Vec<usize>> {
        let p = (0..=self.order).find(|&p| index < self.offsets[p + 1])?;
        let mut rank = index - self.offsets[p];
        let mut w = vec![0; p];
        for slot in w.iter_mut().rev() {
            *slot = rank % self.dim + 1;
            rank /= self.dim;
        }
        Some(w)
    }

    pub fn iter(&self) -> impl Iterator<Item = Vec<usize>> + '_ {
        (0..self.len()).map(move |i| self.word(i).expect("index in range"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation_examples() {
        let bs = PolyModel::scalar(1.0, 0.0, 0.1, 0.0, 0.0, 0.04);
        let r = bs.validate(500, 1).unwrap();
        assert!(r.min_eigenvalue >= 0.0);
        let ball = PolyModel::unit_ball(DVector::zeros(2), -DMatrix::identity(2, 2), 0.5, DVector::from_vec(vec![0.3, 0.1])).unwrap();
        assert!(ball.validate(500, 1).is_ok());
        let bad = PolyModel::new(DVector::zeros(2)).unwrap().with_a0(-DMatrix::identity(2, 2)).unwrap();
        assert!(matches!(bad.validate(10, 1), Err(ModelError::Indefinite { .. })));
    }

    #[test]
    fn negative_region_is_reported_when_sampled() {
        let bs = PolyModel::scalar(1.0, 0.0, 0.1, 0.0, 0.0, 0.04);
        // a(x) = 0.04 x^2 is nonnegative everywhere, including x < 0.
        assert!(bs.clone().with_initial(InitialCurve::Constant(DVector::from_element(1, -2.0))).unwrap().validate(100, 3).is_ok());
        let affine = PolyModel::scalar(0.0, 0.0, 0.0, 0.02, 0.1, 0.0);
        assert!(matches!(affine.validate(200, 3), Err(ModelError::Indefinite { .. })));
    }

    #[test]
    fn drift_condition_examples() {
        assert!(check_ball_drift_condition(&DVector::zeros(3), &(-DMatrix::identity(3, 3)), 1000).passed());
        match check_ball_drift_condition(&DVector::from_vec(vec![2.0, 0.0]), &DMatrix::zeros(2, 2), 1000) {
            DriftCheck::Fail { witness, value } => {
                assert_eq!(witness, vec![1.0, 0.0]);
                assert_eq!(value, 2.0);
            }
            other => panic!("expected failure, got {other:?}"),
        }
        let p = JacobiParams { lower: -1.0, upper: 1.0, lambda: 1.0, mean: 0.5, c: 1.0 };
        let (b0, b1) = p.ball_drift();
        assert!(check_ball_drift_condition(&DVector::from_element(1, b0), &DMatrix::from_element(1, 1, b1), 10).passed());
    }

    #[test]
    fn drift_condition_found_by_sampling() {
        // |b0| + lambda_max = 0.5 > 0, yet x1 - 2 x1^2 - 0.5 x2^2 <= -1/3 on the circle.
        let b = DMatrix::from_row_slice(2, 2, &[-2.0, 0.0, 0.0, -0.5]);
        let r = check_ball_drift_condition(&DVector::from_vec(vec![1.0, 0.0]), &b, 2000);
        assert_eq!(r, DriftCheck::Pass { sufficient: false });
    }

    #[test]
    fn word_examples() {
        assert_eq!(multi_index_of_word(&[1, 2, 1], 2).unwrap(), vec![2, 1]);
        assert_eq!(multi_index_of_word(&[], 2).unwrap(), vec![0, 0]);
        assert_eq!(multi_index_of_word(&[3, 3, 3], 3).unwrap(), vec![0, 0, 3]);
        assert!(multi_index_of_word(&[4], 3).is_err());
    }

    #[test]
    fn index_set_sizes() {
        assert_eq!(IndexSet::new(3, 1).unwrap().len(), 4);
        assert_eq!(IndexSet::new(2, 2).unwrap().len(), 7);
        let z = IndexSet::new(0, 5).unwrap();
        assert_eq!(z.len(), 1);
        assert_eq!(z.word(0).unwrap(), Vec::<usize>::new());
        let s = IndexSet::new(2, 2).unwrap();
        let words: Vec<Vec<usize>> = s.iter().collect();
        assert_eq!(words[1], vec![1]);
        assert_eq!(words[3], vec![1, 1]);
        assert_eq!(words[6], vec![2, 2]);
    }

    #[test]
    fn multi_index_listing() {
        let a = multi_indices(2, 2);
        assert_eq!(a, vec![vec![0, 0], vec![1, 0], vec![0, 1], vec![2, 0], vec![1, 1], vec![0, 2]]);
    }

    #[test]
    fn jacobi_coefficients_match_mapped_ball() {
        let p = JacobiParams { lower: 0.0, upper: 1.0, lambda: 1.3, mean: 0.4, c: 0.8 };
        let jac = PolyModel::jacobi(p, 0.5).unwrap();
        let (b0, b1) = p.ball_drift();
        let ball = PolyModel::unit_ball(DVector::from_element(1, b0), DMatrix::from_element(1, 1, b1), p.c, DVector::from_element(1, 0.0)).unwrap();
        let s = p.half_width();
        for i in 0..10 {
            let y = p.lower + (p.upper - p.lower) * (i as f64 + 0.5) / 10.0;
            let x = DVector::from_element(1, p.to_ball(y));
            let yv = DVector::from_element(1, y);
            assert!((jac.drift(&yv)[0] - s * ball.drift(&x)[0]).abs() < 1e-14);
            assert!((jac.diffusion(&yv)[(0, 0)] - s * s * ball.diffusion(&x)[(0, 0)]).abs() < 1e-14);
            assert!((jac.drift(&yv)[0] - p.lambda * (p.mean - y)).abs() < 1e-14);
            assert!((jac.diffusion(&yv)[(0, 0)] - p.c * p.c * (y - p.lower) * (p.upper - y)).abs() < 1e-14);
        }
    }

    #[test]
    fn psd_sqrt_reconstructs() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let (s, clip) = psd_sqrt(&a);
        assert_eq!(clip, 0.0);
        assert!((&s * &s - &a).amax() < 1e-13);
        let (_, clip) = psd_sqrt(&DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -0.2]));
        assert!((clip - 0.2).abs() < 1e-15);
    }
}
