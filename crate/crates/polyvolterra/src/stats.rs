//! Order-stable estimators.

/// Pairwise (cascade) summation: error grows like `log n` and the result does not depend on
/// how the input was produced, only on its order.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const BLOCK: usize = 32;
    if xs.len() <= BLOCK {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
    pub samples: usize,
}

impl Estimate {
    /// `|value - target| <= k * stderr`, with a floor for exact estimators.
    pub fn within(&self, target: f64, k: f64) -> bool {
        let tol = (k * self.stderr).max(1e-12 * target.abs().max(1.0));
        (self.value - target).abs() <= tol
    }

    /// Two-sided check against another estimate with independent error.
    pub fn within_combined(&self, target: f64, target_stderr: f64, k: f64) -> bool {
        let se = (self.stderr * self.stderr + target_stderr * target_stderr).sqrt();
        (self.value - target).abs() <= (k * se).max(1e-12 * target.abs().max(1.0))
    }
}

/// Mean and standard error by two pairwise passes.
pub fn mean_stderr(xs: &[f64]) -> Estimate {
    let n = xs.len();
    if n == 0 {
        return Estimate { value: f64::NAN, stderr: f64::NAN, samples: 0 };
    }
    if xs.iter().all(|&x| x == xs[0]) {
        return Estimate { value: xs[0], stderr: 0.0, samples: n };
    }
    let mean = pairwise_sum(xs) / n as f64;
    if n == 1 {
        return Estimate { value: mean, stderr: 0.0, samples: 1 };
    }
    let sq: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
    let var = pairwise_sum(&sq) / (n - 1) as f64;
    Estimate { value: mean, stderr: (var / n as f64).sqrt(), samples: n }
}

/// Least-squares slope of `y` against `x`.
pub fn slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_matches_naive_on_integers() {
        let xs: Vec<f64> = (1..=1000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&xs), 500500.0);
    }

    #[test]
    fn constant_sample_has_zero_error() {
        let e = mean_stderr(&[2.5; 17]);
        assert_eq!(e.value, 2.5);
        assert_eq!(e.stderr, 0.0);
    }

    #[test]
    fn known_variance() {
        let e = mean_stderr(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(e.value, 2.5);
        assert!((e.stderr - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn slope_of_line() {
        assert!((slope(&[0.0, 1.0, 2.0], &[1.0, 3.0, 5.0]) - 2.0).abs() < 1e-15);
    }
}
