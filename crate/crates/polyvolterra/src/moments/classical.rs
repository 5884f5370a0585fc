//! Constant kernel `K = I`: moments of a polynomial diffusion from its generator.

use crate::model::{multi_indices, PolyModel};
use nalgebra::{DMatrix, DVector};

/// `E[X_t^alpha]` for every `|alpha| <= N`, in [`multi_indices`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassicalMoments {
    pub alphas: Vec<Vec<usize>>,
    pub values: Vec<f64>,
}

impl ClassicalMoments {
    pub fn get(&self, alpha: &[usize]) -> Option<f64> {
        self.alphas.iter().position(|a| a == alpha).map(|i| self.values[i])
    }
}

/// Generator on monomials of degree `<= N`: column `alpha` holds the coefficients of `L x^alpha`.
pub fn generator_matrix(model: &PolyModel, order: usize) -> DMatrix<f64> {
    let d = model.dim();
    let basis = multi_indices(order, d);
    let n = basis.len();
    let pos = |a: &[usize]| basis.iter().position(|b| b == a).expect("degree stays within the basis");
    let mut g = DMatrix::zeros(n, n);
    let b0 = model.b0();
    let b = model.b();
    for (col, alpha) in basis.iter().enumerate() {
        let mut add = |target: Vec<usize>, v: f64| {
            if v != 0.0 {
                g[(pos(&target), col)] += v;
            }
        };
        for i in 0..d {
            if alpha[i] == 0 {
                continue;
            }
            let ai = alpha[i] as f64;
            let mut lower = alpha.clone();
            lower[i] -= 1;
            add(lower.clone(), ai * b0[i]);
            for j in 0..d {
                let mut t = lower.clone();
                t[j] += 1;
                add(t, ai * b[(i, j)]);
            }
        }
        for i in 0..d {
            for k in 0..d {
                let f = if i == k {
                    (alpha[i] * alpha[i].saturating_sub(1)) as f64
                } else {
                    (alpha[i] * alpha[k]) as f64
                };
                if f == 0.0 {
                    continue;
                }
                let mut lower = alpha.clone();
                lower[i] -= 1;
                lower[k] -= 1;
                add(lower.clone(), 0.5 * f * model.a0()[(i, k)]);
                for j in 0..d {
                    let mut t = lower.clone();
                    t[j] += 1;
                    add(t, 0.5 * f * model.a_lin(j)[(i, k)]);
                    for l in 0..d {
                        let mut t = lower.clone();
                        t[j] += 1;
                        t[l] += 1;
                        add(t, 0.5 * f * model.a_quad(j, l)[(i, k)]);
                    }
                }
            }
        }
    }
    g
}

/// Integrates `V' = G V`, `V(0) = I` with classical Runge-Kutta and returns `H(x0)^T V(t)`.
pub fn classical_moments_ode(model: &PolyModel, x0: &DVector<f64>, order: usize, t: f64) -> ClassicalMoments {
    let g = generator_matrix(model, order);
    let basis = multi_indices(order, model.dim());
    let n = basis.len();
    let norm = g.abs().row_sum().max().max(1e-12);
    let steps = ((t.abs() * norm * 200.0).ceil() as usize).max(2000);
    let h = t / steps as f64;
    let mut v = DMatrix::<f64>::identity(n, n);
    for _ in 0..steps {
        let k1 = &g * &v;
        let k2 = &g * (&v + &k1 * (0.5 * h));
        let k3 = &g * (&v + &k2 * (0.5 * h));
        let k4 = &g * (&v + &k3 * h);
        v += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    }
    let h0 = DVector::from_iterator(
        n,
        basis.iter().map(|a| a.iter().zip(x0.iter()).map(|(&k, &x)| x.powi(k as i32)).product::<f64>()),
    );
    let values = (v.transpose() * h0).iter().copied().collect();
    ClassicalMoments { alphas: basis, values }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn geometric_brownian_moments() {
        let model = PolyModel::scalar(1.0, 0.0, 0.1, 0.0, 0.0, 0.04);
        let x0 = DVector::from_element(1, 1.0);
        let out = classical_moments_ode(&model, &x0, 4, 1.0);
        for k in 1..=4usize {
            let kf = k as f64;
            let exact = (0.1 * kf + 0.02 * kf * (kf - 1.0)).exp();
            assert!((out.get(&[k]).unwrap() - exact).abs() < 1e-10 * exact);
        }
    }

    #[test]
    fn frozen_dynamics() {
        let model = PolyModel::new(DVector::from_vec(vec![0.4, -1.5])).unwrap();
        let x0 = DVector::from_vec(vec![0.4, -1.5]);
        let out = classical_moments_ode(&model, &x0, 3, 2.0);
        assert_eq!(out.get(&[1, 2]).unwrap(), 0.4 * 2.25);
    }
}
