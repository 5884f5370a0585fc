use nalgebra::{DMatrix, DVector};
use polyvolterra::convolution::Grid;
use polyvolterra::jump::*;
use polyvolterra::kernels::Kernel;
use polyvolterra::model::PolyModel;
use polyvolterra::moments::{solve_moments, SolveOptions};

fn gbm_pair(kernel_b: [f64; 2]) -> PolyModel {
    let mut a11 = DMatrix::zeros(2, 2);
    a11[(0, 0)] = 0.04;
    let mut a22 = DMatrix::zeros(2, 2);
    a22[(1, 1)] = 0.04;
    PolyModel::new(DVector::from_vec(vec![1.0, 1.0]))
        .unwrap()
        .with_b(DMatrix::from_diagonal(&DVector::from_vec(kernel_b.to_vec())))
        .unwrap()
        .with_a_quad(1, 1, a11)
        .unwrap()
        .with_a_quad(2, 2, a22)
        .unwrap()
}

#[test]
fn thinning_reproduces_constant_intensity() {
    // K = 1: total rate b1 k + a11 k (k - 1) / 2 = 3 + 3 = 6 at every time.
    let k = Kernel::constant(1.0).unwrap();
    let mut events = 0usize;
    let mut paths = 0usize;
    while events < 100_000 {
        let p = simulate_jump_dual_1d(1.0, 1.0, &k, 3, 1.0, paths as u64, SignMode::Strict).unwrap();
        events += p.event_times.len();
        paths += 1;
    }
    let rate = events as f64 / paths as f64;
    assert!((rate / 6.0 - 1.0).abs() < 0.02, "rate {rate}");
}

#[test]
fn homogeneous_paths_keep_every_coordinate() {
    let k = Kernel::exponential(1.0).unwrap();
    for seed in 0..200 {
        let p = simulate_jump_dual_1d(0.5, 0.5, &k, 4, 2.0, seed, SignMode::Strict).unwrap();
        assert_eq!(p.survivors(), 4);
        assert!(p.ages.iter().all(|a| matches!(a, Some(x) if (0.0..=2.0).contains(x))));
        assert!(p.event_times.windows(2).all(|w| w[0] <= w[1]));
    }
}

#[test]
fn survivor_pattern_is_exchangeable() {
    // Per-coordinate survival counts; chi-square against equal shares.
    let k = Kernel::exponential(1.0).unwrap();
    let c = ScalarCoefficients { b0: 0.4, b1: 0.3, a0: 0.3, a1: 0.4, a11: 0.2 };
    let n = 20_000;
    let mut alive = [0usize; 3];
    for seed in 0..n {
        let p = simulate_jump_dual_inhom(c, &k, 3, 1.0, seed, SignMode::Strict).unwrap();
        for (i, a) in p.ages.iter().enumerate() {
            alive[i] += a.is_some() as usize;
        }
    }
    let mean = alive.iter().sum::<usize>() as f64 / 3.0;
    let chi2: f64 = alive.iter().map(|&a| (a as f64 - mean).powi(2) / mean).sum();
    // 99% quantile of chi-square with 2 degrees of freedom.
    assert!(chi2 < 9.21, "chi2 {chi2} counts {alive:?}");
}

#[test]
fn constant_kernel_matches_closed_form() {
    let k = Kernel::constant(1.0).unwrap();
    for p in 1..=4usize {
        let e = jump_dual_moment_1d(0.1, 0.04, &k, 1.3, p, 1.0, &JumpRun::new(100, 1)).unwrap();
        let pf = p as f64;
        let exact = 1.3f64.powi(p as i32) * (0.1 * pf + 0.02 * pf * (pf - 1.0)).exp();
        assert_eq!(e.stderr, 0.0);
        assert!((e.value - exact).abs() < 1e-14 * exact);
    }
}

#[test]
fn two_dimensional_geometric_example() {
    // Independent geometric motions: E[X_1^2] = exp(2 * 0.1 + 0.04).
    let model = gbm_pair([0.1, 0.0]);
    let k = Kernel::constant(1.0).unwrap();
    let e = jump_dual_moment_multi(&model, &k, &[2, 0], 1.0, &JumpRun::new(1000, 1)).unwrap();
    assert_eq!(e.stderr, 0.0);
    assert!((e.value - 0.24f64.exp()).abs() < 1e-14);
    let zero = jump_dual_moment_multi(&model, &k, &[0, 0], 1.0, &JumpRun::new(10, 1)).unwrap();
    assert_eq!(zero.value, 1.0);
}

#[test]
fn multivariate_exponential_kernel_matches_step() {
    let mut b = DMatrix::from_element(2, 2, 0.1);
    b[(0, 0)] = 0.2;
    let a12 = DMatrix::from_row_slice(2, 2, &[0.05, 0.02, 0.02, 0.05]);
    let model = PolyModel::new(DVector::from_vec(vec![0.8, 1.1]))
        .unwrap()
        .with_b(b)
        .unwrap()
        .with_a_quad(1, 2, a12.clone())
        .unwrap()
        .with_a_quad(2, 1, a12)
        .unwrap();
    let k = Kernel::exponential(1.5).unwrap();
    let e = jump_dual_moment_multi(&model, &k, &[1, 1], 1.0, &JumpRun::new(100_000, 11)).unwrap();
    let lo = solve_moments(&model, &k, 2, Grid::new(1.0, 100).unwrap(), &SolveOptions::default()).unwrap();
    let hi = solve_moments(&model, &k, 2, Grid::new(1.0, 200).unwrap(), &SolveOptions::default()).unwrap();
    let step = 2.0 * hi.moment(1.0, &[1, 1]).unwrap() - lo.moment(1.0, &[1, 1]).unwrap();
    assert!(e.within(step, 3.0), "{e:?} vs {step}");
}

#[test]
fn inhomogeneous_reduces_to_homogeneous() {
    let k = Kernel::exponential(1.0).unwrap();
    let run = JumpRun::new(5000, 4);
    let a = jump_dual_moment_1d(0.2, 0.1, &k, 0.9, 2, 1.0, &run).unwrap();
    let b = jump_dual_moment_inhom(ScalarCoefficients::homogeneous(0.2, 0.1), &k, 0.9, 2, 1.0, &run).unwrap();
    assert_eq!(a, b);
}

#[test]
fn signed_mode_tracks_negative_drift() {
    // E[X_1] for b1 = -0.3 under K(t) = exp(-2t): 1 - 0.3 / 2.3 (1 - exp(-2.3)).
    let k = Kernel::exponential(2.0).unwrap();
    let exact = 1.0 - 0.3 / 2.3 * (1.0 - (-2.3f64).exp());
    let e = jump_dual_moment_1d(-0.3, 0.0, &k, 1.0, 1, 1.0, &JumpRun::new(200_000, 5).signed()).unwrap();
    assert!(e.within(exact, 3.0), "{e:?} vs {exact}");
}

#[test]
fn seeds_are_reproducible() {
    let k = Kernel::exponential(1.0).unwrap();
    let run = JumpRun::new(3000, 42);
    let a = jump_dual_moment_1d(0.3, 0.1, &k, 1.0, 3, 1.0, &run).unwrap();
    let b = jump_dual_moment_1d(0.3, 0.1, &k, 1.0, 3, 1.0, &run).unwrap();
    assert_eq!(a, b);
    let c = jump_dual_moment_1d(0.3, 0.1, &k, 1.0, 3, 1.0, &JumpRun::new(3000, 43)).unwrap();
    assert_ne!(a.value, c.value);
}
