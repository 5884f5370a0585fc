use nalgebra::{DMatrix, DVector};
use polyvolterra::convolution::Grid;
use polyvolterra::jump::{jump_dual_moment_1d, JumpRun};
use polyvolterra::kernels::Kernel;
use polyvolterra::model::{multi_index_of_word, IndexSet, PolyModel};
use polyvolterra::moments::{solve_moments, MomentTable, SolveOptions};
use polyvolterra::sim::{mc_moment, simulate_paths, SimConfig};
use proptest::prelude::*;

fn two_dim_model(b: [f64; 4], a: [f64; 3], x0: [f64; 2]) -> PolyModel {
    let sym = |v: f64| DMatrix::from_row_slice(2, 2, &[v, 0.5 * v, 0.5 * v, v]);
    PolyModel::new(DVector::from_vec(x0.to_vec()))
        .unwrap()
        .with_b(DMatrix::from_row_slice(2, 2, &b))
        .unwrap()
        .with_a0(sym(a[0]))
        .unwrap()
        .with_a_lin(1, sym(a[1]))
        .unwrap()
        .with_a_quad(1, 1, sym(a[2]))
        .unwrap()
}

fn partial_solve(model: &PolyModel, kernel: &Kernel, order: usize, m: usize, stop: usize) -> MomentTable {
    let opts = SolveOptions { stop_at: Some(stop), allow_collapse: false, ..SolveOptions::default() };
    solve_moments(model, kernel, order, Grid::new(1.0, m).unwrap(), &opts).unwrap()
}

fn coeff() -> impl Strategy<Value = f64> {
    -0.3..0.3f64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn index_enumeration_round_trips(n in 0usize..5, d in 1usize..4) {
        let set = IndexSet::new(n, d).unwrap();
        let expect = if d == 1 { n + 1 } else { (d.pow(n as u32 + 1) - 1) / (d - 1) };
        prop_assert_eq!(set.len(), expect);
        for i in 0..set.len() {
            let w = set.word(i).unwrap();
            prop_assert_eq!(set.index_of(&w).unwrap(), i);
        }
        prop_assert!(set.word(set.len()).is_none());
    }

    #[test]
    fn letter_counts_ignore_order(mut w in proptest::collection::vec(1usize..4, 0..6), seed in any::<u64>()) {
        let a = multi_index_of_word(&w, 3).unwrap();
        let n = w.len();
        if n > 1 {
            w.rotate_left((seed as usize) % n);
            w.swap(0, n - 1);
        }
        prop_assert_eq!(multi_index_of_word(&w, 3).unwrap(), a);
    }

    #[test]
    fn slice_is_symmetric_in_pairs(
        b in proptest::array::uniform4(coeff()),
        a2 in 0.0..0.2f64,
        x0 in proptest::array::uniform2(0.2..1.5f64),
        picks in proptest::collection::vec((0usize..5, 1usize..3), 3),
        rot in 0usize..3,
    ) {
        let model = two_dim_model(b, [0.05, 0.0, a2], x0);
        let kernel = Kernel::fractional(0.35).unwrap();
        let table = partial_solve(&model, &kernel, 3, 12, 7);
        let slice = table.slice().unwrap();
        prop_assert_eq!(slice.value(&[]).unwrap(), 1.0);
        let pairs: Vec<(usize, usize)> = picks.iter().map(|&(t, l)| (7 + t, l)).collect();
        let base = slice.value(&pairs).unwrap();
        let mut perm = pairs.clone();
        perm.rotate_left(rot);
        prop_assert_eq!(slice.value(&perm).unwrap(), base);
        perm.swap(0, 2);
        prop_assert_eq!(slice.value(&perm).unwrap(), base);
    }

    #[test]
    fn diagonal_depends_only_on_letter_counts(
        b in proptest::array::uniform4(coeff()),
        a2 in 0.0..0.2f64,
        x0 in proptest::array::uniform2(0.2..1.5f64),
    ) {
        let model = two_dim_model(b, [0.02, 0.0, a2], x0);
        let kernel = Kernel::exponential(1.0).unwrap();
        let table = partial_solve(&model, &kernel, 3, 10, 10);
        let slice = table.slice().unwrap();
        let set = IndexSet::new(3, 2).unwrap();
        for w in set.iter() {
            let alpha = multi_index_of_word(&w, 2).unwrap();
            let pairs: Vec<(usize, usize)> = w.iter().map(|&l| (10, l)).collect();
            let v = slice.value(&pairs).unwrap();
            let d = table.at_step(10, &alpha).unwrap();
            prop_assert!((v - d).abs() <= 1e-12 * d.abs().max(1.0));
        }
    }

    #[test]
    fn relabelling_coordinates_permutes_moments(
        b in proptest::array::uniform4(coeff()),
        a2 in 0.0..0.2f64,
        x0 in proptest::array::uniform2(0.2..1.5f64),
    ) {
        // Swapping the two coordinates of the model swaps the exponents of every moment.
        let model = two_dim_model(b, [0.02, 0.0, a2], x0);
        let p = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let swap = |m: &DMatrix<f64>| &p * m * &p;
        let swapped = PolyModel::new(DVector::from_vec(vec![x0[1], x0[0]]))
            .unwrap()
            .with_b(swap(model.b()))
            .unwrap()
            .with_a0(swap(model.a0()))
            .unwrap()
            .with_a_lin(2, swap(model.a_lin(0)))
            .unwrap()
            .with_a_quad(2, 2, swap(model.a_quad(0, 0)))
            .unwrap();
        let kernel = Kernel::fractional(0.4).unwrap();
        let grid = Grid::new(1.0, 16).unwrap();
        let t1 = solve_moments(&model, &kernel, 3, grid, &SolveOptions::default()).unwrap();
        let t2 = solve_moments(&swapped, &kernel, 3, grid, &SolveOptions::default()).unwrap();
        for alpha in t1.alphas() {
            let rev = vec![alpha[1], alpha[0]];
            let (u, v) = (t1.moment(1.0, alpha).unwrap(), t2.moment(1.0, &rev).unwrap());
            prop_assert!((u - v).abs() <= 1e-12 * u.abs().max(1.0), "{:?}: {} vs {}", alpha, u, v);
        }
    }

    #[test]
    fn level_zero_is_one(x0 in 0.1..2.0f64, b1 in coeff(), a11 in 0.0..0.2f64) {
        let model = PolyModel::scalar(x0, 0.0, b1, 0.0, 0.0, a11);
        let kernel = Kernel::fractional(0.3).unwrap();
        let table = solve_moments(&model, &kernel, 2, Grid::new(1.0, 20).unwrap(), &SolveOptions::default()).unwrap();
        for v in table.series(&[0]).unwrap() {
            prop_assert_eq!(v, 1.0);
        }
    }

    #[test]
    fn simulation_is_seed_deterministic(seed in any::<u64>()) {
        let model = PolyModel::scalar(0.5, 0.1, -0.2, 0.02, 0.05, 0.0);
        let kernel = Kernel::fractional(0.3).unwrap();
        let grid = Grid::new(1.0, 20).unwrap();
        let cfg = SimConfig::new(256, seed);
        let a = simulate_paths(&model, &kernel, grid, &cfg).unwrap();
        let b = simulate_paths(&model, &kernel, grid, &cfg).unwrap();
        for path in 0..256 {
            prop_assert_eq!(a.state(20, path), b.state(20, path));
        }
        prop_assert_eq!(mc_moment(&a, 1.0, &[2]).unwrap(), mc_moment(&b, 1.0, &[2]).unwrap());
        let k = Kernel::exponential(1.0).unwrap();
        let run = JumpRun::new(200, seed);
        prop_assert_eq!(
            jump_dual_moment_1d(0.3, 0.1, &k, 1.0, 2, 1.0, &run).unwrap(),
            jump_dual_moment_1d(0.3, 0.1, &k, 1.0, 2, 1.0, &run).unwrap()
        );
    }
}
