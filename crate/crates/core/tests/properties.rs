mod common;

use common::scenario;
use proptest::prelude::*;
use rbsde_horizon::gen::{random_adapted, rng};
use rbsde_horizon::rbsde_g::max_state_gap;
use rbsde_horizon::{solve_g, AdaptedProcess, Barrier, DataTriplet, KernelMode, TreeModel};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn tower_property(seed in 0u64..1000, depth in 2usize..8) {
        let t = TreeModel::new(depth, 0.1).unwrap();
        let x = random_adapted(&t, &mut rng(seed), 1.0);
        let leaves = x.level(depth).to_vec();
        for k in 0..depth {
            let mid = t.cond_expectation(&leaves, depth, k + 1).unwrap();
            let two = t.cond_expectation(&mid, k + 1, k).unwrap();
            let one = t.cond_expectation(&leaves, depth, k).unwrap();
            for (a, b) in one.iter().zip(&two) {
                prop_assert!((a - b).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn yor_formula(seed in 0u64..1000, depth in 1usize..7) {
        let t = TreeModel::new(depth, 0.1).unwrap();
        let mut r = rng(seed);
        let x = random_adapted(&t, &mut r, 0.3);
        let y = random_adapted(&t, &mut r, 0.3);
        let inc = |p: &AdaptedProcess| AdaptedProcess::from_fn(&t, |n, b| if n == 0 { 0.0 } else { p.at(n, b) - p.at(n - 1, b >> 1) });
        let br = t.bracket(&x, &y);
        let sum = AdaptedProcess::from_fn(&t, |n, b| x.at(n, b) + y.at(n, b) + br.at(n, b));
        let lhs = t.doleans_dade(&inc(&x)).zip_with(&t.doleans_dade(&inc(&y)), |a, b| a * b);
        let rhs = t.doleans_dade(&inc(&sum));
        prop_assert!(lhs.zip_with(&rhs, |a, b| a - b).max_abs() < 1e-12);
    }

    #[test]
    fn positive_homogeneity(seed in 0u64..500, lambda in 0.05f64..20.0) {
        let sc = scenario(seed, 4, KernelMode::Bounded, seed % 2 == 0);
        let (_, a) = solve_g(&sc.triplet, &sc.space, 4).unwrap();
        let (_, b) = solve_g(&sc.triplet.scaled(lambda), &sc.space, 4).unwrap();
        let scaled = a.y.map(|v| lambda * v);
        prop_assert!(max_state_gap(&scaled, &b.y, &sc.space, 4) < 1e-11 * (1.0 + lambda) * (1.0 + a.y.max_abs()));
    }

    #[test]
    fn comparison(seed in 0u64..500, bump in 0.0f64..0.5) {
        let sc = scenario(seed, 4, KernelMode::Bounded, true);
        let d = &sc.triplet;
        let up = DataTriplet {
            f: d.f.map(|v| v + bump),
            barrier: match &d.barrier {
                Barrier::Lower(s) => Barrier::Lower(s.map(|v| v + bump)),
                Barrier::None => Barrier::None,
            },
            h: d.h.map(|v| v + bump),
        };
        let (_, lo) = solve_g(d, &sc.space, 4).unwrap();
        let (_, hi) = solve_g(&up, &sc.space, 4).unwrap();
        for i in 0..sc.space.len() {
            for n in 0..=4 {
                prop_assert!(hi.y.at(i, n) >= lo.y.at(i, n) - 1e-12);
            }
        }
    }
}
