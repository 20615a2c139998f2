mod common;

use common::{bsde_conditional_oracle, scenario};
use rbsde_horizon::horizon::solve_bsde_infinite;
use rbsde_horizon::rbsde_g::max_state_gap;
use rbsde_horizon::{solve_g, AdaptedProcess, DataTriplet, KernelMode};

#[test]
fn bsde_matches_conditional_sums() {
    for seed in 0..9u64 {
        for depth in 2..=6 {
            let sc = scenario(seed, depth, KernelMode::Bounded, false);
            for t in [1, depth / 2 + 1, depth] {
                let (_, sol) = solve_g(&sc.triplet, &sc.space, t).unwrap();
                let oracle = bsde_conditional_oracle(&sc.triplet, &sc.space, t);
                assert!(max_state_gap(&sol.y, &oracle, &sc.space, depth) < 1e-10);
                assert_eq!(sol.k.max_abs(), 0.0);
            }
        }
    }
}

#[test]
fn infinite_bsde_remaining_lifetime() {
    for seed in 0..6u64 {
        let sc = scenario(seed, 6, KernelMode::FiniteTau, false);
        let one = AdaptedProcess::constant(&sc.tree, 1.0);
        let zero = AdaptedProcess::zeros(&sc.tree);
        let r = solve_bsde_infinite(&one, &zero, &sc.space, 2.0).unwrap();
        assert_eq!(r.k_max, 0.0);
        assert!(r.residuals.all_pass());
        let d = DataTriplet::new(one, rbsde_horizon::Barrier::None, zero).unwrap();
        let oracle = bsde_conditional_oracle(&d, &sc.space, 6);
        assert!(max_state_gap(&r.solution.y, &oracle, &sc.space, 6) < 1e-10);
    }
}

#[test]
fn constant_claim_infinite_bsde() {
    let sc = scenario(4, 5, KernelMode::FiniteTau, false);
    let r = solve_bsde_infinite(&AdaptedProcess::zeros(&sc.tree), &AdaptedProcess::constant(&sc.tree, 2.5), &sc.space, 3.0).unwrap();
    for i in 0..sc.space.len() {
        for n in 0..=5 {
            assert!((r.solution.y.at(i, n) - 2.5).abs() < 1e-12);
        }
    }
    assert!(r.solution.z.max_abs() < 1e-12 && r.solution.m.max_abs() < 1e-12);
}
