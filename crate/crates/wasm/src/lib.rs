//! Browser bindings for the demo page in `www/`.
//!
//! The kernel is an anticipative mix: hazard `base + tilt * s * tanh(W)`,
//! `s` the sign of the next step.

use wasm_bindgen::prelude::*;

use rbsde_horizon::estimates::verify_apriori_bounded;
use rbsde_horizon::{
    build_enlarged_space, build_random_time, solve_g, AdaptedProcess, Barrier, DataTriplet, DensityKernel,
    EnlargedSpace, KernelMode, RandomTimeModel, TreeModel,
};

/// Largest depth the page offers; the state space has about `2^N (N + 2)` entries.
pub const MAX_DEMO_DEPTH: usize = 14;

pub struct Setup {
    pub tree: TreeModel,
    pub model: RandomTimeModel,
    pub space: EnlargedSpace,
}

pub fn setup(depth: usize, base: f64, tilt: f64, finite_tau: bool) -> rbsde_horizon::Result<Setup> {
    if depth == 0 || depth > MAX_DEMO_DEPTH {
        return Err(rbsde_horizon::Error::Config(format!("depth must lie in 1..={MAX_DEMO_DEPTH}")));
    }
    let tree = TreeModel::new(depth, 1.0 / depth as f64)?;
    let mode = if finite_tau { KernelMode::FiniteTau } else { KernelMode::Bounded };
    let kernel = DensityKernel::anticipative_mix(&tree, 0.0, mode, |_, _, w, s| base + tilt * s * w.tanh())?;
    let model = build_random_time(&tree, &kernel)?;
    let space = build_enlarged_space(&tree, &model, &kernel)?;
    Ok(Setup { tree, model, space })
}

fn mean_by_level(tree: &TreeModel, x: &AdaptedProcess) -> Vec<f64> {
    (0..=tree.depth()).map(|n| x.level(n).iter().sum::<f64>() / tree.width(n) as f64).collect()
}

/// `[E G_n, E E~_n, E V^F_n]` for `n = 0..=N`, flattened level by level,
/// followed by the largest identity residual.
pub fn survival(depth: usize, base: f64, tilt: f64, finite_tau: bool) -> rbsde_horizon::Result<Vec<f64>> {
    let s = setup(depth, base, tilt, finite_tau)?;
    let g = mean_by_level(&s.tree, &s.model.g);
    let e = mean_by_level(&s.tree, &s.model.e_tilde);
    let v = mean_by_level(&s.tree, &s.model.vf);
    let mut out: Vec<f64> = (0..=depth).flat_map(|n| [g[n], e[n], v[n]]).collect();
    out.push(s.model.identities().max_residual());
    Ok(out)
}

/// Put with payoff `(K - e^W)^+`, American when `american`. Returns `Y^G_0`
/// on `{tau > 0}` for every horizon `T = 1..=N`.
pub fn put_values(
    depth: usize,
    base: f64,
    tilt: f64,
    strike: f64,
    american: bool,
) -> rbsde_horizon::Result<Vec<f64>> {
    let s = setup(depth, base, tilt, false)?;
    let triplet = put(&s.tree, strike, american)?;
    let alive = s.space.states().iter().position(|st| st.death > 0).unwrap_or(0);
    (1..=depth)
        .map(|t| solve_g(&triplet, &s.space, t).map(|(_, sol)| sol.y.at(alive, 0)))
        .collect()
}

fn put(tree: &TreeModel, strike: f64, american: bool) -> rbsde_horizon::Result<DataTriplet> {
    let payoff = AdaptedProcess::from_fn(tree, |n, b| (strike - tree.w(n, b).exp()).max(0.0));
    let barrier = if american { Barrier::Lower(payoff.clone()) } else { Barrier::None };
    DataTriplet::new(AdaptedProcess::zeros(tree), barrier, payoff)
}

/// A-priori ratio `(||Y|| + ||Z|| + ||M|| + ||K||) / Delta` under `Q~_T` for
/// `T = 1..=N`, American put.
pub fn estimate_ratios(depth: usize, base: f64, tilt: f64, strike: f64, p: f64) -> rbsde_horizon::Result<Vec<f64>> {
    let s = setup(depth, base, tilt, false)?;
    let triplet = put(&s.tree, strike, true)?;
    Ok(verify_apriori_bounded(&triplet, &s.space, p, depth)?.rows.iter().map(|r| r.ratio).collect())
}

fn js(e: rbsde_horizon::Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen(js_name = survivalCurves)]
pub fn survival_curves(depth: usize, base: f64, tilt: f64, finite_tau: bool) -> Result<Vec<f64>, JsError> {
    survival(depth, base, tilt, finite_tau).map_err(js)
}

#[wasm_bindgen(js_name = putValues)]
pub fn put_values_js(depth: usize, base: f64, tilt: f64, strike: f64, american: bool) -> Result<Vec<f64>, JsError> {
    put_values(depth, base, tilt, strike, american).map_err(js)
}

#[wasm_bindgen(js_name = estimateRatios)]
pub fn estimate_ratios_js(depth: usize, base: f64, tilt: f64, strike: f64, p: f64) -> Result<Vec<f64>, JsError> {
    estimate_ratios(depth, base, tilt, strike, p).map_err(js)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn survival_shapes() {
        let v = survival(4, 0.2, 0.1, true).unwrap();
        assert_eq!(v.len(), 3 * 5 + 1);
        assert!((v[0] - 1.0).abs() < 1e-15 && (v[1] - 1.0).abs() < 1e-15 && v[2] == 0.0);
        // finite tau: everything dies by N
        assert!(v[3 * 4].abs() < 1e-15 && (v[3 * 4 + 2] - 1.0).abs() < 1e-12);
        assert!(v[15] < 1e-12);
    }

    #[test]
    fn american_dominates_european() {
        let am = put_values(5, 0.1, 0.05, 1.0, true).unwrap();
        let eu = put_values(5, 0.1, 0.05, 1.0, false).unwrap();
        assert_eq!(am.len(), 5);
        for (a, e) in am.iter().zip(&eu) {
            assert!(a + 1e-12 >= *e);
        }
        assert!(am.windows(2).all(|w| w[1] + 1e-12 >= w[0]));
    }

    #[test]
    fn ratios_finite_and_errors_reported() {
        assert!(estimate_ratios(4, 0.1, 0.0, 1.2, 2.0).unwrap().iter().all(|r| r.is_finite()));
        assert!(setup(0, 0.1, 0.0, false).is_err());
        assert!(survival(3, 0.9, 0.5, false).is_err());
    }
}
