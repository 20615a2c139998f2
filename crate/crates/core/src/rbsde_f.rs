//! Reflected BSDE in the reference filtration `F`, solved by Snell-envelope
//! backward induction on the tree.
//!
//! With the survival discount `E~` the `G`-problem with data `(f, S, h)` maps
//! to the `F`-problem
//!
//! ```text
//! Y_n = Y_{n+1} + fF_n dt + h_{n+1} dV^F_{n+1} + dK_{n+1} - Z_n dW_{n+1},
//! Y_n >= SF_n (n < T),  Y_T = xiF,
//! ```
//!
//! where `fF = E~ f`, `SF = E~ S` and `xiF = E~_T h_T`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::random_time::{KernelMode, RandomTimeModel};
use crate::tree::{AdaptedProcess, PredictableProcess, TreeModel};

const PAR_WIDTH: usize = 1 << 12;

/// Lower obstacle of the equation. `None` turns the problem into a plain BSDE.
#[derive(Debug, Clone, PartialEq)]
pub enum Barrier {
    None,
    Lower(AdaptedProcess),
}

impl Barrier {
    pub fn process(&self) -> Option<&AdaptedProcess> {
        match self {
            Barrier::None => None,
            Barrier::Lower(s) => Some(s),
        }
    }
}

/// Driver rate `f` (used over the following step), barrier `S` and payoff
/// process `h` defining `xi = h_{T ∧ tau}`.
#[derive(Debug, Clone, PartialEq)]
pub struct DataTriplet {
    pub f: AdaptedProcess,
    pub barrier: Barrier,
    pub h: AdaptedProcess,
}

impl DataTriplet {
    pub fn new(f: AdaptedProcess, barrier: Barrier, h: AdaptedProcess) -> Result<Self> {
        let depth = f.depth();
        if h.depth() != depth || barrier.process().is_some_and(|s| s.depth() != depth) {
            return Err(Error::Input("f, S and h live on trees of different depth".into()));
        }
        let finite = f.all_finite() && h.all_finite() && barrier.process().is_none_or(|s| s.all_finite());
        if !finite {
            return Err(Error::Input("data contain non-finite values".into()));
        }
        Ok(Self { f, barrier, h })
    }

    /// `f ≡ 0`, no barrier, `h ≡ c`.
    pub fn constant_claim(tree: &TreeModel, c: f64) -> Self {
        Self {
            f: AdaptedProcess::zeros(tree),
            barrier: Barrier::None,
            h: AdaptedProcess::constant(tree, c),
        }
    }

    pub fn depth(&self) -> usize {
        self.f.depth()
    }

    /// `(lambda f, lambda S, lambda h)`.
    pub fn scaled(&self, lambda: f64) -> Self {
        Self {
            f: self.f.map(|v| lambda * v),
            barrier: match &self.barrier {
                Barrier::None => Barrier::None,
                Barrier::Lower(s) => Barrier::Lower(s.map(|v| lambda * v)),
            },
            h: self.h.map(|v| lambda * v),
        }
    }

    /// Checks `xi >= S_{T ∧ tau}` on every node where `T ∧ tau` can occur:
    /// level `T`, and every earlier level where `tau` has positive
    /// conditional mass.
    pub fn check_terminal(&self, model: &RandomTimeModel, horizon: usize) -> Result<()> {
        let Some(s) = self.barrier.process() else {
            return Ok(());
        };
        let tree = model.tree();
        for n in 0..=horizon {
            for b in 0..tree.width(n) {
                let reachable = n == horizon || model.d_dof.at(n, b) > 0.0;
                if reachable && self.h.at(n, b) < s.at(n, b) {
                    return Err(Error::Input(format!(
                        "terminal value h = {} below barrier S = {} at level {n}, path bits {b:#b}",
                        self.h.at(n, b),
                        s.at(n, b)
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Data of the `F`-problem.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformedDataF {
    pub horizon: usize,
    pub f_f: AdaptedProcess,
    pub s_f: Option<AdaptedProcess>,
    /// `E~_T h_T` on level `T`.
    pub xi_f: Vec<f64>,
    pub h: AdaptedProcess,
    /// `dV^F_n` per node (zero at level 0).
    pub dvf: AdaptedProcess,
}

pub fn transform_data(triplet: &DataTriplet, model: &RandomTimeModel, horizon: usize) -> Result<TransformedDataF> {
    let tree = model.tree();
    if horizon > tree.depth() {
        return Err(Error::Argument(format!("horizon {horizon} beyond depth {}", tree.depth())));
    }
    if triplet.depth() != tree.depth() {
        return Err(Error::Argument("data and model live on different trees".into()));
    }
    let e = &model.e_tilde;
    let f_f = triplet.f.zip_with(e, |f, e| f * e);
    let s_f = triplet.barrier.process().map(|s| s.zip_with(e, |s, e| s * e));
    let xi_f = (0..tree.width(horizon)).map(|b| e.at(horizon, b) * triplet.h.at(horizon, b)).collect();
    let dvf = AdaptedProcess::from_fn(tree, |n, b| model.dvf(n, b));
    Ok(TransformedDataF { horizon, f_f, s_f, xi_f, h: triplet.h.clone(), dvf })
}

/// Complementary-slackness report for the reflection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SkorokhodReport {
    /// `E[sum_n (Y_n - S_n) dK_{n+1}]`.
    pub pairing: f64,
    /// Whether some node pushes (`dK > tol`) while strictly above the barrier.
    pub slack_push: bool,
    pub tol: f64,
    /// No barrier: the check holds trivially.
    pub vacuous: bool,
}

impl SkorokhodReport {
    pub fn passes(&self) -> bool {
        self.vacuous || (self.pairing <= self.tol && !self.slack_push)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolutionF {
    pub horizon: usize,
    pub y: AdaptedProcess,
    pub z: PredictableProcess,
    /// Increments of `K`; `dk.at(n, b)` is paid over step `n + 1`.
    pub dk: PredictableProcess,
    pub dynamics_residual: f64,
    pub skorokhod: SkorokhodReport,
}

impl SolutionF {
    /// Cumulative `K` with `K_0 = 0`.
    pub fn k(&self) -> AdaptedProcess {
        self.dk.cumulative()
    }

    /// `1e-10 (1 + max|Y|)`.
    pub fn tolerance(&self) -> f64 {
        1e-10 * (1.0 + self.y.max_abs())
    }
}

fn check_finite(data: &TransformedDataF) -> Result<()> {
    let ok = data.f_f.all_finite()
        && data.h.all_finite()
        && data.dvf.all_finite()
        && data.xi_f.iter().all(|v| v.is_finite())
        && data.s_f.as_ref().is_none_or(|s| s.all_finite());
    if ok {
        Ok(())
    } else {
        Err(Error::Input("transformed data contain non-finite values".into()))
    }
}

/// Backward induction `Y_n = max(SF_n, fF_n dt + E[Y_{n+1} + h_{n+1} dV^F_{n+1} | F_n])`.
pub fn solve_f_rbsde(data: &TransformedDataF, tree: &TreeModel) -> Result<SolutionF> {
    check_finite(data)?;
    let t = data.horizon;
    if t > tree.depth() || data.xi_f.len() != tree.width(t) {
        return Err(Error::Argument("terminal values do not match the horizon".into()));
    }
    let mut y = AdaptedProcess::zeros(tree);
    let mut z = PredictableProcess::zeros(tree);
    let mut dk = PredictableProcess::zeros(tree);
    y.level_mut(t).copy_from_slice(&data.xi_f);

    let dt = tree.dt();
    let two_sqrt_dt = 2.0 * tree.sqrt_dt();
    for n in (0..t).rev() {
        let next = y.level(n + 1);
        let step = |b: usize| {
            let phi = |c: usize| next[c] + data.h.at(n + 1, c) * data.dvf.at(n + 1, c);
            let (pd, pu) = (phi(2 * b), phi(2 * b + 1));
            let cont = data.f_f.at(n, b) * dt + 0.5 * (pd + pu);
            let (yv, push) = match &data.s_f {
                Some(s) if s.at(n, b) > cont => (s.at(n, b), s.at(n, b) - cont),
                _ => (cont, 0.0),
            };
            (yv, (pu - pd) / two_sqrt_dt, push)
        };
        let width = tree.width(n);
        let rows: Vec<(f64, f64, f64)> = if width >= PAR_WIDTH {
            (0..width).into_par_iter().map(step).collect()
        } else {
            (0..width).map(step).collect()
        };
        for (b, (yv, zv, kv)) in rows.into_iter().enumerate() {
            y.set(n, b, yv);
            z.set(n, b, zv);
            dk.set(n, b, kv);
        }
    }
    // stopped after the horizon
    for n in t + 1..=tree.depth() {
        for b in 0..tree.width(n) {
            y.set(n, b, y.at(n - 1, b >> 1));
        }
    }

    let mut sol = SolutionF {
        horizon: t,
        y,
        z,
        dk,
        dynamics_residual: 0.0,
        skorokhod: SkorokhodReport { pairing: 0.0, slack_push: false, tol: 0.0, vacuous: true },
    };
    sol.dynamics_residual = dynamics_residual(&sol, data, tree);
    sol.skorokhod = verify_skorokhod(&sol, data, tree);
    Ok(sol)
}

/// Infinite-horizon variant on the full tree with `tau <= N`: terminal value
/// zero, and the barrier must satisfy `SF_N <= 0`.
pub fn solve_f_rbsde_infinite(data: &TransformedDataF, model: &RandomTimeModel) -> Result<SolutionF> {
    let tree = model.tree();
    if model.mode() != KernelMode::FiniteTau {
        return Err(Error::Config("the infinite-horizon problem needs a finite-tau kernel".into()));
    }
    let n = tree.depth();
    if data.horizon != n {
        return Err(Error::Argument("the infinite-horizon problem runs over the full tree".into()));
    }
    if let Some(s) = &data.s_f {
        if let Some((b, &v)) = s.level(n).iter().enumerate().find(|(_, v)| **v > 0.0) {
            return Err(Error::TerminalBarrier { level: n, path_bits: b, value: v });
        }
    }
    let mut zero_terminal = data.clone();
    zero_terminal.xi_f.iter_mut().for_each(|v| *v = 0.0);
    solve_f_rbsde(&zero_terminal, tree)
}

/// Largest branch residual of the dynamics, scaled by `1 + max|Y|`.
fn dynamics_residual(sol: &SolutionF, data: &TransformedDataF, tree: &TreeModel) -> f64 {
    let dt = tree.dt();
    let scale = 1.0 + sol.y.max_abs();
    let mut worst: f64 = 0.0;
    for n in 0..sol.horizon {
        for b in 0..tree.width(n) {
            for c in [2 * b, 2 * b + 1] {
                let rhs = sol.y.at(n + 1, c)
                    + data.f_f.at(n, b) * dt
                    + data.h.at(n + 1, c) * data.dvf.at(n + 1, c)
                    + sol.dk.at(n, b)
                    - sol.z.at(n, b) * tree.dw(c);
                worst = worst.max((sol.y.at(n, b) - rhs).abs() / scale);
            }
        }
    }
    worst
}

/// Evaluates the Skorokhod condition `sum (Y_n - SF_n) dK_{n+1} = 0` with
/// tolerance `1e-10 (1 + max|Y|)`.
pub fn verify_skorokhod(sol: &SolutionF, data: &TransformedDataF, tree: &TreeModel) -> SkorokhodReport {
    let tol = sol.tolerance();
    let Some(s) = &data.s_f else {
        return SkorokhodReport { pairing: 0.0, slack_push: false, tol, vacuous: true };
    };
    let mut pairing = 0.0;
    let mut slack_push = false;
    for n in 0..sol.horizon {
        let w = (-(n as f64)).exp2();
        for b in 0..tree.width(n) {
            let gap = sol.y.at(n, b) - s.at(n, b);
            let push = sol.dk.at(n, b);
            pairing += w * gap * push;
            if push > tol && gap > tol {
                slack_push = true;
            }
        }
    }
    SkorokhodReport { pairing, slack_push, tol, vacuous: false }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random_time::{build_random_time, DensityKernel};

    fn no_default(tree: &TreeModel) -> RandomTimeModel {
        let k = DensityKernel::from_hazard(tree, 0.0, KernelMode::Bounded, |_, _| 0.0).unwrap();
        build_random_time(tree, &k).unwrap()
    }

    #[test]
    fn no_default_recovers_classical_data() {
        let t = TreeModel::new(3, 0.5).unwrap();
        let m = no_default(&t);
        let h = t.brownian();
        let data = DataTriplet::new(AdaptedProcess::constant(&t, 0.3), Barrier::Lower(h.map(|v| v - 1.0)), h.clone()).unwrap();
        let tf = transform_data(&data, &m, 3).unwrap();
        assert_eq!(tf.f_f, data.f);
        assert_eq!(tf.s_f.as_ref(), data.barrier.process());
        assert_eq!(tf.xi_f, h.level(3).to_vec());
        assert_eq!(tf.dvf.max_abs(), 0.0);
    }

    #[test]
    fn reference_constant_claim_transform() {
        let t = TreeModel::new(2, 1.0).unwrap();
        let m = build_random_time(&t, &DensityKernel::reference(&t).unwrap()).unwrap();
        let tf = transform_data(&DataTriplet::constant_claim(&t, 1.0), &m, 2).unwrap();
        for b in 0..4 {
            let want = if b & 1 == 1 { 0.625 / 1.5 } else { 0.3125 };
            assert!((tf.xi_f[b] - want).abs() < 1e-15);
        }
    }

    #[test]
    fn constant_claim_value_is_scaled_discount() {
        let t = TreeModel::new(4, 0.25).unwrap();
        let k = DensityKernel::anticipative_mix(&t, 0.0, KernelMode::Bounded, |_, _, w, s| 0.2 + 0.1 * s + 0.05 * w.sin()).unwrap();
        let m = build_random_time(&t, &k).unwrap();
        let c = 2.5;
        let sol = solve_f_rbsde(&transform_data(&DataTriplet::constant_claim(&t, c), &m, 4).unwrap(), &t).unwrap();
        for n in 0..=4 {
            for b in 0..t.width(n) {
                assert!((sol.y.at(n, b) - c * m.e_tilde.at(n, b)).abs() < 1e-14);
            }
        }
        assert_eq!(sol.dk.max_abs(), 0.0);
        assert!(sol.dynamics_residual < 1e-15);
    }

    #[test]
    fn one_step_reflection_by_hand() {
        let t = TreeModel::new(1, 1.0).unwrap();
        let m = no_default(&t);
        let h = AdaptedProcess::from_levels(vec![vec![5.0], vec![3.0, 1.0]]).unwrap();
        let s = AdaptedProcess::from_levels(vec![vec![5.0], vec![0.0, 0.0]]).unwrap();
        let data = DataTriplet::new(AdaptedProcess::zeros(&t), Barrier::Lower(s), h).unwrap();
        let sol = solve_f_rbsde(&transform_data(&data, &m, 1).unwrap(), &t).unwrap();
        assert_eq!(sol.y.at(0, 0), 5.0);
        assert_eq!(sol.dk.at(0, 0), 3.0);
        // leaf 0 went down (h = 3), leaf 1 up (h = 1)
        assert_eq!(sol.z.at(0, 0), -1.0);
        assert!(sol.skorokhod.passes());
        assert_eq!(sol.skorokhod.pairing, 0.0);
    }

    #[test]
    fn no_barrier_skorokhod_is_vacuous() {
        let t = TreeModel::new(2, 1.0).unwrap();
        let m = no_default(&t);
        let sol = solve_f_rbsde(&transform_data(&DataTriplet::constant_claim(&t, 1.0), &m, 2).unwrap(), &t).unwrap();
        assert!(sol.skorokhod.vacuous && sol.skorokhod.passes());
    }

    #[test]
    fn infinite_horizon_sure_payment() {
        let t = TreeModel::new(2, 1.0).unwrap();
        let m = build_random_time(&t, &DensityKernel::reference_finite(&t).unwrap()).unwrap();
        let tf = transform_data(&DataTriplet::constant_claim(&t, 1.0), &m, 2).unwrap();
        let sol = solve_f_rbsde_infinite(&tf, &m).unwrap();
        assert!((sol.y.at(0, 0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn infinite_horizon_rejects_positive_terminal_barrier() {
        let t = TreeModel::new(2, 1.0).unwrap();
        let m = build_random_time(&t, &DensityKernel::reference_finite(&t).unwrap()).unwrap();
        let mut tf = transform_data(&DataTriplet::constant_claim(&t, 1.0), &m, 2).unwrap();
        let mut s = AdaptedProcess::zeros(&t);
        s.set(2, 3, 0.1);
        tf.s_f = Some(s);
        assert!(matches!(
            solve_f_rbsde_infinite(&tf, &m),
            Err(Error::TerminalBarrier { level: 2, path_bits: 3, .. })
        ));
    }

    #[test]
    fn terminal_below_barrier_is_rejected() {
        let t = TreeModel::new(2, 1.0).unwrap();
        let m = build_random_time(&t, &DensityKernel::reference(&t).unwrap()).unwrap();
        let data = DataTriplet::new(
            AdaptedProcess::zeros(&t),
            Barrier::Lower(AdaptedProcess::constant(&t, 1.0)),
            AdaptedProcess::constant(&t, 0.5),
        )
        .unwrap();
        assert!(matches!(data.check_terminal(&m, 2), Err(Error::Input(_))));
    }
}
