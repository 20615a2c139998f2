//! The reflected BSDE in the enlarged filtration `G`, stopped at `T ∧ tau`.
//!
//! [`lift_solution`] builds the `G`-solution from the `F`-solution:
//!
//! ```text
//! Y^G = Y^F / E~         before T ∧ tau,  xi = h_{T∧tau} afterwards
//! Z^G = Z^F / E~_-,   dK^G = dK^F / E~_-,   dM^G = (h - Y^F/E~) dN^G
//! ```
//!
//! and the discrete dynamics on `{n < T ∧ tau}` read
//! `Y_{n+1} - Y_n = -f_n dt - dK_{n+1} + dM_{n+1} + Z_n dW_{n+1}`.
//! [`solve_g_snell_oracle`] recomputes `Y^G` directly by dynamic programming
//! over the `G`-atoms under `Q~_T`, without going through `F`.

use crate::enlarged::{EnlargedSpace, StateProcess};
use crate::error::{Error, Result};
use crate::rbsde_f::{solve_f_rbsde, solve_f_rbsde_infinite, transform_data, DataTriplet, SolutionF};

#[derive(Debug, Clone, PartialEq)]
pub struct SolutionG {
    pub horizon: usize,
    pub y: StateProcess,
    /// `z.at(s, n)` is the Brownian integrand over step `n + 1`.
    pub z: StateProcess,
    /// Cumulative reflection, `K_0 = 0`.
    pub k: StateProcess,
    /// Cumulative orthogonal martingale, `M_0 = 0`.
    pub m: StateProcess,
}

impl SolutionG {
    pub fn tolerance(&self) -> f64 {
        1e-10 * (1.0 + self.y.max_abs())
    }
}

/// Builds the `G`-solution from the `F`-solution of the transformed problem.
pub fn lift_solution(sol_f: &SolutionF, triplet: &DataTriplet, space: &EnlargedSpace) -> Result<SolutionG> {
    let t = sol_f.horizon;
    let model = space.model();
    let e = &model.e_tilde;
    let depth = space.depth();
    let mut y = StateProcess::zeros(space);
    let mut z = StateProcess::zeros(space);
    let mut k = StateProcess::zeros(space);
    let mut m = StateProcess::zeros(space);
    for (i, &s) in space.states().iter().enumerate() {
        let stop = s.stop(t);
        let xi = space.on_path(&triplet.h, s, stop);
        let (mut kc, mut mc) = (0.0, 0.0);
        for n in 0..=depth {
            if n < stop {
                let node = space.node(s, n);
                let en = e.at(n, node);
                if !(en > 0.0) {
                    return Err(Error::Internal(format!("E~ = {en} before T∧tau at level {n}")));
                }
                y.set(i, n, sol_f.y.at(n, node) / en);
                z.set(i, n, sol_f.z.at(n, node) / en);
                let next = space.node(s, n + 1);
                let e_next = e.at(n + 1, next);
                let integrand = if e_next > 0.0 {
                    triplet.h.at(n + 1, next) - sol_f.y.at(n + 1, next) / e_next
                } else {
                    0.0
                };
                kc += sol_f.dk.at(n, node) / en;
                mc += integrand * space.ng_increment(s, n + 1);
                k.set(i, n + 1, kc);
                m.set(i, n + 1, mc);
            } else {
                y.set(i, n, xi);
                if n > 0 && n > stop {
                    k.set(i, n, kc);
                    m.set(i, n, mc);
                }
            }
        }
    }
    Ok(SolutionG { horizon: t, y, z, k, m })
}

/// Full bounded-horizon pipeline: terminal check, transform, `F`-solve, lift.
pub fn solve_g(triplet: &DataTriplet, space: &EnlargedSpace, horizon: usize) -> Result<(SolutionF, SolutionG)> {
    triplet.check_terminal(space.model(), horizon)?;
    let tf = transform_data(triplet, space.model(), horizon)?;
    let sf = solve_f_rbsde(&tf, space.tree())?;
    let sg = lift_solution(&sf, triplet, space)?;
    Ok((sf, sg))
}

/// Infinite-horizon pipeline on the full tree of a finite-tau model.
pub fn solve_g_infinite(triplet: &DataTriplet, space: &EnlargedSpace) -> Result<(SolutionF, SolutionG)> {
    let depth = space.depth();
    triplet.check_terminal(space.model(), depth)?;
    let tf = transform_data(triplet, space.model(), depth)?;
    let sf = solve_f_rbsde_infinite(&tf, space.model())?;
    let sg = lift_solution(&sf, triplet, space)?;
    Ok((sf, sg))
}

/// `Y^G` by backward induction over `G`-atoms under `Q~_T`:
/// `U_n = max(S_n + A_n, E^{Q~}[U_{n+1} | G_n])` on alive atoms, with
/// `A_n = sum_{k < n ∧ tau} f_k dt` and `U_{T∧tau} = xi + A_{T∧tau}`.
pub fn solve_g_snell_oracle(triplet: &DataTriplet, space: &EnlargedSpace, horizon: usize) -> Result<StateProcess> {
    let depth = space.depth();
    if horizon > depth {
        return Err(Error::Argument(format!("horizon {horizon} beyond depth {depth}")));
    }
    let dt = space.tree().dt();
    let states = space.states();
    let q = space.qtilde_weights(horizon);
    if let Some(w) = q.iter().find(|w| !(**w > 0.0)) {
        return Err(Error::Internal(format!("non-positive Q~ weight {w}")));
    }
    // running integral of f along each state's path, frozen at T ∧ tau
    let acc: Vec<Vec<f64>> = states
        .iter()
        .map(|&s| {
            let stop = s.stop(horizon);
            let mut a = vec![0.0; depth + 1];
            for n in 1..=depth {
                a[n] = if n <= stop { a[n - 1] + space.on_path(&triplet.f, s, n - 1) * dt } else { a[n - 1] };
            }
            a
        })
        .collect();

    let mut y = StateProcess::zeros(space);
    let mut u: Vec<f64> = states
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            let stop = s.stop(horizon);
            space.on_path(&triplet.h, s, stop) + acc[i][stop]
        })
        .collect();
    for (i, &s) in states.iter().enumerate() {
        let stop = s.stop(horizon);
        for n in horizon..=depth {
            y.set(i, n, u[i] - acc[i][stop]);
        }
    }
    for n in (0..horizon).rev() {
        let cont = space.g_conditional(n, &u, &q);
        for (i, &s) in states.iter().enumerate() {
            if s.alive_at(n) {
                let reward = triplet.barrier.process().map(|b| space.on_path(b, s, n) + acc[i][n]);
                u[i] = match reward {
                    Some(r) if r > cont[i] => r,
                    _ => cont[i],
                };
            }
            y.set(i, n, u[i] - acc[i][n.min(s.stop(horizon))]);
        }
    }
    Ok(y)
}

/// Outcome of one invariant of the `G`-solution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Check {
    pub residual: f64,
    pub passed: bool,
    /// The invariant is empty for these data (no barrier).
    pub vacuous: bool,
}

impl Check {
    fn against(residual: f64, tol: f64) -> Self {
        Self { residual, passed: residual <= tol, vacuous: false }
    }

    fn vacuous() -> Self {
        Self { residual: 0.0, passed: true, vacuous: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualReport {
    pub tol: f64,
    pub terminal: Check,
    pub barrier: Check,
    pub dynamics: Check,
    pub skorokhod: Check,
    pub k_nondecreasing: Check,
    pub m_martingale_p: Check,
    pub m_martingale_q: Check,
    pub stopped: Check,
}

impl ResidualReport {
    pub fn all_pass(&self) -> bool {
        self.entries().iter().all(|(_, c)| c.passed)
    }

    pub fn entries(&self) -> [(&'static str, Check); 8] {
        [
            ("terminal Y = h at T∧tau", self.terminal),
            ("barrier Y >= S before T∧tau", self.barrier),
            ("dynamics dY = -f dt - dK + dM + Z dW", self.dynamics),
            ("Skorokhod E~Q[sum (Y - S) dK] = 0", self.skorokhod),
            ("K nondecreasing", self.k_nondecreasing),
            ("M martingale under P", self.m_martingale_p),
            ("M martingale under Q~", self.m_martingale_q),
            ("constant after T∧tau", self.stopped),
        ]
    }
}

/// Evaluates every invariant of a `G`-solution at tolerance `1e-10 (1 + max|Y|)`.
pub fn residual_check(sol: &SolutionG, triplet: &DataTriplet, space: &EnlargedSpace) -> ResidualReport {
    let t = sol.horizon;
    let depth = space.depth();
    let tree = space.tree();
    let dt = tree.dt();
    let tol = sol.tolerance();
    let states = space.states();
    let barrier = triplet.barrier.process();

    let (mut terminal, mut below, mut dynamics, mut k_drop, mut stopped) = (0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let mut pairing = vec![0.0; space.len()];
    for (i, &s) in states.iter().enumerate() {
        let stop = s.stop(t);
        let xi = space.on_path(&triplet.h, s, stop);
        terminal = terminal.max((sol.y.at(i, stop) - xi).abs());
        for n in 0..stop {
            let dk = sol.k.at(i, n + 1) - sol.k.at(i, n);
            let dm = sol.m.at(i, n + 1) - sol.m.at(i, n);
            k_drop = k_drop.max(-dk);
            let dw = tree.dw(space.node(s, n + 1));
            let rhs = -space.on_path(&triplet.f, s, n) * dt - dk + dm + sol.z.at(i, n) * dw;
            dynamics = dynamics.max((sol.y.at(i, n + 1) - sol.y.at(i, n) - rhs).abs());
            if let Some(b) = barrier {
                let gap = sol.y.at(i, n) - space.on_path(b, s, n);
                below = below.max(-gap);
                pairing[i] += gap * dk;
            }
        }
        for n in stop + 1..=depth {
            let moved = (sol.y.at(i, n) - sol.y.at(i, stop)).abs()
                + (sol.k.at(i, n) - sol.k.at(i, stop)).abs()
                + (sol.m.at(i, n) - sol.m.at(i, stop)).abs()
                + sol.z.at(i, n - 1).abs();
            stopped = stopped.max(moved);
        }
    }

    let q = space.qtilde_weights(t);
    let mut mart_p: f64 = 0.0;
    let mut mart_q: f64 = 0.0;
    for n in 0..t {
        let inc: Vec<f64> = (0..space.len()).map(|i| sol.m.at(i, n + 1) - sol.m.at(i, n)).collect();
        for b in 0..tree.width(n) {
            let (mp, sp) = space.alive_atom_sums(n, b, &inc, space.pweight());
            let (mq, sq) = space.alive_atom_sums(n, b, &inc, &q);
            if mp > 0.0 {
                mart_p = mart_p.max((sp / mp).abs());
                mart_q = mart_q.max((sq / mq).abs());
            }
        }
    }

    let (barrier_check, skorokhod) = match barrier {
        None => (Check::vacuous(), Check::vacuous()),
        Some(_) => (Check::against(below, tol), Check::against(space.qtilde_expectation(&pairing, t).abs(), tol)),
    };
    ResidualReport {
        tol,
        terminal: Check::against(terminal, tol),
        barrier: barrier_check,
        dynamics: Check::against(dynamics, tol),
        skorokhod,
        k_nondecreasing: Check::against(k_drop, tol),
        m_martingale_p: Check::against(mart_p, tol),
        m_martingale_q: Check::against(mart_q, tol),
        stopped: Check::against(stopped, tol),
    }
}

/// Largest statewise gap between two `G`-value processes over levels `0..=T`.
pub fn max_state_gap(a: &StateProcess, b: &StateProcess, space: &EnlargedSpace, horizon: usize) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..space.len() {
        for n in 0..=horizon {
            worst = worst.max((a.at(i, n) - b.at(i, n)).abs());
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::enlarged::build_enlarged_space;
    use crate::random_time::{build_random_time, DensityKernel, KernelMode};
    use crate::rbsde_f::Barrier;
    use crate::tree::{AdaptedProcess, TreeModel};

    fn setup(kernel: impl Fn(&TreeModel) -> DensityKernel, depth: usize) -> (TreeModel, EnlargedSpace) {
        let t = TreeModel::new(depth, 1.0 / depth as f64).unwrap();
        let k = kernel(&t);
        let m = build_random_time(&t, &k).unwrap();
        let s = build_enlarged_space(&t, &m, &k).unwrap();
        (t, s)
    }

    fn solve(triplet: &DataTriplet, space: &EnlargedSpace, t: usize) -> SolutionG {
        let tf = transform_data(triplet, space.model(), t).unwrap();
        let sf = solve_f_rbsde(&tf, space.tree()).unwrap();
        lift_solution(&sf, triplet, space).unwrap()
    }

    #[test]
    fn constant_claim_is_riskless() {
        let (t, s) = setup(|t| DensityKernel::reference(t).unwrap(), 2);
        let data = DataTriplet::constant_claim(&t, 1.0);
        let g = solve(&data, &s, 2);
        assert!((0..s.len()).all(|i| (g.y.at(i, 0) - 1.0).abs() < 1e-15));
        assert!(g.m.max_abs() < 1e-15 && g.k.max_abs() == 0.0 && g.z.max_abs() < 1e-15);
        assert!(residual_check(&g, &data, &s).all_pass());
    }

    #[test]
    fn no_default_embeds_f_solution() {
        let (t, s) = setup(
            |t| DensityKernel::from_hazard(t, 0.0, KernelMode::Bounded, |_, _| 0.0).unwrap(),
            3,
        );
        let w = t.brownian();
        let data = DataTriplet::new(AdaptedProcess::zeros(&t), Barrier::Lower(w.map(|v| v.max(0.0))), w.map(|v| v.max(0.0))).unwrap();
        let tf = transform_data(&data, s.model(), 3).unwrap();
        let sf = solve_f_rbsde(&tf, &t).unwrap();
        let g = lift_solution(&sf, &data, &s).unwrap();
        assert_eq!(s.len(), t.leaves());
        for (i, &st) in s.states().iter().enumerate() {
            for n in 0..=3 {
                assert_eq!(g.y.at(i, n), sf.y.at(n, s.node(st, n)));
            }
        }
        assert_eq!(g.m.max_abs(), 0.0);
    }

    #[test]
    fn american_claim_matches_oracle_on_anticipative_kernel() {
        let (t, s) = setup(
            |t| DensityKernel::anticipative_mix(t, 0.1, KernelMode::Bounded, |_, _, w, sg| 0.25 + 0.15 * sg + 0.05 * w.tanh()).unwrap(),
            4,
        );
        let payoff = AdaptedProcess::from_fn(&t, |n, b| (0.5 - t.w(n, b)).max(0.0));
        let data = DataTriplet::new(AdaptedProcess::constant(&t, 0.2), Barrier::Lower(payoff.clone()), payoff).unwrap();
        for horizon in 1..=4 {
            let g = solve(&data, &s, horizon);
            let oracle = solve_g_snell_oracle(&data, &s, horizon).unwrap();
            assert!(max_state_gap(&g.y, &oracle, &s, horizon) < 1e-12, "T = {horizon}");
            let report = residual_check(&g, &data, &s);
            assert!(report.all_pass(), "{report:?}");
        }
    }

    #[test]
    fn corrupted_value_is_flagged() {
        let (t, s) = setup(|t| DensityKernel::reference(t).unwrap(), 2);
        let data = DataTriplet::new(AdaptedProcess::zeros(&t), Barrier::None, t.brownian()).unwrap();
        let mut g = solve(&data, &s, 2);
        assert!(residual_check(&g, &data, &s).all_pass());
        let i = s.states().iter().position(|st| st.death > 1).unwrap();
        g.y.set(i, 1, g.y.at(i, 1) + 1e-3);
        let r = residual_check(&g, &data, &s);
        assert!(!r.dynamics.passed);
        assert!((r.dynamics.residual - 1e-3).abs() < 1e-9);
        assert!(r.barrier.vacuous && r.skorokhod.vacuous);
    }

    #[test]
    fn oracle_prices_constant_claim() {
        let (t, s) = setup(|t| DensityKernel::reference(t).unwrap(), 2);
        let y = solve_g_snell_oracle(&DataTriplet::constant_claim(&t, 3.0), &s, 2).unwrap();
        assert!(y.max_abs() <= 3.0 + 1e-15);
        assert!((0..s.len()).all(|i| (y.at(i, 0) - 3.0).abs() < 1e-15));
    }
}
