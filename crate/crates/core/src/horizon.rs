//! Unbounded horizon on a finite tree.
//!
//! "Infinite horizon" means the full tree of a finite-tau model: `tau <= N`
//! surely, `G_N = 0` and `V^F_N = 1`. The limit `T -> infinity` becomes
//! exactness at `T = N`, and the truncation scheme of the existence argument
//! becomes a finite family of cutoffs.

use rayon::prelude::*;

use crate::enlarged::EnlargedSpace;
use crate::error::{Error, Result};
use crate::estimates::{check_p, difference_norm, discounted_norms, ratio, NormReport};
use crate::random_time::{KernelMode, RandomTimeModel};
use crate::rbsde_f::{Barrier, DataTriplet, SolutionF};
use crate::rbsde_g::{residual_check, solve_g_infinite, ResidualReport, SolutionG};
use crate::tree::AdaptedProcess;

fn require_finite_tau(model: &RandomTimeModel) -> Result<()> {
    match model.mode() {
        KernelMode::FiniteTau => Ok(()),
        KernelMode::Bounded => Err(Error::Contract(
            "V^F total mass < 1; norm undefined for infinite-horizon semantics".into(),
        )),
    }
}

/// `(E[sum_{k=1..N} |X_k|^p dV^F_k])^{1/p}`.
pub fn lp_pvf_norm(x: &AdaptedProcess, model: &RandomTimeModel, p: f64) -> Result<f64> {
    require_finite_tau(model)?;
    if !(p >= 1.0) {
        return Err(Error::Argument(format!("norm exponent must be at least 1, got {p}")));
    }
    let tree = model.tree();
    let n = tree.depth();
    let per_leaf: Vec<f64> = (0..tree.leaves())
        .map(|leaf| {
            (1..=n)
                .map(|k| {
                    let b = leaf >> (n - k);
                    x.at(k, b).abs().powf(p) * model.dvf(k, b)
                })
                .sum()
        })
        .collect();
    Ok(tree.expectation(&per_leaf).powf(1.0 / p))
}

/// `Delta_{P⊗V^F}(f, h, S) = ||F + |h| + sup_{u<=.} S_u||` with
/// `F_k = sum_{i<k} |f_i| dt`, using `S^+` or `|S|` inside the running sup.
pub fn pvf_data_norm(triplet: &DataTriplet, model: &RandomTimeModel, p: f64, positive_part: bool) -> Result<f64> {
    let tree = model.tree();
    let dt = tree.dt();
    let mut x = AdaptedProcess::zeros(tree);
    let mut fsum = AdaptedProcess::zeros(tree);
    let mut ssup = AdaptedProcess::zeros(tree);
    for n in 0..=tree.depth() {
        for b in 0..tree.width(n) {
            let s = match triplet.barrier.process() {
                None => 0.0,
                Some(s) if positive_part => s.at(n, b).max(0.0),
                Some(s) => s.at(n, b).abs(),
            };
            let (f_prev, s_prev) = if n == 0 {
                (0.0, 0.0)
            } else {
                let p = b >> 1;
                (fsum.at(n - 1, p) + triplet.f.at(n - 1, p).abs() * dt, ssup.at(n - 1, p))
            };
            fsum.set(n, b, f_prev);
            ssup.set(n, b, s_prev.max(s));
            x.set(n, b, f_prev + triplet.h.at(n, b).abs() + ssup.at(n, b));
        }
    }
    lp_pvf_norm(&x, model, p)
}

/// Increasing cutoffs `n_1 < ... < n_K <= N` for the truncated data.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TruncationSchedule {
    cutoffs: Vec<usize>,
}

impl TruncationSchedule {
    pub fn new(cutoffs: Vec<usize>, depth: usize) -> Result<Self> {
        if cutoffs.is_empty() {
            return Err(Error::Argument("empty truncation schedule".into()));
        }
        if cutoffs.windows(2).any(|w| w[0] >= w[1]) || cutoffs.last().is_some_and(|&c| c > depth) {
            return Err(Error::Argument(format!(
                "cutoffs must increase strictly and stay within depth {depth}: {cutoffs:?}"
            )));
        }
        Ok(Self { cutoffs })
    }

    /// Every level `1..=N`.
    pub fn full(depth: usize) -> Self {
        Self { cutoffs: (1..=depth).collect() }
    }

    pub fn cutoffs(&self) -> &[usize] {
        &self.cutoffs
    }

    /// `f I_{[0,n)}`, `h_{. ∧ n}`, `S_{. ∧ n}`.
    pub fn truncate(triplet: &DataTriplet, n: usize) -> DataTriplet {
        let stop = |x: &AdaptedProcess| {
            let depth = x.depth();
            AdaptedProcess::from_levels(
                (0..=depth)
                    .map(|k| {
                        let m = k.min(n);
                        (0..1usize << k).map(|b| x.at(m, b >> (k - m))).collect()
                    })
                    .collect(),
            )
            .expect("same shape")
        };
        let f = AdaptedProcess::from_levels(
            triplet
                .f
                .levels()
                .iter()
                .enumerate()
                .map(|(k, lvl)| if k < n { lvl.clone() } else { vec![0.0; lvl.len()] })
                .collect(),
        )
        .expect("same shape");
        let barrier = match &triplet.barrier {
            Barrier::None => Barrier::None,
            Barrier::Lower(s) => Barrier::Lower(stop(s)),
        };
        DataTriplet { f, barrier, h: stop(&triplet.h) }
    }
}

#[derive(Debug, Clone)]
pub struct InfiniteSolution {
    pub solution_f: SolutionF,
    pub solution: SolutionG,
    /// `(n, ||Y^(n) - Y^(N)|| + ||Z^(n) - Z^(N)|| + ||M^(n) - M^(N)||)` in the
    /// discounted norms under `P`.
    pub cauchy: Vec<(usize, f64)>,
    /// Discounted norms of the full solution; `data` and `ratio` refer to
    /// `Delta_{P⊗V^F}(f, h, S^+)`.
    pub norms: NormReport,
    pub delta_positive: f64,
    pub delta_abs: f64,
}

impl InfiniteSolution {
    pub fn cauchy_nonincreasing(&self, tol: f64) -> bool {
        self.cauchy.windows(2).all(|w| w[1].1 <= w[0].1 + tol)
    }
}

/// Solves the full-tree problem, and every truncated problem of `schedule`
/// for the Cauchy profile.
pub fn solve_infinite(
    triplet: &DataTriplet,
    space: &EnlargedSpace,
    p: f64,
    schedule: &TruncationSchedule,
) -> Result<InfiniteSolution> {
    check_p(p)?;
    let model = space.model();
    require_finite_tau(model)?;
    let (solution_f, solution) = solve_g_infinite(triplet, space)?;
    let cauchy = schedule
        .cutoffs()
        .par_iter()
        .map(|&n| {
            let (_, sol) = solve_g_infinite(&TruncationSchedule::truncate(triplet, n), space)?;
            Ok((n, difference_norm(&sol, &solution, space, p, true)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let delta_positive = pvf_data_norm(triplet, model, p, true)?;
    let delta_abs = pvf_data_norm(triplet, model, p, false)?;
    let mut norms = discounted_norms(&solution, triplet, space, p)?;
    norms.data = delta_positive;
    norms.ratio = ratio(norms.lhs(), delta_positive);
    Ok(InfiniteSolution { solution_f, solution, cauchy, norms, delta_positive, delta_abs })
}

/// Residuals of the discounted equation satisfied by
/// `(Y~, Z~, K~, M~) = (E~^{1/p} Y, E~_-^{1/p} Z, E~_-^{1/p} . K, E~_-^{1/p} . M)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EquivalentReport {
    pub tol: f64,
    pub dynamics: f64,
    pub terminal: f64,
    pub barrier: f64,
    pub skorokhod: f64,
    /// Steps skipped because `G_{n+1} = 0`.
    pub skipped: usize,
}

impl EquivalentReport {
    pub fn passes(&self) -> bool {
        self.dynamics.max(self.terminal).max(self.barrier).max(self.skorokhod) <= self.tol
    }
}

/// Checks, step by step before `T ∧ tau`,
///
/// ```text
/// Y~_{n+1} - Y~_n = -Y~_{n+1} (G~/G)^{1/p}_{n+1} dV~^{(1/p)}_{n+1}
///                   - e_n f_n dt - e_n dK + e_n dM + e_n Z_n dW,   e = E~^{1/p},
/// ```
///
/// together with `Y~ >= e S`, `Y~_{T∧tau} = e xi` and the Skorokhod pairing.
pub fn equivalent_rbsde_check(sol: &SolutionG, triplet: &DataTriplet, space: &EnlargedSpace, p: f64) -> Result<EquivalentReport> {
    check_p(p)?;
    let model = space.model();
    let tree = space.tree();
    let dt = tree.dt();
    let a = 1.0 / p;
    let t = sol.horizon;
    let mut out = EquivalentReport {
        tol: 1e-9 * (1.0 + sol.y.max_abs()),
        dynamics: 0.0,
        terminal: 0.0,
        barrier: 0.0,
        skorokhod: 0.0,
        skipped: 0,
    };
    let mut pairing = vec![0.0; space.len()];
    for (i, &s) in space.states().iter().enumerate() {
        let stop = s.stop(t);
        let e = |n: usize| space.on_path(&model.e_tilde, s, n).powf(a);
        let yt = |n: usize| e(n) * sol.y.at(i, n);
        let xi = space.on_path(&triplet.h, s, stop);
        out.terminal = out.terminal.max((yt(stop) - e(stop) * xi).abs());
        for n in 0..stop {
            let en = e(n);
            let dk = sol.k.at(i, n + 1) - sol.k.at(i, n);
            if let Some(bar) = triplet.barrier.process() {
                let gap = yt(n) - en * space.on_path(bar, s, n);
                out.barrier = out.barrier.max(-gap);
                pairing[i] += gap * en * dk;
            }
            let node = space.node(s, n + 1);
            let g = model.g.at(n + 1, node);
            if !(g > 0.0) {
                out.skipped += 1;
                continue;
            }
            let drift = yt(n + 1) * (model.g_tilde.at(n + 1, node) / g).powf(a) * model.dv_tilde(a, n + 1, node);
            let dm = sol.m.at(i, n + 1) - sol.m.at(i, n);
            let rhs = -drift - en * space.on_path(&triplet.f, s, n) * dt - en * dk
                + en * dm
                + en * sol.z.at(i, n) * tree.dw(node);
            out.dynamics = out.dynamics.max((yt(n + 1) - yt(n) - rhs).abs());
        }
    }
    out.skorokhod = space.p_expectation(&pairing).abs();
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct BsdeSolution {
    pub solution: SolutionG,
    pub residuals: ResidualReport,
    /// Largest `|K|` anywhere; zero for a true BSDE.
    pub k_max: f64,
    /// Discounted norms against `Delta_{P⊗V^F}(f, h, 0)`.
    pub norms: NormReport,
}

/// The non-reflected equation on the full tree of a finite-tau model.
pub fn solve_bsde_infinite(f: &AdaptedProcess, h: &AdaptedProcess, space: &EnlargedSpace, p: f64) -> Result<BsdeSolution> {
    check_p(p)?;
    require_finite_tau(space.model())?;
    let triplet = DataTriplet::new(f.clone(), Barrier::None, h.clone())?;
    let (_, solution) = solve_g_infinite(&triplet, space)?;
    let residuals = residual_check(&solution, &triplet, space);
    let k_max = solution.k.max_abs();
    let mut norms = discounted_norms(&solution, &triplet, space, p)?;
    norms.data = pvf_data_norm(&triplet, space.model(), p, true)?;
    norms.ratio = ratio(norms.lhs(), norms.data);
    Ok(BsdeSolution { solution, residuals, k_max, norms })
}

/// `T -> E^{Q~_T}[X_{T∧tau}]` against `G_0 E[sum_k X_k dV^F_k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LimitProfile {
    /// `(T, E^{Q~_T}[X_{T∧tau}])` for `T = 1..=N`.
    pub profile: Vec<(usize, f64)>,
    pub target: f64,
    /// `G_0 E[X_N E~_N]`, zero when `G_N = 0`.
    pub boundary: f64,
    /// `|profile_N - target - boundary|`.
    pub residual: f64,
    /// `max |X / E(G_-^{-1} . m)|`.
    pub bound_ratio: f64,
}

impl LimitProfile {
    pub fn hypothesis_holds(&self) -> bool {
        self.bound_ratio.is_finite()
    }
}

pub fn qtilde_limit_check(x: &AdaptedProcess, space: &EnlargedSpace) -> Result<LimitProfile> {
    let model = space.model();
    require_finite_tau(model)?;
    if x.at(0, 0) != 0.0 {
        return Err(Error::Argument(format!("X_0 must vanish, got {}", x.at(0, 0))));
    }
    let tree = space.tree();
    let n = tree.depth();
    let profile = (1..=n)
        .map(|t| {
            let vals: Vec<f64> = space.states().iter().map(|&s| space.on_path(x, s, s.stop(t))).collect();
            (t, space.qtilde_expectation(&vals, t))
        })
        .collect::<Vec<_>>();
    let g0 = model.g0();
    let per_leaf = |f: &dyn Fn(usize) -> f64| tree.expectation(&(0..tree.leaves()).map(f).collect::<Vec<_>>());
    let target = g0 * per_leaf(&|leaf| (1..=n).map(|k| x.at(k, leaf >> (n - k)) * model.dvf(k, leaf >> (n - k))).sum());
    let boundary = g0 * per_leaf(&|leaf| x.at(n, leaf) * model.e_tilde.at(n, leaf));
    let residual = (profile[n - 1].1 - target - boundary).abs();
    let mut bound_ratio: f64 = 0.0;
    for k in 0..=n {
        for b in 0..tree.width(k) {
            bound_ratio = bound_ratio.max((x.at(k, b) / model.e_m.at(k, b)).abs());
        }
    }
    Ok(LimitProfile { profile, target, boundary, residual, bound_ratio })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::enlarged::build_enlarged_space;
    use crate::random_time::{build_random_time, DensityKernel};
    use crate::tree::TreeModel;

    fn finite(depth: usize) -> EnlargedSpace {
        let t = TreeModel::new(depth, 1.0 / depth as f64).unwrap();
        let k = if depth == 2 {
            DensityKernel::reference_finite(&t).unwrap()
        } else {
            DensityKernel::anticipative_mix(&t, 0.05, KernelMode::FiniteTau, |_, _, w, s| 0.3 + 0.1 * s + 0.1 * w.tanh()).unwrap()
        };
        let m = build_random_time(&t, &k).unwrap();
        build_enlarged_space(&t, &m, &k).unwrap()
    }

    #[test]
    fn unit_process_has_unit_norm() {
        let s = finite(3);
        let one = AdaptedProcess::constant(s.tree(), 1.0);
        assert!((lp_pvf_norm(&one, s.model(), 2.0).unwrap() - 1.0).abs() < 1e-14);
        assert_eq!(lp_pvf_norm(&AdaptedProcess::zeros(s.tree()), s.model(), 2.0).unwrap(), 0.0);
    }

    #[test]
    fn vf_against_itself_by_hand() {
        let s = finite(2);
        let m = s.model();
        let mut by_hand = 0.0;
        for leaf in 0..4usize {
            for k in 1..=2usize {
                let b = leaf >> (2 - k);
                by_hand += 0.25 * m.vf.at(k, b) * m.dvf(k, b);
            }
        }
        assert!((lp_pvf_norm(&m.vf, m, 1.0).unwrap() - by_hand).abs() < 1e-15);
    }

    #[test]
    fn bounded_mode_rejected() {
        let t = TreeModel::new(2, 1.0).unwrap();
        let k = DensityKernel::reference(&t).unwrap();
        let m = build_random_time(&t, &k).unwrap();
        let one = AdaptedProcess::constant(&t, 1.0);
        assert!(matches!(lp_pvf_norm(&one, &m, 2.0), Err(Error::Contract(_))));
    }

    #[test]
    fn truncation_freezes_after_cutoff() {
        let t = TreeModel::new(3, 1.0).unwrap();
        let w = t.brownian();
        let d = DataTriplet { f: w.clone(), barrier: Barrier::Lower(w.clone()), h: w.clone() };
        let c = TruncationSchedule::truncate(&d, 1);
        for b in 0..8 {
            assert_eq!(c.h.at(3, b), w.at(1, b >> 2));
            assert_eq!(c.f.at(2, b >> 1), 0.0);
        }
        assert_eq!(c.f.at(0, 0), w.at(0, 0));
        assert!(TruncationSchedule::new(vec![2, 2], 3).is_err());
    }

    #[test]
    fn constant_claim_infinite() {
        let s = finite(4);
        let d = DataTriplet::constant_claim(s.tree(), 1.0);
        let r = solve_infinite(&d, &s, 2.0, &TruncationSchedule::full(4)).unwrap();
        assert!(r.cauchy.iter().all(|&(_, v)| v < 1e-14));
        for i in 0..s.len() {
            for n in 0..=s.states()[i].stop(4) {
                assert!((r.solution.y.at(i, n) - 1.0).abs() < 1e-13);
            }
        }
        let eq = equivalent_rbsde_check(&r.solution, &d, &s, 2.0).unwrap();
        assert!(eq.passes(), "{eq:?}");
    }

    #[test]
    fn limit_of_unit_indicator() {
        let s = finite(3);
        let x = AdaptedProcess::from_fn(s.tree(), |n, _| if n > 0 { 1.0 } else { 0.0 });
        let r = qtilde_limit_check(&x, &s).unwrap();
        assert!((r.target - s.model().g0()).abs() < 1e-14);
        assert!(r.residual < 1e-12);
        assert_eq!(r.boundary, 0.0);
    }
}
