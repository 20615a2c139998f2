//! Solution norms, a-priori estimate diagnostics and the explicit-constant
//! inequalities behind them.
//!
//! Every norm is an exact sum over the states of the enlarged space. The main
//! a-priori estimates only have existential constants, so for those we report
//! ratios and profiles; inequalities with a stated constant come back as an
//! [`Inequality`] that either holds or does not.

use crate::enlarged::{discounted_sum, EnlargedSpace, StateProcess};
use crate::error::{Error, Result};
use crate::random_time::kappa;
use crate::rbsde_f::{Barrier, DataTriplet};
use crate::rbsde_g::{solve_g, SolutionG};
use crate::tree::{AdaptedProcess, PredictableProcess, TreeModel};

/// Relative slack granted to floating-point noise in inequality checks.
const SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Measure {
    P,
    QTilde,
}

impl Measure {
    pub fn label(self) -> &'static str {
        match self {
            Measure::P => "P",
            Measure::QTilde => "Qtilde",
        }
    }
}

/// The four solution norms against the data norm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormReport {
    pub p: f64,
    pub measure: Measure,
    /// Whether the quadruplet was weighted by `E~^{1/p}` first.
    pub discounted: bool,
    pub horizon: usize,
    pub y: f64,
    pub z: f64,
    pub m: f64,
    pub k: f64,
    pub data: f64,
    pub ratio: f64,
}

impl NormReport {
    pub fn lhs(&self) -> f64 {
        self.y + self.z + self.m + self.k
    }
}

pub(crate) fn check_p(p: f64) -> Result<()> {
    if p > 1.0 && p.is_finite() {
        Ok(())
    } else {
        Err(Error::Argument(format!("norm exponent must exceed 1, got {p}")))
    }
}

pub(crate) fn lp(weights: &[f64], values: &[f64], p: f64) -> f64 {
    let s: f64 = weights.iter().zip(values).map(|(w, v)| w * v.abs().powf(p)).sum();
    s.powf(1.0 / p)
}

pub(crate) fn ratio(lhs: f64, rhs: f64) -> f64 {
    if rhs > 0.0 {
        lhs / rhs
    } else if lhs == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

fn weights(space: &EnlargedSpace, measure: Measure, horizon: usize) -> Vec<f64> {
    match measure {
        Measure::P => space.pweight().to_vec(),
        Measure::QTilde => space.qtilde_weights(horizon),
    }
}

/// Per-state pathwise functionals `(sup |Y|, (sum Z^2 dt)^{1/2}, [M]^{1/2}, K)`
/// up to `T ∧ tau`, optionally with the `E~^{1/p}` weights.
fn pathwise(sol: &SolutionG, space: &EnlargedSpace, p: f64, discounted: bool) -> [Vec<f64>; 4] {
    let t = sol.horizon;
    let dt = space.tree().dt();
    let e = &space.model().e_tilde;
    let n_states = space.len();
    let mut out = [vec![0.0; n_states], vec![0.0; n_states], vec![0.0; n_states], vec![0.0; n_states]];
    for (i, &s) in space.states().iter().enumerate() {
        let stop = s.stop(t);
        let w = |n: usize| if discounted { space.on_path(e, s, n).powf(1.0 / p) } else { 1.0 };
        let (mut ys, mut zs, mut ms, mut ks) = (0.0f64, 0.0, 0.0, 0.0);
        for n in 0..=stop {
            ys = ys.max(w(n) * sol.y.at(i, n).abs());
            if n < stop {
                let wn = w(n);
                zs += (wn * sol.z.at(i, n)).powi(2) * dt;
                let dm = sol.m.at(i, n + 1) - sol.m.at(i, n);
                ms += (wn * dm).powi(2);
                ks += wn * (sol.k.at(i, n + 1) - sol.k.at(i, n));
            }
        }
        out[0][i] = ys;
        out[1][i] = zs.sqrt();
        out[2][i] = ms.sqrt();
        out[3][i] = ks;
    }
    out
}

/// `||xi|| + ||sum |f| dt|| + ||sup S||` under `weights`, with `S^+` or `|S|`.
fn data_norm(
    triplet: &DataTriplet,
    space: &EnlargedSpace,
    weights: &[f64],
    p: f64,
    horizon: usize,
    positive_part: bool,
) -> f64 {
    let dt = space.tree().dt();
    let n = space.len();
    let (mut xi, mut fi, mut si) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for (i, &s) in space.states().iter().enumerate() {
        let stop = s.stop(horizon);
        xi[i] = space.on_path(&triplet.h, s, stop);
        fi[i] = (0..stop).map(|k| space.on_path(&triplet.f, s, k).abs() * dt).sum();
        if let Some(bar) = triplet.barrier.process() {
            si[i] = (0..=stop)
                .map(|k| {
                    let v = space.on_path(bar, s, k);
                    if positive_part { v.max(0.0) } else { v.abs() }
                })
                .fold(0.0, f64::max);
        }
    }
    lp(weights, &xi, p) + lp(weights, &fi, p) + lp(weights, &si, p)
}

/// `Delta_{Q~}(xi, f, S^+)` at horizon `T`.
pub fn data_norm_qtilde(triplet: &DataTriplet, space: &EnlargedSpace, p: f64, horizon: usize) -> Result<f64> {
    check_p(p)?;
    let w = space.qtilde_weights(horizon);
    Ok(data_norm(triplet, space, &w, p, horizon, true))
}

/// Norms of a `G`-solution under `measure`, with `Delta(xi, f, S^+)` taken
/// under the same measure.
pub fn solution_norms(
    sol: &SolutionG,
    triplet: &DataTriplet,
    space: &EnlargedSpace,
    p: f64,
    measure: Measure,
) -> Result<NormReport> {
    check_p(p)?;
    let w = weights(space, measure, sol.horizon);
    let [y, z, m, k] = pathwise(sol, space, p, false).map(|v| lp(&w, &v, p));
    let data = data_norm(triplet, space, &w, p, sol.horizon, true);
    Ok(NormReport {
        p,
        measure,
        discounted: false,
        horizon: sol.horizon,
        y,
        z,
        m,
        k,
        data,
        ratio: ratio(y + z + m + k, data),
    })
}

/// Norms of `(E~^{1/p} Y, E~_-^{1/p} Z, E~_-^{1/p} . M, E~_-^{1/p} . K)`
/// under `P`, against `Delta_{Q~}(xi, f, S^+)`.
pub fn discounted_norms(
    sol: &SolutionG,
    triplet: &DataTriplet,
    space: &EnlargedSpace,
    p: f64,
) -> Result<NormReport> {
    check_p(p)?;
    let w = space.pweight();
    let [y, z, m, k] = pathwise(sol, space, p, true).map(|v| lp(w, &v, p));
    let data = data_norm_qtilde(triplet, space, p, sol.horizon)?;
    Ok(NormReport {
        p,
        measure: Measure::P,
        discounted: true,
        horizon: sol.horizon,
        y,
        z,
        m,
        k,
        data,
        ratio: ratio(y + z + m + k, data),
    })
}

/// Estimate ratios over the horizons `1..=T` for one data family.
#[derive(Debug, Clone, PartialEq)]
pub struct RatioProfile {
    pub p: f64,
    pub discounted: bool,
    pub rows: Vec<NormReport>,
}

impl RatioProfile {
    pub fn max_ratio(&self) -> f64 {
        self.rows.iter().map(|r| r.ratio).fold(0.0, f64::max)
    }

    pub fn finite(&self) -> bool {
        self.rows.iter().all(|r| r.ratio.is_finite())
    }
}

fn profile(triplet: &DataTriplet, space: &EnlargedSpace, p: f64, horizon: usize, discounted: bool) -> Result<RatioProfile> {
    check_p(p)?;
    let rows = (1..=horizon)
        .map(|t| {
            let (_, sol) = solve_g(triplet, space, t)?;
            if discounted {
                discounted_norms(&sol, triplet, space, p)
            } else {
                solution_norms(&sol, triplet, space, p, Measure::QTilde)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RatioProfile { p, discounted, rows })
}

/// Ratio of the `Q~`-norms of the solution to `Delta_{Q~}(xi, f, S^+)` for
/// every horizon `1..=T`.
pub fn verify_apriori_bounded(triplet: &DataTriplet, space: &EnlargedSpace, p: f64, horizon: usize) -> Result<RatioProfile> {
    profile(triplet, space, p, horizon, false)
}

/// Same as [`verify_apriori_bounded`] with the discounted quadruplet under `P`
/// on the left.
pub fn verify_discounted(triplet: &DataTriplet, space: &EnlargedSpace, p: f64, horizon: usize) -> Result<RatioProfile> {
    profile(triplet, space, p, horizon, true)
}

/// Largest relative change of the a-priori ratio when the data are scaled by
/// each of `lambdas`.
pub fn scaling_deviation(
    triplet: &DataTriplet,
    space: &EnlargedSpace,
    p: f64,
    horizon: usize,
    lambdas: &[f64],
) -> Result<f64> {
    let (_, base) = solve_g(triplet, space, horizon)?;
    let r0 = solution_norms(&base, triplet, space, p, Measure::QTilde)?.ratio;
    let mut worst = 0.0f64;
    for &l in lambdas {
        let scaled = triplet.scaled(l);
        let (_, sol) = solve_g(&scaled, space, horizon)?;
        let r = solution_norms(&sol, &scaled, space, p, Measure::QTilde)?.ratio;
        worst = worst.max((r - r0).abs() / r0.abs().max(f64::MIN_POSITIVE));
    }
    Ok(worst)
}

/// Both sides of the difference estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityReport {
    pub p: f64,
    pub discounted: bool,
    /// `||dY|| + ||dZ|| + ||dM||`.
    pub lhs: f64,
    /// `Delta(d xi, d f, d S)` with `|dS|`.
    pub delta_data: f64,
    /// `||dS||^{1/2} (Delta^1 + Delta^2)^{1/2}`.
    pub cross: f64,
    /// `lhs / delta_data` and `lhs / cross`.
    pub implied: (f64, f64),
}

impl StabilityReport {
    pub fn finite(&self) -> bool {
        self.lhs.is_finite() && self.delta_data.is_finite() && self.cross.is_finite()
    }
}

fn difference(a: &StateProcess, b: &StateProcess) -> StateProcess {
    a.zip_with(b, |x, y| x - y)
}

fn difference_lhs(ds: &SolutionG, space: &EnlargedSpace, p: f64, discounted: bool, wq: &[f64]) -> f64 {
    let w = if discounted { space.pweight() } else { wq };
    let [y, z, m, _] = pathwise(ds, space, p, discounted).map(|v| lp(w, &v, p));
    y + z + m
}

/// `||dY|| + ||dZ|| + ||dM||` between two solutions of the same horizon, under
/// `Q~` or, discounted, under `P`.
pub fn difference_norm(a: &SolutionG, b: &SolutionG, space: &EnlargedSpace, p: f64, discounted: bool) -> Result<f64> {
    check_p(p)?;
    let ds = SolutionG {
        horizon: a.horizon,
        y: difference(&a.y, &b.y),
        z: difference(&a.z, &b.z),
        k: difference(&a.k, &b.k),
        m: difference(&a.m, &b.m),
    };
    Ok(difference_lhs(&ds, space, p, discounted, &space.qtilde_weights(a.horizon)))
}

/// Difference estimate between two solutions on the same space and horizon.
/// With `discounted` the left side is measured under `P` with `E~` weights.
pub fn verify_stability(
    a: (&SolutionG, &DataTriplet),
    b: (&SolutionG, &DataTriplet),
    space: &EnlargedSpace,
    p: f64,
    discounted: bool,
) -> Result<StabilityReport> {
    check_p(p)?;
    let (sa, ta) = a;
    let (sb, tb) = b;
    if sa.horizon != sb.horizon {
        return Err(Error::Argument("solutions have different horizons".into()));
    }
    let t = sa.horizon;
    let barrier = match (&ta.barrier, &tb.barrier) {
        (Barrier::None, Barrier::None) => Barrier::None,
        (Barrier::Lower(x), Barrier::Lower(y)) => Barrier::Lower(x.zip_with(y, |u, v| u - v)),
        _ => return Err(Error::Argument("cannot compare a reflected and a non-reflected problem".into())),
    };
    let dd = DataTriplet {
        f: ta.f.zip_with(&tb.f, |u, v| u - v),
        barrier,
        h: ta.h.zip_with(&tb.h, |u, v| u - v),
    };
    let ds = SolutionG {
        horizon: t,
        y: difference(&sa.y, &sb.y),
        z: difference(&sa.z, &sb.z),
        k: difference(&sa.k, &sb.k),
        m: difference(&sa.m, &sb.m),
    };
    let wq = space.qtilde_weights(t);
    let lhs = difference_lhs(&ds, space, p, discounted, &wq);
    let delta_data = data_norm(&dd, space, &wq, p, t, false);
    let ds_norm = match dd.barrier.process() {
        None => 0.0,
        Some(s) => {
            let sup: Vec<f64> = space
                .states()
                .iter()
                .map(|&st| (0..=st.stop(t)).map(|k| space.on_path(s, st, k).abs()).fold(0.0, f64::max))
                .collect();
            lp(&wq, &sup, p)
        }
    };
    let sum = data_norm(ta, space, &wq, p, t, true) + data_norm(tb, space, &wq, p, t, true);
    let cross = (ds_norm * sum).sqrt();
    Ok(StabilityReport {
        p,
        discounted,
        lhs,
        delta_data,
        cross,
        implied: (ratio(lhs, delta_data), ratio(lhs, cross)),
    })
}

/// Worst instance of an inequality `lhs <= rhs`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Inequality {
    pub lhs: f64,
    pub rhs: f64,
}

impl Inequality {
    fn new() -> Self {
        Self { lhs: f64::NEG_INFINITY, rhs: 0.0 }
    }

    fn record(&mut self, lhs: f64, rhs: f64) {
        if !(lhs - rhs <= self.lhs - self.rhs) {
            self.lhs = lhs;
            self.rhs = rhs;
        }
    }

    pub fn holds(&self) -> bool {
        self.lhs <= self.rhs + SLACK * (1.0 + self.rhs.abs())
    }

    pub fn excess(&self) -> f64 {
        self.lhs - self.rhs
    }
}

/// `E^{Q~}[D^o_{T∧tau} - D^o_{(t∧tau)-} | G_t] <= G~_{t∧tau}` for every
/// `t in 1..=T` and every state.
pub fn compensator_mass_bound(space: &EnlargedSpace, horizon: usize) -> Inequality {
    let model = space.model();
    let w = space.qtilde_weights(horizon);
    let mut out = Inequality::new();
    for t in 1..=horizon {
        let vals: Vec<f64> = space
            .states()
            .iter()
            .map(|&s| (s.stop(t)..=s.stop(horizon)).map(|k| space.on_path(&model.d_dof, s, k)).sum())
            .collect();
        let cond = space.g_conditional(t, &vals, &w);
        for (i, &s) in space.states().iter().enumerate() {
            out.record(cond[i], space.on_path(&model.g_tilde, s, s.stop(t)));
        }
    }
    out
}

/// `E[sum_{t∧tau < k <= T∧tau} dD^o_k / G~_k | G_t] <= 1` for every
/// `t in 1..=T` and every state.
pub fn hazard_sum_bound(space: &EnlargedSpace, horizon: usize) -> Inequality {
    let model = space.model();
    let mut out = Inequality::new();
    for t in 1..=horizon {
        let vals: Vec<f64> = space
            .states()
            .iter()
            .map(|&s| (s.stop(t) + 1..=s.stop(horizon)).map(|k| space.on_path(&model.hazard, s, k)).sum())
            .collect();
        for v in space.g_conditional(t, &vals, space.pweight()) {
            out.record(v, 1.0);
        }
    }
    out
}

/// `dV~^{(a)} <= max(a, 1) dD^o / G~` on every node, i.e. the difference is
/// nondecreasing.
pub fn hazard_power_increments(space: &EnlargedSpace, a: f64) -> Inequality {
    let model = space.model();
    let tree = space.tree();
    let mut out = Inequality::new();
    for n in 1..=tree.depth() {
        for b in 0..tree.width(n) {
            out.record(model.dv_tilde(a, n, b), a.max(1.0) * model.hazard.at(n, b));
        }
    }
    out
}

/// `E[sup E~ |Y|^p] <= G_0^{-1} E^{Q~}[sup |Y|^p]` for a `G`-process `Y`.
pub fn discounting_sup_bound(space: &EnlargedSpace, y: &StateProcess, p: f64, horizon: usize) -> Inequality {
    let e = &space.model().e_tilde;
    let mut lhs = vec![0.0; space.len()];
    let mut rhs = vec![0.0; space.len()];
    for (i, &s) in space.states().iter().enumerate() {
        for n in 0..=s.stop(horizon) {
            let v = y.at(i, n).abs().powf(p);
            lhs[i] = f64::max(lhs[i], space.on_path(e, s, n) * v);
            rhs[i] = f64::max(rhs[i], v);
        }
    }
    Inequality {
        lhs: space.p_expectation(&lhs),
        rhs: space.qtilde_expectation(&rhs, horizon) / space.model().g0(),
    }
}

/// `E[(E~_-^a . K)^{1/a}] <= kappa(a)/G_0 E^{Q~}[K^{1/a} + sum G~ dK^{1/a}]`
/// for a nondecreasing `G`-adapted `K` with `K_0 = 0`.
pub fn discounting_increasing_bound(space: &EnlargedSpace, k: &StateProcess, a: f64, horizon: usize) -> Inequality {
    let model = space.model();
    let mut lhs = vec![0.0; space.len()];
    let mut rhs = vec![0.0; space.len()];
    for (i, &s) in space.states().iter().enumerate() {
        let stop = s.stop(horizon);
        let mut disc = 0.0;
        let mut jumps = 0.0;
        for n in 1..=stop {
            let dk = k.at(i, n) - k.at(i, n - 1);
            disc += space.on_path(&model.e_tilde, s, n - 1).powf(a) * dk;
            jumps += space.on_path(&model.g_tilde, s, n) * dk.powf(1.0 / a);
        }
        lhs[i] = disc.powf(1.0 / a);
        rhs[i] = k.at(i, stop).powf(1.0 / a) + jumps;
    }
    Inequality {
        lhs: space.p_expectation(&lhs),
        rhs: kappa(a) / model.g0() * space.qtilde_expectation(&rhs, horizon),
    }
}

fn bracket_bound(
    space: &EnlargedSpace,
    h: impl Fn(usize, usize) -> f64,
    p: f64,
    horizon: usize,
    f_optional: bool,
) -> Inequality {
    let model = space.model();
    let a = 2.0 / p;
    let mut lhs = vec![0.0; space.len()];
    let mut rhs = vec![0.0; space.len()];
    for (i, &s) in space.states().iter().enumerate() {
        let stop = s.stop(horizon);
        let (mut disc, mut plain, mut var) = (0.0, 0.0, 0.0);
        for n in 1..=stop {
            let dn = space.ng_increment(s, n);
            let hn = h(i, n);
            disc += space.on_path(&model.e_tilde, s, n - 1).powf(a) * hn * dn * dn;
            plain += hn * dn * dn;
            if !f_optional {
                var += hn.powf(p / 2.0) * space.on_path(&model.g_tilde, s, n) * dn.abs();
            }
        }
        if f_optional {
            // (H^{p/2} I_{[0,tau[} . D^o)_T
            var = 2.0
                * (1..=horizon)
                    .filter(|&n| n < s.death)
                    .map(|n| h(i, n).powf(p / 2.0) * space.on_path(&model.d_dof, s, n))
                    .sum::<f64>();
        }
        lhs[i] = disc.powf(p / 2.0);
        rhs[i] = plain.powf(p / 2.0) + var;
    }
    Inequality {
        lhs: space.p_expectation(&lhs),
        rhs: kappa(a) / model.g0() * space.qtilde_expectation(&rhs, horizon),
    }
}

/// Bracket version of [`discounting_increasing_bound`] for `H . [N^G, N^G]`
/// with a nonnegative `G`-optional `H`.
pub fn discounting_bracket_bound_g(space: &EnlargedSpace, h: &StateProcess, p: f64, horizon: usize) -> Inequality {
    bracket_bound(space, |i, n| h.at(i, n), p, horizon, false)
}

/// Bracket bound for a nonnegative `F`-optional `H`, with the compensator
/// term `2 (H^{p/2} I_{[0,tau[} . D^o)_T`.
pub fn discounting_bracket_bound_f(space: &EnlargedSpace, h: &AdaptedProcess, p: f64, horizon: usize) -> Inequality {
    let states = space.states();
    bracket_bound(space, |i, n| space.on_path(h, states[i], n), p, horizon, true)
}

/// `||(E~_- . X)_T||_{L^r(P)} <= 2 G_0^{-1/r} ||X_{T∧tau}||_{L^r(Q~)}` for a
/// nondecreasing `F`-adapted `X` with `X_0 = 0`.
pub fn discounted_increasing_bound(space: &EnlargedSpace, x: &AdaptedProcess, r: f64, horizon: usize) -> Inequality {
    let tree = space.tree();
    let lhs_leaf: Vec<f64> = discounted_sum(tree, space.model(), x, horizon, 1.0)
        .into_iter()
        .map(|v| v.abs().powf(r))
        .collect();
    let lhs = tree.expectation(&lhs_leaf).powf(1.0 / r);
    let vals: Vec<f64> = space
        .states()
        .iter()
        .map(|&s| space.on_path(x, s, s.stop(horizon)).abs().powf(r))
        .collect();
    let rhs = 2.0 * space.model().g0().powf(-1.0 / r) * space.qtilde_expectation(&vals, horizon).powf(1.0 / r);
    Inequality { lhs, rhs }
}

/// `||sup |H . M|||_r / (||sup |X|||_a ||[M]^{1/2}||_b)` with
/// `1/r = 1/a + 1/b`, on the full tree under `P`.
pub fn martingale_product_ratio(
    tree: &TreeModel,
    h: &PredictableProcess,
    x: &AdaptedProcess,
    m: &AdaptedProcess,
    a: f64,
    b: f64,
) -> Result<f64> {
    if !(a > 1.0 && b > 1.0) {
        return Err(Error::Argument(format!("exponents must exceed 1, got a = {a}, b = {b}")));
    }
    let n = tree.depth();
    for k in 0..n {
        for bits in 0..tree.width(k) {
            if h.at(k, bits).abs() > x.at(k, bits).abs() {
                return Err(Error::Internal(format!("|H| exceeds |X_-| at node ({k}, {bits})")));
            }
        }
    }
    let r = a * b / (a + b);
    let hm = tree.integral(h, m);
    let qv = tree.bracket(m, m);
    let leaf_sup = |proc: &AdaptedProcess, leaf: usize| (0..=n).map(|k| proc.on_path(leaf, k).abs()).fold(0.0, f64::max);
    let norm = |vals: Vec<f64>, q: f64| tree.expectation(&vals).powf(1.0 / q);
    let lhs = norm((0..tree.leaves()).map(|l| leaf_sup(&hm, l).powf(r)).collect(), r);
    let xs = norm((0..tree.leaves()).map(|l| leaf_sup(x, l).powf(a)).collect(), a);
    let ms = norm((0..tree.leaves()).map(|l| qv.at(n, l).sqrt().powf(b)).collect(), b);
    Ok(ratio(lhs, xs * ms))
}
