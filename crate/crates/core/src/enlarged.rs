//! The enlarged probability space: every (Brownian path, death index) pair
//! carrying positive P-mass, with the progressively enlarged filtration `G`
//! and the measures `P` and `Q~_T`.
//!
//! A state is `(leaf, j)` with `j` in `0..=N` for `tau = j` and `j = N + 1`
//! standing for `tau > N`. At level `n` the `G_n`-atom of a state is its path
//! prefix of length `n` together with either "alive" (`j > n`) or the exact
//! death index `j <= n`.

use std::ops::Range;

use crate::error::{Error, Result};
use crate::random_time::{DensityKernel, RandomTimeModel};
use crate::tree::{AdaptedProcess, TreeModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct State {
    pub leaf: usize,
    /// Death index; `depth + 1` means `tau > N`.
    pub death: usize,
}

impl State {
    /// `T ∧ tau`.
    #[inline]
    pub fn stop(&self, horizon: usize) -> usize {
        self.death.min(horizon)
    }

    #[inline]
    pub fn alive_at(&self, n: usize) -> bool {
        self.death > n
    }
}

#[derive(Debug, Clone)]
pub struct EnlargedSpace {
    model: RandomTimeModel,
    states: Vec<State>,
    pweight: Vec<f64>,
    /// `leaf_start[l]..leaf_start[l + 1]` are the states on leaf `l`.
    leaf_start: Vec<usize>,
}

/// Enumerates the positive-weight states of `kernel`, sorted by leaf and then
/// by death index with `tau > N` last.
pub fn build_enlarged_space(
    tree: &TreeModel,
    model: &RandomTimeModel,
    kernel: &DensityKernel,
) -> Result<EnlargedSpace> {
    if kernel.depth() != tree.depth() || model.tree().depth() != tree.depth() {
        return Err(Error::Argument("tree, kernel and model depths differ".into()));
    }
    let n = tree.depth();
    let lw = tree.leaf_weight();
    let mut states = Vec::new();
    let mut pweight = Vec::new();
    let mut leaf_start = Vec::with_capacity(tree.leaves() + 1);
    for leaf in 0..tree.leaves() {
        leaf_start.push(states.len());
        for (j, &a) in kernel.row(leaf).iter().enumerate() {
            if a > 0.0 {
                states.push(State { leaf, death: j });
                pweight.push(lw * a);
            }
        }
    }
    leaf_start.push(states.len());
    debug_assert!(states.iter().all(|s| s.death <= n + 1));
    Ok(EnlargedSpace { model: model.clone(), states, pweight, leaf_start })
}

/// One value per state and level `0..=N`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateProcess {
    levels: usize,
    values: Vec<f64>,
}

impl StateProcess {
    pub fn zeros(space: &EnlargedSpace) -> Self {
        let levels = space.depth() + 1;
        Self { levels, values: vec![0.0; levels * space.len()] }
    }

    pub fn from_fn(space: &EnlargedSpace, mut f: impl FnMut(usize, State, usize) -> f64) -> Self {
        let levels = space.depth() + 1;
        let mut values = Vec::with_capacity(levels * space.len());
        for (i, &s) in space.states().iter().enumerate() {
            for n in 0..levels {
                values.push(f(i, s, n));
            }
        }
        Self { levels, values }
    }

    #[inline]
    pub fn at(&self, state: usize, level: usize) -> f64 {
        self.values[state * self.levels + level]
    }

    #[inline]
    pub fn set(&mut self, state: usize, level: usize, v: f64) {
        self.values[state * self.levels + level] = v;
    }

    /// The whole trajectory of one state.
    pub fn path(&self, state: usize) -> &[f64] {
        &self.values[state * self.levels..(state + 1) * self.levels]
    }

    pub fn path_mut(&mut self, state: usize) -> &mut [f64] {
        &mut self.values[state * self.levels..(state + 1) * self.levels]
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |a, v| a.max(v.abs()))
    }

    pub fn zip_with(&self, other: &Self, mut f: impl FnMut(f64, f64) -> f64) -> Self {
        assert_eq!(self.values.len(), other.values.len(), "state processes on different spaces");
        Self {
            levels: self.levels,
            values: self.values.iter().zip(&other.values).map(|(a, b)| f(*a, *b)).collect(),
        }
    }

    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Self {
        Self { levels: self.levels, values: self.values.iter().map(|v| f(*v)).collect() }
    }
}

impl EnlargedSpace {
    pub fn model(&self) -> &RandomTimeModel {
        &self.model
    }

    pub fn tree(&self) -> &TreeModel {
        self.model.tree()
    }

    pub fn depth(&self) -> usize {
        self.model.tree().depth()
    }

    /// Death index encoding `tau > N`.
    pub fn never(&self) -> usize {
        self.depth() + 1
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states(&self) -> &[State] {
        &self.states
    }

    pub fn pweight(&self) -> &[f64] {
        &self.pweight
    }

    /// Path prefix of length `level` of a state.
    #[inline]
    pub fn node(&self, state: State, level: usize) -> usize {
        state.leaf >> (self.depth() - level)
    }

    /// Value of an `F`-adapted process on the path of `state` at `level`.
    #[inline]
    pub fn on_path(&self, x: &AdaptedProcess, state: State, level: usize) -> f64 {
        x.at(level, self.node(state, level))
    }

    /// States whose path starts with prefix `bits` of length `level`.
    pub fn prefix_range(&self, level: usize, bits: usize) -> Range<usize> {
        let shift = self.depth() - level;
        self.leaf_start[bits << shift]..self.leaf_start[(bits + 1) << shift]
    }

    /// `Z~_{T ∧ tau}` on every state.
    pub fn qtilde_density(&self, horizon: usize) -> Vec<f64> {
        let zt = &self.model.z_tilde;
        self.states.iter().map(|&s| self.on_path(zt, s, s.stop(horizon))).collect()
    }

    /// Unnormalised `Q~_T` weights: P-weight times `Z~_{T ∧ tau}`.
    pub fn qtilde_weights(&self, horizon: usize) -> Vec<f64> {
        self.qtilde_density(horizon).iter().zip(&self.pweight).map(|(z, w)| z * w).collect()
    }

    /// `E^{Q~_T}[X]` for a per-state random variable.
    pub fn qtilde_expectation(&self, x: &[f64], horizon: usize) -> f64 {
        debug_assert_eq!(x.len(), self.len());
        self.qtilde_weights(horizon).iter().zip(x).map(|(w, v)| w * v).sum()
    }

    /// `E^P[X]` for a per-state random variable.
    pub fn p_expectation(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.len());
        self.pweight.iter().zip(x).map(|(w, v)| w * v).sum()
    }

    /// Weighted conditional expectation onto `G_n`: every state receives the
    /// weighted mean of `values` over its `G_n`-atom.
    pub fn g_conditional(&self, n: usize, values: &[f64], weights: &[f64]) -> Vec<f64> {
        debug_assert_eq!(values.len(), self.len());
        let mut out = vec![0.0; self.len()];
        let mut num = vec![0.0; n + 2];
        let mut den = vec![0.0; n + 2];
        for b in 0..self.tree().width(n) {
            let range = self.prefix_range(n, b);
            num.iter_mut().for_each(|v| *v = 0.0);
            den.iter_mut().for_each(|v| *v = 0.0);
            for i in range.clone() {
                let c = self.states[i].death.min(n + 1);
                num[c] += weights[i] * values[i];
                den[c] += weights[i];
            }
            for i in range {
                let c = self.states[i].death.min(n + 1);
                out[i] = num[c] / den[c];
            }
        }
        out
    }

    /// Total weight of the alive `G_n`-atom with prefix `bits`, together with
    /// the weighted sum of `values` over it.
    pub fn alive_atom_sums(&self, n: usize, bits: usize, values: &[f64], weights: &[f64]) -> (f64, f64) {
        let mut mass = 0.0;
        let mut sum = 0.0;
        for i in self.prefix_range(n, bits) {
            if self.states[i].alive_at(n) {
                mass += weights[i];
                sum += weights[i] * values[i];
            }
        }
        (mass, sum)
    }

    /// Increment `dN^G_n = I_{tau = n} - (dD^o_n / G~_n) I_{n <= tau}` on a state.
    pub fn ng_increment(&self, state: State, n: usize) -> f64 {
        if n == 0 {
            return 0.0;
        }
        let lam = self.on_path(&self.model.hazard, state, n);
        let jump = if state.death == n { 1.0 } else { 0.0 };
        if state.death >= n {
            jump - lam
        } else {
            0.0
        }
    }

    /// `|sum of P-weights - 1|`.
    pub fn mass_residual(&self) -> f64 {
        (self.pweight.iter().sum::<f64>() - 1.0).abs()
    }

    /// `|Q~_T(Omega) - 1|`.
    pub fn qtilde_normalization_residual(&self, horizon: usize) -> f64 {
        (self.qtilde_weights(horizon).iter().sum::<f64>() - 1.0).abs()
    }

    /// Largest `|E[dN^G_{n+1} | G_n]|` over alive atoms, under P.
    pub fn ng_martingale_residual(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for n in 0..self.depth() {
            let inc: Vec<f64> = self.states.iter().map(|&s| self.ng_increment(s, n + 1)).collect();
            for b in 0..self.tree().width(n) {
                let (mass, sum) = self.alive_atom_sums(n, b, &inc, &self.pweight);
                if mass > 0.0 {
                    worst = worst.max((sum / mass).abs());
                }
            }
        }
        worst
    }

    /// Largest `|E[Z~_{(n+1) ∧ tau} | G_n] - Z~_n|` over alive atoms, under P.
    pub fn ztilde_martingale_residual(&self) -> f64 {
        let zt = &self.model.z_tilde;
        let mut worst: f64 = 0.0;
        for n in 0..self.depth() {
            let next: Vec<f64> = self.states.iter().map(|&s| self.on_path(zt, s, s.stop(n + 1))).collect();
            for b in 0..self.tree().width(n) {
                let (mass, sum) = self.alive_atom_sums(n, b, &next, &self.pweight);
                if mass > 0.0 {
                    worst = worst.max((sum / mass - zt.at(n, b)).abs());
                }
            }
        }
        worst
    }

    /// Largest `|E^{Q~_T}[W_{(n+1) ∧ T ∧ tau} - W_{n ∧ T ∧ tau} | G_n]|` over
    /// alive atoms.
    pub fn stopped_brownian_qtilde_residual(&self, horizon: usize) -> f64 {
        let q = self.qtilde_weights(horizon);
        let tree = *self.tree();
        let mut worst: f64 = 0.0;
        for n in 0..horizon.min(self.depth()) {
            let inc: Vec<f64> = self
                .states
                .iter()
                .map(|&s| if s.alive_at(n) { tree.dw(self.node(s, n + 1)) } else { 0.0 })
                .collect();
            for b in 0..tree.width(n) {
                let (mass, sum) = self.alive_atom_sums(n, b, &inc, &q);
                if mass > 0.0 {
                    worst = worst.max((sum / mass).abs());
                }
            }
        }
        worst
    }

    /// Largest discrepancy, over alive `G_n`-atoms, between
    /// `E[X | G_n]` computed on the enlarged space and
    /// `E[X I_{n < tau} | F_n] / G_n` computed on the tree, for an
    /// `F_N`-measurable `X` given by its leaf values.
    pub fn check_g_projection(&self, kernel: &DensityKernel, leaf_values: &[f64], n: usize) -> Result<f64> {
        let tree = *self.tree();
        if leaf_values.len() != tree.leaves() || n > self.depth() {
            return Err(Error::Argument("projection check needs leaf values and n <= depth".into()));
        }
        let survival: Vec<f64> = (0..tree.leaves())
            .map(|l| leaf_values[l] * kernel.row(l)[n + 1..].iter().sum::<f64>())
            .collect();
        let rhs_num = tree.cond_expectation(&survival, tree.depth(), n)?;
        let x: Vec<f64> = self.states.iter().map(|s| leaf_values[s.leaf]).collect();
        let scale = leaf_values.iter().fold(1.0f64, |a, v| a.max(v.abs()));
        let mut worst: f64 = 0.0;
        for b in 0..tree.width(n) {
            let (mass, sum) = self.alive_atom_sums(n, b, &x, &self.pweight);
            if mass > 0.0 {
                let rhs = rhs_num[b] / self.model.g.at(n, b);
                worst = worst.max((sum / mass - rhs).abs() / scale);
            }
        }
        Ok(worst)
    }

    /// Both sides of `E^{Q~}[X_{T∧tau}] = E[G_0 sum_k X_k dV^F_k + G_0 X_T E~_T + X_0 (1 - G_0)]`
    /// for an `F`-adapted `X`.
    pub fn qtilde_optional_identity(&self, x: &AdaptedProcess, horizon: usize) -> (f64, f64) {
        let vals: Vec<f64> = self.states.iter().map(|&s| self.on_path(x, s, s.stop(horizon))).collect();
        let lhs = self.qtilde_expectation(&vals, horizon);
        let m = &self.model;
        let g0 = m.g0();
        let tree = self.tree();
        let per_leaf: Vec<f64> = (0..tree.leaves())
            .map(|leaf| {
                let node = |k: usize| leaf >> (tree.depth() - k);
                let mut acc = 0.0;
                for k in 1..=horizon {
                    acc += x.at(k, node(k)) * m.dvf(k, node(k));
                }
                g0 * acc + g0 * x.at(horizon, node(horizon)) * m.e_tilde.at(horizon, node(horizon))
            })
            .collect();
        let rhs = tree.expectation(&per_leaf) + x.at(0, 0) * (1.0 - g0);
        (lhs, rhs)
    }

    /// Both sides of `E^{Q~}[X_{T∧tau}] = E[X_0 + G_0 sum_k E~_{k-1} dX_k]` for a
    /// nondecreasing `F`-adapted `X`.
    pub fn qtilde_increasing_identity(&self, x: &AdaptedProcess, horizon: usize) -> (f64, f64) {
        let vals: Vec<f64> = self.states.iter().map(|&s| self.on_path(x, s, s.stop(horizon))).collect();
        let lhs = self.qtilde_expectation(&vals, horizon);
        let rhs = x.at(0, 0) + self.model.g0() * self.tree().expectation(&discounted_sum(self.tree(), &self.model, x, horizon, 1.0));
        (lhs, rhs)
    }
}

/// Per leaf, `sum_{k=1..T} E~_{k-1}^a dX_k`.
pub(crate) fn discounted_sum(
    tree: &TreeModel,
    model: &RandomTimeModel,
    x: &AdaptedProcess,
    horizon: usize,
    a: f64,
) -> Vec<f64> {
    (0..tree.leaves())
        .map(|leaf| {
            let node = |k: usize| leaf >> (tree.depth() - k);
            (1..=horizon)
                .map(|k| {
                    let e = model.e_tilde.at(k - 1, node(k - 1));
                    let e = if a == 1.0 { e } else { e.powf(a) };
                    e * (x.at(k, node(k)) - x.at(k - 1, node(k - 1)))
                })
                .sum()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random_time::{build_random_time, KernelMode};

    fn reference() -> (TreeModel, DensityKernel, EnlargedSpace) {
        let t = TreeModel::new(2, 1.0).unwrap();
        let k = DensityKernel::reference(&t).unwrap();
        let m = build_random_time(&t, &k).unwrap();
        let s = build_enlarged_space(&t, &m, &k).unwrap();
        (t, k, s)
    }

    #[test]
    fn deterministic_death_time() {
        let t = TreeModel::new(1, 1.0).unwrap();
        let k = DensityKernel::explicit(&t, vec![vec![0.0, 1.0, 0.0]; 2], KernelMode::FiniteTau).unwrap();
        let m = build_random_time(&t, &k).unwrap();
        let s = build_enlarged_space(&t, &m, &k).unwrap();
        assert_eq!(s.len(), 2);
        assert!(s.pweight().iter().all(|&w| w == 0.5));
        assert!(s.states().iter().all(|st| st.death == 1));
    }

    #[test]
    fn reference_space_has_twelve_states() {
        let (_, _, s) = reference();
        assert_eq!(s.len(), 12);
        assert_eq!(s.mass_residual(), 0.0);
        let order: Vec<(usize, usize)> = s.states().iter().map(|st| (st.leaf, st.death)).collect();
        assert_eq!(&order[..3], &[(0, 1), (0, 2), (0, 3)]);
    }

    #[test]
    fn reference_qtilde_normalises() {
        let (_, _, s) = reference();
        for t in 0..=2 {
            assert!(s.qtilde_normalization_residual(t) < 1e-15);
        }
    }

    #[test]
    fn reference_qtilde_death_probability() {
        let (_, _, s) = reference();
        let x: Vec<f64> = s.states().iter().map(|st| if st.death <= 2 { 1.0 } else { 0.0 }).collect();
        let want = 0.5 * (0.25 + 0.25 / 0.6 * 0.5) + 0.5 * (0.5 + 0.25 * 1.25);
        let got = s.qtilde_expectation(&x, 2);
        assert!((got - want).abs() < 1e-15, "{got} vs {want}");
        assert!((got - 0.635_416_666_666_666_6).abs() < 1e-15);
    }

    #[test]
    fn martingale_checks_on_reference() {
        let (_, _, s) = reference();
        assert!(s.ng_martingale_residual() < 1e-15);
        assert!(s.ztilde_martingale_residual() < 1e-15);
        assert!(s.stopped_brownian_qtilde_residual(2) < 1e-15);
    }

    #[test]
    fn projection_of_brownian_and_constant() {
        let (t, k, s) = reference();
        let w2: Vec<f64> = (0..4).map(|l| t.w(2, l)).collect();
        let w1: Vec<f64> = (0..4).map(|l| t.w(1, l >> 1)).collect();
        assert_eq!(s.check_g_projection(&k, &w1, 1).unwrap(), 0.0);
        assert!(s.check_g_projection(&k, &w2, 1).unwrap() < 1e-15);
        assert!(s.check_g_projection(&k, &[3.0; 4], 2).unwrap() < 1e-15);
    }

    #[test]
    fn optional_identity_with_brownian_square() {
        let (t, _, s) = reference();
        let x = AdaptedProcess::from_fn(&t, |n, b| t.w(n, b).powi(2) + 1.0);
        for h in 0..=2 {
            let (l, r) = s.qtilde_optional_identity(&x, h);
            assert!((l - r).abs() < 1e-14, "T={h}: {l} vs {r}");
        }
    }

    #[test]
    fn g_conditional_splits_alive_and_dead() {
        let (_, _, s) = reference();
        let ones = vec![1.0; s.len()];
        let death: Vec<f64> = s.states().iter().map(|st| st.death as f64).collect();
        let c = s.g_conditional(1, &death, &ones);
        for (i, st) in s.states().iter().enumerate() {
            if st.death == 1 {
                assert_eq!(c[i], 1.0);
            } else {
                assert!(c[i] > 2.0 && c[i] < 3.0);
            }
        }
    }
}
