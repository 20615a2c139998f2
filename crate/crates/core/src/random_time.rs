//! The random horizon `tau` and the processes generated by progressively
//! enlarging the Brownian filtration with it.
//!
//! `tau` is specified through its conditional law given the whole Brownian
//! path (a density kernel). From it we compute, exactly and node by node:
//!
//! * `G_n = P(tau > n | F_n)` and `G~_n = P(tau >= n | F_n)`,
//! * the dual optional projection `D^o` of `I_{tau <= .}`,
//! * the martingale `m = G + D^o`,
//! * `E~ = E(-G~^{-1} . D^o)`, `Z~ = 1 / E(G_-^{-1} . m)` and `V^F = 1 - E~`.
//!
//! Time-0 convention: `E~_0 = E(G_-^{-1} . m)_0 = Z~_0 = 1`; mass sitting at
//! `tau = 0` only shows up through `G_0 = 1 - E[alpha_0]`.

use crate::error::{Error, Result};
use crate::tree::{AdaptedProcess, TreeModel};

/// Whether `tau` may exceed the horizon of the tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelMode {
    /// `alpha_inf > 0` allowed; `G > 0` is required on every level.
    Bounded,
    /// `tau <= N` almost surely: `alpha_inf = 0`, hence `G_N = 0`. Positivity
    /// of `G` is required on levels `0..N` only.
    FiniteTau,
}

/// Conditional law of `tau` given `F_N`: per leaf, the vector
/// `(alpha_0, ..., alpha_N, alpha_inf)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityKernel {
    depth: usize,
    mode: KernelMode,
    alpha: Vec<f64>,
}

impl DensityKernel {
    /// Explicit per-leaf table, one row of length `N + 2` per leaf in
    /// path-bits order.
    pub fn explicit(tree: &TreeModel, rows: Vec<Vec<f64>>, mode: KernelMode) -> Result<Self> {
        let n = tree.depth();
        if rows.len() != tree.leaves() {
            return Err(Error::Config(format!(
                "kernel table needs {} leaf rows, got {}",
                tree.leaves(),
                rows.len()
            )));
        }
        let mut alpha = Vec::with_capacity(tree.leaves() * (n + 2));
        for (leaf, row) in rows.into_iter().enumerate() {
            if row.len() != n + 2 {
                return Err(Error::Config(format!(
                    "kernel row for leaf {leaf:#b} needs {} entries (alpha_0..alpha_N, alpha_inf), got {}",
                    n + 2,
                    row.len()
                )));
            }
            alpha.extend(row);
        }
        let kernel = Self { depth: n, mode, alpha };
        kernel.validate()?;
        Ok(kernel)
    }

    /// Kernel generated by a per-step hazard: `P(tau = n | tau >= n, F_N)` is
    /// `hazard(n, leaf_bits)` for `n = 1..=N`, and `P(tau = 0) = alpha0`.
    /// In [`KernelMode::FiniteTau`] the hazard at `N` is forced to 1.
    pub fn from_hazard(
        tree: &TreeModel,
        alpha0: f64,
        mode: KernelMode,
        mut hazard: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self> {
        let n = tree.depth();
        if !(0.0..1.0).contains(&alpha0) {
            return Err(Error::Config(format!("alpha_0 must lie in [0, 1), got {alpha0}")));
        }
        let mut alpha = Vec::with_capacity(tree.leaves() * (n + 2));
        for leaf in 0..tree.leaves() {
            alpha.push(alpha0);
            let mut survive = 1.0 - alpha0;
            for k in 1..=n {
                let lam = if k == n && mode == KernelMode::FiniteTau { 1.0 } else { hazard(k, leaf) };
                if !(0.0..=1.0).contains(&lam) || lam.is_nan() {
                    return Err(Error::Config(format!(
                        "hazard {lam} outside [0, 1] at level {k}, leaf {leaf:#b}"
                    )));
                }
                alpha.push(survive * lam);
                survive *= 1.0 - lam;
            }
            alpha.push(if mode == KernelMode::FiniteTau { 0.0 } else { survive });
        }
        let kernel = Self { depth: n, mode, alpha };
        kernel.validate()?;
        Ok(kernel)
    }

    /// Immersion case: the hazard at `n` only reads `(n, t_n, W_n)`, so each
    /// `alpha_n` is `F_n`-measurable and `m` is constant.
    pub fn cox(
        tree: &TreeModel,
        alpha0: f64,
        mode: KernelMode,
        hazard: impl Fn(usize, f64, f64) -> f64,
    ) -> Result<Self> {
        let depth = tree.depth();
        Self::from_hazard(tree, alpha0, mode, |n, leaf| {
            let b = leaf >> (depth - n);
            hazard(n, tree.time(n), tree.w(n, b))
        })
    }

    /// Anticipative kernel: the hazard at `n` also reads the sign (`+1`/`-1`)
    /// of the increment of step `n + 1` (0 at the last level), so `tau`
    /// peeks into the future of `W`.
    pub fn anticipative_mix(
        tree: &TreeModel,
        alpha0: f64,
        mode: KernelMode,
        hazard: impl Fn(usize, f64, f64, f64) -> f64,
    ) -> Result<Self> {
        let depth = tree.depth();
        Self::from_hazard(tree, alpha0, mode, |n, leaf| {
            let b = leaf >> (depth - n);
            let s = if n < depth {
                if (leaf >> (depth - n - 1)) & 1 == 1 { 1.0 } else { -1.0 }
            } else {
                0.0
            };
            hazard(n, tree.time(n), tree.w(n, b), s)
        })
    }

    /// Two-step kernel used throughout the documentation and tests
    /// (depth 2, `dt = 1`): `alpha_0 = 0`, `alpha_1 = 1/4` if the second step
    /// is up and `1/2` otherwise, `alpha_2 = 1/4`, remainder on `alpha_inf`.
    pub fn reference(tree: &TreeModel) -> Result<Self> {
        if tree.depth() != 2 {
            return Err(Error::Config("the reference kernel lives on a depth-2 tree".into()));
        }
        let rows = (0..4)
            .map(|leaf| {
                if leaf & 1 == 1 {
                    vec![0.0, 0.25, 0.25, 0.5]
                } else {
                    vec![0.0, 0.5, 0.25, 0.25]
                }
            })
            .collect();
        Self::explicit(tree, rows, KernelMode::Bounded)
    }

    /// The reference kernel with the `alpha_inf` mass moved onto `alpha_2`.
    pub fn reference_finite(tree: &TreeModel) -> Result<Self> {
        if tree.depth() != 2 {
            return Err(Error::Config("the reference kernel lives on a depth-2 tree".into()));
        }
        let rows = (0..4)
            .map(|leaf| {
                if leaf & 1 == 1 {
                    vec![0.0, 0.25, 0.75, 0.0]
                } else {
                    vec![0.0, 0.5, 0.5, 0.0]
                }
            })
            .collect();
        Self::explicit(tree, rows, KernelMode::FiniteTau)
    }

    fn validate(&self) -> Result<()> {
        let width = self.depth + 2;
        for (leaf, row) in self.alpha.chunks_exact(width).enumerate() {
            if let Some(v) = row.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
                return Err(Error::Config(format!(
                    "kernel entry {v} is not a finite nonnegative number (leaf {leaf:#b})"
                )));
            }
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > 1e-14 {
                return Err(Error::Config(format!(
                    "kernel row for leaf {leaf:#b} sums to {total}, not 1"
                )));
            }
            if self.mode == KernelMode::FiniteTau && row[width - 1] != 0.0 {
                return Err(Error::Config(format!(
                    "finite-tau kernel has alpha_inf = {} on leaf {leaf:#b}",
                    row[width - 1]
                )));
            }
        }
        Ok(())
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn mode(&self) -> KernelMode {
        self.mode
    }

    /// `alpha_j(leaf)`; `j = N + 1` addresses `alpha_inf`.
    #[inline]
    pub fn alpha(&self, leaf: usize, j: usize) -> f64 {
        self.alpha[leaf * (self.depth + 2) + j]
    }

    pub fn row(&self, leaf: usize) -> &[f64] {
        let w = self.depth + 2;
        &self.alpha[leaf * w..(leaf + 1) * w]
    }
}

/// Every enlargement process of `tau`, node by node.
#[derive(Debug, Clone)]
pub struct RandomTimeModel {
    tree: TreeModel,
    mode: KernelMode,
    /// Azéma supermartingale `P(tau > n | F_n)`.
    pub g: AdaptedProcess,
    /// `P(tau >= n | F_n)`, with `G~_0 = 1`.
    pub g_tilde: AdaptedProcess,
    /// Increments of the dual optional projection, `E[alpha_n | F_n]`; the
    /// level-0 entry is `D^o_0`.
    pub d_dof: AdaptedProcess,
    /// Cumulative `D^o`.
    pub dof: AdaptedProcess,
    pub m: AdaptedProcess,
    /// Discrete hazard `dD^o_n / G~_n`, zero at level 0.
    pub hazard: AdaptedProcess,
    pub e_tilde: AdaptedProcess,
    /// `E(G_-^{-1} . m)`.
    pub e_m: AdaptedProcess,
    pub z_tilde: AdaptedProcess,
    pub vf: AdaptedProcess,
}

/// Builds all enlargement processes of `kernel` on `tree`.
///
/// Fails with [`Error::Positivity`] if `G` vanishes where the mode requires
/// it to be positive.
pub fn build_random_time(tree: &TreeModel, kernel: &DensityKernel) -> Result<RandomTimeModel> {
    let n = tree.depth();
    if kernel.depth() != n {
        return Err(Error::Argument(format!(
            "kernel of depth {} on a tree of depth {n}",
            kernel.depth()
        )));
    }
    let leaves = tree.leaves();

    let mut d_dof = AdaptedProcess::zeros(tree);
    let mut leaf_buf = vec![0.0; leaves];
    for k in 0..=n {
        for (leaf, slot) in leaf_buf.iter_mut().enumerate() {
            *slot = kernel.alpha(leaf, k);
        }
        let proj = tree.cond_expectation(&leaf_buf, n, k)?;
        d_dof.level_mut(k).copy_from_slice(&proj);
    }

    let mut g = AdaptedProcess::zeros(tree);
    let mut g_tilde = AdaptedProcess::zeros(tree);
    for (leaf, slot) in g.level_mut(n).iter_mut().enumerate() {
        *slot = kernel.alpha(leaf, n + 1);
    }
    for k in (0..=n).rev() {
        if k < n {
            let next = tree.one_step_mean(g_tilde.level(k + 1), k);
            g.level_mut(k).copy_from_slice(&next);
        }
        if k > 0 {
            for b in 0..tree.width(k) {
                g_tilde.set(k, b, g.at(k, b) + d_dof.at(k, b));
            }
        }
    }
    g_tilde.set(0, 0, 1.0);

    let positive_until = match kernel.mode() {
        KernelMode::Bounded => n,
        KernelMode::FiniteTau => n.saturating_sub(1),
    };
    for k in 0..=positive_until {
        if let Some((b, &v)) = g.level(k).iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
            return Err(Error::Positivity { what: "G", level: k, path_bits: b, value: v });
        }
    }
    if let Some((b, &v)) = g_tilde.level(n).iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
        return Err(Error::Positivity { what: "G~", level: n, path_bits: b, value: v });
    }

    let mut dof = AdaptedProcess::zeros(tree);
    let mut m = AdaptedProcess::zeros(tree);
    let mut hazard = AdaptedProcess::zeros(tree);
    let mut e_tilde = AdaptedProcess::constant(tree, 1.0);
    let mut e_m = AdaptedProcess::constant(tree, 1.0);
    let mut z_tilde = AdaptedProcess::constant(tree, 1.0);
    dof.set(0, 0, d_dof.at(0, 0));
    m.set(0, 0, g.at(0, 0) + dof.at(0, 0));
    for k in 1..=n {
        for b in 0..tree.width(k) {
            let p = b >> 1;
            let gt = g_tilde.at(k, b);
            let gk = g.at(k, b);
            let g_prev = g.at(k - 1, p);
            let dd = d_dof.at(k, b);
            dof.set(k, b, dof.at(k - 1, p) + dd);
            m.set(k, b, gk + dof.at(k, b));
            hazard.set(k, b, dd / gt);
            e_tilde.set(k, b, e_tilde.at(k - 1, p) * (gk / gt));
            e_m.set(k, b, e_m.at(k - 1, p) * (gt / g_prev));
            z_tilde.set(k, b, z_tilde.at(k - 1, p) * (g_prev / gt));
        }
    }
    let vf = e_tilde.map(|e| 1.0 - e);

    Ok(RandomTimeModel {
        tree: *tree,
        mode: kernel.mode(),
        g,
        g_tilde,
        d_dof,
        dof,
        m,
        hazard,
        e_tilde,
        e_m,
        z_tilde,
        vf,
    })
}

/// Maximum residuals of the exact identities linking the enlargement
/// processes, each relative to the natural scale 1.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ModelIdentities {
    /// `|E[m_{n+1} | F_n] - m_n|`.
    pub m_martingale: f64,
    /// `|G~_n - G_{n-1} - (m_n - m_{n-1})|`.
    pub gtilde_from_m: f64,
    /// `|G~_n - dD^o_n - G_n|`.
    pub gtilde_minus_jump: f64,
    /// `|G_n - G_0 E(G_-^{-1} . m)_n E~_n|`.
    pub decomposition: f64,
    /// `|Z~_n E(G_-^{-1} . m)_n - 1|`.
    pub reciprocal: f64,
    /// Largest decrease of `V^F` along a branch (0 when nondecreasing).
    pub vf_decrease: f64,
    /// Whether every `V^F` value lies in `[0, 1)` (in `[0, 1]` at the last
    /// level in finite-tau mode).
    pub vf_in_range: bool,
}

impl ModelIdentities {
    pub fn max_residual(&self) -> f64 {
        [
            self.m_martingale,
            self.gtilde_from_m,
            self.gtilde_minus_jump,
            self.decomposition,
            self.reciprocal,
            self.vf_decrease,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

impl RandomTimeModel {
    pub fn tree(&self) -> &TreeModel {
        &self.tree
    }

    pub fn mode(&self) -> KernelMode {
        self.mode
    }

    pub fn g0(&self) -> f64 {
        self.g.at(0, 0)
    }

    /// `dV^F_n = E~_{n-1} - E~_n` (zero at level 0).
    pub fn dvf(&self, level: usize, bits: usize) -> f64 {
        if level == 0 {
            0.0
        } else {
            self.e_tilde.at(level - 1, bits >> 1) - self.e_tilde.at(level, bits)
        }
    }

    /// `dV~^{(a)}_n = 1 - (1 - dD^o_n / G~_n)^a`, evaluated in log space.
    pub fn dv_tilde(&self, a: f64, level: usize, bits: usize) -> f64 {
        if level == 0 {
            return 0.0;
        }
        let lam = self.hazard.at(level, bits);
        -(a * (-lam).ln_1p()).exp_m1()
    }

    /// Evaluates every exact identity of the model.
    pub fn identities(&self) -> ModelIdentities {
        let t = &self.tree;
        let n = t.depth();
        let mut out = ModelIdentities { vf_in_range: true, ..Default::default() };
        let g0 = self.g0();
        out.decomposition = (self.g.at(0, 0) - g0 * self.e_m.at(0, 0) * self.e_tilde.at(0, 0)).abs();
        out.gtilde_minus_jump = (self.g_tilde.at(0, 0) - self.d_dof.at(0, 0) - self.g.at(0, 0)).abs();
        for k in 0..=n {
            for b in 0..t.width(k) {
                if k < n {
                    let mean = 0.5 * (self.m.at(k + 1, 2 * b) + self.m.at(k + 1, 2 * b + 1));
                    out.m_martingale = out.m_martingale.max((mean - self.m.at(k, b)).abs());
                }
                let vf = self.vf.at(k, b);
                let upper_ok = vf < 1.0 || (k == n && self.mode == KernelMode::FiniteTau && vf <= 1.0);
                if !(vf >= 0.0 && upper_ok) {
                    out.vf_in_range = false;
                }
                out.reciprocal =
                    out.reciprocal.max((self.z_tilde.at(k, b) * self.e_m.at(k, b) - 1.0).abs());
                if k == 0 {
                    continue;
                }
                let p = b >> 1;
                let dm = self.m.at(k, b) - self.m.at(k - 1, p);
                out.gtilde_from_m = out
                    .gtilde_from_m
                    .max((self.g_tilde.at(k, b) - self.g.at(k - 1, p) - dm).abs());
                out.gtilde_minus_jump = out
                    .gtilde_minus_jump
                    .max((self.g_tilde.at(k, b) - self.d_dof.at(k, b) - self.g.at(k, b)).abs());
                let prod = g0 * self.e_m.at(k, b) * self.e_tilde.at(k, b);
                out.decomposition = out.decomposition.max((self.g.at(k, b) - prod).abs());
                out.vf_decrease = out.vf_decrease.max(self.vf.at(k - 1, p) - vf);
            }
        }
        out
    }
}

/// `kappa(a) = 3^{1/a} (5 + max(a, 1/a)^{1/a})`.
pub fn kappa(a: f64) -> f64 {
    3f64.powf(1.0 / a) * (5.0 + a.max(1.0 / a).powf(1.0 / a))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference() -> (TreeModel, RandomTimeModel) {
        let t = TreeModel::new(2, 1.0).unwrap();
        let k = DensityKernel::reference(&t).unwrap();
        let m = build_random_time(&t, &k).unwrap();
        (t, m)
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-15
    }

    #[test]
    fn reference_kernel_values() {
        let (_, m) = reference();
        assert_eq!(m.g.at(0, 0), 1.0);
        assert!(m.g.level(1).iter().all(|&v| close(v, 0.625)));
        assert!(m.g_tilde.level(1).iter().all(|&v| close(v, 1.0)));
        assert!(m.d_dof.level(1).iter().all(|&v| close(v, 0.375)));
        assert!(m.e_tilde.level(1).iter().all(|&v| close(v, 0.625)));
        // level 2: path bits 0b_1 means the second step went up
        for b in 0..4 {
            let up = b & 1 == 1;
            assert!(close(m.g.at(2, b), if up { 0.5 } else { 0.25 }));
            assert!(close(m.g_tilde.at(2, b), if up { 0.75 } else { 0.5 }));
            assert!(close(m.m.at(2, b), if up { 1.125 } else { 0.875 }));
            assert!(close(m.z_tilde.at(2, b), if up { 0.625 / 0.75 } else { 1.25 }));
            assert!(close(m.e_tilde.at(2, b), if up { 0.625 * 0.5 / 0.75 } else { 0.3125 }));
            assert!(close(m.e_m.at(2, b), if up { 1.2 } else { 0.8 }));
            assert!(close(m.e_m.at(2, b) * m.e_tilde.at(2, b), m.g.at(2, b)));
        }
    }

    #[test]
    fn doleans_dade_of_normalised_m_on_reference() {
        let (t, m) = reference();
        let inc = AdaptedProcess::from_fn(&t, |n, b| {
            if n == 0 {
                0.0
            } else {
                (m.m.at(n, b) - m.m.at(n - 1, b >> 1)) / m.g.at(n - 1, b >> 1)
            }
        });
        let e = t.doleans_dade(&inc);
        for b in 0..4 {
            let want = if b & 1 == 1 { 1.2 } else { 0.8 };
            assert!(close(e.at(2, b), want));
        }
    }

    #[test]
    fn reference_identities_hold() {
        let (_, m) = reference();
        let id = m.identities();
        assert!(id.max_residual() < 1e-15, "{id:?}");
        assert!(id.vf_in_range);
    }

    #[test]
    fn cox_kernel_collapses_measure_change() {
        let t = TreeModel::new(5, 0.2).unwrap();
        let k = DensityKernel::cox(&t, 0.0, KernelMode::Bounded, |_, _, w| 0.1 + 0.05 * w.tanh()).unwrap();
        let m = build_random_time(&t, &k).unwrap();
        for n in 0..=5 {
            for b in 0..t.width(n) {
                assert!((m.m.at(n, b) - m.g0()).abs() < 1e-14);
                assert!((m.z_tilde.at(n, b) - 1.0).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn time_zero_mass_keeps_decomposition_exact() {
        let t = TreeModel::new(4, 0.25).unwrap();
        let k = DensityKernel::anticipative_mix(&t, 0.2, KernelMode::Bounded, |_, _, w, s| {
            0.15 + 0.1 * s + 0.02 * w
        })
        .unwrap();
        let m = build_random_time(&t, &k).unwrap();
        assert!((m.g0() - 0.8).abs() < 1e-15);
        assert_eq!(m.e_tilde.at(0, 0), 1.0);
        assert!(m.identities().max_residual() < 1e-14);
    }

    #[test]
    fn zero_survival_is_rejected_with_node() {
        let t = TreeModel::new(2, 1.0).unwrap();
        let rows = (0..4)
            .map(|leaf| if leaf >> 1 == 0 { vec![0.0, 1.0, 0.0, 0.0] } else { vec![0.0, 0.0, 0.5, 0.5] })
            .collect();
        let k = DensityKernel::explicit(&t, rows, KernelMode::Bounded).unwrap();
        match build_random_time(&t, &k) {
            Err(Error::Positivity { what: "G", level: 1, path_bits: 0, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn finite_tau_mode() {
        let t = TreeModel::new(2, 1.0).unwrap();
        let k = DensityKernel::reference_finite(&t).unwrap();
        let m = build_random_time(&t, &k).unwrap();
        assert!(m.g.level(2).iter().all(|&v| v == 0.0));
        assert!(m.e_tilde.level(2).iter().all(|&v| v == 0.0));
        assert!(m.vf.level(2).iter().all(|&v| v == 1.0));
        assert!(m.identities().max_residual() < 1e-15);
    }

    #[test]
    fn kernel_rows_must_sum_to_one() {
        let t = TreeModel::new(1, 1.0).unwrap();
        let bad = DensityKernel::explicit(&t, vec![vec![0.0, 0.5, 0.4]; 2], KernelMode::Bounded);
        assert!(matches!(bad, Err(Error::Config(_))));
        let inf = DensityKernel::explicit(&t, vec![vec![0.0, 0.5, 0.5]; 2], KernelMode::FiniteTau);
        assert!(matches!(inf, Err(Error::Config(_))));
    }

    #[test]
    fn kappa_values() {
        assert_eq!(kappa(1.0), 18.0);
        assert!((kappa(0.5) - 9.0 * (5.0 + 4.0)).abs() < 1e-12);
    }

    #[test]
    fn dv_tilde_matches_direct_formula() {
        let t = TreeModel::new(3, 1.0).unwrap();
        let k = DensityKernel::anticipative_mix(&t, 0.0, KernelMode::Bounded, |_, _, _, s| 0.3 + 0.1 * s).unwrap();
        let m = build_random_time(&t, &k).unwrap();
        for a in [0.5, 1.0, 2.0] {
            for n in 1..=3 {
                for b in 0..t.width(n) {
                    let lam = m.hazard.at(n, b);
                    let direct = 1.0 - (1.0 - lam).powf(a);
                    assert!((m.dv_tilde(a, n, b) - direct).abs() < 1e-15);
                }
            }
        }
    }
}
