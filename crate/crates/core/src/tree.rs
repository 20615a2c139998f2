//! Non-recombining binary lattice carrying a discrete Brownian motion and its
//! natural filtration.
//!
//! Nodes are addressed by `(level, path_bits)`: `path_bits` holds the first
//! `level` branch decisions, most significant bit first, with bit `1` meaning
//! an up move. The children of `(n, b)` are `(n + 1, 2b)` (down) and
//! `(n + 1, 2b + 1)` (up). Each branch carries probability 1/2 and moves the
//! Brownian path by `±sqrt(dt)`.

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Maximum supported depth (full enumeration stays below ~4M leaves).
pub const MAX_DEPTH: usize = 22;

/// Output sizes above this are reduced on the rayon pool.
const PAR_THRESHOLD: usize = 1 << 12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeModel {
    depth: usize,
    dt: f64,
    sqrt_dt: f64,
}

impl TreeModel {
    pub fn new(depth: usize, dt: f64) -> Result<Self> {
        if depth == 0 || depth > MAX_DEPTH {
            return Err(Error::Config(format!(
                "tree depth must lie in 1..={MAX_DEPTH}, got {depth}"
            )));
        }
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::Config(format!("dt must be positive and finite, got {dt}")));
        }
        Ok(Self { depth, dt, sqrt_dt: dt.sqrt() })
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn sqrt_dt(&self) -> f64 {
        self.sqrt_dt
    }

    /// Number of nodes at `level`.
    pub fn width(&self, level: usize) -> usize {
        1usize << level
    }

    pub fn leaves(&self) -> usize {
        1usize << self.depth
    }

    /// P-mass of a single leaf, `2^-N`, exact in binary floating point.
    pub fn leaf_weight(&self) -> f64 {
        (-(self.depth as f64)).exp2()
    }

    pub fn time(&self, level: usize) -> f64 {
        level as f64 * self.dt
    }

    /// Brownian value at node `(level, bits)`.
    pub fn w(&self, level: usize, bits: usize) -> f64 {
        let ups = bits.count_ones() as i64;
        (2 * ups - level as i64) as f64 * self.sqrt_dt
    }

    /// Increment of W on the step into node `(level, bits)`, `level >= 1`.
    pub fn dw(&self, bits: usize) -> f64 {
        if bits & 1 == 1 {
            self.sqrt_dt
        } else {
            -self.sqrt_dt
        }
    }

    /// Prefix of length `level` of a node at a deeper level.
    pub fn ancestor(&self, from_level: usize, bits: usize, level: usize) -> usize {
        debug_assert!(level <= from_level);
        bits >> (from_level - level)
    }

    /// The Brownian motion as an adapted process.
    pub fn brownian(&self) -> AdaptedProcess {
        AdaptedProcess::from_fn(self, |n, b| self.w(n, b))
    }

    /// Conditional expectation of a level-`m` random variable onto `F_n`.
    ///
    /// Each output value is the binary-tree average of the `2^(m-n)`
    /// descendants, folded one level at a time in a fixed order, so the
    /// result does not depend on the thread schedule and the tower property
    /// holds bit for bit.
    pub fn cond_expectation(&self, values: &[f64], m: usize, n: usize) -> Result<Vec<f64>> {
        if n > m {
            return Err(Error::Argument(format!(
                "conditional expectation onto level {n} of a level-{m} variable"
            )));
        }
        if m > self.depth || values.len() != self.width(m) {
            return Err(Error::Argument(format!(
                "expected {} values at level {m}, got {}",
                self.width(m.min(self.depth)),
                values.len()
            )));
        }
        let k = m - n;
        let block = 1usize << k;
        let mut out = vec![0.0; self.width(n)];
        let fold = |(b, slot): (usize, &mut f64)| {
            *slot = block_average(&values[b * block..(b + 1) * block]);
        };
        if out.len() >= PAR_THRESHOLD {
            out.par_iter_mut().enumerate().for_each(fold);
        } else {
            out.iter_mut().enumerate().for_each(fold);
        }
        Ok(out)
    }

    /// Average of the two children of every node at `level`.
    pub fn one_step_mean(&self, next: &[f64], level: usize) -> Vec<f64> {
        debug_assert_eq!(next.len(), self.width(level + 1));
        (0..self.width(level))
            .map(|b| 0.5 * (next[2 * b] + next[2 * b + 1]))
            .collect()
    }

    /// Integrand of the martingale representation `M_{n+1} = M_n + Z_n dW_{n+1}`.
    ///
    /// Fails if `M` is not a martingale to within `1e-12` of its sup norm.
    pub fn martingale_representation(&self, m: &AdaptedProcess) -> Result<PredictableProcess> {
        self.check_same_depth(m.depth())?;
        let scale = m.max_abs().max(1e-300);
        let tol = 1e-12 * scale;
        let mut z = PredictableProcess::zeros(self);
        for n in 0..self.depth {
            let next = m.level(n + 1);
            for (b, &cur) in m.level(n).iter().enumerate() {
                let down = next[2 * b];
                let up = next[2 * b + 1];
                let gap = 0.5 * (up + down) - cur;
                if gap.abs() > tol {
                    return Err(Error::Contract(format!(
                        "process is not a martingale at level {n}, path bits {b:#b}: \
                         E[M_(n+1) | F_n] - M_n = {gap:e}"
                    )));
                }
                z.set(n, b, (up - down) / (2.0 * self.sqrt_dt));
            }
        }
        Ok(z)
    }

    /// Doléans-Dade exponential `E(X)_n = prod_{k<=n} (1 + dX_k)` from the
    /// increments of `X` (the level-0 entry of `increments` is ignored).
    pub fn doleans_dade(&self, increments: &AdaptedProcess) -> AdaptedProcess {
        let mut out = AdaptedProcess::constant(self, 1.0);
        for n in 1..=self.depth {
            for b in 0..self.width(n) {
                let prev = out.at(n - 1, b >> 1);
                out.set(n, b, prev * (1.0 + increments.at(n, b)));
            }
        }
        out
    }

    /// Left-point stochastic integral `(H . X)_n = sum_{k<n} H_k (X_{k+1} - X_k)`.
    pub fn integral(&self, h: &PredictableProcess, x: &AdaptedProcess) -> AdaptedProcess {
        let mut out = AdaptedProcess::zeros(self);
        for n in 1..=self.depth {
            for b in 0..self.width(n) {
                let parent = b >> 1;
                let inc = x.at(n, b) - x.at(n - 1, parent);
                let v = out.at(n - 1, parent) + h.at(n - 1, parent) * inc;
                out.set(n, b, v);
            }
        }
        out
    }

    /// Quadratic covariation `[X, Y]_n = sum_{k<=n} dX_k dY_k`.
    pub fn bracket(&self, x: &AdaptedProcess, y: &AdaptedProcess) -> AdaptedProcess {
        let mut out = AdaptedProcess::zeros(self);
        for n in 1..=self.depth {
            for b in 0..self.width(n) {
                let p = b >> 1;
                let dx = x.at(n, b) - x.at(n - 1, p);
                let dy = y.at(n, b) - y.at(n - 1, p);
                out.set(n, b, out.at(n - 1, p) + dx * dy);
            }
        }
        out
    }

    /// Expectation under P of a leaf-level random variable.
    pub fn expectation(&self, leaf_values: &[f64]) -> f64 {
        debug_assert_eq!(leaf_values.len(), self.leaves());
        block_average(leaf_values)
    }

    fn check_same_depth(&self, depth: usize) -> Result<()> {
        if depth != self.depth {
            return Err(Error::Argument(format!(
                "process of depth {depth} used on a tree of depth {}",
                self.depth
            )));
        }
        Ok(())
    }
}

/// Pairwise (binary-tree) average of a power-of-two block.
pub(crate) fn block_average(values: &[f64]) -> f64 {
    debug_assert!(values.len().is_power_of_two());
    match values.len() {
        1 => values[0],
        2 => 0.5 * (values[0] + values[1]),
        len => {
            let mut buf: Vec<f64> = values.chunks_exact(2).map(|c| 0.5 * (c[0] + c[1])).collect();
            let mut width = len / 2;
            while width > 1 {
                for i in 0..width / 2 {
                    buf[i] = 0.5 * (buf[2 * i] + buf[2 * i + 1]);
                }
                width /= 2;
            }
            buf[0]
        }
    }
}

/// One real per node per level `0..=N`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptedProcess {
    levels: Vec<Vec<f64>>,
}

impl AdaptedProcess {
    pub fn zeros(tree: &TreeModel) -> Self {
        Self::constant(tree, 0.0)
    }

    pub fn constant(tree: &TreeModel, c: f64) -> Self {
        Self {
            levels: (0..=tree.depth()).map(|n| vec![c; tree.width(n)]).collect(),
        }
    }

    pub fn from_fn(tree: &TreeModel, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        Self {
            levels: (0..=tree.depth())
                .map(|n| (0..tree.width(n)).map(|b| f(n, b)).collect())
                .collect(),
        }
    }

    /// Builds from explicit per-level tables; level `n` must hold `2^n` values.
    pub fn from_levels(levels: Vec<Vec<f64>>) -> Result<Self> {
        for (n, lvl) in levels.iter().enumerate() {
            if lvl.len() != 1usize << n {
                return Err(Error::Argument(format!(
                    "level {n} must hold {} values, got {}",
                    1usize << n,
                    lvl.len()
                )));
            }
        }
        if levels.is_empty() {
            return Err(Error::Argument("adapted process needs at least one level".into()));
        }
        Ok(Self { levels })
    }

    pub fn depth(&self) -> usize {
        self.levels.len() - 1
    }

    #[inline]
    pub fn at(&self, level: usize, bits: usize) -> f64 {
        self.levels[level][bits]
    }

    #[inline]
    pub fn set(&mut self, level: usize, bits: usize, v: f64) {
        self.levels[level][bits] = v;
    }

    pub fn level(&self, level: usize) -> &[f64] {
        &self.levels[level]
    }

    pub fn level_mut(&mut self, level: usize) -> &mut [f64] {
        &mut self.levels[level]
    }

    pub fn levels(&self) -> &[Vec<f64>] {
        &self.levels
    }

    /// Value along the path of a leaf at `level`.
    pub fn on_path(&self, leaf_bits: usize, level: usize) -> f64 {
        self.levels[level][leaf_bits >> (self.depth() - level)]
    }

    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Self {
        Self {
            levels: self.levels.iter().map(|l| l.iter().map(|&v| f(v)).collect()).collect(),
        }
    }

    pub fn zip_with(&self, other: &Self, mut f: impl FnMut(f64, f64) -> f64) -> Self {
        assert_eq!(self.depth(), other.depth(), "depth mismatch");
        Self {
            levels: self
                .levels
                .iter()
                .zip(&other.levels)
                .map(|(a, b)| a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect())
                .collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.levels.iter().flatten().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.levels.iter().flatten().all(|v| v.is_finite())
    }
}

/// One real per node at level `n` for every step `n + 1`, `n in 0..N`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictableProcess {
    steps: Vec<Vec<f64>>,
}

impl PredictableProcess {
    pub fn zeros(tree: &TreeModel) -> Self {
        Self {
            steps: (0..tree.depth()).map(|n| vec![0.0; tree.width(n)]).collect(),
        }
    }

    pub fn from_fn(tree: &TreeModel, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        Self {
            steps: (0..tree.depth())
                .map(|n| (0..tree.width(n)).map(|b| f(n, b)).collect())
                .collect(),
        }
    }

    /// Number of steps `N`.
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Value used over step `level + 1`, known at node `(level, bits)`.
    #[inline]
    pub fn at(&self, level: usize, bits: usize) -> f64 {
        self.steps[level][bits]
    }

    #[inline]
    pub fn set(&mut self, level: usize, bits: usize, v: f64) {
        self.steps[level][bits] = v;
    }

    pub fn step(&self, level: usize) -> &[f64] {
        &self.steps[level]
    }

    pub fn max_abs(&self) -> f64 {
        self.steps.iter().flatten().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Running sum `C_n = sum_{k<n} x_k`, stored at level `n`.
    pub fn cumulative(&self) -> AdaptedProcess {
        let depth = self.steps.len();
        let mut levels = vec![vec![0.0]];
        for n in 1..=depth {
            let prev = &levels[n - 1];
            let lvl: Vec<f64> = (0..1usize << n)
                .map(|b| prev[b >> 1] + self.steps[n - 1][b >> 1])
                .collect();
            levels.push(lvl);
        }
        AdaptedProcess { levels }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smallest_tree() {
        let t = TreeModel::new(1, 1.0).unwrap();
        assert_eq!(t.width(0), 1);
        assert_eq!(t.leaves(), 2);
        assert_eq!(t.leaf_weight(), 0.5);
        assert_eq!(t.w(1, 0), -1.0);
        assert_eq!(t.w(1, 1), 1.0);
    }

    #[test]
    fn depth_two_brownian_values() {
        let t = TreeModel::new(2, 1.0).unwrap();
        let w2: Vec<f64> = (0..4).map(|b| t.w(2, b)).collect();
        assert_eq!(w2, vec![-2.0, 0.0, 0.0, 2.0]);
        assert_eq!(t.leaf_weight(), 0.25);
    }

    #[test]
    fn depth_out_of_range() {
        assert!(matches!(TreeModel::new(23, 1.0), Err(Error::Config(_))));
        assert!(matches!(TreeModel::new(0, 1.0), Err(Error::Config(_))));
        assert!(matches!(TreeModel::new(3, 0.0), Err(Error::Config(_))));
        assert!(matches!(TreeModel::new(3, -1.0), Err(Error::Config(_))));
    }

    #[test]
    fn leaf_mass_is_exact() {
        for depth in 1..=MAX_DEPTH {
            let t = TreeModel::new(depth, 0.5).unwrap();
            assert_eq!(t.leaf_weight() * t.leaves() as f64, 1.0);
        }
    }

    #[test]
    fn cond_expectation_examples() {
        let t = TreeModel::new(2, 1.0).unwrap();
        let c = vec![3.5; 4];
        assert_eq!(t.cond_expectation(&c, 2, 0).unwrap(), vec![3.5]);
        let w2 = t.brownian().level(2).to_vec();
        assert_eq!(t.cond_expectation(&w2, 2, 1).unwrap(), vec![-1.0, 1.0]);
        let sq: Vec<f64> = w2.iter().map(|w| w * w).collect();
        assert_eq!(t.cond_expectation(&sq, 2, 0).unwrap(), vec![2.0]);
        assert!(matches!(t.cond_expectation(&w2, 1, 2), Err(Error::Argument(_))));
    }

    #[test]
    fn representation_of_w_and_constants() {
        let t = TreeModel::new(4, 0.25).unwrap();
        let z = t.martingale_representation(&t.brownian()).unwrap();
        assert!(z.steps.iter().flatten().all(|&v| (v - 1.0).abs() < 1e-15));
        let z0 = t.martingale_representation(&AdaptedProcess::constant(&t, 7.0)).unwrap();
        assert_eq!(z0.max_abs(), 0.0);
    }

    #[test]
    fn representation_of_w_squared_compensated() {
        let t = TreeModel::new(2, 1.0).unwrap();
        let m = AdaptedProcess::from_fn(&t, |n, b| t.w(n, b).powi(2) - n as f64);
        let z = t.martingale_representation(&m).unwrap();
        for n in 0..2 {
            for b in 0..t.width(n) {
                assert_eq!(z.at(n, b), 2.0 * t.w(n, b));
                for c in [2 * b, 2 * b + 1] {
                    assert_eq!(m.at(n + 1, c) - m.at(n, b), z.at(n, b) * t.dw(c));
                }
            }
        }
    }

    #[test]
    fn representation_rejects_non_martingale() {
        let t = TreeModel::new(2, 1.0).unwrap();
        let m = AdaptedProcess::from_fn(&t, |n, b| t.w(n, b).powi(2));
        assert!(matches!(t.martingale_representation(&m), Err(Error::Contract(_))));
    }

    #[test]
    fn doleans_dade_examples() {
        let t = TreeModel::new(3, 1.0).unwrap();
        let e = t.doleans_dade(&AdaptedProcess::zeros(&t));
        assert_eq!(e.max_abs(), 1.0);
        let t1 = TreeModel::new(1, 1.0).unwrap();
        let inc = AdaptedProcess::from_fn(&t1, |n, _| if n == 1 { -0.375 } else { 0.0 });
        assert_eq!(t1.doleans_dade(&inc).level(1), &[0.625, 0.625]);
    }

    #[test]
    fn brownian_bracket_is_time() {
        let t = TreeModel::new(6, 0.1).unwrap();
        let w = t.brownian();
        let qv = t.bracket(&w, &w);
        for n in 0..=6 {
            for &v in qv.level(n) {
                assert!((v - n as f64 * 0.1).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn cumulative_of_predictable() {
        let t = TreeModel::new(2, 1.0).unwrap();
        let p = PredictableProcess::from_fn(&t, |n, b| (n + b + 1) as f64);
        let c = p.cumulative();
        assert_eq!(c.level(0), &[0.0]);
        assert_eq!(c.level(1), &[1.0, 1.0]);
        assert_eq!(c.level(2), &[3.0, 3.0, 4.0, 4.0]);
    }
}
