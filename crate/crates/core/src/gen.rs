//! Seeded generators of kernels, data and test processes.
//!
//! Every generator draws from a caller-supplied [`ChaCha8Rng`], so a seed
//! fixes the whole experiment.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::enlarged::{EnlargedSpace, StateProcess};
use crate::error::Result;
use crate::random_time::{DensityKernel, KernelMode};
use crate::rbsde_f::{Barrier, DataTriplet};
use crate::tree::{AdaptedProcess, PredictableProcess, TreeModel};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelFamily {
    /// Hazard driven by `(n, W_n)`.
    Cox,
    /// Hazard also reading the sign of the next increment.
    Anticipative,
    /// Independent Dirichlet row per leaf.
    Explicit,
}

/// Random kernel of the given family. Hazards stay inside `[0.02, 0.9]`, so
/// `G` stays positive.
pub fn random_kernel(tree: &TreeModel, rng: &mut ChaCha8Rng, family: KernelFamily, mode: KernelMode) -> Result<DensityKernel> {
    let alpha0 = if rng.random_bool(0.3) { rng.random_range(0.0..0.2) } else { 0.0 };
    let base: f64 = rng.random_range(0.05..0.3);
    let amp: f64 = rng.random_range(0.0..0.2);
    let tilt: f64 = rng.random_range(-1.5..1.5);
    let drift: f64 = rng.random_range(-0.3..0.3);
    let clamp = |x: f64| x.clamp(0.02, 0.9);
    match family {
        KernelFamily::Cox => DensityKernel::cox(tree, alpha0, mode, |n, t, w| {
            clamp(base + amp * (tilt * w + drift * n as f64).tanh() + 0.05 * t.sin())
        }),
        KernelFamily::Anticipative => {
            let peek: f64 = rng.random_range(0.05..0.25);
            DensityKernel::anticipative_mix(tree, alpha0, mode, |n, _, w, s| {
                clamp(base + peek * s + amp * (tilt * w + drift * n as f64).tanh())
            })
        }
        KernelFamily::Explicit => {
            let n = tree.depth();
            let shape = Gamma::new(rng.random_range(0.5..2.0), 1.0).expect("valid gamma");
            let rows = (0..tree.leaves())
                .map(|_| {
                    let mut row: Vec<f64> = (0..n + 2).map(|_| shape.sample(rng) + 1e-3).collect();
                    row[0] = if alpha0 > 0.0 { row[0] * 0.2 } else { 0.0 };
                    if mode == KernelMode::FiniteTau {
                        row[n + 1] = 0.0;
                    }
                    let total: f64 = row.iter().sum();
                    row.iter_mut().for_each(|v| *v /= total);
                    let drift = 1.0 - row.iter().sum::<f64>();
                    row[1] += drift;
                    row
                })
                .collect();
            DensityKernel::explicit(tree, rows, mode)
        }
    }
}

/// Independent standard normal value on every node, times `scale`.
pub fn random_adapted(tree: &TreeModel, rng: &mut ChaCha8Rng, scale: f64) -> AdaptedProcess {
    AdaptedProcess::from_fn(tree, |_, _| scale * normal(rng))
}

/// Nondecreasing adapted process with `X_0 = 0` and `|N(0,1)|` increments.
pub fn random_nondecreasing(tree: &TreeModel, rng: &mut ChaCha8Rng) -> AdaptedProcess {
    let mut x = AdaptedProcess::zeros(tree);
    for n in 1..=tree.depth() {
        for b in 0..tree.width(n) {
            let v = x.at(n - 1, b >> 1) + normal(rng).abs();
            x.set(n, b, v);
        }
    }
    x
}

/// Martingale closed by independent normal leaf values.
pub fn random_martingale(tree: &TreeModel, rng: &mut ChaCha8Rng) -> AdaptedProcess {
    let n = tree.depth();
    let leaves: Vec<f64> = (0..tree.leaves()).map(|_| normal(rng)).collect();
    let levels = (0..=n)
        .map(|k| tree.cond_expectation(&leaves, n, k).expect("valid levels"))
        .collect();
    AdaptedProcess::from_levels(levels).expect("full tree")
}

/// Predictable process with `|H_{n+1}| <= |X_n|`.
pub fn random_dominated(tree: &TreeModel, rng: &mut ChaCha8Rng, x: &AdaptedProcess) -> PredictableProcess {
    PredictableProcess::from_fn(tree, |n, b| x.at(n, b) * rng.random_range(-1.0..=1.0))
}

/// `G`-adapted state process: one independent draw per `G_n`-atom, passed
/// through `f` together with the previous value on the same state.
fn random_g_adapted(
    space: &EnlargedSpace,
    rng: &mut ChaCha8Rng,
    mut f: impl FnMut(f64, f64) -> f64,
) -> StateProcess {
    let depth = space.depth();
    let mut out = StateProcess::zeros(space);
    let mut draws = vec![0.0; depth + 2];
    for n in 0..=depth {
        for b in 0..space.tree().width(n) {
            draws.iter_mut().take(n + 2).for_each(|d| *d = normal(rng));
            for i in space.prefix_range(n, b) {
                let class = space.states()[i].death.min(n + 1);
                let prev = if n == 0 { 0.0 } else { out.at(i, n - 1) };
                out.set(i, n, f(prev, draws[class]));
            }
        }
    }
    out
}

/// Arbitrary `G`-adapted process.
pub fn random_g_process(space: &EnlargedSpace, rng: &mut ChaCha8Rng) -> StateProcess {
    random_g_adapted(space, rng, |_, d| d)
}

/// Nondecreasing `G`-adapted process with `K_0 = 0`; roughly half the
/// increments vanish so jumps are sparse.
pub fn random_g_nondecreasing(space: &EnlargedSpace, rng: &mut ChaCha8Rng) -> StateProcess {
    let mut k = random_g_adapted(space, rng, |prev, d| prev + d.max(0.0));
    for i in 0..space.len() {
        let k0 = k.at(i, 0);
        k.path_mut(i).iter_mut().for_each(|v| *v -= k0);
    }
    k
}

/// Nonnegative `G`-optional process.
pub fn random_g_nonnegative(space: &EnlargedSpace, rng: &mut ChaCha8Rng) -> StateProcess {
    random_g_adapted(space, rng, |_, d| d * d)
}

/// Random data triplet built from smooth functions of `(t, W)`; with a
/// barrier, `S = h` (American claim) or `S = h - c` for a random `c >= 0`.
pub fn random_triplet(tree: &TreeModel, rng: &mut ChaCha8Rng, with_barrier: bool) -> DataTriplet {
    let strike: f64 = rng.random_range(-0.5..0.5);
    let slope: f64 = rng.random_range(-1.0..1.0);
    let put = rng.random_bool(0.5);
    let rate: f64 = rng.random_range(-0.5..0.5);
    let wiggle: f64 = rng.random_range(0.0..0.5);
    let h = AdaptedProcess::from_fn(tree, |n, b| {
        let w = tree.w(n, b);
        let intrinsic = if put { (strike - w).max(0.0) } else { (w - strike).max(0.0) };
        intrinsic + 0.1 * slope * tree.time(n) + 0.2
    });
    let f = AdaptedProcess::from_fn(tree, |n, b| rate + wiggle * tree.w(n, b).sin());
    let barrier = if with_barrier {
        let gap = if rng.random_bool(0.5) { 0.0 } else { rng.random_range(0.0..0.3) };
        Barrier::Lower(h.map(|v| v - gap))
    } else {
        Barrier::None
    };
    DataTriplet { f, barrier, h }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}
