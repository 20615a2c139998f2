//! Brute-force oracles shared by the integration tests.
//!
//! Nothing here calls the backward inductions of the library: values come
//! from explicit enumeration of stopping times or from direct conditional
//! sums over the enlarged space.

#![allow(dead_code)]

use rbsde_horizon::gen::{random_kernel, random_triplet, rng, KernelFamily};
use rbsde_horizon::{
    build_enlarged_space, build_random_time, DataTriplet, DensityKernel, EnlargedSpace, KernelMode, StateProcess, TransformedDataF,
    TreeModel,
};

/// Every `F`-stopping time with values in `n..=T` on the subtree below a node
/// of level `n`, as the stopping level of each level-`T` descendant.
pub fn f_times(n: usize, horizon: usize) -> Vec<Vec<usize>> {
    let len = 1usize << (horizon - n);
    let mut out = vec![vec![n; len]];
    if n < horizon {
        let sub = f_times(n + 1, horizon);
        for a in &sub {
            for b in &sub {
                out.push(a.iter().chain(b).copied().collect());
            }
        }
    }
    out
}

/// `sup_theta E[sum_{k<theta} fF dt + sum_{k<=theta} h dV^F + SF_theta 1{theta<T} + xiF 1{theta=T}]`
/// over every `F`-stopping time, and the number of stopping times tried.
pub fn f_enumeration(tf: &TransformedDataF, tree: &TreeModel) -> (f64, usize) {
    let t = tf.horizon;
    let dt = tree.dt();
    let mut best = f64::NEG_INFINITY;
    let mut count = 0;
    for theta in f_times(0, t) {
        if tf.s_f.is_none() && theta.iter().any(|&th| th < t) {
            continue;
        }
        count += 1;
        let mut total = 0.0;
        for (b, &th) in theta.iter().enumerate() {
            let node = |k: usize| b >> (t - k);
            let mut v: f64 = (0..th).map(|k| tf.f_f.at(k, node(k)) * dt).sum();
            v += (1..=th).map(|k| tf.h.at(k, node(k)) * tf.dvf.at(k, node(k))).sum::<f64>();
            v += if th < t { tf.s_f.as_ref().unwrap().at(th, node(th)) } else { tf.xi_f[b] };
            total += v;
        }
        best = best.max(total / (1usize << t) as f64);
    }
    (best, count)
}

/// Every `G`-stopping time `theta <= T ∧ tau` restricted to the states alive
/// at `(n, bits)`, as `(state, theta)` pairs.
fn g_times(space: &EnlargedSpace, n: usize, bits: usize, horizon: usize) -> Vec<Vec<(usize, usize)>> {
    let states = space.states();
    let alive: Vec<usize> = space.prefix_range(n, bits).filter(|&i| states[i].death > n).collect();
    if alive.is_empty() {
        return vec![Vec::new()];
    }
    let mut out = vec![alive.iter().map(|&i| (i, n)).collect::<Vec<_>>()];
    if n == horizon {
        return out;
    }
    let dying: Vec<(usize, usize)> = alive.iter().filter(|&&i| states[i].death == n + 1).map(|&i| (i, n + 1)).collect();
    let down = g_times(space, n + 1, 2 * bits, horizon);
    let up = g_times(space, n + 1, 2 * bits + 1, horizon);
    for a in &down {
        for b in &up {
            out.push(dying.iter().chain(a).chain(b).copied().collect());
        }
    }
    out
}

/// `sup_theta E^{Q~_T}[sum_{k<theta} f dt + S_theta 1{theta < T∧tau} + xi 1{theta = T∧tau} | tau > 0]`
/// over every `G`-stopping time, and the number of stopping times tried.
pub fn g_enumeration(triplet: &DataTriplet, space: &EnlargedSpace, horizon: usize) -> (f64, usize) {
    let dt = space.tree().dt();
    let q = space.qtilde_weights(horizon);
    let states = space.states();
    let mass: f64 = (0..space.len()).filter(|&i| states[i].death > 0).map(|i| q[i]).sum();
    let mut best = f64::NEG_INFINITY;
    let mut count = 0;
    for theta in g_times(space, 0, 0, horizon) {
        if triplet.barrier.process().is_none() && theta.iter().any(|&(i, th)| th < states[i].stop(horizon)) {
            continue;
        }
        count += 1;
        let mut total = 0.0;
        for &(i, th) in &theta {
            let s = states[i];
            let stop = s.stop(horizon);
            let mut v: f64 = (0..th).map(|k| space.on_path(&triplet.f, s, k) * dt).sum();
            v += if th < stop {
                space.on_path(triplet.barrier.process().unwrap(), s, th)
            } else {
                space.on_path(&triplet.h, s, stop)
            };
            total += q[i] * v;
        }
        best = best.max(total / mass);
    }
    (best, count)
}

/// `Y_n = E^{Q~_T}[sum_{n<=k<T∧tau} f_k dt + h_{T∧tau} | G_n]` on every state.
pub fn bsde_conditional_oracle(triplet: &DataTriplet, space: &EnlargedSpace, horizon: usize) -> StateProcess {
    let dt = space.tree().dt();
    let q = space.qtilde_weights(horizon);
    let states = space.states();
    let mut y = StateProcess::zeros(space);
    for n in 0..=space.depth() {
        let vals: Vec<f64> = states
            .iter()
            .map(|&s| {
                let stop = s.stop(horizon);
                (n.min(stop)..stop).map(|k| space.on_path(&triplet.f, s, k) * dt).sum::<f64>()
                    + space.on_path(&triplet.h, s, stop)
            })
            .collect();
        let cond = space.g_conditional(n.min(horizon), &vals, &q);
        for i in 0..space.len() {
            y.set(i, n, cond[i]);
        }
    }
    y
}

/// A seeded random scenario: tree, kernel, model, space and data.
pub struct Scenario {
    pub tree: TreeModel,
    pub kernel: DensityKernel,
    pub space: EnlargedSpace,
    pub triplet: DataTriplet,
    pub family: KernelFamily,
}

pub fn scenario(seed: u64, depth: usize, mode: KernelMode, barrier: bool) -> Scenario {
    let mut r = rng(seed);
    let tree = TreeModel::new(depth, 1.0 / depth as f64).unwrap();
    let family = [KernelFamily::Cox, KernelFamily::Anticipative, KernelFamily::Explicit][(seed % 3) as usize];
    let kernel = random_kernel(&tree, &mut r, family, mode).unwrap();
    let model = build_random_time(&tree, &kernel).unwrap();
    let space = build_enlarged_space(&tree, &model, &kernel).unwrap();
    let triplet = random_triplet(&tree, &mut r, barrier);
    Scenario { tree, kernel, space, triplet, family }
}
