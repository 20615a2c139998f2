//! Experiment driver and output writers.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use rbsde_horizon::estimates::{
    compensator_mass_bound, discounted_increasing_bound, discounting_bracket_bound_f, discounting_bracket_bound_g,
    discounting_increasing_bound, discounting_sup_bound, hazard_power_increments, hazard_sum_bound,
    martingale_product_ratio, scaling_deviation, verify_apriori_bounded, verify_discounted, verify_stability,
    Inequality, NormReport,
};
use rbsde_horizon::gen::{random_adapted, random_dominated, random_martingale, rng};
use rbsde_horizon::rbsde_g::max_state_gap;
use rbsde_horizon::horizon::{equivalent_rbsde_check, qtilde_limit_check, solve_infinite, TruncationSchedule};
use rbsde_horizon::{
    residual_check, solve_g, solve_g_infinite, solve_g_snell_oracle, AdaptedProcess, EnlargedSpace,
    SolutionF, SolutionG,
};

use crate::config::{build, load, Experiment, Scenario};
use crate::error::CliError;

pub const IDENTITY_TOL: f64 = 1e-12;
pub const APPENDIX_A_CEILING: f64 = 100.0;
const SCALING_LAMBDAS: [f64; 3] = [0.1, 1.0, 10.0];

#[derive(Debug, Clone, Default)]
pub struct Options {
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
    pub p_grid: Option<Vec<f64>>,
    /// Identity and estimate experiments only, no files.
    pub verify_only: bool,
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub report: String,
    pub failures: Vec<String>,
    pub files: Vec<PathBuf>,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        if self.failures.is_empty() {
            0
        } else {
            1
        }
    }
}

/// Collected output of one run.
#[derive(Default)]
struct Sink {
    lines: Vec<String>,
    failures: Vec<String>,
    norms: Vec<String>,
    profiles: Vec<String>,
}

impl Sink {
    fn check(&mut self, exp: Experiment, name: &str, passed: bool, detail: String) {
        let tag = if passed { "PASS" } else { "FAIL" };
        self.lines.push(format!("[{tag}] {}: {name}  {detail}", exp.name()));
        if !passed {
            self.failures.push(format!("{}: {name}", exp.name()));
        }
    }

    fn residual(&mut self, exp: Experiment, name: &str, residual: f64, tol: f64) {
        // + 0.0 prints -0 as 0
        self.check(exp, name, residual <= tol, format!("residual={:.3e} tol={tol:.1e}", residual + 0.0));
    }

    fn inequality(&mut self, exp: Experiment, name: &str, q: Inequality) {
        self.check(exp, name, q.holds(), format!("lhs={:.6e} rhs={:.6e}", q.lhs, q.rhs));
    }

    fn report(&mut self, exp: Experiment, text: String) {
        self.lines.push(format!("[REPORT] {}: {text}", exp.name()));
    }

    fn norm_row(&mut self, label: &str, r: &NormReport) {
        self.norms.push(format!(
            "{label},{:?},{},{},{},{:?},{:?},{:?},{:?},{:?},{:?}",
            r.p,
            r.measure.label(),
            r.discounted,
            r.horizon,
            r.y,
            r.z,
            r.m,
            r.k,
            r.data,
            r.ratio
        ));
    }

    fn profile_row(&mut self, kind: &str, p: Option<f64>, t: usize, value: f64, target: f64) {
        let p = p.map_or(String::new(), |p| format!("{p:?}"));
        self.profiles.push(format!("{kind},{p},{t},{value:?},{target:?}"));
    }
}

fn threads(opt: Option<usize>) -> Result<Option<usize>, CliError> {
    let k = match opt {
        Some(k) => Some(k),
        None => match std::env::var("RBSDE_THREADS") {
            Ok(v) if !v.trim().is_empty() => Some(
                v.trim()
                    .parse::<usize>()
                    .map_err(|_| CliError::Invariant(format!("RBSDE_THREADS = {v:?} is not a thread count")))?,
            ),
            _ => None,
        },
    };
    if k == Some(0) {
        return Err(CliError::Invariant("thread count must be at least 1".into()));
    }
    Ok(k)
}

/// Loads `config`, runs its experiments and, unless verifying, writes the
/// five output files.
pub fn execute(config: &Path, opts: &Options) -> Result<Outcome, CliError> {
    let (parsed, src) = load(config)?;
    let scenario = build(config, &src, parsed, opts.p_grid.clone())?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(k) = threads(opts.threads)? {
        builder = builder.num_threads(k);
    }
    let pool = builder.build().map_err(|e| CliError::Invariant(format!("thread pool: {e}")))?;
    let (sink, sol_f, sol_g) = pool.install(|| run_experiments(&scenario, opts.verify_only))?;

    let mut report = String::new();
    let cfg = &scenario.config;
    let _ = writeln!(report, "rbsde-horizon report");
    let _ = writeln!(
        report,
        "tree: depth {} dt {:?}; states {}; G_0 = {:?}; horizon {}",
        cfg.tree.depth,
        cfg.tree.dt,
        scenario.space.len(),
        scenario.model.g0(),
        if scenario.infinite { "infinite (T = N, tau <= N)".to_string() } else { format!("T = {}", scenario.horizon) }
    );
    for line in &sink.lines {
        report.push_str(line);
        report.push('\n');
    }
    let _ = writeln!(
        report,
        "summary: {} failure(s){}",
        sink.failures.len(),
        sink.failures.iter().map(|f| format!("; {f}")).collect::<String>()
    );

    let mut files = Vec::new();
    if !opts.verify_only {
        let dir = opts.out.clone().or_else(|| cfg.output_dir.clone()).unwrap_or_else(|| PathBuf::from("."));
        std::fs::create_dir_all(&dir).map_err(|source| CliError::Write { path: dir.display().to_string(), source })?;
        let mut put = |name: &str, body: String| -> Result<(), CliError> {
            let path = dir.join(name);
            std::fs::write(&path, body).map_err(|source| CliError::Write { path: path.display().to_string(), source })?;
            files.push(path);
            Ok(())
        };
        put("report.txt", report.clone())?;
        put("norms.csv", csv("experiment,p,measure,discounted,horizon,y,z,m,k,data,ratio", &sink.norms))?;
        put("profiles.csv", csv("kind,p,T,value,target", &sink.profiles))?;
        put("solution_f.csv", solution_f_csv(&sol_f, scenario.horizon))?;
        put("solution_g.csv", solution_g_csv(&sol_g, &scenario.space))?;
    }
    Ok(Outcome { report, failures: sink.failures, files })
}

fn csv(header: &str, rows: &[String]) -> String {
    let mut out = String::with_capacity(rows.iter().map(|r| r.len() + 1).sum::<usize>() + header.len() + 1);
    out.push_str(header);
    out.push('\n');
    for r in rows {
        out.push_str(r);
        out.push('\n');
    }
    out
}

/// `level,path_bits,Y,Z,dK`; `Z` and `dK` act over the following step and are
/// empty at the horizon.
pub fn solution_f_csv(sol: &SolutionF, horizon: usize) -> String {
    let mut out = String::from("level,path_bits,Y,Z,dK\n");
    for n in 0..=horizon {
        for b in 0..(1usize << n) {
            let _ = write!(out, "{n},{b},{:?},", sol.y.at(n, b));
            if n < horizon {
                let _ = writeln!(out, "{:?},{:?}", sol.z.at(n, b), sol.dk.at(n, b));
            } else {
                out.push_str(",\n");
            }
        }
    }
    out
}

/// One row per `G_n`-atom: the first `n` steps and either the death index
/// (`tau <= n`) or `inf` for the survivors `tau > n`.
pub fn solution_g_csv(sol: &SolutionG, space: &EnlargedSpace) -> String {
    let depth = space.depth();
    let mut out = String::from("level,path_bits,death_index,Y,Z,K,M\n");
    for n in 0..=sol.horizon {
        let mut atoms: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        for (i, s) in space.states().iter().enumerate() {
            let death = if s.death <= n { s.death } else { usize::MAX };
            atoms.entry((s.leaf >> (depth - n), death)).or_insert(i);
        }
        for ((bits, death), i) in atoms {
            let d = if death == usize::MAX { "inf".to_string() } else { death.to_string() };
            let _ = writeln!(
                out,
                "{n},{bits},{d},{:?},{:?},{:?},{:?}",
                sol.y.at(i, n),
                sol.z.at(i, n),
                sol.k.at(i, n),
                sol.m.at(i, n)
            );
        }
    }
    out
}

fn running_max_abs_w(space: &EnlargedSpace) -> AdaptedProcess {
    let tree = space.tree();
    AdaptedProcess::from_fn(tree, |n, b| (0..=n).map(|k| tree.w(k, b >> (n - k)).abs()).fold(0.0, f64::max))
}

fn solve(s: &Scenario, triplet: &rbsde_horizon::DataTriplet) -> Result<(SolutionF, SolutionG), CliError> {
    Ok(if s.infinite { solve_g_infinite(triplet, &s.space)? } else { solve_g(triplet, &s.space, s.horizon)? })
}

fn run_experiments(s: &Scenario, verify_only: bool) -> Result<(Sink, SolutionF, SolutionG), CliError> {
    let (sol_f, sol_g) = solve(s, &s.triplet)?;
    let mut sink = Sink::default();
    for &exp in &s.config.experiments {
        if verify_only && !exp.is_verification() {
            continue;
        }
        match exp {
            Experiment::Solve => solve_experiment(s, &sol_f, &sol_g, &mut sink),
            Experiment::OracleCheck => {
                let oracle = solve_g_snell_oracle(&s.triplet, &s.space, s.horizon)?;
                let gap = max_state_gap(&sol_g.y, &oracle, &s.space, s.horizon);
                let tol = 1e-10 * (1.0 + sol_g.y.max_abs());
                sink.residual(exp, "lifted Y^G = G Snell envelope under Q~ (statewise)", gap, tol);
            }
            Experiment::Identities => identities(s, &mut sink),
            Experiment::Apriori => apriori(s, &mut sink)?,
            Experiment::Stability => stability(s, &mut sink)?,
            Experiment::Discounted => discounted(s, &sol_g, &mut sink)?,
            Experiment::LimitProfile => limit_profile(s, &mut sink)?,
            Experiment::EquivalentCheck => {
                let reports = s
                    .config
                    .p_grid
                    .par_iter()
                    .map(|&p| equivalent_rbsde_check(&sol_g, &s.triplet, &s.space, p).map(|r| (p, r)))
                    .collect::<Result<Vec<_>, _>>()?;
                for (p, r) in reports {
                    let worst = r.dynamics.max(r.terminal).max(r.barrier).max(r.skorokhod);
                    sink.check(
                        exp,
                        &format!("discounted RBSDE with (G~/G)^(1/p) dV~^(1/p) drift, p = {p}"),
                        r.passes(),
                        format!("residual={worst:.3e} tol={:.1e} skipped_steps={}", r.tol, r.skipped),
                    );
                }
            }
            Experiment::AppendixA => appendix_a(s, &mut sink)?,
        }
    }
    Ok((sink, sol_f, sol_g))
}

fn solve_experiment(s: &Scenario, sol_f: &SolutionF, sol_g: &SolutionG, sink: &mut Sink) {
    let exp = Experiment::Solve;
    let tol_f = sol_f.tolerance();
    sink.residual(exp, "F-RBSDE backward step", sol_f.dynamics_residual, tol_f);
    let sk = &sol_f.skorokhod;
    if sk.vacuous {
        sink.check(exp, "F-RBSDE Skorokhod condition", true, "vacuous (no barrier)".into());
    } else {
        sink.check(
            exp,
            "F-RBSDE Skorokhod condition",
            sk.passes(),
            format!("pairing={:.3e} tol={:.1e}", sk.pairing, sk.tol),
        );
    }
    let rep = residual_check(sol_g, &s.triplet, &s.space);
    for (name, c) in rep.entries() {
        let detail = if c.vacuous {
            "vacuous (no barrier)".to_string()
        } else {
            format!("residual={:.3e} tol={:.1e}", c.residual + 0.0, rep.tol)
        };
        sink.check(exp, &format!("G-solution {name}"), c.passed, detail);
    }
    if s.triplet.barrier.process().is_none() {
        let k = sol_g.k.max_abs();
        sink.check(exp, "BSDE case K = 0", k == 0.0, format!("max|K|={k:.3e}"));
    }
    sink.report(exp, format!("Y^F_0 = {:?}", sol_f.y.at(0, 0)));
    let mut classes: BTreeMap<bool, usize> = BTreeMap::new();
    for (i, st) in s.space.states().iter().enumerate() {
        classes.entry(st.death > 0).or_insert(i);
    }
    for (alive, i) in classes.into_iter().rev() {
        let class = if alive { "tau > 0" } else { "tau = 0" };
        sink.report(exp, format!("Y^G_0 on {{{class}}} = {:?}", sol_g.y.at(i, 0)));
    }
}

/// Every exact identity of the enlargement model, with its residual.
pub fn identity_residuals(s: &Scenario) -> Vec<(String, f64, f64)> {
    let space = &s.space;
    let t = s.horizon;
    let id = s.model.identities();
    let tol = IDENTITY_TOL;
    let mut out = vec![
        ("decomposition G = G_0 E(G_-^{-1} . m) E~".to_string(), id.decomposition, tol),
        ("G~ = G_- + dm".into(), id.gtilde_from_m, tol),
        ("G~ - dD^o = G".into(), id.gtilde_minus_jump, tol),
        ("m is an F-martingale".into(), id.m_martingale, tol),
        ("Z~ E(G_-^{-1} . m) = 1".into(), id.reciprocal, tol),
        ("V^F nondecreasing".into(), id.vf_decrease, tol),
        ("V^F in range".into(), if id.vf_in_range { 0.0 } else { 1.0 }, tol),
        ("P-mass of the enlarged space = 1".into(), space.mass_residual(), tol),
        ("Q~_T is a probability".into(), space.qtilde_normalization_residual(t), tol),
        ("N^G is a G-martingale".into(), space.ng_martingale_residual(), tol),
        ("Z~ stopped at tau is a G-martingale".into(), space.ztilde_martingale_residual(), tol),
        ("W stopped at T∧tau is a Q~-martingale".into(), space.stopped_brownian_qtilde_residual(t), tol),
    ];
    let tree = space.tree();
    let abs_w = tree.brownian().map(f64::abs);
    let (l, r) = space.qtilde_optional_identity(&abs_w, t);
    out.push(("E^Q~[X_{T∧tau}] for optional X = |W|".into(), (l - r).abs(), tol * (1.0 + l.abs())));
    let run_max = running_max_abs_w(space);
    let (l, r) = space.qtilde_increasing_identity(&run_max, t);
    out.push(("E^Q~[X_{T∧tau}] for increasing X = max|W|".into(), (l - r).abs(), tol * (1.0 + l.abs())));
    let n = tree.depth();
    let leaf: Vec<f64> = (0..tree.leaves()).map(|b| tree.w(n, b).powi(2)).collect();
    let worst = (0..=n)
        .map(|k| space.check_g_projection(&s.kernel, &leaf, k))
        .collect::<Result<Vec<_>, _>>()
        .map(|v| v.into_iter().fold(0.0, f64::max))
        .unwrap_or(f64::INFINITY);
    out.push(("G-projection E[X | G_n] = E[X 1{tau>n} | F_n] / G_n, X = W_N^2".into(), worst, tol));
    out
}

fn identities(s: &Scenario, sink: &mut Sink) {
    for (name, res, tol) in identity_residuals(s) {
        sink.residual(Experiment::Identities, &name, res, tol);
    }
}

fn apriori(s: &Scenario, sink: &mut Sink) -> Result<(), CliError> {
    let exp = Experiment::Apriori;
    let rows = s
        .config
        .p_grid
        .par_iter()
        .map(|&p| {
            let prof = verify_apriori_bounded(&s.triplet, &s.space, p, s.horizon)?;
            let dev = scaling_deviation(&s.triplet, &s.space, p, s.horizon, &SCALING_LAMBDAS)?;
            Ok((p, prof, dev))
        })
        .collect::<Result<Vec<_>, rbsde_horizon::Error>>()?;
    for (p, prof, dev) in rows {
        for r in &prof.rows {
            sink.norm_row("apriori", r);
        }
        sink.check(
            exp,
            &format!("Q~ estimate ratio finite over T' = 1..{}, p = {p}", s.horizon),
            prof.finite(),
            format!("max_ratio={:.6e}", prof.max_ratio()),
        );
        sink.residual(exp, &format!("ratio invariant under data scaling 0.1, 1, 10, p = {p}"), dev, 1e-10);
    }
    Ok(())
}

fn stability(s: &Scenario, sink: &mut Sink) -> Result<(), CliError> {
    let exp = Experiment::Stability;
    let t2 = s.triplet2.as_ref().expect("validated at build");
    let (_, a) = solve(s, &s.triplet)?;
    let (_, b) = solve(s, t2)?;
    let jobs: Vec<(f64, bool)> = s.config.p_grid.iter().flat_map(|&p| [(p, false), (p, true)]).collect();
    let reports = jobs
        .par_iter()
        .map(|&(p, disc)| verify_stability((&a, &s.triplet), (&b, t2), &s.space, p, disc))
        .collect::<Result<Vec<_>, _>>()?;
    for r in reports {
        let kind = if r.discounted { "stability_discounted" } else { "stability" };
        sink.profile_row(kind, Some(r.p), s.horizon, r.lhs, r.delta_data);
        sink.profile_row(&format!("{kind}_cross"), Some(r.p), s.horizon, r.lhs, r.cross);
        sink.check(
            exp,
            &format!(
                "difference estimate{} finite, p = {}",
                if r.discounted { " (discounted, under P)" } else { " (under Q~)" },
                r.p
            ),
            r.finite(),
            format!(
                "lhs={:.6e} delta={:.6e} cross={:.6e} implied=({:.6e}, {:.6e})",
                r.lhs, r.delta_data, r.cross, r.implied.0, r.implied.1
            ),
        );
    }
    Ok(())
}

fn discounted(s: &Scenario, sol: &SolutionG, sink: &mut Sink) -> Result<(), CliError> {
    let exp = Experiment::Discounted;
    let space = &s.space;
    let t = s.horizon;
    let tree = space.tree();
    sink.inequality(exp, "E^Q~[D^o_{T∧tau} - D^o_{(t∧tau)-} | G_t] <= G~_{t∧tau}", compensator_mass_bound(space, t));
    sink.inequality(exp, "E[sum dD^o / G~ | G_t] <= 1", hazard_sum_bound(space, t));
    let abs_y = sol.y.map(f64::abs);
    let w2 = tree.brownian().map(|w| w * w);
    let run_max = running_max_abs_w(space);
    for &p in &s.config.p_grid {
        sink.inequality(exp, &format!("dV~^(1/p) <= max(1/p, 1) dD^o / G~, p = {p}"), hazard_power_increments(space, 1.0 / p));
        sink.inequality(exp, &format!("E[sup E~ |Y|^p] <= E^Q~[sup |Y|^p] / G_0, p = {p}"), discounting_sup_bound(space, &sol.y, p, t));
        for a in [1.0 / p, 2.0 / p] {
            sink.inequality(
                exp,
                &format!("discounted K bound with kappa({a:.4}), p = {p}"),
                discounting_increasing_bound(space, &sol.k, a, t),
            );
        }
        sink.inequality(
            exp,
            &format!("discounted H . [N^G, N^G] bound, G-optional H = |Y|, p = {p}"),
            discounting_bracket_bound_g(space, &abs_y, p, t),
        );
        sink.inequality(
            exp,
            &format!("discounted H . [N^G, N^G] bound, F-optional H = W^2, p = {p}"),
            discounting_bracket_bound_f(space, &w2, p, t),
        );
        sink.inequality(
            exp,
            &format!("||(E~_- . X)_T||_r <= 2 G_0^(-1/r) ||X_(T∧tau)||_r(Q~), X = max|W|, r = {p}"),
            discounted_increasing_bound(space, &run_max, p, t),
        );
    }
    if s.infinite {
        let schedule = TruncationSchedule::full(tree.depth());
        let results = s
            .config
            .p_grid
            .par_iter()
            .map(|&p| solve_infinite(&s.triplet, space, p, &schedule))
            .collect::<Result<Vec<_>, _>>()?;
        for inf in results {
            let p = inf.norms.p;
            sink.norm_row("discounted_infinite", &inf.norms);
            for &(n, v) in &inf.cauchy {
                sink.profile_row("cauchy", Some(p), n, v, 0.0);
            }
            let tol = 1e-10 * (1.0 + inf.solution.y.max_abs());
            let last = inf.cauchy.last().map_or(0.0, |c| c.1);
            sink.check(
                exp,
                &format!("truncation Cauchy profile nonincreasing to 0 at cutoff N, p = {p}"),
                inf.cauchy_nonincreasing(tol) && last <= tol,
                format!("first={:.6e} last={last:.3e}", inf.cauchy.first().map_or(0.0, |c| c.1)),
            );
            sink.check(
                exp,
                &format!("P⊗V^F estimate ratio finite, p = {p}"),
                inf.norms.ratio.is_finite(),
                format!("ratio={:.6e} delta_S+={:.6e} delta_|S|={:.6e}", inf.norms.ratio, inf.delta_positive, inf.delta_abs),
            );
        }
    } else {
        let profiles = s
            .config
            .p_grid
            .par_iter()
            .map(|&p| verify_discounted(&s.triplet, space, p, t))
            .collect::<Result<Vec<_>, _>>()?;
        for prof in profiles {
            for r in &prof.rows {
                sink.norm_row("discounted", r);
            }
            sink.check(
                exp,
                &format!("discounted estimate ratio finite over T' = 1..{t}, p = {}", prof.p),
                prof.finite(),
                format!("max_ratio={:.6e}", prof.max_ratio()),
            );
        }
    }
    Ok(())
}

fn limit_profile(s: &Scenario, sink: &mut Sink) -> Result<(), CliError> {
    let exp = Experiment::LimitProfile;
    let run_max = running_max_abs_w(&s.space);
    for (label, x) in [("V^F", s.model.vf.clone()), ("max|W|", run_max)] {
        let lp = qtilde_limit_check(&x, &s.space)?;
        let limit = lp.target + lp.boundary;
        for &(t, v) in &lp.profile {
            sink.profile_row(&format!("limit {label}"), None, t, v, limit);
        }
        sink.residual(
            exp,
            &format!("E^Q~_N[X_(N∧tau)] = G_0 ||X||_L1(P⊗V^F), X = {label}"),
            lp.residual,
            IDENTITY_TOL * (1.0 + limit.abs()),
        );
        if lp.hypothesis_holds() {
            sink.report(exp, format!("X = {label}: max |X / E(G_-^(-1) . m)| = {:.6e}", lp.bound_ratio));
        } else {
            sink.report(exp, format!("X = {label}: warning, X / E(G_-^(-1) . m) is unbounded"));
        }
    }
    Ok(())
}

/// Largest ratio `||sup|H . M|||_r / (||sup|X|||_a ||[M]^(1/2)||_b)` over
/// `seeds` random triplets, in seed order.
pub fn appendix_a_ratios(tree: &rbsde_horizon::TreeModel, base: u64, seeds: u64, a: f64, b: f64) -> Result<Vec<f64>, CliError> {
    (0..seeds)
        .into_par_iter()
        .map(|k| {
            let mut r = rng(base.wrapping_add(k));
            let x = random_adapted(tree, &mut r, 1.0);
            let h = random_dominated(tree, &mut r, &x);
            let m = random_martingale(tree, &mut r);
            martingale_product_ratio(tree, &h, &x, &m, a, b)
        })
        .collect::<Result<Vec<_>, _>>()
        .map_err(CliError::from)
}

fn appendix_a(s: &Scenario, sink: &mut Sink) -> Result<(), CliError> {
    let cfg = s.config.appendix_a;
    let ratios = appendix_a_ratios(s.space.tree(), s.config.seed, cfg.seeds, cfg.a, cfg.b)?;
    let max = ratios.iter().copied().fold(0.0, f64::max);
    let finite = ratios.iter().all(|r| r.is_finite());
    sink.check(
        Experiment::AppendixA,
        &format!("sup|H . M| product inequality, a = {}, b = {}, {} seeds", cfg.a, cfg.b, cfg.seeds),
        finite && max < APPENDIX_A_CEILING,
        format!("max_ratio={max:.6e} ceiling={APPENDIX_A_CEILING}"),
    );
    Ok(())
}
