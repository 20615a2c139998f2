//! Scenario files: JSON with nested sections, loaded and expanded into the
//! objects the engine works with.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use rbsde_horizon::gen::{random_kernel, rng, KernelFamily};
use rbsde_horizon::{
    build_enlarged_space, build_random_time, AdaptedProcess, Barrier, DataTriplet, DensityKernel, EnlargedSpace,
    KernelMode, RandomTimeModel, TreeModel,
};

use crate::error::CliError;
use crate::expr::{Env, Expr, Var};

pub const DEFAULT_P_GRID: [f64; 5] = [1.25, 1.5, 2.0, 3.0, 4.0];

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub tree: TreeConfig,
    pub kernel: KernelConfig,
    pub data: DataConfig,
    #[serde(default)]
    pub data2: Option<DataConfig>,
    pub horizon: HorizonConfig,
    #[serde(default = "default_p_grid")]
    pub p_grid: Vec<f64>,
    pub experiments: Vec<Experiment>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub appendix_a: AppendixConfig,
}

fn default_p_grid() -> Vec<f64> {
    DEFAULT_P_GRID.to_vec()
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeConfig {
    pub depth: usize,
    pub dt: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case", deny_unknown_fields)]
pub enum KernelConfig {
    /// One row `alpha_0, ..., alpha_N, alpha_inf` per leaf.
    Explicit {
        table: Vec<Vec<f64>>,
        #[serde(default)]
        finite_tau: bool,
    },
    /// Hazard expression over `(n, t, W)`.
    Cox {
        #[serde(default)]
        alpha0: f64,
        hazard: String,
        #[serde(default)]
        finite_tau: bool,
    },
    /// Hazard expression over `(n, t, W, s)`, `s` the sign of the next step.
    AnticipativeMix {
        #[serde(default)]
        alpha0: f64,
        hazard: String,
        #[serde(default)]
        finite_tau: bool,
    },
    /// The two-step documentation kernel (depth 2 only).
    Reference {
        #[serde(default)]
        finite_tau: bool,
    },
    /// Drawn from the scenario seed.
    Random {
        family: Family,
        #[serde(default)]
        finite_tau: bool,
    },
}

impl KernelConfig {
    fn mode(&self) -> KernelMode {
        let finite = match self {
            KernelConfig::Explicit { finite_tau, .. }
            | KernelConfig::Cox { finite_tau, .. }
            | KernelConfig::AnticipativeMix { finite_tau, .. }
            | KernelConfig::Reference { finite_tau }
            | KernelConfig::Random { finite_tau, .. } => *finite_tau,
        };
        if finite {
            KernelMode::FiniteTau
        } else {
            KernelMode::Bounded
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Cox,
    Anticipative,
    Explicit,
}

/// An expression string, or a table with one row of `2^n` values per level.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum Field {
    Expr(String),
    Table(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub f: Field,
    /// `"none"` for the non-reflected equation.
    #[serde(rename = "S")]
    pub s: Field,
    pub h: Field,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase", deny_unknown_fields)]
pub enum HorizonConfig {
    Bounded {
        #[serde(rename = "T")]
        t: usize,
    },
    Infinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Solve,
    OracleCheck,
    Identities,
    Apriori,
    Stability,
    Discounted,
    LimitProfile,
    EquivalentCheck,
    #[serde(rename = "appendixA")]
    AppendixA,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Solve => "solve",
            Experiment::OracleCheck => "oracle_check",
            Experiment::Identities => "identities",
            Experiment::Apriori => "apriori",
            Experiment::Stability => "stability",
            Experiment::Discounted => "discounted",
            Experiment::LimitProfile => "limit_profile",
            Experiment::EquivalentCheck => "equivalent_check",
            Experiment::AppendixA => "appendixA",
        }
    }

    /// Identity and estimate checks, the ones `verify` runs.
    pub fn is_verification(self) -> bool {
        !matches!(self, Experiment::Solve | Experiment::OracleCheck | Experiment::EquivalentCheck)
    }
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppendixConfig {
    #[serde(default = "default_appendix_seeds")]
    pub seeds: u64,
    #[serde(default = "default_four")]
    pub a: f64,
    #[serde(default = "default_four")]
    pub b: f64,
}

fn default_appendix_seeds() -> u64 {
    200
}

fn default_four() -> f64 {
    4.0
}

impl Default for AppendixConfig {
    fn default() -> Self {
        Self { seeds: default_appendix_seeds(), a: 4.0, b: 4.0 }
    }
}

/// Everything a run needs, built from a validated config.
pub struct Scenario {
    pub config: ScenarioConfig,
    pub tree: TreeModel,
    pub kernel: DensityKernel,
    pub model: RandomTimeModel,
    pub space: EnlargedSpace,
    pub triplet: DataTriplet,
    pub triplet2: Option<DataTriplet>,
    /// `T` for a bounded run, `N` for an infinite one.
    pub horizon: usize,
    pub infinite: bool,
}

fn line_col(src: &str, byte: usize) -> (usize, usize) {
    let before = &src[..byte.min(src.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, col)
}

/// Parses the file text; syntax and schema errors carry line and column.
pub fn parse(path: &Path, src: &str) -> Result<ScenarioConfig, CliError> {
    let cfg: ScenarioConfig = serde_json::from_str(src).map_err(|e| CliError::Parse {
        path: path.display().to_string(),
        line: e.line(),
        column: e.column(),
        message: {
            let text = e.to_string();
            text.split(" at line ").next().unwrap_or(&text).to_string()
        },
    })?;
    // parse every expression now, so a typo is reported before any work
    let kernel_vars: &[Var] = match &cfg.kernel {
        KernelConfig::AnticipativeMix { .. } => &[Var::N, Var::T, Var::W, Var::S],
        _ => &[Var::N, Var::T, Var::W],
    };
    if let KernelConfig::Cox { hazard, .. } | KernelConfig::AnticipativeMix { hazard, .. } = &cfg.kernel {
        compile(path, src, "kernel", "hazard", hazard, kernel_vars)?;
    }
    for (section, data) in [("data", Some(&cfg.data)), ("data2", cfg.data2.as_ref())] {
        let Some(data) = data else { continue };
        for (key, field) in [("f", &data.f), ("S", &data.s), ("h", &data.h)] {
            if let Field::Expr(text) = field {
                if key == "S" && text.trim() == "none" {
                    continue;
                }
                compile(path, src, section, key, text, &[Var::N, Var::T, Var::W])?;
            }
        }
    }
    Ok(cfg)
}

/// Compiles an expression, mapping its error offset back to the file.
fn compile(path: &Path, src: &str, section: &str, key: &str, text: &str, vars: &[Var]) -> Result<Expr, CliError> {
    Expr::parse(text, vars).map_err(|e| {
        let literal = serde_json::to_string(text).expect("string serialises");
        let from = src.find(&format!("\"{section}\"")).unwrap_or(0);
        let key_at = src[from..].find(&format!("\"{key}\"")).map_or(from, |k| from + k);
        let at = src[key_at..].find(&literal).map_or(key_at, |k| key_at + k + 1 + e.offset);
        let (line, column) = line_col(src, at);
        CliError::Parse {
            path: path.display().to_string(),
            line,
            column,
            message: format!("in {section}.{key}: {}", e.message),
        }
    })
}

pub fn load(path: &Path) -> Result<(ScenarioConfig, String), CliError> {
    let src = std::fs::read_to_string(path).map_err(|source| CliError::Read { path: path.display().to_string(), source })?;
    Ok((parse(path, &src)?, src))
}

fn node_env(tree: &TreeModel, n: usize, b: usize) -> Env {
    Env { n: n as f64, t: tree.time(n), w: tree.w(n, b), s: 0.0 }
}

fn field_process(
    path: &Path,
    src: &str,
    tree: &TreeModel,
    section: &str,
    key: &str,
    field: &Field,
) -> Result<AdaptedProcess, CliError> {
    let proc = match field {
        Field::Expr(text) => {
            let e = compile(path, src, section, key, text, &[Var::N, Var::T, Var::W])?;
            AdaptedProcess::from_fn(tree, |n, b| e.eval(&node_env(tree, n, b)))
        }
        Field::Table(rows) => AdaptedProcess::from_levels(rows.clone())
            .ok()
            .filter(|p| p.depth() == tree.depth())
            .ok_or_else(|| {
                CliError::Invariant(format!(
                    "{section}.{key}: table needs {} levels of 1, 2, 4, ... values",
                    tree.depth() + 1
                ))
            })?,
    };
    for n in 0..=tree.depth() {
        for b in 0..tree.width(n) {
            let v = proc.at(n, b);
            if !v.is_finite() {
                return Err(CliError::Invariant(format!(
                    "{section}.{key} = {v} at level {n}, path bits {b:#b}"
                )));
            }
        }
    }
    Ok(proc)
}

fn triplet(path: &Path, src: &str, tree: &TreeModel, section: &str, data: &DataConfig) -> Result<DataTriplet, CliError> {
    let f = field_process(path, src, tree, section, "f", &data.f)?;
    let h = field_process(path, src, tree, section, "h", &data.h)?;
    let barrier = match &data.s {
        Field::Expr(t) if t.trim() == "none" => Barrier::None,
        other => Barrier::Lower(field_process(path, src, tree, section, "S", other)?),
    };
    DataTriplet::new(f, barrier, h).map_err(CliError::from)
}

fn kernel(path: &Path, src: &str, cfg: &ScenarioConfig, tree: &TreeModel) -> Result<DensityKernel, CliError> {
    let mode = cfg.kernel.mode();
    let k = match &cfg.kernel {
        KernelConfig::Explicit { table, .. } => {
            if table.len() != tree.leaves() {
                return Err(CliError::Invariant(format!(
                    "kernel table has {} rows, the tree has {} leaves",
                    table.len(),
                    tree.leaves()
                )));
            }
            if let Some(leaf) = table.iter().position(|r| r.len() != tree.depth() + 2) {
                return Err(CliError::Invariant(format!(
                    "kernel row for leaf {leaf:#b} needs {} entries",
                    tree.depth() + 2
                )));
            }
            DensityKernel::explicit(tree, table.clone(), mode)
        }
        KernelConfig::Cox { alpha0, hazard, .. } => {
            let e = compile(path, src, "kernel", "hazard", hazard, &[Var::N, Var::T, Var::W])?;
            DensityKernel::cox(tree, *alpha0, mode, |n, t, w| e.eval(&Env { n: n as f64, t, w, s: 0.0 }))
        }
        KernelConfig::AnticipativeMix { alpha0, hazard, .. } => {
            let e = compile(path, src, "kernel", "hazard", hazard, &[Var::N, Var::T, Var::W, Var::S])?;
            DensityKernel::anticipative_mix(tree, *alpha0, mode, |n, t, w, s| e.eval(&Env { n: n as f64, t, w, s }))
        }
        KernelConfig::Reference { finite_tau } => {
            if *finite_tau {
                DensityKernel::reference_finite(tree)
            } else {
                DensityKernel::reference(tree)
            }
        }
        KernelConfig::Random { family, .. } => {
            let family = match family {
                Family::Cox => KernelFamily::Cox,
                Family::Anticipative => KernelFamily::Anticipative,
                Family::Explicit => KernelFamily::Explicit,
            };
            random_kernel(tree, &mut rng(cfg.seed), family, mode)
        }
    };
    k.map_err(CliError::from)
}

/// Expands a parsed config into the engine objects and checks the
/// cross-field invariants.
pub fn build(path: &Path, src: &str, config: ScenarioConfig, p_override: Option<Vec<f64>>) -> Result<Scenario, CliError> {
    let mut config = config;
    if let Some(p) = p_override {
        config.p_grid = p;
    }
    if config.p_grid.is_empty() {
        return Err(CliError::Invariant("p_grid is empty".into()));
    }
    if let Some(p) = config.p_grid.iter().find(|p| !(**p > 1.0 && p.is_finite())) {
        return Err(CliError::Invariant(format!("p = {p} must exceed 1")));
    }
    for (i, e) in config.experiments.iter().enumerate() {
        if config.experiments[..i].contains(e) {
            return Err(CliError::Invariant(format!("experiment {} declared twice", e.name())));
        }
    }
    let tree = TreeModel::new(config.tree.depth, config.tree.dt)?;
    let kernel = kernel(path, src, &config, &tree)?;
    let model = build_random_time(&tree, &kernel)?;
    let space = build_enlarged_space(&tree, &model, &kernel)?;
    let triplet = triplet(path, src, &tree, "data", &config.data)?;
    let triplet2 = match &config.data2 {
        Some(d) => Some(self::triplet(path, src, &tree, "data2", d)?),
        None => None,
    };
    if config.experiments.contains(&Experiment::Stability) {
        match &triplet2 {
            None => return Err(CliError::Invariant("experiment stability needs a data2 block".into())),
            Some(t2) if t2.barrier.process().is_some() != triplet.barrier.process().is_some() => {
                return Err(CliError::Invariant("data and data2 must both have a barrier or both have none".into()))
            }
            _ => {}
        }
    }
    let (horizon, infinite) = match config.horizon {
        HorizonConfig::Bounded { t } => {
            if t == 0 || t > tree.depth() {
                return Err(CliError::Invariant(format!("horizon T = {t} must lie in 1..={}", tree.depth())));
            }
            (t, false)
        }
        HorizonConfig::Infinite => {
            if model.mode() != KernelMode::FiniteTau {
                return Err(CliError::Invariant("an infinite horizon needs a finite_tau kernel".into()));
            }
            (tree.depth(), true)
        }
    };
    if config.experiments.contains(&Experiment::LimitProfile) && model.mode() != KernelMode::FiniteTau {
        return Err(CliError::Invariant("limit_profile needs a finite_tau kernel".into()));
    }
    for t in [Some(&triplet), triplet2.as_ref()].into_iter().flatten() {
        t.check_terminal(&model, horizon)?;
    }
    Ok(Scenario { config, tree, kernel, model, space, triplet, triplet2, horizon, infinite })
}


/// Schema printed by `rbsde-horizon schema`.
pub const SCHEMA: &str = r#"{
  "tree":        { "depth": "integer in 1..=22", "dt": "positive real" },
  "kernel":      one of
                 { "mode": "explicit", "table": "[[alpha_0, ..., alpha_N, alpha_inf], one row per leaf]", "finite_tau": false }
                 { "mode": "cox", "alpha0": 0.0, "hazard": "expression in n, t, W", "finite_tau": false }
                 { "mode": "anticipative-mix", "alpha0": 0.0, "hazard": "expression in n, t, W, s", "finite_tau": false }
                 { "mode": "reference", "finite_tau": false }
                 { "mode": "random", "family": "cox | anticipative | explicit", "finite_tau": false },
  "data":        { "f": FIELD, "S": FIELD or "none", "h": FIELD },
  "data2":       same as data (required by the stability experiment),
  "horizon":     { "mode": "bounded", "T": integer } or { "mode": "infinite" },
  "p_grid":      [1.25, 1.5, 2, 3, 4],
  "experiments": ["solve", "oracle_check", "identities", "apriori", "stability",
                  "discounted", "limit_profile", "equivalent_check", "appendixA"],
  "seed":        0,
  "output_dir":  "path",
  "appendix_a":  { "seeds": 200, "a": 4, "b": 4 }
}

FIELD is an expression string or a table [[v_0], [v_0, v_1], [v_0, ..., v_3], ...]
with one row of 2^n values per level n (path bits, first step most significant).

Expressions: numbers, n, t, W, + - * / ^, unary -, comparisons < <= > >= == !=
(1 or 0), max(a, b), min(a, b), abs, exp, log, sqrt, tanh, pi.
"#;
