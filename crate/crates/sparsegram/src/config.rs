//! Run configuration, read from TOML.
//!
//! ```toml
//! [system]
//! A = [[0.0, 1.0], [0.0, 0.0]]   # rows
//! B = [[1.0, 0.0], [0.0, 1.0]]
//! T = 1.0
//!
//! [grid]
//! N = 4
//!
//! [budgets]
//! alpha = [0.5, 0.5]
//! beta = 1
//!
//! [metric]
//! kind = "log_det"               # trace | log_det | min_eig
//!
//! [solver]
//! methods = ["projected_gradient", "fixed_point"]
//!
//! [oracle]
//! enabled = true
//!
//! [outputs]
//! report_path = "report.json"
//! ```

use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use serde::{Deserialize, Serialize};
use sparsegram_core::nalgebra::{DMatrix, DVector};
use sparsegram_core::{Budgets, LtiSystem, MetricKind, MetricSpec, Method, SolverOptions, StepSize, TimeGrid};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub system: SystemSection,
    pub grid: GridSection,
    pub budgets: BudgetSection,
    #[serde(default)]
    pub metric: MetricSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub oracle: OracleSection,
    #[serde(default)]
    pub energy: EnergySection,
    #[serde(default)]
    pub outputs: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
    #[serde(rename = "T")]
    pub horizon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    #[serde(rename = "N")]
    pub intervals: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetSection {
    pub alpha: Vec<f64>,
    /// Read as a real so a fractional value gets a clear error.
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricSection {
    pub kind: MetricKind,
    pub epsilon: Option<f64>,
    pub eig_gap_tol: Option<f64>,
}

impl Default for MetricSection {
    fn default() -> Self {
        Self {
            kind: MetricKind::LogDet,
            epsilon: None,
            eig_gap_tol: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    pub methods: Vec<Method>,
    pub max_iters: usize,
    pub step_size: StepSize,
    pub damping: f64,
    pub convergence_tol: f64,
    pub threshold_bisection_tol: f64,
    pub seed: u64,
    pub restarts: usize,
    pub assumption_tol: f64,
    pub discreteness_tol: f64,
    /// Round each solution to a binary L0/l0-feasible schedule.
    pub round: bool,
}

impl Default for SolverSection {
    fn default() -> Self {
        let o = SolverOptions::default();
        Self {
            methods: vec![Method::ProjectedGradient, Method::FixedPoint],
            max_iters: o.max_iters,
            step_size: o.step_size,
            damping: o.damping,
            convergence_tol: o.convergence_tol,
            threshold_bisection_tol: o.threshold_bisection_tol,
            seed: o.seed,
            restarts: o.restarts,
            assumption_tol: o.assumption_tol,
            discreteness_tol: o.discreteness_tol,
            round: true,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleSection {
    pub enabled: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnergySection {
    /// Target states `x_f`, one per entry.
    pub targets: Vec<Vec<f64>>,
}

/// Output files; relative paths resolve against the config file's
/// directory. Unset paths are not written.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub report_path: Option<PathBuf>,
    pub schedule_path: Option<PathBuf>,
    pub switching_path: Option<PathBuf>,
    pub trajectory_path: Option<PathBuf>,
    pub eigenvalue_path: Option<PathBuf>,
    pub objective_trace_path: Option<PathBuf>,
}

/// Validated, ready-to-run instance.
#[derive(Debug, Clone)]
pub struct Instance {
    pub sys: LtiSystem,
    pub grid: TimeGrid,
    pub bud: Budgets,
    pub metric: MetricSpec,
    pub targets: Vec<DVector<f64>>,
}

fn matrix(rows: &[Vec<f64>], name: &str) -> Result<DMatrix<f64>> {
    ensure!(!rows.is_empty(), "system.{name} has no rows");
    let cols = rows[0].len();
    for (i, row) in rows.iter().enumerate() {
        ensure!(
            row.len() == cols,
            "system.{name} row {} has {} entries, row 1 has {cols}",
            i + 1,
            row.len()
        );
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    /// Reads `path`, applying `key=value` overrides (dotted keys, TOML
    /// values; bare words are taken as strings).
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        if overrides.is_empty() {
            return Self::from_toml(&text).with_context(|| format!("invalid config {}", path.display()));
        }
        let mut table: toml::Table = toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))?;
        for item in overrides {
            apply_override(&mut table, item).with_context(|| format!("bad override `{item}`"))?;
        }
        let merged = toml::to_string(&table)?;
        Self::from_toml(&merged).with_context(|| format!("invalid config {} after overrides", path.display()))
    }

    pub fn solver_options(&self, method: Method) -> SolverOptions {
        let s = &self.solver;
        SolverOptions {
            method,
            max_iters: s.max_iters,
            step_size: s.step_size,
            damping: s.damping,
            convergence_tol: s.convergence_tol,
            threshold_bisection_tol: s.threshold_bisection_tol,
            seed: s.seed,
            restarts: s.restarts,
            assumption_tol: s.assumption_tol,
            discreteness_tol: s.discreteness_tol,
        }
    }

    pub fn instance(&self) -> Result<Instance> {
        let a = matrix(&self.system.a, "A")?;
        let b = matrix(&self.system.b, "B")?;
        let sys = LtiSystem::new(a, b, self.system.horizon).context("invalid system")?;
        let grid = TimeGrid::for_system(&sys, self.grid.intervals).context("invalid grid")?;
        let beta = self.budgets.beta;
        if beta.fract() != 0.0 {
            bail!("budgets.beta must be an integer (simultaneous active nodes), got {beta}");
        }
        let bud = Budgets::with_real_beta(self.budgets.alpha.clone(), beta).context("invalid budgets")?;
        bud.validate(sys.nodes(), sys.horizon()).context("invalid budgets")?;

        let mut metric = MetricSpec::new(self.metric.kind);
        if let Some(eps) = self.metric.epsilon {
            metric.epsilon = eps;
        }
        if let Some(tol) = self.metric.eig_gap_tol {
            metric.eig_gap_tol = tol;
        }
        metric.validate().context("invalid metric")?;

        ensure!(!self.solver.methods.is_empty(), "solver.methods is empty");
        for &m in &self.solver.methods {
            self.solver_options(m).validate().context("invalid solver options")?;
        }
        let n = sys.states();
        let targets = self
            .energy
            .targets
            .iter()
            .enumerate()
            .map(|(i, x)| {
                ensure!(x.len() == n, "energy.targets[{i}] has {} entries, the system has {n} states", x.len());
                Ok(DVector::from_column_slice(x))
            })
            .collect::<Result<_>>()?;
        Ok(Instance {
            sys,
            grid,
            bud,
            metric,
            targets,
        })
    }
}

fn apply_override(table: &mut toml::Table, item: &str) -> Result<()> {
    let Some((key, raw)) = item.split_once('=') else {
        bail!("expected key=value");
    };
    let (key, raw) = (key.trim(), raw.trim());
    let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let parts: Vec<&str> = key.split('.').collect();
    ensure!(parts.iter().all(|p| !p.is_empty()), "empty key segment in `{key}`");
    let (last, sections) = parts.split_last().expect("split yields at least one part");
    let mut node = table;
    for part in sections {
        let entry = node.entry(part.to_string()).or_insert_with(|| toml::Value::Table(Default::default()));
        node = match entry {
            toml::Value::Table(t) => t,
            _ => bail!("`{part}` is not a section"),
        };
    }
    node.insert(last.to_string(), value);
    Ok(())
}

/// Path resolved against `base` unless already absolute.
pub fn resolve(base: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[system]
A = [[0.0, 0.0], [0.0, 0.0]]
B = [[1.0, 0.0], [0.0, 1.0]]
T = 1.0

[grid]
N = 2

[budgets]
alpha = [0.5, 0.5]
beta = 1
"#;

    #[test]
    fn minimal_config_uses_defaults() {
        let cfg = RunConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(cfg.metric.kind, MetricKind::LogDet);
        assert_eq!(cfg.solver.methods.len(), 2);
        assert!(!cfg.oracle.enabled);
        let inst = cfg.instance().unwrap();
        assert_eq!(inst.bud.beta, 1);
        assert_eq!(inst.grid.intervals(), 2);
    }

    #[test]
    fn fractional_beta_is_named() {
        let text = MINIMAL.replace("beta = 1", "beta = 1.5");
        let err = RunConfig::from_toml(&text).unwrap().instance().unwrap_err();
        assert!(format!("{err:#}").contains("beta must be an integer"), "{err:#}");
    }

    #[test]
    fn unknown_key_reports_location() {
        let text = MINIMAL.replace("N = 2", "N = 2\nM = 3");
        let err = RunConfig::from_toml(&text).unwrap_err();
        let msg = format!("{err:#}");
        assert!(msg.contains("line") && msg.contains('M'), "{msg}");
    }

    #[test]
    fn overrides_reach_nested_keys() {
        let mut table: toml::Table = toml::from_str(MINIMAL).unwrap();
        apply_override(&mut table, "solver.max_iters=7").unwrap();
        apply_override(&mut table, "metric.kind=trace").unwrap();
        apply_override(&mut table, "oracle.enabled = true").unwrap();
        let cfg = RunConfig::from_toml(&toml::to_string(&table).unwrap()).unwrap();
        assert_eq!(cfg.solver.max_iters, 7);
        assert_eq!(cfg.metric.kind, MetricKind::Trace);
        assert!(cfg.oracle.enabled);
        assert!(apply_override(&mut table, "novalue").is_err());
        assert!(apply_override(&mut table, "grid.N.x=1").is_err());
    }

    #[test]
    fn ragged_matrix_rejected() {
        let text = MINIMAL.replace("A = [[0.0, 0.0], [0.0, 0.0]]", "A = [[0.0, 0.0], [0.0]]");
        let err = RunConfig::from_toml(&text).unwrap().instance().unwrap_err();
        assert!(format!("{err:#}").contains("system.A row 2"));
    }
}
