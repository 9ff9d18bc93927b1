//! Monte Carlo experiment driver, statistical validators and report output.

mod lemmas;
mod report;

pub use lemmas::*;
pub use report::*;

use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::{gen_bernoulli_design, load_design};
use crate::error::{Error, Result};
use crate::instance::{
    build_instance, build_preconditioner, construction_design, isotropic_instance, sample_covariates, sample_signal,
    Branch, HardInstance, PrecondSpec, SignalDist,
};
use crate::lasso::{run_trial, LassoTolerances, Outcome, PreparedPreconditioner};
use crate::seeds;

pub const SCHEMA_VERSION: u32 = 1;

const DESIGN_TAG: u64 = 0x6465_7369_676e;
const PRECOND_TAG: u64 = 0x7072_6563;

/// Flat key-value experiment description (TOML syntax, no tables).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    /// Design in the text format.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub design_file: Option<String>,
    /// `(n/2) × n` construction design.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub construction_n: Option<usize>,
    /// Bernoulli design `design_m × design_n` with expected column degree `design_d`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub design_m: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub design_n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub design_d: Option<f64>,
    /// Well-conditioned control `Θ̃ = I_n`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub isotropic_n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub design_seed: Option<u64>,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    pub signal: SignalDist,
    pub k: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<usize>,
    /// `identity`, `randinv`, `sqrt`, `invsqrt` or `file:PATH`.
    pub preconditioners: Vec<String>,
    pub m_list: Vec<usize>,
    pub trials: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol_gap: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol_obj_rel: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol_rec: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol_feas: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
    /// Cell assertions such as `failure >= 0.8 @ m=32 precond=sqrt`.
    #[serde(default)]
    pub assertions: Vec<String>,
    /// Require non-increasing identity failure rates in `m` (3σ slack).
    #[serde(default)]
    pub assert_monotone: bool,
    /// Adds wall-clock times to the report, which makes it non-reproducible.
    #[serde(default)]
    pub record_wall_time: bool,
}

fn default_epsilon() -> f64 {
    1e-6
}

#[derive(Debug, Clone, PartialEq)]
pub enum DesignSource {
    File(PathBuf),
    Construction { n: usize },
    Bernoulli { m: usize, n: usize, d: f64 },
    Isotropic { n: usize },
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::param(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; relative paths inside it resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &str| -> String {
            let pb = Path::new(p);
            if pb.is_absolute() {
                p.to_string()
            } else {
                base.join(pb).to_string_lossy().into_owned()
            }
        };
        cfg.design_file = cfg.design_file.as_deref().map(resolve);
        cfg.output_dir = cfg.output_dir.as_deref().map(resolve);
        for p in &mut cfg.preconditioners {
            if let Some(f) = p.strip_prefix("file:") {
                *p = format!("file:{}", resolve(f));
            }
        }
        cfg.validate_files()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::param("trials must be at least 1"));
        }
        if self.k == 0 {
            return Err(Error::param("k must be at least 1"));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::param("epsilon must be positive"));
        }
        if self.m_list.contains(&0) {
            return Err(Error::param("m_list entries must be positive"));
        }
        self.design_source()?;
        self.precond_specs()?;
        for a in &self.assertions {
            CellAssertion::parse(a)?;
        }
        Ok(())
    }

    fn validate_files(&self) -> Result<()> {
        let mut files: Vec<&str> = self.design_file.iter().map(String::as_str).collect();
        files.extend(self.preconditioners.iter().filter_map(|p| p.strip_prefix("file:")));
        for f in files {
            if !Path::new(f).is_file() {
                return Err(Error::param(format!("referenced file {f:?} does not exist")));
            }
        }
        Ok(())
    }

    pub fn design_source(&self) -> Result<DesignSource> {
        let mut sources = Vec::new();
        if let Some(f) = &self.design_file {
            sources.push(DesignSource::File(PathBuf::from(f)));
        }
        if let Some(n) = self.construction_n {
            sources.push(DesignSource::Construction { n });
        }
        match (self.design_m, self.design_n, self.design_d) {
            (Some(m), Some(n), Some(d)) => sources.push(DesignSource::Bernoulli { m, n, d }),
            (None, None, None) => {}
            _ => return Err(Error::param("design_m, design_n and design_d go together")),
        }
        if let Some(n) = self.isotropic_n {
            sources.push(DesignSource::Isotropic { n });
        }
        match sources.len() {
            1 => Ok(sources.pop().unwrap()),
            0 => Err(Error::param("no design given")),
            _ => Err(Error::param("more than one design source given")),
        }
    }

    pub fn precond_specs(&self) -> Result<Vec<PrecondSpec>> {
        self.preconditioners.iter().map(|s| s.parse()).collect()
    }

    pub fn tolerances(&self) -> LassoTolerances {
        let d = LassoTolerances::default();
        LassoTolerances {
            tol_gap: self.tol_gap.unwrap_or(d.tol_gap),
            tol_obj_rel: self.tol_obj_rel.unwrap_or(d.tol_obj_rel),
            tol_rec: self.tol_rec.unwrap_or(d.tol_rec),
            tol_feas: self.tol_feas.unwrap_or(d.tol_feas),
        }
    }

    pub fn design_seed(&self) -> u64 {
        self.design_seed.unwrap_or_else(|| seeds::derive(self.seed, DESIGN_TAG))
    }

    pub fn build_instance(&self) -> Result<HardInstance> {
        match self.design_source()? {
            DesignSource::File(p) => build_instance(&load_design(&p)?, self.epsilon),
            DesignSource::Construction { n } => build_instance(&construction_design(n, self.design_seed())?, self.epsilon),
            DesignSource::Bernoulli { m, n, d } => {
                build_instance(&gen_bernoulli_design(m, n, d, self.design_seed())?, self.epsilon)
            }
            DesignSource::Isotropic { n } => isotropic_instance(n),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceSummary {
    pub n: usize,
    pub epsilon: f64,
    pub r: usize,
    pub rank: usize,
    pub lambda: Option<f64>,
    pub tol_rank: f64,
}

impl InstanceSummary {
    pub fn of(inst: &HardInstance) -> Self {
        Self {
            n: inst.n(),
            epsilon: inst.epsilon,
            r: inst.r,
            rank: inst.rank,
            lambda: inst.lambda,
            tol_rank: inst.tol_rank,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub cell: usize,
    pub trial: usize,
    pub preconditioner: String,
    pub m: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub outcome: Option<Outcome>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub branch: Option<Branch>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub support_size: Option<usize>,
    /// `‖Sᵀw*‖₁ − ‖Sᵀŵ‖₁`.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub objective_gap: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub recovery_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub cell: usize,
    pub preconditioner: String,
    pub m: usize,
    pub n: usize,
    pub m_over_n: f64,
    pub trials: usize,
    pub failures: usize,
    pub successes: usize,
    /// Includes trials that ended in a solver error.
    pub ambiguous: usize,
    pub errors: usize,
    pub failure_rate: f64,
    pub success_rate: f64,
    pub ambiguous_rate: f64,
    pub mean_objective_gap: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub wall_time_s: Option<f64>,
}

impl CellSummary {
    pub fn from_trials(cell: usize, label: &str, m: usize, n: usize, trials: &[TrialRecord]) -> Self {
        let count = |o: Outcome| trials.iter().filter(|t| t.outcome == Some(o)).count();
        let failures = count(Outcome::Failure);
        let successes = count(Outcome::Success);
        let errors = trials.iter().filter(|t| t.error.is_some()).count();
        let ambiguous = trials.len() - failures - successes;
        let total = trials.len();
        let gaps: Vec<f64> = trials.iter().filter_map(|t| t.objective_gap).collect();
        let rate = |c: usize| if total == 0 { 0.0 } else { c as f64 / total as f64 };
        Self {
            cell,
            preconditioner: label.to_string(),
            m,
            n,
            m_over_n: m as f64 / n as f64,
            trials: total,
            failures,
            successes,
            ambiguous,
            errors,
            failure_rate: rate(failures),
            success_rate: rate(successes),
            ambiguous_rate: rate(ambiguous),
            mean_objective_gap: (!gaps.is_empty()).then(|| gaps.iter().sum::<f64>() / gaps.len() as f64),
            wall_time_s: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Failure,
    Success,
    Ambiguous,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Comparison {
    #[serde(rename = ">=")]
    AtLeast,
    #[serde(rename = "<=")]
    AtMost,
}

/// `METRIC (>=|<=) VALUE [@] [m=M] [precond=LABEL]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellAssertion {
    pub metric: Metric,
    pub comparison: Comparison,
    pub value: f64,
    pub m: Option<usize>,
    pub preconditioner: Option<String>,
}

impl CellAssertion {
    pub fn parse(text: &str) -> Result<Self> {
        let bad = |why: &str| Error::param(format!("assertion {text:?}: {why}"));
        let tokens: Vec<&str> = text.split_whitespace().filter(|t| *t != "@").collect();
        let [metric, op, value, filters @ ..] = tokens.as_slice() else {
            return Err(bad("expected METRIC OP VALUE"));
        };
        let metric = match *metric {
            "failure" | "failure_rate" => Metric::Failure,
            "success" | "success_rate" => Metric::Success,
            "ambiguous" | "ambiguous_rate" => Metric::Ambiguous,
            _ => return Err(bad("unknown metric")),
        };
        let comparison = match *op {
            ">=" => Comparison::AtLeast,
            "<=" => Comparison::AtMost,
            _ => return Err(bad("operator must be >= or <=")),
        };
        let value: f64 = value.parse().map_err(|_| bad("value is not a number"))?;
        let mut out = Self {
            metric,
            comparison,
            value,
            m: None,
            preconditioner: None,
        };
        for f in filters {
            match f.split_once('=') {
                Some(("m", v)) => out.m = Some(v.parse().map_err(|_| bad("m is not an integer"))?),
                Some(("precond", v)) => out.preconditioner = Some(v.to_string()),
                _ => return Err(bad("filters are m=M and precond=LABEL")),
            }
        }
        Ok(out)
    }

    fn matches(&self, cell: &CellSummary) -> bool {
        self.m.is_none_or(|m| m == cell.m) && self.preconditioner.as_ref().is_none_or(|p| *p == cell.preconditioner)
    }

    pub fn evaluate(&self, text: &str, cells: &[CellSummary]) -> AssertionResult {
        let mut checked = 0;
        let mut worst: Option<f64> = None;
        let mut passed = true;
        for c in cells.iter().filter(|c| self.matches(c)) {
            checked += 1;
            let v = match self.metric {
                Metric::Failure => c.failure_rate,
                Metric::Success => c.success_rate,
                Metric::Ambiguous => c.ambiguous_rate,
            };
            let ok = match self.comparison {
                Comparison::AtLeast => v >= self.value,
                Comparison::AtMost => v <= self.value,
            };
            passed &= ok;
            worst = Some(match (worst, self.comparison) {
                (None, _) => v,
                (Some(w), Comparison::AtLeast) => w.min(v),
                (Some(w), Comparison::AtMost) => w.max(v),
            });
        }
        AssertionResult {
            assertion: text.to_string(),
            passed: passed && checked > 0,
            cells_checked: checked,
            worst,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssertionResult {
    pub assertion: String,
    pub passed: bool,
    pub cells_checked: usize,
    pub worst: Option<f64>,
}

/// Failure rates of the identity preconditioner should not increase with `m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotoneCheck {
    pub preconditioner: String,
    pub m_values: Vec<usize>,
    pub failure_rates: Vec<f64>,
    /// Consecutive `(m, m')` pairs whose rate rose by more than 3σ.
    pub violations: Vec<(usize, usize)>,
    pub passed: bool,
    pub asserted: bool,
}

fn monotone_check(cells: &[CellSummary], label: &str, asserted: bool) -> Option<MonotoneCheck> {
    let mut sel: Vec<&CellSummary> = cells.iter().filter(|c| c.preconditioner == label).collect();
    if sel.is_empty() {
        return None;
    }
    sel.sort_by_key(|c| c.m);
    let mut violations = Vec::new();
    for w in sel.windows(2) {
        let (a, b) = (w[0], w[1]);
        let pooled = (a.failures + b.failures) as f64 / (a.trials + b.trials) as f64;
        let var = pooled * (1.0 - pooled) * (1.0 / a.trials as f64 + 1.0 / b.trials as f64);
        if b.failure_rate > a.failure_rate + 3.0 * var.sqrt() {
            violations.push((a.m, b.m));
        }
    }
    Some(MonotoneCheck {
        preconditioner: label.to_string(),
        m_values: sel.iter().map(|c| c.m).collect(),
        failure_rates: sel.iter().map(|c| c.failure_rate).collect(),
        passed: violations.is_empty(),
        violations,
        asserted,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureReport {
    pub schema_version: u32,
    pub config: ExperimentConfig,
    pub instance: InstanceSummary,
    pub cells: Vec<CellSummary>,
    pub trials: Vec<TrialRecord>,
    pub assertions: Vec<AssertionResult>,
    pub monotone: Option<MonotoneCheck>,
}

impl FailureReport {
    /// True when every configured assertion holds.
    pub fn all_passed(&self) -> bool {
        self.assertions.iter().all(|a| a.passed) && self.monotone.as_ref().is_none_or(|m| !m.asserted || m.passed)
    }
}

fn one_trial(
    inst: &HardInstance,
    pre: &PreparedPreconditioner,
    cfg: &ExperimentConfig,
    tols: LassoTolerances,
    cell: usize,
    m: usize,
    trial: usize,
    label: &str,
) -> TrialRecord {
    let mut rec = TrialRecord {
        cell,
        trial,
        preconditioner: label.to_string(),
        m,
        outcome: None,
        error: None,
        branch: None,
        support_size: None,
        objective_gap: None,
        recovery_error: None,
    };
    let mut rng = seeds::trial_rng(cfg.seed, cell as u64, trial as u64);
    let result = sample_signal(inst, cfg.signal, cfg.k, cfg.t.unwrap_or(cfg.k), &mut rng).and_then(|draw| {
        rec.branch = Some(draw.branch);
        rec.support_size = Some(draw.support_size());
        let x = sample_covariates(inst, m, &mut rng);
        run_trial(pre, &x, &DVector::from_vec(draw.w_star), tols)
    });
    match result {
        Ok(v) => {
            rec.outcome = Some(v.outcome);
            rec.objective_gap = Some(v.objective_at_wstar - v.objective_at_solution);
            rec.recovery_error = Some(v.recovery_error);
        }
        Err(e) => rec.error = Some(e.to_string()),
    }
    rec
}

/// Runs every (preconditioner, m) cell. Trial `t` of cell `c` draws from
/// `seeds::trial_rng(seed, c, t)`, so results do not depend on scheduling.
pub fn run_failure_experiment(cfg: &ExperimentConfig) -> Result<FailureReport> {
    cfg.validate()?;
    let inst = cfg.build_instance()?;
    let n = inst.n();
    let tols = cfg.tolerances();
    let specs = cfg.precond_specs()?;
    let mut prepared = Vec::with_capacity(specs.len());
    for (i, spec) in specs.iter().enumerate() {
        let p = build_preconditioner(&inst, spec, seeds::derive(cfg.seed, PRECOND_TAG + i as u64))?;
        prepared.push((p.label.clone(), PreparedPreconditioner::new(&p.s)?));
    }

    let cells: Vec<(usize, usize, usize)> = (0..prepared.len())
        .flat_map(|p| cfg.m_list.iter().map(move |&m| (p, m)))
        .enumerate()
        .map(|(c, (p, m))| (c, p, m))
        .collect();
    let mut summaries = Vec::with_capacity(cells.len());
    let mut all_trials = Vec::with_capacity(cells.len() * cfg.trials);
    for &(cell, p, m) in &cells {
        let (label, pre) = &prepared[p];
        let start = Instant::now();
        let trials: Vec<TrialRecord> = (0..cfg.trials)
            .into_par_iter()
            .map(|t| one_trial(&inst, pre, cfg, tols, cell, m, t, label))
            .collect();
        let mut summary = CellSummary::from_trials(cell, label, m, n, &trials);
        if cfg.record_wall_time {
            summary.wall_time_s = Some(start.elapsed().as_secs_f64());
        }
        log::info!(
            "cell {cell} ({label}, m = {m}): failure {:.3}, success {:.3}, ambiguous {:.3}",
            summary.failure_rate,
            summary.success_rate,
            summary.ambiguous_rate
        );
        summaries.push(summary);
        all_trials.extend(trials);
    }

    let assertions = cfg
        .assertions
        .iter()
        .map(|a| CellAssertion::parse(a).map(|p| p.evaluate(a, &summaries)))
        .collect::<Result<Vec<_>>>()?;
    let monotone = monotone_check(&summaries, &PrecondSpec::Identity.to_string(), cfg.assert_monotone);
    Ok(FailureReport {
        schema_version: SCHEMA_VERSION,
        config: cfg.clone(),
        instance: InstanceSummary::of(&inst),
        cells: summaries,
        trials: all_trials,
        assertions,
        monotone,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> ExperimentConfig {
        ExperimentConfig::from_toml(
            r#"
            isotropic_n = 12
            signal = "sparse"
            k = 2
            preconditioners = ["identity"]
            m_list = [12]
            trials = 6
            seed = 3
            assertions = ["failure <= 0 @ m=12 precond=identity"]
            "#,
        )
        .unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(ExperimentConfig::from_toml("signal = \"sparse\"\nk = 1\npreconditioners = []\nm_list = []\ntrials = 1\nseed = 0").is_err());
        let mut cfg = small_config();
        cfg.trials = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = small_config();
        cfg.construction_n = Some(16);
        assert!(cfg.validate().is_err());
        assert!(ExperimentConfig::from_toml("bogus = 1").is_err());
    }

    #[test]
    fn assertion_parsing() {
        let a = CellAssertion::parse("failure >= 0.8 @ m=32 precond=sqrt").unwrap();
        assert_eq!(a.metric, Metric::Failure);
        assert_eq!(a.comparison, Comparison::AtLeast);
        assert_eq!((a.value, a.m, a.preconditioner.as_deref()), (0.8, Some(32), Some("sqrt")));
        assert!(CellAssertion::parse("failure > 0.8").is_err());
        assert!(CellAssertion::parse("speed >= 1").is_err());
    }

    #[test]
    fn square_invertible_design_never_fails() {
        let report = run_failure_experiment(&small_config()).unwrap();
        let c = &report.cells[0];
        assert_eq!(c.failures, 0);
        assert_eq!(c.failures + c.successes + c.ambiguous, c.trials);
        assert_eq!(c.failure_rate + c.success_rate + c.ambiguous_rate, 1.0);
        assert!(report.all_passed());
    }

    #[test]
    fn trials_are_reproducible_in_isolation() {
        let cfg = small_config();
        let report = run_failure_experiment(&cfg).unwrap();
        let inst = cfg.build_instance().unwrap();
        let pre = PreparedPreconditioner::new(&nalgebra::DMatrix::identity(12, 12)).unwrap();
        let again = one_trial(&inst, &pre, &cfg, cfg.tolerances(), 0, 12, 4, "identity");
        assert_eq!(again, report.trials[4]);
    }

    #[test]
    fn assertion_without_matching_cell_fails() {
        let r = CellAssertion::parse("failure >= 0.5 @ m=99").unwrap().evaluate("x", &[]);
        assert!(!r.passed);
        assert_eq!(r.cells_checked, 0);
    }

    #[test]
    fn monotone_check_flags_increase() {
        let mk = |m, failures| CellSummary::from_trials(0, "identity", m, 100, &{
            (0..50)
                .map(|t| TrialRecord {
                    cell: 0,
                    trial: t,
                    preconditioner: "identity".into(),
                    m,
                    outcome: Some(if t < failures { Outcome::Failure } else { Outcome::Success }),
                    error: None,
                    branch: None,
                    support_size: None,
                    objective_gap: None,
                    recovery_error: None,
                })
                .collect::<Vec<_>>()
        });
        let ok = monotone_check(&[mk(10, 40), mk(20, 38), mk(40, 0)], "identity", true).unwrap();
        assert!(ok.passed);
        let bad = monotone_check(&[mk(10, 5), mk(20, 45)], "identity", true).unwrap();
        assert_eq!(bad.violations, vec![(10, 20)]);
    }
}
