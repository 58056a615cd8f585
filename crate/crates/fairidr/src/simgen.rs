//! Synthetic data-generating processes and the Monte Carlo replication
//! harness.
//!
//! Four scenario families are supported. Covariates are independent standard
//! normals truncated to `[-10, 10]` (dimension 3, 3, 30, 30 per case); the
//! sensitive attribute follows `P(S=1|X) = X₁²/(2X₁² + X₂²)`; cases 3 and 4
//! draw the group label from a logistic link in `(X₃, X₄, X₅², S)` while
//! cases 1 and 2 carry a constant label. Outcomes are `R = g(·)·A + ξ` with
//! standard normal noise, so the true effect is `δ = 2g`.
//!
//! A scenario runs `replications` independent seeded fits; each replication
//! generates fresh train/validation/test data, fits the constrained rule,
//! and reports UF / CUF / PV on the test set against the true effect.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cate::{fit_cate, CateError, RegressorSpec};
use crate::dataset::{split, Dataset, DatasetError, Sample, SplitSpec};
use crate::fairness::{fit_fair_rule_with_cate, FairnessError, FairnessMode, SolverConfig};
use crate::policy::{
    apply_rule, format_sig6, metrics_csv_header, metrics_csv_row, policy_value_true, MetricError, MetricsReport,
};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {reason}")]
    InvalidScenario { reason: String },
    #[error("scenario file: {0}")]
    Config(String),
    #[error("all {n} replications failed; first error: {first}")]
    AllReplicationsFailed { n: u32, first: String },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Cate(#[from] CateError),
    #[error(transparent)]
    Fairness(#[from] FairnessError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Covariate dimension of each simulation case.
pub fn case_dim(case_id: u8) -> Result<usize, SimError> {
    match case_id {
        1 | 2 => Ok(3),
        3 | 4 => Ok(30),
        other => Err(SimError::InvalidScenario { reason: format!("unknown case {other}") }),
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// True conditional average treatment effect of a simulation case.
pub fn oracle_cate(case_id: u8, x: &[f64], s: u8, l: i64) -> f64 {
    let s = f64::from(s);
    let l = l as f64;
    match case_id {
        1 => 2.0 * (((x[0] - x[1]).abs() + 0.5) * sign(x[0] - x[1]) + s),
        2 => 2.0 * ((s * (x[0] - x[1]).powi(2) + 0.5) * sign(x[0] - x[1] * x[1]) + s),
        3 => 2.0 * (x[0] - x[1] * x[1] + (x[2] * x[3]).sin() + (x[4].abs() + 0.1).ln() - 2.0 * s + l),
        4 => 2.0 * (x[0] * x[1] + x[2].exp() + x[3].abs() + x[4] + 2.0 * s + l),
        other => panic!("unknown case {other}"),
    }
}

fn truncated_std_normal(rng: &mut ChaCha8Rng) -> f64 {
    // Rejection sampling; the acceptance probability at bound 10 is ~1.
    loop {
        let v: f64 = rng.sample(StandardNormal);
        if v.abs() <= 10.0 {
            return v;
        }
    }
}

/// Draws one seeded dataset from a simulation case.
pub fn generate(case_id: u8, n: usize, seed: u64) -> Result<Dataset, SimError> {
    let p = case_dim(case_id)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(n);
    for _ in 0..n {
        let x: Vec<f64> = (0..p).map(|_| truncated_std_normal(&mut rng)).collect();
        let denom = 2.0 * x[0] * x[0] + x[1] * x[1];
        let p_s = if denom > 0.0 { x[0] * x[0] / denom } else { 0.5 };
        let s = u8::from(rng.random_bool(p_s));
        let l = if case_id >= 3 {
            let logit = 1.0 - 2.0 * x[2] + x[3] - 2.0 * x[4] * x[4] - f64::from(s);
            let p_l = 1.0 / (1.0 + logit.exp());
            i64::from(rng.random_bool(p_l))
        } else {
            0
        };
        let a: i8 = if rng.random_bool(0.5) { 1 } else { -1 };
        let noise: f64 = rng.sample(StandardNormal);
        let r = oracle_cate(case_id, &x, s, l) / 2.0 * f64::from(a) + noise;
        samples.push(Sample::new(x, s, l, a, r));
    }
    Ok(Dataset::new(samples)?)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of replication `rep` derived from the master seed: two SplitMix64
/// rounds, so replications can run in any order or in parallel.
pub fn replication_seed(master: u64, rep: u32) -> u64 {
    splitmix64(master ^ splitmix64(u64::from(rep).wrapping_add(1)))
}

/// One scenario: a case, sample sizes, tolerance, mode, and estimator
/// settings. `reg.seed` and `solver.epsilon` are overridden per replication
/// and per sweep point respectively.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub case_id: u8,
    /// Combined training + validation size (split 4/5 and 1/5).
    pub n: usize,
    pub n_test: usize,
    pub replications: u32,
    pub epsilon: f64,
    pub mode: FairnessMode,
    pub seed: u64,
    pub reg: RegressorSpec,
    pub solver: SolverConfig,
}

impl ScenarioSpec {
    pub fn new(case_id: u8, n: usize, epsilon: f64, mode: FairnessMode, seed: u64) -> Self {
        ScenarioSpec {
            case_id,
            n,
            n_test: 1000,
            replications: 200,
            epsilon,
            mode,
            seed,
            reg: RegressorSpec::relu(seed),
            solver: SolverConfig::with_epsilon(epsilon),
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        case_dim(self.case_id)?;
        if self.n < 5 {
            return Err(SimError::InvalidScenario { reason: format!("n = {} is too small to split", self.n) });
        }
        if self.n_test == 0 {
            return Err(SimError::InvalidScenario { reason: "n_test must be positive".into() });
        }
        if self.replications == 0 {
            return Err(SimError::InvalidScenario { reason: "replications must be positive".into() });
        }
        if self.epsilon < 0.0 {
            return Err(SimError::InvalidScenario { reason: "epsilon must be non-negative".into() });
        }
        Ok(())
    }

    /// Non-fatal configuration warnings (the case/mode pairing is advisory).
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        match (self.case_id, self.mode) {
            (1 | 2, FairnessMode::Cdp) => out.push(format!(
                "case {} has a constant group label and is usually run in dp mode; proceeding with cdp",
                self.case_id
            )),
            (3 | 4, FairnessMode::Dp) => out.push(format!(
                "case {} has a non-trivial group label and is usually run in cdp mode; proceeding with dp",
                self.case_id
            )),
            _ => {}
        }
        out
    }

    /// Parses a flat key-value scenario file (TOML syntax).
    pub fn from_toml_str(text: &str) -> Result<ScenarioSpec, SimError> {
        let file: ScenarioFile = toml::from_str(text).map_err(|e| SimError::Config(e.to_string()))?;
        file.into_spec()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<ScenarioSpec, SimError> {
        let text = std::fs::read_to_string(path)?;
        ScenarioSpec::from_toml_str(&text)
    }
}

fn default_n_test() -> usize {
    1000
}

fn default_replications() -> u32 {
    200
}

/// Flat on-disk scenario keys. Estimator and solver keys are optional and
/// fall back to the module defaults.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    case: u8,
    n: usize,
    #[serde(default = "default_n_test")]
    n_test: usize,
    #[serde(default = "default_replications")]
    replications: u32,
    #[serde(default)]
    epsilon: f64,
    mode: String,
    #[serde(default)]
    seed: u64,
    reg_kind: Option<String>,
    width: Option<usize>,
    depth: Option<usize>,
    output_clip: Option<f64>,
    learning_rate: Option<f64>,
    epochs: Option<usize>,
    batch_size: Option<usize>,
    ridge_lambda: Option<f64>,
    basis_degree: Option<usize>,
    bandwidth: Option<f64>,
    bracket: Option<f64>,
    bracket_growth: Option<f64>,
    max_bracket_doublings: Option<u32>,
    tol_omega: Option<f64>,
    tol_g: Option<f64>,
    max_iter: Option<u32>,
}

impl ScenarioFile {
    fn into_spec(self) -> Result<ScenarioSpec, SimError> {
        let mode = match self.mode.as_str() {
            "dp" => FairnessMode::Dp,
            "cdp" => FairnessMode::Cdp,
            other => return Err(SimError::Config(format!("mode must be \"dp\" or \"cdp\", got {other:?}"))),
        };
        let mut reg = match self.reg_kind.as_deref() {
            None | Some("relu-net") => RegressorSpec::relu(self.seed),
            Some("ridge-basis") => RegressorSpec::ridge(self.seed),
            Some(other) => {
                return Err(SimError::Config(format!(
                    "reg_kind must be \"relu-net\" or \"ridge-basis\", got {other:?}"
                )))
            }
        };
        if let Some(v) = self.width {
            reg.width = v;
        }
        if let Some(v) = self.depth {
            reg.depth = v;
        }
        if let Some(v) = self.output_clip {
            reg.output_clip = Some(v);
        }
        if let Some(v) = self.learning_rate {
            reg.learning_rate = v;
        }
        if let Some(v) = self.epochs {
            reg.epochs = v;
        }
        if let Some(v) = self.batch_size {
            reg.batch_size = v;
        }
        if let Some(v) = self.ridge_lambda {
            reg.ridge_lambda = v;
        }
        if let Some(v) = self.basis_degree {
            reg.basis_degree = v;
        }

        let mut solver = SolverConfig::with_epsilon(self.epsilon);
        solver.bandwidth = self.bandwidth;
        solver.bracket = self.bracket;
        if let Some(v) = self.bracket_growth {
            solver.bracket_growth = v;
        }
        if let Some(v) = self.max_bracket_doublings {
            solver.max_bracket_doublings = v;
        }
        solver.tol_omega = self.tol_omega;
        if let Some(v) = self.tol_g {
            solver.tol_g = v;
        }
        if let Some(v) = self.max_iter {
            solver.max_iter = v;
        }

        let spec = ScenarioSpec {
            case_id: self.case,
            n: self.n,
            n_test: self.n_test,
            replications: self.replications,
            epsilon: self.epsilon,
            mode,
            seed: self.seed,
            reg,
            solver,
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Metrics of one replication at one tolerance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRow {
    pub rep: u32,
    pub seed: u64,
    pub epsilon: f64,
    pub report: MetricsReport,
}

/// Sample mean and sample standard deviation across replications.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub sd: f64,
}

fn summarize(values: &[f64]) -> MetricSummary {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = if values.len() < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    MetricSummary { mean, sd }
}

/// Aggregated metrics over the completed replications of one scenario point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationSummary {
    pub uf: MetricSummary,
    pub cuf: MetricSummary,
    pub pv: MetricSummary,
    pub n_ok: u32,
    pub n_failed: u32,
}

/// Rows and summary for one `(scenario, epsilon)` point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioOutcome {
    pub epsilon: f64,
    pub summary: ReplicationSummary,
    pub rows: Vec<ReplicationRow>,
    pub failures: Vec<(u32, String)>,
}

/// Runs one replication end to end for every tolerance in `epsilons`,
/// fitting the CATE once (it does not depend on the tolerance).
fn run_replication(spec: &ScenarioSpec, rep: u32, epsilons: &[f64]) -> Result<Vec<ReplicationRow>, SimError> {
    let seed_r = replication_seed(spec.seed, rep);
    let mut seeder = ChaCha8Rng::seed_from_u64(seed_r);
    let data_seed = seeder.next_u64();
    let test_seed = seeder.next_u64();
    let split_seed = seeder.next_u64();
    let reg_seed = seeder.next_u64();

    let data = generate(spec.case_id, spec.n, data_seed)?;
    let test = generate(spec.case_id, spec.n_test, test_seed)?;
    let (train, val, _) = split(&data, &SplitSpec::new(0.8, 0.2, split_seed))?;

    let mut reg = spec.reg.clone();
    reg.seed = reg_seed;
    let cate = fit_cate(&train, &val, &reg)?;

    let mut rows = Vec::with_capacity(epsilons.len());
    for &epsilon in epsilons {
        let mut cfg = spec.solver.clone();
        cfg.epsilon = epsilon;
        let rule = fit_fair_rule_with_cate(&train, cate.clone(), &cfg, spec.mode)?;
        let decisions = apply_rule(&rule, &test)?;
        let case_id = spec.case_id;
        let pv = policy_value_true(&decisions, &test, |s| oracle_cate(case_id, &s.x, s.s, s.l))?;
        let report = MetricsReport::compute(&decisions, &test, pv)?;
        rows.push(ReplicationRow { rep, seed: seed_r, epsilon, report });
    }
    Ok(rows)
}

fn outcome_from_rows(epsilon: f64, rows: Vec<ReplicationRow>, failures: Vec<(u32, String)>) -> ScenarioOutcome {
    let ufs: Vec<f64> = rows.iter().map(|r| r.report.uf).collect();
    let cufs: Vec<f64> = rows.iter().map(|r| r.report.cuf).collect();
    let pvs: Vec<f64> = rows.iter().map(|r| r.report.pv).collect();
    ScenarioOutcome {
        epsilon,
        summary: ReplicationSummary {
            uf: summarize(&ufs),
            cuf: summarize(&cufs),
            pv: summarize(&pvs),
            n_ok: rows.len() as u32,
            n_failed: failures.len() as u32,
        },
        rows,
        failures,
    }
}

/// Runs the scenario once per tolerance with shared replication seeds, so
/// sweep points are paired. Failing replications are recorded and excluded
/// from every point. Replications run in parallel on the current rayon pool;
/// outputs are ordered by replication index and bit-reproducible.
pub fn epsilon_sweep(spec: &ScenarioSpec, epsilons: &[f64]) -> Result<Vec<ScenarioOutcome>, SimError> {
    spec.validate()?;
    if epsilons.is_empty() {
        return Err(SimError::InvalidScenario { reason: "empty epsilon list".into() });
    }
    if epsilons.windows(2).any(|w| w[0] > w[1]) {
        return Err(SimError::InvalidScenario { reason: "epsilons must be sorted ascending".into() });
    }
    if let Some(bad) = epsilons.iter().find(|&&e| e < 0.0) {
        return Err(SimError::InvalidScenario { reason: format!("epsilon must be non-negative, got {bad}") });
    }

    let results: Vec<(u32, Result<Vec<ReplicationRow>, SimError>)> = (0..spec.replications)
        .into_par_iter()
        .map(|rep| (rep, run_replication(spec, rep, epsilons)))
        .collect();

    let mut per_eps: Vec<Vec<ReplicationRow>> = vec![Vec::new(); epsilons.len()];
    let mut failures: Vec<(u32, String)> = Vec::new();
    for (rep, result) in results {
        match result {
            Ok(rows) => {
                for (i, row) in rows.into_iter().enumerate() {
                    per_eps[i].push(row);
                }
            }
            Err(e) => failures.push((rep, e.to_string())),
        }
    }
    if per_eps[0].is_empty() {
        let first = failures.first().map(|(_, e)| e.clone()).unwrap_or_default();
        return Err(SimError::AllReplicationsFailed { n: spec.replications, first });
    }

    Ok(epsilons
        .iter()
        .zip(per_eps)
        .map(|(&e, rows)| outcome_from_rows(e, rows, failures.clone()))
        .collect())
}

/// Runs the scenario at its own tolerance.
pub fn run_scenario(spec: &ScenarioSpec) -> Result<ScenarioOutcome, SimError> {
    Ok(epsilon_sweep(spec, &[spec.epsilon])?.pop().expect("one outcome per epsilon"))
}

/// Group labels appearing in any per-group table of the outcomes, sorted.
pub fn outcome_labels(outcomes: &[ScenarioOutcome]) -> Vec<i64> {
    let mut labels = BTreeSet::new();
    for o in outcomes {
        for row in &o.rows {
            labels.extend(row.report.per_group_uf.keys().copied());
        }
    }
    labels.into_iter().collect()
}

/// Per-replication CSV: one row per `(epsilon, replication)`.
pub fn write_rows_csv<W: Write>(mut w: W, spec: &ScenarioSpec, outcomes: &[ScenarioOutcome]) -> std::io::Result<()> {
    let labels = outcome_labels(outcomes);
    writeln!(w, "{}", metrics_csv_header(&labels))?;
    let case = spec.case_id.to_string();
    let method = format!("{}-idr", spec.mode);
    for outcome in outcomes {
        for row in &outcome.rows {
            writeln!(
                w,
                "{}",
                metrics_csv_row(&case, &method, row.epsilon, spec.n, row.seed, &row.report, &labels)
            )?;
        }
    }
    Ok(())
}

/// Summary CSV: one row per `(epsilon, metric)`.
pub fn write_summary_csv<W: Write>(mut w: W, spec: &ScenarioSpec, outcomes: &[ScenarioOutcome]) -> std::io::Result<()> {
    writeln!(w, "case,method,epsilon,n,metric,mean,sd,n_ok")?;
    let method = format!("{}-idr", spec.mode);
    for o in outcomes {
        for (metric, ms) in [("uf", o.summary.uf), ("cuf", o.summary.cuf), ("pv", o.summary.pv)] {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                spec.case_id,
                method,
                format_sig6(o.epsilon),
                spec.n,
                metric,
                format_sig6(ms.mean),
                format_sig6(ms.sd),
                o.summary.n_ok
            )?;
        }
    }
    Ok(())
}
