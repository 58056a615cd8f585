//! Rule application and evaluation metrics: unfairness level (UF),
//! conditional unfairness level (CUF), and policy value (PV).
//!
//! UF is the absolute gap in positive-decision proportions across the two
//! sensitive groups, `|P̂(D=+1|S=1) − P̂(D=+1|S=0)|`; CUF is the unweighted
//! mean of the per-group UF over groups observed in the test set. PV is the
//! average treatment-effect mass captured by positive decisions,
//! `N⁻¹ Σ_j δ(Z_j)·I(D_j = +1)`, with `δ` either the generating model's
//! true effect or a fitted estimate.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cate::{CateError, CateModel};
use crate::dataset::{Dataset, Sample};
use crate::fairness::{FairRule, FairnessError};

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("unfairness is undefined: no test rows with S = {s}")]
    MissingSensitiveValue { s: u8 },
    #[error("conditional unfairness is undefined: no group has both sensitive values")]
    NoEligibleGroups,
    #[error("decisions ({decisions}) and test rows ({rows}) differ in length")]
    LengthMismatch { decisions: usize, rows: usize },
    #[error(transparent)]
    Fairness(#[from] FairnessError),
    #[error(transparent)]
    Cate(#[from] CateError),
}

/// Decisions aligned with the rows of an evaluation dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decisions(Vec<i8>);

impl Decisions {
    pub fn new(values: Vec<i8>) -> Self {
        debug_assert!(values.iter().all(|&d| d == 1 || d == -1));
        Decisions(values)
    }

    pub fn as_slice(&self) -> &[i8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = i8> + '_ {
        self.0.iter().copied()
    }
}

/// Applies a fitted rule to every row of a dataset.
pub fn apply_rule(rule: &FairRule, ds: &Dataset) -> Result<Decisions, MetricError> {
    let values = ds.iter().map(|s| rule.decide_sample(s)).collect::<Result<Vec<_>, _>>()?;
    Ok(Decisions(values))
}

fn check_aligned(decisions: &Decisions, test: &Dataset) -> Result<(), MetricError> {
    if decisions.len() != test.len() {
        return Err(MetricError::LengthMismatch { decisions: decisions.len(), rows: test.len() });
    }
    Ok(())
}

fn rate_gap<'a>(rows: impl Iterator<Item = (&'a Sample, i8)>) -> Option<f64> {
    let mut n = [0usize; 2];
    let mut pos = [0usize; 2];
    for (sample, d) in rows {
        let s = sample.s as usize;
        n[s] += 1;
        if d == 1 {
            pos[s] += 1;
        }
    }
    if n[0] == 0 || n[1] == 0 {
        return None;
    }
    Some((pos[1] as f64 / n[1] as f64 - pos[0] as f64 / n[0] as f64).abs())
}

/// `|P̂(D=+1 | S=1) − P̂(D=+1 | S=0)|` over the whole test set.
pub fn unfairness(decisions: &Decisions, test: &Dataset) -> Result<f64, MetricError> {
    check_aligned(decisions, test)?;
    let rows = test.iter().zip(decisions.iter());
    match rate_gap(rows) {
        Some(uf) => Ok(uf),
        None => {
            let missing = if test.iter().any(|s| s.s == 1) { 0 } else { 1 };
            Err(MetricError::MissingSensitiveValue { s: missing })
        }
    }
}

/// Per-group UF and their unweighted mean. Groups missing one sensitive
/// value in the test set are excluded from the mean and listed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupUnfairness {
    pub cuf: f64,
    pub per_group: BTreeMap<i64, f64>,
    pub excluded: Vec<i64>,
}

pub fn conditional_unfairness(decisions: &Decisions, test: &Dataset) -> Result<GroupUnfairness, MetricError> {
    check_aligned(decisions, test)?;
    let labels: std::collections::BTreeSet<i64> = test.iter().map(|s| s.l).collect();
    let mut per_group = BTreeMap::new();
    let mut excluded = Vec::new();
    for l in labels {
        let rows = test.iter().zip(decisions.iter()).filter(|(s, _)| s.l == l);
        match rate_gap(rows) {
            Some(uf) => {
                per_group.insert(l, uf);
            }
            None => excluded.push(l),
        }
    }
    if per_group.is_empty() {
        return Err(MetricError::NoEligibleGroups);
    }
    let cuf = per_group.values().sum::<f64>() / per_group.len() as f64;
    Ok(GroupUnfairness { cuf, per_group, excluded })
}

/// Policy value against a known effect function:
/// `N⁻¹ Σ_j oracle(Z_j)·I(D_j = +1)`.
pub fn policy_value_true(
    decisions: &Decisions,
    test: &Dataset,
    oracle: impl Fn(&Sample) -> f64,
) -> Result<f64, MetricError> {
    check_aligned(decisions, test)?;
    let total: f64 = test
        .iter()
        .zip(decisions.iter())
        .filter(|(_, d)| *d == 1)
        .map(|(s, _)| oracle(s))
        .sum();
    Ok(total / test.len() as f64)
}

/// Policy value with the effect estimated by a CATE model:
/// `N⁻¹ Σ_j δ̂(Z_j)·I(D_j = +1)`.
pub fn policy_value_estimated(decisions: &Decisions, test: &Dataset, cate: &CateModel) -> Result<f64, MetricError> {
    check_aligned(decisions, test)?;
    let mut total = 0.0;
    for (s, d) in test.iter().zip(decisions.iter()) {
        if d == 1 {
            total += cate.predict_sample(s)?;
        }
    }
    Ok(total / test.len() as f64)
}

/// Both sides of the plug-in value identity
/// `2·V̂(D) − mean(m̂₁ + m̂₀) = mean(δ̂·D)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValueIdentity {
    pub lhs: f64,
    pub rhs: f64,
    pub gap: f64,
}

/// Evaluates the identity with the rule's own decisions and arm regressors;
/// the gap is zero up to floating point for any rule and dataset.
pub fn value_identity_check(ds: &Dataset, rule: &FairRule) -> Result<ValueIdentity, MetricError> {
    let n = ds.len() as f64;
    let mut value = 0.0;
    let mut arm_sum = 0.0;
    let mut rhs = 0.0;
    for sample in ds.iter() {
        let input = rule.cate.layout.build_sample(sample)?;
        let m1 = rule.cate.m1.predict(&input)?;
        let m0 = rule.cate.m0.predict(&input)?;
        let d = rule.decide_sample(sample)?;
        value += if d == 1 { m1 } else { m0 };
        arm_sum += m1 + m0;
        rhs += (m1 - m0) * f64::from(d);
    }
    let lhs = 2.0 * value / n - arm_sum / n;
    let rhs = rhs / n;
    Ok(ValueIdentity { lhs, rhs, gap: lhs - rhs })
}

/// Evaluation summary for one rule on one test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub uf: f64,
    pub cuf: f64,
    pub per_group_uf: BTreeMap<i64, f64>,
    pub excluded_groups: Vec<i64>,
    pub pv: f64,
    pub n_test: usize,
}

impl MetricsReport {
    pub fn compute(decisions: &Decisions, test: &Dataset, pv: f64) -> Result<MetricsReport, MetricError> {
        let uf = unfairness(decisions, test)?;
        let grouped = conditional_unfairness(decisions, test)?;
        Ok(MetricsReport {
            uf,
            cuf: grouped.cuf,
            per_group_uf: grouped.per_group,
            excluded_groups: grouped.excluded,
            pv,
            n_test: test.len(),
        })
    }
}

/// Decimal formatting at 6 significant digits, scientific outside
/// `[1e-4, 1e6)`; deterministic, so repeated runs emit identical bytes.
pub fn format_sig6(v: f64) -> String {
    if v == 0.0 {
        return "0.00000".to_string();
    }
    if !v.is_finite() {
        return v.to_string();
    }
    let mag = v.abs().log10().floor() as i32;
    if !(-4..6).contains(&mag) {
        return format!("{v:.5e}");
    }
    let decimals = (5 - mag).max(0) as usize;
    format!("{v:.decimals$}")
}

/// Header for per-replication metric rows; `labels` orders the per-group
/// UF columns.
pub fn metrics_csv_header(labels: &[i64]) -> String {
    let mut cols = vec![
        "case".to_string(),
        "method".to_string(),
        "epsilon".to_string(),
        "n".to_string(),
        "seed".to_string(),
        "uf".to_string(),
        "cuf".to_string(),
        "pv".to_string(),
    ];
    cols.extend(labels.iter().map(|l| format!("uf_l{l}")));
    cols.join(",")
}

/// One CSV row per `(method, epsilon, replication)`.
pub fn metrics_csv_row(
    case: &str,
    method: &str,
    epsilon: f64,
    n: usize,
    seed: u64,
    report: &MetricsReport,
    labels: &[i64],
) -> String {
    let mut cols = vec![
        case.to_string(),
        method.to_string(),
        format_sig6(epsilon),
        n.to_string(),
        seed.to_string(),
        format_sig6(report.uf),
        format_sig6(report.cuf),
        format_sig6(report.pv),
    ];
    for l in labels {
        match report.per_group_uf.get(l) {
            Some(uf) => cols.push(format_sig6(*uf)),
            None => cols.push(String::new()),
        }
    }
    cols.join(",")
}
