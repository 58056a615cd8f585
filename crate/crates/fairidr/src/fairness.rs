//! Group statistics, the smoothed constraint function, the multiplier
//! solver, and the deployable fairness-constrained rule.
//!
//! For each legitimate group `l`, the signed contrast
//! `ψ_l(s) = I(s=1)/π̂(1|l) − I(s=0)/π̂(0|l)` weights decisions so that
//!
//! ```text
//! Ĝ_l(ω) = n⁻¹ Σ_i ψ̂_l(S_i) · I(L_i = l) · Φ((δ̂(Z_i) − ω·ψ̂_l(S_i)) / h)
//! ```
//!
//! is a smoothed, non-increasing-in-`ω` estimate of the positive-decision
//! rate gap contributed by group `l`. The multiplier `ω̂_l` is chosen by a
//! three-case rule: zero when the unsmoothed gap at `ω = 0` is already
//! within tolerance, otherwise the bisection root of `Ĝ_l(ω) = ±ε` over an
//! expanding bracket `[-K, K]`. The fitted rule decides
//! `+1` iff `δ̂(z) − ω̂_l·ψ̂_l(s) > 0`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cate::{fit_cate, CateError, CateModel, RegressorSpec};
use crate::dataset::{group_counts, Dataset, Sample};

/// Group label under which DP mode pools the whole sample.
pub const POOLED_LABEL: i64 = 0;

#[derive(Debug, Error)]
pub enum FairnessError {
    #[error("degenerate group l = {l}: one sensitive value is absent, the contrast is undefined")]
    DegenerateGroup { l: i64 },
    #[error("unknown group l = {l}")]
    UnknownGroup { l: i64 },
    #[error("empty dataset")]
    EmptyDataset,
    #[error("no root for group l = {l}: target {target} not straddled on [-{bracket}, {bracket}] (G at ends: {g_lo}, {g_hi})")]
    NoRoot { l: i64, target: f64, bracket: f64, g_lo: f64, g_hi: f64 },
    #[error("monotonicity violation for group l = {l}: G({omega_a}) = {g_a} < G({omega_b}) = {g_b} with omega_a < omega_b")]
    MonotonicityViolation { l: i64, omega_a: f64, omega_b: f64, g_a: f64, g_b: f64 },
    #[error("invalid solver config: {reason}")]
    InvalidConfig { reason: String },
    #[error(transparent)]
    Cate(#[from] CateError),
}

/// Standard normal CDF.
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-x * std::f64::consts::FRAC_1_SQRT_2)
}

/// Empirical sensitive-attribute frequencies per group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupStat {
    /// Observations in the group (`N_l`).
    pub n: usize,
    /// Observations with `S = 1`.
    pub s1: usize,
}

impl GroupStat {
    pub fn pi1(&self) -> f64 {
        self.s1 as f64 / self.n as f64
    }

    pub fn pi0(&self) -> f64 {
        (self.n - self.s1) as f64 / self.n as f64
    }

    /// `ψ(s)`: `1/π̂₁` for `s = 1`, `−1/π̂₀` for `s = 0`.
    pub fn psi(&self, s: u8) -> f64 {
        if s == 1 {
            1.0 / self.pi1()
        } else {
            -1.0 / self.pi0()
        }
    }
}

/// Per-group `(N_l, π̂(1|l), π̂(0|l))`, keyed by the external group label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupStats {
    groups: BTreeMap<i64, GroupStat>,
}

impl GroupStats {
    pub fn get(&self, l: i64) -> Option<&GroupStat> {
        self.groups.get(&l)
    }

    pub fn labels(&self) -> impl Iterator<Item = i64> + '_ {
        self.groups.keys().copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (i64, &GroupStat)> {
        self.groups.iter().map(|(l, g)| (*l, g))
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    /// Pools all samples into one group under [`POOLED_LABEL`].
    pub fn pooled(ds: &Dataset) -> Result<GroupStats, FairnessError> {
        if ds.is_empty() {
            return Err(FairnessError::EmptyDataset);
        }
        let s1 = ds.iter().filter(|s| s.s == 1).count();
        if s1 == 0 || s1 == ds.len() {
            return Err(FairnessError::DegenerateGroup { l: POOLED_LABEL });
        }
        let mut groups = BTreeMap::new();
        groups.insert(POOLED_LABEL, GroupStat { n: ds.len(), s1 });
        Ok(GroupStats { groups })
    }
}

/// `π̂(s|l) = count(S = s, L = l) / N_l` for every observed group, rejecting
/// groups where one sensitive value is absent.
pub fn estimate_group_stats(ds: &Dataset) -> Result<GroupStats, FairnessError> {
    if ds.is_empty() {
        return Err(FairnessError::EmptyDataset);
    }
    let mut groups = BTreeMap::new();
    for (l, c) in group_counts(ds) {
        if c.s1 == 0 || c.s0 == 0 {
            return Err(FairnessError::DegenerateGroup { l });
        }
        groups.insert(l, GroupStat { n: c.n, s1: c.s1 });
    }
    Ok(GroupStats { groups })
}

/// `ψ_l(s)` for a known group.
pub fn psi(stats: &GroupStats, l: i64, s: u8) -> Result<f64, FairnessError> {
    stats.get(l).map(|g| g.psi(s)).ok_or(FairnessError::UnknownGroup { l })
}

/// Rows of one group paired with their contrast values; the normalizer `n`
/// is the full sample size, so rows outside the group contribute zero.
struct GroupCurve {
    n_total: usize,
    rows: Vec<(f64, f64)>, // (psi_i, delta_i)
}

impl GroupCurve {
    fn build(ds: &Dataset, deltas: &[f64], stat: &GroupStat, l: i64, pooled: bool) -> Self {
        let rows = ds
            .iter()
            .zip(deltas)
            .filter(|(s, _)| pooled || s.l == l)
            .map(|(s, &d)| (stat.psi(s.s), d))
            .collect();
        GroupCurve { n_total: ds.len(), rows }
    }

    /// Smoothed constraint value; summation is sequential in row order so
    /// results are reproducible.
    fn g(&self, omega: f64, h: f64) -> f64 {
        let mut acc = 0.0;
        for &(psi, delta) in &self.rows {
            acc += psi * std_normal_cdf((delta - omega * psi) / h);
        }
        acc / self.n_total as f64
    }

    /// Unsmoothed constraint at `ω = 0` with a strict decision indicator.
    fn g_indicator(&self) -> f64 {
        let mut acc = 0.0;
        for &(psi, delta) in &self.rows {
            if delta > 0.0 {
                acc += psi;
            }
        }
        acc / self.n_total as f64
    }
}

fn sample_std(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ssq = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
    (ssq / (n - 1.0)).sqrt()
}

/// Solver settings. `bandwidth` and `bracket` (the initial half-width `K`)
/// resolve automatically when unset: `h = σ̂_δ·n^(−1/6)` and
/// `K = 10·σ̂_δ·max(1/π̂₁, 1/π̂₀)`, with `σ̂_δ` the sample standard deviation
/// of `δ̂` over the training rows (replaced by 1 when `δ̂` is constant).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub epsilon: f64,
    pub bandwidth: Option<f64>,
    pub bracket: Option<f64>,
    pub bracket_growth: f64,
    pub max_bracket_doublings: u32,
    pub tol_omega: Option<f64>,
    pub tol_g: f64,
    pub max_iter: u32,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            epsilon: 0.0,
            bandwidth: None,
            bracket: None,
            bracket_growth: 2.0,
            max_bracket_doublings: 10,
            tol_omega: None,
            tol_g: 1e-6,
            max_iter: 200,
        }
    }
}

impl SolverConfig {
    pub fn with_epsilon(epsilon: f64) -> Self {
        SolverConfig { epsilon, ..SolverConfig::default() }
    }

    fn validate(&self) -> Result<(), FairnessError> {
        let bad = |reason: String| Err(FairnessError::InvalidConfig { reason });
        if self.epsilon < 0.0 {
            return bad(format!("epsilon must be non-negative, got {}", self.epsilon));
        }
        if !(self.bracket_growth > 1.0) {
            return bad(format!("bracket_growth must exceed 1, got {}", self.bracket_growth));
        }
        if !(self.tol_g > 0.0) {
            return bad(format!("tol_g must be positive, got {}", self.tol_g));
        }
        if self.max_iter == 0 {
            return bad("max_iter must be positive".into());
        }
        for (name, v) in [("bandwidth", self.bandwidth), ("bracket", self.bracket), ("tol_omega", self.tol_omega)] {
            if let Some(v) = v {
                if !(v > 0.0) {
                    return bad(format!("{name} must be positive, got {v}"));
                }
            }
        }
        Ok(())
    }

    fn resolve_bandwidth(&self, sigma_delta: f64, n: usize) -> f64 {
        self.bandwidth.unwrap_or_else(|| {
            let s = if sigma_delta > 0.0 { sigma_delta } else { 1.0 };
            s * (n as f64).powf(-1.0 / 6.0)
        })
    }

    fn resolve_bracket(&self, sigma_delta: f64, stat: &GroupStat) -> f64 {
        self.bracket.unwrap_or_else(|| {
            let s = if sigma_delta > 0.0 { sigma_delta } else { 1.0 };
            10.0 * s * (1.0 / stat.pi1()).max(1.0 / stat.pi0())
        })
    }
}

/// Which branch of the three-case rule produced the multiplier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OmegaCase {
    /// `|constraint at 0| ≤ ε`: no perturbation needed.
    Interior,
    /// Constraint exceeded `+ε`: root of `Ĝ_l(ω) = +ε` with `ω > 0`.
    Upper,
    /// Constraint below `−ε`: root of `Ĝ_l(ω) = −ε` with `ω < 0`.
    Lower,
}

/// Which stopping criterion ended the bisection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    Interior,
    ResidualTol,
    BracketTol,
    MaxIter,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OmegaDiagnostics {
    pub case: OmegaCase,
    /// Unsmoothed constraint value at `ω = 0`.
    pub g_indicator: f64,
    /// Tolerance the solver was run with (after any per-group scaling).
    pub epsilon_effective: f64,
    /// `±ε` (0 in the interior case).
    pub target: f64,
    /// `|Ĝ_l(ω̂) − target|` (0 in the interior case).
    pub residual: f64,
    pub iterations: u32,
    pub stop: StopReason,
    pub bandwidth: f64,
    /// Bracket half-width after any expansion.
    pub bracket: f64,
}

/// Bandwidth the solver would resolve for this data under `cfg`.
pub fn resolved_bandwidth(ds: &Dataset, cate: &CateModel, cfg: &SolverConfig) -> Result<f64, FairnessError> {
    if ds.is_empty() {
        return Err(FairnessError::EmptyDataset);
    }
    let deltas = cate.deltas(ds)?;
    Ok(cfg.resolve_bandwidth(sample_std(&deltas), ds.len()))
}

/// Smoothed constraint `Ĝ_l(ω)`; the average runs over all rows with rows
/// outside group `l` contributing zero.
pub fn g_hat(
    ds: &Dataset,
    cate: &CateModel,
    stats: &GroupStats,
    l: i64,
    omega: f64,
    h: f64,
) -> Result<f64, FairnessError> {
    if !(h > 0.0) {
        return Err(FairnessError::InvalidConfig { reason: format!("bandwidth must be positive, got {h}") });
    }
    let stat = stats.get(l).ok_or(FairnessError::UnknownGroup { l })?;
    let deltas = cate.deltas(ds)?;
    Ok(GroupCurve::build(ds, &deltas, stat, l, false).g(omega, h))
}

/// `Ĝ_l` sampled at many `ω` values, computing `δ̂` once.
pub fn g_hat_samples(
    ds: &Dataset,
    cate: &CateModel,
    stats: &GroupStats,
    l: i64,
    omegas: &[f64],
    h: f64,
) -> Result<Vec<f64>, FairnessError> {
    if !(h > 0.0) {
        return Err(FairnessError::InvalidConfig { reason: format!("bandwidth must be positive, got {h}") });
    }
    let stat = stats.get(l).ok_or(FairnessError::UnknownGroup { l })?;
    let deltas = cate.deltas(ds)?;
    let curve = GroupCurve::build(ds, &deltas, stat, l, false);
    Ok(omegas.iter().map(|&w| curve.g(w, h)).collect())
}

/// Unsmoothed constraint at `ω = 0` (strict `δ̂ > 0` indicator).
pub fn g_indicator(ds: &Dataset, cate: &CateModel, stats: &GroupStats, l: i64) -> Result<f64, FairnessError> {
    let stat = stats.get(l).ok_or(FairnessError::UnknownGroup { l })?;
    let deltas = cate.deltas(ds)?;
    Ok(GroupCurve::build(ds, &deltas, stat, l, false).g_indicator())
}

struct CurveSolution {
    omega: f64,
    diag: OmegaDiagnostics,
}

fn solve_on_curve(
    curve: &GroupCurve,
    l: i64,
    epsilon: f64,
    h: f64,
    k0: f64,
    cfg: &SolverConfig,
) -> Result<CurveSolution, FairnessError> {
    let g0 = curve.g_indicator();
    if g0.abs() <= epsilon {
        return Ok(CurveSolution {
            omega: 0.0,
            diag: OmegaDiagnostics {
                case: OmegaCase::Interior,
                g_indicator: g0,
                epsilon_effective: epsilon,
                target: 0.0,
                residual: 0.0,
                iterations: 0,
                stop: StopReason::Interior,
                bandwidth: h,
                bracket: k0,
            },
        });
    }
    let (case, target) = if g0 > epsilon { (OmegaCase::Upper, epsilon) } else { (OmegaCase::Lower, -epsilon) };
    let tol_g = cfg.tol_g;
    let tol_omega = cfg.tol_omega.unwrap_or(1e-10 * k0);

    // Expand the bracket until the non-increasing curve straddles the target.
    let mut k = k0;
    let mut g_lo = curve.g(-k, h);
    let mut g_hi = curve.g(k, h);
    let mut doublings = 0;
    while !(g_lo >= target && target >= g_hi) {
        if doublings >= cfg.max_bracket_doublings {
            return Err(FairnessError::NoRoot { l, target, bracket: k, g_lo, g_hi });
        }
        let wider = k * cfg.bracket_growth;
        let (ng_lo, ng_hi) = (curve.g(-wider, h), curve.g(wider, h));
        if ng_lo < g_lo - tol_g {
            return Err(FairnessError::MonotonicityViolation { l, omega_a: -wider, omega_b: -k, g_a: ng_lo, g_b: g_lo });
        }
        if ng_hi > g_hi + tol_g {
            return Err(FairnessError::MonotonicityViolation { l, omega_a: k, omega_b: wider, g_a: g_hi, g_b: ng_hi });
        }
        k = wider;
        g_lo = ng_lo;
        g_hi = ng_hi;
        doublings += 1;
    }

    let mut lo = -k;
    let mut hi = k;
    let mut omega = 0.5 * (lo + hi);
    let mut g_mid = curve.g(omega, h);
    let mut iterations: u32 = 0;
    let stop = loop {
        iterations += 1;
        if g_mid > g_lo + tol_g {
            return Err(FairnessError::MonotonicityViolation { l, omega_a: lo, omega_b: omega, g_a: g_lo, g_b: g_mid });
        }
        if g_mid < g_hi - tol_g {
            return Err(FairnessError::MonotonicityViolation { l, omega_a: omega, omega_b: hi, g_a: g_mid, g_b: g_hi });
        }
        if (g_mid - target).abs() <= tol_g {
            break StopReason::ResidualTol;
        }
        if g_mid > target {
            lo = omega;
            g_lo = g_mid;
        } else {
            hi = omega;
            g_hi = g_mid;
        }
        if hi - lo <= tol_omega {
            omega = 0.5 * (lo + hi);
            g_mid = curve.g(omega, h);
            break StopReason::BracketTol;
        }
        if iterations >= cfg.max_iter {
            break StopReason::MaxIter;
        }
        omega = 0.5 * (lo + hi);
        g_mid = curve.g(omega, h);
    };

    Ok(CurveSolution {
        omega,
        diag: OmegaDiagnostics {
            case,
            g_indicator: g0,
            epsilon_effective: epsilon,
            target,
            residual: (g_mid - target).abs(),
            iterations,
            stop,
            bandwidth: h,
            bracket: k,
        },
    })
}

/// Solves the three-case rule for one group: `ω̂ = 0` when the unsmoothed
/// constraint at 0 is within `cfg.epsilon`, otherwise the bisection root of
/// `Ĝ_l(ω) = ±ε` over an expanding bracket.
pub fn solve_omega(
    ds: &Dataset,
    cate: &CateModel,
    stats: &GroupStats,
    l: i64,
    cfg: &SolverConfig,
) -> Result<(f64, OmegaDiagnostics), FairnessError> {
    cfg.validate()?;
    let stat = stats.get(l).ok_or(FairnessError::UnknownGroup { l })?;
    let deltas = cate.deltas(ds)?;
    let sigma = sample_std(&deltas);
    let h = cfg.resolve_bandwidth(sigma, ds.len());
    let k0 = cfg.resolve_bracket(sigma, stat);
    let curve = GroupCurve::build(ds, &deltas, stat, l, false);
    let sol = solve_on_curve(&curve, l, cfg.epsilon, h, k0, cfg)?;
    Ok((sol.omega, sol.diag))
}

/// Whether the rule enforces one pooled constraint (DP) or one per group (CDP).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FairnessMode {
    /// Single pooled group; per-group tables are keyed by [`POOLED_LABEL`].
    Dp,
    /// One constraint per observed group label.
    Cdp,
}

impl std::fmt::Display for FairnessMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FairnessMode::Dp => write!(f, "dp"),
            FairnessMode::Cdp => write!(f, "cdp"),
        }
    }
}

/// The deployable rule: fitted CATE, per-group frequencies and multipliers,
/// and solver diagnostics. Decisions are `+1` iff
/// `δ̂(z) − ω̂_l·ψ̂_l(s) > 0` (strict).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairRule {
    pub mode: FairnessMode,
    /// Requested tolerance.
    pub epsilon: f64,
    /// Resolved smoothing bandwidth.
    pub bandwidth: f64,
    pub cate: CateModel,
    pub stats: GroupStats,
    pub omegas: BTreeMap<i64, f64>,
    pub diagnostics: BTreeMap<i64, OmegaDiagnostics>,
    pub config: SolverConfig,
}

impl FairRule {
    fn group_key(&self, l: i64) -> Result<i64, FairnessError> {
        let key = match self.mode {
            FairnessMode::Dp => POOLED_LABEL,
            FairnessMode::Cdp => l,
        };
        if self.omegas.contains_key(&key) {
            Ok(key)
        } else {
            Err(FairnessError::UnknownGroup { l })
        }
    }

    /// Decision for covariates `(x, s, l)`.
    pub fn decide(&self, x: &[f64], s: u8, l: i64) -> Result<i8, FairnessError> {
        let key = self.group_key(l)?;
        let stat = self.stats.get(key).ok_or(FairnessError::UnknownGroup { l })?;
        let omega = self.omegas[&key];
        let score = self.cate.predict(x, s, l)? - omega * stat.psi(s);
        Ok(if score > 0.0 { 1 } else { -1 })
    }

    pub fn decide_sample(&self, sample: &Sample) -> Result<i8, FairnessError> {
        self.decide(&sample.x, sample.s, sample.l)
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string_pretty(self)
    }

    pub fn from_json(json: &str) -> serde_json::Result<FairRule> {
        serde_json::from_str(json)
    }
}

/// Fits the full rule around an already fitted CATE model.
///
/// Each group's tolerance is `ε · N_l / n`, which makes the enforced
/// positive-rate gap within every group equal to `ε` regardless of group
/// size (the normalizer of `Ĝ_l` is the full sample size `n`).
pub fn fit_fair_rule_with_cate(
    train: &Dataset,
    cate: CateModel,
    cfg: &SolverConfig,
    mode: FairnessMode,
) -> Result<FairRule, FairnessError> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(FairnessError::EmptyDataset);
    }
    let stats = match mode {
        FairnessMode::Dp => GroupStats::pooled(train)?,
        FairnessMode::Cdp => estimate_group_stats(train)?,
    };

    let deltas = cate.deltas(train)?;
    let sigma = sample_std(&deltas);
    let h = cfg.resolve_bandwidth(sigma, train.len());
    let n = train.len() as f64;

    let mut omegas = BTreeMap::new();
    let mut diagnostics = BTreeMap::new();
    for (l, stat) in stats.iter() {
        let pooled = matches!(mode, FairnessMode::Dp);
        let curve = GroupCurve::build(train, &deltas, stat, l, pooled);
        let eps_l = cfg.epsilon * stat.n as f64 / n;
        let k0 = cfg.resolve_bracket(sigma, stat);
        let sol = solve_on_curve(&curve, l, eps_l, h, k0, cfg)?;
        omegas.insert(l, sol.omega);
        diagnostics.insert(l, sol.diag);
    }

    Ok(FairRule {
        mode,
        epsilon: cfg.epsilon,
        bandwidth: h,
        cate,
        stats,
        omegas,
        diagnostics,
        config: cfg.clone(),
    })
}

/// Full fitting pipeline: CATE on the treatment arms (validation drives
/// epoch selection only), group frequencies, and one multiplier per group
/// (one pooled multiplier in DP mode), all on the training set.
pub fn fit_fair_rule(
    train: &Dataset,
    val: &Dataset,
    reg_spec: &RegressorSpec,
    cfg: &SolverConfig,
    mode: FairnessMode,
) -> Result<FairRule, FairnessError> {
    let cate = fit_cate(train, val, reg_spec)?;
    fit_fair_rule_with_cate(train, cate, cfg, mode)
}
