//! Command-line front end: simulate scenarios, fit rules from CSV, evaluate
//! them, sweep tolerances, and dump constraint curves.
//!
//! Exit codes: 0 on success, 1 on runtime errors (with the error printed to
//! standard error), 2 on usage errors. Outputs are written atomically
//! (temp file in the target directory, then rename).

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use fairidr::cate::RegressorSpec;
use fairidr::dataset::{load_csv, split, CsvSchema, SplitSpec};
use fairidr::fairness::{
    estimate_group_stats, fit_fair_rule, g_hat_samples, resolved_bandwidth, FairRule, FairnessMode, SolverConfig,
};
use fairidr::policy::{
    apply_rule, conditional_unfairness, format_sig6, policy_value_estimated, unfairness,
};
use fairidr::simgen::{epsilon_sweep, write_rows_csv, write_summary_csv, ScenarioSpec};

/// Environment variable holding the default output directory.
const OUT_DIR_VAR: &str = "FAIRIDR_OUT_DIR";

#[derive(Parser)]
#[command(name = "fairidr", version, about = "Fairness-constrained individualized decision rules")]
struct Cli {
    /// Replication parallelism for simulate / sweep.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Dp,
    Cdp,
}

impl From<ModeArg> for FairnessMode {
    fn from(m: ModeArg) -> FairnessMode {
        match m {
            ModeArg::Dp => FairnessMode::Dp,
            ModeArg::Cdp => FairnessMode::Cdp,
        }
    }
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum KindArg {
    ReluNet,
    RidgeBasis,
}

#[derive(Args)]
struct SchemaArgs {
    /// Comma-separated covariate column names.
    #[arg(long, value_delimiter = ',', required = true)]
    x_cols: Vec<String>,
    #[arg(long, default_value = "s")]
    s_col: String,
    #[arg(long, default_value = "l")]
    l_col: String,
    #[arg(long, default_value = "a")]
    a_col: String,
    #[arg(long, default_value = "r")]
    r_col: String,
    /// Treatment column is encoded {0,1} and must be recoded to {-1,+1}.
    #[arg(long)]
    a_zero_one: bool,
}

impl SchemaArgs {
    fn to_schema(&self) -> CsvSchema {
        CsvSchema {
            x_cols: self.x_cols.clone(),
            s_col: self.s_col.clone(),
            l_col: self.l_col.clone(),
            a_col: self.a_col.clone(),
            r_col: self.r_col.clone(),
            a_zero_one: self.a_zero_one,
        }
    }
}

#[derive(Args)]
struct RegressorArgs {
    #[arg(long, value_enum, default_value_t = KindArg::ReluNet)]
    reg_kind: KindArg,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    ridge_lambda: Option<f64>,
    #[arg(long)]
    basis_degree: Option<usize>,
    /// Sup-norm bound B on each arm regressor (default: 10 x std of r).
    #[arg(long)]
    output_clip: Option<f64>,
}

impl RegressorArgs {
    fn to_spec(&self, seed: u64) -> RegressorSpec {
        let mut spec = match self.reg_kind {
            KindArg::ReluNet => RegressorSpec::relu(seed),
            KindArg::RidgeBasis => RegressorSpec::ridge(seed),
        };
        if let Some(v) = self.width {
            spec.width = v;
        }
        if let Some(v) = self.depth {
            spec.depth = v;
        }
        if let Some(v) = self.epochs {
            spec.epochs = v;
        }
        if let Some(v) = self.learning_rate {
            spec.learning_rate = v;
        }
        if let Some(v) = self.batch_size {
            spec.batch_size = v;
        }
        if let Some(v) = self.ridge_lambda {
            spec.ridge_lambda = v;
        }
        if let Some(v) = self.basis_degree {
            spec.basis_degree = v;
        }
        if let Some(v) = self.output_clip {
            spec.output_clip = Some(v);
        }
        spec
    }
}

#[derive(Args)]
struct SolverArgs {
    #[arg(long, default_value_t = 0.0)]
    epsilon: f64,
    /// Smoothing bandwidth h (default: auto, std(delta) x n^(-1/6)).
    #[arg(long)]
    bandwidth: Option<f64>,
    /// Initial bracket half-width K (default: auto).
    #[arg(long)]
    bracket: Option<f64>,
    #[arg(long)]
    bracket_growth: Option<f64>,
    #[arg(long)]
    max_bracket_doublings: Option<u32>,
    #[arg(long)]
    tol_omega: Option<f64>,
    #[arg(long)]
    tol_g: Option<f64>,
    #[arg(long)]
    max_iter: Option<u32>,
}

impl SolverArgs {
    fn to_config(&self) -> SolverConfig {
        let mut cfg = SolverConfig::with_epsilon(self.epsilon);
        cfg.bandwidth = self.bandwidth;
        cfg.bracket = self.bracket;
        if let Some(v) = self.bracket_growth {
            cfg.bracket_growth = v;
        }
        if let Some(v) = self.max_bracket_doublings {
            cfg.max_bracket_doublings = v;
        }
        cfg.tol_omega = self.tol_omega;
        if let Some(v) = self.tol_g {
            cfg.tol_g = v;
        }
        if let Some(v) = self.max_iter {
            cfg.max_iter = v;
        }
        cfg
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file and write summary.csv + replications.csv.
    Simulate {
        scenario: PathBuf,
        /// Output directory (default: $FAIRIDR_OUT_DIR, then ".").
        out_dir: Option<PathBuf>,
    },
    /// Run a scenario across a sorted tolerance list with paired seeds.
    Sweep {
        scenario: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        epsilons: Vec<f64>,
        out_dir: Option<PathBuf>,
    },
    /// Fit a fairness-constrained rule from a training CSV.
    Fit {
        train_csv: PathBuf,
        out_model: PathBuf,
        #[command(flatten)]
        schema: SchemaArgs,
        #[arg(long, value_enum)]
        mode: ModeArg,
        #[command(flatten)]
        solver: SolverArgs,
        #[command(flatten)]
        regressor: RegressorArgs,
        /// Fraction held out for epoch selection.
        #[arg(long, default_value_t = 0.2)]
        val_frac: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Apply a fitted rule to a test CSV and write a metrics report.
    Evaluate {
        model: PathBuf,
        test_csv: PathBuf,
        out_report: PathBuf,
        #[command(flatten)]
        schema: SchemaArgs,
        /// Also report the policy value estimated with the rule's own CATE.
        #[arg(long)]
        with_estimated_pv: bool,
    },
    /// Sample the smoothed constraint curve of one group to a CSV.
    Gcurve {
        model: PathBuf,
        data_csv: PathBuf,
        out_csv: PathBuf,
        #[command(flatten)]
        schema: SchemaArgs,
        /// Group label to inspect.
        #[arg(long)]
        group: i64,
        /// Omega range as lo:hi:step (write --omega=-2:2:0.01).
        #[arg(long, allow_hyphen_values = true)]
        omega: String,
        /// Smoothing bandwidth (default: the solver's auto bandwidth).
        #[arg(long)]
        bandwidth: Option<f64>,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("[fairidr] error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs)
        .build_global()
        .context("building the worker pool")?;

    match cli.command {
        Command::Simulate { scenario, out_dir } => simulate(&scenario, out_dir, None),
        Command::Sweep { scenario, epsilons, out_dir } => simulate(&scenario, out_dir, Some(epsilons)),
        Command::Fit { train_csv, out_model, schema, mode, solver, regressor, val_frac, seed } => {
            fit(&train_csv, &out_model, &schema, mode, &solver, &regressor, val_frac, seed)
        }
        Command::Evaluate { model, test_csv, out_report, schema, with_estimated_pv } => {
            evaluate(&model, &test_csv, &out_report, &schema, with_estimated_pv)
        }
        Command::Gcurve { model, data_csv, out_csv, schema, group, omega, bandwidth } => {
            gcurve(&model, &data_csv, &out_csv, &schema, group, &omega, bandwidth)
        }
    }
}

fn resolve_out_dir(out_dir: Option<PathBuf>) -> PathBuf {
    out_dir
        .or_else(|| std::env::var_os(OUT_DIR_VAR).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."))
}

/// Writes via a temp file in the same directory and renames into place.
fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let tmp = dir.join(format!(
        ".{}.tmp{}",
        path.file_name().and_then(|n| n.to_str()).unwrap_or("out"),
        std::process::id()
    ));
    {
        let mut f = fs::File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
        f.write_all(contents)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

fn simulate(scenario: &Path, out_dir: Option<PathBuf>, epsilons: Option<Vec<f64>>) -> Result<()> {
    let spec = ScenarioSpec::load(scenario).with_context(|| format!("loading {}", scenario.display()))?;
    for w in spec.warnings() {
        eprintln!("[fairidr] warning: {w}");
    }
    let epsilons = epsilons.unwrap_or_else(|| vec![spec.epsilon]);
    eprintln!(
        "[fairidr] simulate case={} n={} n_test={} replications={} mode={} seed={} epsilons={:?}",
        spec.case_id, spec.n, spec.n_test, spec.replications, spec.mode, spec.seed, epsilons
    );

    let outcomes = epsilon_sweep(&spec, &epsilons)?;
    for o in &outcomes {
        eprintln!(
            "[fairidr] epsilon={} uf_mean={} cuf_mean={} pv_mean={} n_ok={} n_failed={}",
            format_sig6(o.epsilon),
            format_sig6(o.summary.uf.mean),
            format_sig6(o.summary.cuf.mean),
            format_sig6(o.summary.pv.mean),
            o.summary.n_ok,
            o.summary.n_failed
        );
        for (rep, err) in &o.failures {
            eprintln!("[fairidr] replication {rep} failed: {err}");
        }
    }

    let dir = resolve_out_dir(out_dir);
    let mut rows = Vec::new();
    write_rows_csv(&mut rows, &spec, &outcomes)?;
    let mut summary = Vec::new();
    write_summary_csv(&mut summary, &spec, &outcomes)?;
    let rows_path = dir.join("replications.csv");
    let summary_path = dir.join("summary.csv");
    write_atomic(&rows_path, &rows)?;
    write_atomic(&summary_path, &summary)?;
    eprintln!("[fairidr] wrote {} and {}", summary_path.display(), rows_path.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn fit(
    train_csv: &Path,
    out_model: &Path,
    schema: &SchemaArgs,
    mode: ModeArg,
    solver: &SolverArgs,
    regressor: &RegressorArgs,
    val_frac: f64,
    seed: u64,
) -> Result<()> {
    if !(val_frac > 0.0 && val_frac < 1.0) {
        bail!("--val-frac must be in (0, 1), got {val_frac}");
    }
    let ds = load_csv(train_csv, &schema.to_schema()).with_context(|| format!("loading {}", train_csv.display()))?;
    let (train, val, _) = split(&ds, &SplitSpec::new(1.0 - val_frac, val_frac, seed))?;
    let reg = regressor.to_spec(seed);
    let cfg = solver.to_config();
    let mode: FairnessMode = mode.into();
    eprintln!(
        "[fairidr] fit rows={} p={} mode={mode} epsilon={} seed={seed} kind={:?}",
        ds.len(),
        ds.p(),
        format_sig6(cfg.epsilon),
        reg.kind
    );

    let rule = fit_fair_rule(&train, &val, &reg, &cfg, mode)?;
    for (l, diag) in &rule.diagnostics {
        eprintln!(
            "[fairidr] group l={l} case={:?} omega={} residual={} iterations={} stop={:?}",
            diag.case,
            format_sig6(rule.omegas[l]),
            format_sig6(diag.residual),
            diag.iterations,
            diag.stop
        );
    }
    write_atomic(out_model, rule.to_json()?.as_bytes())?;
    eprintln!("[fairidr] wrote {}", out_model.display());
    Ok(())
}

fn load_rule(path: &Path) -> Result<FairRule> {
    let json = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(FairRule::from_json(&json).with_context(|| format!("parsing {}", path.display()))?)
}

fn evaluate(model: &Path, test_csv: &Path, out_report: &Path, schema: &SchemaArgs, with_estimated_pv: bool) -> Result<()> {
    let rule = load_rule(model)?;
    let test = load_csv(test_csv, &schema.to_schema()).with_context(|| format!("loading {}", test_csv.display()))?;
    let decisions = apply_rule(&rule, &test)?;
    let uf = unfairness(&decisions, &test)?;
    let grouped = conditional_unfairness(&decisions, &test)?;
    let pv = if with_estimated_pv {
        Some(policy_value_estimated(&decisions, &test, &rule.cate)?)
    } else {
        None
    };

    let labels: Vec<i64> = grouped.per_group.keys().copied().collect();
    let mut out = String::from("case,method,epsilon,n,seed,uf,cuf,pv");
    for l in &labels {
        out.push_str(&format!(",uf_l{l}"));
    }
    out.push('\n');
    out.push_str(&format!(
        "csv,{}-idr,{},{},0,{},{},{}",
        rule.mode,
        format_sig6(rule.epsilon),
        test.len(),
        format_sig6(uf),
        format_sig6(grouped.cuf),
        pv.map(format_sig6).unwrap_or_default()
    ));
    for l in &labels {
        out.push_str(&format!(",{}", format_sig6(grouped.per_group[l])));
    }
    out.push('\n');

    eprintln!(
        "[fairidr] evaluate n={} uf={} cuf={} pv={} excluded_groups={:?}",
        test.len(),
        format_sig6(uf),
        format_sig6(grouped.cuf),
        pv.map(format_sig6).unwrap_or_else(|| "-".into()),
        grouped.excluded
    );
    write_atomic(out_report, out.as_bytes())?;
    eprintln!("[fairidr] wrote {}", out_report.display());
    Ok(())
}

fn parse_omega_range(text: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = text.split(':').collect();
    if parts.len() != 3 {
        bail!("--omega must be lo:hi:step, got {text:?}");
    }
    let lo: f64 = parts[0].parse().context("omega lo")?;
    let hi: f64 = parts[1].parse().context("omega hi")?;
    let step: f64 = parts[2].parse().context("omega step")?;
    if !(step > 0.0) || hi < lo {
        bail!("--omega needs hi >= lo and step > 0, got {text:?}");
    }
    let count = ((hi - lo) / step).floor() as usize + 1;
    Ok((0..count).map(|i| lo + i as f64 * step).collect())
}

fn gcurve(
    model: &Path,
    data_csv: &Path,
    out_csv: &Path,
    schema: &SchemaArgs,
    group: i64,
    omega: &str,
    bandwidth: Option<f64>,
) -> Result<()> {
    let rule = load_rule(model)?;
    let ds = load_csv(data_csv, &schema.to_schema()).with_context(|| format!("loading {}", data_csv.display()))?;
    let stats = estimate_group_stats(&ds)?;
    let omegas = parse_omega_range(omega)?;
    let h = match bandwidth {
        Some(h) => h,
        None => resolved_bandwidth(&ds, &rule.cate, &rule.config)?,
    };
    eprintln!("[fairidr] gcurve group={group} points={} bandwidth={}", omegas.len(), format_sig6(h));

    let gs = g_hat_samples(&ds, &rule.cate, &stats, group, &omegas, h)?;
    let mut out = String::from("omega,g_hat\n");
    for (w, g) in omegas.iter().zip(&gs) {
        out.push_str(&format!("{w},{g}\n"));
    }
    write_atomic(out_csv, out.as_bytes())?;
    eprintln!("[fairidr] wrote {}", out_csv.display());
    Ok(())
}
