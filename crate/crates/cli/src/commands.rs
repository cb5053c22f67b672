use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use afsens::{
    estimate_design_sensitivity, monte_carlo_power, odds_ratio, parse_study, parse_summary,
    power_merged, power_stouffer, power_weighted_stouffer, profiles_from_study, run_power_study,
    sensitivity_grid, write_grid, write_power_curve, write_power_table, write_summary,
    AnalysisOptions, Combiner, DGPConfig, DesignSensitivityConfig, Error, GroupProfile, McGroup,
    Method, PairCounts, PairDgp, PairGroupDgp, PowerSpec, Result, SensParams, SummaryRow, Tail,
};
use clap::{Args, Parser, Subcommand};

/// Sensitivity analysis for the attributable fraction among the exposed in
/// matched case-referent studies.
#[derive(Debug, Parser)]
#[command(name = "afsens", version)]
pub struct Cli {
    /// Worker threads for grid and simulation work.
    #[arg(long, global = true, env = "AFSENS_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sensitivity grid: P-values for AFe = 0 and minimum confidence intervals.
    Analyze(AnalyzeArgs),
    /// Monte Carlo power study on simulated two-subtype cohorts.
    Simulate(SimulateArgs),
    /// Analytic (or Monte Carlo) power of the sensitivity analysis.
    Power(PowerArgs),
    /// Estimate the design sensitivity of a method by bisection.
    DesignSensitivity(DesignArgs),
    /// Combine independent P-values.
    Combine(CombineArgs),
    /// Reduce a matched-set study to per-subtype pair counts.
    Summarize(SummarizeArgs),
}

#[derive(Debug, Args)]
struct InputArgs {
    /// Pair-count summary CSV (`subtype,a,b,c,d`).
    #[arg(long, conflicts_with = "study", required_unless_present = "study")]
    summary: Option<PathBuf>,

    /// Matched-set study CSV (`set_id,unit_id,exposed,case,subtype`).
    #[arg(long)]
    study: Option<PathBuf>,

    /// Declared subtype labels for a study file; labels with no sets are kept.
    #[arg(long, value_delimiter = ',', requires = "study")]
    subtypes: Option<Vec<String>>,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    input: InputArgs,

    #[arg(long, value_delimiter = ',', default_value = "1.0")]
    gamma: Vec<f64>,

    #[arg(long, value_delimiter = ',', default_value = "1.0")]
    theta: Vec<f64>,

    #[arg(long, default_value_t = 0.05)]
    alpha: f64,

    #[arg(
        long,
        value_delimiter = ',',
        default_value = "merged,stouffer,weighted_stouffer,fisher,truncated,bonferroni"
    )]
    methods: Vec<Method>,

    /// Truncation point for the truncated product method.
    #[arg(long, default_value_t = 0.10)]
    trunc: f64,

    /// Exact Poisson-binomial tails instead of the normal approximation.
    #[arg(long)]
    exact: bool,

    /// Also report the merged maximum confidence interval.
    #[arg(long)]
    max_ci: bool,

    /// Grid CSV destination; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Flat TOML file with DGPConfig keys; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,

    #[arg(long)]
    seed: u64,

    #[arg(long)]
    n: Option<u64>,

    #[arg(long)]
    delta1: Option<f64>,

    #[arg(long)]
    delta2: Option<f64>,

    #[arg(long)]
    baseline: Option<f64>,

    #[arg(long)]
    reps: Option<u64>,

    #[arg(long)]
    alpha: Option<f64>,

    #[arg(long)]
    trunc: Option<f64>,

    #[arg(long, value_delimiter = ',')]
    gamma: Option<Vec<f64>>,

    #[arg(long, value_delimiter = ',')]
    theta: Option<Vec<f64>>,

    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<Method>>,

    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PowerArgs {
    #[command(flatten)]
    input: InputArgs,

    /// Attributable effects: one value (pooled) or one per subtype.
    #[arg(long, value_delimiter = ',', required = true)]
    effect: Vec<f64>,

    #[arg(long, value_delimiter = ',', default_value = "1.0")]
    gamma: Vec<f64>,

    #[arg(long, value_delimiter = ',', default_value = "1.0")]
    theta: Vec<f64>,

    #[arg(long, default_value_t = 0.05)]
    alpha: f64,

    #[arg(long, value_delimiter = ',', default_value = "merged")]
    methods: Vec<Method>,

    #[arg(long, default_value_t = 0.10)]
    trunc: f64,

    /// Estimate power by Monte Carlo with this many replicates.
    #[arg(long, requires = "seed")]
    mc_reps: Option<u64>,

    #[arg(long)]
    seed: Option<u64>,

    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DesignArgs {
    /// Pair-level group `SETS:DISCORDANT_RATE:P_CASE_EXPOSED`; repeat per subtype.
    #[arg(
        long = "pair-group",
        conflicts_with = "cohort",
        required_unless_present = "cohort"
    )]
    pair_groups: Vec<String>,

    /// Two-cohort DGPConfig TOML used as the generator.
    #[arg(long)]
    cohort: Option<PathBuf>,

    #[arg(long)]
    seed: u64,

    #[arg(long, default_value = "merged")]
    method: Method,

    #[arg(long, default_value_t = 1.0)]
    theta: f64,

    #[arg(long, default_value_t = 0.05)]
    alpha: f64,

    #[arg(long, default_value_t = 0.10)]
    trunc: f64,

    #[arg(long, default_value_t = 200)]
    reps: u64,

    #[arg(long, default_value_t = 0.01)]
    tol: f64,

    #[arg(long, default_value_t = 6.0)]
    gamma_max: f64,

    #[arg(long, default_value_t = 11)]
    grid_points: usize,

    /// Power curve CSV destination; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CombineArgs {
    #[arg(long = "p", value_delimiter = ',', required = true)]
    p: Vec<f64>,

    #[arg(long)]
    method: Combiner,

    #[arg(long, value_delimiter = ',')]
    weights: Option<Vec<f64>>,

    #[arg(long, default_value_t = 0.10)]
    trunc: f64,
}

#[derive(Debug, Args)]
struct SummarizeArgs {
    #[arg(long)]
    study: PathBuf,

    #[arg(long, value_delimiter = ',')]
    subtypes: Option<Vec<String>>,

    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Analyze(a) => analyze(a),
        Command::Simulate(a) => simulate(a),
        Command::Power(a) => power(a),
        Command::DesignSensitivity(a) => design_sensitivity(a),
        Command::Combine(a) => combine(a),
        Command::Summarize(a) => summarize(a),
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::Io(io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| {
            Error::Io(io::Error::new(e.kind(), format!("{}: {e}", p.display())))
        })?)),
        None => Box::new(io::stdout().lock()),
    })
}

/// Analysis groups and their labels (`None` for an unstratified input).
fn load_groups(input: &InputArgs) -> Result<(Vec<Option<String>>, Vec<GroupProfile>)> {
    if let Some(path) = &input.summary {
        let rows = parse_summary(open(path)?)?;
        let labels = rows.iter().map(|r| r.subtype.clone()).collect();
        let groups = rows
            .iter()
            .map(|r| GroupProfile::from_pair_counts(&r.counts))
            .collect();
        return Ok((labels, groups));
    }
    let path = input.study.as_ref().expect("clap requires an input");
    let study = parse_study(open(path)?, input.subtypes.as_deref())?;
    let labels = if study.subtype_labels().is_empty() {
        vec![None]
    } else {
        study.subtype_labels().iter().cloned().map(Some).collect()
    };
    Ok((labels, profiles_from_study(&study)?))
}

fn analyze(args: AnalyzeArgs) -> Result<()> {
    let (_, groups) = load_groups(&args.input)?;
    let tail = if args.exact {
        Tail::Exact
    } else {
        Tail::Normal
    };
    let opts = AnalysisOptions::new(args.alpha, tail, args.trunc)?;
    let rows = sensitivity_grid(
        &groups,
        &args.gamma,
        &args.theta,
        &args.methods,
        &opts,
        args.max_ci,
    )?;

    let mut out = output(args.out.as_deref())?;
    write_grid(&mut out, &rows)?;
    out.flush()?;

    let mut err = io::stderr().lock();
    let max_col = if args.max_ci { "  a_max" } else { "" };
    writeln!(
        err,
        "{:>6} {:>6}  {:<18} {:>12} {:>5}  {:>10}{max_col}  boundary",
        "gamma", "theta", "method", "p(AFe=0)", "a*", "AFe >="
    )?;
    for r in &rows {
        let max = match (args.max_ci, r.max_ci) {
            (true, Some(m)) => format!("  {:>5}", m.a),
            (true, None) => format!("  {:>5}", "-"),
            _ => String::new(),
        };
        writeln!(
            err,
            "{:>6} {:>6}  {:<18} {:>12} {:>5}  {:>9.2}%{}{max}  {}",
            format!("{:.2}", r.gamma),
            format!("{:.2}", r.theta),
            r.method.name(),
            afsens::fmt_sig(r.p_value_afe0),
            r.a_star(),
            100.0 * r.afe_lower(),
            if r.min_ci.saturated { "*" } else { " " },
            r.boundary.map(|b| b.name()).unwrap_or(""),
        )?;
    }
    if rows.iter().any(|r| r.min_ci.saturated) {
        writeln!(err, "* interval reached the number of exposed cases")?;
    }
    Ok(())
}

fn load_dgp_config(path: &Path) -> Result<DGPConfig> {
    let text = io::read_to_string(open(path)?)?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let mut cfg = match &args.config {
        Some(p) => load_dgp_config(p)?,
        None => DGPConfig::default(),
    };
    cfg.seed = args.seed;
    macro_rules! set {
        ($($field:ident <- $arg:expr),*) => {
            $(if let Some(v) = $arg { cfg.$field = v; })*
        };
    }
    set!(
        n <- args.n,
        delta1 <- args.delta1,
        delta2 <- args.delta2,
        baseline <- args.baseline,
        reps <- args.reps,
        alpha <- args.alpha,
        trunc <- args.trunc,
        gammas <- args.gamma,
        thetas <- args.theta,
        methods <- args.methods
    );
    let table = run_power_study(&cfg)?;
    let mut out = output(args.out.as_deref())?;
    write_power_table(&mut out, &table)?;
    out.flush()?;
    if table.dropped_cases > 0 {
        eprintln!(
            "warning: {} cases across all replicates had no non-case to pair with and were dropped",
            table.dropped_cases
        );
    }
    Ok(())
}

fn power(args: PowerArgs) -> Result<()> {
    let (_, groups) = load_groups(&args.input)?;
    let per_group = args.effect.len() == groups.len();
    if !per_group && args.effect.len() != 1 {
        return Err(Error::Config(format!(
            "--effect takes 1 value or one per subtype ({}), got {}",
            groups.len(),
            args.effect.len()
        )));
    }
    let mut rows = Vec::new();
    for &gamma in &args.gamma {
        for &theta in &args.theta {
            let params = SensParams::new(gamma, theta)?;
            for &method in &args.methods {
                // a single effect applies to the pooled table
                let (profiles, effects) = if per_group && method != Method::Merged {
                    (groups.clone(), args.effect.clone())
                } else if method == Method::Merged {
                    (
                        vec![GroupProfile::merge(&groups)],
                        vec![args.effect.iter().sum()],
                    )
                } else {
                    return Err(Error::Config(format!(
                        "{method} power needs one effect per subtype"
                    )));
                };
                let (power, se) = match (args.mc_reps, args.seed) {
                    (Some(reps), Some(seed)) => {
                        let mc = profiles
                            .iter()
                            .zip(&effects)
                            .map(|(g, &a)| {
                                if a < 0.0 || a.fract() != 0.0 {
                                    return Err(Error::Config(format!(
                                        "Monte Carlo power needs whole-number effects, got {a}"
                                    )));
                                }
                                McGroup::from_profile(g, &params, a as u64)
                            })
                            .collect::<Result<Vec<_>>>()?;
                        let est =
                            monte_carlo_power(&mc, method, args.alpha, args.trunc, reps, seed)?;
                        (est.power, Some(est.stderr))
                    }
                    _ => {
                        let spec =
                            PowerSpec::from_profiles(&profiles, &effects, &params, args.alpha)?;
                        let p = match method {
                            Method::Merged => power_merged(&spec),
                            Method::Combined(Combiner::Stouffer) => power_stouffer(&spec),
                            Method::Combined(Combiner::WeightedStouffer) => {
                                power_weighted_stouffer(&spec)?
                            }
                            Method::Combined(c) => {
                                return Err(Error::Config(format!(
                                    "no analytic power formula for {c}; use --mc-reps"
                                )))
                            }
                        };
                        (p, None)
                    }
                };
                rows.push((gamma, theta, method, power, se));
            }
        }
    }
    let mut out = output(args.out.as_deref())?;
    write_power_curve(&mut out, rows)?;
    out.flush()?;
    Ok(())
}

fn parse_pair_group(s: &str) -> Result<PairGroupDgp> {
    let parts: Vec<&str> = s.split(':').collect();
    let bad = || {
        Error::Config(format!(
            "pair group must be SETS:DISCORDANT_RATE:P_CASE_EXPOSED, got {s:?}"
        ))
    };
    if parts.len() != 3 {
        return Err(bad());
    }
    Ok(PairGroupDgp {
        sets: parts[0].parse().map_err(|_| bad())?,
        discordant_rate: parts[1].parse().map_err(|_| bad())?,
        case_exposed: parts[2].parse().map_err(|_| bad())?,
    })
}

fn design_sensitivity(args: DesignArgs) -> Result<()> {
    let cfg = DesignSensitivityConfig {
        theta: args.theta,
        method: args.method,
        alpha: args.alpha,
        trunc: args.trunc,
        reps: args.reps,
        tol: args.tol,
        gamma_max: args.gamma_max,
        grid_points: args.grid_points,
        seed: args.seed,
    };
    let est = match &args.cohort {
        Some(path) => {
            let dgp = load_dgp_config(path)?;
            dgp.validate()?;
            estimate_design_sensitivity(&dgp, &cfg)?
        }
        None => {
            let groups = args
                .pair_groups
                .iter()
                .map(|s| parse_pair_group(s))
                .collect::<Result<Vec<_>>>()?;
            estimate_design_sensitivity(&PairDgp::new(groups)?, &cfg)?
        }
    };
    let mut out = output(args.out.as_deref())?;
    write_power_curve(
        &mut out,
        est.curve
            .iter()
            .map(|p| (p.gamma, p.theta, p.method, p.power, Some(p.mc_stderr))),
    )?;
    out.flush()?;
    eprintln!(
        "design sensitivity ({}, theta = {}): {:.4} +/- {:.4}, bracket [{:.4}, {:.4}]",
        args.method, args.theta, est.gamma, est.half_width, est.bracket.0, est.bracket.1
    );
    Ok(())
}

fn combine(args: CombineArgs) -> Result<()> {
    let p = args
        .method
        .combine(&args.p, args.weights.as_deref(), args.trunc)?;
    println!("{}", afsens::fmt_sig(p));
    Ok(())
}

fn summarize(args: SummarizeArgs) -> Result<()> {
    let study = parse_study(open(&args.study)?, args.subtypes.as_deref())?;
    let rows: Vec<SummaryRow> = if study.subtype_labels().is_empty() {
        vec![SummaryRow {
            subtype: None,
            counts: study.summarize_pairs(None)?,
        }]
    } else {
        study
            .partition_by_subtype()?
            .iter()
            .map(|v| {
                Ok(SummaryRow {
                    subtype: Some(v.label.to_string()),
                    counts: v.pair_counts()?,
                })
            })
            .collect::<Result<_>>()?
    };
    let mut out = output(args.out.as_deref())?;
    write_summary(&rows, &mut out)?;
    out.flush()?;

    let mut err = io::stderr().lock();
    let total: PairCounts = rows.iter().map(|r| r.counts).sum();
    let mut report = |label: &str, pc: &PairCounts| -> Result<()> {
        match odds_ratio(pc) {
            Ok(or) => writeln!(
                err,
                "{label:<24} OR {:.2} (95% CI {:.2}, {:.2})  exposed cases {}",
                or.estimate,
                or.lower,
                or.upper,
                pc.exposed_cases()
            )?,
            Err(_) => writeln!(
                err,
                "{label:<24} OR undefined  exposed cases {}",
                pc.exposed_cases()
            )?,
        }
        Ok(())
    };
    for r in &rows {
        report(r.subtype.as_deref().unwrap_or("all"), &r.counts)?;
    }
    if rows.len() > 1 {
        report("all", &total)?;
    }
    Ok(())
}
