//! Command-line front end: fit ratings data, run simulation sweeps, and
//! render report bundles.

mod bundle;
mod config;
mod fit;
mod report;
mod simulate;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use hetirr::sampler::SamplerConfig;
use hetirr::study::{Method, StudyPlan};

use config::{parse_on_off, parse_priors, parse_usize_list, split_list, FileConfig};
use fit::WeightKind;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Core(#[from] hetirr::Error),
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Config(String),
}

#[derive(Parser)]
#[command(
    name = "hetirr",
    version,
    about = "Inter-rater reliability estimation with group-dependent variance components"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the model space to a ratings dataset and write a report bundle.
    Fit(FitArgs),
    /// Run a simulation study over the published scenario table.
    Simulate(SimulateArgs),
    /// Re-render report.md from an existing bundle.
    Report(ReportArgs),
}

#[derive(Args)]
struct FitArgs {
    /// JSON config file with flat keys mirroring these flags.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Ratings CSV with `ratee` and `rating` columns plus one column
    /// per covariate.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Comma-separated covariate column names.
    #[arg(long)]
    covariates: Option<String>,
    /// Let covariates enter the mean structure (`on`, the default) or
    /// compare variance structures under a constant mean (`off`).
    #[arg(long, value_name = "on|off")]
    mean_covariates: Option<String>,
    /// Coefficient prior scale: small, medium, large, or a number.
    /// A comma-separated list adds a prior-sensitivity appendix.
    #[arg(long)]
    prior: Option<String>,
    #[arg(long)]
    chains: Option<usize>,
    /// Warmup iterations per chain.
    #[arg(long)]
    warmup: Option<usize>,
    /// Retained draws per chain.
    #[arg(long)]
    draws: Option<usize>,
    /// Comma-separated weight methods: bma, aic, bic, waic, loo,
    /// pseudo-bma, stacking.
    #[arg(long)]
    methods: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for the bundle.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// JSON config file with flat keys mirroring these flags.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated scenario labels from the design table.
    #[arg(long)]
    scenarios: Option<String>,
    /// Comma-separated ratees-per-group counts (25, 50, 100, 200).
    #[arg(long = "I")]
    ratees: Option<String>,
    /// Comma-separated ratings-per-ratee counts (3, 5).
    #[arg(long = "J")]
    ratings: Option<String>,
    #[arg(long)]
    replications: Option<usize>,
    /// Comma-separated method tags: bf, bma, aic, bic, aic-averaging,
    /// bic-averaging, forward, backward, waic, loo, pseudo-bma, stacking.
    #[arg(long)]
    methods: Option<String>,
    /// Run the full published design grid (all scenarios, group sizes,
    /// and ratings counts). Expect a many-hour run.
    #[arg(long)]
    full: bool,
    #[arg(long)]
    chains: Option<usize>,
    #[arg(long)]
    warmup: Option<usize>,
    #[arg(long)]
    draws: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for the bundle.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Bundle directory containing summary.json.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Fit(args) => run_fit(args),
        Command::Simulate(args) => run_simulate(args),
        Command::Report(args) => run_report(args),
    };
    match outcome {
        Ok(warnings) if warnings.is_empty() => ExitCode::SUCCESS,
        Ok(warnings) => {
            for w in &warnings {
                eprintln!("warning: {w}");
            }
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn sampler_from(
    chains: Option<usize>,
    warmup: Option<usize>,
    draws: Option<usize>,
    seed: u64,
) -> SamplerConfig {
    let mut cfg = SamplerConfig::default();
    if let Some(c) = chains {
        cfg.chains = c;
    }
    if let Some(w) = warmup {
        cfg.warmup = w;
    }
    if let Some(d) = draws {
        cfg.draws_per_chain = d;
    }
    cfg.seed = seed;
    cfg
}

fn run_fit(args: FitArgs) -> Result<Vec<String>, CliError> {
    let file = FileConfig::load(args.config.as_ref())?;
    let data = args
        .data
        .or(file.data)
        .ok_or_else(|| CliError::Config("fit requires --data".into()))?;
    let out = args
        .out
        .or(file.out)
        .ok_or_else(|| CliError::Config("fit requires --out".into()))?;
    let covariates = args
        .covariates
        .or(file.covariates)
        .map(|s| split_list(&s))
        .unwrap_or_default();
    let mean_covariates = match args.mean_covariates.or(file.mean_covariates) {
        Some(v) => parse_on_off(&v)?,
        None => true,
    };
    let priors = parse_priors(&args.prior.or(file.prior).unwrap_or_else(|| "medium".into()))?;
    let methods = match args.methods.or(file.methods) {
        Some(list) => {
            let mut kinds = Vec::new();
            for tag in split_list(&list) {
                let kind = WeightKind::parse(&tag)?;
                if !kinds.contains(&kind) {
                    kinds.push(kind);
                }
            }
            if kinds.is_empty() {
                return Err(CliError::Config("empty methods list".into()));
            }
            kinds
        }
        None => vec![WeightKind::Bma],
    };
    let seed = args.seed.or(file.seed).unwrap_or(0);
    let sampler = sampler_from(
        args.chains.or(file.chains),
        args.warmup.or(file.warmup),
        args.draws.or(file.draws),
        seed,
    );
    sampler.validate()?;

    let cfg = fit::FitConfig {
        data,
        covariates,
        mean_covariates,
        priors,
        sampler,
        methods,
        mixture_draws: 4000,
        seed,
        out,
    };
    let warnings = fit::run(&cfg)?;
    println!("wrote {}", cfg.out.join("report.md").display());
    Ok(warnings)
}

fn run_simulate(args: SimulateArgs) -> Result<Vec<String>, CliError> {
    let file = FileConfig::load(args.config.as_ref())?;
    let out = args
        .out
        .or(file.out)
        .ok_or_else(|| CliError::Config("simulate requires --out".into()))?;
    let full = args.full || file.full.unwrap_or(false);
    let (default_scenarios, default_ratees, default_ratings) = if full {
        eprintln!(
            "note: running the full design grid; this is orders of magnitude slower \
             than the default scaled-down plan"
        );
        simulate::full_grid()
    } else {
        // Scaled-down default: two contrasting scenarios at two group
        // sizes, enough to reproduce the qualitative patterns.
        (
            vec!["1".to_string(), "4.2".to_string()],
            vec![50, 200],
            vec![3],
        )
    };
    let scenarios = args
        .scenarios
        .or(file.scenarios)
        .map(|s| split_list(&s))
        .unwrap_or(default_scenarios);
    let ratees = match args.ratees.or(file.ratees) {
        Some(s) => parse_usize_list(&s, "group size")?,
        None => default_ratees,
    };
    let ratings = match args.ratings.or(file.ratings) {
        Some(s) => parse_usize_list(&s, "ratings count")?,
        None => default_ratings,
    };
    let replications = args.replications.or(file.replications).unwrap_or(200);
    let methods = match args.methods.or(file.methods) {
        Some(list) => {
            let mut methods = Vec::new();
            for tag in split_list(&list) {
                let m = Method::parse(&tag)?;
                if !methods.contains(&m) {
                    methods.push(m);
                }
            }
            if methods.is_empty() {
                return Err(CliError::Config("empty methods list".into()));
            }
            methods
        }
        None => vec![Method::Bf, Method::Bma],
    };
    let seed = args.seed.or(file.seed).unwrap_or(0);

    let scenario_refs: Vec<&str> = scenarios.iter().map(String::as_str).collect();
    let mut plan = StudyPlan::new(&scenario_refs, &ratees, &ratings, replications, &methods, seed);
    if let Some(c) = args.chains.or(file.chains) {
        plan.sampler.chains = c;
    }
    if let Some(w) = args.warmup.or(file.warmup) {
        plan.sampler.warmup = w;
    }
    if let Some(d) = args.draws.or(file.draws) {
        plan.sampler.draws_per_chain = d;
    }
    plan.validate()?;

    let cfg = simulate::SimulateConfig { plan, out };
    let warnings = simulate::run(&cfg)?;
    println!("wrote {}", cfg.out.join("report.md").display());
    Ok(warnings)
}

fn run_report(args: ReportArgs) -> Result<Vec<String>, CliError> {
    let out = args
        .out
        .ok_or_else(|| CliError::Config("report requires --out".into()))?;
    let summary = bundle::Summary::load(&out)?;
    std::fs::write(out.join("report.md"), report::render(&summary))?;
    println!("wrote {}", out.join("report.md").display());
    Ok(Vec::new())
}
