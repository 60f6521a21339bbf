//! `multicarve` command-line front end.
//!
//! Exit codes: 0 on success, 2 for invalid input (including malformed
//! files and bad flags), 3 for numerical failures.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use log::info;

use multicarve::carve::{SigmaMode, View};
use multicarve::io;
use multicarve::multi::{self, Aggregation, GroupCorrection, MulticarveConfig};
use multicarve::select::Selector;
use multicarve::selftest;
use multicarve::sim::{self, Archive, SimConfig};
use multicarve::{Dataset, Family};

#[derive(Parser)]
#[command(name = "multicarve", version, about = "Selective inference by data carving over many random splits")]
struct Cli {
    /// Worker threads (0 uses every available core).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Test every variable and write an inference report.
    Run(InferArgs),
    /// Tests plus confidence intervals for the selected coefficients.
    Ci {
        #[command(flatten)]
        args: InferArgs,
        /// Include an intercept in the interval target.
        #[arg(long)]
        ci_intercept: bool,
    },
    /// Group tests, one group per line of the groups file.
    Group {
        #[command(flatten)]
        args: InferArgs,
        /// Groups file: 0-based indices such as `0,3,7-9`, one group per line.
        #[arg(long)]
        groups: PathBuf,
        /// Per-split multiplicity correction: none, size, or selected.
        #[arg(long, default_value = "none")]
        group_correction: String,
    },
    /// Run a simulation grid and write the metrics table.
    Simulate(SimArgs),
    /// Run the oracle suites.
    Selftest {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Print the outcomes as JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
}

#[derive(Args)]
struct InferArgs {
    /// Design matrix CSV, one observation per row.
    #[arg(long)]
    x: PathBuf,
    /// One-column response CSV.
    #[arg(long)]
    y: PathBuf,
    #[arg(long, default_value = "gaussian")]
    family: String,
    /// Number of random splits.
    #[arg(long = "B", default_value_t = 50)]
    n_splits: usize,
    /// Fraction of rows used for selection.
    #[arg(long, default_value_t = 0.9)]
    frac: f64,
    /// Lower end of the optimized quantile range (the default aggregation).
    #[arg(long, conflicts_with = "gamma")]
    gamma_min: Option<f64>,
    /// Fixed quantile for aggregation.
    #[arg(long)]
    gamma: Option<f64>,
    /// selected or saturated.
    #[arg(long)]
    view: Option<String>,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// known:<value>, global-cv, or per-split.
    #[arg(long, default_value = "global-cv")]
    sigma: String,
    /// cv_1se, cv_min, fixed_size:<k>, or lambda:<value>.
    #[arg(long, default_value = "cv_1se")]
    selector: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Fit an unpenalized intercept.
    #[arg(long)]
    intercept: bool,
    #[arg(long, default_value_t = 10)]
    n_folds: usize,
    /// Fixed chain length instead of the default rule.
    #[arg(long)]
    chain_samples: Option<usize>,
    /// Run every chain to full length.
    #[arg(long)]
    no_early_abort: bool,
    /// Output directory; the CSV summary goes to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimArgs {
    /// SimConfig file (`key = value` lines).
    #[arg(long, required_unless_present = "replay")]
    config: Option<PathBuf>,
    /// Recompute metrics from a stored archive instead of simulating.
    #[arg(long)]
    replay: Option<PathBuf>,
    /// Override the number of runs.
    #[arg(long)]
    runs: Option<usize>,
    /// Override the master seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

fn dataset(args: &InferArgs) -> anyhow::Result<Dataset> {
    let family: Family = args.family.parse()?;
    let x = io::read_matrix(&args.x)?;
    let y = io::read_vector(&args.y)?;
    Ok(Dataset::new(x, y, family)?)
}

fn config(args: &InferArgs, default_view: View) -> anyhow::Result<MulticarveConfig> {
    let aggregation = match (args.gamma, args.gamma_min) {
        (Some(g), _) => Aggregation::Fixed(g),
        (None, Some(g)) => Aggregation::Optimized(g),
        (None, None) if args.n_splits == 1 => Aggregation::Fixed(1.0),
        (None, None) => Aggregation::Optimized(0.05),
    };
    let view = match &args.view {
        Some(v) => v.parse()?,
        None => default_view,
    };
    let mut cfg = MulticarveConfig {
        n_splits: args.n_splits,
        fraction: args.frac,
        aggregation,
        alpha: args.alpha,
        view,
        family: args.family.parse()?,
        sigma: args.sigma.replace('-', "_").parse::<SigmaMode>()?,
        selector: args.selector.parse::<Selector>()?,
        intercept: args.intercept,
        n_folds: args.n_folds,
        master_seed: args.seed,
        ..MulticarveConfig::default()
    };
    cfg.chain.n_samples = args.chain_samples;
    cfg.chain.early_abort = !args.no_early_abort;
    cfg.validate()?;
    Ok(cfg)
}

fn write_outputs(out: Option<&Path>, files: &[(&str, String)]) -> anyhow::Result<()> {
    match out {
        Some(dir) => {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            for (name, body) in files {
                let path = dir.join(name);
                fs::write(&path, body).with_context(|| format!("writing {}", path.display()))?;
                info!("wrote {}", path.display());
            }
        }
        None => {
            if let Some((_, csv)) = files.iter().find(|(name, _)| name.ends_with(".csv")) {
                print!("{csv}");
            }
        }
    }
    Ok(())
}

fn simulate(args: &SimArgs) -> anyhow::Result<()> {
    let archive = match &args.replay {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            Archive::from_jsonl(&text)?
        }
        None => {
            let path = args.config.as_ref().expect("clap enforces --config");
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let mut cfg = SimConfig::parse(&text)?;
            if let Some(r) = args.runs {
                cfg.runs = r;
            }
            if let Some(s) = args.seed {
                cfg.master_seed = s;
            }
            cfg.validate()?;
            info!("simulating {} runs of {} methods", cfg.runs, cfg.methods().len());
            sim::run_experiment(&cfg)?
        }
    };
    let failed = archive.runs.iter().filter(|r| r.error.is_some()).count();
    if failed > 0 {
        log::warn!("{failed} of {} runs failed and are excluded", archive.runs.len());
    }
    let table = sim::compute_metrics(&archive);
    let mut files = vec![
        ("metrics.csv", table.to_csv()),
        ("metrics.json", table.to_json()),
        ("plot.csv", table.to_plot_csv()),
    ];
    if args.replay.is_none() {
        files.push(("archive.jsonl", archive.to_jsonl()));
    }
    write_outputs(Some(&args.out), &files)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global()?;
    }
    match cli.command {
        Command::Run(args) => {
            let cfg = config(&args, View::Selected)?;
            let data = dataset(&args)?;
            let report = multi::multicarve(&data, &cfg)?;
            write_outputs(args.out.as_deref(), &[("report.json", report.to_json()), ("report.csv", report.to_csv())])
        }
        Command::Ci { args, ci_intercept } => {
            let cfg = config(&args, View::Saturated)?;
            let data = dataset(&args)?;
            let report = multi::multicarve_with_intervals(&data, &cfg, ci_intercept)?;
            write_outputs(args.out.as_deref(), &[("report.json", report.to_json()), ("report.csv", report.to_csv())])
        }
        Command::Group { args, groups, group_correction } => {
            let cfg = config(&args, View::Selected)?;
            let correction = match group_correction.as_str() {
                "none" => GroupCorrection::None,
                "size" => GroupCorrection::Size,
                "selected" => GroupCorrection::Selected,
                other => bail!(multicarve::Error::Validation(format!("unknown group correction `{other}`"))),
            };
            let groups = io::read_groups(&groups)?;
            let data = dataset(&args)?;
            let report = multi::multicarve_groups(&data, &cfg, &groups, correction)?;
            write_outputs(args.out.as_deref(), &[("report.json", report.to_json()), ("report.csv", report.to_csv())])
        }
        Command::Simulate(args) => simulate(&args),
        Command::Selftest { seed, json } => {
            let outcomes = selftest::run_all(seed);
            let ok = outcomes.iter().all(|o| o.passed);
            if json {
                println!("{}", serde_json::to_string_pretty(&outcomes)?);
            } else {
                for o in &outcomes {
                    println!(
                        "{:<30} {}  {:.3e} (< {:.0e})  {:.1}s  {}",
                        o.name,
                        if o.passed { "PASS" } else { "FAIL" },
                        o.statistic,
                        o.threshold,
                        o.seconds,
                        o.detail
                    );
                }
            }
            if !ok {
                bail!("one or more oracle suites failed");
            }
            Ok(())
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<multicarve::Error>() {
        Some(e) if e.is_validation() => 2,
        Some(_) => 3,
        None => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let selftest = matches!(cli.command, Command::Selftest { .. });
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if selftest { 3 } else { exit_code(&e) })
        }
    }
}
