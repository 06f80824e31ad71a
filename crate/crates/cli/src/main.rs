//! Command-line surface for negative-binomial trial planning: sample size,
//! nominal power, Monte Carlo verification, dispersion back-calculation,
//! and regeneration of the reference design grids.

mod output;
mod params;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use nbtrial_core::sim::{monte_carlo, DispersionMode, Fitter, SimConfig};
use nbtrial_core::sizing::{compute_power, compute_size};
use nbtrial_core::summary::{
    kappa_from_quasi_poisson, kappa_from_rate_ci, kappa_from_ratio_ci, kappa_zhu_lakkis,
    PublishedArmSummary,
};
use nbtrial_core::tables::TableDesign;

use params::{parse_and_validate, parse_format, CliError, CommandKind, RawParams, RunConfig};

#[derive(Parser)]
#[command(
    name = "nbtrial",
    version,
    about = "Power and sample size for comparing negative binomial event rates in superiority, noninferiority, and equivalence trials with unequal follow-up"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute the total sample size at a target power
    Size(TrialArgs),
    /// Compute the nominal power at a given total size
    Power(TrialArgs),
    /// Simulate trials at a given size and report the empirical rejection rate
    Simulate(TrialArgs),
    /// Back-calculate the dispersion parameter from published summaries
    #[command(subcommand)]
    Backcalc(BackcalcCommand),
    /// Regenerate the deterministic reference grids as CSV
    Tables(TablesArgs),
}

/// Trial parameters shared by `size`, `power`, and `simulate`. Any value
/// can also come from a `--config` file with `key = value` lines; flags
/// override the file.
#[derive(Args, Clone, Default)]
struct TrialArgs {
    /// Flat key = value config file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Follow-up design: 1 (fixed duration) or 2 (staggered accrual)
    #[arg(long)]
    design: Option<String>,
    /// Post-accrual follow-up duration (design 1: the planned duration)
    #[arg(long)]
    tauc: Option<f64>,
    /// Accrual duration (design 2 only)
    #[arg(long)]
    taua: Option<f64>,
    /// Entry-density shape (0 = uniform entry)
    #[arg(long)]
    eta: Option<f64>,
    /// Control-arm event rate
    #[arg(long)]
    lambda0: Option<f64>,
    /// Active-arm event rate
    #[arg(long)]
    lambda1: Option<f64>,
    /// Control-arm dispersion
    #[arg(long)]
    kappa0: Option<f64>,
    /// Active-arm dispersion (defaults to kappa0)
    #[arg(long)]
    kappa1: Option<f64>,
    /// Control-arm exponential dropout hazard
    #[arg(long)]
    droprate0: Option<f64>,
    /// Active-arm exponential dropout hazard (defaults to droprate0)
    #[arg(long)]
    droprate1: Option<f64>,
    /// Control-arm overall dropout proportion by tauc (alternative to droprate0)
    #[arg(long = "dropout-prop0")]
    dropout_prop0: Option<f64>,
    /// Active-arm overall dropout proportion by tauc
    #[arg(long = "dropout-prop1")]
    dropout_prop1: Option<f64>,
    /// Allocation fraction of the control arm
    #[arg(long)]
    p0: Option<f64>,
    /// Two-sided significance level of the Wald CI
    #[arg(long)]
    alpha: Option<f64>,
    /// Target power (size command)
    #[arg(long)]
    power: Option<f64>,
    /// Total sample size (power and simulate commands)
    #[arg(long)]
    ntot: Option<u64>,
    /// Hypothesis type: sup, ni, or equi
    #[arg(long = "type")]
    hypothesis: Option<String>,
    /// Treatment-effect metric: ratio or diff
    #[arg(long)]
    metric: Option<String>,
    /// Noninferiority margin on the rate ratio
    #[arg(long)]
    mr0: Option<f64>,
    /// Upper equivalence margin on the rate ratio
    #[arg(long)]
    mru: Option<f64>,
    /// Lower equivalence margin on the rate ratio (defaults to 1/mru)
    #[arg(long)]
    mrl: Option<f64>,
    /// Noninferiority margin on the rate difference
    #[arg(long)]
    md0: Option<f64>,
    /// Upper equivalence margin on the rate difference
    #[arg(long)]
    mdu: Option<f64>,
    /// Lower equivalence margin on the rate difference (defaults to -mdu)
    #[arg(long)]
    mdl: Option<f64>,
    /// Simulation replications
    #[arg(long)]
    reps: Option<u64>,
    /// Master seed for the simulation streams
    #[arg(long)]
    seed: Option<u64>,
    /// Output format: human, jsonl, or csv
    #[arg(long)]
    format: Option<String>,
    /// Rounding convention: total or per-arm
    #[arg(long)]
    rounding: Option<String>,
}

impl TrialArgs {
    fn into_raw(self) -> Result<RawParams, CliError> {
        let mut raw = RawParams {
            design: self.design,
            tauc: self.tauc,
            taua: self.taua,
            eta: self.eta,
            lambda0: self.lambda0,
            lambda1: self.lambda1,
            kappa0: self.kappa0,
            kappa1: self.kappa1,
            droprate0: self.droprate0,
            droprate1: self.droprate1,
            dropout_prop0: self.dropout_prop0,
            dropout_prop1: self.dropout_prop1,
            p0: self.p0,
            alpha: self.alpha,
            power: self.power,
            ntot: self.ntot,
            hypothesis: self.hypothesis,
            metric: self.metric,
            mr0: self.mr0,
            mru: self.mru,
            mrl: self.mrl,
            md0: self.md0,
            mdu: self.mdu,
            mdl: self.mdl,
            reps: self.reps,
            seed: self.seed,
            format: self.format,
            rounding: self.rounding,
        };
        if let Some(path) = self.config {
            let file = RawParams::from_config_file(&path)?;
            raw.or_from(&file);
        }
        Ok(raw)
    }
}

#[derive(Subcommand, Clone)]
enum BackcalcCommand {
    /// From one arm's published event-rate CI
    RateCi {
        /// Arm size
        #[arg(long)]
        n: u64,
        /// Observed mean event count per subject
        #[arg(long)]
        events: f64,
        /// Mean follow-up time
        #[arg(long)]
        tbar: f64,
        /// Maximum follow-up time
        #[arg(long)]
        tmax: f64,
        /// Rate CI as lower,upper
        #[arg(long, value_parser = parse_pair)]
        ci: (f64, f64),
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long)]
        format: Option<String>,
    },
    /// From a published rate-ratio CI and both arms' summaries
    RatioCi {
        #[arg(long)]
        n0: u64,
        #[arg(long)]
        events0: f64,
        #[arg(long)]
        tbar0: f64,
        #[arg(long)]
        tmax0: f64,
        #[arg(long)]
        n1: u64,
        #[arg(long)]
        events1: f64,
        #[arg(long)]
        tbar1: f64,
        #[arg(long)]
        tmax1: f64,
        /// Ratio CI as lower,upper
        #[arg(long, value_parser = parse_pair)]
        ci: (f64, f64),
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long)]
        format: Option<String>,
    },
    /// From a quasi-Poisson Pearson dispersion factor
    Phi {
        /// Pearson dispersion factor
        #[arg(long)]
        phi: f64,
        /// Overall mean event count across arms
        #[arg(long = "mean-events")]
        mean_events: f64,
        /// Pooled event rate; when given, also prints the rate-denominator
        /// variant for comparison
        #[arg(long = "pooled-rate")]
        pooled_rate: Option<f64>,
        #[arg(long)]
        format: Option<String>,
    },
}

fn parse_pair(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s
        .split_once(',')
        .ok_or_else(|| format!("expected lower,upper but got {s:?}"))?;
    let lo: f64 = a.trim().parse().map_err(|_| format!("bad number {a:?}"))?;
    let hi: f64 = b.trim().parse().map_err(|_| format!("bad number {b:?}"))?;
    Ok((lo, hi))
}

#[derive(Args, Clone)]
struct TablesArgs {
    /// Which grid to emit: type1-design1, type1-design2, ni-design1,
    /// ni-design2, hetero, equiv, or all
    #[arg(long, default_value = "all")]
    which: String,
    /// Write to a file instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(text) => print!("{text}"),
        Err(e) => {
            eprintln!("{}", e.message);
            std::process::exit(e.code);
        }
    }
}

fn computation(e: nbtrial_core::Error) -> CliError {
    CliError {
        code: 1,
        message: e.to_string(),
    }
}

fn dispatch(command: Command) -> Result<String, CliError> {
    match command {
        Command::Size(args) => run_trial(CommandKind::Size, args),
        Command::Power(args) => run_trial(CommandKind::Power, args),
        Command::Simulate(args) => run_trial(CommandKind::Simulate, args),
        Command::Backcalc(cmd) => run_backcalc(cmd),
        Command::Tables(args) => run_tables(args),
    }
}

fn run_trial(kind: CommandKind, args: TrialArgs) -> Result<String, CliError> {
    let raw = args.into_raw()?;
    let cfg = parse_and_validate(kind, raw)?;
    run(&cfg)
}

/// Executes a validated configuration; exposed for the integration tests.
fn run(cfg: &RunConfig) -> Result<String, CliError> {
    match cfg.command {
        CommandKind::Size => {
            let result = compute_size(&cfg.spec, cfg.target_power.unwrap(), cfg.rounding)
                .map_err(computation)?;
            output::render_size(&cfg.spec, &result, cfg.format).map_err(computation)
        }
        CommandKind::Power => {
            let ntot = cfg.ntot.unwrap();
            let power = compute_power(&cfg.spec, ntot).map_err(computation)?;
            output::render_power(&cfg.spec, ntot, power, cfg.format).map_err(computation)
        }
        CommandKind::Simulate => {
            let mode = if cfg.spec.control.kappa == cfg.spec.active.kappa {
                DispersionMode::Common
            } else {
                DispersionMode::PerArm
            };
            let sim = SimConfig {
                spec: cfg.spec,
                n_total: cfg.ntot.unwrap(),
                truth: (cfg.spec.control.lambda, cfg.spec.active.lambda),
                replications: cfg.replications,
                seed: cfg.seed,
                fitter: Fitter::NegBinomial(mode),
            };
            let report = monte_carlo(&sim).map_err(computation)?;
            Ok(output::render_simulation(&report, cfg.format))
        }
    }
}

fn run_backcalc(cmd: BackcalcCommand) -> Result<String, CliError> {
    match cmd {
        BackcalcCommand::RateCi {
            n,
            events,
            tbar,
            tmax,
            ci,
            alpha,
            format,
        } => {
            let format = parse_format(format.as_deref())?;
            let arm = PublishedArmSummary {
                n,
                mean_events: events,
                mean_followup: tbar,
                max_followup: tmax,
                rate_ci: Some(ci),
            };
            let interval = kappa_from_rate_ci(&arm, alpha).map_err(computation)?;
            Ok(output::render_interval(&interval, format))
        }
        BackcalcCommand::RatioCi {
            n0,
            events0,
            tbar0,
            tmax0,
            n1,
            events1,
            tbar1,
            tmax1,
            ci,
            alpha,
            format,
        } => {
            let format = parse_format(format.as_deref())?;
            let arm0 = PublishedArmSummary {
                n: n0,
                mean_events: events0,
                mean_followup: tbar0,
                max_followup: tmax0,
                rate_ci: None,
            };
            let arm1 = PublishedArmSummary {
                n: n1,
                mean_events: events1,
                mean_followup: tbar1,
                max_followup: tmax1,
                rate_ci: None,
            };
            let interval = kappa_from_ratio_ci((&arm0, &arm1), ci, alpha).map_err(computation)?;
            Ok(output::render_interval(&interval, format))
        }
        BackcalcCommand::Phi {
            phi,
            mean_events,
            pooled_rate,
            format,
        } => {
            let format = parse_format(format.as_deref())?;
            let estimate = kappa_from_quasi_poisson(phi, mean_events).map_err(computation)?;
            let zl = pooled_rate
                .map(|rate| kappa_zhu_lakkis(phi, rate).map_err(computation))
                .transpose()?;
            Ok(output::render_phi(&estimate, zl, format))
        }
    }
}

fn run_tables(args: TablesArgs) -> Result<String, CliError> {
    let one = |which: &str| -> Result<String, CliError> {
        match which {
            "type1-design1" => output::type1_table_csv(TableDesign::Design1).map_err(computation),
            "type1-design2" => output::type1_table_csv(TableDesign::Design2).map_err(computation),
            "ni-design1" => output::ni_table_csv(TableDesign::Design1).map_err(computation),
            "ni-design2" => output::ni_table_csv(TableDesign::Design2).map_err(computation),
            "hetero" => output::hetero_table_csv().map_err(computation),
            "equiv" => output::equiv_table_csv().map_err(computation),
            other => Err(CliError {
                code: 1,
                message: format!(
                    "unknown table {other}; expected type1-design1, type1-design2, ni-design1, ni-design2, hetero, equiv, or all"
                ),
            }),
        }
    };
    let text = if args.which == "all" {
        let mut out = String::new();
        for which in [
            "type1-design1",
            "type1-design2",
            "ni-design1",
            "ni-design2",
            "hetero",
            "equiv",
        ] {
            out.push_str(&format!("# {which}\n"));
            out.push_str(&one(which)?);
            out.push('\n');
        }
        out
    } else {
        one(&args.which)?
    };
    if let Some(path) = args.out {
        std::fs::write(&path, &text).map_err(|e| CliError {
            code: 1,
            message: format!("cannot write {}: {e}", path.display()),
        })?;
        Ok(String::new())
    } else {
        Ok(text)
    }
}
