//! Command line front end: Monte Carlo simulations, bound sweeps,
//! minimum-code-length solving, and decision-statistic mean checks.
//!
//! Exit codes: 0 on success, 2 for configuration problems, 3 for runtime
//! numeric failures.

use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Parser, Subcommand};
use serde::Deserialize;

use actdet_core::bounds::{solve_measurement_inequality, BoundInputs, MeasurementKind};
use actdet_core::harness::{
    run_bound_sweep, run_experiment, verify_means, write_bound_csv, write_bound_json,
    write_slot_csv, write_slot_json, Algorithm, BoundGrid, BoundKind, ExperimentSpec, NoiseSpec,
    OutputFormat, PowerProfile,
};
use actdet_core::system_model::SystemConfig;
use actdet_core::Error;

#[derive(Parser)]
#[command(name = "actdet", version, about = "Grant-free activity detection experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a seeded Monte Carlo experiment and emit per-slot failure rates.
    Simulate(SimulateArgs),
    /// Evaluate a failure-probability bound over a parameter grid.
    Bounds(BoundsArgs),
    /// Solve a measurement inequality for the smallest code length.
    MinL(MinLArgs),
    /// Compare empirical decision-statistic means with their closed forms.
    VerifyMeans(VerifyMeansArgs),
}

#[derive(clap::Args)]
struct SimulateArgs {
    /// TOML config file mirroring the experiment fields; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    /// Random access slots per coherence interval.
    #[arg(long)]
    slots: Option<usize>,
    #[arg(long)]
    n_users: Option<usize>,
    #[arg(long)]
    n_active: Option<usize>,
    #[arg(long)]
    code_len: Option<usize>,
    #[arg(long)]
    antennas: Option<usize>,
    /// Comma-separated subset of plain,omc,otd,full_csi,somp,tp_demo.
    #[arg(long)]
    algorithms: Option<String>,
    /// Per-user SNR in dB; mutually exclusive with --noise-var.
    #[arg(long)]
    snr_db: Option<f64>,
    #[arg(long)]
    noise_var: Option<f64>,
    /// Uniform power spread in dB (0 means equal power).
    #[arg(long)]
    power_spread_db: Option<f64>,
    /// Equal received power per user.
    #[arg(long)]
    power: Option<f64>,
    /// Reuse one code matrix across trials.
    #[arg(long)]
    fix_codes: bool,
    /// Output path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// csv or json.
    #[arg(long)]
    format: Option<String>,
    /// Worker threads; defaults to the number of cores.
    #[arg(long)]
    threads: Option<usize>,
}

/// Flat key-value config file, all fields optional.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    seed: Option<u64>,
    trials: Option<usize>,
    slots: Option<usize>,
    n_users: Option<usize>,
    n_active: Option<usize>,
    code_len: Option<usize>,
    antennas: Option<usize>,
    algorithms: Option<Vec<String>>,
    snr_db: Option<f64>,
    noise_var: Option<f64>,
    power_spread_db: Option<f64>,
    power: Option<f64>,
    fix_codes: Option<bool>,
    out: Option<PathBuf>,
    format: Option<String>,
}

#[derive(clap::Args)]
struct BoundsArgs {
    /// omc, otd, omc-large-m, or otd-large-m.
    #[arg(long)]
    kind: String,
    /// Comma-separated code lengths.
    #[arg(long, default_value = "49510")]
    code_len: String,
    /// Comma-separated known-user counts.
    #[arg(long, default_value = "0")]
    known_users: String,
    #[arg(long, default_value_t = 400_000)]
    n_users: usize,
    #[arg(long, default_value_t = 40)]
    n_active: usize,
    #[arg(long, default_value_t = 50_000)]
    antennas: usize,
    /// Active users with CSI; defaults to round(K * known / N).
    #[arg(long)]
    active_known: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    p_min: f64,
    #[arg(long, default_value_t = 1.0)]
    p_max: f64,
    #[arg(long, default_value_t = 0.0)]
    noise_var: f64,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    format: Option<String>,
}

#[derive(clap::Args)]
struct MinLArgs {
    /// omc, plain, full-csi, otd-small-lambda, or otd-large-lambda.
    #[arg(long)]
    kind: String,
    /// Target failure probability in (0, 1).
    #[arg(long)]
    delta: f64,
    #[arg(long, default_value_t = 400_000)]
    n_users: usize,
    #[arg(long, default_value_t = 40)]
    n_active: usize,
    #[arg(long, default_value_t = 0)]
    known_users: usize,
    #[arg(long, default_value_t = 1.0)]
    p_min: f64,
    #[arg(long, default_value_t = 1.0)]
    p_max: f64,
}

#[derive(clap::Args)]
struct VerifyMeansArgs {
    /// Total antenna samples to aggregate.
    #[arg(long, default_value_t = 20_000)]
    samples: usize,
    #[arg(long, default_value_t = 200)]
    n_users: usize,
    #[arg(long, default_value_t = 20)]
    n_active: usize,
    #[arg(long, default_value_t = 35)]
    code_len: usize,
    #[arg(long, default_value_t = 100)]
    antennas: usize,
    #[arg(long, default_value_t = 0.0)]
    snr_db: f64,
    #[arg(long)]
    noise_var: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    power: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

fn parse_list<T: FromStr>(text: &str, what: &str) -> anyhow::Result<Vec<T>> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<T>()
                .map_err(|_| anyhow::anyhow!("invalid {what} entry '{s}'"))
        })
        .collect()
}

fn output_format(flag: &Option<String>) -> anyhow::Result<OutputFormat> {
    match flag.as_deref() {
        None => Ok(OutputFormat::Csv),
        Some(s) => Ok(OutputFormat::from_str(s)?),
    }
}

fn emit(path: &Option<PathBuf>, write: impl Fn(Box<dyn Write>) -> anyhow::Result<()>) -> anyhow::Result<()> {
    match path {
        Some(p) => {
            let file = fs::File::create(p)
                .map_err(|e| anyhow::anyhow!("cannot create {}: {e}", p.display()))?;
            write(Box::new(file))
        }
        None => write(Box::new(std::io::stdout().lock())),
    }
}

fn simulate(args: SimulateArgs) -> anyhow::Result<()> {
    let file: FileConfig = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| {
                Error::Config(format!("cannot read {}: {e}", path.display()))
            })?;
            toml::from_str(&text).map_err(|e| Error::Config(format!("config parse: {e}")))?
        }
        None => FileConfig::default(),
    };

    let algorithms: Vec<Algorithm> = match (&args.algorithms, &file.algorithms) {
        (Some(flag), _) => parse_list::<String>(flag, "algorithm")?
            .iter()
            .map(|s| Algorithm::from_str(s))
            .collect::<Result<_, _>>()?,
        (None, Some(list)) => list
            .iter()
            .map(|s| Algorithm::from_str(s))
            .collect::<Result<_, _>>()?,
        (None, None) => vec![Algorithm::Plain, Algorithm::Omc, Algorithm::FullCsi],
    };

    let power = args.power.or(file.power).unwrap_or(1.0);
    let spread = args.power_spread_db.or(file.power_spread_db).unwrap_or(0.0);
    let power_profile = if spread == 0.0 {
        PowerProfile::Equal { power }
    } else {
        PowerProfile::UniformDbSpread { spread_db: spread }
    };

    let noise = match (args.noise_var.or(file.noise_var), args.snr_db.or(file.snr_db)) {
        (Some(_), Some(_)) => {
            return Err(Error::Config(
                "give either noise_var or snr_db, not both".into(),
            )
            .into())
        }
        (Some(v), None) => NoiseSpec::Variance(v),
        (None, Some(db)) => NoiseSpec::SnrDb(db),
        (None, None) => NoiseSpec::SnrDb(0.0),
    };

    let spec = ExperimentSpec::<f64> {
        n_users: args.n_users.or(file.n_users).unwrap_or(200),
        n_active: args.n_active.or(file.n_active).unwrap_or(20),
        code_len: args.code_len.or(file.code_len).unwrap_or(35),
        n_antennas: args.antennas.or(file.antennas).unwrap_or(256),
        n_slots: args.slots.or(file.slots).unwrap_or(50),
        n_trials: args.trials.or(file.trials).unwrap_or(100),
        algorithms,
        power_profile,
        noise,
        seed: args.seed.or(file.seed).unwrap_or(1),
        fix_codes: args.fix_codes || file.fix_codes.unwrap_or(false),
    };

    let results = match args.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| anyhow::anyhow!("thread pool: {e}"))?
            .install(|| run_experiment(&spec))?,
        None => run_experiment(&spec)?,
    };

    let out = args.out.clone().or(file.out);
    match output_format(&args.format.clone().or(file.format))? {
        OutputFormat::Csv => emit(&out, |w| Ok(write_slot_csv(&results, w)?)),
        OutputFormat::Json => emit(&out, |w| Ok(write_slot_json(&results, w)?)),
    }
}

fn bounds(args: BoundsArgs) -> anyhow::Result<()> {
    let grid = BoundGrid::<f64> {
        kind: BoundKind::from_str(&args.kind)?,
        code_lens: parse_list(&args.code_len, "code length")?,
        known_users: parse_list(&args.known_users, "known-user count")?,
        n_users: args.n_users,
        n_active: args.n_active,
        n_antennas: args.antennas,
        active_known: args.active_known,
        p_min: args.p_min,
        p_max: args.p_max,
        noise_var: args.noise_var,
    };
    let rows = run_bound_sweep(&grid)?;
    match output_format(&args.format)? {
        OutputFormat::Csv => emit(&args.out, |w| Ok(write_bound_csv(&rows, w)?)),
        OutputFormat::Json => emit(&args.out, |w| Ok(write_bound_json(&rows, w)?)),
    }
}

fn min_l(args: MinLArgs) -> anyhow::Result<()> {
    let kind = match args.kind.as_str() {
        "omc" => MeasurementKind::Omc,
        "plain" => MeasurementKind::Plain,
        "full-csi" | "full_csi" => MeasurementKind::FullCsi,
        "otd-small-lambda" => MeasurementKind::OtdSmallLambda,
        "otd-large-lambda" => MeasurementKind::OtdLargeLambda,
        other => return Err(Error::Config(format!("unknown kind '{other}'")).into()),
    };
    let active_known =
        actdet_core::bounds::expected_active_known(args.n_active, args.known_users, args.n_users);
    let inputs = BoundInputs::<f64> {
        code_len: 16,
        n_antennas: 1,
        n_users: args.n_users,
        n_active: args.n_active,
        known_users: args.known_users,
        active_known,
        active_unknown: args.n_active - active_known,
        p_min: args.p_min,
        p_max: args.p_max,
        noise_var: 0.0,
        target_pof: args.delta,
    };
    let code_len = solve_measurement_inequality(kind, &inputs)?;
    println!(
        "kind={} delta={} n_users={} n_active={} known_users={} -> min code_len = {code_len}",
        kind.label(),
        args.delta,
        args.n_users,
        args.n_active,
        args.known_users
    );
    Ok(())
}

fn verify(args: VerifyMeansArgs) -> anyhow::Result<()> {
    let noise_var = match args.noise_var {
        Some(v) => v,
        None => actdet_core::system_model::noise_var_from_snr_db(
            args.power,
            args.code_len,
            args.snr_db,
        ),
    };
    let cfg = SystemConfig::<f64>::equal_power(
        args.n_users,
        args.n_active,
        args.code_len,
        args.antennas,
        1,
        args.power,
        noise_var,
        args.seed,
    )?;
    let report = verify_means(&cfg, args.samples)?;
    print!("{report}");
    Ok(())
}

fn run() -> anyhow::Result<()> {
    match Cli::parse().command {
        Command::Simulate(args) => simulate(args),
        Command::Bounds(args) => bounds(args),
        Command::MinL(args) => min_l(args),
        Command::VerifyMeans(args) => verify(args),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            let config_error = err
                .downcast_ref::<Error>()
                .map(|e| matches!(e, Error::Config(_) | Error::InvalidPopulations(_)))
                .unwrap_or(false)
                || err.to_string().starts_with("invalid ");
            if config_error {
                ExitCode::from(2)
            } else {
                ExitCode::from(3)
            }
        }
    }
}
