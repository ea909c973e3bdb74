use std::fs::File;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use m2m_uplink::channel::{sample_devices, Scenario};
use m2m_uplink::config::Config;
use m2m_uplink::coordinated::{
    allocation_cost, coordinated_max_load, energy_ratio_bound, fdma_schedule, fdma_vs_sic_ratio, sic_sum_power,
    tdma_power_ratio_bound, tdma_schedule, CoordKind, Mode, Objective, ScheduleResult, ScheduleRow,
};
use m2m_uplink::montecarlo::{lambda_range, run_sweep_with, write_records, Strategy, SweepOptions, DEFAULT_TRIALS};
use m2m_uplink::uncoordinated::{ra_max_load, DesignRow, RaDesign, RaKind};
use m2m_uplink::Error;

#[derive(Parser, Debug)]
#[command(name = "m2m-uplink", version, about = "Uplink access design for massive machine-type traffic")]
struct Cli {
    /// Scenario file (TOML); built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// CSV destination; stdout when omitted.
    #[arg(long, global = true)]
    output: Option<PathBuf>,

    /// Override a config key, e.g. `--set payload_bits=2000`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,

    #[arg(long, env = "M2M_UPLINK_SEED", default_value_t = 1, global = true)]
    seed: u64,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Size a random-access design for one arrival rate.
    Design {
        #[arg(long, value_enum)]
        kind: RaArg,
        /// Arrivals per second; the config's lambda_rate when omitted.
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        pf: Option<f64>,
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long)]
        delta: Option<f64>,
    },
    /// Schedule K sampled devices and report their power and energy.
    Schedule {
        #[arg(long, value_enum)]
        kind: ScheduleArg,
        #[arg(long, value_enum, default_value = "power")]
        objective: ObjectiveArg,
        #[arg(long, value_enum, default_value = "optimal")]
        mode: ModeArg,
        #[arg(long)]
        k: usize,
    },
    /// Mean and 95th-percentile power and energy over a range of arrival rates.
    Sweep {
        /// `start:stop:step` or a comma-separated list.
        #[arg(long)]
        lambdas: String,
        /// Comma-separated strategies; all when omitted.
        #[arg(long)]
        strategies: Option<String>,
        #[arg(long, default_value_t = DEFAULT_TRIALS)]
        trials: usize,
    },
    /// Largest supportable arrival rate.
    Maxload {
        #[arg(long, value_enum)]
        kind: LoadArg,
        /// Gain draws (random access) or slots (scheduled access).
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Equal-versus-optimal bounds for K sampled devices.
    Bounds {
        #[arg(long)]
        k: usize,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum RaArg {
    Cdma,
    Fdma,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ScheduleArg {
    Tdma,
    Fdma,
    Sic,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ObjectiveArg {
    Power,
    Energy,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Optimal,
    Equal,
    ClosedForm,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum LoadArg {
    Cdma,
    Fdma,
    Tdma,
    FdmaCoord,
}

#[derive(Serialize)]
struct CoordLoadRow {
    kind: &'static str,
    lambda_max: f64,
    outage: f64,
    mean_floor: f64,
    slln_k_max: f64,
    slln_lambda: f64,
    trials: usize,
    seed: u64,
}

#[derive(Serialize)]
struct BoundsRow {
    k: usize,
    seed: u64,
    tdma_power_ratio_bound: f64,
    energy_ratio_bound: f64,
    fdma_vs_sic_ratio: f64,
}

const RA_TRIALS: usize = 100_000;
const COORD_TRIALS: usize = 2000;

fn parse_overrides(raw: &[String]) -> anyhow::Result<Vec<(String, String)>> {
    raw.iter()
        .map(|kv| {
            kv.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| anyhow!(Error::Config(format!("override '{kv}' is not KEY=VALUE"))))
        })
        .collect()
}

fn parse_lambdas(arg: &str) -> anyhow::Result<Vec<f64>> {
    let number = |s: &str| -> anyhow::Result<f64> {
        s.trim()
            .parse()
            .map_err(|_| anyhow!(Error::InvalidArgument(format!("'{s}' is not a number in --lambdas"))))
    };
    let parts: Vec<&str> = arg.split(':').collect();
    match parts.as_slice() {
        [start, stop, step] => Ok(lambda_range(number(start)?, number(stop)?, number(step)?)?),
        [single] => single.split(',').map(number).collect(),
        _ => bail!(Error::InvalidArgument(format!("--lambdas '{arg}': use start:stop:step or a list"))),
    }
}

fn parse_strategies(list: Option<&str>) -> anyhow::Result<Vec<Strategy>> {
    match list {
        None => Ok(Strategy::ALL.to_vec()),
        Some(s) => Ok(s.split(',').map(|x| x.trim().parse()).collect::<Result<Vec<_>, _>>()?),
    }
}

fn gains_for(scenario: &Scenario, k: usize, seed: u64) -> Vec<f64> {
    sample_devices(scenario, k, seed).iter().map(|d| d.gain).collect()
}

fn schedule(scenario: &Scenario, kind: ScheduleArg, objective: Objective, mode: Mode, k: usize, seed: u64) -> anyhow::Result<ScheduleResult> {
    if k == 0 {
        bail!(Error::InvalidArgument("--k must be >= 1".into()));
    }
    let mut gains = gains_for(scenario, k, seed);
    Ok(match kind {
        ScheduleArg::Tdma => {
            let alloc = tdma_schedule(&gains, scenario, objective, mode)?;
            allocation_cost(&alloc, &gains, scenario)
        }
        ScheduleArg::Fdma => {
            let alloc = fdma_schedule(&gains, scenario, mode)?;
            allocation_cost(&alloc, &gains, scenario)
        }
        ScheduleArg::Sic => {
            gains.sort_by(f64::total_cmp);
            sic_sum_power(&gains, scenario)?
        }
    })
}

fn run(cli: Cli, out: &mut dyn Write) -> anyhow::Result<()> {
    let overrides = parse_overrides(&cli.overrides)?;
    let config = match &cli.config {
        Some(path) => Config::load(path, &overrides)?,
        None => Config::parse("", &overrides)?,
    };
    let scenario = config.scenario();
    let seed = cli.seed;

    let mut csv = Vec::new();
    match cli.command {
        Command::Design { kind, lambda, pf, eps, delta } => {
            let lambda = lambda.unwrap_or(config.lambda_rate);
            let (pf, eps, delta) = (pf.unwrap_or(config.p_f), eps.unwrap_or(config.eps), delta.unwrap_or(config.delta));
            let kind = match kind {
                RaArg::Cdma => RaKind::Cdma,
                RaArg::Fdma => RaKind::Fdma,
            };
            let design = RaDesign::for_load(kind, &scenario, lambda, pf, eps, delta)?;
            let row = DesignRow::new(&design, &scenario, lambda, eps, delta);
            writeln!(
                out,
                "{} design at lambda = {lambda}: N_bar = {}, size = {}, target SINR = {:.3} dB, P_c = {:.4e}",
                kind.as_str(),
                row.n_bar,
                row.code_len_or_channels,
                row.target_sinr_db,
                row.p_coll
            )?;
            write_records(&[row], &mut csv)?;
        }
        Command::Schedule { kind, objective, mode, k } => {
            let objective = match objective {
                ObjectiveArg::Power => Objective::Power,
                ObjectiveArg::Energy => Objective::Energy,
            };
            let mode = match mode {
                ModeArg::Optimal => Mode::Optimal,
                ModeArg::Equal => Mode::Equal,
                ModeArg::ClosedForm => Mode::ClosedForm,
            };
            let result = schedule(&scenario, kind, objective, mode, k, seed)?;
            let name = format!("{kind:?}").to_lowercase();
            let row = ScheduleRow::new(name, &result);
            writeln!(
                out,
                "{} K = {}: total power {:.6e} W ({:.2} dBm), energy per bit {:.6e} J, {} above p_max",
                row.strategy,
                row.k,
                row.total_power_w,
                row.total_power_dbm,
                row.energy_per_bit_j,
                result.over_cap.len()
            )?;
            write_records(&[row], &mut csv)?;
        }
        Command::Sweep { lambdas, strategies, trials } => {
            let lambdas = parse_lambdas(&lambdas)?;
            let strategies = parse_strategies(strategies.as_deref())?;
            let options = SweepOptions {
                p_f: config.p_f,
                eps: config.eps,
                delta: config.delta,
                delta1: config.delta1,
            };
            let rows = run_sweep_with(&scenario, &lambdas, &strategies, trials, seed, &options)?;
            writeln!(out, "{} rows ({} rates x {} strategies, {trials} trials)", rows.len(), lambdas.len(), strategies.len())?;
            write_records(&rows, &mut csv)?;
        }
        Command::Maxload { kind, trials } => match kind {
            LoadArg::Cdma | LoadArg::Fdma => {
                let ra = if matches!(kind, LoadArg::Cdma) { RaKind::Cdma } else { RaKind::Fdma };
                let trials = trials.unwrap_or(RA_TRIALS);
                let r = ra_max_load(ra, &scenario, config.p_f, config.eps, config.delta, trials, seed)?;
                writeln!(out, "{} random access: lambda_max = {:.1} arrivals/s", ra.as_str(), r.lambda_max)?;
                let row = match &r.design {
                    Some(d) => DesignRow {
                        lambda_max: Some(r.lambda_max),
                        ..DesignRow::new(d, &scenario, r.lambda_max, config.eps, config.delta)
                    },
                    None => bail!(Error::Infeasible(format!(
                        "{} random access cannot serve even lambda = 1 within delta = {}",
                        ra.as_str(),
                        config.delta
                    ))),
                };
                write_records(&[row], &mut csv)?;
            }
            LoadArg::Tdma | LoadArg::FdmaCoord => {
                let ck = if matches!(kind, LoadArg::Tdma) { CoordKind::Tdma } else { CoordKind::Fdma };
                let trials = trials.unwrap_or(COORD_TRIALS);
                let policy = config.policy()?;
                let r = coordinated_max_load(ck, &scenario, &policy, trials, seed)?;
                writeln!(
                    out,
                    "scheduled {}: lambda_max = {:.1} arrivals/s (budget / mean floor gives {:.1})",
                    ck.as_str(),
                    r.lambda_max,
                    r.slln_lambda
                )?;
                let row = CoordLoadRow {
                    kind: ck.as_str(),
                    lambda_max: r.lambda_max,
                    outage: r.outage,
                    mean_floor: r.mean_floor,
                    slln_k_max: r.slln_k_max,
                    slln_lambda: r.slln_lambda,
                    trials,
                    seed,
                };
                write_records(&[row], &mut csv)?;
            }
        },
        Command::Bounds { k } => {
            if k == 0 {
                bail!(Error::InvalidArgument("--k must be >= 1".into()));
            }
            let mut gains = gains_for(&scenario, k, seed);
            gains.sort_by(f64::total_cmp);
            let row = BoundsRow {
                k,
                seed,
                tdma_power_ratio_bound: tdma_power_ratio_bound(&gains, &scenario),
                energy_ratio_bound: energy_ratio_bound(&gains, &scenario),
                fdma_vs_sic_ratio: fdma_vs_sic_ratio(&gains, &scenario)?,
            };
            writeln!(
                out,
                "K = {k}: power bound {:.4}, energy bound {:.4}, equal FDMA / SIC {:.4}",
                row.tdma_power_ratio_bound, row.energy_ratio_bound, row.fdma_vs_sic_ratio
            )?;
            write_records(&[row], &mut csv)?;
        }
    }

    match &cli.output {
        Some(path) => File::create(path)
            .and_then(|mut f| f.write_all(&csv))
            .with_context(|| format!("cannot write {}", path.display()))?,
        None => out.write_all(&csv)?,
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(e) if e.is_infeasible() => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let stdout = io::stdout();
    match run(cli, &mut stdout.lock()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
