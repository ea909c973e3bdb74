//! Arrival-rate sweeps over all access strategies.
//!
//! Every trial draws one arrival count and one list of device positions and
//! feeds the same draws to every strategy (common random numbers), so
//! differences between strategies are not masked by sampling noise.
//!
//! Per trial, devices that cannot be served count as outage and add `p_max`
//! to the power total. Energy per bit is the energy of the served devices
//! divided by their bits.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::channel::{sample_device, PoissonTable, Scenario};
use crate::coordinated::{
    allocation_cost, drop_devices, fdma_schedule, sic_sum_power, tdma_schedule, Allocation, AllocationKind,
    CoordKind, Mode, Objective,
};
use crate::error::{Error, Result};
use crate::seeds;
use crate::uncoordinated::{RaDesign, RaKind};

pub const DEFAULT_TRIALS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    CdmaRa,
    FdmaRa,
    TdmaOpt,
    TdmaEqual,
    FdmaOpt,
    FdmaEqual,
    Sic,
}

impl Strategy {
    pub const ALL: [Strategy; 7] = [
        Strategy::CdmaRa,
        Strategy::FdmaRa,
        Strategy::TdmaOpt,
        Strategy::TdmaEqual,
        Strategy::FdmaOpt,
        Strategy::FdmaEqual,
        Strategy::Sic,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::CdmaRa => "cdma_ra",
            Strategy::FdmaRa => "fdma_ra",
            Strategy::TdmaOpt => "tdma_opt",
            Strategy::TdmaEqual => "tdma_equal",
            Strategy::FdmaOpt => "fdma_opt",
            Strategy::FdmaEqual => "fdma_equal",
            Strategy::Sic => "sic",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown strategy '{s}'")))
    }
}

/// Aggregated statistics of one strategy at one arrival rate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub strategy: Strategy,
    pub lambda: f64,
    pub trials: usize,
    pub seed: u64,
    pub mean_power_w: f64,
    pub p95_power_w: f64,
    pub mean_eb_j: f64,
    pub p95_eb_j: f64,
    pub outage_frac: f64,
}

/// Knobs that are not part of the cell description.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepOptions {
    /// Random-access failure budget `(P_f, eps, delta)`.
    pub p_f: f64,
    pub eps: f64,
    pub delta: f64,
    /// Fraction of the weakest arrivals dropped by scheduled strategies.
    pub delta1: f64,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            p_f: 0.05,
            eps: 0.01,
            delta: 0.0,
            delta1: 0.0,
        }
    }
}

/// Nearest-rank quantile: the `ceil(q n)`-th smallest sample.
pub fn percentile(samples: &[f64], q: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("percentile of an empty sample".into()));
    }
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::InvalidArgument(format!("quantile must lie in (0, 1), got {q}")));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = (q * sorted.len() as f64).ceil() as usize;
    Ok(sorted[rank.clamp(1, sorted.len()) - 1])
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct TrialOutcome {
    power: f64,
    eb: f64,
    arrivals: usize,
    outage: usize,
}

struct Tally {
    served_power: f64,
    served_energy: f64,
    served: usize,
    outage: usize,
}

impl Tally {
    fn finish(self, scenario: &Scenario) -> TrialOutcome {
        let bits = self.served as f64 * scenario.payload_bits;
        TrialOutcome {
            power: self.served_power + self.outage as f64 * scenario.p_max,
            eb: if self.served == 0 { 0.0 } else { self.served_energy / bits },
            arrivals: self.served + self.outage,
            outage: self.outage,
        }
    }
}

fn random_access(design: Option<&RaDesign>, gains: &[f64], scenario: &Scenario) -> TrialOutcome {
    let mut tally = Tally {
        served_power: 0.0,
        served_energy: 0.0,
        served: 0,
        outage: 0,
    };
    for &g in gains {
        match design.map(|d| d.power(g, scenario)) {
            Some(p) if !p.in_outage => {
                tally.served_power += p.p_t;
                tally.served_energy += p.p_t * scenario.tau_slot;
                tally.served += 1;
            }
            _ => tally.outage += 1,
        }
    }
    tally.finish(scenario)
}

/// Devices a scheduler will serve: policy drops first, then the weakest
/// remaining devices until the floors fit (optimal) or until the equal
/// share covers every floor (equal). Returned strongest first.
fn admitted(gains: &[f64], kind: CoordKind, equal: bool, delta1: f64, scenario: &Scenario) -> Result<Vec<f64>> {
    let outcome = drop_devices(gains, delta1, scenario, kind)?;
    let mut kept: Vec<(f64, f64)> = outcome
        .kept
        .iter()
        .filter_map(|&i| kind.floor(gains[i], scenario).map(|f| (gains[i], f)))
        .collect();
    kept.sort_by(|a, b| b.0.total_cmp(&a.0));
    let budget = kind.budget(scenario);
    let n = if equal {
        // floors grow along the list, so the last admitted device is binding
        (0..=kept.len())
            .rev()
            .find(|&k| k == 0 || kept[k - 1].1 <= budget / k as f64)
            .unwrap_or(0)
    } else {
        let mut used = 0.0;
        kept.iter()
            .take_while(|(_, f)| {
                used += f;
                used <= budget
            })
            .count()
    };
    Ok(kept[..n].iter().map(|(g, _)| *g).collect())
}

fn scheduled(strategy: Strategy, gains: &[f64], delta1: f64, scenario: &Scenario) -> Result<TrialOutcome> {
    let (kind, equal) = match strategy {
        Strategy::TdmaOpt => (CoordKind::Tdma, false),
        Strategy::TdmaEqual => (CoordKind::Tdma, true),
        Strategy::FdmaOpt => (CoordKind::Fdma, false),
        Strategy::FdmaEqual => (CoordKind::Fdma, true),
        Strategy::Sic => {
            let outcome = drop_devices(gains, delta1, scenario, CoordKind::Fdma)?;
            let mut kept: Vec<f64> = outcome.kept.iter().map(|&i| gains[i]).collect();
            kept.sort_by(f64::total_cmp);
            let r = sic_sum_power(&kept, scenario)?;
            return Ok(Tally {
                served_power: r.total_power,
                served_energy: r.total_energy,
                served: kept.len(),
                outage: outcome.dropped.len(),
            }
            .finish(scenario));
        }
        Strategy::CdmaRa | Strategy::FdmaRa => unreachable!("random access handled separately"),
    };
    let kept = admitted(gains, kind, equal, delta1, scenario)?;
    let outage = gains.len() - kept.len();
    if kept.is_empty() {
        return Ok(Tally {
            served_power: 0.0,
            served_energy: 0.0,
            served: 0,
            outage,
        }
        .finish(scenario));
    }
    let mode = if equal { Mode::Equal } else { Mode::Optimal };
    let (power, energy) = match kind {
        CoordKind::Tdma => {
            let by_power = tdma_schedule(&kept, scenario, Objective::Power, mode)?;
            let power = allocation_cost(&by_power, &kept, scenario).total_power;
            let energy = if equal {
                allocation_cost(&by_power, &kept, scenario).total_energy
            } else {
                let by_energy = tdma_schedule(&kept, scenario, Objective::Energy, mode)?;
                allocation_cost(&by_energy, &kept, scenario).total_energy
            };
            (power, energy)
        }
        CoordKind::Fdma => {
            let alloc: Allocation = fdma_schedule(&kept, scenario, mode)?;
            debug_assert_eq!(alloc.kind, AllocationKind::FdmaBand);
            let r = allocation_cost(&alloc, &kept, scenario);
            (r.total_power, r.total_energy)
        }
    };
    Ok(Tally {
        served_power: power,
        served_energy: energy,
        served: kept.len(),
        outage,
    }
    .finish(scenario))
}

const COUNT_STREAM: u64 = 0;
const DEVICE_STREAM: u64 = 1;

fn trial_gains(scenario: &Scenario, table: &PoissonTable, seed: u64, index: u64) -> Vec<f64> {
    let u: f64 = seeds::trial_rng(seed, index, COUNT_STREAM).random();
    let arrivals = table.sample(u);
    let mut rng = seeds::trial_rng(seed, index, DEVICE_STREAM);
    (0..arrivals).map(|_| sample_device(scenario, &mut rng).gain).collect()
}

pub fn run_sweep(
    scenario: &Scenario,
    lambdas: &[f64],
    strategies: &[Strategy],
    trials: usize,
    seed: u64,
) -> Result<Vec<SweepResult>> {
    run_sweep_with(scenario, lambdas, strategies, trials, seed, &SweepOptions::default())
}

/// Rows come out grouped by `lambda` in input order, then by strategy in
/// input order.
pub fn run_sweep_with(
    scenario: &Scenario,
    lambdas: &[f64],
    strategies: &[Strategy],
    trials: usize,
    seed: u64,
    options: &SweepOptions,
) -> Result<Vec<SweepResult>> {
    scenario.validate()?;
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be >= 1".into()));
    }
    if let Some(&bad) = lambdas.iter().find(|&&l| !(l.is_finite() && l >= 0.0)) {
        return Err(Error::InvalidArgument(format!("arrival rate must be finite and >= 0, got {bad}")));
    }
    if !(0.0..1.0).contains(&options.delta1) {
        return Err(Error::InvalidArgument(format!("delta1 must lie in [0, 1), got {}", options.delta1)));
    }

    let mut rows = Vec::with_capacity(lambdas.len() * strategies.len());
    for &lambda in lambdas {
        let scenario = Scenario {
            lambda_rate: lambda,
            ..scenario.clone()
        };
        let table = PoissonTable::new(lambda * scenario.tau_slot);
        // an unattainable design leaves every arrival in outage
        let design = |kind| {
            if lambda > 0.0 {
                RaDesign::for_load(kind, &scenario, lambda, options.p_f, options.eps, options.delta).ok()
            } else {
                None
            }
        };
        let cdma = design(RaKind::Cdma);
        let fdma = design(RaKind::Fdma);

        let outcomes: Vec<Vec<TrialOutcome>> = (0..trials as u64)
            .into_par_iter()
            .map(|index| {
                let gains = trial_gains(&scenario, &table, seed, index);
                strategies
                    .iter()
                    .map(|&s| match s {
                        Strategy::CdmaRa => random_access(cdma.as_ref(), &gains, &scenario),
                        Strategy::FdmaRa => random_access(fdma.as_ref(), &gains, &scenario),
                        _ => scheduled(s, &gains, options.delta1, &scenario).unwrap_or(TrialOutcome {
                            power: gains.len() as f64 * scenario.p_max,
                            eb: 0.0,
                            arrivals: gains.len(),
                            outage: gains.len(),
                        }),
                    })
                    .collect()
            })
            .collect();

        for (j, &strategy) in strategies.iter().enumerate() {
            let power: Vec<f64> = outcomes.iter().map(|o| o[j].power).collect();
            let eb: Vec<f64> = outcomes.iter().map(|o| o[j].eb).collect();
            let arrivals: usize = outcomes.iter().map(|o| o[j].arrivals).sum();
            let outage: usize = outcomes.iter().map(|o| o[j].outage).sum();
            rows.push(SweepResult {
                strategy,
                lambda,
                trials,
                seed,
                mean_power_w: mean(&power),
                p95_power_w: percentile(&power, 0.95)?,
                mean_eb_j: mean(&eb),
                p95_eb_j: percentile(&eb, 0.95)?,
                outage_frac: if arrivals == 0 { 0.0 } else { outage as f64 / arrivals as f64 },
            });
        }
    }
    Ok(rows)
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Header plus one line per record.
pub fn write_records<T: Serialize, W: Write>(rows: &[T], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepResult], writer: W) -> Result<()> {
    write_records(rows, writer)
}

pub fn write_sweep_csv_file(rows: &[SweepResult], path: &Path) -> Result<()> {
    write_sweep_csv(rows, std::fs::File::create(path)?)
}

/// Evenly spaced rates `start, start + step, ...` up to and including `stop`.
pub fn lambda_range(start: f64, stop: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && start >= 0.0 && stop >= start && start.is_finite() && stop.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "bad range {start}:{stop}:{step}; need 0 <= start <= stop and step > 0"
        )));
    }
    let n = ((stop - start) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|i| start + i as f64 * step).collect())
}
