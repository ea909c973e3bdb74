//! Scheduled access: the base station knows every arrival's gain and assigns
//! orthogonal airtime (TDMA) or bandwidth (FDMA), or decodes everyone on the
//! full slice with successive interference cancellation (SIC).
//!
//! Powers follow the same `mu_ref` normalisation for every strategy, so
//! ratios between strategies are meaningful.

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::channel::{pow2_m1, sample_device, tau_min, w_min, PoissonTable, Scenario};
use crate::error::{Error, Result};
use crate::optsolve::{solve_dual_bisection, ConvexTerm, SeparableProblem, ShannonTerm, DEFAULT_TOL};
use crate::seeds;

/// Relative slack on the `p_max` cap and on budget sums.
const CAP_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AllocationKind {
    TdmaTime,
    FdmaBand,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    Power,
    Energy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Optimal,
    Equal,
    ClosedForm,
}

/// Per-device airtime or bandwidth, aligned with a gains list.
#[derive(Debug, Clone, PartialEq)]
pub struct Allocation {
    pub kind: AllocationKind,
    pub shares: Vec<f64>,
    /// `tau_min` or `W_min` of each device.
    pub floors: Vec<f64>,
    /// `tau_s` or `W`.
    pub budget: f64,
}

impl Allocation {
    /// `budget / K` to everyone, floors unchecked.
    pub fn equal_split(kind: AllocationKind, floors: Vec<f64>, budget: f64) -> Self {
        let k = floors.len().max(1) as f64;
        Self {
            kind,
            shares: vec![budget / k; floors.len()],
            floors,
            budget,
        }
    }

    /// Indices whose share is below the floor, i.e. who would need more than `p_max`.
    pub fn floor_violations(&self) -> Vec<usize> {
        self.shares
            .iter()
            .zip(&self.floors)
            .enumerate()
            .filter(|(_, (s, f))| **s < **f * (1.0 - CAP_SLACK))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn total(&self) -> f64 {
        self.shares.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScheduleResult {
    pub per_device_power: Vec<f64>,
    pub total_power: f64,
    /// TDMA/FDMA: summed over devices, `sum_i (tau_i / L) P_i`. SIC: per
    /// transaction average `tau_s P / (K L)`.
    pub energy_per_bit: f64,
    /// Joules radiated in the slot.
    pub total_energy: f64,
    pub dropped: Vec<usize>,
    /// Devices whose power exceeds `p_max`; reported, never clipped.
    pub over_cap: Vec<usize>,
}

fn over_cap(powers: &[f64], scenario: &Scenario) -> Vec<usize> {
    powers
        .iter()
        .enumerate()
        .filter(|(_, &p)| p > scenario.p_max * (1.0 + CAP_SLACK))
        .map(|(i, _)| i)
        .collect()
}

fn check_sorted(gains: &[f64]) -> Result<()> {
    match gains.windows(2).position(|w| w[1] < w[0]) {
        Some(i) => Err(Error::Unsorted(i + 1)),
        None => Ok(()),
    }
}

fn check_gains(gains: &[f64]) -> Result<()> {
    match gains.iter().position(|&g| !(g > 0.0 && g.is_finite())) {
        Some(i) => Err(Error::InvalidArgument(format!("gain {i} must be finite and > 0, got {}", gains[i]))),
        None => Ok(()),
    }
}

/// Weakest-last SIC: the strongest device is decoded first against everyone
/// else, the weakest last against noise only.
pub fn sic_sum_power(gains: &[f64], scenario: &Scenario) -> Result<ScheduleResult> {
    check_gains(gains)?;
    check_sorted(gains)?;
    let a = scenario.spectral_load();
    let step = pow2_m1(a);
    let per_device_power: Vec<f64> = gains
        .iter()
        .enumerate()
        .map(|(k, &g)| scenario.p_max * 2f64.powf(k as f64 * a) * step / (g * scenario.mu_ref))
        .collect();
    let total_power: f64 = per_device_power.iter().sum();
    let k = gains.len();
    Ok(ScheduleResult {
        over_cap: over_cap(&per_device_power, scenario),
        total_energy: total_power * scenario.tau_slot,
        energy_per_bit: if k == 0 {
            0.0
        } else {
            scenario.tau_slot * total_power / (k as f64 * scenario.payload_bits)
        },
        total_power,
        per_device_power,
        dropped: vec![],
    })
}

/// SIC powers for an arbitrary decoding order (`order[0]` decoded first).
///
/// Each device must reach `2^a - 1` over noise plus everyone decoded after
/// it; the recursion runs from the last-decoded device backwards.
pub fn sic_power_for_decode_order(gains: &[f64], order: &[usize], scenario: &Scenario) -> Vec<f64> {
    let step = pow2_m1(scenario.spectral_load());
    let mut powers = vec![0.0; gains.len()];
    let mut interference = 1.0;
    for &i in order.iter().rev() {
        let received = step * interference;
        powers[i] = scenario.p_max * received / (scenario.mu_ref * gains[i]);
        interference += received;
    }
    powers
}

fn tdma_floors(gains: &[f64], scenario: &Scenario) -> Vec<f64> {
    gains.iter().map(|&g| tau_min(g, scenario)).collect()
}

fn fdma_floors(gains: &[f64], scenario: &Scenario) -> Result<Vec<f64>> {
    gains.iter().map(|&g| w_min(g, scenario)).collect()
}

fn check_budget(floors: &[f64], budget: f64, what: &str) -> Result<()> {
    let total: f64 = floors.iter().sum();
    if total > budget * (1.0 + 1e-12) {
        return Err(Error::Infeasible(format!(
            "sum of {what} floors {total:.6e} exceeds budget {budget:.6e}"
        )));
    }
    Ok(())
}

fn equal_checked(kind: AllocationKind, floors: Vec<f64>, budget: f64) -> Result<Allocation> {
    let alloc = Allocation::equal_split(kind, floors, budget);
    if let Some(&i) = alloc.floor_violations().first() {
        return Err(Error::FloorViolation {
            index: i,
            share: alloc.shares[i],
            floor: alloc.floors[i],
        });
    }
    Ok(alloc)
}

/// Cost term of one TDMA device as a function of its airtime.
pub fn tdma_term(gain: f64, scenario: &Scenario, objective: Objective) -> ShannonTerm {
    let a = scenario.payload_bits / scenario.w_total;
    let scale = scenario.p_max / (scenario.mu_ref * gain);
    match objective {
        Objective::Power => ShannonTerm::Inverse { scale, a },
        Objective::Energy => ShannonTerm::Perspective {
            scale: scale / scenario.payload_bits,
            a,
        },
    }
}

/// Cost term of one FDMA device as a function of its bandwidth (power; the
/// energy objective is a constant multiple).
pub fn fdma_term(gain: f64, scenario: &Scenario) -> ShannonTerm {
    ShannonTerm::Perspective {
        scale: scenario.p_max / (scenario.w_total * scenario.mu_ref * gain),
        a: scenario.payload_bits / scenario.tau_slot,
    }
}

/// Exponent `n` of the closed-form airtime rule `tau ~ g^(-1/n)`: 2 at light
/// load for power, 3 at heavy load and always for energy.
pub fn closed_form_exponent(scenario: &Scenario, objective: Objective) -> f64 {
    match objective {
        Objective::Power if scenario.lambda_rate * scenario.tau_slot < 100.0 => 2.0,
        _ => 3.0,
    }
}

/// Expected-load airtime of a device at `distance` under `tau ~ g^(-1/n)`
/// without fading, before renormalisation to the realised arrivals.
pub fn closed_form_airtime(distance: f64, scenario: &Scenario, n: f64) -> f64 {
    let e = scenario.gamma / n;
    let (ri, ro) = (scenario.r_inner, scenario.r_outer);
    (2.0 + e) / (2.0 * scenario.lambda_rate) * distance.powf(e) * (ro * ro - ri * ri)
        / (ro.powf(2.0 + e) - ri.powf(2.0 + e))
}

pub fn tdma_schedule(gains: &[f64], scenario: &Scenario, objective: Objective, mode: Mode) -> Result<Allocation> {
    check_gains(gains)?;
    let floors = tdma_floors(gains, scenario);
    let budget = scenario.tau_slot;
    check_budget(&floors, budget, "tau_min")?;
    let kind = AllocationKind::TdmaTime;
    match mode {
        Mode::Equal => equal_checked(kind, floors, budget),
        Mode::Optimal => {
            let terms = gains.iter().map(|&g| tdma_term(g, scenario, objective)).collect();
            let problem = SeparableProblem::new(terms, floors, budget)?;
            let solution = solve_dual_bisection(&problem, DEFAULT_TOL)?;
            Ok(Allocation {
                kind,
                shares: solution.shares,
                floors: problem.floors,
                budget,
            })
        }
        Mode::ClosedForm => {
            let n = closed_form_exponent(scenario, objective);
            let weights: Vec<f64> = gains.iter().map(|&g| g.powf(-1.0 / n)).collect();
            let total: f64 = weights.iter().sum();
            Ok(Allocation {
                kind,
                shares: weights.iter().map(|w| w / total * budget).collect(),
                floors,
                budget,
            })
        }
    }
}

pub fn fdma_schedule(gains: &[f64], scenario: &Scenario, mode: Mode) -> Result<Allocation> {
    check_gains(gains)?;
    let floors = fdma_floors(gains, scenario)?;
    let budget = scenario.w_total;
    check_budget(&floors, budget, "W_min")?;
    let kind = AllocationKind::FdmaBand;
    match mode {
        Mode::Equal => equal_checked(kind, floors, budget),
        Mode::Optimal => {
            let terms = gains.iter().map(|&g| fdma_term(g, scenario)).collect();
            let problem = SeparableProblem::new(terms, floors, budget)?;
            let solution = solve_dual_bisection(&problem, DEFAULT_TOL)?;
            Ok(Allocation {
                kind,
                shares: solution.shares,
                floors: problem.floors,
                budget,
            })
        }
        Mode::ClosedForm => Err(Error::Unsupported("closed-form mode is defined for TDMA only".into())),
    }
}

/// Exact per-device powers and energy of an allocation.
pub fn allocation_cost(alloc: &Allocation, gains: &[f64], scenario: &Scenario) -> ScheduleResult {
    let (per_device_power, durations): (Vec<f64>, Vec<f64>) = match alloc.kind {
        AllocationKind::TdmaTime => alloc
            .shares
            .iter()
            .zip(gains)
            .map(|(&tau, &g)| (tdma_term(g, scenario, Objective::Power).value(tau), tau))
            .unzip(),
        AllocationKind::FdmaBand => alloc
            .shares
            .iter()
            .zip(gains)
            .map(|(&w, &g)| (fdma_term(g, scenario).value(w), scenario.tau_slot))
            .unzip(),
    };
    let total_power: f64 = per_device_power.iter().sum();
    let total_energy: f64 = per_device_power.iter().zip(&durations).map(|(p, t)| p * t).sum();
    ScheduleResult {
        over_cap: over_cap(&per_device_power, scenario),
        energy_per_bit: total_energy / scenario.payload_bits,
        total_energy,
        total_power,
        per_device_power,
        dropped: vec![],
    }
}

fn min_gain(gains: &[f64]) -> f64 {
    gains.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Upper bound on (equal-time TDMA power) / (optimal TDMA power).
pub fn tdma_power_ratio_bound(gains: &[f64], scenario: &Scenario) -> f64 {
    let a = scenario.spectral_load();
    let g1 = min_gain(gains);
    let spread: f64 = gains.iter().map(|&g| (g1 / g).sqrt()).sum();
    pow2_m1(gains.len() as f64 * a) / pow2_m1(a * spread)
}

/// Upper bound on (equal-share cost) / (optimal cost) for TDMA energy and
/// for FDMA power or energy.
pub fn energy_ratio_bound(gains: &[f64], scenario: &Scenario) -> f64 {
    let a = scenario.spectral_load();
    let g1 = min_gain(gains);
    let spread: f64 = gains.iter().map(|&g| g1 / g).sum();
    let k = gains.len() as f64;
    spread / k * pow2_m1(k * a) / pow2_m1(a * spread)
}

/// (equal-bandwidth FDMA power) / (weakest-last SIC power).
pub fn fdma_vs_sic_ratio(gains: &[f64], scenario: &Scenario) -> Result<f64> {
    check_gains(gains)?;
    check_sorted(gains)?;
    let a = scenario.spectral_load();
    let k = gains.len() as f64;
    let plain: f64 = gains.iter().map(|g| 1.0 / g).sum();
    let weighted: f64 = gains
        .iter()
        .enumerate()
        .map(|(i, g)| 2f64.powf(i as f64 * a) / g)
        .sum();
    Ok(pow2_m1(k * a) / pow2_m1(a) / k * plain / weighted)
}

/// Which orthogonal resource is being partitioned.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoordKind {
    Tdma,
    Fdma,
}

impl CoordKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CoordKind::Tdma => "tdma",
            CoordKind::Fdma => "fdma",
        }
    }

    pub fn budget(self, scenario: &Scenario) -> f64 {
        match self {
            CoordKind::Tdma => scenario.tau_slot,
            CoordKind::Fdma => scenario.w_total,
        }
    }

    /// Resource floor of a device, `None` when it cannot be served even alone.
    pub fn floor(self, gain: f64, scenario: &Scenario) -> Option<f64> {
        let floor = match self {
            CoordKind::Tdma => tau_min(gain, scenario),
            CoordKind::Fdma => w_min(gain, scenario).ok()?,
        };
        (floor <= self.budget(scenario)).then_some(floor)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DropOutcome {
    /// Retained indices, in input order.
    pub kept: Vec<usize>,
    /// Dropped indices, weakest first.
    pub dropped: Vec<usize>,
}

/// Drop the weakest `floor(delta1 * N)` arrivals, together with every device
/// that cannot be served even with the whole slice. The infeasible devices
/// are the weakest ones, so they count toward the `delta1` share.
pub fn drop_devices(gains: &[f64], delta1: f64, scenario: &Scenario, kind: CoordKind) -> Result<DropOutcome> {
    if !(0.0..1.0).contains(&delta1) {
        return Err(Error::InvalidArgument(format!("delta1 must lie in [0, 1), got {delta1}")));
    }
    let mut order: Vec<usize> = (0..gains.len()).collect();
    order.sort_by(|&i, &j| gains[i].total_cmp(&gains[j]).then(i.cmp(&j)));
    let by_policy = (delta1 * gains.len() as f64).floor() as usize;
    let infeasible = order
        .iter()
        .take_while(|&&i| kind.floor(gains[i], scenario).is_none())
        .count();
    let n_drop = by_policy.max(infeasible).min(gains.len());
    let dropped = order[..n_drop].to_vec();
    let mut kept = order[n_drop..].to_vec();
    kept.sort_unstable();
    Ok(DropOutcome { kept, dropped })
}

/// Largest `K` such that the `K` smallest floors fit in the budget.
pub fn k_max(floors: &[f64], budget: f64) -> usize {
    let mut sorted = floors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut acc = 0.0;
    sorted
        .iter()
        .take_while(|&&f| {
            acc += f;
            acc <= budget
        })
        .count()
}

/// Outage split between deliberate drops and slot overflow.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoadPolicy {
    pub delta1: f64,
    pub eps1: f64,
    pub delta_total: f64,
}

impl LoadPolicy {
    pub fn new(delta1: f64, eps1: f64, delta_total: f64) -> Result<Self> {
        for (name, v) in [("delta1", delta1), ("eps1", eps1), ("delta_total", delta_total)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidArgument(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        if delta1 >= 1.0 {
            return Err(Error::InvalidArgument("delta1 must be < 1".into()));
        }
        let policy = Self {
            delta1,
            eps1,
            delta_total,
        };
        if outage_bound(&policy) > delta_total * (1.0 + 1e-12) {
            return Err(Error::Infeasible(format!(
                "eps1 + delta1 (1 - eps1) = {:.6} exceeds delta = {delta_total}",
                outage_bound(&policy)
            )));
        }
        Ok(policy)
    }
}

/// `eps1 + delta1 (1 - eps1)`.
pub fn outage_bound(policy: &LoadPolicy) -> f64 {
    policy.eps1 + policy.delta1 * (1.0 - policy.eps1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoordinatedMaxLoad {
    pub lambda_max: f64,
    /// Empirical outage frequency at `lambda_max`.
    pub outage: f64,
    /// Mean resource floor over a separate pool of draws.
    pub mean_floor: f64,
    /// `budget / E[floor]`.
    pub slln_k_max: f64,
    /// Arrival rate at which `(1 - delta1) lambda tau_s` equals `slln_k_max`.
    pub slln_lambda: f64,
}

const SLLN_POOL: usize = 100_000;
const COUNT_STREAM: u64 = 0;
const DEVICE_STREAM: u64 = 1;

/// Per-trial state for the load search: one uniform drives the arrival
/// count, and device positions come from a fixed stream, so the outage
/// indicator is monotone in `lambda`.
struct LoadTrial {
    count_uniform: f64,
    /// Arrivals that fit when nothing is dropped deliberately.
    capacity: Option<usize>,
    index: u64,
}

fn trial_capacity(kind: CoordKind, scenario: &Scenario, seed: u64, index: u64) -> usize {
    let budget = kind.budget(scenario);
    let mut rng = seeds::trial_rng(seed, index, DEVICE_STREAM);
    let mut used = 0.0;
    let mut n = 0;
    loop {
        let g = sample_device(scenario, &mut rng).gain;
        if let Some(f) = kind.floor(g, scenario) {
            if used + f > budget {
                return n;
            }
            used += f;
        }
        n += 1;
    }
}

fn trial_outage_with_drops(
    kind: CoordKind,
    scenario: &Scenario,
    policy: &LoadPolicy,
    seed: u64,
    index: u64,
    arrivals: usize,
) -> Result<bool> {
    let mut rng = seeds::trial_rng(seed, index, DEVICE_STREAM);
    let gains: Vec<f64> = (0..arrivals).map(|_| sample_device(scenario, &mut rng).gain).collect();
    let outcome = drop_devices(&gains, policy.delta1, scenario, kind)?;
    let floors: Vec<f64> = outcome
        .kept
        .iter()
        .filter_map(|&i| kind.floor(gains[i], scenario))
        .collect();
    Ok(k_max(&floors, kind.budget(scenario)) < outcome.kept.len())
}

/// Largest arrival rate whose slot-overflow probability stays within `eps1`.
///
/// An overflow happens when the retained arrivals need more than the whole
/// slot (TDMA) or band (FDMA) at `p_max`, i.e. more of them remain than
/// `K_max` admits.
pub fn coordinated_max_load(
    kind: CoordKind,
    scenario: &Scenario,
    policy: &LoadPolicy,
    trials: usize,
    seed: u64,
) -> Result<CoordinatedMaxLoad> {
    scenario.validate()?;
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be >= 1".into()));
    }
    let fast = policy.delta1 == 0.0;
    let prepared: Vec<LoadTrial> = (0..trials as u64)
        .into_par_iter()
        .map(|index| LoadTrial {
            count_uniform: seeds::trial_rng(seed, index, COUNT_STREAM).random(),
            capacity: fast.then(|| trial_capacity(kind, scenario, seed, index)),
            index,
        })
        .collect();

    let outage_at = |lambda: f64| -> Result<f64> {
        let table = PoissonTable::new(lambda * scenario.tau_slot);
        let flags: Vec<Result<bool>> = prepared
            .par_iter()
            .map(|t| {
                let arrivals = table.sample(t.count_uniform);
                match t.capacity {
                    Some(cap) => Ok(arrivals > cap),
                    None => trial_outage_with_drops(kind, scenario, policy, seed, t.index, arrivals),
                }
            })
            .collect();
        let mut hits = 0usize;
        for f in flags {
            hits += f? as usize;
        }
        Ok(hits as f64 / trials as f64)
    };

    let ok = |o: f64| o <= policy.eps1;
    let mut lo = 1.0;
    let mut lo_outage = outage_at(lo)?;
    let lambda_max;
    let outage;
    if !ok(lo_outage) {
        lambda_max = 0.0;
        outage = lo_outage;
    } else {
        let mut hi = 2.0;
        loop {
            let o = outage_at(hi)?;
            if !ok(o) {
                break;
            }
            lo = hi;
            lo_outage = o;
            hi *= 2.0;
            if hi > 1e9 {
                return Err(Error::Infeasible("load search did not find an overflow below 1e9".into()));
            }
        }
        for _ in 0..60 {
            if hi - lo <= 1e-4 * hi {
                break;
            }
            let mid = 0.5 * (lo + hi);
            let o = outage_at(mid)?;
            if ok(o) {
                lo = mid;
                lo_outage = o;
            } else {
                hi = mid;
            }
        }
        lambda_max = lo;
        outage = lo_outage;
    }

    let mut rng = seeds::trial_rng(seed, u64::MAX, DEVICE_STREAM);
    let (sum, count) = (0..SLLN_POOL).fold((0.0, 0usize), |(s, c), _| {
        match kind.floor(sample_device(scenario, &mut rng).gain, scenario) {
            Some(f) => (s + f, c + 1),
            None => (s, c),
        }
    });
    let mean_floor = sum / count.max(1) as f64;
    let slln_k_max = kind.budget(scenario) / mean_floor;
    Ok(CoordinatedMaxLoad {
        lambda_max,
        outage,
        mean_floor,
        slln_k_max,
        slln_lambda: slln_k_max / ((1.0 - policy.delta1) * scenario.tau_slot),
    })
}

/// Flat CSV record of a schedule evaluation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScheduleRow {
    pub strategy: String,
    #[serde(rename = "K")]
    pub k: usize,
    pub total_power_w: f64,
    pub total_power_dbm: f64,
    pub energy_per_bit_j: f64,
    pub dropped_count: usize,
}

impl ScheduleRow {
    pub fn new(strategy: impl Into<String>, result: &ScheduleResult) -> Self {
        Self {
            strategy: strategy.into(),
            k: result.per_device_power.len(),
            total_power_w: result.total_power,
            total_power_dbm: 10.0 * (result.total_power * 1e3).log10(),
            energy_per_bit_j: result.energy_per_bit,
            dropped_count: result.dropped.len(),
        }
    }
}
