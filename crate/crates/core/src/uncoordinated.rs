//! One-stage random access: devices send identity and payload together on a
//! randomly chosen spreading code (CDMA) or orthogonal channel (FDMA).
//!
//! The design procedure sizes the system for the `(1 - eps)` percentile of
//! Poisson arrivals, picks the number of codes or channels that keeps the
//! per-device collision probability under the remaining failure budget, and
//! then checks how many devices would need more than `p_max`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::channel::{pow2_m1, poisson_quantile, sample_device, Scenario};
use crate::error::{Error, Result};

/// Relative slack when checking a design against its collision target.
const COLLISION_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RaKind {
    Cdma,
    Fdma,
}

impl RaKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RaKind::Cdma => "cdma",
            RaKind::Fdma => "fdma",
        }
    }
}

/// Per-device probability that at least one of the other `n_bar - 1`
/// devices picks the same code out of `m`.
pub fn collision_probability(m: f64, n_bar: usize) -> f64 {
    if n_bar <= 1 {
        return 0.0;
    }
    -((n_bar - 1) as f64 * (-1.0 / m).ln_1p()).exp_m1()
}

/// `1 / (1 - (1 - p)^(1/(n_bar - 1)))`: the real-valued number of codes or
/// channels at which the collision probability equals `p_coll`.
fn resources_for_collision(n_bar: usize, p_coll: f64) -> f64 {
    let q = -((-p_coll).ln_1p() / (n_bar - 1) as f64).exp_m1();
    1.0 / q
}

fn meets_target(m: f64, n_bar: usize, p_coll: f64) -> bool {
    collision_probability(m, n_bar) <= p_coll * (1.0 + COLLISION_SLACK)
}

fn check_p_coll(p_coll: f64) -> Result<()> {
    if !(p_coll > 0.0 && p_coll <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "collision target must lie in (0, 1], got {p_coll}"
        )));
    }
    Ok(())
}

/// Spreading-code length from the exact collision inversion.
pub fn cdma_code_length(n_bar: usize, p_coll: f64) -> Result<u32> {
    check_p_coll(p_coll)?;
    if n_bar <= 1 {
        return Ok(1);
    }
    let m = resources_for_collision(n_bar, p_coll);
    let mut len = (1.0 + m).log2().ceil().max(1.0) as u32;
    while len > 1 && meets_target(num_codes(len - 1), n_bar, p_coll) {
        len -= 1;
    }
    while !meets_target(num_codes(len), n_bar, p_coll) {
        len += 1;
    }
    Ok(len)
}

/// Low-collision approximation `ceil(log2(1 + (n_bar - 1)/p_coll))`.
pub fn cdma_code_length_approx(n_bar: usize, p_coll: f64) -> Result<u32> {
    check_p_coll(p_coll)?;
    if n_bar <= 1 {
        return Ok(1);
    }
    Ok((1.0 + (n_bar - 1) as f64 / p_coll).log2().ceil().max(1.0) as u32)
}

/// `2^len - 1` binary sequences.
pub fn num_codes(code_len: u32) -> f64 {
    2f64.powi(code_len as i32) - 1.0
}

/// Number of orthogonal random-access channels.
pub fn fdma_channel_count(n_bar: usize, p_coll: f64) -> Result<u64> {
    check_p_coll(p_coll)?;
    if n_bar <= 1 {
        return Ok(1);
    }
    let mut n = resources_for_collision(n_bar, p_coll).ceil().max(1.0) as u64;
    while n > 1 && meets_target((n - 1) as f64, n_bar, p_coll) {
        n -= 1;
    }
    while !meets_target(n as f64, n_bar, p_coll) {
        n += 1;
    }
    Ok(n)
}

/// Upper bound on the failure probability of CDMA random access; exact when
/// `delta = 0`.
pub fn cdma_failure_probability(eps: f64, p_coll: f64, delta: f64) -> f64 {
    eps + (1.0 - eps) * (delta + p_coll * (1.0 - delta))
}

/// Collision target left over once the arrival-overflow and power-outage
/// shares of the failure budget are spent.
pub fn collision_budget(p_f: f64, eps: f64, delta: f64) -> Result<f64> {
    for (name, v) in [("p_f", p_f), ("eps", eps), ("delta", delta)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::InvalidArgument(format!("{name} must lie in [0, 1], got {v}")));
        }
    }
    if p_f <= eps {
        return Err(Error::Infeasible(format!(
            "P_f <= eps ({p_f} <= {eps}): no failure budget"
        )));
    }
    if delta >= 1.0 {
        return Err(Error::Infeasible("delta = 1 leaves no collision budget".into()));
    }
    let p_coll = (p_f - eps - (1.0 - eps) * delta) / ((1.0 - eps) * (1.0 - delta));
    if p_coll <= 0.0 {
        return Err(Error::Infeasible(format!(
            "eps + (1 - eps) delta >= P_f ({eps} + {:.6} >= {p_f}): no collision budget",
            (1.0 - eps) * delta
        )));
    }
    Ok(p_coll.min(1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CdmaDesign {
    pub n_bar: usize,
    pub code_len: u32,
    pub num_codes: f64,
    /// Linear target SINR `2^(L N_c / (W tau_s)) - 1`.
    pub target_sinr: f64,
    pub eps: f64,
    pub p_coll: f64,
    pub delta_out: f64,
}

impl CdmaDesign {
    pub fn new(scenario: &Scenario, n_bar: usize, p_coll: f64, eps: f64, delta_out: f64) -> Result<Self> {
        let code_len = cdma_code_length(n_bar, p_coll)?;
        Ok(Self::with_code_len(scenario, n_bar, code_len, p_coll, eps, delta_out))
    }

    pub fn with_code_len(
        scenario: &Scenario,
        n_bar: usize,
        code_len: u32,
        p_coll: f64,
        eps: f64,
        delta_out: f64,
    ) -> Self {
        Self {
            n_bar,
            code_len,
            num_codes: num_codes(code_len),
            target_sinr: pow2_m1(code_len as f64 * scenario.spectral_load()),
            eps,
            p_coll,
            delta_out,
        }
    }

    /// Design for arrival rate `lambda` under the failure budget `(p_f, eps, delta)`.
    pub fn for_load(scenario: &Scenario, lambda: f64, p_f: f64, eps: f64, delta: f64) -> Result<Self> {
        let p_coll = collision_budget(p_f, eps, delta)?;
        let n_bar = poisson_quantile(lambda * scenario.tau_slot, eps);
        Self::new(scenario, n_bar, p_coll, eps, delta)
    }

    /// `N_c / mu_t - (N_bar - 1)`: the received SNR that power control must
    /// reach is its inverse.
    pub fn processing_margin(&self) -> f64 {
        self.code_len as f64 / self.target_sinr - self.n_bar.saturating_sub(1) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RaPower {
    /// Power actually radiated; `p_max` when in outage.
    pub p_t: f64,
    /// Power needed to meet the target, before the cap.
    pub required: f64,
    /// Energy per bit at `p_t`.
    pub e_b: f64,
    pub in_outage: bool,
}

impl RaPower {
    fn capped(required: f64, scenario: &Scenario) -> Self {
        let in_outage = required > scenario.p_max;
        let p_t = if in_outage { scenario.p_max } else { required };
        Self {
            p_t,
            required,
            e_b: scenario.tau_slot / scenario.payload_bits * p_t,
            in_outage,
        }
    }
}

/// Power-controlled CDMA transmit power for a device of gain `gain`.
pub fn cdma_transmit_power(gain: f64, design: &CdmaDesign, scenario: &Scenario) -> Result<RaPower> {
    let margin = design.processing_margin();
    if !(margin > 0.0) {
        return Err(Error::InterferenceLimited {
            processing_margin: design.code_len as f64 / design.target_sinr,
            interferers: design.n_bar.saturating_sub(1) as f64,
        });
    }
    let required = scenario.p_max / (scenario.mu_ref * gain * margin);
    Ok(RaPower::capped(required, scenario))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FdmaRaDesign {
    pub n_bar: usize,
    pub num_channels: u64,
    pub p_coll: f64,
}

impl FdmaRaDesign {
    pub fn new(n_bar: usize, p_coll: f64) -> Result<Self> {
        Ok(Self {
            n_bar,
            num_channels: fdma_channel_count(n_bar, p_coll)?,
            p_coll,
        })
    }

    pub fn for_load(scenario: &Scenario, lambda: f64, p_f: f64, eps: f64, delta: f64) -> Result<Self> {
        let p_coll = collision_budget(p_f, eps, delta)?;
        Self::new(poisson_quantile(lambda * scenario.tau_slot, eps), p_coll)
    }

    /// Per-channel SNR target `2^(L N_f / (W tau_s)) - 1`.
    pub fn target_snr(&self, scenario: &Scenario) -> f64 {
        pow2_m1(self.num_channels as f64 * scenario.spectral_load())
    }
}

/// Uncapped transmit power on one of `num_channels` equal sub-bands.
pub fn fdma_ra_transmit_power(gain: f64, num_channels: u64, scenario: &Scenario) -> f64 {
    let n = num_channels as f64;
    scenario.p_max * pow2_m1(n * scenario.spectral_load()) / (scenario.mu_ref * gain * n)
}

pub fn fdma_ra_power(gain: f64, design: &FdmaRaDesign, scenario: &Scenario) -> RaPower {
    RaPower::capped(fdma_ra_transmit_power(gain, design.num_channels, scenario), scenario)
}

/// A random-access design of either kind, for reporting.
#[derive(Debug, Clone, PartialEq)]
pub enum RaDesign {
    Cdma(CdmaDesign),
    Fdma(FdmaRaDesign),
}

impl RaDesign {
    pub fn for_load(kind: RaKind, scenario: &Scenario, lambda: f64, p_f: f64, eps: f64, delta: f64) -> Result<Self> {
        Ok(match kind {
            RaKind::Cdma => RaDesign::Cdma(CdmaDesign::for_load(scenario, lambda, p_f, eps, delta)?),
            RaKind::Fdma => RaDesign::Fdma(FdmaRaDesign::for_load(scenario, lambda, p_f, eps, delta)?),
        })
    }

    pub fn kind(&self) -> RaKind {
        match self {
            RaDesign::Cdma(_) => RaKind::Cdma,
            RaDesign::Fdma(_) => RaKind::Fdma,
        }
    }

    pub fn n_bar(&self) -> usize {
        match self {
            RaDesign::Cdma(d) => d.n_bar,
            RaDesign::Fdma(d) => d.n_bar,
        }
    }

    pub fn p_coll(&self) -> f64 {
        match self {
            RaDesign::Cdma(d) => d.p_coll,
            RaDesign::Fdma(d) => d.p_coll,
        }
    }

    /// Code length (CDMA) or channel count (FDMA).
    pub fn size(&self) -> u64 {
        match self {
            RaDesign::Cdma(d) => d.code_len as u64,
            RaDesign::Fdma(d) => d.num_channels,
        }
    }

    pub fn target_sinr(&self, scenario: &Scenario) -> f64 {
        match self {
            RaDesign::Cdma(d) => d.target_sinr,
            RaDesign::Fdma(d) => d.target_snr(scenario),
        }
    }

    /// Power needed by a device of gain `gain`; an interference-limited CDMA
    /// design puts every device in outage.
    pub fn power(&self, gain: f64, scenario: &Scenario) -> RaPower {
        match self {
            RaDesign::Cdma(d) => cdma_transmit_power(gain, d, scenario)
                .unwrap_or_else(|_| RaPower::capped(f64::INFINITY, scenario)),
            RaDesign::Fdma(d) => fdma_ra_power(gain, d, scenario),
        }
    }
}

/// Flat record of a design, optionally with the load limit it belongs to.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DesignRow {
    pub kind: &'static str,
    pub lambda: f64,
    pub n_bar: usize,
    pub code_len_or_channels: u64,
    pub target_sinr_db: f64,
    pub p_coll: f64,
    pub eps: f64,
    pub delta: f64,
    pub lambda_max: Option<f64>,
}

impl DesignRow {
    pub fn new(design: &RaDesign, scenario: &Scenario, lambda: f64, eps: f64, delta: f64) -> Self {
        Self {
            kind: design.kind().as_str(),
            lambda,
            n_bar: design.n_bar(),
            code_len_or_channels: design.size(),
            target_sinr_db: 10.0 * design.target_sinr(scenario).log10(),
            p_coll: design.p_coll(),
            eps,
            delta,
            lambda_max: None,
        }
    }
}

pub const LOAD_SEARCH_LO: f64 = 1.0;
pub const LOAD_SEARCH_HI: f64 = 1e6;
pub const LOAD_SEARCH_ITERS: usize = 40;

#[derive(Debug, Clone, PartialEq)]
pub struct RaMaxLoad {
    pub lambda_max: f64,
    /// Design at `lambda_max`, when any load is supportable.
    pub design: Option<RaDesign>,
    pub outage: f64,
}

/// Estimated `P[p_t > p_max]` over a pool of gain draws.
pub fn outage_fraction(design: &RaDesign, gains: &[f64], scenario: &Scenario) -> f64 {
    if gains.is_empty() {
        return 0.0;
    }
    let n = gains
        .iter()
        .filter(|&&g| design.power(g, scenario).in_outage)
        .count();
    n as f64 / gains.len() as f64
}

/// Largest arrival rate whose design keeps the power outage within `delta`
/// and the total failure probability within `p_f`.
///
/// One pool of `trials` gain draws is reused at every search step, so the
/// result is a deterministic function of `seed`.
pub fn ra_max_load(
    kind: RaKind,
    scenario: &Scenario,
    p_f: f64,
    eps: f64,
    delta: f64,
    trials: usize,
    seed: u64,
) -> Result<RaMaxLoad> {
    scenario.validate()?;
    collision_budget(p_f, eps, delta)?;
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gains: Vec<f64> = (0..trials).map(|_| sample_device(scenario, &mut rng).gain).collect();

    let evaluate = |lambda: f64| -> Result<(RaDesign, f64)> {
        let design = RaDesign::for_load(kind, scenario, lambda, p_f, eps, delta)?;
        let outage = outage_fraction(&design, &gains, scenario);
        Ok((design, outage))
    };
    let ok = |outage: f64| outage <= delta;

    let (mut lo, mut hi) = (LOAD_SEARCH_LO, LOAD_SEARCH_HI);
    let (design_lo, outage_lo) = evaluate(lo)?;
    if !ok(outage_lo) {
        return Ok(RaMaxLoad {
            lambda_max: 0.0,
            design: None,
            outage: outage_lo,
        });
    }
    let (design_hi, outage_hi) = evaluate(hi)?;
    if ok(outage_hi) {
        return Ok(RaMaxLoad {
            lambda_max: hi,
            design: Some(design_hi),
            outage: outage_hi,
        });
    }
    let mut best = (design_lo, outage_lo);
    for _ in 0..LOAD_SEARCH_ITERS {
        let mid = 0.5 * (lo + hi);
        let (design, outage) = evaluate(mid)?;
        if ok(outage) {
            lo = mid;
            best = (design, outage);
        } else {
            hi = mid;
        }
    }
    Ok(RaMaxLoad {
        lambda_max: lo,
        design: Some(best.0),
        outage: best.1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lone_device_never_collides() {
        assert_eq!(collision_probability(7.0, 1), 0.0);
        assert_eq!(cdma_code_length(1, 0.01).unwrap(), 1);
    }

    #[test]
    fn seven_codes_three_devices() {
        // Enumerate the 7^2 code choices of the two other devices.
        let mut hits = 0;
        for a in 0..7 {
            for b in 0..7 {
                if a == 0 || b == 0 {
                    hits += 1;
                }
            }
        }
        let enumerated = hits as f64 / 49.0;
        assert!((collision_probability(7.0, 3) - enumerated).abs() < 1e-15);
        assert!((enumerated - 13.0 / 49.0).abs() < 1e-15);
    }

    #[test]
    fn code_length_example() {
        assert_eq!(cdma_code_length(101, 0.01).unwrap(), 14);
        assert_eq!(cdma_code_length_approx(101, 0.01).unwrap(), 14);
        assert!(collision_probability(num_codes(14), 101) <= 0.01);
        assert!(collision_probability(num_codes(13), 101) > 0.01);
    }

    #[test]
    fn vacuous_collision_target() {
        assert_eq!(cdma_code_length(101, 1.0).unwrap(), 1);
        assert_eq!(fdma_channel_count(101, 1.0).unwrap(), 1);
        // Any p_coll < 1 still needs more than one resource.
        assert_eq!(fdma_channel_count(2, 0.999_999).unwrap(), 2);
    }

    #[test]
    fn channel_count_examples() {
        assert_eq!(fdma_channel_count(101, 0.05).unwrap(), 1951);
        assert_eq!(fdma_channel_count(2, 0.5).unwrap(), 2);
    }

    #[test]
    fn bad_collision_target() {
        assert!(cdma_code_length(10, 0.0).is_err());
        assert!(fdma_channel_count(10, 1.5).is_err());
    }

    #[test]
    fn failure_probability_examples() {
        assert!((cdma_failure_probability(0.01, 0.0, 0.0) - 0.01).abs() < 1e-15);
        assert!((cdma_failure_probability(0.01, 0.04, 0.0) - 0.0496).abs() < 1e-15);
    }

    #[test]
    fn collision_budget_inverts_failure_probability() {
        let (p_f, eps, delta) = (0.05, 0.01, 0.002);
        let p_coll = collision_budget(p_f, eps, delta).unwrap();
        assert!((cdma_failure_probability(eps, p_coll, delta) - p_f).abs() < 1e-15);
        assert!(matches!(collision_budget(0.01, 0.01, 0.0), Err(Error::Infeasible(_))));
        assert!(matches!(collision_budget(0.05, 0.01, 0.5), Err(Error::Infeasible(_))));
    }

    #[test]
    fn no_interference_power() {
        let s = Scenario::default();
        let d = CdmaDesign::with_code_len(&s, 1, 10, 0.01, 0.01, 0.0);
        let p = cdma_transmit_power(0.3, &d, &s).unwrap();
        let expected = d.target_sinr / (10.0 * s.mu_ref * 0.3);
        assert!((p.required - expected).abs() <= 1e-12 * expected);
    }

    #[test]
    fn interference_limited_boundary() {
        let s = Scenario::default();
        let mut d = CdmaDesign::with_code_len(&s, 2, 10, 0.01, 0.01, 0.0);
        // Make N_c / mu_t exactly N_bar - 1.
        d.target_sinr = 10.0;
        assert!(matches!(
            cdma_transmit_power(1.0, &d, &s),
            Err(Error::InterferenceLimited { .. })
        ));
        assert!(RaDesign::Cdma(d).power(1.0, &s).in_outage);
    }

    #[test]
    fn outage_devices_radiate_p_max() {
        let s = Scenario::default();
        let p = fdma_ra_power(1e-6, &FdmaRaDesign::new(101, 0.05).unwrap(), &s);
        assert!(p.in_outage);
        assert_eq!(p.p_t, s.p_max);
        assert!(p.required > s.p_max);
    }

    #[test]
    fn max_load_needs_budget() {
        let s = Scenario::default();
        assert!(matches!(
            ra_max_load(RaKind::Cdma, &s, 0.01, 0.01, 0.0, 100, 1),
            Err(Error::Infeasible(_))
        ));
    }
}
