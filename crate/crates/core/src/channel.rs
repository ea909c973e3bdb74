//! Cell geometry, link budget and Shannon-feasibility primitives.
//!
//! All powers are expressed relative to `p_max` internally: a device at the
//! cell edge (`gain = 1`) transmitting `p_max` over the full band `w_total`
//! is received at the reference SNR `mu_ref`. SNRs are linear throughout;
//! decibels only appear in the config loader and the CLI.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// `2^x - 1` without cancellation for small `x`.
#[inline]
pub fn pow2_m1(x: f64) -> f64 {
    (x * std::f64::consts::LN_2).exp_m1()
}

/// User-supplied gain multipliers `(shadow_gain, fade_gain)` for a device at
/// the given distance. The hook draws from the caller's seeded stream so
/// fading studies stay reproducible.
pub type GainHook = Arc<dyn Fn(&mut dyn RngCore, f64) -> (f64, f64) + Send + Sync>;

#[derive(Clone, Default)]
pub enum Fading {
    #[default]
    None,
    Custom(GainHook),
}

impl fmt::Debug for Fading {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Fading::None => f.write_str("None"),
            Fading::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

/// System constants of a single cell.
#[derive(Debug, Clone)]
pub struct Scenario {
    /// Maximum device transmit power in watts.
    pub p_max: f64,
    /// Inner radius of the annulus in metres.
    pub r_inner: f64,
    /// Cell radius (reference distance) in metres.
    pub r_outer: f64,
    /// Path-loss exponent.
    pub gamma: f64,
    /// Linear reference SNR at `r_outer`, full power, full band.
    pub mu_ref: f64,
    /// Total bandwidth in Hz.
    pub w_total: f64,
    /// Slot duration in seconds.
    pub tau_slot: f64,
    /// Payload per transaction in bits.
    pub payload_bits: f64,
    /// Poisson arrival rate in arrivals per second.
    pub lambda_rate: f64,
    pub fading: Fading,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            p_max: 1.0,
            r_inner: 50.0,
            r_outer: 1000.0,
            gamma: 3.0,
            mu_ref: 10f64.powf(-0.3),
            w_total: 1e6,
            tau_slot: 1.0,
            payload_bits: 1000.0,
            lambda_rate: 1000.0,
            fading: Fading::None,
        }
    }
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("p_max", self.p_max),
            ("mu_ref", self.mu_ref),
            ("w_total", self.w_total),
            ("tau_slot", self.tau_slot),
            ("payload_bits", self.payload_bits),
            ("lambda_rate", self.lambda_rate),
            ("r_inner", self.r_inner),
        ];
        for (field, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidScenario {
                    field,
                    reason: format!("must be finite and > 0, got {v}"),
                });
            }
        }
        if !(self.r_outer.is_finite() && self.r_outer > self.r_inner) {
            return Err(Error::InvalidScenario {
                field: "r_outer",
                reason: format!("must exceed r_inner = {}, got {}", self.r_inner, self.r_outer),
            });
        }
        if !(self.gamma.is_finite() && self.gamma >= 2.0) {
            return Err(Error::InvalidScenario {
                field: "gamma",
                reason: format!("must be >= 2, got {}", self.gamma),
            });
        }
        Ok(())
    }

    /// Spectral load `L / (W tau_s)`: bits per second per hertz needed when one
    /// device owns the whole slice.
    pub fn spectral_load(&self) -> f64 {
        self.payload_bits / (self.w_total * self.tau_slot)
    }

    /// Required bit rate `L / tau_s`.
    pub fn required_rate(&self) -> f64 {
        self.payload_bits / self.tau_slot
    }

    /// Composite gain of a device at `distance` without shadowing or fading.
    pub fn path_gain(&self, distance: f64) -> f64 {
        (distance / self.r_outer).powf(-self.gamma)
    }
}

/// One arrival: position and composite channel gain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Device {
    pub distance: f64,
    pub shadow_gain: f64,
    pub fade_gain: f64,
    pub gain: f64,
}

impl Device {
    pub fn at_distance(scenario: &Scenario, distance: f64) -> Self {
        Self {
            distance,
            shadow_gain: 1.0,
            fade_gain: 1.0,
            gain: scenario.path_gain(distance),
        }
    }
}

/// Draw one device, area-uniform on the annulus.
pub fn sample_device<R: Rng + ?Sized>(scenario: &Scenario, rng: &mut R) -> Device {
    let u: f64 = rng.random();
    let (ri2, ro2) = (scenario.r_inner.powi(2), scenario.r_outer.powi(2));
    let distance = (ri2 + u * (ro2 - ri2)).sqrt();
    match &scenario.fading {
        Fading::None => Device::at_distance(scenario, distance),
        Fading::Custom(hook) => {
            let mut dyn_rng = DynRng(rng);
            let (shadow_gain, fade_gain) = hook(&mut dyn_rng, distance);
            Device {
                distance,
                shadow_gain,
                fade_gain,
                gain: shadow_gain * fade_gain * scenario.path_gain(distance),
            }
        }
    }
}

// Lets a `?Sized` generic rng be handed to the hook as `&mut dyn RngCore`.
struct DynRng<'a, R: Rng + ?Sized>(&'a mut R);

impl<R: Rng + ?Sized> RngCore for DynRng<'_, R> {
    fn next_u32(&mut self) -> u32 {
        self.0.next_u32()
    }
    fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }
    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.0.fill_bytes(dst)
    }
}

/// Draw `count` devices from a stream seeded with `seed`.
pub fn sample_devices(scenario: &Scenario, count: usize, seed: u64) -> Vec<Device> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| sample_device(scenario, &mut rng)).collect()
}

/// Linear received SNR of a device transmitting `p_t` watts over `band` Hz.
pub fn received_snr(p_t: f64, gain: f64, scenario: &Scenario, band: f64) -> Result<f64> {
    if !(band > 0.0 && band <= scenario.w_total) {
        return Err(Error::InvalidBand {
            band,
            w_total: scenario.w_total,
        });
    }
    Ok((p_t / scenario.p_max) * scenario.mu_ref * (scenario.w_total / band) * gain)
}

/// Shortest airtime that delivers the payload over the full band at `p_max`.
pub fn tau_min(gain: f64, scenario: &Scenario) -> f64 {
    scenario.payload_bits / (scenario.w_total * (scenario.mu_ref * gain).ln_1p() / std::f64::consts::LN_2)
}

/// Narrowest band that delivers the payload within one slot at `p_max`.
///
/// Solves `w log2(1 + c/w) = L/tau_s` with `c = mu W g`. The left side is
/// concave and increasing in `w` with supremum `c log2(e)`, so the root is
/// unique when it exists. Newton steps from a bracketed start approach the
/// root monotonically from the left; bisection takes over whenever a step
/// leaves the bracket.
pub fn w_min(gain: f64, scenario: &Scenario) -> Result<f64> {
    let c = scenario.mu_ref * scenario.w_total * gain;
    let rate = scenario.required_rate();
    if !(c * std::f64::consts::LOG2_E > rate) {
        return Err(Error::Infeasible(format!(
            "rate ceiling {:.6e} b/s of gain {gain:.6e} does not reach {rate:.6e} b/s",
            c * std::f64::consts::LOG2_E
        )));
    }
    let f = |w: f64| w * (c / w).ln_1p() / std::f64::consts::LN_2 - rate;
    let df = |w: f64| {
        let s = c / w;
        (s.ln_1p() - s / (1.0 + s)) / std::f64::consts::LN_2
    };

    let mut hi = scenario.w_total;
    while f(hi) <= 0.0 {
        hi *= 2.0;
    }
    while f(0.5 * hi) > 0.0 {
        hi *= 0.5;
    }
    let mut lo = 0.5 * hi;

    let mut w = hi;
    for _ in 0..200 {
        let fw = f(w);
        if fw == 0.0 {
            return Ok(w);
        }
        if fw < 0.0 {
            lo = lo.max(w);
        } else {
            hi = hi.min(w);
        }
        let step = fw / df(w);
        let mut next = w - step;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - w).abs() <= 4.0 * f64::EPSILON * w || hi - lo <= 4.0 * f64::EPSILON * hi {
            return Ok(next);
        }
        w = next;
    }
    Ok(w)
}

/// Poisson pmf tabulated around its mode and normalised by its own sum.
///
/// Terms are built by the ratio recursion `p(k+1)/p(k) = mean/(k+1)` outward
/// from the mode until they fall below `1e-30` of the mode term, so no
/// factorials or log-gamma are needed and large means do not underflow.
#[derive(Debug, Clone)]
pub struct PoissonTable {
    mean: f64,
    first: usize,
    /// `tails[j] = P[N > first + j]`.
    tails: Vec<f64>,
}

impl PoissonTable {
    const CUTOFF: f64 = 1e-30;

    pub fn new(mean: f64) -> Self {
        assert!(mean >= 0.0 && mean.is_finite(), "poisson mean must be finite and >= 0");
        if mean == 0.0 {
            return Self {
                mean,
                first: 0,
                tails: vec![0.0],
            };
        }
        let mode = mean.floor() as usize;
        let mut below = Vec::new();
        let mut t = 1.0;
        let mut k = mode;
        while k > 0 {
            t *= k as f64 / mean;
            if t < Self::CUTOFF {
                break;
            }
            below.push(t);
            k -= 1;
        }
        let first = mode - below.len();
        let mut terms: Vec<f64> = below.into_iter().rev().collect();
        terms.push(1.0);
        let mut t = 1.0;
        let mut k = mode;
        loop {
            t *= mean / (k + 1) as f64;
            if t < Self::CUTOFF {
                break;
            }
            terms.push(t);
            k += 1;
        }
        let total: f64 = terms.iter().sum();
        let mut tails = vec![0.0; terms.len()];
        let mut acc = 0.0;
        for j in (0..terms.len()).rev() {
            tails[j] = acc / total;
            acc += terms[j];
        }
        Self { mean, first, tails }
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// `P[N > n]`.
    pub fn tail(&self, n: usize) -> f64 {
        if n < self.first {
            1.0
        } else {
            self.tails.get(n - self.first).copied().unwrap_or(0.0)
        }
    }

    /// Smallest `n` with `P[N > n] <= eps`.
    pub fn quantile_tail(&self, eps: f64) -> usize {
        let j = self.tails.partition_point(|&t| t > eps);
        self.first + j.min(self.tails.len() - 1)
    }

    /// Inverse-CDF draw for a uniform `u` in `[0, 1)`.
    pub fn sample(&self, u: f64) -> usize {
        let target = 1.0 - u;
        let j = self.tails.partition_point(|&t| t >= target);
        self.first + j.min(self.tails.len() - 1)
    }
}

/// Smallest `n` with `P[Pois(mean) > n] <= epsilon`.
pub fn poisson_quantile(mean: f64, epsilon: f64) -> usize {
    PoissonTable::new(mean).quantile_tail(epsilon)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scenario() -> Scenario {
        Scenario::default()
    }

    #[test]
    fn validate_rejects_bad_geometry() {
        let s = Scenario {
            r_inner: 1000.0,
            ..scenario()
        };
        assert!(matches!(
            s.validate(),
            Err(Error::InvalidScenario { field: "r_outer", .. })
        ));
        let s = Scenario {
            gamma: 1.5,
            ..scenario()
        };
        assert!(s.validate().is_err());
        let s = Scenario {
            mu_ref: 0.0,
            ..scenario()
        };
        assert!(s.validate().is_err());
        assert!(scenario().validate().is_ok());
    }

    #[test]
    fn empty_sample() {
        assert!(sample_devices(&scenario(), 0, 7).is_empty());
    }

    #[test]
    fn edge_gain_is_one() {
        let d = Device::at_distance(&scenario(), 1000.0);
        assert_eq!(d.gain, 1.0);
    }

    #[test]
    fn sampling_is_seeded() {
        let a = sample_devices(&scenario(), 50, 3);
        let b = sample_devices(&scenario(), 50, 3);
        let c = sample_devices(&scenario(), 50, 4);
        assert_eq!(a, b);
        assert_ne!(a, c);
        let s = scenario();
        assert!(a.iter().all(|d| d.distance >= s.r_inner && d.distance <= s.r_outer));
    }

    #[test]
    fn custom_fading_multiplies_gain() {
        let s = Scenario {
            fading: Fading::Custom(Arc::new(|_, _| (0.5, 2.0))),
            ..scenario()
        };
        for d in sample_devices(&s, 10, 1) {
            assert!((d.gain - s.path_gain(d.distance)).abs() <= 1e-12 * d.gain);
            assert_eq!(d.shadow_gain, 0.5);
        }
    }

    #[test]
    fn received_snr_cases() {
        let s = scenario();
        assert_eq!(received_snr(1.0, 1.0, &s, s.w_total).unwrap(), s.mu_ref);
        assert!((received_snr(1.0, 1.0, &s, s.w_total / 2.0).unwrap() - 2.0 * s.mu_ref).abs() < 1e-15);
        let s2 = Scenario { mu_ref: 0.5, ..s.clone() };
        assert!((received_snr(0.5, 0.1, &s2, s2.w_total).unwrap() - 0.025).abs() < 1e-15);
        assert!(matches!(
            received_snr(1.0, 1.0, &s, 2.0 * s.w_total),
            Err(Error::InvalidBand { .. })
        ));
        assert!(received_snr(1.0, 1.0, &s, 0.0).is_err());
    }

    #[test]
    fn tau_min_unit_snr() {
        let s = Scenario { mu_ref: 1.0, ..scenario() };
        assert!((tau_min(1.0, &s) - 1e-3).abs() < 1e-15);
    }

    #[test]
    fn w_min_closed_case() {
        // L/tau = 1000 and mu W g = 1000 put the root at w = 1000.
        let s = Scenario {
            mu_ref: 1e-3,
            ..scenario()
        };
        let w = w_min(1.0, &s).unwrap();
        assert!((w - 1000.0).abs() < 1e-9, "{w}");
    }

    #[test]
    fn w_min_infeasible_below_ceiling() {
        // mu W g log2(e) = 0.9 L/tau
        let s = scenario();
        let g = 0.9 * s.required_rate() / (s.mu_ref * s.w_total * std::f64::consts::LOG2_E);
        assert!(matches!(w_min(g, &s), Err(Error::Infeasible(_))));
    }

    #[test]
    fn w_min_can_exceed_band() {
        // W log2(1 + mu g) < L/tau < mu W g log2(e) with mu g = 1
        let s = Scenario {
            payload_bits: 1.2e6,
            ..scenario()
        };
        let g = 1.0 / s.mu_ref;
        let w = w_min(g, &s).unwrap();
        assert!(w > s.w_total);
        let c = s.mu_ref * s.w_total * g;
        let rate = w * (c / w).ln_1p() / std::f64::consts::LN_2;
        assert!((rate - s.required_rate()).abs() <= 1e-9 * s.required_rate());
    }

    #[test]
    fn poisson_small_cases() {
        assert_eq!(poisson_quantile(10.0, 0.01), 18);
        assert_eq!(poisson_quantile(10.0, 0.99999), 0);
        let t = PoissonTable::new(10.0);
        assert!((t.tail(0) - (1.0 - (-10f64).exp())).abs() < 1e-14);
    }

    #[test]
    fn poisson_sample_matches_quantiles() {
        let t = PoissonTable::new(3.0);
        assert_eq!(t.sample(0.0), 0);
        // P[N = 0] = e^-3 ~ 0.0498
        assert_eq!(t.sample(0.049), 0);
        assert_eq!(t.sample(0.051), 1);
        let zero = PoissonTable::new(0.0);
        assert_eq!(zero.sample(0.999), 0);
        assert_eq!(zero.quantile_tail(0.5), 0);
    }
}
