//! Flat TOML scenario files. Keys mirror the `Scenario` and load-policy field
//! names; the reference SNR is given in dB as `mu_ref_db`, every other value
//! in SI units.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::channel::Scenario;
use crate::coordinated::LoadPolicy;
use crate::error::{Error, Result};

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub p_max: f64,
    pub r_inner: f64,
    pub r_outer: f64,
    pub gamma: f64,
    pub mu_ref_db: f64,
    pub w_total: f64,
    pub tau_slot: f64,
    pub payload_bits: f64,
    pub lambda_rate: f64,
    /// Random-access failure budget.
    pub p_f: f64,
    pub eps: f64,
    pub delta: f64,
    /// Scheduled-access outage split.
    pub delta1: f64,
    pub eps1: f64,
    pub delta_total: f64,
}

impl Default for Config {
    fn default() -> Self {
        let s = Scenario::default();
        Self {
            p_max: s.p_max,
            r_inner: s.r_inner,
            r_outer: s.r_outer,
            gamma: s.gamma,
            mu_ref_db: -3.0,
            w_total: s.w_total,
            tau_slot: s.tau_slot,
            payload_bits: s.payload_bits,
            lambda_rate: s.lambda_rate,
            p_f: 0.05,
            eps: 0.01,
            delta: 0.0,
            delta1: 0.0,
            eps1: 0.01,
            delta_total: 0.01,
        }
    }
}

const KEYS: [&str; 15] = [
    "p_max",
    "r_inner",
    "r_outer",
    "gamma",
    "mu_ref_db",
    "w_total",
    "tau_slot",
    "payload_bits",
    "lambda_rate",
    "p_f",
    "eps",
    "delta",
    "delta1",
    "eps1",
    "delta_total",
];

impl Config {
    /// Parse TOML text, apply `key=value` overrides, and validate.
    pub fn parse(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        for (key, value) in overrides {
            if !KEYS.contains(&key.as_str()) {
                return Err(Error::Config(format!("unknown key '{key}'")));
            }
            let v: f64 = value
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("key '{key}': '{value}' is not a number")))?;
            table.insert(key.clone(), toml::Value::Float(v));
        }
        // integers are accepted wherever a real is expected
        for (_, v) in table.iter_mut() {
            if let toml::Value::Integer(i) = *v {
                *v = toml::Value::Float(i as f64);
            }
        }
        let config: Config = table.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        config.check()?;
        Ok(config)
    }

    pub fn load(path: &Path, overrides: &[(String, String)]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text, overrides)
    }

    fn check(&self) -> Result<()> {
        if !self.mu_ref_db.is_finite() {
            return Err(Error::Config(format!("key 'mu_ref_db': must be finite, got {}", self.mu_ref_db)));
        }
        self.scenario().validate().map_err(|e| match e {
            Error::InvalidScenario { field, reason } => Error::Config(format!("key '{field}': {reason}")),
            other => other,
        })?;
        for (key, v) in [
            ("p_f", self.p_f),
            ("eps", self.eps),
            ("delta", self.delta),
            ("delta1", self.delta1),
            ("eps1", self.eps1),
            ("delta_total", self.delta_total),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("key '{key}': must lie in [0, 1], got {v}")));
            }
        }
        if self.delta1 >= 1.0 {
            return Err(Error::Config("key 'delta1': must be < 1".into()));
        }
        Ok(())
    }

    pub fn scenario(&self) -> Scenario {
        Scenario {
            p_max: self.p_max,
            r_inner: self.r_inner,
            r_outer: self.r_outer,
            gamma: self.gamma,
            mu_ref: db_to_linear(self.mu_ref_db),
            w_total: self.w_total,
            tau_slot: self.tau_slot,
            payload_bits: self.payload_bits,
            lambda_rate: self.lambda_rate,
            ..Scenario::default()
        }
    }

    pub fn policy(&self) -> Result<LoadPolicy> {
        LoadPolicy::new(self.delta1, self.eps1, self.delta_total)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = Config::parse("", &[]).unwrap();
        assert_eq!(c, Config::default());
        assert!((c.scenario().mu_ref - Scenario::default().mu_ref).abs() < 1e-15);
    }

    #[test]
    fn unknown_key_is_named() {
        let e = Config::parse("gama = 3.0\n", &[]).unwrap_err();
        assert!(e.to_string().contains("gama"), "{e}");
        let e = Config::parse("", &[("foo".into(), "1".into())]).unwrap_err();
        assert!(e.to_string().contains("foo"), "{e}");
    }

    #[test]
    fn overrides_and_integers() {
        let c = Config::parse("payload_bits = 2000\n", &[("mu_ref_db".into(), "0".into())]).unwrap();
        assert_eq!(c.payload_bits, 2000.0);
        assert_eq!(c.scenario().mu_ref, 1.0);
    }

    #[test]
    fn invalid_value_is_named() {
        let e = Config::parse("r_outer = 10.0\n", &[]).unwrap_err();
        assert!(e.to_string().contains("r_outer"), "{e}");
        let e = Config::parse("eps = 2.0\n", &[]).unwrap_err();
        assert!(e.to_string().contains("eps"), "{e}");
    }

    #[test]
    fn db_round_trip() {
        for x in [1e-6, 0.5012, 1.0, 37.0, 1e9] {
            assert!((db_to_linear(linear_to_db(x)) - x).abs() <= 1e-12 * x);
        }
    }
}
