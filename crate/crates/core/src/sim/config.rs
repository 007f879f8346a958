use serde::{Deserialize, Serialize};

use super::SimError;

/// Days between an infector's infection and their infectees' infection.
pub const GENERATION_INTERVAL_DAYS: u32 = 5;

/// Days from infection to symptom onset, when index cases are diagnosed.
pub const SYMPTOM_ONSET_DAYS: u32 = 5;

/// Largest mean offspring count accepted.
pub const MAX_OFFSPRING_MEAN: f64 = 6.0;

/// Largest offspring cap accepted.
pub const MAX_OFFSPRING_CAP: u32 = 10;

/// Who a detected person hands vouchers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceDirection {
    /// The people they might have infected.
    #[default]
    Forward,
    /// The person who probably infected them.
    Backward,
    Both,
}

impl TraceDirection {
    pub fn forward(self) -> bool {
        matches!(self, TraceDirection::Forward | TraceDirection::Both)
    }

    pub fn backward(self) -> bool {
        matches!(self, TraceDirection::Backward | TraceDirection::Both)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Index cases at day 0.
    pub n_seeds: u32,
    /// Poisson mean of secondary cases per infected person.
    pub offspring_mean: f64,
    /// Offspring counts are Poisson conditioned on not exceeding this.
    pub offspring_max: u32,
    /// Chance a detected person names a given infectee.
    pub p_recall: f64,
    /// Chance a voucher recipient books and attends a test.
    pub p_comply: f64,
    /// Redemptions allowed per voucher.
    pub voucher_cap: u32,
    pub test_sensitivity: f64,
    pub test_specificity: f64,
    pub result_delay_days: u32,
    pub booking_delay_days: u32,
    /// No infections are generated after this day.
    pub horizon_days: u32,
    /// App baseline only: chance a person runs the app.
    pub app_adoption: f64,
    pub rng_seed: u64,
    /// Poisson mean of uninfected people a detected person also hands
    /// vouchers to, filling uses left after named infectees.
    pub false_contacts_mean: f64,
    pub direction: TraceDirection,
    pub p_symptomatic: f64,
    /// Chance a symptomatic non-seed is diagnosed at onset without a
    /// voucher and enters as an index case.
    pub p_self_report: f64,
    /// Outbreak generation stops once this many agents exist.
    pub max_agents: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_seeds: 10,
            offspring_mean: 2.5,
            offspring_max: 10,
            p_recall: 0.70,
            p_comply: 0.9,
            voucher_cap: 6,
            test_sensitivity: 0.95,
            test_specificity: 0.99,
            result_delay_days: 1,
            booking_delay_days: 1,
            horizon_days: 30,
            app_adoption: 0.6,
            rng_seed: 1,
            false_contacts_mean: 1.0,
            direction: TraceDirection::Forward,
            p_symptomatic: 0.6,
            p_self_report: 0.0,
            max_agents: 100_000,
        }
    }
}

/// Parameters that can be varied by a sweep.
pub const SWEEPABLE: &[&str] = &[
    "n_seeds",
    "offspring_mean",
    "offspring_max",
    "p_recall",
    "p_comply",
    "voucher_cap",
    "k",
    "test_sensitivity",
    "test_specificity",
    "result_delay_days",
    "booking_delay_days",
    "horizon_days",
    "app_adoption",
    "a",
    "false_contacts_mean",
    "p_symptomatic",
    "p_self_report",
];

impl SimConfig {
    /// Parses `key = value` TOML. Unknown keys are errors; missing keys take
    /// defaults. Error messages carry line and column.
    pub fn from_toml_str(text: &str) -> Result<Self, SimError> {
        let cfg: SimConfig = toml::from_str(text).map_err(|e| SimError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let probs = [
            ("p_recall", self.p_recall),
            ("p_comply", self.p_comply),
            ("test_sensitivity", self.test_sensitivity),
            ("test_specificity", self.test_specificity),
            ("app_adoption", self.app_adoption),
            ("p_symptomatic", self.p_symptomatic),
            ("p_self_report", self.p_self_report),
        ];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(SimError::InvalidConfig(format!(
                    "{name} must be in [0, 1], got {p}"
                )));
            }
        }
        if self.voucher_cap == 0 {
            return Err(SimError::InvalidConfig(
                "voucher_cap must be at least 1".into(),
            ));
        }
        if !(0.0..=MAX_OFFSPRING_MEAN).contains(&self.offspring_mean) {
            return Err(SimError::InvalidConfig(format!(
                "offspring_mean must be in [0, {MAX_OFFSPRING_MEAN}], got {}",
                self.offspring_mean
            )));
        }
        if self.offspring_max > MAX_OFFSPRING_CAP {
            return Err(SimError::InvalidConfig(format!(
                "offspring_max must be at most {MAX_OFFSPRING_CAP}, got {}",
                self.offspring_max
            )));
        }
        if !(self.false_contacts_mean.is_finite() && self.false_contacts_mean >= 0.0) {
            return Err(SimError::InvalidConfig(
                "false_contacts_mean must be non-negative".into(),
            ));
        }
        if self.max_agents == 0 {
            return Err(SimError::InvalidConfig(
                "max_agents must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Returns a copy with `param` set to `value`.
    pub fn with_param(&self, param: &str, value: f64) -> Result<Self, SimError> {
        let mut cfg = self.clone();
        let as_u32 = |v: f64| -> Result<u32, SimError> {
            if v.fract() != 0.0 || v < 0.0 || v > u32::MAX as f64 {
                return Err(SimError::InvalidConfig(format!(
                    "{param} needs a whole number, got {v}"
                )));
            }
            Ok(v as u32)
        };
        match param {
            "n_seeds" => cfg.n_seeds = as_u32(value)?,
            "offspring_mean" => cfg.offspring_mean = value,
            "offspring_max" => cfg.offspring_max = as_u32(value)?,
            "p_recall" => cfg.p_recall = value,
            "p_comply" => cfg.p_comply = value,
            "voucher_cap" | "k" => cfg.voucher_cap = as_u32(value)?,
            "test_sensitivity" => cfg.test_sensitivity = value,
            "test_specificity" => cfg.test_specificity = value,
            "result_delay_days" => cfg.result_delay_days = as_u32(value)?,
            "booking_delay_days" => cfg.booking_delay_days = as_u32(value)?,
            "horizon_days" => cfg.horizon_days = as_u32(value)?,
            "app_adoption" | "a" => cfg.app_adoption = value,
            "false_contacts_mean" => cfg.false_contacts_mean = value,
            "p_symptomatic" => cfg.p_symptomatic = value,
            "p_self_report" => cfg.p_self_report = value,
            other => return Err(SimError::UnknownParameter(other.to_owned())),
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
