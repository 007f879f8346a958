use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use acdc_core::{ChainPolicy, Retention};
use chrono::TimeDelta;
use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config file not found: {0}")]
    Missing(PathBuf),
    #[error("cannot read config file {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config file {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Service settings. Every field has a default, so an empty file is valid
/// and serves from memory on `127.0.0.1:8080`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub bind: SocketAddr,
    /// Directory for vouchers, slots, and confirmations. Records are held in
    /// memory when unset.
    pub store_dir: Option<PathBuf>,
    /// Lab credentials file. Defaults to `lab_credentials.txt` inside
    /// `store_dir`.
    pub lab_credentials: Option<PathBuf>,
    pub voucher_cap: u32,
    pub voucher_ttl_hours: u32,
    pub chain_voucher_ttl_hours: u32,
    pub exhausted_grace_hours: u32,
    pub result_retention_hours: u32,
    pub stale_booking_retention_hours: u32,
    pub sweep_interval_secs: u64,
    /// Redeem and lookup attempts per client key before throttling.
    pub rate_limit_burst: u32,
    /// Time for an empty bucket to refill completely.
    pub rate_limit_period_secs: u64,
    /// Take the client address from the first `X-Forwarded-For` entry.
    /// Only enable behind a proxy that sets it.
    pub trust_forwarded_for: bool,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            bind: SocketAddr::from(([127, 0, 0, 1], 8080)),
            store_dir: None,
            lab_credentials: None,
            voucher_cap: acdc_core::voucher::DEFAULT_VOUCHER_CAP,
            voucher_ttl_hours: 14 * 24,
            chain_voucher_ttl_hours: 14 * 24,
            exhausted_grace_hours: 48,
            result_retention_hours: 7 * 24,
            stale_booking_retention_hours: 48,
            sweep_interval_secs: 300,
            rate_limit_burst: 10,
            rate_limit_period_secs: 3600,
            trust_forwarded_for: false,
        }
    }
}

impl ServiceConfig {
    /// Reads a TOML config. Relative paths inside it are resolved against
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => ConfigError::Missing(path.to_owned()),
            _ => ConfigError::Read {
                path: path.to_owned(),
                source: e,
            },
        })?;
        let mut cfg = Self::from_toml_str(&text).map_err(|e| match e {
            ConfigError::Parse { message, .. } => ConfigError::Parse {
                path: path.to_owned(),
                message,
            },
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.store_dir, &mut cfg.lab_credentials]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: ServiceConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: PathBuf::new(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = [
            ("voucher_cap", u64::from(self.voucher_cap)),
            ("voucher_ttl_hours", u64::from(self.voucher_ttl_hours)),
            (
                "chain_voucher_ttl_hours",
                u64::from(self.chain_voucher_ttl_hours),
            ),
            ("sweep_interval_secs", self.sweep_interval_secs),
            ("rate_limit_burst", u64::from(self.rate_limit_burst)),
            ("rate_limit_period_secs", self.rate_limit_period_secs),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(ConfigError::Invalid(format!("{name} must be positive")));
            }
        }
        Ok(())
    }

    pub fn credentials_path(&self) -> Option<PathBuf> {
        self.lab_credentials.clone().or_else(|| {
            self.store_dir
                .as_ref()
                .map(|d| d.join(crate::auth::DEFAULT_CREDENTIALS_FILE))
        })
    }

    pub fn voucher_ttl(&self) -> TimeDelta {
        TimeDelta::hours(self.voucher_ttl_hours.into())
    }

    pub fn chain_policy(&self) -> ChainPolicy {
        ChainPolicy {
            limit: self.voucher_cap,
            ttl: TimeDelta::hours(self.chain_voucher_ttl_hours.into()),
        }
    }

    pub fn exhausted_grace(&self) -> TimeDelta {
        TimeDelta::hours(self.exhausted_grace_hours.into())
    }

    pub fn retention(&self) -> Retention {
        Retention {
            result: TimeDelta::hours(self.result_retention_hours.into()),
            stale_booking: TimeDelta::hours(self.stale_booking_retention_hours.into()),
        }
    }

    pub fn sweep_interval(&self) -> Duration {
        Duration::from_secs(self.sweep_interval_secs)
    }

    pub fn rate_limit_period(&self) -> Duration {
        Duration::from_secs(self.rate_limit_period_secs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = ServiceConfig::from_toml_str("").unwrap();
        assert_eq!(cfg, ServiceConfig::default());
        assert_eq!(cfg.voucher_cap, 6);
        assert_eq!(cfg.rate_limit_burst, 10);
    }

    #[test]
    fn unknown_keys_and_zero_cap_are_rejected() {
        assert!(matches!(
            ServiceConfig::from_toml_str("bind = \"127.0.0.1:1\"\nbogus = 3\n"),
            Err(ConfigError::Parse { .. })
        ));
        assert!(matches!(
            ServiceConfig::from_toml_str("voucher_cap = 0"),
            Err(ConfigError::Invalid(_))
        ));
    }

    #[test]
    fn relative_paths_follow_the_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("acdc.toml");
        std::fs::write(&path, "store_dir = \"data\"\n").unwrap();
        let cfg = ServiceConfig::load(&path).unwrap();
        assert_eq!(
            cfg.store_dir.as_deref(),
            Some(dir.path().join("data").as_path())
        );
        assert_eq!(
            cfg.credentials_path(),
            Some(dir.path().join("data").join("lab_credentials.txt"))
        );
    }

    #[test]
    fn missing_file_names_the_path() {
        let err = ServiceConfig::load(Path::new("/nonexistent/acdc.toml")).unwrap_err();
        assert!(matches!(err, ConfigError::Missing(_)));
        assert!(err.to_string().contains("/nonexistent/acdc.toml"));
    }
}
