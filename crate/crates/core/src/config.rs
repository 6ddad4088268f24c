//! Run configuration: one TOML file with a section per module. Every field
//! has a default, unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::allocation::AllocationConfig;
use crate::battery::{CellSpec, DegradationCostParams, PackTopology, SohModelParams};
use crate::env::{EnvConfig, RewardWeights};
use crate::error::{Error, Result};
use crate::fleet::FleetConfig;
use crate::ppo::PpoHyper;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    /// Hourly profiles CSV; synthetic profiles when absent.
    pub profiles: Option<PathBuf>,
    /// Fleet table CSV; sampled from `fleet` when absent.
    pub fleet: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BatteryConfig {
    pub cell: CellSpec,
    pub topology: PackTopology,
    pub soh: SohModelParams,
    pub cost: DegradationCostParams,
    /// Look-ahead of the SOC-limited peak current, hours.
    pub sop_horizon_h: f64,
}

impl Default for BatteryConfig {
    fn default() -> Self {
        Self {
            cell: CellSpec::default(),
            topology: PackTopology::default(),
            soh: SohModelParams::default(),
            cost: DegradationCostParams::default(),
            sop_horizon_h: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct YearConfig {
    pub days: usize,
    /// Draw a fresh fleet every day instead of repeating day 0.
    pub resample_daily: bool,
}

impl Default for YearConfig {
    fn default() -> Self {
        Self { days: 365, resample_daily: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReportConfig {
    /// One-off payment per enrolled EV, $.
    pub enrollment_incentive: f64,
}

impl Default for ReportConfig {
    fn default() -> Self {
        Self { enrollment_incentive: 560.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    /// Rollout threads; 1 is bit-exact across machines.
    pub workers: usize,
    pub paths: PathsConfig,
    pub env: EnvConfig,
    pub reward: RewardWeights,
    pub fleet: FleetConfig,
    pub battery: BatteryConfig,
    pub ppo: PpoHyper,
    pub allocation: AllocationConfig,
    pub year: YearConfig,
    pub report: ReportConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            workers: 1,
            paths: PathsConfig::default(),
            env: EnvConfig::default(),
            reward: RewardWeights::default(),
            fleet: FleetConfig::default(),
            battery: BatteryConfig::default(),
            ppo: PpoHyper::default(),
            allocation: AllocationConfig::default(),
            year: YearConfig::default(),
            report: ReportConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&s).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.reward.validate()?;
        self.fleet.ev.validate()?;
        self.battery.cell.validate()?;
        self.battery.topology.validate()?;
        self.battery.soh.validate()?;
        self.battery.cost.validate()?;
        self.ppo.validate()?;
        self.allocation.validate()?;
        if self.workers == 0 {
            return Err(Error::Config("workers must be >= 1".into()));
        }
        if self.ppo.episode_length != self.env.horizon.slots {
            return Err(Error::Config(format!(
                "ppo.episode_length ({}) must equal env.horizon.slots ({})",
                self.ppo.episode_length, self.env.horizon.slots
            )));
        }
        if !(self.battery.sop_horizon_h > 0.0) {
            return Err(Error::Config("battery.sop_horizon_h must be > 0".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = RunConfig::default();
        let s = c.to_toml().unwrap();
        assert_eq!(RunConfig::from_toml_str(&s).unwrap(), c);
        assert_eq!(RunConfig::from_toml_str("").unwrap(), c);
    }

    #[test]
    fn default_constants() {
        let c = RunConfig::default();
        assert_eq!(c.fleet.size, 509);
        assert_eq!(c.fleet.initial_soh, 97.46);
        assert_eq!(c.env.grid_max_kw(), 3200.0);
        assert_eq!((c.env.horizon.start_hour, c.env.horizon.slots), (15, 20));
        assert_eq!((c.ppo.lr_actor, c.ppo.lr_critic, c.ppo.gamma, c.ppo.clip), (1e-6, 2e-6, 0.95, 0.2));
        assert_eq!((c.ppo.update_step, c.ppo.minibatch, c.ppo.episodes), (10, 32, 300_000));
        let w = c.reward;
        assert_eq!((w.alpha, w.beta, w.psi, w.chi, w.upsilon, w.rho), (10.0, -5.0, 1.0, 10.0, 5.0, 1.0));
        assert_eq!((c.battery.topology.cells_in_series, c.battery.topology.parallel_branches), (39, 4));
        assert!((c.battery.cost.cost_per_kwh() - 1500.0).abs() < 1e-9);
    }

    #[test]
    fn rejects_unknown_keys() {
        assert!(matches!(RunConfig::from_toml_str("seeed = 3"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::from_toml_str("[ppo]\nlr = 1.0"), Err(Error::Config(_))));
        let c = RunConfig::from_toml_str("seed = 9\n[fleet]\nsize = 20\n[reward]\nsign_mode = \"paper_literal\"").unwrap();
        assert_eq!((c.seed, c.fleet.size), (9, 20));
        assert!(RunConfig::from_toml_str("[ppo]\nepisode_length = 5").is_err());
    }
}
