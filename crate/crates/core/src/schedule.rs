//! A day of EVA dispatch: aggregate and per-EV power, per-EV energy, grid
//! load. Every strategy produces one of these so they are scored alike.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::env::{rolling_stats, GridProfiles, V2gEnv, HOURS};
use crate::error::{Error, Result};
use crate::fleet::{EvSession, Horizon};

#[derive(Debug, Clone, PartialEq)]
pub struct DaySchedule {
    pub name: String,
    pub horizon: Horizon,
    /// Per slot, kW.
    pub eva_kw: Vec<f64>,
    pub grid_kw: Vec<f64>,
    /// `[ev][slot]`, grid side.
    pub per_ev_kw: Vec<Vec<f64>>,
    /// `[ev][point]`, kWh.
    pub energies: Vec<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ScheduleRow {
    slot: usize,
    hour: u32,
    eva_kw: f64,
    grid_kw: f64,
    tariff: f64,
}

impl DaySchedule {
    /// Integrate per-EV powers from the sessions' initial energies.
    pub fn from_plan(
        name: &str,
        sessions: &[EvSession],
        profiles: &GridProfiles,
        horizon: &Horizon,
        per_ev_kw: Vec<Vec<f64>>,
    ) -> Self {
        let k = horizon.slots;
        let energies = sessions
            .iter()
            .zip(&per_ev_kw)
            .map(|(s, p)| {
                let mut e = Vec::with_capacity(k + 1);
                e.push(s.initial_energy());
                for t in 0..k {
                    e.push(e[t] + s.spec.efficiency * p[t] * horizon.slot_hours);
                }
                e
            })
            .collect();
        let eva_kw: Vec<f64> = (0..k).map(|t| per_ev_kw.iter().map(|p| p[t]).sum()).collect();
        let grid_kw = eva_kw
            .iter()
            .enumerate()
            .map(|(t, p)| profiles.power_load(horizon.hour_of(t), *p))
            .collect();
        Self { name: name.to_string(), horizon: *horizon, eva_kw, grid_kw, per_ev_kw, energies }
    }

    /// Read back a finished episode.
    pub fn from_env(name: &str, env: &V2gEnv) -> Result<Self> {
        if !env.done() {
            return Err(Error::Infeasible("episode not finished".into()));
        }
        let k = env.cfg.horizon.slots;
        let n = env.sessions.len();
        let per_ev_kw = (0..n).map(|i| env.proposals().iter().map(|p| p.final_kw[i]).collect()).collect();
        let energies = (0..n).map(|i| env.energy_log().iter().map(|e| e[i]).collect()).collect();
        let eva_kw = env.proposals().iter().map(|p| p.final_kw.iter().sum()).collect();
        debug_assert_eq!(env.proposals().len(), k);
        Ok(Self {
            name: name.to_string(),
            horizon: env.cfg.horizon,
            eva_kw,
            grid_kw: env.grid_loads().to_vec(),
            per_ev_kw,
            energies,
        })
    }

    /// Aggregate energy at every point.
    pub fn eva_energy(&self) -> Vec<f64> {
        (0..=self.horizon.slots).map(|k| self.energies.iter().map(|e| e[k]).sum()).collect()
    }

    /// Grid load over the 24-hour window ending with the last slot: the
    /// hours before the horizon carry no EVA power.
    pub fn load_window(&self, profiles: &GridProfiles) -> Vec<f64> {
        let k = self.horizon.slots;
        let pre = HOURS.saturating_sub(k);
        let start = self.horizon.start_hour + 24;
        let mut w: Vec<f64> = (0..pre).map(|j| profiles.residual_load((start - (pre - j) as u32) % 24)).collect();
        w.extend(&self.grid_kw);
        w
    }

    pub fn load_variance(&self, profiles: &GridProfiles) -> f64 {
        rolling_stats(&self.load_window(profiles)).variance
    }

    /// Sum of tariff * EVA power * slot length.
    pub fn charging_cost(&self, profiles: &GridProfiles) -> f64 {
        self.eva_kw
            .iter()
            .enumerate()
            .map(|(t, p)| profiles.tariff[self.horizon.hour_of(t) as usize] * p * self.horizon.slot_hours)
            .sum()
    }

    pub fn write_csv(&self, path: &Path, profiles: &GridProfiles) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for t in 0..self.horizon.slots {
            let hour = self.horizon.hour_of(t);
            w.serialize(ScheduleRow {
                slot: t,
                hour,
                eva_kw: self.eva_kw[t],
                grid_kw: self.grid_kw[t],
                tariff: profiles.tariff[hour as usize],
            })?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

/// Remove floating-point overshoot so that `residual + sum(p)` does not
/// exceed `max`, taking the excess off the largest charging power. Meant for
/// round-off only; larger excesses are left for the caller to handle.
pub fn trim_overshoot(p: &mut [f64], residual: f64, max: f64) {
    let tol = 1e-9 * (1.0 + max.abs());
    let mut shave = 1.0;
    for _ in 0..16 {
        let over = residual + p.iter().sum::<f64>() - max;
        if over <= 0.0 || over > tol {
            return;
        }
        let Some(i) = (0..p.len()).max_by(|&a, &b| p[a].total_cmp(&p[b])) else { return };
        if p[i] <= 0.0 {
            return;
        }
        p[i] = (p[i] - over * shave).max(0.0);
        shave *= 2.0;
    }
}

/// EVA power column of a schedule file.
pub fn read_schedule_powers(path: &Path) -> Result<Vec<f64>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut rows: Vec<ScheduleRow> = csv::Reader::from_path(path)?
        .deserialize()
        .collect::<std::result::Result<_, _>>()?;
    rows.sort_by_key(|r| r.slot);
    Ok(rows.into_iter().map(|r| r.eva_kw).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fleet::EvSpec;

    #[test]
    fn window_and_cost() {
        let h = Horizon::default();
        let profiles = GridProfiles {
            baseload_kw: (0..24).map(|i| i as f64).collect(),
            pv_kw: vec![0.0; 24],
            wind_kw: vec![0.0; 24],
            tariff: vec![0.5; 24],
        };
        let s = EvSession::new(0, 15, 10, 0.5, EvSpec { efficiency: 1.0, ..EvSpec::default() });
        let mut p = vec![0.0; h.slots];
        p[0] = 2.0;
        let d = DaySchedule::from_plan("x", &[s], &profiles, &h, vec![p]);
        let w = d.load_window(&profiles);
        assert_eq!(&w[..4], &[11.0, 12.0, 13.0, 14.0]);
        assert_eq!(w[4], 17.0);
        assert_eq!(w.len(), 24);
        assert_eq!(d.charging_cost(&profiles), 1.0);
        assert_eq!(d.eva_energy()[20], 14.0);
    }

    #[test]
    fn trim_removes_roundoff_only() {
        let mut p = vec![0.1; 30];
        let residual = 3200.0 - p.iter().sum::<f64>() + 1e-12;
        trim_overshoot(&mut p, residual, 3200.0);
        assert!(residual + p.iter().sum::<f64>() <= 3200.0);
        let mut q = vec![5.0, 1.0];
        trim_overshoot(&mut q, 3199.0, 3200.0);
        assert_eq!(q, vec![5.0, 1.0]);
    }
}
