//! Microgrid environment: hourly profiles, the 28-dimensional observation,
//! action projection, EVA energy dynamics and the three-part reward.

use std::collections::VecDeque;
use std::path::Path;

use clap::ValueEnum;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::allocation::{allocate, stakes_for, AllocationConfig, AllocationProposal, EvSlotInput};
use crate::error::{Error, Result};
use crate::fleet::{AggregateEnvelope, EvSession, Horizon};
use crate::schedule::trim_overshoot;

pub const HOURS: usize = 24;
pub const STATE_DIM: usize = HOURS + 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProfileParams {
    pub baseload_mean_kw: f64,
    pub baseload_amplitude_kw: f64,
    pub baseload_peak_hour: f64,
    pub pv_peak_kw: f64,
    pub pv_peak_hour: f64,
    pub pv_width_hours: f64,
    pub wind_mean_kw: f64,
    pub wind_noise_kw: f64,
    /// $/kWh.
    pub tariff_offpeak: f64,
    pub tariff_shoulder: f64,
    pub tariff_peak: f64,
    /// Inclusive clock hours.
    pub peak_hours: (u32, u32),
    /// Inclusive, may wrap midnight.
    pub offpeak_hours: (u32, u32),
}

impl Default for ProfileParams {
    fn default() -> Self {
        Self {
            baseload_mean_kw: 1800.0,
            baseload_amplitude_kw: 600.0,
            baseload_peak_hour: 19.0,
            pv_peak_kw: 800.0,
            pv_peak_hour: 12.0,
            pv_width_hours: 2.5,
            wind_mean_kw: 300.0,
            wind_noise_kw: 80.0,
            tariff_offpeak: 0.08,
            tariff_shoulder: 0.15,
            tariff_peak: 0.25,
            peak_hours: (17, 21),
            offpeak_hours: (23, 7),
        }
    }
}

fn in_hours(h: u32, (a, b): (u32, u32)) -> bool {
    if a <= b {
        (a..=b).contains(&h)
    } else {
        h >= a || h <= b
    }
}

/// One day of hourly series indexed by clock hour.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridProfiles {
    pub baseload_kw: Vec<f64>,
    pub pv_kw: Vec<f64>,
    pub wind_kw: Vec<f64>,
    pub tariff: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ProfileRow {
    slot: usize,
    baseload_kw: f64,
    pv_kw: f64,
    wind_kw: f64,
    tariff: f64,
}

impl GridProfiles {
    /// Sinusoidal baseload, a PV bell around midday, wind with pink noise
    /// and a three-tier time-of-use tariff.
    pub fn synthetic(p: &ProfileParams, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tau = std::f64::consts::TAU;
        let baseload_kw = (0..HOURS)
            .map(|h| p.baseload_mean_kw + p.baseload_amplitude_kw * (tau * (h as f64 - p.baseload_peak_hour) / 24.0).cos())
            .collect();
        let pv_kw = (0..HOURS)
            .map(|h| {
                let x = (h as f64 - p.pv_peak_hour) / p.pv_width_hours;
                let v = p.pv_peak_kw * (-0.5 * x * x).exp();
                if v < 1e-3 * p.pv_peak_kw { 0.0 } else { v }
            })
            .collect();
        // Voss-McCartney: octave j is redrawn every 2^j hours.
        const OCTAVES: usize = 4;
        let mut octave = [0.0_f64; OCTAVES];
        let wind_kw = (0..HOURS)
            .map(|h| {
                for (j, o) in octave.iter_mut().enumerate() {
                    if h % (1 << j) == 0 {
                        *o = StandardNormal.sample(&mut rng);
                    }
                }
                let noise: f64 = octave.iter().sum::<f64>() / (OCTAVES as f64).sqrt();
                (p.wind_mean_kw + p.wind_noise_kw * noise).max(0.0)
            })
            .collect();
        let tariff = (0..HOURS as u32)
            .map(|h| {
                if in_hours(h, p.peak_hours) {
                    p.tariff_peak
                } else if in_hours(h, p.offpeak_hours) {
                    p.tariff_offpeak
                } else {
                    p.tariff_shoulder
                }
            })
            .collect();
        Self { baseload_kw, pv_kw, wind_kw, tariff }
    }

    pub fn validate(&self) -> Result<()> {
        let lens = [self.baseload_kw.len(), self.pv_kw.len(), self.wind_kw.len(), self.tariff.len()];
        if lens.iter().any(|&l| l != HOURS) {
            return Err(Error::Config(format!("profiles need {HOURS} hourly values per series, got {lens:?}")));
        }
        if self.tariff.iter().any(|c| !(*c > 0.0)) {
            return Err(Error::Config("tariff must be positive".into()));
        }
        if self.baseload_kw.iter().any(|b| !(*b >= 0.0)) {
            return Err(Error::Config("baseload must be non-negative".into()));
        }
        if self.pv_kw.iter().chain(&self.wind_kw).any(|v| !v.is_finite()) {
            return Err(Error::Config("renewable series must be finite".into()));
        }
        Ok(())
    }

    /// Power load with no EVA contribution: base - pv - wind.
    pub fn residual_load(&self, hour: u32) -> f64 {
        let h = hour as usize % HOURS;
        self.baseload_kw[h] - self.pv_kw[h] - self.wind_kw[h]
    }

    pub fn power_load(&self, hour: u32, p_eva: f64) -> f64 {
        self.residual_load(hour) + p_eva
    }

    /// Net load excluding baseload: -pv - wind + P_EVA.
    pub fn net_load(&self, hour: u32, p_eva: f64) -> f64 {
        let h = hour as usize % HOURS;
        -self.pv_kw[h] - self.wind_kw[h] + p_eva
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for h in 0..HOURS {
            w.serialize(ProfileRow {
                slot: h,
                baseload_kw: self.baseload_kw[h],
                pv_kw: self.pv_kw[h],
                wind_kw: self.wind_kw[h],
                tariff: self.tariff[h],
            })?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let mut rows: Vec<ProfileRow> = csv::Reader::from_path(path)?
            .deserialize()
            .collect::<std::result::Result<_, _>>()?;
        rows.sort_by_key(|r| r.slot);
        if rows.iter().enumerate().any(|(i, r)| r.slot != i) {
            return Err(Error::Config(format!("{}: slots must be 0..{HOURS}", path.display())));
        }
        let p = Self {
            baseload_kw: rows.iter().map(|r| r.baseload_kw).collect(),
            pv_kw: rows.iter().map(|r| r.pv_kw).collect(),
            wind_kw: rows.iter().map(|r| r.wind_kw).collect(),
            tariff: rows.iter().map(|r| r.tariff).collect(),
        };
        p.validate()?;
        Ok(p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoadStats {
    pub p_max: f64,
    pub p_min: f64,
    pub variance: f64,
    pub mean: f64,
}

/// Peak, valley, population variance and mean of a load window.
pub fn rolling_stats(history: &[f64]) -> LoadStats {
    let n = history.len() as f64;
    let mean = history.iter().sum::<f64>() / n;
    let variance = history.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / n;
    LoadStats {
        p_max: history.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        p_min: history.iter().copied().fold(f64::INFINITY, f64::min),
        variance,
        mean,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum SignMode {
    /// Terms exactly as printed: `+psi/f1` and `+upsilon * cost`.
    PaperLiteral,
    /// Cost is penalized and the renewable term uses `psi / |f1|`.
    #[default]
    Corrected,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardWeights {
    pub alpha: f64,
    pub beta: f64,
    pub psi: f64,
    pub chi: f64,
    pub upsilon: f64,
    pub rho: f64,
    /// Floor on |denominator| for the variance, f1 and energy-change terms.
    pub denom_floor: f64,
    pub sign_mode: SignMode,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            alpha: 10.0,
            beta: -5.0,
            psi: 1.0,
            chi: 10.0,
            upsilon: 5.0,
            rho: 1.0,
            denom_floor: 1.0,
            sign_mode: SignMode::Corrected,
        }
    }
}

impl RewardWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.denom_floor > 0.0) {
            return Err(Error::Config("reward denom_floor must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardInputs {
    pub variance: f64,
    pub p_max: f64,
    pub p_min: f64,
    /// Mean net load.
    pub f1: f64,
    pub energy: f64,
    pub energy_lower: f64,
    pub energy_upper: f64,
    pub tariff: f64,
    pub p_eva: f64,
    pub slot_hours: f64,
    pub energy_delta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub f1: f64,
    pub f2: f64,
    pub f3: f64,
    pub total: f64,
}

pub fn reward(w: &RewardWeights, q: &RewardInputs) -> RewardBreakdown {
    let floor = w.denom_floor;
    let renewable = match w.sign_mode {
        SignMode::Corrected => w.psi / q.f1.abs().max(floor),
        SignMode::PaperLiteral => {
            let d = if q.f1.abs() < floor { floor.copysign(q.f1) } else { q.f1 };
            w.psi / d
        }
    };
    let f1 = w.alpha / q.variance.max(floor) + w.beta * (q.p_max - q.p_min) + renewable;

    let boundary = if q.energy > q.energy_upper {
        w.chi * (q.energy_upper - q.energy)
    } else if q.energy < q.energy_lower {
        w.chi * (q.energy - q.energy_lower)
    } else {
        0.0
    };
    let cost = q.tariff * q.p_eva * q.slot_hours;
    let cost_term = match w.sign_mode {
        SignMode::Corrected => -w.upsilon * cost,
        SignMode::PaperLiteral => w.upsilon * cost,
    };
    let f2 = boundary + cost_term;
    let f3 = w.rho / q.energy_delta.abs().max(floor);
    RewardBreakdown { f1, f2, f3, total: f1 + f2 + f3 }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    pub horizon: Horizon,
    pub transformer_kva: f64,
    pub power_factor: f64,
    /// Minimum tie-line power, kW.
    pub grid_min_kw: f64,
    pub profiles: ProfileParams,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            horizon: Horizon::default(),
            transformer_kva: 4000.0,
            power_factor: 0.8,
            grid_min_kw: -3200.0,
            profiles: ProfileParams::default(),
        }
    }
}

impl EnvConfig {
    pub fn grid_max_kw(&self) -> f64 {
        self.transformer_kva * self.power_factor
    }

    pub fn validate(&self) -> Result<()> {
        self.horizon.validate()?;
        if !(self.transformer_kva > 0.0 && self.power_factor > 0.0 && self.power_factor <= 1.0) {
            return Err(Error::Config("transformer capacity and power factor must be positive".into()));
        }
        if self.grid_min_kw >= self.grid_max_kw() {
            return Err(Error::Config("grid_min_kw must be below S*cos(phi)".into()));
        }
        Ok(())
    }
}

/// Observation handed to the agent.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    /// Oldest first.
    pub load_history: Vec<f64>,
    pub eva_energy: f64,
    pub variance: f64,
    pub tariff: f64,
    pub energy_delta: f64,
}

impl EnvState {
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.load_history.clone();
        v.extend([self.eva_energy, self.variance, self.tariff, self.energy_delta]);
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub state: EnvState,
    pub reward: RewardBreakdown,
    pub requested_power: f64,
    pub applied_power: f64,
    pub projected: bool,
    pub done: bool,
    pub grid_load: f64,
    pub allocation: AllocationProposal,
}

/// Which per-EV boxes the projection could honour this slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoundMode {
    /// Every EV stays inside its departure-reachable set.
    Reachable,
    /// The grid limit forced a fallback to plain SOC limits.
    SocOnly,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionBounds {
    pub min: f64,
    pub max: f64,
    pub mode: BoundMode,
}

#[derive(Debug, Clone)]
pub struct V2gEnv {
    pub cfg: EnvConfig,
    pub weights: RewardWeights,
    pub alloc: AllocationConfig,
    pub profiles: GridProfiles,
    pub sessions: Vec<EvSession>,
    pub envelope: AggregateEnvelope,
    slot: usize,
    energies: Vec<f64>,
    eva_energy: f64,
    energy_delta: f64,
    load_history: VecDeque<f64>,
    net_history: VecDeque<f64>,
    rng: ChaCha8Rng,
    energy_log: Vec<Vec<f64>>,
    proposals: Vec<AllocationProposal>,
    grid_loads: Vec<f64>,
}

impl V2gEnv {
    pub fn new(
        cfg: EnvConfig,
        weights: RewardWeights,
        alloc: AllocationConfig,
        profiles: GridProfiles,
        sessions: Vec<EvSession>,
    ) -> Result<Self> {
        cfg.validate()?;
        weights.validate()?;
        alloc.validate()?;
        profiles.validate()?;
        let envelope = AggregateEnvelope::from_sessions(&sessions, &cfg.horizon)?;
        let mut env = Self {
            cfg,
            weights,
            alloc,
            profiles,
            sessions,
            envelope,
            slot: 0,
            energies: Vec::new(),
            eva_energy: 0.0,
            energy_delta: 0.0,
            load_history: VecDeque::new(),
            net_history: VecDeque::new(),
            rng: ChaCha8Rng::seed_from_u64(0),
            energy_log: Vec::new(),
            proposals: Vec::new(),
            grid_loads: Vec::new(),
        };
        env.reset(0);
        Ok(env)
    }

    /// Back to the first slot. The history holds the previous 24 hours of
    /// load with no EVA contribution.
    pub fn reset(&mut self, day_seed: u64) -> EnvState {
        let h = self.cfg.horizon;
        self.slot = 0;
        self.rng = ChaCha8Rng::seed_from_u64(day_seed);
        self.energies = self.sessions.iter().map(|s| s.initial_energy()).collect();
        self.eva_energy = self.energies.iter().sum();
        self.energy_delta = 0.0;
        let hours = (0..HOURS as u32).map(|j| (h.start_hour + j) % 24);
        self.load_history = hours.clone().map(|hr| self.profiles.power_load(hr, 0.0)).collect();
        self.net_history = hours.map(|hr| self.profiles.net_load(hr, 0.0)).collect();
        self.energy_log = vec![self.energies.clone()];
        self.proposals.clear();
        self.grid_loads.clear();
        self.state()
    }

    pub fn state(&self) -> EnvState {
        let hist: Vec<f64> = self.load_history.iter().copied().collect();
        let stats = rolling_stats(&hist);
        let hour = self.cfg.horizon.hour_of(self.slot.min(self.cfg.horizon.slots - 1));
        EnvState {
            load_history: hist,
            eva_energy: self.eva_energy,
            variance: stats.variance,
            tariff: self.profiles.tariff[hour as usize],
            energy_delta: self.energy_delta,
        }
    }

    pub fn slot(&self) -> usize {
        self.slot
    }

    pub fn done(&self) -> bool {
        self.slot >= self.cfg.horizon.slots
    }

    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    pub fn eva_energy(&self) -> f64 {
        self.eva_energy
    }

    /// Per-EV energies at every point visited so far.
    pub fn energy_log(&self) -> &[Vec<f64>] {
        &self.energy_log
    }

    pub fn proposals(&self) -> &[AllocationProposal] {
        &self.proposals
    }

    pub fn grid_loads(&self) -> &[f64] {
        &self.grid_loads
    }

    pub fn power_load(&self, slot: usize, p_eva: f64) -> f64 {
        self.profiles.power_load(self.cfg.horizon.hour_of(slot), p_eva)
    }

    pub fn net_load(&self, slot: usize, p_eva: f64) -> f64 {
        self.profiles.net_load(self.cfg.horizon.hour_of(slot), p_eva)
    }

    fn slot_inputs(&self, mode: BoundMode) -> Vec<EvSlotInput> {
        let t = self.slot;
        self.envelope
            .per_ev
            .iter()
            .zip(&self.energies)
            .map(|(b, &e)| {
                let (lower_next, upper_next) = match mode {
                    BoundMode::Reachable => b.at(t + 1),
                    BoundMode::SocOnly => (b.floor.min(e), b.ceiling.max(e)),
                };
                EvSlotInput {
                    ev_id: b.ev_id,
                    connected: b.is_connected(t),
                    energy: e,
                    lower_next,
                    upper_next,
                    p_dis_max: b.p_dis_max,
                    p_ch_max: b.p_ch_max,
                    efficiency: b.efficiency,
                }
            })
            .collect()
    }

    /// Admissible EVA power this slot: the sum of per-EV reachable boxes
    /// intersected with the tie-line and transformer limits. If the grid
    /// limit rules out every reachable point, fall back to SOC limits.
    pub fn action_bounds(&self) -> ActionBounds {
        let t = self.slot;
        let dt = self.cfg.horizon.slot_hours;
        let residual = self.power_load(t, 0.0);
        let (g_lo, g_hi) = (self.cfg.grid_min_kw - residual, self.cfg.grid_max_kw() - residual);
        let sum_box = |mode| {
            self.slot_inputs(mode)
                .iter()
                .map(|i| i.power_box(dt))
                .fold((0.0, 0.0), |(a, b), (lo, hi)| (a + lo, b + hi))
        };
        let (r_lo, r_hi) = sum_box(BoundMode::Reachable);
        let (lo, hi) = (r_lo.max(g_lo), r_hi.min(g_hi));
        if lo <= hi {
            return ActionBounds { min: lo, max: hi, mode: BoundMode::Reachable };
        }
        let (s_lo, s_hi) = sum_box(BoundMode::SocOnly);
        let (lo, hi) = (s_lo.max(g_lo), s_hi.min(g_hi));
        if lo <= hi {
            ActionBounds { min: lo, max: hi, mode: BoundMode::SocOnly }
        } else {
            // The grid window lies entirely outside what the fleet can do.
            let p = if g_hi < s_lo { s_lo } else { s_hi };
            ActionBounds { min: p, max: p, mode: BoundMode::SocOnly }
        }
    }

    /// Apply an EVA power request for the current slot.
    pub fn step(&mut self, action: f64) -> Result<StepOutcome> {
        if self.done() {
            return Err(Error::Infeasible("episode already finished".into()));
        }
        if !action.is_finite() {
            return Err(Error::Domain(format!("non-finite action {action}")));
        }
        let t = self.slot;
        let dt = self.cfg.horizon.slot_hours;
        let bounds = self.action_bounds();
        let applied = action.clamp(bounds.min, bounds.max);
        let projected = (applied - action).abs() > 1e-9 * (1.0 + action.abs());

        let inputs = self.slot_inputs(bounds.mode);
        let ages: Vec<f64> = self.sessions.iter().map(|s| s.pack.efc).collect();
        let stakes = stakes_for(&inputs, &ages, &self.alloc);
        let mut proposal = allocate(t, applied, &inputs, &stakes, &mut self.rng, &self.alloc, dt)?;
        trim_overshoot(&mut proposal.final_kw, self.power_load(t, 0.0), self.cfg.grid_max_kw());

        for (e, (p, i)) in self.energies.iter_mut().zip(proposal.final_kw.iter().zip(&inputs)) {
            *e = i.next_energy(*p, dt);
        }
        let delivered: f64 = proposal.final_kw.iter().sum();
        let new_energy: f64 = self.energies.iter().sum();
        self.energy_delta = new_energy - self.eva_energy;
        self.eva_energy = new_energy;

        let grid_load = self.power_load(t, delivered);
        self.load_history.pop_front();
        self.load_history.push_back(grid_load);
        self.net_history.pop_front();
        self.net_history.push_back(self.net_load(t, delivered));
        self.energy_log.push(self.energies.clone());
        self.grid_loads.push(grid_load);

        let hist: Vec<f64> = self.load_history.iter().copied().collect();
        let stats = rolling_stats(&hist);
        let f1 = self.net_history.iter().sum::<f64>() / self.net_history.len() as f64;
        let hour = self.cfg.horizon.hour_of(t) as usize;
        let r = reward(
            &self.weights,
            &RewardInputs {
                variance: stats.variance,
                p_max: stats.p_max,
                p_min: stats.p_min,
                f1,
                energy: self.eva_energy,
                energy_lower: self.envelope.e_lower[t + 1],
                energy_upper: self.envelope.e_upper[t + 1],
                tariff: self.profiles.tariff[hour],
                p_eva: delivered,
                slot_hours: dt,
                energy_delta: self.energy_delta,
            },
        );
        self.proposals.push(proposal.clone());
        self.slot += 1;
        Ok(StepOutcome {
            state: self.state(),
            reward: r,
            requested_power: action,
            applied_power: delivered,
            projected,
            done: self.done(),
            grid_load,
            allocation: proposal,
        })
    }
}
