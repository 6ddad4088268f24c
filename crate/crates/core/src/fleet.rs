//! EV plug-in sessions and the aggregate energy/power envelope of the fleet.
//!
//! Time is indexed two ways. A *slot* `t` in `0..K` is one scheduling hour;
//! an energy *point* `k` in `0..=K` is the instant before slot `k` (point `K`
//! is the end of the horizon). An EV arriving in hour `a` and leaving after
//! hour `d` is connected for slots `a..=d` (mapped into the horizon) and its
//! energy is free between points `a` and `d + 1`. Outside that window its
//! energy bounds are held constant and its power bounds are zero, so the
//! aggregate energy is the sum over the whole fleet at every point.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::battery::BatteryPackState;
use crate::error::{Error, Result};

const FEAS_TOL: f64 = 1e-9;

/// Hourly scheduling horizon that wraps past midnight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Horizon {
    pub start_hour: u32,
    pub slots: usize,
    /// Slot length in hours.
    pub slot_hours: f64,
}

impl Default for Horizon {
    fn default() -> Self {
        Self {
            start_hour: 15,
            slots: 20,
            slot_hours: 1.0,
        }
    }
}

impl Horizon {
    pub fn hour_of(&self, slot: usize) -> u32 {
        ((self.start_hour as usize + slot) % 24) as u32
    }

    /// Slot index of a clock hour, counting forward from the start hour.
    pub fn slot_of(&self, hour: u32) -> usize {
        ((hour + 24 - self.start_hour % 24) % 24) as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.slots == 0 || self.slots > 24 || self.start_hour >= 24 {
            return Err(Error::Config(format!("bad horizon {self:?}")));
        }
        if !(self.slot_hours > 0.0) {
            return Err(Error::Config("slot length must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvSpec {
    pub capacity_kwh: f64,
    pub p_ch_max_kw: f64,
    /// Negative.
    pub p_dis_max_kw: f64,
    pub efficiency: f64,
    pub soc_floor: f64,
    pub soc_ceiling: f64,
    pub departure_soc_min: f64,
    pub departure_soc_max: f64,
}

impl Default for EvSpec {
    fn default() -> Self {
        Self {
            capacity_kwh: 24.0,
            p_ch_max_kw: 6.0,
            p_dis_max_kw: -6.0,
            efficiency: 0.95,
            soc_floor: 0.2,
            soc_ceiling: 0.9,
            departure_soc_min: 0.8,
            departure_soc_max: 0.9,
        }
    }
}

impl EvSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.p_dis_max_kw < 0.0 && 0.0 < self.p_ch_max_kw) {
            return Err(Error::Config("EV power limits must satisfy p_dis < 0 < p_ch".into()));
        }
        if !(0.0 <= self.soc_floor && self.soc_floor < self.soc_ceiling && self.soc_ceiling <= 1.0) {
            return Err(Error::Config("EV SOC bounds must satisfy 0 <= floor < ceiling <= 1".into()));
        }
        if !(self.departure_soc_min <= self.departure_soc_max
            && self.departure_soc_min >= self.soc_floor
            && self.departure_soc_max <= self.soc_ceiling)
        {
            return Err(Error::Config("departure SOC band must lie inside the SOC bounds".into()));
        }
        if !(self.efficiency > 0.0 && self.efficiency <= 1.0) {
            return Err(Error::Config("efficiency must lie in (0, 1]".into()));
        }
        if !(self.capacity_kwh > 0.0) {
            return Err(Error::Config("capacity must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvSession {
    pub ev_id: usize,
    pub arrival_hour: u32,
    pub departure_hour: u32,
    pub soc_initial: f64,
    pub spec: EvSpec,
    pub pack: BatteryPackState,
}

impl EvSession {
    pub fn new(ev_id: usize, arrival_hour: u32, departure_hour: u32, soc_initial: f64, spec: EvSpec) -> Self {
        Self {
            ev_id,
            arrival_hour,
            departure_hour,
            soc_initial,
            spec,
            pack: BatteryPackState::new(soc_initial, 100.0, 0.0),
        }
    }

    /// Usable capacity after fade: Q * SOH.
    pub fn capacity_kwh(&self) -> f64 {
        self.spec.capacity_kwh * self.pack.soh / 100.0
    }

    pub fn initial_energy(&self) -> f64 {
        self.soc_initial * self.capacity_kwh()
    }

    pub fn first_slot(&self, h: &Horizon) -> usize {
        h.slot_of(self.arrival_hour)
    }

    pub fn last_slot(&self, h: &Horizon) -> usize {
        h.slot_of(self.departure_hour)
    }

    /// Energy point at which the EV leaves.
    pub fn departure_point(&self, h: &Horizon) -> usize {
        self.last_slot(h) + 1
    }

    pub fn is_connected(&self, h: &Horizon, slot: usize) -> bool {
        (self.first_slot(h)..=self.last_slot(h)).contains(&slot)
    }
}

/// Normal distributions clipped to a range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClippedNormal {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl ClippedNormal {
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        (self.mean + self.std * z).clamp(self.min, self.max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FleetDistributions {
    pub arrival: ClippedNormal,
    pub departure: ClippedNormal,
    pub soc: ClippedNormal,
}

impl Default for FleetDistributions {
    fn default() -> Self {
        Self {
            arrival: ClippedNormal { mean: 18.0, std: 1.0, min: 15.0, max: 21.0 },
            departure: ClippedNormal { mean: 8.0, std: 1.0, min: 6.0, max: 10.0 },
            soc: ClippedNormal { mean: 0.5, std: 0.1, min: 0.2, max: 0.8 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FleetConfig {
    pub size: usize,
    pub ev: EvSpec,
    pub distributions: FleetDistributions,
    /// Percent.
    pub initial_soh: f64,
    pub initial_efc: f64,
}

impl Default for FleetConfig {
    fn default() -> Self {
        Self {
            size: 509,
            ev: EvSpec::default(),
            distributions: FleetDistributions::default(),
            initial_soh: 97.46,
            initial_efc: 50.0,
        }
    }
}

impl FleetConfig {
    pub fn session(&self, ev_id: usize, arrival_hour: u32, departure_hour: u32, soc: f64) -> EvSession {
        let mut s = EvSession::new(ev_id, arrival_hour, departure_hour, soc, self.ev);
        s.pack = BatteryPackState::new(soc, self.initial_soh, self.initial_efc);
        s
    }
}

const MAX_SAMPLE_ATTEMPTS: usize = 100;

/// Draw `n` feasible sessions. Sessions whose departure band is unreachable
/// are redrawn, up to 100 attempts each.
pub fn sample_fleet(n: usize, seed: u64, cfg: &FleetConfig, horizon: &Horizon) -> Result<Vec<EvSession>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = &cfg.distributions;
    (0..n)
        .map(|ev_id| {
            let mut last_err = None;
            for _ in 0..MAX_SAMPLE_ATTEMPTS {
                let arrival = d.arrival.sample(&mut rng).round() as u32;
                let departure = d.departure.sample(&mut rng).round() as u32;
                let soc = d.soc.sample(&mut rng);
                let s = cfg.session(ev_id, arrival % 24, departure % 24, soc);
                match EvBounds::new(&s, horizon) {
                    Ok(_) => return Ok(s),
                    Err(e) => last_err = Some(e),
                }
            }
            Err(last_err.expect("at least one attempt"))
        })
        .collect()
}

/// Reachable energy interval of one battery at every energy point, given a
/// start energy, a connection window and a target interval at departure.
#[derive(Debug, Clone, PartialEq)]
pub struct EvBounds {
    pub ev_id: usize,
    pub first_slot: usize,
    pub last_slot: usize,
    pub p_ch_max: f64,
    pub p_dis_max: f64,
    pub efficiency: f64,
    pub slot_hours: f64,
    pub floor: f64,
    pub ceiling: f64,
    pub e_lower: Vec<f64>,
    pub e_upper: Vec<f64>,
}

/// Parameters of a reachable-set computation.
#[derive(Debug, Clone, Copy)]
pub struct ReachSpec {
    pub e_init: f64,
    pub first_slot: usize,
    pub last_slot: usize,
    /// Grid-side power limits, kW.
    pub p_min: f64,
    pub p_max: f64,
    pub efficiency: f64,
    pub floor: f64,
    pub ceiling: f64,
    pub target_min: f64,
    pub target_max: f64,
}

impl EvBounds {
    pub fn new(s: &EvSession, h: &Horizon) -> Result<Self> {
        let q = s.capacity_kwh();
        let spec = ReachSpec {
            e_init: s.initial_energy(),
            first_slot: s.first_slot(h),
            last_slot: s.last_slot(h),
            p_min: s.spec.p_dis_max_kw,
            p_max: s.spec.p_ch_max_kw,
            efficiency: s.spec.efficiency,
            floor: s.spec.soc_floor * q,
            ceiling: s.spec.soc_ceiling * q,
            target_min: s.spec.departure_soc_min * q,
            target_max: s.spec.departure_soc_max * q,
        };
        Self::reachable(s.ev_id, &spec, h)
    }

    pub fn reachable(ev_id: usize, r: &ReachSpec, h: &Horizon) -> Result<Self> {
        let k_max = h.slots;
        if r.first_slot > r.last_slot || r.last_slot >= k_max {
            return Err(Error::InfeasibleSession {
                ev_id,
                reason: format!(
                    "connection window {}..={} outside horizon of {} slots",
                    r.first_slot, r.last_slot, k_max
                ),
            });
        }
        let dt = h.slot_hours;
        let (a, dep) = (r.first_slot, r.last_slot + 1);
        let up_rate = r.efficiency * r.p_max * dt;
        let down_rate = r.efficiency * r.p_min * dt;
        let mut e_lower = vec![r.e_init; k_max + 1];
        let mut e_upper = vec![r.e_init; k_max + 1];
        for k in a + 1..=dep {
            let (t, s) = ((k - a) as f64, (dep - k) as f64);
            let lo = r.floor.max(r.e_init + down_rate * t).max(r.target_min - up_rate * s);
            let hi = r.ceiling.min(r.e_init + up_rate * t).min(r.target_max - down_rate * s);
            if lo > hi + FEAS_TOL {
                return Err(Error::InfeasibleSession {
                    ev_id,
                    reason: format!(
                        "no reachable energy at point {k}: [{lo:.4}, {hi:.4}] kWh (start {:.4}, target [{:.4}, {:.4}])",
                        r.e_init, r.target_min, r.target_max
                    ),
                });
            }
            e_lower[k] = lo.min(hi);
            e_upper[k] = hi;
        }
        for k in dep + 1..=k_max {
            e_lower[k] = e_lower[dep];
            e_upper[k] = e_upper[dep];
        }
        Ok(Self {
            ev_id,
            first_slot: r.first_slot,
            last_slot: r.last_slot,
            p_ch_max: r.p_max,
            p_dis_max: r.p_min,
            efficiency: r.efficiency,
            slot_hours: dt,
            floor: r.floor,
            ceiling: r.ceiling,
            e_lower,
            e_upper,
        })
    }

    /// `(e_min, e_max)` at energy point `k`.
    pub fn at(&self, k: usize) -> (f64, f64) {
        (self.e_lower[k], self.e_upper[k])
    }

    pub fn is_connected(&self, slot: usize) -> bool {
        (self.first_slot..=self.last_slot).contains(&slot)
    }

    pub fn departure_point(&self) -> usize {
        self.last_slot + 1
    }

    /// Battery-side energy-rate limits (kWh per slot) during `slot`.
    pub fn energy_rate(&self, slot: usize) -> (f64, f64) {
        if self.is_connected(slot) {
            let f = self.efficiency * self.slot_hours;
            (self.p_dis_max * f, self.p_ch_max * f)
        } else {
            (0.0, 0.0)
        }
    }

    /// Grid-side power interval that keeps the battery inside its reachable
    /// set at the next point, starting from energy `e` at point `slot`.
    pub fn power_box(&self, e: f64, slot: usize) -> (f64, f64) {
        if !self.is_connected(slot) {
            return (0.0, 0.0);
        }
        let f = self.efficiency * self.slot_hours;
        let lo = self.p_dis_max.max((self.e_lower[slot + 1] - e) / f);
        let hi = self.p_ch_max.min((self.e_upper[slot + 1] - e) / f);
        (lo.min(hi), hi)
    }

    /// Like [`power_box`](Self::power_box) but only enforcing the SOC floor
    /// and ceiling, not departure reachability.
    pub fn hard_power_box(&self, e: f64, slot: usize) -> (f64, f64) {
        if !self.is_connected(slot) {
            return (0.0, 0.0);
        }
        let f = self.efficiency * self.slot_hours;
        let lo = self.p_dis_max.max((self.floor - e) / f).min(0.0);
        let hi = self.p_ch_max.min((self.ceiling - e) / f).max(0.0);
        (lo, hi)
    }
}

/// `(e_min, e_max)` of one session at energy point `point`.
pub fn per_ev_energy_bounds(session: &EvSession, horizon: &Horizon, point: usize) -> Result<(f64, f64)> {
    Ok(EvBounds::new(session, horizon)?.at(point))
}

/// Aggregate envelope over the fleet.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateEnvelope {
    pub horizon: Horizon,
    pub efficiency: f64,
    /// Per point, `0..=K`.
    pub e_lower: Vec<f64>,
    pub e_upper: Vec<f64>,
    /// Per slot, grid side, kW.
    pub p_lower: Vec<f64>,
    pub p_upper: Vec<f64>,
    pub per_ev: Vec<EvBounds>,
    // Prefix sums of battery-side rate limits per EV, `0..=K`.
    rate_lo_prefix: Vec<Vec<f64>>,
    rate_hi_prefix: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvelopeViolation {
    pub k1: usize,
    pub k2: usize,
    pub delta: f64,
    pub lower: f64,
    pub upper: f64,
}

impl AggregateEnvelope {
    pub fn from_sessions(sessions: &[EvSession], horizon: &Horizon) -> Result<Self> {
        let per_ev = sessions
            .iter()
            .map(|s| EvBounds::new(s, horizon))
            .collect::<Result<Vec<_>>>()?;
        Self::from_bounds(per_ev, horizon)
    }

    pub fn from_bounds(per_ev: Vec<EvBounds>, horizon: &Horizon) -> Result<Self> {
        let k_max = horizon.slots;
        let efficiency = per_ev.first().map_or(1.0, |b| b.efficiency);
        if per_ev.iter().any(|b| (b.efficiency - efficiency).abs() > 1e-12) {
            return Err(Error::Config("aggregate envelope needs a common efficiency".into()));
        }
        let mut e_lower = vec![0.0; k_max + 1];
        let mut e_upper = vec![0.0; k_max + 1];
        let mut p_lower = vec![0.0; k_max];
        let mut p_upper = vec![0.0; k_max];
        let mut rate_lo_prefix = Vec::with_capacity(per_ev.len());
        let mut rate_hi_prefix = Vec::with_capacity(per_ev.len());
        for b in &per_ev {
            for k in 0..=k_max {
                e_lower[k] += b.e_lower[k];
                e_upper[k] += b.e_upper[k];
            }
            let mut lo = vec![0.0; k_max + 1];
            let mut hi = vec![0.0; k_max + 1];
            for t in 0..k_max {
                if b.is_connected(t) {
                    p_lower[t] += b.p_dis_max;
                    p_upper[t] += b.p_ch_max;
                }
                let (rl, rh) = b.energy_rate(t);
                lo[t + 1] = lo[t] + rl;
                hi[t + 1] = hi[t] + rh;
            }
            rate_lo_prefix.push(lo);
            rate_hi_prefix.push(hi);
        }
        Ok(Self {
            horizon: *horizon,
            efficiency,
            e_lower,
            e_upper,
            p_lower,
            p_upper,
            per_ev,
            rate_lo_prefix,
            rate_hi_prefix,
        })
    }

    pub fn slots(&self) -> usize {
        self.horizon.slots
    }

    pub fn initial_energy(&self) -> f64 {
        self.e_lower[0]
    }

    /// Bounds on `E[k1] - E[k2]` for `k2 < k1`.
    pub fn pair_bounds(&self, k1: usize, k2: usize) -> (f64, f64) {
        let mut lower = 0.0;
        let mut upper = 0.0;
        for (n, b) in self.per_ev.iter().enumerate() {
            let lo_rate = self.rate_lo_prefix[n][k1] - self.rate_lo_prefix[n][k2];
            let hi_rate = self.rate_hi_prefix[n][k1] - self.rate_hi_prefix[n][k2];
            lower += (b.e_lower[k1] - b.e_upper[k2]).max(lo_rate);
            upper += (b.e_upper[k1] - b.e_lower[k2]).min(hi_rate);
        }
        (lower, upper)
    }

    /// First violated condition for an aggregate energy trajectory of
    /// `K + 1` points, or `None` if it lies inside the envelope. Pairs with
    /// `k1 == k2` report a point outside `[e_lower, e_upper]`.
    pub fn first_violation(&self, trajectory: &[f64]) -> Option<EnvelopeViolation> {
        let k_max = self.slots();
        assert_eq!(trajectory.len(), k_max + 1, "trajectory must cover every energy point");
        let scale = 1.0 + self.e_upper.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let tol = 1e-9 * scale;
        for (k, &e) in trajectory.iter().enumerate() {
            if e < self.e_lower[k] - tol || e > self.e_upper[k] + tol {
                return Some(EnvelopeViolation {
                    k1: k,
                    k2: k,
                    delta: e,
                    lower: self.e_lower[k],
                    upper: self.e_upper[k],
                });
            }
        }
        for k1 in 1..=k_max {
            for k2 in 0..k1 {
                let (lower, upper) = self.pair_bounds(k1, k2);
                let delta = trajectory[k1] - trajectory[k2];
                if delta < lower - tol || delta > upper + tol {
                    return Some(EnvelopeViolation { k1, k2, delta, lower, upper });
                }
            }
        }
        None
    }

    pub fn contains(&self, trajectory: &[f64]) -> bool {
        self.first_violation(trajectory).is_none()
    }

    /// One-step grid-side EVA power bounds from aggregate energy `energy` at
    /// point `slot`: instantaneous power sums intersected with the energy
    /// bounds at the next point.
    pub fn eva_power_bounds(&self, energy: f64, slot: usize) -> Result<(f64, f64)> {
        let (lo_e, hi_e) = (self.e_lower[slot], self.e_upper[slot]);
        let tol = 1e-9 * (1.0 + hi_e.abs());
        if energy < lo_e - tol || energy > hi_e + tol {
            return Err(Error::Projection { point: slot, energy, lower: lo_e, upper: hi_e });
        }
        let f = self.efficiency * self.horizon.slot_hours;
        let lo = self.p_lower[slot].max((self.e_lower[slot + 1] - energy) / f);
        let hi = self.p_upper[slot].min((self.e_upper[slot + 1] - energy) / f);
        Ok((lo.min(hi), hi))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct FleetRow {
    ev_id: usize,
    arrival_hour: u32,
    departure_hour: u32,
    soc_initial: f64,
    capacity_kwh: f64,
    p_ch_max_kw: f64,
    p_dis_max_kw: f64,
    /// Percent; tables without the column take the configured initial SOH.
    #[serde(default)]
    soh: Option<f64>,
}

pub fn write_fleet_csv(path: &Path, sessions: &[EvSession]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    if sessions.is_empty() {
        w.write_record([
            "ev_id",
            "arrival_hour",
            "departure_hour",
            "soc_initial",
            "capacity_kwh",
            "p_ch_max_kw",
            "p_dis_max_kw",
            "soh",
        ])?;
    }
    for s in sessions {
        w.serialize(FleetRow {
            ev_id: s.ev_id,
            arrival_hour: s.arrival_hour,
            departure_hour: s.departure_hour,
            soc_initial: s.soc_initial,
            capacity_kwh: s.spec.capacity_kwh,
            p_ch_max_kw: s.spec.p_ch_max_kw,
            p_dis_max_kw: s.spec.p_dis_max_kw,
            soh: Some(s.pack.soh),
        })?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Read a session table; fields not in the table come from `cfg`.
pub fn read_fleet_csv(path: &Path, cfg: &FleetConfig) -> Result<Vec<EvSession>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize::<FleetRow>()
        .map(|row| {
            let row = row?;
            let mut s = cfg.session(row.ev_id, row.arrival_hour, row.departure_hour, row.soc_initial);
            s.spec.capacity_kwh = row.capacity_kwh;
            s.spec.p_ch_max_kw = row.p_ch_max_kw;
            s.spec.p_dis_max_kw = row.p_dis_max_kw;
            if let Some(soh) = row.soh {
                if !(soh > 0.0 && soh <= 100.0) {
                    return Err(Error::Domain(format!("EV {}: SOH {soh} outside (0, 100]", row.ev_id)));
                }
                s.pack.soh = soh;
            }
            s.spec.validate()?;
            Ok(s)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_spec() -> EvSpec {
        EvSpec { efficiency: 1.0, ..EvSpec::default() }
    }

    fn session(arr: u32, dep: u32, soc: f64) -> EvSession {
        EvSession::new(0, arr, dep, soc, unit_spec())
    }

    #[test]
    fn horizon_maps_hours() {
        let h = Horizon::default();
        assert_eq!(h.slot_of(15), 0);
        assert_eq!(h.slot_of(23), 8);
        assert_eq!(h.slot_of(0), 9);
        assert_eq!(h.slot_of(10), 19);
        assert_eq!(h.hour_of(19), 10);
        let s = session(15, 10, 0.5);
        assert_eq!(s.departure_point(&h), 20);
    }

    #[test]
    fn bounds_at_arrival_and_departure() {
        let h = Horizon::default();
        let s = session(17, 8, 0.5);
        let b = EvBounds::new(&s, &h).unwrap();
        let a = s.first_slot(&h);
        assert_eq!(b.at(a), (12.0, 12.0));
        assert_eq!(b.at(0), (12.0, 12.0));
        // two slots at 6 kW would give 24 kWh; the ceiling caps it
        assert!((b.at(a + 2).1 - 21.6).abs() < 1e-12);
        let (lo, hi) = b.at(s.departure_point(&h));
        assert!(lo >= 19.2 - 1e-12 && hi <= 21.6 + 1e-12);
        assert_eq!(b.at(20), b.at(s.departure_point(&h)));
    }

    #[test]
    fn unreachable_band_is_rejected() {
        let h = Horizon::default();
        // one connected slot cannot lift 0.2 -> 0.8
        let s = session(10, 10, 0.2);
        assert!(matches!(EvBounds::new(&s, &h), Err(Error::InfeasibleSession { .. })));
    }

    #[test]
    fn degenerate_distributions() {
        let cfg = FleetConfig {
            distributions: FleetDistributions {
                arrival: ClippedNormal { mean: 18.0, std: 0.0, min: 15.0, max: 21.0 },
                departure: ClippedNormal { mean: 8.0, std: 0.0, min: 6.0, max: 10.0 },
                soc: ClippedNormal { mean: 0.5, std: 0.0, min: 0.2, max: 0.8 },
            },
            ..FleetConfig::default()
        };
        let f = sample_fleet(1, 3, &cfg, &Horizon::default()).unwrap();
        assert_eq!((f[0].arrival_hour, f[0].departure_hour, f[0].soc_initial), (18, 8, 0.5));
    }

    #[test]
    fn sampled_fleet_respects_ranges() {
        let h = Horizon::default();
        let f = sample_fleet(509, 11, &FleetConfig::default(), &h).unwrap();
        assert_eq!(f.len(), 509);
        for s in &f {
            assert!((15..=21).contains(&s.arrival_hour));
            assert!((6..=10).contains(&s.departure_hour));
            assert!((0.2..=0.8).contains(&s.soc_initial));
        }
        assert_eq!(f, sample_fleet(509, 11, &FleetConfig::default(), &h).unwrap());
    }

    #[test]
    fn single_and_doubled_envelopes() {
        let h = Horizon::default();
        let one = vec![session(18, 8, 0.4)];
        let env1 = AggregateEnvelope::from_sessions(&one, &h).unwrap();
        let b = EvBounds::new(&one[0], &h).unwrap();
        assert_eq!(env1.e_lower, b.e_lower);
        assert_eq!(env1.e_upper, b.e_upper);
        let two = vec![one[0].clone(), one[0].clone()];
        let env2 = AggregateEnvelope::from_sessions(&two, &h).unwrap();
        for k in 0..=h.slots {
            assert!((env2.e_upper[k] - 2.0 * env1.e_upper[k]).abs() < 1e-12);
            assert!((env2.e_lower[k] - 2.0 * env1.e_lower[k]).abs() < 1e-12);
        }
        for t in 0..h.slots {
            assert_eq!(env2.p_upper[t], 2.0 * env1.p_upper[t]);
        }
    }

    #[test]
    fn upper_extreme_is_contained_and_jumps_are_not() {
        let h = Horizon::default();
        let f = sample_fleet(12, 5, &FleetConfig::default(), &h).unwrap();
        let env = AggregateEnvelope::from_sessions(&f, &h).unwrap();
        assert!(env.contains(&env.e_upper));
        assert!(env.contains(&env.e_lower));

        let mut traj = env.e_upper.clone();
        let k = 6;
        let jump = env.p_upper[k - 1] * env.efficiency + 1.0;
        for v in traj.iter_mut().skip(k) {
            *v += jump;
        }
        // lift everything after the jump so only the step is infeasible
        let v = env.first_violation(&traj).unwrap();
        assert!(v.k1 >= k);
    }

    #[test]
    fn power_bounds_edge_cases() {
        let h = Horizon::default();
        let s = session(15, 6, 0.5);
        let env = AggregateEnvelope::from_sessions(std::slice::from_ref(&s), &h).unwrap();
        // after departure nothing is connected
        let last = h.slots - 1;
        let e = env.e_upper[last];
        assert_eq!(env.eva_power_bounds(e, last).unwrap(), (0.0, 0.0));
        // at the upper bound with a flat upper bound ahead there is no charging headroom
        let k = s.departure_point(&h) - 1;
        assert_eq!(env.e_upper[k], env.e_upper[k + 1]);
        let (_, p_max) = env.eva_power_bounds(env.e_upper[k], k).unwrap();
        assert!(p_max.abs() < 1e-12);
        assert!(matches!(
            env.eva_power_bounds(env.e_upper[3] + 1.0, 3),
            Err(Error::Projection { .. })
        ));
    }

    #[test]
    fn fleet_csv_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fleet.csv");
        let cfg = FleetConfig::default();
        let mut f = sample_fleet(7, 2, &cfg, &Horizon::default()).unwrap();
        f[3].pack.soh = 91.5;
        write_fleet_csv(&path, &f).unwrap();
        assert_eq!(read_fleet_csv(&path, &cfg).unwrap(), f);

        let legacy = dir.path().join("legacy.csv");
        std::fs::write(&legacy, "ev_id,arrival_hour,departure_hour,soc_initial,capacity_kwh,p_ch_max_kw,p_dis_max_kw\n0,18,8,0.5,24,6,-6\n").unwrap();
        assert_eq!(read_fleet_csv(&legacy, &cfg).unwrap()[0].pack.soh, cfg.initial_soh);
        assert!(matches!(
            read_fleet_csv(&dir.path().join("nope.csv"), &cfg),
            Err(Error::MissingFile(_))
        ));
    }
}
