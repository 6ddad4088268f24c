//! Disaggregation of the aggregator's power over individual EVs.
//!
//! One slot runs as a pipeline: pick a validator by stake, split the target
//! power in proportion to each EV's headroom (charging) or footroom
//! (discharging), clamp every share to its power and energy box, push any
//! residual onto EVs that still have room, then re-check the result.

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::battery::{degradation_cost, DegradationCostParams};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AllocationConfig {
    /// Share of stored energy an EV locks as stake.
    pub lock_fraction: f64,
    pub max_iterations: usize,
    /// kW.
    pub balance_tolerance: f64,
    /// $/kWh of planned energy not delivered.
    pub deviation_penalty_rate: f64,
}

impl Default for AllocationConfig {
    fn default() -> Self {
        Self {
            lock_fraction: 0.1,
            max_iterations: 50,
            balance_tolerance: 1e-6,
            deviation_penalty_rate: 0.1,
        }
    }
}

impl AllocationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lock_fraction) {
            return Err(Error::Config("lock_fraction must lie in [0, 1]".into()));
        }
        if !(self.balance_tolerance > 0.0) || self.max_iterations == 0 {
            return Err(Error::Config("allocation tolerance and iteration cap must be positive".into()));
        }
        if self.deviation_penalty_rate < 0.0 {
            return Err(Error::Config("deviation penalty rate must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StakeRecord {
    pub ev_id: usize,
    /// kWh.
    pub locked_energy: f64,
    /// Equivalent full cycles.
    pub battery_age: f64,
}

/// Stake-weighted lottery. The score is the locked energy discounted by age
/// relative to the oldest battery; one uniform draw picks the winner. If
/// every score is zero the draw is uniform.
pub fn select_validator(stakes: &[StakeRecord], rng: &mut ChaCha8Rng) -> Result<usize> {
    if stakes.is_empty() {
        return Err(Error::Infeasible("no connected EV can act as validator".into()));
    }
    let max_age = stakes.iter().map(|s| s.battery_age).fold(0.0_f64, f64::max);
    let scores: Vec<f64> = stakes
        .iter()
        .map(|s| {
            let age = if max_age > 0.0 { s.battery_age / max_age } else { 0.0 };
            s.locked_energy.max(0.0) / (1.0 + age)
        })
        .collect();
    let total: f64 = scores.iter().sum();
    let u: f64 = rng.random();
    if !(total > 0.0) {
        let i = ((u * stakes.len() as f64) as usize).min(stakes.len() - 1);
        return Ok(stakes[i].ev_id);
    }
    let target = u * total;
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s > 0.0 {
            acc += s;
            last_positive = i;
            if target < acc {
                return Ok(stakes[i].ev_id);
            }
        }
    }
    Ok(stakes[last_positive].ev_id)
}

/// What the allocator needs to know about one EV for one slot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvSlotInput {
    pub ev_id: usize,
    pub connected: bool,
    /// kWh now.
    pub energy: f64,
    /// Allowed energy interval at the end of the slot.
    pub lower_next: f64,
    pub upper_next: f64,
    pub p_dis_max: f64,
    pub p_ch_max: f64,
    pub efficiency: f64,
}

impl EvSlotInput {
    /// Grid-side power interval respecting both the power limits and the
    /// next-slot energy bounds.
    pub fn power_box(&self, dt: f64) -> (f64, f64) {
        if !self.connected {
            return (0.0, 0.0);
        }
        let f = self.efficiency * dt;
        let lo = self.p_dis_max.max((self.lower_next - self.energy) / f);
        let hi = self.p_ch_max.min((self.upper_next - self.energy) / f);
        (lo.min(hi), hi)
    }

    pub fn next_energy(&self, power: f64, dt: f64) -> f64 {
        self.energy + self.efficiency * power * dt
    }
}

/// Headroom/footroom-proportional split of `p_eva`.
pub fn propose_powers(p_eva: f64, inputs: &[EvSlotInput]) -> Result<Vec<f64>> {
    if p_eva == 0.0 {
        return Ok(vec![0.0; inputs.len()]);
    }
    let weights: Vec<f64> = inputs
        .iter()
        .map(|i| {
            if !i.connected {
                0.0
            } else if p_eva > 0.0 {
                (i.upper_next - i.energy).max(0.0)
            } else {
                (i.energy - i.lower_next).max(0.0)
            }
        })
        .collect();
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Infeasible(format!(
            "no EV has {} room for {p_eva:.3} kW",
            if p_eva > 0.0 { "charging" } else { "discharging" }
        )));
    }
    Ok(weights.iter().map(|w| p_eva * w / total).collect())
}

pub fn safety_clamp(p: f64, input: &EvSlotInput, dt: f64) -> f64 {
    let (lo, hi) = input.power_box(dt);
    p.clamp(lo, hi)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Redistribution {
    pub powers: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
}

/// Push `p_eva - sum(powers)` onto EVs with room left in the residual's
/// direction, proportionally to that room.
pub fn redistribute_residual(
    p_eva: f64,
    powers: &[f64],
    inputs: &[EvSlotInput],
    dt: f64,
    cfg: &AllocationConfig,
) -> Redistribution {
    let boxes: Vec<(f64, f64)> = inputs.iter().map(|i| i.power_box(dt)).collect();
    let mut p = powers.to_vec();
    let mut iterations = 0;
    loop {
        let residual = p_eva - p.iter().sum::<f64>();
        if residual.abs() < cfg.balance_tolerance || iterations >= cfg.max_iterations {
            return Redistribution { powers: p, residual, iterations };
        }
        let room: Vec<f64> = p
            .iter()
            .zip(&boxes)
            .map(|(v, (lo, hi))| if residual > 0.0 { (hi - v).max(0.0) } else { (v - lo).max(0.0) })
            .collect();
        let total: f64 = room.iter().sum();
        if !(total > 0.0) {
            return Redistribution { powers: p, residual, iterations };
        }
        iterations += 1;
        let share = (residual.abs() / total).min(1.0) * residual.signum();
        for ((v, r), (lo, hi)) in p.iter_mut().zip(&room).zip(&boxes) {
            *v = (*v + share * r).clamp(*lo, *hi);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationProposal {
    pub slot: usize,
    pub target_kw: f64,
    pub proposed_kw: Vec<f64>,
    pub final_kw: Vec<f64>,
    /// Target minus delivered power.
    pub residual_kw: f64,
    /// `None` when no EV is connected.
    pub validator: Option<usize>,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    PowerLimit { ev_id: usize, power: f64, min: f64, max: f64 },
    EnergyBound { ev_id: usize, energy: f64, min: f64, max: f64 },
    Balance { target: f64, delivered: f64, residual: f64 },
    Shortfall { residual: f64 },
}

/// Re-check a proposal against every per-EV box and the power balance.
pub fn validate_proposal(
    proposal: &AllocationProposal,
    inputs: &[EvSlotInput],
    dt: f64,
    tolerance: f64,
) -> (bool, Vec<Violation>) {
    const SLACK: f64 = 1e-9;
    let mut v = Vec::new();
    if proposal.final_kw.len() != inputs.len() {
        v.push(Violation::Balance {
            target: proposal.target_kw,
            delivered: f64::NAN,
            residual: proposal.residual_kw,
        });
        return (false, v);
    }
    for (p, i) in proposal.final_kw.iter().zip(inputs) {
        let (min, max) = if i.connected { (i.p_dis_max, i.p_ch_max) } else { (0.0, 0.0) };
        if *p < min - SLACK || *p > max + SLACK || !p.is_finite() {
            v.push(Violation::PowerLimit { ev_id: i.ev_id, power: *p, min, max });
        }
        let e = i.next_energy(*p, dt);
        let scale = SLACK * (1.0 + i.upper_next.abs());
        if i.connected && (e < i.lower_next - scale || e > i.upper_next + scale) {
            v.push(Violation::EnergyBound { ev_id: i.ev_id, energy: e, min: i.lower_next, max: i.upper_next });
        }
    }
    let delivered: f64 = proposal.final_kw.iter().sum();
    if (proposal.target_kw - delivered - proposal.residual_kw).abs() >= tolerance {
        v.push(Violation::Balance {
            target: proposal.target_kw,
            delivered,
            residual: proposal.residual_kw,
        });
    }
    if proposal.residual_kw.abs() >= tolerance {
        v.push(Violation::Shortfall { residual: proposal.residual_kw });
    }
    (v.is_empty(), v)
}

/// Full pipeline for one slot.
pub fn allocate(
    slot: usize,
    p_eva: f64,
    inputs: &[EvSlotInput],
    stakes: &[StakeRecord],
    rng: &mut ChaCha8Rng,
    cfg: &AllocationConfig,
    dt: f64,
) -> Result<AllocationProposal> {
    let validator = if stakes.is_empty() {
        None
    } else {
        Some(select_validator(stakes, rng)?)
    };
    let proposed = propose_powers(p_eva, inputs)?;
    let clamped: Vec<f64> = proposed.iter().zip(inputs).map(|(p, i)| safety_clamp(*p, i, dt)).collect();
    let r = redistribute_residual(p_eva, &clamped, inputs, dt, cfg);
    let mut proposal = AllocationProposal {
        slot,
        target_kw: p_eva,
        proposed_kw: proposed,
        final_kw: r.powers,
        residual_kw: r.residual,
        validator,
        accepted: false,
    };
    proposal.accepted = validate_proposal(&proposal, inputs, dt, cfg.balance_tolerance).0;
    Ok(proposal)
}

/// Stakes of the EVs connected in a slot.
pub fn stakes_for(inputs: &[EvSlotInput], ages: &[f64], cfg: &AllocationConfig) -> Vec<StakeRecord> {
    inputs
        .iter()
        .zip(ages)
        .filter(|(i, _)| i.connected)
        .map(|(i, age)| StakeRecord {
            ev_id: i.ev_id,
            locked_energy: cfg.lock_fraction * i.energy.max(0.0),
            battery_age: *age,
        })
        .collect()
}

/// An EV leaving before its planned departure; energy planned from `slot`
/// onwards is not delivered.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EarlyDeparture {
    pub ev_index: usize,
    pub slot: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub ev_id: usize,
    pub charging_cost: f64,
    pub degradation_cost: f64,
    pub deviation_penalty: f64,
}

impl LedgerEntry {
    pub fn total(&self) -> f64 {
        self.charging_cost + self.degradation_cost + self.deviation_penalty
    }
}

/// Per-EV settlement of one day.
///
/// `soh_before`/`soh_after` are percent, one per EV in allocation order.
#[allow(clippy::too_many_arguments)]
pub fn settle_rewards(
    day: &[AllocationProposal],
    ev_ids: &[usize],
    tariffs: &[f64],
    capacities_kwh: &[f64],
    soh_before: &[f64],
    soh_after: &[f64],
    early: &[EarlyDeparture],
    cost: &DegradationCostParams,
    cfg: &AllocationConfig,
    dt: f64,
) -> Vec<LedgerEntry> {
    let n = ev_ids.len();
    let mut out: Vec<LedgerEntry> = (0..n)
        .map(|i| LedgerEntry {
            ev_id: ev_ids[i],
            charging_cost: 0.0,
            degradation_cost: degradation_cost(soh_after[i] / 100.0, capacities_kwh[i], cost)
                - degradation_cost(soh_before[i] / 100.0, capacities_kwh[i], cost),
            deviation_penalty: 0.0,
        })
        .collect();
    for (t, prop) in day.iter().enumerate() {
        for (i, p) in prop.final_kw.iter().enumerate() {
            out[i].charging_cost += tariffs[t] * p * dt;
        }
    }
    for e in early {
        let missed: f64 = day.iter().skip(e.slot).map(|prop| prop.final_kw[e.ev_index].abs() * dt).sum();
        out[e.ev_index].deviation_penalty += cfg.deviation_penalty_rate * missed;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub slot: usize,
    pub ev_id: usize,
    pub proposed_kw: f64,
    pub final_kw: f64,
    pub soc_after: f64,
}

pub fn write_trace_csv(path: &Path, rows: &[TraceRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    if rows.is_empty() {
        w.write_record(["slot", "ev_id", "proposed_kw", "final_kw", "soc_after"])?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn ev(id: usize, energy: f64, upper: f64) -> EvSlotInput {
        EvSlotInput {
            ev_id: id,
            connected: true,
            energy,
            lower_next: 4.8,
            upper_next: upper,
            p_dis_max: -6.0,
            p_ch_max: 6.0,
            efficiency: 1.0,
        }
    }

    #[test]
    fn proportional_split() {
        let two = [ev(0, 10.0, 16.0), ev(1, 10.0, 16.0)];
        assert_eq!(propose_powers(6.0, &two).unwrap(), vec![3.0, 3.0]);
        let uneven = [ev(0, 10.0, 19.0), ev(1, 10.0, 13.0)];
        let p = propose_powers(8.0, &uneven).unwrap();
        assert!((p[0] - 6.0).abs() < 1e-12 && (p[1] - 2.0).abs() < 1e-12);
        let full = [ev(0, 21.6, 21.6), ev(1, 10.0, 16.0)];
        assert_eq!(propose_powers(4.0, &full).unwrap()[0], 0.0);
        let none = [ev(0, 21.6, 21.6)];
        assert!(propose_powers(1.0, &none).is_err());
    }

    #[test]
    fn clamp_cases() {
        let i = ev(0, 10.0, 21.6);
        assert_eq!(safety_clamp(4.0, &i, 1.0), 4.0);
        assert_eq!(safety_clamp(9.0, &i, 1.0), 6.0);
        assert_eq!(safety_clamp(-9.0, &i, 1.0), -5.2);
        let tight = ev(0, 10.0, 12.0);
        assert_eq!(safety_clamp(3.0, &tight, 1.0), 2.0);
    }

    #[test]
    fn shortfall_is_flagged() {
        let mut inputs = [ev(0, 10.0, 21.6), ev(1, 10.0, 21.6), ev(2, 10.0, 21.6)];
        inputs[0].p_ch_max = 4.0;
        let cfg = AllocationConfig::default();
        let clamped: Vec<f64> = [6.0, 6.0, 6.0]
            .iter()
            .zip(&inputs)
            .map(|(p, i)| safety_clamp(*p, i, 1.0))
            .collect();
        let r = redistribute_residual(18.0, &clamped, &inputs, 1.0, &cfg);
        assert_eq!(r.powers, vec![4.0, 6.0, 6.0]);
        assert!((r.residual - 2.0).abs() < 1e-12);
        let r0 = redistribute_residual(12.0, &[4.0, 4.0, 4.0], &inputs, 1.0, &cfg);
        assert_eq!(r0.iterations, 0);
    }

    #[test]
    fn validator_selection() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let one = [StakeRecord { ev_id: 7, locked_energy: 1.0, battery_age: 3.0 }];
        assert_eq!(select_validator(&one, &mut rng).unwrap(), 7);
        let two = [
            StakeRecord { ev_id: 1, locked_energy: 10.0, battery_age: 5.0 },
            StakeRecord { ev_id: 2, locked_energy: 0.0, battery_age: 5.0 },
        ];
        for _ in 0..1000 {
            assert_eq!(select_validator(&two, &mut rng).unwrap(), 1);
        }
        let zero = [
            StakeRecord { ev_id: 1, locked_energy: 0.0, battery_age: 0.0 },
            StakeRecord { ev_id: 2, locked_energy: 0.0, battery_age: 0.0 },
        ];
        let picks: usize = (0..1000).filter(|_| select_validator(&zero, &mut rng).unwrap() == 1).count();
        assert!((400..600).contains(&picks));
    }

    #[test]
    fn validation_catches_corruption() {
        let inputs = [ev(0, 10.0, 21.6), ev(1, 10.0, 21.6)];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = AllocationConfig::default();
        let stakes = stakes_for(&inputs, &[1.0, 1.0], &cfg);
        let good = allocate(0, 8.0, &inputs, &stakes, &mut rng, &cfg, 1.0).unwrap();
        assert!(good.accepted);
        assert!(validate_proposal(&good, &inputs, 1.0, 1e-6).0);

        let mut bad = good.clone();
        bad.final_kw[1] = 10.0;
        bad.residual_kw = bad.target_kw - bad.final_kw.iter().sum::<f64>();
        let (ok, v) = validate_proposal(&bad, &inputs, 1.0, 1e-6);
        assert!(!ok);
        assert!(v.iter().any(|x| matches!(x, Violation::PowerLimit { ev_id: 1, .. })));

        let mut miss = good.clone();
        miss.final_kw[0] -= 0.5;
        let (ok, v) = validate_proposal(&miss, &inputs, 1.0, 1e-6);
        assert!(!ok);
        assert!(v.iter().any(|x| matches!(x, Violation::Balance { .. })));
    }

    #[test]
    fn settlement() {
        let day: Vec<AllocationProposal> = (0..8)
            .map(|t| AllocationProposal {
                slot: t,
                target_kw: 2.0,
                proposed_kw: vec![2.0],
                final_kw: vec![2.0],
                residual_kw: 0.0,
                validator: Some(0),
                accepted: true,
            })
            .collect();
        let cost = DegradationCostParams::default();
        let cfg = AllocationConfig::default();
        let zero = settle_rewards(&day, &[0], &[0.0; 8], &[24.0], &[100.0], &[99.0], &[], &cost, &cfg, 1.0);
        assert!((zero[0].total() - 360.0).abs() < 1e-9);
        let early = [EarlyDeparture { ev_index: 0, slot: 5 }];
        let l = settle_rewards(&day, &[0], &[0.1; 8], &[24.0], &[99.0], &[99.0], &early, &cost, &cfg, 1.0);
        assert!((l[0].deviation_penalty - 0.1 * 3.0 * 2.0).abs() < 1e-12);
        assert!((l[0].charging_cost - 1.6).abs() < 1e-12);
    }
}
