//! Reference dispatch strategies.
//!
//! BL1 charges every EV flat out on arrival. BL2 reshapes BL1's charging to
//! minimise load variance without discharging, BL3 does the same with
//! discharging allowed and BL4 minimises charging cost. BL2 to BL4 run a
//! per-EV exchange descent (move energy between two slots, or shift one
//! slot while the departure energy is free) warm-started from the previous
//! baseline, so each one is never worse than its start on its objective.

use clap::ValueEnum;
use serde::{Deserialize, Serialize};

use crate::env::{EnvConfig, GridProfiles, HOURS};
use crate::error::Result;
use crate::fleet::{EvBounds, EvSession, Horizon};
use crate::schedule::{trim_overshoot, DaySchedule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Baseline {
    Bl1,
    Bl2,
    Bl3,
    Bl4,
}

impl Baseline {
    pub const ALL: [Baseline; 4] = [Baseline::Bl1, Baseline::Bl2, Baseline::Bl3, Baseline::Bl4];

    pub fn name(self) -> &'static str {
        match self {
            Baseline::Bl1 => "bl1",
            Baseline::Bl2 => "bl2",
            Baseline::Bl3 => "bl3",
            Baseline::Bl4 => "bl4",
        }
    }
}

const MAX_SWEEPS: usize = 400;
const MOVE_EPS: f64 = 1e-9;

/// Everything a planner needs: per-EV bounds and the fixed part of the load.
#[derive(Debug, Clone)]
pub struct PlanningProblem {
    pub horizon: Horizon,
    pub bounds: Vec<EvBounds>,
    /// Load without EVs per slot.
    pub residual_kw: Vec<f64>,
    /// Load in the hours of the variance window before the horizon.
    pub pre_window_kw: Vec<f64>,
    pub tariff: Vec<f64>,
    pub grid_min_kw: f64,
    pub grid_max_kw: f64,
}

impl PlanningProblem {
    pub fn new(sessions: &[EvSession], profiles: &GridProfiles, cfg: &EnvConfig) -> Result<Self> {
        let h = cfg.horizon;
        let bounds = sessions.iter().map(|s| EvBounds::new(s, &h)).collect::<Result<Vec<_>>>()?;
        let pre = HOURS.saturating_sub(h.slots);
        let pre_window_kw = (0..pre)
            .map(|j| profiles.residual_load((h.start_hour + 24 - (pre - j) as u32) % 24))
            .collect();
        Ok(Self {
            horizon: h,
            bounds,
            residual_kw: (0..h.slots).map(|t| profiles.residual_load(h.hour_of(t))).collect(),
            pre_window_kw,
            tariff: (0..h.slots).map(|t| profiles.tariff[h.hour_of(t) as usize]).collect(),
            grid_min_kw: cfg.grid_min_kw,
            grid_max_kw: cfg.grid_max_kw(),
        })
    }

    fn slots(&self) -> usize {
        self.horizon.slots
    }
}

/// Per-EV powers and the energies they imply.
#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    pub powers: Vec<Vec<f64>>,
    pub energies: Vec<Vec<f64>>,
}

impl Plan {
    pub fn load(&self, pb: &PlanningProblem) -> Vec<f64> {
        (0..pb.slots())
            .map(|t| pb.residual_kw[t] + self.powers.iter().map(|p| p[t]).sum::<f64>())
            .collect()
    }

    pub fn variance(&self, pb: &PlanningProblem) -> f64 {
        let mut w = pb.pre_window_kw.clone();
        w.extend(self.load(pb));
        let n = w.len() as f64;
        let mean = w.iter().sum::<f64>() / n;
        w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n
    }

    pub fn cost(&self, pb: &PlanningProblem) -> f64 {
        let dt = pb.horizon.slot_hours;
        (0..pb.slots())
            .map(|t| pb.tariff[t] * self.powers.iter().map(|p| p[t]).sum::<f64>() * dt)
            .sum()
    }
}

/// BL1 power for one EV at one slot: charge at the limit until the SOC
/// ceiling.
pub fn bl1_uncontrolled(b: &EvBounds, energy: f64, slot: usize) -> f64 {
    if !b.is_connected(slot) {
        return 0.0;
    }
    let room = (b.ceiling - energy) / (b.efficiency * b.slot_hours);
    b.p_ch_max.min(room).max(0.0)
}

/// Forward simulation of BL1. When the transformer limit binds, every EV's
/// share is scaled by the same factor.
pub fn plan_bl1(pb: &PlanningProblem) -> Plan {
    let k = pb.slots();
    let dt = pb.horizon.slot_hours;
    let n = pb.bounds.len();
    let mut energies: Vec<Vec<f64>> = pb.bounds.iter().map(|b| vec![b.e_lower[0]; k + 1]).collect();
    let mut powers = vec![vec![0.0; k]; n];
    for t in 0..k {
        let want: Vec<f64> = pb.bounds.iter().zip(&energies).map(|(b, e)| bl1_uncontrolled(b, e[t], t)).collect();
        let total: f64 = want.iter().sum();
        let cap = (pb.grid_max_kw - pb.residual_kw[t]).max(0.0);
        let scale = if total > cap { cap / total } else { 1.0 };
        for i in 0..n {
            powers[i][t] = want[i] * scale;
            let b = &pb.bounds[i];
            energies[i][t + 1] = energies[i][t] + b.efficiency * powers[i][t] * dt;
        }
    }
    Plan { powers, energies }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Objective {
    Variance,
    Cost,
}

struct Descent<'a> {
    pb: &'a PlanningProblem,
    plan: Plan,
    load: Vec<f64>,
    /// Sum over the whole variance window.
    load_sum: f64,
    window: usize,
    signed: bool,
    free_final: bool,
    lower: Vec<Vec<f64>>,
    upper: Vec<Vec<f64>>,
}

impl<'a> Descent<'a> {
    fn new(pb: &'a PlanningProblem, plan: Plan, signed: bool, free_final: bool) -> Self {
        let load = plan.load(pb);
        let load_sum = load.iter().sum::<f64>() + pb.pre_window_kw.iter().sum::<f64>();
        let window = load.len() + pb.pre_window_kw.len();
        // Starting plans that already stray outside the reachable sets keep
        // their own trajectory as the admissible edge.
        let lower = pb
            .bounds
            .iter()
            .zip(&plan.energies)
            .map(|(b, e)| b.e_lower.iter().zip(e).map(|(l, x)| l.min(*x)).collect())
            .collect();
        let upper = pb
            .bounds
            .iter()
            .zip(&plan.energies)
            .map(|(b, e)| b.e_upper.iter().zip(e).map(|(u, x)| u.max(*x)).collect())
            .collect();
        Self { pb, plan, load, load_sum, window, signed, free_final, lower, upper }
    }

    fn power_range(&self, n: usize, t: usize) -> (f64, f64) {
        let b = &self.pb.bounds[n];
        if !b.is_connected(t) {
            (0.0, 0.0)
        } else if self.signed {
            (b.p_dis_max, b.p_ch_max)
        } else {
            (0.0, b.p_ch_max)
        }
    }

    fn rate(&self, n: usize) -> f64 {
        self.pb.bounds[n].efficiency * self.pb.horizon.slot_hours
    }

    /// Largest `d >= 0` such that adding `sign * d * rate` to the energies at
    /// points `from..=to` stays inside the bounds.
    fn energy_room(&self, n: usize, from: usize, to: usize, sign: f64) -> f64 {
        let e = &self.plan.energies[n];
        let room = (from..=to)
            .map(|k| if sign > 0.0 { self.upper[n][k] - e[k] } else { e[k] - self.lower[n][k] })
            .fold(f64::INFINITY, f64::min);
        room.max(0.0) / self.rate(n)
    }

    fn apply(&mut self, n: usize, t: usize, d: f64) {
        let k = self.pb.slots();
        let r = self.rate(n);
        self.plan.powers[n][t] += d;
        for e in &mut self.plan.energies[n][t + 1..=k] {
            *e += r * d;
        }
        self.load[t] += d;
        self.load_sum += d;
    }

    /// Move up to the optimal amount of power from slot `a` to slot `b`.
    fn pair_move(&mut self, n: usize, a: usize, b: usize, obj: Objective) -> f64 {
        let (la, lb) = (self.load[a], self.load[b]);
        let want = match obj {
            Objective::Variance if la > lb => 0.5 * (la - lb),
            Objective::Cost if self.pb.tariff[a] > self.pb.tariff[b] => f64::INFINITY,
            _ => return 0.0,
        };
        let (lo_a, _) = self.power_range(n, a);
        let (_, hi_b) = self.power_range(n, b);
        let p = &self.plan.powers[n];
        let mut d = want.min(p[a] - lo_a).min(hi_b - p[b]);
        d = d.min(self.pb.grid_max_kw - lb).min(la - self.pb.grid_min_kw);
        d = if a < b {
            d.min(self.energy_room(n, a + 1, b, -1.0))
        } else {
            d.min(self.energy_room(n, b + 1, a, 1.0))
        };
        if !(d > MOVE_EPS) {
            return 0.0;
        }
        let gain = match obj {
            Objective::Variance => 2.0 * d * (la - lb - d) / self.window as f64,
            Objective::Cost => d * (self.pb.tariff[a] - self.pb.tariff[b]) * self.pb.horizon.slot_hours,
        };
        self.apply(n, a, -d);
        self.apply(n, b, d);
        gain
    }

    /// Change the power of one slot, which shifts the departure energy.
    fn single_move(&mut self, n: usize, t: usize, obj: Objective) -> f64 {
        let k = self.pb.slots();
        let w = self.window as f64;
        let lt = self.load[t];
        let want = match obj {
            Objective::Variance => (self.load_sum / w - lt) * w / (w - 1.0),
            Objective::Cost if self.pb.tariff[t] > 0.0 => f64::NEG_INFINITY,
            Objective::Cost => return 0.0,
        };
        let (lo, hi) = self.power_range(n, t);
        let p = self.plan.powers[n][t];
        let d = if want > 0.0 {
            want.min(hi - p).min(self.pb.grid_max_kw - lt).min(self.energy_room(n, t + 1, k, 1.0))
        } else {
            -(-want).min(p - lo).min(lt - self.pb.grid_min_kw).min(self.energy_room(n, t + 1, k, -1.0))
        };
        if !(d.abs() > MOVE_EPS) {
            return 0.0;
        }
        let before = match obj {
            Objective::Variance => self.window_variance(),
            Objective::Cost => 0.0,
        };
        self.apply(n, t, d);
        match obj {
            Objective::Variance => before - self.window_variance(),
            Objective::Cost => -d * self.pb.tariff[t] * self.pb.horizon.slot_hours,
        }
    }

    fn window_variance(&self) -> f64 {
        let w = self.window as f64;
        let mean = self.load_sum / w;
        let sq: f64 = self.load.iter().chain(&self.pb.pre_window_kw).map(|x| (x - mean).powi(2)).sum();
        sq / w
    }

    fn run(mut self, obj: Objective) -> Plan {
        let k = self.pb.slots();
        let n_ev = self.pb.bounds.len();
        let scale = 1.0 + self.load.iter().map(|x| x.abs()).fold(0.0, f64::max);
        let tol = match obj {
            Objective::Variance => 1e-13 * scale * scale,
            Objective::Cost => 1e-12 * scale,
        };
        for _ in 0..MAX_SWEEPS {
            let mut gain = 0.0;
            for n in 0..n_ev {
                let b = &self.pb.bounds[n];
                let slots: Vec<usize> = (0..k).filter(|t| b.is_connected(*t)).collect();
                for &a in &slots {
                    for &c in &slots {
                        if a != c {
                            gain += self.pair_move(n, a, c, obj);
                        }
                    }
                }
                if self.free_final {
                    for &t in &slots {
                        gain += self.single_move(n, t, obj);
                    }
                }
            }
            if gain <= tol {
                break;
            }
        }
        self.plan
    }
}

/// Charge-only, variance-minimising reshaping of BL1 with the same
/// per-EV delivered energy.
pub fn plan_bl2(pb: &PlanningProblem, bl1: &Plan) -> Plan {
    Descent::new(pb, bl1.clone(), false, false).run(Objective::Variance)
}

/// Variance minimisation with discharging and a free departure energy
/// inside the band.
pub fn plan_bl3(pb: &PlanningProblem, bl2: &Plan) -> Plan {
    Descent::new(pb, bl2.clone(), true, true).run(Objective::Variance)
}

/// Charging-cost minimisation over the same set as BL3, started from the
/// cheapest of the other plans.
pub fn plan_bl4(pb: &PlanningProblem, others: &[&Plan]) -> Plan {
    let start = others
        .iter()
        .min_by(|a, b| a.cost(pb).total_cmp(&b.cost(pb)))
        .expect("at least one start plan");
    Descent::new(pb, (*start).clone(), true, true).run(Objective::Cost)
}

/// All four plans, in order.
pub fn plan_all(pb: &PlanningProblem) -> [Plan; 4] {
    let bl1 = plan_bl1(pb);
    let bl2 = plan_bl2(pb, &bl1);
    let bl3 = plan_bl3(pb, &bl2);
    let bl4 = plan_bl4(pb, &[&bl1, &bl2, &bl3]);
    [bl1, bl2, bl3, bl4]
}

pub fn plan(pb: &PlanningProblem, which: Baseline) -> Plan {
    let [bl1, bl2, bl3, bl4] = match which {
        Baseline::Bl1 => return plan_bl1(pb),
        _ => plan_all(pb),
    };
    match which {
        Baseline::Bl1 => bl1,
        Baseline::Bl2 => bl2,
        Baseline::Bl3 => bl3,
        Baseline::Bl4 => bl4,
    }
}

pub fn baseline_schedule(
    which: Baseline,
    sessions: &[EvSession],
    profiles: &GridProfiles,
    cfg: &EnvConfig,
) -> Result<DaySchedule> {
    let pb = PlanningProblem::new(sessions, profiles, cfg)?;
    let mut powers = plan(&pb, which).powers;
    let mut column = vec![0.0; powers.len()];
    for t in 0..pb.slots() {
        column.iter_mut().zip(&powers).for_each(|(c, p)| *c = p[t]);
        trim_overshoot(&mut column, pb.residual_kw[t], pb.grid_max_kw);
        powers.iter_mut().zip(&column).for_each(|(p, c)| p[t] = *c);
    }
    Ok(DaySchedule::from_plan(which.name(), sessions, profiles, &cfg.horizon, powers))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fleet::EvSpec;

    fn profiles(base: &[f64], tariff: &[f64]) -> GridProfiles {
        GridProfiles {
            baseload_kw: base.to_vec(),
            pv_kw: vec![0.0; 24],
            wind_kw: vec![0.0; 24],
            tariff: tariff.to_vec(),
        }
    }

    fn unit_spec() -> EvSpec {
        EvSpec { efficiency: 1.0, ..EvSpec::default() }
    }

    #[test]
    fn bl1_headroom() {
        let cfg = EnvConfig::default();
        let s = EvSession::new(0, 15, 10, 0.9 - 3.0 / 24.0, unit_spec());
        let p = profiles(&[100.0; 24], &[0.1; 24]);
        let pb = PlanningProblem::new(&[s], &p, &cfg).unwrap();
        let plan = plan_bl1(&pb);
        assert!((plan.powers[0][0] - 3.0).abs() < 1e-12);
        assert_eq!(plan.powers[0][1], 0.0);
    }

    #[test]
    fn bl2_flat_and_two_level() {
        let cfg = EnvConfig::default();
        let s = EvSession::new(0, 15, 10, 0.5, unit_spec());
        let flat = profiles(&[100.0; 24], &[0.1; 24]);
        let pb = PlanningProblem::new(std::slice::from_ref(&s), &flat, &cfg).unwrap();
        let [bl1, bl2, ..] = plan_all(&pb);
        let total: f64 = bl1.powers[0].iter().sum();
        // spread across all 20 slots
        for p in &bl2.powers[0] {
            assert!((p - total / 20.0).abs() < 1e-3, "{:?}", bl2.powers[0]);
        }
        // low load from midnight to 6
        let base: Vec<f64> = (0..24).map(|h| if h < 6 { 50.0 } else { 100.0 }).collect();
        let pb = PlanningProblem::new(&[s], &profiles(&base, &[0.1; 24]), &cfg).unwrap();
        let [_, bl2, ..] = plan_all(&pb);
        let h = cfg.horizon;
        for (t, p) in bl2.powers[0].iter().enumerate() {
            if h.hour_of(t) >= 6 {
                assert!(p.abs() < 1e-6, "slot {t} has {p}");
            }
        }
    }

    #[test]
    fn bl4_two_tier() {
        let cfg = EnvConfig::default();
        let s = EvSession::new(0, 15, 10, 0.5, unit_spec());
        let tariff: Vec<f64> = (0..24).map(|h| if (1..5).contains(&h) { 0.05 } else { 0.3 }).collect();
        let pb = PlanningProblem::new(&[s], &profiles(&[100.0; 24], &tariff), &cfg).unwrap();
        let [bl1, bl2, bl3, bl4] = plan_all(&pb);
        for p in [&bl1, &bl2, &bl3] {
            assert!(bl4.cost(&pb) <= p.cost(&pb) + 1e-9);
        }
        let h = cfg.horizon;
        let cheap: f64 = (0..h.slots).filter(|t| (1..5).contains(&h.hour_of(*t))).map(|t| bl4.powers[0][t]).sum();
        assert!(cheap > 0.0);
        // discharge to the floor right away, refill to the band minimum in the cheap tier
        let hand = -7.2 * 0.3 + 14.4 * 0.05;
        assert!(bl4.cost(&pb) <= hand + 1e-9, "{} vs {hand}", bl4.cost(&pb));
    }

    #[test]
    fn pinned_envelope() {
        let cfg = EnvConfig::default();
        // arrives at 0.8 with one connected slot: only small moves exist
        let s = EvSession::new(0, 10, 10, 0.85, unit_spec());
        let pb = PlanningProblem::new(&[s], &profiles(&[100.0; 24], &[0.1; 24]), &cfg).unwrap();
        for plan in plan_all(&pb) {
            let e = plan.energies[0][20];
            assert!((0.8 * 24.0 - 1e-9..=0.9 * 24.0 + 1e-9).contains(&e));
        }
    }
}
