//! Evaluation indices, a year of battery ageing, and the report bundle.

use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::battery::{
    degradation_cost, pack_energy_kwh, peak_power, segment_cycles, BatteryPackState, CellSpec, DegradationCostParams,
    PackTopology, SohModelParams,
};
use crate::env::GridProfiles;
use crate::error::{Error, Result};
use crate::fleet::EvSession;
use crate::schedule::DaySchedule;

/// SOH over a simulated year.
#[derive(Debug, Clone, PartialEq)]
pub struct YearTrace {
    /// Fleet-mean SOH (percent) before day 0 and after each day.
    pub daily_mean_soh: Vec<f64>,
    pub packs: Vec<BatteryPackState>,
}

impl YearTrace {
    pub fn final_soh(&self) -> Vec<f64> {
        self.packs.iter().map(|p| p.soh).collect()
    }
}

fn mean_soh(packs: &[BatteryPackState]) -> f64 {
    if packs.is_empty() {
        return f64::NAN;
    }
    packs.iter().map(|p| p.soh).sum::<f64>() / packs.len() as f64
}

/// Age one pack through a day of grid-side power and energy.
pub fn age_pack_for_day(
    pack: &mut BatteryPackState,
    rated_kwh: f64,
    energies: &[f64],
    power_kw: &[f64],
    cell: &CellSpec,
    params: &SohModelParams,
) -> Result<()> {
    let capacity = rated_kwh * pack.soh / 100.0;
    let soc: Vec<f64> = energies.iter().map(|e| (e / capacity).clamp(0.0, 1.0)).collect();
    for cycle in segment_cycles(&soc, power_kw, capacity, cell) {
        pack.age_with_cycle(cycle, params)?;
    }
    if let Some(last) = soc.last() {
        pack.soc = *last;
    }
    Ok(())
}

/// Run `days` days. `day_schedule(day, packs)` returns the schedule to
/// apply on that day given the current pack states; its EV order must match
/// `packs`.
pub fn simulate_year<F>(
    mut packs: Vec<BatteryPackState>,
    rated_kwh: &[f64],
    days: usize,
    cell: &CellSpec,
    params: &SohModelParams,
    mut day_schedule: F,
) -> Result<YearTrace>
where
    F: FnMut(usize, &[BatteryPackState]) -> Result<DaySchedule>,
{
    if rated_kwh.len() != packs.len() {
        return Err(Error::Config("one rated capacity per pack required".into()));
    }
    let mut daily = Vec::with_capacity(days + 1);
    daily.push(mean_soh(&packs));
    for day in 0..days {
        let s = day_schedule(day, &packs)?;
        if s.energies.len() != packs.len() {
            return Err(Error::Config(format!(
                "day {day}: schedule covers {} EVs, fleet has {}",
                s.energies.len(),
                packs.len()
            )));
        }
        for (i, pack) in packs.iter_mut().enumerate() {
            age_pack_for_day(pack, rated_kwh[i], &s.energies[i], &s.per_ev_kw[i], cell, params)?;
        }
        daily.push(mean_soh(&packs));
    }
    Ok(YearTrace { daily_mean_soh: daily, packs })
}

/// Year of repeating one schedule.
pub fn simulate_year_repeating(
    sessions: &[EvSession],
    schedule: &DaySchedule,
    days: usize,
    cell: &CellSpec,
    params: &SohModelParams,
) -> Result<YearTrace> {
    let packs = sessions.iter().map(|s| s.pack.clone()).collect();
    let rated: Vec<f64> = sessions.iter().map(|s| s.spec.capacity_kwh).collect();
    simulate_year(packs, &rated, days, cell, params, |_, _| Ok(schedule.clone()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EvaluationIndices {
    /// Fleet-mean SOH after the year, percent.
    pub soh_year_end: f64,
    pub load_variance: f64,
    pub total_cost: f64,
    pub charging_cost: f64,
    pub battery_cost: f64,
}

/// Daily battery cost: each EV's degradation cost at its year-end SOH,
/// spread over the days simulated.
pub fn battery_cost(final_soh: &[f64], rated_kwh: &[f64], days: usize, params: &DegradationCostParams) -> f64 {
    let total: f64 = final_soh
        .iter()
        .zip(rated_kwh)
        .map(|(soh, q)| degradation_cost(soh / 100.0, *q, params))
        .sum();
    total / days.max(1) as f64
}

pub fn evaluation_indices(
    schedule: &DaySchedule,
    profiles: &GridProfiles,
    year: &YearTrace,
    rated_kwh: &[f64],
    cost: &DegradationCostParams,
) -> EvaluationIndices {
    let days = year.daily_mean_soh.len().saturating_sub(1);
    let charging_cost = schedule.charging_cost(profiles);
    let battery_cost = battery_cost(&year.final_soh(), rated_kwh, days, cost);
    EvaluationIndices {
        soh_year_end: *year.daily_mean_soh.last().unwrap_or(&f64::NAN),
        load_variance: schedule.load_variance(profiles),
        total_cost: charging_cost + battery_cost,
        charging_cost,
        battery_cost,
    }
}

/// Linear normalization onto `[0, 1]` with 1 for the best value. If every
/// value is the same the index carries no ranking and all map to 1.
pub fn normalize_index(values: &[f64], larger_is_better: bool) -> Vec<f64> {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let (best, worst) = if larger_is_better { (max, min) } else { (min, max) };
    if best == worst {
        return vec![1.0; values.len()];
    }
    // `+ 0.0` turns -0.0 into 0.0.
    values.iter().map(|v| (v - worst) / (best - worst) + 0.0).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NormalizedIndices {
    pub soh: f64,
    pub load_variance: f64,
    pub cost: f64,
}

/// Normalize SOH (higher is better), load variance and total cost (lower is
/// better) across strategies.
pub fn normalize_indices(table: &[EvaluationIndices]) -> Vec<NormalizedIndices> {
    let col = |f: fn(&EvaluationIndices) -> f64| table.iter().map(f).collect::<Vec<_>>();
    let soh = normalize_index(&col(|i| i.soh_year_end), true);
    let lv = normalize_index(&col(|i| i.load_variance), false);
    let cost = normalize_index(&col(|i| i.total_cost), false);
    (0..table.len())
        .map(|i| NormalizedIndices { soh: soh[i], load_variance: lv[i], cost: cost[i] })
        .collect()
}

/// Everything one strategy contributes to a report.
#[derive(Debug, Clone)]
pub struct StrategyResult {
    pub schedule: DaySchedule,
    pub year: YearTrace,
    pub indices: EvaluationIndices,
    /// Allocation proposals accepted by the validator, when known.
    pub accepted_slots: Option<(usize, usize)>,
}

/// Inputs for the state-of-power series.
#[derive(Debug, Clone)]
pub struct SopSettings {
    pub cell: CellSpec,
    pub topology: PackTopology,
    pub horizon_h: f64,
}

#[derive(Debug, Clone)]
pub struct ReportInputs<'a> {
    pub seed: u64,
    pub profiles: &'a GridProfiles,
    pub sessions: &'a [EvSession],
    /// The first entry is the strategy detailed per EV.
    pub strategies: &'a [StrategyResult],
    pub sop: SopSettings,
    pub enrollment_incentive: f64,
}

pub const REPORT_FILES: [&str; 7] =
    ["load.csv", "soh_year.csv", "soc_dist.csv", "power_sop.csv", "indices.csv", "costs.csv", "summary.json"];

#[derive(Serialize)]
struct IndexRow<'a> {
    strategy: &'a str,
    soh_year_end: f64,
    load_variance: f64,
    total_cost: f64,
    charging_cost: f64,
    battery_cost: f64,
    norm_soh: f64,
    norm_load_variance: f64,
    norm_cost: f64,
}

#[derive(Serialize)]
struct CostRow<'a> {
    strategy: &'a str,
    charging_cost: f64,
    battery_cost: f64,
    total_cost: f64,
}

#[derive(Serialize)]
struct SocRow {
    point: usize,
    hour: u32,
    ev_id: usize,
    soc: f64,
}

#[derive(Serialize)]
struct SopRow {
    slot: usize,
    hour: u32,
    ev_id: usize,
    connected: bool,
    power_kw: f64,
    p_ch_limit_kw: f64,
    p_dis_limit_kw: f64,
}

#[derive(Serialize)]
struct StrategySummary<'a> {
    name: &'a str,
    indices: EvaluationIndices,
    normalized: NormalizedIndices,
    peak_grid_kw: f64,
    departure_eva_soc: f64,
    mean_departure_soc: f64,
    evs_in_departure_band: usize,
    accepted_slots: Option<usize>,
    total_slots: Option<usize>,
}

#[derive(Serialize)]
struct Summary<'a> {
    seed: u64,
    fleet_size: usize,
    slots: usize,
    start_hour: u32,
    enrollment_incentive: f64,
    strategies: Vec<StrategySummary<'a>>,
    files: Vec<&'static str>,
}

fn write_rows<T: Serialize>(path: &Path, header: &[&str], rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Departure SOC of each EV under `s`.
fn departure_socs(s: &DaySchedule, sessions: &[EvSession]) -> Vec<f64> {
    sessions
        .iter()
        .zip(&s.energies)
        .map(|(ev, e)| e[ev.departure_point(&s.horizon).min(s.horizon.slots)] / ev.capacity_kwh())
        .collect()
}

/// Write the report bundle into `dir` (created if missing).
pub fn emit_reports(dir: &Path, r: &ReportInputs) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let names: Vec<&str> = r.strategies.iter().map(|s| s.schedule.name.as_str()).collect();
    let slots = r.strategies.first().map_or(0, |s| s.schedule.horizon.slots);

    // Grid load per slot for every strategy.
    let mut header = vec!["slot", "hour", "residual_kw"];
    let load_cols: Vec<String> = names.iter().map(|n| format!("{n}_kw")).collect();
    header.extend(load_cols.iter().map(String::as_str));
    let rows = (0..slots).map(|t| {
        let h = r.strategies[0].schedule.horizon.hour_of(t);
        let mut row = vec![t.to_string(), h.to_string(), r.profiles.residual_load(h).to_string()];
        row.extend(r.strategies.iter().map(|s| s.schedule.grid_kw[t].to_string()));
        row
    });
    write_rows(&dir.join("load.csv"), &header, rows)?;

    // Mean SOH per day.
    let mut header = vec!["day"];
    header.extend(&names);
    let days = r.strategies.first().map_or(0, |s| s.year.daily_mean_soh.len());
    let rows = (0..days).map(|d| {
        let mut row = vec![d.to_string()];
        row.extend(r.strategies.iter().map(|s| s.year.daily_mean_soh[d].to_string()));
        row
    });
    write_rows(&dir.join("soh_year.csv"), &header, rows)?;

    // Per-EV SOC and state of power for the lead strategy.
    let (mut soc_rows, mut sop_rows) = (Vec::new(), Vec::new());
    if let Some(lead) = r.strategies.first() {
        let h = lead.schedule.horizon;
        let energy_ratio = pack_energy_kwh(&r.sop.cell, &r.sop.topology);
        for (i, ev) in r.sessions.iter().enumerate() {
            let cap = ev.capacity_kwh();
            for (k, e) in lead.schedule.energies[i].iter().enumerate() {
                soc_rows.push(SocRow { point: k, hour: (h.start_hour + k as u32) % 24, ev_id: ev.ev_id, soc: e / cap });
            }
            for t in 0..h.slots {
                let soc = (lead.schedule.energies[i][t] / cap).clamp(ev.spec.soc_floor, ev.spec.soc_ceiling);
                let state = BatteryPackState { soc, ..ev.pack.clone() };
                let sop = peak_power(&r.sop.cell, &r.sop.topology, &state, (ev.spec.soc_floor, ev.spec.soc_ceiling), r.sop.horizon_h)?;
                let scale = ev.spec.capacity_kwh / energy_ratio;
                sop_rows.push(SopRow {
                    slot: t,
                    hour: h.hour_of(t),
                    ev_id: ev.ev_id,
                    connected: ev.is_connected(&h, t),
                    power_kw: lead.schedule.per_ev_kw[i][t],
                    p_ch_limit_kw: sop.p_ch_kw * scale,
                    p_dis_limit_kw: -sop.p_dis_kw * scale,
                });
            }
        }
    }
    write_rows(&dir.join("soc_dist.csv"), &["point", "hour", "ev_id", "soc"], soc_rows)?;
    write_rows(
        &dir.join("power_sop.csv"),
        &["slot", "hour", "ev_id", "connected", "power_kw", "p_ch_limit_kw", "p_dis_limit_kw"],
        sop_rows,
    )?;

    let table: Vec<EvaluationIndices> = r.strategies.iter().map(|s| s.indices).collect();
    let norm = normalize_indices(&table);
    write_rows(
        &dir.join("indices.csv"),
        &[
            "strategy",
            "soh_year_end",
            "load_variance",
            "total_cost",
            "charging_cost",
            "battery_cost",
            "norm_soh",
            "norm_load_variance",
            "norm_cost",
        ],
        r.strategies.iter().zip(&norm).map(|(s, n)| IndexRow {
            strategy: &s.schedule.name,
            soh_year_end: s.indices.soh_year_end,
            load_variance: s.indices.load_variance,
            total_cost: s.indices.total_cost,
            charging_cost: s.indices.charging_cost,
            battery_cost: s.indices.battery_cost,
            norm_soh: n.soh,
            norm_load_variance: n.load_variance,
            norm_cost: n.cost,
        }),
    )?;
    write_rows(
        &dir.join("costs.csv"),
        &["strategy", "charging_cost", "battery_cost", "total_cost"],
        r.strategies.iter().map(|s| CostRow {
            strategy: &s.schedule.name,
            charging_cost: s.indices.charging_cost,
            battery_cost: s.indices.battery_cost,
            total_cost: s.indices.total_cost,
        }),
    )?;

    let strategies = r
        .strategies
        .iter()
        .zip(&norm)
        .map(|(s, n)| {
            let dep = departure_socs(&s.schedule, r.sessions);
            let cap: f64 = r.sessions.iter().map(|e| e.capacity_kwh()).sum();
            let dep_energy: f64 = dep.iter().zip(r.sessions).map(|(soc, e)| soc * e.capacity_kwh()).sum();
            let in_band = dep
                .iter()
                .zip(r.sessions)
                .filter(|(soc, e)| **soc >= e.spec.departure_soc_min - 1e-9 && **soc <= e.spec.departure_soc_max + 1e-9)
                .count();
            StrategySummary {
                name: &s.schedule.name,
                indices: s.indices,
                normalized: *n,
                peak_grid_kw: s.schedule.grid_kw.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                departure_eva_soc: dep_energy / cap,
                mean_departure_soc: dep.iter().sum::<f64>() / dep.len() as f64,
                evs_in_departure_band: in_band,
                accepted_slots: s.accepted_slots.map(|a| a.0),
                total_slots: s.accepted_slots.map(|a| a.1),
            }
        })
        .collect();
    let summary = Summary {
        seed: r.seed,
        fleet_size: r.sessions.len(),
        slots,
        start_hour: r.strategies.first().map_or(0, |s| s.schedule.horizon.start_hour),
        enrollment_incentive: r.enrollment_incentive,
        strategies,
        files: REPORT_FILES.to_vec(),
    };
    let path = dir.join("summary.json");
    fs::write(&path, serde_json::to_string_pretty(&summary)? + "\n").map_err(|e| Error::io(&path, e))
}
