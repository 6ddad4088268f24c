//! Battery conditioning models: capacity fade, equivalent-full-cycle
//! accounting, state-of-power limits and degradation cost.
//!
//! Currents are per parallel branch of the pack (one series string of cells),
//! voltages are per cell. Pack-level power multiplies by the series count and
//! the number of branches.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Open-circuit voltage as a piecewise-linear function of SOC.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct OcvCurve(Vec<(f64, f64)>);

impl OcvCurve {
    pub fn new(knots: Vec<(f64, f64)>) -> Result<Self> {
        if knots.len() < 2 {
            return Err(Error::Config("OCV table needs at least two knots".into()));
        }
        let (first, last) = (knots[0].0, knots[knots.len() - 1].0);
        if first > 0.0 || last < 1.0 {
            return Err(Error::Config(format!(
                "OCV table must span SOC [0, 1], got [{first}, {last}]"
            )));
        }
        for w in knots.windows(2) {
            if !(w[1].0 > w[0].0 && w[1].1 > w[0].1) {
                return Err(Error::Config(format!(
                    "OCV table must be strictly increasing, got {:?} then {:?}",
                    w[0], w[1]
                )));
            }
        }
        Ok(Self(knots))
    }

    /// Typical 3.3 V LFP cell, 11 knots.
    pub fn lfp_default() -> Self {
        let volts = [
            2.80, 3.18, 3.22, 3.25, 3.27, 3.29, 3.30, 3.31, 3.33, 3.35, 3.45,
        ];
        Self(
            volts
                .iter()
                .enumerate()
                .map(|(i, &v)| (i as f64 / 10.0, v))
                .collect(),
        )
    }

    pub fn knots(&self) -> &[(f64, f64)] {
        &self.0
    }

    fn segment(&self, soc: f64) -> usize {
        let n = self.0.len();
        self.0[1..n - 1]
            .iter()
            .position(|&(s, _)| soc < s)
            .unwrap_or(n - 2)
    }

    pub fn voltage(&self, soc: f64) -> f64 {
        let i = self.segment(soc);
        let (s0, v0) = self.0[i];
        let (s1, v1) = self.0[i + 1];
        v0 + (v1 - v0) * (soc - s0) / (s1 - s0)
    }

    /// dU_oc/dSOC of the segment containing `soc` (right segment at a knot).
    pub fn slope(&self, soc: f64) -> f64 {
        let i = self.segment(soc);
        let (s0, v0) = self.0[i];
        let (s1, v1) = self.0[i + 1];
        (v1 - v0) / (s1 - s0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CellSpec {
    pub nominal_voltage: f64,
    /// Ampere-hours.
    pub rated_capacity: f64,
    /// R0 in ohms.
    pub internal_resistance: f64,
    pub ocv_curve: OcvCurve,
    pub terminal_voltage_min: f64,
    pub terminal_voltage_max: f64,
    pub design_current_charge: f64,
    pub design_current_discharge: f64,
}

impl Default for CellSpec {
    fn default() -> Self {
        Self {
            nominal_voltage: 3.3,
            rated_capacity: 2.3,
            internal_resistance: 0.01,
            ocv_curve: OcvCurve::lfp_default(),
            terminal_voltage_min: 2.5,
            terminal_voltage_max: 3.65,
            design_current_charge: 4.6,
            design_current_discharge: 6.9,
        }
    }
}

impl CellSpec {
    pub fn validate(&self) -> Result<()> {
        // Re-run the table checks for configs that bypassed `OcvCurve::new`.
        OcvCurve::new(self.ocv_curve.0.clone())?;
        if !(self.terminal_voltage_min < self.nominal_voltage
            && self.nominal_voltage < self.terminal_voltage_max)
        {
            return Err(Error::Config(
                "terminal voltage bounds must bracket the nominal voltage".into(),
            ));
        }
        let positive = [
            ("rated_capacity", self.rated_capacity),
            ("internal_resistance", self.internal_resistance),
            ("design_current_charge", self.design_current_charge),
            ("design_current_discharge", self.design_current_discharge),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("cell {name} must be > 0, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PackTopology {
    pub cells_in_series: u32,
    pub parallel_branches: u32,
}

impl Default for PackTopology {
    fn default() -> Self {
        Self {
            cells_in_series: 39,
            parallel_branches: 4,
        }
    }
}

impl PackTopology {
    pub fn validate(&self) -> Result<()> {
        if self.cells_in_series == 0 || self.parallel_branches == 0 {
            return Err(Error::Config("pack topology counts must be >= 1".into()));
        }
        Ok(())
    }

    pub fn cell_count(&self) -> f64 {
        f64::from(self.cells_in_series) * f64::from(self.parallel_branches)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SohModelParams {
    /// H
    pub cycle_constant: f64,
    /// kappa
    pub dod_exponent: f64,
    /// gamma_1
    pub discharge_current_exponent: f64,
    /// gamma_2
    pub charge_current_exponent: f64,
    /// M1, cycles.
    pub efc_constant: f64,
}

impl Default for SohModelParams {
    fn default() -> Self {
        Self {
            cycle_constant: 3000.0,
            dod_exponent: 0.5,
            discharge_current_exponent: 0.2,
            charge_current_exponent: 0.2,
            efc_constant: 1500.0,
        }
    }
}

impl SohModelParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.cycle_constant > 0.0 && self.efc_constant > 0.0) {
            return Err(Error::Config("H and M1 must be > 0".into()));
        }
        let exps = [
            self.dod_exponent,
            self.discharge_current_exponent,
            self.charge_current_exponent,
        ];
        if exps.iter().any(|e| !e.is_finite()) {
            return Err(Error::Config("SOH exponents must be finite".into()));
        }
        Ok(())
    }
}

/// One completed charge/discharge excursion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CycleRecord {
    pub soc_ave: f64,
    pub delta_soc: f64,
    /// Depth of discharge in percent.
    pub dod: f64,
    pub i_dis_ave: f64,
    pub i_ch_ave: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatteryPackState {
    pub soc: f64,
    /// Percent.
    pub soh: f64,
    /// Equivalent full cycles.
    pub efc: f64,
    pub aging_factor: f64,
    pub cycle_log: Vec<CycleRecord>,
}

impl BatteryPackState {
    pub fn new(soc: f64, soh: f64, efc: f64) -> Self {
        Self {
            soc,
            soh,
            efc,
            aging_factor: 0.0,
            cycle_log: Vec::new(),
        }
    }

    /// Advance the cycle count with `cycle` and lower SOH by the fade
    /// accumulated between the old and new cycle counts, evaluated at this
    /// cycle's SOC statistics.
    pub fn age_with_cycle(&mut self, cycle: CycleRecord, params: &SohModelParams) -> Result<()> {
        let efc_before = self.efc;
        let next = update_cycle_count(self.clone(), cycle, params)?;
        let loss = capacity_fade_loss(cycle.soc_ave, cycle.delta_soc, next.efc)?
            - capacity_fade_loss(cycle.soc_ave, cycle.delta_soc, efc_before)?;
        *self = next;
        self.soh = (self.soh - loss.max(0.0)).max(f64::MIN_POSITIVE);
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DegradationCostParams {
    /// $/kWh
    pub unit_battery_cost: f64,
    /// $ per replacement
    pub labor_cost: f64,
    /// Fraction.
    pub soh_min: f64,
}

impl Default for DegradationCostParams {
    fn default() -> Self {
        Self {
            unit_battery_cost: 300.0,
            labor_cost: 240.0,
            soh_min: 0.80,
        }
    }
}

impl DegradationCostParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.soh_min > 0.0 && self.soh_min < 1.0) {
            return Err(Error::Config(format!(
                "soh_min must lie in (0, 1), got {}",
                self.soh_min
            )));
        }
        if self.unit_battery_cost < 0.0 || self.labor_cost < 0.0 {
            return Err(Error::Config("battery costs must be >= 0".into()));
        }
        Ok(())
    }

    /// $ per kWh of lost capacity.
    pub fn cost_per_kwh(&self) -> f64 {
        self.unit_battery_cost + self.labor_cost / (1.0 - self.soh_min)
    }
}

fn check_fraction(name: &str, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::Domain(format!("{name} must lie in [0, 1], got {v}")));
    }
    Ok(())
}

/// Capacity loss in percentage points after `efc` equivalent full cycles.
pub fn capacity_fade_loss(soc_ave: f64, delta_soc: f64, efc: f64) -> Result<f64> {
    check_fraction("soc_ave", soc_ave)?;
    check_fraction("delta_soc", delta_soc)?;
    if !(efc >= 0.0) {
        return Err(Error::Domain(format!("efc must be >= 0, got {efc}")));
    }
    let stress = 1.0 + 3.25 * delta_soc - 2.25 * delta_soc * delta_soc;
    Ok(3.25 * soc_ave * stress * (efc / 100.0).powf(0.453))
}

/// SOH in percent under partial cycling.
pub fn soh_capacity_fade(soc_ave: f64, delta_soc: f64, efc: f64) -> Result<f64> {
    Ok(100.0 - capacity_fade_loss(soc_ave, delta_soc, efc)?)
}

/// Maximum number of cycles at the given depth (percent) and average
/// branch currents.
pub fn max_cycle_number(
    dod: f64,
    i_dis_ave: f64,
    i_ch_ave: f64,
    params: &SohModelParams,
) -> Result<f64> {
    if !(dod > 0.0 && dod <= 100.0) {
        return Err(Error::Domain(format!("DOD must lie in (0, 100], got {dod}")));
    }
    if !(i_dis_ave > 0.0 && i_ch_ave > 0.0) {
        return Err(Error::Domain(format!(
            "average currents must be > 0, got dis={i_dis_ave} ch={i_ch_ave}"
        )));
    }
    Ok(params.cycle_constant
        * (dod / 100.0).powf(-params.dod_exponent)
        * i_dis_ave.powf(-params.discharge_current_exponent)
        * i_ch_ave.powf(-params.charge_current_exponent))
}

/// Apply the equivalent-full-cycle recursion for one completed cycle.
///
/// The aging factor starts at `1/M` of the first cycle and is held constant
/// until three cycles are available for the DOD correction. A zero-depth
/// middle cycle skips the correction. The factor never drops below zero so
/// the cycle count is non-decreasing.
pub fn update_cycle_count(
    mut state: BatteryPackState,
    cycle: CycleRecord,
    params: &SohModelParams,
) -> Result<BatteryPackState> {
    if state.cycle_log.is_empty() {
        state.aging_factor = 1.0 / max_cycle_number(cycle.dod, cycle.i_dis_ave, cycle.i_ch_ave, params)?;
    }
    state.efc += state.aging_factor * params.efc_constant;

    let n = state.cycle_log.len();
    if n >= 2 {
        let prev = state.cycle_log[n - 1];
        let prev2 = state.cycle_log[n - 2];
        if prev.dod > 0.0 {
            let m_prev = max_cycle_number(prev.dod, prev.i_dis_ave, prev.i_ch_ave, params)?;
            let correction = 0.5 / m_prev * (2.0 - (prev2.dod + cycle.dod) / prev.dod);
            state.aging_factor = (state.aging_factor + correction).max(0.0);
        }
    }
    state.cycle_log.push(cycle);
    Ok(state)
}

/// SOC-limited (charge, discharge) branch currents over a horizon in hours.
pub fn soc_limited_current(
    soc: f64,
    soc_bounds: (f64, f64),
    capacity_ah: f64,
    horizon_h: f64,
) -> Result<(f64, f64)> {
    let (lo, hi) = soc_bounds;
    const SLACK: f64 = 1e-9;
    if !(soc >= lo - SLACK && soc <= hi + SLACK) {
        return Err(Error::Domain(format!(
            "SOC {soc} outside bounds [{lo}, {hi}]"
        )));
    }
    if !(horizon_h > 0.0) {
        return Err(Error::Domain(format!("horizon must be > 0, got {horizon_h}")));
    }
    let i_ch = (capacity_ah * (hi - soc) / horizon_h).max(0.0);
    let i_dis = (capacity_ah * (soc - lo) / horizon_h).max(0.0);
    Ok((i_ch, i_dis))
}

/// Terminal-voltage-limited (charge, discharge) branch currents.
pub fn voltage_limited_current(
    soc: f64,
    cell: &CellSpec,
    capacity_ah: f64,
    horizon_h: f64,
) -> Result<(f64, f64)> {
    check_fraction("soc", soc)?;
    let u_oc = cell.ocv_curve.voltage(soc);
    let denom = cell.internal_resistance + horizon_h / capacity_ah * cell.ocv_curve.slope(soc);
    if !(denom > 0.0) {
        return Err(Error::Model(format!(
            "non-positive voltage-limit denominator {denom} at SOC {soc}"
        )));
    }
    let i_dis = ((u_oc - cell.terminal_voltage_min) / denom).max(0.0);
    let i_ch = ((u_oc - cell.terminal_voltage_max) / denom).abs();
    Ok((i_ch, i_dis))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CurrentLimit {
    Soc,
    Voltage,
    Design,
}

/// Continuous peak power of a pack and the limits that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PeakPower {
    pub p_ch_kw: f64,
    pub p_dis_kw: f64,
    pub i_ch: f64,
    pub i_dis: f64,
    pub ch_limit: CurrentLimit,
    pub dis_limit: CurrentLimit,
    /// Cell terminal voltage at the limiting charge current.
    pub u_t_ch: f64,
    /// Cell terminal voltage at the limiting discharge current.
    pub u_t_dis: f64,
}

fn min_limit(soc: f64, voltage: f64, design: f64) -> (f64, CurrentLimit) {
    let mut best = (soc, CurrentLimit::Soc);
    if voltage < best.0 {
        best = (voltage, CurrentLimit::Voltage);
    }
    if design < best.0 {
        best = (design, CurrentLimit::Design);
    }
    best
}

/// Pack state of power. Capacity is the rated capacity scaled by SOH.
pub fn peak_power(
    cell: &CellSpec,
    topology: &PackTopology,
    state: &BatteryPackState,
    soc_bounds: (f64, f64),
    horizon_h: f64,
) -> Result<PeakPower> {
    let capacity = cell.rated_capacity * state.soh / 100.0;
    let soc = state.soc;
    let (soc_ch, soc_dis) = soc_limited_current(soc, soc_bounds, capacity, horizon_h)?;
    let (v_ch, v_dis) = voltage_limited_current(soc.clamp(0.0, 1.0), cell, capacity, horizon_h)?;
    let (i_ch, ch_limit) = min_limit(soc_ch, v_ch, cell.design_current_charge);
    let (i_dis, dis_limit) = min_limit(soc_dis, v_dis, cell.design_current_discharge);

    let u_oc = cell.ocv_curve.voltage(soc.clamp(0.0, 1.0));
    let u_t_ch = u_oc + i_ch * cell.internal_resistance;
    let u_t_dis = u_oc - i_dis * cell.internal_resistance;
    let scale = topology.cell_count() / 1000.0;
    Ok(PeakPower {
        p_ch_kw: u_t_ch * i_ch * scale,
        p_dis_kw: u_t_dis * i_dis * scale,
        i_ch,
        i_dis,
        ch_limit,
        dis_limit,
        u_t_ch,
        u_t_dis,
    })
}

/// Nominal pack energy in kWh.
pub fn pack_energy_kwh(cell: &CellSpec, topology: &PackTopology) -> f64 {
    cell.nominal_voltage * cell.rated_capacity * topology.cell_count() / 1000.0
}

/// Branch current equivalent to `power_kw` on a battery of `capacity_kwh`:
/// the same C-rate applied to the cell's rated capacity.
pub fn branch_current(power_kw: f64, capacity_kwh: f64, cell: &CellSpec) -> f64 {
    power_kw.abs() / capacity_kwh * cell.rated_capacity
}

/// Degradation cost in dollars. `soh` is a fraction.
pub fn degradation_cost(soh: f64, capacity_kwh: f64, params: &DegradationCostParams) -> f64 {
    params.cost_per_kwh() * (1.0 - soh) * capacity_kwh
}

#[derive(Debug, Clone, Copy)]
struct Run {
    charging: bool,
    soc_min: f64,
    soc_max: f64,
    current_sum: f64,
    slots: usize,
}

/// Split a SOC trace into charge/discharge excursions.
///
/// `soc` holds `power_kw.len() + 1` points. Monotone runs are paired into
/// cycles in order; a trailing unpaired run forms a cycle on its own and
/// borrows its own average current for the missing half.
pub fn segment_cycles(
    soc: &[f64],
    power_kw: &[f64],
    capacity_kwh: f64,
    cell: &CellSpec,
) -> Vec<CycleRecord> {
    const FLAT: f64 = 1e-9;
    debug_assert_eq!(soc.len(), power_kw.len() + 1);
    let mut runs: Vec<Run> = Vec::new();
    for (t, p) in power_kw.iter().enumerate() {
        let delta = soc[t + 1] - soc[t];
        if delta.abs() <= FLAT {
            continue;
        }
        let charging = delta > 0.0;
        let current = branch_current(*p, capacity_kwh, cell);
        let (lo, hi) = (soc[t].min(soc[t + 1]), soc[t].max(soc[t + 1]));
        match runs.last_mut() {
            Some(run) if run.charging == charging => {
                run.soc_min = run.soc_min.min(lo);
                run.soc_max = run.soc_max.max(hi);
                run.current_sum += current;
                run.slots += 1;
            }
            _ => runs.push(Run {
                charging,
                soc_min: lo,
                soc_max: hi,
                current_sum: current,
                slots: 1,
            }),
        }
    }

    runs.chunks(2)
        .map(|pair| {
            let soc_min = pair.iter().map(|r| r.soc_min).fold(f64::INFINITY, f64::min);
            let soc_max = pair.iter().map(|r| r.soc_max).fold(f64::NEG_INFINITY, f64::max);
            let mean = |want_charge: bool| {
                pair.iter()
                    .find(|r| r.charging == want_charge)
                    .map(|r| r.current_sum / r.slots as f64)
            };
            let own = pair[0].current_sum / pair[0].slots as f64;
            let i_ch = mean(true).unwrap_or(own);
            let i_dis = mean(false).unwrap_or(own);
            let delta = soc_max - soc_min;
            CycleRecord {
                soc_ave: 0.5 * (soc_max + soc_min),
                delta_soc: delta,
                dod: delta * 100.0,
                i_dis_ave: i_dis,
                i_ch_ave: i_ch,
            }
        })
        .collect()
}
