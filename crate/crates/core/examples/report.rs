//! Write the report bundle for the four baselines into a directory.
//!
//! cargo run --release --example report -- [out_dir] [fleet_size] [days]

use std::path::PathBuf;

use v2g_sim::baselines::{baseline_schedule, Baseline};
use v2g_sim::battery::{CellSpec, DegradationCostParams, PackTopology, SohModelParams};
use v2g_sim::env::{EnvConfig, GridProfiles};
use v2g_sim::fleet::{sample_fleet, FleetConfig};
use v2g_sim::metrics::{
    emit_reports, evaluation_indices, simulate_year_repeating, ReportInputs, SopSettings, StrategyResult, REPORT_FILES,
};

fn main() -> v2g_sim::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "report".into()));
    let n: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(509);
    let days: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(365);
    let seed = 1;

    let cfg = EnvConfig::default();
    let profiles = GridProfiles::synthetic(&cfg.profiles, seed);
    let sessions = sample_fleet(n, seed, &FleetConfig::default(), &cfg.horizon)?;
    let rated: Vec<f64> = sessions.iter().map(|s| s.spec.capacity_kwh).collect();
    let (cell, soh) = (CellSpec::default(), SohModelParams::default());
    let strategies = Baseline::ALL
        .iter()
        .map(|b| {
            let schedule = baseline_schedule(*b, &sessions, &profiles, &cfg)?;
            let year = simulate_year_repeating(&sessions, &schedule, days, &cell, &soh)?;
            let indices = evaluation_indices(&schedule, &profiles, &year, &rated, &DegradationCostParams::default());
            Ok(StrategyResult { schedule, year, indices, accepted_slots: None })
        })
        .collect::<v2g_sim::Result<Vec<_>>>()?;
    emit_reports(
        &out,
        &ReportInputs {
            seed,
            profiles: &profiles,
            sessions: &sessions,
            strategies: &strategies,
            sop: SopSettings { cell, topology: PackTopology::default(), horizon_h: 1.0 },
            enrollment_incentive: 560.0 * n as f64,
        },
    )?;
    for f in REPORT_FILES {
        println!("{}", out.join(f).display());
    }
    Ok(())
}
