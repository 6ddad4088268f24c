//! Age a fleet for a year under each baseline and print SOH milestones.
//!
//! cargo run --release --example simulate_year -- [fleet_size] [days] [seed]

use v2g_sim::baselines::{baseline_schedule, Baseline};
use v2g_sim::battery::{CellSpec, SohModelParams};
use v2g_sim::env::{EnvConfig, GridProfiles};
use v2g_sim::fleet::{sample_fleet, FleetConfig};
use v2g_sim::metrics::simulate_year_repeating;

fn main() -> v2g_sim::Result<()> {
    let args: Vec<u64> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let n = args.first().copied().unwrap_or(100) as usize;
    let days = args.get(1).copied().unwrap_or(365) as usize;
    let seed = args.get(2).copied().unwrap_or(4);

    let cfg = EnvConfig::default();
    let profiles = GridProfiles::synthetic(&cfg.profiles, seed);
    let sessions = sample_fleet(n, seed, &FleetConfig::default(), &cfg.horizon)?;
    let marks: Vec<usize> = [0, days / 4, days / 2, 3 * days / 4, days].into();
    print!("{:>4}", "");
    for d in &marks {
        print!(" {:>10}", format!("day {d}"));
    }
    println!();
    for b in Baseline::ALL {
        let schedule = baseline_schedule(b, &sessions, &profiles, &cfg)?;
        let year = simulate_year_repeating(&sessions, &schedule, days, &CellSpec::default(), &SohModelParams::default())?;
        print!("{:>4}", b.name());
        for d in &marks {
            print!(" {:>10.4}", year.daily_mean_soh[*d]);
        }
        println!();
    }
    Ok(())
}
