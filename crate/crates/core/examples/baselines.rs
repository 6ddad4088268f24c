//! Run the four reference strategies on one day and compare them.
//!
//! cargo run --release --example baselines -- [fleet_size] [seed]

use v2g_sim::baselines::{baseline_schedule, Baseline};
use v2g_sim::env::{EnvConfig, GridProfiles};
use v2g_sim::fleet::{sample_fleet, FleetConfig};

fn main() -> v2g_sim::Result<()> {
    let args: Vec<u64> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let n = args.first().copied().unwrap_or(509) as usize;
    let seed = args.get(1).copied().unwrap_or(2);

    let cfg = EnvConfig::default();
    let profiles = GridProfiles::synthetic(&cfg.profiles, seed);
    let sessions = sample_fleet(n, seed, &FleetConfig::default(), &cfg.horizon)?;
    println!("{:>4} {:>14} {:>12} {:>12}", "", "variance_kw2", "cost", "peak_kw");
    for b in Baseline::ALL {
        let s = baseline_schedule(b, &sessions, &profiles, &cfg)?;
        let peak = s.grid_kw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        println!("{:>4} {:>14.1} {:>12.2} {peak:>12.1}", b.name(), s.load_variance(&profiles), s.charging_cost(&profiles));
    }
    Ok(())
}
