//! Sample a fleet and print the aggregate energy and power envelope.
//!
//! cargo run --example fleet_envelope -- [fleet_size] [seed]

use v2g_sim::env::EnvConfig;
use v2g_sim::fleet::{sample_fleet, AggregateEnvelope, FleetConfig};

fn main() -> v2g_sim::Result<()> {
    let args: Vec<u64> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let n = args.first().copied().unwrap_or(509) as usize;
    let seed = args.get(1).copied().unwrap_or(3);

    let h = EnvConfig::default().horizon;
    let fleet = sample_fleet(n, seed, &FleetConfig::default(), &h)?;
    let env = AggregateEnvelope::from_sessions(&fleet, &h)?;
    println!("{n} EVs, initial energy {:.1} kWh", env.initial_energy());
    println!("{:>5} {:>4} {:>11} {:>11} {:>10} {:>10}", "point", "hour", "e_min_kwh", "e_max_kwh", "p_min_kw", "p_max_kw");
    for k in 0..=h.slots {
        let (p_lo, p_hi) = if k < h.slots { (env.p_lower[k], env.p_upper[k]) } else { (f64::NAN, f64::NAN) };
        println!(
            "{k:>5} {:>4} {:>11.1} {:>11.1} {p_lo:>10.1} {p_hi:>10.1}",
            (h.start_hour + k as u32) % 24,
            env.e_lower[k],
            env.e_upper[k]
        );
    }
    let connected = (0..h.slots).map(|t| fleet.iter().filter(|s| s.is_connected(&h, t)).count()).max().unwrap_or(0);
    println!("peak simultaneous connections: {connected}");
    Ok(())
}
