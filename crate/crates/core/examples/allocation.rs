//! Step the environment with a flat request and show how each slot's EVA
//! power is split across the fleet and who validated it.
//!
//! cargo run --example allocation -- [fleet_size] [request_kw] [seed]

use v2g_sim::allocation::AllocationConfig;
use v2g_sim::env::{EnvConfig, GridProfiles, RewardWeights, V2gEnv};
use v2g_sim::fleet::{sample_fleet, FleetConfig};

fn main() -> v2g_sim::Result<()> {
    let args: Vec<f64> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let n = args.first().copied().unwrap_or(50.0) as usize;
    let request = args.get(1).copied().unwrap_or(150.0);
    let seed = args.get(2).copied().unwrap_or(5.0) as u64;

    let cfg = EnvConfig::default();
    let profiles = GridProfiles::synthetic(&cfg.profiles, seed);
    let sessions = sample_fleet(n, seed, &FleetConfig::default(), &cfg.horizon)?;
    let mut env = V2gEnv::new(cfg, RewardWeights::default(), AllocationConfig::default(), profiles, sessions.clone())?;
    env.reset(seed);

    println!("{:>4} {:>10} {:>10} {:>9} {:>9} {:>9} {:>9}", "slot", "request", "applied", "evs", "residual", "validator", "accepted");
    while !env.done() {
        let out = env.step(request)?;
        let a = &out.allocation;
        let active = a.final_kw.iter().filter(|p| p.abs() > 1e-9).count();
        println!(
            "{:>4} {:>10.2} {:>10.2} {active:>9} {:>9.1e} {:>9} {:>9}",
            a.slot,
            out.requested_power,
            out.applied_power,
            a.residual_kw,
            a.validator.map_or("-".into(), |v| v.to_string()),
            a.accepted
        );
    }
    let in_band = sessions
        .iter()
        .zip(env.energies())
        .filter(|(s, e)| {
            let soc = *e / s.capacity_kwh();
            soc >= s.spec.departure_soc_min - 1e-9 && soc <= s.spec.departure_soc_max + 1e-9
        })
        .count();
    println!("{in_band}/{n} EVs leave inside their departure band");
    Ok(())
}
