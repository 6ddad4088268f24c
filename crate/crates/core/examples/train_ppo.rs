//! Train a small PPO dispatcher and print the learning curve in blocks.
//!
//! cargo run --release --example train_ppo -- [episodes] [fleet_size] [seed]

use v2g_sim::allocation::AllocationConfig;
use v2g_sim::env::{EnvConfig, GridProfiles, RewardWeights, V2gEnv};
use v2g_sim::fleet::{sample_fleet, FleetConfig};
use v2g_sim::ppo::{evaluate_policy, PpoHyper, Trainer};

fn main() -> v2g_sim::Result<()> {
    let args: Vec<u64> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let episodes = args.first().copied().unwrap_or(2000) as usize;
    let fleet_size = args.get(1).copied().unwrap_or(20) as usize;
    let seed = args.get(2).copied().unwrap_or(7);

    let cfg = EnvConfig::default();
    let profiles = GridProfiles::synthetic(&cfg.profiles, seed);
    let sessions = sample_fleet(fleet_size, seed, &FleetConfig::default(), &cfg.horizon)?;
    let env = V2gEnv::new(cfg, RewardWeights::default(), AllocationConfig::default(), profiles, sessions)?;

    // Short runs need larger steps than the defaults, which are sized for
    // 300 000 episodes.
    let hyper = PpoHyper { lr_actor: 1e-4, lr_critic: 1e-3, episodes, ..PpoHyper::default() };
    let mut trainer = Trainer::new(hyper, seed, &env)?;
    let t0 = std::time::Instant::now();
    trainer.train(&env, episodes, 1, |_| Ok(()))?;
    println!("trained {episodes} episodes in {:.1}s", t0.elapsed().as_secs_f64());

    let block = (episodes / 10).max(1);
    for (i, chunk) in trainer.curve.chunks(block).enumerate() {
        let mean = chunk.iter().map(|r| r.reward).sum::<f64>() / chunk.len() as f64;
        let var = chunk.iter().map(|r| r.sigma2).sum::<f64>() / chunk.len() as f64;
        println!("episodes {:>6}..{:<6} mean reward {mean:>12.3}  load variance {var:>12.1}", i * block, i * block + chunk.len());
    }

    let mut eval_env = env.clone();
    let (schedule, r) = evaluate_policy(&mut eval_env, &trainer.params, seed)?;
    println!(
        "greedy policy: reward {:.3}, load variance {:.1}, charging cost {:.2}",
        r.total,
        schedule.load_variance(&env.profiles),
        schedule.charging_cost(&env.profiles)
    );
    Ok(())
}
