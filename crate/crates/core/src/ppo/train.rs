use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    actor_logit, clipped_surrogate_update, compute_returns_and_advantages, critic_forward, gaussian_log_prob,
    normalize, sample_from_logit, scale_action, sigmoid, LossStats, PolicyParams, PpoHyper, Sample,
    StateNormalizer, Trajectory,
};
use crate::env::{RewardBreakdown, V2gEnv};
use crate::error::{Error, Result};
use crate::schedule::DaySchedule;

pub const CHECKPOINT_VERSION: u32 = 1;

// Stream ids keep episode, shuffle and init randomness apart.
const INIT_STREAM: u64 = u64::MAX;
const SHUFFLE_STREAM_BASE: u64 = 1 << 62;

fn episode_rng(seed: u64, episode: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(episode as u64);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub episode: usize,
    pub reward: f64,
    pub f1: f64,
    pub f2: f64,
    pub f3: f64,
    pub sigma2: f64,
}

pub fn write_learning_curve(path: &Path, rows: &[CurveRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    if rows.is_empty() {
        w.write_record(["episode", "reward", "f1", "f2", "f3", "sigma2"])?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_learning_curve(path: &Path) -> Result<Vec<CurveRow>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    Ok(csv::Reader::from_path(path)?.deserialize().collect::<std::result::Result<_, _>>()?)
}

/// Play one stochastic episode. The day seed drives the environment's
/// validator draws; `rng` drives exploration.
pub fn rollout_episode(
    env: &mut V2gEnv,
    params: &PolicyParams,
    std: f64,
    rng: &mut ChaCha8Rng,
    day_seed: u64,
) -> Result<(Trajectory, RewardBreakdown, f64)> {
    let mut traj = Trajectory::default();
    let mut sum = RewardBreakdown::default();
    let mut state = env.reset(day_seed);
    while !env.done() {
        let x = params.normalizer.apply(&state);
        let z = actor_logit(&params.actor, &x);
        if !z.is_finite() {
            return Err(Error::Divergence { episode: 0, reason: "non-finite actor output".into() });
        }
        let a = sample_from_logit(z, std, rng);
        let bounds = env.action_bounds();
        let power = scale_action(a.raw, bounds.min, bounds.max);
        let value = critic_forward(&params.critic, &x);
        let out = env.step(power)?;
        traj.states.push(x);
        traj.pre_squash.push(a.pre_squash);
        traj.raw_actions.push(a.raw);
        traj.powers.push(out.applied_power);
        traj.log_probs.push(a.log_prob);
        traj.rewards.push(out.reward.total);
        traj.values.push(value);
        traj.dones.push(out.done);
        sum.f1 += out.reward.f1;
        sum.f2 += out.reward.f2;
        sum.f3 += out.reward.f3;
        sum.total += out.reward.total;
        state = out.state;
    }
    Ok((traj, sum, state.variance))
}

/// Play the deterministic mean policy for one day.
pub fn evaluate_policy(env: &mut V2gEnv, params: &PolicyParams, day_seed: u64) -> Result<(DaySchedule, RewardBreakdown)> {
    let mut sum = RewardBreakdown::default();
    let mut state = env.reset(day_seed);
    while !env.done() {
        let x = params.normalizer.apply(&state);
        let raw = sigmoid(actor_logit(&params.actor, &x));
        let bounds = env.action_bounds();
        let out = env.step(scale_action(raw, bounds.min, bounds.max))?;
        sum.f1 += out.reward.f1;
        sum.f2 += out.reward.f2;
        sum.f3 += out.reward.f3;
        sum.total += out.reward.total;
        state = out.state;
    }
    Ok((DaySchedule::from_env("mhvcs", env)?, sum))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RngState {
    pub algorithm: String,
    pub seed: u64,
    /// Episode streams below this index have been consumed.
    pub next_episode: usize,
    pub next_update: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub hyper: PpoHyper,
    pub episode: usize,
    pub params: PolicyParams,
    pub rng: RngState,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let s = serde_json::to_string(self)?;
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let c: Self = serde_json::from_str(&s)?;
        if c.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!(
                "{}: checkpoint version {} (expected {CHECKPOINT_VERSION})",
                path.display(),
                c.version
            )));
        }
        Ok(c)
    }
}

/// Training state: parameters, progress and the learning curve.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub hyper: PpoHyper,
    pub seed: u64,
    pub params: PolicyParams,
    pub episode: usize,
    pub updates: usize,
    pub curve: Vec<CurveRow>,
    /// Best mean batch reward and the parameters that earned it.
    pub best: Option<(f64, PolicyParams)>,
    pub last_loss: LossStats,
}

impl Trainer {
    pub fn new(hyper: PpoHyper, seed: u64, env: &V2gEnv) -> Result<Self> {
        hyper.validate()?;
        if hyper.episode_length != env.cfg.horizon.slots {
            return Err(Error::Config(format!(
                "ppo.episode_length {} differs from the horizon of {} slots",
                hyper.episode_length, env.cfg.horizon.slots
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(INIT_STREAM);
        let params = PolicyParams::new(&hyper, StateNormalizer::for_env(env), &mut rng);
        Ok(Self::with_params(hyper, seed, params))
    }

    pub fn with_params(hyper: PpoHyper, seed: u64, params: PolicyParams) -> Self {
        Self { hyper, seed, params, episode: 0, updates: 0, curve: Vec::new(), best: None, last_loss: LossStats::default() }
    }

    pub fn from_checkpoint(c: Checkpoint) -> Self {
        let mut t = Self::with_params(c.hyper, c.rng.seed, c.params);
        t.episode = c.episode;
        t.updates = c.rng.next_update;
        t
    }

    pub fn checkpoint(&self) -> Checkpoint {
        self.checkpoint_of(&self.params)
    }

    pub fn best_checkpoint(&self) -> Checkpoint {
        self.checkpoint_of(self.best.as_ref().map_or(&self.params, |b| &b.1))
    }

    fn checkpoint_of(&self, params: &PolicyParams) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            hyper: self.hyper.clone(),
            episode: self.episode,
            params: params.clone(),
            rng: RngState {
                algorithm: "chacha8".into(),
                seed: self.seed,
                next_episode: self.episode,
                next_update: self.updates,
            },
        }
    }

    /// Collect episodes `first..first + count` across `workers` threads.
    /// Each episode draws from its own stream, so the result does not depend
    /// on the worker count.
    fn collect(&self, env: &V2gEnv, first: usize, count: usize, workers: usize) -> Result<Vec<(Trajectory, RewardBreakdown, f64)>> {
        let run = |ep: usize, env: &mut V2gEnv| {
            let mut rng = episode_rng(self.seed, ep);
            rollout_episode(env, &self.params, self.hyper.action_std, &mut rng, self.seed.wrapping_add(ep as u64))
        };
        let workers = workers.clamp(1, count.max(1));
        if workers == 1 {
            let mut e = env.clone();
            return (first..first + count).map(|ep| run(ep, &mut e)).collect();
        }
        let chunk = count.div_ceil(workers);
        let episodes: Vec<usize> = (first..first + count).collect();
        std::thread::scope(|scope| {
            let handles: Vec<_> = episodes
                .chunks(chunk)
                .map(|eps| {
                    let mut e = env.clone();
                    let run = &run;
                    scope.spawn(move || eps.iter().map(|&ep| run(ep, &mut e)).collect::<Result<Vec<_>>>())
                })
                .collect();
            let mut out = Vec::with_capacity(count);
            for h in handles {
                out.extend(h.join().expect("rollout worker panicked")?);
            }
            Ok(out)
        })
    }

    /// PPO update on a batch of finished episodes. Works on a copy so a
    /// diverged update leaves the current parameters untouched.
    fn update(&self, trajs: &[Trajectory]) -> Result<(PolicyParams, LossStats)> {
        let h = &self.hyper;
        let mut states = Vec::new();
        let mut pre = Vec::new();
        let mut adv = Vec::new();
        let mut targets = Vec::new();
        for t in trajs {
            let scaled: Vec<f64> = t.rewards.iter().map(|r| r * h.reward_scale).collect();
            let (ret, a) = compute_returns_and_advantages(&scaled, &t.values, h.gamma, h.gae_lambda);
            states.extend(t.states.iter().map(|s| s.as_slice()));
            pre.extend(&t.pre_squash);
            adv.extend(a);
            targets.extend(ret);
        }
        normalize(&mut adv);
        let mut params = self.params.clone();
        let old_logp = |p: &PolicyParams| -> Vec<f64> {
            states
                .iter()
                .zip(&pre)
                .map(|(s, u)| gaussian_log_prob(*u, actor_logit(&p.actor, s), h.action_std))
                .collect()
        };
        let mut old = old_logp(&params);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(SHUFFLE_STREAM_BASE + self.updates as u64);
        let mut idx: Vec<usize> = (0..states.len()).collect();
        let mut stats = LossStats::default();
        let mut steps = 0;
        for _ in 0..h.epochs {
            idx.shuffle(&mut rng);
            for chunk in idx.chunks(h.minibatch) {
                let batch: Vec<Sample> = chunk
                    .iter()
                    .map(|&i| Sample {
                        state: states[i],
                        pre_squash: pre[i],
                        old_log_prob: old[i],
                        advantage: adv[i],
                        target: targets[i],
                    })
                    .collect();
                stats = clipped_surrogate_update(&mut params, &batch, h.action_std, h.clip);
                steps += 1;
                if steps % h.update_step == 0 {
                    old = old_logp(&params);
                }
            }
        }
        if !params.is_healthy(h.max_weight) || !stats.value_loss.is_finite() {
            return Err(Error::Divergence {
                episode: self.episode,
                reason: format!("weights left [-{:e}, {:e}] or loss is not finite", h.max_weight, h.max_weight),
            });
        }
        Ok((params, stats))
    }

    /// Train for `episodes` more episodes. `on_checkpoint` runs every
    /// `checkpoint_every` episodes and at the end. On divergence the trainer
    /// keeps the last healthy parameters.
    pub fn train(
        &mut self,
        env: &V2gEnv,
        episodes: usize,
        workers: usize,
        mut on_checkpoint: impl FnMut(&Trainer) -> Result<()>,
    ) -> Result<()> {
        let end = self.episode + episodes;
        let mut next_ck = self.episode + self.hyper.checkpoint_every.max(1);
        while self.episode < end {
            let count = self.hyper.episodes_per_update.min(end - self.episode);
            let batch = self.collect(env, self.episode, count, workers)?;
            let mut mean = 0.0;
            for (i, (_, r, sigma2)) in batch.iter().enumerate() {
                if !r.total.is_finite() {
                    return Err(Error::Divergence { episode: self.episode + i, reason: "non-finite reward".into() });
                }
                mean += r.total / count as f64;
                self.curve.push(CurveRow {
                    episode: self.episode + i,
                    reward: r.total,
                    f1: r.f1,
                    f2: r.f2,
                    f3: r.f3,
                    sigma2: *sigma2,
                });
            }
            if self.best.as_ref().is_none_or(|(b, _)| mean > *b) {
                self.best = Some((mean, self.params.clone()));
            }
            let trajs: Vec<Trajectory> = batch.into_iter().map(|b| b.0).collect();
            let total_samples: usize = trajs.iter().map(|t| t.len()).sum();
            if total_samples > 0 {
                let (params, stats) = self.update(&trajs)?;
                self.params = params;
                self.last_loss = stats;
                self.updates += 1;
            }
            self.episode += count;
            if self.episode >= next_ck || self.episode == end {
                on_checkpoint(self)?;
                next_ck = self.episode + self.hyper.checkpoint_every.max(1);
            }
        }
        Ok(())
    }
}
