//! Actor-critic PPO with a clipped surrogate objective.
//!
//! The actor outputs a logit `z`; the action mean is `sigmoid(z)`. Sampling
//! adds Gaussian noise to `z` before the squash, so the raw action stays in
//! `(0, 1)` and is then scaled to the environment's admissible power range.

pub mod nn;
mod train;

pub use train::{
    evaluate_policy, read_learning_curve, rollout_episode, write_learning_curve, Checkpoint, CurveRow,
    Trainer, CHECKPOINT_VERSION,
};

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::env::{EnvState, V2gEnv, HOURS, STATE_DIM};
use crate::error::{Error, Result};
pub use nn::{Adam, Mlp};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoHyper {
    pub lr_actor: f64,
    pub lr_critic: f64,
    pub gamma: f64,
    /// 1.0 gives Monte Carlo returns minus the critic baseline.
    pub gae_lambda: f64,
    pub clip: f64,
    /// Minibatch updates between refreshes of the old-policy snapshot.
    pub update_step: usize,
    pub minibatch: usize,
    pub episodes: usize,
    pub episode_length: usize,
    /// Exploration noise in logit space.
    pub action_std: f64,
    pub hidden: Vec<usize>,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub episodes_per_update: usize,
    pub epochs: usize,
    /// Multiplies rewards before they reach the critic.
    pub reward_scale: f64,
    pub checkpoint_every: usize,
    /// Divergence threshold on any weight.
    pub max_weight: f64,
}

impl Default for PpoHyper {
    fn default() -> Self {
        Self {
            lr_actor: 1e-6,
            lr_critic: 2e-6,
            gamma: 0.95,
            gae_lambda: 1.0,
            clip: 0.2,
            update_step: 10,
            minibatch: 32,
            episodes: 300_000,
            episode_length: 20,
            action_std: 0.3,
            hidden: vec![64, 64],
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            episodes_per_update: 4,
            epochs: 4,
            reward_scale: 1e-3,
            checkpoint_every: 100,
            max_weight: 1e6,
        }
    }
}

impl PpoHyper {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("ppo: {m}")));
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return bad("clip must lie in (0, 1)");
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma must lie in (0, 1)");
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gae_lambda must lie in [0, 1]");
        }
        if !(self.lr_actor > 0.0 && self.lr_critic > 0.0 && self.action_std > 0.0) {
            return bad("learning rates and action_std must be > 0");
        }
        if self.minibatch == 0 || self.update_step == 0 || self.epochs == 0 || self.episodes_per_update == 0 {
            return bad("batch sizes and step counts must be >= 1");
        }
        if self.minibatch > self.episodes_per_update * self.episode_length {
            return bad("minibatch larger than one rollout batch");
        }
        if self.hidden.contains(&0) {
            return bad("hidden layer widths must be >= 1");
        }
        Ok(())
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut s = vec![STATE_DIM];
        s.extend(&self.hidden);
        s.push(1);
        s
    }
}

/// Fixed affine scaling of observations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateNormalizer {
    pub load_scale: f64,
    pub energy_scale: f64,
    pub variance_scale: f64,
    pub tariff_scale: f64,
    pub delta_scale: f64,
}

impl StateNormalizer {
    pub fn identity() -> Self {
        Self { load_scale: 1.0, energy_scale: 1.0, variance_scale: 1.0, tariff_scale: 1.0, delta_scale: 1.0 }
    }

    pub fn for_env(env: &V2gEnv) -> Self {
        let grid = env.cfg.grid_max_kw();
        let capacity: f64 = env.sessions.iter().map(|s| s.capacity_kwh()).sum();
        let power: f64 = env.sessions.iter().map(|s| s.spec.p_ch_max_kw * env.cfg.horizon.slot_hours).sum();
        let tariff = env.profiles.tariff.iter().copied().fold(0.0, f64::max);
        Self {
            load_scale: grid,
            energy_scale: capacity.max(1.0),
            variance_scale: (grid * grid / 16.0).max(1.0),
            tariff_scale: if tariff > 0.0 { tariff } else { 1.0 },
            delta_scale: power.max(1.0),
        }
    }

    pub fn apply(&self, s: &EnvState) -> Vec<f64> {
        let mut v: Vec<f64> = s.load_history.iter().map(|p| p / self.load_scale).collect();
        debug_assert_eq!(v.len(), HOURS);
        v.extend([
            s.eva_energy / self.energy_scale,
            s.variance / self.variance_scale,
            s.tariff / self.tariff_scale,
            s.energy_delta / self.delta_scale,
        ]);
        v
    }
}

/// Actor, critic and their optimizer state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub actor: Mlp,
    pub critic: Mlp,
    pub adam_actor: Adam,
    pub adam_critic: Adam,
    pub normalizer: StateNormalizer,
}

impl PolicyParams {
    pub fn new(hyper: &PpoHyper, normalizer: StateNormalizer, rng: &mut ChaCha8Rng) -> Self {
        let sizes = hyper.layer_sizes();
        let actor = Mlp::init(&sizes, 0.01, rng);
        let critic = Mlp::init(&sizes, 1.0, rng);
        let adam = |n, lr| Adam::new(n, lr, hyper.adam_beta1, hyper.adam_beta2, hyper.adam_eps);
        Self {
            adam_actor: adam(actor.len(), hyper.lr_actor),
            adam_critic: adam(critic.len(), hyper.lr_critic),
            actor,
            critic,
            normalizer,
        }
    }

    pub fn is_healthy(&self, max_weight: f64) -> bool {
        self.actor.is_healthy(max_weight) && self.critic.is_healthy(max_weight)
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Actor logit for a normalized state.
pub fn actor_logit(actor: &Mlp, x: &[f64]) -> f64 {
    actor.forward(x)[0]
}

/// Mean action in `(0, 1)`.
pub fn actor_forward(actor: &Mlp, x: &[f64]) -> f64 {
    sigmoid(actor_logit(actor, x))
}

pub fn critic_forward(critic: &Mlp, x: &[f64]) -> f64 {
    critic.forward(x)[0]
}

/// Map a raw action onto `[p_min, p_max]`.
pub fn scale_action(raw: f64, p_min: f64, p_max: f64) -> f64 {
    p_min + raw * (p_max - p_min)
}

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

/// Log-density of the pre-squash sample `u` under `N(z, std^2)`.
pub fn gaussian_log_prob(u: f64, z: f64, std: f64) -> f64 {
    let d = (u - z) / std;
    -0.5 * d * d - std.ln() - HALF_LN_2PI
}

/// Log-density of the squashed action `sigmoid(u)`.
pub fn squashed_log_prob(u: f64, z: f64, std: f64) -> f64 {
    // ln(sigmoid(u) * (1 - sigmoid(u))) without underflow
    let log_jacobian = -(u.abs() + 2.0 * (-u.abs()).exp().ln_1p());
    gaussian_log_prob(u, z, std) - log_jacobian
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampledAction {
    /// Pre-squash value.
    pub pre_squash: f64,
    pub raw: f64,
    pub log_prob: f64,
}

/// Sample around the mean action `mean` (in `(0, 1)`).
pub fn sample_action(mean: f64, std: f64, rng: &mut ChaCha8Rng) -> SampledAction {
    sample_from_logit((mean / (1.0 - mean)).ln(), std, rng)
}

/// Sample around the actor logit `z`.
pub fn sample_from_logit(z: f64, std: f64, rng: &mut ChaCha8Rng) -> SampledAction {
    let xi: f64 = StandardNormal.sample(rng);
    let u = z + std * xi;
    SampledAction { pre_squash: u, raw: sigmoid(u), log_prob: squashed_log_prob(u, z, std) }
}

/// One episode of experience.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    pub states: Vec<Vec<f64>>,
    pub pre_squash: Vec<f64>,
    pub raw_actions: Vec<f64>,
    pub powers: Vec<f64>,
    pub log_probs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    pub dones: Vec<bool>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

/// Discounted returns and GAE advantages (not normalized). With
/// `lambda = 1` the advantage is the return minus the value.
pub fn compute_returns_and_advantages(rewards: &[f64], values: &[f64], gamma: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    let mut returns = vec![0.0; n];
    let mut adv = vec![0.0; n];
    let (mut ret, mut gae) = (0.0, 0.0);
    for t in (0..n).rev() {
        ret = rewards[t] + gamma * ret;
        returns[t] = ret;
        let next_v = if t + 1 < n { values[t + 1] } else { 0.0 };
        let delta = rewards[t] + gamma * next_v - values[t];
        gae = delta + gamma * lambda * gae;
        adv[t] = gae;
    }
    if lambda == 1.0 {
        for t in 0..n {
            adv[t] = returns[t] - values[t];
        }
    }
    (returns, adv)
}

pub fn normalize(v: &mut [f64]) {
    if v.is_empty() {
        return;
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt().max(1e-8);
    for x in v.iter_mut() {
        *x = (*x - mean) / std;
    }
}

/// One sample of a training batch.
#[derive(Debug, Clone, Copy)]
pub struct Sample<'a> {
    pub state: &'a [f64],
    pub pre_squash: f64,
    /// Pre-squash log-density under the old policy. The squashing Jacobian
    /// cancels in the ratio.
    pub old_log_prob: f64,
    pub advantage: f64,
    pub target: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossStats {
    pub surrogate: f64,
    pub value_loss: f64,
    pub clipped_fraction: f64,
}

/// Clipped surrogate per sample and its derivative w.r.t. the logit.
pub fn clipped_objective(ratio: f64, advantage: f64, clip: f64) -> (f64, bool) {
    let unclipped = ratio * advantage;
    let clipped = ratio.clamp(1.0 - clip, 1.0 + clip) * advantage;
    if clipped < unclipped {
        (clipped, true)
    } else {
        (unclipped, false)
    }
}

/// Gradients of the negated mean surrogate (actor) and of the mean squared
/// value error (critic) over a minibatch.
pub fn minibatch_gradients(params: &PolicyParams, batch: &[Sample], std: f64, clip: f64) -> (Vec<f64>, Vec<f64>, LossStats) {
    let mut ga = vec![0.0; params.actor.len()];
    let mut gc = vec![0.0; params.critic.len()];
    let mut stats = LossStats::default();
    let b = batch.len() as f64;
    for s in batch {
        let (out, cache) = params.actor.forward_cached(s.state);
        let z = out[0];
        let logp = gaussian_log_prob(s.pre_squash, z, std);
        let ratio = (logp - s.old_log_prob).exp();
        let (obj, clipped) = clipped_objective(ratio, s.advantage, clip);
        stats.surrogate += obj / b;
        if clipped {
            stats.clipped_fraction += 1.0 / b;
        } else {
            // d(ratio * A)/dz = A * ratio * (u - z) / std^2
            let d = -s.advantage * ratio * (s.pre_squash - z) / (std * std) / b;
            params.actor.backward(&cache, &[d], &mut ga);
        }
        let (v, cache) = params.critic.forward_cached(s.state);
        let err = v[0] - s.target;
        stats.value_loss += err * err / b;
        params.critic.backward(&cache, &[2.0 * err / b], &mut gc);
    }
    (ga, gc, stats)
}

/// One Adam step on each network.
pub fn clipped_surrogate_update(params: &mut PolicyParams, batch: &[Sample], std: f64, clip: f64) -> LossStats {
    let (ga, gc, stats) = minibatch_gradients(params, batch, std, clip);
    params.adam_actor.step(&mut params.actor.params, &ga);
    params.adam_critic.step(&mut params.critic.params, &gc);
    stats
}
