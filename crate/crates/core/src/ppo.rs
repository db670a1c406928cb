//! Clipped-surrogate PPO with generalized advantage estimation over the
//! discrete voltage-signal action space.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{clip_grad_norm, entropy, log_softmax, softmax, Network, PolicyBundle};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PpoHyperparams {
    pub gamma: f64,
    pub lambda: f64,
    pub clip_epsilon: f64,
    pub epochs_per_update: usize,
    pub minibatch_size: usize,
    pub rollout_horizon: usize,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub max_grad_norm: f64,
    pub learning_rate: f64,
    pub conv_filters: usize,
}

impl Default for PpoHyperparams {
    fn default() -> Self {
        PpoHyperparams {
            gamma: 0.99,
            lambda: 0.95,
            clip_epsilon: 0.2,
            epochs_per_update: 4,
            minibatch_size: 64,
            rollout_horizon: crate::config::EPISODE_STEPS,
            entropy_coef: 0.01,
            value_coef: 0.5,
            max_grad_norm: 0.5,
            learning_rate: 3e-5,
            conv_filters: 8,
        }
    }
}

impl PpoHyperparams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if !(0.0 < self.gamma && self.gamma <= 1.0) {
            return bad("gamma must be in (0, 1]");
        }
        if !(0.0 < self.lambda && self.lambda <= 1.0) {
            return bad("lambda must be in (0, 1]");
        }
        if !(0.0 < self.clip_epsilon && self.clip_epsilon < 1.0) {
            return bad("clip_epsilon must be in (0, 1)");
        }
        if self.epochs_per_update == 0 || self.minibatch_size == 0 || self.rollout_horizon == 0 {
            return bad("epochs, minibatch size, and horizon must be nonzero");
        }
        if self.learning_rate < 0.0 || self.entropy_coef < 0.0 || self.value_coef < 0.0 {
            return bad("coefficients must be nonnegative");
        }
        if self.conv_filters == 0 {
            return bad("conv_filters must be nonzero");
        }
        Ok(())
    }
}

/// One step of experience.
#[derive(Clone, Debug)]
pub struct Transition {
    pub observation: Vec<f64>,
    pub action: usize,
    pub log_prob: f64,
    pub value: f64,
    pub reward: f64,
    pub done: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SelectionMode {
    Sample,
    Greedy,
}

#[derive(Clone, Copy, Debug)]
pub struct ActionChoice {
    pub index: usize,
    pub log_prob: f64,
    pub value: f64,
}

/// Pick an action from the actor distribution and evaluate the critic.
/// Greedy mode takes the argmax probability, ties broken by lowest index.
pub fn select_action(
    actor: &Network,
    critic: &Network,
    obs: &[f64],
    mode: SelectionMode,
    rng: &mut ChaCha8Rng,
) -> Result<ActionChoice> {
    let logits = actor.forward(obs)?.output;
    let log_probs = log_softmax(&logits);
    let probs = softmax(&logits);
    let value = critic.forward(obs)?.output[0];
    let index = match mode {
        SelectionMode::Greedy => {
            let mut best = 0;
            for (i, &p) in probs.iter().enumerate() {
                if p > probs[best] {
                    best = i;
                }
            }
            best
        }
        SelectionMode::Sample => {
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut chosen = probs.len() - 1;
            for (i, &p) in probs.iter().enumerate() {
                acc += p;
                if u < acc {
                    chosen = i;
                    break;
                }
            }
            chosen
        }
    };
    Ok(ActionChoice {
        index,
        log_prob: log_probs[index],
        value,
    })
}

/// Nonpositive quadratic penalty on lift deviation from the episode goal.
pub fn reward_from_lift(lift: f64, goal_lift: f64) -> f64 {
    let delta = lift - goal_lift;
    -10.0 * delta * delta
}

/// GAE advantages and returns. Advantages are raw here; normalization happens
/// inside the update.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    bootstrap_value: f64,
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if rewards.len() != values.len() {
        return Err(Error::LengthMismatch(rewards.len(), values.len()));
    }
    let n = rewards.len();
    let mut advantages = vec![0.0; n];
    let mut acc = 0.0;
    for t in (0..n).rev() {
        let next_value = if t + 1 < n { values[t + 1] } else { bootstrap_value };
        let delta = rewards[t] + gamma * next_value - values[t];
        acc = delta + gamma * lambda * acc;
        advantages[t] = acc;
    }
    let returns = advantages
        .iter()
        .zip(values)
        .map(|(a, v)| a + v)
        .collect();
    Ok((advantages, returns))
}

#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
pub struct UpdateStats {
    pub mean_ratio: f64,
    pub clip_fraction: f64,
    pub actor_loss: f64,
    pub critic_loss: f64,
    pub entropy: f64,
    pub actor_grad_norm: f64,
    pub critic_grad_norm: f64,
}

/// One PPO update over a rollout: shuffled minibatches for several epochs,
/// clipped surrogate plus entropy bonus for the actor, squared-error value
/// loss for the critic, gradient-norm clipping, Adam.
pub fn ppo_update(
    bundle: &mut PolicyBundle,
    rollout: &[Transition],
    hp: &PpoHyperparams,
    rng: &mut ChaCha8Rng,
) -> Result<UpdateStats> {
    if rollout.is_empty() {
        return Err(Error::InvalidConfig("empty rollout".into()));
    }
    let n = rollout.len();
    let rewards: Vec<f64> = rollout.iter().map(|t| t.reward).collect();
    let values: Vec<f64> = rollout.iter().map(|t| t.value).collect();
    // Episodic rollouts terminate; bootstrap value is zero past the end.
    let bootstrap = if rollout[n - 1].done { 0.0 } else { values[n - 1] };
    let (mut advantages, returns) = compute_gae(&rewards, &values, bootstrap, hp.gamma, hp.lambda)?;

    // Per-rollout normalization, skipped for degenerate rollouts.
    let mean = advantages.iter().sum::<f64>() / n as f64;
    let var = advantages.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n as f64;
    if var >= 1e-12 {
        let std = var.sqrt();
        for a in &mut advantages {
            *a = (*a - mean) / std;
        }
    }

    let mut stats = UpdateStats::default();
    let mut sample_count = 0.0;
    let mut actor_grads = vec![0.0; bundle.actor.theta.len()];
    let mut critic_grads = vec![0.0; bundle.critic.theta.len()];

    for _ in 0..hp.epochs_per_update {
        let mut order: Vec<usize> = (0..n).collect();
        // Fisher-Yates driven by the seeded stream.
        for i in (1..n).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        for batch in order.chunks(hp.minibatch_size) {
            let bsz = batch.len() as f64;
            actor_grads.iter_mut().for_each(|g| *g = 0.0);
            critic_grads.iter_mut().for_each(|g| *g = 0.0);
            let mut batch_actor_loss = 0.0;
            let mut batch_critic_loss = 0.0;

            for &idx in batch {
                let tr = &rollout[idx];
                let adv = advantages[idx];

                // Actor: clipped surrogate plus entropy bonus.
                let cache = bundle.actor.forward(&tr.observation)?;
                let log_probs = log_softmax(&cache.output);
                let probs = softmax(&cache.output);
                let ratio = (log_probs[tr.action] - tr.log_prob).exp();
                let clipped_ratio = ratio.clamp(1.0 - hp.clip_epsilon, 1.0 + hp.clip_epsilon);
                let unclipped = ratio * adv;
                let clipped = clipped_ratio * adv;
                let surrogate = unclipped.min(clipped);
                let ent = entropy(&probs);

                stats.mean_ratio += ratio;
                if ratio < 1.0 - hp.clip_epsilon || ratio > 1.0 + hp.clip_epsilon {
                    stats.clip_fraction += 1.0;
                }
                stats.entropy += ent;
                batch_actor_loss += -surrogate - hp.entropy_coef * ent;

                // d surrogate / d ratio: the min picks a branch; the clipped
                // branch has zero slope outside the clip interval.
                let d_surr_d_ratio = if unclipped <= clipped {
                    adv
                } else if (1.0 - hp.clip_epsilon..=1.0 + hp.clip_epsilon).contains(&ratio) {
                    adv
                } else {
                    0.0
                };
                // Loss gradient w.r.t. logits, averaged over the batch.
                let mut d_logits = vec![0.0; probs.len()];
                for (j, d) in d_logits.iter_mut().enumerate() {
                    let ind = if j == tr.action { 1.0 } else { 0.0 };
                    let d_ratio = ratio * (ind - probs[j]);
                    let d_ent = -probs[j] * (log_probs[j] + ent);
                    *d = (-d_surr_d_ratio * d_ratio - hp.entropy_coef * d_ent) / bsz;
                }
                bundle.actor.backward_into(&cache, &d_logits, &mut actor_grads);

                // Critic: squared error to the returns.
                let vcache = bundle.critic.forward(&tr.observation)?;
                let v = vcache.output[0];
                let err = v - returns[idx];
                batch_critic_loss += hp.value_coef * err * err;
                let d_v = [hp.value_coef * 2.0 * err / bsz];
                bundle.critic.backward_into(&vcache, &d_v, &mut critic_grads);
            }

            batch_actor_loss /= bsz;
            batch_critic_loss /= bsz;
            if !batch_actor_loss.is_finite() || !batch_critic_loss.is_finite() {
                return Err(Error::NonFiniteLoss(format!(
                    "actor {batch_actor_loss}, critic {batch_critic_loss}"
                )));
            }
            stats.actor_loss += batch_actor_loss * bsz;
            stats.critic_loss += batch_critic_loss * bsz;
            sample_count += bsz;

            stats.actor_grad_norm = clip_grad_norm(&mut actor_grads, hp.max_grad_norm);
            stats.critic_grad_norm = clip_grad_norm(&mut critic_grads, hp.max_grad_norm);
            bundle.actor_opt.step(&mut bundle.actor.theta, &actor_grads)?;
            bundle.critic_opt.step(&mut bundle.critic.theta, &critic_grads)?;
        }
    }

    stats.mean_ratio /= sample_count;
    stats.clip_fraction /= sample_count;
    stats.entropy /= sample_count;
    stats.actor_loss /= sample_count;
    stats.critic_loss /= sample_count;
    Ok(stats)
}
