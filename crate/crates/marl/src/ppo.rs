//! Clipped-surrogate policy updates and critic regression.

use gridmarket_nn::{
    clip_grad_norm, gaussian_entropy, squashed_log_prob, squashed_log_prob_grad, zero_grads, Adam, AdamConfig,
};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::buffer::EnvEpisode;
use crate::gae::normalize;
use crate::policy::{PolicyCache, PolicyNet};
use crate::{Critic, MarlError, TrainConfig};

/// A policy with its optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentLearner {
    pub policy: PolicyNet,
    pub opt: Adam,
}

impl AgentLearner {
    pub fn new(policy: PolicyNet, lr: f64) -> Self {
        let opt = Adam::new(
            AdamConfig {
                lr,
                ..AdamConfig::default()
            },
            &policy.params(),
        );
        Self { policy, opt }
    }
}

/// A contiguous slice of one stored episode, replayed from its stored
/// recurrent state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChunkRef {
    pub episode: usize,
    pub start: usize,
    pub len: usize,
}

/// Chunk order for every epoch, grouped into minibatches.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MinibatchPlan {
    pub epochs: Vec<Vec<Vec<ChunkRef>>>,
}

impl MinibatchPlan {
    pub fn chunks(episode_lens: &[usize], chunk: usize) -> Vec<ChunkRef> {
        let mut out = Vec::new();
        for (episode, &len) in episode_lens.iter().enumerate() {
            for start in (0..len).step_by(chunk) {
                out.push(ChunkRef {
                    episode,
                    start,
                    len: chunk.min(len - start),
                });
            }
        }
        out
    }

    pub fn new<R: Rng + ?Sized>(
        episode_lens: &[usize],
        chunk: usize,
        minibatch_steps: usize,
        epochs: usize,
        rng: &mut R,
    ) -> Self {
        let all = Self::chunks(episode_lens, chunk);
        let per = (minibatch_steps / chunk).max(1);
        let epochs = (0..epochs)
            .map(|_| {
                let mut order = all.clone();
                order.shuffle(rng);
                order.chunks(per).map(|c| c.to_vec()).collect()
            })
            .collect();
        Self { epochs }
    }

    /// One epoch holding every chunk in a single minibatch.
    pub fn whole(episode_lens: &[usize], chunk: usize) -> Self {
        Self {
            epochs: vec![vec![Self::chunks(episode_lens, chunk)]],
        }
    }
}

/// One agent's view of a batch of episodes.
#[derive(Debug, Clone, Copy)]
pub struct AgentBatch<'a> {
    pub episodes: &'a [EnvEpisode],
    pub agent: usize,
    /// Unnormalized advantages indexed `[episode][t]`.
    pub advantages: &'a [Vec<f64>],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    Clipped,
    /// Plain `-A log pi`, for comparison with the clipped objective.
    Vanilla,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Losses {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
}

/// Clipped surrogate loss of one sample and its derivative with respect to
/// the new log-probability.
pub fn surrogate_coefficient(ratio: f64, adv: f64, clip_eps: f64) -> (f64, f64) {
    let unclipped = ratio * adv;
    let clipped = ratio.clamp(1.0 - clip_eps, 1.0 + clip_eps) * adv;
    if unclipped <= clipped {
        (-unclipped, -adv * ratio)
    } else {
        (-clipped, 0.0)
    }
}

/// Derivative of `-A log pi` with respect to `log pi`.
pub fn vanilla_coefficient(adv: f64) -> f64 {
    -adv
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MinibatchStats {
    /// Surrogate minus the entropy bonus, averaged over steps.
    pub loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
}

type ChunkForward = (Vec<Vec<f64>>, PolicyCache);

fn forward_chunks(policy: &PolicyNet, batch: &AgentBatch, chunks: &[ChunkRef]) -> Result<Vec<ChunkForward>, MarlError> {
    chunks
        .iter()
        .map(|c| {
            let steps = &batch.episodes[c.episode].steps[c.start..c.start + c.len];
            let xs: Vec<Vec<f64>> = steps.iter().map(|s| s.obs[batch.agent].clone()).collect();
            let cache = policy.forward_sequence(&xs, &steps[0].lstm[batch.agent])?;
            Ok((xs, cache))
        })
        .collect()
}

fn normalized_advantages(batch: &AgentBatch, chunks: &[ChunkRef]) -> Vec<f64> {
    let mut adv: Vec<f64> = chunks
        .iter()
        .flat_map(|c| batch.advantages[c.episode][c.start..c.start + c.len].iter().copied())
        .collect();
    normalize(&mut adv);
    adv
}

fn minibatch_pass(
    policy: &mut PolicyNet,
    batch: &AgentBatch,
    chunks: &[ChunkRef],
    config: &TrainConfig,
    objective: Objective,
    backward: bool,
) -> Result<MinibatchStats, MarlError> {
    let runs = forward_chunks(policy, batch, chunks)?;
    let adv = normalized_advantages(batch, chunks);
    let n = adv.len().max(1) as f64;
    let log_std = policy.log_std();
    let entropy = gaussian_entropy(&log_std);
    let mut surrogate = 0.0;
    let mut clipped = 0usize;
    let mut dlog_std = vec![0.0; log_std.len()];
    let mut k = 0;
    let mut grads = Vec::with_capacity(runs.len());
    for (c, (_, cache)) in chunks.iter().zip(&runs) {
        let mut dmeans = Vec::with_capacity(c.len);
        for (j, mean) in cache.means.iter().enumerate() {
            let step = &batch.episodes[c.episode].steps[c.start + j];
            let u = &step.u[batch.agent];
            let logp = squashed_log_prob(mean, &log_std, u);
            let ratio = (logp - step.log_prob[batch.agent]).exp();
            let a = adv[k];
            k += 1;
            let (loss, coef) = match objective {
                Objective::Clipped => surrogate_coefficient(ratio, a, config.clip_eps),
                Objective::Vanilla => (-a * logp, vanilla_coefficient(a)),
            };
            if (ratio - 1.0).abs() > config.clip_eps {
                clipped += 1;
            }
            surrogate += loss;
            let (dm, dls) = squashed_log_prob_grad(mean, &log_std, u);
            for (acc, g) in dlog_std.iter_mut().zip(&dls) {
                *acc += coef * g / n;
            }
            dmeans.push(dm.iter().map(|g| coef * g / n).collect::<Vec<f64>>());
        }
        grads.push(dmeans);
    }
    if backward {
        for ((xs, cache), dmeans) in runs.iter().zip(&grads) {
            policy.backward_sequence(xs, cache, dmeans)?;
        }
        for (g, d) in policy.log_std.grad.iter_mut().zip(&dlog_std) {
            *g += d - config.entropy_coef;
        }
    }
    Ok(MinibatchStats {
        loss: surrogate / n - config.entropy_coef * entropy,
        entropy,
        clip_fraction: clipped as f64 / n,
    })
}

/// Zeroes the policy's gradients and accumulates those of one minibatch.
pub fn accumulate_policy_gradient(
    policy: &mut PolicyNet,
    batch: &AgentBatch,
    chunks: &[ChunkRef],
    config: &TrainConfig,
    objective: Objective,
) -> Result<MinibatchStats, MarlError> {
    zero_grads(&mut policy.params_mut());
    minibatch_pass(policy, batch, chunks, config, objective, true)
}

/// Loss of one minibatch under the current parameters, without gradients.
pub fn surrogate_loss(
    policy: &PolicyNet,
    batch: &AgentBatch,
    chunks: &[ChunkRef],
    config: &TrainConfig,
) -> Result<MinibatchStats, MarlError> {
    let mut p = policy.clone();
    minibatch_pass(&mut p, batch, chunks, config, Objective::Clipped, false)
}

/// Runs every epoch and minibatch of `plan` on one agent's policy.
pub fn ppo_update(
    learner: &mut AgentLearner,
    batch: &AgentBatch,
    plan: &MinibatchPlan,
    config: &TrainConfig,
) -> Result<Losses, MarlError> {
    let mut sum = Losses::default();
    let mut count = 0usize;
    for epoch in &plan.epochs {
        for chunks in epoch {
            let stats = accumulate_policy_gradient(&mut learner.policy, batch, chunks, config, Objective::Clipped)?;
            let mut params = learner.policy.params_mut();
            clip_grad_norm(&mut params, config.max_grad_norm);
            learner.opt.update(&mut params);
            learner.policy.clamp_log_std();
            sum.policy_loss += stats.loss;
            sum.entropy += stats.entropy;
            sum.clip_fraction += stats.clip_fraction;
            count += 1;
        }
    }
    if !learner.policy.is_finite() {
        return Err(MarlError::NonFinite(format!("policy of agent {}", batch.agent)));
    }
    let c = count.max(1) as f64;
    Ok(Losses {
        policy_loss: sum.policy_loss / c,
        entropy: sum.entropy / c,
        clip_fraction: sum.clip_fraction / c,
        value_loss: 0.0,
    })
}

/// Regresses the critic on returns indexed `[episode][t][agent]`. Returns
/// the mean squared error over all passes.
pub fn critic_update<R: Rng + ?Sized>(
    critic: &mut Critic,
    opt: &mut Adam,
    episodes: &[EnvEpisode],
    returns: &[Vec<Vec<f64>>],
    config: &TrainConfig,
    rng: &mut R,
) -> Result<f64, MarlError> {
    let mut samples: Vec<(usize, usize)> = episodes
        .iter()
        .enumerate()
        .flat_map(|(e, ep)| (0..ep.len()).map(move |t| (e, t)))
        .collect();
    let n_agents = critic.n_agents() as f64;
    let mut sse = 0.0;
    let mut seen = 0usize;
    for _ in 0..config.epochs {
        samples.shuffle(rng);
        for mb in samples.chunks(config.minibatch) {
            let mut params = critic.params_mut();
            zero_grads(&mut params);
            let weight = config.value_coef / (mb.len() as f64 * n_agents);
            for &(e, t) in mb {
                let s = &episodes[e].steps[t];
                sse += critic.accumulate(&s.global, &s.obs, &returns[e][t], weight)?;
            }
            let mut params = critic.params_mut();
            clip_grad_norm(&mut params, config.max_grad_norm);
            opt.update(&mut params);
            seen += mb.len();
        }
    }
    if !critic.is_finite() {
        return Err(MarlError::NonFinite("critic".into()));
    }
    Ok(sse / (seen.max(1) as f64 * n_agents))
}
