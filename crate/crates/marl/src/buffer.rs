//! On-policy trajectory storage.

use gridmarket_core::env::{ActionTriple, EpisodeMetrics, EpisodeSeeds, MarketEnv};
use gridmarket_nn::LstmState;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::policy::{sample_action, PolicyNet};
use crate::{Critic, FeatureScaler, MarlError};

/// Everything recorded for one hour of one environment.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    /// Scaled local observations, one per agent.
    pub obs: Vec<Vec<f64>>,
    /// Scaled global state; only the critic reads it.
    pub global: Vec<f64>,
    /// Pre-squash samples.
    pub u: Vec<[f64; 3]>,
    pub log_prob: Vec<f64>,
    /// Unscaled environment rewards.
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    /// Recurrent state each policy held before acting.
    pub lstm: Vec<LstmState>,
}

/// One complete episode from one environment.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvEpisode {
    pub start_day: usize,
    pub steps: Vec<StepRecord>,
    pub metrics: EpisodeMetrics,
}

impl EnvEpisode {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn agent_rewards(&self, i: usize) -> Vec<f64> {
        self.steps.iter().map(|s| s.rewards[i]).collect()
    }

    pub fn agent_values(&self, i: usize) -> Vec<f64> {
        self.steps.iter().map(|s| s.values[i]).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RolloutSeeds {
    pub start_day: usize,
    pub env: EpisodeSeeds,
    /// Seeds action sampling.
    pub sampling: u64,
}

/// Runs one full episode with sampled actions from freshly zeroed recurrent
/// states.
pub fn collect_rollout(
    env: &mut MarketEnv,
    policies: &[PolicyNet],
    critic: &Critic,
    scaler: &FeatureScaler,
    seeds: RolloutSeeds,
) -> Result<EnvEpisode, MarlError> {
    let n = env.n_agents();
    let mut rng = ChaCha8Rng::seed_from_u64(seeds.sampling);
    let mut raw_obs = env.reset(seeds.start_day, seeds.env)?;
    let mut states: Vec<LstmState> = policies.iter().map(|p| p.initial_state()).collect();
    let mut metrics = EpisodeMetrics::new(n);
    let mut steps = Vec::with_capacity(env.config().horizon);
    while !env.done() {
        let obs: Vec<Vec<f64>> = raw_obs
            .iter()
            .enumerate()
            .map(|(i, o)| scaler.observation(i, o))
            .collect();
        let global = scaler.global_state(&env.global_state(), env.observation_len());
        let values = critic.values(&global, &obs)?;
        let mut u = Vec::with_capacity(n);
        let mut log_prob = Vec::with_capacity(n);
        let mut actions = Vec::with_capacity(n);
        let mut next_states = Vec::with_capacity(n);
        for (i, policy) in policies.iter().enumerate() {
            let (mean, next) = policy.step(&obs[i], &states[i])?;
            let (ui, a, lp) = sample_action(&mean, &policy.log_std(), &mut rng);
            u.push(ui);
            log_prob.push(lp);
            actions.push(ActionTriple::from_slice(&a));
            next_states.push(next);
        }
        let out = env.step(&actions)?;
        metrics.record(&out.record);
        let lstm = std::mem::replace(&mut states, next_states);
        steps.push(StepRecord {
            obs,
            global,
            u,
            log_prob,
            rewards: out.rewards,
            values,
            lstm,
        });
        raw_obs = out.observations;
    }
    Ok(EnvEpisode {
        start_day: seeds.start_day,
        steps,
        metrics,
    })
}
