//! The training loop: rollouts, advantages, updates, checkpoints.

use std::ops::Range;
use std::path::Path;

use gridmarket_core::env::{EpisodeSeeds, MarketEnv};
use gridmarket_core::par::{self, Execution};
use gridmarket_nn::{Adam, AdamConfig, Checkpoint, NamedTensor, NnError, Param};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::buffer::{collect_rollout, EnvEpisode, RolloutSeeds};
use crate::gae::compute_gae;
use crate::policy::PolicyNet;
use crate::ppo::{critic_update, ppo_update, AgentBatch, AgentLearner, Losses, MinibatchPlan};
use crate::{Critic, FeatureScaler, MarlError, TrainConfig, Variant, VariantSpec};

const TAG_INIT: u64 = 1;
const TAG_ROLLOUT: u64 = 2;
const TAG_PLAN: u64 = 3;
const TAG_CRITIC: u64 = 4;

/// Mixes `tags` into `base` so that every distinct tag path gets an
/// unrelated stream.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    tags.iter().fold(mix(base), |acc, &t| mix(acc ^ mix(t)))
}

/// Reward statistics of one training episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeSummary {
    /// 1-based episode number.
    pub episode: usize,
    pub start_day: usize,
    /// Community reward per hour.
    pub mean_reward: f64,
    /// Per-agent reward per hour.
    pub agent_rewards: Vec<f64>,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationReport {
    pub iteration: u64,
    pub episodes: Vec<EpisodeSummary>,
    pub losses: Losses,
}

#[derive(Debug, Clone)]
pub struct Trainer {
    config: TrainConfig,
    spec: VariantSpec,
    seed: u64,
    envs: Vec<MarketEnv>,
    scaler: FeatureScaler,
    learners: Vec<AgentLearner>,
    critic: Critic,
    critic_opt: Adam,
    iteration: u64,
    episodes: usize,
    train_days: Range<usize>,
    exec: Execution,
}

impl Trainer {
    pub fn new(env: MarketEnv, variant: Variant, config: TrainConfig, seed: u64) -> Result<Self, MarlError> {
        config.validate()?;
        let n = env.n_agents();
        let obs_len = env.observation_len();
        let spec = variant.spec();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[TAG_INIT]));
        let learners = (0..n)
            .map(|i| {
                let p = PolicyNet::new(
                    &format!("agent{i}"),
                    obs_len,
                    config.policy_hidden,
                    config.init_log_std,
                    &mut rng,
                );
                AgentLearner::new(p, config.lr)
            })
            .collect();
        let critic = Critic::new(spec, n, obs_len, &mut rng);
        let critic_opt = Adam::new(
            AdamConfig {
                lr: config.critic_lr,
                ..AdamConfig::default()
            },
            &critic.params(),
        );
        let scaler = FeatureScaler::new(env.params(), env.config());
        let train_days = 0..env.n_start_days();
        Ok(Self {
            envs: vec![env; config.n_envs],
            config,
            spec,
            seed,
            scaler,
            learners,
            critic,
            critic_opt,
            iteration: 0,
            episodes: 0,
            train_days,
            exec: Execution::default(),
        })
    }

    /// Restricts the start days episodes are drawn from.
    pub fn set_train_days(&mut self, days: Range<usize>) -> Result<(), MarlError> {
        if days.is_empty() || days.end > self.envs[0].n_start_days() {
            return Err(MarlError::Config {
                field: "train_days",
                reason: format!(
                    "{days:?} is empty or exceeds the {} available start days",
                    self.envs[0].n_start_days()
                ),
            });
        }
        self.train_days = days;
        Ok(())
    }

    pub fn set_execution(&mut self, exec: Execution) {
        self.exec = exec;
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn variant(&self) -> Variant {
        self.spec.variant
    }

    pub fn scaler(&self) -> &FeatureScaler {
        &self.scaler
    }

    pub fn critic(&self) -> &Critic {
        &self.critic
    }

    pub fn episodes_done(&self) -> usize {
        self.episodes
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn finished(&self) -> bool {
        self.episodes >= self.config.episodes
    }

    pub fn policies(&self) -> Vec<PolicyNet> {
        self.learners.iter().map(|l| l.policy.clone()).collect()
    }

    fn rollout_seeds(&self, env_index: usize) -> RolloutSeeds {
        let mut rng =
            ChaCha8Rng::seed_from_u64(derive_seed(self.seed, &[TAG_ROLLOUT, self.iteration, env_index as u64]));
        RolloutSeeds {
            start_day: rng.random_range(self.train_days.clone()),
            env: EpisodeSeeds {
                noise: rng.random(),
                auction: rng.random(),
            },
            sampling: rng.random(),
        }
    }

    /// Collects one episode per environment (fewer when close to the
    /// episode budget) and updates every network once.
    pub fn iterate(&mut self) -> Result<IterationReport, MarlError> {
        let remaining = self.config.episodes.saturating_sub(self.episodes).max(1);
        let n_env = self.config.n_envs.min(remaining);
        let seeds: Vec<RolloutSeeds> = (0..n_env).map(|e| self.rollout_seeds(e)).collect();
        let snapshot = self.policies();
        let (critic, scaler) = (&self.critic, &self.scaler);
        let rollouts = par::map_mut(self.exec, &mut self.envs[..n_env], |e, env| {
            collect_rollout(env, &snapshot, critic, scaler, seeds[e])
        });
        let episodes: Vec<EnvEpisode> = rollouts.into_iter().collect::<Result<_, _>>()?;

        let n_agents = self.learners.len();
        let cfg = &self.config;
        // advantages[agent][episode][t], returns[episode][t][agent]
        let mut advantages = vec![Vec::with_capacity(n_env); n_agents];
        let mut returns: Vec<Vec<Vec<f64>>> = episodes.iter().map(|ep| vec![vec![0.0; n_agents]; ep.len()]).collect();
        for (e, ep) in episodes.iter().enumerate() {
            for (i, adv_i) in advantages.iter_mut().enumerate() {
                let r: Vec<f64> = ep.agent_rewards(i).iter().map(|r| r * cfg.reward_scale).collect();
                let (adv, ret) = compute_gae(&r, &ep.agent_values(i), 0.0, cfg.gamma, cfg.gae_lambda);
                for (t, v) in ret.into_iter().enumerate() {
                    returns[e][t][i] = v;
                }
                adv_i.push(adv);
            }
        }

        let lens: Vec<usize> = episodes.iter().map(|e| e.len()).collect();
        let mut plan_rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, &[TAG_PLAN, self.iteration]));
        let plan = MinibatchPlan::new(&lens, cfg.bptt_chunk, cfg.minibatch, cfg.epochs, &mut plan_rng);
        let mut critic_rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, &[TAG_CRITIC, self.iteration]));
        let exec = self.exec;
        let (policy_results, value_loss) = par::join(
            exec,
            || {
                par::map_mut(exec, &mut self.learners, |i, learner| {
                    let batch = AgentBatch {
                        episodes: &episodes,
                        agent: i,
                        advantages: &advantages[i],
                    };
                    ppo_update(learner, &batch, &plan, cfg)
                })
            },
            || {
                critic_update(
                    &mut self.critic,
                    &mut self.critic_opt,
                    &episodes,
                    &returns,
                    cfg,
                    &mut critic_rng,
                )
            },
        );
        let value_loss = value_loss?;
        let mut losses = Losses {
            value_loss,
            ..Losses::default()
        };
        for r in policy_results {
            let l = r?;
            losses.policy_loss += l.policy_loss / n_agents as f64;
            losses.entropy += l.entropy / n_agents as f64;
            losses.clip_fraction += l.clip_fraction / n_agents as f64;
        }

        let summaries = episodes
            .iter()
            .enumerate()
            .map(|(e, ep)| {
                let h = ep.len().max(1) as f64;
                let agent_rewards: Vec<f64> = (0..n_agents)
                    .map(|i| ep.agent_rewards(i).iter().sum::<f64>() / h)
                    .collect();
                EpisodeSummary {
                    episode: self.episodes + e + 1,
                    start_day: ep.start_day,
                    mean_reward: agent_rewards.iter().sum(),
                    agent_rewards,
                    policy_loss: losses.policy_loss,
                    value_loss: losses.value_loss,
                    entropy: losses.entropy,
                }
            })
            .collect();
        self.episodes += n_env;
        self.iteration += 1;
        Ok(IterationReport {
            iteration: self.iteration,
            episodes: summaries,
            losses,
        })
    }

    /// Iterates until the episode budget is spent.
    pub fn train<F: FnMut(&IterationReport)>(&mut self, mut on_iteration: F) -> Result<(), MarlError> {
        while !self.finished() {
            let report = self.iterate()?;
            on_iteration(&report);
        }
        Ok(())
    }

    /// Raises the episode budget, e.g. to continue a resumed run.
    pub fn set_episode_budget(&mut self, episodes: usize) {
        self.config.episodes = episodes;
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        ck.set_meta("variant", self.spec.variant.name());
        ck.set_meta("n_agents", self.learners.len());
        ck.set_meta("obs_len", self.envs[0].observation_len());
        ck.set_meta("policy_hidden", self.config.policy_hidden);
        ck.set_meta("iteration", self.iteration);
        ck.set_meta("episodes", self.episodes);
        ck.set_meta("seed", self.seed);
        for (i, l) in self.learners.iter().enumerate() {
            let params = l.policy.params();
            ck.push_params(&params);
            push_adam(&mut ck, &format!("agent{i}"), &l.opt, &params);
        }
        let params = self.critic.params();
        ck.push_params(&params);
        push_adam(&mut ck, "critic", &self.critic_opt, &params);
        ck
    }

    /// Loads parameters, optimizer state and counters from a checkpoint
    /// written by a trainer with the same layout.
    pub fn restore(&mut self, ck: &Checkpoint) -> Result<(), MarlError> {
        let expect = [
            ("variant", self.spec.variant.name().to_string()),
            ("n_agents", self.learners.len().to_string()),
            ("obs_len", self.envs[0].observation_len().to_string()),
            ("policy_hidden", self.config.policy_hidden.to_string()),
        ];
        let problems: Vec<String> = expect
            .iter()
            .filter(|(k, v)| ck.meta(k) != Some(v.as_str()))
            .map(|(k, v)| format!("meta `{k}` is {:?}, expected {v:?}", ck.meta(k)))
            .collect();
        if !problems.is_empty() {
            return Err(NnError::Incompatible(problems).into());
        }
        for (i, l) in self.learners.iter_mut().enumerate() {
            ck.load_params(&mut l.policy.params_mut())?;
            load_adam(ck, &format!("agent{i}"), &mut l.opt, &l.policy.params())?;
        }
        ck.load_params(&mut self.critic.params_mut())?;
        load_adam(ck, "critic", &mut self.critic_opt, &self.critic.params())?;
        self.iteration = meta_number(ck, "iteration")?;
        self.episodes = meta_number(ck, "episodes")? as usize;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), MarlError> {
        Ok(self.checkpoint().write(path)?)
    }
}

fn meta_number(ck: &Checkpoint, key: &str) -> Result<u64, MarlError> {
    ck.meta(key)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| NnError::Incompatible(vec![format!("meta `{key}` missing or not a number")]).into())
}

fn push_adam(ck: &mut Checkpoint, owner: &str, opt: &Adam, params: &[&Param]) {
    ck.set_meta(&format!("{owner}.adam_step"), opt.step);
    for ((p, m), v) in params.iter().zip(&opt.m).zip(&opt.v) {
        ck.push(NamedTensor::new(
            format!("adam_m.{}", p.name),
            p.rows,
            p.cols,
            m.clone(),
        ));
        ck.push(NamedTensor::new(
            format!("adam_v.{}", p.name),
            p.rows,
            p.cols,
            v.clone(),
        ));
    }
}

fn load_adam(ck: &Checkpoint, owner: &str, opt: &mut Adam, params: &[&Param]) -> Result<(), MarlError> {
    opt.step = meta_number(ck, &format!("{owner}.adam_step"))?;
    let mut problems = Vec::new();
    for (k, p) in params.iter().enumerate() {
        for (prefix, dst) in [("adam_m", &mut opt.m[k]), ("adam_v", &mut opt.v[k])] {
            let name = format!("{prefix}.{}", p.name);
            match ck.get(&name) {
                Some(t) if t.values.len() == dst.len() => dst.copy_from_slice(&t.values),
                _ => problems.push(format!("missing or misshapen tensor `{name}`")),
            }
        }
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(NnError::Incompatible(problems).into())
    }
}

/// Rebuilds the policies stored in a checkpoint, for evaluation.
pub fn policies_from_checkpoint(ck: &Checkpoint, obs_len: usize) -> Result<(Variant, Vec<PolicyNet>), MarlError> {
    let variant: Variant = ck
        .meta("variant")
        .ok_or_else(|| NnError::Incompatible(vec!["meta `variant` missing".into()]))?
        .parse()?;
    let n = meta_number(ck, "n_agents")? as usize;
    let hidden = meta_number(ck, "policy_hidden")? as usize;
    let stored_obs = meta_number(ck, "obs_len")? as usize;
    if stored_obs != obs_len {
        return Err(NnError::Incompatible(vec![format!(
            "checkpoint observation length {stored_obs}, environment has {obs_len}"
        )])
        .into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut policies: Vec<PolicyNet> = (0..n)
        .map(|i| PolicyNet::new(&format!("agent{i}"), obs_len, hidden, 0.0, &mut rng))
        .collect();
    for p in &mut policies {
        ck.load_params(&mut p.params_mut())?;
    }
    Ok((variant, policies))
}
