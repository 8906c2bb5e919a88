//! Decentralized evaluation rollouts.

use gridmarket_core::env::{ActionTriple, EpisodeMetrics, EpisodeSeeds, MarketEnv};
use gridmarket_core::par::{self, Execution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::policy::{sample_action, PolicyNet};
use crate::trainer::derive_seed;
use crate::{FeatureScaler, MarlError};

const TAG_EVAL: u64 = 5;
const TAG_ACT: u64 = 6;

/// How actions are chosen during evaluation.
#[derive(Debug, Clone, Copy)]
pub enum EvalPolicy<'a> {
    /// Squashed head means.
    Deterministic(&'a [PolicyNet]),
    /// Stochastic actions seeded per day.
    Sampled(&'a [PolicyNet], u64),
    /// Never quote; storage cap fully open.
    Abstain,
    /// Uniform raw actions seeded per day.
    Random(u64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DayResult {
    pub start_day: usize,
    pub metrics: EpisodeMetrics,
}

impl DayResult {
    pub fn community_profit(&self) -> f64 {
        self.metrics.community().total_profit
    }
}

/// Environment seeds for an evaluation day. Shared by every policy and
/// mechanism evaluated with the same `seed`.
pub fn eval_seeds(seed: u64, start_day: usize) -> EpisodeSeeds {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[TAG_EVAL, start_day as u64]));
    EpisodeSeeds {
        noise: rng.random(),
        auction: rng.random(),
    }
}

fn run_day(
    env: &mut MarketEnv,
    scaler: &FeatureScaler,
    policy: &EvalPolicy,
    start_day: usize,
    seed: u64,
) -> Result<DayResult, MarlError> {
    let n = env.n_agents();
    let mut raw = env.reset(start_day, eval_seeds(seed, start_day))?;
    let act_seed = match policy {
        EvalPolicy::Sampled(_, s) | EvalPolicy::Random(s) => *s,
        _ => 0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(act_seed, &[TAG_ACT, start_day as u64]));
    let mut states = match policy {
        EvalPolicy::Deterministic(ps) | EvalPolicy::Sampled(ps, _) => ps.iter().map(|p| p.initial_state()).collect(),
        _ => Vec::new(),
    };
    let mut metrics = EpisodeMetrics::new(n);
    while !env.done() {
        let actions: Vec<ActionTriple> = match policy {
            EvalPolicy::Deterministic(ps) | EvalPolicy::Sampled(ps, _) => {
                let mut out = Vec::with_capacity(n);
                for (i, p) in ps.iter().enumerate() {
                    let (mean, next) = p.step(&scaler.observation(i, &raw[i]), &states[i])?;
                    states[i] = next;
                    let a = if matches!(policy, EvalPolicy::Sampled(..)) {
                        sample_action(&mean, &p.log_std(), &mut rng).1
                    } else {
                        [mean[0].tanh(), mean[1].tanh(), mean[2].tanh()]
                    };
                    out.push(ActionTriple::from_slice(&a));
                }
                out
            }
            EvalPolicy::Abstain => vec![ActionTriple::abstain(); n],
            EvalPolicy::Random(_) => (0..n)
                .map(|_| {
                    ActionTriple::new(
                        rng.random_range(-1.0..=1.0),
                        rng.random_range(-1.0..=1.0),
                        rng.random_range(-1.0..=1.0),
                    )
                })
                .collect(),
        };
        let out = env.step(&actions)?;
        metrics.record(&out.record);
        raw = out.observations;
    }
    Ok(DayResult { start_day, metrics })
}

/// Runs one episode per start day. Only local observations reach the
/// policies.
pub fn evaluate(
    env: &MarketEnv,
    scaler: &FeatureScaler,
    policy: &EvalPolicy,
    days: &[usize],
    seed: u64,
    exec: Execution,
) -> Result<Vec<DayResult>, MarlError> {
    if let EvalPolicy::Deterministic(ps) | EvalPolicy::Sampled(ps, _) = policy {
        if ps.len() != env.n_agents() {
            return Err(MarlError::Config {
                field: "policies",
                reason: format!("{} policies for {} agents", ps.len(), env.n_agents()),
            });
        }
    }
    par::map_indexed(exec, days.len(), |k| {
        let mut e = env.clone();
        run_day(&mut e, scaler, policy, days[k], seed)
    })
    .into_iter()
    .collect()
}
