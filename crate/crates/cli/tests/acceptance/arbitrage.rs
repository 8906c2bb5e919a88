//! One storage-owning agent, a constant deficit, no counterparty and a cheap
//! night. The only way to cut cost is to buy extra energy in the valley and
//! discharge it later.

use std::sync::Arc;

use gridmarket_core::auction::Mechanism;
use gridmarket_core::env::{AgentSeries, EmergencyPrices, EpisodeConfig, MarketEnv, PriceConfig};
use gridmarket_core::microgrid::MicrogridParams;
use gridmarket_core::par::Execution;
use gridmarket_marl::{evaluate, EvalPolicy, TrainConfig, Trainer, Variant};

pub const LOAD: f64 = 2.0;
pub const VALLEY_HOURS: usize = 6;
pub const VALLEY_PRICE: f64 = 15.0;
pub const PEAK_PRICE: f64 = 35.0;
pub const FIT: f64 = 2.0;

pub fn params() -> MicrogridParams {
    MicrogridParams {
        load_max: LOAD,
        gen_max: 0.0,
        e_max: 15.0,
        e_min: 0.0,
        power_max: 5.0,
        power_min: -5.0,
        e_init: 0.0,
        beta_chr: 1.0,
        beta_dis: 1.0,
        alpha_da: 0.0,
    }
}

pub fn emergency_prices() -> Vec<f64> {
    (0..24)
        .map(|h| if h < VALLEY_HOURS { VALLEY_PRICE } else { PEAK_PRICE })
        .collect()
}

pub fn env(days: usize) -> MarketEnv {
    let cfg = EpisodeConfig {
        mechanism: Mechanism::Mrdac,
        forecast_sigma: 0.0,
        prices: PriceConfig {
            fit: FIT,
            day_ahead: 8.0,
            emergency: EmergencyPrices::Schedule {
                values: emergency_prices(),
            },
        },
        ..EpisodeConfig::default()
    };
    let series = vec![AgentSeries {
        load: vec![LOAD; 24 * days],
        gen: vec![0.0; 24 * days],
    }];
    MarketEnv::new(cfg, vec![params()], Arc::new(series)).unwrap()
}

/// Exhaustive dynamic programme over SoC on a 0.1 kWh grid. Each hour the
/// agent picks the SoC change; any shortfall is bought at the emergency
/// price and any excess is exported at the feed-in tariff.
pub fn dp_optimal_profit() -> f64 {
    let p = params();
    let step = 0.1;
    let levels = (p.e_max / step).round() as usize;
    let max_move = (p.power_max / step).round() as i64;
    let min_move = (p.power_min / step).round() as i64;
    let mut value = vec![0.0f64; levels + 1];
    for &pe in emergency_prices().iter().rev() {
        let mut next = vec![f64::NEG_INFINITY; levels + 1];
        for (s, best) in next.iter_mut().enumerate() {
            for m in min_move..=max_move {
                let to = s as i64 + m;
                if to < 0 || to > levels as i64 {
                    continue;
                }
                let delta = m as f64 * step;
                let need = LOAD + delta;
                let cash = if need >= 0.0 { -pe * need } else { -FIT * need };
                *best = best.max(cash + value[to as usize]);
            }
        }
        value = next;
    }
    let start = (p.e_init / step).round() as usize;
    value[start]
}

/// Cost of covering the load from the grid alone.
pub fn no_storage_profit() -> f64 {
    -emergency_prices().iter().map(|pe| pe * LOAD).sum::<f64>()
}

pub struct Outcome {
    pub trained: f64,
    pub optimal: f64,
    pub baseline: f64,
}

impl Outcome {
    /// Share of the optimal saving over no storage that the policy captures.
    pub fn fraction(&self) -> f64 {
        (self.trained - self.baseline) / (self.optimal - self.baseline)
    }
}

/// Small batches sometimes settle on never charging, where the quantity
/// head quotes negative and no gradient reaches it. Wide batches avoid that.
pub fn train_config() -> TrainConfig {
    TrainConfig {
        episodes: 8000,
        n_envs: 32,
        policy_hidden: 32,
        ..TrainConfig::default()
    }
}

pub fn run(seed: u64) -> Outcome {
    let env = env(4);
    let mut trainer = Trainer::new(env.clone(), Variant::Mmappo, train_config(), seed).unwrap();
    trainer.train(|_| {}).unwrap();
    let policies = trainer.policies();
    let res = evaluate(
        &env,
        trainer.scaler(),
        &EvalPolicy::Deterministic(&policies),
        &[0],
        seed,
        Execution::Parallel,
    )
    .unwrap();
    Outcome {
        trained: res[0].community_profit(),
        optimal: dp_optimal_profit(),
        baseline: no_storage_profit(),
    }
}
