//! Multi-agent day simulation around the P2P market.
//!
//! An episode covers `horizon` consecutive hours of the profile library,
//! starting at a day boundary. All randomness for an episode (price noise and
//! forecast errors) is drawn at [`MarketEnv::reset`] from the noise seed, and
//! every hour's clearing seed comes from the auction seed, so two resets with
//! the same seeds replay identically.
//!
//! One hour runs as follows. Agents quote from their decoded actions, the
//! book is cleared, and unmatched quoted energy is settled against the main
//! grid (unmatched bids import at the emergency price, unmatched asks export
//! at the feed-in tariff). Storage then absorbs whatever physical imbalance
//! remains within its feasible power range, and the rest goes to the grid the
//! same way.

mod metrics;
mod observation;
mod prices;
mod profiles;

pub use metrics::{AgentTotals, EpisodeMetrics};
pub use observation::{
    decode_action, observation_len, ActionTriple, DecodedAction, MarketSummary, Observation, ABSTAIN_KWH,
    MARKET_FIELDS, WINDOW_FIELDS,
};
pub use prices::{EmergencyPrices, PriceConfig};
pub use profiles::{load_profiles, AgentSeries, ProfileLibrary};

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::auction::{self, AuctionError, ClearingResult, Mechanism, PriceSignal, Quotation};
use crate::microgrid::{self, Microgrid, MicrogridError, MicrogridParams};

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("profile schema: {0}")]
    Schema(String),
    #[error("profile value out of range: agent {agent_id} hour {hour} {column} = {value}")]
    Range {
        agent_id: usize,
        hour: usize,
        column: &'static str,
        value: f64,
    },
    #[error("environment configuration: {0}")]
    Config(String),
    #[error("expected {expected} actions, got {got}")]
    ActionCount { expected: usize, got: usize },
    #[error("episode already finished; call reset")]
    EpisodeDone,
    #[error(transparent)]
    Microgrid(#[from] MicrogridError),
    #[error(transparent)]
    Prices(#[from] AuctionError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Forecast realization: `forecast * max(0, 1 + sigma * z)` with `z ~ N(0, 1)`.
pub fn realize<R: Rng + ?Sized>(forecast: f64, sigma: f64, rng: &mut R) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    forecast * (1.0 + sigma * z).max(0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EpisodeConfig {
    /// Episode length in hours; a whole number of days.
    pub horizon: usize,
    /// Past hours in the observation window.
    pub delta1: usize,
    /// Future hours in the observation window.
    pub delta2: usize,
    /// Relative standard deviation of forecast errors.
    pub forecast_sigma: f64,
    /// Interval length in hours.
    pub dt: f64,
    pub mechanism: Mechanism,
    pub prices: PriceConfig,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            horizon: 24,
            delta1: 1,
            delta2: 6,
            forecast_sigma: 0.15,
            dt: 1.0,
            mechanism: Mechanism::Mrdac,
            prices: PriceConfig::default(),
        }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        if self.horizon == 0 || !self.horizon.is_multiple_of(24) {
            return Err(EnvError::Config(format!(
                "horizon must be a positive multiple of 24, got {}",
                self.horizon
            )));
        }
        if !(self.forecast_sigma >= 0.0 && self.forecast_sigma.is_finite()) {
            return Err(EnvError::Config("forecast_sigma must be finite and >= 0".into()));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(EnvError::Config("dt must be positive".into()));
        }
        self.prices.validate()
    }

    pub fn observation_len(&self) -> usize {
        observation_len(self.delta1, self.delta2)
    }

    pub fn days_per_episode(&self) -> usize {
        self.horizon / 24
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EpisodeSeeds {
    /// Price noise and forecast realizations.
    pub noise: u64,
    /// Per-hour clearing seeds.
    pub auction: u64,
}

/// One agent's hour, after settlement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentHour {
    pub action: DecodedAction,
    pub load: f64,
    pub gen: f64,
    pub da_delivery: f64,
    /// `load - gen - da_delivery` before trading.
    pub net_position: f64,
    pub bought: f64,
    pub sold: f64,
    pub fit_kwh: f64,
    pub emergency_kwh: f64,
    /// Signed storage power, positive charging.
    pub storage_power: f64,
    pub soc_after: f64,
    pub profit_grid: f64,
    pub profit_p2p: f64,
    /// Left side minus right side of the hourly energy balance.
    pub balance_residual: f64,
}

impl AgentHour {
    pub fn reward(&self) -> f64 {
        self.profit_grid + self.profit_p2p
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HourRecord {
    pub t: usize,
    pub prices: PriceSignal,
    pub clearing: ClearingResult,
    pub market: MarketSummary,
    pub agents: Vec<AgentHour>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub observations: Vec<Observation>,
    /// Unscaled `P_G + P_p2p` per agent.
    pub rewards: Vec<f64>,
    pub done: bool,
    pub record: HourRecord,
}

/// The community market environment.
#[derive(Debug, Clone)]
pub struct MarketEnv {
    config: EpisodeConfig,
    params: Vec<MicrogridParams>,
    series: Arc<Vec<AgentSeries>>,
    grids: Vec<Microgrid>,
    t: usize,
    start_hour: usize,
    prices: Vec<PriceSignal>,
    /// `[agent][hour]` within the episode.
    forecast_load: Vec<Vec<f64>>,
    forecast_gen: Vec<Vec<f64>>,
    day_ahead: Vec<Vec<f64>>,
    realized_load: Vec<Vec<f64>>,
    realized_gen: Vec<Vec<f64>>,
    last_market: MarketSummary,
    auction_rng: ChaCha8Rng,
}

impl MarketEnv {
    /// `series[i]` holds agent `i`'s kWh profiles; all series must share a
    /// length that is a whole number of days.
    pub fn new(
        config: EpisodeConfig,
        params: Vec<MicrogridParams>,
        series: Arc<Vec<AgentSeries>>,
    ) -> Result<Self, EnvError> {
        config.validate()?;
        if params.is_empty() {
            return Err(EnvError::Config("at least one microgrid is required".into()));
        }
        for p in &params {
            p.validate()?;
        }
        if series.len() != params.len() {
            return Err(EnvError::Config(format!(
                "{} profile series for {} microgrids",
                series.len(),
                params.len()
            )));
        }
        let hours = series[0].load.len();
        if series.iter().any(|s| s.load.len() != hours || s.gen.len() != hours) {
            return Err(EnvError::Config("profile series differ in length".into()));
        }
        if hours < config.horizon || !hours.is_multiple_of(24) {
            return Err(EnvError::Config(format!(
                "profiles span {hours} hours, need whole days and at least {}",
                config.horizon
            )));
        }
        let grids = params.iter().map(|p| Microgrid::new(*p)).collect();
        let n = params.len();
        let mut env = Self {
            config,
            params,
            series,
            grids,
            t: 0,
            start_hour: 0,
            prices: Vec::new(),
            forecast_load: vec![Vec::new(); n],
            forecast_gen: vec![Vec::new(); n],
            day_ahead: vec![Vec::new(); n],
            realized_load: vec![Vec::new(); n],
            realized_gen: vec![Vec::new(); n],
            last_market: MarketSummary::default(),
            auction_rng: ChaCha8Rng::seed_from_u64(0),
        };
        env.reset(0, EpisodeSeeds::default())?;
        Ok(env)
    }

    /// Builds an environment over a normalized library, scaling it with `params`.
    pub fn from_library(
        config: EpisodeConfig,
        params: Vec<MicrogridParams>,
        library: &ProfileLibrary,
    ) -> Result<Self, EnvError> {
        let series = library.scaled(&params)?;
        Self::new(config, params, Arc::new(series))
    }

    pub fn config(&self) -> &EpisodeConfig {
        &self.config
    }

    pub fn params(&self) -> &[MicrogridParams] {
        &self.params
    }

    pub fn series(&self) -> &Arc<Vec<AgentSeries>> {
        &self.series
    }

    pub fn n_agents(&self) -> usize {
        self.params.len()
    }

    pub fn n_days(&self) -> usize {
        self.series[0].load.len() / 24
    }

    /// Number of distinct start days an episode can use.
    pub fn n_start_days(&self) -> usize {
        self.n_days() + 1 - self.config.days_per_episode()
    }

    pub fn observation_len(&self) -> usize {
        self.config.observation_len()
    }

    pub fn global_state_len(&self) -> usize {
        self.n_agents() * (self.observation_len() + 2)
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn done(&self) -> bool {
        self.t >= self.config.horizon
    }

    pub fn grids(&self) -> &[Microgrid] {
        &self.grids
    }

    /// Episode price tuples, one per hour.
    pub fn prices(&self) -> &[PriceSignal] {
        &self.prices
    }

    /// Starts an episode on library day `start_day`.
    pub fn reset(&mut self, start_day: usize, seeds: EpisodeSeeds) -> Result<Vec<Observation>, EnvError> {
        if start_day >= self.n_start_days() {
            return Err(EnvError::Config(format!(
                "start day {start_day} leaves fewer than {} days of profile data",
                self.config.days_per_episode()
            )));
        }
        let horizon = self.config.horizon;
        let sigma = self.config.forecast_sigma;
        self.start_hour = start_day * 24;
        self.t = 0;
        self.last_market = MarketSummary::default();
        self.auction_rng = ChaCha8Rng::seed_from_u64(seeds.auction);
        let mut noise = ChaCha8Rng::seed_from_u64(seeds.noise);
        self.prices = self.config.prices.sample_day(horizon, &mut noise);

        let window = self.start_hour..self.start_hour + horizon;
        for (i, s) in self.series.iter().enumerate() {
            self.forecast_load[i] = s.load[window.clone()].to_vec();
            self.forecast_gen[i] = s.gen[window.clone()].to_vec();
            let alpha = self.params[i].alpha_da;
            self.day_ahead[i] = (0..horizon)
                .map(|h| microgrid::day_ahead_quantity(self.forecast_load[i][h], self.forecast_gen[i][h], alpha))
                .collect();
            self.realized_load[i] = vec![0.0; horizon];
            self.realized_gen[i] = vec![0.0; horizon];
        }
        for h in 0..horizon {
            for i in 0..self.n_agents() {
                self.realized_load[i][h] = realize(self.forecast_load[i][h], sigma, &mut noise);
                self.realized_gen[i][h] = realize(self.forecast_gen[i][h], sigma, &mut noise);
            }
        }
        for (i, g) in self.grids.iter_mut().enumerate() {
            *g = Microgrid::new(self.params[i]);
        }
        self.load_hour(0);
        Ok(self.observations())
    }

    fn load_hour(&mut self, h: usize) {
        for (i, g) in self.grids.iter_mut().enumerate() {
            g.state.realized_load = self.realized_load[i][h];
            g.state.realized_gen = self.realized_gen[i][h];
            g.state.da_delivery = self.day_ahead[i][h];
        }
    }

    /// Observation of agent `i` at the current hour.
    pub fn observe(&self, i: usize) -> Observation {
        let horizon = self.config.horizon as isize;
        let t = self.t as isize;
        let (d1, d2) = (self.config.delta1 as isize, self.config.delta2 as isize);
        let mut window = Vec::with_capacity(WINDOW_FIELDS * (d1 + d2 + 1) as usize);
        for k in t - d1..=t + d2 {
            let h = k.clamp(0, horizon - 1) as usize;
            window.extend_from_slice(&[
                self.day_ahead[i][h],
                self.forecast_load[i][h],
                self.forecast_gen[i][h],
                self.prices[h].emergency,
            ]);
        }
        Observation {
            market_embed: self.last_market.to_array(),
            soc: self.grids[i].state.soc,
            window,
            time_enc: gridmarket_nn::periodic_encode(self.t as f64),
        }
    }

    pub fn observations(&self) -> Vec<Observation> {
        (0..self.n_agents()).map(|i| self.observe(i)).collect()
    }

    /// Every agent's observation followed by its SoC and pre-trade net
    /// position, agent by agent.
    pub fn global_state(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.global_state_len());
        for i in 0..self.n_agents() {
            self.observe(i).write_into(&mut out);
            out.push(self.grids[i].state.soc);
            out.push(if self.done() { 0.0 } else { self.grids[i].net_position() });
        }
        out
    }

    /// Decodes `raw` for agent `i` at the current hour without acting.
    pub fn decode(&self, i: usize, raw: ActionTriple) -> DecodedAction {
        let h = self.t.min(self.config.horizon - 1);
        let g = &self.grids[i];
        decode_action(raw, g, g.net_position(), &self.prices[h], self.config.dt)
    }

    /// Runs one hour.
    pub fn step(&mut self, actions: &[ActionTriple]) -> Result<StepOutcome, EnvError> {
        if self.done() {
            return Err(EnvError::EpisodeDone);
        }
        let n = self.n_agents();
        if actions.len() != n {
            return Err(EnvError::ActionCount {
                expected: n,
                got: actions.len(),
            });
        }
        let dt = self.config.dt;
        let prices = self.prices[self.t];

        let decoded: Vec<DecodedAction> = (0..n).map(|i| self.decode(i, actions[i])).collect();
        let mut book = Vec::new();
        for (i, d) in decoded.iter().enumerate() {
            if d.qty > 0.0 {
                book.push(Quotation::buy(i, d.price, d.qty));
            } else if d.qty < 0.0 {
                book.push(Quotation::sell(i, d.price, -d.qty));
            }
        }
        let hour_seed: u64 = self.auction_rng.random();
        let clearing = auction::clear(self.config.mechanism, &book, hour_seed);
        let unmatched = auction::settle_residual(&clearing.residual_buy, &clearing.residual_sell, &prices);

        let mut agents = Vec::with_capacity(n);
        for (i, d) in decoded.iter().enumerate() {
            let g = &mut self.grids[i];
            g.set_storage_cap(d.alpha_e, dt);
            let net = g.net_position();
            let bought = clearing.bought_by(i);
            let sold = clearing.sold_by(i);
            let grid_quote = unmatched.get(&i).copied().unwrap_or_default();

            // imbalance left after every quoted kWh has been delivered
            let remaining = net - d.qty.max(0.0) + (-d.qty).max(0.0);
            let (p_min, p_max) = g.feasible_power_range(dt);
            let power = (-remaining / dt).clamp(p_min, p_max);
            let soc_after = g.step_storage(power, dt)?;
            let leftover = remaining + power * dt;
            let emergency_kwh = grid_quote.emergency_kwh + leftover.max(0.0);
            let fit_kwh = grid_quote.fit_kwh + (-leftover).max(0.0);

            let sells: Vec<_> = clearing.trades.iter().filter(|t| t.seller_id == i).copied().collect();
            let buys: Vec<_> = clearing.trades.iter().filter(|t| t.buyer_id == i).copied().collect();
            let (profit_grid, profit_p2p) = microgrid::hourly_profit(fit_kwh, emergency_kwh, &sells, &buys, &prices);
            let s = g.state;
            let balance_residual = microgrid::balance_residual(
                s.realized_load,
                power * dt,
                fit_kwh,
                sold,
                s.realized_gen,
                s.da_delivery,
                bought,
                emergency_kwh,
            );
            g.state.soc = soc_after;
            g.state.cash_grid += profit_grid;
            g.state.cash_p2p += profit_p2p;
            agents.push(AgentHour {
                action: *d,
                load: s.realized_load,
                gen: s.realized_gen,
                da_delivery: s.da_delivery,
                net_position: net,
                bought,
                sold,
                fit_kwh,
                emergency_kwh,
                storage_power: power,
                soc_after,
                profit_grid,
                profit_p2p,
                balance_residual,
            });
        }

        let market = MarketSummary {
            buy_volume: book
                .iter()
                .filter(|q| q.side == auction::Side::Buy)
                .map(|q| q.quantity)
                .sum(),
            sell_volume: book
                .iter()
                .filter(|q| q.side == auction::Side::Sell)
                .map(|q| q.quantity)
                .sum(),
            mean_price: clearing.mean_price().unwrap_or(0.0),
            cleared_volume: clearing.volume(),
        };
        let record = HourRecord {
            t: self.t,
            prices,
            clearing,
            market,
            agents,
        };
        self.last_market = market;
        self.t += 1;
        if !self.done() {
            self.load_hour(self.t);
        }
        Ok(StepOutcome {
            observations: self.observations(),
            rewards: record.agents.iter().map(AgentHour::reward).collect(),
            done: self.done(),
            record,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn flat_series(net: &[f64], hours: usize) -> Arc<Vec<AgentSeries>> {
        // load above generation by `net` when positive, the reverse otherwise
        Arc::new(
            net.iter()
                .map(|&d| AgentSeries {
                    load: vec![5.0 + d.max(0.0); hours],
                    gen: vec![5.0 + (-d).max(0.0); hours],
                })
                .collect(),
        )
    }

    fn no_storage(n: usize) -> Vec<MicrogridParams> {
        (0..n)
            .map(|_| MicrogridParams {
                load_max: 10.0,
                gen_max: 10.0,
                e_max: 0.0,
                e_min: 0.0,
                power_max: 1.0,
                power_min: -1.0,
                e_init: 0.0,
                beta_chr: 1.0,
                beta_dis: 1.0,
                alpha_da: 1.0,
            })
            .collect()
    }

    fn quiet(emergency: f64) -> EpisodeConfig {
        EpisodeConfig {
            forecast_sigma: 0.0,
            prices: PriceConfig {
                emergency: EmergencyPrices::Schedule {
                    values: vec![emergency],
                },
                ..PriceConfig::default()
            },
            ..EpisodeConfig::default()
        }
    }

    #[test]
    fn realize_edge_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(realize(7.5, 0.0, &mut rng), 7.5);
        assert_eq!(realize(0.0, 0.3, &mut rng), 0.0);
        assert!((0..1000).all(|_| realize(2.0, 5.0, &mut rng) >= 0.0));
    }

    #[test]
    fn abstaining_with_perfect_forecasts_earns_nothing() {
        let mut env = MarketEnv::new(quiet(20.0), no_storage(3), flat_series(&[0.0, 2.0, 4.0], 24)).unwrap();
        env.reset(0, EpisodeSeeds { noise: 3, auction: 4 }).unwrap();
        for _ in 0..24 {
            let out = env.step(&[ActionTriple::abstain(); 3]).unwrap();
            assert!(out.rewards.iter().all(|&r| r == 0.0));
        }
    }

    #[test]
    fn uncovered_deficit_buys_emergency_energy() {
        let mut env = MarketEnv::new(quiet(15.0), no_storage(1), flat_series(&[0.0], 24)).unwrap();
        env.reset(0, EpisodeSeeds::default()).unwrap();
        // realized load 3 kWh above the day-ahead delivery
        env.grids[0].state.realized_load += 3.0;
        let out = env.step(&[ActionTriple::abstain()]).unwrap();
        assert_eq!(out.rewards, vec![-45.0]);
        assert_eq!(out.record.agents[0].emergency_kwh, 3.0);
    }

    #[test]
    fn complementary_agents_gain_from_trade() {
        let run = |trade: bool| {
            let mut env = MarketEnv::new(quiet(20.0), no_storage(2), flat_series(&[-3.0, 0.0], 24)).unwrap();
            env.reset(0, EpisodeSeeds::default()).unwrap();
            env.grids[1].state.realized_load += 3.0;
            let actions = if trade {
                [ActionTriple::new(-0.5, -1.0, 1.0), ActionTriple::new(0.5, 1.0, 1.0)]
            } else {
                [ActionTriple::abstain(); 2]
            };
            let out = env.step(&actions).unwrap();
            (out.rewards.iter().sum::<f64>(), out.record)
        };
        let (with, record) = run(true);
        let (without, _) = run(false);
        assert_abs_diff_eq!(record.clearing.volume(), 3.0, epsilon = 1e-12);
        assert!(with > without, "{with} vs {without}");
    }

    #[test]
    fn first_hour_has_no_market_history_and_clamped_window() {
        let env = MarketEnv::from_library(
            EpisodeConfig::default(),
            MicrogridParams::four_grid_community(),
            &ProfileLibrary::synthetic(4, 2, 0),
        )
        .unwrap();
        let o = env.observe(1);
        assert_eq!(o.len(), 39);
        assert_eq!(o.to_vec().len(), 39);
        assert_eq!(o.market_embed, [0.0; 4]);
        assert_eq!(o.window[0..4], o.window[4..8]);
        assert_eq!(o.time_enc, [0.0, 1.0]);
        assert_eq!(env.global_state().len(), 4 * 41);
    }

    #[test]
    fn single_agent_state_is_its_own_data() {
        let env = MarketEnv::new(quiet(20.0), no_storage(1), flat_series(&[1.0], 48)).unwrap();
        let s = env.global_state();
        let mut expected = env.observe(0).to_vec();
        expected.push(env.grids[0].state.soc);
        expected.push(env.grids[0].net_position());
        assert_eq!(s, expected);
    }

    #[test]
    fn stepping_past_the_horizon_fails() {
        let mut env = MarketEnv::new(quiet(20.0), no_storage(1), flat_series(&[1.0], 24)).unwrap();
        for _ in 0..24 {
            env.step(&[ActionTriple::abstain()]).unwrap();
        }
        assert!(env.done());
        assert!(matches!(
            env.step(&[ActionTriple::abstain()]),
            Err(EnvError::EpisodeDone)
        ));
        assert!(matches!(
            env.reset(1, EpisodeSeeds::default()),
            Err(EnvError::Config(_))
        ));
    }

    #[test]
    fn horizon_must_be_whole_days() {
        let cfg = EpisodeConfig {
            horizon: 30,
            ..quiet(20.0)
        };
        assert!(MarketEnv::new(cfg, no_storage(1), flat_series(&[0.0], 48)).is_err());
    }
}
