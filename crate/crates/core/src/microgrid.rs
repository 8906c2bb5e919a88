//! Per-microgrid physics and accounting.
//!
//! State of charge is held in kWh. Power is signed: positive charges the
//! storage, negative discharges it. All hourly quantities are energies over
//! one interval of length `dt` hours.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::auction::{PriceSignal, Trade};
use crate::TOLERANCE;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MicrogridError {
    #[error("storage bounds violated: soc {soc} outside [{lo}, {hi}]")]
    BoundsViolation { soc: f64, lo: f64, hi: f64 },
    #[error("storage power {power} kW outside [{lo}, {hi}]")]
    PowerViolation { power: f64, lo: f64, hi: f64 },
    #[error("invalid microgrid parameter {field}: {reason}")]
    InvalidParams { field: &'static str, reason: String },
}

/// Static description of one microgrid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MicrogridParams {
    /// Peak load scale (kWh per hour).
    pub load_max: f64,
    /// Peak PV scale (kWh per hour).
    pub gen_max: f64,
    pub e_max: f64,
    pub e_min: f64,
    /// Charge limit, kW (positive).
    pub power_max: f64,
    /// Discharge limit, kW (negative).
    pub power_min: f64,
    pub e_init: f64,
    pub beta_chr: f64,
    pub beta_dis: f64,
    /// Day-ahead procurement factor.
    pub alpha_da: f64,
}

impl MicrogridParams {
    /// The four-grid community used throughout the experiments, lossless storage.
    pub fn four_grid_community() -> Vec<MicrogridParams> {
        let rows = [
            (25.0, 5.0, 8.0, 4.0, 0.0),
            (6.0, 7.0, 15.0, 5.0, 2.0),
            (40.0, 10.0, 15.0, 8.0, 0.0),
            (5.0, 15.0, 30.0, 10.0, 20.0),
        ];
        rows.iter()
            .map(|&(load_max, gen_max, e_max, p, e_init)| MicrogridParams {
                load_max,
                gen_max,
                e_max,
                e_min: 0.0,
                power_max: p,
                power_min: -p,
                e_init,
                beta_chr: 1.0,
                beta_dis: 1.0,
                alpha_da: 1.0,
            })
            .collect()
    }

    pub fn validate(&self) -> Result<(), MicrogridError> {
        let bad = |field, reason: &str| {
            Err(MicrogridError::InvalidParams {
                field,
                reason: reason.to_string(),
            })
        };
        let all = [
            self.load_max,
            self.gen_max,
            self.e_max,
            self.e_min,
            self.power_max,
            self.power_min,
            self.e_init,
            self.beta_chr,
            self.beta_dis,
            self.alpha_da,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return bad("*", "all parameters must be finite");
        }
        if self.load_max < 0.0 {
            return bad("load_max", "must be >= 0");
        }
        if self.gen_max < 0.0 {
            return bad("gen_max", "must be >= 0");
        }
        if self.e_min < 0.0 || self.e_min > self.e_max {
            return bad("e_min", "must satisfy 0 <= e_min <= e_max");
        }
        if self.e_init < self.e_min || self.e_init > self.e_max {
            return bad("e_init", "must lie in [e_min, e_max]");
        }
        if self.power_min >= 0.0 {
            return bad("power_min", "must be negative");
        }
        if self.power_max <= 0.0 {
            return bad("power_max", "must be positive");
        }
        if !(self.beta_chr > 0.0 && self.beta_chr <= 1.0) {
            return bad("beta_chr", "must lie in (0, 1]");
        }
        if !(self.beta_dis > 0.0 && self.beta_dis <= 1.0) {
            return bad("beta_dis", "must lie in (0, 1]");
        }
        if self.alpha_da < 0.0 {
            return bad("alpha_da", "must be >= 0");
        }
        Ok(())
    }
}

/// Dynamic state of one microgrid at an hour boundary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MicrogridState {
    pub soc: f64,
    pub realized_load: f64,
    pub realized_gen: f64,
    pub da_delivery: f64,
    /// Accumulated feed-in minus emergency cash.
    pub cash_grid: f64,
    /// Accumulated P2P sales minus purchases.
    pub cash_p2p: f64,
    /// Storage cap currently in force, as a fraction of `e_max`.
    pub alpha_e: f64,
}

/// A microgrid: parameters plus evolving state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Microgrid {
    pub params: MicrogridParams,
    pub state: MicrogridState,
}

impl Microgrid {
    pub fn new(params: MicrogridParams) -> Self {
        Self {
            params,
            state: MicrogridState {
                soc: params.e_init,
                realized_load: 0.0,
                realized_gen: 0.0,
                da_delivery: 0.0,
                cash_grid: 0.0,
                cash_p2p: 0.0,
                alpha_e: 1.0,
            },
        }
    }

    /// Upper SoC bound under the current storage cap.
    pub fn soc_cap(&self) -> f64 {
        self.state.alpha_e * self.params.e_max
    }

    /// Sets the storage cap, raising it where necessary so that the cap stays
    /// reachable within one interval at full discharge power and never falls
    /// below `e_min`. Returns the cap fraction actually applied.
    pub fn set_storage_cap(&mut self, alpha_e: f64, dt: f64) -> f64 {
        let p = &self.params;
        let requested = alpha_e.clamp(0.0, 1.0);
        if p.e_max <= 0.0 {
            self.state.alpha_e = 1.0;
            return 1.0;
        }
        let reachable = self.state.soc + p.power_min * dt / p.beta_dis;
        let floor = (reachable.max(p.e_min) / p.e_max).min(1.0);
        self.state.alpha_e = requested.max(floor);
        self.state.alpha_e
    }

    /// SoC after applying `power` for `dt` hours, without mutating state.
    pub fn step_storage(&self, power: f64, dt: f64) -> Result<f64, MicrogridError> {
        let p = &self.params;
        if power > p.power_max + TOLERANCE || power < p.power_min - TOLERANCE {
            return Err(MicrogridError::PowerViolation {
                power,
                lo: p.power_min,
                hi: p.power_max,
            });
        }
        let soc = self.state.soc;
        let next = if power >= 0.0 {
            soc + p.beta_chr * power * dt
        } else {
            soc + power * dt / p.beta_dis
        };
        let (lo, hi) = (p.e_min, self.soc_cap());
        if next < lo - TOLERANCE || next > hi + TOLERANCE {
            return Err(MicrogridError::BoundsViolation { soc: next, lo, hi });
        }
        Ok(next.clamp(lo, hi.max(lo)))
    }

    /// Charge/discharge limits given power ratings and SoC headroom.
    ///
    /// `p_max` can be negative when the storage cap sits below the current
    /// SoC: the storage then has to discharge at least that much.
    pub fn feasible_power_range(&self, dt: f64) -> (f64, f64) {
        let p = &self.params;
        let soc = self.state.soc;
        let headroom = self.soc_cap() - soc;
        let p_max = if headroom >= 0.0 {
            p.power_max.min(headroom / (p.beta_chr * dt))
        } else {
            // forced discharge: the cap sits below the current SoC
            headroom * p.beta_dis / dt
        };
        let p_min = p.power_min.max((p.e_min - soc) * p.beta_dis / dt);
        // the cap floor keeps forced discharge within power_min up to rounding
        (p_min, p_max.max(p_min))
    }

    /// Energy imbalance before any P2P trading: `L - G - q_da`, positive means deficit.
    pub fn net_position(&self) -> f64 {
        net_position(&self.state)
    }
}

/// `L - G - q_da` for a state; positive is a deficit.
pub fn net_position(state: &MicrogridState) -> f64 {
    state.realized_load - state.realized_gen - state.da_delivery
}

/// Day-ahead purchase for one hour: `max(0, alpha * (load - gen))`.
pub fn day_ahead_quantity(forecast_load: f64, forecast_gen: f64, alpha_da: f64) -> f64 {
    (alpha_da * (forecast_load - forecast_gen)).max(0.0)
}

/// Grid and P2P profit for one hour.
///
/// Returns `(P_G, P_p2p)` where `P_G = fit * q_fit - emergency * q_e` and
/// `P_p2p` is sales revenue minus purchase cost. Day-ahead cost is not part
/// of either term.
pub fn hourly_profit(
    q_fit: f64,
    q_e: f64,
    trades_as_seller: &[Trade],
    trades_as_buyer: &[Trade],
    prices: &PriceSignal,
) -> (f64, f64) {
    let grid = prices.fit * q_fit - prices.emergency * q_e;
    let p2p =
        trades_as_seller.iter().map(Trade::value).sum::<f64>() - trades_as_buyer.iter().map(Trade::value).sum::<f64>();
    (grid, p2p)
}

/// Residual of the hourly energy balance
/// `L + T + q_fit + q_s = G + q_da + q_b + q_e`; zero when it closes.
#[allow(clippy::too_many_arguments)]
pub fn balance_residual(
    load: f64,
    storage_power_dt: f64,
    q_fit: f64,
    q_sold: f64,
    gen: f64,
    q_da: f64,
    q_bought: f64,
    q_e: f64,
) -> f64 {
    (load + storage_power_dt + q_fit + q_sold) - (gen + q_da + q_bought + q_e)
}
