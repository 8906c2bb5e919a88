//! Agent observations and action decoding.

use serde::{Deserialize, Serialize};

use crate::auction::PriceSignal;
use crate::microgrid::Microgrid;

/// Entries per window hour: day-ahead delivery, load forecast, PV forecast, emergency price.
pub const WINDOW_FIELDS: usize = 4;
/// Last hour's buy volume, sell volume, mean clearing price and cleared volume.
pub const MARKET_FIELDS: usize = 4;

/// Quantities below this many kWh are treated as abstention.
pub const ABSTAIN_KWH: f64 = 1e-6;

/// Length of a flattened observation.
pub fn observation_len(delta1: usize, delta2: usize) -> usize {
    MARKET_FIELDS + 1 + WINDOW_FIELDS * (delta1 + delta2 + 1) + 2
}

/// Aggregate statistics of one hour's market, as seen by every agent the next hour.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MarketSummary {
    pub buy_volume: f64,
    pub sell_volume: f64,
    /// Volume-weighted mean trade price, zero when nothing cleared.
    pub mean_price: f64,
    pub cleared_volume: f64,
}

impl MarketSummary {
    pub fn to_array(&self) -> [f64; MARKET_FIELDS] {
        [self.buy_volume, self.sell_volume, self.mean_price, self.cleared_volume]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub market_embed: [f64; MARKET_FIELDS],
    pub soc: f64,
    /// `[q_da, load, gen, p_e]` for hours `t - delta1 ..= t + delta2`, flattened.
    pub window: Vec<f64>,
    pub time_enc: [f64; 2],
}

impl Observation {
    pub fn len(&self) -> usize {
        MARKET_FIELDS + 1 + self.window.len() + 2
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.len());
        self.write_into(&mut v);
        v
    }

    pub fn write_into(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(&self.market_embed);
        out.push(self.soc);
        out.extend_from_slice(&self.window);
        out.extend_from_slice(&self.time_enc);
    }
}

/// Raw policy output, each component nominally in `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ActionTriple {
    pub price_raw: f64,
    pub qty_raw: f64,
    pub alpha_raw: f64,
}

impl ActionTriple {
    pub fn new(price_raw: f64, qty_raw: f64, alpha_raw: f64) -> Self {
        Self {
            price_raw,
            qty_raw,
            alpha_raw,
        }
    }

    pub fn from_slice(a: &[f64]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    /// Asks nothing of the market and leaves the storage cap fully open.
    pub fn abstain() -> Self {
        Self::new(-1.0, 0.0, 1.0)
    }
}

/// A legal action in physical units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodedAction {
    pub price: f64,
    /// Signed quantity: positive buys, negative sells, zero abstains.
    pub qty: f64,
    /// Storage cap actually in force.
    pub alpha_e: f64,
    pub max_buy: f64,
    pub max_sell: f64,
}

fn unit(x: f64) -> f64 {
    if x.is_nan() {
        0.0
    } else {
        x.clamp(-1.0, 1.0)
    }
}

/// Maps a raw action onto the legal price, quantity and storage-cap intervals.
///
/// `net` is the agent's imbalance before trading (positive deficit). The buy
/// cap is the deficit plus the charge headroom, the sell cap the surplus plus
/// the discharge headroom, both evaluated under the storage cap the action
/// selects. Positive `qty_raw` scales the buy cap and negative scales the sell
/// cap, so raw 0 always abstains.
pub fn decode_action(raw: ActionTriple, grid: &Microgrid, net: f64, prices: &PriceSignal, dt: f64) -> DecodedAction {
    let price_u = (unit(raw.price_raw) + 1.0) / 2.0;
    let price = (prices.fit + price_u * (prices.emergency - prices.fit)).clamp(prices.fit, prices.emergency);

    let mut capped = grid.clone();
    let alpha_e = capped.set_storage_cap((unit(raw.alpha_raw) + 1.0) / 2.0, dt);
    let (p_min, p_max) = capped.feasible_power_range(dt);
    let max_buy = (net + p_max * dt).max(0.0);
    let max_sell = (-net - p_min * dt).max(0.0);

    let q = unit(raw.qty_raw);
    let mut qty = if q >= 0.0 { q * max_buy } else { q * max_sell };
    if qty.abs() < ABSTAIN_KWH {
        qty = 0.0;
    }
    DecodedAction {
        price,
        qty,
        alpha_e,
        max_buy,
        max_sell,
    }
}
