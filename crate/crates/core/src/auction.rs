//! Intra-day P2P double auction.
//!
//! Every participating microgrid submits one [`Quotation`] per hour. The
//! auctioneer sorts sellers by ascending ask and buyers by descending bid and
//! then clears the book with one of three [`Mechanism`]s:
//!
//! - [`clear_mrdac`]: multi-round matching of the head seller against the
//!   head buyer. Partial fills go back to the tail of their list, infeasible
//!   head pairs rotate one randomly chosen side to the tail, and participants
//!   that can no longer trade with anyone are dropped.
//! - [`clear_greedy`]: one pass of head-to-head pairing, without requeueing.
//! - [`clear_vda`]: uniform-price double auction over the marginal pairs.
//!
//! Matched pairs settle at the average of ask and bid for MRDAC and greedy.
//! Quantities left unmatched are reported per agent and later settled
//! against the main grid by [`settle_residual`].

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::TOLERANCE;

/// Remaining quantity at or below this is treated as fully allocated.
pub const QTY_EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AuctionError {
    #[error("price ordering violated: fit {fit} <= day-ahead {day_ahead} <= emergency {emergency} does not hold")]
    PriceOrdering { fit: f64, day_ahead: f64, emergency: f64 },
    #[error("quotation from agent {agent_id}: price {price} outside [{lo}, {hi}]")]
    PriceOutOfBand {
        agent_id: usize,
        price: f64,
        lo: f64,
        hi: f64,
    },
    #[error("quotation from agent {agent_id}: quantity {quantity} must be finite and positive")]
    BadQuantity { agent_id: usize, quantity: f64 },
    #[error("unknown mechanism `{0}` (expected mrdac, vda or greedy)")]
    UnknownMechanism(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Buy,
    Sell,
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::Buy => "buy",
            Side::Sell => "sell",
        })
    }
}

impl FromStr for Side {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "buy" | "b" => Ok(Side::Buy),
            "sell" | "s" => Ok(Side::Sell),
            other => Err(format!("unknown side `{other}`")),
        }
    }
}

/// A signed bid for one auction: unit price and strictly positive quantity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quotation {
    pub agent_id: usize,
    /// Currency per kWh.
    pub price: f64,
    /// kWh.
    pub quantity: f64,
    pub side: Side,
}

impl Quotation {
    pub fn buy(agent_id: usize, price: f64, quantity: f64) -> Self {
        Self {
            agent_id,
            price,
            quantity,
            side: Side::Buy,
        }
    }

    pub fn sell(agent_id: usize, price: f64, quantity: f64) -> Self {
        Self {
            agent_id,
            price,
            quantity,
            side: Side::Sell,
        }
    }

    /// Checks the quantity and that the price lies in the `[fit, emergency]` band.
    pub fn validate(&self, prices: &PriceSignal) -> Result<(), AuctionError> {
        if !(self.quantity.is_finite() && self.quantity > 0.0) {
            return Err(AuctionError::BadQuantity {
                agent_id: self.agent_id,
                quantity: self.quantity,
            });
        }
        if !(self.price >= prices.fit - TOLERANCE && self.price <= prices.emergency + TOLERANCE) {
            return Err(AuctionError::PriceOutOfBand {
                agent_id: self.agent_id,
                price: self.price,
                lo: prices.fit,
                hi: prices.emergency,
            });
        }
        Ok(())
    }
}

/// Main-grid prices for one hour. Always satisfies `fit <= day_ahead <= emergency`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriceSignal {
    pub fit: f64,
    pub day_ahead: f64,
    pub emergency: f64,
}

impl PriceSignal {
    pub fn new(fit: f64, day_ahead: f64, emergency: f64) -> Result<Self, AuctionError> {
        if !(fit.is_finite() && day_ahead.is_finite() && emergency.is_finite())
            || fit > day_ahead
            || day_ahead > emergency
        {
            return Err(AuctionError::PriceOrdering {
                fit,
                day_ahead,
                emergency,
            });
        }
        Ok(Self {
            fit,
            day_ahead,
            emergency,
        })
    }
}

/// One executed P2P transaction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Trade {
    pub seller_id: usize,
    pub buyer_id: usize,
    pub price: f64,
    pub quantity: f64,
    /// Matching round (1-based) in which the trade executed.
    pub round: usize,
}

impl Trade {
    pub fn value(&self) -> f64 {
        self.price * self.quantity
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ClearingResult {
    pub trades: Vec<Trade>,
    /// Unmatched bid quantity per buying agent (kWh).
    pub residual_buy: BTreeMap<usize, f64>,
    /// Unmatched ask quantity per selling agent (kWh).
    pub residual_sell: BTreeMap<usize, f64>,
    pub rounds_executed: usize,
}

impl ClearingResult {
    /// Total traded energy, counted once per trade.
    pub fn volume(&self) -> f64 {
        self.trades.iter().map(|t| t.quantity).sum()
    }

    pub fn bought_by(&self, agent_id: usize) -> f64 {
        self.trades
            .iter()
            .filter(|t| t.buyer_id == agent_id)
            .map(|t| t.quantity)
            .sum()
    }

    pub fn sold_by(&self, agent_id: usize) -> f64 {
        self.trades
            .iter()
            .filter(|t| t.seller_id == agent_id)
            .map(|t| t.quantity)
            .sum()
    }

    /// Volume-weighted mean trade price, or `None` if nothing traded.
    pub fn mean_price(&self) -> Option<f64> {
        let v = self.volume();
        (v > 0.0).then(|| self.trades.iter().map(Trade::value).sum::<f64>() / v)
    }

    fn from_book(book: &[Quotation], trades: Vec<Trade>, rounds_executed: usize) -> Self {
        let mut residual_buy = BTreeMap::new();
        let mut residual_sell = BTreeMap::new();
        for q in book {
            let map = match q.side {
                Side::Buy => &mut residual_buy,
                Side::Sell => &mut residual_sell,
            };
            *map.entry(q.agent_id).or_insert(0.0) += q.quantity;
        }
        for t in &trades {
            *residual_sell.get_mut(&t.seller_id).expect("seller in book") -= t.quantity;
            *residual_buy.get_mut(&t.buyer_id).expect("buyer in book") -= t.quantity;
        }
        Self {
            trades,
            residual_buy,
            residual_sell,
            rounds_executed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mechanism {
    #[default]
    Mrdac,
    Vda,
    Greedy,
}

impl Mechanism {
    pub const ALL: [Mechanism; 3] = [Mechanism::Mrdac, Mechanism::Vda, Mechanism::Greedy];

    pub fn name(&self) -> &'static str {
        match self {
            Mechanism::Mrdac => "mrdac",
            Mechanism::Vda => "vda",
            Mechanism::Greedy => "greedy",
        }
    }
}

impl fmt::Display for Mechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mechanism {
    type Err = AuctionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mrdac" | "mrda" => Ok(Mechanism::Mrdac),
            "vda" => Ok(Mechanism::Vda),
            "greedy" => Ok(Mechanism::Greedy),
            other => Err(AuctionError::UnknownMechanism(other.to_string())),
        }
    }
}

/// Clears `quotations` with the chosen mechanism. `seed` only affects MRDAC.
pub fn clear(mechanism: Mechanism, quotations: &[Quotation], seed: u64) -> ClearingResult {
    match mechanism {
        Mechanism::Mrdac => clear_mrdac(quotations, seed),
        Mechanism::Vda => clear_vda(quotations),
        Mechanism::Greedy => clear_greedy(quotations),
    }
}

fn seller_order(a: &Quotation, b: &Quotation) -> std::cmp::Ordering {
    a.price.total_cmp(&b.price).then(a.agent_id.cmp(&b.agent_id))
}

fn buyer_order(a: &Quotation, b: &Quotation) -> std::cmp::Ordering {
    b.price.total_cmp(&a.price).then(a.agent_id.cmp(&b.agent_id))
}

/// Splits a book into sellers (ascending ask) and buyers (descending bid).
///
/// Equal prices are ordered by lower `agent_id` first. Quotations with a
/// non-positive quantity never enter the book.
pub fn sort_book(quotations: &[Quotation]) -> (Vec<Quotation>, Vec<Quotation>) {
    let (mut sellers, mut buyers): (Vec<_>, Vec<_>) = quotations
        .iter()
        .filter(|q| q.quantity > 0.0)
        .partition(|q| q.side == Side::Sell);
    // stable sorts keep submission order for identical (price, agent) keys
    sellers.sort_by(seller_order);
    buyers.sort_by(buyer_order);
    (sellers, buyers)
}

/// Average-price settlement of a single seller/buyer pair.
///
/// Returns `None` when the ask exceeds the bid. The returned trade has
/// `round == 0`; clearing routines stamp the actual round.
pub fn match_pair(seller: &Quotation, buyer: &Quotation) -> Option<Trade> {
    (seller.price <= buyer.price).then(|| Trade {
        seller_id: seller.agent_id,
        buyer_id: buyer.agent_id,
        price: (seller.price + buyer.price) / 2.0,
        quantity: seller.quantity.min(buyer.quantity),
        round: 0,
    })
}

/// Consecutive failed head matches tolerated before MRDAC gives up.
///
/// While both lists are non-empty the removal rule guarantees that some
/// feasible pair exists, so reaching this cap requires an astronomically
/// unlikely run of coin flips. It bounds the number of rounds by
/// `(n_sellers + n_buyers) * (idle_limit + 1)`.
pub fn idle_limit(participants: usize) -> usize {
    32 * participants * participants
}

/// Upper bound on `rounds_executed` for a book with `participants` quotations.
pub fn round_limit(participants: usize) -> usize {
    participants * (idle_limit(participants) + 1)
}

/// Multi-round double auction clearing.
pub fn clear_mrdac(quotations: &[Quotation], seed: u64) -> ClearingResult {
    let (sellers, buyers) = sort_book(quotations);
    let book: Vec<Quotation> = sellers.iter().chain(&buyers).copied().collect();
    let idle_cap = idle_limit(book.len());
    let mut sellers: VecDeque<Quotation> = sellers.into();
    let mut buyers: VecDeque<Quotation> = buyers.into();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut trades = Vec::new();
    let mut round = 0;
    let mut idle = 0;
    loop {
        drop_unmatchable(&mut sellers, &mut buyers);
        if sellers.is_empty() || buyers.is_empty() || idle >= idle_cap {
            break;
        }
        round += 1;
        let (seller, buyer) = (sellers[0], buyers[0]);
        match match_pair(&seller, &buyer) {
            Some(mut trade) => {
                trade.round = round;
                idle = 0;
                sellers.pop_front();
                buyers.pop_front();
                let left_s = seller.quantity - trade.quantity;
                let left_b = buyer.quantity - trade.quantity;
                if left_s > QTY_EPS {
                    sellers.push_back(Quotation {
                        quantity: left_s,
                        ..seller
                    });
                }
                if left_b > QTY_EPS {
                    buyers.push_back(Quotation {
                        quantity: left_b,
                        ..buyer
                    });
                }
                trades.push(trade);
            }
            None => {
                idle += 1;
                if rng.random_bool(0.5) {
                    sellers.rotate_left(1);
                } else {
                    buyers.rotate_left(1);
                }
            }
        }
    }
    ClearingResult::from_book(&book, trades, round)
}

/// Removes sellers asking more than every remaining bid and buyers bidding
/// less than every remaining ask, until neither list changes.
fn drop_unmatchable(sellers: &mut VecDeque<Quotation>, buyers: &mut VecDeque<Quotation>) {
    loop {
        let before = sellers.len() + buyers.len();
        let max_bid = buyers.iter().map(|b| b.price).fold(f64::NEG_INFINITY, f64::max);
        sellers.retain(|s| s.price <= max_bid);
        let min_ask = sellers.iter().map(|s| s.price).fold(f64::INFINITY, f64::min);
        buyers.retain(|b| b.price >= min_ask);
        if sellers.len() + buyers.len() == before {
            break;
        }
    }
}

/// Single pass of head-to-head pairing without requeueing.
///
/// The i-th best seller meets the i-th best buyer once; any partial-fill
/// remainder stays unmatched. Because both lists are sorted, the first
/// infeasible pair ends the pass: every later seller asks at least as much
/// and every later buyer bids at most as much.
pub fn clear_greedy(quotations: &[Quotation]) -> ClearingResult {
    let (sellers, buyers) = sort_book(quotations);
    let mut trades = Vec::new();
    let mut rounds = 0;
    for (seller, buyer) in sellers.iter().zip(&buyers) {
        rounds += 1;
        match match_pair(seller, buyer) {
            Some(mut t) => {
                t.round = rounds;
                trades.push(t);
            }
            None => break,
        }
    }
    let book: Vec<Quotation> = sellers.into_iter().chain(buyers).collect();
    ClearingResult::from_book(&book, trades, rounds)
}

/// Uniform-price double auction.
///
/// With sellers ascending and buyers descending, `k` is the largest index
/// such that the k-th highest bid covers the k-th lowest ask. The first `k`
/// sellers and buyers trade at the single price `(bid_k + ask_k) / 2`. The
/// shorter side is filled completely; the longer side is rationed pro rata.
pub fn clear_vda(quotations: &[Quotation]) -> ClearingResult {
    let (sellers, buyers) = sort_book(quotations);
    let k = sellers
        .iter()
        .zip(&buyers)
        .take_while(|(s, b)| s.price <= b.price)
        .count();
    let book: Vec<Quotation> = sellers.iter().chain(&buyers).copied().collect();
    if k == 0 {
        return ClearingResult::from_book(&book, Vec::new(), 0);
    }
    let price = (sellers[k - 1].price + buyers[k - 1].price) / 2.0;
    let supply: f64 = sellers[..k].iter().map(|q| q.quantity).sum();
    let demand: f64 = buyers[..k].iter().map(|q| q.quantity).sum();
    let volume = supply.min(demand);
    let ration = |side: &[Quotation], total: f64| -> Vec<f64> {
        if total <= volume {
            side.iter().map(|q| q.quantity).collect()
        } else {
            side.iter().map(|q| q.quantity * volume / total).collect()
        }
    };
    let mut sell_alloc = ration(&sellers[..k], supply);
    let mut buy_alloc = ration(&buyers[..k], demand);

    // Pair the allocations off in priority order.
    let mut trades = Vec::new();
    let (mut i, mut j) = (0, 0);
    while i < k && j < k {
        let q = sell_alloc[i].min(buy_alloc[j]);
        if q > QTY_EPS {
            trades.push(Trade {
                seller_id: sellers[i].agent_id,
                buyer_id: buyers[j].agent_id,
                price,
                quantity: q,
                round: 1,
            });
        }
        sell_alloc[i] -= q;
        buy_alloc[j] -= q;
        if sell_alloc[i] <= QTY_EPS {
            i += 1;
        }
        if buy_alloc[j] <= QTY_EPS {
            j += 1;
        }
    }
    ClearingResult::from_book(&book, trades, 1)
}

/// Main-grid settlement of one agent's leftover position.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GridSettlement {
    /// kWh exported at the feed-in tariff.
    pub fit_kwh: f64,
    /// kWh imported at the emergency price.
    pub emergency_kwh: f64,
    /// `fit * fit_kwh - emergency * emergency_kwh`.
    pub cash: f64,
}

/// Settles leftover surpluses at the feed-in tariff and deficits at the
/// emergency price.
pub fn settle_residual(
    residual_buy: &BTreeMap<usize, f64>,
    residual_sell: &BTreeMap<usize, f64>,
    prices: &PriceSignal,
) -> BTreeMap<usize, GridSettlement> {
    let mut out: BTreeMap<usize, GridSettlement> = BTreeMap::new();
    for (&agent, &q) in residual_sell {
        out.entry(agent).or_default().fit_kwh += q.max(0.0);
    }
    for (&agent, &q) in residual_buy {
        out.entry(agent).or_default().emergency_kwh += q.max(0.0);
    }
    for s in out.values_mut() {
        s.cash = prices.fit * s.fit_kwh - prices.emergency * s.emergency_kwh;
    }
    out
}
