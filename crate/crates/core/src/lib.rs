//! Two-stage multi-microgrid electricity market.
//!
//! Microgrids buy forecast deficits day-ahead, then rebalance realized
//! surpluses and deficits intra-day through a peer-to-peer double auction.
//! Whatever the auction and local storage cannot absorb is settled against
//! the main grid at the feed-in tariff or the emergency price.
//!
//! - [`auction`]: quotation books and the MRDAC / greedy / VDA clearing rules
//! - [`microgrid`]: storage dynamics, day-ahead procurement and profit terms
//! - [`env`]: the decentralized partially observable trading environment
//! - [`par`]: data-parallel helpers with a sequential fallback

pub mod auction;
pub mod env;
pub mod microgrid;
pub mod par;

/// Absolute tolerance used for energy (kWh) and cash comparisons.
pub const TOLERANCE: f64 = 1e-9;
