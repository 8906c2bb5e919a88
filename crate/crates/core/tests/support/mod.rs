//! Independent reference implementations and invariant checks shared by the
//! integration tests.

#![allow(dead_code)]

use std::collections::BTreeMap;

use gridmarket_core::auction::{ClearingResult, PriceSignal, Quotation, Side, Trade};
use gridmarket_core::microgrid::hourly_profit;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy)]
struct Entry {
    agent: usize,
    price: i64,
    qty: i64,
}

/// `(seller, buyer, price, qty, round)`
pub type BruteTrade = (usize, usize, f64, f64, usize);

/// Step-by-step MRDAC round simulator on integer books.
///
/// Returns trades as `(seller, buyer, price, qty, round)` plus the unmatched
/// quantity of every quoting agent.
pub fn brute_force_mrdac(
    book: &[(usize, Side, i64, i64)],
    seed: u64,
) -> (Vec<BruteTrade>, BTreeMap<usize, f64>, BTreeMap<usize, f64>) {
    let mut sellers: Vec<Entry> = Vec::new();
    let mut buyers: Vec<Entry> = Vec::new();
    for &(agent, side, price, qty) in book {
        let e = Entry { agent, price, qty };
        match side {
            Side::Sell => sellers.push(e),
            Side::Buy => buyers.push(e),
        }
    }
    // selection sort, so the ordering does not lean on the library's comparator
    let order = |list: &mut Vec<Entry>, better: &dyn Fn(&Entry, &Entry) -> bool| {
        let mut out = Vec::new();
        while !list.is_empty() {
            let mut best = 0;
            for k in 1..list.len() {
                if better(&list[k], &list[best]) {
                    best = k;
                }
            }
            out.push(list.remove(best));
        }
        *list = out;
    };
    order(&mut sellers, &|a, b| {
        a.price < b.price || (a.price == b.price && a.agent < b.agent)
    });
    order(&mut buyers, &|a, b| {
        a.price > b.price || (a.price == b.price && a.agent < b.agent)
    });

    let mut quoted_buy = BTreeMap::new();
    let mut quoted_sell = BTreeMap::new();
    for s in &sellers {
        *quoted_sell.entry(s.agent).or_insert(0.0) += s.qty as f64;
    }
    for b in &buyers {
        *quoted_buy.entry(b.agent).or_insert(0.0) += b.qty as f64;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trades = Vec::new();
    let mut round = 0;
    let mut failures_in_a_row = 0;
    loop {
        // a participant leaves once no counterparty could ever accept it
        loop {
            let mut removed = false;
            let mut k = 0;
            while k < sellers.len() {
                if buyers.iter().any(|b| b.price >= sellers[k].price) {
                    k += 1;
                } else {
                    sellers.remove(k);
                    removed = true;
                }
            }
            let mut k = 0;
            while k < buyers.len() {
                if sellers.iter().any(|s| s.price <= buyers[k].price) {
                    k += 1;
                } else {
                    buyers.remove(k);
                    removed = true;
                }
            }
            if !removed {
                break;
            }
        }
        if sellers.is_empty() || buyers.is_empty() {
            break;
        }
        assert!(failures_in_a_row < 100_000, "oracle failed to terminate");
        round += 1;
        let s = sellers.remove(0);
        let b = buyers.remove(0);
        if s.price <= b.price {
            failures_in_a_row = 0;
            let q = s.qty.min(b.qty);
            trades.push((s.agent, b.agent, (s.price + b.price) as f64 / 2.0, q as f64, round));
            if s.qty > q {
                sellers.push(Entry { qty: s.qty - q, ..s });
            }
            if b.qty > q {
                buyers.push(Entry { qty: b.qty - q, ..b });
            }
        } else {
            failures_in_a_row += 1;
            if rng.random_bool(0.5) {
                sellers.push(s);
                buyers.insert(0, b);
            } else {
                sellers.insert(0, s);
                buyers.push(b);
            }
        }
    }

    for &(seller, buyer, _, q, _) in &trades {
        *quoted_sell.get_mut(&seller).unwrap() -= q;
        *quoted_buy.get_mut(&buyer).unwrap() -= q;
    }
    (trades, quoted_buy, quoted_sell)
}

/// Integer book with up to four quotations per side and distinct agents.
pub fn random_small_book(rng: &mut ChaCha8Rng) -> Vec<(usize, Side, i64, i64)> {
    let n_sell = rng.random_range(0..=4);
    let n_buy = rng.random_range(0..=4);
    let mut ids: Vec<usize> = (0..n_sell + n_buy).collect();
    for k in (1..ids.len()).rev() {
        ids.swap(k, rng.random_range(0..=k));
    }
    (0..n_sell + n_buy)
        .map(|k| {
            let side = if k < n_sell { Side::Sell } else { Side::Buy };
            (ids[k], side, rng.random_range(1..=9), rng.random_range(1..=4))
        })
        .collect()
}

pub fn to_quotations(book: &[(usize, Side, i64, i64)]) -> Vec<Quotation> {
    book.iter()
        .map(|&(agent_id, side, p, q)| Quotation {
            agent_id,
            price: p as f64,
            quantity: q as f64,
            side,
        })
        .collect()
}

/// Continuous-valued book with one quotation per agent.
pub fn random_real_book(rng: &mut ChaCha8Rng, max_side: usize) -> Vec<Quotation> {
    let n = rng.random_range(0..=2 * max_side);
    (0..n)
        .map(|agent_id| Quotation {
            agent_id,
            price: rng.random_range(2.0..35.0),
            quantity: rng.random_range(0.001..20.0),
            side: if rng.random_bool(0.5) { Side::Buy } else { Side::Sell },
        })
        .collect()
}

/// Conservation, budget balance, individual rationality and accounting
/// closure for one clearing of `book` (one quotation per agent).
#[allow(clippy::neg_cmp_op_on_partial_ord)]
pub fn check_market_invariants(book: &[Quotation], result: &ClearingResult) -> Result<(), String> {
    let by_agent: BTreeMap<usize, &Quotation> = book.iter().map(|q| (q.agent_id, q)).collect();
    assert_eq!(by_agent.len(), book.len(), "one quotation per agent expected");

    let mut bought = 0.0;
    let mut sold = 0.0;
    for t in &result.trades {
        if !(t.quantity > 0.0) {
            return Err(format!("non-positive trade {t:?}"));
        }
        let (s, b) = (by_agent[&t.seller_id], by_agent[&t.buyer_id]);
        if s.side != Side::Sell || b.side != Side::Buy {
            return Err(format!("trade {t:?} crosses sides"));
        }
        if t.price < s.price - EPS || t.price > b.price + EPS {
            return Err(format!("rationality: {t:?} outside [{}, {}]", s.price, b.price));
        }
        sold += t.quantity;
        bought += t.quantity;
    }
    let sold_by_sellers: f64 = by_agent.keys().map(|&a| result.sold_by(a)).sum();
    let bought_by_buyers: f64 = by_agent.keys().map(|&a| result.bought_by(a)).sum();
    if (sold_by_sellers - bought_by_buyers).abs() > EPS || (sold - bought).abs() > EPS {
        return Err(format!(
            "conservation: sold {sold_by_sellers} bought {bought_by_buyers}"
        ));
    }

    // every agent's P2P cash through the profit accounting; the auctioneer keeps nothing
    let prices = PriceSignal::new(2.0, 8.0, 35.0).unwrap();
    let mut net_cash = 0.0;
    for &a in by_agent.keys() {
        let sells: Vec<Trade> = result.trades.iter().filter(|t| t.seller_id == a).copied().collect();
        let buys: Vec<Trade> = result.trades.iter().filter(|t| t.buyer_id == a).copied().collect();
        let (_, p2p) = hourly_profit(0.0, 0.0, &sells, &buys, &prices);
        net_cash += p2p;
    }
    if net_cash.abs() > EPS {
        return Err(format!("budget: agents net {net_cash}"));
    }

    for q in book.iter().filter(|q| q.quantity > 0.0) {
        let (matched, residual) = match q.side {
            Side::Buy => (
                result.bought_by(q.agent_id),
                result.residual_buy.get(&q.agent_id).copied(),
            ),
            Side::Sell => (
                result.sold_by(q.agent_id),
                result.residual_sell.get(&q.agent_id).copied(),
            ),
        };
        let residual = residual.ok_or_else(|| format!("agent {} missing from residuals", q.agent_id))?;
        if (matched + residual - q.quantity).abs() > EPS {
            return Err(format!(
                "closure: agent {} matched {matched} + residual {residual} != {}",
                q.agent_id, q.quantity
            ));
        }
        if residual < -EPS {
            return Err(format!("negative residual for agent {}", q.agent_id));
        }
    }
    Ok(())
}
