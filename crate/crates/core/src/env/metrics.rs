//! Per-agent episode totals.

use serde::{Deserialize, Serialize};

use super::HourRecord;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AgentTotals {
    pub total_profit: f64,
    pub emergency_kwh: f64,
    pub fit_kwh: f64,
    /// Energy bought plus energy sold in the P2P market.
    pub p2p_kwh: f64,
    /// Mean end-of-hour SoC.
    pub avg_soc: f64,
}

/// Running totals over the hours of one episode.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EpisodeMetrics {
    pub hours: usize,
    /// Community traded energy, each trade counted once.
    pub cleared_kwh: f64,
    sums: Vec<AgentTotals>,
}

impl EpisodeMetrics {
    pub fn new(n_agents: usize) -> Self {
        Self {
            hours: 0,
            cleared_kwh: 0.0,
            sums: vec![AgentTotals::default(); n_agents],
        }
    }

    pub fn record(&mut self, hour: &HourRecord) {
        self.hours += 1;
        self.cleared_kwh += hour.clearing.volume();
        for (s, a) in self.sums.iter_mut().zip(&hour.agents) {
            s.total_profit += a.reward();
            s.emergency_kwh += a.emergency_kwh;
            s.fit_kwh += a.fit_kwh;
            s.p2p_kwh += a.bought + a.sold;
            s.avg_soc += a.soc_after;
        }
    }

    pub fn agents(&self) -> Vec<AgentTotals> {
        let h = self.hours.max(1) as f64;
        self.sums
            .iter()
            .map(|s| AgentTotals {
                avg_soc: s.avg_soc / h,
                ..*s
            })
            .collect()
    }

    /// Community view: profits, grid energy and average SoC summed over
    /// agents, P2P volume counted once per trade.
    pub fn community(&self) -> AgentTotals {
        let mut c = AgentTotals::default();
        for a in self.agents() {
            c.total_profit += a.total_profit;
            c.emergency_kwh += a.emergency_kwh;
            c.fit_kwh += a.fit_kwh;
            c.avg_soc += a.avg_soc;
        }
        c.p2p_kwh = self.cleared_kwh;
        c
    }
}
