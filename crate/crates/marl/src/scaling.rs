//! Fixed input normalization so every network sees values of order one.

use gridmarket_core::env::{EmergencyPrices, EpisodeConfig, Observation, MARKET_FIELDS, WINDOW_FIELDS};
use gridmarket_core::microgrid::MicrogridParams;

/// Divides energies by each grid's own capacity scale and prices by the
/// highest possible emergency price.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureScaler {
    /// Per-agent kWh scale.
    pub energy: Vec<f64>,
    /// Scale for community-wide volumes.
    pub community: f64,
    pub price: f64,
}

impl FeatureScaler {
    pub fn new(params: &[MicrogridParams], config: &EpisodeConfig) -> Self {
        let energy: Vec<f64> = params
            .iter()
            .map(|p| {
                let s = p.load_max.max(p.gen_max).max(p.e_max);
                if s > 0.0 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        let price = match &config.prices.emergency {
            EmergencyPrices::Diurnal { max, .. } => *max,
            EmergencyPrices::Schedule { values } => values.iter().copied().fold(0.0, f64::max),
        }
        .max(config.prices.day_ahead)
        .max(1e-9);
        Self {
            community: energy.iter().sum(),
            energy,
            price,
        }
    }

    /// Scaled flat observation of agent `i`.
    pub fn observation(&self, i: usize, o: &Observation) -> Vec<f64> {
        let mut out = Vec::with_capacity(o.len());
        self.push_observation(i, o, &mut out);
        out
    }

    fn push_observation(&self, i: usize, o: &Observation, out: &mut Vec<f64>) {
        let e = self.energy[i];
        let m = o.market_embed;
        out.extend_from_slice(&[
            m[0] / self.community,
            m[1] / self.community,
            m[2] / self.price,
            m[3] / self.community,
        ]);
        out.push(o.soc / e);
        for w in o.window.chunks_exact(WINDOW_FIELDS) {
            out.extend_from_slice(&[w[0] / e, w[1] / e, w[2] / e, w[3] / self.price]);
        }
        out.extend_from_slice(&o.time_enc);
    }

    /// Scales a raw global state laid out as `[obs_i, soc_i, net_i]` per agent.
    pub fn global_state(&self, raw: &[f64], obs_len: usize) -> Vec<f64> {
        let block = obs_len + 2;
        let mut out = Vec::with_capacity(raw.len());
        for (i, chunk) in raw.chunks_exact(block).enumerate() {
            let e = self.energy[i];
            let m = &chunk[..MARKET_FIELDS];
            out.extend_from_slice(&[
                m[0] / self.community,
                m[1] / self.community,
                m[2] / self.price,
                m[3] / self.community,
            ]);
            out.push(chunk[MARKET_FIELDS] / e);
            let window = &chunk[MARKET_FIELDS + 1..obs_len - 2];
            for w in window.chunks_exact(WINDOW_FIELDS) {
                out.extend_from_slice(&[w[0] / e, w[1] / e, w[2] / e, w[3] / self.price]);
            }
            out.extend_from_slice(&chunk[obs_len - 2..obs_len]);
            out.push(chunk[obs_len] / e);
            out.push(chunk[obs_len + 1] / e);
        }
        out
    }
}
