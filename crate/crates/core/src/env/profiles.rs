//! Normalized hourly load/PV profiles.
//!
//! The CSV layout is one row per agent-hour:
//!
//! ```text
//! agent_id,hour,load_norm,gen_norm
//! 0,0,0.41,0
//! ```
//!
//! `hour` is absolute (day `d` covers hours `24d .. 24d + 23`). Every agent
//! must cover the same hours `0 .. 24D` exactly once.

use std::io;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::EnvError;
use crate::microgrid::MicrogridParams;

pub const COLUMNS: [&str; 4] = ["agent_id", "hour", "load_norm", "gen_norm"];

/// Hourly series in kWh for one agent.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentSeries {
    pub load: Vec<f64>,
    pub gen: Vec<f64>,
}

/// Normalized profiles indexed `[agent][hour]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileLibrary {
    pub load: Vec<Vec<f64>>,
    pub gen: Vec<Vec<f64>>,
}

impl ProfileLibrary {
    pub fn n_agents(&self) -> usize {
        self.load.len()
    }

    pub fn hours(&self) -> usize {
        self.load.first().map_or(0, Vec::len)
    }

    pub fn n_days(&self) -> usize {
        self.hours() / 24
    }

    /// Scales agent `i` by `params[i]`'s peak load and generation.
    pub fn scaled(&self, params: &[MicrogridParams]) -> Result<Vec<AgentSeries>, EnvError> {
        if params.len() != self.n_agents() {
            return Err(EnvError::Schema(format!(
                "profiles cover {} agents but {} microgrids are configured",
                self.n_agents(),
                params.len()
            )));
        }
        Ok(params
            .iter()
            .enumerate()
            .map(|(i, p)| AgentSeries {
                load: self.load[i].iter().map(|v| v * p.load_max).collect(),
                gen: self.gen[i].iter().map(|v| v * p.gen_max).collect(),
            })
            .collect())
    }

    pub fn from_reader<R: io::Read>(reader: R) -> Result<Self, EnvError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let mut idx = [0usize; 4];
        for (k, col) in COLUMNS.iter().enumerate() {
            idx[k] = headers
                .iter()
                .position(|h| h == *col)
                .ok_or_else(|| EnvError::Schema(format!("missing column `{col}`")))?;
        }

        let mut rows: Vec<(usize, usize, f64, f64)> = Vec::new();
        for (n, record) in rdr.records().enumerate() {
            let record = record?;
            let line = n + 2;
            let field = |k: usize| -> Result<&str, EnvError> {
                record
                    .get(idx[k])
                    .ok_or_else(|| EnvError::Schema(format!("line {line}: missing `{}`", COLUMNS[k])))
            };
            let int = |k: usize| -> Result<usize, EnvError> {
                field(k)?
                    .parse()
                    .map_err(|_| EnvError::Schema(format!("line {line}: `{}` is not an index", COLUMNS[k])))
            };
            let real = |k: usize| -> Result<f64, EnvError> {
                field(k)?
                    .parse()
                    .map_err(|_| EnvError::Schema(format!("line {line}: `{}` is not a number", COLUMNS[k])))
            };
            let (agent_id, hour, load, gen) = (int(0)?, int(1)?, real(2)?, real(3)?);
            for (column, value) in [("load_norm", load), ("gen_norm", gen)] {
                if !(0.0..=1.0).contains(&value) {
                    return Err(EnvError::Range {
                        agent_id,
                        hour,
                        column,
                        value,
                    });
                }
            }
            rows.push((agent_id, hour, load, gen));
        }

        let n_agents = rows.iter().map(|r| r.0 + 1).max().unwrap_or(0);
        if n_agents == 0 {
            return Err(EnvError::Schema("no profile rows".into()));
        }
        if !rows.len().is_multiple_of(n_agents) {
            return Err(EnvError::Schema("agents cover different numbers of hours".into()));
        }
        let hours = rows.len() / n_agents;
        if hours == 0 || !hours.is_multiple_of(24) {
            return Err(EnvError::Schema(format!(
                "each agent needs whole days of hourly data, found {hours} hours"
            )));
        }
        let mut load = vec![vec![f64::NAN; hours]; n_agents];
        let mut gen = vec![vec![f64::NAN; hours]; n_agents];
        for &(a, h, l, g) in &rows {
            if h >= hours || !load[a][h].is_nan() {
                return Err(EnvError::Schema(format!(
                    "agent {a} hour {h} is duplicated or outside 0..{hours}"
                )));
            }
            load[a][h] = l;
            gen[a][h] = g;
        }
        if load.iter().flatten().any(|v| v.is_nan()) {
            return Err(EnvError::Schema("agent ids must be contiguous from 0".into()));
        }
        Ok(Self { load, gen })
    }

    pub fn read_csv(path: &Path) -> Result<Self, EnvError> {
        Self::from_reader(std::fs::File::open(path)?)
    }

    /// Writes with shortest round-trip float formatting, so reading the
    /// output back reproduces every value bit for bit.
    pub fn to_writer<W: io::Write>(&self, writer: W) -> Result<(), EnvError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(COLUMNS)?;
        for a in 0..self.n_agents() {
            for h in 0..self.hours() {
                w.write_record([
                    a.to_string(),
                    h.to_string(),
                    self.load[a][h].to_string(),
                    self.gen[a][h].to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), EnvError> {
        self.to_writer(std::fs::File::create(path)?)
    }

    /// Residential-looking synthetic days: a morning and a stronger evening
    /// load peak, and a cloud-scaled bell of PV around midday.
    pub fn synthetic(n_agents: usize, days: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let load_noise = Normal::new(0.0, 0.04).expect("valid std");
        let pv_noise = Normal::new(0.0, 0.05).expect("valid std");
        let hours = days * 24;
        let mut load = vec![Vec::with_capacity(hours); n_agents];
        let mut gen = vec![Vec::with_capacity(hours); n_agents];
        for _ in 0..days {
            for a in 0..n_agents {
                let level: f64 = rng.random_range(0.75..1.0);
                let cloud: f64 = rng.random_range(0.3..1.0);
                for h in 0..24 {
                    let x = h as f64;
                    let shape =
                        0.35 + 0.25 * (-((x - 8.0) / 2.0).powi(2)).exp() + 0.55 * (-((x - 19.0) / 2.5).powi(2)).exp();
                    let l = shape * level + load_noise.sample(&mut rng);
                    load[a].push(l.clamp(0.0, 1.0));
                    let g = if (6..=19).contains(&h) {
                        cloud * (-((x - 12.5) / 3.0).powi(2)).exp() * (1.0 + pv_noise.sample(&mut rng))
                    } else {
                        0.0
                    };
                    gen[a].push(g.clamp(0.0, 1.0));
                }
            }
        }
        Self { load, gen }
    }
}

/// Reads a profile CSV and scales it to kWh with each grid's peak values.
pub fn load_profiles(path: &Path, params: &[MicrogridParams]) -> Result<Vec<AgentSeries>, EnvError> {
    ProfileLibrary::read_csv(path)?.scaled(params)
}
