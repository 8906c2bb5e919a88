//! Main-grid price processes.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::EnvError;
use crate::auction::PriceSignal;

/// How the emergency price evolves over the day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EmergencyPrices {
    /// `base + amplitude * sin(2pi (h - phase_hour) / 24)` plus Gaussian noise,
    /// clipped to `[min, max]`.
    Diurnal {
        base: f64,
        amplitude: f64,
        phase_hour: f64,
        noise_std: f64,
        min: f64,
        max: f64,
    },
    /// Fixed hourly values, repeated with period `values.len()`.
    Schedule { values: Vec<f64> },
}

impl Default for EmergencyPrices {
    fn default() -> Self {
        EmergencyPrices::Diurnal {
            base: 25.0,
            amplitude: 10.0,
            phase_hour: 9.0,
            noise_std: 2.0,
            min: 15.0,
            max: 35.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriceConfig {
    pub fit: f64,
    pub day_ahead: f64,
    pub emergency: EmergencyPrices,
}

impl Default for PriceConfig {
    fn default() -> Self {
        Self {
            fit: 2.0,
            day_ahead: 8.0,
            emergency: EmergencyPrices::default(),
        }
    }
}

impl PriceConfig {
    /// Checks that every price this configuration can emit is ordered
    /// `fit <= day_ahead <= emergency`.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), EnvError> {
        let lowest = match &self.emergency {
            EmergencyPrices::Diurnal {
                min, max, noise_std, ..
            } => {
                if !(min <= max) || !(*noise_std >= 0.0) {
                    return Err(EnvError::Config(format!(
                        "emergency band [{min}, {max}] with noise std {noise_std} is not valid"
                    )));
                }
                *min
            }
            EmergencyPrices::Schedule { values } => {
                if values.is_empty() {
                    return Err(EnvError::Config("emergency schedule is empty".into()));
                }
                values.iter().copied().fold(f64::INFINITY, f64::min)
            }
        };
        PriceSignal::new(self.fit, self.day_ahead, lowest)?;
        Ok(())
    }

    /// Emergency price for absolute hour `hour`. Noise, if any, is drawn from `rng`.
    pub fn emergency_price<R: Rng + ?Sized>(&self, hour: usize, rng: &mut R) -> f64 {
        match &self.emergency {
            EmergencyPrices::Diurnal {
                base,
                amplitude,
                phase_hour,
                noise_std,
                min,
                max,
            } => {
                let h = (hour % 24) as f64;
                let z: f64 = rng.sample(StandardNormal);
                let raw = base + amplitude * (2.0 * PI * (h - phase_hour) / 24.0).sin() + noise_std * z;
                raw.clamp(*min, *max)
            }
            EmergencyPrices::Schedule { values } => values[hour % values.len()],
        }
    }

    /// Price tuples for hours `0..hours`.
    pub fn sample_day<R: Rng + ?Sized>(&self, hours: usize, rng: &mut R) -> Vec<PriceSignal> {
        (0..hours)
            .map(|h| PriceSignal {
                fit: self.fit,
                day_ahead: self.day_ahead,
                emergency: self.emergency_price(h, rng),
            })
            .collect()
    }
}
