//! Diagonal Gaussian policy heads, optionally tanh-squashed.
//!
//! Squashed samples are `a = tanh(u)` with `u ~ N(mean, exp(log_std)^2)`.
//! Callers keep the pre-squash `u`; its log-density under the squashed head
//! is `log N(u) - sum log(1 - tanh(u)^2)`, and the correction term does not
//! depend on the head parameters.

use std::f64::consts::{LN_2, PI};

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 1.0;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

/// Log-density of `u` under a diagonal Gaussian.
pub fn gaussian_log_prob(mean: &[f64], log_std: &[f64], u: &[f64]) -> f64 {
    mean.iter()
        .zip(log_std)
        .zip(u)
        .map(|((m, ls), x)| {
            let z = (x - m) / ls.exp();
            -0.5 * z * z - ls - HALF_LN_2PI
        })
        .sum()
}

/// `log(1 - tanh(u)^2)` computed without cancellation.
fn log_tanh_derivative(u: f64) -> f64 {
    // 1 - tanh^2 u = 4 / (e^u + e^-u)^2
    2.0 * (LN_2 - u.abs() - (-2.0 * u.abs()).exp().ln_1p())
}

/// Log-density of `tanh(u)` under the squashed head.
pub fn squashed_log_prob(mean: &[f64], log_std: &[f64], u: &[f64]) -> f64 {
    gaussian_log_prob(mean, log_std, u) - u.iter().map(|&x| log_tanh_derivative(x)).sum::<f64>()
}

/// Gradient of [`squashed_log_prob`] with respect to `(mean, log_std)` at fixed `u`.
pub fn squashed_log_prob_grad(mean: &[f64], log_std: &[f64], u: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut dmean = Vec::with_capacity(mean.len());
    let mut dlog_std = Vec::with_capacity(mean.len());
    for ((m, ls), x) in mean.iter().zip(log_std).zip(u) {
        let s = ls.exp();
        let z = (x - m) / s;
        dmean.push(z / s);
        dlog_std.push(z * z - 1.0);
    }
    (dmean, dlog_std)
}

/// Entropy of the unsquashed diagonal Gaussian.
pub fn gaussian_entropy(log_std: &[f64]) -> f64 {
    log_std.iter().map(|ls| ls + 0.5 * (2.0 * PI).ln() + 0.5).sum()
}

/// Reparameterized squashed sample from standard-normal noise `eps`.
/// Returns `(u, tanh(u))`.
pub fn squashed_sample(mean: &[f64], std: &[f64], eps: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let u: Vec<f64> = mean.iter().zip(std).zip(eps).map(|((m, s), e)| m + s * e).collect();
    let a = u.iter().map(|x| x.tanh()).collect();
    (u, a)
}
