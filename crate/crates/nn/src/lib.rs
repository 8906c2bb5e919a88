//! Minimal differentiable kernel with hand-written gradients.
//!
//! Everything is 64-bit and vector-at-a-time: a forward call returns the
//! activations plus whatever the matching backward call needs, and backward
//! calls accumulate parameter gradients in place. There is no graph; callers
//! chain layers explicitly.

mod adam;
mod checkpoint;
mod dense;
mod gaussian;
mod lstm;
mod param;

pub use adam::{adam_update, Adam, AdamConfig};
pub use checkpoint::{Checkpoint, NamedTensor, CHECKPOINT_MAGIC};
pub use dense::{Activation, Dense};
pub use gaussian::{
    gaussian_entropy, gaussian_log_prob, squashed_log_prob, squashed_log_prob_grad, squashed_sample, LOG_STD_MAX,
    LOG_STD_MIN,
};
pub use lstm::{LstmCache, LstmCell, LstmState, Unrolled};
pub use param::{clip_grad_norm, grad_norm, param_count, zero_grads, Param};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch in {what}: expected {expected}, got {got}")]
    Shape { what: String, expected: usize, got: usize },
    #[error("malformed checkpoint at line {line}: {reason}")]
    Checkpoint { line: usize, reason: String },
    #[error("incompatible checkpoint: {}", .0.join("; "))]
    Incompatible(Vec<String>),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn check_len(what: &str, expected: usize, got: usize) -> Result<(), NnError> {
    if expected == got {
        Ok(())
    } else {
        Err(NnError::Shape {
            what: what.to_string(),
            expected,
            got,
        })
    }
}

/// Daily sinusoidal encoding `(sin 2πt/24, cos 2πt/24)` of an hour index.
///
/// The phase is reduced modulo 24 first, so `t` and `t + 24` encode
/// identically.
pub fn periodic_encode(t: f64) -> [f64; 2] {
    let phase = std::f64::consts::TAU * t.rem_euclid(24.0) / 24.0;
    [phase.sin(), phase.cos()]
}
