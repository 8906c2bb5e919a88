//! Recurrent tanh-squashed Gaussian policy.

use gridmarket_nn::{
    squashed_log_prob, squashed_sample, Activation, Dense, LstmCache, LstmCell, LstmState, NnError, Param, LOG_STD_MAX,
    LOG_STD_MIN,
};
use rand::Rng;
use rand_distr::StandardNormal;

pub const ACTION_DIM: usize = 3;

/// `obs -> dense(tanh) -> LSTM -> dense(tanh) -> means`, with a
/// state-independent log standard deviation per action component.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyNet {
    pub embed: Dense,
    pub lstm: LstmCell,
    pub trunk: Dense,
    pub head: Dense,
    pub log_std: Param,
}

/// Activations of a forward pass over a sequence, kept for backward.
#[derive(Debug, Clone)]
pub struct PolicyCache {
    embeds: Vec<Vec<f64>>,
    lstm: Vec<LstmCache>,
    hiddens: Vec<Vec<f64>>,
    trunks: Vec<Vec<f64>>,
    pub means: Vec<Vec<f64>>,
}

impl PolicyNet {
    pub fn new<R: Rng + ?Sized>(prefix: &str, obs_len: usize, hidden: usize, init_log_std: f64, rng: &mut R) -> Self {
        Self {
            embed: Dense::new(&format!("{prefix}.embed"), obs_len, hidden, Activation::Tanh, 1.0, rng),
            lstm: LstmCell::new(&format!("{prefix}.lstm"), hidden, hidden, rng),
            trunk: Dense::new(&format!("{prefix}.trunk"), hidden, hidden, Activation::Tanh, 1.0, rng),
            head: Dense::new(
                &format!("{prefix}.head"),
                hidden,
                ACTION_DIM,
                Activation::Identity,
                0.01,
                rng,
            ),
            log_std: Param::filled(format!("{prefix}.log_std"), ACTION_DIM, 1, init_log_std),
        }
    }

    pub fn obs_len(&self) -> usize {
        self.embed.inputs()
    }

    pub fn hidden(&self) -> usize {
        self.lstm.width()
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut v: Vec<&Param> = Vec::with_capacity(10);
        v.extend(self.embed.params());
        v.extend(self.lstm.params());
        v.extend(self.trunk.params());
        v.extend(self.head.params());
        v.push(&self.log_std);
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v: Vec<&mut Param> = Vec::with_capacity(10);
        v.extend(self.embed.params_mut());
        v.extend(self.lstm.params_mut());
        v.extend(self.trunk.params_mut());
        v.extend(self.head.params_mut());
        v.push(&mut self.log_std);
        v
    }

    pub fn initial_state(&self) -> LstmState {
        LstmState::zeros(self.hidden())
    }

    /// Log standard deviations, clamped to the supported range.
    pub fn log_std(&self) -> Vec<f64> {
        self.log_std
            .value
            .iter()
            .map(|v| v.clamp(LOG_STD_MIN, LOG_STD_MAX))
            .collect()
    }

    pub fn clamp_log_std(&mut self) {
        for v in &mut self.log_std.value {
            *v = v.clamp(LOG_STD_MIN, LOG_STD_MAX);
        }
    }

    /// One inference step: action means and the next recurrent state.
    pub fn step(&self, x: &[f64], state: &LstmState) -> Result<(Vec<f64>, LstmState), NnError> {
        let e = self.embed.forward(x)?;
        let (next, _) = self.lstm.step(&e, state)?;
        let z = self.trunk.forward(&next.hidden)?;
        Ok((self.head.forward(&z)?, next))
    }

    pub fn forward_sequence(&self, xs: &[Vec<f64>], init: &LstmState) -> Result<PolicyCache, NnError> {
        let embeds = xs
            .iter()
            .map(|x| self.embed.forward(x))
            .collect::<Result<Vec<_>, _>>()?;
        let (hiddens, lstm, _) = self.lstm.forward_sequence(&embeds, init)?;
        let trunks = hiddens
            .iter()
            .map(|h| self.trunk.forward(h))
            .collect::<Result<Vec<_>, _>>()?;
        let means = trunks
            .iter()
            .map(|z| self.head.forward(z))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(PolicyCache {
            embeds,
            lstm,
            hiddens,
            trunks,
            means,
        })
    }

    /// Accumulates parameter gradients for loss gradients `dmeans[t]` on the
    /// action means of a sequence run through [`PolicyNet::forward_sequence`].
    pub fn backward_sequence(
        &mut self,
        xs: &[Vec<f64>],
        cache: &PolicyCache,
        dmeans: &[Vec<f64>],
    ) -> Result<(), NnError> {
        let mut dhs = Vec::with_capacity(xs.len());
        for (t, dmean) in dmeans.iter().enumerate().take(xs.len()) {
            let dz = self.head.backward(&cache.trunks[t], &cache.means[t], dmean)?;
            dhs.push(self.trunk.backward(&cache.hiddens[t], &cache.trunks[t], &dz)?);
        }
        let des = self.lstm.backward_sequence(&cache.lstm, &dhs);
        for t in 0..xs.len() {
            self.embed.backward(&xs[t], &cache.embeds[t], &des[t])?;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|p| p.is_finite())
    }
}

/// Draws a squashed action. Returns the pre-squash sample, the action in
/// `[-1, 1]^3` and its log-density.
pub fn sample_action<R: Rng + ?Sized>(mean: &[f64], log_std: &[f64], rng: &mut R) -> ([f64; 3], [f64; 3], f64) {
    let eps: Vec<f64> = (0..ACTION_DIM).map(|_| rng.sample(StandardNormal)).collect();
    let std: Vec<f64> = log_std.iter().map(|s| s.exp()).collect();
    let (u, a) = squashed_sample(mean, &std, &eps);
    let lp = squashed_log_prob(mean, log_std, &u);
    ([u[0], u[1], u[2]], [a[0], a[1], a[2]], lp)
}
