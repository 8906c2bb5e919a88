use rand::Rng;

use crate::{check_len, NnError, Param};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Tanh,
}

/// Fully connected layer `y = act(W x + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub w: Param,
    pub b: Param,
    pub activation: Activation,
}

impl Dense {
    /// Uniform fan-in/fan-out initialization scaled by `gain`, zero bias.
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        inputs: usize,
        outputs: usize,
        activation: Activation,
        gain: f64,
        rng: &mut R,
    ) -> Self {
        let scale = gain * (6.0 / (inputs + outputs) as f64).sqrt();
        Self {
            w: Param::uniform(format!("{name}.w"), outputs, inputs, scale, rng),
            b: Param::zeros(format!("{name}.b"), outputs, 1),
            activation,
        }
    }

    pub fn inputs(&self) -> usize {
        self.w.cols
    }

    pub fn outputs(&self) -> usize {
        self.w.rows
    }

    pub fn params(&self) -> [&Param; 2] {
        [&self.w, &self.b]
    }

    pub fn params_mut(&mut self) -> [&mut Param; 2] {
        [&mut self.w, &mut self.b]
    }

    /// Returns the activated output.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, NnError> {
        check_len(&self.w.name, self.inputs(), x.len())?;
        let n_in = self.inputs();
        let mut y: Vec<f64> = self
            .w
            .value
            .chunks_exact(n_in)
            .zip(&self.b.value)
            .map(|(row, b)| row.iter().zip(x).map(|(w, x)| w * x).sum::<f64>() + b)
            .collect();
        if self.activation == Activation::Tanh {
            y.iter_mut().for_each(|v| *v = v.tanh());
        }
        Ok(y)
    }

    /// Accumulates parameter gradients for upstream gradient `dy` and
    /// returns the gradient with respect to `x`. `y` is the activated output
    /// returned by [`Dense::forward`] for the same `x`.
    pub fn backward(&mut self, x: &[f64], y: &[f64], dy: &[f64]) -> Result<Vec<f64>, NnError> {
        check_len(&self.w.name, self.inputs(), x.len())?;
        check_len(&self.w.name, self.outputs(), dy.len())?;
        check_len(&self.w.name, self.outputs(), y.len())?;
        let n_in = self.inputs();
        let dz: Vec<f64> = match self.activation {
            Activation::Identity => dy.to_vec(),
            Activation::Tanh => dy.iter().zip(y).map(|(d, y)| d * (1.0 - y * y)).collect(),
        };
        let mut dx = vec![0.0; n_in];
        for (r, &dzr) in dz.iter().enumerate() {
            if dzr == 0.0 {
                continue;
            }
            let row = r * n_in;
            let w = &self.w.value[row..row + n_in];
            let gw = &mut self.w.grad[row..row + n_in];
            for k in 0..n_in {
                gw[k] += dzr * x[k];
                dx[k] += dzr * w[k];
            }
            self.b.grad[r] += dzr;
        }
        Ok(dx)
    }
}
