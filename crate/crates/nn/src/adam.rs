use crate::Param;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam step on a flat parameter vector.
///
/// `step` is the 1-based update count after this step.
pub fn adam_update(config: &AdamConfig, params: &mut [f64], grads: &[f64], m: &mut [f64], v: &mut [f64], step: u64) {
    let bc1 = 1.0 - config.beta1.powi(step as i32);
    let bc2 = 1.0 - config.beta2.powi(step as i32);
    for k in 0..params.len() {
        let g = grads[k];
        m[k] = config.beta1 * m[k] + (1.0 - config.beta1) * g;
        v[k] = config.beta2 * v[k] + (1.0 - config.beta2) * g * g;
        let m_hat = m[k] / bc1;
        let v_hat = v[k] / bc2;
        params[k] -= config.lr * m_hat / (v_hat.sqrt() + config.eps);
    }
}

/// Adam optimizer holding first and second moments for an ordered parameter list.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &[&Param]) -> Self {
        Self {
            config,
            step: 0,
            m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }

    /// Applies the accumulated gradients. `params` must be passed in the
    /// same order every time.
    pub fn update(&mut self, params: &mut [&mut Param]) {
        assert_eq!(params.len(), self.m.len(), "parameter list changed size");
        self.step += 1;
        for (k, p) in params.iter_mut().enumerate() {
            let Param { value, grad, .. } = &mut **p;
            adam_update(&self.config, value, grad, &mut self.m[k], &mut self.v[k], self.step);
        }
    }
}
