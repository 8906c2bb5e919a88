//! Value networks for the four training variants.

use gridmarket_nn::{Activation, Dense, NnError, Param};
use rand::Rng;

use crate::VariantSpec;

/// What a critic network reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CriticInput {
    /// The full global state.
    Global,
    /// Global state followed by a one-hot agent index.
    GlobalWithAgent,
    /// One agent's own observation.
    Local,
}

/// Two tanh hidden layers and a linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(prefix: &str, inputs: usize, hidden: usize, outputs: usize, rng: &mut R) -> Self {
        Self {
            layers: vec![
                Dense::new(&format!("{prefix}.l0"), inputs, hidden, Activation::Tanh, 1.0, rng),
                Dense::new(&format!("{prefix}.l1"), hidden, hidden, Activation::Tanh, 1.0, rng),
                Dense::new(
                    &format!("{prefix}.out"),
                    hidden,
                    outputs,
                    Activation::Identity,
                    1.0,
                    rng,
                ),
            ],
        }
    }

    pub fn inputs(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn outputs(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs()
    }

    /// Returns every layer's input followed by the final output.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<Vec<f64>>, NnError> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        for l in &self.layers {
            let y = l.forward(&acts[acts.len() - 1])?;
            acts.push(y);
        }
        Ok(acts)
    }

    pub fn output(&self, x: &[f64]) -> Result<Vec<f64>, NnError> {
        Ok(self.forward(x)?.pop().unwrap_or_default())
    }

    pub fn backward(&mut self, acts: &[Vec<f64>], dout: &[f64]) -> Result<(), NnError> {
        let mut dy = dout.to_vec();
        for k in (0..self.layers.len()).rev() {
            dy = self.layers[k].backward(&acts[k], &acts[k + 1], &dy)?;
        }
        Ok(())
    }

    pub fn params(&self) -> Vec<&Param> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }
}

/// The critic of one variant: a single shared network or one per agent.
#[derive(Debug, Clone, PartialEq)]
pub struct Critic {
    pub spec: VariantSpec,
    pub nets: Vec<Mlp>,
    n_agents: usize,
}

impl Critic {
    pub fn new<R: Rng + ?Sized>(spec: VariantSpec, n_agents: usize, obs_len: usize, rng: &mut R) -> Self {
        let global = n_agents * (obs_len + 2);
        let nets = match spec.input {
            CriticInput::Global => {
                let heads = if spec.per_agent_heads { n_agents } else { 1 };
                vec![Mlp::new("critic", global, spec.hidden, heads, rng)]
            }
            CriticInput::GlobalWithAgent => vec![Mlp::new("critic", global + n_agents, spec.hidden, 1, rng)],
            CriticInput::Local => (0..n_agents)
                .map(|i| Mlp::new(&format!("critic{i}"), obs_len, spec.hidden, 1, rng))
                .collect(),
        };
        Self { spec, nets, n_agents }
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    /// Input width of each network.
    pub fn input_len(&self) -> usize {
        self.nets[0].inputs()
    }

    fn agent_input(&self, i: usize, global: &[f64]) -> Vec<f64> {
        let mut x = Vec::with_capacity(global.len() + self.n_agents);
        x.extend_from_slice(global);
        x.extend((0..self.n_agents).map(|k| if k == i { 1.0 } else { 0.0 }));
        x
    }

    /// One value estimate per agent.
    pub fn values(&self, global: &[f64], local: &[Vec<f64>]) -> Result<Vec<f64>, NnError> {
        match self.spec.input {
            CriticInput::Global => {
                let out = self.nets[0].output(global)?;
                Ok(if out.len() == self.n_agents {
                    out
                } else {
                    vec![out[0]; self.n_agents]
                })
            }
            CriticInput::GlobalWithAgent => (0..self.n_agents)
                .map(|i| Ok(self.nets[0].output(&self.agent_input(i, global))?[0]))
                .collect(),
            CriticInput::Local => self
                .nets
                .iter()
                .zip(local)
                .map(|(net, o)| Ok(net.output(o)?[0]))
                .collect(),
        }
    }

    /// Accumulates gradients of `weight * sum_i (V_i - target_i)^2` and
    /// returns the unweighted squared-error sum.
    pub fn accumulate(
        &mut self,
        global: &[f64],
        local: &[Vec<f64>],
        targets: &[f64],
        weight: f64,
    ) -> Result<f64, NnError> {
        let mut sse = 0.0;
        match self.spec.input {
            CriticInput::Global => {
                let acts = self.nets[0].forward(global)?;
                let out = &acts[acts.len() - 1];
                let dout: Vec<f64> = if out.len() == self.n_agents {
                    out.iter()
                        .zip(targets)
                        .map(|(v, r)| {
                            sse += (v - r) * (v - r);
                            2.0 * weight * (v - r)
                        })
                        .collect()
                } else {
                    let d: f64 = targets
                        .iter()
                        .map(|r| {
                            sse += (out[0] - r) * (out[0] - r);
                            2.0 * weight * (out[0] - r)
                        })
                        .sum();
                    vec![d]
                };
                self.nets[0].backward(&acts, &dout)?;
            }
            CriticInput::GlobalWithAgent => {
                for (i, r) in targets.iter().enumerate() {
                    let x = self.agent_input(i, global);
                    let acts = self.nets[0].forward(&x)?;
                    let e = acts[acts.len() - 1][0] - r;
                    sse += e * e;
                    self.nets[0].backward(&acts, &[2.0 * weight * e])?;
                }
            }
            CriticInput::Local => {
                for ((net, o), r) in self.nets.iter_mut().zip(local).zip(targets) {
                    let acts = net.forward(o)?;
                    let e = acts[acts.len() - 1][0] - r;
                    sse += e * e;
                    net.backward(&acts, &[2.0 * weight * e])?;
                }
            }
        }
        Ok(sse)
    }

    pub fn params(&self) -> Vec<&Param> {
        self.nets.iter().flat_map(|n| n.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.nets.iter_mut().flat_map(|n| n.params_mut()).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|p| p.is_finite())
    }
}
