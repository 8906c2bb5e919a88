use rand::Rng;

use crate::{check_len, NnError, Param};

/// Recurrent state carried between LSTM steps.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub hidden: Vec<f64>,
    pub cell: Vec<f64>,
}

impl LstmState {
    pub fn zeros(width: usize) -> Self {
        Self {
            hidden: vec![0.0; width],
            cell: vec![0.0; width],
        }
    }
}

/// Everything a backward step needs from its forward step.
#[derive(Debug, Clone)]
pub struct LstmCache {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    i: Vec<f64>,
    f: Vec<f64>,
    g: Vec<f64>,
    o: Vec<f64>,
    tanh_c: Vec<f64>,
}

/// Per-step outputs, per-step caches and the final state of an unroll.
pub type Unrolled = (Vec<Vec<f64>>, Vec<LstmCache>, LstmState);

/// Standard LSTM cell with gate blocks ordered input, forget, candidate, output.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmCell {
    pub w_x: Param,
    pub w_h: Param,
    pub b: Param,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl LstmCell {
    /// Uniform `±1/sqrt(width)` weights, forget-gate bias 1.
    pub fn new<R: Rng + ?Sized>(name: &str, inputs: usize, width: usize, rng: &mut R) -> Self {
        let scale = 1.0 / (width as f64).sqrt();
        let mut b = Param::zeros(format!("{name}.b"), 4 * width, 1);
        b.value[width..2 * width].fill(1.0);
        Self {
            w_x: Param::uniform(format!("{name}.w_x"), 4 * width, inputs, scale, rng),
            w_h: Param::uniform(format!("{name}.w_h"), 4 * width, width, scale, rng),
            b,
        }
    }

    pub fn width(&self) -> usize {
        self.w_h.cols
    }

    pub fn inputs(&self) -> usize {
        self.w_x.cols
    }

    pub fn params(&self) -> [&Param; 3] {
        [&self.w_x, &self.w_h, &self.b]
    }

    pub fn params_mut(&mut self) -> [&mut Param; 3] {
        [&mut self.w_x, &mut self.w_h, &mut self.b]
    }

    /// One step. The new hidden vector is also the cell output.
    pub fn step(&self, x: &[f64], state: &LstmState) -> Result<(LstmState, LstmCache), NnError> {
        let n = self.width();
        let n_in = self.inputs();
        check_len(&self.w_x.name, n_in, x.len())?;
        check_len(&self.w_h.name, n, state.hidden.len())?;
        check_len(&self.w_h.name, n, state.cell.len())?;

        let mut pre = self.b.value.clone();
        for (r, p) in pre.iter_mut().enumerate() {
            let wx = &self.w_x.value[r * n_in..(r + 1) * n_in];
            let wh = &self.w_h.value[r * n..(r + 1) * n];
            *p += wx.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
                + wh.iter().zip(&state.hidden).map(|(w, v)| w * v).sum::<f64>();
        }
        let i: Vec<f64> = pre[..n].iter().map(|&v| sigmoid(v)).collect();
        let f: Vec<f64> = pre[n..2 * n].iter().map(|&v| sigmoid(v)).collect();
        let g: Vec<f64> = pre[2 * n..3 * n].iter().map(|v| v.tanh()).collect();
        let o: Vec<f64> = pre[3 * n..].iter().map(|&v| sigmoid(v)).collect();
        let cell: Vec<f64> = (0..n).map(|k| f[k] * state.cell[k] + i[k] * g[k]).collect();
        let tanh_c: Vec<f64> = cell.iter().map(|c| c.tanh()).collect();
        let hidden: Vec<f64> = (0..n).map(|k| o[k] * tanh_c[k]).collect();
        let cache = LstmCache {
            x: x.to_vec(),
            h_prev: state.hidden.clone(),
            c_prev: state.cell.clone(),
            i,
            f,
            g,
            o,
            tanh_c,
        };
        Ok((LstmState { hidden, cell }, cache))
    }

    /// Backward through one step.
    ///
    /// `dh` is the total gradient reaching this step's hidden output (from
    /// the layer above plus the next step), `dc` the gradient from the next
    /// step's cell. Returns `(dx, dh_prev, dc_prev)` and accumulates
    /// parameter gradients.
    pub fn backward_step(&mut self, cache: &LstmCache, dh: &[f64], dc: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let n = self.width();
        let n_in = self.inputs();
        let mut da = vec![0.0; 4 * n];
        let mut dc_prev = vec![0.0; n];
        for k in 0..n {
            let (i, f, g, o, tc) = (cache.i[k], cache.f[k], cache.g[k], cache.o[k], cache.tanh_c[k]);
            let d_o = dh[k] * tc;
            let dct = dc[k] + dh[k] * o * (1.0 - tc * tc);
            let di = dct * g;
            let dg = dct * i;
            let df = dct * cache.c_prev[k];
            dc_prev[k] = dct * f;
            da[k] = di * i * (1.0 - i);
            da[n + k] = df * f * (1.0 - f);
            da[2 * n + k] = dg * (1.0 - g * g);
            da[3 * n + k] = d_o * o * (1.0 - o);
        }
        let mut dx = vec![0.0; n_in];
        let mut dh_prev = vec![0.0; n];
        for (r, &d) in da.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            let wx = &self.w_x.value[r * n_in..(r + 1) * n_in];
            let gx = &mut self.w_x.grad[r * n_in..(r + 1) * n_in];
            for k in 0..n_in {
                gx[k] += d * cache.x[k];
                dx[k] += d * wx[k];
            }
            let wh = &self.w_h.value[r * n..(r + 1) * n];
            let gh = &mut self.w_h.grad[r * n..(r + 1) * n];
            for k in 0..n {
                gh[k] += d * cache.h_prev[k];
                dh_prev[k] += d * wh[k];
            }
            self.b.grad[r] += d;
        }
        (dx, dh_prev, dc_prev)
    }

    /// Unrolls the cell over `xs` from `init`, returning outputs and caches.
    pub fn forward_sequence(&self, xs: &[Vec<f64>], init: &LstmState) -> Result<Unrolled, NnError> {
        let mut state = init.clone();
        let mut outs = Vec::with_capacity(xs.len());
        let mut caches = Vec::with_capacity(xs.len());
        for x in xs {
            let (next, cache) = self.step(x, &state)?;
            outs.push(next.hidden.clone());
            caches.push(cache);
            state = next;
        }
        Ok((outs, caches, state))
    }

    /// Backpropagation through time over a sequence produced by
    /// [`LstmCell::forward_sequence`]. `dhs[t]` is the gradient on output `t`.
    /// Gradients are not propagated into the initial state.
    pub fn backward_sequence(&mut self, caches: &[LstmCache], dhs: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let n = self.width();
        let mut dh_next = vec![0.0; n];
        let mut dc_next = vec![0.0; n];
        let mut dxs = vec![Vec::new(); caches.len()];
        for t in (0..caches.len()).rev() {
            let dh: Vec<f64> = dhs[t].iter().zip(&dh_next).map(|(a, b)| a + b).collect();
            let (dx, dh_prev, dc_prev) = self.backward_step(&caches[t], &dh, &dc_next);
            dxs[t] = dx;
            dh_next = dh_prev;
            dc_next = dc_prev;
        }
        dxs
    }
}
