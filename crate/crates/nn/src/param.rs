use rand::Rng;

/// A named row-major parameter matrix with a gradient accumulator of the same shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
}

impl Param {
    pub fn zeros(name: impl Into<String>, rows: usize, cols: usize) -> Self {
        Self {
            name: name.into(),
            rows,
            cols,
            value: vec![0.0; rows * cols],
            grad: vec![0.0; rows * cols],
        }
    }

    pub fn filled(name: impl Into<String>, rows: usize, cols: usize, v: f64) -> Self {
        let mut p = Self::zeros(name, rows, cols);
        p.value.fill(v);
        p
    }

    /// Uniform initialization in `[-scale, scale]`.
    pub fn uniform<R: Rng + ?Sized>(
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        scale: f64,
        rng: &mut R,
    ) -> Self {
        let mut p = Self::zeros(name, rows, cols);
        for v in &mut p.value {
            *v = rng.random_range(-scale..=scale);
        }
        p
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    pub fn is_finite(&self) -> bool {
        self.value.iter().all(|v| v.is_finite())
    }
}

pub fn zero_grads(params: &mut [&mut Param]) {
    for p in params {
        p.zero_grad();
    }
}

pub fn grad_norm(params: &[&Param]) -> f64 {
    params
        .iter()
        .flat_map(|p| p.grad.iter())
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt()
}

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(params: &mut [&mut Param], max_norm: f64) -> f64 {
    let norm = params
        .iter()
        .flat_map(|p| p.grad.iter())
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for p in params.iter_mut() {
            p.grad.iter_mut().for_each(|g| *g *= scale);
        }
    }
    norm
}

pub fn param_count(params: &[&Param]) -> usize {
    params.iter().map(|p| p.len()).sum()
}
