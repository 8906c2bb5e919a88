//! Generalized advantage estimation.

/// Advantages and returns for one finite episode. `bootstrap` is the value
/// of the state after the last reward (zero at a terminal).
pub fn compute_gae(rewards: &[f64], values: &[f64], bootstrap: f64, gamma: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        let next = if t + 1 < n { values[t + 1] } else { bootstrap };
        let delta = rewards[t] + gamma * next - values[t];
        running = delta + gamma * lambda * running;
        adv[t] = running;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, returns)
}

/// Shifts to zero mean and scales to unit population standard deviation.
/// A constant batch is only centered.
pub fn normalize(xs: &mut [f64]) {
    if xs.is_empty() {
        return;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    for x in xs.iter_mut() {
        *x -= mean;
        if std > 1e-12 {
            *x /= std;
        }
    }
}
