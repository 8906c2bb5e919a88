//! Worst relative errors of analytic gradients against central differences.

use gridmarket_nn::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-6;

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        norm(&diff)
    } else {
        norm(&diff) / scale
    }
}

fn numeric(values: &[f64], f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut v = values.to_vec();
    (0..v.len())
        .map(|k| {
            let orig = v[k];
            v[k] = orig + H;
            let up = f(&v);
            v[k] = orig - H;
            let down = f(&v);
            v[k] = orig;
            (up - down) / (2.0 * H)
        })
        .collect()
}

fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

pub fn dense_worst() -> f64 {
    let mut worst: f64 = 0.0;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let act = if seed % 2 == 0 {
            Activation::Tanh
        } else {
            Activation::Identity
        };
        let mut layer = Dense::new("d", 6, 4, act, 1.0, &mut rng);
        layer.b.value = rand_vec(&mut rng, 4);
        let x = rand_vec(&mut rng, 6);
        let c = rand_vec(&mut rng, 4);
        let loss = |l: &Dense, x: &[f64]| -> f64 { l.forward(x).unwrap().iter().zip(&c).map(|(y, c)| y * c).sum() };
        let y = layer.forward(&x).unwrap();
        let dx = layer.backward(&x, &y, &c).unwrap();
        worst = worst.max(rel_err(&dx, &numeric(&x, |v| loss(&layer, v))));
        let num_w = numeric(&layer.w.value, |v| {
            let mut probe = layer.clone();
            probe.w.value.copy_from_slice(v);
            loss(&probe, &x)
        });
        worst = worst.max(rel_err(&layer.w.grad, &num_w));
        let num_b = numeric(&layer.b.value, |v| {
            let mut probe = layer.clone();
            probe.b.value.copy_from_slice(v);
            loss(&probe, &x)
        });
        worst = worst.max(rel_err(&layer.b.grad, &num_b));
    }
    worst
}

pub fn lstm_worst() -> f64 {
    let mut worst: f64 = 0.0;
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let mut cell = LstmCell::new("l", 4, 5, &mut rng);
        let xs: Vec<Vec<f64>> = (0..5).map(|_| rand_vec(&mut rng, 4)).collect();
        let init = LstmState {
            hidden: rand_vec(&mut rng, 5),
            cell: rand_vec(&mut rng, 5),
        };
        let cs: Vec<Vec<f64>> = (0..5).map(|_| rand_vec(&mut rng, 5)).collect();
        let loss = |cell: &LstmCell, xs: &[Vec<f64>]| -> f64 {
            let (outs, _, _) = cell.forward_sequence(xs, &init).unwrap();
            outs.iter()
                .zip(&cs)
                .map(|(h, c)| h.iter().zip(c).map(|(a, b)| a * b).sum::<f64>())
                .sum()
        };
        let (_, caches, _) = cell.forward_sequence(&xs, &init).unwrap();
        let dxs = cell.backward_sequence(&caches, &cs);
        for idx in 0..cell.params().len() {
            let analytic = cell.params()[idx].grad.clone();
            let num = numeric(&cell.params()[idx].value, |v| {
                let mut probe = cell.clone();
                probe.params_mut()[idx].value.copy_from_slice(v);
                loss(&probe, &xs)
            });
            worst = worst.max(rel_err(&analytic, &num));
        }
        for t in 0..xs.len() {
            let num = numeric(&xs[t], |v| {
                let mut seq = xs.clone();
                seq[t] = v.to_vec();
                loss(&cell, &seq)
            });
            worst = worst.max(rel_err(&dxs[t], &num));
        }
    }
    worst
}

pub fn log_prob_worst() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let mean = rand_vec(&mut rng, 3);
        let log_std: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..0.5)).collect();
        let u: Vec<f64> = (0..3).map(|_| rng.random_range(-2.5..2.5)).collect();
        let (dm, ds) = squashed_log_prob_grad(&mean, &log_std, &u);
        worst = worst.max(rel_err(&dm, &numeric(&mean, |m| squashed_log_prob(m, &log_std, &u))));
        worst = worst.max(rel_err(&ds, &numeric(&log_std, |s| squashed_log_prob(&mean, s, &u))));
    }
    worst
}
