//! Central finite-difference oracle for reverse-mode gradients.
//!
//! The scalar objective is a fixed random linear functional of the output,
//! `L = sum(out * r)`, so `dL/dout = r`. Every forward pass reseeds the
//! dropout stream so masks are identical across perturbations.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stsc_core::nn::{ForwardCtx, Mode, Module, Tensor};

pub const STEP: f64 = 1e-5;
const DROPOUT_SEED: u64 = 0xD50;

#[derive(Debug)]
pub struct GradReport {
    /// Worst relative error over all parameter tensors and the input.
    pub max_rel_error: f64,
    pub checked: usize,
    pub worst: String,
}

fn objective<M: Module>(m: &mut M, x: &Tensor, r: &[f64], mode: Mode) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(DROPOUT_SEED);
    let mut ctx = ForwardCtx { mode, rng: &mut rng };
    let out = m.forward(x.clone(), &mut ctx).expect("forward");
    out.data().iter().zip(r).map(|(a, b)| a * b).sum()
}

/// Relative error of two gradient vectors, ||a - b|| / max(||a||, ||b||).
pub fn rel_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a
        .iter()
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
        .max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    // Gradients that vanish analytically (a bias feeding batch-norm) leave
    // only finite-difference round-off; compare those on an absolute scale.
    diff / scale.max(1e-6)
}

/// Checks every parameter (up to `max_per_tensor` sampled entries each) and
/// the input gradient of `m` at `x`.
pub fn check<M: Module>(m: &mut M, x: &Tensor, mode: Mode, max_per_tensor: usize, seed: u64) -> GradReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let probe = {
        let mut drng = ChaCha8Rng::seed_from_u64(DROPOUT_SEED);
        let mut ctx = ForwardCtx { mode, rng: &mut drng };
        m.forward(x.clone(), &mut ctx).expect("forward")
    };
    let r: Vec<f64> = (0..probe.len()).map(|_| rng.random_range(-1.0..1.0)).collect();

    m.zero_grad();
    let g = Tensor::new(probe.shape().to_vec(), r.clone()).unwrap();
    let gin = m.backward(g, true).expect("backward").expect("input gradient");
    let analytic: Vec<Vec<f64>> = m.params_mut().iter().map(|p| p.grad.data().to_vec()).collect();

    let mut report = GradReport {
        max_rel_error: 0.0,
        checked: 0,
        worst: String::new(),
    };
    let record = |name: String, a: Vec<f64>, n: Vec<f64>, report: &mut GradReport| {
        let e = rel_error(&a, &n);
        report.checked += a.len();
        if e > report.max_rel_error || report.worst.is_empty() {
            report.max_rel_error = report.max_rel_error.max(e);
            report.worst = name;
        }
    };

    for (pi, grad) in analytic.iter().enumerate() {
        let len = grad.len();
        let picks: Vec<usize> = if len <= max_per_tensor {
            (0..len).collect()
        } else {
            (0..max_per_tensor).map(|_| rng.random_range(0..len)).collect()
        };
        let mut a = Vec::new();
        let mut n = Vec::new();
        for &j in &picks {
            let orig = m.params_mut()[pi].value.data()[j];
            m.params_mut()[pi].value.data_mut()[j] = orig + STEP;
            let up = objective(m, x, &r, mode);
            m.params_mut()[pi].value.data_mut()[j] = orig - STEP;
            let down = objective(m, x, &r, mode);
            m.params_mut()[pi].value.data_mut()[j] = orig;
            n.push((up - down) / (2.0 * STEP));
            a.push(grad[j]);
        }
        let name = m.params_mut()[pi].name.to_string();
        record(format!("param#{pi}:{name}"), a, n, &mut report);
    }

    let picks: Vec<usize> = if x.len() <= max_per_tensor {
        (0..x.len()).collect()
    } else {
        (0..max_per_tensor).map(|_| rng.random_range(0..x.len())).collect()
    };
    let mut a = Vec::new();
    let mut n = Vec::new();
    for &j in &picks {
        let mut xp = x.clone();
        xp.data_mut()[j] += STEP;
        let up = objective(m, &xp, &r, mode);
        let mut xm = x.clone();
        xm.data_mut()[j] -= STEP;
        let down = objective(m, &xm, &r, mode);
        n.push((up - down) / (2.0 * STEP));
        a.push(gin.data()[j]);
    }
    record("input".into(), a, n, &mut report);
    report
}

pub fn random_tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Adds small random offsets to every parameter so biases and batch-norm
/// affine terms are not at their trivial initial values.
pub fn randomize_params<M: Module>(m: &mut M, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in m.params_mut() {
        for v in p.value.data_mut() {
            *v += rng.random_range(-0.3..0.3);
        }
    }
}
