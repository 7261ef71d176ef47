#![allow(dead_code)]

use flowvi_core::engine::{elbo::sample_terms, Draw, Model};
use flowvi_core::math::{fd_gradient, max_rel_err, sample_std_normal, Rng};

/// Frozen-noise check: analytic gradient of the per-draw objective against
/// central differences over every flat parameter.
pub fn frozen_noise_error(model: &Model, draws: &[Draw<'_>], beta: f64) -> f64 {
    let n = model.num_params();
    let w = 1.0 / draws.len() as f64;
    let mut grad = vec![0.0; n];
    for d in draws {
        sample_terms(model, d, beta, Some((&mut grad, w))).unwrap();
    }
    let p = model.params();
    let fd = fd_gradient(
        |q: &[f64]| {
            let mut m = model.clone();
            m.set_params(q).unwrap();
            draws
                .iter()
                .map(|d| {
                    let t = sample_terms(&m, d, beta, None).unwrap();
                    w * (t.ln_q0 - t.sum_logdet - beta * t.ln_p)
                })
                .sum()
        },
        &p,
        1e-5,
    )
    .unwrap();
    max_rel_err(&grad, &fd)
}

pub fn perturb(model: &mut Model, scale: f64, rng: &mut Rng) {
    let p: Vec<f64> = model
        .params()
        .iter()
        .map(|v| v + scale * rng.normal())
        .collect();
    model.set_params(&p).unwrap();
}

pub fn noise(latent: usize, rng: &mut Rng) -> Vec<f64> {
    sample_std_normal(rng, latent).unwrap()
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
