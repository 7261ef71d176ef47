use rayon::prelude::*;
use serde::Serialize;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::math::{sample_std_normal, Rng};
use crate::scalar::fingerprint;

use super::model::Model;

/// Samples per parallel work unit; fixed so that reductions do not depend on
/// the number of threads.
const CHUNK: usize = 8;

/// One Monte Carlo draw: base noise `ε` and, for amortized models, the
/// datapoint it belongs to.
#[derive(Clone, Debug)]
pub struct Draw<'a> {
    pub x: Option<&'a [f64]>,
    pub eps: Vec<f64>,
}

/// Monte Carlo free energy with its decomposition
/// `F = E[ln q₀(z₀)] + E[-Σ ln|det J|] + β_t E[-ln p(x, z_K)]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ElboEstimate {
    pub free_energy: f64,
    /// `E[ln q₀(z₀)]`, the negative entropy of the base density.
    pub entropy_q0: f64,
    pub neg_sum_logdet: f64,
    pub neg_logp: f64,
    pub beta_t: f64,
    /// Standard error of the per-sample free energies.
    pub std_err: f64,
    pub samples: usize,
}

/// Per-sample terms of the bound.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleTerms {
    pub ln_q0: f64,
    pub sum_logdet: f64,
    pub ln_p: f64,
}

impl SampleTerms {
    /// `ln q_K(z_K) = ln q₀(z₀) - Σ ln|det J|`
    pub fn ln_qk(&self) -> f64 {
        self.ln_q0 - self.sum_logdet
    }
}

/// Record of an [`elbo_estimate`] call, consumed by [`elbo_backward`].
#[derive(Clone, Debug)]
pub struct ElboTape<'a> {
    fingerprint: u64,
    draws: Vec<Draw<'a>>,
    beta: f64,
}

/// Draws `count` samples: datapoints uniformly with replacement (when `data`
/// is given), then `ε ~ N(0, I)`.
pub fn draw_batch<'a>(
    latent: usize,
    data: Option<&'a Dataset>,
    count: usize,
    rng: &mut Rng,
) -> Result<Vec<Draw<'a>>> {
    (0..count)
        .map(|_| {
            let x = data.map(|ds| ds.row(rng.below(ds.n())));
            Ok(Draw {
                x,
                eps: sample_std_normal(rng, latent)?,
            })
        })
        .collect()
}

fn tag(e: Error, index: usize) -> Error {
    match e {
        Error::NonFinite { context, .. } => Error::NonFinite {
            context,
            sample: Some(index),
        },
        other => other,
    }
}

/// Terms of one sample; with `grad = Some((g, w))` also adds `w · ∇F_sample`
/// into `g`.
pub fn sample_terms(
    model: &Model,
    draw: &Draw<'_>,
    beta: f64,
    grad: Option<(&mut [f64], f64)>,
) -> Result<SampleTerms> {
    let post = model.variational.posterior(draw.x)?;
    let z0 = post.q0.transform(&draw.eps);
    let ln_q0 = post.q0.logpdf_at_eps(&draw.eps);
    let fr = post.flow.forward(&z0)?;
    let (ln_p, ttape) = model.target.log_joint(draw.x, &fr.z_out)?;
    let terms = SampleTerms {
        ln_q0,
        sum_logdet: fr.sum_logdet,
        ln_p,
    };
    if !(ln_q0.is_finite() && ln_p.is_finite()) {
        return Err(Error::NonFinite {
            context: format!("free-energy terms (ln q0 = {ln_q0}, ln p = {ln_p})"),
            sample: None,
        });
    }
    if let Some((g, w)) = grad {
        let (g_theta, g_phi) = g.split_at_mut(model.target.num_params());
        let gz = model
            .target
            .log_joint_backward(&ttape, draw.x, &fr.z_out, -beta * w, g_theta)?;
        let mut g_flow = vec![0.0; post.flow.num_params()];
        let gz0 = post.flow.backward_into(&fr.tape, &gz, -w, &mut g_flow)?;
        // z₀ = μ + σ ε and ln q₀ = -Σ (½ε² + log σ) + const at fixed ε
        let g_ls: Vec<f64> = gz0
            .iter()
            .zip(&post.q0.log_sigma)
            .zip(&draw.eps)
            .map(|((&g, &ls), &e)| g * ls.exp() * e - w)
            .collect();
        model
            .variational
            .backward_into(&post, &gz0, &g_ls, &g_flow, g_phi)?;
    }
    Ok(terms)
}

/// Evaluates all draws in fixed-size chunks on the rayon pool and reduces in
/// draw order.
pub fn evaluate(
    model: &Model,
    draws: &[Draw<'_>],
    beta: f64,
    want_grad: bool,
) -> Result<(Vec<SampleTerms>, Option<Vec<f64>>)> {
    if draws.is_empty() {
        return Err(Error::InvalidArgument("need at least one sample".into()));
    }
    let n = model.num_params();
    let w = 1.0 / draws.len() as f64;
    let chunks: Vec<Result<(Vec<SampleTerms>, Vec<f64>)>> = draws
        .par_chunks(CHUNK)
        .enumerate()
        .map(|(c, chunk)| {
            let mut g = if want_grad { vec![0.0; n] } else { Vec::new() };
            let mut terms = Vec::with_capacity(chunk.len());
            for (j, d) in chunk.iter().enumerate() {
                let slot = want_grad.then_some((&mut g[..], w));
                terms.push(sample_terms(model, d, beta, slot).map_err(|e| tag(e, c * CHUNK + j))?);
            }
            Ok((terms, g))
        })
        .collect();
    let mut terms = Vec::with_capacity(draws.len());
    let mut grad = want_grad.then(|| vec![0.0; n]);
    for chunk in chunks {
        let (t, g) = chunk?;
        terms.extend(t);
        if let Some(acc) = grad.as_mut() {
            for (a, b) in acc.iter_mut().zip(&g) {
                *a += b;
            }
        }
    }
    Ok((terms, grad))
}

/// Averages per-sample terms into an [`ElboEstimate`].
pub fn summarize(terms: &[SampleTerms], beta: f64) -> ElboEstimate {
    let s = terms.len() as f64;
    let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
    for t in terms {
        a += t.ln_q0;
        b -= t.sum_logdet;
        c -= t.ln_p;
    }
    let (a, b, c) = (a / s, b / s, c / s);
    let free_energy = a + b + beta * c;
    let var = if terms.len() > 1 {
        terms
            .iter()
            .map(|t| {
                let f = t.ln_q0 - t.sum_logdet - beta * t.ln_p - free_energy;
                f * f
            })
            .sum::<f64>()
            / (s - 1.0)
    } else {
        0.0
    };
    ElboEstimate {
        free_energy,
        entropy_q0: a,
        neg_sum_logdet: b,
        neg_logp: c,
        beta_t: beta,
        std_err: (var / s).sqrt(),
        samples: terms.len(),
    }
}

/// Monte Carlo free energy over `draws` at inverse temperature `beta`.
pub fn elbo_estimate<'a>(
    model: &Model,
    draws: Vec<Draw<'a>>,
    beta: f64,
) -> Result<(ElboEstimate, ElboTape<'a>)> {
    let (terms, _) = evaluate(model, &draws, beta, false)?;
    let tape = ElboTape {
        fingerprint: fingerprint(model.params()),
        draws,
        beta,
    };
    Ok((summarize(&terms, beta), tape))
}

/// Pathwise gradient of the estimate recorded in `tape` with respect to the
/// model's flat parameters.
pub fn elbo_backward(model: &Model, tape: &ElboTape<'_>) -> Result<Vec<f64>> {
    if fingerprint(model.params()) != tape.fingerprint {
        return Err(Error::StaleTape);
    }
    let (_, grad) = evaluate(model, &tape.draws, tape.beta, true)?;
    Ok(grad.expect("gradient requested"))
}

/// Estimate and gradient in one pass.
pub fn elbo_with_gradient(
    model: &Model,
    draws: &[Draw<'_>],
    beta: f64,
) -> Result<(ElboEstimate, Vec<f64>)> {
    let (terms, grad) = evaluate(model, draws, beta, true)?;
    Ok((summarize(&terms, beta), grad.expect("gradient requested")))
}
