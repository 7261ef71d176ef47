use serde::Serialize;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::flows::INVERT_TOL;
use crate::math::{log_sum_exp, Rng};
use crate::models::energy::{energy_normalizer, grid_axis};

use super::elbo::{draw_batch, evaluate, summarize};
use super::model::{Model, Variational};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct KlEstimate {
    /// `E_q[ln q_K - ln p̃] + ln Z`
    pub kl: f64,
    pub std_err: f64,
    /// Normalizer of the target on the `(-4, 4)²` grid.
    pub z: f64,
    pub samples: usize,
    pub grid_n: usize,
}

/// `D_KL(q_K ‖ p)` for a model with free variational parameters and a
/// potential target.
pub fn kl_to_energy(
    model: &Model,
    samples: usize,
    grid_n: usize,
    rng: &mut Rng,
) -> Result<KlEstimate> {
    let potential = model
        .target
        .potential()
        .ok_or_else(|| Error::InvalidArgument("KL to energy needs a potential target".into()))?;
    if !matches!(model.variational, Variational::Free { .. }) {
        return Err(Error::InvalidArgument(
            "KL to energy needs free variational parameters".into(),
        ));
    }
    let z = energy_normalizer(potential, grid_n)?;
    let draws = draw_batch(model.latent_dim(), None, samples, rng)?;
    let (terms, _) = evaluate(model, &draws, 1.0, false)?;
    let est = summarize(&terms, 1.0);
    Ok(KlEstimate {
        kl: est.free_energy + z.ln(),
        std_err: est.std_err,
        z,
        samples,
        grid_n,
    })
}

/// Importance-sampled `ln p(x) ≈ logsumexp_s[ln p(x, z_s) - ln q_K(z_s)] - ln S`
/// with proposals from the variational posterior.
pub fn is_marginal_loglik(
    model: &Model,
    x: Option<&[f64]>,
    samples: usize,
    rng: &mut Rng,
) -> Result<f64> {
    if samples == 0 {
        return Err(Error::InvalidArgument(
            "need at least one importance sample".into(),
        ));
    }
    let mut draws = draw_batch(model.latent_dim(), None, samples, rng)?;
    for d in &mut draws {
        d.x = x;
    }
    let (terms, _) = evaluate(model, &draws, 1.0, false)?;
    let log_w: Vec<f64> = terms.iter().map(|t| t.ln_p - t.ln_qk()).collect();
    Ok(log_sum_exp(&log_w) - (samples as f64).ln())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DatasetEval {
    /// Mean over datapoints of the free energy `F(x)` at `β = 1`.
    pub final_bound: f64,
    pub final_bound_se: f64,
    /// Mean over datapoints of the importance-sampled `ln p(x)`.
    pub is_loglik: f64,
    pub is_samples: usize,
    pub n: usize,
}

/// Per-datapoint bound and importance-sampled log-likelihood from the same
/// `samples` posterior draws, averaged over the dataset.
pub fn dataset_eval(
    model: &Model,
    data: &Dataset,
    samples: usize,
    rng: &mut Rng,
) -> Result<DatasetEval> {
    if samples == 0 {
        return Err(Error::InvalidArgument(
            "need at least one importance sample".into(),
        ));
    }
    let n = data.n();
    let mut draws = draw_batch(model.latent_dim(), None, n * samples, rng)?;
    for (i, d) in draws.iter_mut().enumerate() {
        d.x = Some(data.row(i / samples));
    }
    let (terms, _) = evaluate(model, &draws, 1.0, false)?;
    let mut bounds = Vec::with_capacity(n);
    let mut is = 0.0;
    for chunk in terms.chunks(samples) {
        let log_w: Vec<f64> = chunk.iter().map(|t| t.ln_p - t.ln_qk()).collect();
        bounds.push(-log_w.iter().sum::<f64>() / samples as f64);
        is += log_sum_exp(&log_w) - (samples as f64).ln();
    }
    let mean = bounds.iter().sum::<f64>() / n as f64;
    let var = if n > 1 {
        bounds.iter().map(|b| (b - mean).powi(2)).sum::<f64>() / (n - 1) as f64
    } else {
        0.0
    };
    Ok(DatasetEval {
        final_bound: mean,
        final_bound_se: (var / n as f64).sqrt(),
        is_loglik: is / n as f64,
        is_samples: samples,
        n,
    })
}

/// `ln q_K(z)` through the inverse flow.
pub fn log_qk(model: &Model, z: &[f64]) -> Result<f64> {
    match &model.variational {
        Variational::Free { q0, flow } => {
            let (z0, sum_logdet) = flow.inverse(z, INVERT_TOL)?;
            Ok(q0.logpdf(&z0) - sum_logdet)
        }
        Variational::Amortized(_) => Err(Error::InvalidArgument(
            "ln q_K on a grid needs free variational parameters".into(),
        )),
    }
}

/// Values of `f` on the `grid_n × grid_n` grid over `[-4, 4]²`, row-major
/// with `z₁` varying slowest.
pub fn grid_values(grid_n: usize, f: impl Fn(&[f64]) -> Result<f64> + Sync) -> Result<Vec<f64>> {
    use rayon::prelude::*;
    if grid_n < 2 {
        return Err(Error::InvalidArgument("grid_n must be >= 2".into()));
    }
    let axis = grid_axis::<f64>(grid_n);
    let rows: Vec<Result<Vec<f64>>> = axis
        .par_iter()
        .map(|&a| axis.iter().map(|&b| f(&[a, b])).collect())
        .collect();
    let mut out = Vec::with_capacity(grid_n * grid_n);
    for r in rows {
        out.extend(r?);
    }
    Ok(out)
}
