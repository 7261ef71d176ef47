//! Diagonal Gaussians and observation likelihoods.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::math::{log_sigmoid, logit, sample_std_normal, sigmoid, Rng};
use crate::scalar::Real;

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Pixels are squeezed into `[LOGIT_EPS, 1 - LOGIT_EPS]` before the logit.
pub const LOGIT_EPS: f64 = 1e-4;

/// `N(μ, diag(exp(log_sigma)²))`
#[derive(Clone, Debug, PartialEq)]
pub struct DiagGaussian<T> {
    pub mu: Vec<T>,
    pub log_sigma: Vec<T>,
}

impl<T: Real> DiagGaussian<T> {
    pub fn new(mu: Vec<T>, log_sigma: Vec<T>) -> Result<Self> {
        check_dim(mu.len(), log_sigma.len())?;
        if mu.is_empty() {
            return Err(Error::InvalidArgument(
                "Gaussian dimension must be >= 1".into(),
            ));
        }
        Ok(Self { mu, log_sigma })
    }

    pub fn standard(d: usize) -> Self {
        Self {
            mu: vec![T::zero(); d],
            log_sigma: vec![T::zero(); d],
        }
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    /// `z = μ + σ ⊙ ε`
    pub fn transform(&self, eps: &[T]) -> Vec<T> {
        self.mu
            .iter()
            .zip(&self.log_sigma)
            .zip(eps)
            .map(|((&m, &ls), &e)| m + ls.exp() * e)
            .collect()
    }

    /// Reparameterized draw; returns `(z, ε)`.
    pub fn sample(&self, rng: &mut Rng) -> (Vec<T>, Vec<T>) {
        let eps = sample_std_normal(rng, self.dim()).expect("dimension checked at construction");
        (self.transform(&eps), eps)
    }

    pub fn logpdf(&self, z: &[T]) -> T {
        let half = T::lit(0.5);
        let c = T::lit(LN_2PI);
        self.mu
            .iter()
            .zip(&self.log_sigma)
            .zip(z)
            .map(|((&m, &ls), &zi)| {
                let s = (zi - m) / ls.exp();
                -half * (s * s + ls + ls + c)
            })
            .sum()
    }

    /// Density of `z = μ + σ ⊙ ε` written in terms of `ε`; identical to
    /// `logpdf(transform(eps))` but exact when `σ` underflows.
    pub fn logpdf_at_eps(&self, eps: &[T]) -> T {
        let half = T::lit(0.5);
        let c = T::lit(LN_2PI);
        self.log_sigma
            .iter()
            .zip(eps)
            .map(|(&ls, &e)| -half * (e * e + ls + ls + c))
            .sum()
    }
}

/// `ln N(z; 0, I)`
pub fn std_normal_logpdf<T: Real>(z: &[T]) -> T {
    let half = T::lit(0.5);
    let c = T::lit(LN_2PI);
    z.iter().map(|&v| -half * (v * v + c)).sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Likelihood {
    Bernoulli,
    LogitNormal,
}

impl std::str::FromStr for Likelihood {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bernoulli" => Ok(Likelihood::Bernoulli),
            "logitnormal" | "logit-normal" => Ok(Likelihood::LogitNormal),
            other => Err(Error::InvalidArgument(format!(
                "unknown likelihood {other:?}"
            ))),
        }
    }
}

fn check_binary<T: Real>(x: &[T]) -> Result<()> {
    match x.iter().position(|&v| v != T::zero() && v != T::one()) {
        Some(i) => Err(Error::Domain(format!(
            "Bernoulli observation {i} is {} (not 0/1)",
            x[i]
        ))),
        None => Ok(()),
    }
}

/// `Σ x log σ(l) + (1 - x) log(1 - σ(l))` from logits.
pub fn bernoulli_loglik<T: Real>(logits: &[T], x: &[T]) -> Result<T> {
    check_dim(logits.len(), x.len())?;
    check_binary(x)?;
    Ok(logits
        .iter()
        .zip(x)
        .map(|(&l, &xi)| {
            if xi == T::one() {
                log_sigmoid(l)
            } else {
                log_sigmoid(-l)
            }
        })
        .sum())
}

/// `d loglik / d logits = x - σ(l)`
pub fn bernoulli_grad<T: Real>(logits: &[T], x: &[T]) -> Vec<T> {
    logits
        .iter()
        .zip(x)
        .map(|(&l, &xi)| xi - sigmoid(l))
        .collect()
}

fn check_unit_interval<T: Real>(x: &[T]) -> Result<()> {
    let lo = T::lit(LOGIT_EPS);
    let hi = T::one() - lo;
    match x.iter().position(|&v| !(v >= lo && v <= hi)) {
        Some(i) => Err(Error::Domain(format!(
            "logit-normal observation {i} is {} (outside [{LOGIT_EPS}, 1 - {LOGIT_EPS}])",
            x[i]
        ))),
        None => Ok(()),
    }
}

/// `Σ ln N(logit(x_i); μ_i, α_i) - ln x_i - ln(1 - x_i)` with variance
/// `α_i = exp(log_alpha_i)`.
pub fn logitnormal_loglik<T: Real>(mu: &[T], log_alpha: &[T], x: &[T]) -> Result<T> {
    check_dim(mu.len(), x.len())?;
    check_dim(mu.len(), log_alpha.len())?;
    check_unit_interval(x)?;
    let half = T::lit(0.5);
    let c = T::lit(LN_2PI);
    let mut total = T::zero();
    for i in 0..x.len() {
        let y = logit(x[i])?;
        let r = y - mu[i];
        total += -half * (c + log_alpha[i] + r * r / log_alpha[i].exp())
            - x[i].ln()
            - (T::one() - x[i]).ln();
    }
    Ok(total)
}

/// Gradients of [`logitnormal_loglik`] with respect to `μ` and `log α`.
pub fn logitnormal_grad<T: Real>(mu: &[T], log_alpha: &[T], x: &[T]) -> Result<(Vec<T>, Vec<T>)> {
    check_unit_interval(x)?;
    let half = T::lit(0.5);
    let mut gm = Vec::with_capacity(x.len());
    let mut ga = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let r = logit(x[i])? - mu[i];
        let inv = (-log_alpha[i]).exp();
        gm.push(r * inv);
        ga.push(-half + half * r * r * inv);
    }
    Ok((gm, ga))
}

/// Maps `[0, 1]` data into the logit-normal support.
pub fn squeeze_unit<T: Real>(x: T) -> T {
    let e = T::lit(LOGIT_EPS);
    (e + (T::one() - e - e) * x).max(e).min(T::one() - e)
}
