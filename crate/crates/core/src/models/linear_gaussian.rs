//! Conjugate toy model `z ~ N(0, I)`, `x | z ~ N(A z + c, s² I)` with a
//! closed-form evidence and posterior.

use crate::error::{check_dim, Error, Result};
use crate::math::Mat;

use super::density::{std_normal_logpdf, LN_2PI};

#[derive(Clone, Debug, PartialEq)]
pub struct LinearGaussian {
    /// `D × d` loading matrix.
    pub a: Mat<f64>,
    pub offset: Vec<f64>,
    pub noise_std: f64,
    /// The single observation being explained.
    pub x: Vec<f64>,
}

impl LinearGaussian {
    pub fn new(a: Mat<f64>, offset: Vec<f64>, noise_std: f64, x: Vec<f64>) -> Result<Self> {
        check_dim(a.rows(), offset.len())?;
        check_dim(a.rows(), x.len())?;
        if !(noise_std > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "noise_std must be > 0, got {noise_std}"
            )));
        }
        Ok(Self {
            a,
            offset,
            noise_std,
            x,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.a.cols()
    }

    fn residual(&self, z: &[f64]) -> Vec<f64> {
        let az = self.a.matvec(z);
        self.x
            .iter()
            .zip(&az)
            .zip(&self.offset)
            .map(|((&x, &m), &c)| x - m - c)
            .collect()
    }

    /// `ln p(x, z)`
    pub fn log_joint(&self, z: &[f64]) -> f64 {
        let r = self.residual(z);
        let s2 = self.noise_std * self.noise_std;
        let n = r.len() as f64;
        let quad: f64 = r.iter().map(|v| v * v).sum::<f64>() / s2;
        -0.5 * (quad + n * (LN_2PI + s2.ln())) + std_normal_logpdf(z)
    }

    /// `∇_z ln p(x, z) = Aᵀ(x - A z - c) / s² - z`
    pub fn log_joint_grad(&self, z: &[f64]) -> Vec<f64> {
        let r = self.residual(z);
        let s2 = self.noise_std * self.noise_std;
        let g = self.a.matvec_t(&r);
        g.iter().zip(z).map(|(&gi, &zi)| gi / s2 - zi).collect()
    }

    /// `ln p(x) = ln N(x; c, A Aᵀ + s² I)`
    pub fn log_evidence(&self) -> Result<f64> {
        let n = self.x.len();
        let mut cov = self.a.matmul(&self.a.transpose());
        for i in 0..n {
            cov[(i, i)] += self.noise_std * self.noise_std;
        }
        let l = cov.cholesky()?;
        let r: Vec<f64> = self
            .x
            .iter()
            .zip(&self.offset)
            .map(|(x, c)| x - c)
            .collect();
        let sol = l.cholesky_solve(&r);
        let quad: f64 = r.iter().zip(&sol).map(|(a, b)| a * b).sum();
        let logdet: f64 = (0..n).map(|i| 2.0 * l[(i, i)].ln()).sum();
        Ok(-0.5 * (quad + logdet + n as f64 * LN_2PI))
    }

    /// Posterior mean and covariance `(I + AᵀA / s²)⁻¹`.
    pub fn posterior(&self) -> Result<(Vec<f64>, Mat<f64>)> {
        let d = self.latent_dim();
        let s2 = self.noise_std * self.noise_std;
        let mut prec = self.a.transpose().matmul(&self.a);
        for v in prec.as_mut_slice() {
            *v /= s2;
        }
        for i in 0..d {
            prec[(i, i)] += 1.0;
        }
        let l = prec.cholesky()?;
        let r: Vec<f64> = self
            .x
            .iter()
            .zip(&self.offset)
            .map(|(x, c)| (x - c) / s2)
            .collect();
        let mean = l.cholesky_solve(&self.a.matvec_t(&r));
        let mut cov = Mat::zeros(d, d);
        for j in 0..d {
            let mut e = vec![0.0; d];
            e[j] = 1.0;
            let col = l.cholesky_solve(&e);
            for i in 0..d {
                cov[(i, j)] = col[i];
            }
        }
        Ok((mean, cov))
    }
}
