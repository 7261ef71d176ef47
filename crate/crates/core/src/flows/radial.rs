//! Radial flow `f(z) = z + β̂ (z - z₀) / (α + r)`, `r = ‖z - z₀‖`.

use crate::error::{check_dim, Error, Result};
use crate::math::{sigmoid, softplus};
use crate::scalar::{norm_sq, Real};

use super::{bisect, LayerStep};

#[derive(Clone, Debug, PartialEq)]
pub struct Radial<T> {
    pub z0: Vec<T>,
    pub log_alpha: T,
    pub beta_raw: T,
}

#[derive(Clone, Debug)]
pub(crate) struct RadialTape<T> {
    z_in: Vec<T>,
    r: T,
    h: T,
    a: T,
    b: T,
}

/// `α`, `β̂` and `σ(beta_raw)`; these depend on the parameters only.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct RadialConsts<T> {
    alpha: T,
    beta: T,
    sig: T,
}

/// `α = exp(log_alpha)`, `β̂ = -α + softplus(beta_raw) ≥ -α`.
pub fn radial_constrain<T: Real>(log_alpha: T, beta_raw: T) -> (T, T) {
    let alpha = log_alpha.exp();
    (alpha, -alpha + softplus(beta_raw))
}

/// Pulls `(∂L/∂α, ∂L/∂β̂)` back through [`radial_constrain`] to
/// `(∂L/∂log_alpha, ∂L/∂beta_raw)`.
pub fn radial_constrain_vjp<T: Real>(log_alpha: T, beta_raw: T, g_alpha: T, g_beta: T) -> (T, T) {
    let alpha = log_alpha.exp();
    ((g_alpha - g_beta) * alpha, g_beta * sigmoid(beta_raw))
}

impl<T: Real> Radial<T> {
    pub fn new(z0: Vec<T>, log_alpha: T, beta_raw: T) -> Result<Self> {
        if z0.is_empty() {
            return Err(Error::InvalidArgument("radial layer needs d >= 1".into()));
        }
        Ok(Self {
            z0,
            log_alpha,
            beta_raw,
        })
    }

    pub fn dim(&self) -> usize {
        self.z0.len()
    }

    pub fn num_params(&self) -> usize {
        self.dim() + 2
    }

    pub fn alpha_beta(&self) -> (T, T) {
        radial_constrain(self.log_alpha, self.beta_raw)
    }

    pub fn apply(&self, z: &[T]) -> Result<LayerStep<T>> {
        self.forward_taped(&self.consts(), z.to_vec())
            .map(|(s, _)| s)
    }

    pub(crate) fn consts(&self) -> RadialConsts<T> {
        let (alpha, beta) = self.alpha_beta();
        RadialConsts {
            alpha,
            beta,
            sig: sigmoid(self.beta_raw),
        }
    }

    pub(crate) fn forward_taped(
        &self,
        k: &RadialConsts<T>,
        z: Vec<T>,
    ) -> Result<(LayerStep<T>, RadialTape<T>)> {
        check_dim(self.dim(), z.len())?;
        let (alpha, beta) = (k.alpha, k.beta);
        let r = z
            .iter()
            .zip(&self.z0)
            .map(|(&a, &b)| (a - b) * (a - b))
            .fold(T::zero(), |s, v| s + v)
            .sqrt();
        let h = T::one() / (alpha + r);
        // 1 + βh and 1 + βh + βh'r with h' = -h², i.e. 1 + βαh²
        let a = T::one() + beta * h;
        let b = T::one() + beta * alpha * h * h;
        if !(a > T::zero() && b > T::zero()) {
            return Err(Error::Singular(format!(
                "radial determinant factors must be positive (got {a}, {b})"
            )));
        }
        let z_out = z
            .iter()
            .zip(&self.z0)
            .map(|(&zi, &ci)| zi + beta * h * (zi - ci))
            .collect();
        let d1 = T::count(self.dim() - 1);
        let step = LayerStep {
            z_out,
            logdet: d1 * a.ln() + b.ln(),
            near_singular: false,
        };
        Ok((
            step,
            RadialTape {
                z_in: z,
                r,
                h,
                a,
                b,
            },
        ))
    }

    /// Accumulates the `(z0, log_alpha, beta_raw)` gradient into `grad` and
    /// overwrites `g` with the input gradient.
    pub(crate) fn backward(
        &self,
        k: &RadialConsts<T>,
        tape: &RadialTape<T>,
        g: &mut [T],
        gl: T,
        grad: &mut [T],
    ) {
        let d = self.dim();
        let RadialTape { z_in, r, h, a, b } = tape;
        let (r, h, a, b) = (*r, *h, *a, *b);
        let (alpha, beta) = (k.alpha, k.beta);
        let mut g_diff_dot = T::zero();
        for i in 0..d {
            g_diff_dot += g[i] * (z_in[i] - self.z0[i]);
        }
        let ga = gl * T::count(d - 1) / a;
        let gb = gl / b;
        let two = T::lit(2.0);

        let g_h = beta * g_diff_dot + ga * beta + gb * two * beta * alpha * h;
        let g_beta = h * g_diff_dot + ga * h + gb * alpha * h * h;
        let g_alpha_direct = gb * beta * h * h - g_h * h * h;
        let g_r = -g_h * h * h;
        let radial = if r > T::zero() { g_r / r } else { T::zero() };

        for i in 0..d {
            let gd = g[i] * beta * h + radial * (z_in[i] - self.z0[i]);
            grad[i] -= gd;
            g[i] += gd;
        }
        // α enters directly and through β̂ = -α + softplus(beta_raw)
        grad[d] += (g_alpha_direct - g_beta) * alpha;
        grad[d + 1] += g_beta * k.sig;
    }

    /// Inverse by bisection on `‖z' - z₀‖ = r (1 + β̂ / (α + r))`.
    pub fn invert(&self, z_prime: &[T], tol: T) -> Result<Vec<T>> {
        check_dim(self.dim(), z_prime.len())?;
        let (alpha, beta) = self.alpha_beta();
        let diff: Vec<T> = z_prime.iter().zip(&self.z0).map(|(&a, &b)| a - b).collect();
        let rho = norm_sq(&diff).sqrt();
        if rho == T::zero() {
            return Ok(self.z0.clone());
        }
        let g = |r: T| r * (T::one() + beta / (alpha + r));
        let slope = T::one() + beta.abs() / alpha;
        let r = bisect(g, rho, T::zero(), rho + beta.abs(), tol / slope)?;
        let scale = T::one() + beta / (alpha + r);
        Ok(self
            .z0
            .iter()
            .zip(&diff)
            .map(|(&c, &di)| c + di / scale)
            .collect())
    }

    pub(crate) fn write_params(&self, out: &mut Vec<T>) {
        out.extend_from_slice(&self.z0);
        out.push(self.log_alpha);
        out.push(self.beta_raw);
    }

    pub(crate) fn read_params(&mut self, flat: &[T]) -> usize {
        let d = self.dim();
        self.z0.copy_from_slice(&flat[..d]);
        self.log_alpha = flat[d];
        self.beta_raw = flat[d + 1];
        d + 2
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn beta_raw_for(beta_hat: f64, alpha: f64) -> f64 {
        // softplus(x) = beta_hat + alpha  =>  x = ln(e^{beta_hat+alpha} - 1)
        ((beta_hat + alpha).exp() - 1.0).ln()
    }

    #[test]
    fn constrain_examples() {
        let (a, b) = radial_constrain(0.0f64, 0.3);
        assert_eq!(a, 1.0);
        assert!(b > -1.0);
        let (a, b) = radial_constrain(0.5f64, -200.0);
        assert!((b + a).abs() < 1e-80);
        let (_, b) = radial_constrain(0.0f64, (std::f64::consts::E - 1.0).ln());
        assert!(b.abs() < 1e-15);
    }

    #[test]
    fn zero_beta_is_identity() {
        let p = Radial::new(vec![0.3f64, -0.2], 0.0, beta_raw_for(0.0, 1.0)).unwrap();
        let step = p.apply(&[1.0, 2.0]).unwrap();
        assert!((step.z_out[0] - 1.0).abs() < 1e-15 && (step.z_out[1] - 2.0).abs() < 1e-15);
        assert!(step.logdet.abs() < 1e-15);
        let back = p.invert(&[1.0, 2.0], 1e-12).unwrap();
        assert!((back[0] - 1.0).abs() < 1e-12 && (back[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn unit_example() {
        let p = Radial::new(vec![0.0f64, 0.0], 0.0, beta_raw_for(1.0, 1.0)).unwrap();
        let step = p.apply(&[1.0, 0.0]).unwrap();
        assert!((step.z_out[0] - 1.5).abs() < 1e-14);
        assert_eq!(step.z_out[1], 0.0);
        assert!((step.logdet - 1.875f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn fixed_point_at_reference() {
        let p = Radial::new(vec![0.4f64, -1.0, 2.0], 0.3, 0.7).unwrap();
        let (alpha, beta) = p.alpha_beta();
        let step = p.apply(&p.z0.clone()).unwrap();
        assert_eq!(step.z_out, p.z0);
        assert!((step.logdet - 3.0 * (1.0 + beta / alpha).ln()).abs() < 1e-13);
        assert_eq!(p.invert(&p.z0, 1e-12).unwrap(), p.z0);
    }

    #[test]
    fn scalar_equation_is_monotone() {
        let p = Radial::new(vec![0.0f64; 2], 0.2, -3.0).unwrap();
        let (alpha, beta) = p.alpha_beta();
        let g = |r: f64| r * (1.0 + beta / (alpha + r));
        let mut prev = g(0.0);
        for i in 1..=1000 {
            let cur = g(i as f64 * 0.01);
            assert!(cur >= prev);
            prev = cur;
        }
    }
}
