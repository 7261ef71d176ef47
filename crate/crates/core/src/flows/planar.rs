//! Planar flow `f(z) = z + û tanh(wᵀz + b)`.

use crate::error::{check_dim, Error, Result};
use crate::math::{sigmoid, softplus};
use crate::scalar::{axpy, dot, norm_sq, Real};

use super::{bisect, LayerStep, NEAR_SINGULAR};

#[derive(Clone, Debug, PartialEq)]
pub struct Planar<T> {
    pub u_raw: Vec<T>,
    pub w: Vec<T>,
    pub b: T,
}

#[derive(Clone, Debug)]
pub(crate) struct PlanarTape<T> {
    z_in: Vec<T>,
    t: T,
    s: T,
}

/// Parameter-only quantities shared by every sample: `û`, `wᵀû`, `‖w‖²` and
/// the constraint's `c(wᵀu) = softplus(wᵀu) - 1 - wᵀu` with its derivative.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct PlanarConsts<T> {
    u_hat: Vec<T>,
    w_uhat: T,
    ww: T,
    c: T,
    cp: T,
}

/// Replaces the component of `u_raw` along `w` so that `wᵀû = -1 + softplus(wᵀu)`,
/// which keeps the map invertible.
pub fn planar_constrain<T: Real>(u_raw: &[T], w: &[T]) -> Result<Vec<T>> {
    check_dim(w.len(), u_raw.len())?;
    let ww = norm_sq(w);
    if ww == T::zero() {
        return Err(Error::DegenerateDirection);
    }
    let wu = dot(w, u_raw);
    let m = softplus(wu) - T::one();
    let mut u_hat = u_raw.to_vec();
    axpy((m - wu) / ww, w, &mut u_hat);
    Ok(u_hat)
}

/// Pulls `∂L/∂û` back through [`planar_constrain`] to `(∂L/∂u_raw, ∂L/∂w)`.
pub fn planar_constrain_vjp<T: Real>(
    u_raw: &[T],
    w: &[T],
    g_uhat: &[T],
) -> Result<(Vec<T>, Vec<T>)> {
    check_dim(u_raw.len(), w.len())?;
    check_dim(u_raw.len(), g_uhat.len())?;
    let ww = norm_sq(w);
    if ww == T::zero() {
        return Ok((g_uhat.to_vec(), vec![T::zero(); w.len()]));
    }
    let wu = dot(w, u_raw);
    let c = softplus(wu) - T::one() - wu;
    let cq = (sigmoid(wu) - T::one()) * dot(g_uhat, w) / ww;
    let c2 = T::lit(2.0) * c * dot(g_uhat, w) / (ww * ww);
    let gu = g_uhat.iter().zip(w).map(|(&g, &wi)| g + wi * cq).collect();
    let gw = (0..w.len())
        .map(|i| u_raw[i] * cq + g_uhat[i] * (c / ww) - w[i] * c2)
        .collect();
    Ok((gu, gw))
}

/// Planar map with an explicit (possibly unconstrained) `û`.
pub fn planar_map<T: Real>(u_hat: &[T], w: &[T], b: T, z: &[T]) -> Result<LayerStep<T>> {
    check_dim(w.len(), u_hat.len())?;
    check_dim(w.len(), z.len())?;
    let t = (dot(w, z) + b).tanh();
    let hp = T::one() - t * t;
    let s = T::one() + hp * dot(w, u_hat);
    let mut z_out = z.to_vec();
    axpy(t, u_hat, &mut z_out);
    Ok(LayerStep {
        z_out,
        logdet: s.abs().ln(),
        near_singular: s.abs() < T::lit(NEAR_SINGULAR),
    })
}

impl<T: Real> Planar<T> {
    pub fn new(u_raw: Vec<T>, w: Vec<T>, b: T) -> Result<Self> {
        check_dim(w.len(), u_raw.len())?;
        if w.is_empty() {
            return Err(Error::InvalidArgument("planar layer needs d >= 1".into()));
        }
        Ok(Self { u_raw, w, b })
    }

    pub fn identity(d: usize) -> Self {
        Self {
            u_raw: vec![T::zero(); d],
            w: vec![T::zero(); d],
            b: T::zero(),
        }
    }

    pub fn dim(&self) -> usize {
        self.w.len()
    }

    pub fn num_params(&self) -> usize {
        2 * self.dim() + 1
    }

    /// Effective `û`. With `w = 0` the layer is a translation by `u tanh(b)`
    /// and no constraint is needed, so `u_raw` is used as is.
    pub fn u_hat(&self) -> Vec<T> {
        planar_constrain(&self.u_raw, &self.w).unwrap_or_else(|_| self.u_raw.clone())
    }

    pub fn apply(&self, z: &[T]) -> Result<LayerStep<T>> {
        planar_map(&self.u_hat(), &self.w, self.b, z)
    }

    pub(crate) fn consts(&self) -> PlanarConsts<T> {
        let ww = norm_sq(&self.w);
        let wu = dot(&self.w, &self.u_raw);
        let u_hat = self.u_hat();
        PlanarConsts {
            w_uhat: dot(&self.w, &u_hat),
            u_hat,
            ww,
            c: softplus(wu) - T::one() - wu,
            cp: sigmoid(wu) - T::one(),
        }
    }

    pub(crate) fn forward_taped(
        &self,
        k: &PlanarConsts<T>,
        z: Vec<T>,
    ) -> Result<(LayerStep<T>, PlanarTape<T>)> {
        check_dim(self.dim(), z.len())?;
        let t = (dot(&self.w, &z) + self.b).tanh();
        let hp = T::one() - t * t;
        let s = T::one() + hp * k.w_uhat;
        let mut z_out = z.clone();
        axpy(t, &k.u_hat, &mut z_out);
        let step = LayerStep {
            z_out,
            logdet: s.abs().ln(),
            near_singular: s.abs() < T::lit(NEAR_SINGULAR),
        };
        Ok((step, PlanarTape { z_in: z, t, s }))
    }

    /// Gradient of `gzᵀz_out + gl·logdet`; parameter gradient is accumulated
    /// into `grad` in `(u_raw, w, b)` order, `g` is overwritten with the
    /// input gradient.
    pub(crate) fn backward(
        &self,
        k: &PlanarConsts<T>,
        tape: &PlanarTape<T>,
        g: &mut [T],
        gl: T,
        grad: &mut [T],
    ) {
        let d = self.dim();
        let PlanarTape { z_in, t, s } = tape;
        let (t, s) = (*t, *s);
        let (w, u_hat) = (&self.w, &k.u_hat);
        let hp = T::one() - t * t;
        let gs = gl / s;
        let ghp = gs * hp;

        // dL/da with a = wᵀz + b
        let g_a = dot(g, u_hat) * hp + gs * k.w_uhat * (-T::lit(2.0) * t * hp);

        let (gu, rest) = grad.split_at_mut(d);
        let (gw, gb) = rest.split_at_mut(d);
        gb[0] += g_a;
        for i in 0..d {
            gw[i] += g_a * z_in[i] + ghp * u_hat[i];
        }

        // dL/dû = t·gz + gs·h'·w
        let ww = k.ww;
        if ww == T::zero() {
            for i in 0..d {
                gu[i] += g[i] * t + ghp * w[i];
                g[i] += g_a * w[i];
            }
            return;
        }
        // û = u + c(wᵀu)·w/‖w‖²
        let (c, cp) = (k.c, k.cp);
        let mut q = T::zero();
        for i in 0..d {
            q += (g[i] * t + ghp * w[i]) * w[i];
        }
        let cq = cp * q / ww;
        let cw = c / ww;
        let c2 = T::lit(2.0) * c * q / (ww * ww);
        for i in 0..d {
            let gu_hat = g[i] * t + ghp * w[i];
            gu[i] += gu_hat + w[i] * cq;
            gw[i] += self.u_raw[i] * cq + gu_hat * cw - w[i] * c2;
            g[i] += g_a * w[i];
        }
    }

    /// `wᵀz' = α + wᵀû tanh(α + b)`, then `z = z' - û tanh(α + b)`.
    pub fn invert(&self, z_prime: &[T], tol: T) -> Result<Vec<T>> {
        check_dim(self.dim(), z_prime.len())?;
        let u_hat = self.u_hat();
        if norm_sq(&self.w) == T::zero() {
            let mut z = z_prime.to_vec();
            axpy(-self.b.tanh(), &u_hat, &mut z);
            return Ok(z);
        }
        let c = dot(&self.w, &u_hat);
        let target = dot(&self.w, z_prime);
        let b = self.b;
        let g = |alpha: T| alpha + c * (alpha + b).tanh();
        // |g(α) - α| ≤ |c| brackets the root
        let spread = c.abs() + T::one();
        // g' ≤ 1 + |c|, so this width bounds the residual of g by tol
        let alpha = bisect(g, target, target - spread, target + spread, tol / spread)?;
        let mut z = z_prime.to_vec();
        axpy(-(alpha + b).tanh(), &u_hat, &mut z);
        Ok(z)
    }

    pub(crate) fn write_params(&self, out: &mut Vec<T>) {
        out.extend_from_slice(&self.u_raw);
        out.extend_from_slice(&self.w);
        out.push(self.b);
    }

    pub(crate) fn read_params(&mut self, flat: &[T]) -> usize {
        let d = self.dim();
        self.u_raw.copy_from_slice(&flat[..d]);
        self.w.copy_from_slice(&flat[d..2 * d]);
        self.b = flat[2 * d];
        2 * d + 1
    }
}
