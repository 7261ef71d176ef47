//! Amortized inference network and the DLGM decoder.

use std::borrow::Cow;

use crate::error::{check_dim, Error, Result};
use crate::flows::FlowFamily;
use crate::flows::FlowStack;
use crate::math::Rng;
use crate::scalar::Real;

use super::density::{
    bernoulli_grad, bernoulli_loglik, logitnormal_grad, logitnormal_loglik, DiagGaussian,
    Likelihood,
};
use super::mlp::{Activation, Mlp, MlpTape};

/// Scale of the initial weights and of the random raw flow parameters.
pub const INIT_GAIN: f64 = 0.01;

/// Maps an observation to `q₀ = N(μ, diag σ²)` and, for planar and radial
/// families, to the parameters of every flow layer. NICE coupling nets are
/// shared across datapoints and stored here as a global stack.
#[derive(Clone, Debug, PartialEq)]
pub struct InferenceNet<T> {
    net: Mlp<T>,
    latent: usize,
    family: FlowFamily,
    k: usize,
    /// Zero-parameter layout for amortized families; learned layers for NICE.
    flow: FlowStack<T>,
}

#[derive(Clone, Debug)]
pub struct InferenceTape<T> {
    mlp: MlpTape<T>,
}

impl<T: Real> InferenceNet<T> {
    /// Head output width for the given latent size, family and flow length.
    pub fn head_dim(latent: usize, family: FlowFamily, k: usize) -> usize {
        2 * latent + family.params_per_layer(latent).map_or(0, |p| p * k)
    }

    pub fn new(
        net: Mlp<T>,
        latent: usize,
        family: FlowFamily,
        k: usize,
        flow: FlowStack<T>,
    ) -> Result<Self> {
        check_dim(Self::head_dim(latent, family, k), net.output_dim())?;
        check_dim(latent, flow.dim())?;
        check_dim(k, flow.len())?;
        Ok(Self {
            net,
            latent,
            family,
            k,
            flow,
        })
    }

    /// Trunk of `hidden` units, affine heads. Weights start at
    /// [`INIT_GAIN`] scale; flow-head biases are drawn `N(0, INIT_GAIN²)` and
    /// the `q₀` biases are zero, so `μ ≈ 0` and `σ ≈ 1`.
    #[allow(clippy::too_many_arguments)]
    pub fn init(
        data_dim: usize,
        hidden: &[usize],
        activation: Activation,
        latent: usize,
        family: FlowFamily,
        k: usize,
        nice_hidden: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        if latent == 0 {
            return Err(Error::InvalidArgument(
                "latent dimension must be >= 1".into(),
            ));
        }
        let out = Self::head_dim(latent, family, k);
        let mut net = Mlp::init(data_dim, hidden, out, activation, INIT_GAIN, rng)?;
        let mut p = net.params();
        let n = p.len();
        for v in &mut p[n - out + 2 * latent..] {
            *v = T::lit(INIT_GAIN * rng.normal());
        }
        net.set_params(&p)?;
        let flow = FlowStack::random(
            family,
            latent,
            k,
            if family.is_nice() { INIT_GAIN } else { 0.0 },
            nice_hidden,
            rng,
        )?;
        Self::new(net, latent, family, k, flow)
    }

    pub fn net(&self) -> &Mlp<T> {
        &self.net
    }

    pub fn latent_dim(&self) -> usize {
        self.latent
    }

    pub fn data_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn family(&self) -> FlowFamily {
        self.family
    }

    pub fn flow_len(&self) -> usize {
        self.k
    }

    /// The shared NICE stack, if any.
    pub fn global_flow(&self) -> Option<&FlowStack<T>> {
        self.family.is_nice().then_some(&self.flow)
    }

    fn global_len(&self) -> usize {
        if self.family.is_nice() {
            self.flow.num_params()
        } else {
            0
        }
    }

    /// Network parameters followed by any global flow parameters.
    pub fn num_params(&self) -> usize {
        self.net.num_params() + self.global_len()
    }

    pub fn write_params(&self, out: &mut Vec<T>) {
        self.net.write_params(out);
        if self.family.is_nice() {
            out.extend(self.flow.params());
        }
    }

    pub fn read_params(&mut self, flat: &[T]) -> Result<usize> {
        let n = self.net.read_params(flat)?;
        if !self.family.is_nice() {
            return Ok(n);
        }
        let m = self.flow.num_params();
        if flat.len() < n + m {
            return Err(Error::Dimension {
                expected: n + m,
                got: flat.len(),
            });
        }
        self.flow.set_params(&flat[n..n + m])?;
        Ok(n + m)
    }

    pub fn forward(
        &self,
        x: &[T],
    ) -> Result<(DiagGaussian<T>, Cow<'_, FlowStack<T>>, InferenceTape<T>)> {
        let (out, mlp) = self.net.forward(x)?;
        let d = self.latent;
        let q0 = DiagGaussian::new(out[..d].to_vec(), out[d..2 * d].to_vec())?;
        let flow = if self.family.is_nice() {
            Cow::Borrowed(&self.flow)
        } else {
            let mut f = self.flow.clone();
            f.set_params(&out[2 * d..])?;
            Cow::Owned(f)
        };
        Ok((q0, flow, InferenceTape { mlp }))
    }

    /// Accumulates into `grad` (laid out as [`InferenceNet::write_params`])
    /// given gradients with respect to `μ`, `log σ` and the flat parameters
    /// of the flow returned by [`InferenceNet::forward`].
    pub fn backward_into(
        &self,
        tape: &InferenceTape<T>,
        g_mu: &[T],
        g_log_sigma: &[T],
        g_flow: &[T],
        grad: &mut [T],
    ) -> Result<()> {
        check_dim(self.latent, g_mu.len())?;
        check_dim(self.latent, g_log_sigma.len())?;
        check_dim(self.flow.num_params(), g_flow.len())?;
        check_dim(self.num_params(), grad.len())?;
        let n = self.net.num_params();
        let (g_net, g_global) = grad.split_at_mut(n);
        let mut dy = Vec::with_capacity(self.net.output_dim());
        dy.extend_from_slice(g_mu);
        dy.extend_from_slice(g_log_sigma);
        if self.family.is_nice() {
            for (a, &b) in g_global.iter_mut().zip(g_flow) {
                *a += b;
            }
        } else {
            dy.extend_from_slice(g_flow);
        }
        self.net.backward_into(&tape.mlp, &dy, g_net)?;
        Ok(())
    }
}

/// `p_θ(x | z)` given by an MLP producing Bernoulli logits or logit-normal
/// `(μ, log α)` per pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct Decoder<T> {
    net: Mlp<T>,
    likelihood: Likelihood,
}

#[derive(Clone, Debug)]
pub struct DecoderTape<T> {
    mlp: MlpTape<T>,
    out: Vec<T>,
}

impl<T: Real> Decoder<T> {
    pub fn new(net: Mlp<T>, likelihood: Likelihood) -> Result<Self> {
        let out = net.output_dim();
        if likelihood == Likelihood::LogitNormal && !out.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "logit-normal decoder needs an even output width, got {out}"
            )));
        }
        Ok(Self { net, likelihood })
    }

    pub fn init(
        latent: usize,
        hidden: &[usize],
        data_dim: usize,
        activation: Activation,
        likelihood: Likelihood,
        gain: f64,
        rng: &mut Rng,
    ) -> Result<Self> {
        let out = match likelihood {
            Likelihood::Bernoulli => data_dim,
            Likelihood::LogitNormal => 2 * data_dim,
        };
        Self::new(
            Mlp::init(latent, hidden, out, activation, gain, rng)?,
            likelihood,
        )
    }

    pub fn net(&self) -> &Mlp<T> {
        &self.net
    }

    pub fn likelihood(&self) -> Likelihood {
        self.likelihood
    }

    pub fn latent_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn data_dim(&self) -> usize {
        match self.likelihood {
            Likelihood::Bernoulli => self.net.output_dim(),
            Likelihood::LogitNormal => self.net.output_dim() / 2,
        }
    }

    pub fn num_params(&self) -> usize {
        self.net.num_params()
    }

    pub fn write_params(&self, out: &mut Vec<T>) {
        self.net.write_params(out);
    }

    pub fn read_params(&mut self, flat: &[T]) -> Result<usize> {
        self.net.read_params(flat)
    }

    fn loglik_from(&self, out: &[T], x: &[T]) -> Result<T> {
        match self.likelihood {
            Likelihood::Bernoulli => bernoulli_loglik(out, x),
            Likelihood::LogitNormal => {
                let n = self.data_dim();
                logitnormal_loglik(&out[..n], &out[n..], x)
            }
        }
    }

    /// `ln p_θ(x | z)`
    pub fn log_lik(&self, z: &[T], x: &[T]) -> Result<T> {
        self.forward(z, x).map(|(v, _)| v)
    }

    pub fn forward(&self, z: &[T], x: &[T]) -> Result<(T, DecoderTape<T>)> {
        check_dim(self.data_dim(), x.len())?;
        let (out, mlp) = self.net.forward(z)?;
        let v = self.loglik_from(&out, x)?;
        Ok((v, DecoderTape { mlp, out }))
    }

    /// Accumulates `scale · ∂ ln p(x|z) / ∂θ` into `grad` and returns
    /// `scale · ∂ ln p(x|z) / ∂z`.
    pub fn backward_into(
        &self,
        tape: &DecoderTape<T>,
        x: &[T],
        scale: T,
        grad: &mut [T],
    ) -> Result<Vec<T>> {
        let mut dy = match self.likelihood {
            Likelihood::Bernoulli => bernoulli_grad(&tape.out, x),
            Likelihood::LogitNormal => {
                let n = self.data_dim();
                let (mut gm, ga) = logitnormal_grad(&tape.out[..n], &tape.out[n..], x)?;
                gm.extend(ga);
                gm
            }
        };
        for v in &mut dy {
            *v *= scale;
        }
        self.net.backward_into(&tape.mlp, &dy, grad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{fd_gradient, max_rel_err};

    fn maxout() -> Activation {
        Activation::Maxout { window: 2 }
    }

    #[test]
    fn head_sizes() {
        assert_eq!(
            InferenceNet::<f64>::head_dim(3, FlowFamily::Planar, 4),
            6 + 4 * 7
        );
        assert_eq!(
            InferenceNet::<f64>::head_dim(3, FlowFamily::Radial, 2),
            6 + 2 * 5
        );
        assert_eq!(InferenceNet::<f64>::head_dim(3, FlowFamily::NicePerm, 2), 6);
    }

    #[test]
    fn zero_network_gives_standard_identity() {
        let mut rng = Rng::new(1);
        let mut net =
            InferenceNet::<f64>::init(5, &[6], maxout(), 2, FlowFamily::Planar, 3, 0, &mut rng)
                .unwrap();
        let zeros = vec![0.0; net.num_params()];
        net.read_params(&zeros).unwrap();
        let (q0, flow, _) = net.forward(&[0.3, -1.0, 2.0, 0.0, 1.0]).unwrap();
        assert_eq!(q0.mu, vec![0.0, 0.0]);
        assert_eq!(q0.log_sigma, vec![0.0, 0.0]);
        let z = [0.7, -0.4];
        let r = flow.forward(&z).unwrap();
        assert_eq!(r.z_out, z.to_vec());
        assert_eq!(r.sum_logdet, 0.0);
    }

    #[test]
    fn distinct_inputs_distinct_means() {
        let mut rng = Rng::new(2);
        let net = InferenceNet::<f64>::init(
            4,
            &[8],
            Activation::Tanh,
            2,
            FlowFamily::Radial,
            2,
            0,
            &mut rng,
        )
        .unwrap();
        let a = net.forward(&[1.0, 0.0, 0.0, 1.0]).unwrap().0;
        let b = net.forward(&[0.0, 1.0, 1.0, 0.0]).unwrap().0;
        assert_ne!(a.mu, b.mu);
    }

    /// Scalar objective touching every head output through a fixed linear
    /// functional, so its gradient exercises the full backward pass.
    fn probe(net: &InferenceNet<f64>, x: &[f64], c: &[f64]) -> f64 {
        let (q0, flow, _) = net.forward(x).unwrap();
        let mut v: Vec<f64> = q0.mu.iter().chain(&q0.log_sigma).copied().collect();
        v.extend(flow.params());
        v.iter().zip(c).map(|(a, b)| a * b).sum()
    }

    #[test]
    fn parameter_gradients_match_fd() {
        for family in [FlowFamily::Planar, FlowFamily::NiceOrth] {
            let mut rng = Rng::new(3);
            let mut net =
                InferenceNet::<f64>::init(3, &[4], Activation::Tanh, 2, family, 2, 3, &mut rng)
                    .unwrap();
            let mut p = Vec::new();
            net.write_params(&mut p);
            let p: Vec<f64> = p.iter().map(|_| rng.normal() * 0.5).collect();
            net.read_params(&p).unwrap();
            let x = [0.4, -0.9, 1.3];
            let (_, flow, tape) = net.forward(&x).unwrap();
            let nf = flow.num_params();
            let c: Vec<f64> = (0..4 + nf).map(|_| rng.normal()).collect();
            let mut grad = vec![0.0; net.num_params()];
            net.backward_into(&tape, &c[..2], &c[2..4], &c[4..], &mut grad)
                .unwrap();
            let fd = fd_gradient(
                |q: &[f64]| {
                    let mut m = net.clone();
                    m.read_params(q).unwrap();
                    probe(&m, &x, &c)
                },
                &p,
                1e-5,
            )
            .unwrap();
            assert!(max_rel_err(&grad, &fd) < 1e-6, "{family:?}");
        }
    }

    #[test]
    fn decoder_gradients_match_fd() {
        let mut rng = Rng::new(4);
        for lik in [Likelihood::Bernoulli, Likelihood::LogitNormal] {
            let dec =
                Decoder::<f64>::init(2, &[6], 5, Activation::Tanh, lik, 1.0, &mut rng).unwrap();
            let x: Vec<f64> = match lik {
                Likelihood::Bernoulli => vec![1.0, 0.0, 0.0, 1.0, 1.0],
                Likelihood::LogitNormal => vec![0.2, 0.5, 0.9, 0.01, 0.6],
            };
            let z = [0.3, -0.8];
            let (_, tape) = dec.forward(&z, &x).unwrap();
            let mut grad = vec![0.0; dec.num_params()];
            let dz = dec.backward_into(&tape, &x, 1.0, &mut grad).unwrap();
            let fz = fd_gradient(|v: &[f64]| dec.log_lik(v, &x).unwrap(), &z, 1e-5).unwrap();
            assert!(max_rel_err(&dz, &fz) < 1e-6);
            let p = dec.net().params();
            let fp = fd_gradient(
                |q: &[f64]| {
                    let mut d = dec.clone();
                    d.read_params(q).unwrap();
                    d.log_lik(&z, &x).unwrap()
                },
                &p,
                1e-5,
            )
            .unwrap();
            assert!(max_rel_err(&grad, &fp) < 1e-6, "{lik:?}");
        }
    }

    #[test]
    fn decoder_rejects_bad_data() {
        let mut rng = Rng::new(5);
        let dec = Decoder::<f64>::init(
            2,
            &[4],
            3,
            Activation::Tanh,
            Likelihood::Bernoulli,
            1.0,
            &mut rng,
        )
        .unwrap();
        assert!(dec.log_lik(&[0.0, 0.0], &[0.5, 1.0, 0.0]).is_err());
        assert!(dec.log_lik(&[0.0, 0.0], &[1.0, 0.0]).is_err());
    }
}
