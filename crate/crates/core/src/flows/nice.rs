//! Additive coupling layer with a fixed random mixer applied before the split.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::math::{random_orthogonal, Mat, Rng};
use crate::models::mlp::{Activation, Mlp, MlpTape};
use crate::scalar::Real;

use super::LayerStep;

/// Fixed component mixing applied before partitioning.
#[derive(Clone, Debug, PartialEq)]
pub enum Mixer<T> {
    /// `y_i = z_{perm[i]}`
    Permutation(Vec<usize>),
    /// `y = Q z` with `Q` orthogonal.
    Orthogonal(Mat<T>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MixerKind {
    Permutation,
    Orthogonal,
}

impl<T: Real> Mixer<T> {
    pub fn random(kind: MixerKind, d: usize, rng: &mut Rng) -> Result<Self> {
        Ok(match kind {
            MixerKind::Permutation => Mixer::Permutation(rng.permutation(d)),
            MixerKind::Orthogonal => Mixer::Orthogonal(random_orthogonal(rng, d)?),
        })
    }

    pub fn kind(&self) -> MixerKind {
        match self {
            Mixer::Permutation(_) => MixerKind::Permutation,
            Mixer::Orthogonal(_) => MixerKind::Orthogonal,
        }
    }

    fn validate(&self, d: usize) -> Result<()> {
        match self {
            Mixer::Permutation(p) => {
                check_dim(d, p.len())?;
                let mut seen = vec![false; d];
                for &i in p {
                    if i >= d || std::mem::replace(&mut seen[i], true) {
                        return Err(Error::InvalidArgument("mixer is not a permutation".into()));
                    }
                }
            }
            Mixer::Orthogonal(q) => {
                check_dim(d, q.rows())?;
                check_dim(d, q.cols())?;
                let tol = T::lit(1e-10).max(T::epsilon() * T::lit(100.0));
                if q.transpose().matmul(q).max_abs_diff(&Mat::identity(d)) > tol {
                    return Err(Error::InvalidArgument(
                        "mixer matrix is not orthogonal".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn apply(&self, z: &[T]) -> Vec<T> {
        match self {
            Mixer::Permutation(p) => p.iter().map(|&i| z[i]).collect(),
            Mixer::Orthogonal(q) => q.matvec(z),
        }
    }

    /// Inverse (equivalently transpose) of [`Mixer::apply`].
    pub fn apply_t(&self, y: &[T]) -> Vec<T> {
        match self {
            Mixer::Permutation(p) => {
                let mut z = vec![T::zero(); y.len()];
                for (&i, &v) in p.iter().zip(y) {
                    z[i] = v;
                }
                z
            }
            Mixer::Orthogonal(q) => q.matvec_t(y),
        }
    }
}

/// `f(z) = (y_A, y_B + h(y_A))` with `y = mixer(z)` and `A` given by `mask`.
#[derive(Clone, Debug, PartialEq)]
pub struct NiceCoupling<T> {
    mask: Vec<bool>,
    net: Mlp<T>,
    mixer: Option<Mixer<T>>,
}

#[derive(Clone, Debug)]
pub(crate) struct NiceTape<T> {
    net: MlpTape<T>,
}

impl<T: Real> NiceCoupling<T> {
    pub fn new(mask: Vec<bool>, net: Mlp<T>, mixer: Option<Mixer<T>>) -> Result<Self> {
        let d = mask.len();
        let na = mask.iter().filter(|&&m| m).count();
        if na == 0 || na == d {
            return Err(Error::InvalidArgument(
                "coupling mask must select a nonempty proper subset".into(),
            ));
        }
        check_dim(na, net.input_dim())?;
        check_dim(d - na, net.output_dim())?;
        if let Some(m) = &mixer {
            m.validate(d)?;
        }
        Ok(Self { mask, net, mixer })
    }

    /// Fresh coupling layer: a random mixer, the first `⌊d/2⌋` mixed
    /// coordinates as the conditioning half and a one-hidden-layer tanh net.
    pub fn random(
        d: usize,
        hidden: usize,
        kind: MixerKind,
        gain: f64,
        rng: &mut Rng,
    ) -> Result<Self> {
        if d < 2 {
            return Err(Error::InvalidArgument("coupling layers need d >= 2".into()));
        }
        let na = d / 2;
        let mask = (0..d).map(|i| i < na).collect();
        let mixer = Mixer::random(kind, d, rng)?;
        let net = Mlp::init(na, &[hidden], d - na, Activation::Tanh, gain, rng)?;
        Self::new(mask, net, Some(mixer))
    }

    pub fn dim(&self) -> usize {
        self.mask.len()
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn net(&self) -> &Mlp<T> {
        &self.net
    }

    pub fn mixer(&self) -> Option<&Mixer<T>> {
        self.mixer.as_ref()
    }

    pub fn num_params(&self) -> usize {
        self.net.num_params()
    }

    fn mix(&self, z: &[T]) -> Vec<T> {
        match &self.mixer {
            Some(m) => m.apply(z),
            None => z.to_vec(),
        }
    }

    fn unmix(&self, y: &[T]) -> Vec<T> {
        match &self.mixer {
            Some(m) => m.apply_t(y),
            None => y.to_vec(),
        }
    }

    fn split_a(&self, y: &[T]) -> Vec<T> {
        y.iter()
            .zip(&self.mask)
            .filter(|(_, &m)| m)
            .map(|(&v, _)| v)
            .collect()
    }

    fn add_to_b(&self, y: &mut [T], delta: &[T], sign: T) {
        let mut k = 0;
        for (yi, &m) in y.iter_mut().zip(&self.mask) {
            if !m {
                *yi += sign * delta[k];
                k += 1;
            }
        }
    }

    pub fn apply(&self, z: &[T]) -> Result<LayerStep<T>> {
        self.forward_taped(z).map(|(s, _)| s)
    }

    pub(crate) fn forward_taped(&self, z: &[T]) -> Result<(LayerStep<T>, NiceTape<T>)> {
        check_dim(self.dim(), z.len())?;
        let mut y = self.mix(z);
        let (shift, net) = self.net.forward(&self.split_a(&y))?;
        self.add_to_b(&mut y, &shift, T::one());
        Ok((
            LayerStep {
                z_out: y,
                logdet: T::zero(),
                near_singular: false,
            },
            NiceTape { net },
        ))
    }

    pub(crate) fn backward(&self, tape: &NiceTape<T>, gz: &[T], grad: &mut [T]) -> Result<Vec<T>> {
        let g_b: Vec<T> = gz
            .iter()
            .zip(&self.mask)
            .filter(|(_, &m)| !m)
            .map(|(&g, _)| g)
            .collect();
        let g_a = self.net.backward_into(&tape.net, &g_b, grad)?;
        let mut g_y = gz.to_vec();
        let mut k = 0;
        for (gy, &m) in g_y.iter_mut().zip(&self.mask) {
            if m {
                *gy += g_a[k];
                k += 1;
            }
        }
        Ok(self.unmix(&g_y))
    }

    /// Exact inverse: subtract the coupling shift, then undo the mixer.
    pub fn inverse(&self, z_prime: &[T]) -> Result<Vec<T>> {
        check_dim(self.dim(), z_prime.len())?;
        let mut y = z_prime.to_vec();
        let shift = self.net.eval(&self.split_a(&y))?;
        self.add_to_b(&mut y, &shift, -T::one());
        Ok(self.unmix(&y))
    }

    pub(crate) fn write_params(&self, out: &mut Vec<T>) {
        self.net.write_params(out);
    }

    pub(crate) fn read_params(&mut self, flat: &[T]) -> Result<usize> {
        self.net.read_params(flat)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zeroed(mut layer: NiceCoupling<f64>) -> NiceCoupling<f64> {
        let n = layer.num_params();
        layer.read_params(&vec![0.0; n]).unwrap();
        layer
    }

    #[test]
    fn zero_net_only_mixes() {
        let mut rng = Rng::new(8);
        for kind in [MixerKind::Permutation, MixerKind::Orthogonal] {
            let layer = zeroed(NiceCoupling::random(4, 5, kind, 1.0, &mut rng).unwrap());
            let z = [0.1, -0.4, 2.0, 0.7];
            let step = layer.apply(&z).unwrap();
            let mixed = layer.mixer().unwrap().apply(&z);
            assert_eq!(step.z_out, mixed);
            assert_eq!(step.logdet, 0.0);
            let back = layer.inverse(&z).unwrap();
            let expect = layer.mixer().unwrap().apply_t(&z);
            for (a, b) in back.iter().zip(&expect) {
                assert!((a - b).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn round_trip() {
        let mut rng = Rng::new(31);
        for kind in [MixerKind::Permutation, MixerKind::Orthogonal] {
            for _ in 0..20 {
                let layer = NiceCoupling::<f64>::random(4, 8, kind, 3.0, &mut rng).unwrap();
                let z: Vec<f64> = (0..4).map(|_| rng.normal() * 2.0).collect();
                let fwd = layer.apply(&z).unwrap().z_out;
                let back = layer.inverse(&fwd).unwrap();
                for (a, b) in back.iter().zip(&z) {
                    assert!((a - b).abs() <= 1e-10);
                }
            }
        }
    }

    #[test]
    fn invalid_masks_and_mixers() {
        let mut rng = Rng::new(1);
        let net = Mlp::<f64>::init(1, &[2], 1, Activation::Tanh, 1.0, &mut rng).unwrap();
        assert!(NiceCoupling::new(vec![true, true], net.clone(), None).is_err());
        assert!(NiceCoupling::new(
            vec![true, false],
            net.clone(),
            Some(Mixer::Permutation(vec![0, 0]))
        )
        .is_err());
        let skew = Mat::new(2, 2, vec![1.0, 0.1, 0.0, 1.0]).unwrap();
        assert!(NiceCoupling::new(
            vec![true, false],
            net.clone(),
            Some(Mixer::Orthogonal(skew))
        )
        .is_err());
        assert!(NiceCoupling::new(vec![false, true], net, None).is_ok());
        assert!(NiceCoupling::<f64>::random(1, 2, MixerKind::Permutation, 1.0, &mut rng).is_err());
    }
}
