//! Unnormalized 2D test densities `p(z) ∝ exp(-U(z))` and their normalizers.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::sigmoid;
use crate::scalar::Real;

/// Half-width of the square `(-4, 4)²` used for normalizers and density grids.
pub const ENERGY_BOX: f64 = 4.0;

/// A potential `U(z)` with its gradient.
pub trait Potential<T: Real>: Sync {
    fn energy(&self, z: &[T]) -> T;
    fn energy_grad(&self, z: &[T]) -> Vec<T>;
}

/// `U(z) = ½‖z‖²`
#[derive(Clone, Copy, Debug, Default)]
pub struct Quadratic;

impl<T: Real> Potential<T> for Quadratic {
    fn energy(&self, z: &[T]) -> T {
        T::lit(0.5) * crate::scalar::norm_sq(z)
    }

    fn energy_grad(&self, z: &[T]) -> Vec<T> {
        z.to_vec()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum EnergyFunction {
    /// Ring of radius 2 split into two lobes along `z₁`.
    Ring,
    /// Sine ridge.
    Wave,
    /// Two sine ridges joined by a bump.
    WaveBump,
    /// Two sine ridges joined by a sigmoid step.
    WaveStep,
}

impl EnergyFunction {
    pub const ALL: [EnergyFunction; 4] = [Self::Ring, Self::Wave, Self::WaveBump, Self::WaveStep];

    pub fn id(self) -> u8 {
        match self {
            Self::Ring => 1,
            Self::Wave => 2,
            Self::WaveBump => 3,
            Self::WaveStep => 4,
        }
    }

    pub fn from_id(id: u8) -> Result<Self> {
        match id {
            1 => Ok(Self::Ring),
            2 => Ok(Self::Wave),
            3 => Ok(Self::WaveBump),
            4 => Ok(Self::WaveStep),
            _ => Err(Error::InvalidArgument(format!(
                "energy id must be 1..=4, got {id}"
            ))),
        }
    }
}

impl TryFrom<u8> for EnergyFunction {
    type Error = Error;

    fn try_from(id: u8) -> Result<Self> {
        Self::from_id(id)
    }
}

impl From<EnergyFunction> for u8 {
    fn from(e: EnergyFunction) -> u8 {
        e.id()
    }
}

/// `(w₁, w₁')` with `w₁(z) = sin(2π z₁ / 4)`.
fn w1<T: Real>(z1: T) -> (T, T) {
    let k = T::lit(PI / 2.0);
    ((k * z1).sin(), k * (k * z1).cos())
}

fn w2<T: Real>(z1: T) -> (T, T) {
    let s = (z1 - T::one()) / T::lit(0.6);
    let v = T::lit(3.0) * (-T::lit(0.5) * s * s).exp();
    (v, -v * s / T::lit(0.6))
}

fn w3<T: Real>(z1: T) -> (T, T) {
    let sg = sigmoid((z1 - T::one()) / T::lit(0.3));
    (
        T::lit(3.0) * sg,
        T::lit(3.0) * sg * (T::one() - sg) / T::lit(0.3),
    )
}

/// `-ln(e^{-½p²} + e^{-½q²})` and its partials in `p` and `q`.
fn neg_lse_pair<T: Real>(p: T, q: T) -> (T, T, T) {
    let a = -T::lit(0.5) * p * p;
    let b = -T::lit(0.5) * q * q;
    let m = a.max(b);
    let (ea, eb) = ((a - m).exp(), (b - m).exp());
    let s = ea + eb;
    let (wa, wb) = (ea / s, eb / s);
    (-(m + s.ln()), wa * p, wb * q)
}

impl EnergyFunction {
    fn eval<T: Real>(self, z: &[T]) -> (T, [T; 2]) {
        let (z1, z2) = (z[0], z[1]);
        let half = T::lit(0.5);
        match self {
            Self::Ring => {
                let r = (z1 * z1 + z2 * z2).sqrt();
                let a = (r - T::lit(2.0)) / T::lit(0.4);
                let (tail, dp, dq) = neg_lse_pair(
                    (z1 - T::lit(2.0)) / T::lit(0.6),
                    (z1 + T::lit(2.0)) / T::lit(0.6),
                );
                let radial = if r > T::zero() {
                    a / T::lit(0.4) / r
                } else {
                    T::zero()
                };
                let g1 = radial * z1 + (dp + dq) / T::lit(0.6);
                let g2 = radial * z2;
                (half * a * a + tail, [g1, g2])
            }
            Self::Wave => {
                let (w, dw) = w1(z1);
                let e = (z2 - w) / T::lit(0.4);
                let g = e / T::lit(0.4);
                (half * e * e, [-g * dw, g])
            }
            Self::WaveBump | Self::WaveStep => {
                let (w, dw) = w1(z1);
                let (sp, sq, (v, dv)) = match self {
                    Self::WaveBump => (T::lit(0.35), T::lit(0.35), w2(z1)),
                    _ => (T::lit(0.4), T::lit(0.35), w3(z1)),
                };
                let p = (z2 - w) / sp;
                let q = (z2 - w + v) / sq;
                let (u, dp, dq) = neg_lse_pair(p, q);
                let g1 = dp * (-dw / sp) + dq * ((dv - dw) / sq);
                let g2 = dp / sp + dq / sq;
                (u, [g1, g2])
            }
        }
    }
}

impl<T: Real> Potential<T> for EnergyFunction {
    fn energy(&self, z: &[T]) -> T {
        self.eval(z).0
    }

    fn energy_grad(&self, z: &[T]) -> Vec<T> {
        self.eval(z).1.to_vec()
    }
}

/// Width of the quadratic wall that confines fits to the `(-4, 4)²` box.
pub const WALL_WIDTH: f64 = 0.02;

/// `Σ_i ½ ((|z_i| - 4)₊ / WALL_WIDTH)²` and its gradient. Zero inside the box.
///
/// Energies 2 to 4 depend on `z₁` only through bounded terms, so
/// `exp(-U)` has infinite mass on ℝ²; the wall makes the fitted target
/// proper without changing it inside the box.
pub fn box_wall<T: Real>(z: &[T]) -> (T, Vec<T>) {
    let edge = T::lit(ENERGY_BOX);
    let s2 = T::lit(WALL_WIDTH * WALL_WIDTH);
    let mut v = T::zero();
    let g = z
        .iter()
        .map(|&zi| {
            let over = zi.abs() - edge;
            if over > T::zero() {
                v += T::lit(0.5) * over * over / s2;
                over / s2 * zi.signum()
            } else {
                T::zero()
            }
        })
        .collect();
    (v, g)
}

/// Evenly spaced points `-4, …, 4` (inclusive) along one axis.
pub fn grid_axis<T: Real>(n: usize) -> Vec<T> {
    let lo = -ENERGY_BOX;
    let step = 2.0 * ENERGY_BOX / (n - 1) as f64;
    (0..n).map(|i| T::lit(lo + step * i as f64)).collect()
}

/// `Z = ∬_{(-4,4)²} exp(-U)` by the trapezoid rule on `grid_n × grid_n` points.
pub fn energy_normalizer<T: Real, P: Potential<T> + ?Sized>(
    potential: &P,
    grid_n: usize,
) -> Result<T> {
    if grid_n < 100 {
        return Err(Error::InvalidArgument(format!(
            "grid_n must be >= 100, got {grid_n}"
        )));
    }
    let axis = grid_axis::<T>(grid_n);
    let h = T::lit(2.0 * ENERGY_BOX / (grid_n - 1) as f64);
    let weight = |i: usize| {
        if i == 0 || i == grid_n - 1 {
            T::lit(0.5)
        } else {
            T::one()
        }
    };
    let mut total = T::zero();
    for (i, &a) in axis.iter().enumerate() {
        let mut row = T::zero();
        for (j, &b) in axis.iter().enumerate() {
            row += weight(j) * (-potential.energy(&[a, b])).exp();
        }
        total += weight(i) * row;
    }
    Ok(total * h * h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{fd_gradient, max_rel_err, Rng};

    #[test]
    fn wave_vanishes_at_origin() {
        assert_eq!(EnergyFunction::Wave.energy(&[0.0f64, 0.0]), 0.0);
    }

    #[test]
    fn ring_at_origin() {
        let expect = 12.5 + 50.0 / 9.0 - std::f64::consts::LN_2;
        let u = EnergyFunction::Ring.energy(&[0.0f64, 0.0]);
        assert!((u - expect).abs() < 1e-12);
        assert!((u - 17.36240).abs() < 1e-5);
    }

    /// Direct transcription of the table formulas, without log-sum-exp.
    fn naive(id: u8, z1: f64, z2: f64) -> f64 {
        let w1 = (2.0 * PI * z1 / 4.0).sin();
        let w2 = 3.0 * (-0.5 * ((z1 - 1.0) / 0.6).powi(2)).exp();
        let w3 = 3.0 / (1.0 + (-(z1 - 1.0) / 0.3).exp());
        match id {
            1 => {
                let r = (z1 * z1 + z2 * z2).sqrt();
                0.5 * ((r - 2.0) / 0.4).powi(2)
                    - ((-0.5 * ((z1 - 2.0) / 0.6).powi(2)).exp()
                        + (-0.5 * ((z1 + 2.0) / 0.6).powi(2)).exp())
                    .ln()
            }
            2 => 0.5 * ((z2 - w1) / 0.4).powi(2),
            3 => -((-0.5 * ((z2 - w1) / 0.35).powi(2)).exp()
                + (-0.5 * ((z2 - w1 + w2) / 0.35).powi(2)).exp())
            .ln(),
            _ => -((-0.5 * ((z2 - w1) / 0.4).powi(2)).exp()
                + (-0.5 * ((z2 - w1 + w3) / 0.35).powi(2)).exp())
            .ln(),
        }
    }

    #[test]
    fn matches_independent_evaluator() {
        let mut rng = Rng::new(6);
        for e in EnergyFunction::ALL {
            for _ in 0..5 {
                let z = [rng.uniform() * 6.0 - 3.0, rng.uniform() * 4.0 - 2.0];
                let a = e.energy(&z);
                let b = naive(e.id(), z[0], z[1]);
                assert!((a - b).abs() < 1e-12 * a.abs().max(1.0), "{e:?} {z:?}");
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = Rng::new(60);
        for e in EnergyFunction::ALL {
            for _ in 0..50 {
                let z = [rng.uniform() * 8.0 - 4.0, rng.uniform() * 8.0 - 4.0];
                let g = e.energy_grad(&z);
                let f = fd_gradient(|v: &[f64]| e.energy(v), &z, 1e-5).unwrap();
                assert!(max_rel_err(&g, &f) < 1e-5, "{e:?} {z:?}");
            }
        }
    }

    #[test]
    fn finite_on_grid() {
        let axis = grid_axis::<f64>(400);
        for e in EnergyFunction::ALL {
            for &a in &axis {
                for &b in &axis {
                    assert!(e.energy(&[a, b]).is_finite());
                }
            }
        }
    }

    #[test]
    fn gaussian_normalizer() {
        let z: f64 = energy_normalizer(&Quadratic, 400).unwrap();
        let two_pi = 2.0 * PI;
        assert!(((z - two_pi) / two_pi).abs() < 1e-3);
        assert!(energy_normalizer::<f64, _>(&Quadratic, 50).is_err());
    }

    #[test]
    fn normalizers_converge() {
        for e in EnergyFunction::ALL {
            let a: f64 = energy_normalizer(&e, 400).unwrap();
            let b: f64 = energy_normalizer(&e, 800).unwrap();
            assert!(a > 0.0);
            assert!(((a - b) / b).abs() < 1e-4, "{e:?}: {a} vs {b}");
        }
    }

    #[test]
    fn ids_round_trip() {
        for e in EnergyFunction::ALL {
            assert_eq!(EnergyFunction::from_id(e.id()).unwrap(), e);
        }
        assert!(EnergyFunction::from_id(5).is_err());
    }

    #[test]
    fn wall_is_zero_inside_and_matches_fd() {
        let (v, g) = box_wall(&[3.9f64, -4.0]);
        assert_eq!(v, 0.0);
        assert_eq!(g, vec![0.0, 0.0]);
        let z = [4.03f64, -4.1];
        let f = fd_gradient(|v: &[f64]| box_wall(v).0, &z, 1e-6).unwrap();
        assert!(max_rel_err(&box_wall(&z).1, &f) < 1e-6);
    }
}
