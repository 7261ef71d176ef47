//! Invertible maps with cheap log-determinants: planar, radial and NICE
//! coupling layers, and their composition into a flow.

pub mod nice;
pub mod planar;
pub mod radial;

pub use nice::{Mixer, MixerKind, NiceCoupling};
pub use planar::{planar_constrain, planar_constrain_vjp, planar_map, Planar};
pub use radial::{radial_constrain, radial_constrain_vjp, Radial};

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::math::{Mat, Rng};
use crate::models::mlp::{Activation, Dense, Mlp};
use crate::scalar::{fingerprint, Real};

use nice::NiceTape;
use planar::{PlanarConsts, PlanarTape};
use radial::{RadialConsts, RadialTape};

/// `|1 + ûᵀψ(z)|` below this is reported as near-singular.
pub const NEAR_SINGULAR: f64 = 1e-12;
/// Default bound on the residual of the scalar inversion equations.
pub const INVERT_TOL: f64 = 1e-10;
pub const BISECTION_CAP: usize = 200;

/// Output of a single layer application.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerStep<T> {
    pub z_out: Vec<T>,
    pub logdet: T,
    pub near_singular: bool,
}

/// Root of a nondecreasing `g(x) = target` inside `[lo, hi]`.
pub(crate) fn bisect<T: Real>(
    g: impl Fn(T) -> T,
    target: T,
    mut lo: T,
    mut hi: T,
    tol: T,
) -> Result<T> {
    if !(g(lo) <= target && g(hi) >= target) {
        return Err(Error::NonConvergence {
            iterations: 0,
            width: (hi - lo).as_f64(),
        });
    }
    for _ in 0..BISECTION_CAP {
        let mid = lo + (hi - lo) / T::lit(2.0);
        if hi - lo <= tol || mid <= lo || mid >= hi {
            return Ok(mid);
        }
        if g(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let width = hi - lo;
    if width <= tol {
        Ok(lo + width / T::lit(2.0))
    } else {
        Err(Error::NonConvergence {
            iterations: BISECTION_CAP,
            width: width.as_f64(),
        })
    }
}

/// Which layer type a flow is built from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FlowFamily {
    Planar,
    Radial,
    NicePerm,
    NiceOrth,
}

impl FlowFamily {
    /// Parameters per layer for the amortizable families.
    pub fn params_per_layer(self, d: usize) -> Option<usize> {
        match self {
            FlowFamily::Planar => Some(2 * d + 1),
            FlowFamily::Radial => Some(d + 2),
            FlowFamily::NicePerm | FlowFamily::NiceOrth => None,
        }
    }

    pub fn is_nice(self) -> bool {
        matches!(self, FlowFamily::NicePerm | FlowFamily::NiceOrth)
    }

    fn mixer_kind(self) -> Option<MixerKind> {
        match self {
            FlowFamily::NicePerm => Some(MixerKind::Permutation),
            FlowFamily::NiceOrth => Some(MixerKind::Orthogonal),
            _ => None,
        }
    }
}

impl std::str::FromStr for FlowFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "planar" => Ok(FlowFamily::Planar),
            "radial" => Ok(FlowFamily::Radial),
            "nice-perm" => Ok(FlowFamily::NicePerm),
            "nice-orth" => Ok(FlowFamily::NiceOrth),
            other => Err(Error::InvalidArgument(format!(
                "unknown flow family {other:?}"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum FlowLayer<T> {
    Planar(Planar<T>),
    Radial(Radial<T>),
    Nice(NiceCoupling<T>),
}

#[derive(Clone, Debug, PartialEq)]
enum LayerConsts<T> {
    Planar(PlanarConsts<T>),
    Radial(RadialConsts<T>),
    Nice,
}

#[derive(Clone, Debug)]
enum LayerTape<T> {
    Planar(PlanarTape<T>),
    Radial(RadialTape<T>),
    Nice(NiceTape<T>),
}

impl<T: Real> FlowLayer<T> {
    pub fn dim(&self) -> usize {
        match self {
            FlowLayer::Planar(p) => p.dim(),
            FlowLayer::Radial(r) => r.dim(),
            FlowLayer::Nice(n) => n.dim(),
        }
    }

    pub fn num_params(&self) -> usize {
        match self {
            FlowLayer::Planar(p) => p.num_params(),
            FlowLayer::Radial(r) => r.num_params(),
            FlowLayer::Nice(n) => n.num_params(),
        }
    }

    pub fn type_name(&self) -> &'static str {
        match self {
            FlowLayer::Planar(_) => "planar",
            FlowLayer::Radial(_) => "radial",
            FlowLayer::Nice(_) => "nice",
        }
    }

    pub fn apply(&self, z: &[T]) -> Result<LayerStep<T>> {
        match self {
            FlowLayer::Planar(p) => p.apply(z),
            FlowLayer::Radial(r) => r.apply(z),
            FlowLayer::Nice(n) => n.apply(z),
        }
    }

    /// Inverse map; planar and radial layers solve a monotone scalar
    /// equation by bisection until its residual is within `tol`, NICE layers
    /// are exact.
    pub fn invert(&self, z_prime: &[T], tol: T) -> Result<Vec<T>> {
        match self {
            FlowLayer::Planar(p) => p.invert(z_prime, tol),
            FlowLayer::Radial(r) => r.invert(z_prime, tol),
            FlowLayer::Nice(n) => n.inverse(z_prime),
        }
    }

    fn consts(&self) -> LayerConsts<T> {
        match self {
            FlowLayer::Planar(p) => LayerConsts::Planar(p.consts()),
            FlowLayer::Radial(r) => LayerConsts::Radial(r.consts()),
            FlowLayer::Nice(_) => LayerConsts::Nice,
        }
    }

    fn forward_taped(&self, k: &LayerConsts<T>, z: Vec<T>) -> Result<(LayerStep<T>, LayerTape<T>)> {
        Ok(match (self, k) {
            (FlowLayer::Planar(p), LayerConsts::Planar(k)) => {
                let (s, t) = p.forward_taped(k, z)?;
                (s, LayerTape::Planar(t))
            }
            (FlowLayer::Radial(r), LayerConsts::Radial(k)) => {
                let (s, t) = r.forward_taped(k, z)?;
                (s, LayerTape::Radial(t))
            }
            (FlowLayer::Nice(n), _) => {
                let (s, t) = n.forward_taped(&z)?;
                (s, LayerTape::Nice(t))
            }
            _ => return Err(Error::StaleTape),
        })
    }

    fn backward(
        &self,
        k: &LayerConsts<T>,
        tape: &LayerTape<T>,
        g: &mut [T],
        gl: T,
        grad: &mut [T],
    ) -> Result<()> {
        match (self, k, tape) {
            (FlowLayer::Planar(p), LayerConsts::Planar(k), LayerTape::Planar(t)) => {
                p.backward(k, t, g, gl, grad)
            }
            (FlowLayer::Radial(r), LayerConsts::Radial(k), LayerTape::Radial(t)) => {
                r.backward(k, t, g, gl, grad)
            }
            (FlowLayer::Nice(n), _, LayerTape::Nice(t)) => {
                let gz_in = n.backward(t, g, grad)?;
                g.copy_from_slice(&gz_in);
            }
            _ => return Err(Error::StaleTape),
        }
        Ok(())
    }

    pub fn write_params(&self, out: &mut Vec<T>) {
        match self {
            FlowLayer::Planar(p) => p.write_params(out),
            FlowLayer::Radial(r) => r.write_params(out),
            FlowLayer::Nice(n) => n.write_params(out),
        }
    }

    pub fn read_params(&mut self, flat: &[T]) -> Result<usize> {
        if flat.len() < self.num_params() {
            return Err(Error::Dimension {
                expected: self.num_params(),
                got: flat.len(),
            });
        }
        Ok(match self {
            FlowLayer::Planar(p) => p.read_params(flat),
            FlowLayer::Radial(r) => r.read_params(flat),
            FlowLayer::Nice(n) => n.read_params(flat)?,
        })
    }
}

/// Forward record of a whole flow, consumed by [`FlowStack::backward`].
#[derive(Clone, Debug)]
pub struct FlowTape<T> {
    fingerprint: u64,
    layers: Vec<LayerTape<T>>,
}

#[derive(Clone, Debug)]
pub struct FlowResult<T> {
    pub z_out: Vec<T>,
    pub sum_logdet: T,
    /// Indices of layers whose Jacobian determinant was below [`NEAR_SINGULAR`].
    pub near_singular: Vec<usize>,
    pub tape: FlowTape<T>,
}

/// Composition `f_K ∘ … ∘ f_1`. An empty stack is the identity.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowStack<T> {
    dim: usize,
    layers: Vec<FlowLayer<T>>,
    /// Hash of the parameters and per-layer constants, refreshed on every
    /// mutation.
    fp: u64,
    consts: Vec<LayerConsts<T>>,
}

impl<T: Real> FlowStack<T> {
    pub fn new(dim: usize, layers: Vec<FlowLayer<T>>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("flow dimension must be >= 1".into()));
        }
        for l in &layers {
            check_dim(dim, l.dim())?;
        }
        let mut stack = Self {
            dim,
            layers,
            fp: 0,
            consts: Vec::new(),
        };
        stack.refresh();
        Ok(stack)
    }

    pub fn identity(dim: usize) -> Self {
        let mut stack = Self {
            dim,
            layers: Vec::new(),
            fp: 0,
            consts: Vec::new(),
        };
        stack.refresh();
        stack
    }

    /// `k` layers of `family` with raw parameters `N(0, scale²)`; NICE layers
    /// draw a fresh mixer each and a `hidden`-unit tanh coupling net.
    pub fn random(
        family: FlowFamily,
        dim: usize,
        k: usize,
        scale: f64,
        hidden: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        let mut layers = Vec::with_capacity(k);
        let draw = |n: usize, rng: &mut Rng| -> Vec<T> {
            (0..n).map(|_| T::lit(scale * rng.normal())).collect()
        };
        for _ in 0..k {
            let layer = match family {
                FlowFamily::Planar => {
                    let u = draw(dim, rng);
                    let w = draw(dim, rng);
                    let b = draw(1, rng)[0];
                    FlowLayer::Planar(Planar::new(u, w, b)?)
                }
                FlowFamily::Radial => {
                    let z0 = draw(dim, rng);
                    let p = draw(2, rng);
                    FlowLayer::Radial(Radial::new(z0, p[0], p[1])?)
                }
                FlowFamily::NicePerm | FlowFamily::NiceOrth => {
                    let kind = family.mixer_kind().expect("nice family");
                    FlowLayer::Nice(NiceCoupling::random(dim, hidden, kind, scale, rng)?)
                }
            };
            layers.push(layer);
        }
        Self::new(dim, layers)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn layers(&self) -> &[FlowLayer<T>] {
        &self.layers
    }

    pub fn push(&mut self, layer: FlowLayer<T>) -> Result<()> {
        check_dim(self.dim, layer.dim())?;
        self.layers.push(layer);
        self.refresh();
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(FlowLayer::num_params).sum()
    }

    /// Layers in stack order, fields in declaration order.
    pub fn params(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            l.write_params(&mut out);
        }
        out
    }

    pub fn set_params(&mut self, flat: &[T]) -> Result<()> {
        check_dim(self.num_params(), flat.len())?;
        let mut at = 0;
        for l in &mut self.layers {
            at += l.read_params(&flat[at..])?;
        }
        self.refresh();
        Ok(())
    }

    fn refresh(&mut self) {
        self.fp = fingerprint(
            self.params()
                .into_iter()
                .chain(std::iter::once(T::count(self.len()))),
        );
        self.consts = self.layers.iter().map(FlowLayer::consts).collect();
    }

    pub fn forward(&self, z0: &[T]) -> Result<FlowResult<T>> {
        check_dim(self.dim, z0.len())?;
        let mut z = z0.to_vec();
        let mut sum = T::zero();
        let mut tapes = Vec::with_capacity(self.layers.len());
        let mut near_singular = Vec::new();
        for (k, layer) in self.layers.iter().enumerate() {
            let (step, tape) = layer.forward_taped(&self.consts[k], z)?;
            if step.near_singular {
                near_singular.push(k);
            }
            sum += step.logdet;
            z = step.z_out;
            tapes.push(tape);
        }
        if !sum.is_finite() || z.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "flow forward pass".into(),
                sample: None,
            });
        }
        Ok(FlowResult {
            z_out: z,
            sum_logdet: sum,
            near_singular,
            tape: FlowTape {
                fingerprint: self.fp,
                layers: tapes,
            },
        })
    }

    /// Reverse-mode gradient of `gzᵀ z_K + gl · Σ logdet` with respect to
    /// `z_0` and the flat parameters (through the û and β̂ reparameterizations).
    pub fn backward(&self, tape: &FlowTape<T>, gz: &[T], gl: T) -> Result<(Vec<T>, Vec<T>)> {
        let mut grad = vec![T::zero(); self.num_params()];
        let gz0 = self.backward_into(tape, gz, gl, &mut grad)?;
        Ok((gz0, grad))
    }

    /// As [`FlowStack::backward`], accumulating into `grad`.
    pub fn backward_into(
        &self,
        tape: &FlowTape<T>,
        gz: &[T],
        gl: T,
        grad: &mut [T],
    ) -> Result<Vec<T>> {
        check_dim(self.dim, gz.len())?;
        check_dim(self.num_params(), grad.len())?;
        if tape.layers.len() != self.layers.len() || tape.fingerprint != self.fp {
            return Err(Error::StaleTape);
        }
        let mut g = gz.to_vec();
        let mut end = grad.len();
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            let start = end - layer.num_params();
            layer.backward(
                &self.consts[k],
                &tape.layers[k],
                &mut g,
                gl,
                &mut grad[start..end],
            )?;
            end = start;
        }
        Ok(g)
    }

    /// Pulls `z_K` back to `z_0`, returning `(z_0, Σ logdet)` so that
    /// `ln q_K(z_K) = ln q_0(z_0) - Σ logdet`.
    pub fn inverse(&self, z_k: &[T], tol: T) -> Result<(Vec<T>, T)> {
        check_dim(self.dim, z_k.len())?;
        let mut z = z_k.to_vec();
        let mut sum = T::zero();
        for layer in self.layers.iter().rev() {
            let prev = layer.invert(&z, tol)?;
            sum += layer.apply(&prev)?.logdet;
            z = prev;
        }
        Ok((z, sum))
    }

    pub fn to_records(&self) -> Vec<LayerRecord> {
        self.layers.iter().map(LayerRecord::from_layer).collect()
    }

    pub fn from_records(dim: usize, records: &[LayerRecord]) -> Result<Self> {
        let layers = records
            .iter()
            .map(LayerRecord::to_layer)
            .collect::<Result<Vec<_>>>()?;
        Self::new(dim, layers)
    }
}

/// JSON form of one layer: `{type, d, params}` with the flat parameters in
/// flattening order, plus the fixed structure of a coupling layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    #[serde(rename = "type")]
    pub kind: String,
    pub d: usize,
    #[serde(serialize_with = "crate::json::ser_f64_vec")]
    pub params: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coupling: Option<CouplingRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplingRecord {
    pub mask: Vec<bool>,
    /// `(rows, cols)` of every dense layer of the coupling net.
    pub shapes: Vec<(usize, usize)>,
    pub activation: Activation,
    pub mixer: Option<MixerRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum MixerRecord {
    Permutation {
        perm: Vec<usize>,
    },
    Orthogonal {
        #[serde(serialize_with = "crate::json::ser_f64_vec")]
        matrix: Vec<f64>,
    },
}

impl LayerRecord {
    pub fn from_layer<T: Real>(layer: &FlowLayer<T>) -> Self {
        let mut params = Vec::new();
        layer.write_params(&mut params);
        let coupling = match layer {
            FlowLayer::Nice(n) => Some(CouplingRecord {
                mask: n.mask().to_vec(),
                shapes: n
                    .net()
                    .layers()
                    .iter()
                    .map(|l| (l.out_dim(), l.in_dim()))
                    .collect(),
                activation: n.net().activation(),
                mixer: n.mixer().map(|m| match m {
                    Mixer::Permutation(p) => MixerRecord::Permutation { perm: p.clone() },
                    Mixer::Orthogonal(q) => MixerRecord::Orthogonal {
                        matrix: q.as_slice().iter().map(|v| v.as_f64()).collect(),
                    },
                }),
            }),
            _ => None,
        };
        Self {
            kind: layer.type_name().into(),
            d: layer.dim(),
            params: params.into_iter().map(Real::as_f64).collect(),
            coupling,
        }
    }

    pub fn to_layer<T: Real>(&self) -> Result<FlowLayer<T>> {
        let d = self.d;
        let p: Vec<T> = self.params.iter().map(|&v| T::lit(v)).collect();
        let mut layer = match self.kind.as_str() {
            "planar" => FlowLayer::Planar(Planar::identity(d)),
            "radial" => FlowLayer::Radial(Radial::new(vec![T::zero(); d], T::zero(), T::zero())?),
            "nice" => {
                let c = self.coupling.as_ref().ok_or_else(|| {
                    Error::Data("nice layer record without coupling structure".into())
                })?;
                let layers = c
                    .shapes
                    .iter()
                    .map(|&(r, cols)| Dense::new(Mat::zeros(r, cols), vec![T::zero(); r]))
                    .collect::<Result<Vec<_>>>()?;
                let mixer =
                    match &c.mixer {
                        None => None,
                        Some(MixerRecord::Permutation { perm }) => {
                            Some(Mixer::Permutation(perm.clone()))
                        }
                        Some(MixerRecord::Orthogonal { matrix }) => Some(Mixer::Orthogonal(
                            Mat::new(d, d, matrix.iter().map(|&v| T::lit(v)).collect())?,
                        )),
                    };
                FlowLayer::Nice(NiceCoupling::new(
                    c.mask.clone(),
                    Mlp::new(layers, c.activation)?,
                    mixer,
                )?)
            }
            other => return Err(Error::Data(format!("unknown layer type {other:?}"))),
        };
        check_dim(layer.num_params(), p.len())?;
        layer.read_params(&p)?;
        Ok(layer)
    }
}
