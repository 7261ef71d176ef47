use std::borrow::Cow;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::flows::FlowStack;
use crate::models::amortized::{DecoderTape, InferenceTape};
use crate::models::density::std_normal_logpdf;
use crate::models::energy::box_wall;
use crate::models::{
    Decoder, DiagGaussian, EnergyFunction, InferenceNet, LinearGaussian, Potential, Quadratic,
};

/// The unnormalized log density `ln p(x, z)` being approximated.
#[derive(Clone, Debug, PartialEq)]
pub enum Target {
    /// `ln p(z) = -U(z) - wall(z)` for a test energy confined to the
    /// `(-4, 4)²` box.
    Energy(EnergyFunction),
    /// `ln p(z) = -½‖z‖²`.
    Quadratic,
    LinearGaussian(LinearGaussian),
    /// Standard-normal prior and a learned decoder.
    Decoder(Decoder<f64>),
}

pub(crate) enum TargetTape {
    Closed(Vec<f64>),
    Decoder(DecoderTape<f64>),
}

impl Target {
    pub fn num_params(&self) -> usize {
        match self {
            Target::Decoder(d) => d.num_params(),
            _ => 0,
        }
    }

    pub fn needs_data(&self) -> bool {
        matches!(self, Target::Decoder(_))
    }

    /// The unconfined potential of an energy target.
    pub fn potential(&self) -> Option<&dyn Potential<f64>> {
        match self {
            Target::Energy(e) => Some(e),
            Target::Quadratic => Some(&Quadratic),
            _ => None,
        }
    }

    /// `ln p(x, z)` for a data-free target.
    pub fn log_density(&self, z: &[f64]) -> Result<f64> {
        self.log_joint(None, z).map(|(v, _)| v)
    }

    pub(crate) fn log_joint(&self, x: Option<&[f64]>, z: &[f64]) -> Result<(f64, TargetTape)> {
        match self {
            Target::Energy(_) | Target::Quadratic => {
                let p = self.potential().expect("potential target");
                let mut u = p.energy(z);
                let mut g = p.energy_grad(z);
                if let Target::Energy(_) = self {
                    check_dim(2, z.len())?;
                    let (wall, gw) = box_wall(z);
                    u += wall;
                    for (a, b) in g.iter_mut().zip(gw) {
                        *a += b;
                    }
                }
                Ok((-u, TargetTape::Closed(g.into_iter().map(|v| -v).collect())))
            }
            Target::LinearGaussian(m) => {
                check_dim(m.latent_dim(), z.len())?;
                Ok((m.log_joint(z), TargetTape::Closed(m.log_joint_grad(z))))
            }
            Target::Decoder(dec) => {
                let x = x.ok_or_else(|| {
                    Error::InvalidArgument("decoder target needs a datapoint".into())
                })?;
                let (ll, tape) = dec.forward(z, x)?;
                Ok((ll + std_normal_logpdf(z), TargetTape::Decoder(tape)))
            }
        }
    }

    /// Adds `scale · ∂ ln p / ∂θ` into `grad` and returns `scale · ∂ ln p / ∂z`.
    pub(crate) fn log_joint_backward(
        &self,
        tape: &TargetTape,
        x: Option<&[f64]>,
        z: &[f64],
        scale: f64,
        grad: &mut [f64],
    ) -> Result<Vec<f64>> {
        match (self, tape) {
            (Target::Decoder(dec), TargetTape::Decoder(t)) => {
                let x = x.ok_or_else(|| {
                    Error::InvalidArgument("decoder target needs a datapoint".into())
                })?;
                let mut gz = dec.backward_into(t, x, scale, grad)?;
                for (g, &zi) in gz.iter_mut().zip(z) {
                    *g -= scale * zi;
                }
                Ok(gz)
            }
            (_, TargetTape::Closed(g)) => Ok(g.iter().map(|v| scale * v).collect()),
            _ => Err(Error::StaleTape),
        }
    }

    fn write_params(&self, out: &mut Vec<f64>) {
        if let Target::Decoder(d) = self {
            d.write_params(out);
        }
    }

    fn read_params(&mut self, flat: &[f64]) -> Result<usize> {
        match self {
            Target::Decoder(d) => d.read_params(flat),
            _ => Ok(0),
        }
    }
}

/// Variational family: free `(μ, log σ, flow)` or amortized by an inference net.
#[derive(Clone, Debug, PartialEq)]
pub enum Variational {
    Free {
        q0: DiagGaussian<f64>,
        flow: FlowStack<f64>,
    },
    Amortized(InferenceNet<f64>),
}

pub(crate) struct Posterior<'a> {
    pub q0: Cow<'a, DiagGaussian<f64>>,
    pub flow: Cow<'a, FlowStack<f64>>,
    pub tape: Option<InferenceTape<f64>>,
}

impl Variational {
    pub fn latent_dim(&self) -> usize {
        match self {
            Variational::Free { q0, .. } => q0.dim(),
            Variational::Amortized(n) => n.latent_dim(),
        }
    }

    pub fn num_params(&self) -> usize {
        match self {
            Variational::Free { q0, flow } => 2 * q0.dim() + flow.num_params(),
            Variational::Amortized(n) => n.num_params(),
        }
    }

    fn write_params(&self, out: &mut Vec<f64>) {
        match self {
            Variational::Free { q0, flow } => {
                out.extend_from_slice(&q0.mu);
                out.extend_from_slice(&q0.log_sigma);
                out.extend(flow.params());
            }
            Variational::Amortized(n) => n.write_params(out),
        }
    }

    fn read_params(&mut self, flat: &[f64]) -> Result<usize> {
        match self {
            Variational::Free { q0, flow } => {
                let d = q0.dim();
                let n = 2 * d + flow.num_params();
                if flat.len() < n {
                    return Err(Error::Dimension {
                        expected: n,
                        got: flat.len(),
                    });
                }
                q0.mu.copy_from_slice(&flat[..d]);
                q0.log_sigma.copy_from_slice(&flat[d..2 * d]);
                flow.set_params(&flat[2 * d..n])?;
                Ok(n)
            }
            Variational::Amortized(net) => net.read_params(flat),
        }
    }

    pub(crate) fn posterior(&self, x: Option<&[f64]>) -> Result<Posterior<'_>> {
        match self {
            Variational::Free { q0, flow } => Ok(Posterior {
                q0: Cow::Borrowed(q0),
                flow: Cow::Borrowed(flow),
                tape: None,
            }),
            Variational::Amortized(net) => {
                let x = x.ok_or_else(|| {
                    Error::InvalidArgument("inference network needs a datapoint".into())
                })?;
                let (q0, flow, tape) = net.forward(x)?;
                Ok(Posterior {
                    q0: Cow::Owned(q0),
                    flow,
                    tape: Some(tape),
                })
            }
        }
    }

    /// Accumulates gradients with respect to `μ`, `log σ` and the flow
    /// parameters into `grad` (laid out as this family's parameters).
    pub(crate) fn backward_into(
        &self,
        post: &Posterior<'_>,
        g_mu: &[f64],
        g_log_sigma: &[f64],
        g_flow: &[f64],
        grad: &mut [f64],
    ) -> Result<()> {
        match (self, &post.tape) {
            (Variational::Free { .. }, _) => {
                let d = g_mu.len();
                let parts = [g_mu, g_log_sigma, g_flow];
                let mut at = 0;
                for part in parts {
                    for (g, &v) in grad[at..at + part.len()].iter_mut().zip(part) {
                        *g += v;
                    }
                    at += part.len();
                }
                debug_assert_eq!(at, 2 * d + g_flow.len());
                Ok(())
            }
            (Variational::Amortized(net), Some(tape)) => {
                net.backward_into(tape, g_mu, g_log_sigma, g_flow, grad)
            }
            (Variational::Amortized(_), None) => Err(Error::StaleTape),
        }
    }
}

/// One contiguous block of the flat parameter vector.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

/// Names and locations of the parameter blocks; spans tile `0..total`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Registry {
    pub spans: Vec<Span>,
}

impl Registry {
    fn build(blocks: &[(&str, usize)]) -> Self {
        let mut at = 0;
        let spans = blocks
            .iter()
            .filter(|(_, len)| *len > 0)
            .map(|&(name, len)| {
                let s = Span {
                    name: name.to_string(),
                    offset: at,
                    len,
                };
                at += len;
                s
            })
            .collect();
        Self { spans }
    }

    pub fn total(&self) -> usize {
        self.spans.last().map_or(0, |s| s.offset + s.len)
    }

    pub fn get(&self, name: &str) -> Option<&Span> {
        self.spans.iter().find(|s| s.name == name)
    }

    /// Whether the spans are contiguous, start at zero and cover `n` entries.
    pub fn partitions(&self, n: usize) -> bool {
        let mut at = 0;
        for s in &self.spans {
            if s.offset != at {
                return false;
            }
            at += s.len;
        }
        at == n
    }
}

/// Generative target plus variational posterior. Flat parameters are the
/// target's (θ) followed by the variational family's (φ).
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub target: Target,
    pub variational: Variational,
}

impl Model {
    pub fn new(target: Target, variational: Variational) -> Result<Self> {
        match (&target, &variational) {
            (Target::Decoder(dec), Variational::Amortized(net)) => {
                check_dim(dec.latent_dim(), net.latent_dim())?;
                check_dim(dec.data_dim(), net.data_dim())?;
            }
            (Target::Decoder(_), _) | (_, Variational::Amortized(_)) => {
                return Err(Error::InvalidArgument(
                    "a decoder target pairs with an inference network and vice versa".into(),
                ))
            }
            (Target::Energy(_), v) => check_dim(2, v.latent_dim())?,
            (Target::LinearGaussian(m), v) => check_dim(m.latent_dim(), v.latent_dim())?,
            (Target::Quadratic, _) => {}
        }
        Ok(Self {
            target,
            variational,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.variational.latent_dim()
    }

    pub fn num_params(&self) -> usize {
        self.target.num_params() + self.variational.num_params()
    }

    pub fn registry(&self) -> Registry {
        match (&self.target, &self.variational) {
            (_, Variational::Free { q0, flow }) => Registry::build(&[
                ("q0.mu", q0.dim()),
                ("q0.log_sigma", q0.dim()),
                ("flow", flow.num_params()),
            ]),
            (target, Variational::Amortized(net)) => Registry::build(&[
                ("decoder", target.num_params()),
                ("encoder", net.net().num_params()),
                ("flow", net.num_params() - net.net().num_params()),
            ]),
        }
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        self.target.write_params(&mut out);
        self.variational.write_params(&mut out);
        out
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        check_dim(self.num_params(), flat.len())?;
        let n = self.target.read_params(flat)?;
        self.variational.read_params(&flat[n..])?;
        Ok(())
    }
}
