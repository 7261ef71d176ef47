//! Fully connected networks with maxout or tanh hidden units and an affine
//! output layer, with a hand-written reverse pass.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::math::{Mat, Rng};
use crate::scalar::{fingerprint, Real};

/// Hidden-layer nonlinearity. The output layer is always affine.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Activation {
    /// Max over consecutive, non-overlapping windows `[Δk, Δ(k+1))`.
    Maxout {
        window: usize,
    },
    Tanh,
    Identity,
}

impl Activation {
    fn shrink(self) -> usize {
        match self {
            Activation::Maxout { window } => window,
            _ => 1,
        }
    }
}

/// Affine map `y = W x + b` with `W` stored `out × in`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense<T> {
    pub weight: Mat<T>,
    pub bias: Vec<T>,
}

impl<T: Real> Dense<T> {
    pub fn new(weight: Mat<T>, bias: Vec<T>) -> Result<Self> {
        check_dim(weight.rows(), bias.len())?;
        Ok(Self { weight, bias })
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<T> {
    layers: Vec<Dense<T>>,
    activation: Activation,
    /// Hash of the parameters, refreshed on every mutation.
    fp: u64,
}

#[derive(Clone, Debug)]
enum ActTape<T> {
    Maxout { argmax: Vec<usize>, gap: T },
    Tanh { out: Vec<T> },
    Identity,
}

/// Forward record consumed by [`Mlp::backward`].
#[derive(Clone, Debug)]
pub struct MlpTape<T> {
    fingerprint: u64,
    inputs: Vec<Vec<T>>,
    acts: Vec<ActTape<T>>,
}

impl<T: Real> MlpTape<T> {
    /// Smallest winner-minus-runner-up margin over every maxout window in the
    /// pass; `None` when the network has no maxout units.
    pub fn min_maxout_gap(&self) -> Option<T> {
        self.acts
            .iter()
            .filter_map(|a| match a {
                ActTape::Maxout { gap, .. } => Some(*gap),
                _ => None,
            })
            .reduce(T::min)
    }
}

impl<T: Real> Mlp<T> {
    pub fn new(layers: Vec<Dense<T>>, activation: Activation) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument(
                "an MLP needs at least one layer".into(),
            ));
        }
        if let Activation::Maxout { window } = activation {
            if window == 0 {
                return Err(Error::InvalidArgument("maxout window must be >= 1".into()));
            }
        }
        let shrink = activation.shrink();
        for pair in layers.windows(2) {
            let pre = pair[0].out_dim();
            if pre % shrink != 0 {
                return Err(Error::InvalidArgument(format!(
                    "pre-activation width {pre} not divisible by maxout window {shrink}"
                )));
            }
            check_dim(pre / shrink, pair[1].in_dim())?;
        }
        let mut mlp = Self {
            layers,
            activation,
            fp: 0,
        };
        mlp.fp = mlp.compute_fingerprint();
        Ok(mlp)
    }

    /// Random network with weights `N(0, gain² · 2 / fan_in)` and zero biases.
    /// `hidden` lists post-activation widths; a maxout layer has `window`
    /// times as many pre-activations.
    pub fn init(
        input: usize,
        hidden: &[usize],
        output: usize,
        activation: Activation,
        gain: f64,
        rng: &mut Rng,
    ) -> Result<Self> {
        let shrink = activation.shrink();
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut fan_in = input;
        for &width in hidden.iter().chain(std::iter::once(&output)) {
            let is_output = layers.len() == hidden.len();
            let rows = if is_output { width } else { width * shrink };
            let std = gain * (2.0 / fan_in as f64).sqrt();
            let w: Vec<T> = (0..rows * fan_in)
                .map(|_| T::lit(std * rng.normal()))
                .collect();
            layers.push(Dense::new(
                Mat::new(rows, fan_in, w)?,
                vec![T::zero(); rows],
            )?);
            fan_in = width;
        }
        Self::new(layers, activation)
    }

    pub fn layers(&self) -> &[Dense<T>] {
        &self.layers
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.as_slice().len() + l.bias.len())
            .sum()
    }

    /// Flat parameters: per layer, weights row-major then bias.
    pub fn params(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.num_params());
        self.write_params(&mut out);
        out
    }

    pub fn write_params(&self, out: &mut Vec<T>) {
        for l in &self.layers {
            out.extend_from_slice(l.weight.as_slice());
            out.extend_from_slice(&l.bias);
        }
    }

    /// Reads parameters in [`Mlp::params`] order, returning how many were used.
    pub fn read_params(&mut self, flat: &[T]) -> Result<usize> {
        if flat.len() < self.num_params() {
            return Err(Error::Dimension {
                expected: self.num_params(),
                got: flat.len(),
            });
        }
        let mut at = 0;
        for l in &mut self.layers {
            let n = l.weight.as_slice().len();
            l.weight.as_mut_slice().copy_from_slice(&flat[at..at + n]);
            at += n;
            let m = l.bias.len();
            l.bias.copy_from_slice(&flat[at..at + m]);
            at += m;
        }
        self.fp = self.compute_fingerprint();
        Ok(at)
    }

    pub fn set_params(&mut self, flat: &[T]) -> Result<()> {
        check_dim(self.num_params(), flat.len())?;
        self.read_params(flat).map(|_| ())
    }

    fn compute_fingerprint(&self) -> u64 {
        fingerprint(
            self.layers
                .iter()
                .flat_map(|l| l.weight.as_slice().iter().chain(&l.bias).copied()),
        )
    }

    pub fn forward(&self, x: &[T]) -> Result<(Vec<T>, MlpTape<T>)> {
        check_dim(self.input_dim(), x.len())?;
        let n = self.layers.len();
        let mut inputs = Vec::with_capacity(n);
        let mut acts = Vec::with_capacity(n - 1);
        let mut h = x.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut pre = layer.weight.matvec(&h);
            for (p, &b) in pre.iter_mut().zip(&layer.bias) {
                *p += b;
            }
            inputs.push(h);
            if i + 1 == n {
                h = pre;
                break;
            }
            h = match self.activation {
                Activation::Maxout { window } => {
                    let k = pre.len() / window;
                    let mut out = Vec::with_capacity(k);
                    let mut argmax = Vec::with_capacity(k);
                    let mut gap = T::infinity();
                    for chunk in 0..k {
                        let win = &pre[chunk * window..(chunk + 1) * window];
                        // lowest index wins ties
                        let mut best = 0;
                        for j in 1..window {
                            if win[j] > win[best] {
                                best = j;
                            }
                        }
                        for (j, &v) in win.iter().enumerate() {
                            if j != best {
                                gap = gap.min(win[best] - v);
                            }
                        }
                        out.push(win[best]);
                        argmax.push(chunk * window + best);
                    }
                    acts.push(ActTape::Maxout { argmax, gap });
                    out
                }
                Activation::Tanh => {
                    let out: Vec<T> = pre.iter().map(|v| v.tanh()).collect();
                    acts.push(ActTape::Tanh { out: out.clone() });
                    out
                }
                Activation::Identity => {
                    acts.push(ActTape::Identity);
                    pre
                }
            };
        }
        Ok((
            h,
            MlpTape {
                fingerprint: self.fp,
                inputs,
                acts,
            },
        ))
    }

    pub fn eval(&self, x: &[T]) -> Result<Vec<T>> {
        self.forward(x).map(|(y, _)| y)
    }

    /// Reverse pass. Returns `dL/dx` and the flat parameter gradient.
    pub fn backward(&self, tape: &MlpTape<T>, dy: &[T]) -> Result<(Vec<T>, Vec<T>)> {
        let mut grad = vec![T::zero(); self.num_params()];
        let dx = self.backward_into(tape, dy, &mut grad)?;
        Ok((dx, grad))
    }

    /// Reverse pass accumulating (`+=`) the parameter gradient into `grad`.
    pub fn backward_into(&self, tape: &MlpTape<T>, dy: &[T], grad: &mut [T]) -> Result<Vec<T>> {
        check_dim(self.num_params(), grad.len())?;
        check_dim(self.output_dim(), dy.len())?;
        if tape.fingerprint != self.fp || tape.inputs.len() != self.layers.len() {
            return Err(Error::StaleTape);
        }
        // parameter offset of each layer
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut at = 0;
        for l in &self.layers {
            offsets.push(at);
            at += l.weight.as_slice().len() + l.bias.len();
        }
        let mut g = dy.to_vec();
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            let x = &tape.inputs[i];
            let (cols, rows) = (layer.in_dim(), layer.out_dim());
            let base = offsets[i];
            for r in 0..rows {
                let gr = g[r];
                if gr == T::zero() {
                    continue;
                }
                let row = &mut grad[base + r * cols..base + (r + 1) * cols];
                for (gw, &xi) in row.iter_mut().zip(x) {
                    *gw += gr * xi;
                }
                grad[base + rows * cols + r] += gr;
            }
            let gin = layer.weight.matvec_t(&g);
            if i == 0 {
                return Ok(gin);
            }
            // undo the activation that produced this layer's input
            g = match &tape.acts[i - 1] {
                ActTape::Maxout { argmax, .. } => {
                    let mut pre = vec![T::zero(); self.layers[i - 1].out_dim()];
                    for (&idx, &gv) in argmax.iter().zip(&gin) {
                        pre[idx] = gv;
                    }
                    pre
                }
                ActTape::Tanh { out } => gin
                    .iter()
                    .zip(out)
                    .map(|(&gv, &o)| gv * (T::one() - o * o))
                    .collect(),
                ActTape::Identity => gin,
            };
        }
        unreachable!("loop returns at the first layer")
    }
}
