//! Positional encoding, a small fully connected network, and the four heads
//! built from it.

mod heads;

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{gemm, sigmoid, BackwardCtx, CustomOp, Graph, ParamGroup, ParamId, ParamSet, Tensor, Var};
use crate::error::{Error, Result};

pub use heads::{ColorHead, FlowHead, HeadWidths, SeparationHead};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodingSpec {
    pub frequencies: usize,
    pub include_input: bool,
}

impl EncodingSpec {
    pub fn output_dim(&self, input_dim: usize) -> usize {
        input_dim * (2 * self.frequencies + usize::from(self.include_input))
    }

    /// `[x?, sin(2^0 pi x), cos(2^0 pi x), ..., sin(2^(L-1) pi x), cos(2^(L-1) pi x)]`,
    /// each block spanning every input component.
    pub fn encode(&self, x: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.output_dim(x.len()));
        if self.include_input {
            out.extend_from_slice(x);
        }
        for l in 0..self.frequencies {
            let a = PI * (1u64 << l) as f64;
            out.extend(x.iter().map(|v| (a * v).sin()));
            out.extend(x.iter().map(|v| (a * v).cos()));
        }
        out
    }
}

struct Encode {
    spec: EncodingSpec,
    dim: usize,
}

impl CustomOp for Encode {
    fn name(&self) -> &'static str {
        "positional_encode"
    }

    fn backward(&self, ctx: &BackwardCtx<'_>) -> Vec<Option<Vec<f64>>> {
        let (x, y, g) = (ctx.inputs[0], ctx.output, ctx.grad_output);
        let d = self.dim;
        let w = self.spec.output_dim(d);
        let mut dx = vec![0.0; x.len()];
        for m in 0..x.len() / d {
            let (gm, ym) = (&g[m * w..(m + 1) * w], &y[m * w..(m + 1) * w]);
            let mut off = 0;
            if self.spec.include_input {
                for k in 0..d {
                    dx[m * d + k] += gm[k];
                }
                off = d;
            }
            for l in 0..self.spec.frequencies {
                let a = PI * (1u64 << l) as f64;
                for k in 0..d {
                    let (s, c) = (ym[off + k], ym[off + d + k]);
                    dx[m * d + k] += a * (gm[off + k] * c - gm[off + d + k] * s);
                }
                off += 2 * d;
            }
        }
        vec![Some(dx)]
    }
}

/// Row-wise positional encoding of a `[M, D]` node.
pub fn positional_encode(g: &mut Graph<'_>, x: Var, spec: EncodingSpec) -> Var {
    let (m, d) = g.shape(x);
    let w = spec.output_dim(d);
    let xv = g.value(x);
    let mut out = Vec::with_capacity(m * w);
    for row in xv.chunks_exact(d.max(1)).take(m) {
        out.extend(spec.encode(row));
    }
    g.custom(&[x], m, w, out, Encode { spec, dim: d })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
}

impl Activation {
    fn apply_graph(self, g: &mut Graph<'_>, x: Var) -> Var {
        match self {
            Activation::Identity => x,
            Activation::Relu => g.relu(x),
            Activation::Sigmoid => g.sigmoid(x),
        }
    }

    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => sigmoid(x),
        }
    }
}

/// Fully connected network, ReLU between layers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    /// Input, hidden and output widths.
    pub widths: Vec<usize>,
    pub output: Activation,
    /// `(weight [in, out], bias [1, out])` per layer.
    pub layers: Vec<(ParamId, ParamId)>,
}

impl Mlp {
    /// Kaiming-uniform weights, zero biases. The last layer's bound is
    /// multiplied by `last_gain`.
    pub fn new(
        params: &mut ParamSet,
        name: &str,
        widths: &[usize],
        output: Activation,
        last_gain: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::invalid(format!("bad layer widths {widths:?}")));
        }
        let n = widths.len() - 1;
        let mut layers = Vec::with_capacity(n);
        for (l, w) in widths.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let mut bound = (6.0 / fan_in as f64).sqrt();
            if l + 1 == n {
                bound *= last_gain;
            }
            let data: Vec<f64> = (0..fan_in * fan_out)
                .map(|_| if bound > 0.0 { rng.random_range(-bound..bound) } else { 0.0 })
                .collect();
            let wid = params.add(format!("{name}.w{l}"), ParamGroup::Mlp, Tensor::param([fan_in, fan_out], data)?);
            let bid = params.add(
                format!("{name}.b{l}"),
                ParamGroup::Mlp,
                Tensor::param([1, fan_out], vec![0.0; fan_out])?,
            );
            layers.push((wid, bid));
        }
        Ok(Self {
            widths: widths.to_vec(),
            output,
            layers,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.layers.iter().flat_map(|&(w, b)| [w, b]).collect()
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Var {
        assert_eq!(g.cols(x), self.input_dim(), "mlp input width");
        let mut h = x;
        for (l, &(w, b)) in self.layers.iter().enumerate() {
            let (wv, bv) = (g.param(w), g.param(b));
            h = g.linear(h, wv, bv);
            h = if l + 1 == self.layers.len() {
                self.output.apply_graph(g, h)
            } else {
                g.relu(h)
            };
        }
        h
    }

    /// Tape-free forward pass over `rows` stacked inputs.
    pub fn eval(&self, params: &ParamSet, x: &[f64], rows: usize) -> Vec<f64> {
        assert_eq!(x.len(), rows * self.input_dim(), "mlp input size");
        let mut h = x.to_vec();
        for (l, &(w, b)) in self.layers.iter().enumerate() {
            let (fan_in, fan_out) = (self.widths[l], self.widths[l + 1]);
            let bias = params.get(b).data();
            let mut out = vec![0.0; rows * fan_out];
            gemm(
                rows,
                fan_in,
                fan_out,
                &h,
                fan_in as isize,
                1,
                params.get(w).data(),
                fan_out as isize,
                1,
                &mut out,
            );
            let act = if l + 1 == self.layers.len() {
                self.output
            } else {
                Activation::Relu
            };
            for row in out.chunks_exact_mut(fan_out) {
                for (v, b) in row.iter_mut().zip(bias) {
                    *v = act.apply(*v + b);
                }
            }
            h = out;
        }
        h
    }

    /// Zero the final layer so the network starts at a constant output.
    pub fn zero_last_layer(&self, params: &mut ParamSet) {
        let &(w, b) = self.layers.last().unwrap();
        params.get_mut(w).data_mut().fill(0.0);
        params.get_mut(b).data_mut().fill(0.0);
    }
}
