use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{positional_encode, Activation, EncodingSpec, Mlp};
use crate::diffcore::{Graph, ParamId, ParamSet, Var};
use crate::error::Result;

/// Hidden-layer widths of every head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeadWidths {
    pub mask: Vec<usize>,
    pub view: Vec<usize>,
    pub color: Vec<usize>,
    pub flow: Vec<usize>,
}

impl Default for HeadWidths {
    fn default() -> Self {
        Self {
            mask: vec![64, 64],
            view: vec![32, 32],
            color: vec![64, 64, 64],
            flow: vec![96, 96, 96, 96],
        }
    }
}

fn widths(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut w = vec![input];
    w.extend_from_slice(hidden);
    w.push(output);
    w
}

/// Dynamic probability from separation-field features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeparationHead {
    pub mlp: Mlp,
}

impl SeparationHead {
    pub fn new(params: &mut ParamSet, feature_dim: usize, hidden: &[usize], rng: &mut impl Rng) -> Result<Self> {
        let mlp = Mlp::new(params, "mask", &widths(feature_dim, hidden, 1), Activation::Sigmoid, 1.0, rng)?;
        Ok(Self { mlp })
    }

    /// `[M, F]` features to `[M, 1]` probabilities.
    pub fn prob(&self, g: &mut Graph<'_>, features: Var) -> Var {
        self.mlp.forward(g, features)
    }

    pub fn prob_plain(&self, params: &ParamSet, features: &[f64], rows: usize) -> Vec<f64> {
        self.mlp.eval(params, features, rows)
    }
}

/// View branch plus color network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColorHead {
    pub position: EncodingSpec,
    pub direction: EncodingSpec,
    pub view: Mlp,
    pub color: Mlp,
}

impl ColorHead {
    pub fn new(
        params: &mut ParamSet,
        app_dim: usize,
        position: EncodingSpec,
        direction: EncodingSpec,
        w: &HeadWidths,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let view_out = *w.view.last().unwrap_or(&16);
        let view_hidden = &w.view[..w.view.len().saturating_sub(1)];
        let view = Mlp::new(
            params,
            "view",
            &widths(direction.output_dim(3), view_hidden, view_out),
            Activation::Relu,
            1.0,
            rng,
        )?;
        let input = position.output_dim(3) + view_out + app_dim;
        let color = Mlp::new(params, "color", &widths(input, &w.color, 3), Activation::Sigmoid, 1.0, rng)?;
        Ok(Self {
            position,
            direction,
            view,
            color,
        })
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = self.view.param_ids();
        ids.extend(self.color.param_ids());
        ids
    }

    /// `[B, 3]` unit directions to `[B, V]` view features.
    pub fn view_features(&self, g: &mut Graph<'_>, dirs: Var) -> Var {
        let e = positional_encode(g, dirs, self.direction);
        self.view.forward(g, e)
    }

    /// Colors for `[M, 3]` contracted positions with matching view
    /// features and appearance features.
    pub fn color(&self, g: &mut Graph<'_>, x: Var, view: Var, app: Var) -> Var {
        let e = positional_encode(g, x, self.position);
        let input = g.concat_cols(&[e, view, app]);
        self.color.forward(g, input)
    }
}

/// Forward and backward scene-flow networks over world positions and time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowHead {
    pub position: EncodingSpec,
    pub time: EncodingSpec,
    pub forward: Mlp,
    pub backward: Mlp,
}

impl FlowHead {
    pub fn new(
        params: &mut ParamSet,
        position: EncodingSpec,
        time: EncodingSpec,
        hidden: &[usize],
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let input = 3 + position.output_dim(3) + 1 + time.output_dim(1);
        let w = widths(input, hidden, 3);
        let forward = Mlp::new(params, "flow_fw", &w, Activation::Identity, 0.1, rng)?;
        let backward = Mlp::new(params, "flow_bw", &w, Activation::Identity, 0.1, rng)?;
        Ok(Self {
            position,
            time,
            forward,
            backward,
        })
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = self.forward.param_ids();
        ids.extend(self.backward.param_ids());
        ids
    }

    fn input(&self, g: &mut Graph<'_>, x: Var, t: Var) -> Var {
        let ex = positional_encode(g, x, self.position);
        let et = positional_encode(g, t, self.time);
        g.concat_cols(&[x, ex, t, et])
    }

    /// `fl_f` for `[M, 3]` positions and `[M, 1]` times.
    pub fn forward_flow(&self, g: &mut Graph<'_>, x: Var, t: Var) -> Var {
        let i = self.input(g, x, t);
        self.forward.forward(g, i)
    }

    pub fn backward_flow(&self, g: &mut Graph<'_>, x: Var, t: Var) -> Var {
        let i = self.input(g, x, t);
        self.backward.forward(g, i)
    }

    /// Both flows, sharing the encoded input.
    pub fn flows(&self, g: &mut Graph<'_>, x: Var, t: Var) -> (Var, Var) {
        let i = self.input(g, x, t);
        (self.forward.forward(g, i), self.backward.forward(g, i))
    }
}
