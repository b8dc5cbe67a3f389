use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Axis, FeaturePlane, FeatureVector, FieldPurpose, Init};
use crate::diffcore::{Graph, ParamId, ParamSet, Var};
use crate::error::Result;

const TRIPLES: [(Axis, (Axis, Axis)); 3] = [
    (Axis::X, (Axis::Y, Axis::Z)),
    (Axis::Y, (Axis::X, Axis::Z)),
    (Axis::Z, (Axis::X, Axis::Y)),
];

/// Vector-matrix factored static field: three line/plane products over
/// complementary axes, `3 * rank` features per point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VmField {
    pub purpose: FieldPurpose,
    pub rank: usize,
    pub resolution: usize,
    pub triples: Vec<(FeatureVector, FeaturePlane)>,
}

impl VmField {
    pub fn new(
        params: &mut ParamSet,
        name: &str,
        purpose: FieldPurpose,
        rank: usize,
        resolution: usize,
        line: Init,
        plane: Init,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let n = resolution;
        let mut triples = Vec::with_capacity(3);
        for (axis, axes) in TRIPLES {
            let v = FeatureVector::new(params, format!("{name}.{axis:?}"), axis, n, rank, line.fill(n * rank, rng))?;
            let m = FeaturePlane::new(
                params,
                format!("{name}.{:?}{:?}", axes.0, axes.1),
                axes,
                n,
                n,
                rank,
                plane.fill(n * n * rank, rng),
            )?;
            triples.push((v, m));
        }
        Ok(Self {
            purpose,
            rank,
            resolution,
            triples,
        })
    }

    pub fn output_dim(&self) -> usize {
        3 * self.rank
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.triples.iter().flat_map(|(v, m)| [v.param, m.param]).collect()
    }

    pub fn eval(&self, params: &ParamSet, p: [f64; 3]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.output_dim());
        for (v, m) in &self.triples {
            let a = v.sample(params, p[v.axis.column()]);
            let b = m.sample(params, p[m.axes.0.column()], p[m.axes.1.column()]);
            out.extend(a.iter().zip(&b).map(|(x, y)| x * y));
        }
        out
    }

    /// Batched features; `coords` is `[M, >=3]` with x, y, z leading.
    pub fn eval_graph(&self, g: &mut Graph<'_>, coords: Var) -> Var {
        let mut parts = Vec::with_capacity(3);
        for (v, m) in &self.triples {
            let a = v.sample_graph(g, coords, v.axis.column());
            let b = m.sample_graph(g, coords, (m.axes.0.column(), m.axes.1.column()));
            parts.push(g.mul(a, b));
        }
        g.concat_cols(&parts)
    }

    pub fn upsample(&mut self, params: &mut ParamSet, resolution: usize) -> Result<Vec<ParamId>> {
        for (v, m) in &mut self.triples {
            v.upsample(params, resolution)?;
            m.upsample(params, resolution, resolution)?;
        }
        self.resolution = resolution;
        Ok(self.param_ids())
    }
}
