use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Axis, FeaturePlane, FieldPurpose, GridResolution, Init};
use crate::diffcore::{Graph, ParamId, ParamSet, Var};
use crate::error::Result;

/// Axis pairing: each spatial plane is multiplied by the plane over the
/// complementary spatial axis and time.
const PAIRING: [((Axis, Axis), (Axis, Axis)); 3] = [
    ((Axis::X, Axis::Y), (Axis::Z, Axis::T)),
    ((Axis::X, Axis::Z), (Axis::Y, Axis::T)),
    ((Axis::Y, Axis::Z), (Axis::X, Axis::T)),
];

/// Six-plane 4-D field. Output per point is `3 * rank` features: the
/// per-channel products of the three plane pairs, concatenated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HexPlaneField {
    pub purpose: FieldPurpose,
    pub rank: usize,
    pub resolution: GridResolution,
    pub pairs: Vec<(FeaturePlane, FeaturePlane)>,
}

impl HexPlaneField {
    /// Spatial planes start from `spatial`, spatio-temporal ones from
    /// `temporal`.
    pub fn new(
        params: &mut ParamSet,
        name: &str,
        purpose: FieldPurpose,
        rank: usize,
        resolution: GridResolution,
        spatial: Init,
        temporal: Init,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let mut pairs = Vec::with_capacity(3);
        for (a, b) in PAIRING {
            let mk = |params: &mut ParamSet, axes: (Axis, Axis), init: Init, rng: &mut _| {
                let (r, c) = (resolution.along(axes.0), resolution.along(axes.1));
                let data = init.fill(r * c * rank, rng);
                FeaturePlane::new(params, format!("{name}.{:?}{:?}", axes.0, axes.1), axes, r, c, rank, data)
            };
            let pa = mk(params, a, spatial, rng)?;
            let pb = mk(params, b, temporal, rng)?;
            pairs.push((pa, pb));
        }
        Ok(Self {
            purpose,
            rank,
            resolution,
            pairs,
        })
    }

    pub fn output_dim(&self) -> usize {
        3 * self.rank
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.pairs.iter().flat_map(|(a, b)| [a.param, b.param]).collect()
    }

    /// Features at one `(x, y, z, t)` point.
    pub fn eval(&self, params: &ParamSet, p: [f64; 4]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.output_dim());
        for (a, b) in &self.pairs {
            let va = a.sample(params, p[a.axes.0.column()], p[a.axes.1.column()]);
            let vb = b.sample(params, p[b.axes.0.column()], p[b.axes.1.column()]);
            out.extend(va.iter().zip(&vb).map(|(x, y)| x * y));
        }
        out
    }

    /// Batched features for `[M, 4]` coordinates; returns `[M, 3R]`.
    pub fn eval_graph(&self, g: &mut Graph<'_>, coords: Var) -> Var {
        let mut parts = Vec::with_capacity(3);
        for (a, b) in &self.pairs {
            let va = a.sample_graph(g, coords, (a.axes.0.column(), a.axes.1.column()));
            let vb = b.sample_graph(g, coords, (b.axes.0.column(), b.axes.1.column()));
            parts.push(g.mul(va, vb));
        }
        g.concat_cols(&parts)
    }

    /// Resample every plane to a new spatial resolution; time is untouched.
    /// Returns the resampled parameters.
    pub fn upsample_spatial(&mut self, params: &mut ParamSet, spatial: usize) -> Result<Vec<ParamId>> {
        self.resolution.spatial = spatial;
        let res = self.resolution;
        for (a, b) in &mut self.pairs {
            for p in [a, b] {
                p.upsample(params, res.along(p.axes.0), res.along(p.axes.1))?;
            }
        }
        Ok(self.param_ids())
    }
}
