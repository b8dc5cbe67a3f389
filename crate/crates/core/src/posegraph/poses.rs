use serde::{Deserialize, Serialize};

use super::{compose_graph, init_new_pose, se3_exp, se3_exp_graph, Rigid};
use crate::diffcore::{Graph, ParamGroup, ParamId, ParamSet, Tensor, Var};
use crate::error::{Error, Result};

/// Per-frame camera poses `reference ∘ exp(twist)`, world-from-camera.
///
/// All twists live in one `[Q, 6]` parameter. Rows of frames that are not
/// yet added, or that are held fixed, are masked out of the graph.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseSet {
    pub twists: ParamId,
    /// Row-major `R` then `t` per frame.
    pub references: Vec<[f64; 12]>,
    pub added: Vec<bool>,
    pub trainable: Vec<bool>,
}

impl PoseSet {
    /// Learnable poses for `frames` frames, none added yet.
    pub fn learnable(params: &mut ParamSet, frames: usize) -> Result<Self> {
        let twists = params.add("pose.twist", ParamGroup::Pose, Tensor::param([frames, 6], vec![0.0; frames * 6])?);
        Ok(Self {
            twists,
            references: vec![Rigid::identity().to_row(); frames],
            added: vec![false; frames],
            trainable: vec![false; frames],
        })
    }

    /// Poses pinned to known values; nothing is optimized.
    pub fn fixed(params: &mut ParamSet, poses: &[Rigid]) -> Result<Self> {
        let frames = poses.len();
        let twists = params.add("pose.twist", ParamGroup::Pose, Tensor::param([frames, 6], vec![0.0; frames * 6])?);
        params.set_requires_grad(twists, false);
        Ok(Self {
            twists,
            references: poses.iter().map(Rigid::to_row).collect(),
            added: vec![true; frames],
            trainable: vec![false; frames],
        })
    }

    pub fn len(&self) -> usize {
        self.references.len()
    }

    pub fn is_empty(&self) -> bool {
        self.references.is_empty()
    }

    pub fn is_added(&self, q: usize) -> bool {
        self.added[q]
    }

    /// Add frame `q` with the previous frame's current pose; the first
    /// added frame anchors the world and stays at the identity.
    pub fn add_frame(&mut self, params: &mut ParamSet, q: usize) -> Result<()> {
        if q >= self.len() || self.added[q] {
            return Err(Error::invalid(format!("frame {q} cannot be added")));
        }
        let previous: Vec<Rigid> = (0..q).rev().find(|&p| self.added[p]).map(|p| self.pose(params, p)).into_iter().collect();
        let first = previous.is_empty();
        self.references[q] = init_new_pose(&previous).to_row();
        params.get_mut(self.twists).data_mut()[q * 6..q * 6 + 6].fill(0.0);
        self.added[q] = true;
        self.trainable[q] = !first;
        Ok(())
    }

    pub fn pose(&self, params: &ParamSet, q: usize) -> Rigid {
        let xi: [f64; 6] = params.get(self.twists).data()[q * 6..q * 6 + 6].try_into().unwrap();
        let xi = if self.trainable[q] { xi } else { [0.0; 6] };
        Rigid::from_row(&self.references[q]).compose(&se3_exp(xi))
    }

    pub fn poses(&self, params: &ParamSet) -> Vec<Rigid> {
        (0..self.len()).map(|q| self.pose(params, q)).collect()
    }

    /// `[Q, 12]` node of every frame's pose.
    pub fn graph(&self, g: &mut Graph<'_>) -> Var {
        let q = self.len();
        let xi = g.param(self.twists);
        let mask: Vec<f64> = self.trainable.iter().flat_map(|&t| [f64::from(u8::from(t)); 6]).collect();
        let mask = g.constant(q, 6, mask);
        let xi = g.mul(xi, mask);
        let e = se3_exp_graph(g, xi);
        let refs = g.constant(q, 12, self.references.iter().flatten().copied().collect());
        compose_graph(g, refs, e)
    }

    /// Fold the current twists into the references.
    pub fn rebase(&mut self, params: &mut ParamSet) {
        for q in 0..self.len() {
            self.references[q] = self.pose(params, q).to_row();
        }
        params.get_mut(self.twists).data_mut().fill(0.0);
    }

    /// Stop optimizing frame `q`, keeping its current pose.
    pub fn freeze(&mut self, params: &mut ParamSet, q: usize) {
        self.references[q] = self.pose(params, q).to_row();
        params.get_mut(self.twists).data_mut()[q * 6..q * 6 + 6].fill(0.0);
        self.trainable[q] = false;
    }
}
