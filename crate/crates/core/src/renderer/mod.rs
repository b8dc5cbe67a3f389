//! Rays, scene contraction, sampling, routing and volume compositing.

mod composite;
mod contract;
mod model;
mod pipeline;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use composite::{composite, composite_graph, Composite};
pub use contract::{contract, contract_graph};
pub use model::{FieldModel, ModelConfig};
#[cfg(test)]
pub(crate) use model::tiny_config;
pub use pipeline::{render_batch, RayBatch, RenderMode, RenderOptions, RenderOutput, RouteRule};

/// Added to rendered depth before inversion.
pub const INV_DEPTH_EPS: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: [f64; 3],
    pub dir: [f64; 3],
    pub frame: usize,
    /// `(row, col)`.
    pub pixel: (usize, usize),
    pub t: f64,
}

impl Ray {
    /// Normalizes `dir`.
    pub fn new(origin: [f64; 3], dir: [f64; 3], frame: usize, pixel: (usize, usize), t: f64) -> Result<Self> {
        let n = norm(dir);
        if !(n > 0.0 && n.is_finite()) {
            return Err(Error::invalid("zero or non-finite ray direction"));
        }
        Ok(Self {
            origin,
            dir: [dir[0] / n, dir[1] / n, dir[2] / n],
            frame,
            pixel,
            t,
        })
    }

    pub fn at(&self, d: f64) -> [f64; 3] {
        std::array::from_fn(|k| self.origin[k] + d * self.dir[k])
    }
}

pub(crate) fn norm(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

/// Frame index to time in `[-2, 2]`.
pub fn remap_time(q: usize, frames: usize) -> Result<f64> {
    if frames < 2 {
        return Err(Error::invalid(format!("need at least 2 frames, got {frames}")));
    }
    if q >= frames {
        return Err(Error::invalid(format!("frame {q} out of {frames}")));
    }
    Ok(-2.0 + 4.0 * q as f64 / (frames - 1) as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleSpec {
    pub near: f64,
    pub far: f64,
    pub count: usize,
    pub stratified: bool,
}

/// Sample depths along one ray and their spacings.
///
/// Deterministic samples are evenly spaced from `near` to `far`
/// inclusive. Stratified samples jitter uniformly inside the bin around
/// each of those positions (clipped to `[near, far]`). The last spacing is
/// `far / count`.
pub fn sample_depths(spec: &SampleSpec, rng: &mut impl Rng) -> Result<(Vec<f64>, Vec<f64>)> {
    let SampleSpec {
        near,
        far,
        count: n,
        stratified,
    } = *spec;
    if !(near > 0.0 && far > near) || n < 2 {
        return Err(Error::invalid(format!("bad sampling range {near}..{far} with {n} samples")));
    }
    let h = (far - near) / (n - 1) as f64;
    let depths: Vec<f64> = (0..n)
        .map(|i| {
            let c = near + h * i as f64;
            if stratified {
                let lo = (c - 0.5 * h).max(near);
                let hi = (c + 0.5 * h).min(far);
                lo + (hi - lo) * rng.random::<f64>()
            } else {
                c
            }
        })
        .collect();
    let mut deltas: Vec<f64> = depths.windows(2).map(|w| w[1] - w[0]).collect();
    deltas.push(far / n as f64);
    Ok((depths, deltas))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    Static,
    Dynamic,
}

/// Hard routing: dynamic iff `p > tau`.
pub fn route(p: f64, tau: f64) -> Route {
    if p > tau {
        Route::Dynamic
    } else {
        Route::Static
    }
}

/// One evaluated sample on a ray.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplePoint {
    pub ray: usize,
    pub depth: f64,
    pub delta: f64,
    pub prob: f64,
    pub route: Route,
    pub sigma: f64,
    pub color: [f64; 3],
}

/// Merge the two routed subsets of one ray back into depth order.
pub fn aggregate(static_pts: Vec<SamplePoint>, dynamic_pts: Vec<SamplePoint>) -> Result<Vec<SamplePoint>> {
    let ray = static_pts.first().or(dynamic_pts.first()).map(|p| p.ray);
    if static_pts.iter().chain(&dynamic_pts).any(|p| Some(p.ray) != ray) {
        return Err(Error::invalid("aggregate over points from different rays"));
    }
    let mut out = Vec::with_capacity(static_pts.len() + dynamic_pts.len());
    let (mut a, mut b) = (static_pts.into_iter().peekable(), dynamic_pts.into_iter().peekable());
    loop {
        let take_a = match (a.peek(), b.peek()) {
            (Some(x), Some(y)) => x.depth <= y.depth,
            (Some(_), None) => true,
            (None, Some(_)) => false,
            (None, None) => break,
        };
        out.push(if take_a { a.next() } else { b.next() }.unwrap());
    }
    Ok(out)
}

/// Rendered quantities for one ray.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderBundle {
    pub color: [f64; 3],
    pub depth: f64,
    pub inv_depth: f64,
    pub mask: f64,
    pub weights: Vec<f64>,
}

/// Composite depth-ordered samples of one ray.
pub fn render_points(points: &[SamplePoint]) -> RenderBundle {
    let sigmas: Vec<f64> = points.iter().map(|p| p.sigma).collect();
    let deltas: Vec<f64> = points.iter().map(|p| p.delta).collect();
    let values: Vec<f64> = points
        .iter()
        .flat_map(|p| [p.color[0], p.color[1], p.color[2], p.depth, p.prob])
        .collect();
    let c = composite(&sigmas, &deltas, &values, 5, points.len());
    let o = &c.out;
    RenderBundle {
        color: [o[0], o[1], o[2]],
        depth: o[3],
        inv_depth: 1.0 / (o[3] + INV_DEPTH_EPS),
        mask: o[4],
        weights: c.weights,
    }
}
