//! Batched differentiable rendering of rays through one [`FieldModel`].

use serde::{Deserialize, Serialize};

use super::{composite, composite_graph, contract_graph, FieldModel, INV_DEPTH_EPS};
use crate::diffcore::{Graph, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RouteRule {
    /// Dynamic iff the separation probability exceeds the threshold.
    Learned,
    /// Every sample goes to the dynamic field (no decoupling).
    AllDynamic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RenderMode {
    Full,
    /// The static field alone at every sample, routing ignored. Samples
    /// behind a moving object are never seen at that time, so their route
    /// is unreliable, while the static field has seen them at other times.
    StaticOnly,
    /// Static samples get zero density.
    DynamicOnly,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RenderOptions {
    pub rule: RouteRule,
    pub mode: RenderMode,
    /// Samples whose weight does not exceed this skip the appearance and
    /// mask heads. Zero or below evaluates every sample.
    pub weight_threshold: f64,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            rule: RouteRule::Learned,
            mode: RenderMode::Full,
            weight_threshold: 0.0,
        }
    }
}

/// `B` rays with shared sample count `n`.
pub struct RayBatch {
    /// `[B, 3]`.
    pub origins: Var,
    /// `[B, 3]`, unit rows.
    pub dirs: Var,
    /// Remapped time per ray.
    pub times: Vec<f64>,
    /// `B * n` sample depths, ray-major.
    pub depths: Vec<f64>,
    pub deltas: Vec<f64>,
    pub n: usize,
}

pub struct RenderOutput {
    /// `[B, 3]`.
    pub color: Var,
    /// `[B, 1]` expected ray distance.
    pub depth: Var,
    pub inv_depth: Var,
    pub mask: Var,
    /// `[B, 1]` total weight.
    pub opacity: Var,
    pub weights: Vec<f64>,
    /// Fraction of samples routed dynamic.
    pub dynamic_fraction: f64,
    /// Samples that went through the appearance heads.
    pub shaded: usize,
}

/// Positions of `sel` entries inside `subset` split by route.
fn split(subset: &[usize], dynamic: &[bool]) -> [(Vec<usize>, Vec<usize>); 2] {
    let mut s = (Vec::new(), Vec::new());
    let mut d = (Vec::new(), Vec::new());
    for (k, &i) in subset.iter().enumerate() {
        let part = if dynamic[i] { &mut d } else { &mut s };
        part.0.push(i);
        part.1.push(k);
    }
    [s, d]
}

pub fn render_batch(g: &mut Graph<'_>, model: &FieldModel, batch: &RayBatch, opts: &RenderOptions) -> RenderOutput {
    let b = g.rows(batch.origins);
    let n = batch.n;
    let m = b * n;
    assert_eq!(batch.depths.len(), m, "depth count");
    assert_eq!(batch.times.len(), b, "time count");
    let ray_of: Vec<usize> = (0..m).map(|i| i / n).collect();

    // sample positions in field coordinates
    let o = g.gather_rows(batch.origins, &ray_of);
    let d = g.gather_rows(batch.dirs, &ray_of);
    let dep = g.constant(m, 1, batch.depths.clone());
    let step = g.mul(d, dep);
    let world = g.add(o, step);
    let shift = g.constant(1, 3, model.center.map(|c| -c).to_vec());
    let local = g.add(world, shift);
    let local = g.scale(local, 1.0 / model.scale);
    let contracted = contract_graph(g, local);
    let tcol = g.constant(m, 1, ray_of.iter().map(|&r| batch.times[r]).collect());
    let coords = g.concat_cols(&[contracted, tcol]);

    // hard routing from a tape-free probability pass
    let dynamic: Vec<bool> = match opts.rule {
        _ if opts.mode == RenderMode::StaticOnly => vec![false; m],
        RouteRule::AllDynamic => vec![true; m],
        RouteRule::Learned => {
            let params = g.params();
            let feats = model.separation.eval_graph(g, coords);
            let p = model.mask_head.prob_plain(params, g.value(feats), m);
            let tau = model.tau(params);
            p.iter().map(|&p| p > tau).collect()
        }
    };
    let all: Vec<usize> = (0..m).collect();
    let [(st_idx, _), (dy_idx, _)] = split(&all, &dynamic);

    // density
    let mut parts = Vec::with_capacity(2);
    if !st_idx.is_empty() {
        let c = g.gather_rows(coords, &st_idx);
        let f = model.static_density.eval_graph(g, c);
        parts.push((g.sum_cols(f), st_idx.clone()));
    }
    if !dy_idx.is_empty() {
        let c = g.gather_rows(coords, &dy_idx);
        let f = model.dynamic_density.eval_graph(g, c);
        parts.push((g.sum_cols(f), dy_idx.clone()));
    }
    let raw = g.scatter_rows(m, 1, parts);
    let raw = g.add_scalar(raw, model.density_bias);
    let mut sigma = g.softplus(raw);
    if opts.mode == RenderMode::DynamicOnly {
        let keep: Vec<f64> = dynamic.iter().map(|&dy| f64::from(u8::from(dy))).collect();
        let k = g.constant(m, 1, keep);
        sigma = g.mul(sigma, k);
    }

    // appearance and probability only where the sample is visible
    let weights = composite(g.value(sigma), &batch.deltas, &[], 0, n).weights;
    let subset: Vec<usize> = if opts.weight_threshold > 0.0 {
        (0..m).filter(|&i| weights[i] > opts.weight_threshold).collect()
    } else {
        all
    };
    let mut value_parts = Vec::new();
    if !subset.is_empty() {
        let s = subset.len();
        let app_dim = model.static_appearance.output_dim();
        let mut app_parts = Vec::with_capacity(2);
        let [(st, st_pos), (dy, dy_pos)] = split(&subset, &dynamic);
        if !st.is_empty() {
            let c = g.gather_rows(coords, &st);
            app_parts.push((model.static_appearance.eval_graph(g, c), st_pos));
        }
        if !dy.is_empty() {
            let c = g.gather_rows(coords, &dy);
            app_parts.push((model.dynamic_appearance.eval_graph(g, c), dy_pos));
        }
        let app = g.scatter_rows(s, app_dim, app_parts);
        let view = model.color_head.view_features(g, batch.dirs);
        let sub_rays: Vec<usize> = subset.iter().map(|&i| ray_of[i]).collect();
        let view = g.gather_rows(view, &sub_rays);
        let x = g.gather_rows(contracted, &subset);
        let color = model.color_head.color(g, x, view, app);
        let c = g.gather_rows(coords, &subset);
        let sep = model.separation.eval_graph(g, c);
        let prob = model.mask_head.prob(g, sep);
        let v = g.concat_cols(&[color, prob]);
        value_parts.push((v, subset.clone()));
    }
    let shaded = g.scatter_rows(m, 4, value_parts);
    let fixed = g.constant(m, 2, batch.depths.iter().flat_map(|&d| [d, 1.0]).collect());
    let values = g.concat_cols(&[shaded, fixed]);
    let (out, weights) = composite_graph(g, sigma, values, &batch.deltas, n);
    let color = g.slice_cols(out, 0, 3);
    let mask = g.slice_cols(out, 3, 4);
    let depth = g.slice_cols(out, 4, 5);
    let opacity = g.slice_cols(out, 5, 6);
    let de = g.add_scalar(depth, INV_DEPTH_EPS);
    let inv_depth = g.recip(de);
    RenderOutput {
        color,
        depth,
        inv_depth,
        mask,
        opacity,
        weights,
        dynamic_fraction: dy_idx.len() as f64 / m.max(1) as f64,
        shaded: subset.len(),
    }
}
