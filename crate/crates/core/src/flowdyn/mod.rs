//! Scene flow, expected image flow, warped rays and the losses built on
//! them.

use log::warn;

use crate::diffcore::{Graph, Var};
use crate::error::Result;
use crate::posegraph::{apply_graph, project_graph, ApplyKind, CameraIntrinsics, Rigid};
use crate::renderer::{FieldModel, Ray};

/// Rows whose transformed point is closer than this to the image plane are
/// excluded from flow losses.
pub const MIN_DEPTH: f64 = 1e-6;

/// Forward and backward scene flow at one point, in world units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FlowSample {
    pub forward: [f64; 3],
    pub backward: [f64; 3],
}

/// Image motion of pixel `p` into the next frame: unproject at z-depth
/// `depth`, displace by `flow` (frame-`q` camera axes), carry into the next
/// camera with `rel` and project.
pub fn expected_flow_2d(k: &CameraIntrinsics, p: [f64; 2], depth: f64, rel: &Rigid, flow: [f64; 3]) -> Result<[f64; 2]> {
    let x = k.unproject(p, depth)?;
    let moved = [x[0] + flow[0], x[1] + flow[1], x[2] + flow[2]];
    let q = k.project(rel.apply(moved))?;
    Ok([q[0] - p[0], q[1] - p[1]])
}

/// Expected flow for a batch, restricted to the rows in `rows`.
pub struct ExpectedFlow {
    /// `[V, 2]` pixel displacements.
    pub flow: Var,
    pub rows: Vec<usize>,
    /// Rows dropped because the point lands behind the next camera.
    pub behind: usize,
}

/// Tape version over world-space surface points `[B, 3]`, optional world
/// flows `[B, 3]` and the next frame's world-from-camera poses `[B, 12]`.
pub fn expected_flow_graph(
    g: &mut Graph<'_>,
    k: &CameraIntrinsics,
    pixels: &[[f64; 2]],
    points: Var,
    flow: Option<Var>,
    next_poses: Var,
) -> ExpectedFlow {
    assert_eq!(g.rows(points), pixels.len(), "one pixel per point");
    let moved = match flow {
        Some(f) => g.add(points, f),
        None => points,
    };
    let cam = apply_graph(g, next_poses, moved, ApplyKind::InversePoint);
    let rows: Vec<usize> = g.value(cam).chunks_exact(3).enumerate().filter(|(_, c)| c[2] > MIN_DEPTH).map(|(i, _)| i).collect();
    let behind = pixels.len() - rows.len();
    let cam = g.gather_rows(cam, &rows);
    let uv = project_graph(g, cam, k);
    let origin = g.constant(rows.len(), 2, rows.iter().flat_map(|&i| pixels[i]).collect());
    ExpectedFlow {
        flow: g.sub(uv, origin),
        rows,
        behind,
    }
}

/// Mean over rows of the L1 norm of `pred - target` (both `[V, 2]`).
pub fn flow_l1(pred: &[f64], target: &[f64]) -> f64 {
    assert_eq!(pred.len(), target.len());
    if pred.is_empty() {
        warn!("flow loss over an empty pixel set");
        return 0.0;
    }
    pred.iter().zip(target).map(|(a, b)| (a - b).abs()).sum::<f64>() / (pred.len() / 2) as f64
}

pub fn flow_l1_graph(g: &mut Graph<'_>, pred: Var, target: &[f64]) -> Var {
    let (r, c) = g.shape(pred);
    assert_eq!(r * c, target.len(), "flow target size");
    if r == 0 {
        warn!("flow loss over an empty pixel set");
        return g.scalar_const(0.0);
    }
    let t = g.constant(r, c, target.to_vec());
    let d = g.sub(pred, t);
    let a = g.abs(d);
    let s = g.sum(a);
    g.scale(s, 1.0 / r as f64)
}

/// Mean L1 norm of `fl_f(x, t) + fl_b(x + fl_f, t + 1)`.
pub fn cycle_loss(forward: &[[f64; 3]], backward_at_next: &[[f64; 3]]) -> f64 {
    if forward.is_empty() {
        warn!("cycle loss over an empty point set");
        return 0.0;
    }
    forward
        .iter()
        .zip(backward_at_next)
        .map(|(f, b)| (0..3).map(|i| (f[i] + b[i]).abs()).sum::<f64>())
        .sum::<f64>()
        / forward.len() as f64
}

pub fn cycle_loss_graph(g: &mut Graph<'_>, forward: Var, backward_at_next: Var) -> Var {
    let r = g.rows(forward);
    if r == 0 {
        warn!("cycle loss over an empty point set");
        return g.scalar_const(0.0);
    }
    let s = g.add(forward, backward_at_next);
    let a = g.abs(s);
    let t = g.sum(a);
    g.scale(t, 1.0 / r as f64)
}

/// The three flow terms for matched pixels: forward and backward image-flow
/// L1 and the scene-flow cycle term.
pub fn flow_losses(
    expected_fwd: &[f64],
    expected_bwd: &[f64],
    gt_fwd: &[f64],
    gt_bwd: &[f64],
    fl_f: &[[f64; 3]],
    fl_b_next: &[[f64; 3]],
) -> (f64, f64, f64) {
    (flow_l1(expected_fwd, gt_fwd), flow_l1(expected_bwd, gt_bwd), cycle_loss(fl_f, fl_b_next))
}

/// Forward and backward scene flow from the model's flow head at world
/// points `[B, 3]`. Inputs are the model's local affine coordinates (no
/// contraction); outputs are rescaled to world units.
pub fn scene_flow(g: &mut Graph<'_>, model: &FieldModel, points: Var, times: &[f64]) -> (Var, Var) {
    let x = to_local(g, model, points);
    let t = g.constant(times.len(), 1, times.to_vec());
    let (f, b) = model.flow_head.flows(g, x, t);
    (g.scale(f, model.scale), g.scale(b, model.scale))
}

/// Backward scene flow alone, used at advected points.
pub fn backward_scene_flow(g: &mut Graph<'_>, model: &FieldModel, points: Var, times: &[f64]) -> Var {
    let x = to_local(g, model, points);
    let t = g.constant(times.len(), 1, times.to_vec());
    let b = model.flow_head.backward_flow(g, x, t);
    g.scale(b, model.scale)
}

fn to_local(g: &mut Graph<'_>, model: &FieldModel, points: Var) -> Var {
    let shift = g.constant(1, 3, model.center.map(|c| -c).to_vec());
    let x = g.add(points, shift);
    g.scale(x, 1.0 / model.scale)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WarpedRay {
    pub pixel: (usize, usize),
    /// Surface point after advection.
    pub point: [f64; 3],
    pub origin: [f64; 3],
    pub dir: [f64; 3],
    pub t: f64,
}

/// Surface point `o + D d` of `ray`, advected by `flow` when the rendered
/// mask exceeds 0.5, seen from `next_origin` at time `t_next`. `None` when
/// the point coincides with the new origin.
pub fn warp_ray(ray: &Ray, depth: f64, mask: f64, flow: [f64; 3], next_origin: [f64; 3], t_next: f64) -> Option<WarpedRay> {
    let mut point = ray.at(depth);
    if mask > 0.5 {
        for i in 0..3 {
            point[i] += flow[i];
        }
    }
    let v = [point[0] - next_origin[0], point[1] - next_origin[1], point[2] - next_origin[2]];
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    if n < 1e-9 {
        return None;
    }
    Some(WarpedRay {
        pixel: ray.pixel,
        point,
        origin: next_origin,
        dir: v.map(|c| c / n),
        t: t_next,
    })
}

/// Tape version of [`warp_ray`]: unit directions `[V, 3]` from the next
/// origins toward the (possibly advected) surface points, and the rows kept.
pub fn warp_dirs_graph(g: &mut Graph<'_>, points: Var, dynamic: &[bool], flow: Var, next_origins: Var) -> (Var, Vec<usize>) {
    let b = g.rows(points);
    assert_eq!(dynamic.len(), b, "one mask flag per ray");
    let sel = g.constant(b, 1, dynamic.iter().map(|&d| f64::from(u8::from(d))).collect());
    let step = g.mul(flow, sel);
    let moved = g.add(points, step);
    let v = g.sub(moved, next_origins);
    let rows: Vec<usize> = g
        .value(v)
        .chunks_exact(3)
        .enumerate()
        .filter(|(_, c)| (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt() >= 1e-9)
        .map(|(i, _)| i)
        .collect();
    let v = g.gather_rows(v, &rows);
    let sq = g.square(v);
    let n2 = g.sum_cols(sq);
    let n = g.sqrt(n2);
    (g.div(v, n), rows)
}

/// Bilinear sample of a row-major RGB image at continuous pixel
/// coordinates `p = (u, v)`, pixel centers at half-integers. `None` outside
/// the span of pixel centers.
pub fn sample_image(img: &[f64], width: usize, height: usize, p: [f64; 2]) -> Option<[f64; 3]> {
    let (x, y) = (p[0] - 0.5, p[1] - 0.5);
    let (wm, hm) = ((width - 1) as f64, (height - 1) as f64);
    if !(0.0..=wm).contains(&x) || !(0.0..=hm).contains(&y) {
        return None;
    }
    let (x0, y0) = ((x.floor() as usize).min(width.saturating_sub(2)), (y.floor() as usize).min(height.saturating_sub(2)));
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let (x1, y1) = ((x0 + 1).min(width - 1), (y0 + 1).min(height - 1));
    let at = |r: usize, c: usize, ch: usize| img[(r * width + c) * 3 + ch];
    Some(std::array::from_fn(|ch| {
        (1.0 - fy) * ((1.0 - fx) * at(y0, x0, ch) + fx * at(y0, x1, ch)) + fy * ((1.0 - fx) * at(y1, x0, ch) + fx * at(y1, x1, ch))
    }))
}

/// Mean squared error between colors rendered along warped rays and the
/// observed colors at the flow-displaced pixels.
pub fn adjacent_consistency_loss(rendered: &[f64], observed: &[f64]) -> f64 {
    assert_eq!(rendered.len(), observed.len());
    if rendered.is_empty() {
        warn!("adjacent loss with no in-bounds pixels");
        return 0.0;
    }
    rendered.iter().zip(observed).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / rendered.len() as f64
}

pub fn adjacent_loss_graph(g: &mut Graph<'_>, rendered: Var, observed: &[f64]) -> Var {
    let (r, c) = g.shape(rendered);
    assert_eq!(r * c, observed.len(), "adjacent target size");
    if r == 0 {
        warn!("adjacent loss with no in-bounds pixels");
        return g.scalar_const(0.0);
    }
    let o = g.constant(r, c, observed.to_vec());
    let d = g.sub(rendered, o);
    let s = g.square(d);
    g.mean(s)
}
