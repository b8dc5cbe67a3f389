use nalgebra::{UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{PoseMode, RunConfig};
use crate::diffcore::{adam_step, cosine_decay, AdamState, Graph, ParamGroup, ParamSet, Var};
use crate::error::{Error, Result};
use crate::flowdyn::{
    adjacent_loss_graph, backward_scene_flow, cycle_loss_graph, expected_flow_graph, flow_l1_graph, sample_image, scene_flow, warp_dirs_graph,
};
use crate::losses::{depth_loss_graph, mask_bce_graph, rgb_loss_graph, tau_loss_graph, total_loss, LossParts};
use crate::posegraph::{apply_graph, ApplyKind, CameraIntrinsics, PoseSet, Rigid, SlotSchedule};
use crate::renderer::{remap_time, render_batch, sample_depths, FieldModel, RayBatch, RenderMode, RenderOptions, SampleSpec};
use crate::synthscene::{Oracle, SceneBundle};

/// One row of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub iteration: u64,
    pub total: f64,
    /// In [`crate::losses::TERM_NAMES`] order.
    pub terms: [f64; 6],
    pub threshold: f64,
    pub dynamic_fraction: f64,
    pub frames_added: usize,
    pub slot: usize,
}

pub const LOG_HEADER: &str = "iteration,total,rgb,depth,flow,mask,adjacent,tau,threshold,dynamic_fraction,frames_added,slot";

impl LogRow {
    pub fn csv(&self) -> String {
        let mut s = format!("{},{:.10e}", self.iteration, self.total);
        for t in self.terms {
            s.push_str(&format!(",{t:.10e}"));
        }
        s.push_str(&format!(",{:.6},{:.6},{},{}", self.threshold, self.dynamic_fraction, self.frames_added, self.slot));
        s
    }
}

/// Full-frame render.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderedFrame {
    pub rgb: Vec<f64>,
    /// Expected ray distance.
    pub depth: Vec<f64>,
    pub inv_depth: Vec<f64>,
    pub mask: Vec<f64>,
}

/// Flow supervision pairs each training frame with its nearest training
/// neighbours. Across a held-out gap the 2D flow comes from the scene's
/// tracer, since the bundle only stores adjacent-frame flow.
#[derive(Clone, Debug, Default)]
pub struct FlowLinks {
    pub next: Vec<Option<usize>>,
    pub prev: Vec<Option<usize>>,
    gap_fwd: Vec<Option<Vec<f32>>>,
    gap_bwd: Vec<Option<Vec<f32>>>,
}

impl FlowLinks {
    pub fn build(config: &RunConfig, bundle: &SceneBundle) -> Result<Self> {
        let n = bundle.frames.len();
        let train: Vec<usize> = (0..n).filter(|&q| !config.is_held_out(q)).collect();
        let mut links = Self {
            next: vec![None; n],
            prev: vec![None; n],
            gap_fwd: vec![None; n],
            gap_bwd: vec![None; n],
        };
        let mut oracle = None;
        for pair in train.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            links.next[a] = Some(b);
            links.prev[b] = Some(a);
            if b == a + 1 {
                continue;
            }
            if oracle.is_none() {
                oracle = Some(Oracle::new(&bundle.spec)?);
            }
            let o = oracle.as_ref().expect("set above");
            links.gap_fwd[a] = Some(gap_raster(o, bundle, a, b));
            links.gap_bwd[b] = Some(gap_raster(o, bundle, b, a));
        }
        Ok(links)
    }

    /// Linked frame and flow of pixel index `i` from frame `q`.
    fn flow(&self, bundle: &SceneBundle, q: usize, i: usize, fwd: bool) -> Option<(usize, [f64; 2], bool)> {
        let r = if fwd { self.next[q] } else { self.prev[q] }?;
        let gap = if fwd { &self.gap_fwd[q] } else { &self.gap_bwd[q] };
        let f = match gap {
            Some(f) => f,
            None => if fwd { bundle.frames[q].flow_fwd.as_ref() } else { bundle.frames[q].flow_bwd.as_ref() }?,
        };
        let v = [f64::from(f[i * 2]), f64::from(f[i * 2 + 1])];
        v.iter().all(|x| x.is_finite()).then_some((r, v, gap.is_some()))
    }
}

fn gap_raster(o: &Oracle<'_>, bundle: &SceneBundle, q: usize, r: usize) -> Vec<f32> {
    let (w, h) = (bundle.width(), bundle.height());
    let mut out = Vec::with_capacity(w * h * 2);
    for i in 0..w * h {
        let f = o.flow_between(q, r, CameraIntrinsics::pixel_center(i / w, i % w)).unwrap_or([f64::NAN; 2]);
        out.extend(f.map(|c| c as f32));
    }
    out
}

/// Complete optimization state; everything a checkpoint has to hold.
pub struct Trainer {
    pub config: RunConfig,
    pub bundle: SceneBundle,
    pub params: ParamSet,
    pub adam: AdamState,
    pub models: Vec<FieldModel>,
    pub poses: PoseSet,
    pub slots: SlotSchedule,
    pub iteration: u64,
    /// Slot whose parameters currently take gradients.
    pub trained_slot: Option<usize>,
    pub links: FlowLinks,
}

fn camera_dir(k: &CameraIntrinsics, p: [f64; 2]) -> [f64; 3] {
    let d = k.ray_direction(p);
    let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    d.map(|c| c / n)
}

fn slot_seed(seed: u64, slot: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(slot as u64 + 1)
}

impl Trainer {
    pub fn new(config: RunConfig, bundle: SceneBundle) -> Result<Self> {
        config.validate()?;
        let q = bundle.frames.len();
        if q < 2 {
            return Err(Error::invalid("a bundle needs at least 2 frames"));
        }
        let links = FlowLinks::build(&config, &bundle)?;
        let mut params = ParamSet::new();
        let adam = AdamState::new(config.adam);
        let slots = SlotSchedule::new(config.poses.slot_radius, config.poses.slot_overlap);
        let poses = match config.poses.mode {
            PoseMode::Oracle => PoseSet::fixed(&mut params, &bundle.poses())?,
            PoseMode::Free => PoseSet::learnable(&mut params, q)?,
        };
        let mut t = Self {
            config,
            bundle,
            params,
            adam,
            models: Vec::new(),
            poses,
            slots,
            iteration: 0,
            trained_slot: None,
            links,
        };
        match t.config.poses.mode {
            PoseMode::Oracle => {
                for f in 0..q {
                    let c = t.poses.pose(&t.params, f).center();
                    t.observe(f, c)?;
                }
            }
            PoseMode::Free => {
                for _ in 0..t.config.poses.initial_frames {
                    if !t.add_next_frame()? {
                        break;
                    }
                }
            }
        }
        Ok(t)
    }

    fn frames(&self) -> usize {
        self.bundle.frames.len()
    }

    /// Grid resolution scheduled at the current iteration.
    fn scheduled_resolution(&self) -> usize {
        let t = &self.config.train;
        let base = self.config.model.spatial_resolution;
        let steps = if self.config.ablation.upsampling {
            t.upsample_at.iter().filter(|&&i| i <= self.iteration).count()
        } else {
            t.upsample_at.len()
        };
        (base as f64 * t.upsample_factor.powi(steps as i32)).round() as usize
    }

    fn observe(&mut self, q: usize, center: [f64; 3]) -> Result<()> {
        if let Some(s) = self.slots.observe(q, center) {
            let anchor = self.poses.pose(&self.params, q);
            let d = self.config.train.field_distance;
            let c = anchor.apply([0.0, 0.0, d]);
            let cfg = crate::renderer::ModelConfig {
                spatial_resolution: self.scheduled_resolution(),
                ..self.config.model.clone()
            };
            let frames = self.frames();
            let model = FieldModel::new(&mut self.params, &cfg, frames, c, self.config.train.field_scale, slot_seed(self.config.seed, s))?;
            for id in model.param_ids() {
                self.params.set_requires_grad(id, false);
            }
            self.models.push(model);
            if self.config.poses.mode == PoseMode::Free {
                let start = self.slots.slots[s].start;
                for f in 0..start {
                    if self.poses.is_added(f) {
                        self.poses.freeze(&mut self.params, f);
                    }
                }
            }
        }
        Ok(())
    }

    /// Free mode: add the next trainable frame. Returns false when every
    /// frame is in.
    fn add_next_frame(&mut self) -> Result<bool> {
        let next = (0..self.frames()).find(|&f| !self.poses.is_added(f) && !self.config.is_held_out(f));
        let Some(f) = next else { return Ok(false) };
        self.poses.add_frame(&mut self.params, f)?;
        let c = self.poses.pose(&self.params, f).center();
        self.observe(f, c)?;
        Ok(true)
    }

    pub fn frames_added(&self) -> usize {
        (0..self.frames()).filter(|&f| self.poses.is_added(f)).count()
    }

    /// A frame whose image and pose may be used for supervision.
    fn usable(&self, q: usize) -> bool {
        q < self.frames() && self.poses.is_added(q) && !self.config.is_held_out(q)
    }

    fn active_slot(&self) -> usize {
        match self.config.poses.mode {
            PoseMode::Free => self.slots.active().unwrap_or(0),
            PoseMode::Oracle => (self.iteration % self.models.len() as u64) as usize,
        }
    }

    fn slot_frames(&self, s: usize) -> Vec<usize> {
        (0..self.frames()).filter(|&f| self.slots.slots[s].contains(f) && self.usable(f)).collect()
    }

    fn select_slot(&mut self, s: usize) {
        if self.trained_slot == Some(s) {
            return;
        }
        if let Some(old) = self.trained_slot {
            for id in self.models[old].param_ids() {
                self.params.set_requires_grad(id, false);
            }
        }
        for id in self.models[s].param_ids() {
            self.params.set_requires_grad(id, true);
        }
        self.trained_slot = Some(s);
    }

    fn before_step(&mut self) -> Result<()> {
        let it = self.iteration;
        let p = &self.config.poses;
        if p.mode == PoseMode::Free && it > 0 && p.add_every > 0 && it % p.add_every == 0 {
            self.add_next_frame()?;
        }
        if self.config.ablation.upsampling && self.config.train.upsample_at.contains(&it) {
            let res = self.scheduled_resolution();
            for m in &mut self.models {
                if res > m.spatial_resolution() {
                    for id in m.upsample(&mut self.params, res)? {
                        self.adam.reset(id);
                    }
                }
            }
        }
        let s = self.active_slot();
        self.select_slot(s);
        Ok(())
    }

    /// Seeded generator for one iteration, independent of history.
    pub fn iteration_rng(&self, iteration: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(iteration);
        rng
    }

    fn learning_rate(&self, group: ParamGroup) -> f64 {
        let t = &self.config.train;
        let base = match group {
            ParamGroup::Field => t.lr_field,
            ParamGroup::Mlp => t.lr_mlp,
            ParamGroup::Pose => t.lr_pose,
            ParamGroup::Threshold => t.lr_threshold,
        };
        cosine_decay(base, self.iteration, t.iterations, t.lr_floor)
    }

    /// One optimization step over a fresh ray batch.
    pub fn step(&mut self) -> Result<LogRow> {
        self.before_step()?;
        let slot = self.active_slot();
        let pool = self.slot_frames(slot);
        if pool.is_empty() {
            return Err(Error::invalid(format!("slot {slot} has no trainable frames")));
        }
        let mut rng = self.iteration_rng(self.iteration);
        let (parts, terms_extra, dyn_frac) = {
            let mut g = Graph::new(&self.params);
            let (parts, frac) = self.build_loss(&mut g, slot, &pool, &mut rng)?;
            let [flow, depth, mask] = self.config.priors.at(self.iteration);
            let extra = [1.0, depth, flow, mask, 1.0, 1.0];
            let total = total_loss(&mut g, &parts, &self.config.weights, extra)?;
            let values = parts.values(&g);
            let total_v = g.scalar(total);
            let grads = g.backward(total)?;
            ((grads, total_v), values, frac)
        };
        let ((grads, total), terms) = (parts, terms_extra);
        self.params.store_gradients(&grads);
        let rates: Vec<f64> = [ParamGroup::Field, ParamGroup::Mlp, ParamGroup::Pose, ParamGroup::Threshold]
            .iter()
            .map(|&g| self.learning_rate(g))
            .collect();
        adam_step(&mut self.params, &mut self.adam, |_, group| match group {
            ParamGroup::Field => rates[0],
            ParamGroup::Mlp => rates[1],
            ParamGroup::Pose => rates[2],
            ParamGroup::Threshold => rates[3],
        })?;
        let row = LogRow {
            iteration: self.iteration,
            total,
            terms,
            threshold: self.models[slot].tau(&self.params),
            dynamic_fraction: dyn_frac,
            frames_added: self.frames_added(),
            slot,
        };
        self.iteration += 1;
        Ok(row)
    }

    fn build_loss(&self, g: &mut Graph<'_>, slot: usize, pool: &[usize], rng: &mut ChaCha8Rng) -> Result<(LossParts, f64)> {
        let cfg = &self.config;
        let t = &cfg.train;
        let model = &self.models[slot];
        let k = *self.bundle.intrinsics();
        let (w, h, nf) = (k.width, k.height, self.frames());
        let b = t.batch_rays;
        let spec = SampleSpec {
            near: t.near,
            far: t.far,
            count: t.samples,
            stratified: true,
        };

        let mut frame = Vec::with_capacity(b);
        let mut pix = Vec::with_capacity(b);
        let recent = if cfg.poses.mode == PoseMode::Free {
            ((b as f64) * cfg.poses.recent_fraction).ceil() as usize
        } else {
            0
        };
        let newest = &pool[pool.len().saturating_sub(cfg.poses.recent_frames.max(1))..];
        for i in 0..b {
            let from = if i < recent { newest } else { pool };
            frame.push(from[rng.random_range(0..from.len())]);
            pix.push(rng.random_range(0..w * h));
        }
        let pixels: Vec<[f64; 2]> = pix.iter().map(|&i| CameraIntrinsics::pixel_center(i / w, i % w)).collect();
        let times: Vec<f64> = frame.iter().map(|&q| remap_time(q, nf)).collect::<Result<_>>()?;
        let mut depths = Vec::with_capacity(b * t.samples);
        let mut deltas = Vec::with_capacity(b * t.samples);
        for _ in 0..b {
            let (d, dl) = sample_depths(&spec, rng)?;
            depths.extend(d);
            deltas.extend(dl);
        }

        let all_poses = self.poses.graph(g);
        let pose_b = g.gather_rows(all_poses, &frame);
        let origins = g.slice_cols(pose_b, 9, 12);
        let cam_dirs = g.constant(b, 3, pixels.iter().flat_map(|&p| camera_dir(&k, p)).collect());
        let dirs = apply_graph(g, pose_b, cam_dirs, ApplyKind::Direction);
        let opts = RenderOptions {
            rule: cfg.ablation.routing,
            mode: RenderMode::Full,
            weight_threshold: t.weight_threshold,
        };
        let batch = RayBatch {
            origins,
            dirs,
            times: times.clone(),
            depths,
            deltas,
            n: t.samples,
        };
        let out = render_batch(g, model, &batch, &opts);

        let rec = |i: usize| &self.bundle.frames[frame[i]];
        let rgb_t: Vec<f64> = (0..b).flat_map(|i| rec(i).image[pix[i] * 3..pix[i] * 3 + 3].to_vec()).collect();
        let inv_t: Vec<f64> = (0..b).map(|i| rec(i).inv_depth[pix[i]]).collect();
        let mask_t: Vec<f64> = (0..b).map(|i| f64::from(u8::from(rec(i).mask[pix[i]]))).collect();

        let mut parts = LossParts {
            rgb: Some(rgb_loss_graph(g, out.color, &rgb_t)?),
            ..Default::default()
        };
        if cfg.weights.depth > 0.0 {
            parts.depth = Some(depth_loss_graph(g, out.inv_depth, &inv_t)?);
        }
        if cfg.weights.mask > 0.0 {
            parts.mask = Some(mask_bce_graph(g, out.mask, &mask_t)?);
        }
        if cfg.weights.tau > 0.0 {
            let logit = g.param(model.tau);
            parts.tau = Some(tau_loss_graph(g, logit));
        }

        let need_points = cfg.weights.flow > 0.0 || (cfg.weights.adjacent > 0.0 && cfg.ablation.adjacent);
        if !need_points {
            return Ok((parts, out.dynamic_fraction));
        }
        let step = g.mul(dirs, out.depth);
        let points = g.add(origins, step);
        let (fl_f, fl_b) = if cfg.ablation.flow_constraint {
            let (f, bw) = scene_flow(g, model, points, &times);
            (Some(f), Some(bw))
        } else {
            (None, None)
        };
        let gather = |g: &mut Graph<'_>, v: Option<Var>, rows: &[usize]| v.map(|v| g.gather_rows(v, rows));
        // only dynamic surface points move; static ones keep fl = 0 so the
        // expected flow of the background depends on the poses alone
        let dynamic: Vec<bool> = g.value(out.mask).iter().map(|&m| m > 0.5).collect();
        let gate = g.constant(b, 1, dynamic.iter().map(|&d| f64::from(u8::from(d))).collect());
        let moving = |g: &mut Graph<'_>, v: Option<Var>| v.map(|v| g.mul(v, gate));
        let (gated_f, gated_b) = (moving(g, fl_f), moving(g, fl_b));
        // gap links carry no scene flow, which is defined frame to frame,
        // so they only supervise pixels that are static in both render and mask
        let link = |i: usize, fwd: bool| -> Option<(usize, [f64; 2])> {
            let (r, f, gap) = self.links.flow(&self.bundle, frame[i], pix[i], fwd)?;
            let ok = self.usable(r) && !(gap && (dynamic[i] || rec(i).mask[pix[i]]));
            ok.then_some((r, f))
        };
        let flow_at = |i: usize, fwd: bool| link(i, fwd).map(|(_, f)| f);
        let next_of = |i: usize| frame[i] + 1;
        // cycle and adjacent terms follow the scene flow, so they stay on q+1
        let fwd_rows: Vec<usize> = (0..b).filter(|&i| matches!(link(i, true), Some((r, _)) if r == next_of(i))).collect();

        if cfg.weights.flow > 0.0 {
            let mut terms = Vec::new();
            for fwd in [true, false] {
                let linked: Vec<(usize, usize)> = (0..b).filter_map(|i| link(i, fwd).map(|(r, _)| (i, r))).collect();
                if linked.is_empty() {
                    continue;
                }
                let rows: Vec<usize> = linked.iter().map(|&(i, _)| i).collect();
                let other: Vec<usize> = linked.iter().map(|&(_, r)| r).collect();
                let pts = g.gather_rows(points, &rows);
                let fl = gather(g, if fwd { gated_f } else { gated_b }, &rows);
                let pn = g.gather_rows(all_poses, &other);
                let px: Vec<[f64; 2]> = rows.iter().map(|&i| pixels[i]).collect();
                let e = expected_flow_graph(g, &k, &px, pts, fl, pn);
                let target: Vec<f64> = e.rows.iter().flat_map(|&r| flow_at(rows[r], fwd).unwrap()).collect();
                terms.push(flow_l1_graph(g, e.flow, &target));
            }
            if let (Some(ff), true) = (fl_f, !fwd_rows.is_empty()) {
                let pts = g.gather_rows(points, &fwd_rows);
                let f = g.gather_rows(ff, &fwd_rows);
                let adv = g.add(pts, f);
                let tn: Vec<f64> = fwd_rows.iter().map(|&i| remap_time(next_of(i), nf)).collect::<Result<_>>()?;
                let back = backward_scene_flow(g, model, adv, &tn);
                terms.push(cycle_loss_graph(g, f, back));
            }
            let mut acc = None;
            for v in terms {
                acc = Some(match acc {
                    Some(a) => g.add(a, v),
                    None => v,
                });
            }
            parts.flow = acc;
        }

        if cfg.weights.adjacent > 0.0 && cfg.ablation.adjacent {
            let want = ((b as f64) * t.adjacent_fraction).ceil() as usize;
            let mut rows = Vec::new();
            let mut observed = Vec::new();
            for &i in &fwd_rows {
                if rows.len() == want {
                    break;
                }
                let f = flow_at(i, true).unwrap();
                let p2 = [pixels[i][0] + f[0], pixels[i][1] + f[1]];
                let next = &self.bundle.frames[next_of(i)];
                if let Some(c) = sample_image(&next.image, w, h, p2) {
                    rows.push(i);
                    observed.push(c);
                }
            }
            if !rows.is_empty() {
                let dynamic: Vec<bool> = rows.iter().map(|&i| dynamic[i]).collect();
                let pts = g.gather_rows(points, &rows);
                let fl = match gather(g, fl_f, &rows) {
                    Some(f) => f,
                    None => g.constant(rows.len(), 3, vec![0.0; rows.len() * 3]),
                };
                let nexts: Vec<usize> = rows.iter().map(|&i| next_of(i)).collect();
                let pn = g.gather_rows(all_poses, &nexts);
                let no = g.slice_cols(pn, 9, 12);
                let (wdirs, kept) = warp_dirs_graph(g, pts, &dynamic, fl, no);
                if !kept.is_empty() {
                    let wo = g.gather_rows(no, &kept);
                    let mut depths = Vec::with_capacity(kept.len() * t.samples);
                    let mut deltas = Vec::with_capacity(kept.len() * t.samples);
                    for _ in 0..kept.len() {
                        let (d, dl) = sample_depths(&spec, rng)?;
                        depths.extend(d);
                        deltas.extend(dl);
                    }
                    let wt: Vec<f64> = kept.iter().map(|&r| remap_time(nexts[r], nf)).collect::<Result<_>>()?;
                    let wb = RayBatch {
                        origins: wo,
                        dirs: wdirs,
                        times: wt,
                        depths,
                        deltas,
                        n: t.samples,
                    };
                    let wout = render_batch(g, model, &wb, &opts);
                    let obs: Vec<f64> = kept.iter().flat_map(|&r| observed[r]).collect();
                    parts.adjacent = Some(adjacent_loss_graph(g, wout.color, &obs));
                }
            }
        }
        Ok((parts, out.dynamic_fraction))
    }

    /// Current estimate of frame `q`'s pose. Frames never added (held out
    /// in free mode) are interpolated between their added neighbors.
    pub fn frame_pose(&self, q: usize) -> Rigid {
        if self.poses.is_added(q) {
            return self.poses.pose(&self.params, q);
        }
        let prev = (0..q).rev().find(|&f| self.poses.is_added(f));
        let next = (q + 1..self.frames()).find(|&f| self.poses.is_added(f));
        match (prev, next) {
            (Some(a), Some(b)) => {
                let (pa, pb) = (self.poses.pose(&self.params, a), self.poses.pose(&self.params, b));
                let s = (q - a) as f64 / (b - a) as f64;
                let qa = UnitQuaternion::from_matrix(&pa.r);
                let qb = UnitQuaternion::from_matrix(&pb.r);
                let r = qa.slerp(&qb, s).to_rotation_matrix().into_inner();
                let tr: Vector3<f64> = pa.t * (1.0 - s) + pb.t * s;
                Rigid::new(r, tr)
            }
            (Some(a), None) => self.poses.pose(&self.params, a),
            (None, Some(b)) => self.poses.pose(&self.params, b),
            (None, None) => Rigid::identity(),
        }
    }

    pub fn estimated_trajectory(&self) -> Vec<Rigid> {
        (0..self.frames()).map(|q| self.frame_pose(q)).collect()
    }

    /// Render all pixels of frame `q` with deterministic samples through the
    /// slot that owns it.
    pub fn render_frame(&self, q: usize, mode: RenderMode) -> Result<RenderedFrame> {
        let k = *self.bundle.intrinsics();
        let t = &self.config.train;
        let (w, h) = (k.width, k.height);
        let slot = self.slots.owner(q).unwrap_or(self.models.len() - 1);
        let model = &self.models[slot];
        let pose = self.frame_pose(q);
        let spec = SampleSpec {
            near: t.near,
            far: t.far,
            count: t.samples,
            stratified: false,
        };
        let (d1, dl1) = sample_depths(&spec, &mut ChaCha8Rng::seed_from_u64(0))?;
        let time = remap_time(q, self.frames())?;
        let opts = RenderOptions {
            rule: self.config.ablation.routing,
            mode,
            weight_threshold: t.weight_threshold,
        };
        let mut out = RenderedFrame {
            rgb: Vec::with_capacity(w * h * 3),
            depth: Vec::with_capacity(w * h),
            inv_depth: Vec::with_capacity(w * h),
            mask: Vec::with_capacity(w * h),
        };
        let chunk = 512;
        for start in (0..w * h).step_by(chunk) {
            let end = (start + chunk).min(w * h);
            let n = end - start;
            let mut g = Graph::new(&self.params);
            let o = g.constant(n, 3, (0..n).flat_map(|_| pose.center()).collect());
            let d = g.constant(
                n,
                3,
                (start..end).flat_map(|i| pose.rotate(camera_dir(&k, CameraIntrinsics::pixel_center(i / w, i % w)))).collect(),
            );
            let batch = RayBatch {
                origins: o,
                dirs: d,
                times: vec![time; n],
                depths: d1.repeat(n),
                deltas: dl1.repeat(n),
                n: t.samples,
            };
            let r = render_batch(&mut g, model, &batch, &opts);
            out.rgb.extend(g.value(r.color).iter().map(|v| v.clamp(0.0, 1.0)));
            out.depth.extend_from_slice(g.value(r.depth));
            out.inv_depth.extend_from_slice(g.value(r.inv_depth));
            out.mask.extend_from_slice(g.value(r.mask));
        }
        Ok(out)
    }

    pub fn training_frames(&self) -> Vec<usize> {
        (0..self.frames()).filter(|&q| !self.config.is_held_out(q)).collect()
    }

    pub fn held_out_frames(&self) -> Vec<usize> {
        (0..self.frames()).filter(|&q| self.config.is_held_out(q)).collect()
    }
}
