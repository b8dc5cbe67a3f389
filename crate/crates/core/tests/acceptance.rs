//! End-to-end acceptance run. Prints one `criterion N: PASS|FAIL` line per
//! criterion and fails if any criterion fails.

use std::io::Write;
use std::time::Instant;

use planefield::cli::{iou, load_checkpoint, psnr, save_checkpoint, PoseMode, RunConfig, Trainer};
use planefield::diffcore::{check_function, finite_diff_check, GradCheckReport, Graph, ParamGroup, ParamSet, Tensor, Var};
use planefield::fieldgrid::{FeaturePlane, FieldPurpose, GridResolution, HexPlaneField, Init, VmField};
use planefield::flowdyn::{adjacent_loss_graph, backward_scene_flow, cycle_loss_graph, expected_flow_graph, flow_l1_graph, scene_flow};
use planefield::losses::{depth_loss_graph, mask_bce_graph, rgb_loss_graph, tau_loss_graph, total_loss, LossParts, LossWeights};
use planefield::nets::{positional_encode, Activation, EncodingSpec, HeadWidths, Mlp};
use planefield::posegraph::{apply_graph, compose_graph, project_graph, se3_exp_graph, ApplyKind, CameraIntrinsics, PoseSet};
use planefield::renderer::{composite, composite_graph, contract_graph, render_batch, FieldModel, ModelConfig, RayBatch, RenderMode, RenderOptions, RouteRule};
use planefield::synthscene::{generate, read_bundle, standard_scene, static_background, write_bundle, SceneBundle};
use planefield::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEEDS: u64 = 20;
const TOL: f64 = 1e-3;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn uniform(r: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| r.random_range(lo..hi)).collect()
}

/// Fixed random projection of any output to a scalar.
fn probe(g: &mut Graph<'_>, x: Var, seed: u64) -> Var {
    let (r, c) = g.shape(x);
    let w = g.constant(r, c, uniform(&mut rng(seed ^ 0x5eed), r * c, -1.0, 1.0));
    let p = g.mul(x, w);
    g.sum(p)
}

fn tiny_model_config() -> ModelConfig {
    let enc = |frequencies, include_input| EncodingSpec { frequencies, include_input };
    ModelConfig {
        rank_separation: 1,
        rank_density: 1,
        rank_appearance: 2,
        spatial_resolution: 3,
        time_resolution: 2,
        position_encoding: enc(1, true),
        direction_encoding: enc(1, true),
        time_encoding: enc(1, false),
        heads: HeadWidths {
            mask: vec![4],
            view: vec![3],
            color: vec![4],
            flow: vec![4],
        },
        density_bias: 0.0,
        init_scale: 0.5,
        tau_init: 0.5,
    }
}

/// Model with nonzero biases, so ReLU kinks sit away from the probe point.
fn tiny_model(ps: &mut ParamSet, seed: u64) -> FieldModel {
    let m = FieldModel::new(ps, &tiny_model_config(), 4, [0.0, 0.0, 0.5], 1.5, seed).unwrap();
    let mut r = rng(seed + 1000);
    for id in m.param_ids() {
        if ps.name(id).contains(".b") {
            for v in ps.get_mut(id).data_mut() {
                *v = r.random_range(-0.3..0.3);
            }
        }
    }
    m
}

fn intrinsics() -> CameraIntrinsics {
    CameraIntrinsics {
        fx: 40.0,
        fy: 42.0,
        cx: 16.0,
        cy: 15.0,
        width: 32,
        height: 30,
    }
}

type Check = fn(u64) -> Result<GradCheckReport>;

fn grad_fieldgrid_hexplane(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let mut ps = ParamSet::new();
    let init = Init { offset: 0.0, scale: 1.0 };
    let res = GridResolution { spatial: 3, time: 3 };
    let f = HexPlaneField::new(&mut ps, "h", FieldPurpose::DynamicDensity, 2, res, init, init, &mut r)?;
    let x = ps.add("x", ParamGroup::Field, Tensor::param([4, 4], uniform(&mut r, 16, -1.9, 1.9))?);
    let mut ids = f.param_ids();
    ids.push(x);
    finite_diff_check(&mut ps, &ids, 1e-6, TOL, |g| {
        let c = g.param(x);
        let out = f.eval_graph(g, c);
        Ok(probe(g, out, seed))
    })
}

fn grad_fieldgrid_vm(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let mut ps = ParamSet::new();
    let init = Init { offset: 0.0, scale: 1.0 };
    let f = VmField::new(&mut ps, "vm", FieldPurpose::StaticDensity, 2, 3, init, init, &mut r)?;
    let x = ps.add("x", ParamGroup::Field, Tensor::param([4, 3], uniform(&mut r, 12, -1.9, 1.9))?);
    let mut ids = f.param_ids();
    ids.push(x);
    finite_diff_check(&mut ps, &ids, 1e-6, TOL, |g| {
        let c = g.param(x);
        let out = f.eval_graph(g, c);
        Ok(probe(g, out, seed))
    })
}

fn grad_nets_mlp(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let mut ps = ParamSet::new();
    let mlp = Mlp::new(&mut ps, "m", &[3, 5, 2], Activation::Sigmoid, 1.0, &mut r)?;
    for id in mlp.param_ids() {
        for v in ps.get_mut(id).data_mut() {
            *v += r.random_range(-0.2..0.2);
        }
    }
    let x = ps.add("x", ParamGroup::Mlp, Tensor::param([3, 3], uniform(&mut r, 9, -1.0, 1.0))?);
    let mut ids = mlp.param_ids();
    ids.push(x);
    finite_diff_check(&mut ps, &ids, 1e-6, TOL, |g| {
        let xv = g.param(x);
        let out = mlp.forward(g, xv);
        Ok(probe(g, out, seed))
    })
}

fn grad_nets_encoding(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let x = Tensor::new([2, 3], uniform(&mut r, 6, -1.0, 1.0))?;
    let spec = EncodingSpec { frequencies: 3, include_input: true };
    check_function(&[x], 1e-6, TOL, |g, v| {
        let out = positional_encode(g, v[0], spec);
        Ok(probe(g, out, seed))
    })
}

fn grad_renderer_pipeline(seed: u64) -> Result<GradCheckReport> {
    let mut ps = ParamSet::new();
    let m = tiny_model(&mut ps, seed);
    let mut r = rng(seed);
    let (b, n) = (2, 3);
    let origins = uniform(&mut r, b * 3, -0.3, 0.3);
    let dirs: Vec<f64> = (0..b)
        .flat_map(|_| {
            let d = [r.random_range(-0.5..0.5), r.random_range(-0.5..0.5), 1.0f64];
            let l = (d[0] * d[0] + d[1] * d[1] + 1.0).sqrt();
            d.map(|v| v / l)
        })
        .collect();
    let depths: Vec<f64> = (0..b).flat_map(|_| (0..n).map(|k| 0.3 + 0.5 * k as f64)).collect();
    let times = uniform(&mut r, b, -2.0, 2.0);
    let ids = m.param_ids();
    finite_diff_check(&mut ps, &ids, 1e-6, TOL, |g| {
        let batch = RayBatch {
            origins: g.constant(b, 3, origins.clone()),
            dirs: g.constant(b, 3, dirs.clone()),
            times: times.clone(),
            depths: depths.clone(),
            deltas: vec![0.5; b * n],
            n,
        };
        let out = render_batch(g, &m, &batch, &RenderOptions::default());
        let cat = g.concat_cols(&[out.color, out.inv_depth, out.mask]);
        Ok(probe(g, cat, seed))
    })
}

fn grad_renderer_composite(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let (b, n, k) = (2, 4, 3);
    let sigma = Tensor::new([b * n, 1], uniform(&mut r, b * n, 0.05, 2.0))?;
    let vals = Tensor::new([b * n, k], uniform(&mut r, b * n * k, -1.0, 1.0))?;
    let deltas = uniform(&mut r, b * n, 0.1, 0.6);
    check_function(&[sigma, vals], 1e-6, TOL, |g, v| {
        let (out, _) = composite_graph(g, v[0], v[1], &deltas, n);
        Ok(probe(g, out, seed))
    })
}

fn grad_renderer_contract(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let x = Tensor::new([4, 3], uniform(&mut r, 12, -3.0, 3.0))?;
    check_function(&[x], 1e-6, TOL, |g, v| {
        let out = contract_graph(g, v[0]);
        Ok(probe(g, out, seed))
    })
}

fn grad_flowdyn_expected(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let k = intrinsics();
    let b = 4;
    let points: Vec<f64> = (0..b).flat_map(|_| [r.random_range(-0.5..0.5), r.random_range(-0.5..0.5), r.random_range(2.0..4.0)]).collect();
    let flow = uniform(&mut r, b * 3, -0.1, 0.1);
    let twist = uniform(&mut r, 6, -0.1, 0.1);
    let pixels: Vec<[f64; 2]> = (0..b).map(|_| [r.random_range(0.0..32.0), r.random_range(0.0..30.0)]).collect();
    let target = uniform(&mut r, b * 2, -20.0, 20.0);
    let inputs = [Tensor::new([b, 3], points)?, Tensor::new([b, 3], flow)?, Tensor::new([1, 6], twist)?];
    check_function(&inputs, 1e-6, TOL, |g, v| {
        let pose = se3_exp_graph(g, v[2]);
        let poses = g.gather_rows(pose, &vec![0; b]);
        let e = expected_flow_graph(g, &k, &pixels, v[0], Some(v[1]), poses);
        assert_eq!(e.rows.len(), b);
        let l1 = flow_l1_graph(g, e.flow, &target);
        let p = probe(g, e.flow, seed);
        Ok(g.add(l1, p))
    })
}

fn grad_flowdyn_scene_flow(seed: u64) -> Result<GradCheckReport> {
    let mut ps = ParamSet::new();
    let m = tiny_model(&mut ps, seed);
    let mut r = rng(seed);
    for id in m.flow_head.param_ids() {
        for v in ps.get_mut(id).data_mut() {
            *v = r.random_range(-0.5..0.5);
        }
    }
    let b = 3;
    let x = ps.add("x", ParamGroup::Field, Tensor::param([b, 3], uniform(&mut r, b * 3, -2.0, 2.0))?);
    let times = uniform(&mut r, b, -2.0, 2.0);
    let target = uniform(&mut r, b * 3, -1.0, 1.0);
    let mut ids = m.flow_head.param_ids();
    ids.push(x);
    finite_diff_check(&mut ps, &ids, 1e-6, TOL, |g| {
        let p = g.param(x);
        let (f, bw) = scene_flow(g, &m, p, &times);
        let bn = backward_scene_flow(g, &m, p, &times);
        let cyc = cycle_loss_graph(g, f, bn);
        let adj = adjacent_loss_graph(g, bw, &target);
        let pr = probe(g, f, seed);
        let s = g.add(cyc, adj);
        Ok(g.add(s, pr))
    })
}

fn grad_losses(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let b = 7;
    let color = Tensor::new([b, 3], uniform(&mut r, b * 3, 0.05, 0.95))?;
    let inv = Tensor::new([b, 1], uniform(&mut r, b, 0.2, 2.0))?;
    let mask = Tensor::new([b, 1], uniform(&mut r, b, 0.05, 0.95))?;
    let logit = Tensor::new([1, 1], vec![r.random_range(-2.0..2.0)])?;
    let obs = uniform(&mut r, b * 3, 0.0, 1.0);
    let oracle = uniform(&mut r, b, 0.2, 2.0);
    let labels: Vec<f64> = (0..b).map(|_| f64::from(u8::from(r.random_bool(0.5)))).collect();
    let extra: [f64; 6] = std::array::from_fn(|_| r.random_range(0.2..1.0));
    check_function(&[color, inv, mask, logit], 1e-6, TOL, |g, v| {
        let parts = LossParts {
            rgb: Some(rgb_loss_graph(g, v[0], &obs)?),
            depth: Some(depth_loss_graph(g, v[1], &oracle)?),
            mask: Some(mask_bce_graph(g, v[2], &labels)?),
            tau: Some(tau_loss_graph(g, v[3])),
            ..Default::default()
        };
        total_loss(g, &parts, &LossWeights::default(), extra)
    })
}

fn grad_posegraph_ops(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let k = intrinsics();
    let b = 3;
    let ta = Tensor::new([b, 6], uniform(&mut r, b * 6, -0.8, 0.8))?;
    let tb = Tensor::new([b, 6], uniform(&mut r, b * 6, -0.8, 0.8))?;
    let x: Vec<f64> = (0..b).flat_map(|_| [r.random_range(-0.3..0.3), r.random_range(-0.3..0.3), r.random_range(-0.3..0.3)]).collect();
    check_function(&[ta, tb, Tensor::new([b, 3], x)?], 1e-6, TOL, |g, v| {
        let a = se3_exp_graph(g, v[0]);
        let bb = se3_exp_graph(g, v[1]);
        let c = compose_graph(g, a, bb);
        let p = apply_graph(g, c, v[2], ApplyKind::Point);
        let d = apply_graph(g, c, v[2], ApplyKind::Direction);
        let q = apply_graph(g, a, v[2], ApplyKind::InversePoint);
        // shift in front of the camera before projecting
        let ahead = g.constant(b, 3, [0.0, 0.0, 4.0].repeat(b));
        let front = g.add(q, ahead);
        let uv = project_graph(g, front, &k);
        let cat = g.concat_cols(&[c, p, d]);
        let s1 = probe(g, cat, seed);
        let s2 = probe(g, uv, seed + 1);
        let s2 = g.scale(s2, 0.01);
        Ok(g.add(s1, s2))
    })
}

fn grad_posegraph_render(seed: u64) -> Result<GradCheckReport> {
    let mut ps = ParamSet::new();
    let m = tiny_model(&mut ps, seed);
    let mut set = PoseSet::learnable(&mut ps, 2)?;
    set.add_frame(&mut ps, 0)?;
    set.add_frame(&mut ps, 1)?;
    let mut r = rng(seed);
    for v in &mut ps.get_mut(set.twists).data_mut()[6..] {
        *v = r.random_range(-0.2..0.2);
    }
    let (rays, n) = (4, 3);
    let frames: Vec<usize> = (0..rays).map(|i| i % 2).collect();
    let cam: Vec<f64> = (0..rays)
        .flat_map(|_| {
            let d = [r.random_range(-0.4..0.4), r.random_range(-0.4..0.4), 1.0f64];
            let l = (d[0] * d[0] + d[1] * d[1] + 1.0).sqrt();
            d.map(|v| v / l)
        })
        .collect();
    let depths: Vec<f64> = (0..rays).flat_map(|_| (0..n).map(|k| 0.3 + 0.5 * k as f64)).collect();
    let target = uniform(&mut r, rays * 3, 0.0, 1.0);
    let opts = RenderOptions {
        rule: RouteRule::AllDynamic,
        mode: RenderMode::Full,
        weight_threshold: 0.0,
    };
    finite_diff_check(&mut ps, &[set.twists], 1e-6, TOL, |g| {
        let all = set.graph(g);
        let p = g.gather_rows(all, &frames);
        let origins = g.slice_cols(p, 9, 12);
        let c = g.constant(rays, 3, cam.clone());
        let dirs = apply_graph(g, p, c, ApplyKind::Direction);
        let batch = RayBatch {
            origins,
            dirs,
            times: vec![0.5; rays],
            depths: depths.clone(),
            deltas: vec![0.5; rays * n],
            n,
        };
        let out = render_batch(g, &m, &batch, &opts);
        rgb_loss_graph(g, out.color, &target)
    })
}

fn criterion_1() -> Outcome {
    let suite: [(&str, Check); 12] = [
        ("fieldgrid/hexplane", grad_fieldgrid_hexplane),
        ("fieldgrid/vm", grad_fieldgrid_vm),
        ("nets/mlp", grad_nets_mlp),
        ("nets/encoding", grad_nets_encoding),
        ("renderer/pipeline", grad_renderer_pipeline),
        ("renderer/composite", grad_renderer_composite),
        ("renderer/contract", grad_renderer_contract),
        ("flowdyn/expected-flow", grad_flowdyn_expected),
        ("flowdyn/scene-flow", grad_flowdyn_scene_flow),
        ("losses/total", grad_losses),
        ("posegraph/ops", grad_posegraph_ops),
        ("posegraph/render", grad_posegraph_render),
    ];
    let start = Instant::now();
    let mut failures = Vec::new();
    let mut worst = 0.0f64;
    for (name, check) in suite {
        for seed in 0..SEEDS {
            match check(seed) {
                Ok(rep) => {
                    worst = rep.inputs.iter().map(|i| i.max_rel_error).fold(worst, f64::max);
                    if !rep.passed() {
                        failures.push(format!("{name} seed {seed}"));
                    }
                }
                Err(e) => failures.push(format!("{name} seed {seed}: {e}")),
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = failures.is_empty() && secs < 120.0;
    outcome(pass, format!("12 checks x {SEEDS} seeds, worst rel err {worst:.2e}, {secs:.1}s, failures {failures:?}"))
}

fn closed_form_composite() -> f64 {
    let ln2 = std::f64::consts::LN_2;
    // channels: r, g, b, ray distance, dynamic probability
    let two = composite(&[ln2, ln2], &[1.0, 1.0], &[1.0, 1.0, 1.0, 2.0, 0.9, 0.5, 0.5, 0.5, 3.0, 0.2], 5, 2);
    let mut err = 0.0f64;
    for (got, want) in two.weights.iter().zip([0.5, 0.25]) {
        err = err.max((got - want).abs());
    }
    for (got, want) in two.out.iter().zip([0.625, 0.625, 0.625, 1.75, 0.5]) {
        err = err.max((got - want).abs());
    }
    let opaque = composite(&[20.0, 3.0], &[1.0, 1.0], &[0.3, 0.6, 0.9, 1.5, 0.8, 0.0, 0.0, 0.0, 4.0, 0.1], 5, 2);
    for (got, want) in opaque.out.iter().zip([0.3, 0.6, 0.9, 1.5, 0.8]) {
        err = err.max((got - want).abs());
    }
    err
}

fn hexplane_dense(ps: &ParamSet, f: &HexPlaneField, p: [f64; 4]) -> Vec<f64> {
    let n = [f.resolution.spatial, f.resolution.spatial, f.resolution.spatial, f.resolution.time];
    let mut out = Vec::new();
    for (a, b) in &f.pairs {
        for r in 0..f.rank {
            let at = |pl: &FeaturePlane, idx: [usize; 4]| pl.data(ps)[(idx[pl.axes.0.column()] * pl.cols + idx[pl.axes.1.column()]) * pl.rank + r];
            out.push(multilinear(&n, &p, |idx| at(a, [idx[0], idx[1], idx[2], idx[3]]) * at(b, [idx[0], idx[1], idx[2], idx[3]])));
        }
    }
    out
}

fn vm_dense(ps: &ParamSet, f: &VmField, p: [f64; 3]) -> Vec<f64> {
    let n = [f.resolution; 3];
    let mut out = Vec::new();
    for (v, m) in &f.triples {
        for r in 0..f.rank {
            out.push(multilinear(&n, &p, |idx| {
                let line = v.data(ps)[idx[v.axis.column()] * v.rank + r];
                let plane = m.data(ps)[(idx[m.axes.0.column()] * m.cols + idx[m.axes.1.column()]) * m.rank + r];
                line * plane
            }));
        }
    }
    out
}

/// Interpolate a dense node tensor with `n[d]` nodes spanning [-2, 2] per axis.
fn multilinear(n: &[usize], p: &[f64], node: impl Fn(&[usize]) -> f64) -> f64 {
    let dims = n.len();
    let mut lo = vec![0usize; dims];
    let mut fr = vec![0.0; dims];
    for d in 0..dims {
        let pos = ((p[d] + 2.0) / 4.0 * (n[d] - 1) as f64).clamp(0.0, (n[d] - 1) as f64);
        lo[d] = (pos.floor() as usize).min(n[d] - 2);
        fr[d] = pos - lo[d] as f64;
    }
    let mut acc = 0.0;
    for corner in 0..1u32 << dims {
        let mut idx = lo.clone();
        let mut w = 1.0;
        for d in 0..dims {
            if corner >> d & 1 == 1 {
                idx[d] += 1;
                w *= fr[d];
            } else {
                w *= 1.0 - fr[d];
            }
        }
        acc += w * node(&idx);
    }
    acc
}

fn criterion_2() -> Outcome {
    let render_err = closed_form_composite();
    let init = Init { offset: 0.0, scale: 1.0 };
    let mut grid_err = 0.0f64;
    for (seed, spatial, time) in [(1, 2, 2), (2, 3, 3), (3, 3, 2)] {
        let mut r = rng(seed);
        let mut ps = ParamSet::new();
        let res = GridResolution { spatial, time };
        let h = HexPlaneField::new(&mut ps, "h", FieldPurpose::DynamicAppearance, 2, res, init, init, &mut r).unwrap();
        let v = VmField::new(&mut ps, "v", FieldPurpose::StaticAppearance, 2, spatial, init, init, &mut r).unwrap();
        for _ in 0..300 {
            let p: [f64; 4] = std::array::from_fn(|_| r.random_range(-2.0..2.0));
            for (a, b) in h.eval(&ps, p).iter().zip(hexplane_dense(&ps, &h, p)) {
                grid_err = grid_err.max((a - b).abs());
            }
            let q = [p[0], p[1], p[2]];
            for (a, b) in v.eval(&ps, q).iter().zip(vm_dense(&ps, &v, q)) {
                grid_err = grid_err.max((a - b).abs());
            }
        }
    }
    outcome(
        render_err <= 1e-8 && grid_err <= 1e-10,
        format!("composite closed forms max err {render_err:.1e}, dense grid oracle max err {grid_err:.1e}"),
    )
}

fn bundle(name: &str, seed: u64) -> SceneBundle {
    generate(&standard_scene(name, seed).unwrap()).unwrap()
}

/// Desk-scale training setup shared by the reconstruction criteria.
fn desk_config(iterations: u64, seed: u64) -> RunConfig {
    let mut c = RunConfig::default();
    c.seed = seed;
    c.train.iterations = iterations;
    c.train.samples = 32;
    c.train.batch_rays = 256;
    c.train.upsample_at = vec![iterations / 3, 2 * iterations / 3];
    c.train.checkpoint_every = 0;
    c.model.spatial_resolution = 16;
    c.model.rank_density = 4;
    c.model.rank_appearance = 6;
    c.model.rank_separation = 2;
    c.model.heads = HeadWidths {
        mask: vec![32],
        view: vec![16],
        color: vec![32, 32],
        flow: vec![32, 32],
    };
    c.priors.every = iterations / 3;
    c
}

/// Free-pose variant: every frame trains, poses start unknown.
fn free_config(iterations: u64, seed: u64, flow_constraint: bool) -> RunConfig {
    let mut c = desk_config(iterations, seed);
    c.poses.mode = PoseMode::Free;
    c.train.holdout_every = 0;
    c.train.lr_pose = FREE_LR_POSE;
    c.poses.add_every = FREE_ADD_EVERY;
    c.ablation.flow_constraint = flow_constraint;
    c
}

const ORACLE_ITERS: u64 = 1500;
const FREE_ITERS: u64 = 1500;
const FREE_LR_POSE: f64 = 2e-3;
const FREE_ADD_EVERY: u64 = 40;

fn train(config: RunConfig, bundle: SceneBundle) -> Trainer {
    let mut t = Trainer::new(config, bundle).unwrap();
    while t.iteration < t.config.train.iterations {
        t.step().unwrap();
    }
    t
}

/// Mean held-out PSNR and mask IoU.
fn held_out_scores(t: &Trainer) -> (f64, f64) {
    let frames = t.held_out_frames();
    let (mut p, mut m) = (0.0, 0.0);
    for &q in &frames {
        let f = t.render_frame(q, RenderMode::Full).unwrap();
        let gt = &t.bundle.frames[q];
        p += psnr(&f.rgb, &gt.image);
        let pred: Vec<bool> = f.mask.iter().map(|&v| v > 0.5).collect();
        m += iou(&pred, &gt.mask);
    }
    let n = frames.len() as f64;
    (p / n, m / n)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let t = train(desk_config(ORACLE_ITERS, 0), bundle("dyn-sphere-64", 0));
    let (p, m) = held_out_scores(&t);
    let secs = start.elapsed().as_secs_f64();
    outcome(
        p >= 25.0 && m >= 0.7 && secs <= 900.0,
        format!("{ORACLE_ITERS} iterations, held-out PSNR {p:.2} dB, mask IoU {m:.3}, {secs:.0}s"),
    )
}

fn trajectory_length(t: &Trainer) -> f64 {
    t.bundle.poses().windows(2).map(|w| (w[1].t - w[0].t).norm()).sum()
}

fn criterion_4() -> Outcome {
    let b = bundle("dyn-sphere-64", 0);
    let (mut with, mut without) = (Vec::new(), Vec::new());
    let mut length = 0.0;
    for seed in 0..5 {
        let t = train(free_config(FREE_ITERS, seed, true), b.clone());
        length = trajectory_length(&t);
        with.push(planefield::posegraph::ate_rte(&t.estimated_trajectory(), &b.poses()).unwrap().ate);
        let t = train(free_config(FREE_ITERS, seed, false), b.clone());
        without.push(planefield::posegraph::ate_rte(&t.estimated_trajectory(), &b.poses()).unwrap().ate);
    }
    let worst = with.iter().copied().fold(0.0, f64::max);
    let (mw, mo) = (median(with.clone()), median(without.clone()));
    outcome(
        worst <= 0.02 * length && mw < mo,
        format!("trajectory length {length:.3}, ATE with flow {with:.4?} (median {mw:.4}), without {without:.4?} (median {mo:.4})"),
    )
}

fn criterion_5() -> Outcome {
    let spec = standard_scene("occlusion-64", 0).unwrap();
    let b = generate(&spec).unwrap();
    let full = train(desk_config(ORACLE_ITERS, 0), b.clone());
    let mut unified = desk_config(ORACLE_ITERS, 0);
    unified.ablation.routing = RouteRule::AllDynamic;
    let unified = train(unified, b.clone());
    let (pf, _) = held_out_scores(&full);
    let (pu, _) = held_out_scores(&unified);

    let background = static_background(&spec).unwrap();
    let (mut filled, mut total) = (0usize, 0usize);
    for q in (0..b.frames.len()).step_by(2) {
        let f = full.render_frame(q, RenderMode::StaticOnly).unwrap();
        for (i, &dynamic) in b.frames[q].mask.iter().enumerate() {
            if !dynamic {
                continue;
            }
            total += 1;
            let err = (0..3).map(|c| (f.rgb[i * 3 + c] - background[q][i * 3 + c]).abs()).fold(0.0, f64::max);
            filled += usize::from(err <= 0.1);
        }
    }
    let fill = filled as f64 / total as f64;
    outcome(
        pf - pu >= 1.0 && fill >= 0.7,
        format!("held-out PSNR full {pf:.2} dB vs unified {pu:.2} dB, occluded background filled {:.1}% of {total}", 100.0 * fill),
    )
}

fn criterion_6() -> Outcome {
    let b = bundle("dyn-sphere-64", 0);
    let (mut with, mut without) = (Vec::new(), Vec::new());
    // the full pose-free system, scored on its held-out frames
    let arm = |seed: u64, upsampling: bool| {
        let mut c = free_config(FREE_ITERS, seed, true);
        c.train.holdout_every = RunConfig::default().train.holdout_every;
        c.ablation.upsampling = upsampling;
        c
    };
    for seed in 0..5 {
        with.push(held_out_scores(&train(arm(seed, true), b.clone())).0);
        without.push(held_out_scores(&train(arm(seed, false), b.clone())).0);
    }
    let (mw, mo) = (median(with.clone()), median(without.clone()));
    outcome(mw > mo, format!("held-out PSNR with upsampling {with:.2?} (median {mw:.2}), without {without:.2?} (median {mo:.2})"))
}

fn criterion_7() -> Outcome {
    let t = {
        let mut t = Trainer::new(desk_config(ORACLE_ITERS, 0), bundle("static-64", 0)).unwrap();
        let mut tail = Vec::new();
        while t.iteration < t.config.train.iterations {
            let row = t.step().unwrap();
            if t.iteration > ORACLE_ITERS - 200 {
                tail.push((row.terms[0], row.terms[4]));
            }
        }
        (t, tail)
    };
    let (t, tail) = t;
    let n = tail.len() as f64;
    let rgb = tail.iter().map(|r| r.0).sum::<f64>() / n;
    let adjacent = tail.iter().map(|r| r.1).sum::<f64>() / n;
    let mut mask = 0.0;
    let frames = t.training_frames();
    for &q in &frames {
        let f = t.render_frame(q, RenderMode::Full).unwrap();
        mask += f.mask.iter().sum::<f64>() / f.mask.len() as f64;
    }
    mask /= frames.len() as f64;
    outcome(
        mask <= 0.1 && adjacent <= 2.0 * rgb,
        format!("mean mask {mask:.4}, adjacent loss {adjacent:.2e} vs rgb loss {rgb:.2e} over the last 200 iterations"),
    )
}

fn params_equal(a: &ParamSet, b: &ParamSet) -> bool {
    a.len() == b.len()
        && a.ids().zip(b.ids()).all(|(i, j)| {
            let (x, y) = (a.get(i).data(), b.get(j).data());
            x.len() == y.len() && x.iter().zip(y).all(|(u, v)| u.to_bits() == v.to_bits())
        })
}

/// Exact for images, masks, poses and flow; depth within half a 16-bit step.
fn bundle_round_trip_ok(a: &SceneBundle, b: &SceneBundle) -> bool {
    let bits = |f: &Option<Vec<f32>>| f.as_ref().map(|v| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
    a.spec == b.spec
        && a.frames.len() == b.frames.len()
        && a.frames.iter().zip(&b.frames).all(|(x, y)| {
            let max = x.inv_depth.iter().copied().fold(0.0, f64::max);
            x.pose == y.pose
                && x.image == y.image
                && x.mask == y.mask
                && x.occluded_fwd == y.occluded_fwd
                && x.occluded_bwd == y.occluded_bwd
                && bits(&x.flow_fwd) == bits(&y.flow_fwd)
                && bits(&x.flow_bwd) == bits(&y.flow_bwd)
                && x.inv_depth.iter().zip(&y.inv_depth).all(|(u, v)| (u - v).abs() <= 0.5 * max / 65535.0 + 1e-15)
        })
}

fn criterion_8() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = standard_scene("dyn-sphere-64", 3).unwrap();
    spec.frames = 8;
    let b = generate(&spec).unwrap();
    write_bundle(dir.path(), &b).unwrap();
    let bundle_ok = bundle_round_trip_ok(&b, &read_bundle(dir.path()).unwrap());

    let mut c = free_config(40, 5, true);
    c.poses.add_every = 5;
    let a = train(c.clone(), b.clone());
    let again = train(c.clone(), b.clone());
    let rerun_ok = params_equal(&a.params, &again.params);

    // stop half-way, checkpoint, reload, and finish
    let mut half = Trainer::new(c, b.clone()).unwrap();
    for _ in 0..20 {
        half.step().unwrap();
    }
    let path = dir.path().join("checkpoint.bin");
    save_checkpoint(&path, &half).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    let ckpt_ok = params_equal(&loaded.params, &half.params);
    let mut resumed = loaded.into_trainer(b).unwrap();
    while resumed.iteration < resumed.config.train.iterations {
        resumed.step().unwrap();
    }
    let resume_ok = params_equal(&resumed.params, &a.params);
    outcome(
        bundle_ok && rerun_ok && ckpt_ok && resume_ok,
        format!("bundle round trip {bundle_ok}, seeded rerun identical {rerun_ok}, checkpoint round trip {ckpt_ok}, resumed run identical {resume_ok}"),
    )
}

#[test]
fn acceptance() {
    let criteria: [(u32, fn() -> Outcome); 8] = [
        (1, criterion_1),
        (2, criterion_2),
        (3, criterion_3),
        (4, criterion_4),
        (5, criterion_5),
        (6, criterion_6),
        (7, criterion_7),
        (8, criterion_8),
    ];
    let only: Option<Vec<u32>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|v| v.trim().parse().ok()).collect());
    let mut failed = Vec::new();
    for (n, run) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&n)) {
            continue;
        }
        let start = Instant::now();
        let o = run();
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        // straight to stdout so the line shows even when the harness captures output
        let line = format!("criterion {n}: {verdict} ({:.0}s) {}\n", start.elapsed().as_secs_f64(), o.detail);
        let mut out = std::io::stdout().lock();
        out.write_all(line.as_bytes()).unwrap();
        out.flush().unwrap();
        if !o.pass {
            failed.push(n);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
