use super::CameraIntrinsics;
use crate::diffcore::{BackwardCtx, CustomOp, Graph, Var};

type M3 = [[f64; 3]; 3];

fn skew(w: [f64; 3]) -> M3 {
    [[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]]
}

fn mm(a: &M3, b: &M3) -> M3 {
    std::array::from_fn(|i| std::array::from_fn(|j| (0..3).map(|k| a[i][k] * b[k][j]).sum()))
}

fn mv(a: &M3, x: [f64; 3]) -> [f64; 3] {
    std::array::from_fn(|i| (0..3).map(|k| a[i][k] * x[k]).sum())
}

fn mtv(a: &M3, x: [f64; 3]) -> [f64; 3] {
    std::array::from_fn(|i| (0..3).map(|k| a[k][i] * x[k]).sum())
}

fn lin(terms: &[(f64, &M3)]) -> M3 {
    std::array::from_fn(|i| std::array::from_fn(|j| terms.iter().map(|(c, m)| c * m[i][j]).sum()))
}

fn rows3(v: &[f64]) -> M3 {
    std::array::from_fn(|i| std::array::from_fn(|j| v[i * 3 + j]))
}

const EYE: M3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

/// `A = sin θ/θ`, `B = (1 - cos θ)/θ²`, `C = (θ - sin θ)/θ³` and their
/// derivatives with respect to `s = θ²`.
fn coefficients(s: f64) -> ([f64; 3], [f64; 3]) {
    if s < 1e-2 {
        let a = 1.0 - s / 6.0 * (1.0 - s / 20.0 * (1.0 - s / 42.0 * (1.0 - s / 72.0)));
        let b = 0.5 - s / 24.0 + s * s / 720.0 - s * s * s / 40320.0 + s.powi(4) / 3628800.0;
        let c = 1.0 / 6.0 - s / 120.0 + s * s / 5040.0 - s * s * s / 362880.0 + s.powi(4) / 39916800.0;
        let da = -1.0 / 6.0 + s / 60.0 - s * s / 1680.0 + s * s * s / 90720.0;
        let db = -1.0 / 24.0 + s / 360.0 - s * s / 13440.0 + s * s * s / 907200.0;
        let dc = -1.0 / 120.0 + s / 2520.0 - s * s / 120960.0 + s * s * s / 9979200.0;
        return ([a, b, c], [da, db, dc]);
    }
    let t = s.sqrt();
    let (sn, cs) = t.sin_cos();
    let a = sn / t;
    let b = (1.0 - cs) / s;
    let c = (t - sn) / (s * t);
    let da = (t * cs - sn) / (2.0 * s * t);
    let db = (t * sn - 2.0 * (1.0 - cs)) / (2.0 * s * s);
    let dc = ((1.0 - cs) * t - 3.0 * (t - sn)) / (2.0 * s * s * t);
    ([a, b, c], [da, db, dc])
}

struct Exp;

impl CustomOp for Exp {
    fn name(&self) -> &'static str {
        "se3_exp"
    }

    fn backward(&self, ctx: &BackwardCtx<'_>) -> Vec<Option<Vec<f64>>> {
        let (x, g) = (ctx.inputs[0], ctx.grad_output);
        let mut dx = vec![0.0; x.len()];
        for (k, (xi, gr)) in x.chunks_exact(6).zip(g.chunks_exact(12)).enumerate() {
            let w = [xi[0], xi[1], xi[2]];
            let u = [xi[3], xi[4], xi[5]];
            let s = w[0] * w[0] + w[1] * w[1] + w[2] * w[2];
            let ([a, b, c], [da, db, dc]) = coefficients(s);
            let wx = skew(w);
            let wx2 = mm(&wx, &wx);
            let gr_r = rows3(&gr[..9]);
            let gt = [gr[9], gr[10], gr[11]];
            let v = lin(&[(1.0, &EYE), (b, &wx), (c, &wx2)]);
            let du = mtv(&v, gt);
            let out = &mut dx[k * 6..k * 6 + 6];
            out[3..].copy_from_slice(&du);
            for (i, o) in out.iter_mut().take(3).enumerate() {
                let mut e = [0.0; 3];
                e[i] = 1.0;
                let ex = skew(e);
                let sym = lin(&[(1.0, &mm(&ex, &wx)), (1.0, &mm(&wx, &ex))]);
                let two = 2.0 * w[i];
                let dr = lin(&[(da * two, &wx), (a, &ex), (db * two, &wx2), (b, &sym)]);
                let dv = lin(&[(db * two, &wx), (b, &ex), (dc * two, &wx2), (c, &sym)]);
                let dvu = mv(&dv, u);
                let mut acc = 0.0;
                for p in 0..3 {
                    for q in 0..3 {
                        acc += gr_r[p][q] * dr[p][q];
                    }
                    acc += gt[p] * dvu[p];
                }
                *o = acc;
            }
        }
        vec![Some(dx)]
    }
}

/// Row-wise exponential map of `[K, 6]` twists `(omega, u)` to `[K, 12]`
/// rigid transforms laid out as row-major `R` followed by `t`.
pub fn se3_exp_graph(g: &mut Graph<'_>, twists: Var) -> Var {
    let (k, c) = g.shape(twists);
    assert_eq!(c, 6, "twists must have 6 columns");
    let mut out = Vec::with_capacity(k * 12);
    for xi in g.value(twists).chunks_exact(6) {
        let w = [xi[0], xi[1], xi[2]];
        let s = w[0] * w[0] + w[1] * w[1] + w[2] * w[2];
        let ([a, b, c], _) = coefficients(s);
        let wx = skew(w);
        let wx2 = mm(&wx, &wx);
        let r = lin(&[(1.0, &EYE), (a, &wx), (b, &wx2)]);
        let v = lin(&[(1.0, &EYE), (b, &wx), (c, &wx2)]);
        let t = mv(&v, [xi[3], xi[4], xi[5]]);
        out.extend(r.iter().flatten());
        out.extend(t);
    }
    g.custom(&[twists], k, 12, out, Exp)
}

struct Compose;

impl CustomOp for Compose {
    fn name(&self) -> &'static str {
        "se3_compose"
    }

    fn backward(&self, ctx: &BackwardCtx<'_>) -> Vec<Option<Vec<f64>>> {
        let (a, b, g) = (ctx.inputs[0], ctx.inputs[1], ctx.grad_output);
        let mut da = vec![0.0; a.len()];
        let mut db = vec![0.0; b.len()];
        for k in 0..g.len() / 12 {
            let ra = rows3(&a[k * 12..]);
            let (rb, tb) = (rows3(&b[k * 12..]), &b[k * 12 + 9..k * 12 + 12]);
            let gr = rows3(&g[k * 12..]);
            let gt = [g[k * 12 + 9], g[k * 12 + 10], g[k * 12 + 11]];
            // R = Ra Rb, t = Ra tb + ta
            for i in 0..3 {
                for j in 0..3 {
                    da[k * 12 + i * 3 + j] = (0..3).map(|m| gr[i][m] * rb[j][m]).sum::<f64>() + gt[i] * tb[j];
                    db[k * 12 + i * 3 + j] = (0..3).map(|m| ra[m][i] * gr[m][j]).sum();
                }
            }
            da[k * 12 + 9..k * 12 + 12].copy_from_slice(&gt);
            db[k * 12 + 9..k * 12 + 12].copy_from_slice(&mtv(&ra, gt));
        }
        vec![ctx.needs[0].then_some(da), ctx.needs[1].then_some(db)]
    }
}

/// Row-wise `a ∘ b` of `[K, 12]` transforms.
pub fn compose_graph(g: &mut Graph<'_>, a: Var, b: Var) -> Var {
    let (k, c) = g.shape(a);
    assert_eq!((k, c), g.shape(b), "compose operands must match");
    assert_eq!(c, 12, "transforms must have 12 columns");
    let (va, vb) = (g.value(a), g.value(b));
    let mut out = Vec::with_capacity(k * 12);
    for r in 0..k {
        let ra = rows3(&va[r * 12..]);
        let rb = rows3(&vb[r * 12..]);
        let tb = [vb[r * 12 + 9], vb[r * 12 + 10], vb[r * 12 + 11]];
        let rt = mv(&ra, tb);
        out.extend(mm(&ra, &rb).iter().flatten());
        out.extend((0..3).map(|i| rt[i] + va[r * 12 + 9 + i]));
    }
    g.custom(&[a, b], k, 12, out, Compose)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ApplyKind {
    /// `R x + t`.
    Point,
    /// `R x`.
    Direction,
    /// `Rᵀ (x - t)`.
    InversePoint,
}

struct Apply(ApplyKind);

impl CustomOp for Apply {
    fn name(&self) -> &'static str {
        "rigid_apply"
    }

    fn backward(&self, ctx: &BackwardCtx<'_>) -> Vec<Option<Vec<f64>>> {
        let (p, x, g) = (ctx.inputs[0], ctx.inputs[1], ctx.grad_output);
        let mut dp = vec![0.0; p.len()];
        let mut dx = vec![0.0; x.len()];
        for k in 0..x.len() / 3 {
            let r = rows3(&p[k * 12..]);
            let t = &p[k * 12 + 9..k * 12 + 12];
            let xi = [x[k * 3], x[k * 3 + 1], x[k * 3 + 2]];
            let gi = [g[k * 3], g[k * 3 + 1], g[k * 3 + 2]];
            let dpk = &mut dp[k * 12..k * 12 + 12];
            match self.0 {
                ApplyKind::Point | ApplyKind::Direction => {
                    for i in 0..3 {
                        for j in 0..3 {
                            dpk[i * 3 + j] = gi[i] * xi[j];
                        }
                    }
                    if self.0 == ApplyKind::Point {
                        dpk[9..12].copy_from_slice(&gi);
                    }
                    dx[k * 3..k * 3 + 3].copy_from_slice(&mtv(&r, gi));
                }
                ApplyKind::InversePoint => {
                    let z = [xi[0] - t[0], xi[1] - t[1], xi[2] - t[2]];
                    for j in 0..3 {
                        for i in 0..3 {
                            dpk[j * 3 + i] = z[j] * gi[i];
                        }
                    }
                    let rg = mv(&r, gi);
                    dx[k * 3..k * 3 + 3].copy_from_slice(&rg);
                    for i in 0..3 {
                        dpk[9 + i] = -rg[i];
                    }
                }
            }
        }
        vec![ctx.needs[0].then_some(dp), ctx.needs[1].then_some(dx)]
    }
}

/// Apply `[B, 12]` transforms row by row to `[B, 3]` vectors.
pub fn apply_graph(g: &mut Graph<'_>, poses: Var, x: Var, kind: ApplyKind) -> Var {
    let (b, c) = g.shape(x);
    assert_eq!(c, 3, "points must have 3 columns");
    assert_eq!(g.shape(poses), (b, 12), "one transform per point");
    let (vp, vx) = (g.value(poses), g.value(x));
    let mut out = Vec::with_capacity(b * 3);
    for k in 0..b {
        let r = rows3(&vp[k * 12..]);
        let t = [vp[k * 12 + 9], vp[k * 12 + 10], vp[k * 12 + 11]];
        let xi = [vx[k * 3], vx[k * 3 + 1], vx[k * 3 + 2]];
        let y = match kind {
            ApplyKind::Point => {
                let y = mv(&r, xi);
                [y[0] + t[0], y[1] + t[1], y[2] + t[2]]
            }
            ApplyKind::Direction => mv(&r, xi),
            ApplyKind::InversePoint => mtv(&r, [xi[0] - t[0], xi[1] - t[1], xi[2] - t[2]]),
        };
        out.extend(y);
    }
    g.custom(&[poses, x], b, 3, out, Apply(kind))
}

struct Project {
    fx: f64,
    fy: f64,
}

impl CustomOp for Project {
    fn name(&self) -> &'static str {
        "project"
    }

    fn backward(&self, ctx: &BackwardCtx<'_>) -> Vec<Option<Vec<f64>>> {
        let (x, g) = (ctx.inputs[0], ctx.grad_output);
        let mut dx = vec![0.0; x.len()];
        for k in 0..x.len() / 3 {
            let (px, py, pz) = (x[k * 3], x[k * 3 + 1], x[k * 3 + 2]);
            let (gu, gv) = (g[k * 2], g[k * 2 + 1]);
            dx[k * 3] = gu * self.fx / pz;
            dx[k * 3 + 1] = gv * self.fy / pz;
            dx[k * 3 + 2] = -(gu * self.fx * px + gv * self.fy * py) / (pz * pz);
        }
        vec![Some(dx)]
    }
}

/// Pinhole projection of `[B, 3]` camera-frame points to `[B, 2]` pixels.
/// Callers must exclude rows with non-positive depth.
pub fn project_graph(g: &mut Graph<'_>, x: Var, k: &CameraIntrinsics) -> Var {
    let (b, c) = g.shape(x);
    assert_eq!(c, 3, "points must have 3 columns");
    let out: Vec<f64> = g
        .value(x)
        .chunks_exact(3)
        .flat_map(|p| [k.fx * p[0] / p[2] + k.cx, k.fy * p[1] / p[2] + k.cy])
        .collect();
    g.custom(&[x], b, 2, out, Project { fx: k.fx, fy: k.fy })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::{check_function, Tensor};
    use crate::posegraph::{se3_exp, Rigid};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn weighted_sum(g: &mut Graph<'_>, y: Var, w: &[f64]) -> Var {
        let (r, c) = g.shape(y);
        let k = g.constant(r, c, w.to_vec());
        let p = g.mul(y, k);
        g.sum(p)
    }

    fn rand_vec(rng: &mut ChaCha8Rng, n: usize, s: f64) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-s..s)).collect()
    }

    #[test]
    fn exp_graph_matches_nalgebra_route() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        // includes tiny rotations that take the series branch
        let mut xs = rand_vec(&mut rng, 6 * 40, 2.0);
        xs[..3].copy_from_slice(&[1e-4, -2e-4, 5e-5]);
        xs[6..9].copy_from_slice(&[0.0, 0.0, 0.0]);
        let ps = crate::diffcore::ParamSet::new();
        let mut g = Graph::new(&ps);
        let x = g.constant(40, 6, xs.clone());
        let y = se3_exp_graph(&mut g, x);
        for (xi, row) in xs.chunks_exact(6).zip(g.value(y).chunks_exact(12)) {
            let want = se3_exp(xi.try_into().unwrap()).to_row();
            for (a, b) in row.iter().zip(want) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn series_branch_is_continuous() {
        for s in [0.0099999, 0.01, 0.0100001] {
            let (v, d) = coefficients(s);
            let t = f64::sqrt(s);
            let exact = [t.sin() / t, (1.0 - t.cos()) / s, (t - t.sin()) / (s * t)];
            for i in 0..3 {
                assert!((v[i] - exact[i]).abs() < 1e-13);
            }
            let h = 1e-6;
            let (vp, _) = coefficients(s + h);
            let (vm, _) = coefficients(s - h);
            for i in 0..3 {
                assert!(((vp[i] - vm[i]) / (2.0 * h) - d[i]).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn exp_gradients() {
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut x = rand_vec(&mut rng, 18, 1.5);
            if seed % 4 == 0 {
                // near-zero rotation exercises the series branch
                for v in &mut x[..3] {
                    *v *= 1e-3;
                }
            }
            let w = rand_vec(&mut rng, 36, 1.0);
            let report = check_function(&[Tensor::new([3, 6], x).unwrap()], 1e-5, 1e-3, |g, v| {
                let y = se3_exp_graph(g, v[0]);
                Ok(weighted_sum(g, y, &w))
            })
            .unwrap();
            assert!(report.passed(), "seed {seed}\n{report}");
        }
    }

    fn random_poses(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
        (0..k)
            .flat_map(|_| {
                let xi: [f64; 6] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
                se3_exp(xi).to_row()
            })
            .collect()
    }

    #[test]
    fn compose_and_apply_match_plain() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = random_poses(&mut rng, 5);
        let b = random_poses(&mut rng, 5);
        let x = rand_vec(&mut rng, 15, 3.0);
        let ps = crate::diffcore::ParamSet::new();
        let mut g = Graph::new(&ps);
        let (va, vb, vx) = (g.constant(5, 12, a.clone()), g.constant(5, 12, b.clone()), g.constant(5, 3, x.clone()));
        let c = compose_graph(&mut g, va, vb);
        let kinds = [ApplyKind::Point, ApplyKind::Direction, ApplyKind::InversePoint];
        let outs: Vec<Var> = kinds.iter().map(|&k| apply_graph(&mut g, va, vx, k)).collect();
        for r in 0..5 {
            let (ra, rb) = (Rigid::from_row(&a[r * 12..]), Rigid::from_row(&b[r * 12..]));
            let want = ra.compose(&rb).to_row();
            for (u, v) in g.value(c)[r * 12..r * 12 + 12].iter().zip(want) {
                assert!((u - v).abs() < 1e-12);
            }
            let xi = [x[r * 3], x[r * 3 + 1], x[r * 3 + 2]];
            let wants = [ra.apply(xi), ra.rotate(xi), ra.inverse().apply(xi)];
            for (o, want) in outs.iter().zip(wants) {
                for i in 0..3 {
                    assert!((g.value(*o)[r * 3 + i] - want[i]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn compose_gradients() {
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            // arbitrary matrices: the op is bilinear and must not assume rotations
            let a = rand_vec(&mut rng, 24, 1.0);
            let b = rand_vec(&mut rng, 24, 1.0);
            let w = rand_vec(&mut rng, 24, 1.0);
            let inputs = [Tensor::new([2, 12], a).unwrap(), Tensor::new([2, 12], b).unwrap()];
            let report = check_function(&inputs, 1e-5, 1e-3, |g, v| {
                let y = compose_graph(g, v[0], v[1]);
                Ok(weighted_sum(g, y, &w))
            })
            .unwrap();
            assert!(report.passed(), "seed {seed}\n{report}");
        }
    }

    #[test]
    fn apply_gradients() {
        for kind in [ApplyKind::Point, ApplyKind::Direction, ApplyKind::InversePoint] {
            for seed in 0..20 {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let p = rand_vec(&mut rng, 36, 1.0);
                let x = rand_vec(&mut rng, 9, 2.0);
                let w = rand_vec(&mut rng, 9, 1.0);
                let inputs = [Tensor::new([3, 12], p).unwrap(), Tensor::new([3, 3], x).unwrap()];
                let report = check_function(&inputs, 1e-5, 1e-3, |g, v| {
                    let y = apply_graph(g, v[0], v[1], kind);
                    Ok(weighted_sum(g, y, &w))
                })
                .unwrap();
                assert!(report.passed(), "{kind:?} seed {seed}\n{report}");
            }
        }
    }

    #[test]
    fn project_gradients() {
        let k = CameraIntrinsics {
            fx: 40.0,
            fy: 44.0,
            cx: 16.0,
            cy: 15.0,
            width: 32,
            height: 32,
        };
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<f64> = (0..12)
                .map(|i| if i % 3 == 2 { rng.random_range(0.5..4.0) } else { rng.random_range(-1.0..1.0) })
                .collect();
            let w = rand_vec(&mut rng, 8, 1.0);
            let report = check_function(&[Tensor::new([4, 3], x).unwrap()], 1e-5, 1e-3, |g, v| {
                let y = project_graph(g, v[0], &k);
                Ok(weighted_sum(g, y, &w))
            })
            .unwrap();
            assert!(report.passed(), "seed {seed}\n{report}");
        }
    }
}
