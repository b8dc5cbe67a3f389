use crate::diffcore::{BackwardCtx, CustomOp, Graph, Var};

fn sup_norm(x: &[f64]) -> (f64, usize) {
    let mut best = (0.0, 0);
    for (k, v) in x.iter().enumerate() {
        if v.abs() > best.0 {
            best = (v.abs(), k);
        }
    }
    best
}

/// Sup-norm contraction: identity inside the unit cube, everything else
/// squeezed into the cube of half-width 2.
pub fn contract(x: [f64; 3]) -> [f64; 3] {
    let (m, _) = sup_norm(&x);
    if m <= 1.0 {
        return x;
    }
    let s = (2.0 - 1.0 / m) / m;
    [s * x[0], s * x[1], s * x[2]]
}

struct Contract;

impl CustomOp for Contract {
    fn name(&self) -> &'static str {
        "contract"
    }

    fn backward(&self, ctx: &BackwardCtx<'_>) -> Vec<Option<Vec<f64>>> {
        let (x, g) = (ctx.inputs[0], ctx.grad_output);
        let mut dx = vec![0.0; x.len()];
        for (row, (xr, gr)) in x.chunks_exact(3).zip(g.chunks_exact(3)).enumerate() {
            let (m, k) = sup_norm(xr);
            let d = &mut dx[row * 3..row * 3 + 3];
            if m <= 1.0 {
                d.copy_from_slice(gr);
                continue;
            }
            // y = s(m) x with s = 2/m - 1/m^2
            let s = 2.0 / m - 1.0 / (m * m);
            let ds = -2.0 / (m * m) + 2.0 / (m * m * m);
            let sign = xr[k].signum();
            let gx: f64 = (0..3).map(|i| gr[i] * xr[i]).sum();
            for i in 0..3 {
                d[i] = s * gr[i];
            }
            d[k] += gx * ds * sign;
        }
        vec![Some(dx)]
    }
}

/// Row-wise [`contract`] of a `[M, 3]` node.
pub fn contract_graph(g: &mut Graph<'_>, x: Var) -> Var {
    let (m, c) = g.shape(x);
    assert_eq!(c, 3, "contract expects 3 columns");
    let out: Vec<f64> = g
        .value(x)
        .chunks_exact(3)
        .flat_map(|r| contract([r[0], r[1], r[2]]))
        .collect();
    g.custom(&[x], m, 3, out, Contract)
}
