use crate::diffcore::{BackwardCtx, CustomOp, Graph, Var};

/// Result of compositing `B` rays of `n` samples each.
#[derive(Clone, Debug, PartialEq)]
pub struct Composite {
    /// `[B, K]` weighted sums of the sample values.
    pub out: Vec<f64>,
    /// `w_i = T_i (1 - exp(-sigma_i delta_i))`.
    pub weights: Vec<f64>,
    /// `T_i`, transmittance before sample `i`.
    pub transmittance: Vec<f64>,
}

/// Alpha-composite `k` value channels along consecutive runs of `n`
/// samples.
pub fn composite(sigmas: &[f64], deltas: &[f64], values: &[f64], k: usize, n: usize) -> Composite {
    let m = sigmas.len();
    assert!(n > 0 && m % n == 0, "sample count not a multiple of {n}");
    assert_eq!(deltas.len(), m);
    assert_eq!(values.len(), m * k);
    let b = m / n;
    let mut out = vec![0.0; b * k];
    let mut weights = vec![0.0; m];
    let mut transmittance = vec![0.0; m];
    for r in 0..b {
        let mut t = 1.0;
        for i in r * n..(r + 1) * n {
            let e = (-sigmas[i] * deltas[i]).exp();
            let w = t * (1.0 - e);
            transmittance[i] = t;
            weights[i] = w;
            for c in 0..k {
                out[r * k + c] += w * values[i * k + c];
            }
            t *= e;
        }
    }
    Composite {
        out,
        weights,
        transmittance,
    }
}

struct CompositeOp {
    deltas: Vec<f64>,
    weights: Vec<f64>,
    transmittance: Vec<f64>,
    n: usize,
    k: usize,
}

impl CustomOp for CompositeOp {
    fn name(&self) -> &'static str {
        "composite"
    }

    fn backward(&self, ctx: &BackwardCtx<'_>) -> Vec<Option<Vec<f64>>> {
        let (sig, vals, g) = (ctx.inputs[0], ctx.inputs[1], ctx.grad_output);
        let (n, k) = (self.n, self.k);
        let m = sig.len();
        let mut d_sig = ctx.needs[0].then(|| vec![0.0; m]);
        let mut d_val = ctx.needs[1].then(|| vec![0.0; m * k]);
        for r in 0..m / n {
            let gr = &g[r * k..(r + 1) * k];
            // suffix sum over j > i of w_j <g, v_j>
            let mut suffix = 0.0;
            for i in (r * n..(r + 1) * n).rev() {
                let gv: f64 = (0..k).map(|c| gr[c] * vals[i * k + c]).sum();
                if let Some(ds) = d_sig.as_mut() {
                    let t_next = self.transmittance[i] - self.weights[i];
                    ds[i] = self.deltas[i] * (t_next * gv - suffix);
                }
                if let Some(dv) = d_val.as_mut() {
                    for c in 0..k {
                        dv[i * k + c] = self.weights[i] * gr[c];
                    }
                }
                suffix += self.weights[i] * gv;
            }
        }
        vec![d_sig, d_val]
    }
}

/// Tape version of [`composite`]: `sigma` is `[M, 1]`, `values` `[M, K]`;
/// returns the `[B, K]` node and the per-sample weights.
pub fn composite_graph(g: &mut Graph<'_>, sigma: Var, values: Var, deltas: &[f64], n: usize) -> (Var, Vec<f64>) {
    let (m, one) = g.shape(sigma);
    assert_eq!(one, 1, "sigma must be a column");
    let (mv, k) = g.shape(values);
    assert_eq!(m, mv, "sigma/value row mismatch");
    let c = composite(g.value(sigma), deltas, g.value(values), k, n);
    let weights = c.weights.clone();
    let op = CompositeOp {
        deltas: deltas.to_vec(),
        weights: c.weights,
        transmittance: c.transmittance,
        n,
        k,
    };
    let out = g.custom(&[sigma, values], m / n, k, c.out, op);
    (out, weights)
}
