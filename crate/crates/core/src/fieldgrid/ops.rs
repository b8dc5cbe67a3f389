//! Interpolation kernels and their tape ops.

use super::{locate, Cell};
use crate::diffcore::{BackwardCtx, CustomOp, Graph, Var};

pub(crate) fn bilinear_into(data: &[f64], cols: usize, rank: usize, ca: Cell, cb: Cell, out: &mut [f64]) {
    let (fa, fb) = (ca.frac, cb.frac);
    let w = [(1.0 - fa) * (1.0 - fb), (1.0 - fa) * fb, fa * (1.0 - fb), fa * fb];
    let base = (ca.index * cols + cb.index) * rank;
    let offs = [base, base + rank, base + cols * rank, base + (cols + 1) * rank];
    for (r, o) in out.iter_mut().enumerate() {
        *o = w[0] * data[offs[0] + r] + w[1] * data[offs[1] + r] + w[2] * data[offs[2] + r] + w[3] * data[offs[3] + r];
    }
}

pub(crate) fn linear_into(data: &[f64], rank: usize, c: Cell, out: &mut [f64]) {
    let base = c.index * rank;
    for (r, o) in out.iter_mut().enumerate() {
        *o = (1.0 - c.frac) * data[base + r] + c.frac * data[base + rank + r];
    }
}

struct SamplePlane {
    cols: usize,
    rank: usize,
    coord_cols: usize,
    picks: (usize, usize),
    cells: Vec<(Cell, Cell)>,
}

impl CustomOp for SamplePlane {
    fn name(&self) -> &'static str {
        "sample_plane"
    }

    fn backward(&self, ctx: &BackwardCtx<'_>) -> Vec<Option<Vec<f64>>> {
        let (data, g) = (ctx.inputs[0], ctx.grad_output);
        let rank = self.rank;
        let mut d_data = ctx.needs[0].then(|| vec![0.0; data.len()]);
        let mut d_coords = ctx.needs[1].then(|| vec![0.0; ctx.inputs[1].len()]);
        for (m, &(ca, cb)) in self.cells.iter().enumerate() {
            let (fa, fb) = (ca.frac, cb.frac);
            let base = (ca.index * self.cols + cb.index) * rank;
            let offs = [base, base + rank, base + self.cols * rank, base + (self.cols + 1) * rank];
            let gm = &g[m * rank..(m + 1) * rank];
            if let Some(dd) = d_data.as_mut() {
                let w = [(1.0 - fa) * (1.0 - fb), (1.0 - fa) * fb, fa * (1.0 - fb), fa * fb];
                for k in 0..4 {
                    for r in 0..rank {
                        dd[offs[k] + r] += w[k] * gm[r];
                    }
                }
            }
            if let Some(dc) = d_coords.as_mut() {
                let (mut da, mut db) = (0.0, 0.0);
                for r in 0..rank {
                    let v = [data[offs[0] + r], data[offs[1] + r], data[offs[2] + r], data[offs[3] + r]];
                    da += gm[r] * ((1.0 - fb) * (v[2] - v[0]) + fb * (v[3] - v[1]));
                    db += gm[r] * ((1.0 - fa) * (v[1] - v[0]) + fa * (v[3] - v[2]));
                }
                dc[m * self.coord_cols + self.picks.0] += da * ca.slope;
                dc[m * self.coord_cols + self.picks.1] += db * cb.slope;
            }
        }
        vec![d_data, d_coords]
    }
}

/// Bilinear lookup of every row of `coords` in a `[rows, cols, rank]` plane.
/// Returns `[M, rank]`.
pub(crate) fn sample_plane(
    g: &mut Graph<'_>,
    data: Var,
    (rows, cols, rank): (usize, usize, usize),
    coords: Var,
    picks: (usize, usize),
) -> Var {
    let (m, k) = g.shape(coords);
    assert!(picks.0 < k && picks.1 < k, "coordinate column out of range");
    assert_eq!(g.rows(data) * g.cols(data), rows * cols * rank, "plane size mismatch");
    let cv = g.value(coords);
    let cells: Vec<(Cell, Cell)> = (0..m)
        .map(|i| (locate(cv[i * k + picks.0], rows), locate(cv[i * k + picks.1], cols)))
        .collect();
    let dv = g.value(data);
    let mut out = vec![0.0; m * rank];
    for (i, &(ca, cb)) in cells.iter().enumerate() {
        bilinear_into(dv, cols, rank, ca, cb, &mut out[i * rank..(i + 1) * rank]);
    }
    g.custom(
        &[data, coords],
        m,
        rank,
        out,
        SamplePlane {
            cols,
            rank,
            coord_cols: k,
            picks,
            cells,
        },
    )
}

struct SampleLine {
    rank: usize,
    coord_cols: usize,
    pick: usize,
    cells: Vec<Cell>,
}

impl CustomOp for SampleLine {
    fn name(&self) -> &'static str {
        "sample_line"
    }

    fn backward(&self, ctx: &BackwardCtx<'_>) -> Vec<Option<Vec<f64>>> {
        let (data, g) = (ctx.inputs[0], ctx.grad_output);
        let rank = self.rank;
        let mut d_data = ctx.needs[0].then(|| vec![0.0; data.len()]);
        let mut d_coords = ctx.needs[1].then(|| vec![0.0; ctx.inputs[1].len()]);
        for (m, c) in self.cells.iter().enumerate() {
            let base = c.index * rank;
            let gm = &g[m * rank..(m + 1) * rank];
            if let Some(dd) = d_data.as_mut() {
                for r in 0..rank {
                    dd[base + r] += (1.0 - c.frac) * gm[r];
                    dd[base + rank + r] += c.frac * gm[r];
                }
            }
            if let Some(dc) = d_coords.as_mut() {
                let d: f64 = (0..rank).map(|r| gm[r] * (data[base + rank + r] - data[base + r])).sum();
                dc[m * self.coord_cols + self.pick] += d * c.slope;
            }
        }
        vec![d_data, d_coords]
    }
}

/// Linear lookup in a `[len, rank]` line. Returns `[M, rank]`.
pub(crate) fn sample_line(g: &mut Graph<'_>, data: Var, (len, rank): (usize, usize), coords: Var, pick: usize) -> Var {
    let (m, k) = g.shape(coords);
    assert!(pick < k, "coordinate column out of range");
    assert_eq!(g.rows(data) * g.cols(data), len * rank, "line size mismatch");
    let cv = g.value(coords);
    let cells: Vec<Cell> = (0..m).map(|i| locate(cv[i * k + pick], len)).collect();
    let dv = g.value(data);
    let mut out = vec![0.0; m * rank];
    for (i, &c) in cells.iter().enumerate() {
        linear_into(dv, rank, c, &mut out[i * rank..(i + 1) * rank]);
    }
    g.custom(
        &[data, coords],
        m,
        rank,
        out,
        SampleLine {
            rank,
            coord_cols: k,
            pick,
            cells,
        },
    )
}
