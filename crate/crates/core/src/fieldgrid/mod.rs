//! Factored feature grids: 2-D planes and 1-D lines over `[-2, 2]`, the
//! six-plane space-time field and the vector-matrix static field.
//!
//! Plane data is stored channel-last, `[rows, cols, rank]`, so one bilinear
//! lookup touches four contiguous runs of `rank` values.

mod hexplane;
mod ops;
mod vm;

use std::sync::atomic::{AtomicUsize, Ordering};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{Graph, ParamGroup, ParamId, ParamSet, Tensor, Var};
use crate::error::{Error, Result};

pub use hexplane::HexPlaneField;
pub use vm::VmField;

/// Half-width of the normalized domain on every axis.
pub const DOMAIN: f64 = 2.0;

static CLAMPED_QUERIES: AtomicUsize = AtomicUsize::new(0);

/// Number of out-of-domain queries clamped so far (debug builds only).
pub fn clamped_queries() -> usize {
    CLAMPED_QUERIES.load(Ordering::Relaxed)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Axis {
    X,
    Y,
    Z,
    T,
}

impl Axis {
    /// Column of this axis in an `(x, y, z, t)` coordinate row.
    pub fn column(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
            Axis::T => 3,
        }
    }

    pub fn is_spatial(self) -> bool {
        self != Axis::T
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldPurpose {
    Separation,
    DynamicDensity,
    DynamicAppearance,
    StaticDensity,
    StaticAppearance,
}

/// Node resolution per axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridResolution {
    pub spatial: usize,
    pub time: usize,
}

impl GridResolution {
    pub fn along(&self, axis: Axis) -> usize {
        if axis.is_spatial() {
            self.spatial
        } else {
            self.time
        }
    }
}

/// Initial values: `offset + scale * U(-1, 1)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Init {
    pub offset: f64,
    pub scale: f64,
}

impl Init {
    pub fn fill(&self, n: usize, rng: &mut impl Rng) -> Vec<f64> {
        (0..n)
            .map(|_| self.offset + self.scale * rng.random_range(-1.0..1.0))
            .collect()
    }
}

/// Where a coordinate falls among `n` nodes spanning `[-2, 2]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct Cell {
    pub index: usize,
    pub frac: f64,
    /// d(continuous index)/d(coordinate); zero when clamped.
    pub slope: f64,
}

pub(crate) fn locate(c: f64, n: usize) -> Cell {
    debug_assert!(n >= 2);
    let last = (n - 1) as f64;
    let scale = last / (2.0 * DOMAIN);
    let pos = (c + DOMAIN) * scale;
    let (pos, slope) = if pos < 0.0 || pos > last || !pos.is_finite() {
        if cfg!(debug_assertions) {
            CLAMPED_QUERIES.fetch_add(1, Ordering::Relaxed);
        }
        (if pos > last { last } else { 0.0 }, 0.0)
    } else {
        (pos, scale)
    };
    let index = (pos.floor() as usize).min(n - 2);
    Cell {
        index,
        frac: pos - index as f64,
        slope,
    }
}

/// Coordinate of node `i` among `n`.
pub(crate) fn node_coord(i: usize, n: usize) -> f64 {
    -DOMAIN + 2.0 * DOMAIN * i as f64 / (n - 1) as f64
}

/// A learned `[rows, cols, rank]` feature plane.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeaturePlane {
    /// Row axis first, column axis second.
    pub axes: (Axis, Axis),
    pub rows: usize,
    pub cols: usize,
    pub rank: usize,
    pub param: ParamId,
}

/// The six canonical axis pairs.
pub const CANONICAL_PAIRS: [(Axis, Axis); 6] = [
    (Axis::X, Axis::Y),
    (Axis::X, Axis::Z),
    (Axis::Y, Axis::Z),
    (Axis::X, Axis::T),
    (Axis::Y, Axis::T),
    (Axis::Z, Axis::T),
];

impl FeaturePlane {
    pub fn new(
        params: &mut ParamSet,
        name: impl Into<String>,
        axes: (Axis, Axis),
        rows: usize,
        cols: usize,
        rank: usize,
        data: Vec<f64>,
    ) -> Result<Self> {
        if rows < 2 || cols < 2 {
            return Err(Error::invalid(format!("plane resolution {rows}x{cols} below 2")));
        }
        if !CANONICAL_PAIRS.contains(&axes) {
            return Err(Error::invalid(format!("non-canonical plane axes {axes:?}")));
        }
        let tensor = Tensor::param([rows, cols, rank], data)?;
        let param = params.add(name, ParamGroup::Field, tensor);
        Ok(Self {
            axes,
            rows,
            cols,
            rank,
            param,
        })
    }

    pub fn data<'a>(&self, params: &'a ParamSet) -> &'a [f64] {
        params.get(self.param).data()
    }

    /// Bilinear blend of the four enclosing nodes, one value per channel.
    /// `a` indexes rows, `b` columns.
    pub fn sample(&self, params: &ParamSet, a: f64, b: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.rank];
        let ca = locate(a, self.rows);
        let cb = locate(b, self.cols);
        ops::bilinear_into(self.data(params), self.cols, self.rank, ca, cb, &mut out);
        out
    }

    /// Batched sampling. Row `m` of `coords` supplies the query; `cols`
    /// select the row- and column-axis coordinates.
    pub fn sample_graph(&self, g: &mut Graph<'_>, coords: Var, cols: (usize, usize)) -> Var {
        let data = g.param(self.param);
        ops::sample_plane(g, data, (self.rows, self.cols, self.rank), coords, cols)
    }

    /// Resample to a finer grid by bilinear interpolation of the current
    /// data. The parameter keeps its id; optimizer state must be reset by
    /// the caller.
    pub fn upsample(&mut self, params: &mut ParamSet, rows: usize, cols: usize) -> Result<()> {
        if rows < self.rows || cols < self.cols {
            return Err(Error::invalid(format!(
                "cannot downsample plane {}x{} to {rows}x{cols}",
                self.rows, self.cols
            )));
        }
        if (rows, cols) == (self.rows, self.cols) {
            return Ok(());
        }
        let mut out = Vec::with_capacity(rows * cols * self.rank);
        let mut buf = vec![0.0; self.rank];
        {
            let data = self.data(params);
            for i in 0..rows {
                let ca = locate(node_coord(i, rows), self.rows);
                for j in 0..cols {
                    let cb = locate(node_coord(j, cols), self.cols);
                    ops::bilinear_into(data, self.cols, self.rank, ca, cb, &mut buf);
                    out.extend_from_slice(&buf);
                }
            }
        }
        params.replace(self.param, Tensor::new([rows, cols, self.rank], out)?);
        self.rows = rows;
        self.cols = cols;
        Ok(())
    }
}

/// A learned `[len, rank]` feature line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub axis: Axis,
    pub len: usize,
    pub rank: usize,
    pub param: ParamId,
}

impl FeatureVector {
    pub fn new(
        params: &mut ParamSet,
        name: impl Into<String>,
        axis: Axis,
        len: usize,
        rank: usize,
        data: Vec<f64>,
    ) -> Result<Self> {
        if len < 2 {
            return Err(Error::invalid(format!("vector resolution {len} below 2")));
        }
        if !axis.is_spatial() {
            return Err(Error::invalid("feature vectors are spatial"));
        }
        let tensor = Tensor::param([len, rank], data)?;
        let param = params.add(name, ParamGroup::Field, tensor);
        Ok(Self {
            axis,
            len,
            rank,
            param,
        })
    }

    pub fn data<'a>(&self, params: &'a ParamSet) -> &'a [f64] {
        params.get(self.param).data()
    }

    pub fn sample(&self, params: &ParamSet, u: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.rank];
        ops::linear_into(self.data(params), self.rank, locate(u, self.len), &mut out);
        out
    }

    pub fn sample_graph(&self, g: &mut Graph<'_>, coords: Var, col: usize) -> Var {
        let data = g.param(self.param);
        ops::sample_line(g, data, (self.len, self.rank), coords, col)
    }

    pub fn upsample(&mut self, params: &mut ParamSet, len: usize) -> Result<()> {
        if len < self.len {
            return Err(Error::invalid(format!(
                "cannot downsample vector {} to {len}",
                self.len
            )));
        }
        if len == self.len {
            return Ok(());
        }
        let mut out = Vec::with_capacity(len * self.rank);
        let mut buf = vec![0.0; self.rank];
        {
            let data = self.data(params);
            for i in 0..len {
                ops::linear_into(data, self.rank, locate(node_coord(i, len), self.len), &mut buf);
                out.extend_from_slice(&buf);
            }
        }
        params.replace(self.param, Tensor::new([len, self.rank], out)?);
        self.len = len;
        Ok(())
    }
}

/// Upsampled spatial resolution for a "×2" step: cell count doubles so old
/// nodes stay nodes.
pub fn doubled(n: usize) -> usize {
    2 * (n - 1) + 1
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::check_function;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_plane(rows: usize, cols: usize, rank: usize, seed: u64) -> (ParamSet, FeaturePlane) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParamSet::new();
        let data = Init { offset: 0.0, scale: 1.0 }.fill(rows * cols * rank, &mut rng);
        let p = FeaturePlane::new(&mut ps, "p", (Axis::X, Axis::Y), rows, cols, rank, data).unwrap();
        (ps, p)
    }

    #[test]
    fn node_query_returns_stored_value() {
        let (ps, p) = random_plane(4, 5, 3, 1);
        let data = p.data(&ps).to_vec();
        for i in 0..4 {
            for j in 0..5 {
                let v = p.sample(&ps, node_coord(i, 4), node_coord(j, 5));
                let stored = &data[(i * 5 + j) * 3..(i * 5 + j + 1) * 3];
                for (a, b) in v.iter().zip(stored) {
                    assert!((a - b).abs() < 1e-14, "node ({i},{j})");
                }
            }
        }
    }

    #[test]
    fn cell_center_is_corner_mean() {
        let (ps, p) = random_plane(3, 3, 2, 2);
        let d = p.data(&ps);
        let c = 0.5 * (node_coord(0, 3) + node_coord(1, 3));
        let v = p.sample(&ps, c, c);
        for r in 0..2 {
            let mean = (d[r] + d[3 * 2 + r] + d[2 + r] + d[4 * 2 + r]) / 4.0;
            assert!((v[r] - mean).abs() < 1e-14);
        }
    }

    #[test]
    fn constant_plane_is_constant() {
        let mut ps = ParamSet::new();
        let p = FeaturePlane::new(&mut ps, "p", (Axis::Y, Axis::T), 6, 4, 2, vec![0.37; 48]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..50 {
            let v = p.sample(&ps, rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            assert!(v.iter().all(|x| (x - 0.37).abs() < 1e-14));
        }
    }

    #[test]
    fn vector_node_midpoint_constant() {
        let mut ps = ParamSet::new();
        let v = FeatureVector::new(&mut ps, "v", Axis::Z, 5, 1, vec![1.0, 3.0, -2.0, 0.5, 4.0]).unwrap();
        assert!((v.sample(&ps, node_coord(2, 5))[0] + 2.0).abs() < 1e-14);
        let mid = 0.5 * (node_coord(1, 5) + node_coord(2, 5));
        assert!((v.sample(&ps, mid)[0] - 0.5).abs() < 1e-14);
        let c = FeatureVector::new(&mut ps, "c", Axis::X, 7, 2, vec![-1.25; 14]).unwrap();
        assert!(c.sample(&ps, 0.123)[1] == -1.25);
    }

    #[test]
    fn out_of_domain_clamps_to_boundary() {
        let (ps, p) = random_plane(3, 3, 1, 4);
        let edge = p.sample(&ps, 2.0, -2.0);
        let beyond = p.sample(&ps, 7.0, -9.0);
        assert_eq!(edge, beyond);
    }

    #[test]
    fn rejects_bad_planes() {
        let mut ps = ParamSet::new();
        assert!(FeaturePlane::new(&mut ps, "p", (Axis::X, Axis::Y), 1, 3, 1, vec![0.0; 3]).is_err());
        assert!(FeaturePlane::new(&mut ps, "p", (Axis::T, Axis::X), 2, 2, 1, vec![0.0; 4]).is_err());
        assert!(FeatureVector::new(&mut ps, "v", Axis::T, 4, 1, vec![0.0; 4]).is_err());
    }

    #[test]
    fn locality_of_node_perturbation() {
        let (mut ps, p) = random_plane(5, 5, 1, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let queries: Vec<(f64, f64)> = (0..400)
            .map(|_| (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)))
            .collect();
        let before: Vec<f64> = queries.iter().map(|&(a, b)| p.sample(&ps, a, b)[0]).collect();
        // node (2, 3)
        ps.get_mut(p.param).data_mut()[2 * 5 + 3] += 1.0;
        let (lo_a, hi_a) = (node_coord(1, 5), node_coord(3, 5));
        let (lo_b, hi_b) = (node_coord(2, 5), node_coord(4, 5));
        for (k, &(a, b)) in queries.iter().enumerate() {
            let after = p.sample(&ps, a, b)[0];
            let inside = a > lo_a && a < hi_a && b > lo_b && b < hi_b;
            if !inside {
                assert_eq!(after, before[k], "query {a},{b} outside support changed");
            }
        }
    }

    #[test]
    fn sample_gradients_match_finite_differences() {
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let plane = Init { offset: 0.0, scale: 1.0 }.fill(4 * 3 * 2, &mut rng);
            let line = Init { offset: 0.0, scale: 1.0 }.fill(5 * 2, &mut rng);
            let coords = Init { offset: 0.0, scale: 1.9 }.fill(6 * 4, &mut rng);
            let weights = Init { offset: 0.0, scale: 1.0 }.fill(6 * 2, &mut rng);
            let inputs = [
                Tensor::new([4, 3, 2], plane).unwrap(),
                Tensor::new([5, 2], line).unwrap(),
                Tensor::new([6, 4], coords).unwrap(),
            ];
            let report = check_function(&inputs, 1e-4, 1e-3, |g, v| {
                let coords = g.reshape(v[2], 6, 4);
                let ps = ops::sample_plane(g, v[0], (4, 3, 2), coords, (1, 3));
                let ls = ops::sample_line(g, v[1], (5, 2), coords, 0);
                let prod = g.mul(ps, ls);
                let w = g.constant(6, 2, weights.clone());
                let weighted = g.mul(prod, w);
                Ok(g.sum(weighted))
            })
            .unwrap();
            assert!(report.passed(), "seed {seed}\n{report}");
        }
    }

    #[test]
    fn upsample_identity_and_node_preservation() {
        let (mut ps, mut p) = random_plane(4, 3, 2, 5);
        let orig = p.data(&ps).to_vec();
        p.upsample(&mut ps, 4, 3).unwrap();
        assert_eq!(p.data(&ps), &orig[..]);

        let old = p.clone();
        let old_ps = ps.clone();
        p.upsample(&mut ps, doubled(4), doubled(3)).unwrap();
        for i in 0..4 {
            for j in 0..3 {
                let (a, b) = (node_coord(i, 4), node_coord(j, 3));
                let before = old.sample(&old_ps, a, b);
                let after = p.sample(&ps, a, b);
                for (x, y) in before.iter().zip(&after) {
                    assert!((x - y).abs() < 1e-13);
                }
            }
        }
        assert!(p.upsample(&mut ps, 3, 3).is_err());
    }
}
