//! Training objectives and their weighted total.

use serde::{Deserialize, Serialize};

use crate::diffcore::{Graph, Var};
use crate::error::{Error, Result};

pub const MASK_CLAMP: f64 = 1e-6;
const MAD_FLOOR: f64 = 1e-9;

/// Weights of the rgb, depth, flow, mask, adjacent and threshold terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub rgb: f64,
    pub depth: f64,
    pub flow: f64,
    pub mask: f64,
    pub adjacent: f64,
    pub tau: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            rgb: 0.7,
            depth: 1.0,
            flow: 1.0,
            mask: 1.0,
            adjacent: 0.5,
            tau: 0.5,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.rgb, self.depth, self.flow, self.mask, self.adjacent, self.tau];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config(format!("loss weights must be finite and non-negative: {self:?}")));
        }
        Ok(())
    }
}

/// Extra multipliers on the flow, depth and mask priors, halved every
/// `every` iterations.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PriorSchedule {
    pub flow: f64,
    pub depth: f64,
    pub mask: f64,
    pub decay: f64,
    pub every: u64,
}

impl Default for PriorSchedule {
    fn default() -> Self {
        Self {
            flow: 1.0,
            depth: 0.5,
            mask: 0.5,
            decay: 0.5,
            every: 2000,
        }
    }
}

impl PriorSchedule {
    /// `(flow, depth, mask)` multipliers at `iter`.
    pub fn at(&self, iter: u64) -> [f64; 3] {
        let k = if self.every == 0 { 0 } else { iter / self.every };
        let f = self.decay.powi(k.min(i32::MAX as u64) as i32);
        [self.flow * f, self.depth * f, self.mask * f]
    }
}

fn median(x: &[f64]) -> (f64, Vec<usize>) {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(a.cmp(&b)));
    let n = x.len();
    let mid = if n % 2 == 1 { vec![idx[n / 2]] } else { vec![idx[n / 2 - 1], idx[n / 2]] };
    let m = mid.iter().map(|&i| x[i]).sum::<f64>() / mid.len() as f64;
    (m, mid)
}

/// `(x - median) / mean|x - median|`, or zeros when that spread is below
/// 1e-9.
pub fn median_normalize(x: &[f64]) -> Result<Vec<f64>> {
    if x.is_empty() {
        return Err(Error::invalid("median normalization of an empty vector"));
    }
    let (m, _) = median(x);
    let mad = x.iter().map(|v| (v - m).abs()).sum::<f64>() / x.len() as f64;
    if mad < MAD_FLOOR {
        return Ok(vec![0.0; x.len()]);
    }
    Ok(x.iter().map(|v| (v - m) / mad).collect())
}

/// Tape version of [`median_normalize`] over a `[B, 1]` column. The median
/// element(s) are picked by value and differentiated through.
pub fn median_normalize_graph(g: &mut Graph<'_>, x: Var) -> Result<Var> {
    let (b, c) = g.shape(x);
    if b == 0 || c != 1 {
        return Err(Error::invalid(format!("median normalization expects a non-empty column, got [{b}, {c}]")));
    }
    let (_, mid) = median(g.value(x));
    let picked = g.gather_rows(x, &mid);
    let m = g.mean(picked);
    let dev = g.sub(x, m);
    let a = g.abs(dev);
    let mad = g.mean(a);
    if g.scalar(mad) < MAD_FLOOR {
        return Ok(g.constant(b, 1, vec![0.0; b]));
    }
    Ok(g.div(dev, mad))
}

/// Mean squared difference of the normalized rendered and oracle inverse
/// depths.
pub fn depth_loss(rendered: &[f64], oracle: &[f64]) -> Result<f64> {
    check_len(rendered.len(), oracle.len())?;
    let (a, b) = (median_normalize(rendered)?, median_normalize(oracle)?);
    Ok(a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64)
}

pub fn depth_loss_graph(g: &mut Graph<'_>, rendered: Var, oracle: &[f64]) -> Result<Var> {
    check_len(g.rows(rendered), oracle.len())?;
    let a = median_normalize_graph(g, rendered)?;
    let b = median_normalize(oracle)?;
    let b = g.constant(oracle.len(), 1, b);
    let d = g.sub(a, b);
    let s = g.square(d);
    Ok(g.mean(s))
}

fn bce(m: f64, y: f64) -> f64 {
    let m = m.clamp(MASK_CLAMP, 1.0 - MASK_CLAMP);
    -(y * m.ln() + (1.0 - y) * (1.0 - m).ln())
}

pub fn mask_bce(mask: &[f64], labels: &[f64]) -> Result<f64> {
    check_len(mask.len(), labels.len())?;
    Ok(mask.iter().zip(labels).map(|(&m, &y)| bce(m, y)).sum::<f64>() / mask.len().max(1) as f64)
}

/// Mean binary cross-entropy of a `[B, 1]` rendered mask, clamped to
/// `[1e-6, 1 - 1e-6]`.
pub fn mask_bce_graph(g: &mut Graph<'_>, mask: Var, labels: &[f64]) -> Result<Var> {
    let b = g.rows(mask);
    check_len(b, labels.len())?;
    let m = g.clamp(mask, MASK_CLAMP, 1.0 - MASK_CLAMP);
    let lm = g.log(m);
    let one_minus = g.neg(m);
    let one_minus = g.add_scalar(one_minus, 1.0);
    let l1m = g.log(one_minus);
    let y = g.constant(b, 1, labels.to_vec());
    let ny = g.constant(b, 1, labels.iter().map(|y| 1.0 - y).collect());
    let a = g.mul(y, lm);
    let c = g.mul(ny, l1m);
    let s = g.add(a, c);
    let mean = g.mean(s);
    Ok(g.neg(mean))
}

pub fn tau_loss(tau: f64) -> f64 {
    (tau - 0.5) * (tau - 0.5)
}

/// `(sigmoid(logit) - 0.5)²` for a `[1, 1]` threshold logit.
pub fn tau_loss_graph(g: &mut Graph<'_>, logit: Var) -> Var {
    let t = g.sigmoid(logit);
    let d = g.add_scalar(t, -0.5);
    let s = g.square(d);
    g.sum(s)
}

/// Mean squared color error.
pub fn rgb_loss(rendered: &[f64], observed: &[f64]) -> Result<f64> {
    check_len(rendered.len(), observed.len())?;
    Ok(rendered.iter().zip(observed).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / rendered.len().max(1) as f64)
}

pub fn rgb_loss_graph(g: &mut Graph<'_>, rendered: Var, observed: &[f64]) -> Result<Var> {
    let (r, c) = g.shape(rendered);
    check_len(r * c, observed.len())?;
    let o = g.constant(r, c, observed.to_vec());
    let d = g.sub(rendered, o);
    let s = g.square(d);
    Ok(g.mean(s))
}

fn check_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!("loss operands have {a} and {b} entries")));
    }
    Ok(())
}

pub const TERM_NAMES: [&str; 6] = ["rgb", "depth", "flow", "mask", "adjacent", "tau"];

/// Per-term scalar nodes; absent terms count as zero.
#[derive(Clone, Copy, Debug, Default)]
pub struct LossParts {
    pub rgb: Option<Var>,
    pub depth: Option<Var>,
    pub flow: Option<Var>,
    pub mask: Option<Var>,
    pub adjacent: Option<Var>,
    pub tau: Option<Var>,
}

impl LossParts {
    fn terms(&self) -> [Option<Var>; 6] {
        [self.rgb, self.depth, self.flow, self.mask, self.adjacent, self.tau]
    }

    /// Current values in [`TERM_NAMES`] order.
    pub fn values(&self, g: &Graph<'_>) -> [f64; 6] {
        self.terms().map(|t| t.map_or(0.0, |v| g.scalar(v)))
    }
}

/// Weighted sum of the parts, with extra per-term multipliers (the prior
/// schedule). Fails naming the first non-finite term.
pub fn total_loss(g: &mut Graph<'_>, parts: &LossParts, weights: &LossWeights, extra: [f64; 6]) -> Result<Var> {
    let w = [weights.rgb, weights.depth, weights.flow, weights.mask, weights.adjacent, weights.tau];
    let mut acc: Option<Var> = None;
    for (k, term) in parts.terms().into_iter().enumerate() {
        let Some(v) = term else { continue };
        if !g.scalar(v).is_finite() {
            return Err(Error::NonFiniteLoss(TERM_NAMES[k]));
        }
        let s = g.scale(v, w[k] * extra[k]);
        acc = Some(match acc {
            Some(a) => g.add(a, s),
            None => s,
        });
    }
    Ok(acc.unwrap_or_else(|| g.scalar_const(0.0)))
}
