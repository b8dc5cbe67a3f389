//! Central-difference audit of reverse-mode gradients.

use super::graph::{Graph, Var};
use super::tensor::{ParamGroup, ParamId, ParamSet, Tensor};
use crate::error::Result;

/// Below this magnitude errors are measured absolutely.
const REL_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct InputReport {
    pub param: ParamId,
    pub name: String,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub passed: bool,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub tol: f64,
    pub inputs: Vec<InputReport>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.inputs.iter().all(|r| r.passed)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.inputs.iter().map(|r| r.max_rel_error).fold(0.0, f64::max)
    }

    pub fn failures(&self) -> impl Iterator<Item = &InputReport> {
        self.inputs.iter().filter(|r| !r.passed)
    }
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for r in &self.inputs {
            writeln!(
                f,
                "{:<24} max_rel={:.3e} at [{}] analytic={:.6e} numeric={:.6e} {}",
                r.name,
                r.max_rel_error,
                r.worst_index,
                r.analytic,
                r.numeric,
                if r.passed { "ok" } else { "FAIL" }
            )?;
        }
        Ok(())
    }
}

pub fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR)
}

/// Compare analytic gradients of the scalar built by `f` against
/// `(f(x+h) - f(x-h)) / 2h` for every element of every tensor in `inputs`.
///
/// Inputs are perturbed in place and restored afterwards.
pub fn finite_diff_check<F>(
    params: &mut ParamSet,
    inputs: &[ParamId],
    step: f64,
    tol: f64,
    mut f: F,
) -> Result<GradCheckReport>
where
    F: for<'g> FnMut(&mut Graph<'g>) -> Result<Var>,
{
    assert!(step > 0.0, "finite-difference step must be positive");
    let grads = {
        let mut g = Graph::new(params);
        let loss = f(&mut g)?;
        g.backward(loss)?
    };
    let mut eval = |ps: &ParamSet| -> Result<f64> {
        let mut g = Graph::new(ps);
        let loss = f(&mut g)?;
        Ok(g.scalar(loss))
    };

    let mut reports = Vec::with_capacity(inputs.len());
    for &id in inputs {
        let n = params.get(id).numel();
        let analytic: Vec<f64> = grads.get(id).map_or(vec![0.0; n], |g| g.to_vec());
        let mut worst = (0.0, 0, 0.0, 0.0);
        for i in 0..n {
            let orig = params.get(id).data()[i];
            params.get_mut(id).data_mut()[i] = orig + step;
            let fp = eval(params)?;
            params.get_mut(id).data_mut()[i] = orig - step;
            let fm = eval(params)?;
            params.get_mut(id).data_mut()[i] = orig;
            let numeric = (fp - fm) / (2.0 * step);
            let err = relative_error(analytic[i], numeric);
            if err > worst.0 || i == 0 {
                worst = (err, i, analytic[i], numeric);
            }
        }
        reports.push(InputReport {
            param: id,
            name: params.name(id).to_string(),
            max_rel_error: worst.0,
            worst_index: worst.1,
            analytic: worst.2,
            numeric: worst.3,
            passed: worst.0 <= tol,
        });
    }
    Ok(GradCheckReport { tol, inputs: reports })
}

/// Convenience wrapper: check `f` with respect to standalone tensors.
pub fn check_function<F>(inputs: &[Tensor], step: f64, tol: f64, mut f: F) -> Result<GradCheckReport>
where
    F: for<'g> FnMut(&mut Graph<'g>, &[Var]) -> Result<Var>,
{
    let mut ps = ParamSet::new();
    let ids: Vec<ParamId> = inputs
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let mut t = t.clone();
            t.set_requires_grad(true);
            ps.add(format!("input{i}"), ParamGroup::Field, t)
        })
        .collect();
    finite_diff_check(&mut ps, &ids, step, tol, |g| {
        let vars: Vec<Var> = ids.iter().map(|&id| g.param(id)).collect();
        f(g, &vars)
    })
}
