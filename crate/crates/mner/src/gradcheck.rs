//! Central finite-difference verification of analytic gradients.

use crate::error::{Error, Result};
use crate::params::{GradientMap, ParameterStore};

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat element index of the worst disagreement.
    pub worst_param: Option<(String, usize)>,
    pub tol: f64,
    pub pass: bool,
}

impl GradCheckReport {
    pub fn summary(&self) -> String {
        let worst = match &self.worst_param {
            Some((name, idx)) => format!("{name}[{idx}]"),
            None => "-".to_string(),
        };
        format!(
            "max_rel_error={:.3e} worst={} tol={:.1e} {}",
            self.max_rel_error,
            worst,
            self.tol,
            if self.pass { "PASS" } else { "FAIL" }
        )
    }
}

/// Compare `analytic` against (L(θ+h) − L(θ−h)) / 2h for every scalar
/// parameter θ in `store`. Relative error is |a−n| / max(1e-8, |a|+|n|).
/// The loss must be deterministic; two baseline evaluations are compared
/// bitwise to catch accidental state.
pub fn finite_difference_check<F>(
    loss: F,
    store: &ParameterStore,
    analytic: &GradientMap,
    h: f64,
    tol: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&ParameterStore) -> Result<f64>,
{
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "finite_difference_check: step must be positive, got {h}"
        )));
    }
    let base_a = loss(store)?;
    let base_b = loss(store)?;
    if base_a.to_bits() != base_b.to_bits() {
        return Err(Error::NonDeterministicLoss {
            a: base_a,
            b: base_b,
        });
    }

    let names: Vec<String> = store.names().map(str::to_string).collect();
    let mut max_rel = 0.0f64;
    let mut worst = None;
    let mut work = store.clone();
    for name in &names {
        let n_elems = store.get(name)?.len();
        for i in 0..n_elems {
            let orig = store.get(name)?.data()[i];
            work.get_mut(name)?.data_mut()[i] = orig + h;
            let up = loss(&work)?;
            work.get_mut(name)?.data_mut()[i] = orig - h;
            let down = loss(&work)?;
            work.get_mut(name)?.data_mut()[i] = orig;

            let numeric = (up - down) / (2.0 * h);
            let a = analytic.get(name).map_or(0.0, |t| t.data()[i]);
            let rel = (a - numeric).abs() / f64::max(1e-8, a.abs() + numeric.abs());
            if rel > max_rel {
                max_rel = rel;
                worst = Some((name.clone(), i));
            }
        }
    }
    Ok(GradCheckReport {
        max_rel_error: max_rel,
        worst_param: worst,
        tol,
        pass: max_rel < tol,
    })
}
