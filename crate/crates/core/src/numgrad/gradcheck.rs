//! Central finite-difference checks against [`Tape::backward`].

use std::collections::BTreeMap;

use super::{Matrix, ParamStore, Tape, Var};
use crate::error::Result;

/// Denominator floor for the relative error, so that near-zero gradients are
/// compared in absolute terms.
pub const REL_FLOOR: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub max_rel_err: f64,
    /// Parameter and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

impl GradCheck {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err <= tol
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares the tape gradient of `f` with central differences of step `h`
/// over every entry of the parameters listed in `names` (all when empty).
pub fn check<F>(store: &ParamStore, names: &[&str], h: f64, f: F) -> Result<GradCheck>
where
    F: Fn(&ParamStore, &mut Tape) -> Result<Var>,
{
    let mut tape = Tape::new();
    let out = f(store, &mut tape)?;
    let grads = tape.backward(out)?.into_params();

    let selected: Vec<String> = if names.is_empty() {
        store.names().map(str::to_string).collect()
    } else {
        names.iter().map(|s| s.to_string()).collect()
    };

    let eval = |s: &ParamStore| -> Result<f64> {
        let mut t = Tape::new();
        let v = f(s, &mut t)?;
        t.value(v).scalar()
    };

    let mut report = GradCheck {
        max_rel_err: 0.0,
        worst: None,
        checked: 0,
    };
    let mut probe = store.clone();
    for name in &selected {
        let base = store.require(name)?.clone();
        let zero = Matrix::zeros(base.rows(), base.cols());
        let analytic = grads.get(name).unwrap_or(&zero);
        for k in 0..base.as_slice().len() {
            let x = base.as_slice()[k];
            probe.get_mut(name).unwrap().as_mut_slice()[k] = x + h;
            let up = eval(&probe)?;
            probe.get_mut(name).unwrap().as_mut_slice()[k] = x - h;
            let down = eval(&probe)?;
            probe.get_mut(name).unwrap().as_mut_slice()[k] = x;
            let numeric = (up - down) / (2.0 * h);
            let err = relative_error(analytic.as_slice()[k], numeric);
            report.checked += 1;
            if err > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = report.max_rel_err.max(err);
                report.worst = Some((name.clone(), k));
            }
        }
    }
    Ok(report)
}

/// Tape gradients of `f` keyed by parameter name.
pub fn analytic<F>(store: &ParamStore, f: F) -> Result<BTreeMap<String, Matrix>>
where
    F: Fn(&ParamStore, &mut Tape) -> Result<Var>,
{
    let mut tape = Tape::new();
    let out = f(store, &mut tape)?;
    Ok(tape.backward(out)?.into_params())
}
