//! Central finite-difference verification of tape gradients.

use super::{ParamSet, Tape, Var};
use crate::error::Result;

/// Finite-difference step used throughout the test suites.
pub const FD_STEP: f64 = 1e-4;

/// Gradients smaller than this are compared absolutely.
const REL_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    /// (parameter name, flat index, analytic, numeric) of the worst entry.
    pub worst: Option<(String, usize, f64, f64)>,
}

/// Relative error `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

fn eval(params: &ParamSet, f: &impl Fn(&mut Tape, &ParamSet) -> Result<Var>) -> Result<f64> {
    let mut tape = Tape::new();
    let loss = f(&mut tape, params)?;
    Ok(tape.value(loss).item())
}

/// Compares the tape gradient of the scalar built by `f` against central
/// differences over every parameter entry.
pub fn check(
    params: &ParamSet,
    step: f64,
    f: impl Fn(&mut Tape, &ParamSet) -> Result<Var>,
) -> Result<GradCheckReport> {
    let mut analytic = params.clone();
    analytic.zero_grad();
    {
        let mut tape = Tape::new();
        let loss = f(&mut tape, &analytic)?;
        tape.backward(loss, &mut analytic)?;
    }
    let mut probe = params.clone();
    let mut report = GradCheckReport {
        checked: 0,
        max_rel_err: 0.0,
        worst: None,
    };
    for id in params.ids() {
        let grad = analytic.get(id).grad().map(<[f64]>::to_vec);
        for j in 0..params.get(id).len() {
            let orig = params.get(id).data()[j];
            probe.get_mut(id).data_mut()[j] = orig + step;
            let plus = eval(&probe, &f)?;
            probe.get_mut(id).data_mut()[j] = orig - step;
            let minus = eval(&probe, &f)?;
            probe.get_mut(id).data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let a = grad.as_ref().map_or(0.0, |g| g[j]);
            let err = relative_error(a, numeric);
            report.checked += 1;
            if err > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = report.max_rel_err.max(err);
                if err >= report.max_rel_err {
                    report.worst = Some((params.name(id).to_string(), j, a, numeric));
                }
            }
        }
    }
    Ok(report)
}
