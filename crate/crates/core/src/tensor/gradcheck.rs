use super::Tensor;
use crate::error::Result;

pub const FD_STEP: f64 = 1e-5;
/// Denominator floor for the relative error, so vanishing gradients are compared absolutely.
pub const REL_FLOOR: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// `(parameter, element)` of the worst entry.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
    pub passed: bool,
}

/// Compares analytic gradients against central differences.
///
/// `f` maps parameter values to `(loss, gradients)`. Each relative error is
/// `|a - n| / max(|a|, |n|, REL_FLOOR)`.
pub fn grad_check<F>(f: F, params: &[Tensor], tolerance: f64) -> Result<GradCheckReport>
where
    F: Fn(&[Tensor]) -> Result<(f64, Vec<Tensor>)>,
{
    let (_, analytic) = f(params)?;
    let mut work = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
        passed: true,
    };
    for p in 0..params.len() {
        for k in 0..params[p].len() {
            let orig = params[p].data()[k];
            work[p].data_mut()[k] = orig + FD_STEP;
            let (up, _) = f(&work)?;
            work[p].data_mut()[k] = orig - FD_STEP;
            let (down, _) = f(&work)?;
            work[p].data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let a = analytic[p].data()[k];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
            report.checked += 1;
            if rel > report.max_rel_err || report.checked == 1 {
                report.max_rel_err = rel;
                report.worst = (p, k);
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    report.passed = report.max_rel_err < tolerance;
    Ok(report)
}
