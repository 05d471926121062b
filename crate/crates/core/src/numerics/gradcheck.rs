//! Central finite-difference check of analytic gradients.

use serde::{Deserialize, Serialize};

use super::paramvec::ParamVector;

/// Base step; the step for coordinate `i` is `BASE_STEP * (|θ_i| + 1)`.
pub const BASE_STEP: f64 = 1e-5;
/// Denominator floor for relative errors so that near-zero gradients are
/// compared absolutely.
pub const DEFAULT_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub coordinates: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub worst_index: Option<usize>,
    pub tol: f64,
    pub passed: bool,
}

/// Compare the analytic gradient returned by `f` against central differences
/// of its value. `f` returns `(value, gradient)`.
pub fn grad_check<F>(f: F, point: &ParamVector, tol: f64) -> GradCheckReport
where
    F: Fn(&ParamVector) -> (f64, ParamVector),
{
    grad_check_with_floor(f, point, tol, DEFAULT_FLOOR)
}

pub fn grad_check_with_floor<F>(f: F, point: &ParamVector, tol: f64, floor: f64) -> GradCheckReport
where
    F: Fn(&ParamVector) -> (f64, ParamVector),
{
    let (_, analytic) = f(point);
    assert_eq!(analytic.len(), point.len(), "gradient length differs from point");
    let mut probe = point.clone();
    let mut max_rel = 0.0f64;
    let mut max_abs = 0.0f64;
    let mut worst = None;
    for i in 0..point.len() {
        let x = point.values[i];
        let h = BASE_STEP * (x.abs() + 1.0);
        probe.values[i] = x + h;
        let (fp, _) = f(&probe);
        probe.values[i] = x - h;
        let (fm, _) = f(&probe);
        probe.values[i] = x;
        let numeric = (fp - fm) / (2.0 * h);
        let a = analytic.values[i];
        let abs = (a - numeric).abs();
        let rel = abs / a.abs().max(numeric.abs()).max(floor);
        max_abs = max_abs.max(abs);
        if rel > max_rel || worst.is_none() {
            max_rel = max_rel.max(rel);
            worst = Some(i);
        }
    }
    GradCheckReport {
        coordinates: point.len(),
        max_rel_error: max_rel,
        max_abs_error: max_abs,
        worst_index: worst,
        tol,
        passed: max_rel < tol,
    }
}
