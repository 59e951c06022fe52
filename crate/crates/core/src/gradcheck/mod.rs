//! Central finite-difference gradient oracle and the suite that runs it
//! over every kernel and the full combined objective.

mod suite;

pub use suite::{run_suite, Component, ComponentResult, GradcheckConfig, GradcheckReport};

/// `|a − c| / max(|a|, |c|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// `(f(x + eps·e_i) − f(x − eps·e_i)) / 2eps`, restoring `x` afterwards.
pub fn central_difference<F>(f: &mut F, x: &mut [f64], i: usize, eps: f64) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    let orig = x[i];
    x[i] = orig + eps;
    let plus = f(x);
    x[i] = orig - eps;
    let minus = f(x);
    x[i] = orig;
    (plus - minus) / (2.0 * eps)
}

/// Maximum relative error between `analytic` and central differences of the
/// scalar function `f` at `point`, over every coordinate.
pub fn grad_check<F>(f: F, point: &[f64], analytic: &[f64], eps: f64) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    let all: Vec<usize> = (0..point.len()).collect();
    grad_check_at(f, point, analytic, &all, eps)
}

/// Same as [`grad_check`] but restricted to the listed coordinates.
/// `analytic` is indexed by coordinate, not by position in `indices`.
pub fn grad_check_at<F>(mut f: F, point: &[f64], analytic: &[f64], indices: &[usize], eps: f64) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(point.len(), analytic.len(), "gradient length mismatch");
    let mut x = point.to_vec();
    indices
        .iter()
        .map(|&i| relative_error(analytic[i], central_difference(&mut f, &mut x, i, eps)))
        .fold(0.0, f64::max)
}
