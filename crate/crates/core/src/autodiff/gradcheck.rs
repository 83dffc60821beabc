use crate::error::{Error, Result};

/// Outcome of a central-difference gradient check.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// Coordinate attaining `max_rel_error`.
    pub worst_index: usize,
    pub coordinates: usize,
}

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares the analytic gradient returned by `f` at `theta` with central
/// differences `(f(θ + eps·e_i) - f(θ - eps·e_i)) / (2·eps)` for every
/// coordinate. `f` returns `(value, gradient)`; only the value is used at the
/// perturbed points.
pub fn grad_check<F>(theta: &[f64], eps: f64, mut f: F) -> Result<GradCheck>
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::Invalid(format!("grad_check eps must be positive, got {eps}")));
    }
    let (v0, analytic) = f(theta);
    if !v0.is_finite() {
        return Err(Error::NonFinite("grad_check analytic pass".into()));
    }
    let coords: Vec<usize> = (0..theta.len()).collect();
    grad_check_coords(theta, &analytic, &coords, eps, |t| f(t).0)
}

/// Central differences on the chosen coordinates only, against a given
/// analytic gradient. `f` returns the scalar value.
pub fn grad_check_coords<F>(
    theta: &[f64],
    analytic: &[f64],
    coords: &[usize],
    eps: f64,
    mut f: F,
) -> Result<GradCheck>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::Invalid(format!("grad_check eps must be positive, got {eps}")));
    }
    if analytic.len() != theta.len() {
        return Err(Error::shape(
            "grad_check",
            format!("gradient has {} values for {} parameters", analytic.len(), theta.len()),
        ));
    }
    if analytic.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("grad_check analytic pass".into()));
    }
    let mut point = theta.to_vec();
    let mut out = GradCheck {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst_index: coords.first().copied().unwrap_or(0),
        coordinates: coords.len(),
    };
    for &i in coords {
        if i >= theta.len() {
            return Err(Error::Invalid(format!("grad_check coordinate {i} out of range")));
        }
        point[i] = theta[i] + eps;
        let plus = f(&point);
        point[i] = theta[i] - eps;
        let minus = f(&point);
        point[i] = theta[i];
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite(format!("grad_check coordinate {i}")));
        }
        let numeric = (plus - minus) / (2.0 * eps);
        let rel = relative_error(analytic[i], numeric);
        out.max_abs_error = out.max_abs_error.max((analytic[i] - numeric).abs());
        if rel > out.max_rel_error {
            out.max_rel_error = rel;
            out.worst_index = i;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let r = grad_check(&[3.0], 1e-5, |t| (t[0] * t[0], vec![2.0 * t[0]])).unwrap();
        assert!(r.max_rel_error < 1e-9, "{r:?}");
    }

    #[test]
    fn constant_function_has_zero_gradients() {
        let r = grad_check(&[1.0, -2.0], 1e-5, |_| (4.2, vec![0.0, 0.0])).unwrap();
        assert_eq!(r.max_rel_error, 0.0);
        assert_eq!(r.max_abs_error, 0.0);
    }

    #[test]
    fn wrong_gradient_is_detected() {
        let r = grad_check(&[1.0, 2.0], 1e-5, |t| {
            (t[0] * t[1], vec![t[1], 2.0 * t[0] + 1.0])
        })
        .unwrap();
        assert_eq!(r.worst_index, 1);
        assert!(r.max_rel_error > 0.3);
    }

    #[test]
    fn non_finite_is_an_error() {
        let r = grad_check(&[0.0], 1e-5, |t| ((1.0 / t[0]).ln(), vec![0.0]));
        assert!(matches!(r, Err(Error::NonFinite(_))));
    }
}
