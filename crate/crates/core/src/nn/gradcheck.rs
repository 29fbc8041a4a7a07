//! Central finite-difference verification of analytic gradients.

/// Relative errors below this denominator are measured in absolute terms, so
/// coordinates whose true gradient is ~0 do not blow up the ratio.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    /// Coordinate with the largest error, with its analytic and numeric values.
    pub worst: Option<(usize, f64, f64)>,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err <= tol
    }
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares `analytic[i]` with `(f(x + h·e_i) − f(x − h·e_i)) / 2h` for every
/// index in `coords`.
pub fn grad_check(
    mut f: impl FnMut(&[f64]) -> f64,
    x: &[f64],
    analytic: &[f64],
    h: f64,
    coords: &[usize],
) -> GradCheckReport {
    assert_eq!(x.len(), analytic.len(), "gradient length differs from parameters");
    let mut probe = x.to_vec();
    let mut report = GradCheckReport {
        checked: 0,
        max_rel_err: 0.0,
        worst: None,
    };
    for &i in coords {
        let orig = probe[i];
        probe[i] = orig + h;
        let up = f(&probe);
        probe[i] = orig - h;
        let down = f(&probe);
        probe[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        let err = rel_err(analytic[i], numeric);
        report.checked += 1;
        if report.worst.is_none() || err > report.max_rel_err || err.is_nan() {
            report.max_rel_err = if err.is_nan() { f64::INFINITY } else { err };
            report.worst = Some((i, analytic[i], numeric));
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sq_norm(w: &[f64]) -> f64 {
        w.iter().map(|v| v * v).sum()
    }

    #[test]
    fn quadratic_is_exact() {
        let w = [0.3, -1.5, 2.0, 0.0, 7.25];
        let g: Vec<f64> = w.iter().map(|v| 2.0 * v).collect();
        let r = grad_check(sq_norm, &w, &g, 1e-5, &[0, 1, 2, 3, 4]);
        assert_eq!(r.checked, 5);
        assert!(r.max_rel_err < 1e-8, "{r:?}");
    }

    #[test]
    fn corrupted_gradient_is_reported() {
        let w = [0.3, -1.5, 2.0];
        let mut g: Vec<f64> = w.iter().map(|v| 2.0 * v).collect();
        g[1] += 0.5;
        let r = grad_check(sq_norm, &w, &g, 1e-5, &[0, 1, 2]);
        assert!(!r.passes(1e-4));
        assert!(r.max_rel_err > 0.1);
        assert_eq!(r.worst.unwrap().0, 1);
    }
}
