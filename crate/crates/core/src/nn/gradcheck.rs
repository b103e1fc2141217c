//! Central finite-difference gradient checking.

/// Settings for [`grad_check`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    pub step: f64,
    pub tolerance: f64,
    /// Smallest magnitude used as the denominator of the relative error, so
    /// gradients near zero are compared absolutely at this scale.
    pub floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tolerance: 1e-5,
            floor: 1e-2,
        }
    }
}

impl GradCheckOptions {
    pub fn with_tolerance(tolerance: f64) -> Self {
        Self {
            tolerance,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Coordinate with the largest error, with its analytic and numeric values.
    pub worst: Option<(usize, f64, f64)>,
    pub checked: usize,
    /// Coordinates skipped because a perturbation crossed a non-smooth point.
    pub skipped: usize,
    pub passed: bool,
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares `analytic` against central differences of `f` at `x`.
pub fn grad_check<F>(mut f: F, x: &[f64], analytic: &[f64], opts: &GradCheckOptions) -> GradCheckReport
where
    F: FnMut(&[f64]) -> f64,
{
    grad_check_piecewise(|p| (f(p), 0), x, analytic, opts)
}

/// Like [`grad_check`], for piecewise-smooth functions. `f` also returns a
/// fingerprint of its active branch (ReLU signs, max winners); coordinates
/// whose perturbations change the fingerprint are skipped, since the
/// derivative there is one-sided.
pub fn grad_check_piecewise<F>(mut f: F, x: &[f64], analytic: &[f64], opts: &GradCheckOptions) -> GradCheckReport
where
    F: FnMut(&[f64]) -> (f64, u64),
{
    assert_eq!(x.len(), analytic.len(), "gradient length mismatch");
    let (_, base_print) = f(x);
    let mut p = x.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
        skipped: 0,
        passed: true,
    };
    for i in 0..x.len() {
        let orig = p[i];
        p[i] = orig + opts.step;
        let (up, up_print) = f(&p);
        p[i] = orig - opts.step;
        let (down, down_print) = f(&p);
        p[i] = orig;
        if up_print != base_print || down_print != base_print {
            report.skipped += 1;
            continue;
        }
        let numeric = (up - down) / (2.0 * opts.step);
        let err = relative_error(analytic[i], numeric, opts.floor);
        report.checked += 1;
        if !(err <= report.max_rel_error) {
            report.max_rel_error = err;
            report.worst = Some((i, analytic[i], numeric));
        }
    }
    report.passed = report.max_rel_error < opts.tolerance && report.max_rel_error.is_finite();
    report
}
