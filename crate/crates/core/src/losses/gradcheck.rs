/// Denominator floor of [`relative_error`]: gradient components smaller than
/// this are effectively compared in absolute terms.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

/// `|a - b| / max(|a|, |b|, GRAD_CHECK_FLOOR)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(GRAD_CHECK_FLOOR)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub max_relative_error: f64,
    /// Parameter index with the largest error.
    pub worst: usize,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    pub passed: bool,
}

/// Compares `analytic[i]` with the central difference
/// `(f(x + h e_i) - f(x - h e_i)) / 2h` for each `i` in `indices`
/// (all coordinates when `None`).
pub fn grad_check(
    mut f: impl FnMut(&[f64]) -> f64,
    x: &[f64],
    analytic: &[f64],
    indices: Option<&[usize]>,
    step: f64,
    tolerance: f64,
) -> GradCheck {
    assert!(step > 0.0, "step must be positive");
    assert_eq!(x.len(), analytic.len(), "one analytic component per coordinate");
    let all: Vec<usize> = (0..x.len()).collect();
    let indices = indices.unwrap_or(&all);
    let mut probe = x.to_vec();
    let (mut worst, mut max_err) = (0, 0.0f64);
    let mut an = Vec::with_capacity(indices.len());
    let mut nu = Vec::with_capacity(indices.len());
    for &i in indices {
        let orig = probe[i];
        probe[i] = orig + step;
        let up = f(&probe);
        probe[i] = orig - step;
        let down = f(&probe);
        probe[i] = orig;
        let numeric = (up - down) / (2.0 * step);
        let err = relative_error(analytic[i], numeric);
        if err > max_err || !err.is_finite() {
            max_err = if err.is_finite() { err } else { f64::INFINITY };
            worst = i;
        }
        an.push(analytic[i]);
        nu.push(numeric);
    }
    GradCheck {
        max_relative_error: max_err,
        worst,
        analytic: an,
        numeric: nu,
        passed: max_err <= tolerance,
    }
}
