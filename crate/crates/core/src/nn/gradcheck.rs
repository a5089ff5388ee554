//! Central finite-difference gradient checking.

/// Relative error used by the checks: `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Central-difference estimate of `df/dx_i` for every coordinate.
pub fn numeric_gradient(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Largest relative error between `analytic` and a central-difference
/// estimate of the gradient of `f` at `x`.
pub fn max_relative_error(f: impl FnMut(&[f64]) -> f64, x: &[f64], analytic: &[f64], h: f64) -> f64 {
    assert_eq!(x.len(), analytic.len());
    numeric_gradient(f, x, h)
        .iter()
        .zip(analytic)
        .map(|(&n, &a)| relative_error(a, n, 1e-6))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cubic_gradient() {
        let x = [0.5, -1.5];
        let analytic = [3.0 * 0.25, 3.0 * 2.25];
        let err = max_relative_error(|v| v.iter().map(|a| a * a * a).sum(), &x, &analytic, 1e-5);
        assert!(err < 1e-8, "{err}");
    }
}
