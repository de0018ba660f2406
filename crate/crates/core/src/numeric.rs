//! Central finite-difference oracles used by gradient tests.
//!
//! These helpers evaluate a scalar function of a flat parameter vector and
//! never touch the tape, so they stay independent of the analytic backward
//! implementations they are used to check.

/// Central difference gradient of `f` at `x`: (f(x+h) - f(x-h)) / 2h per entry.
pub fn central_diff_grad(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    let mut grad = vec![0.0; x.len()];
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let fp = f(&probe);
        probe[i] = orig - h;
        let fm = f(&probe);
        probe[i] = orig;
        grad[i] = (fp - fm) / (2.0 * h);
    }
    grad
}

/// Central difference for a handful of coordinates only.
pub fn central_diff_at(
    x: &[f64],
    coords: &[usize],
    h: f64,
    mut f: impl FnMut(&[f64]) -> f64,
) -> Vec<f64> {
    let mut probe = x.to_vec();
    coords
        .iter()
        .map(|&i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let fp = f(&probe);
            probe[i] = orig - h;
            let fm = f(&probe);
            probe[i] = orig;
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

/// Relative error with an absolute floor so near-zero pairs compare sanely.
pub fn rel_err(a: f64, b: f64) -> f64 {
    let denom = a.abs().max(b.abs()).max(1e-8);
    (a - b).abs() / denom
}

/// Largest relative error over paired slices.
pub fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(&x, &y)| rel_err(x, y))
        .fold(0.0, f64::max)
}

/// First coordinate where |a - b| > atol + rtol * max(|a|, |b|), if any.
/// The absolute floor exempts numerically-zero gradients whose central
/// difference is dominated by f64 roundoff.
pub fn grad_mismatch(
    analytic: &[f64],
    numeric: &[f64],
    rtol: f64,
    atol: f64,
) -> Option<(usize, f64, f64)> {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .enumerate()
        .find(|(_, (&a, &n))| (a - n).abs() > atol + rtol * a.abs().max(n.abs()))
        .map(|(i, (&a, &n))| (i, a, n))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient() {
        // f(x) = sum x_i^2 has gradient 2x
        let x = [1.0, -2.0, 0.5];
        let g = central_diff_grad(&x, 1e-6, |v| v.iter().map(|a| a * a).sum());
        for (gi, xi) in g.iter().zip(&x) {
            assert!(rel_err(*gi, 2.0 * xi) < 1e-8);
        }
    }
}
