//! Central finite differences, the independent oracle used throughout the
//! test suite to validate hand-derived gradients. Kept deliberately free of
//! any dependency on the surrogate or model code it checks.

/// Central-difference gradient of `f` at `x` with step `h`.
pub fn central_diff<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64], h: f64) -> Vec<f64> {
    let mut pt = x.to_vec();
    let mut grad = vec![0.0; x.len()];
    for i in 0..x.len() {
        let orig = pt[i];
        pt[i] = orig + h;
        let fp = f(&pt);
        pt[i] = orig - h;
        let fm = f(&pt);
        pt[i] = orig;
        grad[i] = (fp - fm) / (2.0 * h);
    }
    grad
}

/// Relative error between two scalars with an absolute floor so that
/// near-zero components compare absolutely instead of amplifying noise.
pub fn rel_err(a: f64, b: f64) -> f64 {
    rel_err_with_floor(a, b, 1e-6)
}

/// As [`rel_err`] with an explicit floor. The floor should sit above the
/// finite-difference roundoff resolution eps·|f|/h for the loss magnitude
/// at hand, so components of that size compare absolutely.
pub fn rel_err_with_floor(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Maximum componentwise relative error between two gradients.
pub fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "gradient length mismatch");
    a.iter()
        .zip(b.iter())
        .map(|(&x, &y)| rel_err(x, y))
        .fold(0.0, f64::max)
}
