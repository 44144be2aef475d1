//! Central finite-difference oracles for gradient verification.
//!
//! These helpers are deliberately public: the integration suite uses them to
//! check analytic gradients of the full loss stack against an independent
//! numerical estimate.

/// Central-difference gradient of a scalar function at `x`.
///
/// Each coordinate is perturbed by `step` in both directions; the function is
/// treated as a black box and re-evaluated from scratch.
pub fn central_diff<F>(mut f: F, x: &[f64], step: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut grad = Vec::with_capacity(x.len());
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + step;
        let hi = f(&probe);
        probe[i] = x[i] - step;
        let lo = f(&probe);
        probe[i] = x[i];
        grad.push((hi - lo) / (2.0 * step));
    }
    grad
}

/// Largest entrywise error of `analytic` against `reference`, relative to
/// `max(1, |reference|)` so near-zero gradients are compared absolutely.
pub fn max_rel_err(analytic: &[f64], reference: &[f64]) -> f64 {
    assert_eq!(
        analytic.len(),
        reference.len(),
        "gradient length mismatch: {} vs {}",
        analytic.len(),
        reference.len()
    );
    analytic
        .iter()
        .zip(reference)
        .map(|(a, r)| (a - r).abs() / r.abs().max(1.0))
        .fold(0.0, f64::max)
}
