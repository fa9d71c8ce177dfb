//! Comparison helpers for gradient checks.

/// Relative closeness with an absolute floor for near-zero pairs.
///
/// Central finite differences on a truly zero gradient produce O(1e-11)
/// noise; the floor keeps those from exploding the relative error.
pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    let scale = a.abs().max(b.abs());
    (a - b).abs() <= (tol * scale).max(1e-9)
}

/// Largest relative error over paired slices (same floor as [`rel_close`]).
pub fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let mut worst = 0.0f64;
    for (&x, &y) in a.iter().zip(b.iter()) {
        // differences under the absolute floor count as zero error
        let diff = (x - y).abs();
        let err = if diff <= 1e-9 {
            0.0
        } else {
            diff / x.abs().max(y.abs())
        };
        worst = worst.max(err);
    }
    worst
}
