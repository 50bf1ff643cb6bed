//! Central-difference verification of tape gradients.

use crate::error::Result;

/// Relative-error floor: denominators below this are clamped.
pub const REL_ERR_FLOOR: f64 = 1e-8;

/// Compares `analytic` against central differences of `loss_fn` around
/// `params`, one coordinate at a time, and returns the maximum relative
/// error `|a - n| / max(|a|, |n|, 1e-8)`.
///
/// `loss_fn` must be deterministic; run it in f64 for the comparison to be
/// meaningful.
pub fn finite_diff_check(
    loss_fn: &mut dyn FnMut(&[f64]) -> Result<f64>,
    params: &[f64],
    analytic: &[f64],
    epsilon: f64,
) -> Result<f64> {
    assert_eq!(params.len(), analytic.len());
    let mut theta = params.to_vec();
    let mut max_rel = 0.0f64;
    for i in 0..theta.len() {
        let saved = theta[i];
        theta[i] = saved + epsilon;
        let up = loss_fn(&theta)?;
        theta[i] = saved - epsilon;
        let down = loss_fn(&theta)?;
        theta[i] = saved;
        let numeric = (up - down) / (2.0 * epsilon);
        let denom = analytic[i].abs().max(numeric.abs()).max(REL_ERR_FLOOR);
        let rel = (analytic[i] - numeric).abs() / denom;
        if rel > max_rel {
            max_rel = rel;
        }
    }
    Ok(max_rel)
}
