//! Multiclass focal loss `-alpha_y (1 - p_y)^gamma ln(p_y)`.

/// Lower clamp applied to `p_y` before the logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

/// Focal loss of one probability vector against class `y`. `gamma = 0` and unit
/// `alpha` reduce it to cross-entropy.
pub fn focal_loss(p: &[f64], y: usize, gamma: f64, alpha: &[f64]) -> f64 {
    let py = p[y].clamp(PROB_FLOOR, 1.0);
    let modulating = if gamma == 0.0 { 1.0 } else { (1.0 - py).powf(gamma) };
    -alpha[y] * modulating * py.ln()
}

/// Gradient of the focal loss with respect to the logits, given the softmax output `p`.
///
/// With `L(p_y)` and `dp_y/dz_j = p_y (1[j = y] - p_j)`:
/// `dL/dz_j = alpha_y (gamma (1 - p_y)^(gamma - 1) p_y ln p_y - (1 - p_y)^gamma) (1[j = y] - p_j)`,
/// which for `gamma = 0` is the familiar `alpha_y (p_j - 1[j = y])`.
///
/// This is the gradient of the unclamped loss: below [`PROB_FLOOR`] the loss value
/// is flat but the gradient keeps pushing a badly wrong prediction back.
pub fn focal_logit_gradient(p: &[f64], y: usize, gamma: f64, alpha: &[f64], out: &mut [f64]) {
    let py = p[y].clamp(0.0, 1.0);
    let one_minus = 1.0 - py;
    let coeff = if gamma == 0.0 {
        -1.0
    } else {
        // p ln p -> 0 at p = 0, and (1-p)^(gamma-1) p ln p -> 0 at p = 1
        let focusing = if one_minus > 0.0 && py > 0.0 {
            gamma * one_minus.powf(gamma - 1.0) * py * py.ln()
        } else {
            0.0
        };
        focusing - one_minus.powf(gamma)
    };
    let scale = alpha[y] * coeff;
    for (j, (o, &pj)) in out.iter_mut().zip(p).enumerate() {
        let indicator = if j == y { 1.0 } else { 0.0 };
        *o = scale * (indicator - pj);
    }
}
