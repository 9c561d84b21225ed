/// Evaluates the toy landscape at `theta` under hyperparameters `h`.
///
/// Returns `(true_objective, surrogate_objective)` where the true objective is
/// `1.2 - θ₁² - θ₂²` and the surrogate weights each term by the matching `h`.
pub fn surrogate_landscape_eval(theta: [f64; 2], h: [f64; 2]) -> (f64, f64) {
    let t = 1.2 - theta[0] * theta[0] - theta[1] * theta[1];
    let s = 1.2 - h[0] * theta[0] * theta[0] - h[1] * theta[1] * theta[1];
    (t, s)
}

/// Gradient of the surrogate objective with respect to `theta`.
pub fn surrogate_gradient(theta: [f64; 2], h: [f64; 2]) -> [f64; 2] {
    [-2.0 * h[0] * theta[0], -2.0 * h[1] * theta[1]]
}
