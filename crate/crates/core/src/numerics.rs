//! Small numerically-careful primitives shared across the crate.

/// Log of the sum of exponentials, stabilized by max subtraction.
/// Returns `-inf` for an empty slice.
pub fn logsumexp(values: &[f64]) -> f64 {
    let max = values.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = values.iter().map(|&v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Softmax probabilities, stabilized by max subtraction. The result sums to
/// 1 up to rounding.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let exps: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Log-softmax: `logits[i] - logsumexp(logits)`.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let lse = logsumexp(logits);
    logits.iter().map(|&v| v - lse).collect()
}

/// Numerically stable sigmoid.
pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable `log(sigmoid(t)) = -ln(1 + exp(-t))`, computed
/// branch-wise so neither branch exponentiates a large positive argument:
/// for `t >= 0` it is `-ln1p(exp(-t))`, otherwise `t - ln1p(exp(t))`.
pub fn log_sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        -(-t).exp().ln_1p()
    } else {
        t - t.exp().ln_1p()
    }
}
