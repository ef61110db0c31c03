/// Clamp applied to probabilities inside `ln` when evaluating cross-entropy.
pub const PROB_CLAMP: f64 = 1e-12;

/// Logistic function, evaluated without overflow for large |z|.
#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy of one prediction. `p` is clamped to
/// `[PROB_CLAMP, 1 - PROB_CLAMP]` inside the logarithm only.
#[inline]
pub fn bce(p: f64, y: f64) -> f64 {
    let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// Mean binary cross-entropy.
pub fn mean_bce(
    predictions: impl IntoIterator<Item = f64>,
    labels: impl IntoIterator<Item = f64>,
) -> f64 {
    let mut total = 0.0;
    let mut n = 0usize;
    for (p, y) in predictions.into_iter().zip(labels) {
        total += bce(p, y);
        n += 1;
    }
    total / n as f64
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample standard deviation (divisor n - 1). Zero for fewer than two values.
pub fn sample_sd(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    let ss: f64 = values.iter().map(|v| (v - m) * (v - m)).sum();
    (ss / (values.len() - 1) as f64).sqrt()
}
