use crate::error::{invalid, shape, Result};
use crate::matrix::Matrix;

fn check_temperature(t: f64) -> Result<()> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(invalid(format!("temperature must be positive, got {t}")));
    }
    Ok(())
}

/// Row-wise `log softmax(z / t)` using max subtraction.
pub fn log_softmax_t(logits: &Matrix, t: f64) -> Result<Matrix> {
    check_temperature(t)?;
    let mut out = logits.clone();
    for r in 0..out.rows() {
        log_softmax_row(out.row_mut(r), t);
    }
    Ok(out)
}

/// Row-wise tempered softmax `softmax(z / t)`.
pub fn softmax_t(logits: &Matrix, t: f64) -> Result<Matrix> {
    let mut out = log_softmax_t(logits, t)?;
    out.as_mut_slice().iter_mut().for_each(|v| *v = v.exp());
    Ok(out)
}

pub(crate) fn log_softmax_row(row: &mut [f64], t: f64) {
    if row.is_empty() {
        return;
    }
    let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v)) / t;
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = *v / t - max;
        sum += v.exp();
    }
    let lse = sum.ln();
    row.iter_mut().for_each(|v| *v -= lse);
}

/// Mean negative log-likelihood of `labels` and its gradient w.r.t. the
/// logits, `(softmax - one_hot) / B`.
pub fn cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    let (b, c) = logits.shape();
    if labels.len() != b {
        return Err(shape(format!("{} labels for {b} logit rows", labels.len())));
    }
    if b == 0 {
        return Err(invalid("cross-entropy of an empty batch"));
    }
    if let Some(bad) = labels.iter().find(|&&l| l >= c) {
        return Err(invalid(format!("label {bad} outside [0, {c})")));
    }
    let log_probs = log_softmax_t(logits, 1.0)?;
    let scale = 1.0 / b as f64;
    let mut loss = 0.0;
    let mut grad = log_probs.map(f64::exp);
    for (r, &label) in labels.iter().enumerate() {
        loss -= log_probs.get(r, label);
        let g = grad.row_mut(r);
        g[label] -= 1.0;
        g.iter_mut().for_each(|v| *v *= scale);
    }
    Ok((loss * scale, grad))
}
