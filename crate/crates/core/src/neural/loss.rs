use super::{NeuralError, Scalar, Tensor};

/// Softmax cross-entropy averaged over the rows with `mask[i] == true`
/// (all rows when `mask` is `None`). Returns the loss and its gradient with
/// respect to `logits`; masked rows get a zero gradient. With no active
/// rows the loss is zero.
pub fn cross_entropy<F: Scalar>(
    logits: &Tensor<F>,
    targets: &[usize],
    mask: Option<&[bool]>,
) -> Result<(F, Tensor<F>), NeuralError> {
    let (n, classes) = (logits.rows(), logits.cols());
    if logits.shape().len() != 2 || targets.len() != n {
        return Err(NeuralError::ShapeMismatch { expected: alloc::vec![targets.len(), classes], found: logits.shape().to_vec() });
    }
    if let Some(m) = mask {
        if m.len() != n {
            return Err(NeuralError::ShapeMismatch { expected: alloc::vec![n], found: alloc::vec![m.len()] });
        }
    }
    logits.check_finite("logits")?;
    let active = |i: usize| mask.map_or(true, |m| m[i]);
    for (i, &t) in targets.iter().enumerate() {
        if active(i) && t >= classes {
            return Err(NeuralError::IndexOutOfRange { index: t, bound: classes });
        }
    }
    let count = (0..n).filter(|&i| active(i)).count();
    let mut grad = Tensor::zeros(logits.shape());
    if count == 0 {
        return Ok((F::zero(), grad));
    }
    let inv = F::one() / F::from_f64(count as f64);
    let mut loss = F::zero();
    for i in 0..n {
        if !active(i) {
            continue;
        }
        let row = logits.row(i);
        let max = row.iter().fold(F::neg_infinity(), |a, &b| a.max(b));
        let sum = row.iter().fold(F::zero(), |a, &b| a + (b - max).exp());
        let log_z = max + sum.ln();
        loss = loss + (log_z - row[targets[i]]);
        let g = grad.row_mut(i);
        for j in 0..classes {
            g[j] = (row[j] - log_z).exp() * inv;
        }
        g[targets[i]] = g[targets[i]] - inv;
    }
    Ok((loss * inv, grad))
}
