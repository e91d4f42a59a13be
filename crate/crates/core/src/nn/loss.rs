use crate::error::{Error, Result};
use crate::nn::DenseMatrix;

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(logits: &DenseMatrix) -> DenseMatrix {
    let mut out = logits.clone();
    for i in 0..out.rows() {
        softmax_in_place(out.row_mut(i));
    }
    out
}

pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Mean softmax cross-entropy over `(row, class)` targets.
///
/// Returns the loss and its gradient with respect to `logits`; rows without a
/// target get a zero gradient.
pub fn softmax_xent(logits: &DenseMatrix, targets: &[(usize, usize)]) -> Result<(f64, DenseMatrix)> {
    if targets.is_empty() {
        return Err(Error::InvalidInput("cross-entropy needs a non-empty mask".into()));
    }
    let m = logits.cols();
    let n = targets.len() as f64;
    let mut grad = DenseMatrix::zeros(logits.rows(), m);
    let mut loss = 0.0;
    for &(row, class) in targets {
        if row >= logits.rows() || class >= m {
            return Err(Error::InvalidInput(format!(
                "target ({row}, {class}) outside {}x{m} logits",
                logits.rows()
            )));
        }
        let z = logits.row(row);
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - z[class];
        let g = grad.row_mut(row);
        for (k, gk) in g.iter_mut().enumerate() {
            *gk += (z[k] - lse).exp() / n;
        }
        g[class] -= 1.0 / n;
    }
    Ok((loss / n, grad))
}

/// Mean binary cross-entropy of per-vertex logits over `(index, target)` pairs.
pub fn sigmoid_bce(logits: &[f64], targets: &[(usize, f64)]) -> Result<(f64, Vec<f64>)> {
    if targets.is_empty() {
        return Err(Error::InvalidInput("binary cross-entropy needs a non-empty mask".into()));
    }
    let n = targets.len() as f64;
    let mut grad = vec![0.0; logits.len()];
    let mut loss = 0.0;
    for &(i, t) in targets {
        if i >= logits.len() {
            return Err(Error::InvalidInput(format!(
                "target index {i} outside {} logits",
                logits.len()
            )));
        }
        let z = logits[i];
        // max(z, 0) - z t + ln(1 + e^{-|z|})
        loss += z.max(0.0) - z * t + (-z.abs()).exp().ln_1p();
        grad[i] += (sigmoid(z) - t) / n;
    }
    Ok((loss / n, grad))
}
