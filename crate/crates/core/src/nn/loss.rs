use super::layers::softmax_rows;
use super::matrix::Matrix;
use crate::error::{Error, Result};

/// Scalar loss with per-example values and the gradient w.r.t. the prediction.
#[derive(Debug, Clone)]
pub struct LossValue {
    pub value: f64,
    pub per_example: Vec<f64>,
    pub grad: Matrix,
}

/// Mean squared error: mean over features, then mean over the batch.
pub fn mse_loss(pred: &Matrix, target: &Matrix) -> Result<LossValue> {
    if pred.shape() != target.shape() {
        return Err(Error::shape(format!(
            "mse: prediction {:?} vs target {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let (batch, k) = pred.shape();
    if batch == 0 || k == 0 {
        return Err(Error::shape("mse over an empty batch"));
    }
    let scale = 2.0 / (k as f64 * batch as f64);
    let mut grad = Matrix::zeros(batch, k);
    let mut per_example = Vec::with_capacity(batch);
    for r in 0..batch {
        let p = pred.row(r);
        let t = target.row(r);
        let mut s = 0.0;
        let g = grad.row_mut(r);
        for j in 0..k {
            let d = p[j] - t[j];
            s += d * d;
            g[j] = scale * d;
        }
        per_example.push(s / k as f64);
    }
    let value = per_example.iter().sum::<f64>() / batch as f64;
    Ok(LossValue { value, per_example, grad })
}

/// Softmax cross-entropy against integer labels, via log-sum-exp.
pub fn cross_entropy_loss(logits: &Matrix, labels: &[usize]) -> Result<LossValue> {
    let (batch, classes) = logits.shape();
    if labels.len() != batch {
        return Err(Error::shape(format!("{} labels for a batch of {batch}", labels.len())));
    }
    if batch == 0 {
        return Err(Error::shape("cross-entropy over an empty batch"));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::LabelOutOfRange { label: bad, classes });
    }
    let probs = softmax_rows(logits);
    let mut grad = probs;
    let mut per_example = Vec::with_capacity(batch);
    for (r, &label) in labels.iter().enumerate() {
        let row = logits.row(r);
        // lse - x_label = (max - x_label) + ln(1 + Σ_{i≠argmax} e^(x_i - max))
        let (arg, max) = row
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) });
        let rest: f64 =
            row.iter().enumerate().filter(|&(i, _)| i != arg).map(|(_, v)| (v - max).exp()).sum();
        per_example.push((max - row[label]) + rest.ln_1p());
        let g = grad.row_mut(r);
        g[label] -= 1.0;
        g.iter_mut().for_each(|v| *v /= batch as f64);
    }
    let value = per_example.iter().sum::<f64>() / batch as f64;
    Ok(LossValue { value, per_example, grad })
}

/// Row-wise argmax.
pub fn argmax_rows(m: &Matrix) -> Vec<usize> {
    m.iter_rows()
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
                .0
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mse_examples() {
        let a = Matrix::from_rows(&[vec![1.0, 1.0]]).unwrap();
        assert_eq!(mse_loss(&a, &a).unwrap().value, 0.0);
        let t = Matrix::from_rows(&[vec![1.0, 3.0]]).unwrap();
        let l = mse_loss(&a, &t).unwrap();
        assert_eq!(l.value, 2.0);
        assert_eq!(l.grad.as_slice(), &[0.0, -2.0]);
        assert!(mse_loss(&a, &Matrix::zeros(1, 3)).is_err());
    }

    #[test]
    fn cross_entropy_examples() {
        let l = cross_entropy_loss(&Matrix::zeros(1, 4), &[2]).unwrap();
        assert!((l.value - 4f64.ln()).abs() < 1e-12);
        let l = cross_entropy_loss(&Matrix::from_rows(&[vec![10.0, -10.0]]).unwrap(), &[0]).unwrap();
        // log(1 + e^-20)
        let want = (-20f64).exp().ln_1p();
        assert!((l.value - want).abs() < 1e-22);
        assert!((l.value - 2.06e-9).abs() < 0.01e-9);
        assert!(matches!(
            cross_entropy_loss(&Matrix::zeros(1, 2), &[2]),
            Err(Error::LabelOutOfRange { label: 2, classes: 2 })
        ));
    }

    #[test]
    fn argmax_picks_first_max() {
        let m = Matrix::from_rows(&[vec![1.0, 3.0, 3.0], vec![-1.0, -2.0, -3.0]]).unwrap();
        assert_eq!(argmax_rows(&m), vec![1, 0]);
    }
}
