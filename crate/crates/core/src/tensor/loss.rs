use super::Tensor;
use crate::error::{Error, Result};

/// Summed softmax log-loss over a batch and its gradient at the logits.
#[derive(Debug, Clone)]
pub struct LogLoss {
    pub loss: f64,
    pub grad: Tensor,
}

/// `loss = −Σ_i (x[i, c_i] − log Σ_j exp x[i, j])`, evaluated with the row
/// max subtracted. The gradient row is `softmax(x_i) − onehot(c_i)`.
pub fn softmax_logloss(logits: &Tensor, labels: &[usize]) -> Result<LogLoss> {
    let &[n, c] = logits.shape() else {
        return Err(Error::Dimension(format!(
            "logits must be N×C, got {:?}",
            logits.shape()
        )));
    };
    if c < 2 {
        return Err(Error::Dimension(format!("need at least 2 classes, got {c}")));
    }
    if labels.len() != n {
        return Err(Error::Batch {
            predictions: n,
            truths: labels.len(),
        });
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::Label { label, classes: c });
    }
    let mut grad = Tensor::zeros(&[n, c]);
    let mut loss = 0.0;
    for (i, &label) in labels.iter().enumerate() {
        let row = &logits.data[i * c..(i + 1) * c];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let g = &mut grad.data[i * c..(i + 1) * c];
        let mut sum = 0.0;
        for (gj, &x) in g.iter_mut().zip(row) {
            *gj = (x - max).exp();
            sum += *gj;
        }
        loss += sum.ln() - (row[label] - max);
        for gj in g.iter_mut() {
            *gj /= sum;
        }
        g[label] -= 1.0;
    }
    if !loss.is_finite() {
        return Err(Error::NonFinite("softmax_logloss"));
    }
    grad.check_finite("softmax_logloss")?;
    Ok(LogLoss { loss, grad })
}
