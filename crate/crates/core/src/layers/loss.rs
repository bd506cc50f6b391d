use crate::error::{Error, Result};
use crate::tensor::Scalar;

/// Logistic function, evaluated without overflow for large `|z|`.
pub fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BceOutput<T> {
    /// Mean loss, accumulated in double precision.
    pub loss: f64,
    /// Gradient with respect to each logit: `(σ(z) − y) / N`.
    pub d_logits: Vec<T>,
}

fn check_labels<T: Scalar>(labels: &[T], n: usize) -> Result<()> {
    if labels.len() != n || n == 0 {
        return Err(Error::Shape(format!(
            "{} labels for {n} predictions",
            labels.len()
        )));
    }
    if let Some(bad) = labels.iter().find(|&&y| y != T::zero() && y != T::one()) {
        return Err(Error::Argument(format!("label {bad:?} is not 0 or 1")));
    }
    Ok(())
}

/// Binary cross-entropy on logits:
/// `ln(1 + e^{−|z|}) + max(z, 0) − z·y`, averaged over the batch.
pub fn bce_with_logits<T: Scalar>(logits: &[T], labels: &[T]) -> Result<BceOutput<T>> {
    check_labels(labels, logits.len())?;
    let n = logits.len() as f64;
    let mut loss = 0.0;
    let mut d_logits = Vec::with_capacity(logits.len());
    let inv_n = T::one() / T::from_usize(logits.len()).expect("batch size");
    for (&z, &y) in logits.iter().zip(labels) {
        let (zf, yf) = (z.as_f64(), y.as_f64());
        loss += (-zf.abs()).exp().ln_1p() + zf.max(0.0) - zf * yf;
        d_logits.push((sigmoid(z) - y) * inv_n);
    }
    let loss = loss / n;
    if !loss.is_finite() {
        return Err(Error::NonFinite("bce_with_logits"));
    }
    Ok(BceOutput { loss, d_logits })
}

/// Binary cross-entropy on probabilities, routed through the logit form.
pub fn bce_loss(probs: &[f64], labels: &[f64]) -> Result<f64> {
    if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::Argument(format!("probability {p} outside [0, 1]")));
    }
    let logits: Vec<f64> = probs.iter().map(|&p| (p / (1.0 - p)).ln()).collect();
    check_labels(labels, probs.len())?;
    let n = probs.len() as f64;
    let mut loss = 0.0;
    for (&z, &y) in logits.iter().zip(labels) {
        // saturated predictions: the limit of the logit form
        loss += if z.is_infinite() {
            if (z > 0.0) == (y == 1.0) {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            (-z.abs()).exp().ln_1p() + z.max(0.0) - z * y
        };
    }
    Ok(loss / n)
}
