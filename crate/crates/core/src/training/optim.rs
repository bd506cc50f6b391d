use crate::error::{Error, Result};
use crate::spoofnet::{NetworkParams, ParamKind};
use crate::tensor::Scalar;

use super::HyperParams;

/// One momentum-SGD update of a single buffer with coupled L2 decay:
/// `g' = g + wd·w`, `v ← μ·v − lr·g'`, `w ← w + v`.
pub fn sgd_update<T: Scalar>(
    weights: &mut [T],
    grads: &[T],
    velocity: &mut [T],
    learning_rate: f64,
    weight_decay: f64,
    momentum: f64,
) -> Result<()> {
    if weights.len() != grads.len() || weights.len() != velocity.len() {
        return Err(Error::Shape(format!(
            "sgd buffers differ: {} weights, {} grads, {} velocity",
            weights.len(),
            grads.len(),
            velocity.len()
        )));
    }
    let lr = T::from_f64_lossy(learning_rate);
    let wd = T::from_f64_lossy(weight_decay);
    let mu = T::from_f64_lossy(momentum);
    for ((w, &g), v) in weights.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        let g = g + wd * *w;
        *v = mu * *v - lr * g;
        *w += *v;
    }
    Ok(())
}

/// Applies [`sgd_update`] to every buffer; biases get no weight decay.
pub fn sgd_step<T: Scalar>(
    params: &mut NetworkParams<T>,
    grads: &NetworkParams<T>,
    velocity: &mut NetworkParams<T>,
    hp: &HyperParams,
) -> Result<()> {
    let g = grads.buffers();
    let mut v = velocity.buffers_mut();
    let mut p = params.buffers_mut();
    if g.len() != p.len() || v.len() != p.len() {
        return Err(Error::Shape("parameter layouts differ".into()));
    }
    for ((pb, gb), vb) in p.iter_mut().zip(&g).zip(v.iter_mut()) {
        let wd = match pb.1 {
            ParamKind::Weight => hp.weight_decay,
            ParamKind::Bias => 0.0,
        };
        sgd_update(pb.2, gb.2, vb.2, hp.learning_rate, wd, hp.momentum)?;
    }
    Ok(())
}

/// Outcome of reporting one epoch's validation loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StopCheck {
    pub improved: bool,
    pub stop: bool,
}

/// Stops once `patience` consecutive epochs fail to beat the best loss by
/// more than `min_delta`.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    min_delta: f64,
    best: Option<(usize, f64)>,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize, min_delta: f64) -> Self {
        EarlyStopping {
            patience,
            min_delta,
            best: None,
            stale: 0,
        }
    }

    /// `epoch` is 1-based.
    pub fn observe(&mut self, epoch: usize, val_loss: f64) -> StopCheck {
        let improved = match self.best {
            None => true,
            Some((_, best)) => val_loss < best - self.min_delta,
        };
        if improved {
            self.best = Some((epoch, val_loss));
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        StopCheck {
            improved,
            stop: self.stale >= self.patience,
        }
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best.map(|(e, _)| e)
    }

    pub fn best_loss(&self) -> Option<f64> {
        self.best.map(|(_, l)| l)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_zero_decay_is_a_no_op() {
        let mut w = vec![0.3f64, -2.0];
        let mut v = vec![0.0; 2];
        sgd_update(&mut w, &[0.0, 0.0], &mut v, 1e-5, 0.0, 0.9).unwrap();
        assert_eq!(w, vec![0.3, -2.0]);
    }

    #[test]
    fn decay_only_step() {
        let mut w = vec![1.0f64];
        let mut v = vec![0.0];
        sgd_update(&mut w, &[0.0], &mut v, 1e-5, 1e-4, 0.0).unwrap();
        assert_eq!(w[0], 1.0 - 1e-9);
    }

    #[test]
    fn quadratic_trajectory_matches_hand_recurrence() {
        // loss ½w², gradient w; three steps with lr 0.1, momentum 0.9
        let (lr, mu) = (0.1, 0.9);
        let mut w = vec![1.0f64];
        let mut v = vec![0.0];
        let mut expected = Vec::new();
        let (mut hw, mut hv) = (1.0f64, 0.0f64);
        for _ in 0..3 {
            hv = mu * hv - lr * hw;
            hw += hv;
            expected.push(hw);
        }
        let mut got = Vec::new();
        for _ in 0..3 {
            let g = vec![w[0]];
            sgd_update(&mut w, &g, &mut v, lr, 0.0, mu).unwrap();
            got.push(w[0]);
        }
        // 0.9, 0.72, 0.486 by hand
        for (a, b) in got.iter().zip([0.9, 0.72, 0.486]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(got, expected);
    }

    #[test]
    fn mismatched_buffers_error() {
        let mut w = vec![1.0f32; 2];
        let mut v = vec![0.0f32; 3];
        assert!(sgd_update(&mut w, &[0.0, 0.0], &mut v, 0.1, 0.0, 0.0).is_err());
    }

    #[test]
    fn patience_arithmetic() {
        let mut es = EarlyStopping::new(5, 1e-6);
        let seq = [1.0, 0.9, 0.95, 0.96, 0.97, 0.98, 0.99];
        let mut stopped = None;
        for (i, &l) in seq.iter().enumerate() {
            if es.observe(i + 1, l).stop {
                stopped = Some(i + 1);
                break;
            }
        }
        assert_eq!(stopped, Some(7));
        assert_eq!(es.best_epoch(), Some(2));
    }

    #[test]
    fn min_delta_ignores_noise() {
        let mut es = EarlyStopping::new(1, 1e-6);
        assert!(es.observe(1, 1.0).improved);
        let c = es.observe(2, 1.0 - 1e-7);
        assert!(!c.improved && c.stop);
    }
}
