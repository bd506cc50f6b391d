use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub fn relu_forward<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Passes `upstream` where the forward input was strictly positive.
///
/// Either the forward input or its output may be supplied: both are positive
/// at exactly the same positions.
pub fn relu_backward<T: Scalar>(forward: &Tensor<T>, upstream: &Tensor<T>) -> Result<Tensor<T>> {
    if forward.shape() != upstream.shape() {
        return Err(Error::Shape(format!(
            "relu upstream {:?} vs forward {:?}",
            upstream.shape(),
            forward.shape()
        )));
    }
    let data = forward
        .data()
        .iter()
        .zip(upstream.data())
        .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::new(forward.shape().to_vec(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clamps_negatives() {
        let x = Tensor::<f32>::new(vec![3], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu_forward(&x).data(), &[0.0, 0.0, 2.0]);
        let up = Tensor::<f32>::new(vec![3], vec![7.0, 7.0, 7.0]).unwrap();
        assert_eq!(relu_backward(&x, &up).unwrap().data(), &[0.0, 0.0, 7.0]);
    }

    #[test]
    fn positive_input_is_identity() {
        let x = Tensor::<f64>::from_fn(&[2, 5], |i| 0.5 + i as f64);
        let up = Tensor::<f64>::from_fn(&[2, 5], |i| -(i as f64));
        assert_eq!(relu_forward(&x), x);
        assert_eq!(relu_backward(&x, &up).unwrap(), up);
    }
}
