use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Stacks `[N, Ci, H, W]` tensors along the channel axis, in argument order.
pub fn channel_concat<T: Scalar>(inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = inputs
        .first()
        .ok_or_else(|| Error::shape("channel_concat needs at least one input"))?;
    let [n, _, h, w] = first.dims4()?;
    let mut channels = Vec::with_capacity(inputs.len());
    for t in inputs {
        let [tn, tc, th, tw] = t.dims4()?;
        if (tn, th, tw) != (n, h, w) {
            return Err(Error::shape(format!(
                "cannot concatenate {:?} with {:?}",
                t.shape(),
                first.shape()
            )));
        }
        channels.push(tc);
    }
    let total: usize = channels.iter().sum();
    let plane = h * w;
    let mut data = Vec::with_capacity(n * total * plane);
    for ni in 0..n {
        for (t, &c) in inputs.iter().zip(&channels) {
            data.extend_from_slice(&t.data()[ni * c * plane..(ni + 1) * c * plane]);
        }
    }
    Tensor::new(vec![n, total, h, w], data)
}

/// Inverse of [`channel_concat`]: splits channels at the given widths.
pub fn channel_split<T: Scalar>(input: &Tensor<T>, widths: &[usize]) -> Result<Vec<Tensor<T>>> {
    let [n, c, h, w] = input.dims4()?;
    if widths.iter().sum::<usize>() != c || widths.contains(&0) {
        return Err(Error::shape(format!(
            "split widths {widths:?} do not partition {c} channels"
        )));
    }
    let plane = h * w;
    let mut parts: Vec<Vec<T>> = widths
        .iter()
        .map(|&k| Vec::with_capacity(n * k * plane))
        .collect();
    for ni in 0..n {
        let mut offset = ni * c * plane;
        for (part, &k) in parts.iter_mut().zip(widths) {
            part.extend_from_slice(&input.data()[offset..offset + k * plane]);
            offset += k * plane;
        }
    }
    parts
        .into_iter()
        .zip(widths)
        .map(|(data, &k)| Tensor::new(vec![n, k, h, w], data))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_tensors_stack_in_order() {
        let a = Tensor::<f32>::filled(&[1, 1, 2, 2], 1.0);
        let b = Tensor::<f32>::filled(&[1, 1, 2, 2], 2.0);
        let y = channel_concat(&[&a, &b]).unwrap();
        assert_eq!(y.shape(), &[1, 2, 2, 2]);
        assert_eq!(y.data(), &[1., 1., 1., 1., 2., 2., 2., 2.]);
    }

    #[test]
    fn single_input_is_identity() {
        let a = Tensor::<f32>::from_fn(&[2, 3, 2, 2], |i| i as f32);
        assert_eq!(channel_concat(&[&a]).unwrap(), a);
    }

    #[test]
    fn spatial_mismatch_is_rejected() {
        let a = Tensor::<f32>::zeros(&[1, 1, 2, 2]);
        let b = Tensor::<f32>::zeros(&[1, 1, 3, 2]);
        assert!(channel_concat(&[&a, &b]).is_err());
    }

    #[test]
    fn index_mapping_and_split() {
        let a = Tensor::<f64>::from_fn(&[2, 2, 3, 3], |i| i as f64);
        let b = Tensor::<f64>::from_fn(&[2, 3, 3, 3], |i| 1000.0 + i as f64);
        let c = Tensor::<f64>::from_fn(&[2, 4, 3, 3], |i| 2000.0 + i as f64);
        let y = channel_concat(&[&a, &b, &c]).unwrap();
        assert_eq!(y.shape(), &[2, 9, 3, 3]);
        // channels 0..2 come from a, 2..5 from b, 5..9 from c
        for n in 0..2 {
            for p in 0..9 {
                assert_eq!(y.data()[(n * 9 + 5) * 9 + p], c.data()[(n * 4) * 9 + p]);
                assert_eq!(y.data()[(n * 9 + 3) * 9 + p], b.data()[(n * 3 + 1) * 9 + p]);
            }
        }
        let parts = channel_split(&y, &[2, 3, 4]).unwrap();
        assert_eq!(parts, vec![a, b, c]);
    }
}
