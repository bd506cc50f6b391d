use super::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct AffineGrads<T> {
    pub d_input: Tensor<T>,
    pub d_weights: Tensor<T>,
    pub d_bias: Vec<T>,
}

fn check<T: Scalar>(input: &Tensor<T>, weights: &Tensor<T>) -> Result<(usize, usize, usize)> {
    let [n, d] = input.dims2()?;
    let [wd, m] = weights.dims2()?;
    if wd != d {
        return Err(Error::shape(format!(
            "input has {d} features but weights expect {wd}"
        )));
    }
    Ok((n, d, m))
}

/// `out[n, m] = bias[m] + Σ_d input[n, d] · weights[d, m]`.
pub fn affine_forward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &[T],
) -> Result<Tensor<T>> {
    let (n, d, m) = check(input, weights)?;
    if bias.len() != m {
        return Err(Error::shape(format!(
            "bias has {} entries for {m} outputs",
            bias.len()
        )));
    }
    let x = input.data();
    let w = weights.data();
    let mut out = Vec::with_capacity(n * m);
    for ni in 0..n {
        for (mi, &b) in bias.iter().enumerate() {
            let mut s = b;
            for di in 0..d {
                s += x[ni * d + di] * w[di * m + mi];
            }
            out.push(s);
        }
    }
    let out = Tensor::new(vec![n, m], out)?;
    out.ensure_finite("affine_forward")?;
    Ok(out)
}

pub fn affine_backward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    upstream: &Tensor<T>,
) -> Result<AffineGrads<T>> {
    let (n, d, m) = check(input, weights)?;
    if upstream.shape() != [n, m] {
        return Err(Error::shape(format!(
            "upstream {:?} does not match output [{n}, {m}]",
            upstream.shape()
        )));
    }
    let x = input.data();
    let w = weights.data();
    let g = upstream.data();

    let mut d_bias = vec![T::zero(); m];
    let mut d_weights = vec![T::zero(); d * m];
    let mut d_input = vec![T::zero(); n * d];
    for ni in 0..n {
        for mi in 0..m {
            let gv = g[ni * m + mi];
            d_bias[mi] += gv;
            for di in 0..d {
                d_weights[di * m + mi] += x[ni * d + di] * gv;
                d_input[ni * d + di] += gv * w[di * m + mi];
            }
        }
    }
    Ok(AffineGrads {
        d_input: Tensor::new(vec![n, d], d_input)?,
        d_weights: Tensor::new(vec![d, m], d_weights)?,
        d_bias,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_weights() {
        let x = Tensor::<f64>::new(vec![2, 3], vec![1., -2., 3., 0.5, 0., 7.]).unwrap();
        let w = Tensor::<f64>::from_fn(&[3, 3], |i| if i % 4 == 0 { 1.0 } else { 0.0 });
        assert_eq!(affine_forward(&x, &w, &[0.0; 3]).unwrap(), x);
    }

    #[test]
    fn hand_arithmetic() {
        let x = Tensor::<f64>::new(vec![1, 2], vec![1., 2.]).unwrap();
        let w = Tensor::<f64>::new(vec![2, 1], vec![3., 4.]).unwrap();
        assert_eq!(affine_forward(&x, &w, &[5.0]).unwrap().data(), &[16.0]);
    }

    #[test]
    fn dimension_mismatch() {
        let x = Tensor::<f64>::zeros(&[1, 2]);
        let w = Tensor::<f64>::zeros(&[3, 1]);
        assert!(affine_forward(&x, &w, &[0.0]).is_err());
        let w = Tensor::<f64>::zeros(&[2, 1]);
        assert!(affine_forward(&x, &w, &[0.0, 0.0]).is_err());
    }
}
