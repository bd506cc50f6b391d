use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::conv::output_extent;
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Max-pooling window. Padded cells never win the max.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolConfig {
    pub window: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
}

impl PoolConfig {
    pub fn new(window: usize, stride: usize, padding: usize) -> Self {
        PoolConfig {
            window: (window, window),
            stride: (stride, stride),
            padding: (padding, padding),
        }
    }

    pub fn output_extent(&self, rows: usize, cols: usize) -> Result<(usize, usize)> {
        if self.padding.0 >= self.window.0 || self.padding.1 >= self.window.1 {
            return Err(Error::Config(format!(
                "pool padding must be smaller than the window: {self:?}"
            )));
        }
        Ok((
            output_extent(rows, self.window.0, self.stride.0, self.padding.0)?,
            output_extent(cols, self.window.1, self.stride.1, self.padding.1)?,
        ))
    }
}

/// Flat source position of every pooled output, recorded by the forward pass.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PoolIndex {
    pub input_shape: Vec<usize>,
    pub output_shape: Vec<usize>,
    pub argmax: Vec<usize>,
}

/// Ties resolve to the first maximum in row-major window order.
pub fn maxpool_forward<T: Scalar>(
    input: &Tensor<T>,
    cfg: &PoolConfig,
) -> Result<(Tensor<T>, PoolIndex)> {
    let [n, c, h, w] = input.dims4()?;
    let (oh, ow) = cfg.output_extent(h, w)?;
    let (sh, sw) = cfg.stride;
    let (ph, pw) = cfg.padding;
    let x = input.data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut argmax = Vec::with_capacity(n * c * oh * ow);

    for plane in 0..n * c {
        let base = plane * h * w;
        for y in 0..oh {
            let y0 = (y * sh) as isize - ph as isize;
            for xo in 0..ow {
                let x0 = (xo * sw) as isize - pw as isize;
                let mut best: Option<(T, usize)> = None;
                for i in 0..cfg.window.0 {
                    let iy = y0 + i as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for j in 0..cfg.window.1 {
                        let ix = x0 + j as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let idx = base + iy as usize * w + ix as usize;
                        let v = x[idx];
                        match best {
                            Some((b, _)) if v.partial_cmp(&b) != Some(Ordering::Greater) => {}
                            _ => best = Some((v, idx)),
                        }
                    }
                }
                let (v, idx) =
                    best.ok_or_else(|| Error::shape("pool window entirely in padding"))?;
                out.push(v);
                argmax.push(idx);
            }
        }
    }

    let out = Tensor::new(vec![n, c, oh, ow], out)?;
    out.ensure_finite("maxpool_forward")?;
    Ok((
        out,
        PoolIndex {
            input_shape: input.shape().to_vec(),
            output_shape: vec![n, c, oh, ow],
            argmax,
        },
    ))
}

/// Routes each upstream value to its recorded source; overlapping windows add.
pub fn maxpool_backward<T: Scalar>(
    index: &PoolIndex,
    upstream: &Tensor<T>,
    input_shape: &[usize],
) -> Result<Tensor<T>> {
    if upstream.shape() != index.output_shape.as_slice() {
        return Err(Error::shape(format!(
            "upstream {:?} does not match pooled output {:?}",
            upstream.shape(),
            index.output_shape
        )));
    }
    if input_shape != index.input_shape.as_slice() {
        return Err(Error::shape(format!(
            "input shape {input_shape:?} differs from forward input {:?}",
            index.input_shape
        )));
    }
    let mut dx = Tensor::zeros(input_shape);
    let len = dx.len();
    let d = dx.data_mut();
    for (&src, &g) in index.argmax.iter().zip(upstream.data()) {
        if src >= len {
            return Err(Error::shape(format!(
                "argmax index {src} out of range for {len} inputs"
            )));
        }
        d[src] += g;
    }
    Ok(dx)
}

/// Mean over the spatial extent: `[N, C, H, W] → [N, C]`.
pub fn global_avg_pool_forward<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, h, w] = input.dims4()?;
    let area = h * w;
    let scale = T::one() / T::from_usize(area).expect("area");
    let data = input
        .data()
        .chunks_exact(area)
        .map(|plane| {
            let mut s = T::zero();
            for &v in plane {
                s += v;
            }
            s * scale
        })
        .collect();
    Tensor::new(vec![n, c], data)
}

pub fn global_avg_pool_backward<T: Scalar>(
    upstream: &Tensor<T>,
    input_shape: &[usize],
) -> Result<Tensor<T>> {
    let [n, c] = upstream.dims2()?;
    let (h, w) = match input_shape {
        [n2, c2, h, w] if *n2 == n && *c2 == c => (*h, *w),
        _ => {
            return Err(Error::shape(format!(
                "upstream {:?} does not match input {input_shape:?}",
                upstream.shape()
            )))
        }
    };
    let area = h * w;
    let scale = T::one() / T::from_usize(area).expect("area");
    let mut data = Vec::with_capacity(n * c * area);
    for &g in upstream.data() {
        data.extend(std::iter::repeat_n(g * scale, area));
    }
    Tensor::new(input_shape.to_vec(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn two_by_two_max() {
        let x = Tensor::<f32>::new(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (y, idx) = maxpool_forward(&x, &PoolConfig::new(2, 2, 0)).unwrap();
        assert_eq!(y.data(), &[4.0]);
        assert_eq!(idx.argmax, vec![3]);

        let up = Tensor::<f32>::filled(&[1, 1, 1, 1], 5.0);
        let dx = maxpool_backward(&idx, &up, x.shape()).unwrap();
        assert_eq!(dx.data(), &[0.0, 0.0, 0.0, 5.0]);

        let zero = Tensor::<f32>::zeros(&[1, 1, 1, 1]);
        let dx = maxpool_backward(&idx, &zero, x.shape()).unwrap();
        assert!(dx.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_input_picks_top_left() {
        let x = Tensor::<f32>::filled(&[1, 1, 4, 4], 0.25);
        let (y, idx) = maxpool_forward(&x, &PoolConfig::new(2, 2, 0)).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.25));
        assert_eq!(idx.argmax, vec![0, 2, 8, 10]);
    }

    #[test]
    fn random_input_matches_naive_pooling() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let x = Tensor::<f64>::from_fn(&[1, 3, 6, 6], |_| rng.gen_range(-1.0..1.0));
        let (y, _) = maxpool_forward(&x, &PoolConfig::new(2, 2, 0)).unwrap();
        let mut expected = Vec::new();
        for c in 0..3 {
            for oy in 0..3 {
                for ox in 0..3 {
                    let mut m = f64::NEG_INFINITY;
                    for i in 0..2 {
                        for j in 0..2 {
                            m = m.max(x.data()[c * 36 + (oy * 2 + i) * 6 + ox * 2 + j]);
                        }
                    }
                    expected.push(m);
                }
            }
        }
        assert_eq!(y.data(), &expected[..]);
    }

    #[test]
    fn padded_pool_preserves_extent() {
        let x = Tensor::<f32>::from_fn(&[1, 2, 5, 5], |i| i as f32);
        let (y, _) = maxpool_forward(&x, &PoolConfig::new(3, 1, 1)).unwrap();
        assert_eq!(y.shape(), &[1, 2, 5, 5]);
        // monotone ramp: each window's max is its bottom-right valid cell
        assert_eq!(y.data()[0], 6.0);
        assert_eq!(y.data()[24], 24.0);
    }

    #[test]
    fn overlapping_windows_accumulate() {
        let x =
            Tensor::<f32>::new(vec![1, 1, 3, 3], vec![0., 0., 0., 0., 9., 0., 0., 0., 0.]).unwrap();
        let (_, idx) = maxpool_forward(&x, &PoolConfig::new(2, 1, 0)).unwrap();
        let up = Tensor::<f32>::filled(&[1, 1, 2, 2], 1.0);
        let dx = maxpool_backward(&idx, &up, x.shape()).unwrap();
        assert_eq!(dx.data()[4], 4.0);
    }

    #[test]
    fn corrupted_index_is_rejected() {
        let x = Tensor::<f32>::filled(&[1, 1, 2, 2], 1.0);
        let (_, mut idx) = maxpool_forward(&x, &PoolConfig::new(2, 2, 0)).unwrap();
        idx.argmax[0] = 99;
        let up = Tensor::<f32>::filled(&[1, 1, 1, 1], 1.0);
        assert!(maxpool_backward(&idx, &up, x.shape()).is_err());
    }

    #[test]
    fn global_average() {
        let x = Tensor::<f64>::from_fn(&[1, 2, 2, 2], |i| i as f64);
        let y = global_avg_pool_forward(&x).unwrap();
        assert_eq!(y.data(), &[1.5, 5.5]);
        let dx = global_avg_pool_backward(&Tensor::filled(&[1, 2], 4.0), x.shape()).unwrap();
        assert!(dx.data().iter().all(|&v| v == 1.0));
    }
}
