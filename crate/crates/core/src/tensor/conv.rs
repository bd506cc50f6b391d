use serde::{Deserialize, Serialize};

use super::gemm::Layout;
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Geometry of a 2-D convolution with zero padding.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvConfig {
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
}

impl ConvConfig {
    pub fn new(out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        ConvConfig {
            out_channels,
            kernel: (kernel, kernel),
            stride: (stride, stride),
            padding: (padding, padding),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.out_channels == 0
            || self.kernel.0 == 0
            || self.kernel.1 == 0
            || self.stride.0 == 0
            || self.stride.1 == 0
        {
            return Err(Error::Config(format!(
                "convolution extents and strides must be positive: {self:?}"
            )));
        }
        Ok(())
    }

    /// Output `(rows, cols)` for an input of `rows × cols`.
    pub fn output_extent(&self, rows: usize, cols: usize) -> Result<(usize, usize)> {
        self.validate()?;
        Ok((
            output_extent(rows, self.kernel.0, self.stride.0, self.padding.0)?,
            output_extent(cols, self.kernel.1, self.stride.1, self.padding.1)?,
        ))
    }
}

/// `(input + 2·pad − kernel) / stride + 1`, rejecting fractional results.
pub fn output_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> Result<usize> {
    let padded = input + 2 * pad;
    if kernel == 0 || stride == 0 || padded < kernel {
        return Err(Error::shape(format!(
            "window {kernel} does not fit input {input} with padding {pad}"
        )));
    }
    if !(padded - kernel).is_multiple_of(stride) {
        return Err(Error::shape(format!(
            "non-integral output extent: ({input} + 2·{pad} − {kernel}) / {stride} + 1"
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

/// Output positions `o` in `[lo, hi)` whose source `o·stride + k − pad` is in bounds.
pub(super) fn valid_range(
    out_len: usize,
    in_len: usize,
    stride: usize,
    k: usize,
    pad: usize,
) -> (usize, usize) {
    let lo = if pad > k {
        (pad - k).div_ceil(stride)
    } else {
        0
    };
    let hi = if in_len + pad > k {
        ((in_len + pad - k - 1) / stride + 1).min(out_len)
    } else {
        0
    };
    (lo, hi.max(lo))
}

struct Geometry {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    sh: usize,
    sw: usize,
    ph: usize,
    pw: usize,
    rows: Vec<(usize, usize)>,
    cols: Vec<(usize, usize)>,
}

fn geometry<T: Scalar>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    cfg: &ConvConfig,
) -> Result<Geometry> {
    let [n, c, h, w] = input.dims4()?;
    let [k, kc, kh, kw] = kernels.dims4()?;
    if k != cfg.out_channels || (kh, kw) != cfg.kernel {
        return Err(Error::shape(format!(
            "kernel tensor {:?} disagrees with config {cfg:?}",
            kernels.shape()
        )));
    }
    if kc != c {
        return Err(Error::shape(format!(
            "input has {c} channels but kernels expect {kc}"
        )));
    }
    let (oh, ow) = cfg.output_extent(h, w)?;
    let (sh, sw) = cfg.stride;
    let (ph, pw) = cfg.padding;
    Ok(Geometry {
        n,
        c,
        h,
        w,
        k,
        kh,
        kw,
        oh,
        ow,
        sh,
        sw,
        ph,
        pw,
        rows: (0..kh).map(|i| valid_range(oh, h, sh, i, ph)).collect(),
        cols: (0..kw).map(|j| valid_range(ow, w, sw, j, pw)).collect(),
    })
}

/// Unfolds sample `ni` into `cols[(c, i, j), (y, x)]`, zero where a tap falls
/// in the padding.
fn im2col<T: Scalar>(g: &Geometry, x: &[T], ni: usize, cols: &mut [T]) {
    let plane_in = g.h * g.w;
    let plane_out = g.oh * g.ow;
    cols.fill(T::zero());
    for ci in 0..g.c {
        let src = &x[(ni * g.c + ci) * plane_in..][..plane_in];
        for i in 0..g.kh {
            let (ylo, yhi) = g.rows[i];
            for j in 0..g.kw {
                let (xlo, xhi) = g.cols[j];
                if xlo >= xhi {
                    continue;
                }
                let row = &mut cols[((ci * g.kh + i) * g.kw + j) * plane_out..][..plane_out];
                let ix0 = xlo * g.sw + j - g.pw;
                for y in ylo..yhi {
                    let iy = y * g.sh + i - g.ph;
                    let dst = &mut row[y * g.ow + xlo..y * g.ow + xhi];
                    if g.sw == 1 {
                        dst.copy_from_slice(&src[iy * g.w + ix0..][..xhi - xlo]);
                    } else {
                        for (t, d) in dst.iter_mut().enumerate() {
                            *d = src[iy * g.w + ix0 + t * g.sw];
                        }
                    }
                }
            }
        }
    }
}

/// Adds the folded-back columns of sample `ni` into `dx`.
fn col2im_add<T: Scalar>(g: &Geometry, cols: &[T], ni: usize, dx: &mut [T]) {
    let plane_in = g.h * g.w;
    let plane_out = g.oh * g.ow;
    for ci in 0..g.c {
        let dst = &mut dx[(ni * g.c + ci) * plane_in..][..plane_in];
        for i in 0..g.kh {
            let (ylo, yhi) = g.rows[i];
            for j in 0..g.kw {
                let (xlo, xhi) = g.cols[j];
                if xlo >= xhi {
                    continue;
                }
                let row = &cols[((ci * g.kh + i) * g.kw + j) * plane_out..][..plane_out];
                let ix0 = xlo * g.sw + j - g.pw;
                for y in ylo..yhi {
                    let iy = y * g.sh + i - g.ph;
                    let src = &row[y * g.ow + xlo..y * g.ow + xhi];
                    for (t, &v) in src.iter().enumerate() {
                        dst[iy * g.w + ix0 + t * g.sw] += v;
                    }
                }
            }
        }
    }
}

/// Cross-correlation with zero padding.
///
/// Each output starts from `bias` and accumulates the products in `(c, i, j)`
/// order; in double precision this is exactly the textbook loop.
pub fn conv2d_forward<T: Scalar>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    bias: &[T],
    cfg: &ConvConfig,
) -> Result<Tensor<T>> {
    let g = geometry(input, kernels, cfg)?;
    if bias.len() != g.k {
        return Err(Error::shape(format!(
            "bias has {} entries for {} output channels",
            bias.len(),
            g.k
        )));
    }
    let plane_out = g.oh * g.ow;
    let depth = g.c * g.kh * g.kw;
    let mut out = vec![T::zero(); g.n * g.k * plane_out];
    let mut cols = vec![T::zero(); depth * plane_out];
    for ni in 0..g.n {
        im2col(&g, input.data(), ni, &mut cols);
        let dst = &mut out[ni * g.k * plane_out..][..g.k * plane_out];
        for (plane, &b) in dst.chunks_exact_mut(plane_out).zip(bias) {
            plane.fill(b);
        }
        T::gemm_acc(
            kernels.data(),
            Layout::row_major(g.k, depth),
            &cols,
            Layout::row_major(depth, plane_out),
            dst,
        );
    }
    let out = Tensor::new(vec![g.n, g.k, g.oh, g.ow], out)?;
    out.ensure_finite("conv2d_forward")?;
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvGrads<T> {
    pub d_input: Tensor<T>,
    pub d_kernels: Tensor<T>,
    pub d_bias: Vec<T>,
}

pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    cfg: &ConvConfig,
    upstream: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let (d_input, d_kernels, d_bias) = conv2d_backward_impl(input, kernels, cfg, upstream, true)?;
    Ok(ConvGrads {
        d_input: d_input.expect("input gradient requested"),
        d_kernels,
        d_bias,
    })
}

/// Backward pass; the input gradient is skipped when `want_input` is false
/// (the first layer of a network never needs it).
/// Input, kernel and bias gradients.
pub(crate) type RawConvGrads<T> = (Option<Tensor<T>>, Tensor<T>, Vec<T>);

pub(crate) fn conv2d_backward_impl<T: Scalar>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    cfg: &ConvConfig,
    upstream: &Tensor<T>,
    want_input: bool,
) -> Result<RawConvGrads<T>> {
    let g = geometry(input, kernels, cfg)?;
    if upstream.shape() != [g.n, g.k, g.oh, g.ow] {
        return Err(Error::shape(format!(
            "upstream {:?} does not match forward output [{}, {}, {}, {}]",
            upstream.shape(),
            g.n,
            g.k,
            g.oh,
            g.ow
        )));
    }
    let plane_out = g.oh * g.ow;
    let depth = g.c * g.kh * g.kw;
    let up = upstream.data();

    let mut d_bias = vec![T::zero(); g.k];
    for ni in 0..g.n {
        for (ki, db) in d_bias.iter_mut().enumerate() {
            for &v in &up[(ni * g.k + ki) * plane_out..][..plane_out] {
                *db += v;
            }
        }
    }

    let mut dk = vec![T::zero(); g.k * depth];
    let mut cols = vec![T::zero(); depth * plane_out];
    let mut d_cols = if want_input {
        vec![T::zero(); depth * plane_out]
    } else {
        Vec::new()
    };
    let mut dx = if want_input {
        vec![T::zero(); g.n * g.c * g.h * g.w]
    } else {
        Vec::new()
    };
    for ni in 0..g.n {
        let up_n = &up[ni * g.k * plane_out..][..g.k * plane_out];
        im2col(&g, input.data(), ni, &mut cols);
        T::gemm_acc(
            up_n,
            Layout::row_major(g.k, plane_out),
            &cols,
            Layout::transposed(plane_out, depth),
            &mut dk,
        );
        if want_input {
            d_cols.fill(T::zero());
            T::gemm_acc(
                kernels.data(),
                Layout::transposed(depth, g.k),
                up_n,
                Layout::row_major(g.k, plane_out),
                &mut d_cols,
            );
            col2im_add(&g, &d_cols, ni, &mut dx);
        }
    }

    let d_input = if want_input {
        let dx = Tensor::new(vec![g.n, g.c, g.h, g.w], dx)?;
        dx.ensure_finite("conv2d_backward")?;
        Some(dx)
    } else {
        None
    };
    let dk = Tensor::new(vec![g.k, g.c, g.kh, g.kw], dk)?;
    dk.ensure_finite("conv2d_backward")?;
    Ok((d_input, dk, d_bias))
}
