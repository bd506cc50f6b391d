use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

use super::BBox;

/// Crops `image` (`[1, 1, H, W]`) to `bbox` (the whole frame when absent) and
/// resamples it to `target × target` with corner-aligned bilinear
/// interpolation: output corners coincide with the crop's corner pixels.
pub fn crop_resize<T: Scalar>(
    image: &Tensor<T>,
    bbox: Option<BBox>,
    target: usize,
) -> Result<Tensor<T>> {
    let [n, c, h, w] = image.dims4()?;
    if n != 1 || c != 1 {
        return Err(Error::Shape(format!(
            "expected a single grayscale image, got {:?}",
            image.shape()
        )));
    }
    if target == 0 {
        return Err(Error::Argument("target size must be positive".into()));
    }
    let b = bbox.unwrap_or(BBox {
        x_min: 0,
        y_min: 0,
        x_max: w,
        y_max: h,
    });
    b.check_within(w, h)?;
    let (cw, ch) = (b.width(), b.height());
    let src = image.data();
    let at = |y: usize, x: usize| src[(b.y_min + y) * w + b.x_min + x].as_f64();

    let axis = |out: usize, len: usize| -> Vec<(usize, usize, f64)> {
        (0..out)
            .map(|i| {
                let s = if out == 1 {
                    (len - 1) as f64 / 2.0
                } else {
                    i as f64 * (len - 1) as f64 / (out - 1) as f64
                };
                let i0 = (s.floor() as usize).min(len - 1);
                let i1 = (i0 + 1).min(len - 1);
                (i0, i1, s - i0 as f64)
            })
            .collect()
    };
    let rows = axis(target, ch);
    let cols = axis(target, cw);

    let mut out = Vec::with_capacity(target * target);
    for &(y0, y1, fy) in &rows {
        for &(x0, x1, fx) in &cols {
            let top = lerp(at(y0, x0), at(y0, x1), fx);
            let bottom = lerp(at(y1, x0), at(y1, x1), fx);
            out.push(T::from_f64_lossy(lerp(top, bottom, fy)));
        }
    }
    Tensor::new(vec![1, 1, target, target], out)
}

/// `a + t·(b − a)`, kept inside `[min(a, b), max(a, b)]`.
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    if t == 0.0 || a == b {
        return a;
    }
    (a + t * (b - a)).clamp(a.min(b), a.max(b))
}
