/// Strided row-major view of a matrix operand.
#[derive(Clone, Copy, Debug)]
pub struct Layout {
    pub rows: usize,
    pub cols: usize,
    pub row_stride: usize,
    pub col_stride: usize,
}

impl Layout {
    pub fn row_major(rows: usize, cols: usize) -> Self {
        Layout {
            rows,
            cols,
            row_stride: cols,
            col_stride: 1,
        }
    }

    /// The transpose of a row-major `cols × rows` buffer.
    pub fn transposed(rows: usize, cols: usize) -> Self {
        Layout {
            rows,
            cols,
            row_stride: 1,
            col_stride: rows,
        }
    }

    fn span(&self) -> usize {
        (self.rows - 1) * self.row_stride + (self.cols - 1) * self.col_stride + 1
    }
}

fn check<T>(a: &[T], la: Layout, b: &[T], lb: Layout, c: &[T]) {
    assert_eq!(la.cols, lb.rows, "inner dimensions differ");
    assert!(la.rows > 0 && la.cols > 0 && lb.cols > 0, "empty operand");
    assert!(
        a.len() >= la.span() && b.len() >= lb.span(),
        "operand out of range"
    );
    assert!(c.len() >= la.rows * lb.cols, "output out of range");
}

/// `c += a · b` with `c` row-major and dense. Sealed: only `f32` and `f64`.
pub trait Gemm: Sized {
    fn gemm_acc(a: &[Self], la: Layout, b: &[Self], lb: Layout, c: &mut [Self]);
}

impl Gemm for f32 {
    fn gemm_acc(a: &[f32], la: Layout, b: &[f32], lb: Layout, c: &mut [f32]) {
        check(a, la, b, lb, c);
        // SAFETY: `check` proves every strided access lies inside the slices.
        unsafe {
            matrixmultiply::sgemm(
                la.rows,
                la.cols,
                lb.cols,
                1.0,
                a.as_ptr(),
                la.row_stride as isize,
                la.col_stride as isize,
                b.as_ptr(),
                lb.row_stride as isize,
                lb.col_stride as isize,
                1.0,
                c.as_mut_ptr(),
                lb.cols as isize,
                1,
            );
        }
    }
}

impl Gemm for f64 {
    /// Sequential inner sums starting from the existing `c` value, so results
    /// match a textbook loop exactly.
    fn gemm_acc(a: &[f64], la: Layout, b: &[f64], lb: Layout, c: &mut [f64]) {
        check(a, la, b, lb, c);
        for i in 0..la.rows {
            for j in 0..lb.cols {
                let mut acc = c[i * lb.cols + j];
                for p in 0..la.cols {
                    acc += a[i * la.row_stride + p * la.col_stride]
                        * b[p * lb.row_stride + j * lb.col_stride];
                }
                c[i * lb.cols + j] = acc;
            }
        }
    }
}
