//! Thin safe wrappers over `matrixmultiply::dgemm`.

/// Strided view of a row-major buffer as an `rows x cols` matrix.
#[derive(Clone, Copy)]
pub(crate) struct View<'a> {
    pub data: &'a [f64],
    pub offset: usize,
    pub row_stride: isize,
    pub col_stride: isize,
}

impl<'a> View<'a> {
    pub fn dense(data: &'a [f64], cols: usize) -> Self {
        View { data, offset: 0, row_stride: cols as isize, col_stride: 1 }
    }

    /// The transpose of a dense `rows x cols` buffer.
    pub fn dense_t(data: &'a [f64], rows: usize) -> Self {
        View { data, offset: 0, row_stride: 1, col_stride: rows as isize }
    }

    fn max_index(&self, rows: usize, cols: usize) -> isize {
        self.offset as isize
            + (rows as isize - 1) * self.row_stride
            + (cols as isize - 1) * self.col_stride
    }
}

/// `c[m x n] = a[m x k] * b[k x n] + beta * c` with arbitrary strides on `a` and `b`.
/// `c` is addressed through `c_offset`, `c_rs`, `c_cs`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm_view(
    m: usize,
    k: usize,
    n: usize,
    a: View<'_>,
    b: View<'_>,
    c: &mut [f64],
    c_offset: usize,
    c_rs: isize,
    c_cs: isize,
    beta: f64,
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for i in 0..m {
            for j in 0..n {
                let idx = (c_offset as isize + i as isize * c_rs + j as isize * c_cs) as usize;
                c[idx] *= beta;
            }
        }
        return;
    }
    assert!(a.max_index(m, k) < a.data.len() as isize, "gemm: lhs view out of bounds");
    assert!(b.max_index(k, n) < b.data.len() as isize, "gemm: rhs view out of bounds");
    let c_max = c_offset as isize + (m as isize - 1) * c_rs + (n as isize - 1) * c_cs;
    assert!(c_max < c.len() as isize, "gemm: output view out of bounds");
    // SAFETY: every addressed element of a, b and c was bounds-checked above and
    // all strides are non-negative.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr().add(a.offset),
            a.row_stride,
            a.col_stride,
            b.data.as_ptr().add(b.offset),
            b.row_stride,
            b.col_stride,
            beta,
            c.as_mut_ptr().add(c_offset),
            c_rs,
            c_cs,
        );
    }
}

/// Dense `c = op(a) * op(b) + beta * c` where `op` optionally transposes.
/// Shapes are given after `op`: `op(a)` is `m x k`, `op(b)` is `k x n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    c: &mut [f64],
    beta: f64,
) {
    let av = if a_t { View::dense_t(a, m) } else { View::dense(a, k) };
    let bv = if b_t { View::dense_t(b, k) } else { View::dense(b, n) };
    gemm_view(m, k, n, av, bv, c, 0, n as isize, 1, beta);
}
