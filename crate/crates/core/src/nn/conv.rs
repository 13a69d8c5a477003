//! im2col / col2im kernels shared by convolution and transposed convolution.
//!
//! Both operators are expressed over one [`ConvGeometry`] relating a "wide"
//! image (the convolution input, i.e. the transposed-convolution output) to a
//! "narrow" image (the convolution output). Batched work is split into fixed
//! sized sample chunks; reductions over the batch are summed in chunk order so
//! results do not depend on the number of worker threads.

use rayon::prelude::*;

/// Samples per parallel work unit. Fixed so reduction order is thread-count
/// independent.
const CHUNK: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub wide_h: usize,
    pub wide_w: usize,
    pub wide_c: usize,
    pub narrow_h: usize,
    pub narrow_w: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
}

impl ConvGeometry {
    /// Rows of the column matrix (narrow positions).
    pub fn rows(&self) -> usize {
        self.narrow_h * self.narrow_w
    }

    /// Columns of the column matrix (kernel taps times wide channels).
    pub fn cols(&self) -> usize {
        self.kernel.0 * self.kernel.1 * self.wide_c
    }

    pub fn wide_len(&self) -> usize {
        self.wide_h * self.wide_w * self.wide_c
    }

    /// Input row/col in the wide image for a narrow position and kernel tap.
    #[inline]
    fn wide_index(&self, oy: usize, ox: usize, ky: usize, kx: usize) -> Option<(usize, usize)> {
        let iy = (oy * self.stride.0 + ky).checked_sub(self.padding.0)?;
        let ix = (ox * self.stride.1 + kx).checked_sub(self.padding.1)?;
        (iy < self.wide_h && ix < self.wide_w).then_some((iy, ix))
    }

    /// Gathers one wide image into a `rows x cols` column matrix.
    pub fn im2col(&self, wide: &[f64], cols: &mut [f64]) {
        let c = self.wide_c;
        let ncols = self.cols();
        cols.fill(0.0);
        for oy in 0..self.narrow_h {
            for ox in 0..self.narrow_w {
                let row = (oy * self.narrow_w + ox) * ncols;
                for ky in 0..self.kernel.0 {
                    for kx in 0..self.kernel.1 {
                        if let Some((iy, ix)) = self.wide_index(oy, ox, ky, kx) {
                            let src = (iy * self.wide_w + ix) * c;
                            let dst = row + (ky * self.kernel.1 + kx) * c;
                            cols[dst..dst + c].copy_from_slice(&wide[src..src + c]);
                        }
                    }
                }
            }
        }
    }

    /// Scatter-adds a column matrix back into a wide image (adjoint of im2col).
    pub fn col2im(&self, cols: &[f64], wide: &mut [f64]) {
        let c = self.wide_c;
        let ncols = self.cols();
        for oy in 0..self.narrow_h {
            for ox in 0..self.narrow_w {
                let row = (oy * self.narrow_w + ox) * ncols;
                for ky in 0..self.kernel.0 {
                    for kx in 0..self.kernel.1 {
                        if let Some((iy, ix)) = self.wide_index(oy, ox, ky, kx) {
                            let dst = (iy * self.wide_w + ix) * c;
                            let src = row + (ky * self.kernel.1 + kx) * c;
                            for (w, v) in wide[dst..dst + c].iter_mut().zip(&cols[src..src + c]) {
                                *w += v;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// `C = alpha * A(m x k) * B(k x n) + beta * C`, row-major with explicit strides.
#[allow(clippy::too_many_arguments)]
#[inline]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (isize, isize),
    b: &[f64],
    b_strides: (isize, isize),
    beta: f64,
    c: &mut [f64],
    c_row_stride: isize,
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(a.len() >= max_index(m, k, a_strides));
    debug_assert!(b.len() >= max_index(k, n, b_strides));
    debug_assert!(c.len() >= max_index(m, n, (c_row_stride, 1)));
    // SAFETY: the slices cover every index addressed by the given dimensions
    // and strides (checked above in debug builds, guaranteed by callers).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0,
            a_strides.1,
            b.as_ptr(),
            b_strides.0,
            b_strides.1,
            beta,
            c.as_mut_ptr(),
            c_row_stride,
            1,
        );
    }
}

fn max_index(rows: usize, cols: usize, strides: (isize, isize)) -> usize {
    if rows == 0 || cols == 0 {
        return 0;
    }
    (rows - 1) * strides.0 as usize + (cols - 1) * strides.1 as usize + 1
}

/// Convolution forward: `out[n] = im2col(x[n]) * w + bias`.
/// `w` is `cols x cout`; `out` is `batch x rows x cout`.
pub fn conv_forward(g: &ConvGeometry, x: &[f64], w: &[f64], bias: &[f64], out: &mut [f64]) {
    let cout = bias.len();
    let (rows, ncols, in_len) = (g.rows(), g.cols(), g.wide_len());
    out.par_chunks_mut(rows * cout).zip(x.par_chunks(in_len)).for_each_init(
        || vec![0.0; rows * ncols],
        |buf, (o, xi)| {
            g.im2col(xi, buf);
            for r in o.chunks_mut(cout) {
                r.copy_from_slice(bias);
            }
            gemm(
                rows,
                ncols,
                cout,
                buf,
                (ncols as isize, 1),
                w,
                (cout as isize, 1),
                1.0,
                o,
                cout as isize,
            );
        },
    );
}

/// Convolution backward. Accumulates into `gw` (`cols x cout`) and `gb`
/// (`cout`) when given and returns the input gradient when `want_input`.
#[allow(clippy::too_many_arguments)]
pub fn conv_backward(
    g: &ConvGeometry,
    x: &[f64],
    w: &[f64],
    gout: &[f64],
    cout: usize,
    param_grads: Option<(&mut [f64], &mut [f64])>,
    want_input: bool,
) -> Option<Vec<f64>> {
    let (rows, ncols, in_len) = (g.rows(), g.cols(), g.wide_len());
    let out_len = rows * cout;
    let batch = gout.len() / out_len;

    if let Some((gw, gb)) = param_grads {
        let partials: Vec<(Vec<f64>, Vec<f64>)> = (0..batch.div_ceil(CHUNK))
            .into_par_iter()
            .map(|ci| {
                let mut pw = vec![0.0; ncols * cout];
                let mut pb = vec![0.0; cout];
                let mut buf = vec![0.0; rows * ncols];
                for n in ci * CHUNK..((ci + 1) * CHUNK).min(batch) {
                    g.im2col(&x[n * in_len..(n + 1) * in_len], &mut buf);
                    let go = &gout[n * out_len..(n + 1) * out_len];
                    // pw += buf^T * go
                    gemm(
                        ncols,
                        rows,
                        cout,
                        &buf,
                        (1, ncols as isize),
                        go,
                        (cout as isize, 1),
                        1.0,
                        &mut pw,
                        cout as isize,
                    );
                    for r in go.chunks(cout) {
                        for (b, v) in pb.iter_mut().zip(r) {
                            *b += v;
                        }
                    }
                }
                (pw, pb)
            })
            .collect();
        for (pw, pb) in partials {
            add_into(gw, &pw);
            add_into(gb, &pb);
        }
    }

    want_input.then(|| {
        let mut gin = vec![0.0; batch * in_len];
        gin.par_chunks_mut(in_len).zip(gout.par_chunks(out_len)).for_each_init(
            || vec![0.0; rows * ncols],
            |buf, (gi, go)| {
                // buf = go * w^T
                gemm(
                    rows,
                    cout,
                    ncols,
                    go,
                    (cout as isize, 1),
                    w,
                    (1, cout as isize),
                    0.0,
                    buf,
                    ncols as isize,
                );
                g.col2im(buf, gi);
            },
        );
        gin
    })
}

/// Transposed convolution forward: `out[n] = col2im(x[n] * w) + bias`.
/// `x` is `batch x rows x cin`, `w` is `cin x cols`, output is wide images.
pub fn tconv_forward(g: &ConvGeometry, x: &[f64], cin: usize, w: &[f64], bias: &[f64], out: &mut [f64]) {
    let (rows, ncols, out_len) = (g.rows(), g.cols(), g.wide_len());
    let cout = g.wide_c;
    out.par_chunks_mut(out_len).zip(x.par_chunks(rows * cin)).for_each_init(
        || vec![0.0; rows * ncols],
        |buf, (o, xi)| {
            gemm(
                rows,
                cin,
                ncols,
                xi,
                (cin as isize, 1),
                w,
                (ncols as isize, 1),
                0.0,
                buf,
                ncols as isize,
            );
            for px in o.chunks_mut(cout) {
                px.copy_from_slice(bias);
            }
            g.col2im(buf, o);
        },
    );
}

/// Transposed convolution backward; mirrors [`conv_backward`].
#[allow(clippy::too_many_arguments)]
pub fn tconv_backward(
    g: &ConvGeometry,
    x: &[f64],
    cin: usize,
    w: &[f64],
    gout: &[f64],
    param_grads: Option<(&mut [f64], &mut [f64])>,
    want_input: bool,
) -> Option<Vec<f64>> {
    let (rows, ncols, out_len) = (g.rows(), g.cols(), g.wide_len());
    let cout = g.wide_c;
    let in_len = rows * cin;
    let batch = gout.len() / out_len;

    if let Some((gw, gb)) = param_grads {
        let partials: Vec<(Vec<f64>, Vec<f64>)> = (0..batch.div_ceil(CHUNK))
            .into_par_iter()
            .map(|ci| {
                let mut pw = vec![0.0; cin * ncols];
                let mut pb = vec![0.0; cout];
                let mut buf = vec![0.0; rows * ncols];
                for n in ci * CHUNK..((ci + 1) * CHUNK).min(batch) {
                    let go = &gout[n * out_len..(n + 1) * out_len];
                    g.im2col(go, &mut buf);
                    let xi = &x[n * in_len..(n + 1) * in_len];
                    // pw += xi^T * buf
                    gemm(
                        cin,
                        rows,
                        ncols,
                        xi,
                        (1, cin as isize),
                        &buf,
                        (ncols as isize, 1),
                        1.0,
                        &mut pw,
                        ncols as isize,
                    );
                    for px in go.chunks(cout) {
                        for (b, v) in pb.iter_mut().zip(px) {
                            *b += v;
                        }
                    }
                }
                (pw, pb)
            })
            .collect();
        for (pw, pb) in partials {
            add_into(gw, &pw);
            add_into(gb, &pb);
        }
    }

    want_input.then(|| {
        let mut gin = vec![0.0; batch * in_len];
        gin.par_chunks_mut(in_len).zip(gout.par_chunks(out_len)).for_each_init(
            || vec![0.0; rows * ncols],
            |buf, (gi, go)| {
                g.im2col(go, buf);
                // gi = buf * w^T
                gemm(
                    rows,
                    ncols,
                    cin,
                    buf,
                    (ncols as isize, 1),
                    w,
                    (1, ncols as isize),
                    0.0,
                    gi,
                    cin as isize,
                );
            },
        );
        gin
    })
}

pub(crate) fn add_into(acc: &mut [f64], v: &[f64]) {
    for (a, b) in acc.iter_mut().zip(v) {
        *a += b;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geom() -> ConvGeometry {
        ConvGeometry {
            wide_h: 5,
            wide_w: 4,
            wide_c: 2,
            narrow_h: 3,
            narrow_w: 2,
            kernel: (3, 3),
            stride: (2, 2),
            padding: (1, 1),
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), c> == <x, col2im(c)>
        let g = geom();
        let x: Vec<f64> = (0..g.wide_len()).map(|i| (i as f64 * 0.37).sin()).collect();
        let c: Vec<f64> = (0..g.rows() * g.cols()).map(|i| (i as f64 * 0.11).cos()).collect();
        let mut cols = vec![0.0; c.len()];
        g.im2col(&x, &mut cols);
        let lhs: f64 = cols.iter().zip(&c).map(|(a, b)| a * b).sum();
        let mut wide = vec![0.0; x.len()];
        g.col2im(&c, &mut wide);
        let rhs: f64 = x.iter().zip(&wide).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn gemm_matches_naive() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2x3
        let b = [1.0, 0.0, 0.0, 1.0, 1.0, 1.0]; // 3x2
        let mut c = [0.0; 4];
        gemm(2, 3, 2, &a, (3, 1), &b, (2, 1), 0.0, &mut c, 2);
        assert_eq!(c, [4.0, 5.0, 10.0, 11.0]);
    }
}
