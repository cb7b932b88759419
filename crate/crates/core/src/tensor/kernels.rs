//! Raw numeric kernels over flat buffers. No shape validation happens here;
//! callers on the tape check extents first.

/// Row-major matrix operand, optionally read transposed.
#[derive(Clone, Copy)]
pub(crate) struct Mat<'a> {
    pub data: &'a [f64],
    pub rows: usize,
    pub cols: usize,
    pub transposed: bool,
}

impl<'a> Mat<'a> {
    pub fn new(data: &'a [f64], rows: usize, cols: usize) -> Self {
        Self {
            data,
            rows,
            cols,
            transposed: false,
        }
    }

    /// The logical transpose of a stored `rows x cols` matrix.
    pub fn t(self) -> Self {
        Self {
            transposed: !self.transposed,
            ..self
        }
    }

    fn logical(&self) -> (usize, usize, isize, isize) {
        if self.transposed {
            (self.cols, self.rows, 1, self.cols as isize)
        } else {
            (self.rows, self.cols, self.cols as isize, 1)
        }
    }
}

/// `out = a * b + beta * out`, with `out` row-major.
pub(crate) fn gemm(a: Mat<'_>, b: Mat<'_>, beta: f64, out: &mut [f64]) {
    let (m, k, rsa, csa) = a.logical();
    let (k2, n, rsb, csb) = b.logical();
    assert_eq!(k, k2, "gemm inner dimension");
    assert!(a.data.len() >= a.rows * a.cols && b.data.len() >= b.rows * b.cols);
    assert!(out.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in &mut out[..m * n] {
            *v *= beta;
        }
        return;
    }
    // SAFETY: operand extents were checked above; strides describe row-major
    // storage of exactly those extents.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeometry {
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    pub fn col_rows(&self) -> usize {
        self.in_channels * self.kernel_h * self.kernel_w
    }

    pub fn col_cols(&self) -> usize {
        self.out_h * self.out_w
    }

    /// A 1x1, stride-1, unpadded convolution reads the input plane directly.
    pub fn is_pointwise(&self) -> bool {
        self.kernel_h == 1 && self.kernel_w == 1 && self.stride == 1 && self.padding == 0
    }
}

/// Unfolds one image `[C, H, W]` into `[C*Kh*Kw, Ho*Wo]` columns.
pub(crate) fn im2col(g: &ConvGeometry, image: &[f64], cols: &mut [f64]) {
    let n = g.col_cols();
    let pad = g.padding as isize;
    for c in 0..g.in_channels {
        let plane = &image[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..g.kernel_h {
            for kx in 0..g.kernel_w {
                let row = (c * g.kernel_h + ky) * g.kernel_w + kx;
                let dst = &mut cols[row * n..(row + 1) * n];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ky) as isize - pad;
                    let line = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    if iy < 0 || iy >= g.height as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - pad;
                        *v = if ix < 0 || ix >= g.width as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters columns back onto `[C, H, W]`, accumulating.
pub(crate) fn col2im(g: &ConvGeometry, cols: &[f64], image: &mut [f64]) {
    let n = g.col_cols();
    let pad = g.padding as isize;
    for c in 0..g.in_channels {
        let plane = &mut image[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..g.kernel_h {
            for kx in 0..g.kernel_w {
                let row = (c * g.kernel_h + ky) * g.kernel_w + kx;
                let src = &cols[row * n..(row + 1) * n];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ky) as isize - pad;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for ox in 0..g.out_w {
                        let ix = (ox * g.stride + kx) as isize - pad;
                        if ix >= 0 && ix < g.width as isize {
                            dst[ix as usize] += src[oy * g.out_w + ox];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv_forward(
    g: &ConvGeometry,
    batch: usize,
    input: &[f64],
    kernel: &[f64],
    bias: Option<&[f64]>,
    out_channels: usize,
) -> Vec<f64> {
    let in_plane = g.in_channels * g.height * g.width;
    let n = g.col_cols();
    let k = g.col_rows();
    let mut out = vec![0.0; batch * out_channels * n];
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![0.0; k * n] };
    for b in 0..batch {
        let image = &input[b * in_plane..(b + 1) * in_plane];
        let dst = &mut out[b * out_channels * n..(b + 1) * out_channels * n];
        if let Some(bias) = bias {
            for (co, chunk) in dst.chunks_exact_mut(n).enumerate() {
                chunk.fill(bias[co]);
            }
        }
        let beta = if bias.is_some() { 1.0 } else { 0.0 };
        let cols_ref: &[f64] = if g.is_pointwise() {
            image
        } else {
            im2col(g, image, &mut cols);
            &cols
        };
        gemm(
            Mat::new(kernel, out_channels, k),
            Mat::new(cols_ref, k, n),
            beta,
            dst,
        );
    }
    out
}

/// Accumulates kernel, bias and input adjoints for one convolution.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_backward(
    g: &ConvGeometry,
    batch: usize,
    input: &[f64],
    kernel: &[f64],
    out_channels: usize,
    grad_out: &[f64],
    mut grad_input: Option<&mut [f64]>,
    mut grad_kernel: Option<&mut [f64]>,
    mut grad_bias: Option<&mut [f64]>,
) {
    let in_plane = g.in_channels * g.height * g.width;
    let n = g.col_cols();
    let k = g.col_rows();
    let mut cols = vec![0.0; k * n];
    for b in 0..batch {
        let image = &input[b * in_plane..(b + 1) * in_plane];
        let dout = &grad_out[b * out_channels * n..(b + 1) * out_channels * n];
        if let Some(gb) = grad_bias.as_deref_mut() {
            for (co, chunk) in dout.chunks_exact(n).enumerate() {
                gb[co] += chunk.iter().sum::<f64>();
            }
        }
        if let Some(gk) = grad_kernel.as_deref_mut() {
            let cols_ref: &[f64] = if g.is_pointwise() {
                image
            } else {
                im2col(g, image, &mut cols);
                &cols
            };
            gemm(
                Mat::new(dout, out_channels, n),
                Mat::new(cols_ref, k, n).t(),
                1.0,
                gk,
            );
        }
        if let Some(gi) = grad_input.as_deref_mut() {
            let dst = &mut gi[b * in_plane..(b + 1) * in_plane];
            if g.is_pointwise() {
                gemm(
                    Mat::new(kernel, out_channels, k).t(),
                    Mat::new(dout, out_channels, n),
                    1.0,
                    dst,
                );
            } else {
                gemm(
                    Mat::new(kernel, out_channels, k).t(),
                    Mat::new(dout, out_channels, n),
                    0.0,
                    &mut cols,
                );
                col2im(g, &cols, dst);
            }
        }
    }
}

/// Source taps for half-pixel bilinear upsampling of one axis:
/// `(lower index, upper index, upper weight)` per output coordinate.
pub(crate) fn bilinear_taps(len: usize, factor: usize) -> Vec<(usize, usize, f64)> {
    (0..len * factor)
        .map(|o| {
            let src = ((o as f64 + 0.5) / factor as f64 - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(len - 1);
            let hi = (lo + 1).min(len - 1);
            (lo, hi, src - lo as f64)
        })
        .collect()
}
