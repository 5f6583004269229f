//! Raw loops over flat slices. Shapes are validated by the callers.

use super::Scalar;

/// `c[m×n] += a[m×k] · b[k×n]`
pub(crate) fn gemm_nn<T: Scalar>(m: usize, n: usize, k: usize, a: &[T], b: &[T], c: &mut [T]) {
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        let a_row = &a[i * k..(i + 1) * k];
        for (p, &a_ip) in a_row.iter().enumerate() {
            if a_ip == T::zero() {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (cj, &bj) in c_row.iter_mut().zip(b_row) {
                *cj += a_ip * bj;
            }
        }
    }
}

/// `c[m×n] += aᵀ · b` with `a` stored as `[k×m]` and `b` as `[k×n]`.
pub(crate) fn gemm_tn<T: Scalar>(m: usize, n: usize, k: usize, a: &[T], b: &[T], c: &mut [T]) {
    for p in 0..k {
        let a_row = &a[p * m..(p + 1) * m];
        let b_row = &b[p * n..(p + 1) * n];
        for (i, &a_pi) in a_row.iter().enumerate() {
            if a_pi == T::zero() {
                continue;
            }
            let c_row = &mut c[i * n..(i + 1) * n];
            for (cj, &bj) in c_row.iter_mut().zip(b_row) {
                *cj += a_pi * bj;
            }
        }
    }
}

/// `c[m×n] += a · bᵀ` with `a` stored as `[m×k]` and `b` as `[n×k]`.
pub(crate) fn gemm_nt<T: Scalar>(m: usize, n: usize, k: usize, a: &[T], b: &[T], c: &mut [T]) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            c[i * n + j] += dot(a_row, &b[j * k..(j + 1) * k]);
        }
    }
}

/// Dot product with eight independent accumulators so the loop vectorizes.
#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let chunks = a.len() / 8 * 8;
    for (ca, cb) in a[..chunks].chunks_exact(8).zip(b[..chunks].chunks_exact(8)) {
        for l in 0..8 {
            acc[l] += ca[l] * cb[l];
        }
    }
    let mut tail = T::zero();
    for (&x, &y) in a[chunks..].iter().zip(&b[chunks..]) {
        tail += x * y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub dilation: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    fn col_rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    fn col_cols(&self) -> usize {
        self.out_h * self.out_w
    }
}

/// Unfolds one `[channels×H×W]` image into `[channels·k·k × out_h·out_w]`.
pub(crate) fn im2col<T: Scalar>(g: &ConvGeometry, image: &[T], col: &mut [T]) {
    let n = g.col_cols();
    debug_assert_eq!(col.len(), g.col_rows() * n);
    let pad = g.padding as isize;
    for c in 0..g.channels {
        let plane = &image[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kernel {
            for kj in 0..g.kernel {
                let row = (c * g.kernel + ki) * g.kernel + kj;
                let dst = &mut col[row * n..(row + 1) * n];
                for oy in 0..g.out_h {
                    let y = (oy * g.stride + ki * g.dilation) as isize - pad;
                    let dst_row = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    if y < 0 || y >= g.height as isize {
                        dst_row.fill(T::zero());
                        continue;
                    }
                    let src = &plane[y as usize * g.width..(y as usize + 1) * g.width];
                    for (ox, d) in dst_row.iter_mut().enumerate() {
                        let x = (ox * g.stride + kj * g.dilation) as isize - pad;
                        *d = if x < 0 || x >= g.width as isize {
                            T::zero()
                        } else {
                            src[x as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters columns back, accumulating into `image`.
pub(crate) fn col2im<T: Scalar>(g: &ConvGeometry, col: &[T], image: &mut [T]) {
    let n = g.col_cols();
    let pad = g.padding as isize;
    for c in 0..g.channels {
        let plane = &mut image[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kernel {
            for kj in 0..g.kernel {
                let row = (c * g.kernel + ki) * g.kernel + kj;
                let src = &col[row * n..(row + 1) * n];
                for oy in 0..g.out_h {
                    let y = (oy * g.stride + ki * g.dilation) as isize - pad;
                    if y < 0 || y >= g.height as isize {
                        continue;
                    }
                    let dst = &mut plane[y as usize * g.width..(y as usize + 1) * g.width];
                    for ox in 0..g.out_w {
                        let x = (ox * g.stride + kj * g.dilation) as isize - pad;
                        if x >= 0 && x < g.width as isize {
                            dst[x as usize] += src[oy * g.out_w + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Grouped 2-D cross-correlation over a batch.
///
/// `input` is `[batch, groups·g.channels, H, W]`, `weight` is
/// `[out_channels, g.channels, k, k]` and `out` is
/// `[batch, out_channels, out_h, out_w]`.
pub(crate) fn conv2d_forward<T: Scalar>(
    g: &ConvGeometry,
    groups: usize,
    batch: usize,
    out_channels: usize,
    input: &[T],
    weight: &[T],
    out: &mut [T],
) {
    let in_plane = g.channels * g.height * g.width;
    let out_per_group = out_channels / groups;
    let kdim = g.col_rows();
    let ncols = g.col_cols();
    let mut col = vec![T::zero(); kdim * ncols];
    for b in 0..batch {
        for grp in 0..groups {
            let img_off = (b * groups + grp) * in_plane;
            im2col(g, &input[img_off..img_off + in_plane], &mut col);
            let w = &weight[grp * out_per_group * kdim..(grp + 1) * out_per_group * kdim];
            let out_off = (b * out_channels + grp * out_per_group) * ncols;
            gemm_nn(
                out_per_group,
                ncols,
                kdim,
                w,
                &col,
                &mut out[out_off..out_off + out_per_group * ncols],
            );
        }
    }
}

/// Accumulates input and weight gradients of [`conv2d_forward`].
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_backward<T: Scalar>(
    g: &ConvGeometry,
    groups: usize,
    batch: usize,
    out_channels: usize,
    input: &[T],
    weight: &[T],
    grad_out: &[T],
    mut grad_input: Option<&mut [T]>,
    mut grad_weight: Option<&mut [T]>,
) {
    let in_plane = g.channels * g.height * g.width;
    let out_per_group = out_channels / groups;
    let kdim = g.col_rows();
    let ncols = g.col_cols();
    let mut col = vec![T::zero(); kdim * ncols];
    let mut dcol = vec![T::zero(); kdim * ncols];
    for b in 0..batch {
        for grp in 0..groups {
            let img_off = (b * groups + grp) * in_plane;
            let out_off = (b * out_channels + grp * out_per_group) * ncols;
            let dout = &grad_out[out_off..out_off + out_per_group * ncols];
            let w_range = grp * out_per_group * kdim..(grp + 1) * out_per_group * kdim;
            if let Some(gw) = grad_weight.as_deref_mut() {
                im2col(g, &input[img_off..img_off + in_plane], &mut col);
                gemm_nt(out_per_group, kdim, ncols, dout, &col, &mut gw[w_range.clone()]);
            }
            if let Some(gi) = grad_input.as_deref_mut() {
                dcol.fill(T::zero());
                gemm_tn(kdim, ncols, out_per_group, &weight[w_range], dout, &mut dcol);
                col2im(g, &dcol, &mut gi[img_off..img_off + in_plane]);
            }
        }
    }
}
