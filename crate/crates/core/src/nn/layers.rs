//! Stateless layer kernels: forward and backward passes over plain slices.
//!
//! Feature maps are `[channels, height, width]` row-major per sample. Conv
//! weights are `[out_c, in_c, kh, kw]`; dense weights are `[in, out]`.
//! Every `backward` accumulates into its gradient outputs.

use super::tensor::{gemm, Mat, Real};

/// Shape bookkeeping for a zero-padded ("same"-style) 2-D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub in_c: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_c: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad_h: usize,
    pub pad_w: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    /// Padding `k / 2` on each side, so stride 1 keeps the spatial size.
    pub fn new(in_c: usize, in_h: usize, in_w: usize, out_c: usize, kh: usize, kw: usize, stride: usize) -> Self {
        let pad_h = kh / 2;
        let pad_w = kw / 2;
        ConvGeom {
            in_c,
            in_h,
            in_w,
            out_c,
            kh,
            kw,
            stride,
            pad_h,
            pad_w,
            out_h: (in_h + 2 * pad_h - kh) / stride + 1,
            out_w: (in_w + 2 * pad_w - kw) / stride + 1,
        }
    }

    pub fn patch_len(&self) -> usize {
        self.in_c * self.kh * self.kw
    }

    pub fn out_spatial(&self) -> usize {
        self.out_h * self.out_w
    }

    pub fn in_len(&self) -> usize {
        self.in_c * self.in_h * self.in_w
    }

    pub fn out_len(&self) -> usize {
        self.out_c * self.out_spatial()
    }

    pub fn weight_len(&self) -> usize {
        self.out_c * self.patch_len()
    }

    fn source(&self, o: usize, k: usize, pad: usize, limit: usize) -> Option<usize> {
        let i = (o * self.stride + k).checked_sub(pad)?;
        (i < limit).then_some(i)
    }
}

fn im2col<T: Real>(g: &ConvGeom, input: &[T], cols: &mut Vec<T>) {
    let spatial = g.out_spatial();
    cols.clear();
    cols.resize(g.patch_len() * spatial, T::zero());
    let mut row = 0;
    for c in 0..g.in_c {
        let plane = &input[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let dst = &mut cols[row * spatial..(row + 1) * spatial];
                for oy in 0..g.out_h {
                    let Some(iy) = g.source(oy, ki, g.pad_h, g.in_h) else {
                        continue;
                    };
                    let src = &plane[iy * g.in_w..(iy + 1) * g.in_w];
                    let out_row = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    for (ox, d) in out_row.iter_mut().enumerate() {
                        if let Some(ix) = g.source(ox, kj, g.pad_w, g.in_w) {
                            *d = src[ix];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

fn col2im<T: Real>(g: &ConvGeom, cols: &[T], dinput: &mut [T]) {
    let spatial = g.out_spatial();
    let mut row = 0;
    for c in 0..g.in_c {
        let plane = &mut dinput[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let src = &cols[row * spatial..(row + 1) * spatial];
                for oy in 0..g.out_h {
                    let Some(iy) = g.source(oy, ki, g.pad_h, g.in_h) else {
                        continue;
                    };
                    let dst = &mut plane[iy * g.in_w..(iy + 1) * g.in_w];
                    for ox in 0..g.out_w {
                        if let Some(ix) = g.source(ox, kj, g.pad_w, g.in_w) {
                            dst[ix] += src[oy * g.out_w + ox];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// `out = conv(input, weight) + bias` for one sample.
pub fn conv2d_forward<T: Real>(
    g: &ConvGeom,
    input: &[T],
    weight: &[T],
    bias: &[T],
    out: &mut [T],
    scratch: &mut Vec<T>,
) {
    debug_assert_eq!(input.len(), g.in_len());
    let spatial = g.out_spatial();
    for (c, row) in out.chunks_mut(spatial).enumerate().take(g.out_c) {
        row.fill(bias[c]);
    }
    if g.kh == 1 && g.kw == 1 && g.stride == 1 {
        gemm(
            Mat::new(weight, g.out_c, g.patch_len()),
            Mat::new(input, g.in_c, spatial),
            out,
            true,
        );
        return;
    }
    im2col(g, input, scratch);
    gemm(
        Mat::new(weight, g.out_c, g.patch_len()),
        Mat::new(scratch, g.patch_len(), spatial),
        out,
        true,
    );
}

/// Accumulates weight, bias and (optionally) input gradients of one sample.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward<T: Real>(
    g: &ConvGeom,
    input: &[T],
    weight: &[T],
    dout: &[T],
    dweight: &mut [T],
    dbias: &mut [T],
    dinput: Option<&mut [T]>,
    scratch: &mut Vec<T>,
) {
    let spatial = g.out_spatial();
    for (c, row) in dout.chunks(spatial).enumerate().take(g.out_c) {
        dbias[c] += row.iter().copied().sum::<T>();
    }
    let direct = g.kh == 1 && g.kw == 1 && g.stride == 1;
    if !direct {
        im2col(g, input, scratch);
    }
    let cols: &[T] = if direct { input } else { scratch.as_slice() };
    gemm(
        Mat::new(dout, g.out_c, spatial),
        Mat::t(cols, g.patch_len(), spatial),
        dweight,
        true,
    );
    if let Some(dinput) = dinput {
        if direct {
            gemm(
                Mat::t(weight, g.out_c, g.patch_len()),
                Mat::new(dout, g.out_c, spatial),
                dinput,
                true,
            );
        } else {
            let mut dcols = vec![T::zero(); g.patch_len() * spatial];
            gemm(
                Mat::t(weight, g.out_c, g.patch_len()),
                Mat::new(dout, g.out_c, spatial),
                &mut dcols,
                false,
            );
            col2im(g, &dcols, dinput);
        }
    }
}

/// `out[b, :] = x[b, :] @ w + bias` over a batch.
pub fn dense_forward<T: Real>(x: &[T], batch: usize, w: &[T], bias: &[T], out: &mut [T]) {
    let n_out = bias.len();
    let n_in = w.len() / n_out;
    for row in out.chunks_mut(n_out).take(batch) {
        row.copy_from_slice(bias);
    }
    gemm(Mat::new(x, batch, n_in), Mat::new(w, n_in, n_out), out, true);
}

#[allow(clippy::too_many_arguments)]
pub fn dense_backward<T: Real>(
    x: &[T],
    batch: usize,
    w: &[T],
    dy: &[T],
    dw: &mut [T],
    dbias: &mut [T],
    dx: Option<&mut [T]>,
) {
    let n_out = dbias.len();
    let n_in = w.len() / n_out;
    for row in dy.chunks(n_out).take(batch) {
        for (d, &v) in dbias.iter_mut().zip(row) {
            *d += v;
        }
    }
    gemm(Mat::t(x, batch, n_in), Mat::new(dy, batch, n_out), dw, true);
    if let Some(dx) = dx {
        gemm(Mat::new(dy, batch, n_out), Mat::t(w, n_in, n_out), dx, true);
    }
}

pub fn relu_inplace<T: Real>(v: &mut [T]) {
    for x in v {
        if *x < T::zero() {
            *x = T::zero();
        }
    }
}

/// Zeroes `grad` wherever the ReLU output was not positive.
pub fn relu_backward<T: Real>(output: &[T], grad: &mut [T]) {
    for (g, &o) in grad.iter_mut().zip(output) {
        if o <= T::zero() {
            *g = T::zero();
        }
    }
}

/// Mean over the spatial positions of each channel.
pub fn global_avg_pool<T: Real>(input: &[T], channels: usize, out: &mut [T]) {
    let spatial = input.len() / channels;
    let scale = T::one() / T::from_usize(spatial).unwrap();
    for (o, plane) in out.iter_mut().zip(input.chunks(spatial)) {
        *o = plane.iter().copied().sum::<T>() * scale;
    }
}

pub fn global_avg_pool_backward<T: Real>(dout: &[T], spatial: usize, dinput: &mut [T]) {
    let scale = T::one() / T::from_usize(spatial).unwrap();
    for (plane, &d) in dinput.chunks_mut(spatial).zip(dout) {
        for v in plane {
            *v += d * scale;
        }
    }
}

/// Row-wise softmax (max-subtracted), computed in f64.
pub fn softmax_rows(logits: &[f64], classes: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.chunks(classes) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|&v| (v - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        out.extend(exps.into_iter().map(|e| e / total));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_geometry_of_default_stem() {
        let g = ConvGeom::new(1, 25, 127, 32, 7, 7, 2);
        assert_eq!((g.out_h, g.out_w), (13, 64));
        let g = ConvGeom::new(32, 13, 64, 64, 3, 3, 2);
        assert_eq!((g.out_h, g.out_w), (7, 32));
        let g = ConvGeom::new(32, 13, 64, 64, 1, 1, 2);
        assert_eq!((g.out_h, g.out_w), (7, 32));
    }

    #[test]
    fn identity_kernel_copies_input() {
        let g = ConvGeom::new(1, 4, 5, 1, 3, 3, 1);
        let input: Vec<f64> = (0..20).map(f64::from).collect();
        let mut w = vec![0.0; 9];
        w[4] = 1.0;
        let mut out = vec![0.0; 20];
        conv2d_forward(&g, &input, &w, &[0.5], &mut out, &mut Vec::new());
        for (o, i) in out.iter().zip(&input) {
            assert_eq!(*o, i + 0.5);
        }
    }

    #[test]
    fn softmax_is_shift_invariant() {
        let a = softmax_rows(&[1.0, 2.0, 3.0], 3);
        let b = softmax_rows(&[101.0, 102.0, 103.0], 3);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-15);
        }
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
