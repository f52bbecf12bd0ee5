//! Raw-slice kernels behind the spatial graph primitives.
//!
//! Images are NHWC, convolution kernels are `[kh, kw, c_in, c_out]`.
//! Convolution is cross-correlation with stride 1.

use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Padding {
    /// Zero padding so the output keeps the input's spatial extent.
    Same,
    /// No padding; output shrinks by `k - 1`.
    Valid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeometry {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub kh: usize,
    pub kw: usize,
    pub o: usize,
    pub oh: usize,
    pub ow: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

impl ConvGeometry {
    /// Returns `None` when a valid convolution would produce an empty output.
    pub fn new(input: &[usize], kernel: &[usize], padding: Padding) -> Option<Self> {
        let [n, h, w, c] = *input else { return None };
        let [kh, kw, kc, o] = *kernel else { return None };
        if kc != c {
            return None;
        }
        let (oh, ow, pad_top, pad_left) = match padding {
            Padding::Same => (h, w, (kh - 1) / 2, (kw - 1) / 2),
            Padding::Valid => {
                if kh > h || kw > w {
                    return None;
                }
                (h - kh + 1, w - kw + 1, 0, 0)
            }
        };
        Some(ConvGeometry {
            n,
            h,
            w,
            c,
            kh,
            kw,
            o,
            oh,
            ow,
            pad_top,
            pad_left,
        })
    }

    pub fn patch_len(&self) -> usize {
        self.kh * self.kw * self.c
    }

    pub fn positions(&self) -> usize {
        self.n * self.oh * self.ow
    }

    pub fn output_shape(&self) -> Vec<usize> {
        vec![self.n, self.oh, self.ow, self.o]
    }

    /// Input coordinate for output position `y` and kernel row `ky`, if it
    /// falls inside the image.
    #[inline]
    fn src(&self, y: usize, ky: usize, pad: usize, extent: usize) -> Option<usize> {
        let v = (y + ky).checked_sub(pad)?;
        (v < extent).then_some(v)
    }
}

/// Unfolds every receptive field into a row of length `kh * kw * c`.
pub(crate) fn im2col<T: Real>(input: &[T], g: &ConvGeometry) -> Vec<T> {
    let mut cols = Vec::with_capacity(g.positions() * g.patch_len());
    let zeros = vec![T::zero(); g.kw * g.c];
    for b in 0..g.n {
        let img = &input[b * g.h * g.w * g.c..(b + 1) * g.h * g.w * g.c];
        for y in 0..g.oh {
            for x in 0..g.ow {
                for ky in 0..g.kh {
                    let Some(sy) = g.src(y, ky, g.pad_top, g.h) else {
                        cols.extend_from_slice(&zeros);
                        continue;
                    };
                    for kx in 0..g.kw {
                        match g.src(x, kx, g.pad_left, g.w) {
                            Some(sx) => {
                                let s = (sy * g.w + sx) * g.c;
                                cols.extend_from_slice(&img[s..s + g.c]);
                            }
                            None => cols.extend_from_slice(&zeros[..g.c]),
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto the image.
pub(crate) fn col2im<T: Real>(cols: &[T], g: &ConvGeometry) -> Vec<T> {
    let k = g.patch_len();
    let mut out = vec![T::zero(); g.n * g.h * g.w * g.c];
    let mut row = 0;
    for b in 0..g.n {
        let img = &mut out[b * g.h * g.w * g.c..(b + 1) * g.h * g.w * g.c];
        for y in 0..g.oh {
            for x in 0..g.ow {
                let src = &cols[row * k..(row + 1) * k];
                for ky in 0..g.kh {
                    let Some(sy) = g.src(y, ky, g.pad_top, g.h) else {
                        continue;
                    };
                    for kx in 0..g.kw {
                        let Some(sx) = g.src(x, kx, g.pad_left, g.w) else {
                            continue;
                        };
                        let d = (sy * g.w + sx) * g.c;
                        let s = (ky * g.kw + kx) * g.c;
                        for (o, &v) in img[d..d + g.c].iter_mut().zip(&src[s..s + g.c]) {
                            *o += v;
                        }
                    }
                }
                row += 1;
            }
        }
    }
    out
}

/// Returns `(output, unfolded input)`; the unfolded input is kept for the
/// kernel gradient.
pub(crate) fn conv2d_forward<T: Real>(
    input: &[T],
    kernel: &[T],
    g: &ConvGeometry,
) -> (Vec<T>, Vec<T>) {
    let cols = im2col(input, g);
    let (p, k) = (g.positions(), g.patch_len());
    let mut out = vec![T::zero(); p * g.o];
    T::gemm(
        p,
        k,
        g.o,
        T::one(),
        &cols,
        (k, 1),
        kernel,
        (g.o, 1),
        T::zero(),
        &mut out,
        (g.o, 1),
    );
    (out, cols)
}

/// Gradients w.r.t. input (when `need_input`) and kernel given the output
/// gradient.
pub(crate) fn conv2d_backward<T: Real>(
    grad_out: &[T],
    cols: &[T],
    kernel: &[T],
    g: &ConvGeometry,
    need_input: bool,
) -> (Option<Vec<T>>, Vec<T>) {
    let (p, k, o) = (g.positions(), g.patch_len(), g.o);
    let mut grad_kernel = vec![T::zero(); k * o];
    // colsᵀ (k x p) · grad_out (p x o)
    T::gemm(
        k,
        p,
        o,
        T::one(),
        cols,
        (1, k),
        grad_out,
        (o, 1),
        T::zero(),
        &mut grad_kernel,
        (o, 1),
    );
    if !need_input {
        return (None, grad_kernel);
    }
    if o < g.c {
        return (Some(conv2d_input_grad(grad_out, kernel, g)), grad_kernel);
    }
    let mut grad_cols = vec![T::zero(); p * k];
    // grad_out (p x o) · kernelᵀ (o x k)
    T::gemm(
        p,
        o,
        k,
        T::one(),
        grad_out,
        (o, 1),
        kernel,
        (1, o),
        T::zero(),
        &mut grad_cols,
        (k, 1),
    );
    (Some(col2im(&grad_cols, g)), grad_kernel)
}

/// Input gradient as a correlation of the output gradient with the
/// spatially flipped, channel-transposed kernel. Cheaper than unfolding
/// when the layer narrows the channel count.
fn conv2d_input_grad<T: Real>(grad_out: &[T], kernel: &[T], g: &ConvGeometry) -> Vec<T> {
    let (kh, kw, c, o) = (g.kh, g.kw, g.c, g.o);
    let mut flipped = vec![T::zero(); kh * kw * o * c];
    for ky in 0..kh {
        for kx in 0..kw {
            for ci in 0..c {
                for oi in 0..o {
                    let src = ((ky * kw + kx) * c + ci) * o + oi;
                    let dst = (((kh - 1 - ky) * kw + (kw - 1 - kx)) * o + oi) * c + ci;
                    flipped[dst] = kernel[src];
                }
            }
        }
    }
    let adjoint = ConvGeometry {
        n: g.n,
        h: g.oh,
        w: g.ow,
        c: o,
        kh,
        kw,
        o: c,
        oh: g.h,
        ow: g.w,
        pad_top: kh - 1 - g.pad_top,
        pad_left: kw - 1 - g.pad_left,
    };
    conv2d_forward(grad_out, &flipped, &adjoint).0
}

/// 2x2 stride-2 max pooling over NHWC. Odd trailing rows/columns are
/// dropped. Returns the output and, per output element, the flat input index
/// that won; ties resolve to the first element in row-major window order.
pub(crate) fn maxpool2x2_forward<T: Real>(input: &[T], shape: &[usize]) -> (Vec<T>, Vec<usize>) {
    let [n, h, w, c] = *shape else {
        unreachable!("validated by caller")
    };
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(n * oh * ow * c);
    let mut arg = Vec::with_capacity(n * oh * ow * c);
    for b in 0..n {
        for y in 0..oh {
            for x in 0..ow {
                for ch in 0..c {
                    let mut best_idx = ((b * h + 2 * y) * w + 2 * x) * c + ch;
                    let mut best = input[best_idx];
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = ((b * h + 2 * y + dy) * w + 2 * x + dx) * c + ch;
                        if input[idx] > best {
                            best = input[idx];
                            best_idx = idx;
                        }
                    }
                    out.push(best);
                    arg.push(best_idx);
                }
            }
        }
    }
    (out, arg)
}

/// Nearest-neighbour 2x upsampling over NHWC.
pub(crate) fn upsample2x_forward<T: Real>(input: &[T], shape: &[usize]) -> Vec<T> {
    let [n, h, w, c] = *shape else {
        unreachable!("validated by caller")
    };
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![T::zero(); n * oh * ow * c];
    for b in 0..n {
        for y in 0..oh {
            for x in 0..ow {
                let s = ((b * h + y / 2) * w + x / 2) * c;
                let d = ((b * oh + y) * ow + x) * c;
                out[d..d + c].copy_from_slice(&input[s..s + c]);
            }
        }
    }
    out
}

pub(crate) fn upsample2x_backward<T: Real>(grad_out: &[T], in_shape: &[usize]) -> Vec<T> {
    let [n, h, w, c] = *in_shape else {
        unreachable!("validated by caller")
    };
    let (oh, ow) = (2 * h, 2 * w);
    let mut grad = vec![T::zero(); n * h * w * c];
    for b in 0..n {
        for y in 0..oh {
            for x in 0..ow {
                let d = ((b * h + y / 2) * w + x / 2) * c;
                let s = ((b * oh + y) * ow + x) * c;
                for (g, &v) in grad[d..d + c].iter_mut().zip(&grad_out[s..s + c]) {
                    *g += v;
                }
            }
        }
    }
    grad
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct nested-loop cross-correlation used as an independent check.
    fn conv_direct(input: &[f64], g: &ConvGeometry, kernel: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; g.n * g.oh * g.ow * g.o];
        for b in 0..g.n {
            for y in 0..g.oh {
                for x in 0..g.ow {
                    for oc in 0..g.o {
                        let mut acc = 0.0;
                        for ky in 0..g.kh {
                            for kx in 0..g.kw {
                                let sy = y as isize + ky as isize - g.pad_top as isize;
                                let sx = x as isize + kx as isize - g.pad_left as isize;
                                if sy < 0 || sx < 0 || sy >= g.h as isize || sx >= g.w as isize {
                                    continue;
                                }
                                for ic in 0..g.c {
                                    let iv = input
                                        [((b * g.h + sy as usize) * g.w + sx as usize) * g.c + ic];
                                    let kv = kernel[((ky * g.kw + kx) * g.c + ic) * g.o + oc];
                                    acc += iv * kv;
                                }
                            }
                        }
                        out[((b * g.oh + y) * g.ow + x) * g.o + oc] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_direct_loops() {
        for padding in [Padding::Same, Padding::Valid] {
            let g = ConvGeometry::new(&[2, 5, 4, 3], &[3, 3, 3, 2], padding).unwrap();
            let input: Vec<f64> = (0..120).map(|i| ((i * 7) % 11) as f64 - 5.0).collect();
            let kernel: Vec<f64> = (0..54).map(|i| ((i * 5) % 7) as f64 * 0.25 - 0.75).collect();
            let (out, _) = conv2d_forward(&input, &kernel, &g);
            assert_eq!(out, conv_direct(&input, &g, &kernel));
        }
    }

    #[test]
    fn same_padding_keeps_extent_valid_shrinks() {
        let s = ConvGeometry::new(&[1, 16, 16, 3], &[3, 3, 3, 8], Padding::Same).unwrap();
        assert_eq!(s.output_shape(), vec![1, 16, 16, 8]);
        let v = ConvGeometry::new(&[1, 16, 16, 3], &[3, 3, 3, 8], Padding::Valid).unwrap();
        assert_eq!(v.output_shape(), vec![1, 14, 14, 8]);
        assert!(ConvGeometry::new(&[1, 2, 2, 3], &[3, 3, 3, 8], Padding::Valid).is_none());
        assert!(ConvGeometry::new(&[1, 4, 4, 2], &[3, 3, 3, 8], Padding::Same).is_none());
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), y> == <x, col2im(y)>
        let g = ConvGeometry::new(&[1, 4, 3, 2], &[3, 3, 2, 1], Padding::Same).unwrap();
        let x: Vec<f64> = (0..24).map(|i| (i as f64 * 0.37).sin()).collect();
        let y: Vec<f64> = (0..g.positions() * g.patch_len())
            .map(|i| (i as f64 * 0.11).cos())
            .collect();
        let lhs: f64 = im2col(&x, &g).iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(col2im(&y, &g)).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn narrowing_input_gradient_matches_unfolded_route() {
        for (padding, kernel) in [(Padding::Same, [3, 3, 4, 2]), (Padding::Valid, [3, 2, 4, 2])] {
            let g = ConvGeometry::new(&[2, 5, 4, 4], &kernel, padding).unwrap();
            let k: Vec<f64> = (0..g.patch_len() * g.o).map(|i| (i as f64 * 0.7).sin()).collect();
            let dy: Vec<f64> = (0..g.positions() * g.o).map(|i| (i as f64 * 0.3).cos()).collect();
            let mut cols = vec![0.0; g.positions() * g.patch_len()];
            f64::gemm(
                g.positions(),
                g.o,
                g.patch_len(),
                1.0,
                &dy,
                (g.o, 1),
                &k,
                (1, g.o),
                0.0,
                &mut cols,
                (g.patch_len(), 1),
            );
            let unfolded = col2im(&cols, &g);
            let direct = conv2d_input_grad(&dy, &k, &g);
            for (a, b) in unfolded.iter().zip(&direct) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn maxpool_picks_window_max_and_first_tie() {
        let (out, arg) = maxpool2x2_forward(&[1.0, 2.0, 3.0, 4.0], &[1, 2, 2, 1]);
        assert_eq!(out, vec![4.0]);
        assert_eq!(arg, vec![3]);
        let (_, arg) = maxpool2x2_forward(&[5.0, 5.0, 5.0, 5.0], &[1, 2, 2, 1]);
        assert_eq!(arg, vec![0]);
    }

    #[test]
    fn upsample_repeats_pixels() {
        let out = upsample2x_forward(&[1.0, 2.0], &[1, 1, 2, 1]);
        assert_eq!(out, vec![1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0]);
        let back = upsample2x_backward(&[1.0; 8], &[1, 1, 2, 1]);
        assert_eq!(back, vec![4.0, 4.0]);
    }
}
