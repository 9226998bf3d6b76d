//! Forward and backward kernels for the graph operators, written against
//! plain slices so they can be tested against nested-loop oracles.

use crate::scalar::{gemm, MatRef, Scalar};

/// Horizontal Sobel kernel, applied as a correlation. The vertical kernel is
/// its transpose.
pub const SOBEL_X: [[f64; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
pub const SOBEL_Y: [[f64; 3]; 3] = [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub height: usize,
    pub width: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
}

impl ConvGeometry {
    pub fn out_height(&self) -> usize {
        self.height.div_ceil(self.stride)
    }

    pub fn out_width(&self) -> usize {
        self.width.div_ceil(self.stride)
    }

    fn patch_len(&self) -> usize {
        9 * self.in_channels
    }

    fn out_pixels(&self) -> usize {
        self.out_height() * self.out_width()
    }
}

/// Unrolls 3x3 zero-padded neighbourhoods into rows of `(ky, kx, c)`.
fn im2col<T: Scalar>(input: &[T], g: &ConvGeometry) -> Vec<T> {
    let (ho, wo, ci) = (g.out_height(), g.out_width(), g.in_channels);
    let plen = g.patch_len();
    let mut cols = vec![T::zero(); ho * wo * plen];
    for oy in 0..ho {
        for ox in 0..wo {
            let row = &mut cols[(oy * wo + ox) * plen..][..plen];
            for ky in 0..3 {
                let y = (oy * g.stride + ky) as isize - 1;
                if y < 0 || y >= g.height as isize {
                    continue;
                }
                for kx in 0..3 {
                    let x = (ox * g.stride + kx) as isize - 1;
                    if x < 0 || x >= g.width as isize {
                        continue;
                    }
                    let src = (y as usize * g.width + x as usize) * ci;
                    let dst = (ky * 3 + kx) * ci;
                    row[dst..dst + ci].copy_from_slice(&input[src..src + ci]);
                }
            }
        }
    }
    cols
}

fn col2im_add<T: Scalar>(cols: &[T], g: &ConvGeometry, grad_input: &mut [T]) {
    let (ho, wo, ci) = (g.out_height(), g.out_width(), g.in_channels);
    let plen = g.patch_len();
    for oy in 0..ho {
        for ox in 0..wo {
            let row = &cols[(oy * wo + ox) * plen..][..plen];
            for ky in 0..3 {
                let y = (oy * g.stride + ky) as isize - 1;
                if y < 0 || y >= g.height as isize {
                    continue;
                }
                for kx in 0..3 {
                    let x = (ox * g.stride + kx) as isize - 1;
                    if x < 0 || x >= g.width as isize {
                        continue;
                    }
                    let dst = (y as usize * g.width + x as usize) * ci;
                    let src = (ky * 3 + kx) * ci;
                    for (d, &s) in grad_input[dst..dst + ci].iter_mut().zip(&row[src..src + ci]) {
                        *d += s;
                    }
                }
            }
        }
    }
}

pub fn conv2d_forward<T: Scalar>(input: &[T], kernel: &[T], bias: &[T], g: &ConvGeometry) -> Vec<T> {
    let m = g.out_pixels();
    let co = g.out_channels;
    let mut out: Vec<T> = Vec::with_capacity(m * co);
    for _ in 0..m {
        out.extend_from_slice(bias);
    }
    let cols = im2col(input, g);
    gemm(MatRef::new(&cols, m, g.patch_len()), MatRef::new(kernel, g.patch_len(), co), T::one(), &mut out);
    out
}

pub struct ConvGrads<T> {
    pub input: Option<Vec<T>>,
    pub kernel: Vec<T>,
    pub bias: Vec<T>,
}

pub fn conv2d_backward<T: Scalar>(
    input: &[T],
    kernel: &[T],
    grad_out: &[T],
    g: &ConvGeometry,
    need_input: bool,
) -> ConvGrads<T> {
    let m = g.out_pixels();
    let co = g.out_channels;
    let plen = g.patch_len();
    let cols = im2col(input, g);
    let dout = MatRef::new(grad_out, m, co);

    let mut grad_kernel = vec![T::zero(); plen * co];
    gemm(MatRef::new(&cols, m, plen).t(), dout, T::zero(), &mut grad_kernel);

    let mut grad_bias = vec![T::zero(); co];
    for row in grad_out.chunks_exact(co) {
        for (b, &v) in grad_bias.iter_mut().zip(row) {
            *b += v;
        }
    }

    let grad_input = need_input.then(|| {
        let mut dcols = vec![T::zero(); m * plen];
        gemm(dout, MatRef::new(kernel, plen, co).t(), T::zero(), &mut dcols);
        let mut gi = vec![T::zero(); g.height * g.width * g.in_channels];
        col2im_add(&dcols, g, &mut gi);
        gi
    });

    ConvGrads { input: grad_input, kernel: grad_kernel, bias: grad_bias }
}

/// Per-channel horizontal and vertical Sobel responses. Borders replicate
/// the edge pixel, so constant planes have zero response everywhere.
/// Output channel `2c` is the horizontal response of input channel `c`,
/// `2c + 1` the vertical one.
pub fn sobel_forward<T: Scalar>(input: &[T], h: usize, w: usize, c: usize) -> Vec<T> {
    let two = T::lit(2.0);
    let mut out = vec![T::zero(); h * w * 2 * c];
    for y in 0..h {
        let rows = [clamp_index(y, 0, h), y, clamp_index(y, 2, h)];
        for x in 0..w {
            let cols = [clamp_index(x, 0, w), x, clamp_index(x, 2, w)];
            let o = (y * w + x) * 2 * c;
            for ch in 0..c {
                let at = |r: usize, k: usize| input[(rows[r] * w + cols[k]) * c + ch];
                // differences first, so flat neighbourhoods give exactly zero
                out[o + 2 * ch] = (at(0, 2) - at(0, 0)) + two * (at(1, 2) - at(1, 0)) + (at(2, 2) - at(2, 0));
                out[o + 2 * ch + 1] = (at(2, 0) - at(0, 0)) + two * (at(2, 1) - at(0, 1)) + (at(2, 2) - at(0, 2));
            }
        }
    }
    out
}

pub fn sobel_backward<T: Scalar>(grad_out: &[T], h: usize, w: usize, c: usize) -> Vec<T> {
    let mut gi = vec![T::zero(); h * w * c];
    for y in 0..h {
        for x in 0..w {
            let o = (y * w + x) * 2 * c;
            for ky in 0..3 {
                let sy = clamp_index(y, ky, h);
                for kx in 0..3 {
                    let sx = clamp_index(x, kx, w);
                    let (gx, gy) = (T::lit(SOBEL_X[ky][kx]), T::lit(SOBEL_Y[ky][kx]));
                    let dst = (sy * w + sx) * c;
                    for ch in 0..c {
                        gi[dst + ch] += gx * grad_out[o + 2 * ch] + gy * grad_out[o + 2 * ch + 1];
                    }
                }
            }
        }
    }
    gi
}

#[inline]
fn clamp_index(centre: usize, tap: usize, n: usize) -> usize {
    (centre + tap).saturating_sub(1).min(n - 1)
}

pub fn upsample2x_forward<T: Scalar>(input: &[T], h: usize, w: usize, c: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(4 * input.len());
    for y in 0..2 * h {
        let row = &input[(y / 2) * w * c..][..w * c];
        for pixel in row.chunks_exact(c) {
            out.extend_from_slice(pixel);
            out.extend_from_slice(pixel);
        }
    }
    out
}

pub fn upsample2x_backward<T: Scalar>(grad_out: &[T], h: usize, w: usize, c: usize) -> Vec<T> {
    let mut gi = vec![T::zero(); h * w * c];
    for y in 0..2 * h {
        for x in 0..2 * w {
            let src = (y * 2 * w + x) * c;
            let dst = ((y / 2) * w + x / 2) * c;
            for ch in 0..c {
                gi[dst + ch] += grad_out[src + ch];
            }
        }
    }
    gi
}

#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}
