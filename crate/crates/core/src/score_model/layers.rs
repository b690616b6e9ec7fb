//! Dense CHW tensors and the handful of layers the denoiser needs, each with
//! a hand-written backward pass.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView2, ArrayViewMut2};

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Tensor {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self {
            c,
            h,
            w,
            data: vec![0.0; c * h * w],
        }
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let p = self.plane();
        &self.data[c * p..(c + 1) * p]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let p = self.plane();
        &mut self.data[c * p..(c + 1) * p]
    }
}

/// Parameter slice of a 3×3 "same" convolution: weights `[out][in][3][3]`
/// followed by `out` biases.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Conv {
    pub in_c: usize,
    pub out_c: usize,
    pub offset: usize,
}

impl Conv {
    pub fn weight_len(&self) -> usize {
        self.out_c * self.in_c * 9
    }

    pub fn len(&self) -> usize {
        self.weight_len() + self.out_c
    }

    pub fn fan_in(&self) -> usize {
        self.in_c * 9
    }

    fn weights<'a>(&self, params: &'a [f64]) -> ArrayView2<'a, f64> {
        ArrayView2::from_shape((self.out_c, self.in_c * 9), &params[self.offset..self.offset + self.weight_len()])
            .expect("weight slice matches its shape")
    }

    pub fn forward(&self, params: &[f64], input: &Tensor) -> Tensor {
        debug_assert_eq!(input.c, self.in_c);
        let (h, w) = (input.h, input.w);
        let bias = &params[self.offset + self.weight_len()..self.offset + self.len()];
        let cols = im2col(input);
        let mut out = Array2::from_shape_fn((self.out_c, h * w), |(o, _)| bias[o]);
        general_mat_mul(1.0, &self.weights(params), &cols, 1.0, &mut out);
        Tensor {
            c: self.out_c,
            h,
            w,
            data: out.into_raw_vec_and_offset().0,
        }
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dinput`.
    pub fn backward(&self, params: &[f64], input: &Tensor, d_out: &Tensor, grad: &mut [f64]) -> Tensor {
        let (h, w) = (input.h, input.w);
        let wl = self.weight_len();
        let d_out = ArrayView2::from_shape((self.out_c, h * w), &d_out.data).expect("gradient shape");
        let cols = im2col(input);
        let (gw, gb) = grad[self.offset..self.offset + self.len()].split_at_mut(wl);
        let mut gw = ArrayViewMut2::from_shape((self.out_c, self.in_c * 9), gw).expect("weight shape");
        general_mat_mul(1.0, &d_out, &cols.t(), 1.0, &mut gw);
        for (g, row) in gb.iter_mut().zip(d_out.rows()) {
            *g += row.sum();
        }
        let d_cols = self.weights(params).t().dot(&d_out);
        col2im(&d_cols, input.c, h, w)
    }
}

/// Rows are `(channel, ky, kx)`, columns are output pixels; taps outside
/// the image read zero.
fn im2col(input: &Tensor) -> Array2<f64> {
    let (h, w) = (input.h, input.w);
    let mut cols = Array2::zeros((input.c * 9, h * w));
    for i in 0..input.c {
        let src = input.channel(i);
        for ky in 0..3 {
            for kx in 0..3 {
                let mut row = cols.row_mut(i * 9 + ky * 3 + kx);
                let row = row.as_slice_mut().expect("standard layout");
                let (x0, x1) = (1usize.saturating_sub(kx), (w + 1 - kx).min(w));
                for y in 0..h {
                    let sy = y + ky;
                    if sy < 1 || sy > h {
                        continue;
                    }
                    row[y * w + x0..y * w + x1].copy_from_slice(&src[(sy - 1) * w + x0 + kx - 1..(sy - 1) * w + x1 + kx - 1]);
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`].
fn col2im(cols: &Array2<f64>, c: usize, h: usize, w: usize) -> Tensor {
    let mut out = Tensor::zeros(c, h, w);
    for i in 0..c {
        let dst = out.channel_mut(i);
        for ky in 0..3 {
            for kx in 0..3 {
                let row = cols.row(i * 9 + ky * 3 + kx);
                let row = row.as_slice().expect("standard layout");
                let (x0, x1) = (1usize.saturating_sub(kx), (w + 1 - kx).min(w));
                for y in 0..h {
                    let sy = y + ky;
                    if sy < 1 || sy > h {
                        continue;
                    }
                    let d = &mut dst[(sy - 1) * w + x0 + kx - 1..(sy - 1) * w + x1 + kx - 1];
                    for (d, s) in d.iter_mut().zip(&row[y * w + x0..y * w + x1]) {
                        *d += s;
                    }
                }
            }
        }
    }
    out
}

/// Dense layer `y = W x + b`, weights `[out][in]` then biases.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Linear {
    pub in_dim: usize,
    pub out_dim: usize,
    pub offset: usize,
}

impl Linear {
    pub fn len(&self) -> usize {
        self.out_dim * (self.in_dim + 1)
    }

    pub fn forward(&self, params: &[f64], x: &[f64]) -> Vec<f64> {
        let w = &params[self.offset..self.offset + self.out_dim * self.in_dim];
        let b = &params[self.offset + self.out_dim * self.in_dim..self.offset + self.len()];
        (0..self.out_dim)
            .map(|o| b[o] + w[o * self.in_dim..(o + 1) * self.in_dim].iter().zip(x).map(|(a, b)| a * b).sum::<f64>())
            .collect()
    }

    /// Parameter gradients only; the input is a fixed embedding.
    pub fn backward(&self, x: &[f64], d_out: &[f64], grad: &mut [f64]) {
        let wl = self.out_dim * self.in_dim;
        let (gw, gb) = grad[self.offset..self.offset + self.len()].split_at_mut(wl);
        for o in 0..self.out_dim {
            gb[o] += d_out[o];
            for (g, xi) in gw[o * self.in_dim..(o + 1) * self.in_dim].iter_mut().zip(x) {
                *g += d_out[o] * xi;
            }
        }
    }
}

/// Adds `bias[c]` to every pixel of channel `c`.
pub(crate) fn add_channel_bias(t: &mut Tensor, bias: &[f64]) {
    for (c, b) in bias.iter().enumerate() {
        t.channel_mut(c).iter_mut().for_each(|v| *v += b);
    }
}

pub(crate) fn channel_sums(t: &Tensor) -> Vec<f64> {
    (0..t.c).map(|c| t.channel(c).iter().sum()).collect()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `x · sigmoid(x)`; its derivative is bounded by about 1.1.
pub(crate) fn silu(t: &Tensor) -> Tensor {
    Tensor {
        data: t.data.iter().map(|&x| x * sigmoid(x)).collect(),
        ..*t
    }
}

pub(crate) fn silu_backward(pre: &Tensor, d_out: &Tensor) -> Tensor {
    Tensor {
        data: pre
            .data
            .iter()
            .zip(&d_out.data)
            .map(|(&x, &d)| {
                let s = sigmoid(x);
                d * s * (1.0 + x * (1.0 - s))
            })
            .collect(),
        ..*pre
    }
}

pub(crate) fn avg_pool2(t: &Tensor) -> Tensor {
    let (h2, w2) = (t.h / 2, t.w / 2);
    let mut out = Tensor::zeros(t.c, h2, w2);
    for c in 0..t.c {
        let src = t.channel(c);
        let dst = out.channel_mut(c);
        for y in 0..h2 {
            for x in 0..w2 {
                let i = 2 * y * t.w + 2 * x;
                dst[y * w2 + x] = 0.25 * (src[i] + src[i + 1] + src[i + t.w] + src[i + t.w + 1]);
            }
        }
    }
    out
}

pub(crate) fn avg_pool2_backward(d_out: &Tensor, h: usize, w: usize) -> Tensor {
    let mut d_in = Tensor::zeros(d_out.c, h, w);
    for c in 0..d_out.c {
        let src = d_out.channel(c);
        let dst = d_in.channel_mut(c);
        for y in 0..h {
            for x in 0..w {
                dst[y * w + x] = 0.25 * src[(y / 2) * d_out.w + x / 2];
            }
        }
    }
    d_in
}

pub(crate) fn upsample2(t: &Tensor) -> Tensor {
    let (h, w) = (t.h * 2, t.w * 2);
    let mut out = Tensor::zeros(t.c, h, w);
    for c in 0..t.c {
        let src = t.channel(c);
        let dst = out.channel_mut(c);
        for y in 0..h {
            for x in 0..w {
                dst[y * w + x] = src[(y / 2) * t.w + x / 2];
            }
        }
    }
    out
}

pub(crate) fn upsample2_backward(d_out: &Tensor) -> Tensor {
    let (h2, w2) = (d_out.h / 2, d_out.w / 2);
    let mut d_in = Tensor::zeros(d_out.c, h2, w2);
    for c in 0..d_out.c {
        let src = d_out.channel(c);
        let dst = d_in.channel_mut(c);
        for y in 0..d_out.h {
            for x in 0..d_out.w {
                dst[(y / 2) * w2 + x / 2] += src[y * d_out.w + x];
            }
        }
    }
    d_in
}

pub(crate) fn concat(a: &Tensor, b: &Tensor) -> Tensor {
    debug_assert_eq!((a.h, a.w), (b.h, b.w));
    let mut data = Vec::with_capacity(a.data.len() + b.data.len());
    data.extend_from_slice(&a.data);
    data.extend_from_slice(&b.data);
    Tensor {
        c: a.c + b.c,
        h: a.h,
        w: a.w,
        data,
    }
}

pub(crate) fn split(t: &Tensor, first_c: usize) -> (Tensor, Tensor) {
    let cut = first_c * t.plane();
    (
        Tensor {
            c: first_c,
            h: t.h,
            w: t.w,
            data: t.data[..cut].to_vec(),
        },
        Tensor {
            c: t.c - first_c,
            h: t.h,
            w: t.w,
            data: t.data[cut..].to_vec(),
        },
    )
}

pub(crate) fn add_assign(a: &mut Tensor, b: &Tensor) {
    a.data.iter_mut().zip(&b.data).for_each(|(x, y)| *x += y);
}
