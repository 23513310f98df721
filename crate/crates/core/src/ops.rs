//! Forward and backward kernels for the layer operations recorded on the tape.
//!
//! Convolution is cross-correlation (no kernel flip) computed by unrolling
//! input patches into a `[C·kh·kw, H'·W']` matrix per sample and multiplying
//! by the `[F, C·kh·kw]` weight matrix.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Geometry of a 2-D convolution or pooling window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub filters: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl Conv2dGeometry {
    pub fn patch_len(&self) -> usize {
        self.in_channels * self.kernel_h * self.kernel_w
    }

    pub fn out_positions(&self) -> usize {
        self.out_h * self.out_w
    }

    pub fn out_shape(&self) -> [usize; 4] {
        [self.batch, self.filters, self.out_h, self.out_w]
    }
}

/// `floor((size + 2·padding − kernel)/stride) + 1`, or `None` when the
/// window does not fit.
pub fn conv_output_len(size: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = size + 2 * padding;
    if stride == 0 || kernel == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

pub fn conv2d_geometry(
    input: &[usize],
    weight: &[usize],
    bias: &[usize],
    stride: usize,
    padding: usize,
) -> Result<Conv2dGeometry> {
    let [n, c, h, w] = *input else {
        return Err(Error::shape("conv2d", format!("input must be [N,C,H,W], got {input:?}")));
    };
    let [f, wc, kh, kw] = *weight else {
        return Err(Error::shape("conv2d", format!("weight must be [F,C,kh,kw], got {weight:?}")));
    };
    if wc != c {
        return Err(Error::shape(
            "conv2d",
            format!("input has C={c} channels but weight expects C={wc}"),
        ));
    }
    if bias != [f] {
        return Err(Error::shape(
            "conv2d",
            format!("bias shape {bias:?} does not match F={f} filters"),
        ));
    }
    if stride == 0 {
        return Err(Error::shape("conv2d", "stride must be at least 1"));
    }
    let (out_h, out_w) = match (
        conv_output_len(h, kh, stride, padding),
        conv_output_len(w, kw, stride, padding),
    ) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            return Err(Error::EmptyOutput {
                op: "conv2d",
                detail: format!(
                    "H={h}, W={w} with padding {padding} is smaller than kernel {kh}x{kw}"
                ),
            })
        }
    };
    Ok(Conv2dGeometry {
        batch: n,
        in_channels: c,
        height: h,
        width: w,
        filters: f,
        kernel_h: kh,
        kernel_w: kw,
        stride,
        padding,
        out_h,
        out_w,
    })
}

/// Unrolls one `[C, H, W]` sample into `cols` (`[C·kh·kw, H'·W']`).
fn im2col<T: Scalar>(g: &Conv2dGeometry, sample: &[T], cols: &mut [T]) {
    let positions = g.out_positions();
    let pad = g.padding as isize;
    for c in 0..g.in_channels {
        let plane = &sample[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kernel_h {
            for kj in 0..g.kernel_w {
                let row = (c * g.kernel_h + ki) * g.kernel_w + kj;
                let dst = &mut cols[row * positions..(row + 1) * positions];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ki) as isize - pad;
                    let line = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    if iy < 0 || iy >= g.height as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for (ox, d) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - pad;
                        *d = if ix < 0 || ix >= g.width as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Scatter-adds `cols` back into a `[C, H, W]` gradient buffer.
fn col2im<T: Scalar>(g: &Conv2dGeometry, cols: &[T], sample: &mut [T]) {
    let positions = g.out_positions();
    let pad = g.padding as isize;
    for c in 0..g.in_channels {
        let plane = &mut sample[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kernel_h {
            for kj in 0..g.kernel_w {
                let row = (c * g.kernel_h + ki) * g.kernel_w + kj;
                let src = &cols[row * positions..(row + 1) * positions];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ki) as isize - pad;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for ox in 0..g.out_w {
                        let ix = (ox * g.stride + kj) as isize - pad;
                        if ix >= 0 && ix < g.width as isize {
                            dst[ix as usize] = dst[ix as usize] + src[oy * g.out_w + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Returns the output and the unrolled patch matrices (kept for backward).
pub fn conv2d_forward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<(Tensor<T>, Conv2dGeometry, Vec<T>)> {
    let g = conv2d_geometry(input.shape(), weight.shape(), bias.shape(), stride, padding)?;
    let patch = g.patch_len();
    let positions = g.out_positions();
    let sample_len = g.in_channels * g.height * g.width;
    let out_len = g.filters * positions;
    let mut cols = vec![T::zero(); g.batch * patch * positions];
    let mut out = vec![T::zero(); g.batch * out_len];
    for n in 0..g.batch {
        let col = &mut cols[n * patch * positions..(n + 1) * patch * positions];
        im2col(&g, &input.data()[n * sample_len..(n + 1) * sample_len], col);
        let dst = &mut out[n * out_len..(n + 1) * out_len];
        T::gemm(false, false, g.filters, positions, patch, weight.data(), col, T::zero(), dst);
        for (f, &b) in bias.data().iter().enumerate() {
            for v in &mut dst[f * positions..(f + 1) * positions] {
                *v = *v + b;
            }
        }
    }
    Ok((Tensor::from_vec(g.out_shape(), out)?, g, cols))
}

pub struct Conv2dGrads<T> {
    pub input: Option<Tensor<T>>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn conv2d_backward<T: Scalar>(
    g: &Conv2dGeometry,
    weight: &Tensor<T>,
    cols: &[T],
    upstream: &Tensor<T>,
    need_input: bool,
) -> Result<Conv2dGrads<T>> {
    if upstream.shape() != g.out_shape() {
        return Err(Error::shape(
            "conv2d backward",
            format!("upstream {:?} vs output {:?}", upstream.shape(), g.out_shape()),
        ));
    }
    let patch = g.patch_len();
    let positions = g.out_positions();
    let out_len = g.filters * positions;
    let sample_len = g.in_channels * g.height * g.width;
    let mut dw = vec![T::zero(); g.filters * patch];
    let mut db = vec![T::zero(); g.filters];
    let mut dx = need_input.then(|| vec![T::zero(); g.batch * sample_len]);
    let mut dcol = vec![T::zero(); if need_input { patch * positions } else { 0 }];
    for n in 0..g.batch {
        let dy = &upstream.data()[n * out_len..(n + 1) * out_len];
        let col = &cols[n * patch * positions..(n + 1) * patch * positions];
        T::gemm(false, true, g.filters, patch, positions, dy, col, T::one(), &mut dw);
        for (f, acc) in db.iter_mut().enumerate() {
            *acc = dy[f * positions..(f + 1) * positions]
                .iter()
                .fold(*acc, |s, &v| s + v);
        }
        if let Some(dx) = dx.as_mut() {
            T::gemm(true, false, patch, positions, g.filters, weight.data(), dy, T::zero(), &mut dcol);
            col2im(g, &dcol, &mut dx[n * sample_len..(n + 1) * sample_len]);
        }
    }
    Ok(Conv2dGrads {
        input: dx
            .map(|d| Tensor::from_vec([g.batch, g.in_channels, g.height, g.width], d))
            .transpose()?,
        weight: Tensor::from_vec(weight.shape().to_vec(), dw)?,
        bias: Tensor::from_vec([g.filters], db)?,
    })
}

/// Max pooling; returns the output and the flat input index of each
/// window's first (row-major) maximum.
pub fn max_pool2d_forward<T: Scalar>(input: &Tensor<T>, k: usize, stride: usize) -> Result<(Tensor<T>, Vec<usize>)> {
    let [n, c, h, w] = *input.shape() else {
        return Err(Error::shape(
            "max_pool2d",
            format!("input must be [N,C,H,W], got {:?}", input.shape()),
        ));
    };
    if k == 0 || stride == 0 {
        return Err(Error::shape("max_pool2d", "window and stride must be at least 1"));
    }
    let (Some(oh), Some(ow)) = (conv_output_len(h, k, stride, 0), conv_output_len(w, k, stride, 0)) else {
        return Err(Error::shape(
            "max_pool2d",
            format!("input {h}x{w} is smaller than window {k}"),
        ));
    };
    let data = input.data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut argmax = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + oy * stride * w + ox * stride;
                for dy in 0..k {
                    let row = base + (oy * stride + dy) * w + ox * stride;
                    for idx in row..row + k {
                        if data[idx] > data[best] {
                            best = idx;
                        }
                    }
                }
                out.push(data[best]);
                argmax.push(best);
            }
        }
    }
    Ok((Tensor::from_vec([n, c, oh, ow], out)?, argmax))
}

pub fn max_pool2d_backward<T: Scalar>(input_shape: &[usize], argmax: &[usize], upstream: &Tensor<T>) -> Result<Tensor<T>> {
    if upstream.numel() != argmax.len() {
        return Err(Error::shape(
            "max_pool2d backward",
            format!("{} upstream values for {} windows", upstream.numel(), argmax.len()),
        ));
    }
    let mut dx = Tensor::zeros(input_shape.to_vec());
    let d = dx.data_mut();
    for (&idx, &g) in argmax.iter().zip(upstream.data()) {
        d[idx] = d[idx] + g;
    }
    Ok(dx)
}

fn dense_dims(input: &[usize], weight: &[usize], bias: &[usize]) -> Result<(usize, usize, usize)> {
    let ([n, d], [wd, m]) = (input, weight) else {
        return Err(Error::shape(
            "dense",
            format!("expected [N,D] input and [D,M] weight, got {input:?} and {weight:?}"),
        ));
    };
    if d != wd {
        return Err(Error::shape(
            "dense",
            format!("input width {d} does not match weight rows {wd}"),
        ));
    }
    if bias != [*m] {
        return Err(Error::shape(
            "dense",
            format!("bias shape {bias:?} does not match {m} outputs"),
        ));
    }
    Ok((*n, *d, *m))
}

/// `input·weight + bias`, with `weight` stored `[D, M]`.
pub fn dense_forward<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, d, m) = dense_dims(input.shape(), weight.shape(), bias.shape())?;
    let mut out = Vec::with_capacity(n * m);
    for _ in 0..n {
        out.extend_from_slice(bias.data());
    }
    T::gemm(false, false, n, m, d, input.data(), weight.data(), T::one(), &mut out);
    Tensor::from_vec([n, m], out)
}

/// Gradients of `dense_forward` w.r.t. (input, weight, bias).
pub fn dense_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    upstream: &Tensor<T>,
    need_input: bool,
) -> Result<(Option<Tensor<T>>, Tensor<T>, Tensor<T>)> {
    let (n, d) = (input.shape()[0], input.shape()[1]);
    let m = weight.shape()[1];
    if upstream.shape() != [n, m] {
        return Err(Error::shape(
            "dense backward",
            format!("upstream {:?} vs output [{n}, {m}]", upstream.shape()),
        ));
    }
    let dx = if need_input {
        let mut dx = vec![T::zero(); n * d];
        T::gemm(false, true, n, d, m, upstream.data(), weight.data(), T::zero(), &mut dx);
        Some(Tensor::from_vec([n, d], dx)?)
    } else {
        None
    };
    let mut dw = vec![T::zero(); d * m];
    T::gemm(true, false, d, m, n, input.data(), upstream.data(), T::zero(), &mut dw);
    let mut db = vec![T::zero(); m];
    for row in upstream.data().chunks_exact(m) {
        for (acc, &v) in db.iter_mut().zip(row) {
            *acc = *acc + v;
        }
    }
    Ok((dx, Tensor::from_vec([d, m], dw)?, Tensor::from_vec([m], db)?))
}

/// Mean negative log-likelihood of `labels` under `softmax(logits)`.
/// Returns the loss and the softmax probabilities.
pub fn softmax_cross_entropy_forward<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<(T, Tensor<T>)> {
    let [n, k] = *logits.shape() else {
        return Err(Error::shape(
            "softmax_cross_entropy",
            format!("logits must be [N,K], got {:?}", logits.shape()),
        ));
    };
    if labels.len() != n {
        return Err(Error::shape(
            "softmax_cross_entropy",
            format!("{} labels for {n} rows", labels.len()),
        ));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::LabelOutOfRange { label: bad, classes: k });
    }
    let mut probs = logits.clone();
    let mut total = T::zero();
    for (row, &label) in probs.data_mut().chunks_exact_mut(k).zip(labels) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut z = T::zero();
        for v in row.iter_mut() {
            *v = *v - max;
            z = z + v.exp();
        }
        let log_z = z.ln();
        total = total + (log_z - row[label]);
        for v in row.iter_mut() {
            *v = (*v - log_z).exp();
        }
    }
    Ok((total / T::from_usize(n).expect("batch size"), probs))
}

pub fn softmax_cross_entropy_backward<T: Scalar>(probs: &Tensor<T>, labels: &[usize], upstream: T) -> Tensor<T> {
    let k = probs.shape()[1];
    let scale = upstream / T::from_usize(labels.len()).expect("batch size");
    let mut d = probs.clone();
    for (row, &label) in d.data_mut().chunks_exact_mut(k).zip(labels) {
        row[label] = row[label] - T::one();
        for v in row.iter_mut() {
            *v = *v * scale;
        }
    }
    d
}
