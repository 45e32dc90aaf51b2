//! 3x3 convolution (zero padding 1) and bilinear upsampling on CHW tensors.

use super::Tensor;

pub fn conv_out_dim(input: usize, stride: usize) -> usize {
    (input - 1) / stride + 1
}

/// Range of output columns `ox` whose input column `ox*stride + kx - 1`
/// lies inside `[0, in_w)`.
#[inline]
fn valid_range(kx: usize, stride: usize, in_w: usize, out_w: usize) -> (usize, usize) {
    let lo = if kx == 0 { 1 } else { 0 };
    // ox*stride + kx - 1 <= in_w - 1  <=>  ox <= (in_w - kx) / stride
    let hi = if in_w >= kx {
        ((in_w - kx) / stride + 1).min(out_w)
    } else {
        0
    };
    (lo, hi.max(lo))
}

/// Weight layout `[out_c][in_c][3][3]`.
pub fn conv_forward(input: &Tensor, weight: &[f64], bias: &[f64], out_c: usize, stride: usize) -> Tensor {
    let (in_c, ih, iw) = (input.c, input.h, input.w);
    let (oh, ow) = (conv_out_dim(ih, stride), conv_out_dim(iw, stride));
    let mut out = Tensor::zeros(out_c, oh, ow);
    for o in 0..out_c {
        let plane = &mut out.data[o * oh * ow..(o + 1) * oh * ow];
        plane.fill(bias[o]);
        for c in 0..in_c {
            let in_plane = &input.data[c * ih * iw..(c + 1) * ih * iw];
            let wbase = (o * in_c + c) * 9;
            for ky in 0..3 {
                for kx in 0..3 {
                    let wv = weight[wbase + ky * 3 + kx];
                    let (lo, hi) = valid_range(kx, stride, iw, ow);
                    for oy in 0..oh {
                        let iy = (oy * stride + ky) as isize - 1;
                        if iy < 0 || iy >= ih as isize {
                            continue;
                        }
                        let in_row = &in_plane[iy as usize * iw..(iy as usize + 1) * iw];
                        let out_row = &mut plane[oy * ow..(oy + 1) * ow];
                        if stride == 1 {
                            let src = &in_row[lo + kx - 1..hi + kx - 1];
                            for (o, &i) in out_row[lo..hi].iter_mut().zip(src) {
                                *o += wv * i;
                            }
                        } else {
                            for ox in lo..hi {
                                out_row[ox] += wv * in_row[ox * stride + kx - 1];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Returns `(grad_input, grad_weight, grad_bias)`.
pub fn conv_backward(
    input: &Tensor,
    weight: &[f64],
    grad_out: &Tensor,
    stride: usize,
    need_grad_input: bool,
) -> (Option<Tensor>, Vec<f64>, Vec<f64>) {
    let (in_c, ih, iw) = (input.c, input.h, input.w);
    let (out_c, oh, ow) = (grad_out.c, grad_out.h, grad_out.w);
    let mut gw = vec![0.0; weight.len()];
    let mut gb = vec![0.0; out_c];
    let mut gi = need_grad_input.then(|| Tensor::zeros(in_c, ih, iw));
    for o in 0..out_c {
        let g_plane = &grad_out.data[o * oh * ow..(o + 1) * oh * ow];
        gb[o] = g_plane.iter().sum();
        for c in 0..in_c {
            let in_plane = &input.data[c * ih * iw..(c + 1) * ih * iw];
            let wbase = (o * in_c + c) * 9;
            for ky in 0..3 {
                for kx in 0..3 {
                    let wv = weight[wbase + ky * 3 + kx];
                    let (lo, hi) = valid_range(kx, stride, iw, ow);
                    let mut acc = 0.0;
                    for oy in 0..oh {
                        let iy = (oy * stride + ky) as isize - 1;
                        if iy < 0 || iy >= ih as isize {
                            continue;
                        }
                        let iy = iy as usize;
                        let g_row = &g_plane[oy * ow..(oy + 1) * ow];
                        let in_row = &in_plane[iy * iw..(iy + 1) * iw];
                        if stride == 1 {
                            let src = &in_row[lo + kx - 1..hi + kx - 1];
                            acc += g_row[lo..hi].iter().zip(src).map(|(g, i)| g * i).sum::<f64>();
                            if let Some(gi) = gi.as_mut() {
                                let gi_row = &mut gi.data[c * ih * iw + iy * iw..c * ih * iw + (iy + 1) * iw];
                                for (d, &g) in gi_row[lo + kx - 1..hi + kx - 1].iter_mut().zip(&g_row[lo..hi]) {
                                    *d += wv * g;
                                }
                            }
                        } else {
                            for ox in lo..hi {
                                acc += g_row[ox] * in_row[ox * stride + kx - 1];
                            }
                            if let Some(gi) = gi.as_mut() {
                                let row = c * ih * iw + iy * iw;
                                for ox in lo..hi {
                                    gi.data[row + ox * stride + kx - 1] += wv * g_row[ox];
                                }
                            }
                        }
                    }
                    gw[wbase + ky * 3 + kx] = acc;
                }
            }
        }
    }
    (gi, gw, gb)
}

/// Source index pairs and weights for one axis of bilinear upsampling with
/// half-pixel centers (`src = (dst + 0.5) / factor - 0.5`, clamped).
fn axis_taps(in_len: usize, factor: usize) -> Vec<(usize, usize, f64)> {
    (0..in_len * factor)
        .map(|d| {
            let src = ((d as f64 + 0.5) / factor as f64 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(in_len - 1);
            let i1 = (i0 + 1).min(in_len - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

pub fn upsample_forward(input: &Tensor, factor: usize) -> Tensor {
    let (c, ih, iw) = (input.c, input.h, input.w);
    let (oh, ow) = (ih * factor, iw * factor);
    let ys = axis_taps(ih, factor);
    let xs = axis_taps(iw, factor);
    let mut out = Tensor::zeros(c, oh, ow);
    for ch in 0..c {
        let src = &input.data[ch * ih * iw..(ch + 1) * ih * iw];
        let dst = &mut out.data[ch * oh * ow..(ch + 1) * oh * ow];
        for (oy, &(y0, y1, ly)) in ys.iter().enumerate() {
            for (ox, &(x0, x1, lx)) in xs.iter().enumerate() {
                let top = src[y0 * iw + x0] * (1.0 - lx) + src[y0 * iw + x1] * lx;
                let bot = src[y1 * iw + x0] * (1.0 - lx) + src[y1 * iw + x1] * lx;
                dst[oy * ow + ox] = top * (1.0 - ly) + bot * ly;
            }
        }
    }
    out
}

pub fn upsample_backward(grad_out: &Tensor, in_h: usize, in_w: usize, factor: usize) -> Tensor {
    let (c, oh, ow) = (grad_out.c, grad_out.h, grad_out.w);
    let ys = axis_taps(in_h, factor);
    let xs = axis_taps(in_w, factor);
    let mut gi = Tensor::zeros(c, in_h, in_w);
    for ch in 0..c {
        let g = &grad_out.data[ch * oh * ow..(ch + 1) * oh * ow];
        let dst = &mut gi.data[ch * in_h * in_w..(ch + 1) * in_h * in_w];
        for (oy, &(y0, y1, ly)) in ys.iter().enumerate() {
            for (ox, &(x0, x1, lx)) in xs.iter().enumerate() {
                let v = g[oy * ow + ox];
                dst[y0 * in_w + x0] += v * (1.0 - ly) * (1.0 - lx);
                dst[y0 * in_w + x1] += v * (1.0 - ly) * lx;
                dst[y1 * in_w + x0] += v * ly * (1.0 - lx);
                dst[y1 * in_w + x1] += v * ly * lx;
            }
        }
    }
    gi
}
