//! Shared dense numeric primitives: planar layout conversion, 3x3
//! convolution with replicated borders, leaky ReLU, and 2x2 average
//! pooling, each with its exact adjoint.
//!
//! Tensors are flat `[channel][row][col]` slices; weights for the 3x3
//! convolutions are `[out_ch][in_ch][3][3]`.

use crate::tensor::Image;

/// Interleaved H x W x C image to planar [C][H][W].
pub(crate) fn to_planar(image: &Image) -> Vec<f64> {
    let (h, w, c) = (image.height(), image.width(), image.channels());
    let mut out = vec![0.0; h * w * c];
    for i in 0..h {
        for j in 0..w {
            for ch in 0..c {
                out[ch * h * w + i * w + j] = image.get(i, j, ch);
            }
        }
    }
    out
}

/// Planar [C][H][W] back to an interleaved image.
pub(crate) fn from_planar(planar: &[f64], h: usize, w: usize, c: usize) -> Image {
    let mut data = vec![0.0; h * w * c];
    for ch in 0..c {
        for i in 0..h {
            for j in 0..w {
                data[(i * w + j) * c + ch] = planar[ch * h * w + i * w + j];
            }
        }
    }
    Image::new(h, w, c, data).expect("planar conversion preserves shape")
}

#[inline]
fn clamp_idx(v: i64, hi: usize) -> usize {
    v.clamp(0, hi as i64 - 1) as usize
}

/// 3x3 convolution with edge-replicated padding; preserves H x W.
pub(crate) fn conv3x3_forward(
    x: &[f64],
    weights: &[f64],
    in_ch: usize,
    out_ch: usize,
    h: usize,
    w: usize,
) -> Vec<f64> {
    debug_assert_eq!(x.len(), in_ch * h * w);
    debug_assert_eq!(weights.len(), out_ch * in_ch * 9);
    let mut y = vec![0.0; out_ch * h * w];
    for o in 0..out_ch {
        for c in 0..in_ch {
            let wk = &weights[(o * in_ch + c) * 9..(o * in_ch + c) * 9 + 9];
            let plane = &x[c * h * w..(c + 1) * h * w];
            let out_plane = &mut y[o * h * w..(o + 1) * h * w];
            for i in 0..h {
                for j in 0..w {
                    let mut acc = 0.0;
                    for (t, &wv) in wk.iter().enumerate() {
                        let di = (t / 3) as i64 - 1;
                        let dj = (t % 3) as i64 - 1;
                        let ii = clamp_idx(i as i64 + di, h);
                        let jj = clamp_idx(j as i64 + dj, w);
                        acc += wv * plane[ii * w + jj];
                    }
                    out_plane[i * w + j] += acc;
                }
            }
        }
    }
    y
}

/// Adjoint of [`conv3x3_forward`]: given dL/dy, returns (dL/dx, dL/dw).
/// Border contributions fold back onto the replicated source pixels.
pub(crate) fn conv3x3_backward(
    x: &[f64],
    weights: &[f64],
    dy: &[f64],
    in_ch: usize,
    out_ch: usize,
    h: usize,
    w: usize,
) -> (Vec<f64>, Vec<f64>) {
    let mut dx = vec![0.0; in_ch * h * w];
    let mut dw = vec![0.0; weights.len()];
    for o in 0..out_ch {
        let dy_plane = &dy[o * h * w..(o + 1) * h * w];
        for c in 0..in_ch {
            let base = (o * in_ch + c) * 9;
            let plane = &x[c * h * w..(c + 1) * h * w];
            let dx_plane = &mut dx[c * h * w..(c + 1) * h * w];
            for i in 0..h {
                for j in 0..w {
                    let g = dy_plane[i * w + j];
                    if g == 0.0 {
                        continue;
                    }
                    for t in 0..9 {
                        let di = (t / 3) as i64 - 1;
                        let dj = (t % 3) as i64 - 1;
                        let ii = clamp_idx(i as i64 + di, h);
                        let jj = clamp_idx(j as i64 + dj, w);
                        dw[base + t] += g * plane[ii * w + jj];
                        dx_plane[ii * w + jj] += g * weights[base + t];
                    }
                }
            }
        }
    }
    (dx, dw)
}

/// Input-only adjoint, used on the attack path where weight gradients
/// are not needed.
pub(crate) fn conv3x3_backward_input(
    weights: &[f64],
    dy: &[f64],
    in_ch: usize,
    out_ch: usize,
    h: usize,
    w: usize,
) -> Vec<f64> {
    let mut dx = vec![0.0; in_ch * h * w];
    for o in 0..out_ch {
        let dy_plane = &dy[o * h * w..(o + 1) * h * w];
        for c in 0..in_ch {
            let base = (o * in_ch + c) * 9;
            let dx_plane = &mut dx[c * h * w..(c + 1) * h * w];
            for i in 0..h {
                for j in 0..w {
                    let g = dy_plane[i * w + j];
                    if g == 0.0 {
                        continue;
                    }
                    for t in 0..9 {
                        let di = (t / 3) as i64 - 1;
                        let dj = (t % 3) as i64 - 1;
                        let ii = clamp_idx(i as i64 + di, h);
                        let jj = clamp_idx(j as i64 + dj, w);
                        dx_plane[ii * w + jj] += g * weights[base + t];
                    }
                }
            }
        }
    }
    dx
}

pub(crate) fn leaky_forward(x: &[f64], slope: f64) -> Vec<f64> {
    x.iter()
        .map(|&v| if v > 0.0 { v } else { slope * v })
        .collect()
}

/// dL/dx from dL/dy and the pre-activation values. The derivative at
/// exactly zero takes the negative-side slope.
pub(crate) fn leaky_backward(pre: &[f64], dy: &[f64], slope: f64) -> Vec<f64> {
    pre.iter()
        .zip(dy)
        .map(|(&z, &g)| if z > 0.0 { g } else { slope * g })
        .collect()
}

/// 2x2 average pooling; H and W must be even.
pub(crate) fn avgpool2_forward(x: &[f64], ch: usize, h: usize, w: usize) -> Vec<f64> {
    debug_assert!(h % 2 == 0 && w % 2 == 0);
    let (oh, ow) = (h / 2, w / 2);
    let mut y = vec![0.0; ch * oh * ow];
    for c in 0..ch {
        for i in 0..oh {
            for j in 0..ow {
                let base = c * h * w + 2 * i * w + 2 * j;
                y[c * oh * ow + i * ow + j] =
                    0.25 * (x[base] + x[base + 1] + x[base + w] + x[base + w + 1]);
            }
        }
    }
    y
}

pub(crate) fn avgpool2_backward(dy: &[f64], ch: usize, h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (h / 2, w / 2);
    let mut dx = vec![0.0; ch * h * w];
    for c in 0..ch {
        for i in 0..oh {
            for j in 0..ow {
                let g = 0.25 * dy[c * oh * ow + i * ow + j];
                let base = c * h * w + 2 * i * w + 2 * j;
                dx[base] += g;
                dx[base + 1] += g;
                dx[base + w] += g;
                dx[base + w + 1] += g;
            }
        }
    }
    dx
}
