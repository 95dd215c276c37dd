//! Global appearance de-biasing: a freshly sampled shallow transform
//! perturbs texture while a Frobenius-norm rescale pins the output's
//! energy to the input's. Weights are never trained; a new draw is
//! taken at every optimizer step.
//!
//! Four interchangeable transform bodies exist: a two-layer
//! convolution (default), a residual two-layer convolution, per-channel
//! pixel-sequence self-attention, and a two-layer linear net acting on
//! transposed spatial axes.

use crate::error::{Error, Result};
use crate::instrument;
use crate::ops::{
    conv3x3_backward_input, conv3x3_forward, from_planar, leaky_backward, leaky_forward, to_planar,
};
use crate::rng::Rng;
use crate::tensor::{frobenius_norm, Image};

pub const DEFAULT_LEAKY_SLOPE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GadVariant {
    Convolution,
    Resnet2,
    Attention,
    Linear,
}

impl GadVariant {
    pub const ALL: [GadVariant; 4] = [
        GadVariant::Convolution,
        GadVariant::Resnet2,
        GadVariant::Attention,
        GadVariant::Linear,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            GadVariant::Convolution => "convolution",
            GadVariant::Resnet2 => "resnet2",
            GadVariant::Attention => "attention",
            GadVariant::Linear => "linear",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "convolution" => Ok(GadVariant::Convolution),
            "resnet2" => Ok(GadVariant::Resnet2),
            "attention" => Ok(GadVariant::Attention),
            "linear" => Ok(GadVariant::Linear),
            other => Err(Error::Config(format!("unknown gad variant '{other}'"))),
        }
    }
}

/// One sampled instantiation of the de-biasing transform.
///
/// Weight layout per variant (all row-major):
/// - convolution: layer1 `[2][C][3][3]`, layer2 `[C][2][3][3]`
/// - resnet2:     layer1 `[3][C][3][3]`, layer2 `[C][3][3][3]`
/// - attention:   layer1 `[2][N][N]` (query then key projections),
///                layer2 `[1][N][N]` (value projection), N = H*W
/// - linear:      layer1 `[W][W]` (width projection),
///                layer2 `[H][H]` (height projection)
#[derive(Debug, Clone, PartialEq)]
pub struct GadParams {
    pub variant: GadVariant,
    pub layer1: Vec<f64>,
    pub layer2: Vec<f64>,
    pub alpha: f64,
    pub leaky_slope: f64,
    pub seed: u64,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

/// Draws fresh standard-normal weights and a uniform interpolation
/// coefficient from one seeded stream: layer1, then layer2, then alpha.
/// The spatial dimensions only shape the attention and linear variants
/// but are recorded for all of them.
pub fn sample_gad(
    seed: u64,
    channels: usize,
    height: usize,
    width: usize,
    variant: GadVariant,
) -> GadParams {
    let n = height * width;
    let (n1, n2) = match variant {
        GadVariant::Convolution => (2 * channels * 9, channels * 2 * 9),
        GadVariant::Resnet2 => (3 * channels * 9, channels * 3 * 9),
        GadVariant::Attention => (2 * n * n, n * n),
        GadVariant::Linear => (width * width, height * height),
    };
    let mut rng = Rng::new(seed);
    let layer1 = (0..n1).map(|_| rng.normal()).collect();
    let layer2 = (0..n2).map(|_| rng.normal()).collect();
    let alpha = rng.uniform();
    GadParams {
        variant,
        layer1,
        layer2,
        alpha,
        leaky_slope: DEFAULT_LEAKY_SLOPE,
        seed,
        channels,
        height,
        width,
    }
}

fn check_compatible(image: &Image, params: &GadParams) -> Result<()> {
    if image.channels() != params.channels {
        return Err(Error::ShapeMismatch(format!(
            "image has {} channels, params sampled for {}",
            image.channels(),
            params.channels
        )));
    }
    let spatial_bound = matches!(params.variant, GadVariant::Attention | GadVariant::Linear);
    if spatial_bound && (image.height() != params.height || image.width() != params.width) {
        return Err(Error::ShapeMismatch(format!(
            "image {}x{} vs params sampled for {}x{}",
            image.height(),
            image.width(),
            params.height,
            params.width
        )));
    }
    Ok(())
}

/// Per-variant intermediates kept alive for the backward pass.
enum NetStash {
    Conv {
        z1: Vec<f64>,
    },
    Attention {
        // Per channel: query, key, value vectors and the output row.
        per_channel: Vec<AttentionStash>,
    },
    Linear,
}

struct AttentionStash {
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    y: Vec<f64>,
}

/// Raw transform output g_net(I): same shape as the input, before
/// interpolation and renormalization.
pub fn gad_net(image: &Image, params: &GadParams) -> Result<Image> {
    check_compatible(image, params)?;
    let (out, _) = net_forward(image, params);
    Ok(out)
}

fn net_forward(image: &Image, params: &GadParams) -> (Image, NetStash) {
    let (h, w, c) = (image.height(), image.width(), image.channels());
    let x = to_planar(image);
    match params.variant {
        GadVariant::Convolution => {
            let z1 = conv3x3_forward(&x, &params.layer1, c, 2, h, w);
            let a1 = leaky_forward(&z1, params.leaky_slope);
            let y = conv3x3_forward(&a1, &params.layer2, 2, c, h, w);
            (from_planar(&y, h, w, c), NetStash::Conv { z1 })
        }
        GadVariant::Resnet2 => {
            let z1 = conv3x3_forward(&x, &params.layer1, c, 3, h, w);
            let a1 = leaky_forward(&z1, params.leaky_slope);
            let mut y = conv3x3_forward(&a1, &params.layer2, 3, c, h, w);
            for (yo, xo) in y.iter_mut().zip(&x) {
                *yo += xo;
            }
            (from_planar(&y, h, w, c), NetStash::Conv { z1 })
        }
        GadVariant::Attention => {
            let n = h * w;
            let wq = &params.layer1[..n * n];
            let wk = &params.layer1[n * n..];
            let wv = &params.layer2[..];
            let scale = 1.0 / (n as f64).sqrt();
            let mut out = vec![0.0; c * n];
            let mut per_channel = Vec::with_capacity(c);
            for ch in 0..c {
                let xc = &x[ch * n..(ch + 1) * n];
                let q = matvec(wq, xc, n);
                let k = matvec(wk, xc, n);
                let v = matvec(wv, xc, n);
                let mut y = vec![0.0; n];
                let mut logits = vec![0.0; n];
                for i in 0..n {
                    let qi = q[i] * scale;
                    for (l, kj) in logits.iter_mut().zip(&k) {
                        *l = qi * kj;
                    }
                    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let mut z = 0.0;
                    for l in logits.iter_mut() {
                        *l = (*l - max).exp();
                        z += *l;
                    }
                    y[i] = logits.iter().zip(&v).map(|(a, vj)| a * vj).sum::<f64>() / z;
                }
                out[ch * n..(ch + 1) * n].copy_from_slice(&y);
                per_channel.push(AttentionStash { q, k, v, y });
            }
            (
                from_planar(&out, h, w, c),
                NetStash::Attention { per_channel },
            )
        }
        GadVariant::Linear => {
            // Row projection over width, then column projection over
            // height: y[i][j] = sum_{m,n} wh[m][i] * x[m][n] * ww[n][j].
            let ww = &params.layer1;
            let wh = &params.layer2;
            let mut out = vec![0.0; c * h * w];
            for ch in 0..c {
                let xc = &x[ch * h * w..(ch + 1) * h * w];
                let mut t1 = vec![0.0; h * w];
                for i in 0..h {
                    for j in 0..w {
                        let mut acc = 0.0;
                        for m in 0..w {
                            acc += xc[i * w + m] * ww[m * w + j];
                        }
                        t1[i * w + j] = acc;
                    }
                }
                let yc = &mut out[ch * h * w..(ch + 1) * h * w];
                for i in 0..h {
                    for j in 0..w {
                        let mut acc = 0.0;
                        for m in 0..h {
                            acc += wh[m * h + i] * t1[m * w + j];
                        }
                        yc[i * w + j] = acc;
                    }
                }
            }
            (from_planar(&out, h, w, c), NetStash::Linear)
        }
    }
}

fn matvec(mat: &[f64], x: &[f64], n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| {
            mat[i * n..(i + 1) * n]
                .iter()
                .zip(x)
                .map(|(m, v)| m * v)
                .sum()
        })
        .collect()
}

/// x^T M, the adjoint of [`matvec`].
fn matvec_transpose(mat: &[f64], g: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for (i, &gi) in g.iter().enumerate() {
        if gi == 0.0 {
            continue;
        }
        for (o, m) in out.iter_mut().zip(&mat[i * n..(i + 1) * n]) {
            *o += gi * m;
        }
    }
    out
}

/// The full de-biasing transform: interpolate the raw net output with
/// the input by alpha, then rescale to the input's Frobenius norm.
/// A zero input maps to itself.
pub fn apply_gad(image: &Image, params: &GadParams) -> Result<Image> {
    instrument::record_apply_gad_call();
    check_compatible(image, params)?;
    let input_norm = frobenius_norm(image);
    if input_norm == 0.0 {
        return Ok(image.clone());
    }
    let (net, _) = net_forward(image, params);
    let alpha = params.alpha;
    let blended: Vec<f64> = net
        .data()
        .iter()
        .zip(image.data())
        .map(|(n, i)| alpha * n + (1.0 - alpha) * i)
        .collect();
    let blended_norm = blended.iter().map(|v| v * v).sum::<f64>().sqrt();
    if blended_norm == 0.0 {
        return Err(Error::DegenerateNorm);
    }
    let gain = input_norm / blended_norm;
    image.with_data(blended.into_iter().map(|v| v * gain).collect())
}

/// Vector-Jacobian product of [`apply_gad`]: given dL/d(output),
/// returns dL/d(input). Used by gradient checks and available to
/// adaptive attacks that differentiate through the transform.
pub fn apply_gad_vjp(image: &Image, params: &GadParams, upstream: &Image) -> Result<Image> {
    check_compatible(image, params)?;
    if !image.same_shape(upstream) {
        return Err(Error::ShapeMismatch("upstream shape differs".into()));
    }
    let input_norm = frobenius_norm(image);
    if input_norm == 0.0 {
        // The zero image is a fixed point; treat the map as identity.
        return Ok(upstream.clone());
    }
    let (net, stash) = net_forward(image, params);
    let alpha = params.alpha;
    let blended: Vec<f64> = net
        .data()
        .iter()
        .zip(image.data())
        .map(|(n, i)| alpha * n + (1.0 - alpha) * i)
        .collect();
    let blended_norm = blended.iter().map(|v| v * v).sum::<f64>().sqrt();
    if blended_norm == 0.0 {
        return Err(Error::DegenerateNorm);
    }

    // out = (a / b) * y with a = |I|, b = |y|, y the blend.
    let a = input_norm;
    let b = blended_norm;
    let g = upstream.data();
    let g_dot_y: f64 = g.iter().zip(&blended).map(|(gi, yi)| gi * yi).sum();

    // dL/dy = (a/b) (g - (g.y)/b^2 * y)
    let dy: Vec<f64> = g
        .iter()
        .zip(&blended)
        .map(|(gi, yi)| (a / b) * (gi - g_dot_y / (b * b) * yi))
        .collect();

    // dL/dI through the norm factor a: (g.y)/b * I/a.
    let mut dinput: Vec<f64> = image.data().iter().map(|ii| g_dot_y / b * ii / a).collect();
    // Through the blend's identity branch.
    for (d, gy) in dinput.iter_mut().zip(&dy) {
        *d += (1.0 - alpha) * gy;
    }
    // Through the net branch.
    let dnet = net_vjp(image, params, &stash, &dy)?;
    for (d, gn) in dinput.iter_mut().zip(dnet.data()) {
        *d += alpha * gn;
    }
    image.with_data(dinput)
}

fn net_vjp(
    image: &Image,
    params: &GadParams,
    stash: &NetStash,
    dy_interleaved: &[f64],
) -> Result<Image> {
    let (h, w, c) = (image.height(), image.width(), image.channels());
    // Upstream arrives in interleaved order; convert to planar.
    let dy_img = image.with_data(dy_interleaved.to_vec())?;
    let dy = to_planar(&dy_img);
    let dx = match (params.variant, stash) {
        (GadVariant::Convolution, NetStash::Conv { z1 }) => {
            let da1 = conv3x3_backward_input(&params.layer2, &dy, 2, c, h, w);
            let dz1 = leaky_backward(z1, &da1, params.leaky_slope);
            conv3x3_backward_input(&params.layer1, &dz1, c, 2, h, w)
        }
        (GadVariant::Resnet2, NetStash::Conv { z1 }) => {
            let da1 = conv3x3_backward_input(&params.layer2, &dy, 3, c, h, w);
            let dz1 = leaky_backward(z1, &da1, params.leaky_slope);
            let mut dx = conv3x3_backward_input(&params.layer1, &dz1, c, 3, h, w);
            for (d, g) in dx.iter_mut().zip(&dy) {
                *d += g;
            }
            dx
        }
        (GadVariant::Attention, NetStash::Attention { per_channel }) => {
            let n = h * w;
            let wq = &params.layer1[..n * n];
            let wk = &params.layer1[n * n..];
            let wv = &params.layer2[..];
            let scale = 1.0 / (n as f64).sqrt();
            let mut dx = vec![0.0; c * n];
            for (ch, st) in per_channel.iter().enumerate() {
                let dyc = &dy[ch * n..(ch + 1) * n];
                let mut dq = vec![0.0; n];
                let mut dk = vec![0.0; n];
                let mut dv = vec![0.0; n];
                let mut attn = vec![0.0; n];
                for i in 0..n {
                    // Recompute the attention row.
                    let qi = st.q[i] * scale;
                    let mut max = f64::NEG_INFINITY;
                    for (aj, kj) in attn.iter_mut().zip(&st.k) {
                        *aj = qi * kj;
                        if *aj > max {
                            max = *aj;
                        }
                    }
                    let mut z = 0.0;
                    for aj in attn.iter_mut() {
                        *aj = (*aj - max).exp();
                        z += *aj;
                    }
                    let gi = dyc[i];
                    let yi = st.y[i];
                    let mut dq_acc = 0.0;
                    for j in 0..n {
                        let a = attn[j] / z;
                        dv[j] += gi * a;
                        if gi != 0.0 {
                            // d logits_ij = a * gi * (v_j - y_i)
                            let dl = a * gi * (st.v[j] - yi);
                            dq_acc += dl * st.k[j];
                            dk[j] += dl * st.q[i];
                        }
                    }
                    dq[i] = dq_acc * scale;
                }
                for d in dk.iter_mut() {
                    *d *= scale;
                }
                let dxc = &mut dx[ch * n..(ch + 1) * n];
                for (slot, v) in dxc.iter_mut().zip(matvec_transpose(wq, &dq, n)) {
                    *slot += v;
                }
                for (slot, v) in dxc.iter_mut().zip(matvec_transpose(wk, &dk, n)) {
                    *slot += v;
                }
                for (slot, v) in dxc.iter_mut().zip(matvec_transpose(wv, &dv, n)) {
                    *slot += v;
                }
            }
            dx
        }
        (GadVariant::Linear, NetStash::Linear) => {
            // dX = Wh . (dY . Ww^T) with the index conventions of the
            // forward pass.
            let ww = &params.layer1;
            let wh = &params.layer2;
            let mut dx = vec![0.0; c * h * w];
            for ch in 0..c {
                let dyc = &dy[ch * h * w..(ch + 1) * h * w];
                let mut t = vec![0.0; h * w];
                for i in 0..h {
                    for nn in 0..w {
                        let mut acc = 0.0;
                        for j in 0..w {
                            acc += dyc[i * w + j] * ww[nn * w + j];
                        }
                        t[i * w + nn] = acc;
                    }
                }
                let dxc = &mut dx[ch * h * w..(ch + 1) * h * w];
                for m in 0..h {
                    for nn in 0..w {
                        let mut acc = 0.0;
                        for i in 0..h {
                            acc += wh[m * h + i] * t[i * w + nn];
                        }
                        dxc[m * w + nn] = acc;
                    }
                }
            }
            dx
        }
        _ => unreachable!("stash always matches variant"),
    };
    Ok(from_planar(&dx, h, w, c))
}
