//! A small differentiable convolutional classifier with exact
//! reverse-mode gradients for both parameters and inputs.
//!
//! Architecture: conv3x3 (C -> 8) -> leaky ReLU -> avgpool 2x2 ->
//! conv3x3 (8 -> 16) -> leaky ReLU -> avgpool 2x2 -> dense -> logits.
//! Average pooling keeps the loss surface smooth enough for
//! finite-difference verification; spatial dimensions must be
//! divisible by four.

use crate::error::{Error, Result};
use crate::ops::{
    avgpool2_backward, avgpool2_forward, conv3x3_backward, conv3x3_backward_input, conv3x3_forward,
    from_planar, leaky_backward, leaky_forward, to_planar,
};
use crate::rng::Rng;
use crate::tensor::Image;

pub const LEAKY_SLOPE: f64 = 0.01;
pub const CONV1_CHANNELS: usize = 8;
pub const CONV2_CHANNELS: usize = 16;

/// Input and output dimensions the parameters are built for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub classes: usize,
}

impl ModelShape {
    pub fn new(channels: usize, height: usize, width: usize, classes: usize) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::UnsupportedChannels(channels));
        }
        if height % 4 != 0 || width % 4 != 0 || height == 0 || width == 0 {
            return Err(Error::ShapeMismatch(format!(
                "spatial dimensions must be positive multiples of 4, got {height}x{width}"
            )));
        }
        if classes < 2 {
            return Err(Error::ShapeMismatch("need at least 2 classes".into()));
        }
        Ok(ModelShape {
            channels,
            height,
            width,
            classes,
        })
    }

    /// Flattened feature count entering the dense layer.
    pub fn dense_inputs(&self) -> usize {
        CONV2_CHANNELS * (self.height / 4) * (self.width / 4)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub shape: ModelShape,
    pub conv1_w: Vec<f64>,
    pub conv1_b: Vec<f64>,
    pub conv2_w: Vec<f64>,
    pub conv2_b: Vec<f64>,
    pub dense_w: Vec<f64>,
    pub dense_b: Vec<f64>,
}

impl ModelParams {
    /// He-style initialization: normals scaled by sqrt(2 / fan_in),
    /// biases zero. Deterministic in the seed.
    pub fn init(shape: ModelShape, seed: u64) -> Self {
        let mut rng = Rng::new(seed);
        let mut sample = |n: usize, fan_in: usize| -> Vec<f64> {
            let scale = (2.0 / fan_in as f64).sqrt();
            (0..n).map(|_| scale * rng.normal()).collect()
        };
        let c = shape.channels;
        ModelParams {
            conv1_w: sample(CONV1_CHANNELS * c * 9, c * 9),
            conv1_b: vec![0.0; CONV1_CHANNELS],
            conv2_w: sample(CONV2_CHANNELS * CONV1_CHANNELS * 9, CONV1_CHANNELS * 9),
            conv2_b: vec![0.0; CONV2_CHANNELS],
            dense_w: sample(shape.classes * shape.dense_inputs(), shape.dense_inputs()),
            dense_b: vec![0.0; shape.classes],
            shape,
        }
    }

    pub fn zeros(shape: ModelShape) -> Self {
        ModelParams {
            conv1_w: vec![0.0; CONV1_CHANNELS * shape.channels * 9],
            conv1_b: vec![0.0; CONV1_CHANNELS],
            conv2_w: vec![0.0; CONV2_CHANNELS * CONV1_CHANNELS * 9],
            conv2_b: vec![0.0; CONV2_CHANNELS],
            dense_w: vec![0.0; shape.classes * shape.dense_inputs()],
            dense_b: vec![0.0; shape.classes],
            shape,
        }
    }

    fn tensors(&self) -> [(&'static str, Vec<usize>, &[f64]); 6] {
        let s = &self.shape;
        [
            (
                "conv1.weight",
                vec![CONV1_CHANNELS, s.channels, 3, 3],
                &self.conv1_w,
            ),
            ("conv1.bias", vec![CONV1_CHANNELS], &self.conv1_b),
            (
                "conv2.weight",
                vec![CONV2_CHANNELS, CONV1_CHANNELS, 3, 3],
                &self.conv2_w,
            ),
            ("conv2.bias", vec![CONV2_CHANNELS], &self.conv2_b),
            (
                "dense.weight",
                vec![s.classes, s.dense_inputs()],
                &self.dense_w,
            ),
            ("dense.bias", vec![s.classes], &self.dense_b),
        ]
    }
}

/// Gradient mirror of [`ModelParams`] plus per-sample input gradients
/// in planar [C][H][W] layout.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub conv1_w: Vec<f64>,
    pub conv1_b: Vec<f64>,
    pub conv2_w: Vec<f64>,
    pub conv2_b: Vec<f64>,
    pub dense_w: Vec<f64>,
    pub dense_b: Vec<f64>,
    pub input_grads: Vec<Vec<f64>>,
}

impl Gradients {
    /// All-zero gradients shaped for the given parameters.
    pub fn empty_like(params: &ModelParams) -> Self {
        Self::zeros(params)
    }

    fn zeros(params: &ModelParams) -> Self {
        Gradients {
            conv1_w: vec![0.0; params.conv1_w.len()],
            conv1_b: vec![0.0; params.conv1_b.len()],
            conv2_w: vec![0.0; params.conv2_w.len()],
            conv2_b: vec![0.0; params.conv2_b.len()],
            dense_w: vec![0.0; params.dense_w.len()],
            dense_b: vec![0.0; params.dense_b.len()],
            input_grads: Vec::new(),
        }
    }

    /// Adds another gradient set, elementwise, leaving input grads
    /// untouched (they are per-stream, not additive across streams).
    pub fn accumulate(&mut self, other: &Gradients) {
        let pairs: [(&mut Vec<f64>, &Vec<f64>); 6] = [
            (&mut self.conv1_w, &other.conv1_w),
            (&mut self.conv1_b, &other.conv1_b),
            (&mut self.conv2_w, &other.conv2_w),
            (&mut self.conv2_b, &other.conv2_b),
            (&mut self.dense_w, &other.dense_w),
            (&mut self.dense_b, &other.dense_b),
        ];
        for (dst, src) in pairs {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
    }
}

/// A uniform-shape set of images with class labels.
#[derive(Debug, Clone)]
pub struct Batch {
    pub images: Vec<Image>,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn new(images: Vec<Image>, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} images vs {} labels",
                images.len(),
                labels.len()
            )));
        }
        if let Some(first) = images.first() {
            if !images.iter().all(|img| img.same_shape(first)) {
                return Err(Error::ShapeMismatch("batch images differ in shape".into()));
            }
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::LabelOutOfRange { label, classes });
        }
        Ok(Batch { images, labels })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

fn check_input(params: &ModelParams, image: &Image) -> Result<()> {
    let s = &params.shape;
    if image.height() != s.height || image.width() != s.width || image.channels() != s.channels {
        return Err(Error::ShapeMismatch(format!(
            "input {}x{}x{} vs model {}x{}x{}",
            image.height(),
            image.width(),
            image.channels(),
            s.height,
            s.width,
            s.channels
        )));
    }
    Ok(())
}

/// Intermediate activations of one sample, kept for the backward pass.
struct ForwardStash {
    x: Vec<f64>,
    z1: Vec<f64>,
    p1: Vec<f64>,
    z2: Vec<f64>,
    flat: Vec<f64>,
    logits: Vec<f64>,
}

fn forward_single(params: &ModelParams, image: &Image) -> ForwardStash {
    let s = &params.shape;
    let (h, w) = (s.height, s.width);
    let x = to_planar(image);
    let mut z1 = conv3x3_forward(&x, &params.conv1_w, s.channels, CONV1_CHANNELS, h, w);
    for c in 0..CONV1_CHANNELS {
        let b = params.conv1_b[c];
        for v in &mut z1[c * h * w..(c + 1) * h * w] {
            *v += b;
        }
    }
    let a1 = leaky_forward(&z1, LEAKY_SLOPE);
    let p1 = avgpool2_forward(&a1, CONV1_CHANNELS, h, w);
    let (h2, w2) = (h / 2, w / 2);
    let mut z2 = conv3x3_forward(&p1, &params.conv2_w, CONV1_CHANNELS, CONV2_CHANNELS, h2, w2);
    for c in 0..CONV2_CHANNELS {
        let b = params.conv2_b[c];
        for v in &mut z2[c * h2 * w2..(c + 1) * h2 * w2] {
            *v += b;
        }
    }
    let a2 = leaky_forward(&z2, LEAKY_SLOPE);
    let flat = avgpool2_forward(&a2, CONV2_CHANNELS, h2, w2);
    let m = s.dense_inputs();
    let logits = (0..s.classes)
        .map(|k| {
            params.dense_b[k]
                + params.dense_w[k * m..(k + 1) * m]
                    .iter()
                    .zip(&flat)
                    .map(|(w, f)| w * f)
                    .sum::<f64>()
        })
        .collect();
    ForwardStash {
        x,
        z1,
        p1,
        z2,
        flat,
        logits,
    }
}

/// Mean cross-entropy of the batch together with the smallest
/// pre-activation magnitude encountered in either activation layer.
/// Gradient-verification harnesses use the latter to exclude
/// evaluation points sitting on a leaky-ReLU kink.
pub fn batch_loss_and_min_preactivation(params: &ModelParams, batch: &Batch) -> Result<(f64, f64)> {
    if batch.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut loss = 0.0;
    let mut min_abs = f64::INFINITY;
    for (img, &label) in batch.images.iter().zip(&batch.labels) {
        check_input(params, img)?;
        let stash = forward_single(params, img);
        loss += single_ce(&stash.logits, label) / batch.len() as f64;
        for z in stash.z1.iter().chain(&stash.z2) {
            min_abs = min_abs.min(z.abs());
        }
    }
    Ok((loss, min_abs))
}

/// Logits for every sample in the batch, one row per sample.
pub fn forward(params: &ModelParams, batch: &Batch) -> Result<Vec<Vec<f64>>> {
    batch
        .images
        .iter()
        .map(|img| {
            check_input(params, img)?;
            Ok(forward_single(params, img).logits)
        })
        .collect()
}

/// Mean cross-entropy over the batch, computed with max subtraction.
pub fn cross_entropy(logits: &[Vec<f64>], labels: &[usize]) -> f64 {
    assert_eq!(logits.len(), labels.len());
    let total: f64 = logits
        .iter()
        .zip(labels)
        .map(|(row, &y)| {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            lse - row[y]
        })
        .sum();
    total / logits.len() as f64
}

/// Softmax minus one-hot: the gradient of cross-entropy in the logits.
fn logit_gradient(logits: &[f64], label: usize) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.iter()
        .enumerate()
        .map(|(k, e)| e / z - f64::from(u8::from(k == label)))
        .collect()
}

fn backward_single(
    params: &ModelParams,
    stash: &ForwardStash,
    label: usize,
    scale: f64,
    grads: &mut Gradients,
) -> Vec<f64> {
    let s = &params.shape;
    let (h, w) = (s.height, s.width);
    let (h2, w2) = (h / 2, w / 2);
    let m = s.dense_inputs();

    let dlogits: Vec<f64> = logit_gradient(&stash.logits, label)
        .into_iter()
        .map(|g| g * scale)
        .collect();

    let mut dflat = vec![0.0; m];
    for k in 0..s.classes {
        let g = dlogits[k];
        grads.dense_b[k] += g;
        let row = &mut grads.dense_w[k * m..(k + 1) * m];
        for i in 0..m {
            row[i] += g * stash.flat[i];
            dflat[i] += g * params.dense_w[k * m + i];
        }
    }

    let da2 = avgpool2_backward(&dflat, CONV2_CHANNELS, h2, w2);
    let dz2 = leaky_backward(&stash.z2, &da2, LEAKY_SLOPE);
    for c in 0..CONV2_CHANNELS {
        grads.conv2_b[c] += dz2[c * h2 * w2..(c + 1) * h2 * w2].iter().sum::<f64>();
    }
    let (dp1, dw2) = conv3x3_backward(
        &stash.p1,
        &params.conv2_w,
        &dz2,
        CONV1_CHANNELS,
        CONV2_CHANNELS,
        h2,
        w2,
    );
    for (d, g) in grads.conv2_w.iter_mut().zip(&dw2) {
        *d += g;
    }

    let da1 = avgpool2_backward(&dp1, CONV1_CHANNELS, h, w);
    let dz1 = leaky_backward(&stash.z1, &da1, LEAKY_SLOPE);
    for c in 0..CONV1_CHANNELS {
        grads.conv1_b[c] += dz1[c * h * w..(c + 1) * h * w].iter().sum::<f64>();
    }
    let (dx, dw1) = conv3x3_backward(
        &stash.x,
        &params.conv1_w,
        &dz1,
        s.channels,
        CONV1_CHANNELS,
        h,
        w,
    );
    for (d, g) in grads.conv1_w.iter_mut().zip(&dw1) {
        *d += g;
    }
    dx
}

/// Mean cross-entropy over the batch and its exact gradients with
/// respect to every parameter tensor and every input image.
pub fn backward(params: &ModelParams, batch: &Batch) -> Result<(f64, Gradients)> {
    if batch.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut grads = Gradients::zeros(params);
    let scale = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    for (img, &label) in batch.images.iter().zip(&batch.labels) {
        check_input(params, img)?;
        let stash = forward_single(params, img);
        loss += scale * single_ce(&stash.logits, label);
        let dx = backward_single(params, &stash, label, scale, &mut grads);
        grads.input_grads.push(dx);
    }
    Ok((loss, grads))
}

fn single_ce(logits: &[f64], label: usize) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    lse - logits[label]
}

/// Gradient of the cross-entropy at `label` with respect to the input
/// pixels of a single image. Parameter gradients are skipped.
pub fn input_gradient(params: &ModelParams, image: &Image, label: usize) -> Result<Image> {
    check_input(params, image)?;
    if label >= params.shape.classes {
        return Err(Error::LabelOutOfRange {
            label,
            classes: params.shape.classes,
        });
    }
    let s = &params.shape;
    let (h, w) = (s.height, s.width);
    let (h2, w2) = (h / 2, w / 2);
    let m = s.dense_inputs();
    let stash = forward_single(params, image);
    let dlogits = logit_gradient(&stash.logits, label);

    let mut dflat = vec![0.0; m];
    for k in 0..s.classes {
        let g = dlogits[k];
        for i in 0..m {
            dflat[i] += g * params.dense_w[k * m + i];
        }
    }
    let da2 = avgpool2_backward(&dflat, CONV2_CHANNELS, h2, w2);
    let dz2 = leaky_backward(&stash.z2, &da2, LEAKY_SLOPE);
    let dp1 = conv3x3_backward_input(
        &params.conv2_w,
        &dz2,
        CONV1_CHANNELS,
        CONV2_CHANNELS,
        h2,
        w2,
    );
    let da1 = avgpool2_backward(&dp1, CONV1_CHANNELS, h, w);
    let dz1 = leaky_backward(&stash.z1, &da1, LEAKY_SLOPE);
    let dx = conv3x3_backward_input(&params.conv1_w, &dz1, s.channels, CONV1_CHANNELS, h, w);
    Ok(from_planar(&dx, h, w, s.channels))
}

/// Plain gradient step: theta <- theta - lr * g.
pub fn sgd_update(params: &ModelParams, grads: &Gradients, lr: f64) -> ModelParams {
    let step =
        |p: &[f64], g: &[f64]| -> Vec<f64> { p.iter().zip(g).map(|(p, g)| p - lr * g).collect() };
    ModelParams {
        shape: params.shape,
        conv1_w: step(&params.conv1_w, &grads.conv1_w),
        conv1_b: step(&params.conv1_b, &grads.conv1_b),
        conv2_w: step(&params.conv2_w, &grads.conv2_w),
        conv2_b: step(&params.conv2_b, &grads.conv2_b),
        dense_w: step(&params.dense_w, &grads.dense_w),
        dense_b: step(&params.dense_b, &grads.dense_b),
    }
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"SPK1";

/// Serializes parameters as the "SPK1" container: magic, tensor count,
/// then per tensor (name, dims, row-major f64 little-endian values).
/// A leading `input.shape` tensor records (channels, height, width,
/// classes) so the model reconstructs without external metadata.
pub fn write_checkpoint(params: &ModelParams) -> Vec<u8> {
    let s = &params.shape;
    let meta = [
        s.channels as f64,
        s.height as f64,
        s.width as f64,
        s.classes as f64,
    ];
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    let tensors = params.tensors();
    out.extend_from_slice(&(1 + tensors.len() as u32).to_le_bytes());
    write_tensor(&mut out, "input.shape", &[4], &meta);
    for (name, dims, values) in tensors {
        write_tensor(&mut out, name, &dims, values);
    }
    out
}

fn write_tensor(out: &mut Vec<u8>, name: &str, dims: &[usize], values: &[f64]) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.extend_from_slice(&(values.len() as u64).to_le_bytes());
    for &v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<ModelParams> {
    let mut cursor = 0usize;
    let magic = read_exact(bytes, &mut cursor, 4)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let count = read_u32(bytes, &mut cursor)? as usize;
    let mut tensors: Vec<(String, Vec<usize>, Vec<f64>)> = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = read_u32(bytes, &mut cursor)? as usize;
        let name = String::from_utf8(read_exact(bytes, &mut cursor, name_len)?.to_vec())
            .map_err(|_| Error::Checkpoint("non-UTF8 tensor name".into()))?;
        let ndim = read_u32(bytes, &mut cursor)? as usize;
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(read_u32(bytes, &mut cursor)? as usize);
        }
        let n = u64::from_le_bytes(
            read_exact(bytes, &mut cursor, 8)?
                .try_into()
                .expect("8 bytes"),
        ) as usize;
        if n != dims.iter().product::<usize>() {
            return Err(Error::Checkpoint(format!(
                "tensor {name}: count {n} does not match dims {dims:?}"
            )));
        }
        let raw = read_exact(bytes, &mut cursor, 8 * n)?;
        let values = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        tensors.push((name, dims, values));
    }
    if cursor != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }

    let take = |name: &str| -> Result<(Vec<usize>, Vec<f64>)> {
        tensors
            .iter()
            .find(|(n, _, _)| n == name)
            .map(|(_, d, v)| (d.clone(), v.clone()))
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))
    };
    let (_, meta) = take("input.shape")?;
    if meta.len() != 4 {
        return Err(Error::Checkpoint("input.shape must hold 4 values".into()));
    }
    let shape = ModelShape::new(
        meta[0] as usize,
        meta[1] as usize,
        meta[2] as usize,
        meta[3] as usize,
    )?;
    let expect = ModelParams::zeros(shape);
    let grab = |name: &str, want_len: usize| -> Result<Vec<f64>> {
        let (_, v) = take(name)?;
        if v.len() != want_len {
            return Err(Error::Checkpoint(format!(
                "tensor {name}: got {} values, want {want_len}",
                v.len()
            )));
        }
        Ok(v)
    };
    Ok(ModelParams {
        conv1_w: grab("conv1.weight", expect.conv1_w.len())?,
        conv1_b: grab("conv1.bias", expect.conv1_b.len())?,
        conv2_w: grab("conv2.weight", expect.conv2_w.len())?,
        conv2_b: grab("conv2.bias", expect.conv2_b.len())?,
        dense_w: grab("dense.weight", expect.dense_w.len())?,
        dense_b: grab("dense.bias", expect.dense_b.len())?,
        shape,
    })
}

fn read_exact<'a>(bytes: &'a [u8], cursor: &mut usize, n: usize) -> Result<&'a [u8]> {
    let slice = bytes
        .get(*cursor..*cursor + n)
        .ok_or_else(|| Error::Checkpoint("truncated".into()))?;
    *cursor += n;
    Ok(slice)
}

fn read_u32(bytes: &[u8], cursor: &mut usize) -> Result<u32> {
    Ok(u32::from_le_bytes(
        read_exact(bytes, cursor, 4)?.try_into().expect("4 bytes"),
    ))
}
