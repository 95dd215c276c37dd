//! Shape encoding: from a raw image to a refined foreground mask, a
//! normalized signed distance field, and a shape-fused image.
//!
//! The stages compose as
//! grayscale -> Gaussian blur -> Otsu threshold -> binarize ->
//! foreground refinement -> signed distance field -> normalization,
//! with `fuse` applying the field back onto an image.

use crate::edt::euclidean_distance_transform;
use crate::error::{Error, Result};
use crate::instrument;
use crate::tensor::{to_grayscale, BinaryMask, Image, LabelMap, ScalarField};

/// Parameters of the shape encoding stage.
#[derive(Debug, Clone, PartialEq)]
pub struct SemConfig {
    /// Gaussian smoothing standard deviation, in pixels.
    pub sigma: f64,
    /// Foreground-fraction threshold above which the mask is inverted.
    pub tau: f64,
    /// Merge margin in pixels: components this close to the principal
    /// component's boundary are absorbed into it.
    pub delta: u32,
    /// Fusion strength applied by [`fuse`].
    pub beta: f64,
}

impl SemConfig {
    /// Defaults scaled to the image side: sigma 2.0 at a 512-pixel
    /// reference scale (floor 0.5), delta 1% of the longer side
    /// (floor 2), tau 0.5, beta 0.5.
    pub fn default_for(height: usize, width: usize) -> Self {
        let side = height.max(width) as f64;
        SemConfig {
            sigma: (2.0 * side / 512.0).max(0.5),
            tau: 0.5,
            delta: ((0.01 * side).round() as u32).max(2),
            beta: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) {
            return Err(Error::Config(format!(
                "sigma must be > 0, got {}",
                self.sigma
            )));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::Config(format!(
                "tau must be in (0,1), got {}",
                self.tau
            )));
        }
        if self.delta < 1 {
            return Err(Error::Config("delta must be >= 1".into()));
        }
        if self.beta < 0.0 {
            return Err(Error::Config(format!(
                "beta must be >= 0, got {}",
                self.beta
            )));
        }
        Ok(())
    }
}

/// Geometric score of one connected component: area times squared mean
/// interior distance. Larger favors big, thick blobs over thin debris.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentScore {
    pub label: u32,
    pub area: usize,
    pub mean_inner_distance: f64,
    pub score: f64,
}

impl ComponentScore {
    pub fn new(label: u32, area: usize, mean_inner_distance: f64) -> Self {
        ComponentScore {
            label,
            area,
            mean_inner_distance,
            score: area as f64 * mean_inner_distance * mean_inner_distance,
        }
    }
}

/// Separable Gaussian blur with a kernel truncated at radius
/// ceil(3 sigma) and edge-replicated borders.
pub fn gaussian_blur(field: &ScalarField, sigma: f64) -> ScalarField {
    assert!(sigma > 0.0, "sigma must be positive");
    let radius = (3.0 * sigma).ceil() as i64;
    let mut kernel = Vec::with_capacity((2 * radius + 1) as usize);
    for t in -radius..=radius {
        kernel.push((-((t * t) as f64) / (2.0 * sigma * sigma)).exp());
    }
    let total: f64 = kernel.iter().sum();
    for k in &mut kernel {
        *k /= total;
    }

    let (h, w) = (field.height(), field.width());
    // Horizontal pass.
    let mut tmp = vec![0.0f64; h * w];
    for i in 0..h {
        for j in 0..w {
            let mut acc = 0.0;
            for (ki, t) in (-radius..=radius).enumerate() {
                let jj = (j as i64 + t).clamp(0, w as i64 - 1) as usize;
                acc += kernel[ki] * field.get(i, jj);
            }
            tmp[i * w + j] = acc;
        }
    }
    // Vertical pass.
    let mut out = vec![0.0f64; h * w];
    for i in 0..h {
        for j in 0..w {
            let mut acc = 0.0;
            for (ki, t) in (-radius..=radius).enumerate() {
                let ii = (i as i64 + t).clamp(0, h as i64 - 1) as usize;
                acc += kernel[ki] * tmp[ii * w + j];
            }
            out[i * w + j] = acc;
        }
    }
    ScalarField::new(h, w, out).expect("blur preserves shape and finiteness")
}

const OTSU_BINS: usize = 256;

#[inline]
fn otsu_bin(v: f64) -> usize {
    ((v * OTSU_BINS as f64) as usize).min(OTSU_BINS - 1)
}

/// Otsu's threshold over a fixed 256-bin histogram of [0, 1].
///
/// Returns the bin-center threshold maximizing between-class variance;
/// exact ties resolve to the lowest threshold. Errors when every value
/// falls into a single bin (no two classes to separate).
pub fn otsu_threshold(field: &ScalarField) -> Result<f64> {
    let mut counts = [0usize; OTSU_BINS];
    for &v in field.data() {
        counts[otsu_bin(v)] += 1;
    }
    let n = field.data().len() as f64;

    // Prefix statistics over bin centers.
    let mut best: Option<(f64, usize)> = None;
    let mut w0 = 0.0f64;
    let mut sum0 = 0.0f64;
    let total_sum: f64 = counts
        .iter()
        .enumerate()
        .map(|(i, &c)| c as f64 * bin_center(i))
        .sum();
    for split in 0..OTSU_BINS - 1 {
        w0 += counts[split] as f64;
        sum0 += counts[split] as f64 * bin_center(split);
        let w1 = n - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let mu0 = sum0 / w0;
        let mu1 = (total_sum - sum0) / w1;
        let variance = (w0 / n) * (w1 / n) * (mu0 - mu1) * (mu0 - mu1);
        if best.map_or(true, |(v, _)| variance > v) {
            best = Some((variance, split));
        }
    }
    best.map(|(_, split)| bin_center(split))
        .ok_or(Error::DegenerateHistogram)
}

#[inline]
fn bin_center(bin: usize) -> f64 {
    (bin as f64 + 0.5) / OTSU_BINS as f64
}

/// Pixel = 1 iff value > t.
pub fn binarize(field: &ScalarField, t: f64) -> BinaryMask {
    let data = field.data().iter().map(|&v| u8::from(v > t)).collect();
    BinaryMask::new(field.height(), field.width(), data).expect("binarize preserves shape")
}

/// 8-connected foreground labeling; labels are assigned in raster-scan
/// first-touch order starting at 1.
pub fn connected_components(mask: &BinaryMask) -> LabelMap {
    let (h, w) = (mask.height(), mask.width());
    let mut labels = vec![0u32; h * w];
    let mut next_label = 0u32;
    let mut stack = Vec::new();
    for start in 0..h * w {
        if mask.data()[start] == 0 || labels[start] != 0 {
            continue;
        }
        next_label += 1;
        labels[start] = next_label;
        stack.push(start);
        while let Some(idx) = stack.pop() {
            let (i, j) = (idx / w, idx % w);
            for di in -1i64..=1 {
                for dj in -1i64..=1 {
                    if di == 0 && dj == 0 {
                        continue;
                    }
                    let (ni, nj) = (i as i64 + di, j as i64 + dj);
                    if ni < 0 || nj < 0 || ni >= h as i64 || nj >= w as i64 {
                        continue;
                    }
                    let nidx = ni as usize * w + nj as usize;
                    if mask.data()[nidx] == 1 && labels[nidx] == 0 {
                        labels[nidx] = next_label;
                        stack.push(nidx);
                    }
                }
            }
        }
    }
    LabelMap {
        height: h,
        width: w,
        labels,
        component_count: next_label as usize,
    }
}

/// Signed distance field of a two-class mask: interior distance minus
/// exterior distance, so foreground pixels are strictly positive and
/// background pixels strictly negative.
pub fn compute_sdf(mask: &BinaryMask) -> Result<ScalarField> {
    let has_fg = mask.data().iter().any(|&v| v == 1);
    let has_bg = mask.data().iter().any(|&v| v == 0);
    if !has_fg {
        return Err(Error::SingleClassMask("foreground"));
    }
    if !has_bg {
        return Err(Error::SingleClassMask("background"));
    }
    // inner: distance to nearest background pixel (nonzero on foreground);
    // outer: distance to nearest foreground pixel (nonzero on background).
    let inner = euclidean_distance_transform(mask)?;
    let outer = euclidean_distance_transform(&mask.inverted())?;
    let data = inner
        .data()
        .iter()
        .zip(outer.data())
        .map(|(a, b)| a - b)
        .collect();
    ScalarField::new(mask.height(), mask.width(), data)
}

/// Scales a field by 1/max|v| so the output spans [-1, 1] with at
/// least one entry of magnitude one. Signs and zeros are preserved.
pub fn normalize_sdf(field: &ScalarField) -> Result<ScalarField> {
    let max_abs = field.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if max_abs == 0.0 {
        return Err(Error::ZeroField);
    }
    let data = field.data().iter().map(|v| v / max_abs).collect();
    ScalarField::new(field.height(), field.width(), data)
}

/// Shape-guided fusion: out = image * (1 + beta * sdf), the field
/// broadcast across channels. No clipping is applied; outputs may
/// exceed [0, 1].
pub fn fuse(image: &Image, sdf: &ScalarField, beta: f64) -> Result<Image> {
    if image.height() != sdf.height() || image.width() != sdf.width() {
        return Err(Error::ShapeMismatch(format!(
            "image {}x{} vs field {}x{}",
            image.height(),
            image.width(),
            sdf.height(),
            sdf.width()
        )));
    }
    let c = image.channels();
    let mut data = Vec::with_capacity(image.data().len());
    for (pixel, &s) in image.data().chunks_exact(c).zip(sdf.data()) {
        let gain = 1.0 + beta * s;
        data.extend(pixel.iter().map(|&v| v * gain));
    }
    image.with_data(data)
}

/// Foreground consistency refinement.
///
/// 1. Invert the mask when foreground covers more than `tau` of the
///    image (dark-object-on-light-background correction).
/// 2. Label 8-connected components and keep the one maximizing
///    area * (mean interior distance)^2.
/// 3. Absorb any other component whose minimum distance to the kept
///    component is at most `delta` pixels.
/// 4. Fill holes: background not 4-connected to the image border
///    becomes foreground.
pub fn refine_mask(mask: &BinaryMask, cfg: &SemConfig) -> Result<BinaryMask> {
    let mask = if mask.foreground_fraction() > cfg.tau {
        mask.inverted()
    } else {
        mask.clone()
    };
    if mask.data().iter().all(|&v| v == 0) {
        return Err(Error::EmptyForeground);
    }

    let (labels, scores) = component_scores(&mask)?;
    let selected = scores
        .iter()
        .max_by(|a, b| {
            a.score
                .partial_cmp(&b.score)
                .unwrap()
                // Ties resolve to the lowest label, i.e. first touched.
                .then(b.label.cmp(&a.label))
        })
        .expect("at least one component")
        .label;

    let (h, w) = (mask.height(), mask.width());
    // Distance-to-selected-component field: zero set = selected pixels.
    let seed_data: Vec<u8> = labels
        .labels
        .iter()
        .map(|&l| u8::from(l != selected))
        .collect();
    let dist_to_selected = euclidean_distance_transform(&BinaryMask::new(h, w, seed_data)?)?;

    let mut min_dist = vec![f64::INFINITY; labels.component_count + 1];
    for (idx, &l) in labels.labels.iter().enumerate() {
        if l != 0 {
            let d = dist_to_selected.data()[idx];
            if d < min_dist[l as usize] {
                min_dist[l as usize] = d;
            }
        }
    }
    let keep: Vec<bool> = (0..=labels.component_count)
        .map(|l| l != 0 && (l as u32 == selected || min_dist[l] <= cfg.delta as f64))
        .collect();

    let mut data: Vec<u8> = labels
        .labels
        .iter()
        .map(|&l| u8::from(keep[l as usize]))
        .collect();

    fill_holes(&mut data, h, w);
    BinaryMask::new(h, w, data)
}

/// Marks background pixels unreachable from the border (4-connected
/// flood over background) as foreground.
fn fill_holes(data: &mut [u8], h: usize, w: usize) {
    let mut reached = vec![false; h * w];
    let mut queue = std::collections::VecDeque::new();
    for j in 0..w {
        for i in [0, h - 1] {
            let idx = i * w + j;
            if data[idx] == 0 && !reached[idx] {
                reached[idx] = true;
                queue.push_back(idx);
            }
        }
    }
    for i in 0..h {
        for j in [0, w - 1] {
            let idx = i * w + j;
            if data[idx] == 0 && !reached[idx] {
                reached[idx] = true;
                queue.push_back(idx);
            }
        }
    }
    while let Some(idx) = queue.pop_front() {
        let (i, j) = (idx / w, idx % w);
        let mut visit = |ni: usize, nj: usize| {
            let nidx = ni * w + nj;
            if data[nidx] == 0 && !reached[nidx] {
                reached[nidx] = true;
                queue.push_back(nidx);
            }
        };
        if i > 0 {
            visit(i - 1, j);
        }
        if i + 1 < h {
            visit(i + 1, j);
        }
        if j > 0 {
            visit(i, j - 1);
        }
        if j + 1 < w {
            visit(i, j + 1);
        }
    }
    for (v, &r) in data.iter_mut().zip(&reached) {
        if *v == 0 && !r {
            *v = 1;
        }
    }
}

/// Labels the mask and scores every component. The interior distance
/// is taken from the full-mask distance transform, which coincides
/// with the per-component transform because components are separated
/// by background.
pub fn component_scores(mask: &BinaryMask) -> Result<(LabelMap, Vec<ComponentScore>)> {
    let labels = connected_components(mask);
    if labels.component_count == 0 {
        return Err(Error::EmptyForeground);
    }
    let inner = euclidean_distance_transform(mask)?;
    let mut area = vec![0usize; labels.component_count + 1];
    let mut dist_sum = vec![0.0f64; labels.component_count + 1];
    for (idx, &l) in labels.labels.iter().enumerate() {
        if l != 0 {
            area[l as usize] += 1;
            dist_sum[l as usize] += inner.data()[idx];
        }
    }
    let scores = (1..=labels.component_count)
        .map(|l| ComponentScore::new(l as u32, area[l], dist_sum[l] / area[l] as f64))
        .collect();
    Ok((labels, scores))
}

/// Full shape-encoding pass: returns the refined mask and the
/// normalized signed distance field.
pub fn sem_pipeline(image: &Image, cfg: &SemConfig) -> Result<(BinaryMask, ScalarField)> {
    instrument::record_sem_pipeline_call();
    let gray = to_grayscale(image)?;
    let blurred = gaussian_blur(&gray, cfg.sigma);
    let threshold = otsu_threshold(&blurred)?;
    let mask = binarize(&blurred, threshold);
    let refined = refine_mask(&mask, cfg)?;
    let sdf = compute_sdf(&refined)?;
    let normalized = normalize_sdf(&sdf)?;
    Ok((refined, normalized))
}
