//! Deterministic synthetic shapes dataset.
//!
//! Each sample is one geometric object (disk, square, triangle, or
//! annulus) over a textured background of a sinusoidal grating plus
//! uniform noise, with seeded jitter of position, scale, rotation,
//! polarity, and intensity. The texture tempts a classifier into
//! appearance shortcuts while the label is carried entirely by shape,
//! and every sample ships its ground-truth mask.

use crate::error::{Error, Result};
use crate::nn::Batch;
use crate::rng::{derive_seed, Rng};
use crate::tensor::{BinaryMask, Image};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeClass {
    Disk,
    Square,
    Triangle,
    Annulus,
}

impl ShapeClass {
    pub fn as_str(&self) -> &'static str {
        match self {
            ShapeClass::Disk => "disk",
            ShapeClass::Square => "square",
            ShapeClass::Triangle => "triangle",
            ShapeClass::Annulus => "annulus",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "disk" => Ok(ShapeClass::Disk),
            "square" => Ok(ShapeClass::Square),
            "triangle" => Ok(ShapeClass::Triangle),
            "annulus" => Ok(ShapeClass::Annulus),
            other => Err(Error::Config(format!("unknown shape class '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub n_train: usize,
    pub n_test: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub classes: Vec<ShapeClass>,
    /// Amplitude of the grating-plus-noise background texture, in [0, 1].
    pub texture_noise: f64,
    /// Amplitude of per-sample base intensity jitter, in [0, 1].
    pub intensity_jitter: f64,
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            n_train: 256,
            n_test: 128,
            height: 32,
            width: 32,
            channels: 1,
            classes: vec![
                ShapeClass::Disk,
                ShapeClass::Square,
                ShapeClass::Triangle,
                ShapeClass::Annulus,
            ],
            texture_noise: 0.2,
            intensity_jitter: 0.2,
            seed: 0,
        }
    }
}

impl DataConfig {
    pub fn validate(&self) -> Result<()> {
        if self.classes.len() < 2 {
            return Err(Error::InfeasibleData("need at least 2 classes".into()));
        }
        if self.height < 16 || self.width < 16 {
            return Err(Error::InfeasibleData(format!(
                "dimensions must be at least 16, got {}x{}",
                self.height, self.width
            )));
        }
        if self.channels != 1 && self.channels != 3 {
            return Err(Error::UnsupportedChannels(self.channels));
        }
        if self.n_train == 0 || self.n_test == 0 {
            return Err(Error::InfeasibleData("split sizes must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.texture_noise)
            || !(0.0..=1.0).contains(&self.intensity_jitter)
        {
            return Err(Error::InfeasibleData(
                "noise amplitudes must lie in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Sample {
    pub image: Image,
    pub label: usize,
    pub truth_mask: BinaryMask,
}

/// Generates the train and test splits from disjoint seeded streams.
/// Class assignment is round-robin, so per-class counts differ by at
/// most one within each split.
pub fn generate_dataset(cfg: &DataConfig) -> Result<(Vec<Sample>, Vec<Sample>)> {
    cfg.validate()?;
    let train_seed = derive_seed(cfg.seed, 0x7261_696e);
    let test_seed = derive_seed(cfg.seed, 0x7465_7374);
    let train = generate_split(cfg, cfg.n_train, train_seed)?;
    let test = generate_split(cfg, cfg.n_test, test_seed)?;
    Ok((train, test))
}

fn generate_split(cfg: &DataConfig, n: usize, stream_seed: u64) -> Result<Vec<Sample>> {
    (0..n)
        .map(|idx| {
            let label = idx % cfg.classes.len();
            let sample_seed = derive_seed(stream_seed, idx as u64);
            generate_sample(cfg, cfg.classes[label], label, sample_seed)
        })
        .collect()
}

/// Analytic description of one placed shape, in pixel-center
/// coordinates.
struct PlacedShape {
    class: ShapeClass,
    center: (f64, f64),
    size: f64,
    rotation: f64,
}

impl PlacedShape {
    fn contains(&self, y: f64, x: f64) -> bool {
        let (dy, dx) = (y - self.center.0, x - self.center.1);
        match self.class {
            ShapeClass::Disk => dy * dy + dx * dx <= self.size * self.size,
            ShapeClass::Annulus => {
                let r2 = dy * dy + dx * dx;
                let inner = 0.5 * self.size;
                r2 <= self.size * self.size && r2 >= inner * inner
            }
            ShapeClass::Square => {
                let (sin, cos) = self.rotation.sin_cos();
                let u = cos * dx + sin * dy;
                let v = -sin * dx + cos * dy;
                u.abs() <= self.size && v.abs() <= self.size
            }
            ShapeClass::Triangle => {
                // Equilateral triangle of circumradius `size`: inside
                // every edge half-plane.
                let mut vertices = [(0.0f64, 0.0f64); 3];
                for (k, vert) in vertices.iter_mut().enumerate() {
                    let angle = self.rotation + 2.0 * std::f64::consts::PI * k as f64 / 3.0;
                    *vert = (self.size * angle.sin(), self.size * angle.cos());
                }
                for k in 0..3 {
                    let (ay, ax) = vertices[k];
                    let (by, bx) = vertices[(k + 1) % 3];
                    let cross = (bx - ax) * (dy - ay) - (by - ay) * (dx - ax);
                    if cross < 0.0 {
                        return false;
                    }
                }
                true
            }
        }
    }
}

fn generate_sample(cfg: &DataConfig, class: ShapeClass, label: usize, seed: u64) -> Result<Sample> {
    let mut rng = Rng::new(seed);
    let (h, w) = (cfg.height, cfg.width);
    let side = h.min(w) as f64;

    let nominal = match class {
        ShapeClass::Disk => 0.28 * side,
        ShapeClass::Square => 0.24 * side,
        ShapeClass::Triangle => 0.34 * side,
        ShapeClass::Annulus => 0.30 * side,
    };
    let scale = nominal * (1.0 + 0.2 * rng.uniform_in(-1.0, 1.0));
    let center = (
        h as f64 / 2.0 + 0.15 * nominal * rng.uniform_in(-1.0, 1.0),
        w as f64 / 2.0 + 0.15 * nominal * rng.uniform_in(-1.0, 1.0),
    );
    let rotation = match class {
        // Squares stay away from axis alignment so contour-based shape
        // statistics remain orientation-stable.
        ShapeClass::Square => rng.uniform_in(10f64.to_radians(), 80f64.to_radians()),
        ShapeClass::Triangle => rng.uniform_in(0.0, 2.0 * std::f64::consts::PI),
        _ => 0.0,
    };
    let shape = PlacedShape {
        class,
        center,
        size: scale,
        rotation,
    };

    let mut mask = vec![0u8; h * w];
    for i in 0..h {
        for j in 0..w {
            if shape.contains(i as f64 + 0.5, j as f64 + 0.5) {
                mask[i * w + j] = 1;
            }
        }
    }
    let truth_mask = BinaryMask::new(h, w, mask)?;
    let fraction = truth_mask.foreground_fraction();
    if !(0.05..0.6).contains(&fraction) {
        return Err(Error::InfeasibleData(format!(
            "{} sample has foreground fraction {fraction:.3}",
            class.as_str()
        )));
    }

    // Intensity model: contrasting bases with optional polarity flip,
    // then grating + uniform noise scaled by texture_noise.
    let bright_object = rng.uniform() < 0.5;
    let jitter = |rng: &mut Rng| 0.1 * cfg.intensity_jitter * rng.uniform_in(-1.0, 1.0);
    let (mut fg_base, mut bg_base) = (0.75 + jitter(&mut rng), 0.25 + jitter(&mut rng));
    if !bright_object {
        std::mem::swap(&mut fg_base, &mut bg_base);
    }
    let freq_y = rng.uniform_in(0.1, 0.35);
    let freq_x = rng.uniform_in(0.1, 0.35);
    let phase = rng.uniform_in(0.0, 2.0 * std::f64::consts::PI);

    let mut gray = vec![0.0f64; h * w];
    for i in 0..h {
        for j in 0..w {
            let base = if truth_mask.get(i, j) == 1 {
                fg_base
            } else {
                bg_base
            };
            let grating = (2.0 * std::f64::consts::PI * (freq_y * i as f64 + freq_x * j as f64)
                + phase)
                .sin();
            let noise = rng.uniform_in(-1.0, 1.0);
            let v = base + cfg.texture_noise * 0.3 * (0.5 * grating + 0.5 * noise);
            gray[i * w + j] = v.clamp(0.0, 1.0);
        }
    }

    let image = if cfg.channels == 1 {
        Image::new(h, w, 1, gray)?
    } else {
        // Per-sample channel gains exercise luma conversion and
        // broadcast fusion without changing the geometry.
        let gains = [
            rng.uniform_in(0.8, 1.2),
            rng.uniform_in(0.8, 1.2),
            rng.uniform_in(0.8, 1.2),
        ];
        let mut data = Vec::with_capacity(h * w * 3);
        for &v in &gray {
            for g in gains {
                data.push((v * g).clamp(0.0, 1.0));
            }
        }
        Image::new(h, w, 3, data)?
    };

    Ok(Sample {
        image,
        label,
        truth_mask,
    })
}

/// One sample of the given class outside any split, for demos and
/// fixtures. Uses the same placement, texture, and polarity model as
/// the dataset streams.
pub fn generate_single(cfg: &DataConfig, class: ShapeClass, seed: u64) -> Result<Sample> {
    cfg.validate()?;
    let label = cfg
        .classes
        .iter()
        .position(|c| *c == class)
        .unwrap_or_default();
    generate_sample(cfg, class, label, seed)
}

/// Splits the dataset into batches after a seeded shuffle; the final
/// short batch is included, so every sample appears exactly once.
pub fn iter_batches(samples: &[Sample], batch_size: usize, epoch_seed: u64) -> Result<Vec<Batch>> {
    let order = shuffled_indices(samples.len(), epoch_seed);
    let classes = samples.iter().map(|s| s.label).max().unwrap_or(0) + 1;
    order
        .chunks(batch_size.max(1))
        .map(|chunk| {
            let images = chunk.iter().map(|&i| samples[i].image.clone()).collect();
            let labels = chunk.iter().map(|&i| samples[i].label).collect();
            Batch::new(images, labels, classes)
        })
        .collect()
}

/// Seeded permutation of 0..n; shared by batch iteration and the
/// training loop's cache-aware indexing.
pub fn shuffled_indices(n: usize, epoch_seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    Rng::new(epoch_seed).shuffle(&mut order);
    order
}

/// Isoperimetric ratio 4*pi*A / P^2 of a mask's dominant object, with
/// the perimeter measured by tracing the outer contour (axial steps 1,
/// diagonal steps sqrt(2)). A disk scores near 1, elongated or angular
/// shapes lower.
pub fn isoperimetric_ratio(mask: &BinaryMask) -> f64 {
    let area: usize = mask.data().iter().map(|&v| v as usize).sum();
    if area == 0 {
        return 0.0;
    }
    // The trace runs through pixel centers, half a pixel inside the
    // true boundary; +2 compensates the resulting perimeter deficit
    // for convex objects at these scales.
    let perimeter = trace_perimeter(mask) + 2.0;
    4.0 * std::f64::consts::PI * area as f64 / (perimeter * perimeter)
}

/// Moore-neighbor contour trace of the first (raster-order) object.
fn trace_perimeter(mask: &BinaryMask) -> f64 {
    let (h, w) = (mask.height() as i64, mask.width() as i64);
    let at = |i: i64, j: i64| -> bool {
        i >= 0 && j >= 0 && i < h && j < w && mask.get(i as usize, j as usize) == 1
    };
    let Some(start_idx) = mask.data().iter().position(|&v| v == 1) else {
        return 0.0;
    };
    let start = ((start_idx as i64) / w, (start_idx as i64) % w);
    // Clockwise Moore neighborhood starting west.
    const DIRS: [(i64, i64); 8] = [
        (0, -1),
        (-1, -1),
        (-1, 0),
        (-1, 1),
        (0, 1),
        (1, 1),
        (1, 0),
        (1, -1),
    ];
    let step_len = |d: (i64, i64)| -> f64 {
        if d.0 != 0 && d.1 != 0 {
            std::f64::consts::SQRT_2
        } else {
            1.0
        }
    };
    // The raster-first pixel has no foreground neighbor above or to the
    // upper-left, so scanning from west is a valid backtrack.
    let mut current = start;
    let mut backtrack_dir = 0usize;
    let mut perimeter = 0.0;
    let mut first_move: Option<(usize, (i64, i64))> = None;
    loop {
        let mut found = None;
        for k in 0..8 {
            let dir = (backtrack_dir + 1 + k) % 8;
            let (di, dj) = DIRS[dir];
            let next = (current.0 + di, current.1 + dj);
            if at(next.0, next.1) {
                found = Some((dir, next));
                break;
            }
        }
        let Some((dir, next)) = found else {
            // Isolated pixel: unit square boundary.
            return 4.0;
        };
        perimeter += step_len(DIRS[dir]);
        // Jacob's stopping criterion: back at the start entering the
        // same way the walk began.
        match first_move {
            None => first_move = Some((dir, next)),
            Some((first_dir, first_next)) => {
                if current == start && dir == first_dir && next == first_next {
                    break;
                }
            }
        }
        current = next;
        // New backtrack: the direction pointing back toward the
        // previous pixel, offset so the clockwise scan resumes there.
        backtrack_dir = (dir + 4) % 8;
        if perimeter > 8.0 * (h + w) as f64 {
            break;
        }
    }
    perimeter
}
