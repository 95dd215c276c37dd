//! Exact Euclidean distance transform.
//!
//! Two-pass algorithm of Felzenszwalb & Huttenlocher ("Distance
//! Transforms of Sampled Functions"): a 1-D squared-distance transform
//! runs down every column, then across every row using the lower
//! envelope of parabolas. The result is exact (all intermediate values
//! are integers represented exactly in f64), unlike chamfer
//! approximations.

use crate::error::{Error, Result};
use crate::tensor::{BinaryMask, ScalarField};

/// Distance from every pixel to the nearest zero pixel of the mask,
/// measured between pixel centers. Zero pixels map to 0.
pub fn euclidean_distance_transform(mask: &BinaryMask) -> Result<ScalarField> {
    if mask.data().iter().all(|&v| v == 1) {
        return Err(Error::SingleClassMask("zero"));
    }
    let (h, w) = (mask.height(), mask.width());
    let mut grid = vec![0.0f64; h * w];
    for (g, &m) in grid.iter_mut().zip(mask.data()) {
        *g = if m == 0 { 0.0 } else { f64::INFINITY };
    }

    // Column pass.
    let mut scratch = DtScratch::new(h.max(w));
    let mut line = vec![0.0f64; h];
    let mut out_line = vec![0.0f64; h];
    for col in 0..w {
        for row in 0..h {
            line[row] = grid[row * w + col];
        }
        dt1d(&line[..h], &mut out_line[..h], &mut scratch);
        for row in 0..h {
            grid[row * w + col] = out_line[row];
        }
    }

    // Row pass.
    let mut row_out = vec![0.0f64; w];
    for row in 0..h {
        let src = grid[row * w..(row + 1) * w].to_vec();
        dt1d(&src, &mut row_out[..w], &mut scratch);
        grid[row * w..(row + 1) * w].copy_from_slice(&row_out[..w]);
    }

    for v in &mut grid {
        *v = v.sqrt();
    }
    ScalarField::new(h, w, grid)
}

struct DtScratch {
    // Parabola centers in the lower envelope and the abscissae where
    // the minimizing parabola changes.
    centers: Vec<usize>,
    boundaries: Vec<f64>,
}

impl DtScratch {
    fn new(n: usize) -> Self {
        DtScratch {
            centers: vec![0; n],
            boundaries: vec![0.0; n + 1],
        }
    }
}

/// 1-D squared-distance transform of a sampled function:
/// out[q] = min_p ( (q - p)^2 + f[p] ). Entries of f may be +inf.
fn dt1d(f: &[f64], out: &mut [f64], scratch: &mut DtScratch) {
    let n = f.len();
    let centers = &mut scratch.centers[..n];
    let boundaries = &mut scratch.boundaries[..n + 1];

    let mut k = 0usize;
    centers[0] = 0;
    boundaries[0] = f64::NEG_INFINITY;
    boundaries[1] = f64::INFINITY;

    let intersect = |p: usize, q: usize| -> f64 {
        // Abscissa where parabolas rooted at p and q cross.
        ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2 * (q - p)) as f64
    };

    for q in 1..n {
        if f[q].is_infinite() {
            continue;
        }
        if f[centers[k]].is_infinite() {
            // The seed parabola carried no source; replace it.
            centers[k] = q;
            boundaries[k] = f64::NEG_INFINITY;
            boundaries[k + 1] = f64::INFINITY;
            continue;
        }
        let mut s = intersect(centers[k], q);
        while s <= boundaries[k] {
            k -= 1;
            s = intersect(centers[k], q);
        }
        k += 1;
        centers[k] = q;
        boundaries[k] = s;
        boundaries[k + 1] = f64::INFINITY;
    }

    if f[centers[0]].is_infinite() {
        // No source anywhere on this line.
        out[..n].fill(f64::INFINITY);
        return;
    }
    let mut k = 0usize;
    for (q, slot) in out.iter_mut().enumerate().take(n) {
        while boundaries[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - centers[k] as f64;
        *slot = d * d + f[centers[k]];
    }
}
