//! Alternative shape encoders: Canny edges, boundary contours, and a
//! thinning skeleton. Each produces a binary {0,1} scalar field and
//! exists as a drop-in comparison point for the signed distance field.

use crate::sem::otsu_threshold;
use crate::tensor::{to_grayscale, BinaryMask, Image, ScalarField};

/// Canny-style edge map: Sobel gradient magnitude, non-maximum
/// suppression along the quantized gradient direction, then hysteresis
/// with thresholds (0.5 * otsu, otsu) on the normalized magnitude.
pub fn encode_edge(image: &Image) -> ScalarField {
    let gray = to_grayscale(image).expect("image channels validated at construction");
    let (h, w) = (gray.height(), gray.width());
    let mut gx = vec![0.0f64; h * w];
    let mut gy = vec![0.0f64; h * w];
    let at = |i: i64, j: i64| -> f64 {
        gray.get(
            i.clamp(0, h as i64 - 1) as usize,
            j.clamp(0, w as i64 - 1) as usize,
        )
    };
    for i in 0..h as i64 {
        for j in 0..w as i64 {
            let idx = i as usize * w + j as usize;
            gx[idx] = (at(i - 1, j + 1) + 2.0 * at(i, j + 1) + at(i + 1, j + 1))
                - (at(i - 1, j - 1) + 2.0 * at(i, j - 1) + at(i + 1, j - 1));
            gy[idx] = (at(i + 1, j - 1) + 2.0 * at(i + 1, j) + at(i + 1, j + 1))
                - (at(i - 1, j - 1) + 2.0 * at(i - 1, j) + at(i - 1, j + 1));
        }
    }
    let mut mag: Vec<f64> = gx
        .iter()
        .zip(&gy)
        .map(|(x, y)| (x * x + y * y).sqrt())
        .collect();
    let peak = mag.iter().cloned().fold(0.0f64, f64::max);
    if peak == 0.0 {
        return ScalarField::zeros(h, w);
    }
    for m in &mut mag {
        *m /= peak;
    }
    let mag_field = ScalarField::new(h, w, mag.clone()).expect("magnitude finite");
    let high = match otsu_threshold(&mag_field) {
        Ok(t) => t,
        // One-bin magnitude histogram: no separable edge population.
        Err(_) => return ScalarField::zeros(h, w),
    };
    let low = 0.5 * high;

    // Non-maximum suppression. Ties break toward the earlier pixel
    // along the direction so plateau edges stay one pixel wide.
    let mut thin = vec![0.0f64; h * w];
    for i in 1..h - 1 {
        for j in 1..w - 1 {
            let idx = i * w + j;
            if mag[idx] == 0.0 {
                continue;
            }
            let mut angle = gy[idx].atan2(gx[idx]).to_degrees();
            if angle < 0.0 {
                angle += 180.0;
            }
            let (di, dj) = if !(22.5..157.5).contains(&angle) {
                (0i64, 1i64)
            } else if angle < 67.5 {
                (1, 1)
            } else if angle < 112.5 {
                (1, 0)
            } else {
                (-1, 1)
            };
            let before = mag[(i as i64 - di) as usize * w + (j as i64 - dj) as usize];
            let after = mag[(i as i64 + di) as usize * w + (j as i64 + dj) as usize];
            if mag[idx] > before && mag[idx] >= after {
                thin[idx] = mag[idx];
            }
        }
    }

    // Hysteresis: strong seeds grow through weak pixels, 8-connected.
    let mut edge = vec![0u8; h * w];
    let mut stack: Vec<usize> = (0..h * w).filter(|&idx| thin[idx] >= high).collect();
    for &idx in &stack {
        edge[idx] = 1;
    }
    while let Some(idx) = stack.pop() {
        let (i, j) = (idx / w, idx % w);
        for di in -1i64..=1 {
            for dj in -1i64..=1 {
                let (ni, nj) = (i as i64 + di, j as i64 + dj);
                if ni < 0 || nj < 0 || ni >= h as i64 || nj >= w as i64 {
                    continue;
                }
                let nidx = ni as usize * w + nj as usize;
                if edge[nidx] == 0 && thin[nidx] >= low {
                    edge[nidx] = 1;
                    stack.push(nidx);
                }
            }
        }
    }
    ScalarField::new(h, w, edge.into_iter().map(f64::from).collect())
        .expect("edge map preserves shape")
}

/// Outer boundary: foreground pixels with at least one background
/// 4-neighbor inside the image.
pub fn encode_contour(mask: &BinaryMask) -> ScalarField {
    let (h, w) = (mask.height(), mask.width());
    let mut out = vec![0.0f64; h * w];
    for i in 0..h {
        for j in 0..w {
            if mask.get(i, j) == 0 {
                continue;
            }
            let boundary = (i > 0 && mask.get(i - 1, j) == 0)
                || (i + 1 < h && mask.get(i + 1, j) == 0)
                || (j > 0 && mask.get(i, j - 1) == 0)
                || (j + 1 < w && mask.get(i, j + 1) == 0);
            if boundary {
                out[i * w + j] = 1.0;
            }
        }
    }
    ScalarField::new(h, w, out).expect("contour preserves shape")
}

/// Two-subiteration morphological thinning (Zhang-Suen) down to a
/// one-pixel-wide, connectivity-preserving skeleton.
pub fn encode_skeleton(mask: &BinaryMask) -> ScalarField {
    let (h, w) = (mask.height(), mask.width());
    let mut grid: Vec<u8> = mask.data().to_vec();
    let get = |g: &[u8], i: i64, j: i64| -> u8 {
        if i < 0 || j < 0 || i >= h as i64 || j >= w as i64 {
            0
        } else {
            g[i as usize * w + j as usize]
        }
    };
    let mut to_delete = Vec::new();
    loop {
        let mut changed = false;
        for pass in 0..2 {
            to_delete.clear();
            for i in 0..h as i64 {
                for j in 0..w as i64 {
                    if get(&grid, i, j) == 0 {
                        continue;
                    }
                    // Neighborhood in clockwise order starting north.
                    let p = [
                        get(&grid, i - 1, j),
                        get(&grid, i - 1, j + 1),
                        get(&grid, i, j + 1),
                        get(&grid, i + 1, j + 1),
                        get(&grid, i + 1, j),
                        get(&grid, i + 1, j - 1),
                        get(&grid, i, j - 1),
                        get(&grid, i - 1, j - 1),
                    ];
                    let b: u8 = p.iter().sum();
                    if !(2..=6).contains(&b) {
                        continue;
                    }
                    let transitions = (0..8).filter(|&k| p[k] == 0 && p[(k + 1) % 8] == 1).count();
                    if transitions != 1 {
                        continue;
                    }
                    let (n, e, s, wst) = (p[0], p[2], p[4], p[6]);
                    let ok = if pass == 0 {
                        n * e * s == 0 && e * s * wst == 0
                    } else {
                        n * e * wst == 0 && n * s * wst == 0
                    };
                    if ok {
                        to_delete.push(i as usize * w + j as usize);
                    }
                }
            }
            if !to_delete.is_empty() {
                changed = true;
                for &idx in &to_delete {
                    grid[idx] = 0;
                }
            }
        }
        if !changed {
            break;
        }
    }
    ScalarField::new(h, w, grid.into_iter().map(f64::from).collect())
        .expect("skeleton preserves shape")
}
