//! Difference-of-Gaussian keypoints and 4x4x8 gradient-histogram descriptors.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::scale::{Plane, Pyramid};

pub const DESCRIPTOR_LEN: usize = 128;
const ORIENTATION_BINS: usize = 36;
const WINDOW: usize = 16;
const BLOCKS: usize = 4;
const DIRECTIONS: usize = 8;
/// Descriptor entries are clamped at this value before renormalizing.
const CLAMP: f64 = 0.2;

pub type Descriptor = [f64; DESCRIPTOR_LEN];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    /// Position in input-image pixels.
    pub x: f64,
    pub y: f64,
    /// Blur in input-image pixels.
    pub sigma: f64,
    pub orientation: f64,
    /// DoG value at the extremum.
    pub response: f64,
    pub octave: usize,
    pub level: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorConfig {
    pub contrast_threshold: f64,
    pub edge_ratio: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            contrast_threshold: 0.02,
            edge_ratio: 10.0,
        }
    }
}

/// Sample spacing of the descriptor window for a level, in octave pixels.
fn window_step(pyr: &Pyramid, level: usize) -> f64 {
    pyr.level_sigma(level) / pyr.sigma0
}

/// Margin, in octave pixels, that keeps a rotated descriptor window and its
/// gradient stencil inside the raster.
fn margin(pyr: &Pyramid, level: usize) -> usize {
    (0.5 * WINDOW as f64 * std::f64::consts::SQRT_2 * window_step(pyr, level)).ceil() as usize + 2
}

/// DoG values closer than this are treated as equal. Plateaus are common on
/// binary structure images and must not be split by blur round-off, which
/// depends on the image orientation.
const TIE_TOLERANCE: f64 = 1e-9;

/// Extremum over the 26 neighbors; neighbors tied with `v` do not disqualify it.
fn is_extremum(dogs: &[Plane], i: usize, x: usize, y: usize, v: f64) -> bool {
    let greater = v > 0.0;
    for d in &dogs[i - 1..=i + 1] {
        for yy in y - 1..=y + 1 {
            for xx in x - 1..=x + 1 {
                if std::ptr::eq(d, &dogs[i]) && xx == x && yy == y {
                    continue;
                }
                let n = d.at(xx, yy);
                if (greater && n > v + TIE_TOLERANCE) || (!greater && n < v - TIE_TOLERANCE) {
                    return false;
                }
            }
        }
    }
    true
}

fn passes_edge_test(d: &Plane, x: usize, y: usize, r: f64) -> bool {
    let c = d.at(x, y);
    let dxx = d.at(x + 1, y) + d.at(x - 1, y) - 2.0 * c;
    let dyy = d.at(x, y + 1) + d.at(x, y - 1) - 2.0 * c;
    let dxy = 0.25 * (d.at(x + 1, y + 1) - d.at(x + 1, y - 1) - d.at(x - 1, y + 1) + d.at(x - 1, y - 1));
    let tr = dxx + dyy;
    let det = dxx * dyy - dxy * dxy;
    det > 0.0 && tr * tr * r < (r + 1.0) * (r + 1.0) * det
}

/// Dominant gradient direction from a 36-bin histogram with bins centered
/// on multiples of 10 degrees; ties go to the lowest bin.
fn dominant_orientation(g: &Plane, x: usize, y: usize, sigma: f64) -> f64 {
    let sw = 1.5 * sigma;
    let rad = (3.0 * sw).round() as isize;
    let mut hist = [0.0f64; ORIENTATION_BINS];
    let width = 2.0 * PI / ORIENTATION_BINS as f64;
    for dy in -rad..=rad {
        for dx in -rad..=rad {
            let (px, py) = (x as isize + dx, y as isize + dy);
            if px < 0 || py < 0 || px >= g.width as isize || py >= g.height as isize {
                continue;
            }
            let (gx, gy) = g.gradient(px as usize, py as usize);
            let m = gx.hypot(gy);
            if m == 0.0 {
                continue;
            }
            let w = (-((dx * dx + dy * dy) as f64) / (2.0 * sw * sw)).exp();
            let a = gy.atan2(gx).rem_euclid(2.0 * PI);
            let bin = (a / width).round() as usize % ORIENTATION_BINS;
            hist[bin] += w * m;
        }
    }
    let mut best = 0;
    for (b, v) in hist.iter().enumerate() {
        if *v > hist[best] {
            best = b;
        }
    }
    best as f64 * width
}

pub fn detect_keypoints(pyr: &Pyramid, cfg: &DetectorConfig) -> Vec<Keypoint> {
    let mut out = Vec::new();
    for (o, oc) in pyr.octaves.iter().enumerate() {
        let scale = (1usize << o) as f64;
        for i in 1..oc.dogs.len() - 1 {
            let d = &oc.dogs[i];
            let m = margin(pyr, i);
            if d.width <= 2 * m || d.height <= 2 * m {
                continue;
            }
            for y in m..d.height - m {
                for x in m..d.width - m {
                    let v = d.at(x, y);
                    if v.abs() < cfg.contrast_threshold
                        || !is_extremum(&oc.dogs, i, x, y, v)
                        || !passes_edge_test(d, x, y, cfg.edge_ratio)
                    {
                        continue;
                    }
                    let sigma = pyr.level_sigma(i);
                    out.push(Keypoint {
                        x: x as f64 * scale + (scale - 1.0) / 2.0,
                        y: y as f64 * scale + (scale - 1.0) / 2.0,
                        sigma: sigma * scale,
                        orientation: dominant_orientation(&oc.gaussians[i], x, y, sigma),
                        response: v,
                        octave: o,
                        level: i,
                    });
                }
            }
        }
    }
    out
}

/// Bilinearly interpolated pixel gradient.
fn gradient_at(g: &Plane, x: f64, y: f64) -> (f64, f64) {
    let x0 = x.floor();
    let y0 = y.floor();
    let (fx, fy) = (x - x0, y - y0);
    let (x0, y0) = (x0 as isize, y0 as isize);
    let mut acc = (0.0, 0.0);
    for (dx, wx) in [(0, 1.0 - fx), (1, fx)] {
        for (dy, wy) in [(0, 1.0 - fy), (1, fy)] {
            let w = wx * wy;
            if w == 0.0 {
                continue;
            }
            let px = (x0 + dx).clamp(0, g.width as isize - 1) as usize;
            let py = (y0 + dy).clamp(0, g.height as isize - 1) as usize;
            let (gx, gy) = g.gradient(px, py);
            acc.0 += w * gx;
            acc.1 += w * gy;
        }
    }
    acc
}

/// 128-vector of 4x4 blocks by 8 directions over a 16x16 sample window
/// aligned with the keypoint orientation. Gradients are Gaussian weighted
/// (sigma = 8 samples) and trilinearly binned, then the vector is
/// L2-normalized, clamped at 0.2 and renormalized. A window without
/// gradient gives the zero vector.
pub fn describe(g: &Plane, kx: f64, ky: f64, step: f64, orientation: f64) -> Descriptor {
    let mut raw = [0.0f64; DESCRIPTOR_LEN];
    let (s, c) = orientation.sin_cos();
    let half = WINDOW as f64 / 2.0 - 0.5;
    let block = (WINDOW / BLOCKS) as f64;
    let dir_width = 2.0 * PI / DIRECTIONS as f64;
    for i in 0..WINDOW {
        for j in 0..WINDOW {
            let (u, v) = ((j as f64 - half) * step, (i as f64 - half) * step);
            let x = kx + c * u - s * v;
            let y = ky + s * u + c * v;
            let (gx, gy) = gradient_at(g, x, y);
            let m = gx.hypot(gy);
            if m == 0.0 {
                continue;
            }
            let d2 = (j as f64 - half).powi(2) + (i as f64 - half).powi(2);
            let w = m * (-d2 / (2.0 * 64.0)).exp();
            let rel = (gy.atan2(gx) - orientation).rem_euclid(2.0 * PI);
            let rb = (i as f64 + 0.5) / block - 0.5;
            let cb = (j as f64 + 0.5) / block - 0.5;
            let ob = rel / dir_width;
            let (r0, c0, o0) = (rb.floor(), cb.floor(), ob.floor());
            let (dr, dc, dob) = (rb - r0, cb - c0, ob - o0);
            for (ri, wr) in [(r0 as isize, 1.0 - dr), (r0 as isize + 1, dr)] {
                if ri < 0 || ri >= BLOCKS as isize || wr == 0.0 {
                    continue;
                }
                for (ci, wc) in [(c0 as isize, 1.0 - dc), (c0 as isize + 1, dc)] {
                    if ci < 0 || ci >= BLOCKS as isize || wc == 0.0 {
                        continue;
                    }
                    for (oi, wo) in [(o0 as usize, 1.0 - dob), (o0 as usize + 1, dob)] {
                        if wo == 0.0 {
                            continue;
                        }
                        let idx = (ri as usize * BLOCKS + ci as usize) * DIRECTIONS + oi % DIRECTIONS;
                        raw[idx] += w * wr * wc * wo;
                    }
                }
            }
        }
    }
    normalize_clamped(&mut raw);
    raw
}

fn normalize_clamped(v: &mut Descriptor) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return;
    }
    v.iter_mut().for_each(|x| *x = (*x / norm).min(CLAMP));
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= norm);
}

#[derive(Debug, Clone, PartialEq)]
pub struct Feature {
    pub keypoint: Keypoint,
    pub descriptor: Descriptor,
}

/// Describe every keypoint on the Gaussian level it was found at.
pub fn describe_all(pyr: &Pyramid, kps: &[Keypoint]) -> Vec<Feature> {
    kps.iter()
        .map(|kp| {
            let scale = (1usize << kp.octave) as f64;
            let g = &pyr.octaves[kp.octave].gaussians[kp.level];
            let kx = (kp.x - (scale - 1.0) / 2.0) / scale;
            let ky = (kp.y - (scale - 1.0) / 2.0) / scale;
            Feature {
                keypoint: *kp,
                descriptor: describe(g, kx, ky, window_step(pyr, kp.level), kp.orientation),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step_edge(w: usize, h: usize, at: usize) -> Plane {
        let mut p = Plane::new(w, h);
        for y in 0..h {
            for x in at..w {
                p.data[y * w + x] = 1.0;
            }
        }
        p
    }

    #[test]
    fn flat_window_gives_zero_descriptor() {
        let p = Plane::new(40, 40);
        assert!(describe(&p, 20.0, 20.0, 1.0, 0.3).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn step_edge_mass_sits_in_gradient_direction() {
        let p = step_edge(40, 40, 20);
        let d = describe(&p, 19.5, 20.0, 1.0, 0.0);
        let norm: f64 = d.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
        let total: f64 = d.iter().sum();
        // bins 0 and 7 straddle direction 0
        let near: f64 = d.chunks(DIRECTIONS).map(|b| b[0] + b[DIRECTIONS - 1] + b[1]).sum();
        assert!(near / total >= 0.7, "{}", near / total);
    }

    #[test]
    fn rotating_the_frame_shifts_direction_bins() {
        let p = step_edge(40, 40, 20);
        let a = describe(&p, 19.5, 20.0, 1.0, 0.0);
        // a keypoint frame turned by a quarter sees the edge gradient at -90 deg
        let b = describe(&p, 19.5, 20.0, 1.0, PI / 2.0);
        let mass = |d: &Descriptor, o: usize| d.chunks(DIRECTIONS).map(|c| c[o]).sum::<f64>();
        assert!(mass(&a, 0) > 0.9 * a.iter().sum::<f64>());
        assert!(mass(&b, 6) > 0.9 * b.iter().sum::<f64>());
    }

    #[test]
    fn clamp_then_renormalize() {
        let mut v = [0.0; DESCRIPTOR_LEN];
        v[0] = 10.0;
        v[1] = 1.0;
        normalize_clamped(&mut v);
        assert!((v.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
        // the dominant entry was cut to 0.2 before renormalizing
        assert!((v[0] / v[1] - 0.2 / (1.0 / 101f64.sqrt())).abs() < 1e-9);
    }
}
