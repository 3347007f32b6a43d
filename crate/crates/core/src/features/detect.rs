//! DoG extrema scanning, sub-pixel refinement and orientation assignment.

use std::f32::consts::PI;

use crate::imaging::ImageF;

use super::pyramid::{gradient, ScaleSpace};
use super::Keypoint;

const ORIENTATION_BINS: usize = 36;
/// Gaussian weight factor for the orientation window, in units of the
/// keypoint sigma.
const ORIENTATION_SIGMA_FACTOR: f32 = 1.5;
/// Secondary orientation peaks are kept above this fraction of the maximum.
const ORIENTATION_PEAK_RATIO: f32 = 0.8;
const MAX_REFINE_STEPS: usize = 5;

pub fn scan_extrema(ss: &ScaleSpace) -> Vec<Keypoint> {
    let s = ss.cfg.scales_per_octave;
    let prefilter = 0.5 * ss.cfg.contrast_threshold / s as f32;
    let mut keypoints = Vec::new();

    for (oct_idx, octave) in ss.octaves.iter().enumerate() {
        let w = octave.dog[0].width();
        let h = octave.dog[0].height();
        for level in 1..=s {
            let below = &octave.dog[level - 1];
            let here = &octave.dog[level];
            let above = &octave.dog[level + 1];
            for y in 1..h - 1 {
                for x in 1..w - 1 {
                    let v = here.get(x, y);
                    if v.abs() <= prefilter {
                        continue;
                    }
                    if !is_extremum(below, here, above, x, y, v) {
                        continue;
                    }
                    if let Some((fx, fy, flevel, value)) =
                        refine(octave.dog.as_slice(), level, x, y, s)
                    {
                        if value.abs() < ss.cfg.contrast_threshold / s as f32 {
                            continue;
                        }
                        if is_edge_like(here, x, y, ss.cfg.edge_ratio_threshold) {
                            continue;
                        }
                        let sigma_rel = ss.level_sigma(flevel);
                        let octave_factor = (1 << oct_idx) as f32;
                        let to_orig = octave_factor / ss.base_scale;
                        let gauss_level = (flevel.round() as i64).clamp(0, s as i64 + 2) as usize;
                        for theta in
                            orientations(&octave.gaussians[gauss_level], fx, fy, sigma_rel)
                        {
                            keypoints.push(Keypoint {
                                x: fx * to_orig,
                                y: fy * to_orig,
                                scale: sigma_rel * to_orig,
                                orientation: theta,
                            });
                        }
                    }
                }
            }
        }
    }
    keypoints
}

#[inline]
fn is_extremum(below: &ImageF, here: &ImageF, above: &ImageF, x: u32, y: u32, v: f32) -> bool {
    let mut max = true;
    let mut min = true;
    for img in [below, here, above] {
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                let n = img.get((x as i64 + dx) as u32, (y as i64 + dy) as u32);
                if std::ptr::eq(img, here) && dx == 0 && dy == 0 {
                    continue;
                }
                if v <= n {
                    max = false;
                }
                if v >= n {
                    min = false;
                }
                if !max && !min {
                    return false;
                }
            }
        }
    }
    max || min
}

/// Quadratic sub-pixel refinement in (x, y, level). Returns the refined
/// position, level and interpolated response, or `None` when the fit walks
/// out of the valid lattice.
fn refine(
    dog: &[ImageF],
    level: usize,
    x: u32,
    y: u32,
    s: usize,
) -> Option<(f32, f32, f32, f32)> {
    let w = dog[0].width() as i64;
    let h = dog[0].height() as i64;
    let mut lx = x as i64;
    let mut ly = y as i64;
    let mut ll = level as i64;

    for _ in 0..MAX_REFINE_STEPS {
        let d = |dl: i64, dy: i64, dx: i64| dog[(ll + dl) as usize].get((lx + dx) as u32, (ly + dy) as u32);

        let gx = 0.5 * (d(0, 0, 1) - d(0, 0, -1));
        let gy = 0.5 * (d(0, 1, 0) - d(0, -1, 0));
        let gs = 0.5 * (d(1, 0, 0) - d(-1, 0, 0));
        let v = d(0, 0, 0);

        let dxx = d(0, 0, 1) + d(0, 0, -1) - 2.0 * v;
        let dyy = d(0, 1, 0) + d(0, -1, 0) - 2.0 * v;
        let dss = d(1, 0, 0) + d(-1, 0, 0) - 2.0 * v;
        let dxy = 0.25 * (d(0, 1, 1) - d(0, 1, -1) - d(0, -1, 1) + d(0, -1, -1));
        let dxs = 0.25 * (d(1, 0, 1) - d(1, 0, -1) - d(-1, 0, 1) + d(-1, 0, -1));
        let dys = 0.25 * (d(1, 1, 0) - d(1, -1, 0) - d(-1, 1, 0) + d(-1, -1, 0));

        let (ox, oy, os) = solve3(
            [[dxx, dxy, dxs], [dxy, dyy, dys], [dxs, dys, dss]],
            [-gx, -gy, -gs],
        )?;

        if ox.abs() < 0.5 && oy.abs() < 0.5 && os.abs() < 0.5 {
            let value = v + 0.5 * (gx * ox + gy * oy + gs * os);
            return Some((lx as f32 + ox, ly as f32 + oy, ll as f32 + os, value));
        }
        lx += ox.round() as i64;
        ly += oy.round() as i64;
        ll += os.round() as i64;
        if lx < 1 || lx >= w - 1 || ly < 1 || ly >= h - 1 || ll < 1 || ll > s as i64 {
            return None;
        }
    }
    None
}

fn solve3(a: [[f32; 3]; 3], b: [f32; 3]) -> Option<(f32, f32, f32)> {
    let det = a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1])
        - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
        + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0]);
    if det.abs() < 1e-12 {
        return None;
    }
    let inv_det = 1.0 / det;
    let x = inv_det
        * (b[0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1])
            - a[0][1] * (b[1] * a[2][2] - a[1][2] * b[2])
            + a[0][2] * (b[1] * a[2][1] - a[1][1] * b[2]));
    let y = inv_det
        * (a[0][0] * (b[1] * a[2][2] - a[1][2] * b[2])
            - b[0] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
            + a[0][2] * (a[1][0] * b[2] - b[1] * a[2][0]));
    let z = inv_det
        * (a[0][0] * (a[1][1] * b[2] - b[1] * a[2][1])
            - a[0][1] * (a[1][0] * b[2] - b[1] * a[2][0])
            + b[0] * (a[1][0] * a[2][1] - a[1][1] * a[2][0]));
    Some((x, y, z))
}

/// Principal-curvature ratio test on the 2x2 spatial Hessian.
fn is_edge_like(img: &ImageF, x: u32, y: u32, edge_ratio: f32) -> bool {
    let v = img.get(x, y);
    let dxx = img.get(x + 1, y) + img.get(x - 1, y) - 2.0 * v;
    let dyy = img.get(x, y + 1) + img.get(x, y - 1) - 2.0 * v;
    let dxy = 0.25
        * (img.get(x + 1, y + 1) - img.get(x + 1, y - 1) - img.get(x - 1, y + 1)
            + img.get(x - 1, y - 1));
    let trace = dxx + dyy;
    let det = dxx * dyy - dxy * dxy;
    if det <= 0.0 {
        return true;
    }
    let r = edge_ratio;
    trace * trace * r >= (r + 1.0) * (r + 1.0) * det
}

/// Dominant gradient orientations around `(x, y)` in one Gaussian level.
/// Returns the interpolated peak angles in [0, 2pi).
fn orientations(img: &ImageF, x: f32, y: f32, sigma: f32) -> Vec<f32> {
    let weight_sigma = ORIENTATION_SIGMA_FACTOR * sigma;
    let radius = (3.0 * weight_sigma).round().max(1.0) as i64;
    let cx = x.round() as i64;
    let cy = y.round() as i64;
    let denom = 2.0 * weight_sigma * weight_sigma;

    let mut hist = [0f32; ORIENTATION_BINS];
    for dy in -radius..=radius {
        for dx in -radius..=radius {
            let px = cx + dx;
            let py = cy + dy;
            if px < 1 || py < 1 || px >= img.width() as i64 - 1 || py >= img.height() as i64 - 1 {
                continue;
            }
            let (gx, gy) = gradient(img, px, py);
            let mag = (gx * gx + gy * gy).sqrt();
            if mag == 0.0 {
                continue;
            }
            let theta = gy.atan2(gx).rem_euclid(2.0 * PI);
            let weight = (-((dx * dx + dy * dy) as f32) / denom).exp();
            let bin = ((theta / (2.0 * PI)) * ORIENTATION_BINS as f32) as usize
                % ORIENTATION_BINS;
            hist[bin] += mag * weight;
        }
    }

    // Circular box smoothing, applied a few times.
    for _ in 0..6 {
        let prev = hist;
        for i in 0..ORIENTATION_BINS {
            let l = prev[(i + ORIENTATION_BINS - 1) % ORIENTATION_BINS];
            let r = prev[(i + 1) % ORIENTATION_BINS];
            hist[i] = (l + prev[i] + r) / 3.0;
        }
    }

    let max = hist.iter().cloned().fold(0f32, f32::max);
    if max <= 0.0 {
        return Vec::new();
    }
    let mut peaks = Vec::new();
    for i in 0..ORIENTATION_BINS {
        let l = hist[(i + ORIENTATION_BINS - 1) % ORIENTATION_BINS];
        let r = hist[(i + 1) % ORIENTATION_BINS];
        if hist[i] > l && hist[i] > r && hist[i] >= ORIENTATION_PEAK_RATIO * max {
            // Parabolic interpolation of the peak position.
            let offset = 0.5 * (l - r) / (l - 2.0 * hist[i] + r);
            let bin = i as f32 + offset;
            let theta = (bin + 0.5) * 2.0 * PI / ORIENTATION_BINS as f32;
            peaks.push(theta.rem_euclid(2.0 * PI));
        }
    }
    peaks
}
