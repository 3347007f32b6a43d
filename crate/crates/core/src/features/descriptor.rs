//! 128-dimensional gradient-orientation descriptor over a 4x4 spatial grid.

use std::f32::consts::PI;

use super::pyramid::{gradient, ScaleSpace};
use super::{Descriptor, DescriptorVector, Keypoint, DESCRIPTOR_DIM};

const GRID: usize = 4;
const ORI_BINS: usize = 8;
/// Sub-region width in units of the keypoint sigma.
const SIGMA_PER_CELL: f32 = 3.0;
/// Descriptor entries are clamped at this fraction of the unit norm.
const CLAMP: f32 = 0.2;
const LOW_ENERGY: f32 = 1e-5;

pub fn describe(ss: &ScaleSpace, kp: &Keypoint) -> Descriptor {
    let (octave, level, x, y, sigma) = ss.locate(kp.x, kp.y, kp.scale);
    let img = &ss.octaves[octave].gaussians[level];

    let cell = SIGMA_PER_CELL * sigma;
    let radius = (cell * (GRID as f32 + 1.0) * std::f32::consts::SQRT_2 / 2.0)
        .round()
        .max(1.0) as i64;
    let cx = x.round() as i64;
    let cy = y.round() as i64;
    let border = cx - radius < 0
        || cy - radius < 0
        || cx + radius >= img.width() as i64
        || cy + radius >= img.height() as i64;

    let cos_t = kp.orientation.cos();
    let sin_t = kp.orientation.sin();
    let weight_denom = 2.0 * (0.5 * GRID as f32) * (0.5 * GRID as f32);

    let mut hist = [0f32; GRID * GRID * ORI_BINS];
    for dy in -radius..=radius {
        for dx in -radius..=radius {
            let fx = dx as f32 + (x - cx as f32);
            let fy = dy as f32 + (y - cy as f32);
            // Rotate into the keypoint frame, in cell units.
            let rx = (cos_t * fx + sin_t * fy) / cell;
            let ry = (-sin_t * fx + cos_t * fy) / cell;
            let cbin = rx + GRID as f32 / 2.0 - 0.5;
            let rbin = ry + GRID as f32 / 2.0 - 0.5;
            if !(-1.0..GRID as f32).contains(&cbin) || !(-1.0..GRID as f32).contains(&rbin) {
                continue;
            }
            let (gx, gy) = gradient(img, cx + dx, cy + dy);
            let mag = (gx * gx + gy * gy).sqrt();
            if mag == 0.0 {
                continue;
            }
            let theta = (gy.atan2(gx) - kp.orientation).rem_euclid(2.0 * PI);
            let obin = theta * ORI_BINS as f32 / (2.0 * PI);
            let weight = (-(rx * rx + ry * ry) / weight_denom).exp();
            scatter_trilinear(&mut hist, rbin, cbin, obin, mag * weight);
        }
    }

    let mut values: DescriptorVector = [0.0; DESCRIPTOR_DIM];
    values.copy_from_slice(&hist);

    let energy = norm2(&values);
    if energy < LOW_ENERGY {
        // Featureless support: emit a uniform unit vector so the norm
        // invariant holds, and flag it.
        let fill = 1.0 / (DESCRIPTOR_DIM as f32).sqrt();
        return Descriptor {
            values: [fill; DESCRIPTOR_DIM],
            border,
            low_contrast: true,
        };
    }

    for v in &mut values {
        *v = (*v / energy).min(CLAMP);
    }
    let renorm = norm2(&values);
    for v in &mut values {
        *v /= renorm;
    }

    Descriptor {
        values,
        border,
        low_contrast: false,
    }
}

fn norm2(v: &DescriptorVector) -> f32 {
    v.iter().map(|x| x * x).sum::<f32>().sqrt()
}

/// Distributes `value` over the eight histogram cells adjacent to the
/// fractional coordinate (rbin, cbin, obin); the orientation axis wraps.
fn scatter_trilinear(hist: &mut [f32], rbin: f32, cbin: f32, obin: f32, value: f32) {
    let r0 = rbin.floor() as i64;
    let c0 = cbin.floor() as i64;
    let o0 = obin.floor() as i64;
    let fr = rbin - r0 as f32;
    let fc = cbin - c0 as f32;
    let fo = obin - o0 as f32;

    for (dr, wr) in [(0i64, 1.0 - fr), (1, fr)] {
        let r = r0 + dr;
        if r < 0 || r >= GRID as i64 {
            continue;
        }
        for (dc, wc) in [(0i64, 1.0 - fc), (1, fc)] {
            let c = c0 + dc;
            if c < 0 || c >= GRID as i64 {
                continue;
            }
            for (do_, wo) in [(0i64, 1.0 - fo), (1, fo)] {
                let o = (o0 + do_).rem_euclid(ORI_BINS as i64);
                let idx = (r as usize * GRID + c as usize) * ORI_BINS + o as usize;
                hist[idx] += value * wr * wc * wo;
            }
        }
    }
}
