//! Region proposals for the window classifier: Canny-bounded flood-fill
//! segmentation, multi-scale windows around accepted regions, dense sliding
//! grids, and stereo depth-grid proposals.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::features::{distance, Descriptor, Keypoint};
use crate::imaging::{Image, Window};

/// Binary edge raster plus the hysteresis thresholds that produced it.
#[derive(Debug, Clone)]
pub struct EdgeMap {
    width: u32,
    height: u32,
    edges: Vec<bool>,
    pub low: f32,
    pub high: f32,
}

impl EdgeMap {
    pub fn from_mask(width: u32, height: u32, edges: Vec<bool>, low: f32, high: f32) -> Self {
        assert_eq!(edges.len(), (width * height) as usize);
        EdgeMap {
            width,
            height,
            edges,
            low,
            high,
        }
    }

    #[inline]
    pub fn is_edge(&self, x: u32, y: u32) -> bool {
        self.edges[(y * self.width + x) as usize]
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn edge_count(&self) -> usize {
        self.edges.iter().filter(|&&e| e).count()
    }
}

/// Canny edges: Sobel gradients, non-maximum suppression along the gradient
/// direction, and hysteresis linking. Thresholds apply to the Sobel magnitude
/// scaled back to the 8-bit intensity range.
pub fn canny(img: &Image, low: f32, high: f32) -> Result<EdgeMap> {
    if !(0.0 < low && low < high) {
        return Err(Error::Config(format!(
            "canny thresholds need 0 < low ({low}) < high ({high})"
        )));
    }
    let w = img.width() as i64;
    let h = img.height() as i64;
    let at = |x: i64, y: i64| -> i32 {
        let x = x.clamp(0, w - 1);
        let y = y.clamp(0, h - 1);
        img.get(x as u32, y as u32) as i32
    };

    let mut mag = vec![0f32; (w * h) as usize];
    let mut sector = vec![0u8; (w * h) as usize];
    for y in 0..h {
        for x in 0..w {
            let gx = (at(x + 1, y - 1) + 2 * at(x + 1, y) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2 * at(x - 1, y) + at(x - 1, y + 1));
            let gy = (at(x - 1, y + 1) + 2 * at(x, y + 1) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2 * at(x, y - 1) + at(x + 1, y - 1));
            let m = ((gx * gx + gy * gy) as f32).sqrt() / 4.0;
            mag[(y * w + x) as usize] = m;
            // Gradient direction quantized to 4 sectors.
            let angle = (gy as f32).atan2(gx as f32).to_degrees();
            let a = if angle < 0.0 { angle + 180.0 } else { angle };
            sector[(y * w + x) as usize] = if !(22.5..157.5).contains(&a) {
                0 // horizontal gradient: compare left/right
            } else if a < 67.5 {
                1 // diagonal /
            } else if a < 112.5 {
                2 // vertical gradient: compare up/down
            } else {
                3 // diagonal \
            };
        }
    }

    // Non-maximum suppression. The strict test towards the preceding
    // neighbor keeps plateau responses one pixel wide.
    let midx = |x: i64, y: i64| (y * w + x) as usize;
    let mut thin = vec![0f32; (w * h) as usize];
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let m = mag[midx(x, y)];
            let (prev, next) = match sector[midx(x, y)] {
                0 => (mag[midx(x - 1, y)], mag[midx(x + 1, y)]),
                1 => (mag[midx(x - 1, y - 1)], mag[midx(x + 1, y + 1)]),
                2 => (mag[midx(x, y - 1)], mag[midx(x, y + 1)]),
                _ => (mag[midx(x + 1, y - 1)], mag[midx(x - 1, y + 1)]),
            };
            if m > prev && m >= next {
                thin[midx(x, y)] = m;
            }
        }
    }

    // Hysteresis: grow from strong pixels through weak ones, 8-connected.
    let mut edges = vec![false; (w * h) as usize];
    let mut queue = VecDeque::new();
    for y in 0..h {
        for x in 0..w {
            if thin[midx(x, y)] >= high && !edges[midx(x, y)] {
                edges[midx(x, y)] = true;
                queue.push_back((x, y));
                while let Some((qx, qy)) = queue.pop_front() {
                    for dy in -1..=1i64 {
                        for dx in -1..=1i64 {
                            let nx = qx + dx;
                            let ny = qy + dy;
                            if nx < 0 || ny < 0 || nx >= w || ny >= h {
                                continue;
                            }
                            let ni = midx(nx, ny);
                            if !edges[ni] && thin[ni] >= low {
                                edges[ni] = true;
                                queue.push_back((nx, ny));
                            }
                        }
                    }
                }
            }
        }
    }

    Ok(EdgeMap {
        width: img.width(),
        height: img.height(),
        edges,
        low,
        high,
    })
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ProposalConfig {
    /// Admissible brightness difference from the seed intensity, applied
    /// both above and below.
    pub flood_tolerance: i32,
    /// Regions below this pixel count are discarded.
    pub min_area: usize,
    /// Window size multipliers around each accepted region.
    pub window_scales: Vec<f64>,
}

impl Default for ProposalConfig {
    fn default() -> Self {
        ProposalConfig {
            flood_tolerance: 12,
            min_area: 900,
            window_scales: vec![0.75, 1.0, 1.25, 1.5, 2.0],
        }
    }
}

/// A connected, edge-free, sufficiently large segment.
#[derive(Debug, Clone)]
pub struct Region {
    pub seed: (u32, u32),
    pub area: usize,
    pub bbox: Window,
}

/// Label raster plus the accepted regions. `label_at` indexes into
/// `regions`; discarded and edge pixels carry no label.
#[derive(Debug, Clone)]
pub struct Segmentation {
    width: u32,
    height: u32,
    labels: Vec<u32>,
    pub regions: Vec<Region>,
}

const UNLABELED: u32 = u32::MAX;

impl Segmentation {
    #[inline]
    pub fn label_at(&self, x: u32, y: u32) -> Option<u32> {
        let l = self.labels[(y * self.width + x) as usize];
        (l != UNLABELED).then_some(l)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    /// Label visualization for debugging; region k maps to gray `(k % 254) + 1`,
    /// unlabeled pixels to 0.
    pub fn to_label_image(&self) -> Image {
        Image::from_fn(self.width, self.height, |x, y| {
            match self.label_at(x, y) {
                Some(l) => ((l % 254) + 1) as u8,
                None => 0,
            }
        })
    }
}

/// Flood-fill segmentation bounded by Canny edges. Seeds are taken in raster
/// order from the unlabeled non-edge pixels; the fill admits 4-neighbors that
/// are unlabeled, non-edge, and within the tolerance of the seed intensity.
/// Regions smaller than `min_area` are discarded (their pixels stay
/// unlabeled). Output regions are pairwise disjoint by construction.
pub fn floodcanny(img: &Image, edges: &EdgeMap, cfg: &ProposalConfig) -> Segmentation {
    assert_eq!(img.width(), edges.width());
    assert_eq!(img.height(), edges.height());
    let w = img.width();
    let h = img.height();
    let idx = |x: u32, y: u32| (y * w + x) as usize;

    let mut labels = vec![UNLABELED; (w * h) as usize];
    let mut regions = Vec::new();
    let mut queue = VecDeque::new();
    let mut filled: Vec<(u32, u32)> = Vec::new();

    for sy in 0..h {
        for sx in 0..w {
            if labels[idx(sx, sy)] != UNLABELED || edges.is_edge(sx, sy) {
                continue;
            }
            let seed_value = img.get(sx, sy) as i32;
            let tentative = regions.len() as u32;
            filled.clear();
            labels[idx(sx, sy)] = tentative;
            queue.push_back((sx, sy));
            filled.push((sx, sy));
            let (mut x0, mut y0, mut x1, mut y1) = (sx, sy, sx, sy);

            while let Some((qx, qy)) = queue.pop_front() {
                let neighbors = [
                    (qx.wrapping_sub(1), qy),
                    (qx + 1, qy),
                    (qx, qy.wrapping_sub(1)),
                    (qx, qy + 1),
                ];
                for (nx, ny) in neighbors {
                    if nx >= w || ny >= h {
                        continue;
                    }
                    if labels[idx(nx, ny)] != UNLABELED || edges.is_edge(nx, ny) {
                        continue;
                    }
                    if (img.get(nx, ny) as i32 - seed_value).abs() > cfg.flood_tolerance {
                        continue;
                    }
                    labels[idx(nx, ny)] = tentative;
                    queue.push_back((nx, ny));
                    filled.push((nx, ny));
                    x0 = x0.min(nx);
                    y0 = y0.min(ny);
                    x1 = x1.max(nx);
                    y1 = y1.max(ny);
                }
            }

            if filled.len() >= cfg.min_area {
                regions.push(Region {
                    seed: (sx, sy),
                    area: filled.len(),
                    bbox: Window::new(x0, y0, x1 + 1, y1 + 1).expect("region bbox"),
                });
            } else {
                // Too small: unlabel, but remember the pixels as visited so
                // seeding does not loop. A dedicated sentinel keeps them out
                // of both the seed scan and future fills.
                for &(px, py) in &filled {
                    labels[idx(px, py)] = DISCARDED;
                }
            }
        }
    }

    // Discarded pixels become plain unlabeled in the public view.
    for l in &mut labels {
        if *l == DISCARDED {
            *l = UNLABELED;
        }
    }

    Segmentation {
        width: w,
        height: h,
        labels,
        regions,
    }
}

const DISCARDED: u32 = u32::MAX - 1;

/// The multi-scale windows evaluated around one accepted region: each
/// configured multiplier scales the region's bounding box about its center,
/// clipped to the image.
pub fn region_windows(
    region: &Region,
    cfg: &ProposalConfig,
    img_width: u32,
    img_height: u32,
) -> Vec<Window> {
    let bw = region.bbox.width() as f64;
    let bh = region.bbox.height() as f64;
    let cx = region.bbox.x0() as f64 + bw / 2.0;
    let cy = region.bbox.y0() as f64 + bh / 2.0;

    let mut out = Vec::with_capacity(cfg.window_scales.len());
    for &m in &cfg.window_scales {
        let w = (bw * m).round().max(1.0);
        let h = (bh * m).round().max(1.0);
        let x0 = (cx - w / 2.0).round() as i64;
        let y0 = (cy - h / 2.0).round() as i64;
        let x1 = x0 + w as i64;
        let y1 = y0 + h as i64;
        let x0 = x0.clamp(0, img_width as i64 - 1) as u32;
        let y0 = y0.clamp(0, img_height as i64 - 1) as u32;
        let x1 = x1.clamp(1, img_width as i64) as u32;
        let y1 = y1.clamp(1, img_height as i64) as u32;
        if let Ok(w) = Window::new(x0, y0, x1, y1) {
            out.push(w);
        }
    }
    out
}

/// Deterministic raster of overlapping windows: one sweep per (scale width,
/// aspect h/w) combination, stepping by `step` pixels.
pub fn sliding_windows(
    dims: (u32, u32),
    step: u32,
    scales: &[u32],
    aspects: &[f64],
) -> Vec<Window> {
    assert!(step >= 1, "step must be >= 1");
    let (img_w, img_h) = dims;
    let mut out = Vec::new();
    for &scale in scales {
        for &aspect in aspects {
            let w = scale;
            let h = ((scale as f64 * aspect).round() as u32).max(1);
            if w > img_w || h > img_h || w == 0 {
                continue;
            }
            let mut y = 0;
            while y + h <= img_h {
                let mut x = 0;
                while x + w <= img_w {
                    out.push(Window::new(x, y, x + w, y + h).unwrap());
                    x += step;
                }
                y += step;
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Stereo proposals.
// ---------------------------------------------------------------------------

/// A left/right feature pairing on a rectified pair.
#[derive(Debug, Clone, Copy)]
pub struct StereoMatch {
    pub left: usize,
    pub right: usize,
    /// `x_left - x_right`, non-negative.
    pub disparity: f32,
}

/// Matches features across a rectified stereo pair: candidates must lie in
/// the epipolar row band and satisfy the scale-ratio and orientation bounds;
/// the best descriptor distance wins. Features without any candidate are
/// dropped.
pub fn stereo_match(
    left: (&[Keypoint], &[Descriptor]),
    right: (&[Keypoint], &[Descriptor]),
    epipolar_band: f32,
    scale_ratio_bound: f32,
    orientation_bound: f32,
) -> Vec<StereoMatch> {
    let (lk, ld) = left;
    let (rk, rd) = right;
    let mut out = Vec::new();
    for (i, lkp) in lk.iter().enumerate() {
        let mut best: Option<(f32, usize)> = None;
        for (j, rkp) in rk.iter().enumerate() {
            if (rkp.y - lkp.y).abs() > epipolar_band {
                continue;
            }
            let ratio = lkp.scale.max(rkp.scale) / lkp.scale.min(rkp.scale).max(1e-6);
            if ratio > scale_ratio_bound {
                continue;
            }
            let da = (lkp.orientation - rkp.orientation).rem_euclid(std::f32::consts::TAU);
            if da.min(std::f32::consts::TAU - da) > orientation_bound {
                continue;
            }
            let disparity = lkp.x - rkp.x;
            if disparity < 0.0 {
                continue;
            }
            let d = distance(&ld[i].values, &rd[j].values);
            if best.map_or(true, |(bd, _)| d < bd) {
                best = Some((d, j));
            }
        }
        if let Some((_, j)) = best {
            out.push(StereoMatch {
                left: i,
                right: j,
                disparity: lk[i].x - rk[j].x,
            });
        }
    }
    out
}

/// Rectified stereo rig parameters.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct StereoCalib {
    pub focal_px: f64,
    pub baseline_m: f64,
    pub cx: f64,
    pub cy: f64,
}

/// Axis-aligned 3-D cell lattice, evaluated at several cell sizes.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct CellGrid {
    pub cell_sizes_m: Vec<f64>,
    pub min_votes: usize,
}

impl Default for CellGrid {
    fn default() -> Self {
        CellGrid {
            cell_sizes_m: vec![0.25, 0.5, 1.0],
            min_votes: 5,
        }
    }
}

/// Triangulates the stereo matches, votes each 3-D point into every cell
/// lattice, and reprojects the eight corners of each cell that reached
/// `min_votes` into the left image; the corners' bounding window becomes a
/// proposal.
pub fn depth_grid_proposals(
    matches: &[StereoMatch],
    left_keypoints: &[Keypoint],
    calib: &StereoCalib,
    grid: &CellGrid,
    img_width: u32,
    img_height: u32,
) -> Result<Vec<Window>> {
    if calib.focal_px <= 0.0 || calib.baseline_m <= 0.0 {
        return Err(Error::Degenerate(format!(
            "stereo calibration needs positive focal ({}) and baseline ({})",
            calib.focal_px, calib.baseline_m
        )));
    }

    let mut points = Vec::new();
    for m in matches {
        if m.disparity <= 0.0 {
            continue;
        }
        let kp = &left_keypoints[m.left];
        let z = calib.focal_px * calib.baseline_m / m.disparity as f64;
        let x = (kp.x as f64 - calib.cx) * z / calib.focal_px;
        let y = (kp.y as f64 - calib.cy) * z / calib.focal_px;
        points.push((x, y, z));
    }

    let mut proposals = Vec::new();
    for (size_idx, &s) in grid.cell_sizes_m.iter().enumerate() {
        let mut cells: std::collections::BTreeMap<(i64, i64, i64), usize> =
            std::collections::BTreeMap::new();
        for &(x, y, z) in &points {
            let key = (
                (x / s).floor() as i64,
                (y / s).floor() as i64,
                (z / s).floor() as i64,
            );
            *cells.entry(key).or_insert(0) += 1;
        }
        let _ = size_idx;
        for (&(ix, iy, iz), &votes) in &cells {
            if votes < grid.min_votes {
                continue;
            }
            let mut u0 = f64::INFINITY;
            let mut v0 = f64::INFINITY;
            let mut u1 = f64::NEG_INFINITY;
            let mut v1 = f64::NEG_INFINITY;
            for dz in 0..2 {
                for dy in 0..2 {
                    for dx in 0..2 {
                        let x = (ix + dx) as f64 * s;
                        let y = (iy + dy) as f64 * s;
                        let z = ((iz + dz) as f64 * s).max(1e-3);
                        let u = calib.focal_px * x / z + calib.cx;
                        let v = calib.focal_px * y / z + calib.cy;
                        u0 = u0.min(u);
                        v0 = v0.min(v);
                        u1 = u1.max(u);
                        v1 = v1.max(v);
                    }
                }
            }
            let x0 = u0.floor().clamp(0.0, img_width as f64 - 1.0) as u32;
            let y0 = v0.floor().clamp(0.0, img_height as f64 - 1.0) as u32;
            let x1 = u1.ceil().clamp(1.0, img_width as f64) as u32;
            let y1 = v1.ceil().clamp(1.0, img_height as f64) as u32;
            if let Ok(w) = Window::new(x0, y0, x1, y1) {
                proposals.push(w);
            }
        }
    }
    Ok(proposals)
}

#[cfg(test)]
mod tests;
