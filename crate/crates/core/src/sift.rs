//! Single-view object recognition: descriptor matches are clustered in pose
//! space with a generalized Hough transform, each cluster's affine transform
//! is estimated by least squares, then verified with RANSAC, refined with
//! iteratively reweighted least squares, and finally screened by plausibility
//! heuristics before the model outline is projected into the test image.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::features::{self, Descriptor, Keypoint, ScaleSpaceConfig};
use crate::imaging::{BoundingBox, Image};
use crate::matching::{build_index, match_descriptors, DescriptorSet, KdForest, Match, MatchConfig, MatchTarget};
use crate::Detection;

/// One trained object: the features of a single good-quality training image.
#[derive(Debug, Clone)]
pub struct ObjectModel {
    pub model_id: u32,
    pub class: String,
    pub width: u32,
    pub height: u32,
    pub keypoints: Vec<Keypoint>,
    pub descriptors: Vec<Descriptor>,
}

impl ObjectModel {
    /// Extracts features from one training image. At least three keypoints
    /// are required to ever support an affine hypothesis.
    pub fn from_image(
        model_id: u32,
        class: impl Into<String>,
        img: &Image,
        cfg: &ScaleSpaceConfig,
    ) -> Result<Self> {
        let (keypoints, descriptors) = features::extract(img, cfg);
        if keypoints.len() < 3 {
            return Err(Error::InsufficientData(format!(
                "training image yielded {} keypoints, need >= 3",
                keypoints.len()
            )));
        }
        Ok(ObjectModel {
            model_id,
            class: class.into(),
            width: img.width(),
            height: img.height(),
            keypoints,
            descriptors,
        })
    }

    fn center(&self) -> (f64, f64) {
        (self.width as f64 / 2.0, self.height as f64 / 2.0)
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct HoughConfig {
    /// Location bin size as a fraction of the larger model dimension.
    pub location_bin_frac: f64,
    /// Orientation bin width in radians.
    pub orientation_bin: f64,
    /// Scale bins are powers of this base.
    pub scale_bin_base: f64,
    /// Minimum votes for a pose bin to become a hypothesis.
    pub min_votes: usize,
    /// Keep only bins that are local maxima in the 4-d bin lattice.
    pub nms: bool,
}

impl Default for HoughConfig {
    fn default() -> Self {
        HoughConfig {
            location_bin_frac: 0.25,
            orientation_bin: 30f64.to_radians(),
            scale_bin_base: 2.0,
            min_votes: 5,
            nms: true,
        }
    }
}

/// 2x2 linear map plus translation, model coordinates to image coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineTransform {
    pub a: [[f64; 2]; 2],
    pub t: [f64; 2],
}

impl AffineTransform {
    pub fn identity() -> Self {
        AffineTransform {
            a: [[1.0, 0.0], [0.0, 1.0]],
            t: [0.0, 0.0],
        }
    }

    pub fn similarity(scale: f64, angle: f64, tx: f64, ty: f64) -> Self {
        let (s, c) = angle.sin_cos();
        AffineTransform {
            a: [[scale * c, -scale * s], [scale * s, scale * c]],
            t: [tx, ty],
        }
    }

    #[inline]
    pub fn apply(&self, p: (f64, f64)) -> (f64, f64) {
        (
            self.a[0][0] * p.0 + self.a[0][1] * p.1 + self.t[0],
            self.a[1][0] * p.0 + self.a[1][1] * p.1 + self.t[1],
        )
    }

    pub fn determinant(&self) -> f64 {
        self.a[0][0] * self.a[1][1] - self.a[0][1] * self.a[1][0]
    }

    pub fn inverse(&self) -> Option<AffineTransform> {
        let det = self.determinant();
        if det.abs() < 1e-12 {
            return None;
        }
        let inv = [
            [self.a[1][1] / det, -self.a[0][1] / det],
            [-self.a[1][0] / det, self.a[0][0] / det],
        ];
        Some(AffineTransform {
            a: inv,
            t: [
                -(inv[0][0] * self.t[0] + inv[0][1] * self.t[1]),
                -(inv[1][0] * self.t[0] + inv[1][1] * self.t[1]),
            ],
        })
    }

    /// Singular values of the linear part, largest first: the scale factors
    /// along the transform's principal axes.
    pub fn singular_values(&self) -> (f64, f64) {
        let [[a, b], [c, d]] = self.a;
        let trace = a * a + b * b + c * c + d * d;
        let det = (a * d - b * c).abs();
        let disc = (trace * trace - 4.0 * det * det).max(0.0).sqrt();
        let s1 = ((trace + disc) / 2.0).sqrt();
        let s2 = ((trace - disc) / 2.0).max(0.0).sqrt();
        (s1, s2)
    }

    /// `min(sx, sy) / max(sx, sy)` of the axis scale factors.
    pub fn axis_scale_ratio(&self) -> f64 {
        let (s1, s2) = self.singular_values();
        if s1 == 0.0 {
            0.0
        } else {
            s2 / s1
        }
    }

    /// Axis-aligned bounds of the projected `w x h` model outline.
    pub fn project_outline(&self, w: u32, h: u32) -> Result<BoundingBox> {
        let corners = [
            self.apply((0.0, 0.0)),
            self.apply((w as f64, 0.0)),
            self.apply((0.0, h as f64)),
            self.apply((w as f64, h as f64)),
        ];
        let xs: Vec<f64> = corners.iter().map(|c| c.0).collect();
        let ys: Vec<f64> = corners.iter().map(|c| c.1).collect();
        let x_min = xs.iter().cloned().fold(f64::INFINITY, f64::min);
        let x_max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let y_min = ys.iter().cloned().fold(f64::INFINITY, f64::min);
        let y_max = ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        BoundingBox::new(
            x_min.floor() as i32,
            y_min.floor() as i32,
            (x_max.ceil() as i32).max(x_min.floor() as i32 + 1),
            (y_max.ceil() as i32).max(y_min.floor() as i32 + 1),
        )
    }
}

/// One model-to-image point pair supporting a hypothesis.
#[derive(Debug, Clone, Copy)]
pub struct Correspondence {
    pub model: (f64, f64),
    pub image: (f64, f64),
    pub match_index: usize,
}

/// Candidate object pose with its supporting matches.
#[derive(Debug, Clone)]
pub struct Hypothesis {
    pub model_id: u32,
    pub transform: AffineTransform,
    pub support: Vec<Correspondence>,
    pub bbox: BoundingBox,
    /// Inlier count.
    pub score: usize,
}

impl Hypothesis {
    fn from_fit(
        model_id: u32,
        transform: AffineTransform,
        support: Vec<Correspondence>,
        model_w: u32,
        model_h: u32,
    ) -> Result<Hypothesis> {
        if transform.determinant().abs() <= 1e-9 {
            return Err(Error::Degenerate("singular pose transform".into()));
        }
        let bbox = transform.project_outline(model_w, model_h)?;
        let score = support.len();
        Ok(Hypothesis {
            model_id,
            transform,
            support,
            bbox,
            score,
        })
    }
}

// ---------------------------------------------------------------------------
// Pose clustering.
// ---------------------------------------------------------------------------

/// Clusters matches by the similarity transform each keypoint pair implies,
/// voting in a 4-d (x, y, orientation, log-scale) lattice. Every match votes
/// for the two nearest bins in each dimension. Bins reaching `min_votes`
/// (optionally only those that are local maxima) are fit with least squares
/// and returned as hypotheses.
pub fn hough_cluster(
    matches: &[Match],
    query_keypoints: &[Keypoint],
    model: &ObjectModel,
    cfg: &HoughConfig,
) -> Vec<Hypothesis> {
    let loc_bin = cfg.location_bin_frac * model.width.max(model.height) as f64;
    let orient_bins = (2.0 * std::f64::consts::PI / cfg.orientation_bin).round() as i64;
    let log_base = cfg.scale_bin_base.ln();
    let center = model.center();

    let mut bins: BTreeMap<(i64, i64, i64, i64), Vec<usize>> = BTreeMap::new();
    for (mi, m) in matches.iter().enumerate() {
        if m.model_id != model.model_id {
            continue;
        }
        let mk = model.keypoints[m.model_keypoint as usize];
        let qk = query_keypoints[m.query_index];

        let dtheta =
            ((qk.orientation - mk.orientation) as f64).rem_euclid(2.0 * std::f64::consts::PI);
        let scale = (qk.scale / mk.scale) as f64;
        let (sin_t, cos_t) = dtheta.sin_cos();
        let ox = center.0 - mk.x as f64;
        let oy = center.1 - mk.y as f64;
        let px = qk.x as f64 + scale * (cos_t * ox - sin_t * oy);
        let py = qk.y as f64 + scale * (sin_t * ox + cos_t * oy);

        let vote = |z: f64| -> [i64; 2] {
            let b = z.floor();
            let second = if z - b > 0.5 { b + 1.0 } else { b - 1.0 };
            [b as i64, second as i64]
        };
        let xs = vote(px / loc_bin);
        let ys = vote(py / loc_bin);
        let ts = vote(dtheta / cfg.orientation_bin);
        let ss = vote(scale.ln() / log_base);
        for &bx in &xs {
            for &by in &ys {
                for &bt in &ts {
                    for &bs in &ss {
                        let key = (bx, by, bt.rem_euclid(orient_bins), bs);
                        bins.entry(key).or_default().push(mi);
                    }
                }
            }
        }
    }

    let qualifying: Vec<(&(i64, i64, i64, i64), &Vec<usize>)> = bins
        .iter()
        .filter(|(_, v)| v.len() >= cfg.min_votes)
        .collect();

    let mut hypotheses = Vec::new();
    for (key, members) in qualifying {
        if cfg.nms && !is_local_max(&bins, key, members.len(), orient_bins) {
            continue;
        }
        let support: Vec<Correspondence> = members
            .iter()
            .map(|&mi| {
                let m = &matches[mi];
                let mk = model.keypoints[m.model_keypoint as usize];
                let qk = query_keypoints[m.query_index];
                Correspondence {
                    model: (mk.x as f64, mk.y as f64),
                    image: (qk.x as f64, qk.y as f64),
                    match_index: mi,
                }
            })
            .collect();
        let Ok(transform) = fit_affine_least_squares(&support) else {
            continue;
        };
        if let Ok(h) =
            Hypothesis::from_fit(model.model_id, transform, support, model.width, model.height)
        {
            hypotheses.push(h);
        }
    }
    hypotheses
}

/// A bin survives only if no 3^4 - 1 lattice neighbor outvotes it; equal
/// counts go to the lexicographically smallest bin key.
fn is_local_max(
    bins: &BTreeMap<(i64, i64, i64, i64), Vec<usize>>,
    key: &(i64, i64, i64, i64),
    count: usize,
    orient_bins: i64,
) -> bool {
    for dx in -1..=1i64 {
        for dy in -1..=1i64 {
            for dt in -1..=1i64 {
                for ds in -1..=1i64 {
                    if dx == 0 && dy == 0 && dt == 0 && ds == 0 {
                        continue;
                    }
                    let nkey = (
                        key.0 + dx,
                        key.1 + dy,
                        (key.2 + dt).rem_euclid(orient_bins),
                        key.3 + ds,
                    );
                    if let Some(v) = bins.get(&nkey) {
                        if v.len() > count || (v.len() == count && nkey < *key) {
                            return false;
                        }
                    }
                }
            }
        }
    }
    true
}

// ---------------------------------------------------------------------------
// Affine estimation: least squares, IRLS, RANSAC.
// ---------------------------------------------------------------------------

fn solve3(m: [[f64; 3]; 3], b: [f64; 3]) -> Option<[f64; 3]> {
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    if det.abs() < 1e-9 {
        return None;
    }
    let mut out = [0.0; 3];
    for (col, o) in out.iter_mut().enumerate() {
        let mut mm = m;
        for row in 0..3 {
            mm[row][col] = b[row];
        }
        let d = mm[0][0] * (mm[1][1] * mm[2][2] - mm[1][2] * mm[2][1])
            - mm[0][1] * (mm[1][0] * mm[2][2] - mm[1][2] * mm[2][0])
            + mm[0][2] * (mm[1][0] * mm[2][1] - mm[1][1] * mm[2][0]);
        *o = d / det;
    }
    Some(out)
}

/// Minimizes the summed squared reprojection error over the six affine
/// parameters; exact at three non-collinear points.
pub fn fit_affine_least_squares(correspondences: &[Correspondence]) -> Result<AffineTransform> {
    fit_affine_weighted(correspondences, None)
}

/// Weighted variant used by the IRLS refinement. `weights`, when given,
/// must parallel `correspondences`.
pub fn fit_affine_weighted(
    correspondences: &[Correspondence],
    weights: Option<&[f64]>,
) -> Result<AffineTransform> {
    if correspondences.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "affine fit needs >= 3 correspondences, got {}",
            correspondences.len()
        )));
    }
    let mut n = [[0.0f64; 3]; 3];
    let mut bu = [0.0f64; 3];
    let mut bv = [0.0f64; 3];
    for (i, c) in correspondences.iter().enumerate() {
        let w = weights.map_or(1.0, |ws| ws[i]);
        if w == 0.0 {
            continue;
        }
        let (x, y) = c.model;
        let (u, v) = c.image;
        let row = [x, y, 1.0];
        for r in 0..3 {
            for cc in 0..3 {
                n[r][cc] += w * row[r] * row[cc];
            }
            bu[r] += w * row[r] * u;
            bv[r] += w * row[r] * v;
        }
    }
    let pu = solve3(n, bu).ok_or_else(|| {
        Error::Degenerate("collinear or weight-collapsed correspondences".into())
    })?;
    let pv = solve3(n, bv)
        .ok_or_else(|| Error::Degenerate("collinear or weight-collapsed correspondences".into()))?;
    Ok(AffineTransform {
        a: [[pu[0], pu[1]], [pv[0], pv[1]]],
        t: [pu[2], pv[2]],
    })
}

fn residual(t: &AffineTransform, c: &Correspondence) -> f64 {
    let (u, v) = t.apply(c.model);
    ((u - c.image.0).powi(2) + (v - c.image.1).powi(2)).sqrt()
}

/// Tukey bisquare cutoff in units of the robust scale estimate.
const TUKEY_C: f64 = 4.685;
/// Robust scale floor in pixels, so clean supports keep unit weights.
const SCALE_FLOOR: f64 = 0.1;

fn tukey_weight(r: f64, cutoff: f64) -> f64 {
    if r >= cutoff {
        0.0
    } else {
        let u = 1.0 - (r / cutoff) * (r / cutoff);
        u * u
    }
}

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct IrlsConfig {
    pub max_iters: usize,
    /// Stop when no parameter moves more than this between iterations.
    pub tol: f64,
}

impl Default for IrlsConfig {
    fn default() -> Self {
        IrlsConfig {
            max_iters: 20,
            tol: 1e-3,
        }
    }
}

/// Iteratively reweighted least squares with Tukey bisquare weights. The
/// robust scale is `1.4826 x median absolute residual`, re-estimated each
/// iteration so the cutoff contracts as the fit sheds outliers. The returned
/// hypothesis keeps only the correspondences with nonzero final weight.
pub fn refine_irls(hyp: &Hypothesis, cfg: &IrlsConfig, model_dims: (u32, u32)) -> Result<Hypothesis> {
    refine_irls_traced(hyp, cfg, model_dims, None)
}

fn robust_cutoff(residuals: &[f64]) -> f64 {
    let mut sorted = residuals.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mad = sorted[sorted.len() / 2];
    TUKEY_C * (1.4826 * mad).max(SCALE_FLOOR)
}

/// As [`refine_irls`], optionally recording the weighted residual sum before
/// and after each reweighted solve. Each solve minimizes exactly that sum for
/// the current weights, so `after <= before` holds per iteration.
pub fn refine_irls_traced(
    hyp: &Hypothesis,
    cfg: &IrlsConfig,
    model_dims: (u32, u32),
    mut loss_trace: Option<&mut Vec<(f64, f64)>>,
) -> Result<Hypothesis> {
    if hyp.support.len() < 3 {
        return Err(Error::InsufficientData("IRLS needs support >= 3".into()));
    }
    let mut transform = hyp.transform;
    let mut residuals: Vec<f64> = hyp.support.iter().map(|c| residual(&transform, c)).collect();
    let mut cutoff = robust_cutoff(&residuals);

    let mut weights = vec![0.0f64; hyp.support.len()];
    for _ in 0..cfg.max_iters {
        for (w, r) in weights.iter_mut().zip(&residuals) {
            *w = tukey_weight(*r, cutoff);
        }
        let live = weights.iter().filter(|&&w| w > 0.0).count();
        if live < 3 || weights.iter().sum::<f64>() < 1e-12 {
            return Err(Error::RefinementFailed(
                "all correspondence weights collapsed".into(),
            ));
        }
        let before: f64 = weights
            .iter()
            .zip(&residuals)
            .map(|(w, r)| w * r * r)
            .sum();
        let next = fit_affine_weighted(&hyp.support, Some(&weights))
            .map_err(|e| Error::RefinementFailed(e.to_string()))?;

        let delta = max_param_delta(&transform, &next);
        transform = next;
        for (r, c) in residuals.iter_mut().zip(&hyp.support) {
            *r = residual(&transform, c);
        }
        if let Some(trace) = loss_trace.as_deref_mut() {
            let after: f64 = weights
                .iter()
                .zip(&residuals)
                .map(|(w, r)| w * r * r)
                .sum();
            trace.push((before, after));
        }
        cutoff = robust_cutoff(&residuals);
        if delta < cfg.tol {
            break;
        }
    }

    let support: Vec<Correspondence> = hyp
        .support
        .iter()
        .zip(&residuals)
        .filter(|(_, &r)| r < cutoff)
        .map(|(c, _)| *c)
        .collect();
    if support.len() < 3 {
        return Err(Error::RefinementFailed(
            "fewer than 3 inliers after reweighting".into(),
        ));
    }
    Hypothesis::from_fit(hyp.model_id, transform, support, model_dims.0, model_dims.1)
}

fn max_param_delta(a: &AffineTransform, b: &AffineTransform) -> f64 {
    let mut d: f64 = 0.0;
    for r in 0..2 {
        for c in 0..2 {
            d = d.max((a.a[r][c] - b.a[r][c]).abs());
        }
        d = d.max((a.t[r] - b.t[r]).abs());
    }
    d
}

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct RansacConfig {
    pub iters: usize,
    /// Inlier reprojection threshold in pixels.
    pub inlier_px: f64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        RansacConfig {
            iters: 200,
            inlier_px: 3.0,
        }
    }
}

/// Hypothesize-and-verify over minimal 3-point samples. The best consensus
/// set replaces the support when it reaches `min_inliers`; otherwise the
/// hypothesis is rejected (`None`).
pub fn verify_ransac(
    hyp: &Hypothesis,
    cfg: &RansacConfig,
    min_inliers: usize,
    model_dims: (u32, u32),
    seed: u64,
) -> Option<Hypothesis> {
    let n = hyp.support.len();
    if n < 3 {
        return None;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best_count = 0usize;
    let mut best: Option<AffineTransform> = None;

    for _ in 0..cfg.iters {
        let mut idx = [0usize; 3];
        idx[0] = rng.gen_range(0..n);
        loop {
            idx[1] = rng.gen_range(0..n);
            if idx[1] != idx[0] {
                break;
            }
        }
        loop {
            idx[2] = rng.gen_range(0..n);
            if idx[2] != idx[0] && idx[2] != idx[1] {
                break;
            }
        }
        let sample = [hyp.support[idx[0]], hyp.support[idx[1]], hyp.support[idx[2]]];
        let Ok(t) = fit_affine_least_squares(&sample) else {
            continue;
        };
        let count = hyp
            .support
            .iter()
            .filter(|c| residual(&t, c) <= cfg.inlier_px)
            .count();
        if count > best_count {
            best_count = count;
            best = Some(t);
        }
    }

    let t = best?;
    if best_count < min_inliers {
        return None;
    }
    let consensus: Vec<Correspondence> = hyp
        .support
        .iter()
        .filter(|c| residual(&t, c) <= cfg.inlier_px)
        .copied()
        .collect();
    let refit = fit_affine_least_squares(&consensus).ok()?;
    let final_support: Vec<Correspondence> = hyp
        .support
        .iter()
        .filter(|c| residual(&refit, c) <= cfg.inlier_px)
        .copied()
        .collect();
    if final_support.len() < min_inliers {
        return None;
    }
    Hypothesis::from_fit(hyp.model_id, refit, final_support, model_dims.0, model_dims.1).ok()
}

// ---------------------------------------------------------------------------
// Plausibility heuristics.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct HeuristicConfig {
    /// Same-model hypotheses with centers closer than this keep only the
    /// highest-scoring one.
    pub min_center_separation: f64,
    /// Hypotheses whose axis scale ratio falls below this are discarded as
    /// implausibly stretched.
    pub min_axis_ratio: f64,
}

impl Default for HeuristicConfig {
    fn default() -> Self {
        HeuristicConfig {
            min_center_separation: 20.0,
            min_axis_ratio: 0.2,
        }
    }
}

/// Removes over-stretched hypotheses, then resolves same-model center
/// collisions in favor of the highest score.
pub fn apply_heuristics(hypotheses: Vec<Hypothesis>, cfg: &HeuristicConfig) -> Vec<Hypothesis> {
    let mut candidates: Vec<(usize, Hypothesis)> = hypotheses
        .into_iter()
        .filter(|h| h.transform.axis_scale_ratio() >= cfg.min_axis_ratio)
        .enumerate()
        .collect();
    // Highest score wins a collision; ties keep the earlier hypothesis.
    candidates.sort_by(|(ia, a), (ib, b)| b.score.cmp(&a.score).then(ia.cmp(ib)));

    let mut kept: Vec<(usize, Hypothesis)> = Vec::new();
    'outer: for (idx, h) in candidates {
        let (cx, cy) = h.bbox.center();
        for (_, k) in &kept {
            if k.model_id != h.model_id {
                continue;
            }
            let (kx, ky) = k.bbox.center();
            if ((cx - kx).powi(2) + (cy - ky).powi(2)).sqrt() < cfg.min_center_separation {
                continue 'outer;
            }
        }
        kept.push((idx, h));
    }
    kept.sort_by_key(|(idx, _)| *idx);
    kept.into_iter().map(|(_, h)| h).collect()
}

// ---------------------------------------------------------------------------
// End-to-end pipeline.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct SiftPipelineConfig {
    pub features: ScaleSpaceConfig,
    pub matching: MatchConfig,
    pub hough: HoughConfig,
    pub use_ransac: bool,
    pub use_irls: bool,
    pub use_heuristics: bool,
    pub ransac: RansacConfig,
    pub irls: IrlsConfig,
    pub heuristics: HeuristicConfig,
    pub seed: u64,
}

impl Default for SiftPipelineConfig {
    fn default() -> Self {
        SiftPipelineConfig {
            features: ScaleSpaceConfig::default(),
            matching: MatchConfig::default(),
            hough: HoughConfig::default(),
            use_ransac: true,
            use_irls: true,
            use_heuristics: true,
            ransac: RansacConfig::default(),
            irls: IrlsConfig::default(),
            heuristics: HeuristicConfig::default(),
            seed: 0,
        }
    }
}

/// Immutable model store shared across detections: the concatenated
/// descriptor database plus an optional approximate index over it.
pub struct ModelDatabase {
    pub models: Vec<ObjectModel>,
    descriptors: DescriptorSet,
    index: Option<KdForest>,
}

impl ModelDatabase {
    /// `model_id`s are reassigned to positional indices.
    pub fn build(mut models: Vec<ObjectModel>, approx: bool, seed: u64) -> Result<Self> {
        if models.is_empty() {
            return Err(Error::InsufficientData("no object models".into()));
        }
        let mut descriptors = DescriptorSet::new(features::DESCRIPTOR_DIM);
        for (i, m) in models.iter_mut().enumerate() {
            m.model_id = i as u32;
            descriptors.extend_from_descriptors(&m.descriptors, i as u32);
        }
        let index = if approx {
            Some(build_index(&descriptors, seed)?)
        } else {
            None
        };
        Ok(ModelDatabase {
            models,
            descriptors,
            index,
        })
    }

    pub fn target(&self) -> MatchTarget<'_> {
        match &self.index {
            Some(index) => MatchTarget::Indexed {
                db: &self.descriptors,
                index,
            },
            None => MatchTarget::Exhaustive(&self.descriptors),
        }
    }
}

/// Full pipeline on a single image. Deterministic given the image, models,
/// config and seed.
pub fn detect(img: &Image, db: &ModelDatabase, cfg: &SiftPipelineConfig) -> Result<Vec<Detection>> {
    let (keypoints, descriptors) = features::extract(img, &cfg.features);
    detect_with_features(&keypoints, &descriptors, db, cfg)
}

/// Pipeline stages downstream of feature extraction, for callers that cache
/// features per image.
pub fn detect_with_features(
    keypoints: &[Keypoint],
    descriptors: &[Descriptor],
    db: &ModelDatabase,
    cfg: &SiftPipelineConfig,
) -> Result<Vec<Detection>> {
    if keypoints.is_empty() {
        return Ok(Vec::new());
    }
    let query = DescriptorSet::from_descriptors(descriptors, u32::MAX);
    let matches = match_descriptors(&query, db.target(), &cfg.matching)?;

    let mut all = Vec::new();
    for model in &db.models {
        let clusters = hough_cluster(&matches, keypoints, model, &cfg.hough);
        for (hi, hyp) in clusters.into_iter().enumerate() {
            let mut hyp = hyp;
            if cfg.use_ransac {
                let seed = cfg
                    .seed
                    .wrapping_add(model.model_id as u64 * 0x9e37_79b9)
                    .wrapping_add(hi as u64);
                match verify_ransac(
                    &hyp,
                    &cfg.ransac,
                    cfg.hough.min_votes,
                    (model.width, model.height),
                    seed,
                ) {
                    Some(h) => hyp = h,
                    None => continue,
                }
            }
            if cfg.use_irls {
                match refine_irls(&hyp, &cfg.irls, (model.width, model.height)) {
                    Ok(h) => hyp = h,
                    Err(_) => continue,
                }
            }
            all.push(hyp);
        }
    }

    if cfg.use_heuristics {
        all = apply_heuristics(all, &cfg.heuristics);
    }

    Ok(all
        .into_iter()
        .map(|h| Detection {
            class: db.models[h.model_id as usize].class.clone(),
            bbox: h.bbox,
            score: h.score as f64,
        })
        .collect())
}

#[cfg(test)]
mod tests;
