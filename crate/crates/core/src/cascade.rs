//! Boosted attentional cascade: rectangular contrast features evaluated in
//! constant time from integral images, decision stumps selected by AdaBoost,
//! and stages ordered so cheap early rejections dominate the window scan.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::imaging::{
    gaussian_blur, integral_build, integral_build_squared, resize_bilinear, Image, IntegralImage,
    Window,
};
use crate::Detection;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum HaarKind {
    /// Two stacked rectangles (horizontal dividing line): horizontal edges.
    TwoRectH,
    /// Two side-by-side rectangles (vertical dividing line): vertical edges.
    TwoRectV,
    /// Three side-by-side rectangles weighted +1/-2/+1: bar features.
    ThreeRectH,
    /// Four-quadrant checker, +1/-1/-1/+1: diagonal structure.
    FourRectChecker,
}

impl HaarKind {
    /// (columns, rows) the extent divides into.
    fn parts(self) -> (u32, u32) {
        match self {
            HaarKind::TwoRectH => (1, 2),
            HaarKind::TwoRectV => (2, 1),
            HaarKind::ThreeRectH => (3, 1),
            HaarKind::FourRectChecker => (2, 2),
        }
    }

    fn weights(self) -> &'static [i64] {
        match self {
            HaarKind::TwoRectH => &[1, -1],
            HaarKind::TwoRectV => &[1, -1],
            HaarKind::ThreeRectH => &[1, -2, 1],
            HaarKind::FourRectChecker => &[1, -1, -1, 1],
        }
    }

    fn tag(self) -> &'static str {
        match self {
            HaarKind::TwoRectH => "2h",
            HaarKind::TwoRectV => "2v",
            HaarKind::ThreeRectH => "3h",
            HaarKind::FourRectChecker => "4c",
        }
    }

    fn from_tag(tag: &str) -> Option<HaarKind> {
        Some(match tag {
            "2h" => HaarKind::TwoRectH,
            "2v" => HaarKind::TwoRectV,
            "3h" => HaarKind::ThreeRectH,
            "4c" => HaarKind::FourRectChecker,
            _ => return None,
        })
    }
}

/// One rectangular contrast feature, positioned in base-window coordinates.
/// The extent divides into equal parts whose signed weights sum to zero, so
/// the raw response on any constant patch is exactly zero at every scale.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct HaarFeature {
    pub kind: HaarKind,
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl HaarFeature {
    /// Raw signed rectangle sum inside `window`, scaled from the base
    /// geometry. Integer-exact: the scaled extent is re-partitioned into
    /// equal parts, so cancellation on flat patches survives rounding.
    pub fn eval_raw(
        &self,
        ii: &IntegralImage,
        window: &Window,
        base: (u32, u32),
    ) -> Result<i64> {
        let sx = window.width() as f64 / base.0 as f64;
        let sy = window.height() as f64 / base.1 as f64;
        let (cols, rows) = self.kind.parts();
        let x0 = window.x0() + (self.x as f64 * sx).floor() as u32;
        let y0 = window.y0() + (self.y as f64 * sy).floor() as u32;
        let part_w = (self.w as f64 * sx).floor() as u32 / cols;
        let part_h = (self.h as f64 * sy).floor() as u32 / rows;
        if part_w == 0 || part_h == 0 {
            return Err(Error::Degenerate(format!(
                "feature {}x{} vanishes at scale {sx:.3}x{sy:.3}",
                self.w, self.h
            )));
        }
        if x0 + cols * part_w > window.x1() || y0 + rows * part_h > window.y1() {
            return Err(Error::OutOfBounds {
                x0,
                y0,
                x1: x0 + cols * part_w,
                y1: y0 + rows * part_h,
                width: window.x1(),
                height: window.y1(),
            });
        }

        let weights = self.kind.weights();
        let mut acc = 0i64;
        let mut part = 0usize;
        for r in 0..rows {
            for c in 0..cols {
                let rect = Window::new(
                    x0 + c * part_w,
                    y0 + r * part_h,
                    x0 + (c + 1) * part_w,
                    y0 + (r + 1) * part_h,
                )
                .expect("nonzero part");
                let sum = crate::imaging::rect_sum(ii, &rect)? as i64;
                acc += weights[part] * sum;
                part += 1;
            }
        }
        Ok(acc)
    }
}

/// Feature response normalized by the window's intensity standard deviation
/// (from the plain and squared integral images) and by the window area
/// relative to the base, so thresholds learned at base scale transfer.
pub fn eval_haar(
    feature: &HaarFeature,
    ii: &IntegralImage,
    ii_sq: &IntegralImage,
    window: &Window,
    base: (u32, u32),
) -> Result<f64> {
    let raw = feature.eval_raw(ii, window, base)? as f64;
    let area = window.area() as f64;
    let sum = crate::imaging::rect_sum(ii, window)? as f64;
    let sum_sq = crate::imaging::rect_sum(ii_sq, window)? as f64;
    let mean = sum / area;
    let var = (sum_sq / area - mean * mean).max(0.0);
    let sigma = var.sqrt().max(1.0);
    let area_scale = area / (base.0 as f64 * base.1 as f64);
    Ok(raw / (sigma * area_scale))
}

/// Enumerates the feature pool for a base window: all four kinds, positions
/// and sizes on a `stride`-spaced lattice.
pub fn feature_pool(base_w: u32, base_h: u32, stride: u32) -> Vec<HaarFeature> {
    assert!(stride >= 1);
    let mut pool = Vec::new();
    for kind in [
        HaarKind::TwoRectH,
        HaarKind::TwoRectV,
        HaarKind::ThreeRectH,
        HaarKind::FourRectChecker,
    ] {
        let (cols, rows) = kind.parts();
        let min_w = cols * 2;
        let min_h = rows * 2;
        let mut w = min_w;
        while w <= base_w {
            let mut h = min_h;
            while h <= base_h {
                let mut y = 0;
                while y + h <= base_h {
                    let mut x = 0;
                    while x + w <= base_w {
                        pool.push(HaarFeature { kind, x, y, w, h });
                        x += stride;
                    }
                    y += stride;
                }
                h += stride * rows;
            }
            w += stride * cols;
        }
    }
    pool
}

/// Thresholded single-feature vote.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Stump {
    pub feature: HaarFeature,
    pub threshold: f64,
    /// +1 votes object when the response is >= threshold, -1 when below.
    pub polarity: i8,
    /// AdaBoost vote weight, non-negative.
    pub alpha: f64,
}

impl Stump {
    #[inline]
    fn fires(&self, response: f64) -> bool {
        if self.polarity >= 0 {
            response >= self.threshold
        } else {
            response < self.threshold
        }
    }

    /// +1/-1 vote on a normalized response.
    #[inline]
    pub fn vote(&self, response: f64) -> f64 {
        if self.fires(response) {
            1.0
        } else {
            -1.0
        }
    }
}

/// One boosted stage: pass when the weighted stump margin reaches the stage
/// threshold.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Stage {
    pub stumps: Vec<Stump>,
    pub threshold: f64,
    /// Detection rate achieved on the stage's positive training set.
    pub detection_rate: f64,
    /// False-positive rate achieved on the stage's negative training set.
    pub fp_rate: f64,
}

impl Stage {
    pub fn margin(
        &self,
        ii: &IntegralImage,
        ii_sq: &IntegralImage,
        window: &Window,
        base: (u32, u32),
    ) -> Result<f64> {
        let mut m = 0.0;
        for stump in &self.stumps {
            let r = eval_haar(&stump.feature, ii, ii_sq, window, base)?;
            m += stump.alpha * stump.vote(r);
        }
        Ok(m)
    }

    pub fn passes(
        &self,
        ii: &IntegralImage,
        ii_sq: &IntegralImage,
        window: &Window,
        base: (u32, u32),
    ) -> Result<bool> {
        Ok(self.margin(ii, ii_sq, window, base)? >= self.threshold)
    }
}

/// Ordered stages over a fixed base window; a window is accepted only if
/// every stage passes, and any rejection ends evaluation immediately.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Cascade {
    pub class: String,
    pub base_w: u32,
    pub base_h: u32,
    pub stages: Vec<Stage>,
}

impl Cascade {
    /// Early-exit evaluation. Returns the final-stage margin for accepted
    /// windows, `None` for rejected ones.
    pub fn evaluate(
        &self,
        ii: &IntegralImage,
        ii_sq: &IntegralImage,
        window: &Window,
    ) -> Result<Option<f64>> {
        let base = (self.base_w, self.base_h);
        let mut last = 0.0;
        for stage in &self.stages {
            let m = stage.margin(ii, ii_sq, window, base)?;
            if m < stage.threshold {
                return Ok(None);
            }
            last = m;
        }
        Ok(Some(last))
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct BoostConfig {
    /// Detection rate every stage must keep on its positives.
    pub min_detection_rate: f64,
    /// False-positive rate each stage must reach before it stops adding
    /// stumps.
    pub max_fp_rate: f64,
    pub max_stumps_per_stage: usize,
    pub max_stages: usize,
    /// Negative windows mined per stage.
    pub negative_pool_size: usize,
    /// Lattice spacing of the feature pool.
    pub pool_stride: u32,
    pub seed: u64,
}

impl Default for BoostConfig {
    fn default() -> Self {
        BoostConfig {
            min_detection_rate: 0.995,
            max_fp_rate: 0.5,
            max_stumps_per_stage: 50,
            max_stages: 10,
            negative_pool_size: 1000,
            pool_stride: 3,
            seed: 0,
        }
    }
}

/// Normalized feature responses of one training sample at base size.
struct SampleData {
    ii: IntegralImage,
    ii_sq: IntegralImage,
}

impl SampleData {
    fn new(img: &Image) -> SampleData {
        SampleData {
            ii: integral_build(img),
            ii_sq: integral_build_squared(img),
        }
    }

    fn response(&self, feature: &HaarFeature, base: (u32, u32)) -> f64 {
        let window = Window::new(0, 0, base.0, base.1).unwrap();
        eval_haar(feature, &self.ii, &self.ii_sq, &window, base).expect("base window response")
    }
}

/// Exhaustive best stump for the given sample weights: every (feature,
/// threshold, polarity) combination is scored by weighted error via a sorted
/// sweep. Returns the stump and its weighted error.
pub fn train_stump(
    responses: &[Vec<f64>],
    labels: &[bool],
    weights: &[f64],
    pool: &[HaarFeature],
) -> Result<(Stump, f64)> {
    let n = labels.len();
    if !labels.iter().any(|&l| l) || !labels.iter().any(|&l| !l) {
        return Err(Error::InsufficientData(
            "stump training needs both classes".into(),
        ));
    }
    let total_pos: f64 = weights
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l)
        .map(|(w, _)| w)
        .sum();
    let total_neg: f64 = weights
        .iter()
        .zip(labels)
        .filter(|(_, &l)| !l)
        .map(|(w, _)| w)
        .sum();

    let mut best: Option<(usize, f64, i8, f64)> = None; // (feature, thr, polarity, err)
    let mut order: Vec<u32> = (0..n as u32).collect();

    for (fi, feature_responses) in responses.iter().enumerate() {
        order.sort_unstable_by(|&a, &b| {
            feature_responses[a as usize]
                .total_cmp(&feature_responses[b as usize])
                .then(a.cmp(&b))
        });

        // Sweep thresholds between distinct sorted responses. `pos_below`
        // and `neg_below` track weight with response < candidate threshold.
        let mut pos_below = 0.0f64;
        let mut neg_below = 0.0f64;
        for k in 0..=n {
            let threshold = if k == 0 {
                feature_responses[order[0] as usize] - 1.0
            } else if k == n {
                feature_responses[order[n - 1] as usize] + 1.0
            } else {
                let lo = feature_responses[order[k - 1] as usize];
                let hi = feature_responses[order[k] as usize];
                if lo == hi {
                    // Not a distinct split: advance the accumulators and skip.
                    let i = order[k - 1] as usize;
                    if labels[i] {
                        pos_below += weights[i];
                    } else {
                        neg_below += weights[i];
                    }
                    continue;
                }
                (lo + hi) / 2.0
            };
            if k > 0 && k <= n {
                // Account the sample that just crossed below the threshold.
                let i = order[k - 1] as usize;
                if threshold > feature_responses[i] {
                    if labels[i] {
                        pos_below += weights[i];
                    } else {
                        neg_below += weights[i];
                    }
                }
            }
            // polarity +1: predict positive iff response >= threshold.
            let err_plus = pos_below + (total_neg - neg_below);
            // polarity -1: predict positive iff response < threshold.
            let err_minus = neg_below + (total_pos - pos_below);
            for (err, polarity) in [(err_plus, 1i8), (err_minus, -1i8)] {
                let better = match &best {
                    None => true,
                    Some((bfi, _, _, berr)) => {
                        err < *berr - 1e-15 || (err < *berr + 1e-15 && fi < *bfi)
                    }
                };
                if better {
                    best = Some((fi, threshold, polarity, err));
                }
            }
        }
    }

    let (fi, threshold, polarity, err) = best.expect("nonempty pool");
    Ok((
        Stump {
            feature: pool[fi],
            threshold,
            polarity,
            alpha: 0.0,
        },
        err.max(0.0),
    ))
}

/// Boosts stumps until the stage reaches its false-positive target (at a
/// threshold lowered to keep `min_detection_rate` of the positives) or the
/// stump budget runs out.
pub fn train_stage(
    positives: &[SampleVec],
    negatives: &[SampleVec],
    pool: &[HaarFeature],
    cfg: &BoostConfig,
) -> Result<Stage> {
    if positives.is_empty() || negatives.is_empty() {
        return Err(Error::InsufficientData(
            "stage training needs both classes".into(),
        ));
    }
    let n = positives.len() + negatives.len();
    let labels: Vec<bool> = (0..n).map(|i| i < positives.len()).collect();

    // responses[feature][sample]
    let mut responses: Vec<Vec<f64>> = vec![Vec::with_capacity(n); pool.len()];
    for (fi, feature_responses) in responses.iter_mut().enumerate() {
        for sample in positives.iter().chain(negatives) {
            feature_responses.push(sample.0[fi]);
        }
    }

    let mut weights = vec![1.0 / n as f64; n];
    let mut stumps: Vec<Stump> = Vec::new();
    let mut margins = vec![0.0f64; n];
    let mut stage_threshold = 0.0f64;

    loop {
        let (mut stump, err) = train_stump(&responses, &labels, &weights, pool)?;
        if err >= 0.5 {
            break;
        }
        let err = err.max(1e-10);
        stump.alpha = 0.5 * ((1.0 - err) / err).ln();

        // Reweight.
        let fi = pool.iter().position(|f| *f == stump.feature).unwrap();
        let mut sum = 0.0;
        for i in 0..n {
            let vote = stump.vote(responses[fi][i]);
            let y = if labels[i] { 1.0 } else { -1.0 };
            weights[i] *= (-stump.alpha * y * vote).exp();
            sum += weights[i];
            margins[i] += stump.alpha * vote;
        }
        for w in &mut weights {
            *w /= sum;
        }
        stumps.push(stump);

        // Stage threshold: the largest value keeping the detection target.
        let mut pos_margins: Vec<f64> = margins[..positives.len()].to_vec();
        pos_margins.sort_by(f64::total_cmp);
        let needed =
            ((cfg.min_detection_rate * positives.len() as f64).ceil() as usize).min(positives.len());
        stage_threshold = pos_margins[positives.len() - needed];

        let fp = margins[positives.len()..]
            .iter()
            .filter(|&&m| m >= stage_threshold)
            .count() as f64
            / negatives.len() as f64;
        if fp <= cfg.max_fp_rate || stumps.len() >= cfg.max_stumps_per_stage {
            break;
        }
    }

    if stumps.is_empty() {
        return Err(Error::InsufficientData(
            "no stump beat chance; classes are indistinguishable".into(),
        ));
    }

    let detection_rate = margins[..positives.len()]
        .iter()
        .filter(|&&m| m >= stage_threshold)
        .count() as f64
        / positives.len() as f64;
    let fp_rate = margins[positives.len()..]
        .iter()
        .filter(|&&m| m >= stage_threshold)
        .count() as f64
        / negatives.len() as f64;

    Ok(Stage {
        stumps,
        threshold: stage_threshold,
        detection_rate,
        fp_rate,
    })
}

/// Precomputed per-sample responses over the feature pool.
pub struct SampleVec(Vec<f64>);

fn precompute_responses(samples: &[Image], pool: &[HaarFeature], base: (u32, u32)) -> Vec<SampleVec> {
    samples
        .iter()
        .map(|img| {
            let data = SampleData::new(img);
            SampleVec(pool.iter().map(|f| data.response(f, base)).collect())
        })
        .collect()
}

pub struct CascadeTraining {
    pub cascade: Cascade,
    pub warnings: Vec<String>,
}

/// Trains the full cascade: each stage sees the positives that survive the
/// previous stages plus fresh false positives mined by scanning the negative
/// image pool through the current cascade.
pub fn train_cascade(
    class: impl Into<String>,
    positives: &[Image],
    negative_pool: &[Image],
    base: (u32, u32),
    cfg: &BoostConfig,
) -> Result<CascadeTraining> {
    let (base_w, base_h) = base;
    if positives.is_empty() {
        return Err(Error::InsufficientData("no positive windows".into()));
    }
    for p in positives {
        if p.width() != base_w || p.height() != base_h {
            return Err(Error::Config(format!(
                "positive window {}x{} does not match base {}x{}",
                p.width(),
                p.height(),
                base_w,
                base_h
            )));
        }
    }

    let pool = feature_pool(base_w, base_h, cfg.pool_stride);
    let mut warnings = Vec::new();
    let mut cascade = Cascade {
        class: class.into(),
        base_w,
        base_h,
        stages: Vec::new(),
    };

    let mut live_positive_images: Vec<Image> = positives.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    for stage_idx in 0..cfg.max_stages {
        let negatives = mine_negatives(
            &cascade,
            negative_pool,
            cfg.negative_pool_size,
            &mut rng,
        );
        if negatives.len() < 20 {
            warnings.push(format!(
                "stage {stage_idx}: only {} hard negatives available, stopping early",
                negatives.len()
            ));
            break;
        }
        let pos_responses = precompute_responses(&live_positive_images, &pool, base);
        let neg_responses = precompute_responses(&negatives, &pool, base);
        let stage = train_stage(&pos_responses, &neg_responses, &pool, cfg)?;

        // Drop positives the new stage rejects.
        let keep: Vec<bool> = pos_responses
            .iter()
            .map(|s| stage_margin_from_responses(&stage, &pool, s) >= stage.threshold)
            .collect();
        cascade.stages.push(stage);
        live_positive_images = live_positive_images
            .into_iter()
            .zip(&keep)
            .filter(|(_, &k)| k)
            .map(|(img, _)| img)
            .collect();
        if live_positive_images.len() < 3 {
            warnings.push(format!(
                "stage {stage_idx}: positives exhausted ({} left), stopping",
                live_positive_images.len()
            ));
            break;
        }
    }

    Ok(CascadeTraining { cascade, warnings })
}

fn stage_margin_from_responses(stage: &Stage, pool: &[HaarFeature], sample: &SampleVec) -> f64 {
    stage
        .stumps
        .iter()
        .map(|stump| {
            let fi = pool.iter().position(|f| *f == stump.feature).unwrap();
            stump.alpha * stump.vote(sample.0[fi])
        })
        .sum()
}

/// Scans the negative pool through the current cascade and returns windows
/// it (wrongly) accepts, resampled to base size. Deterministic for a fixed
/// generator state.
fn mine_negatives(
    cascade: &Cascade,
    pool_images: &[Image],
    want: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<Image> {
    let mut out = Vec::new();
    'outer: for _ in 0..40 {
        for img in pool_images {
            if img.width() < cascade.base_w || img.height() < cascade.base_h {
                continue;
            }
            let ii = integral_build(img);
            let ii_sq = integral_build_squared(img);
            // A handful of random windows per image per sweep.
            for _ in 0..32 {
                let max_scale = (img.width() as f64 / cascade.base_w as f64)
                    .min(img.height() as f64 / cascade.base_h as f64);
                let scale = rng.gen_range(1.0..max_scale.max(1.0001));
                let w = (cascade.base_w as f64 * scale) as u32;
                let h = (cascade.base_h as f64 * scale) as u32;
                let x = rng.gen_range(0..=img.width() - w);
                let y = rng.gen_range(0..=img.height() - h);
                let window = Window::new(x, y, x + w, y + h).unwrap();
                let accepted = cascade.stages.is_empty()
                    || cascade
                        .evaluate(&ii, &ii_sq, &window)
                        .ok()
                        .flatten()
                        .is_some();
                if accepted {
                    let crop = img.crop(&window).to_float();
                    out.push(resize_bilinear(&crop, cascade.base_w, cascade.base_h).to_u8());
                    if out.len() >= want {
                        break 'outer;
                    }
                }
            }
        }
    }
    out
}

/// Randomly perturbed copies of a training image: small rotation, scale and
/// shear, plus brightness/contrast jitter. Seed-deterministic.
pub fn synth_views(img: &Image, n: usize, seed: u64) -> Vec<Image> {
    assert!(n >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let src = img.to_float();
    let cx = img.width() as f32 / 2.0;
    let cy = img.height() as f32 / 2.0;
    let mean = img.mean() as f32 / 255.0;

    (0..n)
        .map(|_| {
            let angle: f32 = rng.gen_range(-15f32..15.0).to_radians();
            let scale: f32 = rng.gen_range(0.9..1.1);
            let shear: f32 = rng.gen_range(-0.1..0.1);
            let brightness: f32 = rng.gen_range(-0.1..0.1) * mean.max(0.05);
            let contrast: f32 = rng.gen_range(0.9..1.1);

            // Forward map: rotate, shear, scale about the center. Sample by
            // the inverse.
            let (s, c) = angle.sin_cos();
            let fwd = [
                [scale * (c + shear * s), scale * (shear * c - s)],
                [scale * s, scale * c],
            ];
            let det = fwd[0][0] * fwd[1][1] - fwd[0][1] * fwd[1][0];
            let inv = [
                [fwd[1][1] / det, -fwd[0][1] / det],
                [-fwd[1][0] / det, fwd[0][0] / det],
            ];

            let mut out = crate::imaging::ImageF::new(img.width(), img.height());
            for y in 0..img.height() {
                for x in 0..img.width() {
                    let dx = x as f32 - cx;
                    let dy = y as f32 - cy;
                    let sx = inv[0][0] * dx + inv[0][1] * dy + cx;
                    let sy = inv[1][0] * dx + inv[1][1] * dy + cy;
                    let v = src.sample_bilinear(sx, sy);
                    let v = mean + contrast * (v - mean) + brightness;
                    out.set(x, y, v.clamp(0.0, 1.0));
                }
            }
            out.to_u8()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct ScanConfig {
    /// Window growth factor between scan scales.
    pub scale_factor: f64,
    /// Scan step in pixels at base scale, scaled with the window.
    pub step: u32,
    /// Raw hits needed in a merged group before it becomes a detection.
    pub min_neighbors: usize,
}

impl Default for ScanConfig {
    fn default() -> Self {
        ScanConfig {
            scale_factor: 1.25,
            step: 2,
            min_neighbors: 2,
        }
    }
}

/// Sliding-window scan over all positions and scales. Overlapping raw hits
/// are merged; groups below `min_neighbors` are dropped. All detections keep
/// the base aspect ratio.
pub fn detect_cascade(img: &Image, cascade: &Cascade, scan: &ScanConfig) -> Vec<Detection> {
    let ii = integral_build(img);
    let ii_sq = integral_build_squared(img);

    struct Hit {
        window: Window,
        scale: f64,
        margin: f64,
    }

    let mut hits: Vec<Hit> = Vec::new();
    let mut scale = 1.0f64;
    loop {
        let w = (cascade.base_w as f64 * scale).round() as u32;
        let h = (cascade.base_h as f64 * scale).round() as u32;
        if w > img.width() || h > img.height() {
            break;
        }
        let step = ((scan.step as f64 * scale).round() as u32).max(1);
        let mut y = 0;
        while y + h <= img.height() {
            let mut x = 0;
            while x + w <= img.width() {
                let window = Window::new(x, y, x + w, y + h).unwrap();
                if let Ok(Some(margin)) = cascade.evaluate(&ii, &ii_sq, &window) {
                    hits.push(Hit {
                        window,
                        scale,
                        margin,
                    });
                }
                x += step;
            }
            y += step;
        }
        scale *= scan.scale_factor;
    }

    // Greedy grouping by mutual overlap with the group seed.
    let mut group_of = vec![usize::MAX; hits.len()];
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for i in 0..hits.len() {
        if group_of[i] != usize::MAX {
            continue;
        }
        let gi = groups.len();
        group_of[i] = gi;
        let mut members = vec![i];
        for (j, hit) in hits.iter().enumerate().skip(i + 1) {
            if group_of[j] != usize::MAX {
                continue;
            }
            let a = hits[i].window.to_bbox();
            let b = hit.window.to_bbox();
            if crate::imaging::overlap_ratio(&a, &b, false) >= 0.5 {
                group_of[j] = gi;
                members.push(j);
            }
        }
        groups.push(members);
    }

    let mut detections = Vec::new();
    for members in groups {
        if members.len() < scan.min_neighbors {
            continue;
        }
        let n = members.len() as f64;
        let cx = members
            .iter()
            .map(|&i| hits[i].window.x0() as f64 + hits[i].window.width() as f64 / 2.0)
            .sum::<f64>()
            / n;
        let cy = members
            .iter()
            .map(|&i| hits[i].window.y0() as f64 + hits[i].window.height() as f64 / 2.0)
            .sum::<f64>()
            / n;
        let mean_scale = members.iter().map(|&i| hits[i].scale).sum::<f64>() / n;
        let w = (cascade.base_w as f64 * mean_scale).round();
        let h = (cascade.base_h as f64 * mean_scale).round();
        let score: f64 = members.iter().map(|&i| hits[i].margin).sum();
        let bbox = crate::imaging::BoundingBox {
            x_min: (cx - w / 2.0).round() as i32,
            y_min: (cy - h / 2.0).round() as i32,
            x_max: (cx - w / 2.0).round() as i32 + w as i32,
            y_max: (cy - h / 2.0).round() as i32 + h as i32,
        };
        detections.push(Detection {
            class: cascade.class.clone(),
            bbox,
            score,
        });
    }
    detections.sort_by(|a, b| b.score.total_cmp(&a.score));
    detections
}

// ---------------------------------------------------------------------------
// Persistence: versioned text format, one stump per line.
// ---------------------------------------------------------------------------

pub fn save_cascade<W: Write>(cascade: &Cascade, mut w: W) -> Result<()> {
    writeln!(w, "CASCADE1")?;
    writeln!(w, "class {}", cascade.class)?;
    writeln!(w, "base {} {}", cascade.base_w, cascade.base_h)?;
    writeln!(w, "stages {}", cascade.stages.len())?;
    for stage in &cascade.stages {
        writeln!(
            w,
            "stage {} {} {} {}",
            stage.threshold,
            stage.detection_rate,
            stage.fp_rate,
            stage.stumps.len()
        )?;
        for s in &stage.stumps {
            writeln!(
                w,
                "stump {} {} {} {} {} {} {} {}",
                s.feature.kind.tag(),
                s.feature.x,
                s.feature.y,
                s.feature.w,
                s.feature.h,
                s.threshold,
                s.polarity,
                s.alpha
            )?;
        }
    }
    Ok(())
}

pub fn load_cascade<R: Read>(r: R) -> Result<Cascade> {
    let mut lines = BufReader::new(r).lines();
    let mut next = |what: &str| -> Result<String> {
        lines
            .next()
            .transpose()?
            .ok_or_else(|| Error::ModelFormat(format!("unexpected EOF, wanted {what}")))
    };
    if next("magic")? != "CASCADE1" {
        return Err(Error::ModelFormat("bad cascade magic".into()));
    }
    let class_line = next("class")?;
    let class = class_line
        .strip_prefix("class ")
        .ok_or_else(|| Error::ModelFormat("missing class".into()))?
        .to_string();
    let base_line = next("base")?;
    let parts: Vec<&str> = base_line.split_whitespace().collect();
    if parts.len() != 3 || parts[0] != "base" {
        return Err(Error::ModelFormat("bad base line".into()));
    }
    let parse_u32 = |s: &str| -> Result<u32> {
        s.parse()
            .map_err(|_| Error::ModelFormat(format!("bad number {s:?}")))
    };
    let parse_f64 = |s: &str| -> Result<f64> {
        s.parse()
            .map_err(|_| Error::ModelFormat(format!("bad float {s:?}")))
    };
    let base_w = parse_u32(parts[1])?;
    let base_h = parse_u32(parts[2])?;

    let stages_line = next("stages")?;
    let n_stages: usize = stages_line
        .strip_prefix("stages ")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::ModelFormat("bad stages line".into()))?;

    let mut stages = Vec::with_capacity(n_stages);
    for _ in 0..n_stages {
        let line = next("stage")?;
        let p: Vec<&str> = line.split_whitespace().collect();
        if p.len() != 5 || p[0] != "stage" {
            return Err(Error::ModelFormat(format!("bad stage line {line:?}")));
        }
        let threshold = parse_f64(p[1])?;
        let detection_rate = parse_f64(p[2])?;
        let fp_rate = parse_f64(p[3])?;
        let n_stumps: usize = p[4]
            .parse()
            .map_err(|_| Error::ModelFormat("bad stump count".into()))?;
        let mut stumps = Vec::with_capacity(n_stumps);
        for _ in 0..n_stumps {
            let line = next("stump")?;
            let p: Vec<&str> = line.split_whitespace().collect();
            if p.len() != 9 || p[0] != "stump" {
                return Err(Error::ModelFormat(format!("bad stump line {line:?}")));
            }
            let kind = HaarKind::from_tag(p[1])
                .ok_or_else(|| Error::ModelFormat(format!("bad feature kind {:?}", p[1])))?;
            stumps.push(Stump {
                feature: HaarFeature {
                    kind,
                    x: parse_u32(p[2])?,
                    y: parse_u32(p[3])?,
                    w: parse_u32(p[4])?,
                    h: parse_u32(p[5])?,
                },
                threshold: parse_f64(p[6])?,
                polarity: p[7]
                    .parse()
                    .map_err(|_| Error::ModelFormat("bad polarity".into()))?,
                alpha: parse_f64(p[8])?,
            });
        }
        stages.push(Stage {
            stumps,
            threshold,
            detection_rate,
            fp_rate,
        });
    }

    Ok(Cascade {
        class,
        base_w,
        base_h,
        stages,
    })
}

pub fn save_cascade_file(cascade: &Cascade, path: impl AsRef<Path>) -> Result<()> {
    let f = std::fs::File::create(path)?;
    save_cascade(cascade, std::io::BufWriter::new(f))
}

pub fn load_cascade_file(path: impl AsRef<Path>) -> Result<Cascade> {
    let f = std::fs::File::open(path)?;
    load_cascade(BufReader::new(f))
}

/// Builds base-size positive windows for the blob-vs-clutter training task
/// used by the synthetic benchmarks: a bright off-center-jittered blob over
/// textured background.
pub fn blob_positive(base: (u32, u32), seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0b10_b0b5);
    let mut img = crate::synth::value_noise(base.0, base.1, 5, 20, 90, rng.gen());
    let cx = base.0 as f32 / 2.0 + rng.gen_range(-2.0..2.0);
    let cy = base.1 as f32 / 2.0 + rng.gen_range(-2.0..2.0);
    let sigma = rng.gen_range(0.18..0.26) * base.0 as f32;
    crate::synth::add_gaussian_blob(&mut img, cx, cy, sigma, rng.gen_range(150.0..200.0));
    gaussian_blur(&img.to_float(), 0.5).to_u8()
}
