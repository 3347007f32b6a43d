//! Ground-truth ingestion, detection-to-truth matching, the evaluation
//! metrics, per-condition breakdowns, synthetic scenes with exact ground
//! truth, and the benchmark runner.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::imaging::{gaussian_blur, overlap_ratio, BoundingBox, Image, Window};
use crate::sift::AffineTransform;
use crate::synth;
use crate::Detection;

// ---------------------------------------------------------------------------
// Annotations.
// ---------------------------------------------------------------------------

/// Image-quality conditions a ground-truth instance is annotated with.
/// `normal` is mutually exclusive with the rest; the others may combine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Conditions(u8);

const COND_NORMAL: u8 = 1;
const COND_BLUR: u8 = 2;
const COND_OCCLUDED: u8 = 4;
const COND_ILLUMINATION: u8 = 8;

impl Conditions {
    pub fn normal() -> Self {
        Conditions(COND_NORMAL)
    }

    pub fn parse(s: &str) -> std::result::Result<Self, String> {
        let mut bits = 0u8;
        for part in s.split(',') {
            bits |= match part.trim() {
                "normal" => COND_NORMAL,
                "blur" => COND_BLUR,
                "occluded" => COND_OCCLUDED,
                "illumination" => COND_ILLUMINATION,
                other => return Err(format!("unknown condition flag {other:?}")),
            };
        }
        if bits == 0 {
            return Err("empty condition flags".into());
        }
        if bits & COND_NORMAL != 0 && bits != COND_NORMAL {
            return Err("'normal' excludes every other flag".into());
        }
        Ok(Conditions(bits))
    }

    pub fn is_normal(self) -> bool {
        self.0 == COND_NORMAL
    }

    pub fn blur(self) -> bool {
        self.0 & COND_BLUR != 0
    }

    pub fn occluded(self) -> bool {
        self.0 & COND_OCCLUDED != 0
    }

    pub fn illumination(self) -> bool {
        self.0 & COND_ILLUMINATION != 0
    }

    pub fn from_parts(blur: bool, occluded: bool, illumination: bool) -> Self {
        let mut bits = 0;
        if blur {
            bits |= COND_BLUR;
        }
        if occluded {
            bits |= COND_OCCLUDED;
        }
        if illumination {
            bits |= COND_ILLUMINATION;
        }
        if bits == 0 {
            bits = COND_NORMAL;
        }
        Conditions(bits)
    }
}

impl fmt::Display for Conditions {
    fmt::Result::Ok
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_normal() {
            return write!(f, "normal");
        }
        let mut parts = Vec::new();
        if self.blur() {
            parts.push("blur");
        }
        if self.occluded() {
            parts.push("occluded");
        }
        if self.illumination() {
            parts.push("illumination");
        }
        write!(f, "{}", parts.join(","))
    }
}

/// One annotated object instance.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationRecord {
    pub frame: String,
    pub class: String,
    pub bbox: BoundingBox,
    pub conditions: Conditions,
}

/// Parses the annotation format: whitespace-separated
/// `frame class x_min y_min x_max y_max flags` lines, `#` comments, flags
/// comma-joined.
pub fn parse_annotations<R: Read>(r: R, file_name: &str) -> Result<Vec<AnnotationRecord>> {
    let reader = BufReader::new(r);
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: String| Error::Parse {
            file: file_name.to_string(),
            line: idx + 1,
            msg,
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 7 {
            return Err(err(format!("expected 7 fields, got {}", fields.len())));
        }
        let coord = |s: &str| -> Result<i32> {
            s.parse()
                .map_err(|_| err(format!("bad coordinate {s:?}")))
        };
        let bbox = BoundingBox::new(
            coord(fields[2])?,
            coord(fields[3])?,
            coord(fields[4])?,
            coord(fields[5])?,
        )
        .map_err(|e| err(e.to_string()))?;
        let conditions = Conditions::parse(fields[6]).map_err(|m| err(m))?;
        out.push(AnnotationRecord {
            frame: fields[0].to_string(),
            class: fields[1].to_string(),
            bbox,
            conditions,
        });
    }
    Ok(out)
}

pub fn write_annotations<W: Write>(records: &[AnnotationRecord], mut w: W) -> Result<()> {
    writeln!(w, "# frame class x_min y_min x_max y_max flags")?;
    for r in records {
        writeln!(
            w,
            "{} {} {} {} {} {} {}",
            r.frame, r.class, r.bbox.x_min, r.bbox.y_min, r.bbox.x_max, r.bbox.y_max, r.conditions
        )?;
    }
    Ok(())
}

/// A detection bound to its frame, as carried by the exchange format
/// `frame class x_min y_min x_max y_max score`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameDetection {
    pub frame: String,
    pub detection: Detection,
}

pub fn write_detections<W: Write>(dets: &[FrameDetection], mut w: W) -> Result<()> {
    writeln!(w, "# frame class x_min y_min x_max y_max score")?;
    for d in dets {
        writeln!(
            w,
            "{} {} {} {} {} {} {}",
            d.frame,
            d.detection.class,
            d.detection.bbox.x_min,
            d.detection.bbox.y_min,
            d.detection.bbox.x_max,
            d.detection.bbox.y_max,
            d.detection.score
        )?;
    }
    Ok(())
}

pub fn parse_detections<R: Read>(r: R, file_name: &str) -> Result<Vec<FrameDetection>> {
    let reader = BufReader::new(r);
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: String| Error::Parse {
            file: file_name.to_string(),
            line: idx + 1,
            msg,
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 7 {
            return Err(err(format!("expected 7 fields, got {}", fields.len())));
        }
        let coord = |s: &str| -> Result<i32> {
            s.parse().map_err(|_| err(format!("bad coordinate {s:?}")))
        };
        out.push(FrameDetection {
            frame: fields[0].to_string(),
            detection: Detection {
                class: fields[1].to_string(),
                bbox: BoundingBox::new(
                    coord(fields[2])?,
                    coord(fields[3])?,
                    coord(fields[4])?,
                    coord(fields[5])?,
                )
                .map_err(|e| err(e.to_string()))?,
                score: fields[6]
                    .parse()
                    .map_err(|_| err(format!("bad score {:?}", fields[6])))?,
            },
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Matching protocol and metrics.
// ---------------------------------------------------------------------------

/// Which overlap criterion applies to which ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum OverlapMode {
    /// Intersection-over-union everywhere.
    Strict,
    /// Ground-truth-normalized overlap for instances flagged occluded,
    /// intersection-over-union otherwise.
    OccludedRelaxed,
    /// Ground-truth-normalized overlap for every instance.
    RelaxedAll,
}

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct MetricConfig {
    /// F-measure weight; 1 weighs precision and recall equally.
    pub beta: f64,
    pub overlap_threshold: f64,
    pub overlap_mode: OverlapMode,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig {
            beta: 1.0,
            overlap_threshold: 0.5,
            overlap_mode: OverlapMode::OccludedRelaxed,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

#[derive(Debug, Clone, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ConfusionCounts {
    pub per_class: BTreeMap<String, Counts>,
    pub total: Counts,
}

/// One true positive: detection index, matched ground-truth index, and the
/// overlap ratio under the criterion that matched it.
#[derive(Debug, Clone, Copy)]
pub struct Assignment {
    pub detection: usize,
    pub ground_truth: usize,
    pub overlap: f64,
}

fn applicable_overlap(gt: &AnnotationRecord, det: &BoundingBox, mode: OverlapMode) -> f64 {
    let occluded = match mode {
        OverlapMode::Strict => false,
        OverlapMode::OccludedRelaxed => gt.conditions.occluded(),
        OverlapMode::RelaxedAll => true,
    };
    overlap_ratio(&gt.bbox, det, occluded)
}

/// Greedy score-ordered assignment: each detection takes the best-overlapping
/// unmatched same-class ground truth in its frame that meets the criterion.
/// Duplicate hits on an already-matched instance count as false positives;
/// unmatched ground truth counts as false negatives.
pub fn match_detections(
    detections: &[FrameDetection],
    ground_truth: &[AnnotationRecord],
    cfg: &MetricConfig,
) -> (ConfusionCounts, Vec<Assignment>) {
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| {
        detections[b]
            .detection
            .score
            .total_cmp(&detections[a].detection.score)
            .then(a.cmp(&b))
    });

    let mut gt_taken = vec![false; ground_truth.len()];
    let mut assignments = Vec::new();
    let mut counts = ConfusionCounts::default();

    for gt in ground_truth {
        counts.per_class.entry(gt.class.clone()).or_default();
    }

    for &di in &order {
        let det = &detections[di];
        let class_counts = counts
            .per_class
            .entry(det.detection.class.clone())
            .or_default();
        let mut best: Option<(usize, f64)> = None;
        for (gi, gt) in ground_truth.iter().enumerate() {
            if gt_taken[gi] || gt.frame != det.frame || gt.class != det.detection.class {
                continue;
            }
            let ov = applicable_overlap(gt, &det.detection.bbox, cfg.overlap_mode);
            if ov < cfg.overlap_threshold {
                continue;
            }
            let better = match best {
                None => true,
                Some((_, bov)) => ov > bov,
            };
            if better {
                best = Some((gi, ov));
            }
        }
        match best {
            Some((gi, ov)) => {
                gt_taken[gi] = true;
                class_counts.tp += 1;
                counts.total.tp += 1;
                assignments.push(Assignment {
                    detection: di,
                    ground_truth: gi,
                    overlap: ov,
                });
            }
            None => {
                class_counts.fp += 1;
                counts.total.fp += 1;
            }
        }
    }

    for (gi, gt) in ground_truth.iter().enumerate() {
        if !gt_taken[gi] {
            counts.per_class.get_mut(&gt.class).unwrap().fn_ += 1;
            counts.total.fn_ += 1;
        }
    }

    (counts, assignments)
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
    /// False when the corresponding denominator was zero and the value was
    /// reported as 0 by convention.
    pub precision_defined: bool,
    pub recall_defined: bool,
}

/// Precision `tp/(fp+tp)`, recall `tp/(fn+tp)` and the beta-weighted
/// f-measure. Zero denominators yield 0, marked undefined.
pub fn compute_metrics(counts: &Counts, beta: f64) -> Metrics {
    let pd = counts.tp + counts.fp;
    let rd = counts.tp + counts.fn_;
    let precision = if pd == 0 {
        0.0
    } else {
        counts.tp as f64 / pd as f64
    };
    let recall = if rd == 0 {
        0.0
    } else {
        counts.tp as f64 / rd as f64
    };
    Metrics {
        precision,
        recall,
        f_measure: f_measure(precision, recall, beta),
        precision_defined: pd > 0,
        recall_defined: rd > 0,
    }
}

/// General f-measure; `beta = 1` reduces to the balanced harmonic mean.
pub fn f_measure(precision: f64, recall: f64, beta: f64) -> f64 {
    let denom = beta * beta * precision + recall;
    if denom == 0.0 {
        0.0
    } else {
        (1.0 + beta * beta) * precision * recall / denom
    }
}

/// Recall per exact condition-flag combination; the rows partition the
/// ground-truth instances.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ConditionRow {
    pub conditions: String,
    pub instances: usize,
    pub detected: usize,
    pub recall: f64,
}

pub fn condition_breakdown(
    assignments: &[Assignment],
    ground_truth: &[AnnotationRecord],
) -> Vec<ConditionRow> {
    let mut rows: BTreeMap<Conditions, (usize, usize)> = BTreeMap::new();
    for gt in ground_truth {
        rows.entry(gt.conditions).or_insert((0, 0)).0 += 1;
    }
    for a in assignments {
        rows.get_mut(&ground_truth[a.ground_truth].conditions)
            .expect("assignment to known gt")
            .1 += 1;
    }
    rows.into_iter()
        .map(|(conditions, (instances, detected))| ConditionRow {
            conditions: conditions.to_string(),
            instances,
            detected,
            recall: detected as f64 / instances as f64,
        })
        .collect()
}

/// Distribution of true-positive overlap ratios in ten-percent bins.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct OverlapHistogram {
    /// `bins[k]` counts overlaps in `[k/10, (k+1)/10)`, the last bin closed.
    pub bins: [usize; 10],
    pub total: usize,
}

pub fn overlap_histogram(assignments: &[Assignment]) -> OverlapHistogram {
    let mut bins = [0usize; 10];
    for a in assignments {
        let k = ((a.overlap * 10.0).floor() as usize).min(9);
        bins[k] += 1;
    }
    OverlapHistogram {
        bins,
        total: assignments.len(),
    }
}

impl OverlapHistogram {
    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    /// Fraction of true positives with overlap at or above `threshold`
    /// (a bin edge).
    pub fn fraction_at_or_above(&self, threshold: f64) -> f64 {
        if self.total == 0 {
            return 0.0;
        }
        let from = ((threshold * 10.0).round() as usize).min(9);
        let count: usize = self.bins[from..].iter().sum();
        count as f64 / self.total as f64
    }

    pub fn to_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "bin_low,bin_high,count,cumulative_at_or_above")?;
        for k in 0..10 {
            let cum: usize = self.bins[k..].iter().sum();
            writeln!(
                w,
                "{:.1},{:.1},{},{}",
                k as f64 / 10.0,
                (k + 1) as f64 / 10.0,
                self.bins[k],
                cum
            )?;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Synthetic scenes with exact ground truth.
// ---------------------------------------------------------------------------

/// One plantable object: a training image and its class.
#[derive(Debug, Clone)]
pub struct SceneModel {
    pub class: String,
    pub image: Image,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct SceneSpec {
    pub width: u32,
    pub height: u32,
    /// Model indices to instantiate, one instance each.
    pub instances: Vec<usize>,
    pub scale_range: (f64, f64),
    /// Radians.
    pub rotation_range: (f64, f64),
    pub shear_range: (f64, f64),
    /// Chance an instance is motion-blurred (and flagged so).
    pub blur_prob: f64,
    pub blur_sigma: f32,
    /// Chance an instance is darkened/brightened (and flagged so).
    pub illumination_prob: f64,
    /// Intensity factor used when the illumination effect fires.
    pub illumination_factor: f64,
}

impl SceneSpec {
    pub fn plain(width: u32, height: u32, instances: Vec<usize>) -> Self {
        SceneSpec {
            width,
            height,
            instances,
            scale_range: (0.7, 1.3),
            rotation_range: (-0.4, 0.4),
            shear_range: (-0.05, 0.05),
            blur_prob: 0.0,
            blur_sigma: 1.2,
            illumination_prob: 0.0,
            illumination_factor: 0.55,
        }
    }
}

/// Composites the requested model instances onto a background at seeded
/// random poses, returning the scene and its exact ground truth. Poses whose
/// outline would leave the frame are resampled.
pub fn generate_synthetic_scene(
    models: &[SceneModel],
    backgrounds: &[Image],
    spec: &SceneSpec,
    frame: &str,
    seed: u64,
) -> Result<(Image, Vec<AnnotationRecord>)> {
    if backgrounds.is_empty() {
        return Err(Error::InsufficientData("no backgrounds".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bg = &backgrounds[rng.gen_range(0..backgrounds.len())];
    let mut scene = if bg.width() == spec.width && bg.height() == spec.height {
        bg.clone()
    } else {
        crate::imaging::resize_bilinear(&bg.to_float(), spec.width, spec.height).to_u8()
    };

    let mut records = Vec::new();
    for &model_idx in &spec.instances {
        let model = models
            .get(model_idx)
            .ok_or_else(|| Error::Config(format!("scene references model {model_idx}")))?;
        let (mw, mh) = (model.image.width(), model.image.height());

        // Sample a pose that keeps the projected outline inside the frame.
        let mut placed: Option<(AffineTransform, BoundingBox)> = None;
        for _ in 0..64 {
            let scale = rng.gen_range(spec.scale_range.0..=spec.scale_range.1);
            let angle = rng.gen_range(spec.rotation_range.0..=spec.rotation_range.1);
            let shear = rng.gen_range(spec.shear_range.0..=spec.shear_range.1);
            let (s, c) = angle.sin_cos();
            let linear = [
                [scale * (c + shear * s), scale * (shear * c - s)],
                [scale * s, scale * c],
            ];
            // Bounding half-extents of the rotated outline around origin.
            let t0 = AffineTransform {
                a: linear,
                t: [0.0, 0.0],
            };
            let outline = t0.project_outline(mw, mh)?;
            let ow = (outline.x_max - outline.x_min) as u32;
            let oh = (outline.y_max - outline.y_min) as u32;
            if ow + 2 >= spec.width || oh + 2 >= spec.height {
                continue;
            }
            let tx = rng.gen_range(1..spec.width - ow - 1) as f64 - outline.x_min as f64;
            let ty = rng.gen_range(1..spec.height - oh - 1) as f64 - outline.y_min as f64;
            let t = AffineTransform {
                a: linear,
                t: [tx, ty],
            };
            let bbox = t.project_outline(mw, mh)?;
            if bbox.clip(spec.width, spec.height) == Some(bbox) {
                placed = Some((t, bbox));
                break;
            }
        }
        let Some((transform, bbox)) = placed else {
            return Err(Error::Config(format!(
                "model {model_idx} cannot fit into a {}x{} scene",
                spec.width, spec.height
            )));
        };

        let blurred = rng.gen_bool(spec.blur_prob);
        let darkened = rng.gen_bool(spec.illumination_prob);

        // Optionally pre-degrade the model raster, then inverse-map paste.
        let mut src = model.image.to_float();
        if blurred {
            src = gaussian_blur(&src, spec.blur_sigma);
        }
        let inv = transform.inverse().ok_or_else(|| {
            Error::Degenerate("sampled pose is singular".into())
        })?;
        for y in bbox.y_min.max(0)..bbox.y_max.min(spec.height as i32) {
            for x in bbox.x_min.max(0)..bbox.x_max.min(spec.width as i32) {
                let (sx, sy) = inv.apply((x as f64 + 0.5, y as f64 + 0.5));
                let (sx, sy) = (sx - 0.5, sy - 0.5);
                if sx < 0.0 || sy < 0.0 || sx > mw as f64 - 1.0 || sy > mh as f64 - 1.0 {
                    continue;
                }
                let mut v = src.sample_bilinear(sx as f32, sy as f32);
                if darkened {
                    v = (v * spec.illumination_factor as f32).clamp(0.0, 1.0);
                }
                scene.set(x as u32, y as u32, (v * 255.0).round().clamp(0.0, 255.0) as u8);
            }
        }

        records.push(AnnotationRecord {
            frame: frame.to_string(),
            class: model.class.clone(),
            bbox,
            conditions: Conditions::from_parts(blurred, darkened, false),
        });
    }
    Ok((scene, records))
}

// ---------------------------------------------------------------------------
// Benchmark runner and report.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default)]
pub struct RuntimeStats {
    pub per_frame_ms: Vec<f64>,
    pub total_ms: f64,
}

impl RuntimeStats {
    pub fn mean_ms(&self) -> f64 {
        if self.per_frame_ms.is_empty() {
            0.0
        } else {
            self.total_ms / self.per_frame_ms.len() as f64
        }
    }
}

/// Everything a benchmark run produces. The runtime statistics are kept out
/// of the serialized report so re-runs with identical seeds produce
/// byte-identical report files; they are written to a separate timing file.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EvalReport {
    pub frames: usize,
    pub counts: ConfusionCounts,
    pub aggregate: Metrics,
    pub per_class: BTreeMap<String, Metrics>,
    pub condition_recall: Vec<ConditionRow>,
    pub histogram: OverlapHistogram,
}

impl EvalReport {
    pub fn from_counts(
        frames: usize,
        counts: ConfusionCounts,
        assignments: &[Assignment],
        ground_truth: &[AnnotationRecord],
        beta: f64,
    ) -> EvalReport {
        let aggregate = compute_metrics(&counts.total, beta);
        let per_class = counts
            .per_class
            .iter()
            .map(|(class, c)| (class.clone(), compute_metrics(c, beta)))
            .collect();
        EvalReport {
            frames,
            counts: counts.clone(),
            aggregate,
            per_class,
            condition_recall: condition_breakdown(assignments, ground_truth),
            histogram: overlap_histogram(assignments),
        }
    }

    pub fn to_table_text(&self) -> String {
        let mut s = String::new();
        use std::fmt::Write as _;
        let _ = writeln!(s, "frames: {}", self.frames);
        let _ = writeln!(
            s,
            "aggregate: tp={} fp={} fn={} precision={:.4}{} recall={:.4}{} f={:.4}",
            self.counts.total.tp,
            self.counts.total.fp,
            self.counts.total.fn_,
            self.aggregate.precision,
            if self.aggregate.precision_defined { "" } else { " (undefined)" },
            self.aggregate.recall,
            if self.aggregate.recall_defined { "" } else { " (undefined)" },
            self.aggregate.f_measure,
        );
        let _ = writeln!(s, "\nper-class:");
        let _ = writeln!(s, "{:<20} {:>5} {:>5} {:>5} {:>9} {:>9} {:>9}", "class", "tp", "fp", "fn", "precision", "recall", "f");
        for (class, m) in &self.per_class {
            let c = &self.counts.per_class[class];
            let _ = writeln!(
                s,
                "{:<20} {:>5} {:>5} {:>5} {:>9.4} {:>9.4} {:>9.4}",
                class, c.tp, c.fp, c.fn_, m.precision, m.recall, m.f_measure
            );
        }
        let _ = writeln!(s, "\nrecall by image characteristics:");
        let _ = writeln!(s, "{:<28} {:>6} {:>9} {:>8}", "conditions", "gt", "detected", "recall");
        for row in &self.condition_recall {
            let _ = writeln!(
                s,
                "{:<28} {:>6} {:>9} {:>8.4}",
                row.conditions, row.instances, row.detected, row.recall
            );
        }
        let _ = writeln!(s, "\noverlap distribution (true positives): total={}", self.histogram.total);
        for k in 0..10 {
            let _ = writeln!(
                s,
                "  [{:.1}, {:.1}{}  {}",
                k as f64 / 10.0,
                (k + 1) as f64 / 10.0,
                if k == 9 { "]" } else { ")" },
                self.histogram.bins[k]
            );
        }
        s
    }
}

/// Runs a detector over a frame sequence, matches against ground truth and
/// assembles the report. When `out_dir` is given, writes `report.json`,
/// `tables.txt`, `overlap_hist.csv`, `detections.txt` (all deterministic)
/// and `timing.txt` (wall-clock, excluded from determinism guarantees).
pub fn run_benchmark(
    frames: &[(String, Image)],
    ground_truth: &[AnnotationRecord],
    detector: &mut dyn FnMut(&Image) -> Result<Vec<Detection>>,
    cfg: &MetricConfig,
    out_dir: Option<&Path>,
) -> Result<(EvalReport, RuntimeStats)> {
    let mut detections: Vec<FrameDetection> = Vec::new();
    let mut runtime = RuntimeStats::default();

    for (frame, img) in frames {
        let started = Instant::now();
        let dets = detector(img)?;
        let ms = started.elapsed().as_secs_f64() * 1000.0;
        runtime.per_frame_ms.push(ms);
        runtime.total_ms += ms;
        for detection in dets {
            detections.push(FrameDetection {
                frame: frame.clone(),
                detection,
            });
        }
    }

    let (counts, assignments) = match_detections(&detections, ground_truth, cfg);
    let report = EvalReport::from_counts(
        frames.len(),
        counts,
        &assignments,
        ground_truth,
        cfg.beta,
    );

    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        let json = serde_json::to_string_pretty(&report)
            .map_err(|e| Error::Config(format!("report serialization: {e}")))?;
        std::fs::write(dir.join("report.json"), json)?;
        std::fs::write(dir.join("tables.txt"), report.to_table_text())?;
        let mut csv = Vec::new();
        report.histogram.to_csv(&mut csv)?;
        std::fs::write(dir.join("overlap_hist.csv"), csv)?;
        let mut dets_txt = Vec::new();
        write_detections(&detections, &mut dets_txt)?;
        std::fs::write(dir.join("detections.txt"), dets_txt)?;
        let mut timing = String::new();
        use std::fmt::Write as _;
        let _ = writeln!(timing, "# wall-clock per frame, ms (not covered by determinism)");
        for ((frame, _), ms) in frames.iter().zip(&runtime.per_frame_ms) {
            let _ = writeln!(timing, "{frame} {ms:.3}");
        }
        let _ = writeln!(timing, "total {:.3}", runtime.total_ms);
        let _ = writeln!(timing, "mean {:.3}", runtime.mean_ms());
        std::fs::write(dir.join("timing.txt"), timing)?;
    }

    Ok((report, runtime))
}

/// Convenience: square textured scene models for synthetic benchmarks.
pub fn default_scene_models(count: usize, size: u32, seed: u64) -> Vec<SceneModel> {
    (0..count)
        .map(|i| SceneModel {
            class: format!("object{i:02}"),
            image: synth::textured_patch(size, size, seed.wrapping_add(i as u64 * 131)),
        })
        .collect()
}

/// Convenience: low-texture clutter backgrounds.
pub fn default_backgrounds(count: usize, width: u32, height: u32, seed: u64) -> Vec<Image> {
    (0..count)
        .map(|i| synth::value_noise(width, height, 17, 40, 200, seed.wrapping_add(i as u64 * 733)))
        .collect()
}

/// Generated benchmark scenes: frames plus their exact annotations.
pub fn generate_benchmark(
    models: &[SceneModel],
    backgrounds: &[Image],
    spec_for: &dyn Fn(usize) -> SceneSpec,
    n_scenes: usize,
    seed: u64,
) -> Result<(Vec<(String, Image)>, Vec<AnnotationRecord>)> {
    let mut frames = Vec::with_capacity(n_scenes);
    let mut records = Vec::new();
    for i in 0..n_scenes {
        let frame = format!("scene{i:04}.pgm");
        let spec = spec_for(i);
        let (img, mut recs) = generate_synthetic_scene(
            models,
            backgrounds,
            &spec,
            &frame,
            seed.wrapping_add(i as u64 * 7919),
        )?;
        frames.push((frame, img));
        records.append(&mut recs);
    }
    Ok((frames, records))
}

/// A window-classification detector: proposals scored through a vocabulary
/// model, majority-vote labeled, background windows dropped.
pub struct WindowClassifier<'a> {
    pub model: &'a crate::vtree::VTreeModel,
    pub features: crate::features::ScaleSpaceConfig,
    pub k_nn: usize,
    pub background_class: String,
}

impl WindowClassifier<'_> {
    /// Classifies each proposal window from word counts; emits a detection
    /// per non-background majority. Returns the detections and the number of
    /// windows actually evaluated.
    pub fn classify_windows(
        &self,
        img: &Image,
        windows: &[Window],
    ) -> Result<(Vec<Detection>, usize)> {
        let (kps, descs) = crate::features::extract(img, &self.features);
        let occurrences: Vec<crate::vtree::WordOccurrence> = kps
            .iter()
            .zip(&descs)
            .map(|(kp, d)| crate::vtree::WordOccurrence {
                leaf: self.model.tree.quantize(&d.values),
                x: kp.x,
                y: kp.y,
            })
            .collect();
        let wii = crate::vtree::build_word_integrals(
            &occurrences,
            img.width(),
            img.height(),
            self.model.tree.leaf_count(),
        );

        let mut detections = Vec::new();
        let mut evaluated = 0usize;
        for window in windows {
            evaluated += 1;
            let hist = wii.window_histogram(window)?;
            let Ok(sig) = crate::vtree::make_signature_from_leaf_counts(
                &hist,
                &self.model.tree,
                crate::vtree::Norm::L2,
            ) else {
                continue;
            };
            let ranking = crate::vtree::query_inverted(&sig, &self.model.inverted, &self.model.tree)?;
            let (class, votes) = crate::vtree::classify_knn(&ranking, &self.model.labels, self.k_nn);
            if class == self.background_class {
                continue;
            }
            let vote_count = votes.get(&class).copied().unwrap_or(0);
            detections.push(Detection {
                class,
                bbox: window.to_bbox(),
                score: vote_count as f64 / self.k_nn as f64,
            });
        }
        Ok((detections, evaluated))
    }
}

#[cfg(test)]
mod tests;
