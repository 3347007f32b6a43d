use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::synth;

fn corr(model: (f64, f64), image: (f64, f64)) -> Correspondence {
    Correspondence {
        model,
        image,
        match_index: 0,
    }
}

/// Random non-collinear correspondences following `t` exactly.
fn synthetic_support(t: &AffineTransform, n: usize, seed: u64) -> Vec<Correspondence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let p = (rng.gen_range(0.0..100.0), rng.gen_range(0.0..100.0));
            corr(p, t.apply(p))
        })
        .collect()
}

fn corner_error(estimate: &AffineTransform, truth: &AffineTransform, w: f64, h: f64) -> f64 {
    let corners = [(0.0, 0.0), (w, 0.0), (0.0, h), (w, h)];
    corners
        .iter()
        .map(|&c| {
            let a = estimate.apply(c);
            let b = truth.apply(c);
            ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
        })
        .sum::<f64>()
        / 4.0
}

fn hypothesis_from(support: Vec<Correspondence>) -> Hypothesis {
    let t = fit_affine_least_squares(&support).unwrap();
    Hypothesis::from_fit(0, t, support, 100, 100).unwrap()
}

#[test]
fn identity_correspondences_fit_identity() {
    let support = synthetic_support(&AffineTransform::identity(), 8, 1);
    let t = fit_affine_least_squares(&support).unwrap();
    assert!(corner_error(&t, &AffineTransform::identity(), 100.0, 100.0) < 1e-9);
}

#[test]
fn scale_translate_recovered_exactly() {
    let truth = AffineTransform {
        a: [[2.0, 0.0], [0.0, 2.0]],
        t: [5.0, 7.0],
    };
    let support = synthetic_support(&truth, 12, 2);
    let t = fit_affine_least_squares(&support).unwrap();
    for r in 0..2 {
        for c in 0..2 {
            assert!((t.a[r][c] - truth.a[r][c]).abs() < 1e-9);
        }
        assert!((t.t[r] - truth.t[r]).abs() < 1e-9);
    }
}

#[test]
fn collinear_points_are_degenerate() {
    let support = vec![
        corr((0.0, 0.0), (1.0, 1.0)),
        corr((1.0, 1.0), (2.0, 2.0)),
        corr((2.0, 2.0), (3.0, 3.0)),
    ];
    assert!(matches!(
        fit_affine_least_squares(&support),
        Err(Error::Degenerate(_))
    ));
}

// --------------------------------------------------------------------------
// Hough clustering.
// --------------------------------------------------------------------------

struct SyntheticMatches {
    matches: Vec<Match>,
    query_keypoints: Vec<Keypoint>,
    model: ObjectModel,
}

/// Builds a model with `n_model` keypoints; the first `coherent` of them are
/// re-observed under a similarity transform, the rest of the query points are
/// uniform clutter.
fn synthetic_matches(
    coherent: usize,
    outliers: usize,
    scale: f32,
    angle: f32,
    offset: (f32, f32),
    seed: u64,
) -> SyntheticMatches {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = coherent + outliers;
    let mut model_kps = Vec::new();
    let mut query_kps = Vec::new();
    let mut matches = Vec::new();

    for i in 0..n {
        let mx = rng.gen_range(10.0..90.0f32);
        let my = rng.gen_range(10.0..90.0f32);
        let ms = rng.gen_range(1.0..4.0f32);
        let mo = rng.gen_range(0.0..std::f32::consts::TAU);
        model_kps.push(Keypoint {
            x: mx,
            y: my,
            scale: ms,
            orientation: mo,
        });

        let qk = if i < coherent {
            let (s, c) = (angle.sin(), angle.cos());
            Keypoint {
                x: offset.0 + scale * (c * mx - s * my),
                y: offset.1 + scale * (s * mx + c * my),
                scale: ms * scale,
                orientation: (mo + angle).rem_euclid(std::f32::consts::TAU),
            }
        } else {
            Keypoint {
                x: rng.gen_range(0.0..300.0),
                y: rng.gen_range(0.0..300.0),
                scale: rng.gen_range(1.0..8.0),
                orientation: rng.gen_range(0.0..std::f32::consts::TAU),
            }
        };
        query_kps.push(qk);
        matches.push(Match {
            query_index: i,
            db_index: i,
            model_id: 0,
            model_keypoint: i as u32,
            distance: 0.1,
            ratio: 0.5,
        });
    }

    let fill = 1.0 / (crate::features::DESCRIPTOR_DIM as f32).sqrt();
    let descriptors = vec![
        Descriptor {
            values: [fill; crate::features::DESCRIPTOR_DIM],
            border: false,
            low_contrast: false,
        };
        n
    ];
    SyntheticMatches {
        matches,
        query_keypoints: query_kps,
        model: ObjectModel {
            model_id: 0,
            class: "thing".into(),
            width: 100,
            height: 100,
            keypoints: model_kps,
            descriptors,
        },
    }
}

#[test]
fn coherent_matches_form_one_cluster() {
    let s = synthetic_matches(10, 0, 1.5, 0.7, (30.0, 40.0), 3);
    let cfg = HoughConfig {
        min_votes: 3,
        ..Default::default()
    };
    let hyps = hough_cluster(&s.matches, &s.query_keypoints, &s.model, &cfg);
    assert_eq!(hyps.len(), 1, "expected exactly one cluster");
    assert_eq!(hyps[0].support.len(), 10);
}

#[test]
fn too_few_matches_yield_nothing() {
    let s = synthetic_matches(2, 0, 1.0, 0.0, (0.0, 0.0), 4);
    let cfg = HoughConfig {
        min_votes: 3,
        ..Default::default()
    };
    assert!(hough_cluster(&s.matches, &s.query_keypoints, &s.model, &cfg).is_empty());
}

#[test]
fn planted_inliers_survive_clutter() {
    let s = synthetic_matches(5, 5, 1.2, 0.4, (50.0, 20.0), 5);
    let cfg = HoughConfig {
        min_votes: 3,
        ..Default::default()
    };
    let hyps = hough_cluster(&s.matches, &s.query_keypoints, &s.model, &cfg);
    assert!(!hyps.is_empty());
    let top = hyps.iter().max_by_key(|h| h.score).unwrap();
    let coherent_kept = top
        .support
        .iter()
        .filter(|c| c.match_index < 5)
        .count();
    assert!(
        coherent_kept >= 4,
        "only {coherent_kept}/5 coherent matches in the top cluster"
    );
}

// --------------------------------------------------------------------------
// IRLS.
// --------------------------------------------------------------------------

#[test]
fn irls_on_clean_data_matches_plain_least_squares() {
    let truth = AffineTransform::similarity(1.3, 0.5, 12.0, -4.0);
    let support = synthetic_support(&truth, 20, 7);
    let hyp = hypothesis_from(support.clone());
    let refined = refine_irls(&hyp, &IrlsConfig::default(), (100, 100)).unwrap();
    let ls = fit_affine_least_squares(&support).unwrap();
    assert!(max_param_delta(&refined.transform, &ls) < 1e-6);
    assert_eq!(refined.support.len(), 20);
}

#[test]
fn irls_resists_gross_outliers() {
    let truth = AffineTransform::similarity(1.1, -0.3, 40.0, 25.0);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut support = synthetic_support(&truth, 20, 8);
    // Small honest noise on the inliers.
    for c in &mut support {
        c.image.0 += rng.gen_range(-0.3..0.3);
        c.image.1 += rng.gen_range(-0.3..0.3);
    }
    // Six gross outliers.
    for c in support.iter_mut().take(6) {
        c.image = (rng.gen_range(0.0..400.0), rng.gen_range(0.0..400.0));
    }
    let hyp = hypothesis_from(support.clone());
    let refined = refine_irls(&hyp, &IrlsConfig::default(), (100, 100)).unwrap();

    let irls_err = corner_error(&refined.transform, &truth, 100.0, 100.0);
    let ls = fit_affine_least_squares(&support).unwrap();
    let ls_err = corner_error(&ls, &truth, 100.0, 100.0);
    assert!(irls_err <= 2.0, "IRLS corner error {irls_err}");
    assert!(
        ls_err >= 5.0 * irls_err,
        "LS error {ls_err} not 5x worse than IRLS {irls_err}"
    );
}

#[test]
fn irls_with_exactly_three_points_returns_exact_fit() {
    let truth = AffineTransform::similarity(0.9, 0.2, 3.0, 4.0);
    let support = synthetic_support(&truth, 3, 9);
    let hyp = hypothesis_from(support.clone());
    let refined = refine_irls(&hyp, &IrlsConfig::default(), (100, 100)).unwrap();
    assert!(max_param_delta(&refined.transform, &hyp.transform) < 1e-9);
    assert_eq!(refined.support.len(), 3);
}

#[test]
fn irls_weighted_residual_sum_is_non_increasing_per_solve() {
    let truth = AffineTransform::similarity(1.4, 0.9, -10.0, 60.0);
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut support = synthetic_support(&truth, 30, 14);
    for c in support.iter_mut().take(9) {
        c.image = (rng.gen_range(0.0..400.0), rng.gen_range(0.0..400.0));
    }
    let hyp = hypothesis_from(support);
    let mut trace = Vec::new();
    let _ = refine_irls_traced(&hyp, &IrlsConfig::default(), (100, 100), Some(&mut trace));
    assert!(!trace.is_empty());
    for (before, after) in &trace {
        assert!(
            after <= &(before + 1e-9),
            "weighted residual sum increased across a solve: {before} -> {after}"
        );
    }
}

// --------------------------------------------------------------------------
// RANSAC.
// --------------------------------------------------------------------------

#[test]
fn ransac_accepts_clean_support_fully() {
    let truth = AffineTransform::similarity(1.2, 0.1, 5.0, 6.0);
    let support = synthetic_support(&truth, 12, 17);
    let hyp = hypothesis_from(support);
    let out = verify_ransac(&hyp, &RansacConfig::default(), 5, (100, 100), 1).unwrap();
    assert_eq!(out.support.len(), 12);
}

#[test]
fn ransac_recovers_under_half_outliers() {
    let truth = AffineTransform::similarity(1.3, -0.6, 70.0, 10.0);
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    for trial in 0..20 {
        let mut support = synthetic_support(&truth, 20, 100 + trial);
        for c in support.iter_mut().take(10) {
            c.image = (rng.gen_range(0.0..400.0), rng.gen_range(0.0..400.0));
        }
        let hyp = hypothesis_from(support);
        let out = verify_ransac(&hyp, &RansacConfig::default(), 6, (100, 100), trial)
            .expect("consensus expected");
        let err = corner_error(&out.transform, &truth, 100.0, 100.0);
        assert!(err < 1.0, "trial {trial}: corner error {err}");
    }
}

#[test]
fn ransac_rejects_pure_noise_support() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut rejected = 0;
    let trials = 20;
    for trial in 0..trials {
        let support: Vec<Correspondence> = (0..20)
            .map(|_| {
                corr(
                    (rng.gen_range(0.0..100.0), rng.gen_range(0.0..100.0)),
                    (rng.gen_range(0.0..300.0), rng.gen_range(0.0..300.0)),
                )
            })
            .collect();
        let t = fit_affine_least_squares(&support).unwrap();
        let hyp = Hypothesis::from_fit(0, t, support, 100, 100).unwrap();
        if verify_ransac(&hyp, &RansacConfig::default(), 6, (100, 100), trial).is_none() {
            rejected += 1;
        }
    }
    assert!(
        rejected as f64 >= 0.95 * trials as f64,
        "only {rejected}/{trials} noise supports rejected"
    );
}

// --------------------------------------------------------------------------
// Heuristics.
// --------------------------------------------------------------------------

#[test]
fn isotropic_hypothesis_passes_heuristics() {
    let support = synthetic_support(&AffineTransform::similarity(1.0, 0.3, 10.0, 10.0), 6, 29);
    let hyp = hypothesis_from(support);
    let out = apply_heuristics(vec![hyp], &HeuristicConfig::default());
    assert_eq!(out.len(), 1);
}

#[test]
fn stretched_hypothesis_is_removed() {
    let squash = AffineTransform {
        a: [[10.0, 0.0], [0.0, 1.0]],
        t: [0.0, 0.0],
    };
    let support = synthetic_support(&squash, 6, 31);
    let hyp = hypothesis_from(support);
    assert!((hyp.transform.axis_scale_ratio() - 0.1).abs() < 1e-6);
    let out = apply_heuristics(vec![hyp], &HeuristicConfig::default());
    assert!(out.is_empty());
}

#[test]
fn close_centers_keep_highest_score() {
    let t1 = AffineTransform::similarity(1.0, 0.0, 50.0, 50.0);
    let t2 = AffineTransform::similarity(1.0, 0.0, 53.0, 50.0);
    let mut h1 = hypothesis_from(synthetic_support(&t1, 8, 33));
    let mut h2 = hypothesis_from(synthetic_support(&t2, 5, 34));
    h1.score = 8;
    h2.score = 5;
    let out = apply_heuristics(vec![h2.clone(), h1.clone()], &HeuristicConfig::default());
    assert_eq!(out.len(), 1);
    assert_eq!(out[0].score, 8);
}

#[test]
fn distinct_models_are_not_suppressed_against_each_other() {
    let t = AffineTransform::similarity(1.0, 0.0, 50.0, 50.0);
    let mut h1 = hypothesis_from(synthetic_support(&t, 8, 35));
    let mut h2 = hypothesis_from(synthetic_support(&t, 6, 36));
    h1.model_id = 0;
    h2.model_id = 1;
    let out = apply_heuristics(vec![h1, h2], &HeuristicConfig::default());
    assert_eq!(out.len(), 2);
}

// --------------------------------------------------------------------------
// End-to-end.
// --------------------------------------------------------------------------

#[test]
fn training_image_detects_itself() {
    let img = synth::textured_patch(128, 128, 41);
    let cfg = SiftPipelineConfig::default();
    let model = ObjectModel::from_image(0, "poster", &img, &cfg.features).unwrap();
    let db = ModelDatabase::build(vec![model], false, 0).unwrap();
    let dets = detect(&img, &db, &cfg).unwrap();
    assert!(!dets.is_empty(), "self-detection produced nothing");
    let full = BoundingBox::new(0, 0, 128, 128).unwrap();
    let best = dets
        .iter()
        .map(|d| crate::imaging::overlap_ratio(&full, &d.bbox, false))
        .fold(0.0f64, f64::max);
    assert!(best >= 0.9, "best self-overlap only {best}");
    assert_eq!(dets[0].class, "poster");
}

#[test]
fn detection_is_deterministic() {
    let img = synth::textured_patch(128, 128, 43);
    let cfg = SiftPipelineConfig::default();
    let model = ObjectModel::from_image(0, "poster", &img, &cfg.features).unwrap();
    let db = ModelDatabase::build(vec![model], false, 0).unwrap();
    let a = detect(&img, &db, &cfg).unwrap();
    let b = detect(&img, &db, &cfg).unwrap();
    assert_eq!(a, b);
}
