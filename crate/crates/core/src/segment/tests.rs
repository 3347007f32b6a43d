use super::*;
use crate::features::{extract, ScaleSpaceConfig};
use crate::synth;

#[test]
fn constant_image_has_no_edges() {
    let img = Image::from_fn(64, 64, |_, _| 90);
    let edges = canny(&img, 40.0, 100.0).unwrap();
    assert_eq!(edges.edge_count(), 0);
}

#[test]
fn thresholds_must_be_ordered() {
    let img = Image::from_fn(16, 16, |_, _| 0);
    assert!(canny(&img, 100.0, 40.0).is_err());
    assert!(canny(&img, 0.0, 40.0).is_err());
}

#[test]
fn vertical_step_gives_single_column() {
    let img = synth::vertical_step(64, 64, 32, 20, 220);
    let edges = canny(&img, 40.0, 100.0).unwrap();
    for y in 2..62 {
        let cols: Vec<u32> = (0..64).filter(|&x| edges.is_edge(x, y)).collect();
        assert_eq!(cols.len(), 1, "row {y}: edge columns {cols:?}");
        assert!(
            (cols[0] as i32 - 32).abs() <= 1,
            "row {y}: edge at {}",
            cols[0]
        );
    }
}

#[test]
fn lowering_low_threshold_never_removes_edges() {
    let img = synth::textured_patch(96, 96, 17);
    let strict = canny(&img, 60.0, 100.0).unwrap();
    let loose = canny(&img, 20.0, 100.0).unwrap();
    for y in 0..96 {
        for x in 0..96 {
            if strict.is_edge(x, y) {
                assert!(loose.is_edge(x, y), "edge lost at ({x},{y})");
            }
        }
    }
}

#[test]
fn blank_image_floods_to_one_region() {
    let img = Image::from_fn(640, 480, |_, _| 128);
    let edges = canny(&img, 40.0, 100.0).unwrap();
    let seg = floodcanny(&img, &edges, &ProposalConfig::default());
    assert_eq!(seg.regions.len(), 1);
    assert_eq!(seg.regions[0].area, 640 * 480);
}

#[test]
fn edge_line_splits_two_chambers() {
    let img = Image::from_fn(100, 80, |_, _| 100);
    let mask: Vec<bool> = (0..80u32)
        .flat_map(|_| (0..100u32).map(|x| x == 50))
        .collect();
    let edges = EdgeMap::from_mask(100, 80, mask, 40.0, 100.0);
    let seg = floodcanny(&img, &edges, &ProposalConfig::default());
    assert_eq!(seg.regions.len(), 2);
    for region in &seg.regions {
        for y in region.bbox.y0()..region.bbox.y1() {
            for x in region.bbox.x0()..region.bbox.x1() {
                if seg.label_at(x, y).is_some() {
                    assert!(!edges.is_edge(x, y), "edge pixel inside region");
                }
            }
        }
    }
    assert_eq!(seg.regions[0].area, 50 * 80);
    assert_eq!(seg.regions[1].area, 49 * 80);
}

#[test]
fn small_tiles_are_all_discarded() {
    let img = synth::checkerboard(200, 200, 10, 30, 220);
    let edges = canny(&img, 40.0, 100.0).unwrap();
    let seg = floodcanny(&img, &edges, &ProposalConfig::default());
    assert!(
        seg.regions.is_empty(),
        "checkerboard tiles below min area were accepted: {:?}",
        seg.regions.len()
    );
}

#[test]
fn flood_regions_are_disjoint_connected_and_within_tolerance() {
    let img = synth::value_noise(160, 120, 24, 30, 220, 3);
    let edges = canny(&img, 40.0, 100.0).unwrap();
    let cfg = ProposalConfig {
        min_area: 100,
        ..Default::default()
    };
    let seg = floodcanny(&img, &edges, &cfg);
    assert!(!seg.regions.is_empty());

    // Disjointness comes from the label raster; verify each accepted
    // region is 4-connected by re-flooding its mask.
    for (ri, region) in seg.regions.iter().enumerate() {
        let mut count = 0usize;
        for y in 0..seg.height() {
            for x in 0..seg.width() {
                if seg.label_at(x, y) == Some(ri as u32) {
                    count += 1;
                }
            }
        }
        assert_eq!(count, region.area);
        assert!(region.area >= cfg.min_area);

        let mut visited = vec![false; (seg.width() * seg.height()) as usize];
        let mut queue = std::collections::VecDeque::new();
        queue.push_back(region.seed);
        visited[(region.seed.1 * seg.width() + region.seed.0) as usize] = true;
        let mut reached = 1usize;
        while let Some((x, y)) = queue.pop_front() {
            for (nx, ny) in [
                (x.wrapping_sub(1), y),
                (x + 1, y),
                (x, y.wrapping_sub(1)),
                (x, y + 1),
            ] {
                if nx >= seg.width() || ny >= seg.height() {
                    continue;
                }
                let i = (ny * seg.width() + nx) as usize;
                if !visited[i] && seg.label_at(nx, ny) == Some(ri as u32) {
                    visited[i] = true;
                    reached += 1;
                    queue.push_back((nx, ny));
                }
            }
        }
        assert_eq!(reached, region.area, "region {ri} is not 4-connected");
    }
}

#[test]
fn region_windows_scale_about_the_center() {
    let region = Region {
        seed: (250, 250),
        area: 10_000,
        bbox: Window::new(200, 200, 300, 300).unwrap(),
    };
    let cfg = ProposalConfig::default();
    let windows = region_windows(&region, &cfg, 640, 480);
    assert_eq!(windows.len(), 5);
    let widths: Vec<u32> = windows.iter().map(|w| w.width()).collect();
    assert_eq!(widths, vec![75, 100, 125, 150, 200]);
    for w in &windows {
        let cx = (w.x0() + w.x1()) as f64 / 2.0;
        let cy = (w.y0() + w.y1()) as f64 / 2.0;
        assert!((cx - 250.0).abs() <= 1.0 && (cy - 250.0).abs() <= 1.0);
    }
    // Unit multiplier reproduces the bounding box.
    assert_eq!(windows[1], region.bbox);
}

#[test]
fn corner_region_windows_are_clipped_but_valid() {
    let region = Region {
        seed: (5, 5),
        area: 900,
        bbox: Window::new(0, 0, 40, 40).unwrap(),
    };
    let windows = region_windows(&region, &ProposalConfig::default(), 640, 480);
    assert_eq!(windows.len(), 5);
    for w in &windows {
        assert!(w.x1() <= 640 && w.y1() <= 480);
        assert!(w.area() > 0);
    }
}

#[test]
fn sliding_grid_counts() {
    let whole = sliding_windows((640, 480), 32, &[640], &[0.75]);
    assert_eq!(whole.len(), 1);

    let nine = sliding_windows((100, 100), 25, &[50], &[1.0]);
    assert_eq!(nine.len(), 9);

    let finer = sliding_windows((100, 100), 10, &[50], &[1.0]);
    assert!(finer.len() > nine.len());
}

#[test]
fn identical_stereo_pair_matches_at_zero_disparity() {
    let img = synth::textured_patch(96, 96, 23);
    let cfg = ScaleSpaceConfig::default();
    let (kps, descs) = extract(&img, &cfg);
    assert!(kps.len() >= 5);
    let matches = stereo_match((&kps, &descs), (&kps, &descs), 1.0, 1.5, 0.3);
    assert!(!matches.is_empty());
    for m in &matches {
        assert_eq!(m.disparity, 0.0);
    }
}

#[test]
fn shifted_pair_recovers_the_shift() {
    // A feature at wide-image column X sits at X in the left crop and at
    // X - 8 in the right crop: disparity +8 everywhere.
    let wide = synth::textured_patch(140, 96, 29);
    let left = wide.crop(&Window::new(0, 0, 128, 96).unwrap());
    let right = wide.crop(&Window::new(8, 0, 136, 96).unwrap());
    let cfg = ScaleSpaceConfig::default();
    let (lk, ld) = extract(&left, &cfg);
    let (rk, rd) = extract(&right, &cfg);
    let matches = stereo_match((&lk, &ld), (&rk, &rd), 1.5, 1.3, 0.3);
    assert!(matches.len() >= 5, "only {} stereo matches", matches.len());
    let mut disparities: Vec<f32> = matches.iter().map(|m| m.disparity).collect();
    disparities.sort_by(f32::total_cmp);
    let median = disparities[disparities.len() / 2];
    assert!(
        (median - 8.0).abs() <= 1.0,
        "median disparity {median}, expected 8"
    );
}

#[test]
fn feature_outside_band_is_dropped() {
    let kp = |x: f32, y: f32| Keypoint {
        x,
        y,
        scale: 2.0,
        orientation: 0.0,
    };
    let desc = Descriptor {
        values: [0.09; crate::features::DESCRIPTOR_DIM],
        border: false,
        low_contrast: false,
    };
    let lk = vec![kp(50.0, 50.0)];
    let ld = vec![desc.clone()];
    let rk = vec![kp(45.0, 58.0)]; // 8 rows off the epipolar line
    let rd = vec![desc];
    let matches = stereo_match((&lk, &ld), (&rk, &rd), 2.0, 1.5, 0.3);
    assert!(matches.is_empty());
}

fn calib() -> StereoCalib {
    StereoCalib {
        focal_px: 300.0,
        baseline_m: 0.1,
        cx: 160.0,
        cy: 120.0,
    }
}

/// Builds left keypoints and matches that triangulate exactly to `points`.
fn matches_for_points(points: &[(f64, f64, f64)], c: &StereoCalib) -> (Vec<Keypoint>, Vec<StereoMatch>) {
    let mut kps = Vec::new();
    let mut matches = Vec::new();
    for (i, &(x, y, z)) in points.iter().enumerate() {
        let u = c.focal_px * x / z + c.cx;
        let v = c.focal_px * y / z + c.cy;
        let disparity = (c.focal_px * c.baseline_m / z) as f32;
        kps.push(Keypoint {
            x: u as f32,
            y: v as f32,
            scale: 2.0,
            orientation: 0.0,
        });
        matches.push(StereoMatch {
            left: i,
            right: i,
            disparity,
        });
    }
    (kps, matches)
}

#[test]
fn clustered_points_form_one_proposal_containing_them() {
    let c = calib();
    let points: Vec<(f64, f64, f64)> = (0..10)
        .map(|i| {
            let t = i as f64 / 10.0;
            (0.10 + 0.25 * t, 0.05 + 0.3 * t, 1.05 + 0.35 * t)
        })
        .collect();
    let (kps, matches) = matches_for_points(&points, &c);
    let grid = CellGrid {
        cell_sizes_m: vec![0.5],
        min_votes: 5,
    };
    let proposals = depth_grid_proposals(&matches, &kps, &c, &grid, 320, 240).unwrap();
    assert_eq!(proposals.len(), 1);
    let w = &proposals[0];
    for kp in &kps {
        assert!(
            kp.x >= w.x0() as f32
                && kp.x < w.x1() as f32
                && kp.y >= w.y0() as f32
                && kp.y < w.y1() as f32,
            "projection ({}, {}) outside proposal {w:?}",
            kp.x,
            kp.y
        );
    }
}

#[test]
fn scattered_votes_below_threshold_give_nothing() {
    let c = calib();
    // One point per distinct cell.
    let points = vec![(0.1, 0.1, 0.6), (1.1, 0.1, 1.6), (0.1, 1.2, 2.6), (2.2, 1.1, 3.1)];
    let (kps, matches) = matches_for_points(&points, &c);
    let grid = CellGrid {
        cell_sizes_m: vec![0.5],
        min_votes: 2,
    };
    let proposals = depth_grid_proposals(&matches, &kps, &c, &grid, 320, 240).unwrap();
    assert!(proposals.is_empty());
}

#[test]
fn depth_separated_clusters_give_two_proposals() {
    let c = calib();
    let mut points = Vec::new();
    for i in 0..6 {
        let t = i as f64 / 6.0;
        points.push((0.05 + 0.3 * t, 0.05 + 0.3 * t, 1.05 + 0.3 * t));
    }
    for i in 0..6 {
        let t = i as f64 / 6.0;
        points.push((0.05 + 0.3 * t, 0.05 + 0.3 * t, 3.05 + 0.3 * t));
    }
    let (kps, matches) = matches_for_points(&points, &c);
    let grid = CellGrid {
        cell_sizes_m: vec![0.5],
        min_votes: 5,
    };
    let proposals = depth_grid_proposals(&matches, &kps, &c, &grid, 320, 240).unwrap();
    assert_eq!(proposals.len(), 2);
}

#[test]
fn min_votes_one_is_a_superset_of_higher_thresholds() {
    let c = calib();
    let mut rng_points = Vec::new();
    for i in 0..40 {
        let t = i as f64 * 0.37;
        rng_points.push((t.sin() * 0.8, t.cos() * 0.6, 1.0 + (t * 1.7).fract() * 2.0));
    }
    let (kps, matches) = matches_for_points(&rng_points, &c);
    let loose = depth_grid_proposals(
        &matches,
        &kps,
        &c,
        &CellGrid {
            cell_sizes_m: vec![0.25, 0.5, 1.0],
            min_votes: 1,
        },
        320,
        240,
    )
    .unwrap();
    let strict = depth_grid_proposals(
        &matches,
        &kps,
        &c,
        &CellGrid {
            cell_sizes_m: vec![0.25, 0.5, 1.0],
            min_votes: 3,
        },
        320,
        240,
    )
    .unwrap();
    for w in &strict {
        assert!(loose.contains(w), "strict proposal {w:?} missing at min_votes=1");
    }
    assert!(loose.len() >= strict.len());
}

#[test]
fn degenerate_calibration_is_an_error() {
    let grid = CellGrid::default();
    let bad = StereoCalib {
        focal_px: 0.0,
        baseline_m: 0.1,
        cx: 160.0,
        cy: 120.0,
    };
    assert!(depth_grid_proposals(&[], &[], &bad, &grid, 320, 240).is_err());
}

#[test]
fn label_image_export_round_trips_through_pgm() {
    let img = synth::value_noise(64, 64, 16, 40, 200, 7);
    let edges = canny(&img, 40.0, 100.0).unwrap();
    let seg = floodcanny(
        &img,
        &edges,
        &ProposalConfig {
            min_area: 50,
            ..Default::default()
        },
    );
    let labels = seg.to_label_image();
    let mut buf = Vec::new();
    crate::imaging::write_pgm(&labels, &mut buf).unwrap();
    let back = crate::imaging::read_pgm(buf.as_slice()).unwrap();
    assert_eq!(labels, back);
}
