use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::synth;

/// Unit vector concentrated on one axis, plus jitter.
fn axis_point(axis: usize, jitter: f32, rng: &mut ChaCha8Rng) -> DescriptorVector {
    let mut v = [0f32; DESCRIPTOR_DIM];
    v[axis] = 1.0;
    for x in v.iter_mut() {
        *x += rng.gen_range(0.0..jitter);
    }
    let n = v.iter().map(|x| x * x).sum::<f32>().sqrt();
    for x in v.iter_mut() {
        *x /= n;
    }
    v
}

fn cfg(branch: usize, depth: usize, seed: u64) -> TreeConfig {
    TreeConfig {
        branch,
        depth,
        kmeans_iters: 10,
        seed,
    }
}

#[test]
fn two_separated_clusters_split_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut points = Vec::new();
    for _ in 0..100 {
        points.push(axis_point(0, 0.05, &mut rng));
    }
    for _ in 0..100 {
        points.push(axis_point(7, 0.05, &mut rng));
    }
    let tree = train_tree(&points, &cfg(2, 1, 3)).unwrap();
    assert_eq!(tree.leaf_count(), 2);

    let leaf_a = tree.quantize(&points[0]);
    let leaf_b = tree.quantize(&points[100]);
    assert_ne!(leaf_a, leaf_b);
    for p in &points[..100] {
        assert_eq!(tree.quantize(p), leaf_a);
    }
    for p in &points[100..] {
        assert_eq!(tree.quantize(p), leaf_b);
    }
}

#[test]
fn identical_descriptors_do_not_crash() {
    let points = vec![[0.25f32; DESCRIPTOR_DIM]; 50];
    let tree = train_tree(&points, &cfg(3, 2, 5)).unwrap();
    let leaf = tree.quantize(&points[0]);
    for p in &points {
        assert_eq!(tree.quantize(p), leaf);
    }
}

#[test]
fn wide_deep_tree_bounds_leaves_and_quantizes_everything() {
    let points = synth::clustered_descriptors(50_000, 500, 0.05, 9);
    let tree = train_tree(
        &points,
        &TreeConfig {
            branch: 10,
            depth: 4,
            kmeans_iters: 4,
            seed: 17,
        },
    )
    .unwrap();
    assert!(tree.leaf_count() <= 10_000, "leaf count {}", tree.leaf_count());
    for p in points.iter().step_by(7) {
        let path = tree.quantize_path(p);
        assert!(!path.is_empty() && path.len() <= 4);
        assert!(tree.is_leaf(*path.last().unwrap()));
    }
}

#[test]
fn training_is_seed_deterministic() {
    let points = synth::clustered_descriptors(2000, 40, 0.05, 2);
    let a = train_tree(&points, &cfg(4, 2, 11)).unwrap();
    let b = train_tree(&points, &cfg(4, 2, 11)).unwrap();
    assert_eq!(a.node_count(), b.node_count());
    for id in 0..a.node_count() as u32 {
        assert_eq!(a.node(id).children, b.node(id).children);
        for (x, y) in a.node(id).centroid.iter().zip(&b.node(id).centroid) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }
}

#[test]
fn leaf_centroid_quantizes_to_itself() {
    let points = synth::clustered_descriptors(500, 20, 0.05, 4);
    let tree = train_tree(&points, &cfg(3, 2, 7)).unwrap();
    for leaf in tree.leaves().take(10) {
        assert_eq!(tree.quantize(&tree.node(leaf).centroid), leaf);
    }
}

#[test]
fn greedy_descent_mostly_agrees_with_flat_search() {
    let points = synth::clustered_descriptors(2000, 64, 0.02, 6);
    let tree = train_tree(&points, &cfg(4, 3, 13)).unwrap();
    let leaves: Vec<u32> = tree.leaves().collect();
    let queries = synth::clustered_descriptors(1000, 64, 0.02, 6);

    let mut agree = 0;
    for q in &queries {
        let greedy = tree.quantize(q);
        let flat = leaves
            .iter()
            .min_by(|&&a, &&b| {
                dist_sq(q, &tree.node(a).centroid)
                    .total_cmp(&dist_sq(q, &tree.node(b).centroid))
                    .then(a.cmp(&b))
            })
            .copied()
            .unwrap();
        if greedy == flat {
            agree += 1;
        }
    }
    let frac = agree as f64 / queries.len() as f64;
    assert!(frac >= 0.85, "greedy/flat agreement only {frac:.3}");
}

fn axis_image(axis: usize, count: usize, seed: u64) -> Vec<DescriptorVector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| axis_point(axis, 0.05, &mut rng)).collect()
}

#[test]
fn rarity_weights_follow_document_frequency() {
    // 100 one-descriptor images: 90 in cluster axis-0, 10 in cluster axis-7.
    let mut database: Vec<Vec<DescriptorVector>> = Vec::new();
    for i in 0..90 {
        database.push(axis_image(0, 1, 100 + i));
    }
    for i in 0..10 {
        database.push(axis_image(7, 1, 200 + i));
    }
    let all: Vec<DescriptorVector> = database.iter().flatten().copied().collect();
    let mut tree = train_tree(&all, &cfg(2, 1, 19)).unwrap();
    compute_weights(&mut tree, &database);

    let rare_leaf = tree.quantize(&database[95][0]);
    let common_leaf = tree.quantize(&database[0][0]);
    assert_ne!(rare_leaf, common_leaf);
    assert!(
        (tree.node(rare_leaf).weight - 10f64.ln()).abs() < 1e-9,
        "rare leaf weight {}",
        tree.node(rare_leaf).weight
    );
    assert!(
        (tree.node(common_leaf).weight - (100f64 / 90.0).ln()).abs() < 1e-9,
        "common leaf weight {}",
        tree.node(common_leaf).weight
    );
    // The root is in every image: weight zero.
    assert_eq!(tree.node(0).weight, 0.0);
}

/// Unit vector blending two axes: points sharing `main` form a tight
/// super-cluster whose members differ in `sub`.
fn blend_point(main: usize, sub: usize) -> DescriptorVector {
    let mut v = [0f32; DESCRIPTOR_DIM];
    v[main] = 0.9;
    v[sub] = 0.45;
    let n = v.iter().map(|x| x * x).sum::<f32>().sqrt();
    for x in v.iter_mut() {
        *x /= n;
    }
    v
}

#[test]
fn internal_nodes_carry_weights_too() {
    // Four one-descriptor images in two super-clusters of two.
    let database = vec![
        vec![blend_point(0, 1)],
        vec![blend_point(0, 2)],
        vec![blend_point(5, 6)],
        vec![blend_point(5, 7)],
    ];
    let all: Vec<DescriptorVector> = database.iter().flatten().copied().collect();
    let mut tree = train_tree(&all, &cfg(2, 2, 23)).unwrap();
    compute_weights(&mut tree, &database);

    // Some internal (non-leaf, non-root) node must carry ln(4/2).
    let internal_with_ln2 = (1..tree.node_count() as u32)
        .filter(|&id| !tree.is_leaf(id))
        .any(|id| (tree.node(id).weight - 2f64.ln()).abs() < 1e-9);
    assert!(internal_with_ln2, "no internal node weighted ln 2");
}

#[test]
fn single_word_image_gives_unit_signature() {
    let mut database = Vec::new();
    database.push(axis_image(0, 5, 41));
    database.push(axis_image(7, 5, 42));
    let all: Vec<DescriptorVector> = database.iter().flatten().copied().collect();
    let mut tree = train_tree(&all, &cfg(2, 1, 29)).unwrap();
    compute_weights(&mut tree, &database);

    let sig = make_signature(&database[0], &tree, Norm::L1).unwrap();
    assert_eq!(sig.entries.len(), 1);
    assert!((sig.entries[0].1 - 1.0).abs() < 1e-12);
}

#[test]
fn signature_is_permutation_invariant() {
    let descs = synth::clustered_descriptors(60, 10, 0.04, 31);
    let database = vec![descs.clone(), synth::clustered_descriptors(60, 10, 0.04, 32)];
    let all: Vec<DescriptorVector> = database.iter().flatten().copied().collect();
    let mut tree = train_tree(&all, &cfg(3, 2, 37)).unwrap();
    compute_weights(&mut tree, &database);

    let mut shuffled = descs.clone();
    shuffled.reverse();
    shuffled.swap(3, 17);
    let a = make_signature(&descs, &tree, Norm::L1).unwrap();
    let b = make_signature(&shuffled, &tree, Norm::L1).unwrap();
    assert_eq!(a, b);
}

#[test]
fn signature_matches_direct_counting() {
    let database = vec![
        synth::clustered_descriptors(80, 12, 0.05, 51),
        synth::clustered_descriptors(80, 12, 0.05, 52),
        synth::clustered_descriptors(80, 12, 0.05, 53),
    ];
    let all: Vec<DescriptorVector> = database.iter().flatten().copied().collect();
    let mut tree = train_tree(&all, &cfg(3, 2, 41)).unwrap();
    compute_weights(&mut tree, &database);

    let descs = &database[1];
    let sig = make_signature(descs, &tree, Norm::L1).unwrap();

    // Independent count-and-weight oracle.
    let mut counts: BTreeMap<u32, u64> = BTreeMap::new();
    for d in descs {
        for node in tree.quantize_path(d) {
            *counts.entry(node).or_insert(0) += 1;
        }
    }
    let mut expected: Vec<(u32, f64)> = counts
        .into_iter()
        .filter(|&(node, _)| tree.node(node).weight > 0.0)
        .map(|(node, c)| (node, c as f64 * tree.node(node).weight))
        .collect();
    let total: f64 = expected.iter().map(|(_, v)| v).sum();
    for (_, v) in &mut expected {
        *v /= total;
    }
    assert_eq!(sig.entries.len(), expected.len());
    for ((na, va), (nb, vb)) in sig.entries.iter().zip(&expected) {
        assert_eq!(na, nb);
        assert!((va - vb).abs() < 1e-12);
    }
}

#[test]
fn score_of_identical_signatures_is_zero() {
    let descs = synth::clustered_descriptors(40, 8, 0.05, 61);
    let database = vec![descs.clone(), synth::clustered_descriptors(40, 8, 0.05, 62)];
    let all: Vec<DescriptorVector> = database.iter().flatten().copied().collect();
    let mut tree = train_tree(&all, &cfg(3, 2, 43)).unwrap();
    compute_weights(&mut tree, &database);
    let sig = make_signature(&descs, &tree, Norm::L1).unwrap();
    assert_eq!(score(&sig, &sig).unwrap(), 0.0);
}

#[test]
fn disjoint_l1_signatures_score_two() {
    let a = Signature {
        entries: vec![(1, 0.5), (2, 0.5)],
        norm: Norm::L1,
    };
    let b = Signature {
        entries: vec![(5, 1.0)],
        norm: Norm::L1,
    };
    assert!((score(&a, &b).unwrap() - 2.0).abs() < 1e-12);
}

#[test]
fn norm_mismatch_is_an_error() {
    let a = Signature {
        entries: vec![(1, 1.0)],
        norm: Norm::L1,
    };
    let b = Signature {
        entries: vec![(1, 1.0)],
        norm: Norm::L2,
    };
    assert!(matches!(score(&a, &b), Err(Error::NormMismatch { .. })));
}

fn random_l2_signature(rng: &mut ChaCha8Rng, max_node: u32) -> Signature {
    let n = rng.gen_range(1..20usize);
    let mut nodes: Vec<u32> = (0..n).map(|_| rng.gen_range(1..max_node)).collect();
    nodes.sort_unstable();
    nodes.dedup();
    let mut entries: Vec<(u32, f64)> = nodes
        .into_iter()
        .map(|node| (node, rng.gen_range(0.01..1.0)))
        .collect();
    let norm = entries.iter().map(|(_, v)| v * v).sum::<f64>().sqrt();
    for (_, v) in &mut entries {
        *v /= norm;
    }
    Signature {
        entries,
        norm: Norm::L2,
    }
}

#[test]
fn accumulated_product_equals_squared_l2_distance() {
    let mut rng = ChaCha8Rng::seed_from_u64(71);
    for _ in 0..200 {
        let q = random_l2_signature(&mut rng, 100);
        let d = random_l2_signature(&mut rng, 100);
        let mut product = 0.0;
        for &(node, qv) in &q.entries {
            product += qv * d.value(node);
        }
        let lhs = 2.0 - 2.0 * product;
        let rhs = score(&q, &d).unwrap().powi(2);
        assert!(
            (lhs - rhs).abs() <= 1e-9,
            "identity violated: {lhs} vs {rhs}"
        );
    }
}

fn small_database(n_images: usize, seed: u64) -> (VocabularyTree, Vec<Signature>) {
    let database: Vec<Vec<DescriptorVector>> = (0..n_images)
        .map(|i| synth::clustered_descriptors(25, 6, 0.06, seed + i as u64))
        .collect();
    let all: Vec<DescriptorVector> = database.iter().flatten().copied().collect();
    let mut tree = train_tree(&all, &cfg(3, 3, seed)).unwrap();
    compute_weights(&mut tree, &database);
    let signatures: Vec<Signature> = database
        .iter()
        .map(|d| make_signature(d, &tree, Norm::L1).unwrap())
        .collect();
    (tree, signatures)
}

#[test]
fn inverted_ranking_equals_exhaustive_scoring() {
    let (tree, signatures) = small_database(50, 81);
    let inverted = InvertedFile::build(&signatures, &tree).unwrap();

    let leaf_sigs: Vec<Signature> = signatures
        .iter()
        .map(|s| s.project_leaves(&tree).unwrap())
        .collect();

    for (qi, sig) in signatures.iter().enumerate() {
        let fast = query_inverted(sig, &inverted, &tree).unwrap();

        // Exhaustive squared L2 scores, the algebraically independent route.
        let q = &leaf_sigs[qi];
        let slow: Vec<f64> = leaf_sigs
            .iter()
            .map(|d| score(q, d).unwrap().powi(2))
            .collect();

        // Distances agree per image; the fast ordering is sorted under the
        // exhaustive distances too; exact fast ties ascend by image id.
        for &(image, dist) in &fast {
            assert!(
                (dist - slow[image as usize]).abs() <= 1e-9,
                "query {qi}, image {image}: {dist} vs {}",
                slow[image as usize]
            );
        }
        for pair in fast.windows(2) {
            assert!(
                slow[pair[0].0 as usize] <= slow[pair[1].0 as usize] + 2e-9,
                "query {qi}: fast order contradicts exhaustive scores"
            );
            if pair[0].1 == pair[1].1 {
                assert!(pair[0].0 < pair[1].0, "query {qi}: tie not broken by id");
            }
        }

        // Self-retrieval at rank 1 with ~zero distance.
        assert_eq!(fast[0].0 as usize, qi);
        assert!(fast[0].1 <= 1e-9, "self distance {}", fast[0].1);
    }
}

#[test]
fn untouched_images_sit_at_distance_two() {
    let mut rng = ChaCha8Rng::seed_from_u64(91);
    let mut database = Vec::new();
    for i in 0..4 {
        database.push(vec![axis_point(i, 0.03, &mut rng); 10]);
    }
    let all: Vec<DescriptorVector> = database.iter().flatten().copied().collect();
    let mut tree = train_tree(&all, &cfg(4, 1, 97)).unwrap();
    compute_weights(&mut tree, &database);
    let signatures: Vec<Signature> = database
        .iter()
        .map(|d| make_signature(d, &tree, Norm::L2).unwrap())
        .collect();
    let inverted = InvertedFile::build(&signatures, &tree).unwrap();

    let ranking = query_inverted(&signatures[0], &inverted, &tree).unwrap();
    for &(image, dist) in &ranking {
        if image != 0 {
            assert!((dist - 2.0).abs() < 1e-9, "image {image} at distance {dist}");
        }
    }
}

#[test]
fn knn_majority_and_tiebreaks() {
    let labels: Vec<String> = ["a", "a", "a", "a", "a", "a", "b", "b", "b", "b"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let ranking: Vec<(u32, f64)> = (0..10).map(|i| (i as u32, i as f64 * 0.1)).collect();
    let (class, votes) = classify_knn(&ranking, &labels, 10);
    assert_eq!(class, "a");
    assert_eq!(votes["a"], 6);
    assert_eq!(votes["b"], 4);

    let (class, _) = classify_knn(&ranking, &labels, 1);
    assert_eq!(class, "a");

    // 1-1 tie at k=2 goes to the smaller summed distance.
    let labels2: Vec<String> = vec!["zed".into(), "alpha".into()];
    let ranking2 = vec![(0u32, 0.1), (1u32, 0.5)];
    let (class, _) = classify_knn(&ranking2, &labels2, 2);
    assert_eq!(class, "zed");

    // Exact tie on distance too: lexicographic.
    let ranking3 = vec![(0u32, 0.3), (1u32, 0.3)];
    let (class, _) = classify_knn(&ranking3, &labels2, 2);
    assert_eq!(class, "alpha");
}

#[test]
fn knn_sweep_settings_run() {
    let (tree, signatures) = small_database(12, 101);
    let inverted = InvertedFile::build(&signatures, &tree).unwrap();
    let labels: Vec<String> = (0..12).map(|i| format!("class{}", i % 3)).collect();
    for k in [1usize, 5, 10] {
        let ranking = query_inverted(&signatures[3], &inverted, &tree).unwrap();
        let (class, votes) = classify_knn(&ranking, &labels, k);
        assert!(!class.is_empty());
        assert_eq!(votes.values().sum::<usize>(), k);
    }
}

// --------------------------------------------------------------------------
// Integral word images.
// --------------------------------------------------------------------------

#[test]
fn single_occurrence_counts_once() {
    let occ = vec![WordOccurrence {
        leaf: 9,
        x: 10.0,
        y: 10.0,
    }];
    let wii = build_word_integrals(&occ, 64, 48, 20);
    let full = Window::new(0, 0, 64, 48).unwrap();
    assert_eq!(wii.rect_count(9, &full).unwrap(), 1);
    assert_eq!(wii.rect_count(3, &full).unwrap(), 0);
    assert_eq!(wii.window_histogram(&full).unwrap(), vec![(9, 1)]);
}

#[test]
fn empty_window_region_is_all_zero() {
    let occ = vec![WordOccurrence {
        leaf: 2,
        x: 50.0,
        y: 40.0,
    }];
    let wii = build_word_integrals(&occ, 64, 48, 8);
    let w = Window::new(0, 0, 10, 10).unwrap();
    assert!(wii.window_histogram(&w).unwrap().is_empty());
}

#[test]
fn out_of_bounds_window_is_error() {
    let wii = build_word_integrals(&[], 32, 32, 4);
    let w = Window::new(10, 10, 40, 20).unwrap();
    assert!(matches!(
        wii.window_histogram(&w),
        Err(Error::OutOfBounds { .. })
    ));
}

#[test]
fn window_histogram_matches_direct_counting() {
    let mut rng = ChaCha8Rng::seed_from_u64(111);
    let width = 160u32;
    let height = 120u32;
    let occurrences: Vec<WordOccurrence> = (0..400)
        .map(|_| WordOccurrence {
            leaf: rng.gen_range(0..30),
            x: rng.gen_range(0.0..width as f32),
            y: rng.gen_range(0.0..height as f32),
        })
        .collect();
    let wii = build_word_integrals(&occurrences, width, height, 30);

    // Full-image histogram equals per-word totals.
    let full = Window::new(0, 0, width, height).unwrap();
    let full_hist = wii.window_histogram(&full).unwrap();
    let total: u32 = full_hist.iter().map(|(_, c)| c).sum();
    assert_eq!(total as usize, occurrences.len());

    for _ in 0..100 {
        let x0 = rng.gen_range(0..width - 1);
        let y0 = rng.gen_range(0..height - 1);
        let x1 = rng.gen_range(x0 + 1..=width);
        let y1 = rng.gen_range(y0 + 1..=height);
        let w = Window::new(x0, y0, x1, y1).unwrap();
        let hist = wii.window_histogram(&w).unwrap();

        let mut direct: BTreeMap<u32, u32> = BTreeMap::new();
        for occ in &occurrences {
            let px = occ.x.floor() as u32;
            let py = occ.y.floor() as u32;
            if px >= x0 && px < x1 && py >= y0 && py < y1 {
                *direct.entry(occ.leaf).or_insert(0) += 1;
            }
        }
        let direct: Vec<(u32, u32)> = direct.into_iter().collect();
        assert_eq!(hist, direct);
    }
}

#[test]
fn leaf_count_signature_equals_descriptors_signature() {
    let (tree, _) = small_database(6, 131);
    let descs = synth::clustered_descriptors(30, 6, 0.06, 131);
    let from_descs = make_signature(&descs, &tree, Norm::L2).unwrap();

    let mut leaf_counts: BTreeMap<u32, u32> = BTreeMap::new();
    for d in &descs {
        *leaf_counts.entry(tree.quantize(d)).or_insert(0) += 1;
    }
    let counts: Vec<(u32, u32)> = leaf_counts.into_iter().collect();
    let from_counts = make_signature_from_leaf_counts(&counts, &tree, Norm::L2).unwrap();

    assert_eq!(from_descs.entries.len(), from_counts.entries.len());
    for ((na, va), (nb, vb)) in from_descs.entries.iter().zip(&from_counts.entries) {
        assert_eq!(na, nb);
        assert!((va - vb).abs() < 1e-12);
    }
}

// --------------------------------------------------------------------------
// Persistence.
// --------------------------------------------------------------------------

#[test]
fn model_round_trip_is_identical_and_deterministic() {
    let images: Vec<(String, Vec<DescriptorVector>)> = (0..8)
        .map(|i| {
            (
                format!("class{}", i % 3),
                synth::clustered_descriptors(30, 8, 0.05, 200 + i as u64),
            )
        })
        .collect();
    let model = VTreeModel::train(&images, &cfg(3, 2, 7), Norm::L1).unwrap();

    let mut bytes = Vec::new();
    save_model(&model, &mut bytes).unwrap();
    let loaded = load_model(bytes.as_slice()).unwrap();

    assert_eq!(model.labels, loaded.labels);
    assert_eq!(model.signatures, loaded.signatures);
    assert_eq!(model.inverted, loaded.inverted);
    assert_eq!(model.tree.node_count(), loaded.tree.node_count());

    let mut again = Vec::new();
    save_model(&loaded, &mut again).unwrap();
    assert_eq!(bytes, again, "model bytes not reproducible");

    // Retraining with the same seed reproduces the bytes too.
    let model2 = VTreeModel::train(&images, &cfg(3, 2, 7), Norm::L1).unwrap();
    let mut bytes2 = Vec::new();
    save_model(&model2, &mut bytes2).unwrap();
    assert_eq!(bytes, bytes2);
}

#[test]
fn empty_image_signature_is_an_error() {
    let (tree, _) = small_database(4, 141);
    assert!(matches!(
        make_signature(&[], &tree, Norm::L1),
        Err(Error::EmptySignature)
    ));
}
