//! Hierarchical visual vocabulary: a k-means tree quantizes descriptors into
//! words, words are weighted by how rare they are across the database, and
//! images are compared through normalized sparse signatures. An inverted file
//! accelerates retrieval by touching only shared nonzero entries, and
//! per-word summed-area structures answer window histograms in four corner
//! evaluations per present word.

use std::collections::BTreeMap;
use std::io::{BufReader, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::features::{DescriptorVector, DESCRIPTOR_DIM};
use crate::imaging::Window;

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct TreeConfig {
    /// Branch factor.
    pub branch: usize,
    /// Maximum tree depth (levels of splitting below the root).
    pub depth: usize,
    pub kmeans_iters: usize,
    pub seed: u64,
}

impl TreeConfig {
    /// Preset used for the detection experiments: branch 10, depth 4.
    pub fn detection() -> Self {
        TreeConfig {
            branch: 10,
            depth: 4,
            kmeans_iters: 10,
            seed: 0,
        }
    }

    /// Preset used for the final classification runs: branch 9, depth 4.
    pub fn classification() -> Self {
        TreeConfig {
            branch: 9,
            depth: 4,
            kmeans_iters: 10,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.branch < 2 || self.depth < 1 {
            return Err(Error::Config("need branch >= 2 and depth >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TreeNode {
    pub centroid: DescriptorVector,
    pub children: Vec<u32>,
    pub parent: u32,
    /// Rarity weight `ln(N / N_i)`; zero until [`compute_weights`] runs and
    /// zero for nodes that occur in every database image.
    pub weight: f64,
}

/// Hierarchical quantizer. Node 0 is the root; its centroid is unused.
#[derive(Debug, Clone)]
pub struct VocabularyTree {
    nodes: Vec<TreeNode>,
    pub branch: usize,
    pub depth: usize,
}

fn mix64(a: u64, b: u64) -> u64 {
    let mut x = a ^ b.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    x ^= x >> 30;
    x = x.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x ^= x >> 27;
    x = x.wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

#[inline]
fn dist_sq(a: &DescriptorVector, b: &DescriptorVector) -> f32 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        acc += d * d;
    }
    acc
}

/// Recursive k-means clustering down to `cfg.depth`, splitting while a node
/// still holds at least `branch` descriptors. Deterministic for a fixed seed:
/// each node derives its generator from the configured seed and its own id.
pub fn train_tree(descriptors: &[DescriptorVector], cfg: &TreeConfig) -> Result<VocabularyTree> {
    cfg.validate()?;
    if descriptors.len() < cfg.branch {
        return Err(Error::InsufficientData(format!(
            "{} descriptors cannot seed {} root clusters",
            descriptors.len(),
            cfg.branch
        )));
    }

    let mut nodes = vec![TreeNode {
        centroid: [0.0; DESCRIPTOR_DIM],
        children: Vec::new(),
        parent: u32::MAX,
        weight: 0.0,
    }];

    // (node id, member indices, level)
    let mut stack: Vec<(u32, Vec<u32>, usize)> =
        vec![(0, (0..descriptors.len() as u32).collect(), 0)];

    while let Some((node_id, members, level)) = stack.pop() {
        if level >= cfg.depth || members.len() < cfg.branch {
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(mix64(cfg.seed, node_id as u64));
        let k = cfg.branch.min(members.len());
        let (centroids, assignment) =
            kmeans(descriptors, &members, k, cfg.kmeans_iters, &mut rng);

        // Materialize non-empty clusters as children, in centroid order.
        let mut groups: Vec<Vec<u32>> = vec![Vec::new(); k];
        for (m, &c) in members.iter().zip(&assignment) {
            groups[c].push(*m);
        }
        for (centroid, group) in centroids.into_iter().zip(groups) {
            if group.is_empty() {
                continue;
            }
            let child_id = nodes.len() as u32;
            nodes.push(TreeNode {
                centroid,
                children: Vec::new(),
                parent: node_id,
                weight: 0.0,
            });
            nodes[node_id as usize].children.push(child_id);
            stack.push((child_id, group, level + 1));
        }
    }

    Ok(VocabularyTree {
        nodes,
        branch: cfg.branch,
        depth: cfg.depth,
    })
}

/// Lloyd iterations with k-means++ seeding. Empty clusters are reseeded from
/// the farthest member of the largest cluster. Returns centroids and the
/// member-to-cluster assignment.
fn kmeans(
    descriptors: &[DescriptorVector],
    members: &[u32],
    k: usize,
    iters: usize,
    rng: &mut ChaCha8Rng,
) -> (Vec<DescriptorVector>, Vec<usize>) {
    let n = members.len();
    let point = |i: usize| &descriptors[members[i] as usize];

    // k-means++ seeding.
    let mut centroids: Vec<DescriptorVector> = Vec::with_capacity(k);
    centroids.push(*point(rng.gen_range(0..n)));
    let mut best_d: Vec<f32> = (0..n).map(|i| dist_sq(point(i), &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = best_d.iter().map(|&d| d as f64).sum();
        let next = if total <= 0.0 {
            rng.gen_range(0..n)
        } else {
            let mut target = rng.gen_range(0.0..total);
            let mut pick = n - 1;
            for (i, &d) in best_d.iter().enumerate() {
                target -= d as f64;
                if target <= 0.0 {
                    pick = i;
                    break;
                }
            }
            pick
        };
        centroids.push(*point(next));
        for i in 0..n {
            best_d[i] = best_d[i].min(dist_sq(point(i), centroids.last().unwrap()));
        }
    }

    let mut assignment = vec![0usize; n];
    for _ in 0..iters {
        // Assign.
        let mut changed = false;
        for i in 0..n {
            let mut best = 0usize;
            let mut best_d = f32::INFINITY;
            for (c, centroid) in centroids.iter().enumerate() {
                let d = dist_sq(point(i), centroid);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            if assignment[i] != best {
                assignment[i] = best;
                changed = true;
            }
        }

        // Update.
        let mut sums = vec![[0f64; DESCRIPTOR_DIM]; centroids.len()];
        let mut counts = vec![0usize; centroids.len()];
        for i in 0..n {
            counts[assignment[i]] += 1;
            for (s, v) in sums[assignment[i]].iter_mut().zip(point(i)) {
                *s += *v as f64;
            }
        }
        for (c, centroid) in centroids.iter_mut().enumerate() {
            if counts[c] == 0 {
                // Reseed from the farthest member of the largest cluster.
                let largest = (0..counts.len()).max_by_key(|&j| counts[j]).unwrap();
                let far = (0..n)
                    .filter(|&i| assignment[i] == largest)
                    .max_by(|&a, &b| {
                        dist_sq(point(a), &centroids_snapshot(&sums, &counts, largest))
                            .total_cmp(&dist_sq(
                                point(b),
                                &centroids_snapshot(&sums, &counts, largest),
                            ))
                            .then(members[a].cmp(&members[b]))
                    });
                if let Some(far) = far {
                    *centroid = *point(far);
                }
                continue;
            }
            for (dst, s) in centroid.iter_mut().zip(&sums[c]) {
                *dst = (*s / counts[c] as f64) as f32;
            }
        }
        if !changed {
            break;
        }
    }

    (centroids, assignment)
}

fn centroids_snapshot(sums: &[[f64; DESCRIPTOR_DIM]], counts: &[usize], c: usize) -> DescriptorVector {
    let mut out = [0f32; DESCRIPTOR_DIM];
    if counts[c] > 0 {
        for (o, s) in out.iter_mut().zip(&sums[c]) {
            *o = (*s / counts[c] as f64) as f32;
        }
    }
    out
}

impl VocabularyTree {
    pub fn node(&self, id: u32) -> &TreeNode {
        &self.nodes[id as usize]
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_leaf(&self, id: u32) -> bool {
        self.nodes[id as usize].children.is_empty()
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.children.is_empty()).count() - usize::from(self.nodes.len() == 1)
    }

    pub fn leaves(&self) -> impl Iterator<Item = u32> + '_ {
        (1..self.nodes.len() as u32).filter(move |&i| self.is_leaf(i))
    }

    /// Greedy root-to-leaf descent: `branch x depth` distance evaluations.
    /// Returns the visited nodes below the root, leaf last.
    pub fn quantize_path(&self, v: &DescriptorVector) -> Vec<u32> {
        let mut path = Vec::with_capacity(self.depth);
        let mut node = 0u32;
        while !self.nodes[node as usize].children.is_empty() {
            let mut best = self.nodes[node as usize].children[0];
            let mut best_d = f32::INFINITY;
            for &child in &self.nodes[node as usize].children {
                let d = dist_sq(v, &self.nodes[child as usize].centroid);
                if d < best_d {
                    best_d = d;
                    best = child;
                }
            }
            path.push(best);
            node = best;
        }
        path
    }

    /// Leaf word for a descriptor.
    pub fn quantize(&self, v: &DescriptorVector) -> u32 {
        *self.quantize_path(v).last().unwrap_or(&0)
    }

    /// Root-to-leaf node ids (below the root) for a known leaf.
    pub fn path_to_leaf(&self, leaf: u32) -> Vec<u32> {
        let mut path = vec![leaf];
        let mut node = leaf;
        while self.nodes[node as usize].parent != u32::MAX && self.nodes[node as usize].parent != 0 {
            node = self.nodes[node as usize].parent;
            path.push(node);
        }
        path.reverse();
        path
    }

    /// Text dump of the tree structure and centroids, for inspection.
    pub fn dump_centroids<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# node parent leaf weight centroid[0..8]...")?;
        for (id, n) in self.nodes.iter().enumerate() {
            write!(
                w,
                "{id} {} {} {}",
                n.parent as i64,
                u8::from(n.children.is_empty()),
                n.weight
            )?;
            for v in n.centroid.iter().take(8) {
                write!(w, " {v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Sets every node's rarity weight to `ln(N / N_i)`, where `N_i` counts the
/// database images with at least one descriptor path through the node.
/// Nodes that no database descriptor touches keep weight zero, as do nodes
/// present in every image.
pub fn compute_weights(tree: &mut VocabularyTree, database: &[Vec<DescriptorVector>]) {
    let n_images = database.len();
    let mut counts = vec![0u32; tree.nodes.len()];
    for image in database {
        let mut seen = vec![false; tree.nodes.len()];
        for d in image {
            for node in tree.quantize_path(d) {
                seen[node as usize] = true;
            }
        }
        for (c, s) in counts.iter_mut().zip(&seen) {
            *c += u32::from(*s);
        }
    }
    for (node, &c) in tree.nodes.iter_mut().zip(&counts) {
        node.weight = if c == 0 {
            0.0
        } else {
            (n_images as f64 / c as f64).ln()
        };
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Norm {
    L1,
    L2,
}

impl Norm {
    fn name(self) -> &'static str {
        match self {
            Norm::L1 => "L1",
            Norm::L2 => "L2",
        }
    }
}

/// Sparse weighted word histogram, normalized in its declared norm. Entries
/// are `(node id, value)` sorted by node id, and include every weighted node
/// on the descriptor paths, internal nodes as well as leaves.
#[derive(Debug, Clone, PartialEq)]
pub struct Signature {
    pub entries: Vec<(u32, f64)>,
    pub norm: Norm,
}

impl Signature {
    fn from_counts(counts: BTreeMap<u32, u64>, tree: &VocabularyTree, norm: Norm) -> Result<Signature> {
        let mut entries: Vec<(u32, f64)> = counts
            .into_iter()
            .filter_map(|(node, count)| {
                let w = tree.node(node).weight;
                (w > 0.0).then_some((node, count as f64 * w))
            })
            .collect();
        if entries.is_empty() {
            return Err(Error::EmptySignature);
        }
        let scale = match norm {
            Norm::L1 => entries.iter().map(|(_, v)| v.abs()).sum::<f64>(),
            Norm::L2 => entries.iter().map(|(_, v)| v * v).sum::<f64>().sqrt(),
        };
        for (_, v) in &mut entries {
            *v /= scale;
        }
        Ok(Signature { entries, norm })
    }

    /// Keep only leaf entries and renormalize to unit L2: the form stored in
    /// the inverted file and consumed by the accumulated-product distance.
    pub fn project_leaves(&self, tree: &VocabularyTree) -> Result<Signature> {
        let mut entries: Vec<(u32, f64)> = self
            .entries
            .iter()
            .filter(|(node, _)| tree.is_leaf(*node))
            .copied()
            .collect();
        if entries.is_empty() {
            return Err(Error::EmptySignature);
        }
        let scale = entries.iter().map(|(_, v)| v * v).sum::<f64>().sqrt();
        for (_, v) in &mut entries {
            *v /= scale;
        }
        Ok(Signature {
            entries,
            norm: Norm::L2,
        })
    }

    pub fn value(&self, node: u32) -> f64 {
        self.entries
            .binary_search_by_key(&node, |(n, _)| *n)
            .map(|i| self.entries[i].1)
            .unwrap_or(0.0)
    }
}

/// Weighted path-count signature of an image's descriptors.
pub fn make_signature(
    descriptors: &[DescriptorVector],
    tree: &VocabularyTree,
    norm: Norm,
) -> Result<Signature> {
    if descriptors.is_empty() {
        return Err(Error::EmptySignature);
    }
    let mut counts: BTreeMap<u32, u64> = BTreeMap::new();
    for d in descriptors {
        for node in tree.quantize_path(d) {
            *counts.entry(node).or_insert(0) += 1;
        }
    }
    Signature::from_counts(counts, tree, norm)
}

/// Signature from per-leaf word counts (the window-histogram path); ancestor
/// nodes receive the summed counts of their leaves.
pub fn make_signature_from_leaf_counts(
    leaf_counts: &[(u32, u32)],
    tree: &VocabularyTree,
    norm: Norm,
) -> Result<Signature> {
    let mut counts: BTreeMap<u32, u64> = BTreeMap::new();
    for &(leaf, count) in leaf_counts {
        if count == 0 {
            continue;
        }
        for node in tree.path_to_leaf(leaf) {
            *counts.entry(node).or_insert(0) += count as u64;
        }
    }
    if counts.is_empty() {
        return Err(Error::EmptySignature);
    }
    Signature::from_counts(counts, tree, norm)
}

/// Distance between two signatures in their shared declared norm.
pub fn score(q: &Signature, d: &Signature) -> Result<f64> {
    if q.norm != d.norm {
        return Err(Error::NormMismatch {
            expected: q.norm.name(),
            actual: d.norm.name(),
        });
    }
    let mut qi = 0usize;
    let mut di = 0usize;
    let mut acc = 0.0f64;
    let push = |acc: &mut f64, v: f64| match q.norm {
        Norm::L1 => *acc += v.abs(),
        Norm::L2 => *acc += v * v,
    };
    while qi < q.entries.len() || di < d.entries.len() {
        match (q.entries.get(qi), d.entries.get(di)) {
            (Some(&(qn, qv)), Some(&(dn, dv))) => {
                if qn == dn {
                    push(&mut acc, qv - dv);
                    qi += 1;
                    di += 1;
                } else if qn < dn {
                    push(&mut acc, qv);
                    qi += 1;
                } else {
                    push(&mut acc, dv);
                    di += 1;
                }
            }
            (Some(&(_, qv)), None) => {
                push(&mut acc, qv);
                qi += 1;
            }
            (None, Some(&(_, dv))) => {
                push(&mut acc, dv);
                di += 1;
            }
            (None, None) => unreachable!(),
        }
    }
    Ok(match q.norm {
        Norm::L1 => acc,
        Norm::L2 => acc.sqrt(),
    })
}

/// Per-leaf posting lists over L2-normalized leaf-projected signatures.
#[derive(Debug, Clone, PartialEq)]
pub struct InvertedFile {
    /// leaf node id -> (image id, signature value) with value > 0.
    postings: BTreeMap<u32, Vec<(u32, f64)>>,
    pub n_images: u32,
}

impl InvertedFile {
    /// Indexes the database signatures by leaf. Signatures may carry any
    /// norm; they are projected onto leaves and L2-renormalized here.
    pub fn build(signatures: &[Signature], tree: &VocabularyTree) -> Result<InvertedFile> {
        let mut postings: BTreeMap<u32, Vec<(u32, f64)>> = BTreeMap::new();
        for (image_id, sig) in signatures.iter().enumerate() {
            let leaf_sig = sig.project_leaves(tree)?;
            for (node, value) in leaf_sig.entries {
                postings.entry(node).or_default().push((image_id as u32, value));
            }
        }
        Ok(InvertedFile {
            postings,
            n_images: signatures.len() as u32,
        })
    }

    pub fn posting(&self, leaf: u32) -> Option<&[(u32, f64)]> {
        self.postings.get(&leaf).map(|v| v.as_slice())
    }
}

/// Ranks all database images against a query by accumulating products over
/// shared nonzero leaves: for unit L2 signatures the squared distance is
/// `2 - 2 sum(q_i d_i)`. Returns `(image id, distance)` in ascending
/// distance, ties by image id.
pub fn query_inverted(
    query: &Signature,
    inverted: &InvertedFile,
    tree: &VocabularyTree,
) -> Result<Vec<(u32, f64)>> {
    let leaf_q = query.project_leaves(tree)?;
    let mut products = vec![0.0f64; inverted.n_images as usize];
    for (node, qv) in &leaf_q.entries {
        if let Some(posting) = inverted.posting(*node) {
            for &(image, dv) in posting {
                products[image as usize] += qv * dv;
            }
        }
    }
    let mut ranking: Vec<(u32, f64)> = products
        .into_iter()
        .enumerate()
        .map(|(i, p)| (i as u32, (2.0 - 2.0 * p).max(0.0)))
        .collect();
    ranking.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    Ok(ranking)
}

/// Majority class among the `k_nn` nearest database images. Ties prefer the
/// class with smaller summed distance, then the lexicographically smaller
/// name.
pub fn classify_knn(
    ranking: &[(u32, f64)],
    labels: &[String],
    k_nn: usize,
) -> (String, BTreeMap<String, usize>) {
    assert!(k_nn >= 1);
    let mut votes: BTreeMap<String, usize> = BTreeMap::new();
    let mut dist_sum: BTreeMap<String, f64> = BTreeMap::new();
    for &(image, dist) in ranking.iter().take(k_nn) {
        let class = &labels[image as usize];
        *votes.entry(class.clone()).or_insert(0) += 1;
        *dist_sum.entry(class.clone()).or_insert(0.0) += dist;
    }
    let winner = votes
        .iter()
        .max_by(|(ca, &va), (cb, &vb)| {
            va.cmp(&vb)
                .then_with(|| dist_sum[*cb].total_cmp(&dist_sum[*ca]))
                .then_with(|| cb.cmp(ca))
        })
        .map(|(c, _)| c.clone())
        .unwrap_or_default();
    (winner, votes)
}

// ---------------------------------------------------------------------------
// Integral word images.
// ---------------------------------------------------------------------------

/// A quantized feature occurrence in a test image.
#[derive(Debug, Clone, Copy)]
pub struct WordOccurrence {
    pub leaf: u32,
    pub x: f32,
    pub y: f32,
}

/// Per-word summed-area structure over feature occurrence counts. The
/// summed-area value at a corner is evaluated on demand by dominance
/// counting over the word's (sparse) occurrence set rather than from a
/// materialized per-word raster, which would cost `width x height` cells for
/// each of the hundreds of words in a test image; the four-corner window
/// algebra is identical.
#[derive(Debug, Clone)]
pub struct WordIntegralImages {
    width: u32,
    height: u32,
    /// leaf -> occurrence pixel coordinates, sorted by (x, y).
    words: BTreeMap<u32, Vec<(u32, u32)>>,
    /// Vocabulary size (leaves in the tree).
    pub vocabulary_size: usize,
}

/// Builds the per-word structures for one test image's quantized features.
pub fn build_word_integrals(
    occurrences: &[WordOccurrence],
    width: u32,
    height: u32,
    vocabulary_size: usize,
) -> WordIntegralImages {
    let mut words: BTreeMap<u32, Vec<(u32, u32)>> = BTreeMap::new();
    for occ in occurrences {
        let x = (occ.x.floor().max(0.0) as u32).min(width - 1);
        let y = (occ.y.floor().max(0.0) as u32).min(height - 1);
        words.entry(occ.leaf).or_default().push((x, y));
    }
    for positions in words.values_mut() {
        positions.sort_unstable();
    }
    WordIntegralImages {
        width,
        height,
        words,
        vocabulary_size,
    }
}

impl WordIntegralImages {
    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    /// Number of distinct words present in the test image.
    pub fn present_words(&self) -> usize {
        self.words.len()
    }

    /// Summed-area value for one word: occurrences strictly above-left of
    /// `(x, y)`.
    pub fn corner_count(&self, leaf: u32, x: u32, y: u32) -> u32 {
        let Some(positions) = self.words.get(&leaf) else {
            return 0;
        };
        let upper = positions.partition_point(|&(px, _)| px < x);
        positions[..upper].iter().filter(|&&(_, py)| py < y).count() as u32
    }

    /// Occurrences of `leaf` inside `window`, from the four-corner rule.
    pub fn rect_count(&self, leaf: u32, window: &Window) -> Result<u32> {
        if window.x1() > self.width || window.y1() > self.height {
            return Err(Error::OutOfBounds {
                x0: window.x0(),
                y0: window.y0(),
                x1: window.x1(),
                y1: window.y1(),
                width: self.width,
                height: self.height,
            });
        }
        let ((tlx, tly), (trx, try_), (blx, bly), (brx, bry)) = window.corners();
        Ok(self.corner_count(leaf, brx, bry) + self.corner_count(leaf, tlx, tly)
            - self.corner_count(leaf, trx, try_)
            - self.corner_count(leaf, blx, bly))
    }

    /// Per-word counts inside `window`: four corner evaluations for each of
    /// the words present in the image. Words with zero in-window count are
    /// omitted.
    pub fn window_histogram(&self, window: &Window) -> Result<Vec<(u32, u32)>> {
        if window.x1() > self.width || window.y1() > self.height {
            return Err(Error::OutOfBounds {
                x0: window.x0(),
                y0: window.y0(),
                x1: window.x1(),
                y1: window.y1(),
                width: self.width,
                height: self.height,
            });
        }
        let mut out = Vec::new();
        for &leaf in self.words.keys() {
            let count = self.rect_count(leaf, window)?;
            if count > 0 {
                out.push((leaf, count));
            }
        }
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// Trained model bundle and persistence.
// ---------------------------------------------------------------------------

/// Tree, weights, database signatures, labels and the inverted file,
/// persisted together as one versioned binary file.
#[derive(Debug, Clone)]
pub struct VTreeModel {
    pub tree: VocabularyTree,
    pub norm: Norm,
    pub labels: Vec<String>,
    pub signatures: Vec<Signature>,
    pub inverted: InvertedFile,
}

impl VTreeModel {
    /// Trains the vocabulary on all database descriptors, weights it, and
    /// indexes every image.
    pub fn train(
        images: &[(String, Vec<DescriptorVector>)],
        cfg: &TreeConfig,
        norm: Norm,
    ) -> Result<VTreeModel> {
        let all: Vec<DescriptorVector> = images
            .iter()
            .flat_map(|(_, descs)| descs.iter().copied())
            .collect();
        let mut tree = train_tree(&all, cfg)?;
        let database: Vec<Vec<DescriptorVector>> =
            images.iter().map(|(_, d)| d.clone()).collect();
        compute_weights(&mut tree, &database);
        let mut labels = Vec::new();
        let mut signatures = Vec::new();
        for (label, descs) in images {
            labels.push(label.clone());
            signatures.push(make_signature(descs, &tree, norm)?);
        }
        let inverted = InvertedFile::build(&signatures, &tree)?;
        Ok(VTreeModel {
            tree,
            norm,
            labels,
            signatures,
            inverted,
        })
    }
}

const VTREE_MAGIC: &[u8; 8] = b"VTMODEL1";

fn w_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    Ok(w.write_all(&v.to_le_bytes())?)
}

fn w_f64<W: Write>(w: &mut W, v: f64) -> Result<()> {
    Ok(w.write_all(&v.to_le_bytes())?)
}

fn r_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn r_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

pub fn save_model<W: Write>(model: &VTreeModel, mut w: W) -> Result<()> {
    w.write_all(VTREE_MAGIC)?;
    w_u32(&mut w, model.tree.branch as u32)?;
    w_u32(&mut w, model.tree.depth as u32)?;
    w.write_all(&[match model.norm {
        Norm::L1 => 1,
        Norm::L2 => 2,
    }])?;

    w_u32(&mut w, model.tree.nodes.len() as u32)?;
    for node in &model.tree.nodes {
        w_u32(&mut w, node.parent)?;
        w_f64(&mut w, node.weight)?;
        w_u32(&mut w, node.children.len() as u32)?;
        for &c in &node.children {
            w_u32(&mut w, c)?;
        }
        for v in &node.centroid {
            w.write_all(&v.to_le_bytes())?;
        }
    }

    w_u32(&mut w, model.labels.len() as u32)?;
    for (label, sig) in model.labels.iter().zip(&model.signatures) {
        let bytes = label.as_bytes();
        w_u32(&mut w, bytes.len() as u32)?;
        w.write_all(bytes)?;
        w_u32(&mut w, sig.entries.len() as u32)?;
        for &(node, value) in &sig.entries {
            w_u32(&mut w, node)?;
            w_f64(&mut w, value)?;
        }
    }

    w_u32(&mut w, model.inverted.postings.len() as u32)?;
    for (&leaf, posting) in &model.inverted.postings {
        w_u32(&mut w, leaf)?;
        w_u32(&mut w, posting.len() as u32)?;
        for &(image, value) in posting {
            w_u32(&mut w, image)?;
            w_f64(&mut w, value)?;
        }
    }
    Ok(())
}

pub fn load_model<R: Read>(mut r: R) -> Result<VTreeModel> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != VTREE_MAGIC {
        return Err(Error::ModelFormat("bad vocabulary model magic".into()));
    }
    let branch = r_u32(&mut r)? as usize;
    let depth = r_u32(&mut r)? as usize;
    let mut norm_b = [0u8; 1];
    r.read_exact(&mut norm_b)?;
    let norm = match norm_b[0] {
        1 => Norm::L1,
        2 => Norm::L2,
        v => return Err(Error::ModelFormat(format!("bad norm tag {v}"))),
    };

    let node_count = r_u32(&mut r)? as usize;
    let mut nodes = Vec::with_capacity(node_count);
    for _ in 0..node_count {
        let parent = r_u32(&mut r)?;
        let weight = r_f64(&mut r)?;
        let child_count = r_u32(&mut r)? as usize;
        let mut children = Vec::with_capacity(child_count);
        for _ in 0..child_count {
            children.push(r_u32(&mut r)?);
        }
        let mut centroid = [0f32; DESCRIPTOR_DIM];
        for v in &mut centroid {
            let mut b = [0u8; 4];
            r.read_exact(&mut b)?;
            *v = f32::from_le_bytes(b);
        }
        nodes.push(TreeNode {
            centroid,
            children,
            parent,
            weight,
        });
    }
    let tree = VocabularyTree {
        nodes,
        branch,
        depth,
    };

    let image_count = r_u32(&mut r)? as usize;
    let mut labels = Vec::with_capacity(image_count);
    let mut signatures = Vec::with_capacity(image_count);
    for _ in 0..image_count {
        let len = r_u32(&mut r)? as usize;
        let mut bytes = vec![0u8; len];
        r.read_exact(&mut bytes)?;
        labels.push(String::from_utf8(bytes).map_err(|_| {
            Error::ModelFormat("label is not valid UTF-8".into())
        })?);
        let entry_count = r_u32(&mut r)? as usize;
        let mut entries = Vec::with_capacity(entry_count);
        for _ in 0..entry_count {
            let node = r_u32(&mut r)?;
            let value = r_f64(&mut r)?;
            entries.push((node, value));
        }
        signatures.push(Signature { entries, norm });
    }

    let posting_count = r_u32(&mut r)? as usize;
    let mut postings = BTreeMap::new();
    for _ in 0..posting_count {
        let leaf = r_u32(&mut r)?;
        let len = r_u32(&mut r)? as usize;
        let mut posting = Vec::with_capacity(len);
        for _ in 0..len {
            let image = r_u32(&mut r)?;
            let value = r_f64(&mut r)?;
            posting.push((image, value));
        }
        postings.insert(leaf, posting);
    }

    Ok(VTreeModel {
        tree,
        norm,
        labels,
        signatures,
        inverted: InvertedFile {
            postings,
            n_images: image_count as u32,
        },
    })
}

pub fn save_model_file(model: &VTreeModel, path: impl AsRef<Path>) -> Result<()> {
    let f = std::fs::File::create(path)?;
    save_model(model, std::io::BufWriter::new(f))
}

pub fn load_model_file(path: impl AsRef<Path>) -> Result<VTreeModel> {
    let f = std::fs::File::open(path)?;
    load_model(BufReader::new(f))
}

#[cfg(test)]
mod tests;
