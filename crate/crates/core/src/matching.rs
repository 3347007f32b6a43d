//! Descriptor database, exact and approximate nearest-neighbor search, and
//! the distance-ratio match filter.
//!
//! The approximate path is a small forest of randomized kd-trees searched
//! best-bin-first under a shared leaf-visit budget; with an unlimited budget
//! it reproduces the exact scan, ties broken by lowest database index in
//! both paths.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::features::Descriptor;

/// Identifies where a database descriptor came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Owner {
    pub model_id: u32,
    pub keypoint: u32,
}

/// Flat descriptor store; all vectors share one dimension and carry an
/// owner tag.
#[derive(Debug, Clone)]
pub struct DescriptorSet {
    dim: usize,
    data: Vec<f32>,
    owners: Vec<Owner>,
}

impl DescriptorSet {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0);
        DescriptorSet {
            dim,
            data: Vec::new(),
            owners: Vec::new(),
        }
    }

    pub fn push(&mut self, vector: &[f32], owner: Owner) {
        assert_eq!(vector.len(), self.dim, "descriptor dimension mismatch");
        self.data.extend_from_slice(vector);
        self.owners.push(owner);
    }

    pub fn extend_from_descriptors(&mut self, descriptors: &[Descriptor], model_id: u32) {
        for (i, d) in descriptors.iter().enumerate() {
            self.push(
                &d.values,
                Owner {
                    model_id,
                    keypoint: i as u32,
                },
            );
        }
    }

    pub fn from_descriptors(descriptors: &[Descriptor], model_id: u32) -> Self {
        let mut set = DescriptorSet::new(crate::features::DESCRIPTOR_DIM);
        set.extend_from_descriptors(descriptors, model_id);
        set
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.owners.len()
    }

    pub fn is_empty(&self) -> bool {
        self.owners.is_empty()
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, index: usize) -> &[f32] {
        &self.data[index * self.dim..(index + 1) * self.dim]
    }

    #[inline]
    pub fn owner(&self, index: usize) -> Owner {
        self.owners[index]
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct MatchConfig {
    /// Best/second-best distance ratio above which a match is dropped.
    pub distance_ratio: f32,
    /// Search the kd-forest instead of scanning exhaustively.
    pub approx: bool,
    /// Leaf-visit budget per query for the approximate search.
    pub approx_checks: usize,
}

impl Default for MatchConfig {
    fn default() -> Self {
        MatchConfig {
            distance_ratio: 0.8,
            approx: false,
            approx_checks: 96,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Match {
    pub query_index: usize,
    pub db_index: usize,
    pub model_id: u32,
    pub model_keypoint: u32,
    /// Euclidean distance to the best database descriptor.
    pub distance: f32,
    /// Best over second-best distance.
    pub ratio: f32,
}

#[inline]
fn dist_sq(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        acc += d * d;
    }
    acc
}

#[inline]
fn dist_sq_bounded(a: &[f32], b: &[f32], bound: f32) -> f32 {
    let mut acc = 0.0;
    let chunks = a.len() / 16;
    for c in 0..chunks {
        let off = c * 16;
        for i in 0..16 {
            let d = a[off + i] - b[off + i];
            acc += d * d;
        }
        if acc > bound {
            return acc;
        }
    }
    for i in chunks * 16..a.len() {
        let d = a[i] - b[i];
        acc += d * d;
    }
    acc
}

/// Two nearest neighbors with deterministic tie-breaking: on equal distance
/// the lower database index wins.
#[derive(Clone, Copy)]
struct TwoBest {
    d1: f32,
    i1: usize,
    d2: f32,
    i2: usize,
}

impl TwoBest {
    fn new() -> Self {
        TwoBest {
            d1: f32::INFINITY,
            i1: usize::MAX,
            d2: f32::INFINITY,
            i2: usize::MAX,
        }
    }

    #[inline]
    fn offer(&mut self, d: f32, i: usize) {
        let beats = |d: f32, i: usize, dr: f32, ir: usize| d < dr || (d == dr && i < ir);
        if beats(d, i, self.d1, self.i1) {
            self.d2 = self.d1;
            self.i2 = self.i1;
            self.d1 = d;
            self.i1 = i;
        } else if i != self.i1 && beats(d, i, self.d2, self.i2) {
            self.d2 = d;
            self.i2 = i;
        }
    }
}

fn two_nearest_brute(db: &DescriptorSet, q: &[f32]) -> TwoBest {
    let mut best = TwoBest::new();
    for i in 0..db.len() {
        let d = dist_sq_bounded(db.get(i), q, best.d2);
        if d <= best.d2 {
            best.offer(d, i);
        }
    }
    best
}

// ---------------------------------------------------------------------------
// Randomized kd-forest with best-bin-first search.
// ---------------------------------------------------------------------------

const FOREST_TREES: usize = 4;
const LEAF_SIZE: usize = 16;
/// Split dimension is drawn from this many top-variance dimensions.
const TOP_VARIANCE_DIMS: usize = 5;
/// Variance is estimated on at most this many points per node.
const VARIANCE_SAMPLE: usize = 100;

#[derive(Debug, Clone)]
enum KdNode {
    Split {
        dim: u16,
        value: f32,
        left: u32,
        right: u32,
    },
    Leaf {
        start: u32,
        end: u32,
    },
}

#[derive(Debug, Clone)]
struct KdTree {
    nodes: Vec<KdNode>,
    /// Database indices, permuted so each leaf owns a contiguous range.
    order: Vec<u32>,
}

/// Randomized kd-tree index over a [`DescriptorSet`]. Queries must pass the
/// same set the index was built from.
#[derive(Debug, Clone)]
pub struct KdForest {
    trees: Vec<KdTree>,
    len: usize,
    dim: usize,
}

/// Builds the search index. Requires at least two database descriptors
/// (otherwise no second-best distance exists for the ratio test).
pub fn build_index(db: &DescriptorSet, seed: u64) -> Result<KdForest> {
    if db.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "index needs >= 2 descriptors, got {}",
            db.len()
        )));
    }
    let mut trees = Vec::with_capacity(FOREST_TREES);
    for t in 0..FOREST_TREES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(t as u64 * 0x9e37_79b9));
        let mut order: Vec<u32> = (0..db.len() as u32).collect();
        let mut nodes = Vec::new();
        build_node(db, &mut order, 0, db.len(), &mut nodes, &mut rng);
        trees.push(KdTree { nodes, order });
    }
    Ok(KdForest {
        trees,
        len: db.len(),
        dim: db.dim(),
    })
}

fn build_node(
    db: &DescriptorSet,
    order: &mut [u32],
    start: usize,
    end: usize,
    nodes: &mut Vec<KdNode>,
    rng: &mut ChaCha8Rng,
) -> u32 {
    let id = nodes.len() as u32;
    if end - start <= LEAF_SIZE {
        nodes.push(KdNode::Leaf {
            start: start as u32,
            end: end as u32,
        });
        return id;
    }
    nodes.push(KdNode::Leaf { start: 0, end: 0 }); // placeholder

    let dim = db.dim();
    let sample = (end - start).min(VARIANCE_SAMPLE);
    let mut mean = vec![0f32; dim];
    for &idx in order[start..start + sample].iter() {
        for (m, v) in mean.iter_mut().zip(db.get(idx as usize)) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= sample as f32;
    }
    let mut var = vec![0f32; dim];
    for &idx in order[start..start + sample].iter() {
        for ((vv, v), m) in var.iter_mut().zip(db.get(idx as usize)).zip(&mean) {
            let d = v - m;
            *vv += d * d;
        }
    }

    // Pick a random dimension among the top-variance ones.
    let mut top: Vec<usize> = (0..dim).collect();
    top.sort_by(|&a, &b| var[b].partial_cmp(&var[a]).unwrap().then(a.cmp(&b)));
    let choices = TOP_VARIANCE_DIMS.min(dim);
    let split_dim = top[rng.gen_range(0..choices)];
    let split_value = mean[split_dim];

    // Partition around the split value.
    let slice = &mut order[start..end];
    slice.sort_by(|&a, &b| {
        db.get(a as usize)[split_dim]
            .partial_cmp(&db.get(b as usize)[split_dim])
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut mid = slice.partition_point(|&i| db.get(i as usize)[split_dim] < split_value);
    // Degenerate split (all values on one side): fall back to halving.
    if mid == 0 || mid == slice.len() {
        mid = slice.len() / 2;
    }

    let left = build_node(db, order, start, start + mid, nodes, rng);
    let right = build_node(db, order, start + mid, end, nodes, rng);
    nodes[id as usize] = KdNode::Split {
        dim: split_dim as u16,
        value: split_value,
        left,
        right,
    };
    id
}

impl KdForest {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Best-bin-first two-nearest search with a point-visit budget shared
    /// across the forest. `checks = usize::MAX` is exhaustive and reproduces
    /// the brute-force result exactly.
    fn two_nearest(&self, db: &DescriptorSet, q: &[f32], checks: usize) -> TwoBest {
        use std::cmp::Reverse;
        use std::collections::BinaryHeap;

        assert_eq!(db.len(), self.len, "index/database mismatch");
        assert_eq!(db.dim(), self.dim);

        let mut best = TwoBest::new();
        let mut visited = vec![false; self.len];
        let mut budget_left = checks;
        // Min-heap on the lower-bound distance to the unexplored branch.
        let mut heap: BinaryHeap<Reverse<(FloatOrd, usize, u32)>> = BinaryHeap::new();

        for (t, _) in self.trees.iter().enumerate() {
            heap.push(Reverse((FloatOrd(0.0), t, 0)));
        }

        // The accumulated branch bound is cheap but not admissible (repeated
        // splits on one dimension overcount), so the unlimited-budget path
        // exhausts the heap instead of pruning; that is what makes it exactly
        // reproduce the brute-force scan.
        let exhaustive = checks == usize::MAX;
        while let Some(Reverse((FloatOrd(bound), tree_id, mut node_id))) = heap.pop() {
            if !exhaustive && bound > best.d2 {
                break;
            }
            if budget_left == 0 && best.i2 != usize::MAX {
                break;
            }
            let tree = &self.trees[tree_id];
            let acc = bound;
            loop {
                match tree.nodes[node_id as usize] {
                    KdNode::Split {
                        dim,
                        value,
                        left,
                        right,
                    } => {
                        let diff = q[dim as usize] - value;
                        let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                        let far_bound = acc + diff * diff;
                        heap.push(Reverse((FloatOrd(far_bound), tree_id, far)));
                        node_id = near;
                    }
                    KdNode::Leaf { start, end } => {
                        for &idx in &tree.order[start as usize..end as usize] {
                            let idx = idx as usize;
                            if visited[idx] {
                                continue;
                            }
                            visited[idx] = true;
                            budget_left = budget_left.saturating_sub(1);
                            let d = dist_sq_bounded(db.get(idx), q, best.d2);
                            if d <= best.d2 {
                                best.offer(d, idx);
                            }
                        }
                        break;
                    }
                }
            }
        }
        best
    }
}

#[derive(PartialEq)]
struct FloatOrd(f32);

impl Eq for FloatOrd {}

impl PartialOrd for FloatOrd {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for FloatOrd {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Search target: the bare set (exhaustive scan) or a kd-forest over it.
#[derive(Clone, Copy)]
pub enum MatchTarget<'a> {
    Exhaustive(&'a DescriptorSet),
    Indexed {
        db: &'a DescriptorSet,
        index: &'a KdForest,
    },
}

impl<'a> MatchTarget<'a> {
    fn db(&self) -> &'a DescriptorSet {
        match self {
            MatchTarget::Exhaustive(db) => db,
            MatchTarget::Indexed { db, .. } => db,
        }
    }
}

/// Matches each query descriptor against the database, keeping at most one
/// match per query: the nearest neighbor, retained only when its distance is
/// no more than `distance_ratio` times the second-nearest distance.
pub fn match_descriptors(
    query: &DescriptorSet,
    target: MatchTarget,
    cfg: &MatchConfig,
) -> Result<Vec<Match>> {
    let db = target.db();
    if db.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "ratio test needs >= 2 database descriptors, got {}",
            db.len()
        )));
    }
    if db.dim() != query.dim() {
        return Err(Error::Config(format!(
            "query dim {} != database dim {}",
            query.dim(),
            db.dim()
        )));
    }

    let mut matches = Vec::new();
    for qi in 0..query.len() {
        let q = query.get(qi);
        let best = match target {
            MatchTarget::Exhaustive(db) => two_nearest_brute(db, q),
            MatchTarget::Indexed { db, index } => {
                let checks = if cfg.approx { cfg.approx_checks } else { usize::MAX };
                index.two_nearest(db, q, checks)
            }
        };
        if best.i2 == usize::MAX {
            continue;
        }
        let d1 = best.d1.sqrt();
        let d2 = best.d2.sqrt();
        let ratio = if d2 == 0.0 { 1.0 } else { d1 / d2 };
        if ratio <= cfg.distance_ratio {
            let owner = db.owner(best.i1);
            matches.push(Match {
                query_index: qi,
                db_index: best.i1,
                model_id: owner.model_id,
                model_keypoint: owner.keypoint,
                distance: d1,
                ratio,
            });
        }
    }
    Ok(matches)
}
