//! Binary pixel-classification forest trained greedily by information gain.
//!
//! Every tree draws its own pixel subsample, and every node draws its own
//! candidate features from a random stream keyed by the tree index and the
//! node's heap position (root 1, children `2i` and `2i+1`). Training is
//! therefore independent of tree order and of the depth limit: a tree trained
//! with `max_depth = d` equals a deeper tree cut at depth `d`.

use alloc::vec;
use alloc::vec::Vec;
use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::features::{
    apply_test, sample_candidate, Branch, Candidate, FeatureContext, FeatureDescriptor, FeaturePoolConfig,
    SmTableCache, SplitTest,
};
use crate::imaging::{BinaryMask, Image2D, IntegralImage};
use crate::math;
use crate::rng;
use crate::shape_model::{ShapeModel, ShapeParams};
use crate::{Error, Result};

/// Gains at or below this are treated as no gain.
pub const MIN_GAIN: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ClassCounts {
    pub background: u32,
    pub myo: u32,
}

impl ClassCounts {
    pub const fn new(background: u32, myo: u32) -> Self {
        Self { background, myo }
    }

    #[inline]
    pub fn total(&self) -> u32 {
        self.background + self.myo
    }

    #[inline]
    pub fn add(&mut self, label: bool) {
        if label {
            self.myo += 1;
        } else {
            self.background += 1;
        }
    }

    pub fn p_myo(&self) -> f64 {
        self.myo as f64 / self.total() as f64
    }
}

/// Shannon entropy in bits, with `0 log 0 = 0`.
pub fn entropy(c: ClassCounts) -> f64 {
    let n = c.total() as f64;
    if n == 0.0 {
        return 0.0;
    }
    [c.background, c.myo]
        .iter()
        .filter(|&&k| k > 0)
        .map(|&k| {
            let p = k as f64 / n;
            -p * math::log2(p)
        })
        .sum()
}

/// `H(parent) - (n_L/n H(left) + n_R/n H(right))` in bits.
pub fn information_gain(parent: ClassCounts, left: ClassCounts, right: ClassCounts) -> Result<f64> {
    if left.background + right.background != parent.background
        || left.myo + right.myo != parent.myo
        || parent.total() == 0
    {
        return Err(Error::CountMismatch);
    }
    let n = parent.total() as f64;
    Ok(entropy(parent) - (left.total() as f64 / n) * entropy(left) - (right.total() as f64 / n) * entropy(right))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node")]
pub enum TreeNode {
    Split {
        test: SplitTest,
        left: usize,
        right: usize,
        counts: ClassCounts,
    },
    Leaf {
        p_myo: f64,
        n_train: u32,
    },
}

/// Nodes in pre-order; the root is node 0.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn leaf(p_myo: f64, n_train: u32) -> Self {
        Self {
            nodes: vec![TreeNode::Leaf { p_myo, n_train }],
        }
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, i: usize) -> usize {
            match &t.nodes[i] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => 1 + go(t, *left).max(go(t, *right)),
            }
        }
        go(self, 0)
    }

    /// Leaf probability reached by pixel `(x, y)`.
    pub fn route(&self, x: usize, y: usize, ctx: &FeatureContext<'_>) -> Result<f64> {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                TreeNode::Leaf { p_myo, .. } => return Ok(*p_myo),
                TreeNode::Split { test, left, right, .. } => {
                    i = match apply_test(test, x, y, ctx)? {
                        Branch::Left => *left,
                        Branch::Right => *right,
                    };
                }
            }
        }
    }

    fn copy_truncated(&self, i: usize, depth: usize, max_depth: usize, out: &mut Vec<TreeNode>) -> usize {
        let id = out.len();
        match &self.nodes[i] {
            TreeNode::Leaf { .. } => out.push(self.nodes[i].clone()),
            TreeNode::Split { counts, .. } if depth >= max_depth => out.push(TreeNode::Leaf {
                p_myo: counts.p_myo(),
                n_train: counts.total(),
            }),
            TreeNode::Split {
                test,
                left,
                right,
                counts,
            } => {
                out.push(TreeNode::Leaf { p_myo: 0.0, n_train: 0 });
                let l = self.copy_truncated(*left, depth + 1, max_depth, out);
                let r = self.copy_truncated(*right, depth + 1, max_depth, out);
                out[id] = TreeNode::Split {
                    test: *test,
                    left: l,
                    right: r,
                    counts: *counts,
                };
            }
        }
        id
    }

    pub fn truncated(&self, max_depth: usize) -> Tree {
        let mut nodes = Vec::new();
        self.copy_truncated(0, 0, max_depth, &mut nodes);
        Tree { nodes }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_samples: usize,
    pub n_candidate_features: usize,
    pub n_thresholds: usize,
    pub pixel_fraction: f64,
    pub seed: u64,
    pub features: FeaturePoolConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n_trees: 20,
            max_depth: 24,
            min_samples: 8,
            n_candidate_features: 100,
            n_thresholds: 10,
            pixel_fraction: 0.10,
            seed: 0,
            features: FeaturePoolConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::InvalidConfig("n_trees must be >= 1"));
        }
        if self.max_depth == 0 || self.max_depth > 60 {
            return Err(Error::InvalidConfig("max_depth must be in 1..=60"));
        }
        if !(self.pixel_fraction > 0.0 && self.pixel_fraction <= 1.0) {
            return Err(Error::InvalidConfig("pixel_fraction must be in (0, 1]"));
        }
        if self.n_candidate_features == 0 || self.n_thresholds == 0 {
            return Err(Error::InvalidConfig("candidate counts must be positive"));
        }
        self.features.validate()
    }
}

/// Training images (as integral images) with their ground-truth masks.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    width: usize,
    height: usize,
    integrals: Vec<IntegralImage>,
    masks: Vec<BinaryMask>,
}

impl TrainingSet {
    pub fn new(dataset: &[(Image2D, BinaryMask)]) -> Result<Self> {
        let Some((first, _)) = dataset.first() else {
            return Err(Error::EmptyDataset);
        };
        let dims = first.dims();
        let mut counts = ClassCounts::default();
        for (img, mask) in dataset {
            if img.dims() != dims {
                return Err(Error::ResolutionMismatch {
                    expected: dims,
                    found: img.dims(),
                });
            }
            if mask.dims() != dims {
                return Err(Error::ResolutionMismatch {
                    expected: dims,
                    found: mask.dims(),
                });
            }
            let fg = mask.count() as u32;
            counts.myo += fg;
            counts.background += (dims.0 * dims.1) as u32 - fg;
        }
        if counts.myo == 0 || counts.background == 0 {
            return Err(Error::SingleClassDataset);
        }
        Ok(Self {
            width: dims.0,
            height: dims.1,
            integrals: dataset.iter().map(|(img, _)| IntegralImage::new(img)).collect(),
            masks: dataset.iter().map(|(_, m)| m.clone()).collect(),
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    pub fn integral(&self, i: usize) -> &IntegralImage {
        &self.integrals[i]
    }
}

/// One training pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Sample {
    pub image: u32,
    pub x: u16,
    pub y: u16,
    pub label: bool,
}

pub fn tree_seed(cfg: &TrainConfig, tree_index: usize) -> u64 {
    rng::derive(cfg.seed, tree_index as u64)
}

/// Per-image subsample without replacement of `pixel_fraction` of the pixels.
pub fn subsample(set: &TrainingSet, cfg: &TrainConfig, tree_index: usize) -> Vec<Sample> {
    let mut r = rng::stream(tree_seed(cfg, tree_index), 0);
    let (w, h) = set.dims();
    let npix = w * h;
    let take = (math::round(cfg.pixel_fraction * npix as f64) as usize).clamp(1, npix);
    let mut out = Vec::with_capacity(take * set.len());
    for (i, mask) in set.masks.iter().enumerate() {
        let mut idx = index::sample(&mut r, npix, take).into_vec();
        idx.sort_unstable();
        out.extend(idx.into_iter().map(|p| Sample {
            image: i as u32,
            x: (p % w) as u16,
            y: (p / w) as u16,
            label: mask.data()[p] != 0,
        }));
    }
    out
}

/// Quantile thresholds from the empirical values (at most 1024 of them,
/// taken at a fixed stride).
pub fn quantile_thresholds(values: &[f64], n: usize, scratch: &mut Vec<f64>) -> Vec<f64> {
    scratch.clear();
    let stride = values.len().div_ceil(1024).max(1);
    scratch.extend(values.iter().step_by(stride).copied());
    scratch.sort_unstable_by(|a, b| a.total_cmp(b));
    let len = scratch.len();
    (0..n)
        .map(|j| scratch[((j + 1) * len / (n + 1)).min(len - 1)])
        .collect()
}

/// Trace of one split decision, for debugging and oracle checks.
#[derive(Debug, Clone)]
pub struct NodeTrace {
    pub heap: u64,
    pub depth: usize,
    pub counts: ClassCounts,
    pub candidates: Vec<(Candidate, Vec<f64>)>,
    /// Gain per (candidate, threshold); `None` for rejected empty-child splits.
    pub gains: Vec<Vec<Option<f64>>>,
    pub chosen: Option<(usize, usize, f64)>,
}

/// A trained tree whose SM features index into its own `sm_params`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedTree {
    pub tree: Tree,
    pub sm_params: Vec<ShapeParams>,
}

struct Builder<'a> {
    set: &'a TrainingSet,
    cfg: &'a TrainConfig,
    model: &'a ShapeModel,
    seed: u64,
    nodes: Vec<TreeNode>,
    sm_params: Vec<ShapeParams>,
    trace: Option<Vec<NodeTrace>>,
    values: Vec<f64>,
    scratch: Vec<f64>,
}

impl Builder<'_> {
    fn leaf(&mut self, counts: ClassCounts) -> usize {
        self.nodes.push(TreeNode::Leaf {
            p_myo: counts.p_myo(),
            n_train: counts.total(),
        });
        self.nodes.len() - 1
    }

    fn build(&mut self, samples: &mut [Sample], depth: usize, heap: u64) -> Result<usize> {
        let mut counts = ClassCounts::default();
        for s in samples.iter() {
            counts.add(s.label);
        }
        if depth >= self.cfg.max_depth
            || samples.len() < self.cfg.min_samples
            || counts.myo == 0
            || counts.background == 0
        {
            return Ok(self.leaf(counts));
        }

        let mut r = rng::stream(self.seed, heap);
        let mut best: Option<(usize, usize, f64)> = None;
        let mut best_cand: Option<(Candidate, f64)> = None;
        let mut trace_cands = Vec::new();
        let mut trace_gains = Vec::new();
        for c in 0..self.cfg.n_candidate_features {
            let cand = sample_candidate(&mut r, &self.cfg.features, self.model)?;
            self.values.clear();
            self.values.extend(
                samples
                    .iter()
                    .map(|s| cand.eval(s.x as usize, s.y as usize, self.set.integral(s.image as usize))),
            );
            let taus = quantile_thresholds(&self.values, self.cfg.n_thresholds, &mut self.scratch);
            let mut gains = Vec::new();
            for (t, &tau) in taus.iter().enumerate() {
                let mut left = ClassCounts::default();
                for (v, s) in self.values.iter().zip(samples.iter()) {
                    if *v > tau {
                        left.add(s.label);
                    }
                }
                let right = ClassCounts::new(counts.background - left.background, counts.myo - left.myo);
                if left.total() == 0 || right.total() == 0 {
                    gains.push(None);
                    continue;
                }
                let g = information_gain(counts, left, right)?;
                gains.push(Some(g));
                if best.is_none_or(|(_, _, bg)| g > bg) {
                    best = Some((c, t, g));
                    best_cand = Some((cand.clone(), tau));
                }
            }
            if self.trace.is_some() {
                trace_cands.push((cand, taus));
                trace_gains.push(gains);
            }
        }
        let chosen = best.filter(|&(_, _, g)| g > MIN_GAIN);
        if let Some(trace) = self.trace.as_mut() {
            trace.push(NodeTrace {
                heap,
                depth,
                counts,
                candidates: trace_cands,
                gains: trace_gains,
                chosen,
            });
        }
        let (Some(_), Some((cand, tau))) = (chosen, best_cand) else {
            return Ok(self.leaf(counts));
        };

        // Partition samples: LEFT (value > tau) first, order preserved.
        let mut left_part = Vec::new();
        let mut right_part = Vec::new();
        for s in samples.iter() {
            if cand.eval(s.x as usize, s.y as usize, self.set.integral(s.image as usize)) > tau {
                left_part.push(*s);
            } else {
                right_part.push(*s);
            }
        }
        let n_left = left_part.len();
        samples[..n_left].copy_from_slice(&left_part);
        samples[n_left..].copy_from_slice(&right_part);
        drop((left_part, right_part));

        let feature = match cand {
            Candidate::Plain(f) => f,
            Candidate::Sm { params, .. } => {
                self.sm_params.push(params);
                FeatureDescriptor::Sm {
                    table_id: self.sm_params.len() - 1,
                }
            }
        };
        let id = self.nodes.len();
        self.nodes.push(TreeNode::Leaf { p_myo: 0.0, n_train: 0 });
        let (ls, rs) = samples.split_at_mut(n_left);
        let l = self.build(ls, depth + 1, heap * 2)?;
        let r = self.build(rs, depth + 1, heap * 2 + 1)?;
        self.nodes[id] = TreeNode::Split {
            test: SplitTest { feature, tau },
            left: l,
            right: r,
            counts,
        };
        Ok(id)
    }
}

fn train_tree_inner(
    set: &TrainingSet,
    cfg: &TrainConfig,
    model: &ShapeModel,
    tree_index: usize,
    trace: bool,
) -> Result<(TrainedTree, Vec<NodeTrace>)> {
    cfg.validate()?;
    let mut samples = subsample(set, cfg, tree_index);
    let mut b = Builder {
        set,
        cfg,
        model,
        seed: tree_seed(cfg, tree_index),
        nodes: Vec::new(),
        sm_params: Vec::new(),
        trace: trace.then(Vec::new),
        values: Vec::with_capacity(samples.len()),
        scratch: Vec::new(),
    };
    b.build(&mut samples, 0, 1)?;
    Ok((
        TrainedTree {
            tree: Tree { nodes: b.nodes },
            sm_params: b.sm_params,
        },
        b.trace.unwrap_or_default(),
    ))
}

/// Trains tree number `tree_index` of a forest.
pub fn train_tree(set: &TrainingSet, cfg: &TrainConfig, model: &ShapeModel, tree_index: usize) -> Result<TrainedTree> {
    Ok(train_tree_inner(set, cfg, model, tree_index, false)?.0)
}

/// As [`train_tree`], also returning the per-node candidate trace.
pub fn train_tree_traced(
    set: &TrainingSet,
    cfg: &TrainConfig,
    model: &ShapeModel,
    tree_index: usize,
) -> Result<(TrainedTree, Vec<NodeTrace>)> {
    train_tree_inner(set, cfg, model, tree_index, true)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forest {
    width: usize,
    height: usize,
    pub trees: Vec<Tree>,
    pub tables: SmTableCache,
    pub config: TrainConfig,
}

impl Forest {
    /// Joins independently trained trees, renumbering SM tables into one cache.
    pub fn from_trained(
        trained: Vec<TrainedTree>,
        config: TrainConfig,
        model: &ShapeModel,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        if trained.is_empty() {
            return Err(Error::InvalidConfig("forest needs at least one tree"));
        }
        let mut tables = SmTableCache::new(width, height);
        let mut trees = Vec::with_capacity(trained.len());
        for t in trained {
            let offset = tables.len();
            for p in t.sm_params {
                tables.insert(model, p)?;
            }
            let mut tree = t.tree;
            for node in &mut tree.nodes {
                if let TreeNode::Split {
                    test:
                        SplitTest {
                            feature: FeatureDescriptor::Sm { table_id },
                            ..
                        },
                    ..
                } = node
                {
                    *table_id += offset;
                }
            }
            trees.push(tree);
        }
        Ok(Self {
            width,
            height,
            trees,
            tables,
            config,
        })
    }

    /// Rebuilds a forest from stored trees and the SM parameters they
    /// reference (tables are regenerated from the model).
    pub fn from_parts(
        trees: Vec<Tree>,
        sm_params: Vec<ShapeParams>,
        config: TrainConfig,
        model: &ShapeModel,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        if trees.is_empty() {
            return Err(Error::InvalidConfig("forest needs at least one tree"));
        }
        let mut tables = SmTableCache::new(width, height);
        for p in sm_params {
            tables.insert(model, p)?;
        }
        for t in &trees {
            for node in &t.nodes {
                if let TreeNode::Split { test, left, right, .. } = node {
                    if *left >= t.nodes.len() || *right >= t.nodes.len() {
                        return Err(Error::InvalidConfig("child id out of range"));
                    }
                    if let FeatureDescriptor::Sm { table_id } = test.feature {
                        tables.get(table_id)?;
                    }
                }
            }
        }
        Ok(Self {
            width,
            height,
            trees,
            tables,
            config,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn sm_params(&self) -> Vec<ShapeParams> {
        self.tables.tables().iter().map(|t| t.params.clone()).collect()
    }

    /// The forest cut at `max_depth`: deeper splits become leaves holding the
    /// class fractions of the training pixels that reached them. Unreferenced
    /// SM tables are dropped.
    pub fn truncated(&self, max_depth: usize) -> Forest {
        let mut trees: Vec<Tree> = self.trees.iter().map(|t| t.truncated(max_depth)).collect();
        let mut remap = vec![usize::MAX; self.tables.len()];
        for t in &trees {
            for node in &t.nodes {
                if let TreeNode::Split { test, .. } = node {
                    if let FeatureDescriptor::Sm { table_id } = test.feature {
                        remap[table_id] = 0;
                    }
                }
            }
        }
        let mut tables = SmTableCache::new(self.width, self.height);
        let mut kept = Vec::new();
        let mut next = 0;
        for (old, slot) in remap.iter_mut().enumerate() {
            if *slot == 0 {
                *slot = next;
                next += 1;
                kept.push(old);
            }
        }
        tables.extend_from(&self.tables, &kept);
        for t in &mut trees {
            for node in &mut t.nodes {
                if let TreeNode::Split {
                    test:
                        SplitTest {
                            feature: FeatureDescriptor::Sm { table_id },
                            ..
                        },
                    ..
                } = node
                {
                    *table_id = remap[*table_id];
                }
            }
        }
        let mut config = self.config;
        config.max_depth = max_depth.min(config.max_depth);
        Forest {
            width: self.width,
            height: self.height,
            trees,
            tables,
            config,
        }
    }
}

/// Trains all trees sequentially.
pub fn train_forest(dataset: &[(Image2D, BinaryMask)], cfg: &TrainConfig, model: &ShapeModel) -> Result<Forest> {
    cfg.validate()?;
    let set = TrainingSet::new(dataset)?;
    let trained = (0..cfg.n_trees)
        .map(|i| train_tree(&set, cfg, model, i))
        .collect::<Result<Vec<_>>>()?;
    let (w, h) = set.dims();
    Forest::from_trained(trained, *cfg, model, w, h)
}

/// Per-pixel myocardium probability averaged over the trees.
pub fn predict_map(forest: &Forest, sub_image: &Image2D) -> Result<Image2D> {
    if sub_image.dims() != forest.dims() {
        return Err(Error::ResolutionMismatch {
            expected: forest.dims(),
            found: sub_image.dims(),
        });
    }
    let ii = IntegralImage::new(sub_image);
    let ctx = FeatureContext {
        integral: &ii,
        cache: &forest.tables,
    };
    let n = forest.trees.len() as f64;
    let (w, h) = forest.dims();
    let mut data = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for t in &forest.trees {
                acc += t.route(x, y, &ctx)?;
            }
            data.push(acc / n);
        }
    }
    Image2D::new(w, h, data)
}
