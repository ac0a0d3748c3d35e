//! Brute-force reference implementations shared by the integration tests.
#![allow(dead_code)]

use myoseg_core::features::FamilyWeights;
use myoseg_core::features::{Axis, BoxSpec, Candidate, FeatureDescriptor, FeaturePoolConfig, SplitTest};
use myoseg_core::forest::{tree_seed, ClassCounts, TrainConfig, TreeNode, MIN_GAIN};
use myoseg_core::geometry::{LandmarkSet, Point};
use myoseg_core::imaging::{BinaryMask, Image2D};
use myoseg_core::rng;
use myoseg_core::shape_model::{build_model, ShapeModel, ShapeModelConfig, ShapeParams};
use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;

// ---------------------------------------------------------------- geometry

pub fn seg_dist(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (vx, vy) = (b.0 - a.0, b.1 - a.1);
    let l2 = vx * vx + vy * vy;
    let t = if l2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * vx + (p.1 - a.1) * vy) / l2).clamp(0.0, 1.0)
    };
    (p.0 - (a.0 + t * vx)).hypot(p.1 - (a.1 + t * vy))
}

pub fn ray_cast(poly: &[(f64, f64)], p: (f64, f64)) -> bool {
    let mut inside = false;
    let mut j = poly.len() - 1;
    for i in 0..poly.len() {
        let (a, b) = (poly[i], poly[j]);
        if (a.1 > p.1) != (b.1 > p.1) && p.0 < (b.0 - a.0) * (p.1 - a.1) / (b.1 - a.1) + a.0 {
            inside = !inside;
        }
        j = i;
    }
    inside
}

pub fn min_dist(poly: &[(f64, f64)], p: (f64, f64)) -> f64 {
    (0..poly.len())
        .map(|i| seg_dist(p, poly[i], poly[(i + 1) % poly.len()]))
        .fold(f64::INFINITY, f64::min)
}

pub fn sdf(poly: &[(f64, f64)], p: (f64, f64)) -> f64 {
    let d = min_dist(poly, p);
    if d == 0.0 {
        0.0
    } else if ray_cast(poly, p) {
        d
    } else {
        -d
    }
}

pub fn tuples(shape: &LandmarkSet) -> Vec<(f64, f64)> {
    shape.points().iter().map(|p| (p.x, p.y)).collect()
}

pub fn landmarks(pts: &[(f64, f64)]) -> LandmarkSet {
    LandmarkSet::new(pts.iter().map(|&(x, y)| Point::new(x, y)).collect()).unwrap()
}

/// Mask of pixel centres strictly inside the polygon.
pub fn mask(poly: &[(f64, f64)], w: usize, h: usize) -> Vec<bool> {
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let p = (x as f64 + 0.5, y as f64 + 0.5);
            out.push(ray_cast(poly, p) && min_dist(poly, p) > 0.0);
        }
    }
    out
}

/// Star-shaped polygon with `n` vertices inside a `size x size` raster.
pub fn random_polygon<R: Rng>(r: &mut R, n: usize, size: f64) -> Vec<(f64, f64)> {
    let c = (
        size / 2.0 + r.random_range(-4.0..4.0),
        size / 2.0 + r.random_range(-4.0..4.0),
    );
    let mut angles: Vec<f64> = (0..n).map(|_| r.random_range(0.0..std::f64::consts::TAU)).collect();
    angles.sort_by(f64::total_cmp);
    angles
        .into_iter()
        .map(|a| {
            let rad = r.random_range(0.15 * size..0.42 * size);
            (c.0 + rad * a.cos(), c.1 + rad * a.sin())
        })
        .collect()
}

/// Shoelace area.
pub fn area(poly: &[(f64, f64)]) -> f64 {
    let n = poly.len();
    (0..n)
        .map(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            a.0 * b.1 - b.0 * a.1
        })
        .sum::<f64>()
        .abs()
        / 2.0
}

// ---------------------------------------------------------------- imaging

pub fn box_mean(img: &Image2D, x0: i64, y0: i64, w: i64, h: i64) -> f64 {
    let (iw, ih) = (img.width() as i64, img.height() as i64);
    let mut sum = 0.0;
    let mut n = 0usize;
    for y in y0.max(0)..(y0 + h).min(ih) {
        for x in x0.max(0)..(x0 + w).min(iw) {
            sum += img.get(x as usize, y as usize);
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

pub fn box_at(img: &Image2D, b: &BoxSpec, x: usize, y: usize) -> f64 {
    box_mean(
        img,
        x as i64 + b.dx as i64 - (b.w / 2) as i64,
        y as i64 + b.dy as i64 - (b.h / 2) as i64,
        b.w as i64,
        b.h as i64,
    )
}

/// Image whose values are multiples of 1/8, so box sums are exact.
pub fn dyadic_image<R: Rng>(r: &mut R, w: usize, h: usize) -> Image2D {
    Image2D::from_fn(w, h, |_, _| r.random_range(0..=8) as f64 / 8.0)
}

// ---------------------------------------------------------------- shape model

/// Eigenvalues (descending) of the `N - 1` sample covariance of the shape
/// vectors, from a dense symmetric solver.
pub fn pca_eigenvalues(shapes: &[LandmarkSet]) -> Vec<f64> {
    let n = shapes.len();
    let d = shapes[0].len() * 2;
    let x = DMatrix::from_fn(n, d, |i, j| shapes[i].to_vector()[j]);
    let mean = x.row_mean();
    let mut c = x.clone();
    for mut row in c.row_iter_mut() {
        row -= &mean;
    }
    let cov = c.transpose() * &c / (n as f64 - 1.0);
    let mut ev: Vec<f64> = SymmetricEigen::new(cov).eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    ev
}

pub fn generate(model: &ShapeModel, b: &[f64]) -> Vec<f64> {
    let d = model.mean.len();
    (0..d)
        .map(|j| model.mean[j] + (0..model.k).map(|i| model.modes[i * d + j] * b[i]).sum::<f64>())
        .collect()
}

// ---------------------------------------------------------------- energy

/// Rotation and scale about the centroid, then translation.
pub fn pose(pts: &[(f64, f64)], tx: f64, ty: f64, log_scale: f64, rot_deg: f64) -> Vec<(f64, f64)> {
    let n = pts.len() as f64;
    let cx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let cy = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let (s, c) = rot_deg.to_radians().sin_cos();
    let k = log_scale.exp();
    pts.iter()
        .map(|&(x, y)| {
            let (u, v) = (x - cx, y - cy);
            (cx + k * (c * u - s * v) + tx, cy + k * (s * u + c * v) + ty)
        })
        .collect()
}

/// Direct summation of the data, shape and temporal terms.
pub fn energy(
    map: &Image2D,
    model: &ShapeModel,
    b: &[f64],
    theta: [f64; 4],
    alpha: f64,
    prev: Option<(&[(f64, f64)], f64)>,
) -> f64 {
    let v = generate(model, b);
    let pts: Vec<(f64, f64)> = v.chunks(2).map(|c| (c[0], c[1])).collect();
    let x = pose(&pts, theta[0], theta[1], theta[2], theta[3]);
    let (w, h) = map.dims();
    let m = mask(&x, w, h);
    let mut data = 0.0;
    for y in 0..h {
        for xx in 0..w {
            let t = if m[y * w + xx] { 1.0 } else { 0.0 };
            let d = map.get(xx, y) - t;
            data += d * d;
        }
    }
    let reg = if model.k == 0 {
        0.0
    } else {
        alpha / model.k as f64
            * (0..model.k)
                .map(|i| b[i].abs() / model.eigenvalues[i].sqrt())
                .sum::<f64>()
    };
    let temporal = match prev {
        None => 0.0,
        Some((xp, beta)) => {
            let ss: f64 = x
                .iter()
                .zip(xp)
                .map(|(a, p)| (a.0 - p.0).powi(2) + (a.1 - p.1).powi(2))
                .sum();
            beta / (2.0 * x.len() as f64) * ss
        }
    };
    data + reg + temporal
}

// ---------------------------------------------------------------- forest

fn entropy(bg: u32, myo: u32) -> f64 {
    let n = (bg + myo) as f64;
    let mut h = 0.0;
    for k in [bg, myo] {
        if k > 0 {
            let p = k as f64 / n;
            h -= p * p.log2();
        }
    }
    h
}

pub fn gain(parent: (u32, u32), left: (u32, u32)) -> f64 {
    let right = (parent.0 - left.0, parent.1 - left.1);
    let n = (parent.0 + parent.1) as f64;
    let nl = (left.0 + left.1) as f64;
    entropy(parent.0, parent.1) - nl / n * entropy(left.0, left.1) - (n - nl) / n * entropy(right.0, right.1)
}

#[derive(Clone, Copy)]
pub struct Px {
    pub img: usize,
    pub x: usize,
    pub y: usize,
    pub label: bool,
}

pub struct GreedyOracle<'a> {
    pub images: &'a [Image2D],
    pub model: &'a ShapeModel,
    pub features: FeaturePoolConfig,
    pub max_depth: usize,
    pub min_samples: usize,
    pub n_candidates: usize,
    pub n_thresholds: usize,
    pub tree_seed: u64,
    pub min_gain: f64,
    pub nodes: Vec<TreeNode>,
    pub sm_params: Vec<ShapeParams>,
}

impl GreedyOracle<'_> {
    fn value(&self, c: &Candidate, p: &Px) -> f64 {
        let img = &self.images[p.img];
        match c {
            Candidate::Plain(FeatureDescriptor::BoxMean { b }) => box_at(img, b, p.x, p.y),
            Candidate::Plain(FeatureDescriptor::BoxDiff { a, b }) => {
                box_at(img, a, p.x, p.y) - box_at(img, b, p.x, p.y)
            }
            Candidate::Plain(FeatureDescriptor::Position { axis: Axis::X }) => p.x as f64,
            Candidate::Plain(FeatureDescriptor::Position { axis: Axis::Y }) => p.y as f64,
            Candidate::Plain(FeatureDescriptor::Sm { .. }) => unreachable!(),
            Candidate::Sm { contour, .. } => sdf(&tuples(contour), (p.x as f64 + 0.5, p.y as f64 + 0.5)),
        }
    }

    fn leaf(&mut self, bg: u32, myo: u32) -> usize {
        self.nodes.push(TreeNode::Leaf {
            p_myo: myo as f64 / (bg + myo) as f64,
            n_train: bg + myo,
        });
        self.nodes.len() - 1
    }

    /// Builds the subtree for `px` and returns its node id.
    pub fn build(&mut self, px: Vec<Px>, depth: usize, heap: u64) -> usize {
        let myo = px.iter().filter(|p| p.label).count() as u32;
        let bg = px.len() as u32 - myo;
        if depth >= self.max_depth || px.len() < self.min_samples || myo == 0 || bg == 0 {
            return self.leaf(bg, myo);
        }
        let mut r = rng::stream(self.tree_seed, heap);
        let mut table: Vec<(Candidate, f64, f64)> = Vec::new();
        for _ in 0..self.n_candidates {
            let cand = myoseg_core::features::sample_candidate(&mut r, &self.features, self.model).unwrap();
            let vals: Vec<f64> = px.iter().map(|p| self.value(&cand, p)).collect();
            assert!(vals.len() <= 1024);
            let mut sorted = vals.clone();
            sorted.sort_by(f64::total_cmp);
            for j in 0..self.n_thresholds {
                let tau = sorted[((j + 1) * sorted.len() / (self.n_thresholds + 1)).min(sorted.len() - 1)];
                let mut l = (0u32, 0u32);
                for (v, p) in vals.iter().zip(&px) {
                    if *v > tau {
                        if p.label {
                            l.1 += 1
                        } else {
                            l.0 += 1
                        }
                    }
                }
                let nl = l.0 + l.1;
                let g = if nl == 0 || nl == bg + myo {
                    f64::NEG_INFINITY
                } else {
                    gain((bg, myo), l)
                };
                table.push((cand.clone(), tau, g));
            }
        }
        // Exhaustive argmax, earliest entry on ties.
        let mut best = 0;
        for (i, e) in table.iter().enumerate() {
            if e.2 > table[best].2 {
                best = i;
            }
        }
        let (cand, tau, g) = table.swap_remove(best);
        if g.partial_cmp(&self.min_gain) != Some(core::cmp::Ordering::Greater) {
            return self.leaf(bg, myo);
        }
        let (lp, rp): (Vec<Px>, Vec<Px>) = px.iter().partition(|p| self.value(&cand, p) > tau);
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
        let left = self.build(lp, depth + 1, heap * 2);
        let right = self.build(rp, depth + 1, heap * 2 + 1);
        self.nodes[id] = TreeNode::Split {
            test: SplitTest { feature, tau },
            left,
            right,
            counts: ClassCounts::new(bg, myo),
        };
        id
    }
}

/// All pixels of all images in raster order.
pub fn all_pixels(masks: &[BinaryMask]) -> Vec<Px> {
    let mut out = Vec::new();
    for (i, m) in masks.iter().enumerate() {
        for y in 0..m.height() {
            for x in 0..m.width() {
                out.push(Px {
                    img: i,
                    x,
                    y,
                    label: m.get(x, y),
                });
            }
        }
    }
    out
}

/// Node-for-node comparison; thresholds within `tol`.
pub fn same_tree(a: &[TreeNode], b: &[TreeNode], tol: f64) -> Result<(), String> {
    if a.len() != b.len() {
        return Err(format!("node count {} vs {}", a.len(), b.len()));
    }
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        let ok = match (x, y) {
            (
                TreeNode::Split {
                    test: t1,
                    left: l1,
                    right: r1,
                    counts: c1,
                },
                TreeNode::Split {
                    test: t2,
                    left: l2,
                    right: r2,
                    counts: c2,
                },
            ) => t1.feature == t2.feature && (t1.tau - t2.tau).abs() <= tol && l1 == l2 && r1 == r2 && c1 == c2,
            (TreeNode::Leaf { p_myo: p1, n_train: n1 }, TreeNode::Leaf { p_myo: p2, n_train: n2 }) => {
                p1 == p2 && n1 == n2
            }
            _ => false,
        };
        if !ok {
            return Err(format!("node {i}: {x:?} vs {y:?}"));
        }
    }
    Ok(())
}

// ---------------------------------------------------------------- metrics

pub fn jaccard(a: &BinaryMask, b: &BinaryMask) -> f64 {
    let (mut i, mut u) = (0, 0);
    for (x, y) in a.data().iter().zip(b.data()) {
        if *x != 0 && *y != 0 {
            i += 1;
        }
        if *x != 0 || *y != 0 {
            u += 1;
        }
    }
    if u == 0 {
        1.0
    } else {
        i as f64 / u as f64
    }
}

/// Points every `step` (or closer) along each edge of the closed polygon.
pub fn dense(poly: &[(f64, f64)], step: f64) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    for i in 0..poly.len() {
        let (a, b) = (poly[i], poly[(i + 1) % poly.len()]);
        let len = (b.0 - a.0).hypot(b.1 - a.1);
        let k = (len / step).ceil().max(1.0) as usize;
        for j in 0..k {
            let t = j as f64 / k as f64;
            out.push((a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1)));
        }
    }
    out
}

/// Symmetric mean and max of nearest-polyline distances of dense samples.
pub fn mad_hd(p: &[(f64, f64)], q: &[(f64, f64)], step: f64) -> (f64, f64) {
    let dp: Vec<f64> = dense(p, step).iter().map(|&s| min_dist(q, s)).collect();
    let dq: Vec<f64> = dense(q, step).iter().map(|&s| min_dist(p, s)).collect();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let max = |v: &[f64]| v.iter().copied().fold(0.0, f64::max);
    ((mean(&dp) + mean(&dq)) / 2.0, max(&dp).max(max(&dq)))
}

// ---------------------------------------------------------------- quadratics

/// Seeded convex quadratic `0.5 (v - c)^T A (v - c)` with `A = L L^T + I`.
pub struct Quadratic {
    pub a: DMatrix<f64>,
    pub c: Vec<f64>,
}

impl Quadratic {
    pub fn random(seed: u64, n: usize) -> Self {
        let mut r = rng::seeded(seed);
        let l = DMatrix::from_fn(n, n, |_, _| r.random_range(-0.5..0.5));
        let a = &l * l.transpose() + DMatrix::identity(n, n);
        let c = (0..n).map(|_| r.random_range(-3.0..3.0)).collect();
        Self { a, c }
    }

    pub fn eval(&self, v: &[f64]) -> f64 {
        let n = self.c.len();
        let d = DMatrix::from_fn(n, 1, |i, _| v[i] - self.c[i]);
        0.5 * (d.transpose() * &self.a * &d)[(0, 0)]
    }

    pub fn gradient(&self, v: &[f64]) -> Vec<f64> {
        let n = self.c.len();
        let d = DMatrix::from_fn(n, 1, |i, _| v[i] - self.c[i]);
        (&self.a * d).iter().copied().collect()
    }
}

// Micro forest fixtures.

pub fn micro_model() -> ShapeModel {
    let shapes: Vec<LandmarkSet> = (0..5)
        .map(|i| {
            let d = i as f64 * 0.3;
            LandmarkSet::new(vec![
                Point::new(1.5 + d, 1.5),
                Point::new(6.5, 1.0 + d),
                Point::new(6.0 - d, 6.5),
                Point::new(1.0, 6.0 - 0.5 * d),
            ])
            .unwrap()
        })
        .collect();
    build_model(&shapes, &ShapeModelConfig::default()).unwrap()
}

/// Three 8x8 images with dyadic intensities and a bright diamond label.
pub fn micro_dataset(seed: u64) -> Vec<(Image2D, BinaryMask)> {
    let mut r = rng::seeded(seed);
    (0..3)
        .map(|i| {
            let mut mask = BinaryMask::zeros(8, 8);
            let c = 3.5 + i as f64 * 0.5;
            for y in 0..8 {
                for x in 0..8 {
                    mask.set(x, y, (x as f64 - c).abs() + (y as f64 - 3.5).abs() < 3.0);
                }
            }
            let img = Image2D::from_fn(8, 8, |x, y| {
                let base = if mask.get(x, y) { 5 } else { 2 };
                (base + r.random_range(0..=3)) as f64 / 8.0
            });
            (img, mask)
        })
        .collect()
}

pub fn micro_config(seed: u64) -> TrainConfig {
    TrainConfig {
        n_trees: 3,
        max_depth: 2,
        min_samples: 8,
        n_candidate_features: 2,
        n_thresholds: 10,
        pixel_fraction: 1.0,
        seed,
        features: FeaturePoolConfig {
            weights: FamilyWeights::default(),
            max_offset: 3,
            min_box: 1,
            max_box: 4,
        },
    }
}

pub fn oracle_tree(
    data: &[(Image2D, BinaryMask)],
    cfg: &TrainConfig,
    model: &ShapeModel,
    tree: usize,
) -> (Vec<TreeNode>, Vec<ShapeParams>) {
    let images: Vec<Image2D> = data.iter().map(|d| d.0.clone()).collect();
    let masks: Vec<BinaryMask> = data.iter().map(|d| d.1.clone()).collect();
    let mut o = GreedyOracle {
        images: &images,
        model,
        features: cfg.features,
        max_depth: cfg.max_depth,
        min_samples: cfg.min_samples,
        n_candidates: cfg.n_candidate_features,
        n_thresholds: cfg.n_thresholds,
        tree_seed: tree_seed(cfg, tree),
        min_gain: MIN_GAIN,
        nodes: Vec::new(),
        sm_params: Vec::new(),
    };
    o.build(all_pixels(&masks), 0, 1);
    (o.nodes, o.sm_params)
}
