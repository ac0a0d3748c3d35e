//! The forest's feature pool: displaced box means and differences, pixel
//! position, and the shape-model (SM) feature, i.e. the signed distance from
//! the pixel to a contour generated by the shape model.

use alloc::vec::Vec;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{self, LandmarkSet, Point};
use crate::imaging::{signed_distance_map, Image2D, IntegralImage};
use crate::shape_model::{generate_shape, sample_params, ShapeModel, ShapeParams};
use crate::{Error, Result};

/// A box displaced from the reference pixel. The box's top-left corner sits at
/// `pixel + (dx, dy) - (w/2, h/2)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoxSpec {
    pub dx: i32,
    pub dy: i32,
    pub w: i32,
    pub h: i32,
}

impl BoxSpec {
    #[inline]
    pub fn mean_at(&self, ii: &IntegralImage, x: usize, y: usize) -> f64 {
        let x0 = x as i64 + self.dx as i64 - (self.w / 2) as i64;
        let y0 = y as i64 + self.dy as i64 - (self.h / 2) as i64;
        ii.box_mean(x0, y0, self.w as i64, self.h as i64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Axis {
    X,
    Y,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum FeatureDescriptor {
    BoxMean { b: BoxSpec },
    BoxDiff { a: BoxSpec, b: BoxSpec },
    Position { axis: Axis },
    Sm { table_id: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Left,
    Right,
}

/// Binary test: LEFT iff the feature value is strictly greater than `tau`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitTest {
    pub feature: FeatureDescriptor,
    pub tau: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmTable {
    pub params: ShapeParams,
    pub map: Image2D,
}

/// Signed distance maps of model-generated contours, one per SM feature.
#[derive(Debug, Clone, PartialEq)]
pub struct SmTableCache {
    width: usize,
    height: usize,
    tables: Vec<SmTable>,
}

impl SmTableCache {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            tables: Vec::new(),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.tables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tables.is_empty()
    }

    pub fn tables(&self) -> &[SmTable] {
        &self.tables
    }

    pub fn get(&self, id: usize) -> Result<&SmTable> {
        self.tables.get(id).ok_or(Error::InvalidTableId(id))
    }

    /// Appends copies of `other`'s tables `ids`, in that order.
    pub fn extend_from(&mut self, other: &SmTableCache, ids: &[usize]) {
        self.tables.extend(ids.iter().map(|&i| other.tables[i].clone()));
    }

    /// Materializes the distance map for `params` and returns its id.
    pub fn insert(&mut self, model: &ShapeModel, params: ShapeParams) -> Result<usize> {
        let shape = generate_shape(model, &params)?;
        let map = signed_distance_map(&shape, self.width, self.height)?;
        self.tables.push(SmTable { params, map });
        Ok(self.tables.len() - 1)
    }
}

/// What a feature reads besides the pixel coordinates.
#[derive(Clone, Copy)]
pub struct FeatureContext<'a> {
    pub integral: &'a IntegralImage,
    pub cache: &'a SmTableCache,
}

pub fn eval_feature(feature: &FeatureDescriptor, x: usize, y: usize, ctx: &FeatureContext<'_>) -> Result<f64> {
    Ok(match feature {
        FeatureDescriptor::BoxMean { b } => b.mean_at(ctx.integral, x, y),
        FeatureDescriptor::BoxDiff { a, b } => a.mean_at(ctx.integral, x, y) - b.mean_at(ctx.integral, x, y),
        FeatureDescriptor::Position { axis: Axis::X } => x as f64,
        FeatureDescriptor::Position { axis: Axis::Y } => y as f64,
        FeatureDescriptor::Sm { table_id } => ctx.cache.get(*table_id)?.map.get(x, y),
    })
}

pub fn apply_test(test: &SplitTest, x: usize, y: usize, ctx: &FeatureContext<'_>) -> Result<Branch> {
    Ok(if eval_feature(&test.feature, x, y, ctx)? > test.tau {
        Branch::Left
    } else {
        Branch::Right
    })
}

/// Relative frequencies of the feature families.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyWeights {
    pub box_mean: f64,
    pub box_diff: f64,
    pub position: f64,
    pub sm: f64,
}

impl Default for FamilyWeights {
    fn default() -> Self {
        Self {
            box_mean: 0.4,
            box_diff: 0.2,
            position: 0.1,
            sm: 0.3,
        }
    }
}

impl FamilyWeights {
    /// Appearance features only.
    pub fn classic() -> Self {
        Self {
            box_mean: 2.0 / 3.0,
            box_diff: 1.0 / 3.0,
            position: 0.0,
            sm: 0.0,
        }
    }

    /// Appearance plus position features.
    pub fn position() -> Self {
        Self {
            box_mean: 0.4,
            box_diff: 0.2,
            position: 0.4,
            sm: 0.0,
        }
    }

    fn total(&self) -> f64 {
        self.box_mean + self.box_diff + self.position + self.sm
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeaturePoolConfig {
    pub weights: FamilyWeights,
    pub max_offset: i32,
    pub min_box: i32,
    pub max_box: i32,
}

impl Default for FeaturePoolConfig {
    fn default() -> Self {
        Self {
            weights: FamilyWeights::default(),
            max_offset: 60,
            min_box: 3,
            max_box: 31,
        }
    }
}

impl FeaturePoolConfig {
    pub fn validate(&self) -> Result<()> {
        let w = &self.weights;
        let parts = [w.box_mean, w.box_diff, w.position, w.sm];
        if parts.iter().any(|v| !(*v >= 0.0)) || (w.total() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig("feature family weights must be >= 0 and sum to 1"));
        }
        if self.max_offset < 0 || self.min_box < 1 || self.max_box < self.min_box {
            return Err(Error::InvalidConfig("bad box geometry"));
        }
        Ok(())
    }
}

/// A sampled feature before its SM table (if any) is stored in a cache.
#[derive(Debug, Clone, PartialEq)]
pub enum Candidate {
    Plain(FeatureDescriptor),
    Sm { params: ShapeParams, contour: LandmarkSet },
}

impl Candidate {
    /// Value at pixel `(x, y)`. SM candidates are evaluated directly on the
    /// contour, which gives exactly the value their table would hold.
    #[inline]
    pub fn eval(&self, x: usize, y: usize, integral: &IntegralImage) -> f64 {
        match self {
            Candidate::Plain(FeatureDescriptor::BoxMean { b }) => b.mean_at(integral, x, y),
            Candidate::Plain(FeatureDescriptor::BoxDiff { a, b }) => {
                a.mean_at(integral, x, y) - b.mean_at(integral, x, y)
            }
            Candidate::Plain(FeatureDescriptor::Position { axis: Axis::X }) => x as f64,
            Candidate::Plain(FeatureDescriptor::Position { axis: Axis::Y }) => y as f64,
            Candidate::Plain(FeatureDescriptor::Sm { .. }) => {
                unreachable!("SM features are sampled as Candidate::Sm")
            }
            Candidate::Sm { contour, .. } => {
                geometry::signed_distance(contour.points(), Point::new(x as f64 + 0.5, y as f64 + 0.5))
            }
        }
    }
}

fn sample_box<R: Rng + ?Sized>(rng: &mut R, cfg: &FeaturePoolConfig) -> BoxSpec {
    BoxSpec {
        dx: rng.random_range(-cfg.max_offset..=cfg.max_offset),
        dy: rng.random_range(-cfg.max_offset..=cfg.max_offset),
        w: rng.random_range(cfg.min_box..=cfg.max_box),
        h: rng.random_range(cfg.min_box..=cfg.max_box),
    }
}

pub fn sample_candidate<R: Rng + ?Sized>(
    rng: &mut R,
    cfg: &FeaturePoolConfig,
    model: &ShapeModel,
) -> Result<Candidate> {
    let w = &cfg.weights;
    let u: f64 = rng.random::<f64>() * w.total();
    Ok(if u < w.box_mean {
        Candidate::Plain(FeatureDescriptor::BoxMean {
            b: sample_box(rng, cfg),
        })
    } else if u < w.box_mean + w.box_diff {
        let a = sample_box(rng, cfg);
        let b = sample_box(rng, cfg);
        Candidate::Plain(FeatureDescriptor::BoxDiff { a, b })
    } else if u < w.box_mean + w.box_diff + w.position {
        let axis = if rng.random::<bool>() { Axis::X } else { Axis::Y };
        Candidate::Plain(FeatureDescriptor::Position { axis })
    } else {
        let params = sample_params(model, rng);
        let contour = generate_shape(model, &params)?;
        Candidate::Sm { params, contour }
    })
}

/// Samples a feature; SM features get their table materialized in `cache`.
pub fn sample_feature<R: Rng + ?Sized>(
    rng: &mut R,
    cfg: &FeaturePoolConfig,
    model: &ShapeModel,
    cache: &mut SmTableCache,
) -> Result<FeatureDescriptor> {
    Ok(match sample_candidate(rng, cfg, model)? {
        Candidate::Plain(f) => f,
        Candidate::Sm { params, .. } => FeatureDescriptor::Sm {
            table_id: cache.insert(model, params)?,
        },
    })
}
