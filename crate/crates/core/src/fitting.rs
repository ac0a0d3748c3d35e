//! Shape fitting: the SSD-plus-regularizer energy, its temporal extension and
//! a bound-constrained coordinate pattern search.

use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::geometry::{self, LandmarkSet, Point};
use crate::imaging::{rasterize_mask, Image2D};
use crate::math;
use crate::shape_model::{ShapeModel, ShapeParams};
use crate::{Error, Result};

/// Similarity pose about the shape centroid. All zeros is the identity.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PoseParams {
    pub tx: f64,
    pub ty: f64,
    pub log_scale: f64,
    /// Degrees.
    pub rot: f64,
}

impl PoseParams {
    pub const LEN: usize = 4;

    pub fn to_array(&self) -> [f64; 4] {
        [self.tx, self.ty, self.log_scale, self.rot]
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self {
            tx: v[0],
            ty: v[1],
            log_scale: v[2],
            rot: v[3],
        }
    }
}

/// Initial pattern-search steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitSteps {
    /// Fraction of each `b_i` bound `s sqrt(lambda_i)`; 0.5 with `s = 2` is
    /// one standard deviation.
    pub b_frac: f64,
    pub tx: f64,
    pub ty: f64,
    pub log_scale: f64,
    pub rot: f64,
}

impl Default for InitSteps {
    fn default() -> Self {
        Self {
            b_frac: 0.5,
            tx: 4.0,
            ty: 4.0,
            log_scale: 0.1,
            rot: 5.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    /// Regularizer weight for a map of `alpha_ref_pixels` pixels.
    pub alpha: f64,
    /// Pixel count at which `alpha` applies unscaled; the weight used on a
    /// map of `N` pixels is `alpha * N / alpha_ref_pixels`. Zero disables
    /// the scaling.
    pub alpha_ref_pixels: f64,
    pub beta: f64,
    pub init_step: InitSteps,
    pub expand: f64,
    pub contract: f64,
    /// Stop once every step is below `step_tol` times its initial value.
    pub step_tol: f64,
    pub max_evals: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            alpha: 3000.0,
            alpha_ref_pixels: (242 * 208) as f64,
            beta: 10.0,
            init_step: InitSteps::default(),
            expand: 2.0,
            contract: 0.5,
            step_tol: 0.01,
            max_evals: 20_000,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidConfig("alpha must be non-negative"));
        }
        if !(self.alpha_ref_pixels >= 0.0 && self.alpha_ref_pixels.is_finite()) {
            return Err(Error::InvalidConfig("alpha_ref_pixels must be non-negative"));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidConfig("beta must be non-negative"));
        }
        if !(self.step_tol > 0.0) {
            return Err(Error::InvalidConfig("step_tol must be positive"));
        }
        if !(self.expand >= 1.0) || !(self.contract > 0.0 && self.contract < 1.0) {
            return Err(Error::InvalidConfig("expand must be >= 1 and contract in (0, 1)"));
        }
        let s = &self.init_step;
        if [s.b_frac, s.tx, s.ty, s.log_scale, s.rot].iter().any(|v| !(*v > 0.0)) {
            return Err(Error::InvalidConfig("initial steps must be positive"));
        }
        if self.max_evals == 0 {
            return Err(Error::InvalidConfig("max_evals must be positive"));
        }
        Ok(())
    }

    /// Regularizer weight for a `width x height` probability map.
    pub fn effective_alpha(&self, width: usize, height: usize) -> f64 {
        if self.alpha_ref_pixels > 0.0 {
            self.alpha * (width * height) as f64 / self.alpha_ref_pixels
        } else {
            self.alpha
        }
    }

    /// Initial steps for the flat `(b, pose)` vector of `model`.
    pub fn steps_for(&self, model: &ShapeModel) -> Vec<f64> {
        let s = &self.init_step;
        let mut v: Vec<f64> = model.bounds().into_iter().map(|lim| s.b_frac * lim).collect();
        v.extend_from_slice(&[s.tx, s.ty, s.log_scale, s.rot]);
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub b: ShapeParams,
    pub theta: PoseParams,
    pub landmarks: LandmarkSet,
    pub energy: f64,
    pub n_evals: usize,
    pub converged: bool,
}

/// Rotates by `rot` and scales by `exp(log_scale)` about the centroid, then
/// translates.
pub fn apply_pose(theta: &PoseParams, shape: &LandmarkSet) -> LandmarkSet {
    let c = shape.centroid();
    let (sin, cos) = math::sin_cos_deg(theta.rot);
    let k = math::exp(theta.log_scale);
    shape.map(|p| {
        let r = geometry::rotate(Point::new(p.x - c.x, p.y - c.y), sin, cos);
        Point::new(c.x + k * r.x + theta.tx, c.y + k * r.y + theta.ty)
    })
}

/// `apply_pose(theta, mean + P b)`.
pub fn posed_shape(model: &ShapeModel, b: &ShapeParams, theta: &PoseParams) -> Result<LandmarkSet> {
    let base = LandmarkSet::from_vector(&model.generate_vector(b)?)?;
    Ok(apply_pose(theta, &base))
}

/// Energy split into its terms. `total` is their sum.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EnergyTerms {
    pub data: f64,
    pub shape: f64,
    pub temporal: f64,
    pub total: f64,
}

/// `(alpha / K) sum |b_i| / sqrt(lambda_i)`, zero when `K = 0`.
pub fn shape_penalty(model: &ShapeModel, b: &ShapeParams, alpha: f64) -> f64 {
    if model.k == 0 || alpha == 0.0 {
        return 0.0;
    }
    let sum: f64 =
        b.0.iter()
            .zip(&model.eigenvalues)
            .map(|(bi, &l)| if l > 0.0 { bi.abs() / math::sqrt(l) } else { 0.0 })
            .sum();
    alpha * sum / model.k as f64
}

/// Precomputed form of the data term `sum (p - m)^2` for a fixed map:
/// `sum p^2 + sum_{m = 1} (1 - 2 p)`.
#[derive(Debug, Clone)]
pub struct DataTerm {
    width: usize,
    height: usize,
    sum_sq: f64,
    gain: Vec<f64>,
}

impl DataTerm {
    pub fn new(prob_map: &Image2D) -> Self {
        let (width, height) = prob_map.dims();
        Self {
            width,
            height,
            sum_sq: prob_map.data().iter().map(|p| p * p).sum(),
            gain: prob_map.data().iter().map(|p| 1.0 - 2.0 * p).collect(),
        }
    }

    pub fn eval(&self, shape: &LandmarkSet) -> Result<f64> {
        let mask = rasterize_mask(shape, self.width, self.height)?;
        let inside: f64 = mask
            .data()
            .iter()
            .zip(&self.gain)
            .filter(|(m, _)| **m != 0)
            .map(|(_, g)| g)
            .sum();
        Ok(self.sum_sq + inside)
    }
}

fn terms(
    data: &DataTerm,
    model: &ShapeModel,
    b: &ShapeParams,
    theta: &PoseParams,
    alpha: f64,
    prev: Option<(&LandmarkSet, f64)>,
) -> Result<EnergyTerms> {
    let x = posed_shape(model, b, theta)?;
    let d = data.eval(&x)?;
    let s = shape_penalty(model, b, alpha);
    let t = match prev {
        Some((xp, beta)) => temporal_penalty(&x, xp, beta)?,
        None => 0.0,
    };
    Ok(EnergyTerms {
        data: d,
        shape: s,
        temporal: t,
        total: d + s + t,
    })
}

/// `beta / (2M) sum (x - x_prev)^2` over all coordinates.
pub fn temporal_penalty(x: &LandmarkSet, x_prev: &LandmarkSet, beta: f64) -> Result<f64> {
    if x.len() != x_prev.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            found: x_prev.len(),
        });
    }
    if beta == 0.0 {
        return Ok(0.0);
    }
    let ss: f64 = x
        .points()
        .iter()
        .zip(x_prev.points())
        .map(|(a, p)| (a.x - p.x) * (a.x - p.x) + (a.y - p.y) * (a.y - p.y))
        .sum();
    Ok(beta * ss / (2.0 * x.len() as f64))
}

pub fn energy_static(
    prob_map: &Image2D,
    model: &ShapeModel,
    b: &ShapeParams,
    theta: &PoseParams,
    alpha: f64,
) -> Result<f64> {
    Ok(terms(&DataTerm::new(prob_map), model, b, theta, alpha, None)?.total)
}

pub fn energy_temporal(
    prob_map: &Image2D,
    model: &ShapeModel,
    b: &ShapeParams,
    theta: &PoseParams,
    alpha: f64,
    x_prev: &LandmarkSet,
    beta: f64,
) -> Result<f64> {
    if x_prev.len() != model.m {
        return Err(Error::DimensionMismatch {
            expected: model.m,
            found: x_prev.len(),
        });
    }
    Ok(terms(&DataTerm::new(prob_map), model, b, theta, alpha, Some((x_prev, beta)))?.total)
}

/// Term breakdown of the (optionally temporal) energy.
pub fn energy_terms(
    prob_map: &Image2D,
    model: &ShapeModel,
    b: &ShapeParams,
    theta: &PoseParams,
    alpha: f64,
    prev: Option<(&LandmarkSet, f64)>,
) -> Result<EnergyTerms> {
    terms(&DataTerm::new(prob_map), model, b, theta, alpha, prev)
}

/// Box-constrained pattern-search problem over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct SearchSpace {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub init_step: Vec<f64>,
}

impl SearchSpace {
    pub fn feasible(&self, v: &[f64]) -> bool {
        v.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(x, (lo, hi))| *x >= *lo && *x <= *hi)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub x: Vec<f64>,
    pub energy: f64,
    pub n_evals: usize,
    pub converged: bool,
    /// Energy after each accepted move, starting with the initial energy.
    pub history: Vec<f64>,
}

/// Coordinate pattern search with first-improvement polling.
///
/// Coordinates are polled in order at `+step` then `-step`; the first
/// improving point is accepted and its step multiplied by `expand`. A sweep
/// with no improvement multiplies every step by `contract`. Infeasible poll
/// points are skipped without being evaluated.
pub fn pattern_search(
    mut objective: impl FnMut(&[f64]) -> Result<f64>,
    space: &SearchSpace,
    init: &[f64],
    cfg: &FitConfig,
) -> Result<SearchResult> {
    let n = init.len();
    if space.lower.len() != n || space.upper.len() != n || space.init_step.len() != n {
        return Err(Error::LengthMismatch {
            left: n,
            right: space.init_step.len(),
        });
    }
    if let Some(i) = (0..n).find(|&i| !(init[i] >= space.lower[i] && init[i] <= space.upper[i])) {
        return Err(Error::InfeasibleInit(i));
    }
    let tol: Vec<f64> = space.init_step.iter().map(|s| s * cfg.step_tol).collect();
    let mut step = space.init_step.clone();
    let mut x = init.to_vec();
    let mut fx = objective(&x)?;
    let mut evals = 1;
    let mut history = vec![fx];
    let done = |step: &[f64]| step.iter().zip(&tol).all(|(s, t)| s < t);

    let mut trial = x.clone();
    'outer: while !done(&step) {
        let mut improved = false;
        for i in 0..n {
            if !(step[i] >= tol[i]) {
                continue;
            }
            for dir in [1.0, -1.0] {
                let v = x[i] + dir * step[i];
                if v < space.lower[i] || v > space.upper[i] {
                    continue;
                }
                if evals >= cfg.max_evals {
                    break 'outer;
                }
                trial.copy_from_slice(&x);
                trial[i] = v;
                let f = objective(&trial)?;
                evals += 1;
                if f < fx {
                    x[i] = v;
                    fx = f;
                    history.push(fx);
                    step[i] *= cfg.expand;
                    improved = true;
                    break;
                }
            }
        }
        if !improved {
            for s in step.iter_mut() {
                *s *= cfg.contract;
            }
        }
    }
    Ok(SearchResult {
        x,
        energy: fx,
        n_evals: evals,
        converged: done(&step),
        history,
    })
}

fn search_space(model: &ShapeModel, cfg: &FitConfig) -> SearchSpace {
    let bounds = model.bounds();
    let mut lower: Vec<f64> = bounds.iter().map(|l| -l).collect();
    let mut upper = bounds;
    lower.extend_from_slice(&[f64::NEG_INFINITY; 4]);
    upper.extend_from_slice(&[f64::INFINITY; 4]);
    let mut init_step = cfg.steps_for(model);
    // Modes with zero variance are pinned at zero.
    for (i, st) in init_step.iter_mut().take(model.k).enumerate() {
        if !(upper[i] > 0.0) {
            *st = 0.0;
        }
    }
    SearchSpace {
        lower,
        upper,
        init_step,
    }
}

fn split(model: &ShapeModel, v: &[f64]) -> (ShapeParams, PoseParams) {
    (
        ShapeParams(v[..model.k].to_vec()),
        PoseParams::from_slice(&v[model.k..]),
    )
}

/// Fits from an explicit start, with an optional temporal anchor.
pub fn fit_shape_from(
    prob_map: &Image2D,
    model: &ShapeModel,
    cfg: &FitConfig,
    b0: &ShapeParams,
    theta0: &PoseParams,
    prev: Option<&LandmarkSet>,
) -> Result<FitResult> {
    cfg.validate()?;
    if b0.len() != model.k {
        return Err(Error::DimensionMismatch {
            expected: model.k,
            found: b0.len(),
        });
    }
    if let Some(p) = prev {
        if p.len() != model.m {
            return Err(Error::DimensionMismatch {
                expected: model.m,
                found: p.len(),
            });
        }
    }
    let data = DataTerm::new(prob_map);
    let space = search_space(model, cfg);
    let mut init = b0.0.clone();
    init.extend_from_slice(&theta0.to_array());
    let anchor = prev.map(|p| (p, cfg.beta));
    let alpha = cfg.effective_alpha(prob_map.width(), prob_map.height());
    let res = pattern_search(
        |v| {
            let (b, t) = split(model, v);
            Ok(terms(&data, model, &b, &t, alpha, anchor)?.total)
        },
        &space,
        &init,
        cfg,
    )?;
    let (b, theta) = split(model, &res.x);
    let landmarks = posed_shape(model, &b, &theta)?;
    Ok(FitResult {
        b,
        theta,
        landmarks,
        energy: res.energy,
        n_evals: res.n_evals,
        converged: res.converged,
    })
}

/// Fits the static energy from `b = 0`, identity pose.
pub fn fit_shape(prob_map: &Image2D, model: &ShapeModel, cfg: &FitConfig) -> Result<FitResult> {
    fit_shape_from(
        prob_map,
        model,
        cfg,
        &ShapeParams::zeros(model.k),
        &PoseParams::default(),
        None,
    )
}

/// Frame 0 uses the static energy; each later frame starts from the previous
/// solution and is anchored to its landmarks.
pub fn fit_sequence(prob_maps: &[Image2D], model: &ShapeModel, cfg: &FitConfig) -> Result<Vec<FitResult>> {
    let first = prob_maps.first().ok_or(Error::EmptyDataset)?;
    let dims = first.dims();
    if let Some(bad) = prob_maps.iter().find(|m| m.dims() != dims) {
        return Err(Error::ResolutionMismatch {
            expected: dims,
            found: bad.dims(),
        });
    }
    let mut out: Vec<FitResult> = Vec::with_capacity(prob_maps.len());
    for map in prob_maps {
        let r = match out.last() {
            None => fit_shape(map, model, cfg)?,
            Some(p) => fit_shape_from(map, model, cfg, &p.b, &p.theta, Some(&p.landmarks))?,
        };
        out.push(r);
    }
    Ok(out)
}
