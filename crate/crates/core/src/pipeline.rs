//! Box to contour: crop, equalize, predict, fit, map back.

use alloc::vec::Vec;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::fitting::{fit_sequence, fit_shape, FitConfig, FitResult};
use crate::forest::{predict_map, Forest};
use crate::geometry::LandmarkSet;
use crate::imaging::{
    crop_resample, histogram_equalize, map_contour_back, map_contour_into, rasterize_mask, BinaryMask, BoundingBox,
    Image2D,
};
use crate::shape_model::ShapeModel;
use crate::{Error, Result};

/// Box noise standard deviations `(x, y, w, h, theta)` of the mildest
/// perturbation level.
pub const BOX_SIGMAS: [f64; 5] = [3.8, 2.9, 5.9, 6.5, 1.2];

/// Anything that turns an equalized sub-image into a myocardium probability map.
pub trait ProbabilityModel {
    fn predict(&self, sub_image: &Image2D) -> Result<Image2D>;
}

impl ProbabilityModel for Forest {
    fn predict(&self, sub_image: &Image2D) -> Result<Image2D> {
        predict_map(self, sub_image)
    }
}

impl<F: Fn(&Image2D) -> Result<Image2D>> ProbabilityModel for F {
    fn predict(&self, sub_image: &Image2D) -> Result<Image2D> {
        self(sub_image)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub sub_w: usize,
    pub sub_h: usize,
    pub fit: FitConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            sub_w: 242,
            sub_h: 208,
            fit: FitConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segmentation {
    /// Contour in source-image coordinates.
    pub contour: LandmarkSet,
    /// Probability map in sub-image coordinates.
    pub prob_map: Image2D,
    pub fit: FitResult,
}

fn check_box(img: &Image2D, b: &BoundingBox) -> Result<()> {
    b.validate()?;
    let (w, h) = img.dims();
    if !(b.cx >= 0.0 && b.cx < w as f64 && b.cy >= 0.0 && b.cy < h as f64) {
        return Err(Error::BoxOutsideImage);
    }
    Ok(())
}

/// Crops the box into a `sub_w x sub_h` raster and equalizes it.
pub fn prepare_sub_image(img: &Image2D, b: &BoundingBox, sub_w: usize, sub_h: usize) -> Result<Image2D> {
    check_box(img, b)?;
    Ok(histogram_equalize(&crop_resample(img, b, sub_w, sub_h)))
}

/// Sub-image, sub-image landmarks and their mask for one annotated image.
pub fn training_example(
    img: &Image2D,
    landmarks: &LandmarkSet,
    b: &BoundingBox,
    sub_w: usize,
    sub_h: usize,
) -> Result<(Image2D, LandmarkSet, BinaryMask)> {
    let sub = prepare_sub_image(img, b, sub_w, sub_h)?;
    let lm = map_contour_into(landmarks, b, sub_w, sub_h);
    let mask = rasterize_mask(&lm, sub_w, sub_h)?;
    Ok((sub, lm, mask))
}

fn predict_checked<P: ProbabilityModel + ?Sized>(prob: &P, sub: &Image2D) -> Result<Image2D> {
    let map = prob.predict(sub)?;
    if map.dims() != sub.dims() {
        return Err(Error::ResolutionMismatch {
            expected: sub.dims(),
            found: map.dims(),
        });
    }
    Ok(map)
}

pub fn segment_image<P: ProbabilityModel + ?Sized>(
    img: &Image2D,
    b: &BoundingBox,
    prob: &P,
    model: &ShapeModel,
    cfg: &PipelineConfig,
) -> Result<Segmentation> {
    let sub = prepare_sub_image(img, b, cfg.sub_w, cfg.sub_h)?;
    let prob_map = predict_checked(prob, &sub)?;
    let fit = fit_shape(&prob_map, model, &cfg.fit)?;
    Ok(Segmentation {
        contour: map_contour_back(&fit.landmarks, b, cfg.sub_w, cfg.sub_h),
        prob_map,
        fit,
    })
}

/// Per-frame prediction followed by temporally coupled fitting. Each
/// contour is mapped back with its own frame's box.
pub fn segment_sequence<P: ProbabilityModel + ?Sized>(
    frames: &[Image2D],
    boxes: &[BoundingBox],
    prob: &P,
    model: &ShapeModel,
    cfg: &PipelineConfig,
) -> Result<Vec<Segmentation>> {
    if frames.len() != boxes.len() {
        return Err(Error::LengthMismatch {
            left: frames.len(),
            right: boxes.len(),
        });
    }
    if frames.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let maps = frames
        .iter()
        .zip(boxes)
        .map(|(img, b)| predict_checked(prob, &prepare_sub_image(img, b, cfg.sub_w, cfg.sub_h)?))
        .collect::<Result<Vec<_>>>()?;
    segment_sequence_maps(maps, boxes, model, cfg)
}

/// Temporal fitting over already predicted maps.
pub fn segment_sequence_maps(
    maps: Vec<Image2D>,
    boxes: &[BoundingBox],
    model: &ShapeModel,
    cfg: &PipelineConfig,
) -> Result<Vec<Segmentation>> {
    if maps.len() != boxes.len() {
        return Err(Error::LengthMismatch {
            left: maps.len(),
            right: boxes.len(),
        });
    }
    let fits = fit_sequence(&maps, model, &cfg.fit)?;
    Ok(fits
        .into_iter()
        .zip(maps)
        .zip(boxes)
        .map(|((fit, prob_map), b)| Segmentation {
            contour: map_contour_back(&fit.landmarks, b, cfg.sub_w, cfg.sub_h),
            prob_map,
            fit,
        })
        .collect())
}

/// Adds independent zero-mean normal noise to each box parameter. Width and
/// height are floored at one pixel.
pub fn perturb_box<R: Rng + ?Sized>(b: &BoundingBox, sigmas: [f64; 5], rng: &mut R) -> Result<BoundingBox> {
    if sigmas.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
        return Err(Error::InvalidConfig("box sigmas must be finite and non-negative"));
    }
    let mut v = b.as_array();
    for (x, &s) in v.iter_mut().zip(&sigmas) {
        if s > 0.0 {
            let n = Normal::new(0.0, s).map_err(|_| Error::InvalidConfig("box sigma"))?;
            *x += n.sample(rng);
        }
    }
    BoundingBox::new(v[0], v[1], v[2].max(1.0), v[3].max(1.0), v[4])
}
