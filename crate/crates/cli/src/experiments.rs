//! Desk-scale experiments on the synthetic corpus.

use myoseg_core::features::FamilyWeights;
use myoseg_core::forest::{Forest, TrainConfig};
use myoseg_core::geometry::LandmarkSet;
use myoseg_core::imaging::{map_contour_into, rasterize_mask};
use myoseg_core::metrics::{self, ContourPair};
use myoseg_core::pipeline::{self, perturb_box, prepare_sub_image, PipelineConfig, ProbabilityModel, BOX_SIGMAS};
use myoseg_core::rng;
use myoseg_core::shape_model::{build_model, ShapeModelConfig};
use myoseg_core::synth::{self, SequenceSpec, SynthConfig, SynthSample};
use myoseg_core::{BinaryMask, BoundingBox, Image2D, Result, ShapeModel};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::CliError;
use crate::parallel;

/// Forest feature families compared in the depth study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Variant {
    Classic,
    Position,
    Sm,
}

impl Variant {
    pub fn parse(s: &str) -> std::result::Result<Self, CliError> {
        match s {
            "classic" => Ok(Self::Classic),
            "position" => Ok(Self::Position),
            "sm" => Ok(Self::Sm),
            other => Err(CliError::Config(format!("unknown forest variant {other:?}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Classic => "classic",
            Self::Position => "position",
            Self::Sm => "sm",
        }
    }

    pub fn weights(self) -> FamilyWeights {
        match self {
            Self::Classic => FamilyWeights::classic(),
            Self::Position => FamilyWeights::position(),
            Self::Sm => FamilyWeights::default(),
        }
    }
}

/// One annotated image brought into its ground-truth box frame.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub sub: Image2D,
    pub landmarks: LandmarkSet,
    pub mask: BinaryMask,
}

pub fn prepare(samples: &[SynthSample], sub_w: usize, sub_h: usize) -> Result<Vec<Prepared>> {
    samples
        .par_iter()
        .map(|s| prepare_one(&s.image, &s.landmarks, &s.bbox, sub_w, sub_h))
        .collect()
}

pub fn prepare_one(
    image: &Image2D,
    landmarks: &LandmarkSet,
    bbox: &BoundingBox,
    sub_w: usize,
    sub_h: usize,
) -> Result<Prepared> {
    let (sub, landmarks, mask) = pipeline::training_example(image, landmarks, bbox, sub_w, sub_h)?;
    Ok(Prepared { sub, landmarks, mask })
}

/// Training and test samples of the synthetic corpus.
pub fn corpus(synth: &SynthConfig, n_train: usize, n_test: usize) -> Result<(Vec<SynthSample>, Vec<SynthSample>)> {
    synth.validate()?;
    let all = (0..n_train + n_test)
        .into_par_iter()
        .map(|i| synth::generate_sample(synth, i))
        .collect::<Result<Vec<_>>>()?;
    let mut train = all;
    let test = train.split_off(n_train);
    Ok((train, test))
}

pub fn shape_model(train: &[Prepared], cfg: &ShapeModelConfig) -> Result<ShapeModel> {
    let shapes: Vec<LandmarkSet> = train.iter().map(|p| p.landmarks.clone()).collect();
    build_model(&shapes, cfg)
}

pub fn forest_dataset(train: &[Prepared]) -> Vec<(Image2D, BinaryMask)> {
    train.iter().map(|p| (p.sub.clone(), p.mask.clone())).collect()
}

/// Jaccard of the 0.5-thresholded probability map against the mask.
pub fn rf_jaccard(forest: &Forest, sub: &Image2D, mask: &BinaryMask) -> Result<f64> {
    let map = forest.predict(sub)?;
    metrics::jaccard(&map.threshold(0.5), mask)
}

pub fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn mean_rf_jaccard(forest: &Forest, test: &[Prepared]) -> Result<f64> {
    let js = test
        .par_iter()
        .map(|p| rf_jaccard(forest, &p.sub, &p.mask))
        .collect::<Result<Vec<_>>>()?;
    Ok(mean(&js))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DepthRow {
    pub variant: &'static str,
    pub depth: usize,
    pub mean_jaccard: f64,
}

/// Trains one forest per variant at the largest depth and evaluates its
/// truncations, which equal forests trained at the smaller depths.
pub fn depth_study(
    train: &[Prepared],
    test: &[Prepared],
    model: &ShapeModel,
    base: &TrainConfig,
    variants: &[Variant],
    depths: &[usize],
) -> Result<Vec<DepthRow>> {
    let dataset = forest_dataset(train);
    let deepest = depths.iter().copied().max().unwrap_or(base.max_depth);
    let mut rows = Vec::new();
    for &v in variants {
        let mut cfg = *base;
        cfg.features.weights = v.weights();
        cfg.max_depth = deepest;
        let forest = parallel::train_forest(&dataset, &cfg, model)?;
        for &d in depths {
            let f = forest.truncated(d);
            rows.push(DepthRow {
                variant: v.name(),
                depth: d,
                mean_jaccard: mean_rf_jaccard(&f, test)?,
            });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NoiseRow {
    pub multiple: f64,
    pub mean_jaccard: f64,
}

/// Forest Jaccard with every test box perturbed by `multiple` times the box
/// sigmas. The reference mask is the ground truth seen through the
/// perturbed box.
pub fn box_noise_study(
    forest: &Forest,
    test: &[SynthSample],
    multiples: &[f64],
    sub_w: usize,
    sub_h: usize,
    seed: u64,
) -> Result<Vec<NoiseRow>> {
    multiples
        .iter()
        .map(|&k| {
            let sig = BOX_SIGMAS.map(|s| s * k);
            let js = test
                .par_iter()
                .enumerate()
                .map(|(i, s)| {
                    let mut r = rng::stream(seed, i as u64);
                    let mut b = perturb_box(&s.bbox, sig, &mut r)?;
                    let (w, h) = s.image.dims();
                    b.cx = b.cx.clamp(0.0, w as f64 - 1e-9);
                    b.cy = b.cy.clamp(0.0, h as f64 - 1e-9);
                    let sub = prepare_sub_image(&s.image, &b, sub_w, sub_h)?;
                    let lm = map_contour_into(&s.landmarks, &b, sub_w, sub_h);
                    let mask = rasterize_mask(&lm, sub_w, sub_h)?;
                    rf_jaccard(forest, &sub, &mask)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(NoiseRow {
                multiple: k,
                mean_jaccard: mean(&js),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaseScore {
    pub jaccard: f64,
    pub mad: f64,
    pub hd: f64,
    pub endo_area: f64,
    pub myo_area: f64,
    pub ref_endo_area: f64,
    pub ref_myo_area: f64,
}

/// Scores a contour against the ground truth in source-image coordinates.
pub fn score(contour: &LandmarkSet, truth: &LandmarkSet, width: usize, height: usize) -> Result<CaseScore> {
    let pred_mask = rasterize_mask(contour, width, height)?;
    let ref_mask = rasterize_mask(truth, width, height)?;
    let pair = ContourPair::new(contour, truth);
    let a = metrics::areas(contour, synth::KEY_INDICES)?;
    let r = metrics::areas(truth, synth::KEY_INDICES)?;
    Ok(CaseScore {
        jaccard: metrics::jaccard(&pred_mask, &ref_mask)?,
        mad: metrics::mad(&pair)?,
        hd: metrics::hausdorff(&pair)?,
        endo_area: a.endo_area,
        myo_area: a.myo_area,
        ref_endo_area: r.endo_area,
        ref_myo_area: r.myo_area,
    })
}

/// Full pipeline on each test image with its ground-truth box.
pub fn end_to_end<P: ProbabilityModel + Sync + ?Sized>(
    prob: &P,
    model: &ShapeModel,
    test: &[SynthSample],
    cfg: &PipelineConfig,
) -> Result<Vec<CaseScore>> {
    test.par_iter()
        .map(|s| {
            let seg = pipeline::segment_image(&s.image, &s.bbox, prob, model, cfg)?;
            let (w, h) = s.image.dims();
            score(&seg.contour, &s.landmarks, w, h)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SequenceScore {
    pub mean_jaccard: f64,
    pub max_hd: f64,
    /// Mean landmark displacement between consecutive fitted frames.
    pub mean_motion: f64,
}

pub fn sequence_frames(synth: &SynthConfig, index: usize, frames: usize) -> Result<Vec<SynthSample>> {
    let spec = SequenceSpec::draw(synth, rng::derive(synth.seed, 1_000_000 + index as u64));
    let cfg = SynthConfig {
        seed: rng::derive(synth.seed, 2_000_000 + index as u64),
        ..synth.clone()
    };
    synth::generate_sequence(&cfg, &spec, frames)
}

pub fn mean_motion(contours: &[LandmarkSet]) -> f64 {
    let steps: Vec<f64> = contours
        .windows(2)
        .map(|w| {
            let d: f64 = w[0]
                .points()
                .iter()
                .zip(w[1].points())
                .map(|(a, b)| a.distance(*b))
                .sum();
            d / w[0].len() as f64
        })
        .collect();
    mean(&steps)
}

/// Segments one sequence with its per-frame ground-truth boxes.
pub fn sequence_run<P: ProbabilityModel + Sync + ?Sized>(
    prob: &P,
    model: &ShapeModel,
    frames: &[SynthSample],
    cfg: &PipelineConfig,
) -> Result<SequenceScore> {
    let images: Vec<Image2D> = frames.iter().map(|f| f.image.clone()).collect();
    let boxes: Vec<_> = frames.iter().map(|f| f.bbox).collect();
    let maps = images
        .par_iter()
        .zip(&boxes)
        .map(|(img, b)| prob.predict(&prepare_sub_image(img, b, cfg.sub_w, cfg.sub_h)?))
        .collect::<Result<Vec<_>>>()?;
    let segs = pipeline::segment_sequence_maps(maps, &boxes, model, cfg)?;
    let mut js = Vec::new();
    let mut max_hd = 0.0f64;
    for (seg, f) in segs.iter().zip(frames) {
        let (w, h) = f.image.dims();
        let s = score(&seg.contour, &f.landmarks, w, h)?;
        js.push(s.jaccard);
        max_hd = max_hd.max(s.hd);
    }
    let contours: Vec<LandmarkSet> = segs.into_iter().map(|s| s.contour).collect();
    Ok(SequenceScore {
        mean_jaccard: mean(&js),
        max_hd,
        mean_motion: mean_motion(&contours),
    })
}
