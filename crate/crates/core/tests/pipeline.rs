mod oracles;

use myoseg_core::imaging::{map_contour_back, map_contour_into, rasterize_mask, BoundingBox, Image2D};
use myoseg_core::pipeline::{
    perturb_box, prepare_sub_image, segment_image, segment_sequence, PipelineConfig, BOX_SIGMAS,
};
use myoseg_core::rng;
use myoseg_core::shape_model::{build_model, ShapeModel, ShapeModelConfig};
use myoseg_core::synth::{generate_dataset, SynthConfig, SynthSample};
use myoseg_core::{Error, Result};

const SUB: usize = 96;

fn setup() -> (Vec<SynthSample>, ShapeModel, PipelineConfig) {
    let cfg = SynthConfig {
        n_images: 90,
        seed: 0,
        ..SynthConfig::default()
    }
    .clean();
    let data = generate_dataset(&cfg).unwrap();
    let shapes: Vec<_> = data[..60]
        .iter()
        .map(|s| map_contour_into(&s.landmarks, &s.bbox, SUB, SUB))
        .collect();
    let model = build_model(&shapes, &ShapeModelConfig::default()).unwrap();
    (
        data,
        model,
        PipelineConfig {
            sub_w: SUB,
            sub_h: SUB,
            ..PipelineConfig::default()
        },
    )
}

/// Probability model that returns the ground-truth mask of one sample.
fn truth_stub(s: &SynthSample) -> impl Fn(&Image2D) -> Result<Image2D> {
    let map = rasterize_mask(&map_contour_into(&s.landmarks, &s.bbox, SUB, SUB), SUB, SUB)
        .unwrap()
        .to_image();
    move |_: &Image2D| Ok(map.clone())
}

#[test]
fn truth_stub_recovers_held_out_shapes() {
    let (data, model, cfg) = setup();
    let mut total = 0.0;
    for s in &data[60..] {
        let seg = segment_image(&s.image, &s.bbox, &truth_stub(s), &model, &cfg).unwrap();
        let got = rasterize_mask(&seg.contour, 128, 128).unwrap();
        total += oracles::jaccard(&got, &s.mask);
    }
    let mean = total / 30.0;
    assert!(mean >= 0.95, "mean Jaccard {mean}");
}

#[test]
fn contour_round_trips_to_fitted_landmarks() {
    let (data, model, cfg) = setup();
    let s = &data[65];
    let seg = segment_image(&s.image, &s.bbox, &truth_stub(s), &model, &cfg).unwrap();
    let back = map_contour_into(&seg.contour, &s.bbox, SUB, SUB);
    for (p, q) in back.points().iter().zip(seg.fit.landmarks.points()) {
        assert!(p.distance(*q) < 1e-9);
    }
    assert_eq!(seg.contour, map_contour_back(&seg.fit.landmarks, &s.bbox, SUB, SUB));
    let again = segment_image(&s.image, &s.bbox, &truth_stub(s), &model, &cfg).unwrap();
    assert_eq!(seg, again);
}

#[test]
fn single_frame_sequence_equals_single_image() {
    let (data, model, cfg) = setup();
    let s = &data[61];
    let one = segment_image(&s.image, &s.bbox, &truth_stub(s), &model, &cfg).unwrap();
    let seq = segment_sequence(std::slice::from_ref(&s.image), &[s.bbox], &truth_stub(s), &model, &cfg).unwrap();
    assert_eq!(seq.len(), 1);
    assert_eq!(seq[0], one);
}

#[test]
fn identical_frames_give_stationary_contours() {
    let (data, model, cfg) = setup();
    let s = &data[62];
    let frames = vec![s.image.clone(); 4];
    let seq = segment_sequence(&frames, &[s.bbox; 4], &truth_stub(s), &model, &cfg).unwrap();
    for seg in &seq[1..] {
        for (p, q) in seg.contour.points().iter().zip(seq[0].contour.points()) {
            assert!(p.distance(*q) < 0.5);
        }
    }
}

#[test]
fn rejects_bad_inputs() {
    let (data, model, cfg) = setup();
    let s = &data[63];
    let wrong = |_: &Image2D| Ok(Image2D::filled(10, 10, 0.5));
    assert!(matches!(
        segment_image(&s.image, &s.bbox, &wrong, &model, &cfg),
        Err(Error::ResolutionMismatch { .. })
    ));
    let outside = BoundingBox::new(200.0, 10.0, 20.0, 20.0, 0.0).unwrap();
    assert_eq!(
        segment_image(&s.image, &outside, &truth_stub(s), &model, &cfg).unwrap_err(),
        Error::BoxOutsideImage
    );
    assert!(BoundingBox::new(10.0, 10.0, 0.0, 5.0, 0.0).is_err());
    assert!(matches!(
        segment_sequence(
            std::slice::from_ref(&s.image),
            &[s.bbox, s.bbox],
            &truth_stub(s),
            &model,
            &cfg
        ),
        Err(Error::LengthMismatch { .. })
    ));
    assert!(segment_sequence(&[], &[], &truth_stub(s), &model, &cfg).is_err());
}

#[test]
fn sub_image_is_equalized_crop() {
    let (data, _, _) = setup();
    let s = &data[0];
    let sub = prepare_sub_image(&s.image, &s.bbox, 60, 40).unwrap();
    assert_eq!(sub.dims(), (60, 40));
    assert!(sub.data().iter().all(|v| (0.0..=1.0).contains(v)));
    assert!(sub.data().contains(&1.0));
}

#[test]
fn box_perturbation_statistics() {
    let b = BoundingBox::new(100.0, 100.0, 80.0, 90.0, 0.0).unwrap();
    let mut r = rng::seeded(9);
    let n = 10_000;
    let draws: Vec<[f64; 5]> = (0..n)
        .map(|_| perturb_box(&b, BOX_SIGMAS, &mut r).unwrap().as_array())
        .collect();
    let base = b.as_array();
    for k in 0..5 {
        let d: Vec<f64> = draws.iter().map(|v| v[k] - base[k]).collect();
        let mean = d.iter().sum::<f64>() / n as f64;
        let sd = (d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        assert!((sd / BOX_SIGMAS[k] - 1.0).abs() < 0.05, "param {k}: {sd}");
    }
    assert_eq!(perturb_box(&b, [0.0; 5], &mut r).unwrap(), b);
    assert!(perturb_box(&b, [1.0, -1.0, 0.0, 0.0, 0.0], &mut r).is_err());
    let again: Vec<_> = (0..5)
        .map(|_| perturb_box(&b, BOX_SIGMAS, &mut rng::seeded(4)).unwrap())
        .collect();
    assert!(again.windows(2).all(|w| w[0] == w[1]));
}
