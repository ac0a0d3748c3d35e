//! Synthetic horseshoe-shaped "myocardium" images with known ground truth.
//!
//! A sample is an elliptical annulus sector opening towards `+y`, optionally
//! skewed and wobbled, rendered as a bright band on a dark background with
//! an attenuation ramp, acoustic shadow wedges, Gaussian noise and bright
//! blobs inside the chamber.

use alloc::vec::Vec;
use core::f64::consts::PI;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::geometry::{self, LandmarkSet, Point};
use crate::imaging::{rasterize_mask, BinaryMask, BoundingBox, Image2D};
use crate::math;
use crate::rng;
use crate::{Error, Result};

/// Landmarks per contour.
pub const M: usize = 76;
/// Epicardial apex, endocardial basal point, endocardial apex, endocardial
/// basal point.
pub const KEY_INDICES: [usize; 4] = [0, 19, 38, 57];
const PER_SEGMENT: usize = 19;
const ARC_SAMPLES: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_images: usize,
    pub width: usize,
    pub height: usize,
    /// Epicardial half-width.
    pub a_range: [f64; 2],
    /// Epicardial depth from the centre to the apex.
    pub c_range: [f64; 2],
    pub thickness_range: [f64; 2],
    /// Sector half-angle in degrees.
    pub half_angle_range: [f64; 2],
    /// Horizontal shear `x += skew * y`.
    pub skew_range: [f64; 2],
    /// Number of sinusoidal wobble modes along the sector.
    pub n_modes_gen: usize,
    /// Maximum wobble amplitude per mode in pixels.
    pub wobble: f64,
    /// Maximum box-centre offset from the image centre.
    pub offset_max: f64,
    /// Maximum rotation in degrees.
    pub rot_max: f64,
    pub myo_level: f64,
    pub background_level: f64,
    pub noise_std: f64,
    /// Distractor count is drawn uniformly from `0..=max_distractors`.
    pub max_distractors: usize,
    pub distractor_radius: [f64; 2],
    pub distractor_level: f64,
    /// Intensity falls linearly from 1 at the top row to `1 - attenuation`.
    pub attenuation: f64,
    /// Shadow count is drawn uniformly from `0..=max_shadows`.
    pub max_shadows: usize,
    /// Angular width in degrees of a shadow wedge cast from above the image.
    pub shadow_width: [f64; 2],
    /// Intensity factor inside a shadow.
    pub shadow_factor: [f64; 2],
    /// Relative inflation of the tight box.
    pub box_inflate: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_images: 90,
            width: 128,
            height: 128,
            a_range: [22.0, 30.0],
            c_range: [30.0, 40.0],
            thickness_range: [7.0, 11.0],
            half_angle_range: [100.0, 120.0],
            skew_range: [-0.15, 0.15],
            n_modes_gen: 2,
            wobble: 2.0,
            offset_max: 8.0,
            rot_max: 15.0,
            myo_level: 0.6,
            background_level: 0.15,
            noise_std: 0.08,
            max_distractors: 2,
            distractor_radius: [2.0, 5.0],
            distractor_level: 0.55,
            attenuation: 0.3,
            max_shadows: 2,
            shadow_width: [10.0, 25.0],
            shadow_factor: [0.3, 0.5],
            box_inflate: 0.15,
            seed: 0,
        }
    }
}

impl SynthConfig {
    /// Two-level rendering: no noise, distractors or attenuation.
    pub fn clean(mut self) -> Self {
        self.noise_std = 0.0;
        self.max_distractors = 0;
        self.attenuation = 0.0;
        self.max_shadows = 0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let ranges = [
            self.a_range,
            self.c_range,
            self.thickness_range,
            self.half_angle_range,
            self.distractor_radius,
            self.shadow_width,
            self.shadow_factor,
        ];
        if ranges.iter().any(|r| !(r[0] > 0.0 && r[1] >= r[0])) {
            return Err(Error::InvalidConfig("synthetic ranges must be positive and ordered"));
        }
        if !(self.skew_range[1] >= self.skew_range[0]) {
            return Err(Error::InvalidConfig("skew range must be ordered"));
        }
        if self.thickness_range[1] >= self.a_range[0].min(self.c_range[0]) {
            return Err(Error::InvalidConfig("thickness must stay below the radii"));
        }
        if self.half_angle_range[1] >= 180.0 {
            return Err(Error::InvalidConfig("half angle must stay below 180 degrees"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidConfig("image size must be positive"));
        }
        if !(self.noise_std >= 0.0 && self.wobble >= 0.0 && self.offset_max >= 0.0 && self.rot_max >= 0.0) {
            return Err(Error::InvalidConfig(
                "noise, wobble and pose ranges must be non-negative",
            ));
        }
        if !(0.0..1.0).contains(&self.attenuation) || !(self.box_inflate >= 0.0) {
            return Err(Error::InvalidConfig(
                "attenuation must be in [0, 1) and inflation non-negative",
            ));
        }
        Ok(())
    }
}

/// Generative shape parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeLatent {
    pub a: f64,
    pub c: f64,
    pub thickness: f64,
    pub half_angle: f64,
    pub skew: f64,
    pub wobble: Vec<f64>,
}

/// Placement of the shape in the image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseLatent {
    pub cx: f64,
    pub cy: f64,
    pub rot: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSample {
    pub image: Image2D,
    pub mask: BinaryMask,
    pub landmarks: LandmarkSet,
    pub bbox: BoundingBox,
    pub latent: ShapeLatent,
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, r: [f64; 2]) -> f64 {
    if r[1] > r[0] {
        rng.random_range(r[0]..r[1])
    } else {
        r[0]
    }
}

pub fn draw_shape<R: Rng + ?Sized>(cfg: &SynthConfig, rng: &mut R) -> ShapeLatent {
    ShapeLatent {
        a: uniform(rng, cfg.a_range),
        c: uniform(rng, cfg.c_range),
        thickness: uniform(rng, cfg.thickness_range),
        half_angle: uniform(rng, cfg.half_angle_range),
        skew: uniform(rng, cfg.skew_range),
        wobble: (0..cfg.n_modes_gen)
            .map(|_| uniform(rng, [-cfg.wobble, cfg.wobble]))
            .collect(),
    }
}

pub fn draw_pose<R: Rng + ?Sized>(cfg: &SynthConfig, rng: &mut R) -> PoseLatent {
    PoseLatent {
        cx: cfg.width as f64 / 2.0 + uniform(rng, [-cfg.offset_max, cfg.offset_max]),
        cy: cfg.height as f64 / 2.0 + uniform(rng, [-cfg.offset_max, cfg.offset_max]),
        rot: uniform(rng, [-cfg.rot_max, cfg.rot_max]),
    }
}

/// Point on the wall at sector angle `psi` (degrees) and depth `inset`
/// below the epicardium.
fn wall_point(s: &ShapeLatent, psi: f64, inset: f64) -> Point {
    let (sin, cos) = math::sin_cos_deg(psi);
    let u = 0.5 * (psi / s.half_angle + 1.0);
    let dy: f64 = s
        .wobble
        .iter()
        .enumerate()
        .map(|(k, e)| e * math::sin((k + 1) as f64 * PI * u))
        .sum();
    let y = -(s.c - inset) * cos + dy;
    Point::new((s.a - inset) * sin + s.skew * y, y)
}

/// Dense polyline from `from` to `to` (degrees) on the given wall.
fn arc(s: &ShapeLatent, from: f64, to: f64, inset: f64) -> Vec<Point> {
    (0..=ARC_SAMPLES)
        .map(|i| wall_point(s, from + (to - from) * i as f64 / ARC_SAMPLES as f64, inset))
        .collect()
}

/// `n` points at equal arc length along `path`, starting at its first point
/// and excluding its last.
fn equal_arc(path: &[Point], n: usize) -> Vec<Point> {
    let mut cum = Vec::with_capacity(path.len());
    cum.push(0.0);
    for w in path.windows(2) {
        let last = *cum.last().unwrap_or(&0.0);
        cum.push(last + w[0].distance(w[1]));
    }
    let total = *cum.last().unwrap_or(&0.0);
    let mut out = Vec::with_capacity(n);
    let mut j = 0;
    for i in 0..n {
        let target = total * i as f64 / n as f64;
        while j + 2 < cum.len() && cum[j + 1] < target {
            j += 1;
        }
        let seg = cum[j + 1] - cum[j];
        let t = if seg > 0.0 { (target - cum[j]) / seg } else { 0.0 };
        let (a, b) = (path[j], path[j + 1]);
        out.push(Point::new(a.x + t * (b.x - a.x), a.y + t * (b.y - a.y)));
    }
    out
}

/// The 76-landmark contour in the shape's own frame.
///
/// Segments: epicardial apex to the right basal corner and across the base
/// to the endocardium, endocardium to its apex, endocardial apex to the left
/// basal point, then across the base and up the epicardium to the apex.
pub fn shape_landmarks(s: &ShapeLatent) -> LandmarkSet {
    let (phi, t) = (s.half_angle, s.thickness);
    let mut seg0 = arc(s, 0.0, phi, 0.0);
    seg0.push(wall_point(s, phi, t));
    let seg1 = arc(s, phi, 0.0, t);
    let seg2 = arc(s, 0.0, -phi, t);
    let mut seg3 = vec_with(wall_point(s, -phi, t));
    seg3.extend(arc(s, -phi, 0.0, 0.0));
    let mut out = Vec::with_capacity(M);
    for seg in [&seg0, &seg1, &seg2, &seg3] {
        out.extend(equal_arc(seg, PER_SEGMENT));
    }
    LandmarkSet::new(out).expect("contour has 76 points")
}

fn vec_with(p: Point) -> Vec<Point> {
    let mut v = Vec::with_capacity(ARC_SAMPLES + 2);
    v.push(p);
    v
}

fn bbox_of(points: &[Point]) -> (f64, f64, f64, f64) {
    points.iter().fold(
        (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
        |(x0, y0, x1, y1), p| (x0.min(p.x), y0.min(p.y), x1.max(p.x), y1.max(p.y)),
    )
}

/// Places the canonical contour so that its inflated tight box is centred
/// at the pose centre with the pose rotation. Returns image landmarks and box.
pub fn place(s: &ShapeLatent, pose: &PoseLatent, inflate: f64) -> (LandmarkSet, BoundingBox) {
    let canon = shape_landmarks(s);
    let (x0, y0, x1, y1) = bbox_of(canon.points());
    let (mx, my) = (0.5 * (x0 + x1), 0.5 * (y0 + y1));
    let (sin, cos) = math::sin_cos_deg(pose.rot);
    let lm = canon.map(|p| {
        let r = geometry::rotate(Point::new(p.x - mx, p.y - my), sin, cos);
        Point::new(pose.cx + r.x, pose.cy + r.y)
    });
    let bbox = BoundingBox {
        cx: pose.cx,
        cy: pose.cy,
        w: (x1 - x0) * (1.0 + inflate),
        h: (y1 - y0) * (1.0 + inflate),
        theta: math::wrap_deg(pose.rot),
    };
    (lm, bbox)
}

/// Renders a sample; the random generator drives distractors, shadows and
/// noise.
pub fn render<R: Rng + ?Sized>(
    cfg: &SynthConfig,
    latent: &ShapeLatent,
    pose: &PoseLatent,
    rng: &mut R,
) -> Result<SynthSample> {
    let mut s = render_anatomy(cfg, latent, pose, rng)?;
    degrade(cfg, &mut s.image, rng)?;
    Ok(s)
}

/// Two-level image plus distractor blobs, before any degradation.
pub fn render_anatomy<R: Rng + ?Sized>(
    cfg: &SynthConfig,
    latent: &ShapeLatent,
    pose: &PoseLatent,
    rng: &mut R,
) -> Result<SynthSample> {
    let (landmarks, bbox) = place(latent, pose, cfg.box_inflate);
    let (w, h) = (cfg.width, cfg.height);
    let mask = rasterize_mask(&landmarks, w, h)?;
    let mut image = Image2D::from_fn(w, h, |x, y| {
        if mask.get(x, y) {
            cfg.myo_level
        } else {
            cfg.background_level
        }
    });

    // Distractors sit inside the chamber, in the shape frame.
    let n_blobs = if cfg.max_distractors > 0 {
        rng.random_range(0..=cfg.max_distractors)
    } else {
        0
    };
    let (x0, y0, x1, y1) = bbox_of(shape_landmarks(latent).points());
    let (mx, my) = (0.5 * (x0 + x1), 0.5 * (y0 + y1));
    let (sin, cos) = math::sin_cos_deg(pose.rot);
    for _ in 0..n_blobs {
        let psi = rng.random_range(-0.7..0.7) * latent.half_angle;
        let depth = rng.random_range(0.3..0.8);
        let wall = wall_point(latent, psi, latent.thickness);
        let c = Point::new(wall.x * depth, wall.y * depth);
        let rc = geometry::rotate(Point::new(c.x - mx, c.y - my), sin, cos);
        let centre = Point::new(pose.cx + rc.x, pose.cy + rc.y);
        let ra = uniform(rng, cfg.distractor_radius);
        let rb = uniform(rng, cfg.distractor_radius);
        let ang: f64 = rng.random_range(0.0..180.0);
        let (bs, bc) = math::sin_cos_deg(ang);
        for y in 0..h {
            for x in 0..w {
                let d = Point::new(x as f64 + 0.5 - centre.x, y as f64 + 0.5 - centre.y);
                let u = bc * d.x + bs * d.y;
                let v = -bs * d.x + bc * d.y;
                if (u / ra) * (u / ra) + (v / rb) * (v / rb) <= 1.0 && !mask.get(x, y) {
                    image.set(x, y, cfg.distractor_level);
                }
            }
        }
    }

    Ok(SynthSample {
        image,
        mask,
        landmarks,
        bbox,
        latent: latent.clone(),
    })
}

/// Shadows, attenuation and noise, in that order.
pub fn degrade<R: Rng + ?Sized>(cfg: &SynthConfig, image: &mut Image2D, rng: &mut R) -> Result<()> {
    let (w, h) = image.dims();
    let n_shadows = if cfg.max_shadows > 0 {
        rng.random_range(0..=cfg.max_shadows)
    } else {
        0
    };
    let probe = Point::new(w as f64 / 2.0, -0.25 * h as f64);
    for _ in 0..n_shadows {
        let centre: f64 = rng.random_range(-25.0..25.0);
        let half = 0.5 * uniform(rng, cfg.shadow_width);
        let factor = uniform(rng, cfg.shadow_factor);
        for y in 0..h {
            for x in 0..w {
                let dx = x as f64 + 0.5 - probe.x;
                let dy = y as f64 + 0.5 - probe.y;
                let ang = libm::atan2(dx, dy).to_degrees();
                if (ang - centre).abs() <= half {
                    image.set(x, y, image.get(x, y) * factor);
                }
            }
        }
    }

    if cfg.attenuation > 0.0 {
        for y in 0..h {
            let f = 1.0 - cfg.attenuation * (y as f64 + 0.5) / h as f64;
            for x in 0..w {
                image.set(x, y, image.get(x, y) * f);
            }
        }
    }
    if cfg.noise_std > 0.0 {
        let normal = Normal::new(0.0, cfg.noise_std).map_err(|_| Error::InvalidConfig("noise_std"))?;
        for y in 0..h {
            for x in 0..w {
                let v = image.get(x, y) + normal.sample(rng);
                image.set(x, y, v.clamp(0.0, 1.0));
            }
        }
    }
    Ok(())
}

/// Sample `i` draws everything from its own stream of `cfg.seed`.
pub fn generate_sample(cfg: &SynthConfig, i: usize) -> Result<SynthSample> {
    let mut r = rng::stream(cfg.seed, i as u64);
    let latent = draw_shape(cfg, &mut r);
    let pose = draw_pose(cfg, &mut r);
    render(cfg, &latent, &pose, &mut r)
}

pub fn generate_dataset(cfg: &SynthConfig) -> Result<Vec<SynthSample>> {
    cfg.validate()?;
    (0..cfg.n_images).map(|i| generate_sample(cfg, i)).collect()
}

/// Cyclic sweep `p(t) = mid + amp cos(2 pi t / T)` of the shape parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceSpec {
    pub mid: ShapeLatent,
    pub amp: ShapeLatent,
    pub pose: PoseLatent,
}

impl SequenceSpec {
    /// A random mid-cycle shape whose cavity is smallest at frame 0.
    pub fn draw(cfg: &SynthConfig, seed: u64) -> Self {
        let mut r = rng::stream(seed, u64::MAX);
        let mid = draw_shape(cfg, &mut r);
        let pose = draw_pose(cfg, &mut r);
        let amp = ShapeLatent {
            a: -0.08 * mid.a,
            c: -0.06 * mid.c,
            thickness: 0.12 * mid.thickness,
            half_angle: 0.0,
            skew: 0.0,
            wobble: alloc::vec![0.0; mid.wobble.len()],
        };
        Self { mid, amp, pose }
    }

    pub fn at(&self, t: usize, frames: usize) -> ShapeLatent {
        let k = math::cos(2.0 * PI * t as f64 / frames as f64);
        let m = &self.mid;
        let a = &self.amp;
        ShapeLatent {
            a: m.a + a.a * k,
            c: m.c + a.c * k,
            thickness: m.thickness + a.thickness * k,
            half_angle: m.half_angle + a.half_angle * k,
            skew: m.skew + a.skew * k,
            wobble: m.wobble.iter().zip(&a.wobble).map(|(x, y)| x + y * k).collect(),
        }
    }
}

/// Frames of one cycle. Distractors are shared by all frames; shadows and
/// noise are drawn independently per frame.
pub fn generate_sequence(cfg: &SynthConfig, spec: &SequenceSpec, frames: usize) -> Result<Vec<SynthSample>> {
    cfg.validate()?;
    if frames < 2 {
        return Err(Error::InvalidConfig("a sequence needs at least two frames"));
    }
    if spec.amp.wobble.len() != spec.mid.wobble.len() {
        return Err(Error::LengthMismatch {
            left: spec.mid.wobble.len(),
            right: spec.amp.wobble.len(),
        });
    }
    let blob_seed = rng::derive(cfg.seed, u64::MAX - 1);
    (0..frames)
        .map(|t| {
            let latent = spec.at(t, frames);
            let mut s = render_anatomy(cfg, &latent, &spec.pose, &mut rng::seeded(blob_seed))?;
            degrade(cfg, &mut s.image, &mut rng::stream(cfg.seed, t as u64))?;
            Ok(s)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn contour_has_keys_in_place() {
        let s = ShapeLatent {
            a: 30.0,
            c: 30.0,
            thickness: 8.0,
            half_angle: 110.0,
            skew: 0.0,
            wobble: Vec::new(),
        };
        let lm = shape_landmarks(&s);
        assert_eq!(lm.len(), M);
        let p = lm.points();
        assert!((p[KEY_INDICES[0]].y + 30.0).abs() < 1e-12);
        assert!((p[KEY_INDICES[2]].y + 22.0).abs() < 1e-12);
        assert!((p[KEY_INDICES[1]].x + p[KEY_INDICES[3]].x).abs() < 1e-9);
    }

    #[test]
    fn clean_render_thresholds_to_mask() {
        let cfg = SynthConfig::default().clean();
        let s = generate_sample(&cfg, 3).unwrap();
        assert_eq!(s.image.threshold(0.375), s.mask);
    }
}
