//! Overlap, contour distance, area and agreement statistics.

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::geometry::{self, LandmarkSet, Point};
use crate::imaging::BinaryMask;
use crate::math;
use crate::{Error, Result};

/// Default spacing of the dense contour resampling, in pixels.
pub const DEFAULT_STEP: f64 = 0.5;

/// `|a & b| / |a | b|`, and 1 when both masks are empty.
pub fn jaccard(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(Error::DimensionMismatch {
            expected: a.width() * a.height(),
            found: b.width() * b.height(),
        });
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.data().iter().zip(b.data()) {
        inter += usize::from(x != 0 && y != 0);
        union += usize::from(x != 0 || y != 0);
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContourPair<'a> {
    pub predicted: &'a LandmarkSet,
    pub reference: &'a LandmarkSet,
    pub step: f64,
}

impl<'a> ContourPair<'a> {
    pub fn new(predicted: &'a LandmarkSet, reference: &'a LandmarkSet) -> Self {
        Self {
            predicted,
            reference,
            step: DEFAULT_STEP,
        }
    }
}

/// Points along the closed contour with spacing at most `step`. Every
/// landmark is kept and each edge is split evenly.
pub fn resample_closed(shape: &LandmarkSet, step: f64) -> Vec<Point> {
    let mut out = Vec::new();
    for (a, b) in shape.edges() {
        let n = (math::ceil(a.distance(b) / step) as usize).max(1);
        for i in 0..n {
            let t = i as f64 / n as f64;
            out.push(Point::new(a.x + t * (b.x - a.x), a.y + t * (b.y - a.y)));
        }
    }
    out
}

fn directed(from: &[Point], to: &LandmarkSet) -> (f64, f64) {
    let poly = to.points();
    let mut sum = 0.0;
    let mut max = 0.0f64;
    for &p in from {
        let d = geometry::boundary_distance(poly, p);
        sum += d;
        max = max.max(d);
    }
    (sum / from.len() as f64, max)
}

fn check(pair: &ContourPair<'_>) -> Result<()> {
    for s in [pair.predicted, pair.reference] {
        if s.len() < 3 {
            return Err(Error::DegenerateShape(s.len()));
        }
    }
    if !(pair.step > 0.0) {
        return Err(Error::InvalidConfig("sampling step must be positive"));
    }
    Ok(())
}

fn both_directions(pair: &ContourPair<'_>) -> Result<((f64, f64), (f64, f64))> {
    check(pair)?;
    let p = resample_closed(pair.predicted, pair.step);
    let r = resample_closed(pair.reference, pair.step);
    Ok((directed(&p, pair.reference), directed(&r, pair.predicted)))
}

/// Symmetric mean absolute distance: the mean of the two directed mean
/// nearest-polyline distances over the dense resampling.
pub fn mad(pair: &ContourPair<'_>) -> Result<f64> {
    let ((a, _), (b, _)) = both_directions(pair)?;
    Ok(0.5 * (a + b))
}

/// Symmetric Hausdorff distance over the dense resampling.
pub fn hausdorff(pair: &ContourPair<'_>) -> Result<f64> {
    let ((_, a), (_, b)) = both_directions(pair)?;
    Ok(a.max(b))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Areas {
    pub endo_area: f64,
    pub myo_area: f64,
}

/// Areas from the canonical key landmarks `[epi apex, endo basal, endo apex,
/// endo basal]`. The endocardial chain runs forward from `keys[1]` to
/// `keys[3]` through `keys[2]` and is closed by the basal segment.
pub fn areas(shape: &LandmarkSet, keys: [usize; 4]) -> Result<Areas> {
    let m = shape.len();
    if keys.iter().any(|&k| k >= m) || keys[1] == keys[3] {
        return Err(Error::BadKeyIndices);
    }
    let pts = shape.points();
    let mut chain = Vec::new();
    let mut i = keys[1];
    let mut saw_apex = false;
    loop {
        chain.push(pts[i]);
        saw_apex |= i == keys[2];
        if i == keys[3] {
            break;
        }
        i = (i + 1) % m;
    }
    if !saw_apex {
        return Err(Error::BadKeyIndices);
    }
    Ok(Areas {
        endo_area: geometry::polygon_area(&chain),
        myo_area: geometry::polygon_area(pts),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub n: usize,
    pub corr: f64,
    pub bias: f64,
    pub std: f64,
    pub t_stat: f64,
    pub p_value: f64,
    /// Bland-Altman `(mean, pred - ref)` per case.
    pub bland_altman: Vec<(f64, f64)>,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Pearson correlation, bias, sample standard deviation of the differences
/// and a two-sided paired t-test with `n - 1` degrees of freedom.
pub fn summarize(pred: &[f64], reference: &[f64]) -> Result<SummaryStats> {
    if pred.len() != reference.len() {
        return Err(Error::LengthMismatch {
            left: pred.len(),
            right: reference.len(),
        });
    }
    let n = pred.len();
    if n < 2 {
        return Err(Error::EmptyDataset);
    }
    let (mp, mr) = (mean(pred), mean(reference));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (p, r) in pred.iter().zip(reference) {
        sxy += (p - mp) * (r - mr);
        sxx += (p - mp) * (p - mp);
        syy += (r - mr) * (r - mr);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::ZeroVariance);
    }
    let corr = (sxy / math::sqrt(sxx * syy)).clamp(-1.0, 1.0);

    let diffs: Vec<f64> = pred.iter().zip(reference).map(|(p, r)| p - r).collect();
    let bias = mean(&diffs);
    let var = diffs.iter().map(|d| (d - bias) * (d - bias)).sum::<f64>() / (n - 1) as f64;
    let std = math::sqrt(var);
    let (t_stat, p_value) = if std == 0.0 {
        if bias == 0.0 {
            (0.0, 1.0)
        } else {
            (f64::INFINITY.copysign(bias), 0.0)
        }
    } else {
        let t = bias / (std / math::sqrt(n as f64));
        (t, student_t_two_sided(t, (n - 1) as f64))
    };
    Ok(SummaryStats {
        n,
        corr,
        bias,
        std,
        t_stat,
        p_value,
        bland_altman: pred
            .iter()
            .zip(reference)
            .map(|(p, r)| (0.5 * (p + r), p - r))
            .collect(),
    })
}

/// `P(|T| >= |t|)` for Student's t with `dof` degrees of freedom.
pub fn student_t_two_sided(t: f64, dof: f64) -> f64 {
    if !t.is_finite() {
        return if t.is_nan() { f64::NAN } else { 0.0 };
    }
    let x = dof / (dof + t * t);
    reg_inc_beta(0.5 * dof, 0.5, x).clamp(0.0, 1.0)
}

/// Regularized incomplete beta `I_x(a, b)`.
pub fn reg_inc_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = math::lgamma(a + b) - math::lgamma(a) - math::lgamma(b) + a * math::ln(x) + b * math::ln(1.0 - x);
    let front = math::exp(ln_front);
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

/// Continued fraction for the incomplete beta (modified Lentz).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=10_000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}
