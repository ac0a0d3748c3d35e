//! Point distribution model: `x = mean + P b`, built by PCA over
//! pose-normalized training shapes.

use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::LandmarkSet;
use crate::math;
use crate::{Error, Result};

/// Shape-space coefficients `b`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ShapeParams(pub Vec<f64>);

impl ShapeParams {
    pub fn zeros(k: usize) -> Self {
        Self(vec![0.0; k])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeModel {
    /// Landmark count `M`.
    pub m: usize,
    /// Retained mode count `K`.
    pub k: usize,
    /// Bound multiplier: `|b_i| <= s sqrt(lambda_i)`.
    pub s: f64,
    /// Variance fraction the model was asked to explain.
    pub p_var: f64,
    /// Mean shape, length `2M`.
    pub mean: Vec<f64>,
    /// Modes, column-major `2M x K` (column `i` is `modes[i*2M..(i+1)*2M]`).
    pub modes: Vec<f64>,
    /// Eigenvalues in pixels squared, descending.
    pub eigenvalues: Vec<f64>,
    /// Total variance of the training set (sum of all eigenvalues).
    pub total_variance: f64,
}

/// Parameters for [`build_model`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShapeModelConfig {
    pub p_var: f64,
    pub k_cap: usize,
    pub s: f64,
}

impl Default for ShapeModelConfig {
    fn default() -> Self {
        Self {
            p_var: 0.99,
            k_cap: 16,
            s: 2.0,
        }
    }
}

impl ShapeModel {
    pub fn dim(&self) -> usize {
        2 * self.m
    }

    pub fn mode(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.modes[i * d..(i + 1) * d]
    }

    /// Per-coefficient bound `s sqrt(lambda_i)`.
    pub fn bounds(&self) -> Vec<f64> {
        self.eigenvalues.iter().map(|&l| self.s * math::sqrt(l)).collect()
    }

    pub fn mean_shape(&self) -> LandmarkSet {
        LandmarkSet::from_vector(&self.mean).expect("model mean has >= 3 landmarks")
    }

    pub fn is_plausible(&self, b: &ShapeParams) -> bool {
        b.len() == self.k && b.0.iter().zip(self.bounds()).all(|(v, lim)| v.abs() <= lim)
    }

    /// `mean + P b` as a flat vector.
    pub fn generate_vector(&self, b: &ShapeParams) -> Result<Vec<f64>> {
        if b.len() != self.k {
            return Err(Error::DimensionMismatch {
                expected: self.k,
                found: b.len(),
            });
        }
        let mut x = self.mean.clone();
        for (i, &bi) in b.0.iter().enumerate() {
            if bi != 0.0 {
                for (xj, pj) in x.iter_mut().zip(self.mode(i)) {
                    *xj += bi * pj;
                }
            }
        }
        Ok(x)
    }
}

/// Builds the model from pose-normalized training shapes.
///
/// The covariance uses divisor `N - 1`. `K` is the smaller of `k_cap` and the
/// fewest leading modes explaining at least `p_var` of the total variance.
pub fn build_model(shapes: &[LandmarkSet], cfg: &ShapeModelConfig) -> Result<ShapeModel> {
    if shapes.len() < 2 {
        return Err(Error::EmptyTrainingSet);
    }
    if !(cfg.p_var > 0.0 && cfg.p_var <= 1.0) || !(cfg.s > 0.0) {
        return Err(Error::InvalidConfig("p_var must be in (0, 1] and s positive"));
    }
    let m = shapes[0].len();
    for (index, s) in shapes.iter().enumerate() {
        if s.len() != m {
            return Err(Error::InconsistentLandmarkCount {
                index,
                expected: m,
                found: s.len(),
            });
        }
    }
    let n = shapes.len();
    let d = 2 * m;
    let data: Vec<Vec<f64>> = shapes.iter().map(|s| s.to_vector()).collect();
    let mut mean = vec![0.0; d];
    for row in &data {
        for (mj, xj) in mean.iter_mut().zip(row) {
            *mj += xj;
        }
    }
    for mj in &mut mean {
        *mj /= n as f64;
    }
    let centered: Vec<Vec<f64>> = data
        .iter()
        .map(|row| row.iter().zip(&mean).map(|(x, m)| x - m).collect())
        .collect();
    let denom = (n - 1) as f64;

    // Eigenpairs of the covariance, via the smaller of the d x d covariance
    // and the n x n Gram matrix.
    let (vals, vecs) = if n < d {
        let mut gram = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let v: f64 = centered[i].iter().zip(&centered[j]).map(|(a, b)| a * b).sum::<f64>() / denom;
                gram[i * n + j] = v;
                gram[j * n + i] = v;
            }
        }
        let (vals, u) = symmetric_eigen(&gram, n);
        let mut vecs = Vec::with_capacity(n);
        for (c, &lam) in vals.iter().enumerate() {
            let mut v = vec![0.0; d];
            for (i, row) in centered.iter().enumerate() {
                let ui = u[i * n + c];
                for (vj, xj) in v.iter_mut().zip(row) {
                    *vj += ui * xj;
                }
            }
            let norm = math::sqrt(v.iter().map(|a| a * a).sum());
            if lam > 0.0 && norm > 0.0 {
                for vj in &mut v {
                    *vj /= norm;
                }
            }
            vecs.push(v);
        }
        (vals, vecs)
    } else {
        let mut cov = vec![0.0; d * d];
        for row in &centered {
            for i in 0..d {
                let ri = row[i];
                for j in i..d {
                    cov[i * d + j] += ri * row[j];
                }
            }
        }
        for i in 0..d {
            for j in i..d {
                cov[i * d + j] /= denom;
                cov[j * d + i] = cov[i * d + j];
            }
        }
        let (vals, v) = symmetric_eigen(&cov, d);
        let vecs = (0..d).map(|c| (0..d).map(|r| v[r * d + c]).collect()).collect();
        (vals, vecs)
    };

    let total: f64 = vals.iter().map(|v| v.max(0.0)).sum();
    let tiny = total * 1e-12;
    let mut k = 0;
    if total > 0.0 {
        let mut acc = 0.0;
        for &lam in &vals {
            if lam <= tiny {
                break;
            }
            acc += lam;
            k += 1;
            if acc >= cfg.p_var * total - tiny {
                break;
            }
        }
    }
    let k = k.min(cfg.k_cap).min(n - 1).min(d);
    let mut modes = Vec::with_capacity(k * d);
    for v in vecs.iter().take(k) {
        // Sign convention: the largest-magnitude component is positive.
        let mut imax = 0;
        for (j, x) in v.iter().enumerate() {
            if x.abs() > v[imax].abs() {
                imax = j;
            }
        }
        let sign = if v[imax] < 0.0 { -1.0 } else { 1.0 };
        modes.extend(v.iter().map(|x| x * sign));
    }
    Ok(ShapeModel {
        m,
        k,
        s: cfg.s,
        p_var: cfg.p_var,
        mean,
        modes,
        eigenvalues: vals.iter().take(k).map(|v| v.max(0.0)).collect(),
        total_variance: total,
    })
}

/// Cyclic Jacobi eigendecomposition of a symmetric row-major `n x n` matrix.
/// Returns eigenvalues sorted descending and the matching eigenvectors as the
/// columns of a row-major `n x n` matrix.
pub fn symmetric_eigen(matrix: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut a = matrix.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let scale: f64 = a.iter().map(|x| x * x).sum::<f64>();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j] * a[i * n + j])
            .sum();
        if off <= scale * 1e-30 || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = {
                    let sgn = if theta >= 0.0 { 1.0 } else { -1.0 };
                    sgn / (theta.abs() + math::sqrt(theta * theta + 1.0))
                };
                let c = 1.0 / math::sqrt(t * t + 1.0);
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j * n + j].total_cmp(&a[i * n + i]));
    let vals = order.iter().map(|&i| a[i * n + i]).collect();
    let mut vecs = vec![0.0; n * n];
    for (c, &src) in order.iter().enumerate() {
        for r in 0..n {
            vecs[r * n + c] = v[r * n + src];
        }
    }
    (vals, vecs)
}

/// `mean + P b` as landmarks. No clamping.
pub fn generate_shape(model: &ShapeModel, params: &ShapeParams) -> Result<LandmarkSet> {
    LandmarkSet::from_vector(&model.generate_vector(params)?)
}

/// Projection `b = P^T (x - mean)` and the residual norm `|x - mean - P b|`.
pub fn project_shape(model: &ShapeModel, shape: &LandmarkSet) -> Result<(ShapeParams, f64)> {
    if shape.len() != model.m {
        return Err(Error::DimensionMismatch {
            expected: model.m,
            found: shape.len(),
        });
    }
    let x = shape.to_vector();
    let dx: Vec<f64> = x.iter().zip(&model.mean).map(|(a, m)| a - m).collect();
    let b: Vec<f64> = (0..model.k)
        .map(|i| model.mode(i).iter().zip(&dx).map(|(p, d)| p * d).sum())
        .collect();
    let b = ShapeParams(b);
    let rec = model.generate_vector(&b)?;
    let residual = math::sqrt(x.iter().zip(&rec).map(|(a, r)| (a - r) * (a - r)).sum());
    Ok((b, residual))
}

/// Draws each `b_i` uniformly on `[-s sqrt(lambda_i), s sqrt(lambda_i)]`.
pub fn sample_params<R: Rng + ?Sized>(model: &ShapeModel, rng: &mut R) -> ShapeParams {
    ShapeParams(
        model
            .bounds()
            .into_iter()
            .map(|lim| if lim > 0.0 { rng.random_range(-lim..=lim) } else { 0.0 })
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Point;
    use crate::rng;

    fn tri(dx: f64) -> LandmarkSet {
        LandmarkSet::new(vec![
            Point::new(0.0 + dx, 0.0),
            Point::new(4.0, 0.0 + dx * 0.5),
            Point::new(2.0, 3.0 - dx),
        ])
        .unwrap()
    }

    #[test]
    fn identical_shapes_give_zero_modes() {
        let m = build_model(&[tri(0.0), tri(0.0), tri(0.0)], &ShapeModelConfig::default()).unwrap();
        assert_eq!(m.k, 0);
        assert_eq!(m.mean, tri(0.0).to_vector());
        assert_eq!(generate_shape(&m, &ShapeParams::zeros(0)).unwrap(), tri(0.0));
    }

    #[test]
    fn two_shape_closed_form() {
        let (a, b) = (tri(0.0), tri(1.0));
        let m = build_model(&[a.clone(), b.clone()], &ShapeModelConfig::default()).unwrap();
        assert_eq!(m.k, 1);
        let diff: Vec<f64> = b.to_vector().iter().zip(a.to_vector()).map(|(x, y)| x - y).collect();
        let norm2: f64 = diff.iter().map(|v| v * v).sum();
        assert!((m.eigenvalues[0] - norm2 / 2.0).abs() < 1e-12);
        let norm = math::sqrt(norm2);
        let dot: f64 = m.mode(0).iter().zip(&diff).map(|(p, d)| p * d / norm).sum();
        assert!((dot.abs() - 1.0).abs() < 1e-12);
        // b = sqrt(lambda) e1 lies on the line through A and B, at
        // A + (1/2 + 1/sqrt(2)) (B - A) for the positive mode sign; A and B
        // themselves sit at b = -/+ sqrt(lambda / 2).
        let x = generate_shape(&m, &ShapeParams(vec![math::sqrt(m.eigenvalues[0])])).unwrap();
        let (av, xv) = (a.to_vector(), x.to_vector());
        let t = 0.5 + dot.signum() * core::f64::consts::FRAC_1_SQRT_2;
        for j in 0..xv.len() {
            assert!((xv[j] - (av[j] + t * diff[j])).abs() < 1e-12);
        }
        let half = math::sqrt(m.eigenvalues[0] / 2.0);
        let xb = generate_shape(&m, &ShapeParams(vec![half * dot.signum()])).unwrap();
        for (p, q) in xb.to_vector().iter().zip(b.to_vector()) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_training_sets() {
        assert_eq!(
            build_model(&[tri(0.0)], &ShapeModelConfig::default()),
            Err(Error::EmptyTrainingSet)
        );
        let quad = LandmarkSet::new(vec![Point::new(0.0, 0.0); 4]).unwrap();
        assert!(matches!(
            build_model(&[tri(0.0), quad], &ShapeModelConfig::default()),
            Err(Error::InconsistentLandmarkCount { index: 1, .. })
        ));
    }

    #[test]
    fn sampled_params_respect_bounds() {
        let m = build_model(&[tri(0.0), tri(1.0), tri(-0.5), tri(0.3)], &ShapeModelConfig::default()).unwrap();
        let mut r = rng::seeded(3);
        for _ in 0..1000 {
            assert!(m.is_plausible(&sample_params(&m, &mut r)));
        }
    }

    #[test]
    fn project_mean_is_zero() {
        let m = build_model(&[tri(0.0), tri(1.0), tri(-0.5)], &ShapeModelConfig::default()).unwrap();
        let (b, res) = project_shape(&m, &m.mean_shape()).unwrap();
        assert!(b.0.iter().all(|v| v.abs() < 1e-12));
        assert!(res < 1e-12);
        assert!(project_shape(&m, &LandmarkSet::new(vec![Point::default(); 5]).unwrap()).is_err());
    }
}
