//! Rasters, integral images, polygon rasterization, the signed distance
//! transform and oriented-box crop geometry.
//!
//! Pixel `(x, y)` covers `[x, x+1) x [y, y+1)`; its centre is `(x+0.5, y+0.5)`.
//! "Inside" is always the even-odd rule evaluated at pixel centres, and a
//! centre lying exactly on the boundary is never inside.

use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::geometry::{self, crossing_x, LandmarkSet, Point};
use crate::math;
use crate::{Error, Result};

/// Row-major grayscale raster. Also used for probability maps and signed
/// distance maps.
#[derive(Debug, Clone, PartialEq)]
pub struct Image2D {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Image2D {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(Error::BadImageData {
                width,
                height,
                found: data.len(),
            });
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Thresholds at `t` (strictly greater is foreground).
    pub fn threshold(&self, t: f64) -> BinaryMask {
        BinaryMask {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| u8::from(v > t)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(Error::BadImageData {
                width,
                height,
                found: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            data: data.into_iter().map(|v| u8::from(v != 0)).collect(),
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0; width * height],
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x] != 0
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = u8::from(v);
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn to_image(&self) -> Image2D {
        Image2D {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f64::from(v)).collect(),
        }
    }
}

/// Oriented rectangle: centroid, side lengths and a rotation in degrees.
///
/// A point `l` in the box's local frame (origin at the centroid) maps to the
/// image point `c + R(theta) l` with `R` the standard rotation matrix in pixel
/// coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
    pub theta: f64,
}

impl BoundingBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64, theta: f64) -> Result<Self> {
        let b = Self {
            cx,
            cy,
            w,
            h,
            theta: math::wrap_deg(theta),
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.cx.is_finite() && self.cy.is_finite() && self.theta.is_finite()) {
            return Err(Error::InvalidBox("non-finite parameter"));
        }
        if !(self.w > 0.0 && self.w.is_finite()) {
            return Err(Error::InvalidBox("width must be positive"));
        }
        if !(self.h > 0.0 && self.h.is_finite()) {
            return Err(Error::InvalidBox("height must be positive"));
        }
        if !(self.theta > -180.0 && self.theta <= 180.0) {
            return Err(Error::InvalidBox("theta must lie in (-180, 180]"));
        }
        Ok(())
    }

    /// The box covering a whole `width x height` image with no rotation.
    pub fn full_image(width: usize, height: usize) -> Self {
        Self {
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            w: width as f64,
            h: height as f64,
            theta: 0.0,
        }
    }

    pub fn as_array(&self) -> [f64; 5] {
        [self.cx, self.cy, self.w, self.h, self.theta]
    }
}

/// Coordinate map between a box in the source image and an `out_w x out_h`
/// sub-image.
#[derive(Debug, Clone, Copy)]
pub struct BoxFrame {
    cx: f64,
    cy: f64,
    sx: f64,
    sy: f64,
    sin: f64,
    cos: f64,
    half_w: f64,
    half_h: f64,
}

impl BoxFrame {
    pub fn new(b: &BoundingBox, out_w: usize, out_h: usize) -> Self {
        let (sin, cos) = math::sin_cos_deg(b.theta);
        Self {
            cx: b.cx,
            cy: b.cy,
            sx: b.w / out_w as f64,
            sy: b.h / out_h as f64,
            sin,
            cos,
            half_w: out_w as f64 / 2.0,
            half_h: out_h as f64 / 2.0,
        }
    }

    /// Sub-image coordinates to source-image coordinates.
    #[inline]
    pub fn to_source(&self, p: Point) -> Point {
        let l = Point::new((p.x - self.half_w) * self.sx, (p.y - self.half_h) * self.sy);
        let r = geometry::rotate(l, self.sin, self.cos);
        Point::new(self.cx + r.x, self.cy + r.y)
    }

    /// Source-image coordinates to sub-image coordinates.
    #[inline]
    pub fn to_sub(&self, p: Point) -> Point {
        let r = geometry::rotate(Point::new(p.x - self.cx, p.y - self.cy), -self.sin, self.cos);
        Point::new(r.x / self.sx + self.half_w, r.y / self.sy + self.half_h)
    }
}

/// Histogram equalization over 256 bins.
///
/// `v' = (cdf(bin(v)) - cdf_min) / (N - cdf_min)`; an image whose pixels all
/// fall in one bin is returned unchanged.
pub fn histogram_equalize(img: &Image2D) -> Image2D {
    let bin = |v: f64| math::round(v.clamp(0.0, 1.0) * 255.0) as usize;
    let mut hist = [0usize; 256];
    for &v in img.data() {
        hist[bin(v)] += 1;
    }
    let mut cdf = [0usize; 256];
    let mut acc = 0;
    for (c, h) in cdf.iter_mut().zip(hist.iter()) {
        acc += h;
        *c = acc;
    }
    let n = img.data().len();
    let cdf_min = cdf[hist.iter().position(|&h| h > 0).unwrap_or(0)];
    if n == cdf_min {
        return img.clone();
    }
    let denom = (n - cdf_min) as f64;
    img.map(|v| (cdf[bin(v)] - cdf_min) as f64 / denom)
}

/// Fixed-point scale of [`IntegralImage`] sums.
const FIXED_SCALE: f64 = (1u64 << 40) as f64;

/// Summed-area table with a zero guard row and column.
///
/// Sums are kept in 2^-40 fixed point, so every box sum is exact and boxes
/// with equal contents give bit-identical means.
#[derive(Debug, Clone, PartialEq)]
pub struct IntegralImage {
    width: usize,
    height: usize,
    sums: Vec<i128>,
}

impl IntegralImage {
    pub fn new(img: &Image2D) -> Self {
        let (w, h) = img.dims();
        let stride = w + 1;
        let mut sums = vec![0i128; stride * (h + 1)];
        for y in 0..h {
            let mut row = 0i128;
            for x in 0..w {
                row += math::round(img.get(x, y) * FIXED_SCALE) as i128;
                sums[(y + 1) * stride + x + 1] = sums[y * stride + x + 1] + row;
            }
        }
        Self {
            width: w,
            height: h,
            sums,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    /// `out(x, y) = sum_{i <= x, j <= y} img(i, j)`.
    pub fn to_image(&self) -> Image2D {
        let stride = self.width + 1;
        Image2D::from_fn(self.width, self.height, |x, y| {
            self.sums[(y + 1) * stride + x + 1] as f64 / FIXED_SCALE
        })
    }

    #[inline]
    fn rect_fixed(&self, x0: usize, y0: usize, x1: usize, y1: usize) -> i128 {
        let s = self.width + 1;
        self.sums[y1 * s + x1] - self.sums[y0 * s + x1] - self.sums[y1 * s + x0] + self.sums[y0 * s + x0]
    }

    /// Sum over the half-open rectangle `[x0, x1) x [y0, y1)` (already in bounds).
    #[inline]
    pub fn rect_sum(&self, x0: usize, y0: usize, x1: usize, y1: usize) -> f64 {
        self.rect_fixed(x0, y0, x1, y1) as f64 / FIXED_SCALE
    }

    /// Mean over `[x0, x0+w) x [y0, y0+h)` clipped to the image. A box that
    /// misses the image entirely has mean 0.
    #[inline]
    pub fn box_mean(&self, x0: i64, y0: i64, w: i64, h: i64) -> f64 {
        let cx0 = x0.clamp(0, self.width as i64) as usize;
        let cy0 = y0.clamp(0, self.height as i64) as usize;
        let cx1 = (x0 + w).clamp(0, self.width as i64) as usize;
        let cy1 = (y0 + h).clamp(0, self.height as i64) as usize;
        if cx1 <= cx0 || cy1 <= cy0 {
            return 0.0;
        }
        let area = ((cx1 - cx0) * (cy1 - cy0)) as f64;
        self.rect_fixed(cx0, cy0, cx1, cy1) as f64 / (FIXED_SCALE * area)
    }
}

pub fn integral_image(img: &Image2D) -> IntegralImage {
    IntegralImage::new(img)
}

/// Even-odd parity of every pixel centre, row by row.
fn parity_fill(poly: &[Point], width: usize, height: usize) -> Vec<u8> {
    let mut data = vec![0u8; width * height];
    let mut xs: Vec<f64> = Vec::with_capacity(poly.len());
    let n = poly.len();
    for r in 0..height {
        let y = r as f64 + 0.5;
        xs.clear();
        for i in 0..n {
            if let Some(xc) = crossing_x(poly[i], poly[(i + 1) % n], y) {
                xs.push(xc);
            }
        }
        xs.sort_unstable_by(|a, b| a.total_cmp(b));
        let row = &mut data[r * width..(r + 1) * width];
        for span in xs.chunks_exact(2) {
            let (x0, x1) = (span[0], span[1]);
            if !(x1 > 0.5) || x0 > width as f64 {
                continue;
            }
            let mut j = (math::ceil(x0 - 0.5) as i64 - 1).max(0) as usize;
            while j < width {
                let c = j as f64 + 0.5;
                if c >= x1 {
                    break;
                }
                if c >= x0 {
                    row[j] ^= 1;
                }
                j += 1;
            }
        }
    }
    data
}

/// Calls `f(x, y)` for every pixel whose centre could lie exactly on the
/// segment `a-b`.
fn boundary_candidates(a: Point, b: Point, width: usize, height: usize, mut f: impl FnMut(usize, usize)) {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let along_x = dx.abs() >= dy.abs();
    let (lo, hi, lim, other_lim) = if along_x {
        (a.x.min(b.x), a.x.max(b.x), width, height)
    } else {
        (a.y.min(b.y), a.y.max(b.y), height, width)
    };
    if !(hi >= 0.0) || !(lo <= lim as f64) {
        return;
    }
    let start = (math::floor(lo - 0.5) as i64 - 1).max(0);
    let end = (math::ceil(hi - 0.5) as i64 + 1).min(lim as i64 - 1);
    let mut i = start;
    while i <= end {
        let c = i as f64 + 0.5;
        let m = if along_x {
            if dx == 0.0 {
                a.y
            } else {
                a.y + (c - a.x) * dy / dx
            }
        } else if dy == 0.0 {
            a.x
        } else {
            a.x + (c - a.y) * dx / dy
        };
        if m.is_finite() {
            let k = math::round(m - 0.5) as i64;
            for o in (k - 1).max(0)..=(k + 1).min(other_lim as i64 - 1) {
                if along_x {
                    f(i as usize, o as usize);
                } else {
                    f(o as usize, i as usize);
                }
            }
        }
        i += 1;
    }
}

/// Binary mask of the closed polygon through `shape`.
pub fn rasterize_mask(shape: &LandmarkSet, width: usize, height: usize) -> Result<BinaryMask> {
    let poly = shape.points();
    if poly.len() < 3 {
        return Err(Error::DegenerateShape(poly.len()));
    }
    let mut data = parity_fill(poly, width, height);
    for (a, b) in shape.edges() {
        boundary_candidates(a, b, width, height, |x, y| {
            let p = Point::new(x as f64 + 0.5, y as f64 + 0.5);
            if geometry::segment_distance(p, a, b) == 0.0 {
                data[y * width + x] = 0;
            }
        });
    }
    Ok(BinaryMask { width, height, data })
}

/// Signed distance (pixels) from every pixel centre to the closed polygon,
/// positive inside.
pub fn signed_distance_map(shape: &LandmarkSet, width: usize, height: usize) -> Result<Image2D> {
    let poly = shape.points();
    if poly.len() < 3 {
        return Err(Error::DegenerateShape(poly.len()));
    }
    let parity = parity_fill(poly, width, height);
    let mut data = Vec::with_capacity(width * height);
    for y in 0..height {
        for x in 0..width {
            let p = Point::new(x as f64 + 0.5, y as f64 + 0.5);
            let d = geometry::boundary_distance(poly, p);
            data.push(if d == 0.0 {
                0.0
            } else if parity[y * width + x] != 0 {
                d
            } else {
                -d
            });
        }
    }
    Ok(Image2D { width, height, data })
}

/// Bilinear sample at continuous coordinates, clamping to the edge pixels.
pub fn sample_bilinear(img: &Image2D, p: Point) -> f64 {
    let fx = (p.x - 0.5).clamp(0.0, (img.width - 1) as f64);
    let fy = (p.y - 0.5).clamp(0.0, (img.height - 1) as f64);
    let x0 = math::floor(fx) as usize;
    let y0 = math::floor(fy) as usize;
    let x1 = (x0 + 1).min(img.width - 1);
    let y1 = (y0 + 1).min(img.height - 1);
    let tx = fx - x0 as f64;
    let ty = fy - y0 as f64;
    let top = img.get(x0, y0) * (1.0 - tx) + img.get(x1, y0) * tx;
    let bottom = img.get(x0, y1) * (1.0 - tx) + img.get(x1, y1) * tx;
    top * (1.0 - ty) + bottom * ty
}

/// Resamples the oriented box `b` of `img` into an `out_w x out_h` raster.
pub fn crop_resample(img: &Image2D, b: &BoundingBox, out_w: usize, out_h: usize) -> Image2D {
    let frame = BoxFrame::new(b, out_w, out_h);
    Image2D::from_fn(out_w, out_h, |u, v| {
        let src = frame.to_source(Point::new(u as f64 + 0.5, v as f64 + 0.5));
        sample_bilinear(img, src)
    })
}

/// Maps a contour from sub-image coordinates back to source coordinates.
pub fn map_contour_back(shape: &LandmarkSet, b: &BoundingBox, sub_w: usize, sub_h: usize) -> LandmarkSet {
    let frame = BoxFrame::new(b, sub_w, sub_h);
    shape.map(|p| frame.to_source(p))
}

/// Maps a contour from source coordinates into the sub-image of `b`.
pub fn map_contour_into(shape: &LandmarkSet, b: &BoundingBox, sub_w: usize, sub_h: usize) -> LandmarkSet {
    let frame = BoxFrame::new(b, sub_w, sub_h);
    shape.map(|p| frame.to_sub(p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn pts(v: &[(f64, f64)]) -> LandmarkSet {
        LandmarkSet::new(v.iter().map(|&(x, y)| Point::new(x, y)).collect()).unwrap()
    }

    #[test]
    fn equalize_constant_is_identity() {
        let img = Image2D::filled(5, 4, 0.5);
        assert_eq!(histogram_equalize(&img), img);
    }

    #[test]
    fn equalize_two_pixels() {
        let img = Image2D::new(2, 1, vec![0.0, 0.2]).unwrap();
        assert_eq!(histogram_equalize(&img).data(), &[0.0, 1.0]);
    }

    #[test]
    fn equalize_full_ramp_is_near_identity() {
        let img = Image2D::from_fn(16, 16, |x, y| (y * 16 + x) as f64 / 255.0);
        let out = histogram_equalize(&img);
        for (a, b) in img.data().iter().zip(out.data()) {
            assert!((a - b).abs() < 1.0 / 255.0);
        }
    }

    #[test]
    fn integral_of_ones() {
        let ii = IntegralImage::new(&Image2D::filled(4, 4, 1.0));
        assert_eq!(ii.box_mean(1, 1, 2, 2), 1.0);
        assert_eq!(ii.to_image().get(3, 3), 16.0);
        let one = IntegralImage::new(&Image2D::filled(1, 1, 0.3));
        assert!((one.box_mean(0, 0, 1, 1) - 0.3).abs() < 1e-12);
    }

    #[test]
    fn box_outside_has_zero_mean() {
        let ii = IntegralImage::new(&Image2D::filled(4, 4, 1.0));
        assert_eq!(ii.box_mean(10, 10, 3, 3), 0.0);
        assert_eq!(ii.box_mean(-2, -2, 3, 3), 1.0);
    }

    #[test]
    fn rasterize_square_sets_interior_block() {
        let sq = pts(&[(1.0, 1.0), (5.0, 1.0), (5.0, 5.0), (1.0, 5.0)]);
        let m = rasterize_mask(&sq, 8, 8).unwrap();
        assert_eq!(m.count(), 16);
        for y in 0..8 {
            for x in 0..8 {
                assert_eq!(m.get(x, y), (1..5).contains(&x) && (1..5).contains(&y));
            }
        }
    }

    #[test]
    fn rasterize_outside_raster_is_empty() {
        let tri = pts(&[(-10.0, -10.0), (-5.0, -10.0), (-7.0, -4.0)]);
        assert_eq!(rasterize_mask(&tri, 8, 8).unwrap().count(), 0);
    }

    #[test]
    fn rasterize_rejects_two_points() {
        // LandmarkSet cannot be built from two points at all.
        assert!(LandmarkSet::new(vec![Point::new(0.0, 0.0), Point::new(1.0, 1.0)]).is_err());
    }

    #[test]
    fn boundary_pixels_are_outside() {
        // Edges pass through pixel centres along x = 2.5 and y = 1.5.
        let sq = pts(&[(2.5, 1.5), (6.5, 1.5), (6.5, 5.5), (2.5, 5.5)]);
        let m = rasterize_mask(&sq, 8, 8).unwrap();
        let d = signed_distance_map(&sq, 8, 8).unwrap();
        assert_eq!(d.get(2, 3), 0.0);
        assert_eq!(d.get(4, 1), 0.0);
        assert!(!m.get(2, 3));
        assert!(m.get(3, 3));
        for y in 0..8 {
            for x in 0..8 {
                assert_eq!(m.get(x, y), d.get(x, y) > 0.0);
            }
        }
    }

    #[test]
    fn sdf_square_centre() {
        // Square of half-width 2 centred on the centre of pixel (4, 4).
        let sq = pts(&[(2.5, 2.5), (6.5, 2.5), (6.5, 6.5), (2.5, 6.5)]);
        let d = signed_distance_map(&sq, 9, 9).unwrap();
        assert_eq!(d.get(4, 4), 2.0);
    }

    #[test]
    fn crop_identity() {
        let img = Image2D::from_fn(7, 5, |x, y| (x * 3 + y * 11 % 7) as f64 / 40.0);
        let out = crop_resample(&img, &BoundingBox::full_image(7, 5), 7, 5);
        assert_eq!(out, img);
    }

    #[test]
    fn crop_downscale_constant() {
        let img = Image2D::filled(8, 6, 0.25);
        let out = crop_resample(&img, &BoundingBox::full_image(8, 6), 4, 3);
        assert!(out.data().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn crop_rotation_90_permutes_pixels() {
        let img = Image2D::from_fn(4, 4, |x, y| (y * 4 + x) as f64 / 16.0);
        let b = BoundingBox::new(2.0, 2.0, 4.0, 4.0, 90.0).unwrap();
        let out = crop_resample(&img, &b, 4, 4);
        for v in 0..4 {
            for u in 0..4 {
                assert_eq!(out.get(u, v), img.get(3 - v, u));
            }
        }
    }

    #[test]
    fn map_back_translation() {
        let shape = pts(&[(1.0, 2.0), (3.0, 2.0), (2.0, 5.0)]);
        let b = BoundingBox::new(20.0, 30.0, 10.0, 8.0, 0.0).unwrap();
        let out = map_contour_back(&shape, &b, 10, 8);
        for (p, q) in shape.points().iter().zip(out.points()) {
            assert_eq!(q.x, p.x + 15.0);
            assert_eq!(q.y, p.y + 26.0);
        }
        let id = map_contour_back(&shape, &BoundingBox::full_image(10, 8), 10, 8);
        assert_eq!(id, shape);
    }

    #[test]
    fn box_validation() {
        assert!(BoundingBox::new(0.0, 0.0, 0.0, 1.0, 0.0).is_err());
        assert!(BoundingBox::new(0.0, 0.0, 1.0, -1.0, 0.0).is_err());
        assert_eq!(BoundingBox::new(0.0, 0.0, 1.0, 1.0, 270.0).unwrap().theta, -90.0);
        assert_eq!(BoundingBox::new(0.0, 0.0, 1.0, 1.0, -180.0).unwrap().theta, 180.0);
    }
}
