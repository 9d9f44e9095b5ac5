//! Boxes, points and binary masks in the 840×840 working frame.
//!
//! Everything here is a pure function of its inputs. Box coordinates are
//! continuous; mask pixels are addressed as `(x, y) = (column, row)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Side length of the square frame all geometry is expressed in.
pub const FRAME_SIZE: f64 = 840.0;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GeometryError {
    #[error("mask has no foreground pixels")]
    EmptyMask,
    #[error("mask dimensions differ: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    pub const fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Self { x1, y1, x2, y2 }
    }

    /// Builds a box from two arbitrary corners, ordering each axis.
    pub fn from_corners(ax: f64, ay: f64, bx: f64, by: f64) -> Self {
        Self::new(ax.min(bx), ay.min(by), ax.max(bx), ay.max(by))
    }

    pub fn width(&self) -> f64 {
        (self.x2 - self.x1).max(0.0)
    }

    pub fn height(&self) -> f64 {
        (self.y2 - self.y1).max(0.0)
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> Point {
        Point::new((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn is_valid(&self) -> bool {
        self.x1 <= self.x2
            && self.y1 <= self.y2
            && [self.x1, self.y1, self.x2, self.y2]
                .iter()
                .all(|v| (0.0..=FRAME_SIZE).contains(v))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2)).sqrt()
    }

    pub fn to_array(&self) -> [f64; 2] {
        [self.x, self.y]
    }
}

/// Intersection over union of two boxes using continuous areas.
///
/// Zero-area unions yield 1 for identical boxes and 0 otherwise.
pub fn bbox_iou(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return if a == b { 1.0 } else { 0.0 };
    }
    (inter / union).clamp(0.0, 1.0)
}

/// L1 norm of the difference of the two coordinate 4-vectors.
pub fn bbox_l1(a: &BBox, b: &BBox) -> f64 {
    a.to_array()
        .iter()
        .zip(b.to_array().iter())
        .map(|(p, q)| (p - q).abs())
        .sum()
}

pub fn point_l1(a: &Point, b: &Point) -> f64 {
    (a.x - b.x).abs() + (a.y - b.y).abs()
}

/// Closed-interval containment: boundary points count as inside.
pub fn point_in_bbox(p: &Point, b: &BBox) -> bool {
    b.x1 <= p.x && p.x <= b.x2 && b.y1 <= p.y && p.y <= b.y2
}

/// Row-major boolean grid, bit-packed.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<u64>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![0; (width * height).div_ceil(64)],
        }
    }

    /// Wraps a row-major grid. Panics if `data.len() != width * height`.
    pub fn from_vec(width: usize, height: usize, data: Vec<bool>) -> Self {
        assert_eq!(data.len(), width * height, "mask data length");
        let mut m = Self::new(width, height);
        for (i, _) in data.iter().enumerate().filter(|(_, v)| **v) {
            m.bits[i / 64] |= 1 << (i % 64);
        }
        m
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut m = Self::new(width, height);
        for y in 0..height {
            for x in 0..width {
                if f(x, y) {
                    m.set(x, y, true);
                }
            }
        }
        m
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn get_index(&self, i: usize) -> bool {
        self.bits[i / 64] >> (i % 64) & 1 == 1
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.get_index(y * self.width + x)
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        let i = y * self.width + x;
        if value {
            self.bits[i / 64] |= 1 << (i % 64);
        } else {
            self.bits[i / 64] &= !(1 << (i % 64));
        }
    }

    pub fn to_bools(&self) -> Vec<bool> {
        (0..self.len()).map(|i| self.get_index(i)).collect()
    }

    pub fn count(&self) -> usize {
        self.bits.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.iter().all(|&w| w == 0)
    }

    pub fn same_dims(&self, other: &BinaryMask) -> Result<(), GeometryError> {
        if self.width != other.width || self.height != other.height {
            return Err(GeometryError::DimensionMismatch(
                self.width,
                self.height,
                other.width,
                other.height,
            ));
        }
        Ok(())
    }

    /// Pixel counts of `self ∧ other` and `self ∨ other`.
    pub fn intersection_union(&self, other: &BinaryMask) -> Result<(u64, u64), GeometryError> {
        self.same_dims(other)?;
        let mut inter = 0u64;
        let mut union = 0u64;
        for (a, b) in self.bits.iter().zip(other.bits.iter()) {
            inter += (a & b).count_ones() as u64;
            union += (a | b).count_ones() as u64;
        }
        Ok((inter, union))
    }

    pub fn complement(&self) -> BinaryMask {
        let mut out = BinaryMask {
            width: self.width,
            height: self.height,
            bits: self.bits.iter().map(|w| !w).collect(),
        };
        let tail = self.len() % 64;
        if tail != 0 {
            if let Some(last) = out.bits.last_mut() {
                *last &= (1u64 << tail) - 1;
            }
        }
        out
    }

    /// Tight pixel-index bounds `(min_x, min_y, max_x, max_y)` of the foreground.
    pub fn bounds(&self) -> Option<(usize, usize, usize, usize)> {
        let mut b: Option<(usize, usize, usize, usize)> = None;
        for (wi, &word) in self.bits.iter().enumerate() {
            let mut w = word;
            while w != 0 {
                let i = wi * 64 + w.trailing_zeros() as usize;
                w &= w - 1;
                let (x, y) = (i % self.width, i / self.width);
                b = Some(match b {
                    None => (x, y, x, y),
                    Some((x1, y1, x2, y2)) => (x1.min(x), y1.min(y), x2.max(x), y2.max(y)),
                });
            }
        }
        b
    }

    /// Copy of the rectangle `[x0, x0 + w) × [y0, y0 + h)`.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> BinaryMask {
        BinaryMask::from_fn(w, h, |x, y| self.get(x0 + x, y0 + y))
    }
}

pub fn mask_iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64, GeometryError> {
    let (inter, union) = a.intersection_union(b)?;
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

/// Row-major grid of distances produced by [`distance_transform`].
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl DistanceMap {
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }
}

const INF: f64 = 1e20;

/// Lower envelope of parabolas: exact 1-D squared distance transform.
/// Entries at `INF` contribute no parabola; at least one entry must be finite.
fn edt_1d(f: &[f64], out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let mut k = 0usize;
    let mut started = false;
    for q in 0..f.len() {
        if f[q] >= INF {
            continue;
        }
        if !started {
            started = true;
            v[0] = q;
            z[0] = -INF;
            z[1] = INF;
            continue;
        }
        let fq = f[q] + (q * q) as f64;
        loop {
            let p = v[k];
            let s = (fq - (f[p] + (p * p) as f64)) / (2.0 * (q - p) as f64);
            if s <= z[k] {
                // z[0] is -INF so this never underflows
                k -= 1;
                continue;
            }
            k += 1;
            v[k] = q;
            z[k] = s;
            z[k + 1] = INF;
            break;
        }
    }
    k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let d = q as f64 - p as f64;
        *o = d * d + f[p];
    }
}

/// Exact Euclidean distance from each foreground pixel to the nearest pixel
/// outside the mask. Pixels beyond the image border count as background.
pub fn distance_transform(m: &BinaryMask) -> Result<DistanceMap, GeometryError> {
    if m.is_empty() {
        return Err(GeometryError::EmptyMask);
    }
    // one-pixel background frame around the image
    let pw = m.width + 2;
    let ph = m.height + 2;
    let mut grid = vec![0.0f64; pw * ph];
    for y in 0..m.height {
        for x in 0..m.width {
            if m.get(x, y) {
                grid[(y + 1) * pw + x + 1] = INF;
            }
        }
    }
    let n = pw.max(ph);
    let mut f = vec![0.0; n];
    let mut out = vec![0.0; n];
    let mut v = vec![0usize; n];
    let mut z = vec![0.0; n + 1];
    for x in 0..pw {
        for y in 0..ph {
            f[y] = grid[y * pw + x];
        }
        edt_1d(&f[..ph], &mut out[..ph], &mut v, &mut z);
        for y in 0..ph {
            grid[y * pw + x] = out[y];
        }
    }
    for y in 0..ph {
        f[..pw].copy_from_slice(&grid[y * pw..(y + 1) * pw]);
        edt_1d(&f[..pw], &mut out[..pw], &mut v, &mut z);
        grid[y * pw..(y + 1) * pw].copy_from_slice(&out[..pw]);
    }
    let mut values = Vec::with_capacity(m.width * m.height);
    for y in 0..m.height {
        for x in 0..m.width {
            values.push(grid[(y + 1) * pw + x + 1].sqrt());
        }
    }
    Ok(DistanceMap {
        width: m.width,
        height: m.height,
        values,
    })
}

/// Centers of the two largest non-overlapping inscribed circles.
///
/// The second center must lie at least the first radius away from the first
/// center; when no such foreground pixel exists both centers coincide. Ties
/// go to the first pixel in row-major order.
pub fn inscribed_circle_centers(m: &BinaryMask) -> Result<(Point, Point), GeometryError> {
    let dt = distance_transform(m)?;
    let argmax = |accept: &dyn Fn(usize, usize) -> bool| {
        let mut best: Option<(usize, usize, f64)> = None;
        for y in 0..m.height {
            for x in 0..m.width {
                let d = dt.get(x, y);
                if d <= 0.0 || !accept(x, y) {
                    continue;
                }
                if best.is_none_or(|(_, _, b)| d > b) {
                    best = Some((x, y, d));
                }
            }
        }
        best
    };
    let (x1, y1, r1) = argmax(&|_, _| true).ok_or(GeometryError::EmptyMask)?;
    let p1 = Point::new(x1 as f64, y1 as f64);
    let p2 = argmax(&|x, y| Point::new(x as f64, y as f64).distance(&p1) >= r1)
        .map(|(x, y, _)| Point::new(x as f64, y as f64))
        .unwrap_or(p1);
    Ok((p1, p2))
}
