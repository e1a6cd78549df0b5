//! Small 2D geometry vocabulary shared by all stages.

use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `floor(v)` as an integer without going through libm, which keeps the
/// scoring loops free of function calls. Saturates like `as`.
#[inline]
pub fn floor_i64(v: f64) -> i64 {
    let t = v as i64;
    t - i64::from((t as f64) > v)
}

/// Index of the pixel whose center is nearest to `v`, halves rounding up.
#[inline]
pub fn nearest_pixel(v: f64) -> i64 {
    floor_i64(v + 0.5)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dot(self, other: Vec2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn norm(self) -> f64 {
        (self.x * self.x + self.y * self.y).sqrt()
    }

    pub fn norm_sq(self) -> f64 {
        self.x * self.x + self.y * self.y
    }

    /// Unit vector in the same direction, or `None` for a (near) zero vector.
    pub fn normalized(self) -> Option<Vec2> {
        let n = self.norm();
        (n >= crate::ZERO_GRADIENT).then(|| Vec2::new(self.x / n, self.y / n))
    }

    /// Counter-clockwise quarter turn, `(-y, x)`.
    pub fn perp(self) -> Vec2 {
        Vec2::new(-self.y, self.x)
    }

    pub fn rotated(self, theta: f64) -> Vec2 {
        let (s, c) = theta.sin_cos();
        Vec2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    pub fn angle(self) -> f64 {
        self.y.atan2(self.x)
    }

    pub fn distance(self, other: Vec2) -> f64 {
        (self - other).norm()
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl AddAssign for Vec2 {
    fn add_assign(&mut self, rhs: Vec2) {
        self.x += rhs.x;
        self.y += rhs.y;
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, rhs: f64) -> Vec2 {
        Vec2::new(self.x * rhs, self.y * rhs)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// Axis-aligned rectangle in continuous image coordinates.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl Rect {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    /// Smallest rectangle containing every point; `None` for an empty iterator.
    pub fn bounding<I: IntoIterator<Item = Vec2>>(points: I) -> Option<Rect> {
        let mut it = points.into_iter();
        let first = it.next()?;
        let (mut x0, mut y0, mut x1, mut y1) = (first.x, first.y, first.x, first.y);
        for p in it {
            x0 = x0.min(p.x);
            y0 = y0.min(p.y);
            x1 = x1.max(p.x);
            y1 = y1.max(p.y);
        }
        Some(Rect::new(x0, y0, x1 - x0, y1 - y0))
    }

    pub fn area(&self) -> f64 {
        self.w.max(0.0) * self.h.max(0.0)
    }

    pub fn center(&self) -> Vec2 {
        Vec2::new(self.x + 0.5 * self.w, self.y + 0.5 * self.h)
    }

    pub fn diagonal(&self) -> f64 {
        self.w.hypot(self.h)
    }

    pub fn contains(&self, p: Vec2) -> bool {
        p.x >= self.x && p.y >= self.y && p.x <= self.x + self.w && p.y <= self.y + self.h
    }
}

/// Inclusive-exclusive integer pixel rectangle `[x, x+w) x [y, y+h)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelRect {
    pub x: i64,
    pub y: i64,
    pub w: i64,
    pub h: i64,
}

impl PixelRect {
    pub fn new(x: i64, y: i64, w: i64, h: i64) -> Self {
        Self { x, y, w, h }
    }

    pub fn contains(&self, x: i64, y: i64) -> bool {
        x >= self.x && y >= self.y && x < self.x + self.w && y < self.y + self.h
    }

    /// Intersection with an image of the given size, `None` when empty.
    pub fn clip(&self, width: usize, height: usize) -> Option<PixelRect> {
        let x0 = self.x.max(0);
        let y0 = self.y.max(0);
        let x1 = (self.x + self.w).min(width as i64);
        let y1 = (self.y + self.h).min(height as i64);
        (x1 > x0 && y1 > y0).then(|| PixelRect::new(x0, y0, x1 - x0, y1 - y0))
    }

    /// Smallest pixel rectangle covering a continuous rectangle.
    pub fn covering(r: &Rect) -> PixelRect {
        let x0 = r.x.floor() as i64;
        let y0 = r.y.floor() as i64;
        let x1 = (r.x + r.w).ceil() as i64;
        let y1 = (r.y + r.h).ceil() as i64;
        PixelRect::new(x0, y0, x1 - x0 + 1, y1 - y0 + 1)
    }

    /// Center of the pixel bounding box, pixel centers at integer coordinates.
    pub fn center(&self) -> Vec2 {
        Vec2::new(
            self.x as f64 + (self.w - 1) as f64 / 2.0,
            self.y as f64 + (self.h - 1) as f64 / 2.0,
        )
    }

    /// Parses `"x,y,w,h"`.
    pub fn parse(s: &str) -> Result<PixelRect> {
        let fields: Vec<&str> = s.split(',').map(str::trim).collect();
        if fields.len() != 4 {
            return Err(Error::Config(format!("expected x,y,w,h, got {s:?}")));
        }
        let mut v = [0i64; 4];
        for (slot, f) in v.iter_mut().zip(&fields) {
            *slot = f
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("bad rectangle component {f:?}")))?
                .round() as i64;
        }
        if v[2] <= 0 || v[3] <= 0 {
            return Err(Error::Config(format!("rectangle {s:?} has no area")));
        }
        Ok(PixelRect::new(v[0], v[1], v[2], v[3]))
    }
}

/// Binary pixel mask of an arbitrarily shaped region.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::BufferSize {
                width,
                height,
                len: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn get(&self, x: i64, y: i64) -> bool {
        x >= 0
            && y >= 0
            && (x as usize) < self.width
            && (y as usize) < self.height
            && self.data[y as usize * self.width + x as usize]
    }

    pub fn bounds(&self) -> Option<PixelRect> {
        let mut b: Option<(i64, i64, i64, i64)> = None;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.data[y * self.width + x] {
                    let (x, y) = (x as i64, y as i64);
                    b = Some(match b {
                        None => (x, y, x, y),
                        Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
                    });
                }
            }
        }
        b.map(|(x0, y0, x1, y1)| PixelRect::new(x0, y0, x1 - x0 + 1, y1 - y0 + 1))
    }
}

/// A region of interest: a rectangle or an arbitrary mask.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Region {
    Rect(PixelRect),
    Mask(Mask),
}

impl Region {
    pub fn contains(&self, x: i64, y: i64) -> bool {
        match self {
            Region::Rect(r) => r.contains(x, y),
            Region::Mask(m) => m.get(x, y),
        }
    }

    pub fn bounds(&self) -> Option<PixelRect> {
        match self {
            Region::Rect(r) => Some(*r),
            Region::Mask(m) => m.bounds(),
        }
    }

    pub fn translated(&self, dx: i64, dy: i64) -> Region {
        match self {
            Region::Rect(r) => Region::Rect(PixelRect::new(r.x + dx, r.y + dy, r.w, r.h)),
            Region::Mask(m) => {
                let mut data = vec![false; m.width * m.height];
                for y in 0..m.height as i64 {
                    for x in 0..m.width as i64 {
                        if m.get(x - dx, y - dy) {
                            data[y as usize * m.width + x as usize] = true;
                        }
                    }
                }
                Region::Mask(Mask {
                    width: m.width,
                    height: m.height,
                    data,
                })
            }
        }
    }
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(theta: f64) -> f64 {
    use std::f64::consts::PI;
    let mut t = theta % (2.0 * PI);
    if t <= -PI {
        t += 2.0 * PI;
    } else if t > PI {
        t -= 2.0 * PI;
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn wrap_angle_range() {
        assert_eq!(wrap_angle(PI), PI);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-15);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
        assert!((wrap_angle(0.25 + 4.0 * PI) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn pixel_rect_parse_and_center() {
        let r = PixelRect::parse("10, 20,5,4").unwrap();
        assert_eq!(r, PixelRect::new(10, 20, 5, 4));
        assert_eq!(r.center(), Vec2::new(12.0, 21.5));
        assert!(PixelRect::parse("1,2,3").is_err());
        assert!(PixelRect::parse("1,2,0,3").is_err());
    }

    #[test]
    fn mask_bounds() {
        let mut data = vec![false; 25];
        data[6] = true;
        data[18] = true;
        let m = Mask::new(5, 5, data).unwrap();
        assert_eq!(m.bounds(), Some(PixelRect::new(1, 1, 3, 3)));
    }

    #[test]
    fn rotation_and_perp() {
        let v = Vec2::new(1.0, 0.0).rotated(PI / 2.0);
        assert!((v.x).abs() < 1e-15 && (v.y - 1.0).abs() < 1e-15);
        assert_eq!(Vec2::new(1.0, 2.0).perp(), Vec2::new(-2.0, 1.0));
    }
}
