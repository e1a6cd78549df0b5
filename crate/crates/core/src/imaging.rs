//! Frame ingestion, Sobel gradients, edge thinning and subpixel edge points.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{nearest_pixel, PixelRect, Region, Vec2};
use crate::ZERO_GRADIENT;

/// Single-channel image with real-valued intensities, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::EmptyImage);
        }
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

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    /// Bilinear sample; `None` outside `[0, w-1] x [0, h-1]`.
    pub fn bilinear(&self, x: f64, y: f64) -> Option<f64> {
        bilinear(&self.data, self.width, self.height, x, y)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> GrayImage {
        GrayImage {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn transposed(&self) -> GrayImage {
        GrayImage::from_fn(self.height, self.width, |x, y| self.get(y, x))
    }

    /// Quantizes to 8 bits, clamping to `[0, 255]`.
    pub fn to_luma8(&self) -> image::GrayImage {
        let raw = self
            .data
            .iter()
            .map(|v| v.round().clamp(0.0, 255.0) as u8)
            .collect();
        image::GrayImage::from_raw(self.width as u32, self.height as u32, raw)
            .expect("buffer size matches dimensions")
    }
}

fn bilinear(data: &[f64], width: usize, height: usize, x: f64, y: f64) -> Option<f64> {
    if !(x >= 0.0 && y >= 0.0 && x <= (width - 1) as f64 && y <= (height - 1) as f64) {
        return None;
    }
    let x0 = (x as usize).min(width.saturating_sub(2));
    let y0 = (y as usize).min(height.saturating_sub(2));
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let x1 = (x0 + 1).min(width - 1);
    let y1 = (y0 + 1).min(height - 1);
    let a = data[y0 * width + x0];
    let b = data[y0 * width + x1];
    let c = data[y1 * width + x0];
    let d = data[y1 * width + x1];
    Some((a * (1.0 - fx) + b * fx) * (1.0 - fy) + (c * (1.0 - fx) + d * fx) * fy)
}

/// Reads a PNG/JPEG/BMP/PNM frame. Color is reduced to luminance with
/// weights 0.299, 0.587, 0.114; gray inputs are taken verbatim.
pub fn load_frame(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let decoded = image::ImageReader::new(std::io::Cursor::new(bytes))
        .with_guessed_format()
        .map_err(|e| Error::Decode {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?
        .decode()
        .map_err(|e| Error::Decode {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
    from_dynamic(&decoded)
}

pub fn from_dynamic(img: &image::DynamicImage) -> Result<GrayImage> {
    use image::DynamicImage;
    let (w, h) = (img.width() as usize, img.height() as usize);
    if w == 0 || h == 0 {
        return Err(Error::EmptyImage);
    }
    let data: Vec<f64> = match img {
        DynamicImage::ImageLuma8(g) => g.as_raw().iter().map(|&v| v as f64).collect(),
        DynamicImage::ImageLumaA8(g) => g.pixels().map(|p| p.0[0] as f64).collect(),
        DynamicImage::ImageLuma16(g) => g.as_raw().iter().map(|&v| v as f64 / 257.0).collect(),
        DynamicImage::ImageLumaA16(g) => g.pixels().map(|p| p.0[0] as f64 / 257.0).collect(),
        other => other
            .to_rgb32f()
            .pixels()
            .map(|p| 255.0 * (0.299 * p.0[0] as f64 + 0.587 * p.0[1] as f64 + 0.114 * p.0[2] as f64))
            .collect(),
    };
    GrayImage::new(w, h, data)
}

/// Writes the frame as an 8-bit PNG (or whatever the extension selects).
pub fn save_frame(img: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    img.to_luma8().save(path).map_err(|e| Error::Encode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    Nearest,
    Bilinear,
}

/// Per-pixel Sobel gradient `(v, w)`, its amplitude, and the unit direction
/// used by the nearest-neighbour scoring kernel.
#[derive(Clone, Debug)]
pub struct GradientField {
    width: usize,
    height: usize,
    gx: Vec<f64>,
    gy: Vec<f64>,
    amplitude: Vec<f64>,
    unit: Vec<[f32; 2]>,
}

impl GradientField {
    /// Builds a field from raw components. The outer ring is forced to zero.
    pub fn from_components(width: usize, height: usize, mut gx: Vec<f64>, mut gy: Vec<f64>) -> Result<Self> {
        if gx.len() != width * height || gy.len() != width * height {
            return Err(Error::BufferSize {
                width,
                height,
                len: gx.len().min(gy.len()),
            });
        }
        for y in 0..height {
            for x in 0..width {
                if x == 0 || y == 0 || x + 1 == width || y + 1 == height {
                    gx[y * width + x] = 0.0;
                    gy[y * width + x] = 0.0;
                }
            }
        }
        let mut amplitude = Vec::with_capacity(gx.len());
        let mut unit = Vec::with_capacity(gx.len());
        for (&v, &w) in gx.iter().zip(&gy) {
            let a = (v * v + w * w).sqrt();
            amplitude.push(a);
            unit.push(if a < ZERO_GRADIENT {
                [0.0, 0.0]
            } else {
                [(v / a) as f32, (w / a) as f32]
            });
        }
        Ok(Self {
            width,
            height,
            gx,
            gy,
            amplitude,
            unit,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dir(&self, x: usize, y: usize) -> Vec2 {
        let i = y * self.width + x;
        Vec2::new(self.gx[i], self.gy[i])
    }

    pub fn amplitude(&self, x: usize, y: usize) -> f64 {
        self.amplitude[y * self.width + x]
    }

    pub fn amplitudes(&self) -> &[f64] {
        &self.amplitude
    }

    pub fn unit_dirs(&self) -> &[[f32; 2]] {
        &self.unit
    }

    /// Bilinear amplitude, 0 outside the image.
    pub fn amplitude_at(&self, p: Vec2) -> f64 {
        bilinear(&self.amplitude, self.width, self.height, p.x, p.y).unwrap_or(0.0)
    }

    /// Gradient vector at a subpixel location.
    ///
    /// `Nearest` returns the vector of the pixel `round(at)`; `Bilinear`
    /// blends the four surrounding vectors component-wise. Queries whose
    /// support leaves the image return the zero vector, which scores 0.
    pub fn sample_direction(&self, at: Vec2, mode: Interpolation) -> Vec2 {
        match mode {
            Interpolation::Nearest => {
                let (ix, iy) = (nearest_pixel(at.x), nearest_pixel(at.y));
                if ix >= 0 && iy >= 0 && ix < self.width as i64 && iy < self.height as i64 {
                    self.dir(ix as usize, iy as usize)
                } else {
                    Vec2::ZERO
                }
            }
            Interpolation::Bilinear => {
                // truncation is the floor once negatives are excluded
                if !(at.x >= 0.0 && at.y >= 0.0) {
                    return Vec2::ZERO;
                }
                let (x0u, y0u) = (at.x as usize, at.y as usize);
                if x0u >= self.width - 1 || y0u >= self.height - 1 {
                    return Vec2::ZERO;
                }
                let fx = at.x - x0u as f64;
                let fy = at.y - y0u as f64;
                let w = self.width;
                let i = y0u * w + x0u;
                let blend = |c: &[f64]| {
                    (c[i] * (1.0 - fx) + c[i + 1] * fx) * (1.0 - fy) + (c[i + w] * (1.0 - fx) + c[i + w + 1] * fx) * fy
                };
                Vec2::new(blend(&self.gx), blend(&self.gy))
            }
        }
    }

    /// Unit image direction at `at`, or `None` where the gradient vanishes.
    pub fn unit_direction(&self, at: Vec2, mode: Interpolation) -> Option<Vec2> {
        match mode {
            Interpolation::Nearest => {
                let (ix, iy) = (nearest_pixel(at.x), nearest_pixel(at.y));
                if ix >= 0 && iy >= 0 && ix < self.width as i64 && iy < self.height as i64 {
                    let u = self.unit[iy as usize * self.width + ix as usize];
                    (u != [0.0, 0.0]).then(|| Vec2::new(u[0] as f64, u[1] as f64))
                } else {
                    None
                }
            }
            Interpolation::Bilinear => self.sample_direction(at, mode).normalized(),
        }
    }
}

/// 3x3 Sobel gradients with the unnormalized `[1 2 1]` smoothing kernel.
pub fn sobel_gradients(img: &GrayImage) -> Result<GradientField> {
    sobel_gradients_in(img, PixelRect::new(0, 0, img.width as i64, img.height as i64))
}

/// Sobel gradients evaluated only inside `window`; every other pixel is
/// zero. Inside the window the field equals [`sobel_gradients`].
pub fn sobel_gradients_in(img: &GrayImage, window: PixelRect) -> Result<GradientField> {
    let (w, h) = (img.width, img.height);
    if w < 3 || h < 3 {
        return Err(Error::ImageTooSmall { width: w, height: h });
    }
    let d = &img.data;
    let mut field = GradientField {
        width: w,
        height: h,
        gx: vec![0.0; w * h],
        gy: vec![0.0; w * h],
        amplitude: vec![0.0; w * h],
        unit: vec![[0.0; 2]; w * h],
    };
    let Some(win) = window.clip(w, h) else {
        return Ok(field);
    };
    let x0 = (win.x as usize).max(1);
    let x1 = ((win.x + win.w) as usize).min(w - 1);
    let y0 = (win.y as usize).max(1);
    let y1 = ((win.y + win.h) as usize).min(h - 1);
    for y in y0..y1 {
        let up = (y - 1) * w;
        let mid = y * w;
        let dn = (y + 1) * w;
        for x in x0..x1 {
            let v = (d[up + x + 1] + 2.0 * d[mid + x + 1] + d[dn + x + 1]) - (d[up + x - 1] + 2.0 * d[mid + x - 1] + d[dn + x - 1]);
            let wv = (d[dn + x - 1] + 2.0 * d[dn + x] + d[dn + x + 1]) - (d[up + x - 1] + 2.0 * d[up + x] + d[up + x + 1]);
            let a = (v * v + wv * wv).sqrt();
            let i = mid + x;
            field.gx[i] = v;
            field.gy[i] = wv;
            field.amplitude[i] = a;
            if a >= ZERO_GRADIENT {
                field.unit[i] = [(v / a) as f32, (wv / a) as f32];
            }
        }
    }
    Ok(field)
}

/// Hysteresis thresholds on edge amplitude.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub low: f64,
    pub high: f64,
}

/// Percentile rule for automatic thresholds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ThresholdConfig {
    /// Quantile of the nonzero amplitudes used as the high threshold.
    pub percentile: f64,
    /// `low = low_ratio * high`.
    pub low_ratio: f64,
    /// Fixed thresholds; disables estimation when set.
    pub fixed: Option<Thresholds>,
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        Self {
            percentile: 0.7,
            low_ratio: 0.4,
            fixed: None,
        }
    }
}

/// Estimates thresholds over the whole field with the default rule.
pub fn estimate_thresholds(field: &GradientField) -> Result<Thresholds> {
    estimate_thresholds_in(field, None, &ThresholdConfig::default())
}

/// Nearest-rank percentile of the nonzero amplitudes inside `region`.
pub fn estimate_thresholds_in(field: &GradientField, region: Option<&Region>, cfg: &ThresholdConfig) -> Result<Thresholds> {
    if let Some(t) = cfg.fixed {
        return Ok(t);
    }
    let mut amps: Vec<f64> = Vec::new();
    for_each_pixel(field, region, |x, y| {
        let a = field.amplitude(x, y);
        if a >= ZERO_GRADIENT {
            amps.push(a);
        }
    });
    if amps.is_empty() {
        return Err(Error::Featureless);
    }
    let rank = ((cfg.percentile * amps.len() as f64).ceil() as usize).clamp(1, amps.len()) - 1;
    let (_, high, _) = amps.select_nth_unstable_by(rank, f64::total_cmp);
    let high = *high;
    Ok(Thresholds {
        low: cfg.low_ratio * high,
        high,
    })
}

fn for_each_pixel(field: &GradientField, region: Option<&Region>, mut f: impl FnMut(usize, usize)) {
    let full = PixelRect::new(0, 0, field.width as i64, field.height as i64);
    let bounds = match region {
        None => Some(full),
        Some(r) => r.bounds().and_then(|b| b.clip(field.width, field.height)),
    };
    let Some(b) = bounds else { return };
    for y in b.y..b.y + b.h {
        for x in b.x..b.x + b.w {
            if region.is_none_or(|r| r.contains(x, y)) {
                f(x as usize, y as usize);
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Pixel {
    pub y: usize,
    pub x: usize,
}

impl Pixel {
    pub fn new(x: usize, y: usize) -> Self {
        Self { x, y }
    }
}

const TAN_22_5: f64 = 0.414_213_562_373_095_1;

/// Neighbour offset along the gradient, quantized to 8 directions and
/// canonicalized so that both edge polarities pick the same axis sign.
fn quantized_step(v: f64, w: f64) -> (i64, i64) {
    let (v, w) = if v < 0.0 || (v == 0.0 && w < 0.0) { (-v, -w) } else { (v, w) };
    if w.abs() <= TAN_22_5 * v {
        (1, 0)
    } else if v <= TAN_22_5 * w.abs() {
        (0, 1)
    } else if w > 0.0 {
        (1, 1)
    } else {
        (1, -1)
    }
}

/// Walks from `(x, y)` uphill along the quantized gradient direction until
/// reaching a pixel that is an amplitude maximum across the edge.
pub fn climb_to_ridge(field: &GradientField, x: i64, y: i64, max_steps: usize) -> Option<Pixel> {
    let (w, h) = (field.width as i64, field.height as i64);
    let amp = |x: i64, y: i64| -> f64 {
        if x < 0 || y < 0 || x >= w || y >= h {
            0.0
        } else {
            field.amplitude[y as usize * field.width + x as usize]
        }
    };
    let (mut x, mut y) = (x, y);
    for _ in 0..=max_steps {
        if x < 1 || y < 1 || x >= w - 1 || y >= h - 1 {
            return None;
        }
        let i = y as usize * field.width + x as usize;
        let a = field.amplitude[i];
        if a < ZERO_GRADIENT {
            return None;
        }
        let (dx, dy) = quantized_step(field.gx[i], field.gy[i]);
        let fwd = amp(x + dx, y + dy);
        let back = amp(x - dx, y - dy);
        if a > back && a >= fwd {
            return Some(Pixel::new(x as usize, y as usize));
        }
        if fwd >= back {
            x += dx;
            y += dy;
        } else {
            x -= dx;
            y -= dy;
        }
    }
    None
}

/// Thins the amplitude ridge and applies hysteresis over the whole field.
pub fn nonmax_suppress(field: &GradientField, thresholds: Thresholds) -> Vec<Pixel> {
    nonmax_suppress_in(field, thresholds, None)
}

/// Pixels that are amplitude maxima along their quantized gradient
/// direction and survive hysteresis (`>= high`, or `>= low` with an
/// 8-connected path of survivors to a `>= high` pixel). Raster order.
pub fn nonmax_suppress_in(field: &GradientField, thresholds: Thresholds, region: Option<&Region>) -> Vec<Pixel> {
    let (w, h) = (field.width, field.height);
    let amp = &field.amplitude;
    let at = |x: i64, y: i64| -> f64 {
        if x < 0 || y < 0 || x >= w as i64 || y >= h as i64 {
            0.0
        } else {
            amp[y as usize * w + x as usize]
        }
    };
    // 0 = suppressed, 1 = weak survivor, 2 = strong (or connected) survivor
    let mut state = vec![0u8; w * h];
    let mut stack = Vec::new();
    for_each_pixel(field, region, |x, y| {
        let i = y * w + x;
        let a = amp[i];
        if a < ZERO_GRADIENT || a < thresholds.low {
            return;
        }
        let (dx, dy) = quantized_step(field.gx[i], field.gy[i]);
        let (xi, yi) = (x as i64, y as i64);
        let fwd = at(xi + dx, yi + dy);
        let back = at(xi - dx, yi - dy);
        if a > back && a >= fwd {
            if a >= thresholds.high {
                state[i] = 2;
                stack.push(i);
            } else {
                state[i] = 1;
            }
        }
    });
    while let Some(i) = stack.pop() {
        let (x, y) = ((i % w) as i64, (i / w) as i64);
        for ny in y - 1..=y + 1 {
            for nx in x - 1..=x + 1 {
                if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if state[j] == 1 {
                    state[j] = 2;
                    stack.push(j);
                }
            }
        }
    }
    state
        .iter()
        .enumerate()
        .filter(|(_, &s)| s == 2)
        .map(|(i, _)| Pixel::new(i % w, i / w))
        .collect()
}

/// Subpixel edge location with its unit gradient direction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EdgePoint {
    pub pos: Vec2,
    pub dir: Vec2,
    pub amplitude: f64,
    /// False when the amplitude profile was not concave and the pixel
    /// position was kept.
    pub confident: bool,
}

/// Vertex offset of the parabola through `(-1, a_minus)`, `(0, a0)`,
/// `(1, a_plus)`, clamped to `[-0.5, 0.5]`; `None` if not concave.
pub fn parabola_peak(a_minus: f64, a0: f64, a_plus: f64) -> Option<f64> {
    let curvature = a_minus - 2.0 * a0 + a_plus;
    if curvature >= 0.0 {
        return None;
    }
    Some(((a_minus - a_plus) / (2.0 * curvature)).clamp(-0.5, 0.5))
}

/// Moves an edge pixel to the peak of the amplitude profile along its
/// gradient direction.
pub fn refine_edge_subpixel(field: &GradientField, px: Pixel) -> EdgePoint {
    let g = field.dir(px.x, px.y);
    let center = Vec2::new(px.x as f64, px.y as f64);
    let a0 = field.amplitude(px.x, px.y);
    let Some(dir) = g.normalized() else {
        return EdgePoint {
            pos: center,
            dir: Vec2::new(1.0, 0.0),
            amplitude: a0,
            confident: false,
        };
    };
    let a_minus = field.amplitude_at(center - dir);
    let a_plus = field.amplitude_at(center + dir);
    match parabola_peak(a_minus, a0, a_plus) {
        Some(off) => {
            let curvature = a_minus - 2.0 * a0 + a_plus;
            let slope = 0.5 * (a_plus - a_minus);
            EdgePoint {
                pos: center + dir * off,
                dir,
                amplitude: a0 + slope * off + 0.5 * curvature * off * off,
                confident: true,
            }
        }
        None => EdgePoint {
            pos: center,
            dir,
            amplitude: a0,
            confident: false,
        },
    }
}

/// Threshold, thin and refine: the full edge-point extraction chain.
pub fn extract_edges(field: &GradientField, thresholds: Thresholds, region: Option<&Region>) -> Vec<EdgePoint> {
    nonmax_suppress_in(field, thresholds, region)
        .into_iter()
        .map(|px| refine_edge_subpixel(field, px))
        .collect()
}
