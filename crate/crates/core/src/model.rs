//! Point/direction shape model and the similarity-transform pose algebra.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, Rect, Region, Vec2};
use crate::imaging::{estimate_thresholds_in, extract_edges, GradientField, ThresholdConfig, Thresholds};

/// Similarity transform `p -> sigma * R(theta) * p + (x, y)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub sigma: f64,
}

impl Default for Pose {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl Pose {
    pub const IDENTITY: Pose = Pose {
        x: 0.0,
        y: 0.0,
        theta: 0.0,
        sigma: 1.0,
    };

    pub fn new(x: f64, y: f64, theta: f64, sigma: f64) -> Self {
        Self {
            x,
            y,
            theta: wrap_angle(theta),
            sigma,
        }
    }

    /// Unrotated, unscaled pose placing the model origin at `p`.
    pub fn at(p: Vec2) -> Self {
        Self::new(p.x, p.y, 0.0, 1.0)
    }

    pub fn translation(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }

    pub fn transform_point(&self, p: Vec2) -> Vec2 {
        transform_point(p, self)
    }

    pub fn transform_direction(&self, d: Vec2) -> Vec2 {
        transform_direction(d, self)
    }

    /// Maps an image point back into model coordinates.
    pub fn inverse_transform_point(&self, q: Vec2) -> Vec2 {
        (q - self.translation()).rotated(-self.theta) * (1.0 / self.sigma)
    }

    /// `self ∘ inner`: apply `inner` first, then `self`.
    pub fn compose(&self, inner: &Pose) -> Pose {
        let t = inner.translation().rotated(self.theta) * self.sigma + self.translation();
        Pose::new(t.x, t.y, self.theta + inner.theta, self.sigma * inner.sigma)
    }

    pub fn inverse(&self) -> Pose {
        let t = -self.translation().rotated(-self.theta) * (1.0 / self.sigma);
        Pose::new(t.x, t.y, -self.theta, 1.0 / self.sigma)
    }
}

/// `sigma * R(theta) * p + t`.
pub fn transform_point(p: Vec2, pose: &Pose) -> Vec2 {
    let (s, c) = pose.theta.sin_cos();
    let (a, b) = (pose.sigma * c, pose.sigma * s);
    Vec2::new(a * p.x - b * p.y + pose.x, b * p.x + a * p.y + pose.y)
}

/// Inverse-transpose of the linear part: `(1/sigma) * R(theta) * d`.
pub fn transform_direction(d: Vec2, pose: &Pose) -> Vec2 {
    d.rotated(pose.theta) * (1.0 / pose.sigma)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelPoint {
    /// Position relative to the reference point.
    pub p: Vec2,
    /// Unit edge normal.
    pub d: Vec2,
    /// Exponentially weighted rate at which the point was re-found.
    pub found_ema: f64,
    /// Frames since the point was created.
    pub age: u32,
}

impl ModelPoint {
    pub fn new(p: Vec2, d: Vec2) -> Self {
        Self {
            p,
            d,
            found_ema: 1.0,
            age: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeModel {
    pub points: Vec<ModelPoint>,
    /// Model origin in first-frame image coordinates.
    pub ref_point: Vec2,
    /// Diagonal of the bounding box of the initial point set.
    pub diag: f64,
    /// Region the model was generated from.
    pub roi: Region,
    /// Thresholds used at creation.
    pub thresholds: Thresholds,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub min_points: usize,
    pub thresholds: ThresholdConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            min_points: 32,
            thresholds: ThresholdConfig::default(),
        }
    }
}

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelDocument {
    version: u32,
    #[serde(flatten)]
    model: ShapeModel,
}

impl ShapeModel {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Largest distance of a model point from the reference point.
    pub fn max_radius(&self) -> f64 {
        self.points.iter().map(|p| p.p.norm()).fold(0.0, f64::max)
    }

    /// Bounding box of the points in model coordinates.
    pub fn bounding_box(&self) -> Option<Rect> {
        Rect::bounding(self.points.iter().map(|p| p.p))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ModelDocument {
            version: MODEL_FORMAT_VERSION,
            model: self.clone(),
        })?)
    }

    pub fn from_json(text: &str) -> Result<ShapeModel> {
        let doc: ModelDocument = serde_json::from_str(text)?;
        if doc.version != MODEL_FORMAT_VERSION {
            return Err(Error::Config(format!(
                "unsupported model format version {} (expected {MODEL_FORMAT_VERSION})",
                doc.version
            )));
        }
        let mut model = doc.model;
        for pt in &mut model.points {
            if (pt.d.norm() - 1.0).abs() > 1e-12 {
                pt.d = pt
                    .d
                    .normalized()
                    .ok_or_else(|| Error::Config("model point with zero direction".into()))?;
            }
            pt.found_ema = pt.found_ema.clamp(0.0, 1.0);
        }
        if model.points.is_empty() || !(model.diag > 0.0) {
            return Err(Error::Config("model has no points".into()));
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<ShapeModel> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }
}

/// Extracts subpixel edge points inside `roi` and expresses them relative
/// to the center of the ROI bounding box.
pub fn build_model(field: &GradientField, roi: &Region, cfg: &ModelConfig) -> Result<ShapeModel> {
    let bounds = roi
        .bounds()
        .filter(|b| b.clip(field.width(), field.height()).is_some())
        .ok_or(Error::EmptyRegion)?;
    let thresholds = estimate_thresholds_in(field, Some(roi), &cfg.thresholds)?;
    let ref_point = bounds.center();
    let (w, h) = (field.width() as f64, field.height() as f64);
    let points: Vec<ModelPoint> = extract_edges(field, thresholds, Some(roi))
        .into_iter()
        .filter(|e| e.pos.x >= 0.0 && e.pos.y >= 0.0 && e.pos.x <= w - 1.0 && e.pos.y <= h - 1.0)
        .map(|e| ModelPoint::new(e.pos - ref_point, e.dir))
        .collect();
    let required = cfg.min_points.max(1);
    if points.len() < required {
        return Err(Error::TooFewPoints {
            found: points.len(),
            required,
        });
    }
    let diag = Rect::bounding(points.iter().map(|p| p.p)).map_or(0.0, |r| r.diagonal());
    if !(diag > 0.0) {
        return Err(Error::TooFewPoints {
            found: points.len(),
            required,
        });
    }
    Ok(ShapeModel {
        points,
        ref_point,
        diag,
        roi: roi.clone(),
        thresholds,
    })
}

/// Uniform random `k`-subset of `0..n` (sorted), deterministic in `seed`.
pub fn subsample_points(n: usize, k: usize, seed: u64) -> Vec<usize> {
    if k >= n {
        return (0..n).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, n, k).into_vec();
    idx.sort_unstable();
    idx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::PixelRect;
    use crate::imaging::{sobel_gradients, GrayImage};
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn close(a: Vec2, b: Vec2, tol: f64) -> bool {
        (a - b).norm() <= tol
    }

    #[test]
    fn transform_examples() {
        let p = transform_point(Vec2::new(1.0, 0.0), &Pose::new(0.0, 0.0, PI / 2.0, 2.0));
        assert!(close(p, Vec2::new(0.0, 2.0), 1e-15));
        assert_eq!(transform_point(Vec2::new(3.0, 4.0), &Pose::IDENTITY), Vec2::new(3.0, 4.0));
        assert_eq!(
            transform_point(Vec2::new(3.0, 4.0), &Pose::new(10.0, -2.0, 0.0, 1.0)),
            Vec2::new(13.0, 2.0)
        );
        assert_eq!(
            transform_direction(Vec2::new(1.0, 0.0), &Pose::new(0.0, 0.0, 0.0, 2.0)),
            Vec2::new(0.5, 0.0)
        );
        let d = transform_direction(Vec2::new(0.0, 1.0), &Pose::new(0.0, 0.0, PI / 2.0, 1.0));
        assert!(close(d, Vec2::new(-1.0, 0.0), 1e-15));
    }

    fn square_scene() -> GrayImage {
        GrayImage::from_fn(60, 50, |x, y| if (15..45).contains(&x) && (12..38).contains(&y) { 255.0 } else { 0.0 })
    }

    #[test]
    fn square_model_on_perimeter() {
        let img = square_scene();
        let field = sobel_gradients(&img).unwrap();
        let roi = Region::Rect(PixelRect::new(0, 0, 60, 50));
        let m = build_model(&field, &roi, &ModelConfig::default()).unwrap();
        assert_eq!(m.ref_point, Vec2::new(29.5, 24.5));
        // edges between pixel 14|15, 44|45, 11|12, 37|38
        let (x0, x1, y0, y1) = (14.5, 44.5, 11.5, 37.5);
        for pt in &m.points {
            let q = pt.p + m.ref_point;
            let dx = (q.x - x0).abs().min((q.x - x1).abs());
            let dy = (q.y - y0).abs().min((q.y - y1).abs());
            if dx < 2.0 && dy < 2.0 {
                // corners are rounded by the 3x3 support
                continue;
            }
            assert!(dx.min(dy) <= 0.2, "point {q:?} off the perimeter");
            assert!((pt.d.norm() - 1.0).abs() < 1e-9);
            if dx <= 0.2 && dy > 1.5 {
                assert!(pt.d.y.abs() < 1e-9, "vertical side normal must be horizontal");
            }
            if dy <= 0.2 && dx > 1.5 {
                assert!(pt.d.x.abs() < 1e-9);
            }
            assert_eq!(pt.found_ema, 1.0);
        }
        assert!(m.len() > 100);
        let bb = m.bounding_box().unwrap();
        assert!((m.diag - bb.diagonal()).abs() < 1e-12);
    }

    #[test]
    fn constant_roi_rejected() {
        let field = sobel_gradients(&GrayImage::filled(40, 40, 90.0)).unwrap();
        let roi = Region::Rect(PixelRect::new(5, 5, 20, 20));
        assert!(build_model(&field, &roi, &ModelConfig::default()).is_err());
        let outside = Region::Rect(PixelRect::new(100, 100, 5, 5));
        assert!(matches!(
            build_model(&field, &outside, &ModelConfig::default()),
            Err(Error::EmptyRegion)
        ));
    }

    #[test]
    fn too_small_model_rejected() {
        let img = GrayImage::from_fn(30, 30, |x, y| if (10..14).contains(&x) && (10..14).contains(&y) { 200.0 } else { 0.0 });
        let field = sobel_gradients(&img).unwrap();
        let roi = Region::Rect(PixelRect::new(0, 0, 30, 30));
        let cfg = ModelConfig {
            min_points: 500,
            ..Default::default()
        };
        assert!(matches!(build_model(&field, &roi, &cfg), Err(Error::TooFewPoints { .. })));
    }

    #[test]
    fn build_model_translation_covariant() {
        let (dx, dy) = (7i64, -3i64);
        let base = square_scene();
        let shifted = GrayImage::from_fn(60, 50, |x, y| {
            let (sx, sy) = (x as i64 - dx, y as i64 - dy);
            if sx < 0 || sy < 0 || sx >= 60 || sy >= 50 {
                0.0
            } else {
                base.get(sx as usize, sy as usize)
            }
        });
        let roi = Region::Rect(PixelRect::new(8, 6, 44, 38));
        let a = build_model(&sobel_gradients(&base).unwrap(), &roi, &ModelConfig::default()).unwrap();
        let b = build_model(&sobel_gradients(&shifted).unwrap(), &roi.translated(dx, dy), &ModelConfig::default()).unwrap();
        assert_eq!(b.ref_point - a.ref_point, Vec2::new(dx as f64, dy as f64));
        assert_eq!(a.len(), b.len());
        for (p, q) in a.points.iter().zip(&b.points) {
            assert!(close(p.p, q.p, 1e-6));
        }
    }

    #[test]
    fn mask_roi_restricts_points() {
        let img = square_scene();
        let field = sobel_gradients(&img).unwrap();
        // left half of the frame only
        let data = (0..60 * 50).map(|i| i % 60 < 30).collect();
        let roi = Region::Mask(crate::geometry::Mask::new(60, 50, data).unwrap());
        let m = build_model(&field, &roi, &ModelConfig::default()).unwrap();
        assert!(m.points.iter().all(|p| p.p.x + m.ref_point.x < 30.0));
    }

    #[test]
    fn model_json_round_trip() {
        let field = sobel_gradients(&square_scene()).unwrap();
        let m = build_model(&field, &Region::Rect(PixelRect::new(0, 0, 60, 50)), &ModelConfig::default()).unwrap();
        let text = m.to_json().unwrap();
        assert!(text.contains("\"version\": 1"));
        assert_eq!(ShapeModel::from_json(&text).unwrap(), m);
        let bad = text.replace("\"version\": 1", "\"version\": 99");
        assert!(ShapeModel::from_json(&bad).is_err());
    }

    #[test]
    fn subsample_contract() {
        assert_eq!(subsample_points(10, 10, 3), (0..10).collect::<Vec<_>>());
        assert_eq!(subsample_points(10, 50, 3), (0..10).collect::<Vec<_>>());
        assert_eq!(subsample_points(100, 20, 7), subsample_points(100, 20, 7));
        assert_ne!(subsample_points(100, 20, 7), subsample_points(100, 20, 8));
        let s = subsample_points(100, 20, 7);
        assert_eq!(s.len(), 20);
        assert!(s.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn subsample_is_uniform() {
        // Monte Carlo: each index should be drawn with probability k / n.
        let (n, k, trials) = (40, 20, 1000);
        let mut counts = vec![0usize; n];
        for seed in 0..trials {
            for i in subsample_points(n, k, seed as u64) {
                counts[i] += 1;
            }
        }
        for c in counts {
            let f = c as f64 / trials as f64;
            assert!((f - 0.5).abs() <= 0.05, "frequency {f}");
        }
    }

    fn pose_strategy() -> impl Strategy<Value = Pose> {
        (-50.0..50.0f64, -50.0..50.0f64, -3.0..3.0f64, 0.3..3.0f64).prop_map(|(x, y, t, s)| Pose::new(x, y, t, s))
    }

    proptest! {
        #[test]
        fn composition_closure(a in pose_strategy(), b in pose_strategy(), px in -40.0..40.0f64, py in -40.0..40.0f64) {
            let p = Vec2::new(px, py);
            let two_step = b.transform_point(a.transform_point(p));
            let composed = b.compose(&a).transform_point(p);
            prop_assert!(close(two_step, composed, 1e-9 * (1.0 + two_step.norm())));
        }

        #[test]
        fn inverse_round_trip(a in pose_strategy(), px in -40.0..40.0f64, py in -40.0..40.0f64) {
            let p = Vec2::new(px, py);
            let back = a.inverse().transform_point(a.transform_point(p));
            prop_assert!(close(back, p, 1e-9 * (1.0 + p.norm())));
            prop_assert!(close(a.inverse_transform_point(a.transform_point(p)), p, 1e-9 * (1.0 + p.norm())));
        }

        #[test]
        fn direction_angle_shift(a in pose_strategy(), phi in -3.1..3.1f64) {
            let d = Vec2::new(phi.cos(), phi.sin());
            let t = transform_direction(d, &a);
            prop_assert!((t.norm() - 1.0 / a.sigma).abs() < 1e-12);
            let diff = wrap_angle(t.angle() - phi - a.theta);
            prop_assert!(diff.abs() < 1e-9);
            let n = t.normalized().unwrap();
            prop_assert!(close(n, d.rotated(a.theta), 1e-12));
        }
    }
}
