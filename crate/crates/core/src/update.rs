//! Model maintenance between frames: pull points toward their matches,
//! track how often each point is found, drop unreliable points and sample
//! new ones where the model is sparse.

use std::collections::HashMap;

use nalgebra::{Matrix4, Vector4};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::{wrap_angle, PixelRect, Rect, Region, Vec2};
use crate::imaging::{estimate_thresholds_in, extract_edges, GradientField, ThresholdConfig};
use crate::model::{ModelPoint, Pose, ShapeModel};
use crate::refinement::{find_normal_match, MatchParams};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UpdateConfig {
    /// Blend factor toward the match; 0 freezes the model.
    pub lambda: f64,
    /// Smoothing of the found rate.
    pub ema_alpha: f64,
    /// Points whose found rate falls below this are pruned.
    pub prune_below: f64,
    /// Points younger than this are never pruned.
    pub min_age_to_prune: u32,
    /// Minimum image distance of a new point to any other point.
    pub resample_spacing: f64,
    pub max_points: usize,
    /// Pruning never shrinks the model below this.
    pub min_points: usize,
    /// Half-length of the normal search line (pixels).
    pub normal_search_len: f64,
    /// Direction agreement required for a match.
    pub cos_tol: f64,
    /// Undo the similarity part of each blend so the model frame stays put.
    pub anchor_frame: bool,
}

impl Default for UpdateConfig {
    fn default() -> Self {
        Self {
            lambda: 0.1,
            ema_alpha: 0.2,
            prune_below: 0.25,
            min_age_to_prune: 10,
            resample_spacing: 2.0,
            max_points: 1024,
            min_points: 32,
            normal_search_len: 3.0,
            cos_tol: 0.5,
            anchor_frame: true,
        }
    }
}

/// Moves every matched point a fraction `lambda` toward its match (mapped
/// back into model space) and refreshes the found statistics. Returns the
/// per-point found flags.
///
/// `min_amplitude` is the weakest edge accepted as a match and `polarity`
/// the contrast sign of the frame relative to the model, if known.
pub fn update_points(
    model: &mut ShapeModel,
    field: &GradientField,
    pose: &Pose,
    cfg: &UpdateConfig,
    min_amplitude: f64,
    polarity: Option<f64>,
) -> Vec<bool> {
    let params = MatchParams {
        max_len: cfg.normal_search_len,
        cos_tol: cfg.cos_tol,
        min_amplitude,
        polarity,
        ..MatchParams::default()
    };
    let matches: Vec<_> = model
        .points
        .par_iter()
        .map(|pt| find_normal_match(field, pose.transform_point(pt.p), pose.transform_direction(pt.d), &params))
        .collect();
    let lambda = cfg.lambda;
    let alpha = cfg.ema_alpha.clamp(0.0, 1.0);
    for (pt, m) in model.points.iter_mut().zip(&matches) {
        let found = m.is_some();
        if let (Some(m), true) = (m, lambda > 0.0) {
            let target = pose.inverse_transform_point(m.q);
            pt.p += (target - pt.p) * lambda;
            let image_dir = m.edge_normal.rotated(-pose.theta);
            let a = pt.d.angle();
            let b = a + lambda * wrap_angle(image_dir.angle() - a);
            pt.d = Vec2::new(b.cos(), b.sin());
        }
        let flag = if found { 1.0 } else { 0.0 };
        pt.found_ema = ((1.0 - alpha) * pt.found_ema + alpha * flag).clamp(0.0, 1.0);
        pt.age = pt.age.saturating_add(1);
    }
    matches.iter().map(Option::is_some).collect()
}

/// Maps the model points by the similarity that best takes them back onto
/// `before` (their positions prior to an update) along their normals, and
/// rotates the directions with it.
///
/// Pose errors of the current frame move all points coherently along their
/// normals; without this step the model frame would absorb them and drift.
/// The fit is point-to-line because a point only ever moves along its
/// normal, so tangential offsets carry no information. Returns the applied
/// `(rotation, scale)` about the centroid, or `None` when the normals do
/// not constrain a similarity.
pub fn anchor_to(model: &mut ShapeModel, before: &[Vec2]) -> Option<(f64, f64)> {
    let n = before.len().min(model.points.len());
    if n < 4 {
        return None;
    }
    let c = model.points[..n].iter().fold(Vec2::ZERO, |s, p| s + p.p) * (1.0 / n as f64);
    let mut a = Matrix4::<f64>::zeros();
    let mut b = Vector4::<f64>::zeros();
    for (p, &old) in model.points[..n].iter().zip(before) {
        let Some(nrm) = p.d.normalized() else { continue };
        let r = p.p - c;
        let row = Vector4::new(nrm.x, nrm.y, nrm.dot(r.perp()), nrm.dot(r));
        a += row * row.transpose();
        b -= row * nrm.dot(p.p - old);
    }
    let x = a.cholesky()?.solve(&b);
    if !x.iter().all(|v| v.is_finite()) {
        return None;
    }
    let (t, angle, scale) = (Vec2::new(x[0], x[1]), x[2], 1.0 + x[3]);
    for p in &mut model.points {
        p.p = c + (p.p - c).rotated(angle) * scale + t;
        p.d = p.d.rotated(angle);
    }
    Some((angle, scale))
}

/// Drops old points that are rarely found, least reliable first, without
/// going below `min_points`. Returns the number removed.
pub fn prune_points(model: &mut ShapeModel, cfg: &UpdateConfig) -> usize {
    let budget = model.points.len().saturating_sub(cfg.min_points);
    let mut eligible: Vec<usize> = (0..model.points.len())
        .filter(|&i| {
            let p = &model.points[i];
            p.found_ema < cfg.prune_below && p.age >= cfg.min_age_to_prune
        })
        .collect();
    eligible.sort_by(|&a, &b| {
        model.points[a]
            .found_ema
            .total_cmp(&model.points[b].found_ema)
            .then(a.cmp(&b))
    });
    eligible.truncate(budget);
    if eligible.is_empty() {
        return 0;
    }
    let mut remove = vec![false; model.points.len()];
    for &i in &eligible {
        remove[i] = true;
    }
    let mut k = 0;
    model.points.retain(|_| {
        k += 1;
        !remove[k - 1]
    });
    eligible.len()
}

/// Bucket grid for "is anything within `spacing`" queries.
struct SpacingGrid {
    cell: f64,
    buckets: HashMap<(i64, i64), Vec<Vec2>>,
}

impl SpacingGrid {
    fn new(cell: f64) -> Self {
        Self {
            cell: cell.max(1e-6),
            buckets: HashMap::new(),
        }
    }

    fn key(&self, p: Vec2) -> (i64, i64) {
        ((p.x / self.cell).floor() as i64, (p.y / self.cell).floor() as i64)
    }

    fn insert(&mut self, p: Vec2) {
        let k = self.key(p);
        self.buckets.entry(k).or_default().push(p);
    }

    fn any_within(&self, p: Vec2, r: f64) -> bool {
        let (kx, ky) = self.key(p);
        let r2 = r * r;
        for dy in -1..=1 {
            for dx in -1..=1 {
                if let Some(b) = self.buckets.get(&(kx + dx, ky + dy)) {
                    if b.iter().any(|q| (*q - p).norm_sq() <= r2) {
                        return true;
                    }
                }
            }
        }
        false
    }
}

/// Image-space bounding box of the transformed model, clipped to the frame.
pub fn transformed_region(model: &ShapeModel, pose: &Pose, width: usize, height: usize) -> Option<PixelRect> {
    let r = Rect::bounding(model.points.iter().map(|p| pose.transform_point(p.p)))?;
    PixelRect::covering(&r).clip(width, height)
}

/// Adds edge points found inside the transformed model's bounding box that
/// are farther than `resample_spacing` from every model point and from each
/// other. Returns the number added.
pub fn resample_points(
    model: &mut ShapeModel,
    field: &GradientField,
    pose: &Pose,
    cfg: &UpdateConfig,
    thresholds: &ThresholdConfig,
    polarity: Option<f64>,
) -> usize {
    if model.points.len() >= cfg.max_points {
        return 0;
    }
    let Some(rect) = transformed_region(model, pose, field.width(), field.height()) else {
        return 0;
    };
    let region = Region::Rect(rect);
    let Ok(th) = estimate_thresholds_in(field, Some(&region), thresholds) else {
        return 0;
    };
    let spacing = cfg.resample_spacing;
    let mut grid = SpacingGrid::new(spacing);
    for p in &model.points {
        grid.insert(pose.transform_point(p.p));
    }
    let mut added = 0;
    for e in extract_edges(field, th, Some(&region)) {
        if model.points.len() >= cfg.max_points {
            break;
        }
        if grid.any_within(e.pos, spacing) {
            continue;
        }
        grid.insert(e.pos);
        // stored in the model's contrast sign, whatever this frame shows
        let d = e.dir.rotated(-pose.theta) * polarity.unwrap_or(1.0);
        model.points.push(ModelPoint::new(pose.inverse_transform_point(e.pos), d));
        added += 1;
    }
    added
}
