//! Frame-by-frame orchestration: search, refine, gate on the score and
//! maintain the model, expanding the search while the object is lost.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{PixelRect, Region, Vec2};
use crate::imaging::{estimate_thresholds_in, sobel_gradients, sobel_gradients_in, GradientField, GrayImage, Interpolation};
use crate::localization::{grid_search, make_search_space, score_at, score_neighborhood, signed_score_at, GridIndex, ScoringModel, SearchConfig, SearchOptions, SearchSpace};
use crate::model::{build_model, subsample_points, ModelConfig, Pose, ShapeModel};
use crate::refinement::{facet_refine, find_normal_match, least_squares_pose, MatchParams, NormalMatch, ScoreNeighborhood};
use crate::update::{anchor_to, prune_points, resample_points, transformed_region, update_points, UpdateConfig};

/// Extra pixels around the gradient window for ridge climbing and the
/// subpixel edge fit.
const WINDOW_MARGIN: f64 = 8.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefineConfig {
    /// Half-length of the normal search line (pixels).
    pub normal_search_len: f64,
    /// Direction agreement required for a match.
    pub cos_tol: f64,
    /// Least-squares iterations, each with fresh matches.
    pub iterations: u32,
    /// Moves of the 3x3x3x3 neighbourhood toward a better-scoring cell.
    pub hill_climb_steps: u32,
    /// Interpolation used for the neighbourhood and the final score.
    pub interpolation: Interpolation,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            normal_search_len: 3.0,
            cos_tol: 0.5,
            iterations: 1,
            hill_climb_steps: 3,
            interpolation: Interpolation::Bilinear,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackerConfig {
    /// Minimum score for a frame to count as tracked.
    pub s_min: f64,
    /// Expansion levels stop growing here while lost. Steps grow with the
    /// level, and once half a translation step exceeds the width over which
    /// a shifted model still scores high (about one pixel for sharp edges)
    /// no grid cell can reach a high `s_min`, so further levels only cost time.
    pub max_expansion_level: u32,
    /// Number of model points used by the grid search, all when unset.
    pub subsample_k: Option<usize>,
    /// Use the best score seen so far as the search cutoff.
    pub prune_with_best: bool,
    /// Update, prune and resample the model on tracked frames.
    pub adapt_model: bool,
    pub seed: u64,
    pub search: SearchConfig,
    pub refine: RefineConfig,
    pub model: ModelConfig,
    pub update: UpdateConfig,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            s_min: 0.6,
            max_expansion_level: 2,
            subsample_k: None,
            prune_with_best: true,
            adapt_model: true,
            seed: 0,
            search: SearchConfig::default(),
            refine: RefineConfig::default(),
            model: ModelConfig::default(),
            update: UpdateConfig::default(),
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(0.0..=1.0).contains(&self.s_min) {
            return bad("s_min must lie in [0, 1]");
        }
        if !(self.search.expansion_factor > 1.0) {
            return bad("search.expansion_factor must exceed 1");
        }
        if !(self.search.theta_range >= 0.0 && self.search.sigma_range >= 0.0 && self.search.radius_factor >= 0.0) {
            return bad("search ranges must be non-negative");
        }
        for s in [self.search.step_xy, self.search.step_theta, self.search.step_sigma].into_iter().flatten() {
            if !(s > 0.0) {
                return bad("search steps must be positive");
            }
        }
        if !(0.0..=1.0).contains(&self.update.lambda) {
            return bad("update.lambda must lie in [0, 1]");
        }
        if !(self.update.ema_alpha > 0.0 && self.update.ema_alpha <= 1.0) {
            return bad("update.ema_alpha must lie in (0, 1]");
        }
        if !(0.0..1.0).contains(&self.update.prune_below) {
            return bad("update.prune_below must lie in [0, 1)");
        }
        if self.update.max_points < self.update.min_points.max(1) {
            return bad("update.max_points is below update.min_points");
        }
        if !(self.refine.normal_search_len > 0.0 && self.update.normal_search_len > 0.0) {
            return bad("normal search lengths must be positive");
        }
        if self.subsample_k == Some(0) {
            return bad("subsample_k must be at least 1");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Status {
    Tracked,
    /// Not found; `level` is the expansion level that was searched.
    Lost { level: u32 },
}

impl Status {
    pub fn is_tracked(&self) -> bool {
        matches!(self, Status::Tracked)
    }

    pub fn name(&self) -> &'static str {
        match self {
            Status::Tracked => "tracked",
            Status::Lost { .. } => "lost",
        }
    }
}

/// Wall-clock microseconds spent in each stage.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Timings {
    pub gradients: u64,
    pub search: u64,
    pub refine: u64,
    pub update: u64,
    pub total: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameResult {
    pub frame_index: usize,
    pub status: Status,
    /// Refined pose, or the last known one when lost.
    pub pose: Pose,
    pub score: f64,
    /// Model points in play for this frame.
    pub points_used: usize,
    pub timings: Timings,
}

pub struct Tracker {
    config: TrackerConfig,
    model: ShapeModel,
    pose: Pose,
    prev_pose: Option<Pose>,
    expansion_level: u32,
    frame_index: usize,
    width: usize,
    height: usize,
    first: FrameResult,
}

fn micros(t: Instant) -> u64 {
    t.elapsed().as_micros() as u64
}

impl Tracker {
    /// Builds the model from the first frame; the initial pose places the
    /// model origin at its reference point.
    pub fn init(first_frame: &GrayImage, roi: &Region, config: TrackerConfig) -> Result<Tracker> {
        config.validate()?;
        let start = Instant::now();
        let field = sobel_gradients(first_frame)?;
        let mut model = build_model(&field, roi, &config.model)?;
        let cap = config.update.max_points;
        if model.points.len() > cap {
            let keep = subsample_points(model.points.len(), cap, config.seed);
            model.points = keep.into_iter().map(|i| model.points[i]).collect();
        }
        let pose = Pose::at(model.ref_point);
        let score = score_at(&ScoringModel::from_model(&model, None, 0), &field, &pose, config.refine.interpolation);
        let total = micros(start);
        let first = FrameResult {
            frame_index: 0,
            status: Status::Tracked,
            pose,
            score,
            points_used: model.points.len(),
            timings: Timings {
                total,
                ..Default::default()
            },
        };
        Ok(Tracker {
            config,
            model,
            pose,
            prev_pose: None,
            expansion_level: 0,
            frame_index: 0,
            width: first_frame.width(),
            height: first_frame.height(),
            first,
        })
    }

    /// Resumes from a saved model on frames of the given size.
    pub fn from_model(model: ShapeModel, width: usize, height: usize, config: TrackerConfig) -> Result<Tracker> {
        config.validate()?;
        if model.is_empty() {
            return Err(Error::TooFewPoints {
                found: 0,
                required: config.model.min_points,
            });
        }
        let pose = Pose::at(model.ref_point);
        let first = FrameResult {
            frame_index: 0,
            status: Status::Tracked,
            pose,
            score: 1.0,
            points_used: model.points.len(),
            timings: Timings::default(),
        };
        Ok(Tracker {
            config,
            model,
            pose,
            prev_pose: None,
            expansion_level: 0,
            frame_index: 0,
            width,
            height,
            first,
        })
    }

    /// Result describing the initialization frame.
    pub fn initial_result(&self) -> FrameResult {
        self.first
    }

    pub fn model(&self) -> &ShapeModel {
        &self.model
    }

    pub fn pose(&self) -> Pose {
        self.pose
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.config
    }

    pub fn expansion_level(&self) -> u32 {
        self.expansion_level
    }

    /// Center of the next search: constant-velocity translation while
    /// tracking, the last known pose while lost.
    fn predicted_pose(&self) -> Pose {
        match (self.expansion_level, self.prev_pose) {
            (0, Some(prev)) => {
                let v = self.pose.translation() - prev.translation();
                Pose::new(self.pose.x + v.x, self.pose.y + v.y, self.pose.theta, self.pose.sigma)
            }
            _ => self.pose,
        }
    }

    pub fn track_frame(&mut self, frame: &GrayImage) -> Result<FrameResult> {
        if frame.width() != self.width || frame.height() != self.height {
            return Err(Error::FrameSize {
                width: self.width,
                height: self.height,
                got_width: frame.width(),
                got_height: frame.height(),
            });
        }
        let start = Instant::now();
        self.frame_index += 1;
        let cfg = self.config;
        let mut timings = Timings::default();

        let level = self.expansion_level;
        let center = self.predicted_pose();
        let r_max = self.model.max_radius();
        let space = make_search_space(
            center,
            self.model.diag,
            r_max,
            level,
            cfg.s_min,
            &cfg.search,
            Some((self.width, self.height)),
        );

        let t = Instant::now();
        let field = sobel_gradients_in(frame, self.gradient_window(&space, r_max))?;
        timings.gradients = micros(t);

        let t = Instant::now();
        let n = self.model.points.len();
        let subset = match cfg.subsample_k {
            Some(k) if level == 0 && k < n => {
                Some(subsample_points(n, k, cfg.seed.wrapping_add(self.frame_index as u64)))
            }
            _ => None,
        };
        let search_model = ScoringModel::from_model(&self.model, subset.as_deref(), cfg.seed);
        let opts = SearchOptions {
            collect_candidates: false,
            prune_with_best: cfg.prune_with_best,
            neighborhood: None,
        };
        let outcome = grid_search(&search_model, &field, &space, &opts);
        timings.search = micros(t);

        let mut result = FrameResult {
            frame_index: self.frame_index,
            status: Status::Lost { level },
            pose: self.pose,
            score: 0.0,
            points_used: search_model.len(),
            timings,
        };
        let Some(best) = outcome.best else {
            return Ok(self.finish_lost(result, start));
        };

        let t = Instant::now();
        let full = ScoringModel::from_model(&self.model, None, cfg.seed);
        let mode = cfg.refine.interpolation;
        let mut nb = score_neighborhood(&full, &field, &space, best.index, mode);
        for _ in 0..cfg.refine.hill_climb_steps {
            let k = nb.argmax();
            if k == ScoreNeighborhood::CENTER {
                break;
            }
            let next: GridIndex = nb.center_index.offset(ScoreNeighborhood::offset_of(k));
            nb = score_neighborhood(&full, &field, &space, next, mode);
        }
        let facet = facet_refine(&nb);
        let mut pose = facet.pose;
        let min_amplitude = self.match_floor(&field, &pose);
        let signed = signed_score_at(&full, &field, &pose, mode);
        let polarity = (signed != 0.0).then(|| signed.signum());
        let params = MatchParams {
            max_len: cfg.refine.normal_search_len,
            cos_tol: cfg.refine.cos_tol,
            min_amplitude,
            polarity,
            ..MatchParams::default()
        };
        let points: Vec<Vec2> = self.model.points.iter().map(|p| p.p).collect();
        for _ in 0..cfg.refine.iterations {
            let matches = self.normal_matches(&field, &pose, &params);
            match least_squares_pose(&points, &matches, &pose) {
                Ok(p) if p.sigma > 0.0 && p.x.is_finite() && p.y.is_finite() => pose = p,
                _ => break,
            }
        }
        let score = score_at(&full, &field, &pose, mode);
        result.timings.refine = micros(t);
        result.score = score;
        result.points_used = full.len();

        if score < cfg.s_min {
            return Ok(self.finish_lost(result, start));
        }

        let t = Instant::now();
        if cfg.adapt_model {
            let before: Vec<Vec2> = self.model.points.iter().map(|p| p.p).collect();
            update_points(&mut self.model, &field, &pose, &cfg.update, min_amplitude, polarity);
            if cfg.update.anchor_frame && cfg.update.lambda > 0.0 {
                anchor_to(&mut self.model, &before);
            }
            prune_points(&mut self.model, &cfg.update);
            resample_points(&mut self.model, &field, &pose, &cfg.update, &cfg.model.thresholds, polarity);
        }
        result.timings.update = micros(t);

        self.prev_pose = (level == 0).then_some(self.pose);
        self.pose = pose;
        self.expansion_level = 0;
        result.status = Status::Tracked;
        result.pose = pose;
        result.timings.total = micros(start);
        Ok(result)
    }

    /// Pixels any step of this frame can read: every search pose, the
    /// hill-climb cells past the grid border, and the normal search lines.
    fn gradient_window(&self, space: &SearchSpace, r_max: f64) -> PixelRect {
        let climb = (self.config.refine.hill_climb_steps + 1) as f64;
        let sigma = space.center.sigma + space.sigma_range + climb * space.steps.dsigma;
        let reach = space.trans_radius
            + climb * space.steps.dx.max(space.steps.dy)
            + r_max * sigma
            + self.config.refine.normal_search_len.max(self.config.update.normal_search_len)
            + WINDOW_MARGIN;
        let x0 = (space.center.x - reach).floor() as i64;
        let y0 = (space.center.y - reach).floor() as i64;
        let x1 = (space.center.x + reach).ceil() as i64 + 1;
        let y1 = (space.center.y + reach).ceil() as i64 + 1;
        PixelRect::new(x0, y0, x1 - x0, y1 - y0)
    }

    fn finish_lost(&mut self, mut result: FrameResult, start: Instant) -> FrameResult {
        result.status = Status::Lost {
            level: self.expansion_level,
        };
        result.pose = self.pose;
        self.prev_pose = None;
        self.expansion_level = (self.expansion_level + 1).min(self.config.max_expansion_level);
        result.timings.total = micros(start);
        result
    }

    /// Weakest edge accepted as a match: the low hysteresis threshold
    /// estimated in this frame around the object, so it scales with contrast.
    fn match_floor(&self, field: &GradientField, pose: &Pose) -> f64 {
        transformed_region(&self.model, pose, self.width, self.height)
            .and_then(|r| estimate_thresholds_in(field, Some(&Region::Rect(r)), &self.config.model.thresholds).ok())
            .map_or(0.0, |t| t.low)
    }

    fn normal_matches(&self, field: &GradientField, pose: &Pose, params: &MatchParams) -> Vec<NormalMatch> {
        self.model
            .points
            .par_iter()
            .enumerate()
            .filter_map(|(i, pt)| {
                find_normal_match(field, pose.transform_point(pt.p), pose.transform_direction(pt.d), params).map(|m| NormalMatch {
                    model_index: i,
                    ..m
                })
            })
            .collect()
    }
}
