//! Similarity scoring of a transformed model against an image and the
//! cutoff-accelerated search over the discretized pose space.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::{nearest_pixel, Vec2};
use crate::imaging::{GradientField, Interpolation};
use crate::model::{Pose, ShapeModel};
use crate::refinement::ScoreNeighborhood;

/// Slack on the cutoff bound; keeps rounding in the partial sums from
/// rejecting a pose whose exact score reaches the threshold.
const CUTOFF_SLACK: f64 = 1e-9;

/// Largest magnitude of a single term. Unit directions are stored in f32,
/// so a dot product can exceed 1 by a few ulps; the cutoff bound must not.
const TERM_BOUND: f64 = 1.0 + 1e-6;

/// Cells scored up front to seed best-so-far pruning.
const WARMUP_CELLS: usize = 9;

/// Model points and unit directions in the order they are scored.
#[derive(Clone, Debug, Default)]
pub struct ScoringModel {
    points: Vec<Vec2>,
    dirs: Vec<Vec2>,
}

impl ScoringModel {
    /// Points in the given order; directions are normalized, zero ones dropped.
    pub fn from_parts(points: &[Vec2], dirs: &[Vec2]) -> Self {
        let mut sm = ScoringModel::default();
        for (&p, &d) in points.iter().zip(dirs) {
            if let Some(u) = d.normalized() {
                sm.points.push(p);
                sm.dirs.push(u);
            }
        }
        sm
    }

    /// All (or a subset of) model points in a seeded random evaluation order.
    pub fn from_model(model: &ShapeModel, subset: Option<&[usize]>, order_seed: u64) -> Self {
        let mut idx: Vec<usize> = match subset {
            Some(s) => s.to_vec(),
            None => (0..model.points.len()).collect(),
        };
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(order_seed));
        let pts: Vec<Vec2> = idx.iter().map(|&i| model.points[i].p).collect();
        let dirs: Vec<Vec2> = idx.iter().map(|&i| model.points[i].d).collect();
        Self::from_parts(&pts, &dirs)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec2] {
        &self.points
    }

    pub fn dirs(&self) -> &[Vec2] {
        &self.dirs
    }
}

/// Normalized absolute sum of direction dot products at `pose`.
///
/// Terms whose image gradient vanishes or falls outside the frame add 0.
pub fn score_at(model: &ScoringModel, field: &GradientField, pose: &Pose, mode: Interpolation) -> f64 {
    signed_score_at(model, field, pose, mode).abs()
}

/// [`score_at`] before taking the absolute value. Its sign tells whether
/// the frame shows the model with the same or inverted contrast.
pub fn signed_score_at(model: &ScoringModel, field: &GradientField, pose: &Pose, mode: Interpolation) -> f64 {
    if model.is_empty() {
        return 0.0;
    }
    let mut sum = 0.0;
    for (&p, &d) in model.points.iter().zip(&model.dirs) {
        let q = pose.transform_point(p);
        if let Some(e) = field.unit_direction(q, mode) {
            sum += d.rotated(pose.theta).dot(e);
        }
    }
    sum / model.len() as f64
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CutoffScore {
    /// Every term was evaluated; equals [`score_at`] in nearest mode.
    Score { score: f64, terms: usize },
    /// The running bound fell below `s_min` after `terms` points.
    Rejected { terms: usize },
}

/// Nearest-mode score that stops as soon as `(|S_j| + n - j) / n < s_min`.
pub fn score_at_with_cutoff(model: &ScoringModel, field: &GradientField, pose: &Pose, s_min: f64) -> CutoffScore {
    let n = model.len();
    if n == 0 {
        return CutoffScore::Score { score: 0.0, terms: 0 };
    }
    let limit = s_min * n as f64 - CUTOFF_SLACK;
    let mut sum = 0.0;
    for (j, (&p, &d)) in model.points.iter().zip(&model.dirs).enumerate() {
        let q = pose.transform_point(p);
        if let Some(e) = field.unit_direction(q, Interpolation::Nearest) {
            sum += d.rotated(pose.theta).dot(e);
        }
        if sum.abs() + ((n - j - 1) as f64) * TERM_BOUND < limit {
            return CutoffScore::Rejected { terms: j + 1 };
        }
    }
    CutoffScore::Score {
        score: (sum / n as f64).abs(),
        terms: n,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Steps {
    pub dx: f64,
    pub dy: f64,
    pub dtheta: f64,
    pub dsigma: f64,
}

/// Integer grid coordinates relative to the search-space center.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridIndex {
    pub x: i32,
    pub y: i32,
    pub theta: i32,
    pub sigma: i32,
}

impl GridIndex {
    pub fn new(x: i32, y: i32, theta: i32, sigma: i32) -> Self {
        Self { x, y, theta, sigma }
    }

    pub fn offset(self, d: [i32; 4]) -> GridIndex {
        GridIndex::new(self.x + d[0], self.y + d[1], self.theta + d[2], self.sigma + d[3])
    }

    fn dist_sq(self) -> i64 {
        let s = |v: i32| (v as i64) * (v as i64);
        s(self.x) + s(self.y) + s(self.theta) + s(self.sigma)
    }

    fn lex(self) -> (i32, i32, i32, i32) {
        (self.theta, self.sigma, self.y, self.x)
    }
}

/// Discretized box over `(x, y, theta, sigma)` with a circular translation
/// region, plus the minimum acceptable score.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub center: Pose,
    pub trans_radius: f64,
    pub theta_range: f64,
    pub sigma_range: f64,
    pub steps: Steps,
    pub s_min: f64,
    /// Frame size; grid translations outside the frame are skipped.
    pub bounds: Option<(usize, usize)>,
}

impl SearchSpace {
    pub fn pose_at(&self, idx: GridIndex) -> Pose {
        Pose::new(
            self.center.x + idx.x as f64 * self.steps.dx,
            self.center.y + idx.y as f64 * self.steps.dy,
            self.center.theta + idx.theta as f64 * self.steps.dtheta,
            self.center.sigma + idx.sigma as f64 * self.steps.dsigma,
        )
    }

    fn half_count(range: f64, step: f64) -> i32 {
        (range / step + 1e-9).floor().max(0.0) as i32
    }

    pub fn theta_half_count(&self) -> i32 {
        Self::half_count(self.theta_range, self.steps.dtheta)
    }

    pub fn sigma_half_count(&self) -> i32 {
        Self::half_count(self.sigma_range, self.steps.dsigma)
    }

    /// Translation offsets inside the circle (and the frame), nearest first.
    pub fn translations(&self) -> Vec<(i32, i32)> {
        let kx = Self::half_count(self.trans_radius, self.steps.dx);
        let ky = Self::half_count(self.trans_radius, self.steps.dy);
        let r2 = self.trans_radius * self.trans_radius + 1e-9;
        let mut out = Vec::new();
        for j in -ky..=ky {
            for i in -kx..=kx {
                let (ox, oy) = (i as f64 * self.steps.dx, j as f64 * self.steps.dy);
                if ox * ox + oy * oy > r2 {
                    continue;
                }
                if let Some((w, h)) = self.bounds {
                    let (x, y) = (self.center.x + ox, self.center.y + oy);
                    if x < 0.0 || y < 0.0 || x > (w - 1) as f64 || y > (h - 1) as f64 {
                        continue;
                    }
                }
                out.push((i, j));
            }
        }
        out.sort_by_key(|&(i, j)| ((i as i64).pow(2) + (j as i64).pow(2), j, i));
        out
    }

    /// Rotation/scale grid cells, nearest to the center first. Cells with a
    /// non-positive scale are dropped.
    pub fn orientations(&self) -> Vec<(i32, i32)> {
        let kt = self.theta_half_count();
        let ks = self.sigma_half_count();
        let mut out = Vec::new();
        for t in -kt..=kt {
            for s in -ks..=ks {
                if self.center.sigma + s as f64 * self.steps.dsigma > 0.0 {
                    out.push((t, s));
                }
            }
        }
        out.sort_by_key(|&(t, s)| ((t as i64).pow(2) + (s as i64).pow(2), t, s));
        out
    }

    pub fn cell_count(&self) -> usize {
        self.translations().len() * self.orientations().len()
    }
}

/// Search-space parameters at expansion level 0 and their growth rule.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    /// Translation radius as a fraction of the object diagonal.
    pub radius_factor: f64,
    /// Half-width of the rotation range (radians).
    pub theta_range: f64,
    /// Half-width of the scale range.
    pub sigma_range: f64,
    /// Growth of radius, ranges and steps per expansion level.
    pub expansion_factor: f64,
    /// Level-0 translation step; 1 px when unset.
    pub step_xy: Option<f64>,
    /// Level-0 rotation step; `asin(1 / r_max)` when unset.
    pub step_theta: Option<f64>,
    /// Level-0 scale step; `1 / r_max` when unset.
    pub step_sigma: Option<f64>,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            radius_factor: 0.5,
            theta_range: 0.1,
            sigma_range: 0.2,
            expansion_factor: 1.5,
            step_xy: None,
            step_theta: None,
            step_sigma: None,
        }
    }
}

/// Search space around `center` for a model of diagonal `diag` and
/// farthest point radius `r_max` (both in model units).
///
/// Each expansion level multiplies the radius, both ranges and all steps by
/// `expansion_factor`. The radius is capped at the frame diagonal, rotation
/// at pi, and the scale range stays below the current scale.
pub fn make_search_space(
    center: Pose,
    diag: f64,
    r_max: f64,
    level: u32,
    s_min: f64,
    cfg: &SearchConfig,
    frame: Option<(usize, usize)>,
) -> SearchSpace {
    let grow = cfg.expansion_factor.powi(level as i32);
    let r_img = (r_max * center.sigma).max(1.0);
    let base = Steps {
        dx: cfg.step_xy.unwrap_or(1.0),
        dy: cfg.step_xy.unwrap_or(1.0),
        dtheta: cfg.step_theta.unwrap_or_else(|| (1.0 / r_img).min(1.0).asin()),
        dsigma: cfg.step_sigma.unwrap_or_else(|| 1.0 / r_max.max(1.0)),
    };
    let mut trans_radius = cfg.radius_factor * diag * center.sigma * grow;
    if let Some((w, h)) = frame {
        trans_radius = trans_radius.min((w as f64).hypot(h as f64));
    }
    SearchSpace {
        center,
        trans_radius,
        theta_range: (cfg.theta_range * grow).min(std::f64::consts::PI),
        sigma_range: (cfg.sigma_range * grow).min(0.9 * center.sigma),
        steps: Steps {
            dx: base.dx * grow,
            dy: base.dy * grow,
            dtheta: base.dtheta * grow,
            dsigma: base.dsigma * grow,
        },
        s_min: s_min.clamp(0.0, 1.0),
        bounds: frame,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Candidate {
    pub pose: Pose,
    pub score: f64,
    pub index: GridIndex,
}

impl Candidate {
    /// Total order: higher score, then closer to the center, then
    /// lexicographic `(theta, sigma, y, x)`. `Less` means "better".
    pub fn rank(&self, other: &Candidate) -> std::cmp::Ordering {
        other
            .score
            .total_cmp(&self.score)
            .then(self.index.dist_sq().cmp(&other.index.dist_sq()))
            .then(self.index.lex().cmp(&other.index.lex()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchOptions {
    /// Also return every grid cell scoring at least `s_min`. Disables
    /// best-so-far pruning so the set is complete.
    pub collect_candidates: bool,
    /// Raise the cutoff threshold to the best score seen so far. Never
    /// changes the argmax, only skips cells that cannot win.
    pub prune_with_best: bool,
    /// Interpolation for the 3x3x3x3 neighbourhood, `None` to skip it.
    pub neighborhood: Option<Interpolation>,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self {
            collect_candidates: false,
            prune_with_best: true,
            neighborhood: Some(Interpolation::Bilinear),
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct SearchOutcome {
    pub best: Option<Candidate>,
    /// Cells scoring at least `s_min`, best first (only when collected).
    pub candidates: Vec<Candidate>,
    pub neighborhood: Option<ScoreNeighborhood>,
    /// Number of point terms evaluated across all cells.
    pub evaluated_terms: u64,
    pub cells: u64,
}

struct SliceResult {
    best: Option<Candidate>,
    candidates: Vec<Candidate>,
    terms: u64,
}

/// Exhaustive search over every grid cell with per-cell early termination
/// (nearest-neighbour direction lookups). Deterministic regardless of the
/// number of worker threads.
pub fn grid_search(model: &ScoringModel, field: &GradientField, space: &SearchSpace, opts: &SearchOptions) -> SearchOutcome {
    let translations = space.translations();
    let orientations = space.orientations();
    let cells = (translations.len() * orientations.len()) as u64;
    if model.is_empty() || cells == 0 {
        return SearchOutcome {
            cells,
            ..Default::default()
        };
    }
    let prune = opts.prune_with_best && !opts.collect_candidates;
    let shared_best = AtomicU64::new(space.s_min.to_bits());
    let mut warmup_terms = 0u64;
    if prune {
        // seed the cutoff with the cells closest to the predicted pose
        let kernel = SliceKernel::new(model, field, space, orientations[0].0, orientations[0].1);
        for &(i, j) in translations.iter().take(WARMUP_CELLS) {
            let threshold = f64::from_bits(shared_best.load(Ordering::Relaxed));
            let (score, terms) = kernel.score(i, j, threshold);
            warmup_terms += terms as u64;
            if let Some(score) = score {
                shared_best.fetch_max(score.to_bits(), Ordering::Relaxed);
            }
        }
    }
    // row-major order keeps consecutive lookups of each point in cache
    let mut translations = translations;
    translations.sort_by_key(|&(i, j)| (j, i));
    // runs of consecutive cells within one row: (j, first i, last i)
    let mut runs: Vec<(i32, i32, i32)> = Vec::new();
    for &(i, j) in &translations {
        match runs.last_mut() {
            Some(r) if r.0 == j && r.2 + 1 == i => r.2 = i,
            _ => runs.push((j, i, i)),
        }
    }

    let results: Vec<SliceResult> = orientations
        .par_iter()
        .map(|&(kt, ks)| {
            let kernel = SliceKernel::new(model, field, space, kt, ks);
            let mut res = SliceResult {
                best: None,
                candidates: Vec::new(),
                terms: 0,
            };
            let mut visit = |i: i32, j: i32, scored: (Option<f64>, usize)| {
                let (score, terms) = scored;
                res.terms += terms as u64;
                let Some(score) = score else { return };
                if score < space.s_min {
                    return;
                }
                let index = GridIndex::new(i, j, kt, ks);
                let cand = Candidate {
                    pose: space.pose_at(index),
                    score,
                    index,
                };
                if opts.collect_candidates {
                    res.candidates.push(cand);
                }
                if res.best.is_none_or(|b| cand.rank(&b).is_lt()) {
                    res.best = Some(cand);
                    if prune {
                        shared_best.fetch_max(score.to_bits(), Ordering::Relaxed);
                    }
                }
            };
            let mut rows = Vec::new();
            let threshold = || {
                if prune {
                    f64::from_bits(shared_best.load(Ordering::Relaxed))
                } else {
                    space.s_min
                }
            };
            for &(j, i0, i1) in &runs {
                match kernel.row_base(i0, i1, j) {
                    Some(mut base) => {
                        for i in i0..=i1 {
                            visit(i, j, kernel.score_linear(base, threshold()));
                            base += 1;
                        }
                    }
                    None if kernel.pix.is_none() => {
                        kernel.fill_rows(j, &mut rows);
                        for i in i0..=i1 {
                            visit(i, j, kernel.score_in_rows(i, &rows, threshold()));
                        }
                    }
                    None => {
                        for i in i0..=i1 {
                            visit(i, j, kernel.score(i, j, threshold()));
                        }
                    }
                }
            }
            res
        })
        .collect();

    let mut out = SearchOutcome {
        cells,
        evaluated_terms: warmup_terms,
        ..Default::default()
    };
    for r in results {
        out.evaluated_terms += r.terms;
        out.candidates.extend(r.candidates);
        if let Some(b) = r.best {
            if out.best.is_none_or(|cur| b.rank(&cur).is_lt()) {
                out.best = Some(b);
            }
        }
    }
    out.candidates.sort_by(|a, b| a.rank(b));
    if let (Some(best), Some(mode)) = (out.best, opts.neighborhood) {
        out.neighborhood = Some(score_neighborhood(model, field, space, best.index, mode));
    }
    out
}

/// Scores of the 81 cells around `center`, re-evaluated without cutoff.
/// Cells outside the search grid are scored as well.
pub fn score_neighborhood(
    model: &ScoringModel,
    field: &GradientField,
    space: &SearchSpace,
    center: GridIndex,
    mode: Interpolation,
) -> ScoreNeighborhood {
    let mut values = [0.0; 81];
    for (k, v) in values.iter_mut().enumerate() {
        let u = ScoreNeighborhood::offset_of(k);
        *v = score_at(model, field, &space.pose_at(center.offset(u)), mode);
    }
    ScoreNeighborhood {
        values,
        steps: space.steps,
        center_pose: space.pose_at(center),
        center_index: center,
    }
}

/// Precomputed transformed model for one `(theta, sigma)` cell.
struct SliceKernel<'a> {
    unit: &'a [[f32; 2]],
    width: i64,
    height: i64,
    /// `sigma R p + center` per point.
    rel: Vec<(f64, f64)>,
    dirs: Vec<(f64, f64)>,
    /// Pixel offsets for integral translation steps.
    pix: Option<PixelOffsets>,
    dx: f64,
    dy: f64,
    n: usize,
    /// Upper bound on the magnitude of the terms after term `k`.
    remaining: Vec<f64>,
}

struct PixelOffsets {
    xy: Vec<(i64, i64)>,
    linear: Vec<isize>,
    min: (i64, i64),
    max: (i64, i64),
}

impl<'a> SliceKernel<'a> {
    fn new(model: &ScoringModel, field: &'a GradientField, space: &SearchSpace, kt: i32, ks: i32) -> Self {
        let pose = space.pose_at(GridIndex::new(0, 0, kt, ks));
        let (s, c) = pose.theta.sin_cos();
        let (a, b) = (pose.sigma * c, pose.sigma * s);
        let rel: Vec<(f64, f64)> = model
            .points
            .iter()
            .map(|p| (a * p.x - b * p.y + pose.x, b * p.x + a * p.y + pose.y))
            .collect();
        let dirs = model
            .dirs
            .iter()
            .map(|d| {
                let r = d.rotated(pose.theta);
                (r.x, r.y)
            })
            .collect();
        let width = field.width() as i64;
        let integral = |v: f64| v == v.round() && v.abs() < 1e6;
        let pix = (integral(space.steps.dx) && integral(space.steps.dy)).then(|| {
            let xy: Vec<(i64, i64)> = rel
                .iter()
                .map(|&(x, y)| (nearest_pixel(x), nearest_pixel(y)))
                .collect();
            let min = xy.iter().fold((i64::MAX, i64::MAX), |m, &(x, y)| (m.0.min(x), m.1.min(y)));
            let max = xy.iter().fold((i64::MIN, i64::MIN), |m, &(x, y)| (m.0.max(x), m.1.max(y)));
            let linear = xy.iter().map(|&(x, y)| (y * width + x) as isize).collect();
            PixelOffsets { xy, linear, min, max }
        });
        Self {
            unit: field.unit_dirs(),
            width,
            height: field.height() as i64,
            rel,
            dirs,
            pix,
            dx: space.steps.dx,
            dy: space.steps.dy,
            n: model.len(),
            remaining: (0..model.len()).map(|k| (model.len() - k - 1) as f64 * TERM_BOUND).collect(),
        }
    }

    /// Linear pixel index of cell `(i0, j)` when the integral fast path
    /// applies and every cell of the run `i0..=i1` keeps the model inside
    /// the frame. Consecutive cells then differ by one pixel.
    fn row_base(&self, i0: i32, i1: i32, j: i32) -> Option<isize> {
        let pix = self.pix.as_ref()?;
        if self.dx != 1.0 {
            return None;
        }
        let tx0 = i0 as i64;
        let tx1 = i1 as i64;
        let ty = (j as f64 * self.dy) as i64;
        let inside = pix.min.0 + tx0 >= 0 && pix.min.1 + ty >= 0 && pix.max.0 + tx1 < self.width && pix.max.1 + ty < self.height;
        inside.then(|| (ty * self.width + tx0) as isize)
    }

    /// Fast-path score with all pixel lookups known to be inside.
    #[inline]
    fn score_linear(&self, base: isize, threshold: f64) -> (Option<f64>, usize) {
        let pix = self.pix.as_ref().expect("fast path");
        let n = self.n;
        let limit = threshold * n as f64 - CUTOFF_SLACK;
        let unit = self.unit;
        let mut sum = 0.0f64;
        for (k, ((&off, d), &rem)) in pix.linear.iter().zip(&self.dirs).zip(&self.remaining).enumerate() {
            let e = unit[(base + off) as usize];
            sum += d.0 * e[0] as f64 + d.1 * e[1] as f64;
            if sum.abs() + rem < limit {
                return (None, k + 1);
            }
        }
        (Some((sum / n as f64).abs()), n)
    }

    /// Linear offset of each point's pixel row at grid row `j`, or -1 when
    /// the row is outside the frame.
    fn fill_rows(&self, j: i32, rows: &mut Vec<i64>) {
        let oy = j as f64 * self.dy;
        rows.clear();
        rows.extend(self.rel.iter().map(|r| {
            let y = nearest_pixel(r.1 + oy);
            if y >= 0 && y < self.height {
                y * self.width
            } else {
                -1
            }
        }));
    }

    /// [`Self::score`] for a row prepared by [`Self::fill_rows`].
    #[inline]
    fn score_in_rows(&self, i: i32, rows: &[i64], threshold: f64) -> (Option<f64>, usize) {
        let n = self.n;
        let limit = threshold * n as f64 - CUTOFF_SLACK;
        let ox = i as f64 * self.dx;
        let mut sum = 0.0f64;
        for k in 0..n {
            let x = nearest_pixel(self.rel[k].0 + ox);
            let row = rows[k];
            if row >= 0 && x >= 0 && x < self.width {
                let e = self.unit[(row + x) as usize];
                let d = self.dirs[k];
                sum += d.0 * e[0] as f64 + d.1 * e[1] as f64;
            }
            if sum.abs() + self.remaining[k] < limit {
                return (None, k + 1);
            }
        }
        (Some((sum / n as f64).abs()), n)
    }

    /// Score at translation cell `(i, j)`, `None` when cut off, plus the
    /// number of evaluated terms.
    #[inline]
    fn score(&self, i: i32, j: i32, threshold: f64) -> (Option<f64>, usize) {
        let n = self.n;
        let limit = threshold * n as f64 - CUTOFF_SLACK;
        let mut sum = 0.0f64;
        let unit = self.unit;
        match &self.pix {
            Some(pix) => {
                let tx = (i as f64 * self.dx) as i64;
                let ty = (j as f64 * self.dy) as i64;
                let inside = pix.min.0 + tx >= 0
                    && pix.min.1 + ty >= 0
                    && pix.max.0 + tx < self.width
                    && pix.max.1 + ty < self.height;
                if inside {
                    let base = (ty * self.width + tx) as isize;
                    for k in 0..n {
                        let e = unit[(base + pix.linear[k]) as usize];
                        let d = self.dirs[k];
                        sum += d.0 * e[0] as f64 + d.1 * e[1] as f64;
                        if sum.abs() + self.remaining[k] < limit {
                            return (None, k + 1);
                        }
                    }
                } else {
                    for k in 0..n {
                        let (x, y) = (pix.xy[k].0 + tx, pix.xy[k].1 + ty);
                        if x >= 0 && y >= 0 && x < self.width && y < self.height {
                            let e = unit[(y * self.width + x) as usize];
                            let d = self.dirs[k];
                            sum += d.0 * e[0] as f64 + d.1 * e[1] as f64;
                        }
                        if sum.abs() + self.remaining[k] < limit {
                            return (None, k + 1);
                        }
                    }
                }
            }
            None => {
                let ox = i as f64 * self.dx;
                let oy = j as f64 * self.dy;
                for k in 0..n {
                    let x = nearest_pixel(self.rel[k].0 + ox);
                    let y = nearest_pixel(self.rel[k].1 + oy);
                    if x >= 0 && y >= 0 && x < self.width && y < self.height {
                        let e = unit[(y * self.width + x) as usize];
                        let d = self.dirs[k];
                        sum += d.0 * e[0] as f64 + d.1 * e[1] as f64;
                    }
                    if sum.abs() + self.remaining[k] < limit {
                        return (None, k + 1);
                    }
                }
            }
        }
        (Some((sum / n as f64).abs()), n)
    }
}
