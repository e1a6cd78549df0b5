//! Subpixel refinement of a grid optimum: a quadratic facet fit over the
//! 3x3x3x3 score neighbourhood followed by point-to-line least squares.

use std::sync::OnceLock;

use nalgebra::{DMatrix, Matrix4, SMatrix, SymmetricEigen, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{nearest_pixel, Vec2};
use crate::imaging::{climb_to_ridge, refine_edge_subpixel, GradientField, Interpolation};
use crate::localization::{GridIndex, Steps};
use crate::model::Pose;

/// Scores of the 81 grid cells around a grid optimum.
///
/// Cell `k` holds the offset `u = (ux, uy, ut, us)` with
/// `k = 27 (ux+1) + 9 (uy+1) + 3 (ut+1) + (us+1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreNeighborhood {
    pub values: [f64; 81],
    pub steps: Steps,
    pub center_pose: Pose,
    pub center_index: GridIndex,
}

impl ScoreNeighborhood {
    pub const CENTER: usize = 40;

    /// Grid offset of cell `k`, in `(x, y, theta, sigma)` order.
    pub fn offset_of(k: usize) -> [i32; 4] {
        debug_assert!(k < 81);
        let k = k as i32;
        [k / 27 - 1, (k / 9) % 3 - 1, (k / 3) % 3 - 1, k % 3 - 1]
    }

    pub fn index_of(u: [i32; 4]) -> usize {
        ((u[0] + 1) * 27 + (u[1] + 1) * 9 + (u[2] + 1) * 3 + (u[3] + 1)) as usize
    }

    /// Samples `f` at the 81 integer offsets.
    pub fn from_fn(steps: Steps, center_pose: Pose, f: impl Fn([f64; 4]) -> f64) -> Self {
        let mut values = [0.0; 81];
        for (k, v) in values.iter_mut().enumerate() {
            *v = f(Self::offset_of(k).map(f64::from));
        }
        Self {
            values,
            steps,
            center_pose,
            center_index: GridIndex::default(),
        }
    }

    pub fn center_value(&self) -> f64 {
        self.values[Self::CENTER]
    }

    /// Cell with the highest value; the center wins ties.
    pub fn argmax(&self) -> usize {
        let mut best = Self::CENTER;
        for (k, &v) in self.values.iter().enumerate() {
            if v > self.values[best] {
                best = k;
            }
        }
        best
    }

    /// Pose at a fractional offset `u` in grid units.
    pub fn pose_at(&self, u: [f64; 4]) -> Pose {
        let c = &self.center_pose;
        Pose::new(
            c.x + u[0] * self.steps.dx,
            c.y + u[1] * self.steps.dy,
            c.theta + u[2] * self.steps.dtheta,
            c.sigma + u[3] * self.steps.dsigma,
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FacetResult {
    pub pose: Pose,
    pub score: f64,
    /// Stationary point in grid units, zero when degenerate.
    pub offset: [f64; 4],
    /// The fitted quadratic had no interior maximum; the center was kept.
    pub degenerate: bool,
}

const QUAD_TERMS: usize = 15;

fn quad_basis(u: [f64; 4]) -> [f64; QUAD_TERMS] {
    let mut b = [0.0; QUAD_TERMS];
    b[0] = 1.0;
    b[1..5].copy_from_slice(&u);
    for i in 0..4 {
        b[5 + i] = 0.5 * u[i] * u[i];
    }
    let mut k = 9;
    for i in 0..4 {
        for j in i + 1..4 {
            b[k] = u[i] * u[j];
            k += 1;
        }
    }
    b
}

/// `(A^T A)^-1 A^T` for the 81x15 design matrix of the quadratic basis.
fn facet_pseudo_inverse() -> &'static SMatrix<f64, QUAD_TERMS, 81> {
    static PINV: OnceLock<SMatrix<f64, QUAD_TERMS, 81>> = OnceLock::new();
    PINV.get_or_init(|| {
        let a = DMatrix::from_fn(81, QUAD_TERMS, |r, c| {
            quad_basis(ScoreNeighborhood::offset_of(r).map(f64::from))[c]
        });
        let ata = a.transpose() * &a;
        let inv = ata.try_inverse().expect("quadratic design matrix has full rank");
        let p = inv * a.transpose();
        SMatrix::from_fn(|r, c| p[(r, c)])
    })
}

/// Fits `c + g.u + u^T H u / 2` to the neighbourhood by least squares and
/// moves to its maximum when that maximum lies within one step of the
/// center in every dimension.
///
/// The returned score never drops below the center sample; a fit on noisy
/// samples can place its intercept slightly under it.
pub fn facet_refine(nb: &ScoreNeighborhood) -> FacetResult {
    let fallback = FacetResult {
        pose: nb.center_pose,
        score: nb.center_value(),
        offset: [0.0; 4],
        degenerate: true,
    };
    if nb.values.iter().any(|v| !v.is_finite()) {
        return fallback;
    }
    let coef = facet_pseudo_inverse() * SMatrix::<f64, 81, 1>::from_column_slice(&nb.values);
    let c = coef[0];
    let g = Vector4::new(coef[1], coef[2], coef[3], coef[4]);
    let mut h = Matrix4::zeros();
    for i in 0..4 {
        h[(i, i)] = coef[5 + i];
    }
    let mut k = 9;
    for i in 0..4 {
        for j in i + 1..4 {
            h[(i, j)] = coef[k];
            h[(j, i)] = coef[k];
            k += 1;
        }
    }
    // negative definite iff -H admits a Cholesky factorization
    let Some(chol) = (-h).cholesky() else {
        return fallback;
    };
    let u = chol.solve(&g);
    if u.iter().any(|v| !v.is_finite() || v.abs() > 1.0) {
        return fallback;
    }
    let offset = [u[0], u[1], u[2], u[3]];
    let peak = c + 0.5 * g.dot(&u);
    FacetResult {
        pose: nb.pose_at(offset),
        score: peak.max(nb.center_value()),
        offset,
        degenerate: false,
    }
}

/// Parameters of the one-dimensional search along a transformed normal.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatchParams {
    /// Half-length of the search line (pixels).
    pub max_len: f64,
    /// Minimum `|<e, n>|` between image and model directions.
    pub cos_tol: f64,
    /// Amplitude a candidate maximum must reach.
    pub min_amplitude: f64,
    /// Sampling step along the line (pixels).
    pub step: f64,
    /// Contrast polarity of the frame relative to the model (`1` or `-1`).
    /// When set, `polarity * <e, n>` must reach `cos_tol`, so an edge of
    /// the opposite sign next to the true one is never matched.
    pub polarity: Option<f64>,
}

impl MatchParams {
    fn agrees(&self, cos: f64) -> bool {
        match self.polarity {
            Some(s) => s * cos >= self.cos_tol,
            None => cos.abs() >= self.cos_tol,
        }
    }
}

impl Default for MatchParams {
    fn default() -> Self {
        Self {
            max_len: 3.0,
            cos_tol: 0.5,
            min_amplitude: 0.0,
            step: 0.5,
            polarity: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormalMatch {
    pub model_index: usize,
    /// Where the search line crosses the matched edge.
    pub q: Vec2,
    /// Unit search direction (transformed model normal).
    pub n_hat: Vec2,
    /// Unit image gradient at the match, signed to agree with `n_hat`.
    pub edge_normal: Vec2,
    /// Signed distance from the transformed point to `q` along `n_hat`.
    pub offset: f64,
}

/// Nearest valid edge along `p' +- t n` for `t <= max_len`.
///
/// Candidates are amplitude maxima of the sampled profile whose gradient
/// agrees with the search direction. Each is localized on the image by
/// climbing to the edge ridge pixel and refining it to subpixel precision;
/// the match is where the search line crosses the edge's tangent there.
pub fn find_normal_match(field: &GradientField, p_prime: Vec2, d_prime: Vec2, params: &MatchParams) -> Option<NormalMatch> {
    let n_hat = d_prime.normalized()?;
    if !(params.max_len > 0.0 && params.step > 0.0) {
        return None;
    }
    let half = (params.max_len / params.step + 1e-9).floor() as i64;
    let sample = |k: i64| field.amplitude_at(p_prime + n_hat * (k as f64 * params.step));
    let amps: Vec<f64> = (-half - 1..=half + 1).map(sample).collect();
    let at = |k: i64| amps[(k + half + 1) as usize];
    let floor = params.min_amplitude.max(crate::ZERO_GRADIENT);

    let mut order: Vec<i64> = (-half..=half).collect();
    // nearest first; at equal distance the stronger side, then positive
    order.sort_by(|&a, &b| {
        a.abs()
            .cmp(&b.abs())
            .then(at(b).total_cmp(&at(a)))
            .then(b.cmp(&a))
    });
    for k in order {
        let a = at(k);
        if !(a > at(k - 1) && a >= at(k + 1) && a >= floor) {
            continue;
        }
        let t = k as f64 * params.step;
        let s = p_prime + n_hat * t;
        let Some(e) = field.unit_direction(s, Interpolation::Bilinear) else {
            continue;
        };
        if !params.agrees(e.dot(n_hat)) {
            continue;
        }
        if let Some(m) = localize(field, p_prime, n_hat, t, params) {
            return Some(m);
        }
    }
    None
}

fn localize(field: &GradientField, p: Vec2, n_hat: Vec2, t: f64, params: &MatchParams) -> Option<NormalMatch> {
    let s = p + n_hat * t;
    let px = climb_to_ridge(field, nearest_pixel(s.x), nearest_pixel(s.y), 3)?;
    let edge = refine_edge_subpixel(field, px);
    let mut normal = edge.dir;
    let cos = normal.dot(n_hat);
    if !params.agrees(cos) {
        return None;
    }
    if cos < 0.0 {
        normal = -normal;
    }
    // intersection of the search line with the edge tangent through edge.pos
    let offset = normal.dot(edge.pos - p) / normal.dot(n_hat);
    if !offset.is_finite() || offset.abs() > params.max_len || (offset - t).abs() > 1.0 + params.step {
        return None;
    }
    Some(NormalMatch {
        model_index: 0,
        q: p + n_hat * offset,
        n_hat,
        edge_normal: normal,
        offset,
    })
}

/// Signed point-to-line residuals `e_i . (p'_i - q_i)` at `pose`.
pub fn point_to_line_residuals(points: &[Vec2], matches: &[NormalMatch], pose: &Pose) -> Vec<f64> {
    matches
        .iter()
        .map(|m| m.edge_normal.dot(pose.transform_point(points[m.model_index]) - m.q))
        .collect()
}

/// Jacobian rows of the residuals with respect to `(x, y, theta, sigma)`.
pub fn residual_jacobian(points: &[Vec2], matches: &[NormalMatch], pose: &Pose) -> Vec<[f64; 4]> {
    matches
        .iter()
        .map(|m| {
            let e = m.edge_normal;
            let w = pose.transform_point(points[m.model_index]) - pose.translation();
            [e.x, e.y, e.dot(w.perp()), e.dot(w) / pose.sigma]
        })
        .collect()
}

/// Smallest-to-largest eigenvalue ratio of a column-scaled normal matrix
/// below which the pose is considered unobservable.
const RANK_TOLERANCE: f64 = 1e-10;

/// One Gauss-Newton step on the point-to-line distances.
///
/// The transformed point is linear in `(t, sigma cos theta, sigma sin theta)`,
/// so the step is solved in those coordinates (relative to `init`) and
/// mapped back; rotation and scale stay exact and `sigma` stays positive.
pub fn least_squares_pose(points: &[Vec2], matches: &[NormalMatch], init: &Pose) -> Result<Pose> {
    let rank_error = Error::RankDeficient { matches: matches.len() };
    if matches.len() < 4 {
        return Err(rank_error);
    }
    let mut n = Matrix4::<f64>::zeros();
    let mut b = Vector4::<f64>::zeros();
    for m in matches {
        let e = m.edge_normal;
        let p = init.transform_point(points[m.model_index]);
        let w = p - init.translation();
        let row = Vector4::new(e.x, e.y, e.dot(w.perp()), e.dot(w));
        let r = e.dot(p - m.q);
        n += row * row.transpose();
        b -= row * r;
    }
    let scale = Vector4::from_fn(|i, _| {
        let d = n[(i, i)];
        if d > 0.0 {
            1.0 / d.sqrt()
        } else {
            0.0
        }
    });
    if scale.iter().any(|&s| s == 0.0) {
        return Err(rank_error);
    }
    let d = Matrix4::from_diagonal(&scale);
    let ns = d * n * d;
    let eig = SymmetricEigen::new(ns).eigenvalues;
    let (lo, hi) = eig.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if !(lo > RANK_TOLERANCE * hi) {
        return Err(rank_error);
    }
    let y = ns.cholesky().ok_or(rank_error)?.solve(&(d * b));
    let delta = d * y;
    let (dsig, dth) = (1.0 + delta[3], delta[2]);
    let grow = dsig.hypot(dth);
    if !(grow > 0.0) || !grow.is_finite() {
        return Err(Error::RankDeficient { matches: matches.len() });
    }
    Ok(Pose::new(
        init.x + delta[0],
        init.y + delta[1],
        init.theta + dth.atan2(dsig),
        init.sigma * grow,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::{sobel_gradients, GrayImage};
    use proptest::prelude::*;

    const STEPS: Steps = Steps {
        dx: 1.0,
        dy: 1.0,
        dtheta: 0.01,
        dsigma: 0.01,
    };

    fn concave(peak: [f64; 4], h: Matrix4<f64>) -> impl Fn([f64; 4]) -> f64 {
        move |u| {
            let d = Vector4::from_fn(|i, _| u[i] - peak[i]);
            0.9 - 0.5 * (d.transpose() * h * d)[(0, 0)]
        }
    }

    #[test]
    fn offsets_round_trip() {
        for k in 0..81 {
            assert_eq!(ScoreNeighborhood::index_of(ScoreNeighborhood::offset_of(k)), k);
        }
        assert_eq!(ScoreNeighborhood::offset_of(40), [0, 0, 0, 0]);
    }

    #[test]
    fn facet_recovers_known_maximum() {
        let peak = [0.3, -0.2, 0.1, 0.4];
        let h = Matrix4::new(
            2.0, 0.3, 0.1, 0.0, //
            0.3, 1.5, 0.0, 0.2, //
            0.1, 0.0, 1.0, 0.1, //
            0.0, 0.2, 0.1, 3.0,
        );
        let center = Pose::new(10.0, 20.0, 0.5, 1.1);
        let nb = ScoreNeighborhood::from_fn(STEPS, center, concave(peak, h));
        let r = facet_refine(&nb);
        assert!(!r.degenerate);
        for i in 0..4 {
            assert!((r.offset[i] - peak[i]).abs() < 1e-9, "{:?}", r.offset);
        }
        assert!((r.score - 0.9).abs() < 1e-9);
        assert!((r.pose.x - 10.3).abs() < 1e-9);
        assert!((r.pose.sigma - 1.104).abs() < 1e-9);
    }

    #[test]
    fn symmetric_peak_stays() {
        let nb = ScoreNeighborhood::from_fn(STEPS, Pose::IDENTITY, |u| {
            1.0 - u.iter().map(|v| v * v).sum::<f64>() * 0.1
        });
        let r = facet_refine(&nb);
        assert!(!r.degenerate);
        assert!(r.offset.iter().all(|v| v.abs() < 1e-12));
        assert!(r.pose.x.abs() < 1e-12 && (r.pose.sigma - 1.0).abs() < 1e-12);
    }

    #[test]
    fn saddle_is_degenerate() {
        let center = Pose::new(1.0, 2.0, 0.0, 1.0);
        let nb = ScoreNeighborhood::from_fn(STEPS, center, |u| 0.5 - 0.1 * u[0] * u[0] + 0.1 * u[1] * u[1]);
        let r = facet_refine(&nb);
        assert!(r.degenerate);
        assert_eq!(r.pose, center);
        assert_eq!(r.score, 0.5);
    }

    #[test]
    fn far_maximum_is_degenerate() {
        let nb = ScoreNeighborhood::from_fn(STEPS, Pose::IDENTITY, concave([1.6, 0.0, 0.0, 0.0], Matrix4::identity()));
        assert!(facet_refine(&nb).degenerate);
    }

    proptest! {
        #[test]
        fn facet_moves_at_most_one_step(vals in proptest::collection::vec(0.0f64..1.0, 81)) {
            let mut nb = ScoreNeighborhood::from_fn(STEPS, Pose::new(5.0, 5.0, 0.0, 1.0), |_| 0.0);
            nb.values.copy_from_slice(&vals);
            let r = facet_refine(&nb);
            prop_assert!(r.offset.iter().all(|v| v.abs() <= 1.0));
            prop_assert!((r.pose.x - 5.0).abs() <= 1.0 + 1e-12);
            if !r.degenerate {
                prop_assert!(r.score >= nb.center_value());
            }
        }

        #[test]
        fn facet_exact_on_quadratics(
            peak in proptest::array::uniform4(-0.95f64..0.95),
            diag in proptest::array::uniform4(0.5f64..3.0),
            off in proptest::array::uniform6(-0.2f64..0.2),
        ) {
            let mut h = Matrix4::from_diagonal(&Vector4::from(diag));
            let mut k = 0;
            for i in 0..4 {
                for j in i + 1..4 {
                    h[(i, j)] = off[k];
                    h[(j, i)] = off[k];
                    k += 1;
                }
            }
            prop_assume!(h.cholesky().is_some());
            let nb = ScoreNeighborhood::from_fn(STEPS, Pose::IDENTITY, concave(peak, h));
            let r = facet_refine(&nb);
            prop_assert!(!r.degenerate);
            for i in 0..4 {
                prop_assert!((r.offset[i] - peak[i]).abs() < 1e-9);
            }
        }
    }

    /// Smooth vertical edge at column `edge` (logistic profile).
    fn edge_field(edge: f64) -> GradientField {
        let img = GrayImage::from_fn(40, 30, |x, _| 200.0 / (1.0 + (-(x as f64 - edge) * 1.5).exp()));
        sobel_gradients(&img).unwrap()
    }

    #[test]
    fn match_on_edge_has_zero_offset() {
        let f = edge_field(20.0);
        let m = find_normal_match(&f, Vec2::new(20.0, 15.0), Vec2::new(1.0, 0.0), &MatchParams::default()).unwrap();
        assert!(m.offset.abs() < 0.05, "{}", m.offset);
        assert!((m.n_hat.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn displaced_edge_is_found() {
        let f = edge_field(22.0);
        let params = MatchParams {
            max_len: 5.0,
            ..Default::default()
        };
        let m = find_normal_match(&f, Vec2::new(20.0, 15.0), Vec2::new(-3.0, 0.0), &params).unwrap();
        // search direction points away from the edge, so the offset is negative
        assert!((m.offset + 2.0).abs() < 0.1, "{}", m.offset);
        assert!((m.q.x - 22.0).abs() < 0.1);
        let m = find_normal_match(&f, Vec2::new(20.3, 15.0), Vec2::new(1.0, 0.0), &params).unwrap();
        assert!((m.offset - 1.7).abs() < 0.1, "{}", m.offset);
    }

    #[test]
    fn flat_region_has_no_match() {
        let f = edge_field(35.0);
        let params = MatchParams {
            max_len: 5.0,
            ..Default::default()
        };
        assert!(find_normal_match(&f, Vec2::new(10.0, 15.0), Vec2::new(1.0, 0.0), &params).is_none());
    }

    #[test]
    fn polarity_skips_opposite_edge() {
        // a bright bar: rising edge at 18, falling edge at 21
        let bar = GrayImage::from_fn(40, 30, |x, _| {
            let x = x as f64;
            200.0 / (1.0 + (-(x - 18.0) * 1.5).exp()) - 200.0 / (1.0 + (-(x - 21.0) * 1.5).exp())
        });
        let f = sobel_gradients(&bar).unwrap();
        let p = Vec2::new(20.5, 15.0);
        // a rising-contrast point near the falling edge
        let any = find_normal_match(&f, p, Vec2::new(1.0, 0.0), &MatchParams::default()).unwrap();
        assert!((any.q.x - 21.0).abs() < 0.2, "{}", any.q.x);
        let same = MatchParams {
            polarity: Some(1.0),
            ..Default::default()
        };
        let m = find_normal_match(&f, p, Vec2::new(1.0, 0.0), &same).unwrap();
        assert!((m.q.x - 18.0).abs() < 0.2, "{}", m.q.x);
        // inverted frames flip the accepted side
        let inverted = MatchParams {
            polarity: Some(-1.0),
            ..Default::default()
        };
        let m = find_normal_match(&f, p, Vec2::new(-1.0, 0.0), &inverted).unwrap();
        assert!((m.q.x - 18.0).abs() < 0.2, "{}", m.q.x);
    }

    #[test]
    fn perpendicular_edge_is_rejected() {
        let f = edge_field(20.0);
        // searching vertically along a vertical edge never crosses it
        assert!(find_normal_match(&f, Vec2::new(20.0, 15.0), Vec2::new(0.0, 1.0), &MatchParams::default()).is_none());
    }

    /// Correspondences from an exact transform: every model point is matched
    /// to its position under `truth`, on the line through it with the
    /// transformed normal.
    fn synthetic_matches(points: &[Vec2], normals: &[Vec2], init: &Pose, truth: &Pose) -> Vec<NormalMatch> {
        points
            .iter()
            .zip(normals)
            .enumerate()
            .map(|(i, (&p, &d))| {
                let q = truth.transform_point(p);
                let e = truth.transform_direction(d).normalized().unwrap();
                let pp = init.transform_point(p);
                let n_hat = init.transform_direction(d).normalized().unwrap();
                let e = if e.dot(n_hat) < 0.0 { -e } else { e };
                let offset = e.dot(q - pp) / e.dot(n_hat);
                NormalMatch {
                    model_index: i,
                    q: pp + n_hat * offset,
                    n_hat,
                    edge_normal: e,
                    offset,
                }
            })
            .collect()
    }

    fn circle(n: usize, r: f64) -> (Vec<Vec2>, Vec<Vec2>) {
        let pts: Vec<Vec2> = (0..n)
            .map(|i| {
                let a = i as f64 / n as f64 * std::f64::consts::TAU;
                Vec2::new(r * a.cos() + 3.0, 0.7 * r * a.sin())
            })
            .collect();
        let dirs = (0..n)
            .map(|i| {
                let a = i as f64 / n as f64 * std::f64::consts::TAU;
                Vec2::new(0.7 * a.cos(), a.sin()).normalized().unwrap()
            })
            .collect();
        (pts, dirs)
    }

    #[test]
    fn gauss_newton_recovers_perturbation() {
        let (pts, dirs) = circle(60, 25.0);
        let init = Pose::new(100.0, 80.0, 0.2, 1.1);
        let truth = Pose::new(100.3, 79.8, 0.21, 1.1 * 1.005);
        let matches = synthetic_matches(&pts, &dirs, &init, &truth);
        let got = least_squares_pose(&pts, &matches, &init).unwrap();
        assert!((got.x - truth.x).abs() < 1e-3 && (got.y - truth.y).abs() < 1e-3);
        assert!((got.theta - truth.theta).abs() < 1e-4);
        assert!((got.sigma / truth.sigma - 1.0).abs() < 1e-4);
    }

    #[test]
    fn zero_offsets_keep_pose() {
        let (pts, dirs) = circle(30, 15.0);
        let init = Pose::new(40.0, 50.0, -0.3, 0.9);
        let matches = synthetic_matches(&pts, &dirs, &init, &init);
        let got = least_squares_pose(&pts, &matches, &init).unwrap();
        assert!((got.x - init.x).abs() < 1e-12 && (got.y - init.y).abs() < 1e-12);
        assert!((got.theta - init.theta).abs() < 1e-12 && (got.sigma - init.sigma).abs() < 1e-12);
    }

    #[test]
    fn parallel_lines_are_rank_deficient() {
        let pts: Vec<Vec2> = (0..10).map(|i| Vec2::new(0.0, i as f64 * 3.0)).collect();
        let dirs = vec![Vec2::new(1.0, 0.0); 10];
        let init = Pose::at(Vec2::new(50.0, 50.0));
        let truth = Pose::at(Vec2::new(50.5, 50.0));
        let matches = synthetic_matches(&pts, &dirs, &init, &truth);
        assert!(matches!(
            least_squares_pose(&pts, &matches, &init),
            Err(Error::RankDeficient { .. })
        ));
        assert!(least_squares_pose(&pts, &matches[..3], &init).is_err());
    }

    fn sse(points: &[Vec2], matches: &[NormalMatch], pose: &Pose) -> f64 {
        point_to_line_residuals(points, matches, pose).iter().map(|r| r * r).sum()
    }

    proptest! {
        #[test]
        fn gauss_newton_reduces_residual(
            dx in -0.5f64..0.5, dy in -0.5f64..0.5, dt in -0.02f64..0.02, ds in 0.98f64..1.02,
            noise in proptest::collection::vec(-0.3f64..0.3, 40),
        ) {
            let (pts, dirs) = circle(40, 20.0);
            let init = Pose::new(60.0, 60.0, 0.1, 1.0);
            let truth = Pose::new(60.0 + dx, 60.0 + dy, 0.1 + dt, ds);
            let mut matches = synthetic_matches(&pts, &dirs, &init, &truth);
            for (m, z) in matches.iter_mut().zip(&noise) {
                m.q = m.q + m.n_hat * *z;
            }
            let got = least_squares_pose(&pts, &matches, &init).unwrap();
            let (before, after) = (sse(&pts, &matches, &init), sse(&pts, &matches, &got));
            prop_assert!(after < before || after - before <= 1e-12);
        }

        #[test]
        fn jacobian_matches_finite_differences(
            x in -5.0f64..5.0, y in -5.0f64..5.0, theta in -3.0f64..3.0, sigma in 0.5f64..2.0,
        ) {
            let (pts, dirs) = circle(12, 10.0);
            let pose = Pose::new(x, y, theta, sigma);
            let truth = Pose::new(x + 0.4, y - 0.3, theta + 0.05, sigma * 1.03);
            let matches = synthetic_matches(&pts, &dirs, &pose, &truth);
            let jac = residual_jacobian(&pts, &matches, &pose);
            let h = 1e-6;
            for p in 0..4 {
                let shift = |s: f64| {
                    let mut v = [pose.x, pose.y, pose.theta, pose.sigma];
                    v[p] += s;
                    Pose { x: v[0], y: v[1], theta: v[2], sigma: v[3] }
                };
                let plus = point_to_line_residuals(&pts, &matches, &shift(h));
                let minus = point_to_line_residuals(&pts, &matches, &shift(-h));
                for (i, row) in jac.iter().enumerate() {
                    let fd = (plus[i] - minus[i]) / (2.0 * h);
                    let tol = 1e-5 * row[p].abs().max(1.0);
                    prop_assert!((fd - row[p]).abs() <= tol, "param {} fd {} analytic {}", p, fd, row[p]);
                }
            }
        }
    }
}
