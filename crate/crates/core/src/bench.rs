//! Synthetic sequences with exact ground truth, benchmark ground-truth
//! parsing and overlap metrics.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{PixelRect, Rect, Vec2};
use crate::imaging::GrayImage;
use crate::model::{Pose, ShapeModel};
use crate::tracker::{FrameResult, Status, Timings};

/// Constant-fill rectangle drawn over frames `first..=last`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Occluder {
    pub first: usize,
    pub last: usize,
    pub rect: Rect,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    /// Frame 0 content; later frames warp it.
    pub template: GrayImage,
    /// Per-frame pose about `anchor`: `u -> sigma R (u - anchor) + anchor + t`.
    pub trajectory: Vec<Pose>,
    /// Rotation/scale center, the template center when unset.
    pub anchor: Option<Vec2>,
    pub noise_sigma: f64,
    /// Per-frame `(gain, bias)`; missing entries mean `(1, 0)`.
    pub illum: Vec<(f64, f64)>,
    pub occluders: Vec<Occluder>,
    pub seed: u64,
}

impl SynthSpec {
    pub fn new(template: GrayImage, trajectory: Vec<Pose>) -> Self {
        Self {
            template,
            trajectory,
            anchor: None,
            noise_sigma: 0.0,
            illum: Vec::new(),
            occluders: Vec::new(),
            seed: 0,
        }
    }

    pub fn anchor(&self) -> Vec2 {
        self.anchor.unwrap_or_else(|| {
            Vec2::new(
                (self.template.width() - 1) as f64 / 2.0,
                (self.template.height() - 1) as f64 / 2.0,
            )
        })
    }

    /// Image transform of frame `i` as a pose about the image origin.
    pub fn warp(&self, i: usize) -> Pose {
        let p = self.trajectory[i];
        let a = self.anchor();
        let t = a - a.rotated(p.theta) * p.sigma;
        Pose::new(p.x + t.x, p.y + t.y, p.theta, p.sigma)
    }

    /// Pose of a model whose reference point is `ref_point` in frame 0.
    pub fn model_pose(&self, i: usize, ref_point: Vec2) -> Pose {
        let w = self.warp(i);
        let t = w.transform_point(ref_point);
        Pose::new(t.x, t.y, w.theta, w.sigma)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSequence {
    pub frames: Vec<GrayImage>,
    /// Exact trajectory, as given in the spec.
    pub poses: Vec<Pose>,
    /// Axis-aligned box of the warped template content per frame.
    pub boxes: Vec<Rect>,
}

/// Pixels that differ from the top-left (background) value.
pub fn content_bounds(img: &GrayImage) -> Option<PixelRect> {
    let bg = img.get(0, 0);
    let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
    for y in 0..img.height() {
        for x in 0..img.width() {
            if img.get(x, y) != bg {
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x);
                y1 = y1.max(y);
            }
        }
    }
    (x0 != usize::MAX).then(|| PixelRect::new(x0 as i64, y0 as i64, (x1 - x0 + 1) as i64, (y1 - y0 + 1) as i64))
}

fn corners(r: &Rect) -> [Vec2; 4] {
    [
        Vec2::new(r.x, r.y),
        Vec2::new(r.x + r.w, r.y),
        Vec2::new(r.x + r.w, r.y + r.h),
        Vec2::new(r.x, r.y + r.h),
    ]
}

/// Renders every frame by inverse mapping with bilinear sampling, then
/// applies illumination, occluders and seeded Gaussian noise. Intensities are
/// not clamped.
pub fn synth_sequence(spec: &SynthSpec) -> Result<SynthSequence> {
    if spec.trajectory.is_empty() {
        return Err(Error::Synth {
            frame: 0,
            message: "trajectory is empty".into(),
        });
    }
    let content = content_rect(&spec.template);
    let mut out = SynthSequence {
        frames: Vec::with_capacity(spec.trajectory.len()),
        poses: spec.trajectory.clone(),
        boxes: Vec::with_capacity(spec.trajectory.len()),
    };
    for i in 0..spec.trajectory.len() {
        let (frame, bbox) = render(spec, i, content.as_ref())?;
        out.frames.push(frame);
        out.boxes.push(bbox);
    }
    Ok(out)
}

/// Frame `i` of the sequence and its content box, without rendering the
/// others. Identical to the corresponding entries of [`synth_sequence`].
pub fn render_frame(spec: &SynthSpec, i: usize) -> Result<(GrayImage, Rect)> {
    if i >= spec.trajectory.len() {
        return Err(Error::Synth {
            frame: i,
            message: "frame index beyond the trajectory".into(),
        });
    }
    render(spec, i, content_rect(&spec.template).as_ref())
}

fn content_rect(template: &GrayImage) -> Option<Rect> {
    content_bounds(template).map(|b| Rect::new(b.x as f64, b.y as f64, (b.w - 1) as f64, (b.h - 1) as f64))
}

fn render(spec: &SynthSpec, i: usize, content: Option<&Rect>) -> Result<(GrayImage, Rect)> {
    let (w, h) = (spec.template.width(), spec.template.height());
    let bg = spec.template.get(0, 0);
    let pose = spec.trajectory[i];
    if !(pose.sigma > 0.0) || !pose.x.is_finite() || !pose.y.is_finite() || !pose.theta.is_finite() {
        return Err(Error::Synth {
            frame: i,
            message: format!("invalid pose {pose:?}"),
        });
    }
    let warp = spec.warp(i);
    let bbox = match content {
        Some(c) => {
            let b = Rect::bounding(corners(c).map(|p| warp.transform_point(p))).unwrap();
            if b.x < 0.0 || b.y < 0.0 || b.x + b.w > (w - 1) as f64 || b.y + b.h > (h - 1) as f64 {
                return Err(Error::Synth {
                    frame: i,
                    message: "trajectory moves the template content out of the frame".into(),
                });
            }
            b
        }
        None => Rect::new(0.0, 0.0, 0.0, 0.0),
    };
    let inv = warp.inverse();
    let (gain, bias) = spec.illum.get(i).copied().unwrap_or((1.0, 0.0));
    let mut frame = GrayImage::from_fn(w, h, |x, y| {
        let u = inv.transform_point(Vec2::new(x as f64, y as f64));
        gain * spec.template.bilinear(u.x, u.y).unwrap_or(bg) + bias
    });
    for occ in spec.occluders.iter().filter(|o| (o.first..=o.last).contains(&i)) {
        if let Some(r) = PixelRect::covering(&Rect::new(occ.rect.x, occ.rect.y, occ.rect.w - 1.0, occ.rect.h - 1.0)).clip(w, h) {
            for y in r.y..r.y + r.h {
                for x in r.x..r.x + r.w {
                    frame.set(x as usize, y as usize, occ.value);
                }
            }
        }
    }
    if spec.noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(i as u64);
        let normal = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::Synth {
            frame: i,
            message: e.to_string(),
        })?;
        for v in frame.data_mut() {
            *v += normal.sample(&mut rng);
        }
    }
    Ok((frame, bbox))
}

/// A deterministic test object: a bright panel with random ellipses and
/// rotated bars, anti-aliased, on a flat background.
pub fn textured_template(width: usize, height: usize, object: Rect, seed: u64) -> GrayImage {
    #[derive(Clone, Copy)]
    enum Shape {
        Ellipse { c: Vec2, a: f64, b: f64, rot: f64 },
        Bar { c: Vec2, a: f64, b: f64, rot: f64 },
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = ((object.w * object.h) / 500.0).clamp(3.0, 40.0) as usize;
    let mut shapes = Vec::with_capacity(count);
    for k in 0..count {
        let c = Vec2::new(
            object.x + rng.random_range(0.15..0.85) * object.w,
            object.y + rng.random_range(0.15..0.85) * object.h,
        );
        let scale = object.w.min(object.h);
        let a = rng.random_range(0.06..0.2) * scale;
        let b = rng.random_range(0.04..0.12) * scale;
        let rot = rng.random_range(0.0..std::f64::consts::PI);
        let level = rng.random_range(0.0..255.0);
        let shape = if k % 2 == 0 {
            Shape::Ellipse { c, a, b, rot }
        } else {
            Shape::Bar { c, a, b, rot }
        };
        shapes.push((shape, level));
    }
    let coverage = |sd: f64| (0.5 - sd).clamp(0.0, 1.0);
    GrayImage::from_fn(width, height, |x, y| {
        let p = Vec2::new(x as f64, y as f64);
        let panel = {
            let dx = (p.x - object.x).min(object.x + object.w - p.x);
            let dy = (p.y - object.y).min(object.y + object.h - p.y);
            coverage(-dx.min(dy))
        };
        let mut v = 150.0;
        for (shape, level) in &shapes {
            let sd = match *shape {
                Shape::Ellipse { c, a, b, rot } => {
                    let u = (p - c).rotated(-rot);
                    ((u.x / a).hypot(u.y / b) - 1.0) * a.min(b)
                }
                Shape::Bar { c, a, b, rot } => {
                    let u = (p - c).rotated(-rot);
                    (u.x.abs() - a).max(u.y.abs() - b)
                }
            };
            let cov = coverage(sd);
            v = v * (1.0 - cov) + level * cov;
        }
        40.0 * (1.0 - panel) + v * panel
    })
}

/// Ground-truth file flavour.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GtFormat {
    /// One `x,y,w,h` box per line, 1-based corner.
    Otb,
    /// One 8-value polygon (or 4-value box) per line, 1-based.
    Vot,
}

impl std::str::FromStr for GtFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "otb" => Ok(GtFormat::Otb),
            "vot" => Ok(GtFormat::Vot),
            _ => Err(Error::Config(format!("unknown ground-truth format {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum GtRegion {
    Rect(Rect),
    Polygon([Vec2; 4]),
}

impl GtRegion {
    /// Axis-aligned box; polygons are reduced to their bounding box.
    pub fn bounding_box(&self) -> Rect {
        match self {
            GtRegion::Rect(r) => *r,
            GtRegion::Polygon(p) => Rect::bounding(p.iter().copied()).unwrap(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthTrack {
    pub format: GtFormat,
    /// 0-based regions, one per frame.
    pub regions: Vec<GtRegion>,
}

impl GroundTruthTrack {
    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    /// A warning when the track length differs from the sequence length.
    pub fn frame_count_warning(&self, frames: usize) -> Option<String> {
        (self.regions.len() != frames)
            .then(|| format!("ground truth has {} entries for {frames} frames", self.regions.len()))
    }
}

pub fn parse_ground_truth(path: impl AsRef<Path>, format: GtFormat) -> Result<GroundTruthTrack> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_ground_truth_str(&text, format)
}

/// Parses ground truth text, converting 1-based corners to 0-based. Blank
/// lines are skipped; errors name the 1-based line.
pub fn parse_ground_truth_str(text: &str, format: GtFormat) -> Result<GroundTruthTrack> {
    let mut regions = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse { line: i + 1, message };
        let fields: Vec<&str> = line
            .split(|c: char| c == ',' || c == '\t' || c.is_whitespace())
            .filter(|f| !f.is_empty())
            .collect();
        let mut v = Vec::with_capacity(fields.len());
        for f in &fields {
            let x: f64 = f.parse().map_err(|_| err(format!("not a number: {f:?}")))?;
            if !x.is_finite() {
                return Err(err(format!("not a finite number: {f:?}")));
            }
            v.push(x);
        }
        let region = match (format, v.len()) {
            (_, 4) => {
                if v[2] < 0.0 || v[3] < 0.0 {
                    return Err(err("negative box size".into()));
                }
                GtRegion::Rect(Rect::new(v[0] - 1.0, v[1] - 1.0, v[2], v[3]))
            }
            (GtFormat::Vot, 8) => GtRegion::Polygon([
                Vec2::new(v[0] - 1.0, v[1] - 1.0),
                Vec2::new(v[2] - 1.0, v[3] - 1.0),
                Vec2::new(v[4] - 1.0, v[5] - 1.0),
                Vec2::new(v[6] - 1.0, v[7] - 1.0),
            ]),
            (GtFormat::Otb, n) => return Err(err(format!("expected 4 fields, found {n}"))),
            (GtFormat::Vot, n) => return Err(err(format!("expected 8 (or 4) fields, found {n}"))),
        };
        regions.push(region);
    }
    Ok(GroundTruthTrack { format, regions })
}

/// Writes a track back in its 1-based text form.
pub fn serialize_ground_truth(track: &GroundTruthTrack) -> String {
    let mut s = String::new();
    for r in &track.regions {
        match r {
            GtRegion::Rect(b) => {
                let _ = writeln!(s, "{},{},{},{}", b.x + 1.0, b.y + 1.0, b.w, b.h);
            }
            GtRegion::Polygon(p) => {
                let vals: Vec<String> = p.iter().flat_map(|c| [c.x + 1.0, c.y + 1.0]).map(|v| v.to_string()).collect();
                let _ = writeln!(s, "{}", vals.join(","));
            }
        }
    }
    s
}

/// Axis-aligned box of the model points under `pose`.
pub fn bbox_from_model(model: &ShapeModel, pose: &Pose) -> Rect {
    Rect::bounding(model.points.iter().map(|p| pose.transform_point(p.p))).unwrap_or_default()
}

/// Intersection over union; 0 when the union is empty.
pub fn iou(a: &Rect, b: &Rect) -> f64 {
    let ix = ((a.x + a.w).min(b.x + b.w) - a.x.max(b.x)).max(0.0);
    let iy = ((a.y + a.h).min(b.y + b.h) - a.y.max(b.y)).max(0.0);
    let inter = ix * iy;
    let union = a.area() + b.area() - inter;
    if union > 0.0 {
        (inter / union).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

/// Frames at the end of a sequence whose overlap decides robustness.
pub const ROBUST_WINDOW: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceReport {
    pub per_frame_iou: Vec<f64>,
    pub mean_iou: f64,
    /// Mean overlap over the final frames.
    pub final_iou: f64,
    pub robust: bool,
    pub frames_lost: usize,
    pub fps: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean_iou: f64,
    pub robust: bool,
    pub fps: f64,
    pub frames_lost: usize,
}

impl SequenceReport {
    pub fn summary(&self) -> Summary {
        Summary {
            mean_iou: self.mean_iou,
            robust: self.robust,
            fps: self.fps,
            frames_lost: self.frames_lost,
        }
    }

    pub fn to_csv(&self, results: &[FrameResult]) -> String {
        let mut s = String::from("frame,status,iou\n");
        for (r, v) in results.iter().zip(&self.per_frame_iou) {
            let _ = writeln!(s, "{},{},{v:.6}", r.frame_index, r.status.name());
        }
        s
    }
}

/// Overlap of the tracked boxes with the ground truth. A sequence is robust
/// when the mean overlap over its last five frames exceeds 0.5.
pub fn sequence_report(results: &[FrameResult], gt: &GroundTruthTrack, model: &ShapeModel) -> Result<SequenceReport> {
    if results.len() != gt.len() {
        return Err(Error::LengthMismatch {
            what: format!("{} results for {} ground-truth frames", results.len(), gt.len()),
        });
    }
    if results.is_empty() {
        return Err(Error::LengthMismatch {
            what: "empty sequence".into(),
        });
    }
    let per_frame_iou: Vec<f64> = results
        .iter()
        .zip(&gt.regions)
        .map(|(r, g)| iou(&bbox_from_model(model, &r.pose), &g.bounding_box()))
        .collect();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let tail = &per_frame_iou[per_frame_iou.len().saturating_sub(ROBUST_WINDOW)..];
    let final_iou = mean(tail);
    let micros: u64 = results.iter().map(|r| r.timings.total).sum();
    Ok(SequenceReport {
        mean_iou: mean(&per_frame_iou),
        final_iou,
        robust: final_iou > 0.5,
        frames_lost: results.iter().filter(|r| !r.status.is_tracked()).count(),
        fps: if micros > 0 {
            results.len() as f64 * 1e6 / micros as f64
        } else {
            0.0
        },
        per_frame_iou,
    })
}

pub const POSES_HEADER: &str = "frame,status,x,y,theta,sigma,score,points,us_total";

/// Per-frame pose table. With `timings` false the timing column is written
/// as 0 so that runs can be compared byte for byte.
pub fn format_poses_csv(results: &[FrameResult], timings: bool) -> String {
    let mut s = String::with_capacity(64 * (results.len() + 1));
    s.push_str(POSES_HEADER);
    s.push('\n');
    for r in results {
        let p = &r.pose;
        let _ = writeln!(
            s,
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{},{}",
            r.frame_index,
            r.status.name(),
            p.x,
            p.y,
            p.theta,
            p.sigma,
            r.score,
            r.points_used,
            if timings { r.timings.total } else { 0 }
        );
    }
    s
}

/// Reads a pose table back. Lost rows carry no expansion level and parse
/// as level 0; only the total time is restored.
pub fn parse_poses_csv(text: &str) -> Result<Vec<FrameResult>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if h.trim() == POSES_HEADER => {}
        Some((i, _)) => {
            return Err(Error::Parse {
                line: i + 1,
                message: format!("expected header {POSES_HEADER:?}"),
            })
        }
        None => {
            return Err(Error::Parse {
                line: 1,
                message: "empty pose table".into(),
            })
        }
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        let err = |message: String| Error::Parse { line: i + 1, message };
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 9 {
            return Err(err(format!("expected 9 fields, found {}", f.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| err(format!("not a number: {s:?}")));
        let int = |s: &str| s.parse::<u64>().map_err(|_| err(format!("not an integer: {s:?}")));
        let status = match f[1] {
            "tracked" => Status::Tracked,
            "lost" => Status::Lost { level: 0 },
            other => return Err(err(format!("unknown status {other:?}"))),
        };
        out.push(FrameResult {
            frame_index: int(f[0])? as usize,
            status,
            pose: Pose {
                x: num(f[2])?,
                y: num(f[3])?,
                theta: num(f[4])?,
                sigma: num(f[5])?,
            },
            score: num(f[6])?,
            points_used: int(f[7])? as usize,
            timings: Timings {
                total: int(f[8])?,
                ..Default::default()
            },
        });
    }
    Ok(out)
}

pub const GT_POSES_HEADER: &str = "frame,x,y,theta,sigma";

/// Exact synthetic poses, printed with enough digits to round-trip.
pub fn format_gt_poses(poses: &[Pose]) -> String {
    let mut s = String::from(GT_POSES_HEADER);
    s.push('\n');
    for (i, p) in poses.iter().enumerate() {
        let _ = writeln!(s, "{i},{:?},{:?},{:?},{:?}", p.x, p.y, p.theta, p.sigma);
    }
    s
}

/// OTB-style (1-based) boxes.
pub fn format_otb_boxes(boxes: &[Rect]) -> String {
    serialize_ground_truth(&GroundTruthTrack {
        format: GtFormat::Otb,
        regions: boxes.iter().copied().map(GtRegion::Rect).collect(),
    })
}
