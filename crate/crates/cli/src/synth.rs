use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Args;
use serde::Deserialize;
use shapetrack::bench::{format_gt_poses, format_otb_boxes, synth_sequence, textured_template, Occluder, SynthSpec};
use shapetrack::geometry::{Rect, Vec2};
use shapetrack::imaging::{load_frame, save_frame, GrayImage};
use shapetrack::model::Pose;
use shapetrack::{Error, Result};

use crate::fail;

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// JSON sequence description.
    pub spec: PathBuf,
    /// Output directory.
    #[arg(long, short, default_value = "synth")]
    pub out: PathBuf,
}

/// Generated stand-in for a template image.
#[derive(Deserialize, Debug)]
#[serde(deny_unknown_fields)]
struct Textured {
    width: usize,
    height: usize,
    object: Rect,
    #[serde(default)]
    seed: u64,
}

/// Constant per-frame increment: frame `i` gets `i * step` with scale
/// `1 + i * step.sigma`.
#[derive(Deserialize, Debug)]
#[serde(deny_unknown_fields)]
struct Motion {
    frames: usize,
    #[serde(default)]
    x: f64,
    #[serde(default)]
    y: f64,
    #[serde(default)]
    theta: f64,
    #[serde(default)]
    sigma: f64,
}

#[derive(Deserialize, Debug)]
#[serde(deny_unknown_fields)]
struct SpecFile {
    /// Template image, relative to the spec file.
    template: Option<PathBuf>,
    textured: Option<Textured>,
    trajectory: Option<Vec<Pose>>,
    motion: Option<Motion>,
    anchor: Option<Vec2>,
    #[serde(default)]
    noise_sigma: f64,
    #[serde(default)]
    illum: Vec<(f64, f64)>,
    #[serde(default)]
    occluders: Vec<Occluder>,
    #[serde(default)]
    seed: u64,
}

fn bad(message: impl Into<String>) -> Error {
    Error::Config(message.into())
}

fn load_spec(path: &Path) -> Result<SynthSpec> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let file: SpecFile = serde_json::from_str(&text)?;
    let template: GrayImage = match (&file.template, &file.textured) {
        (Some(t), None) => load_frame(path.parent().unwrap_or(Path::new(".")).join(t))?,
        (None, Some(t)) => textured_template(t.width, t.height, t.object, t.seed),
        _ => return Err(bad("give exactly one of \"template\" and \"textured\"")),
    };
    let trajectory = match (file.trajectory, &file.motion) {
        (Some(t), None) => t,
        (None, Some(m)) => (0..m.frames)
            .map(|i| {
                let k = i as f64;
                Pose::new(k * m.x, k * m.y, k * m.theta, 1.0 + k * m.sigma)
            })
            .collect(),
        _ => return Err(bad("give exactly one of \"trajectory\" and \"motion\"")),
    };
    Ok(SynthSpec {
        template,
        trajectory,
        anchor: file.anchor,
        noise_sigma: file.noise_sigma,
        illum: file.illum,
        occluders: file.occluders,
        seed: file.seed,
    })
}

fn execute(args: &SynthArgs) -> Result<usize> {
    let spec = load_spec(&args.spec)?;
    let seq = synth_sequence(&spec)?;
    let io = |path: PathBuf| move |source| Error::Io { path, source };
    std::fs::create_dir_all(&args.out).map_err(io(args.out.clone()))?;
    for (i, frame) in seq.frames.iter().enumerate() {
        save_frame(frame, args.out.join(format!("frame_{i:05}.png")))?;
    }
    let gt = args.out.join("gt_poses.csv");
    std::fs::write(&gt, format_gt_poses(&seq.poses)).map_err(io(gt.clone()))?;
    let boxes = args.out.join("groundtruth_rect.txt");
    std::fs::write(&boxes, format_otb_boxes(&seq.boxes)).map_err(io(boxes.clone()))?;
    Ok(seq.frames.len())
}

/// Exit 0 on success, 2 on a bad spec or failed write.
pub fn run(args: &SynthArgs) -> ExitCode {
    match execute(args) {
        Ok(n) => {
            println!("{n} frames written to {}", args.out.display());
            ExitCode::SUCCESS
        }
        Err(e) => fail(&e, 2),
    }
}
