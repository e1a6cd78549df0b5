use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::mpsc;
use std::time::Instant;

use clap::Args;
use shapetrack::bench::format_poses_csv;
use shapetrack::geometry::{Mask, PixelRect, Region};
use shapetrack::imaging::{load_frame, GrayImage};
use shapetrack::model::ShapeModel;
use shapetrack::tracker::{FrameResult, Tracker, TrackerConfig};
use shapetrack::{Error, Result};

use crate::{fail, frames, overlay};

#[derive(Args, Debug)]
#[command(group = clap::ArgGroup::new("source").required(true).args(["roi", "roi_mask", "load_model"]))]
pub struct TrackArgs {
    /// Directory of frames, or a text file listing frames.
    pub frames: String,
    /// First-frame region as x,y,w,h.
    #[arg(long, value_name = "X,Y,W,H")]
    pub roi: Option<String>,
    /// First-frame region as an image; non-zero pixels belong to it.
    #[arg(long, value_name = "PATH")]
    pub roi_mask: Option<PathBuf>,
    /// Start from a saved model instead of building one.
    #[arg(long, value_name = "PATH")]
    pub load_model: Option<PathBuf>,
    /// Save the final model.
    #[arg(long, value_name = "PATH")]
    pub save_model: Option<PathBuf>,
    /// Output directory.
    #[arg(long, short, default_value = "out")]
    pub out: PathBuf,
    /// Write an overlay PNG per frame.
    #[arg(long)]
    pub overlay: bool,
    /// Write 0 in the timing column so runs compare byte for byte.
    #[arg(long)]
    pub no_timings: bool,
    /// Worker threads for the search; all cores when unset.
    #[arg(long, value_name = "N")]
    pub threads: Option<usize>,
}

enum Failure {
    Input(Error),
    Untrackable(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Input(e)
    }
}

pub fn run(args: &TrackArgs, config: TrackerConfig) -> ExitCode {
    let result = match args.threads {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| execute(args, config)),
            Err(e) => return fail(&e, 2),
        },
        None => execute(args, config),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(e)) => fail(&e, 2),
        Err(Failure::Untrackable(e)) => fail(&format!("cannot track the region: {e}"), 3),
    }
}

fn load_mask(path: &Path, width: usize, height: usize) -> Result<Region> {
    let img = load_frame(path)?;
    if img.width() != width || img.height() != height {
        return Err(Error::Config(format!(
            "mask is {}x{}, frames are {width}x{height}",
            img.width(),
            img.height()
        )));
    }
    let data = img.data().iter().map(|&v| v > 0.0).collect();
    Ok(Region::Mask(Mask::new(width, height, data)?))
}

fn is_untrackable(e: &Error) -> bool {
    matches!(
        e,
        Error::Featureless | Error::EmptyRegion | Error::TooFewPoints { .. } | Error::RankDeficient { .. }
    )
}

fn execute(args: &TrackArgs, config: TrackerConfig) -> std::result::Result<(), Failure> {
    let paths = frames::list_frames(&args.frames)?;
    std::fs::create_dir_all(&args.out).map_err(|source| Error::Io {
        path: args.out.clone(),
        source,
    })?;
    let (tx, rx) = mpsc::sync_channel::<Result<GrayImage>>(1);
    let decode_paths = paths.clone();
    std::thread::scope(|s| {
        s.spawn(move || {
            for p in &decode_paths {
                if tx.send(load_frame(p)).is_err() {
                    break;
                }
            }
        });
        let out = track_stream(args, config, rx.iter());
        drop(rx);
        out
    })
}

fn track_stream(
    args: &TrackArgs,
    config: TrackerConfig,
    mut frames: impl Iterator<Item = Result<GrayImage>>,
) -> std::result::Result<(), Failure> {
    let start = Instant::now();
    let first = frames.next().expect("at least one frame")?;
    let mut results: Vec<FrameResult> = Vec::new();
    let mut tracker = if let Some(path) = &args.load_model {
        let model = ShapeModel::load(path)?;
        let mut t = Tracker::from_model(model, first.width(), first.height(), config).map_err(Failure::Untrackable)?;
        results.push(t.track_frame(&first)?);
        t
    } else {
        let roi = match (&args.roi, &args.roi_mask) {
            (Some(r), _) => Region::Rect(PixelRect::parse(r)?),
            (None, Some(m)) => load_mask(m, first.width(), first.height())?,
            (None, None) => unreachable!("argument group requires a region"),
        };
        let t = Tracker::init(&first, &roi, config).map_err(|e| {
            if is_untrackable(&e) {
                Failure::Untrackable(e)
            } else {
                Failure::Input(e)
            }
        })?;
        results.push(t.initial_result());
        t
    };
    let write_overlay = |frame: &GrayImage, t: &Tracker, r: &FrameResult| -> Result<()> {
        let path = args.out.join(format!("overlay_{:05}.png", r.frame_index));
        overlay::render(frame, t.model(), r).save(&path).map_err(|e| Error::Encode {
            path,
            message: e.to_string(),
        })
    };
    if args.overlay {
        write_overlay(&first, &tracker, &results[0])?;
    }
    for frame in frames {
        let frame = frame?;
        let r = tracker.track_frame(&frame)?;
        if args.overlay {
            write_overlay(&frame, &tracker, &r)?;
        }
        results.push(r);
    }
    let poses = args.out.join("poses.csv");
    std::fs::write(&poses, format_poses_csv(&results, !args.no_timings)).map_err(|source| Error::Io {
        path: poses.clone(),
        source,
    })?;
    if let Some(path) = &args.save_model {
        tracker.model().save(path)?;
    }
    let lost = results.iter().filter(|r| !r.status.is_tracked()).count();
    let micros: u64 = results.iter().skip(1).map(|r| r.timings.total).sum();
    let tracker_fps = if micros > 0 {
        (results.len() - 1) as f64 * 1e6 / micros as f64
    } else {
        0.0
    };
    println!(
        "{} frames, {lost} lost, tracker {tracker_fps:.1} fps, overall {:.1} fps, poses in {}",
        results.len(),
        results.len() as f64 / start.elapsed().as_secs_f64(),
        poses.display()
    );
    Ok(())
}
