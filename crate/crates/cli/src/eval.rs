use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Args;
use shapetrack::bench::{parse_ground_truth, parse_poses_csv, sequence_report, GtFormat};
use shapetrack::model::ShapeModel;
use shapetrack::{Error, Result};

use crate::fail;

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Pose table written by `track`.
    pub poses: PathBuf,
    /// Ground-truth file.
    #[arg(long)]
    pub gt: PathBuf,
    /// Ground-truth flavour: otb or vot.
    #[arg(long, default_value = "otb")]
    pub gt_format: GtFormat,
    /// Model whose points give the tracked box.
    #[arg(long)]
    pub model: PathBuf,
    /// Directory for report.csv and summary.json; next to the poses when unset.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write(path: PathBuf, text: &str) -> Result<()> {
    std::fs::write(&path, text).map_err(|source| Error::Io { path, source })
}

fn with_path(path: &Path, e: Error) -> String {
    format!("{}: {e}", path.display())
}

/// Exit 0 when the run is robust, 1 when it is not, 2 when inputs fail.
pub fn run(args: &EvalArgs) -> ExitCode {
    let results = match read(&args.poses).and_then(|t| parse_poses_csv(&t)) {
        Ok(r) => r,
        Err(e) => return fail(&with_path(&args.poses, e), 2),
    };
    let gt = match parse_ground_truth(&args.gt, args.gt_format) {
        Ok(g) => g,
        Err(e) => return fail(&with_path(&args.gt, e), 2),
    };
    let model = match ShapeModel::load(&args.model) {
        Ok(m) => m,
        Err(e) => return fail(&with_path(&args.model, e), 2),
    };
    if let Some(w) = gt.frame_count_warning(results.len()) {
        eprintln!("warning: {w}");
    }
    let report = match sequence_report(&results, &gt, &model) {
        Ok(r) => r,
        Err(e) => return fail(&e, 2),
    };
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| args.poses.parent().map(Path::to_path_buf).unwrap_or_default());
    let summary = serde_json::to_string_pretty(&report.summary()).expect("summary serializes");
    let written = std::fs::create_dir_all(&out)
        .map_err(|source| Error::Io {
            path: out.clone(),
            source,
        })
        .and_then(|_| write(out.join("report.csv"), &report.to_csv(&results)))
        .and_then(|_| write(out.join("summary.json"), &format!("{summary}\n")));
    if let Err(e) = written {
        return fail(&e, 2);
    }
    println!("{summary}");
    if report.robust {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}
