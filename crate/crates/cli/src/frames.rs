//! Locating the frames of a sequence.

use std::path::{Path, PathBuf};

use shapetrack::{Error, Result};

const EXTENSIONS: &[&str] = &["png", "jpg", "jpeg", "bmp", "pgm", "pnm", "ppm", "tif", "tiff"];

fn is_frame(p: &Path) -> bool {
    p.is_file()
        && p.extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

/// Frame paths in lexicographic order. `source` is a directory of images
/// or a text file listing one path per line (relative paths resolve
/// against the list's directory).
pub fn list_frames(source: &str) -> Result<Vec<PathBuf>> {
    let path = Path::new(source);
    let io = |source: std::io::Error| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut frames: Vec<PathBuf> = if path.is_dir() {
        std::fs::read_dir(path)
            .map_err(io)?
            .map(|e| e.map(|e| e.path()).map_err(io))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .filter(|p| is_frame(p))
            .collect()
    } else {
        let text = std::fs::read_to_string(path).map_err(io)?;
        let base = path.parent().unwrap_or(Path::new("."));
        text.lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(|l| base.join(l))
            .collect()
    };
    frames.sort();
    if frames.is_empty() {
        return Err(Error::Config(format!("no frames found at {source:?}")));
    }
    Ok(frames)
}
