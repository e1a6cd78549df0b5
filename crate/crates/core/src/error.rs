use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot decode image {path}: {message}")]
    Decode { path: PathBuf, message: String },

    #[error("cannot write image {path}: {message}")]
    Encode { path: PathBuf, message: String },

    #[error("image has zero size")]
    EmptyImage,

    #[error("buffer of length {len} does not match a {width}x{height} image")]
    BufferSize {
        width: usize,
        height: usize,
        len: usize,
    },

    #[error("image is {width}x{height}, gradients need at least 3x3")]
    ImageTooSmall { width: usize, height: usize },

    #[error("region contains no edge amplitude")]
    Featureless,

    #[error("region does not intersect the image")]
    EmptyRegion,

    #[error("model has {found} points, at least {required} are required")]
    TooFewPoints { found: usize, required: usize },

    #[error("{matches} matches cannot constrain a similarity transform")]
    RankDeficient { matches: usize },

    #[error("frame is {got_width}x{got_height}, tracker was initialized with {width}x{height}")]
    FrameSize {
        width: usize,
        height: usize,
        got_width: usize,
        got_height: usize,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("frame {frame}: {message}")]
    Synth { frame: usize, message: String },

    #[error("length mismatch: {what}")]
    LengthMismatch { what: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
