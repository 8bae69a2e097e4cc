use thiserror::Error;

use crate::score::FormatError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("corrupt feature data: {0}")]
    Format(#[from] FormatError),
    #[error("MIDI parse error: {0}")]
    MidiParse(String),
    #[error("piece contains no note onsets")]
    EmptyPiece,
    #[error("degenerate image: {0}")]
    DegenerateImage(String),
    #[error("bootleg projection failed: {0}")]
    Projection(String),
    #[error("image decode error: {0}")]
    Image(#[from] image::ImageError),
    #[error("fixture spec error: {0}")]
    FixtureSpec(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("evaluation error: {0}")]
    Evaluation(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
