use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse failure category, used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: file not found")]
    MissingFile { path: PathBuf },

    #[error("bad magic at byte offset {offset}: expected {expected:?}, found {found:?}")]
    BadMagic {
        offset: usize,
        expected: String,
        found: String,
    },

    #[error("unsupported {format} version {version} at byte offset {offset}")]
    UnsupportedVersion {
        format: &'static str,
        version: u32,
        offset: usize,
    },

    #[error("truncated file: needed {needed} bytes at byte offset {offset}, {available} available")]
    TruncatedFile {
        offset: usize,
        needed: usize,
        available: usize,
    },

    #[error("{extra} unexpected trailing bytes at byte offset {offset}")]
    TrailingBytes { offset: usize, extra: usize },

    #[error("non-finite value {value} at element {index} (byte offset {offset})")]
    NonFiniteValue {
        index: usize,
        offset: usize,
        value: f64,
    },

    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("invalid split: train_end={train_end}, val_end={val_end}, length={len}")]
    InvalidSplit {
        train_end: usize,
        val_end: usize,
        len: usize,
    },

    #[error("invalid atlas: {0}")]
    InvalidAtlas(String),

    #[error("invalid coordinate table: {0}")]
    InvalidCoordinates(String),

    #[error("voxels {first} and {second} share grid coordinate {coord:?}")]
    DuplicateCoordinate {
        first: usize,
        second: usize,
        coord: [i32; 3],
    },

    #[error("{dir}: no subject directories (sub-*)")]
    NoSubjects { dir: PathBuf },

    #[error("empty row subset")]
    EmptySubset,

    #[error("voxel {voxel} is constant on the training split")]
    ZeroVariance { voxel: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("singular system: {0}")]
    SingularSystem(String),

    #[error("stage 1 selected no voxels")]
    EmptyStage1,

    #[error("{solver} did not converge after {iterations} iterations")]
    NotConverged {
        solver: &'static str,
        iterations: usize,
    },

    #[error("rank deficient: {rank} usable eigenvalues, {requested} components requested")]
    RankDeficient { rank: usize, requested: usize },

    #[error("mask mismatch: {0}")]
    MaskMismatch(String),

    #[error("zero-norm map in similarity computation")]
    ZeroNorm,

    #[error("too few profiles: {have} profiles for {need} clusters")]
    TooFewProfiles { have: usize, need: usize },

    #[error("unstable transition matrix: spectral radius {spectral_radius}")]
    UnstableSpec { spectral_radius: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile { path }
        } else {
            Error::Io { path, source }
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidArgument(_) | Error::Config(_) => ErrorKind::Usage,
            Error::SingularSystem(_)
            | Error::NotConverged { .. }
            | Error::RankDeficient { .. }
            | Error::ZeroNorm
            | Error::UnstableSpec { .. } => ErrorKind::Numerical,
            _ => ErrorKind::Data,
        }
    }
}
