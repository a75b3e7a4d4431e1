use thiserror::Error;

use crate::fitengine::OdmrWindow;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse grouping of errors, used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Io,
    Format,
    Mismatch,
    Input,
    Numeric,
}

impl ErrorCategory {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCategory::Io => "io",
            ErrorCategory::Format => "format",
            ErrorCategory::Mismatch => "mismatch",
            ErrorCategory::Input => "input",
            ErrorCategory::Numeric => "numeric",
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("bad magic {0:?}, expected \"QDC1\"")]
    BadMagic([u8; 4]),

    #[error("unsupported container version {0}")]
    UnsupportedVersion(u32),

    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("payload checksum mismatch: stored {stored:#018x}, computed {computed:#018x}")]
    ChecksumMismatch { stored: u64, computed: u64 },

    #[error("sweep axis is not strictly increasing at index {index}")]
    NonMonotonicSweep { index: usize },

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("invalid sweep axis: {0}")]
    InvalidSweep(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-positive reference intensity at point {point}, y {y}, x {x}")]
    NonPositiveReference { point: usize, y: usize, x: usize },

    #[error("zero channel sum at point {point}, y {y}, x {x}")]
    ZeroSum { point: usize, y: usize, x: usize },

    #[error("negative intensity at point {point}, y {y}, x {x}")]
    NegativeIntensity { point: usize, y: usize, x: usize },

    #[error("pixel ({x}, {y}) outside {width}x{height} image")]
    IndexOutOfRange {
        x: usize,
        y: usize,
        width: usize,
        height: usize,
    },

    #[error("window {w}x{h} at ({x0}, {y0}) exceeds {width}x{height} image")]
    WindowOutOfBounds {
        x0: usize,
        y0: usize,
        w: usize,
        h: usize,
        width: usize,
        height: usize,
    },

    #[error("channel layout mismatch: expected {expected}, found {found}")]
    ChannelMismatch {
        expected: &'static str,
        found: &'static str,
    },

    #[error("quantity mismatch: model expects {expected}, cube holds {found}")]
    QuantityMismatch {
        expected: &'static str,
        found: &'static str,
    },

    #[error("sweep unit mismatch: model expects {expected}, axis is {found}")]
    UnitMismatch {
        expected: &'static str,
        found: &'static str,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("input series contains non-finite values")]
    NonFiniteInput,

    #[error("series too short: {points} points for {params} free parameters")]
    SeriesTooShort { points: usize, params: usize },

    #[error("seeding failed: {0}")]
    SeedingFailed(String),

    #[error("expected {expected} resonance groups, found {}", found.len())]
    PeakCount {
        expected: usize,
        found: Vec<OdmrWindow>,
    },

    #[error("angle set is rank deficient: {0}")]
    RankDeficient(String),

    #[error("value out of domain: {0}")]
    OutOfDomain(String),

    #[error("invalid pairing: {0}")]
    Pairing(String),
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Io(_) | Error::Csv(_) => ErrorCategory::Io,
            Error::BadMagic(_)
            | Error::UnsupportedVersion(_)
            | Error::Truncated { .. }
            | Error::ChecksumMismatch { .. }
            | Error::NonMonotonicSweep { .. }
            | Error::MalformedHeader(_) => ErrorCategory::Format,
            Error::ChannelMismatch { .. }
            | Error::QuantityMismatch { .. }
            | Error::UnitMismatch { .. }
            | Error::DimensionMismatch(_)
            | Error::Pairing(_) => ErrorCategory::Mismatch,
            Error::SeedingFailed(_) | Error::PeakCount { .. } | Error::RankDeficient(_) => {
                ErrorCategory::Numeric
            }
            _ => ErrorCategory::Input,
        }
    }
}
