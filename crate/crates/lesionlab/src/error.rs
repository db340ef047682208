//! Crate-wide error type.

use std::path::PathBuf;

use crate::volume::Dims;

/// Everything that can go wrong across the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// The file does not start a single-file NIfTI-1 payload.
    #[error("bad NIfTI magic {0:?} (expected \"n+1\\0\")")]
    BadMagic([u8; 4]),

    /// Paired `.hdr`/`.img` NIfTI (magic `ni1\0`) is recognized but not handled.
    #[error("paired .hdr/.img NIfTI files are not supported; convert to single-file .nii")]
    UnsupportedPairedNifti,

    /// Only float32 (16) and uint8 (2) payloads are handled.
    #[error("unsupported NIfTI datatype code {0} (supported: 2 = uint8, 16 = float32)")]
    UnsupportedDatatype(i16),

    /// The payload is shorter than the header dimensions imply.
    #[error("corrupt file: header implies {expected} data bytes, found {actual}")]
    CorruptLength { expected: usize, actual: usize },

    /// A header field holds a value the reader cannot act on.
    #[error("invalid NIfTI header: {0}")]
    InvalidHeader(String),

    /// A label voxel holds a code outside 0..=4.
    #[error("invalid label code {code} at voxel {index} (valid codes are 0..=4)")]
    InvalidLabelCode { code: u8, index: usize },

    /// An intensity or probability voxel is NaN or infinite.
    #[error("non-finite value at voxel {0}")]
    NonFiniteValue(usize),

    /// A probability vector does not sum to 1 within tolerance.
    #[error("probability vector at voxel {index} sums to {sum}, expected 1 within 1e-4")]
    UnnormalizedProbability { index: usize, sum: f32 },

    #[error("I/O failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Two volumes that must share a grid do not.
    #[error("dimension mismatch: {0} vs {1}")]
    DimsMismatch(Dims, Dims),

    /// An operation that needs foreground voxels received none.
    #[error("mask has no foreground voxels")]
    EmptyMask,

    /// Rejection sampling exhausted its placement attempts.
    #[error("no collision-free placement found after {tries} attempts")]
    NoPlacementFound { tries: u32 },

    /// A synthesizer was handed labels outside its support region.
    #[error("placed label extends outside the synthesis support at voxel {0}")]
    LabelOutsideSupport(usize),

    /// The donor pool has no usable entry for the current case.
    #[error("donor pool has no eligible entry for case {case_id}")]
    EmptyPool { case_id: String },

    /// An ensemble was requested over zero volumes.
    #[error("cannot ensemble an empty list of volumes")]
    EmptyList,

    /// Paired statistics over vectors of different lengths.
    #[error("paired vectors differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),

    /// Paired statistics need at least two observations.
    #[error("need at least 2 paired observations, got {0}")]
    TooFewSamples(usize),

    /// An aggregation selected no scores (e.g. a region absent from every case).
    #[error("no scores selected: {0}")]
    EmptySelection(String),

    /// A phantom lesion does not fit inside the brain sphere.
    #[error("lesion at {center:?} with radius {radius} extends outside the brain (radius {brain_radius})")]
    LesionOutsideBrain {
        center: [f32; 3],
        radius: f32,
        brain_radius: f32,
    },

    /// A configuration value is out of range or inconsistent.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// A report, manifest, or score matrix could not be parsed.
    #[error("malformed input {path}: {detail}")]
    MalformedInput { path: PathBuf, detail: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
