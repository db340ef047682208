//! Voxel grid types shared by every pipeline stage.
//!
//! All volumes are dense, row-major with x fastest, matching the on-disk
//! NIfTI payload order: `index = x + nx * (y + ny * z)`. Label volumes use
//! the BraTS post-treatment coding:
//!
//! | code | meaning                                   |
//! |------|-------------------------------------------|
//! | 0    | background                                |
//! | 1    | non-enhancing tumor core (NETC)           |
//! | 2    | surrounding non-enhancing FLAIR hyperintensity (SNFH) |
//! | 3    | enhancing tissue (ET)                     |
//! | 4    | resection cavity (RC, post-treatment only)|

mod nifti;

pub use nifti::{
    load_intensity, load_intensity_with_header, load_label, load_label_with_header,
    load_probability, save_intensity, save_intensity_with, save_label, save_label_with,
    save_probability, NiftiHeader,
};

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Grid shape plus physical voxel spacing in millimetres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dims {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    /// Voxel edge lengths in mm, per axis.
    pub spacing: [f32; 3],
}

impl Dims {
    /// Unit-spaced grid. Panics on a zero extent.
    pub fn new(nx: usize, ny: usize, nz: usize) -> Self {
        assert!(nx > 0 && ny > 0 && nz > 0, "zero-extent volume");
        Dims {
            nx,
            ny,
            nz,
            spacing: [1.0; 3],
        }
    }

    pub fn cubic(n: usize) -> Self {
        Dims::new(n, n, n)
    }

    pub fn with_spacing(mut self, spacing: [f32; 3]) -> Self {
        assert!(spacing.iter().all(|s| *s > 0.0), "non-positive spacing");
        self.spacing = spacing;
        self
    }

    #[inline]
    pub fn voxel_count(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        debug_assert!(x < self.nx && y < self.ny && z < self.nz);
        x + self.nx * (y + self.ny * z)
    }

    #[inline]
    pub fn coords(&self, index: usize) -> (usize, usize, usize) {
        let x = index % self.nx;
        let y = (index / self.nx) % self.ny;
        let z = index / (self.nx * self.ny);
        (x, y, z)
    }

    /// Same grid shape, ignoring spacing.
    pub fn same_shape(&self, other: &Dims) -> bool {
        self.nx == other.nx && self.ny == other.ny && self.nz == other.nz
    }
}

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.nx, self.ny, self.nz)
    }
}

fn check_same_grid(a: &Dims, b: &Dims) -> Result<()> {
    if a.same_shape(b) {
        Ok(())
    } else {
        Err(Error::DimsMismatch(*a, *b))
    }
}

/// One MRI contrast, float32 per voxel.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityVolume {
    pub dims: Dims,
    pub data: Vec<f32>,
}

impl IntensityVolume {
    /// Validates length and finiteness.
    pub fn new(dims: Dims, data: Vec<f32>) -> Result<Self> {
        if data.len() != dims.voxel_count() {
            return Err(Error::CorruptLength {
                expected: dims.voxel_count(),
                actual: data.len(),
            });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue(i));
        }
        Ok(IntensityVolume { dims, data })
    }

    pub fn zeros(dims: Dims) -> Self {
        IntensityVolume {
            data: vec![0.0; dims.voxel_count()],
            dims,
        }
    }
}

/// Segmentation labels, one code 0..=4 per voxel.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelVolume {
    pub dims: Dims,
    pub data: Vec<u8>,
}

impl LabelVolume {
    /// Validates length and the 0..=4 code range.
    pub fn new(dims: Dims, data: Vec<u8>) -> Result<Self> {
        if data.len() != dims.voxel_count() {
            return Err(Error::CorruptLength {
                expected: dims.voxel_count(),
                actual: data.len(),
            });
        }
        if let Some(i) = data.iter().position(|c| *c > 4) {
            return Err(Error::InvalidLabelCode {
                code: data[i],
                index: i,
            });
        }
        Ok(LabelVolume { dims, data })
    }

    pub fn zeros(dims: Dims) -> Self {
        LabelVolume {
            data: vec![0; dims.voxel_count()],
            dims,
        }
    }

    pub fn contains_code(&self, code: u8) -> bool {
        self.data.contains(&code)
    }

    /// Inclusive bounding box of nonzero voxels, or None when empty.
    pub fn nonzero_bbox(&self) -> Option<([usize; 3], [usize; 3])> {
        let mut lo = [usize::MAX; 3];
        let mut hi = [0usize; 3];
        let mut any = false;
        for (i, &c) in self.data.iter().enumerate() {
            if c != 0 {
                any = true;
                let (x, y, z) = self.dims.coords(i);
                let p = [x, y, z];
                for a in 0..3 {
                    lo[a] = lo[a].min(p[a]);
                    hi[a] = hi[a].max(p[a]);
                }
            }
        }
        any.then_some((lo, hi))
    }
}

/// Boolean mask over a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryVolume {
    pub dims: Dims,
    pub data: Vec<bool>,
}

impl BinaryVolume {
    pub fn new_false(dims: Dims) -> Self {
        BinaryVolume {
            data: vec![false; dims.voxel_count()],
            dims,
        }
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(dims.voxel_count());
        for z in 0..dims.nz {
            for y in 0..dims.ny {
                for x in 0..dims.nx {
                    data.push(f(x, y, z));
                }
            }
        }
        BinaryVolume { dims, data }
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|v| **v).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|v| *v)
    }
}

/// Number of per-voxel channels in a probability volume: background + 4 classes.
pub const PROB_CHANNELS: usize = 5;

/// Soft model output: five channels per voxel (background, NETC, SNFH, ET, RC),
/// stored channel-planar (`data[c * voxel_count + i]`), each per-voxel vector
/// summing to 1 within 1e-4.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityVolume {
    pub dims: Dims,
    data: Vec<f32>,
}

impl ProbabilityVolume {
    /// Validates length, finiteness, and per-voxel normalization.
    pub fn new(dims: Dims, data: Vec<f32>) -> Result<Self> {
        let n = dims.voxel_count();
        if data.len() != n * PROB_CHANNELS {
            return Err(Error::CorruptLength {
                expected: n * PROB_CHANNELS,
                actual: data.len(),
            });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue(i));
        }
        for i in 0..n {
            let mut sum = 0.0f32;
            for c in 0..PROB_CHANNELS {
                sum += data[c * n + i];
            }
            if (sum - 1.0).abs() > 1e-4 {
                return Err(Error::UnnormalizedProbability { index: i, sum });
            }
        }
        Ok(ProbabilityVolume { dims, data })
    }

    /// Raw channel-planar storage.
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.dims.voxel_count();
        &self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn at(&self, voxel: usize) -> [f32; PROB_CHANNELS] {
        let n = self.dims.voxel_count();
        std::array::from_fn(|c| self.data[c * n + voxel])
    }
}

/// Treatment phase of a case; RC only exists after surgery.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Pre,
    Post,
}

impl std::str::FromStr for Phase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "pre" => Ok(Phase::Pre),
            "post" => Ok(Phase::Post),
            other => Err(Error::InvalidConfig(format!(
                "unknown phase {other:?} (expected \"pre\" or \"post\")"
            ))),
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Pre => "pre",
            Phase::Post => "post",
        })
    }
}

/// The four MRI contrasts of a case, in canonical file order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Modality {
    T1n,
    T1c,
    T2w,
    T2f,
}

impl Modality {
    pub const ALL: [Modality; 4] = [Modality::T1n, Modality::T1c, Modality::T2w, Modality::T2f];

    /// Suffix used in case file names, e.g. `<id>-t1c.nii.gz`.
    pub fn suffix(self) -> &'static str {
        match self {
            Modality::T1n => "t1n",
            Modality::T1c => "t1c",
            Modality::T2w => "t2w",
            Modality::T2f => "t2f",
        }
    }
}

/// Evaluation regions: four exclusive classes plus the two composites.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[allow(clippy::upper_case_acronyms)]
pub enum Region {
    ET,
    NETC,
    RC,
    SNFH,
    TC,
    WT,
}

impl Region {
    pub const ALL: [Region; 6] = [
        Region::ET,
        Region::NETC,
        Region::RC,
        Region::SNFH,
        Region::TC,
        Region::WT,
    ];

    /// Label codes belonging to the region. TC = NETC + ET, WT = TC + SNFH.
    pub fn codes(self) -> &'static [u8] {
        match self {
            Region::ET => &[3],
            Region::NETC => &[1],
            Region::RC => &[4],
            Region::SNFH => &[2],
            Region::TC => &[1, 3],
            Region::WT => &[1, 2, 3],
        }
    }

    #[inline]
    pub fn contains(self, code: u8) -> bool {
        match self {
            Region::ET => code == 3,
            Region::NETC => code == 1,
            Region::RC => code == 4,
            Region::SNFH => code == 2,
            Region::TC => code == 1 || code == 3,
            Region::WT => code >= 1 && code <= 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Region::ET => "ET",
            Region::NETC => "NETC",
            Region::RC => "RC",
            Region::SNFH => "SNFH",
            Region::TC => "TC",
            Region::WT => "WT",
        }
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Region {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "ET" => Ok(Region::ET),
            "NETC" => Ok(Region::NETC),
            "RC" => Ok(Region::RC),
            "SNFH" => Ok(Region::SNFH),
            "TC" => Ok(Region::TC),
            "WT" => Ok(Region::WT),
            other => Err(Error::InvalidConfig(format!("unknown region {other:?}"))),
        }
    }
}

/// Binary membership mask of a region within a label volume.
pub fn region_mask(label: &LabelVolume, region: Region) -> BinaryVolume {
    BinaryVolume {
        dims: label.dims,
        data: label.data.iter().map(|&c| region.contains(c)).collect(),
    }
}

/// One patient: four co-registered contrasts plus the segmentation.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiModalCase {
    pub id: String,
    pub modalities: [IntensityVolume; 4],
    pub label: LabelVolume,
    pub phase: Phase,
}

impl MultiModalCase {
    /// Validates that all five volumes share a grid and that pre-treatment
    /// cases carry no resection cavity.
    pub fn new(
        id: impl Into<String>,
        modalities: [IntensityVolume; 4],
        label: LabelVolume,
        phase: Phase,
    ) -> Result<Self> {
        for m in &modalities {
            check_same_grid(&m.dims, &label.dims)?;
        }
        if phase == Phase::Pre {
            if let Some(i) = label.data.iter().position(|&c| c == 4) {
                return Err(Error::InvalidLabelCode { code: 4, index: i });
            }
        }
        Ok(MultiModalCase {
            id: id.into(),
            modalities,
            label,
            phase,
        })
    }

    pub fn dims(&self) -> Dims {
        self.label.dims
    }

    #[inline]
    pub fn modality(&self, m: Modality) -> &IntensityVolume {
        &self.modalities[m as usize]
    }

    /// Voxels where any contrast is nonzero; on skull-stripped data this is
    /// the brain.
    pub fn brain_mask(&self) -> BinaryVolume {
        let n = self.dims().voxel_count();
        let mut data = vec![false; n];
        for m in &self.modalities {
            for (d, &v) in data.iter_mut().zip(&m.data) {
                *d |= v != 0.0;
            }
        }
        BinaryVolume {
            dims: self.dims(),
            data,
        }
    }
}
