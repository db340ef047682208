//! Minimal single-file NIfTI-1 reader/writer.
//!
//! Deliberately narrow: little-endian, magic `n+1\0`, datatypes 2 (uint8
//! labels) and 16 (float32 intensities), 3-D grids plus the 4-D layout used
//! for five-channel probability volumes. Files ending in `.gz` are
//! gzip-compressed. Orientation and affine header fields are carried through
//! byte-for-byte by the `*_with` variants but never interpreted.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use crate::error::{Error, Result};
use crate::volume::{Dims, IntensityVolume, LabelVolume, ProbabilityVolume, PROB_CHANNELS};

pub const HEADER_LEN: usize = 348;
const DEFAULT_VOX_OFFSET: u32 = 352;
const MAGIC_SINGLE: [u8; 4] = *b"n+1\0";
const MAGIC_PAIRED: [u8; 4] = *b"ni1\0";

const DT_UINT8: i16 = 2;
const DT_FLOAT32: i16 = 16;

/// Byte offsets of the header fields this reader touches.
mod offsets {
    pub const SIZEOF_HDR: usize = 0;
    pub const DIM: usize = 40; // i16[8]
    pub const DATATYPE: usize = 70;
    pub const BITPIX: usize = 72;
    pub const PIXDIM: usize = 76; // f32[8]
    pub const VOX_OFFSET: usize = 108;
    pub const SCL_SLOPE: usize = 112;
    pub const SCL_INTER: usize = 116;
    pub const XYZT_UNITS: usize = 123;
    pub const MAGIC: usize = 344;
}

/// Raw 348-byte header, kept so that writers can round-trip fields they do
/// not understand (orientation, intent, description).
#[derive(Clone)]
pub struct NiftiHeader {
    bytes: [u8; HEADER_LEN],
}

impl std::fmt::Debug for NiftiHeader {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("NiftiHeader")
            .field("dim", &self.dim())
            .field("datatype", &self.datatype())
            .field("vox_offset", &self.vox_offset())
            .finish()
    }
}

impl NiftiHeader {
    fn read_i16(&self, at: usize) -> i16 {
        i16::from_le_bytes([self.bytes[at], self.bytes[at + 1]])
    }

    fn read_f32(&self, at: usize) -> f32 {
        f32::from_le_bytes(self.bytes[at..at + 4].try_into().unwrap())
    }

    fn write_i16(&mut self, at: usize, v: i16) {
        self.bytes[at..at + 2].copy_from_slice(&v.to_le_bytes());
    }

    fn write_i32(&mut self, at: usize, v: i32) {
        self.bytes[at..at + 4].copy_from_slice(&v.to_le_bytes());
    }

    fn write_f32(&mut self, at: usize, v: f32) {
        self.bytes[at..at + 4].copy_from_slice(&v.to_le_bytes());
    }

    pub fn raw(&self) -> &[u8; HEADER_LEN] {
        &self.bytes
    }

    pub fn dim(&self) -> [i16; 8] {
        std::array::from_fn(|i| self.read_i16(offsets::DIM + 2 * i))
    }

    pub fn datatype(&self) -> i16 {
        self.read_i16(offsets::DATATYPE)
    }

    pub fn pixdim(&self) -> [f32; 8] {
        std::array::from_fn(|i| self.read_f32(offsets::PIXDIM + 4 * i))
    }

    pub fn vox_offset(&self) -> f32 {
        self.read_f32(offsets::VOX_OFFSET)
    }

    fn magic(&self) -> [u8; 4] {
        self.bytes[offsets::MAGIC..offsets::MAGIC + 4]
            .try_into()
            .unwrap()
    }

    /// Fresh header with every field this writer does not own zeroed.
    fn blank() -> Self {
        NiftiHeader {
            bytes: [0; HEADER_LEN],
        }
    }

    /// Overwrites the fields that describe the payload, leaving the rest
    /// (orientation, description, intent) untouched.
    fn stamp(&mut self, dims: Dims, channels: Option<usize>, datatype: i16, bitpix: i16) {
        self.write_i32(offsets::SIZEOF_HDR, HEADER_LEN as i32);
        let mut dim = [1i16; 8];
        dim[0] = if channels.is_some() { 4 } else { 3 };
        dim[1] = dims.nx as i16;
        dim[2] = dims.ny as i16;
        dim[3] = dims.nz as i16;
        if let Some(c) = channels {
            dim[4] = c as i16;
        }
        for (i, d) in dim.iter().enumerate() {
            self.write_i16(offsets::DIM + 2 * i, *d);
        }
        self.write_i16(offsets::DATATYPE, datatype);
        self.write_i16(offsets::BITPIX, bitpix);
        let mut pixdim = [0.0f32; 8];
        pixdim[0] = 1.0;
        pixdim[1] = dims.spacing[0];
        pixdim[2] = dims.spacing[1];
        pixdim[3] = dims.spacing[2];
        if channels.is_some() {
            pixdim[4] = 1.0;
        }
        for (i, p) in pixdim.iter().enumerate() {
            self.write_f32(offsets::PIXDIM + 4 * i, *p);
        }
        self.write_f32(offsets::VOX_OFFSET, DEFAULT_VOX_OFFSET as f32);
        self.write_f32(offsets::SCL_SLOPE, 1.0);
        self.write_f32(offsets::SCL_INTER, 0.0);
        self.bytes[offsets::XYZT_UNITS] = 2; // millimetres
        self.bytes[offsets::MAGIC..offsets::MAGIC + 4].copy_from_slice(&MAGIC_SINGLE);
    }
}

fn is_gz(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("gz"))
}

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    if is_gz(path) {
        GzDecoder::new(file)
            .read_to_end(&mut bytes)
            .map_err(|e| Error::io(path, e))?;
    } else {
        let mut file = file;
        file.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    }
    Ok(bytes)
}

fn write_all(path: &Path, bytes: &[u8]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    if is_gz(path) {
        let mut enc = GzEncoder::new(file, Compression::default());
        enc.write_all(bytes).map_err(|e| Error::io(path, e))?;
        enc.finish().map_err(|e| Error::io(path, e))?;
    } else {
        let mut file = file;
        file.write_all(bytes).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

struct Parsed {
    header: NiftiHeader,
    dims: Dims,
    /// Size of the fourth dimension; 1 for scalar volumes.
    channels: usize,
    payload_start: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Parsed> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::CorruptLength {
            expected: HEADER_LEN,
            actual: bytes.len(),
        });
    }
    let mut header = NiftiHeader::blank();
    header.bytes.copy_from_slice(&bytes[..HEADER_LEN]);

    let magic = header.magic();
    if magic == MAGIC_PAIRED {
        return Err(Error::UnsupportedPairedNifti);
    }
    if magic != MAGIC_SINGLE {
        return Err(Error::BadMagic(magic));
    }

    let dim = header.dim();
    let ndim = dim[0];
    if !(3..=4).contains(&ndim) {
        return Err(Error::InvalidHeader(format!(
            "dim[0] = {ndim}, expected 3 or 4"
        )));
    }
    if dim[1] < 1 || dim[2] < 1 || dim[3] < 1 {
        return Err(Error::InvalidHeader(format!(
            "non-positive spatial extent {:?}",
            &dim[1..4]
        )));
    }
    let channels = if ndim == 4 {
        if dim[4] < 1 {
            return Err(Error::InvalidHeader(format!("dim[4] = {}", dim[4])));
        }
        dim[4] as usize
    } else {
        1
    };

    let pixdim = header.pixdim();
    let spacing = [pixdim[1], pixdim[2], pixdim[3]];
    if spacing.iter().any(|s| !s.is_finite() || *s <= 0.0) {
        return Err(Error::InvalidHeader(format!(
            "non-positive voxel spacing {spacing:?}"
        )));
    }
    let dims = Dims::new(dim[1] as usize, dim[2] as usize, dim[3] as usize)
        .with_spacing(spacing);

    let vox_offset = header.vox_offset();
    if !vox_offset.is_finite() || vox_offset < HEADER_LEN as f32 {
        return Err(Error::InvalidHeader(format!("vox_offset = {vox_offset}")));
    }

    Ok(Parsed {
        header,
        dims,
        channels,
        payload_start: vox_offset as usize,
    })
}

fn payload<'a>(bytes: &'a [u8], parsed: &Parsed, elem_size: usize) -> Result<&'a [u8]> {
    let n = parsed.dims.voxel_count() * parsed.channels * elem_size;
    let start = parsed.payload_start;
    let available = bytes.len().saturating_sub(start);
    if available < n {
        return Err(Error::CorruptLength {
            expected: n,
            actual: available,
        });
    }
    Ok(&bytes[start..start + n])
}

fn expect_scalar(parsed: &Parsed) -> Result<()> {
    if parsed.channels != 1 {
        return Err(Error::InvalidHeader(format!(
            "expected a scalar volume, found {} channels",
            parsed.channels
        )));
    }
    Ok(())
}

fn decode_f32(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect()
}

fn encode_f32(data: &[f32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(data.len() * 4);
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Loads a float32 intensity volume.
pub fn load_intensity(path: impl AsRef<Path>) -> Result<IntensityVolume> {
    load_intensity_with_header(path).map(|(v, _)| v)
}

/// Loads a float32 intensity volume together with its raw header.
pub fn load_intensity_with_header(
    path: impl AsRef<Path>,
) -> Result<(IntensityVolume, NiftiHeader)> {
    let path = path.as_ref();
    let bytes = read_all(path)?;
    let parsed = parse_header(&bytes)?;
    expect_scalar(&parsed)?;
    match parsed.header.datatype() {
        DT_FLOAT32 => {}
        DT_UINT8 => {
            return Err(Error::InvalidHeader(
                "datatype 2 (uint8) is a label payload, expected float32".into(),
            ))
        }
        other => return Err(Error::UnsupportedDatatype(other)),
    }
    let data = decode_f32(payload(&bytes, &parsed, 4)?);
    Ok((IntensityVolume::new(parsed.dims, data)?, parsed.header))
}

/// Loads a uint8 label volume, validating the 0..=4 code range.
pub fn load_label(path: impl AsRef<Path>) -> Result<LabelVolume> {
    load_label_with_header(path).map(|(v, _)| v)
}

/// Loads a uint8 label volume together with its raw header.
pub fn load_label_with_header(path: impl AsRef<Path>) -> Result<(LabelVolume, NiftiHeader)> {
    let path = path.as_ref();
    let bytes = read_all(path)?;
    let parsed = parse_header(&bytes)?;
    expect_scalar(&parsed)?;
    match parsed.header.datatype() {
        DT_UINT8 => {}
        DT_FLOAT32 => {
            return Err(Error::InvalidHeader(
                "datatype 16 (float32) is an intensity payload, expected uint8".into(),
            ))
        }
        other => return Err(Error::UnsupportedDatatype(other)),
    }
    let data = payload(&bytes, &parsed, 1)?.to_vec();
    Ok((LabelVolume::new(parsed.dims, data)?, parsed.header))
}

/// Loads a five-channel probability volume stored as 4-D float32.
pub fn load_probability(path: impl AsRef<Path>) -> Result<ProbabilityVolume> {
    let path = path.as_ref();
    let bytes = read_all(path)?;
    let parsed = parse_header(&bytes)?;
    if parsed.channels != PROB_CHANNELS {
        return Err(Error::InvalidHeader(format!(
            "expected {PROB_CHANNELS} channels for a probability volume, found {}",
            parsed.channels
        )));
    }
    match parsed.header.datatype() {
        DT_FLOAT32 => {}
        other => return Err(Error::UnsupportedDatatype(other)),
    }
    let data = decode_f32(payload(&bytes, &parsed, 4)?);
    ProbabilityVolume::new(parsed.dims, data)
}

fn assemble(header: &NiftiHeader, data_bytes: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(DEFAULT_VOX_OFFSET as usize + data_bytes.len());
    out.extend_from_slice(&header.bytes);
    // Four-byte extension sentinel: no extensions.
    out.extend_from_slice(&[0, 0, 0, 0]);
    out.extend_from_slice(data_bytes);
    out
}

/// Writes an intensity volume with a canonical header.
pub fn save_intensity(vol: &IntensityVolume, path: impl AsRef<Path>) -> Result<()> {
    save_intensity_with(vol, &NiftiHeader::blank(), path)
}

/// Writes an intensity volume, carrying over every header field the writer
/// does not own from `template` (orientation, description, intent).
pub fn save_intensity_with(
    vol: &IntensityVolume,
    template: &NiftiHeader,
    path: impl AsRef<Path>,
) -> Result<()> {
    let mut header = template.clone();
    header.stamp(vol.dims, None, DT_FLOAT32, 32);
    write_all(path.as_ref(), &assemble(&header, &encode_f32(&vol.data)))
}

/// Writes a label volume with a canonical header.
pub fn save_label(vol: &LabelVolume, path: impl AsRef<Path>) -> Result<()> {
    save_label_with(vol, &NiftiHeader::blank(), path)
}

/// Writes a label volume, carrying over unowned header fields from `template`.
pub fn save_label_with(
    vol: &LabelVolume,
    template: &NiftiHeader,
    path: impl AsRef<Path>,
) -> Result<()> {
    let mut header = template.clone();
    header.stamp(vol.dims, None, DT_UINT8, 8);
    write_all(path.as_ref(), &assemble(&header, &vol.data))
}

/// Writes a probability volume as 4-D float32 with five channels.
pub fn save_probability(vol: &ProbabilityVolume, path: impl AsRef<Path>) -> Result<()> {
    let mut header = NiftiHeader::blank();
    header.stamp(vol.dims, Some(PROB_CHANNELS), DT_FLOAT32, 32);
    write_all(path.as_ref(), &assemble(&header, &encode_f32(vol.data())))
}
