//! Case file discovery and naming. Canonical names are
//! `<id>-<suffix>.nii.gz` with suffixes t1n/t1c/t2w/t2f, seg, and prob;
//! readers also accept `_` as the separator and uncompressed `.nii`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::volume::{Modality, Phase};

pub const SEG_SUFFIX: &str = "seg";
pub const PROB_SUFFIX: &str = "prob";

const KNOWN_SUFFIXES: [&str; 6] = ["t1n", "t1c", "t2w", "t2f", "seg", "prob"];

/// `dir/<id>-<suffix>.nii.gz`, the canonical output name.
pub fn volume_path(dir: &Path, id: &str, suffix: &str) -> PathBuf {
    dir.join(format!("{id}-{suffix}.nii.gz"))
}

/// Splits a file name into case id and volume suffix, if it looks like a
/// case volume.
pub fn parse_volume_name(name: &str) -> Option<(&str, &str)> {
    let stem = name
        .strip_suffix(".nii.gz")
        .or_else(|| name.strip_suffix(".nii"))?;
    let sep = stem.rfind(['-', '_'])?;
    let (id, suffix) = (&stem[..sep], &stem[sep + 1..]);
    if id.is_empty() || !KNOWN_SUFFIXES.contains(&suffix) {
        return None;
    }
    Some((id, suffix))
}

/// All case volumes under `dir`, keyed by case id then suffix. Files that
/// do not match the naming scheme are ignored.
pub fn scan_dir(dir: &Path) -> Result<BTreeMap<String, BTreeMap<String, PathBuf>>> {
    let mut cases: BTreeMap<String, BTreeMap<String, PathBuf>> = BTreeMap::new();
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name();
        let Some(name) = name.to_str() else { continue };
        if let Some((id, suffix)) = parse_volume_name(name) {
            cases
                .entry(id.to_owned())
                .or_default()
                .insert(suffix.to_owned(), entry.path());
        }
    }
    Ok(cases)
}

/// Ids under `dir` that provide the given suffix, with their paths.
pub fn scan_suffix(dir: &Path, suffix: &str) -> Result<BTreeMap<String, PathBuf>> {
    Ok(scan_dir(dir)?
        .into_iter()
        .filter_map(|(id, mut files)| files.remove(suffix).map(|p| (id, p)))
        .collect())
}

pub fn require<'a>(
    files: &'a BTreeMap<String, PathBuf>,
    id: &str,
    what: &str,
    dir: &Path,
) -> Result<&'a PathBuf> {
    files.get(id).ok_or_else(|| {
        Error::InvalidConfig(format!("case {id}: no {what} volume in {}", dir.display()))
    })
}

pub fn modality_suffix(m: Modality) -> &'static str {
    m.suffix()
}

/// Phase per case id from a `case_id,phase` CSV. Cases absent from the
/// manifest default to post-treatment.
#[derive(Debug, Clone, Default)]
pub struct PhaseManifest {
    phases: BTreeMap<String, Phase>,
}

impl PhaseManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| Error::MalformedInput {
            path: path.to_path_buf(),
            detail: e,
        })
    }

    fn parse(text: &str) -> std::result::Result<Self, String> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let header = reader.headers().map_err(|e| e.to_string())?;
        if header.iter().collect::<Vec<_>>() != ["case_id", "phase"] {
            return Err(format!(
                "manifest header {:?}, expected \"case_id,phase\"",
                header.iter().collect::<Vec<_>>()
            ));
        }
        let mut phases = BTreeMap::new();
        for record in reader.records() {
            let record = record.map_err(|e| e.to_string())?;
            if record.len() != 2 {
                return Err(format!("manifest row {record:?} needs 2 fields"));
            }
            let phase: Phase = record[1].parse().map_err(|e| format!("{e}"))?;
            phases.insert(record[0].to_owned(), phase);
        }
        Ok(PhaseManifest { phases })
    }

    pub fn load_optional(path: Option<&PathBuf>) -> Result<Self> {
        match path {
            Some(p) => Self::load(p),
            None => Ok(PhaseManifest::default()),
        }
    }

    pub fn phase_of(&self, case_id: &str) -> Phase {
        self.phases.get(case_id).copied().unwrap_or(Phase::Post)
    }
}
