//! Segmentation quality metrics: legacy (whole-region) and lesion-wise
//! Dice and normalized surface Dice (NSD).
//!
//! Lesion-wise scoring follows the matching scheme used for multi-focal
//! tumors: ground-truth lesions are 26-connected components, each is dilated
//! to a neighborhood, predicted components are assigned to the neighborhood
//! they overlap most, and the final score averages per-lesion values over
//! ground-truth lesions plus unmatched (false-positive) predictions, so
//! missed and hallucinated lesions both pull the score down.

mod components;

pub use components::{connected_components, dilate, surface_voxels, ComponentLabeling, Connectivity};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{region_mask, BinaryVolume, LabelVolume, Phase, Region};

/// Knobs shared by the lesion-wise metrics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvaluationParams {
    /// 3x3x3 dilation iterations applied to each ground-truth lesion before
    /// matching predictions to it.
    pub dilation_iters: usize,
    /// Surface-distance tolerance for NSD, in millimetres.
    pub nsd_tol_mm: f64,
}

impl Default for EvaluationParams {
    fn default() -> Self {
        EvaluationParams {
            dilation_iters: 3,
            nsd_tol_mm: 1.0,
        }
    }
}

fn check_shape(a: &BinaryVolume, b: &BinaryVolume) -> Result<()> {
    if a.dims.same_shape(&b.dims) {
        Ok(())
    } else {
        Err(Error::DimsMismatch(a.dims, b.dims))
    }
}

/// Soerensen-Dice overlap `2|A n B| / (|A| + |B|)`; two empty masks score 1.
pub fn dice(pred: &BinaryVolume, gt: &BinaryVolume) -> Result<f64> {
    check_shape(pred, gt)?;
    let mut inter = 0usize;
    let mut total = 0usize;
    for (p, g) in pred.data.iter().zip(&gt.data) {
        inter += (*p && *g) as usize;
        total += *p as usize + *g as usize;
    }
    if total == 0 {
        Ok(1.0)
    } else {
        Ok(2.0 * inter as f64 / total as f64)
    }
}

/// Normalized surface Dice: the fraction of surface voxels of each mask that
/// lie within `tol_mm` (Euclidean, honoring voxel spacing) of the other
/// mask's surface. Two empty masks score 1, exactly one empty scores 0.
pub fn nsd(pred: &BinaryVolume, gt: &BinaryVolume, tol_mm: f64) -> Result<f64> {
    check_shape(pred, gt)?;
    if pred.dims.spacing != gt.dims.spacing {
        return Err(Error::DimsMismatch(pred.dims, gt.dims));
    }
    let sp = surface_voxels(pred);
    let sg = surface_voxels(gt);
    let np = sp.count();
    let ng = sg.count();
    if np == 0 && ng == 0 {
        return Ok(1.0);
    }
    if np == 0 || ng == 0 {
        return Ok(0.0);
    }
    let stencil = tolerance_stencil(pred.dims.spacing, tol_mm);
    let close_p = count_within(&sp, &sg, &stencil);
    let close_g = count_within(&sg, &sp, &stencil);
    Ok((close_p + close_g) as f64 / (np + ng) as f64)
}

/// Integer offsets whose physical length is within the tolerance. Membership
/// uses squared distances in f64, the same predicate a direct all-pairs
/// computation would evaluate.
fn tolerance_stencil(spacing: [f32; 3], tol_mm: f64) -> Vec<(i32, i32, i32)> {
    let tol2 = tol_mm * tol_mm;
    let reach = |s: f32| if tol_mm <= 0.0 { 0 } else { (tol_mm / s as f64).floor() as i32 };
    let (rx, ry, rz) = (reach(spacing[0]), reach(spacing[1]), reach(spacing[2]));
    let mut out = Vec::new();
    for dz in -rz..=rz {
        for dy in -ry..=ry {
            for dx in -rx..=rx {
                let d2 = (dx as f64 * spacing[0] as f64).powi(2)
                    + (dy as f64 * spacing[1] as f64).powi(2)
                    + (dz as f64 * spacing[2] as f64).powi(2);
                if d2 <= tol2 {
                    out.push((dx, dy, dz));
                }
            }
        }
    }
    out
}

/// Counts voxels of `from` whose distance to `to` is within the stencil,
/// by dilating `to` with the stencil and intersecting.
fn count_within(from: &BinaryVolume, to: &BinaryVolume, stencil: &[(i32, i32, i32)]) -> usize {
    let dims = from.dims;
    let (nx, ny, nz) = (dims.nx as i32, dims.ny as i32, dims.nz as i32);
    let mut reach = vec![false; to.data.len()];
    for (i, v) in to.data.iter().enumerate() {
        if !*v {
            continue;
        }
        let (x, y, z) = dims.coords(i);
        for &(dx, dy, dz) in stencil {
            let (qx, qy, qz) = (x as i32 + dx, y as i32 + dy, z as i32 + dz);
            if qx < 0 || qy < 0 || qz < 0 || qx >= nx || qy >= ny || qz >= nz {
                continue;
            }
            reach[dims.index(qx as usize, qy as usize, qz as usize)] = true;
        }
    }
    from.data
        .iter()
        .zip(&reach)
        .filter(|(f, r)| **f && **r)
        .count()
}

/// One ground-truth lesion and the predictions assigned to it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LesionMatch {
    pub gt_id: u32,
    pub gt_voxels: usize,
    /// Predicted component ids assigned to this lesion (may be empty).
    pub pred_ids: Vec<u32>,
    /// Per-lesion metric value (dice or NSD depending on the caller).
    pub score: f64,
}

/// A predicted component that overlaps no ground-truth lesion neighborhood.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FalsePositive {
    pub pred_id: u32,
    pub voxels: usize,
}

/// Full account of a lesion-wise evaluation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LesionMatchReport {
    /// One entry per ground-truth lesion, ascending id.
    pub matches: Vec<LesionMatch>,
    pub false_positives: Vec<FalsePositive>,
    /// Sum of per-lesion scores over (lesion count + false positives);
    /// 1 when both volumes are empty.
    pub score: f64,
}

/// A ground-truth lesion's dilated neighborhood, stored on its padded
/// bounding box to keep per-lesion dilation local.
struct Neighborhood {
    lo: [usize; 3],
    mask: BinaryVolume,
}

impl Neighborhood {
    fn contains(&self, x: usize, y: usize, z: usize) -> bool {
        let d = self.mask.dims;
        if x < self.lo[0] || y < self.lo[1] || z < self.lo[2] {
            return false;
        }
        let (lx, ly, lz) = (x - self.lo[0], y - self.lo[1], z - self.lo[2]);
        if lx >= d.nx || ly >= d.ny || lz >= d.nz {
            return false;
        }
        self.mask.data[d.index(lx, ly, lz)]
    }
}

fn lesion_neighborhood(
    gt_cc: &ComponentLabeling,
    id: u32,
    dilation_iters: usize,
) -> Neighborhood {
    let dims = gt_cc.dims;
    let (lo, hi) = gt_cc.bbox_of(id);
    let pad_lo: [usize; 3] = std::array::from_fn(|a| lo[a].saturating_sub(dilation_iters));
    let extent = |a: usize| {
        let cap = [dims.nx, dims.ny, dims.nz][a];
        (hi[a] + dilation_iters + 1).min(cap) - pad_lo[a]
    };
    let local = crate::volume::Dims::new(extent(0), extent(1), extent(2));
    let mut mask = BinaryVolume::new_false(local);
    for z in 0..local.nz {
        for y in 0..local.ny {
            for x in 0..local.nx {
                let gi = dims.index(x + pad_lo[0], y + pad_lo[1], z + pad_lo[2]);
                if gt_cc.labels[gi] == id {
                    mask.data[local.index(x, y, z)] = true;
                }
            }
        }
    }
    Neighborhood {
        lo: pad_lo,
        mask: dilate(&mask, dilation_iters),
    }
}

/// Which per-lesion metric a matching run should compute.
enum LesionMetric {
    Dice,
    Nsd { tol_mm: f64 },
}

fn lesion_wise(
    pred: &BinaryVolume,
    gt: &BinaryVolume,
    dilation_iters: usize,
    metric: LesionMetric,
) -> Result<LesionMatchReport> {
    check_shape(pred, gt)?;
    let dims = gt.dims;
    let gt_cc = connected_components(gt, Connectivity::TwentySix);
    let pred_cc = connected_components(pred, Connectivity::TwentySix);

    let neighborhoods: Vec<Neighborhood> = (1..=gt_cc.count as u32)
        .map(|id| lesion_neighborhood(&gt_cc, id, dilation_iters))
        .collect();

    // Assign each predicted component to the ground-truth lesion whose
    // neighborhood it overlaps most; ties go to the lowest lesion id.
    let mut assigned: Vec<Vec<u32>> = vec![Vec::new(); gt_cc.count];
    let mut false_positives = Vec::new();
    for pid in 1..=pred_cc.count as u32 {
        let voxels = pred_cc.voxels_of(pid);
        let mut best: Option<(usize, usize)> = None; // (overlap, lesion index)
        for (li, nb) in neighborhoods.iter().enumerate() {
            let overlap = voxels
                .iter()
                .filter(|&&v| {
                    let (x, y, z) = dims.coords(v);
                    nb.contains(x, y, z)
                })
                .count();
            if overlap > 0 && best.map_or(true, |(b, _)| overlap > b) {
                best = Some((overlap, li));
            }
        }
        match best {
            Some((_, li)) => assigned[li].push(pid),
            None => false_positives.push(FalsePositive {
                pred_id: pid,
                voxels: voxels.len(),
            }),
        }
    }

    let mut matches = Vec::with_capacity(gt_cc.count);
    let mut score_sum = 0.0f64;
    for (li, pred_ids) in assigned.iter().enumerate() {
        let gid = (li + 1) as u32;
        let gt_mask = BinaryVolume {
            dims,
            data: gt_cc.labels.iter().map(|l| *l == gid).collect(),
        };
        let pred_mask = BinaryVolume {
            dims,
            data: pred_cc
                .labels
                .iter()
                .map(|l| *l != 0 && pred_ids.contains(l))
                .collect(),
        };
        let score = match metric {
            LesionMetric::Dice => dice(&pred_mask, &gt_mask)?,
            LesionMetric::Nsd { tol_mm } => nsd(&pred_mask, &gt_mask, tol_mm)?,
        };
        score_sum += score;
        matches.push(LesionMatch {
            gt_id: gid,
            gt_voxels: gt_cc.sizes[li],
            pred_ids: pred_ids.clone(),
            score,
        });
    }

    let denom = gt_cc.count + false_positives.len();
    let score = if denom == 0 { 1.0 } else { score_sum / denom as f64 };
    Ok(LesionMatchReport {
        matches,
        false_positives,
        score,
    })
}

/// Lesion-wise Dice. An empty ground truth with any prediction scores 0;
/// empty versus empty scores 1.
pub fn lesion_wise_dice(
    pred: &BinaryVolume,
    gt: &BinaryVolume,
    dilation_iters: usize,
) -> Result<LesionMatchReport> {
    lesion_wise(pred, gt, dilation_iters, LesionMetric::Dice)
}

/// Lesion-wise NSD with the same matching as [`lesion_wise_dice`].
pub fn lesion_wise_nsd(
    pred: &BinaryVolume,
    gt: &BinaryVolume,
    tol_mm: f64,
    dilation_iters: usize,
) -> Result<LesionMatchReport> {
    lesion_wise(pred, gt, dilation_iters, LesionMetric::Nsd { tol_mm })
}

/// The four metric columns of a case report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    LegacyDice,
    LesionDice,
    LegacyNsd,
    LesionNsd,
}

impl MetricKind {
    pub const ALL: [MetricKind; 4] = [
        MetricKind::LegacyDice,
        MetricKind::LesionDice,
        MetricKind::LegacyNsd,
        MetricKind::LesionNsd,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MetricKind::LegacyDice => "legacy_dice",
            MetricKind::LesionDice => "lesion_dice",
            MetricKind::LegacyNsd => "legacy_nsd",
            MetricKind::LesionNsd => "lesion_nsd",
        }
    }
}

impl std::str::FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "legacy_dice" => Ok(MetricKind::LegacyDice),
            "lesion_dice" => Ok(MetricKind::LesionDice),
            "legacy_nsd" => Ok(MetricKind::LegacyNsd),
            "lesion_nsd" => Ok(MetricKind::LesionNsd),
            other => Err(Error::InvalidConfig(format!("unknown metric {other:?}"))),
        }
    }
}

/// All four metrics for one region of one case.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionScores {
    pub legacy_dice: f64,
    pub lesion_dice: f64,
    pub legacy_nsd: f64,
    pub lesion_nsd: f64,
}

impl RegionScores {
    pub fn get(&self, metric: MetricKind) -> f64 {
        match metric {
            MetricKind::LegacyDice => self.legacy_dice,
            MetricKind::LesionDice => self.lesion_dice,
            MetricKind::LegacyNsd => self.legacy_nsd,
            MetricKind::LesionNsd => self.lesion_nsd,
        }
    }
}

/// Per-region scores for one case. RC is absent for pre-treatment cases.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaseScores {
    regions: [Option<RegionScores>; 6],
}

impl CaseScores {
    /// Assembles a report from per-region entries in [`Region::ALL`] order;
    /// `None` marks a region not evaluated for this case.
    pub fn from_regions(regions: [Option<RegionScores>; 6]) -> Self {
        CaseScores { regions }
    }

    pub fn get(&self, region: Region) -> Option<RegionScores> {
        self.regions[region_slot(region)]
    }

    /// Regions present in this report, in canonical order.
    pub fn regions(&self) -> impl Iterator<Item = (Region, RegionScores)> + '_ {
        Region::ALL
            .into_iter()
            .filter_map(|r| self.get(r).map(|s| (r, s)))
    }
}

fn region_slot(region: Region) -> usize {
    Region::ALL.iter().position(|r| *r == region).unwrap()
}

/// Scores a prediction against the ground truth over all regions, skipping
/// RC for pre-treatment cases, with default parameters (dilation 3,
/// NSD tolerance 1 mm).
pub fn evaluate_case(pred: &LabelVolume, gt: &LabelVolume, phase: Phase) -> Result<CaseScores> {
    evaluate_case_with(pred, gt, phase, &EvaluationParams::default())
}

/// [`evaluate_case`] with explicit parameters.
pub fn evaluate_case_with(
    pred: &LabelVolume,
    gt: &LabelVolume,
    phase: Phase,
    params: &EvaluationParams,
) -> Result<CaseScores> {
    if !pred.dims.same_shape(&gt.dims) {
        return Err(Error::DimsMismatch(pred.dims, gt.dims));
    }
    let mut regions = [None; 6];
    for region in Region::ALL {
        if region == Region::RC && phase == Phase::Pre {
            continue;
        }
        let pm = region_mask(pred, region);
        let gm = region_mask(gt, region);
        regions[region_slot(region)] = Some(RegionScores {
            legacy_dice: dice(&pm, &gm)?,
            lesion_dice: lesion_wise_dice(&pm, &gm, params.dilation_iters)?.score,
            legacy_nsd: nsd(&pm, &gm, params.nsd_tol_mm)?,
            lesion_nsd: lesion_wise_nsd(&pm, &gm, params.nsd_tol_mm, params.dilation_iters)?
                .score,
        });
    }
    Ok(CaseScores { regions })
}
