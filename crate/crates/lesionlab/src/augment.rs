//! On-the-fly insertion of donor tumors into cases: class adaptation,
//! scaling, collision-free placement, noising, and procedural synthesis.
//!
//! Every stochastic decision flows through one [`RandomStream`], in a fixed
//! draw order per case: insert?, then per tumor donor index, remove-SNFH?,
//! scale, placement tries, the noise and synthesis draws, and finally the
//! second-tumor gate before the sequence repeats once. A seed therefore
//! pins the augmented case bit-for-bit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{BinaryVolume, Dims, IntensityVolume, LabelVolume, MultiModalCase, Phase};

/// Deterministic decision stream. Every consumer documents how many draws
/// it takes so that seeds stay reproducible across refactors.
pub struct RandomStream {
    rng: ChaCha8Rng,
}

impl RandomStream {
    pub fn from_seed(seed: u64) -> Self {
        RandomStream {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// True with probability `p`. Always consumes exactly one draw.
    pub fn chance(&mut self, p: f64) -> bool {
        self.rng.random::<f64>() < p
    }

    /// Uniform index in `0..len`.
    pub fn index(&mut self, len: usize) -> usize {
        self.rng.random_range(0..len)
    }

    /// Uniform draw strictly inside the open interval `(lo, hi)`.
    pub fn uniform_open(&mut self, lo: f64, hi: f64) -> f64 {
        loop {
            let v = lo + (hi - lo) * self.rng.random::<f64>();
            if v > lo && v < hi {
                return v;
            }
        }
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }
}

/// Insertion policy. `scale_bounds_removed` applies when the SNFH class
/// was folded away (small tumors), `scale_bounds_kept` otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentConfig {
    pub p_insert: f64,
    pub p_remove_snfh: f64,
    pub p_second: f64,
    pub scale_bounds_removed: (f64, f64),
    pub scale_bounds_kept: (f64, f64),
    pub max_tumors: u32,
    pub placement_margin_vox: u32,
    pub max_placement_tries: u32,
}

impl AugmentConfig {
    /// Insert a tumor in 3 of 4 cases, never a second one, SNFH kept.
    pub fn regular() -> Self {
        AugmentConfig {
            p_insert: 0.75,
            p_remove_snfh: 0.0,
            p_second: 0.0,
            ..AugmentConfig::base()
        }
    }

    /// Insert with probability 0.6, fold SNFH away in 70% of insertions,
    /// and attempt a second tumor in 40% of the augmented cases.
    pub fn custom() -> Self {
        AugmentConfig {
            p_insert: 0.6,
            p_remove_snfh: 0.7,
            p_second: 0.4,
            ..AugmentConfig::base()
        }
    }

    fn base() -> Self {
        AugmentConfig {
            p_insert: 0.0,
            p_remove_snfh: 0.0,
            p_second: 0.0,
            scale_bounds_removed: (0.1, 0.3),
            scale_bounds_kept: (0.3, 0.8),
            max_tumors: 2,
            placement_margin_vox: 3,
            max_placement_tries: 25,
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name.trim().to_ascii_lowercase().as_str() {
            "regular" => Some(Self::regular()),
            "custom" => Some(Self::custom()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("p_insert", self.p_insert),
            ("p_remove_snfh", self.p_remove_snfh),
            ("p_second", self.p_second),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidConfig(format!(
                    "{name} = {p} is outside [0, 1]"
                )));
            }
        }
        for (name, (lo, hi)) in [
            ("scale_bounds_removed", self.scale_bounds_removed),
            ("scale_bounds_kept", self.scale_bounds_kept),
        ] {
            if !(0.0 < lo && lo < hi && hi <= 1.0) {
                return Err(Error::InvalidConfig(format!(
                    "{name} = ({lo}, {hi}) must satisfy 0 < lo < hi <= 1"
                )));
            }
        }
        if self.max_tumors != 2 {
            return Err(Error::InvalidConfig(format!(
                "max_tumors = {} is not supported (must be 2)",
                self.max_tumors
            )));
        }
        if self.max_placement_tries == 0 {
            return Err(Error::InvalidConfig(
                "max_placement_tries must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let cfg: AugmentConfig = serde_json::from_str(json)
            .map_err(|e| Error::InvalidConfig(format!("augment config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("augment config serializes")
    }
}

/// One donor tumor: the tight crop of another case's label volume.
#[derive(Debug, Clone)]
pub struct DonorLabel {
    pub id: String,
    pub mask: LabelVolume,
    has_rc: bool,
}

/// Donor tumors available for insertion.
#[derive(Debug, Clone, Default)]
pub struct LabelPool {
    donors: Vec<DonorLabel>,
}

impl LabelPool {
    pub fn new() -> Self {
        LabelPool::default()
    }

    /// Crops `label` to its nonzero bounding box and adds it under `id`.
    pub fn insert(&mut self, id: impl Into<String>, label: &LabelVolume) -> Result<()> {
        let (lo, hi) = label.nonzero_bbox().ok_or(Error::EmptyMask)?;
        let dims = Dims::new(hi[0] - lo[0] + 1, hi[1] - lo[1] + 1, hi[2] - lo[2] + 1)
            .with_spacing(label.dims.spacing);
        let mut data = Vec::with_capacity(dims.voxel_count());
        for z in lo[2]..=hi[2] {
            for y in lo[1]..=hi[1] {
                for x in lo[0]..=hi[0] {
                    data.push(label.data[label.dims.index(x, y, z)]);
                }
            }
        }
        let mask = LabelVolume { dims, data };
        self.donors.push(DonorLabel {
            has_rc: mask.contains_code(4),
            id: id.into(),
            mask,
        });
        Ok(())
    }

    pub fn donors(&self) -> &[DonorLabel] {
        &self.donors
    }

    pub fn len(&self) -> usize {
        self.donors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.donors.is_empty()
    }

    /// Donors usable for a given case: never the case's own label, and no
    /// cavity-bearing donors for pre-treatment cases.
    fn eligible(&self, case_id: &str, phase: Phase) -> Vec<usize> {
        self.donors
            .iter()
            .enumerate()
            .filter(|(_, d)| d.id != case_id && !(phase == Phase::Pre && d.has_rc))
            .map(|(i, _)| i)
            .collect()
    }
}

/// One successful insertion.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TumorRecord {
    pub donor_id: String,
    pub snfh_removed: bool,
    pub scale: f64,
    pub offset: [usize; 3],
}

/// What augmentation did to one case.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct AugmentOutcome {
    pub tumors_inserted: u8,
    pub records: Vec<TumorRecord>,
    /// Insertion attempts abandoned because no free placement was found.
    pub skipped_placements: u32,
}

/// Folds the SNFH class away by recasting it as enhancing tumor while the
/// previous enhancing tumor becomes core: the simultaneous remap 2→3, 3→1.
/// Codes 0, 1, and 4 are untouched; `remove_snfh = false` is the identity.
pub fn adapt_classes(mask: &LabelVolume, remove_snfh: bool) -> LabelVolume {
    if !remove_snfh {
        return mask.clone();
    }
    let data = mask
        .data
        .iter()
        .map(|c| match c {
            2 => 3,
            3 => 1,
            other => *other,
        })
        .collect();
    LabelVolume {
        dims: mask.dims,
        data,
    }
}

/// Draws the tumor scale factor: strictly inside `scale_bounds_removed`
/// when the SNFH class was folded away, `scale_bounds_kept` otherwise.
pub fn sample_scale(cfg: &AugmentConfig, snfh_removed: bool, rng: &mut RandomStream) -> f64 {
    let (lo, hi) = if snfh_removed {
        cfg.scale_bounds_removed
    } else {
        cfg.scale_bounds_kept
    };
    rng.uniform_open(lo, hi)
}

/// Shrinks the tight nonzero bounding box of `mask` by factor `s` per axis
/// with nearest-neighbor lookup. Output extents are `ceil(s * extent)`,
/// each at least 1.
pub fn scale_mask(mask: &LabelVolume, s: f64) -> Result<LabelVolume> {
    assert!(s > 0.0 && s <= 1.0, "scale {s} outside (0, 1]");
    let (lo, hi) = mask.nonzero_bbox().ok_or(Error::EmptyMask)?;
    let in_d = [hi[0] - lo[0] + 1, hi[1] - lo[1] + 1, hi[2] - lo[2] + 1];
    let out_d: [usize; 3] = std::array::from_fn(|a| ((s * in_d[a] as f64).ceil() as usize).max(1));
    let dims = Dims::new(out_d[0], out_d[1], out_d[2]).with_spacing(mask.dims.spacing);
    let src = |i: usize, a: usize| {
        (((i as f64 + 0.5) * in_d[a] as f64 / out_d[a] as f64) as usize).min(in_d[a] - 1)
    };
    let mut data = Vec::with_capacity(dims.voxel_count());
    for z in 0..out_d[2] {
        let sz = lo[2] + src(z, 2);
        for y in 0..out_d[1] {
            let sy = lo[1] + src(y, 1);
            for x in 0..out_d[0] {
                let sx = lo[0] + src(x, 0);
                data.push(mask.data[mask.dims.index(sx, sy, sz)]);
            }
        }
    }
    Ok(LabelVolume { dims, data })
}

/// 3D summed-area table over `(nx+1)(ny+1)(nz+1)` corners, giving O(1)
/// population counts of axis-aligned boxes.
struct BoxSums {
    nx: usize,
    ny: usize,
    nz: usize,
    data: Vec<u32>,
}

impl BoxSums {
    fn build(dims: Dims, is_set: impl Fn(usize) -> bool) -> Self {
        let (nx1, ny1, nz1) = (dims.nx + 1, dims.ny + 1, dims.nz + 1);
        let mut data = vec![0u32; nx1 * ny1 * nz1];
        let at = |x: usize, y: usize, z: usize| x + nx1 * (y + ny1 * z);
        for z in 0..dims.nz {
            for y in 0..dims.ny {
                let mut row = 0u32;
                for x in 0..dims.nx {
                    row += is_set(dims.index(x, y, z)) as u32;
                    data[at(x + 1, y + 1, z + 1)] =
                        row + data[at(x + 1, y, z + 1)] + data[at(x + 1, y + 1, z)]
                            - data[at(x + 1, y, z)];
                }
            }
        }
        BoxSums {
            nx: dims.nx,
            ny: dims.ny,
            nz: dims.nz,
            data,
        }
    }

    /// Voxels set within `lo .. lo + size` (exclusive upper corner).
    fn count(&self, lo: [usize; 3], size: [usize; 3]) -> u32 {
        let nx1 = self.nx + 1;
        let ny1 = self.ny + 1;
        let at = |x: usize, y: usize, z: usize| self.data[x + nx1 * (y + ny1 * z)] as i64;
        let (x0, y0, z0) = (lo[0], lo[1], lo[2]);
        let (x1, y1, z1) = (lo[0] + size[0], lo[1] + size[1], lo[2] + size[2]);
        let n = at(x1, y1, z1) - at(x0, y1, z1) - at(x1, y0, z1) - at(x1, y1, z0)
            + at(x0, y0, z1)
            + at(x0, y1, z0)
            + at(x1, y0, z0)
            - at(x0, y0, z0);
        n as u32
    }

    /// Count over the box grown by `margin` on every side, clamped to the
    /// volume. Querying the raw mask this way equals querying the exact
    /// box against the mask dilated `margin` times with the 3x3x3 element.
    fn count_grown(&self, lo: [usize; 3], size: [usize; 3], margin: usize) -> u32 {
        let lo_g = [
            lo[0].saturating_sub(margin),
            lo[1].saturating_sub(margin),
            lo[2].saturating_sub(margin),
        ];
        let hi_g = [
            (lo[0] + size[0] + margin).min(self.nx),
            (lo[1] + size[1] + margin).min(self.ny),
            (lo[2] + size[2] + margin).min(self.nz),
        ];
        self.count(
            lo_g,
            [hi_g[0] - lo_g[0], hi_g[1] - lo_g[1], hi_g[2] - lo_g[2]],
        )
    }
}

/// Rejection-samples an offset for a `shape`-sized box that lies entirely
/// inside the brain mask and touches neither the ground-truth tumor
/// (dilated by the placement margin) nor previously `occupied` space.
/// Each try consumes three draws; gives up after `max_placement_tries`.
pub fn find_placement(
    gt: &LabelVolume,
    brain: &BinaryVolume,
    shape: Dims,
    occupied: &BinaryVolume,
    cfg: &AugmentConfig,
    rng: &mut RandomStream,
) -> Result<[usize; 3]> {
    let dims = gt.dims;
    if !dims.same_shape(&brain.dims) {
        return Err(Error::DimsMismatch(dims, brain.dims));
    }
    if !dims.same_shape(&occupied.dims) {
        return Err(Error::DimsMismatch(dims, occupied.dims));
    }
    if shape.nx > dims.nx || shape.ny > dims.ny || shape.nz > dims.nz {
        return Err(Error::NoPlacementFound { tries: 0 });
    }

    let brain_sums = BoxSums::build(dims, |i| brain.data[i]);
    find_placement_in(gt, &brain_sums, shape, occupied, cfg, rng)
}

/// [`find_placement`] against a prebuilt brain table, so one case can
/// place several tumors without re-summing the brain mask.
fn find_placement_in(
    gt: &LabelVolume,
    brain_sums: &BoxSums,
    shape: Dims,
    occupied: &BinaryVolume,
    cfg: &AugmentConfig,
    rng: &mut RandomStream,
) -> Result<[usize; 3]> {
    let dims = gt.dims;
    if shape.nx > dims.nx || shape.ny > dims.ny || shape.nz > dims.nz {
        return Err(Error::NoPlacementFound { tries: 0 });
    }

    let gt_sums = BoxSums::build(dims, |i| gt.data[i] != 0);
    let occupied_sums = occupied
        .data
        .iter()
        .any(|o| *o)
        .then(|| BoxSums::build(dims, |i| occupied.data[i]));

    let size = [shape.nx, shape.ny, shape.nz];
    let volume = (size[0] * size[1] * size[2]) as u32;
    let margin = cfg.placement_margin_vox as usize;
    for _ in 0..cfg.max_placement_tries {
        let lo = [
            rng.index(dims.nx - size[0] + 1),
            rng.index(dims.ny - size[1] + 1),
            rng.index(dims.nz - size[2] + 1),
        ];
        if brain_sums.count(lo, size) == volume
            && gt_sums.count_grown(lo, size, margin) == 0
            && occupied_sums.as_ref().is_none_or(|s| s.count(lo, size) == 0)
        {
            return Ok(lo);
        }
    }
    Err(Error::NoPlacementFound {
        tries: cfg.max_placement_tries,
    })
}

/// Replaces the voxels under `support` with draws from a normal
/// distribution matched to the image's brain statistics (mean and
/// population standard deviation of its nonzero voxels). Consumes one draw
/// per support voxel regardless of the statistics.
pub fn insert_noise(
    img: &IntensityVolume,
    support: &BinaryVolume,
    rng: &mut RandomStream,
) -> IntensityVolume {
    insert_noise_in(img, support, support_bbox(support), rng)
}

/// `insert_noise` with a precomputed support bounding box, so repeated
/// calls over the same support skip the scan. The box must cover every
/// support voxel.
fn insert_noise_in(
    img: &IntensityVolume,
    support: &BinaryVolume,
    bbox: Option<([usize; 3], [usize; 3])>,
    rng: &mut RandomStream,
) -> IntensityVolume {
    let mut out = img.clone();
    let Some((lo, hi)) = bbox else {
        return out;
    };
    let (mean, sd) = nonzero_stats(img);
    for z in lo[2]..=hi[2] {
        for y in lo[1]..=hi[1] {
            for x in lo[0]..=hi[0] {
                let i = support.dims.index(x, y, z);
                if support.data[i] {
                    out.data[i] = (mean + sd * rng.standard_normal()) as f32;
                }
            }
        }
    }
    out
}

fn nonzero_stats(img: &IntensityVolume) -> (f64, f64) {
    // Four independent accumulator lanes keep the adds pipelined instead
    // of serialized on one chain; excluded voxels add exact zeros.
    let mut n = [0.0f64; 4];
    let mut sum = [0.0f64; 4];
    let mut sum_sq = [0.0f64; 4];
    let mut chunks = img.data.chunks_exact(4);
    for chunk in &mut chunks {
        for k in 0..4 {
            let keep = (chunk[k] != 0.0) as u32 as f64;
            let v = chunk[k] as f64;
            n[k] += keep;
            sum[k] += keep * v;
            sum_sq[k] += keep * v * v;
        }
    }
    for &v in chunks.remainder() {
        let keep = (v != 0.0) as u32 as f64;
        let v = v as f64;
        n[0] += keep;
        sum[0] += keep * v;
        sum_sq[0] += keep * v * v;
    }
    let n = (n[0] + n[1]) + (n[2] + n[3]);
    let sum = (sum[0] + sum[1]) + (sum[2] + sum[3]);
    let sum_sq = (sum_sq[0] + sum_sq[1]) + (sum_sq[2] + sum_sq[3]);
    if n == 0.0 {
        return (0.0, 0.0);
    }
    let mean = sum / n;
    let var = (sum_sq / n - mean * mean).max(0.0);
    (mean, var.sqrt())
}

/// Fills a noised region with tumor intensities matching a label mask.
/// Implementations must change voxels only inside `support` and be
/// deterministic given their inputs and the stream state.
pub trait TumorSynthesizer {
    fn synthesize(
        &self,
        noised: &[IntensityVolume; 4],
        placed_label: &LabelVolume,
        support: &BinaryVolume,
        rng: &mut RandomStream,
    ) -> Result<[IntensityVolume; 4]>;
}

/// Per-class relative intensity (rows NETC, SNFH, ET, RC; columns t1n,
/// t1c, t2w, t2f), applied to the brain mean of each contrast.
const SYNTH_GAIN: [[f64; 4]; 4] = [
    [0.55, 0.60, 1.30, 1.25],
    [0.80, 0.85, 1.40, 1.60],
    [0.90, 1.70, 1.10, 1.15],
    [0.50, 0.45, 1.50, 0.70],
];

const SYNTH_JITTER: f64 = 0.04;

/// Default synthesizer: class-scaled brain-mean intensities with mild
/// jitter, blended into the surroundings by a 3³ mean filter on the
/// support boundary.
pub struct ProceduralSynthesizer;

impl TumorSynthesizer for ProceduralSynthesizer {
    fn synthesize(
        &self,
        noised: &[IntensityVolume; 4],
        placed_label: &LabelVolume,
        support: &BinaryVolume,
        rng: &mut RandomStream,
    ) -> Result<[IntensityVolume; 4]> {
        let dims = placed_label.dims;
        if let Some(i) = placed_label
            .data
            .iter()
            .zip(&support.data)
            .position(|(c, s)| *c != 0 && !*s)
        {
            return Err(Error::LabelOutsideSupport(i));
        }

        let mut out = noised.clone();
        let Some((lo, hi)) = support_bbox(support) else {
            return Ok(out);
        };
        for (m, img) in out.iter_mut().enumerate() {
            let (mean, _) = nonzero_stats(&noised[m]);
            for z in lo[2]..=hi[2] {
                for y in lo[1]..=hi[1] {
                    for x in lo[0]..=hi[0] {
                        let code = placed_label.data[dims.index(x, y, z)];
                        if code != 0 {
                            let gain = SYNTH_GAIN[(code - 1) as usize][m];
                            let jitter = SYNTH_JITTER * mean * rng.standard_normal();
                            img.data[dims.index(x, y, z)] = (mean * gain + jitter) as f32;
                        }
                    }
                }
            }
            smooth_support_boundary(img, support, dims, lo, hi);
        }
        Ok(out)
    }
}

fn support_bbox(support: &BinaryVolume) -> Option<([usize; 3], [usize; 3])> {
    let dims = support.dims;
    let mut lo = [usize::MAX; 3];
    let mut hi = [0usize; 3];
    for (i, &inside) in support.data.iter().enumerate() {
        if !inside {
            continue;
        }
        let (x, y, z) = dims.coords(i);
        let p = [x, y, z];
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    (lo[0] != usize::MAX).then_some((lo, hi))
}

/// Replaces each support voxel that touches non-support (or the volume
/// edge) in its 3³ neighborhood with the neighborhood mean. Writes only
/// inside the support; reads the pre-smoothing values throughout. Only
/// the `lo..=hi` box is scanned; it must cover the whole support.
fn smooth_support_boundary(
    img: &mut IntensityVolume,
    support: &BinaryVolume,
    dims: Dims,
    scan_lo: [usize; 3],
    scan_hi: [usize; 3],
) {
    let mut updates: Vec<(usize, f32)> = Vec::new();
    for z in scan_lo[2]..=scan_hi[2] {
        for y in scan_lo[1]..=scan_hi[1] {
            for x in scan_lo[0]..=scan_hi[0] {
                let i = dims.index(x, y, z);
                if !support.data[i] {
                    continue;
                }
                let mut boundary = x == 0
                    || y == 0
                    || z == 0
                    || x == dims.nx - 1
                    || y == dims.ny - 1
                    || z == dims.nz - 1;
                let mut sum = 0.0f64;
                let mut n = 0u32;
                for dz in -1i64..=1 {
                    for dy in -1i64..=1 {
                        for dx in -1i64..=1 {
                            let (nx, ny, nz) = (x as i64 + dx, y as i64 + dy, z as i64 + dz);
                            if nx < 0
                                || ny < 0
                                || nz < 0
                                || nx >= dims.nx as i64
                                || ny >= dims.ny as i64
                                || nz >= dims.nz as i64
                            {
                                continue;
                            }
                            let j = dims.index(nx as usize, ny as usize, nz as usize);
                            boundary |= !support.data[j];
                            sum += img.data[j] as f64;
                            n += 1;
                        }
                    }
                }
                if boundary {
                    updates.push((i, (sum / n as f64) as f32));
                }
            }
        }
    }
    for (i, v) in updates {
        img.data[i] = v;
    }
}

/// Runs the full insertion pipeline on a copy of `case` with the default
/// procedural synthesizer. See [`augment_case_with`].
pub fn augment_case(
    case: &MultiModalCase,
    pool: &LabelPool,
    cfg: &AugmentConfig,
    rng: &mut RandomStream,
) -> Result<(MultiModalCase, AugmentOutcome)> {
    augment_case_with(case, pool, cfg, &ProceduralSynthesizer, rng)
}

/// With probability `1 - p_insert` returns the case untouched. Otherwise
/// inserts up to two donor tumors: pick a donor, optionally fold SNFH
/// away, scale, place collision-free, noise the region in all four
/// contrasts, synthesize intensities, and merge the labels (never
/// overwriting ground-truth voxels). A failed placement is recorded as a
/// skipped insertion, not an error. The second tumor is attempted only
/// when the `p_second` gate fires after the first attempt.
pub fn augment_case_with(
    case: &MultiModalCase,
    pool: &LabelPool,
    cfg: &AugmentConfig,
    synthesizer: &dyn TumorSynthesizer,
    rng: &mut RandomStream,
) -> Result<(MultiModalCase, AugmentOutcome)> {
    cfg.validate()?;
    let mut out = case.clone();
    let mut outcome = AugmentOutcome::default();
    if !rng.chance(cfg.p_insert) {
        return Ok((out, outcome));
    }

    let eligible = pool.eligible(&case.id, case.phase);
    if eligible.is_empty() {
        return Err(Error::EmptyPool {
            case_id: case.id.clone(),
        });
    }
    let dims = case.dims();
    let brain = case.brain_mask();
    let brain_sums = BoxSums::build(dims, |i| brain.data[i]);
    let mut occupied = BinaryVolume::new_false(dims);

    let mut attempts = 0u32;
    loop {
        attempts += 1;
        let donor = &pool.donors()[eligible[rng.index(eligible.len())]];
        let snfh_removed = rng.chance(cfg.p_remove_snfh);
        let scale = sample_scale(cfg, snfh_removed, rng);
        let scaled = scale_mask(&adapt_classes(&donor.mask, snfh_removed), scale)?;

        match find_placement_in(&out.label, &brain_sums, scaled.dims, &occupied, cfg, rng) {
            Ok(offset) => {
                let mut placed = LabelVolume::zeros(dims);
                for z in 0..scaled.dims.nz {
                    for y in 0..scaled.dims.ny {
                        for x in 0..scaled.dims.nx {
                            placed.data[dims.index(offset[0] + x, offset[1] + y, offset[2] + z)] =
                                scaled.data[scaled.dims.index(x, y, z)];
                        }
                    }
                }
                let support = BinaryVolume {
                    dims,
                    data: placed.data.iter().map(|c| *c != 0).collect(),
                };
                let bbox = support_bbox(&support);
                let noised: [IntensityVolume; 4] =
                    std::array::from_fn(|m| insert_noise_in(&out.modalities[m], &support, bbox, rng));
                out.modalities = synthesizer.synthesize(&noised, &placed, &support, rng)?;
                for (dst, &src) in out.label.data.iter_mut().zip(&placed.data) {
                    if *dst == 0 && src != 0 {
                        *dst = src;
                    }
                }
                for z in 0..scaled.dims.nz {
                    for y in 0..scaled.dims.ny {
                        for x in 0..scaled.dims.nx {
                            occupied.data
                                [dims.index(offset[0] + x, offset[1] + y, offset[2] + z)] = true;
                        }
                    }
                }
                outcome.tumors_inserted += 1;
                outcome.records.push(TumorRecord {
                    donor_id: donor.id.clone(),
                    snfh_removed,
                    scale,
                    offset,
                });
            }
            Err(Error::NoPlacementFound { .. }) => outcome.skipped_placements += 1,
            Err(e) => return Err(e),
        }

        if attempts >= cfg.max_tumors || !rng.chance(cfg.p_second) {
            break;
        }
    }
    Ok((out, outcome))
}
