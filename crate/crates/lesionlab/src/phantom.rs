//! Procedural test cases: a spherical brain with spherical lesions, plus
//! soft probability volumes derived from a label volume. Everything is
//! seed-deterministic, so fixtures never need to ship voxel data.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{
    Dims, IntensityVolume, LabelVolume, MultiModalCase, Phase, ProbabilityVolume,
    PROB_CHANNELS,
};

/// Lesion geometry: one class throughout, or concentric shells with a
/// non-enhancing core, an enhancing rim, and surrounding edema.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LesionKind {
    Solid {
        class: u8,
    },
    Shelled {
        #[serde(default = "default_core_frac")]
        core_frac: f32,
        #[serde(default = "default_rim_frac")]
        rim_frac: f32,
    },
}

fn default_core_frac() -> f32 {
    0.45
}

fn default_rim_frac() -> f32 {
    0.75
}

impl LesionKind {
    pub fn shelled() -> Self {
        LesionKind::Shelled {
            core_frac: default_core_frac(),
            rim_frac: default_rim_frac(),
        }
    }
}

/// One spherical lesion, in voxel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LesionSpec {
    pub center: [f32; 3],
    pub radius: f32,
    pub kind: LesionKind,
}

/// Recipe for a synthetic case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomSpec {
    /// Case id; defaults to `phantom-<seed>`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    #[serde(default = "default_dims")]
    pub dims: Dims,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_brain_radius")]
    pub brain_radius: f32,
    #[serde(default = "default_phase")]
    pub phase: Phase,
    #[serde(default)]
    pub lesions: Vec<LesionSpec>,
}

fn default_dims() -> Dims {
    Dims::cubic(64)
}

fn default_brain_radius() -> f32 {
    28.0
}

fn default_phase() -> Phase {
    Phase::Post
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            id: None,
            dims: default_dims(),
            seed: 0,
            brain_radius: default_brain_radius(),
            phase: default_phase(),
            lesions: Vec::new(),
        }
    }
}

impl PhantomSpec {
    pub fn from_json(json: &str) -> Result<Self> {
        serde_json::from_str(json)
            .map_err(|e| Error::InvalidConfig(format!("phantom spec: {e}")))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("phantom spec serializes")
    }

    pub fn case_id(&self) -> String {
        self.id.clone().unwrap_or_else(|| format!("phantom-{}", self.seed))
    }
}

/// Mean tissue intensity per contrast, before lesion modulation and noise.
const BASE_INTENSITY: [f32; 4] = [600.0, 650.0, 900.0, 750.0];

/// Relative lesion brightness per class (rows NETC, SNFH, ET, RC) and
/// contrast (columns t1n, t1c, t2w, t2f).
const CLASS_GAIN: [[f32; 4]; 4] = [
    [0.60, 0.65, 1.30, 1.25],
    [0.80, 0.85, 1.40, 1.60],
    [0.90, 1.70, 1.10, 1.15],
    [0.50, 0.45, 1.50, 0.70],
];

const NOISE_FRACTION: f32 = 0.02;

/// Builds the case described by `spec`: a filled brain sphere centered in
/// the grid, lesions stamped in order (later lesions overwrite earlier
/// ones), per-contrast intensities with seeded multiplicative noise, and
/// exact zeros outside the brain.
pub fn make_case(spec: &PhantomSpec) -> Result<MultiModalCase> {
    let dims = spec.dims;
    let center = [
        (dims.nx as f32 - 1.0) / 2.0,
        (dims.ny as f32 - 1.0) / 2.0,
        (dims.nz as f32 - 1.0) / 2.0,
    ];
    validate(spec, center)?;

    let mut label = LabelVolume::zeros(dims);
    for lesion in &spec.lesions {
        stamp_lesion(&mut label, lesion);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let r2 = spec.brain_radius * spec.brain_radius;
    let modality_volumes: [IntensityVolume; 4] = std::array::from_fn(|m| {
        let mut v = IntensityVolume::zeros(dims);
        for (i, out) in v.data.iter_mut().enumerate() {
            let (x, y, z) = dims.coords(i);
            let d2 = sq(x as f32 - center[0]) + sq(y as f32 - center[1]) + sq(z as f32 - center[2]);
            if d2 > r2 {
                continue;
            }
            let gain = match label.data[i] {
                0 => 1.0,
                c => CLASS_GAIN[(c - 1) as usize][m],
            };
            let noise: f32 = rng.sample(StandardNormal);
            *out = (BASE_INTENSITY[m] * gain * (1.0 + NOISE_FRACTION * noise)).max(1.0);
        }
        v
    });

    MultiModalCase::new(spec.case_id(), modality_volumes, label, spec.phase)
}

fn validate(spec: &PhantomSpec, brain_center: [f32; 3]) -> Result<()> {
    for lesion in &spec.lesions {
        if lesion.radius < 1.0 {
            return Err(Error::InvalidConfig(format!(
                "lesion radius {} is below 1 voxel",
                lesion.radius
            )));
        }
        match lesion.kind {
            LesionKind::Solid { class } if !(1..=4).contains(&class) => {
                return Err(Error::InvalidConfig(format!(
                    "lesion class {class} is outside 1..=4"
                )));
            }
            LesionKind::Shelled { core_frac, rim_frac }
                if !(0.0 < core_frac && core_frac < rim_frac && rim_frac < 1.0) =>
            {
                return Err(Error::InvalidConfig(format!(
                    "shell fractions ({core_frac}, {rim_frac}) must satisfy 0 < core < rim < 1"
                )));
            }
            _ => {}
        }
        let dist = (0..3).map(|a| sq(lesion.center[a] - brain_center[a])).sum::<f32>().sqrt();
        if dist + lesion.radius > spec.brain_radius {
            return Err(Error::LesionOutsideBrain {
                center: lesion.center,
                radius: lesion.radius,
                brain_radius: spec.brain_radius,
            });
        }
    }
    Ok(())
}

fn stamp_lesion(label: &mut LabelVolume, lesion: &LesionSpec) {
    let dims = label.dims;
    let r = lesion.radius;
    let lo = |c: f32| ((c - r).floor().max(0.0)) as usize;
    let hi = |c: f32, n: usize| ((c + r).ceil() as usize).min(n - 1);
    let (x0, x1) = (lo(lesion.center[0]), hi(lesion.center[0], dims.nx));
    let (y0, y1) = (lo(lesion.center[1]), hi(lesion.center[1], dims.ny));
    let (z0, z1) = (lo(lesion.center[2]), hi(lesion.center[2], dims.nz));
    for z in z0..=z1 {
        for y in y0..=y1 {
            for x in x0..=x1 {
                let d = (sq(x as f32 - lesion.center[0])
                    + sq(y as f32 - lesion.center[1])
                    + sq(z as f32 - lesion.center[2]))
                .sqrt();
                if d > r {
                    continue;
                }
                let code = match lesion.kind {
                    LesionKind::Solid { class } => class,
                    LesionKind::Shelled { core_frac, rim_frac } => {
                        if d <= core_frac * r {
                            1
                        } else if d <= rim_frac * r {
                            3
                        } else {
                            2
                        }
                    }
                };
                label.data[dims.index(x, y, z)] = code;
            }
        }
    }
}

#[inline]
fn sq(v: f32) -> f32 {
    v * v
}

/// Softens a label volume into per-channel probabilities: the true channel
/// gets `confidence`, the remaining mass is split over the other four
/// channels with seeded jitter (no single channel receives more than 3/4
/// of the remainder). Per-voxel sums land within 1e-6 of 1, and argmax
/// recovers the label whenever confidence > 0.5.
pub fn make_probability(label: &LabelVolume, confidence: f64, seed: u64) -> ProbabilityVolume {
    assert!(
        confidence > 0.0 && confidence <= 1.0,
        "confidence {confidence} outside (0, 1]"
    );
    let n = label.dims.voxel_count();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let remainder = 1.0 - confidence;
    let mut data = vec![0.0f32; n * PROB_CHANNELS];
    for (i, &code) in label.data.iter().enumerate() {
        let true_ch = code as usize;
        let mut weights = [0.0f64; PROB_CHANNELS];
        let mut total = 0.0;
        for (c, w) in weights.iter_mut().enumerate() {
            if c != true_ch {
                *w = 0.5 + rng.random::<f64>();
                total += *w;
            }
        }
        data[true_ch * n + i] = confidence as f32;
        for (c, w) in weights.iter().enumerate() {
            if c != true_ch {
                data[c * n + i] = (remainder * w / total) as f32;
            }
        }
    }
    ProbabilityVolume::new(label.dims, data).expect("generated probabilities are normalized")
}
