//! Prediction post-processing: probability ensembling, resection-cavity
//! suppression for pre-treatment cases, and minimum-size component
//! filtering per region.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{connected_components, Connectivity};
use crate::volume::{
    region_mask, LabelVolume, Phase, ProbabilityVolume, Region, PROB_CHANNELS,
};

/// Minimum component sizes (in voxels) for one treatment phase. `None` for
/// RC means no RC filtering; the RC step is skipped for pre-treatment
/// volumes regardless.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseThresholds {
    pub wt: u32,
    pub tc: u32,
    pub et: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rc: Option<u32>,
}

impl PhaseThresholds {
    pub fn zero() -> Self {
        PhaseThresholds {
            wt: 0,
            tc: 0,
            et: 0,
            rc: Some(0),
        }
    }

    fn threshold_for(&self, region: Region) -> Option<u32> {
        match region {
            Region::WT => Some(self.wt),
            Region::TC => Some(self.tc),
            Region::ET => Some(self.et),
            Region::RC => self.rc,
            _ => None,
        }
    }
}

/// Per-phase filtering thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ThresholdSet {
    pub pre: PhaseThresholds,
    pub post: PhaseThresholds,
}

/// On-disk row of a threshold-set JSON document.
#[derive(Serialize, Deserialize)]
struct ThresholdRow {
    phase: Phase,
    wt: u32,
    tc: u32,
    et: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rc: Option<u32>,
}

impl ThresholdSet {
    pub fn for_phase(&self, phase: Phase) -> PhaseThresholds {
        match phase {
            Phase::Pre => self.pre,
            Phase::Post => self.post,
        }
    }

    /// No filtering at all.
    pub fn set0() -> Self {
        ThresholdSet {
            pre: PhaseThresholds::zero(),
            post: PhaseThresholds::zero(),
        }
    }

    /// One shared row for both phases: WT 200, TC 100, ET 60, RC 70.
    pub fn set1() -> Self {
        let row = PhaseThresholds {
            wt: 200,
            tc: 100,
            et: 60,
            rc: Some(70),
        };
        ThresholdSet { pre: row, post: row }
    }

    /// Phase-specific rows: pre WT 250 / TC 150 / ET 100, post WT 200 /
    /// TC 100 / ET 50 / RC 80.
    pub fn set2() -> Self {
        ThresholdSet {
            pre: PhaseThresholds {
                wt: 250,
                tc: 150,
                et: 100,
                rc: None,
            },
            post: PhaseThresholds {
                wt: 200,
                tc: 100,
                et: 50,
                rc: Some(80),
            },
        }
    }

    /// Looks up a named preset (`set0`, `set1`, `set2`).
    pub fn preset(name: &str) -> Option<Self> {
        match name.trim().to_ascii_lowercase().as_str() {
            "set0" => Some(Self::set0()),
            "set1" => Some(Self::set1()),
            "set2" => Some(Self::set2()),
            _ => None,
        }
    }

    /// Parses a JSON array of `{phase, wt, tc, et, rc}` rows. A document
    /// with a single row applies it to both phases.
    pub fn from_json(json: &str) -> Result<Self> {
        let rows: Vec<ThresholdRow> = serde_json::from_str(json)
            .map_err(|e| Error::InvalidConfig(format!("threshold set: {e}")))?;
        let find = |phase: Phase| -> Option<PhaseThresholds> {
            rows.iter().find(|r| r.phase == phase).map(|r| PhaseThresholds {
                wt: r.wt,
                tc: r.tc,
                et: r.et,
                rc: r.rc,
            })
        };
        match (find(Phase::Pre), find(Phase::Post)) {
            (Some(pre), Some(post)) => Ok(ThresholdSet { pre, post }),
            (None, None) => Err(Error::InvalidConfig(
                "threshold set: no phase rows found".into(),
            )),
            (pre, post) if rows.len() == 1 => {
                let only = pre.or(post).unwrap();
                Ok(ThresholdSet {
                    pre: only,
                    post: only,
                })
            }
            _ => Err(Error::InvalidConfig(
                "threshold set: need rows for both phases (or a single shared row)".into(),
            )),
        }
    }

    pub fn to_json(&self) -> String {
        let row = |phase: Phase, t: PhaseThresholds| ThresholdRow {
            phase,
            wt: t.wt,
            tc: t.tc,
            et: t.et,
            rc: t.rc,
        };
        serde_json::to_string_pretty(&[row(Phase::Pre, self.pre), row(Phase::Post, self.post)])
            .expect("threshold rows serialize")
    }
}

/// Whether later regions see the removals of earlier ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ThresholdMode {
    /// Filter WT, then TC, ET, RC on the already-filtered volume, so
    /// removing a WT component also drops its TC/ET content.
    #[default]
    Cascade,
    /// Measure every region on the input volume and apply all removals at
    /// once.
    Independent,
}

/// Region filtering order. WT first so that removing a whole lesion
/// cascades into its core; RC last and only after treatment.
const FILTER_ORDER: [Region; 4] = [Region::WT, Region::TC, Region::ET, Region::RC];

/// Removes small components per region: a component is retained iff its
/// voxel count is at least the region's threshold. Runs in cascade mode;
/// see [`apply_thresholds_with`] for the independent variant.
pub fn apply_thresholds(label: &LabelVolume, ts: &ThresholdSet, phase: Phase) -> LabelVolume {
    apply_thresholds_with(label, ts, phase, ThresholdMode::Cascade)
}

pub fn apply_thresholds_with(
    label: &LabelVolume,
    ts: &ThresholdSet,
    phase: Phase,
    mode: ThresholdMode,
) -> LabelVolume {
    let thresholds = ts.for_phase(phase);
    let mut out = label.clone();
    let mut pending: Vec<usize> = Vec::new();
    for region in FILTER_ORDER {
        if region == Region::RC && phase == Phase::Pre {
            continue;
        }
        let Some(threshold) = thresholds.threshold_for(region) else {
            continue;
        };
        if threshold == 0 {
            continue; // every component has at least one voxel
        }
        let measured = match mode {
            ThresholdMode::Cascade => &out,
            ThresholdMode::Independent => label,
        };
        let cc = connected_components(&region_mask(measured, region), Connectivity::TwentySix);
        let small: Vec<bool> = cc.sizes.iter().map(|s| *s < threshold as usize).collect();
        if !small.iter().any(|s| *s) {
            continue;
        }
        for (i, l) in cc.labels.iter().enumerate() {
            if *l != 0 && small[(l - 1) as usize] {
                match mode {
                    ThresholdMode::Cascade => out.data[i] = 0,
                    ThresholdMode::Independent => pending.push(i),
                }
            }
        }
    }
    for i in pending {
        out.data[i] = 0;
    }
    out
}

/// Per-voxel argmax over the five channels; ties resolve to the lowest
/// channel index.
pub fn argmax_label(prob: &ProbabilityVolume) -> LabelVolume {
    argmax_with(prob, false)
}

/// Argmax with the RC channel zeroed, so a pre-treatment prediction can
/// never contain a resection cavity. Ties resolve to the lowest index.
pub fn suppress_rc(prob: &ProbabilityVolume) -> LabelVolume {
    argmax_with(prob, true)
}

fn argmax_with(prob: &ProbabilityVolume, zero_rc: bool) -> LabelVolume {
    let n = prob.dims.voxel_count();
    let mut data = vec![0u8; n];
    for (i, out) in data.iter_mut().enumerate() {
        let mut best = 0usize;
        let mut best_v = f32::NEG_INFINITY;
        for c in 0..PROB_CHANNELS {
            let v = if zero_rc && c == 4 {
                0.0
            } else {
                prob.channel(c)[i]
            };
            if v > best_v {
                best_v = v;
                best = c;
            }
        }
        *out = best as u8;
    }
    LabelVolume {
        dims: prob.dims,
        data,
    }
}

/// Per-voxel, per-channel arithmetic mean of the inputs, accumulated in
/// f64. The mean of `k` copies of a volume is bit-identical to that volume.
pub fn ensemble(probs: &[ProbabilityVolume]) -> Result<ProbabilityVolume> {
    let first = probs.first().ok_or(Error::EmptyList)?;
    for p in &probs[1..] {
        if !p.dims.same_shape(&first.dims) {
            return Err(Error::DimsMismatch(first.dims, p.dims));
        }
    }
    let len = first.data().len();
    let mut sums = vec![0.0f64; len];
    for p in probs {
        for (s, v) in sums.iter_mut().zip(p.data()) {
            *s += *v as f64;
        }
    }
    let k = probs.len() as f64;
    let data: Vec<f32> = sums.into_iter().map(|s| (s / k) as f32).collect();
    ProbabilityVolume::new(first.dims, data)
}

/// Full prediction path: ensemble the probabilities, decode labels
/// (suppressing RC before treatment), then filter small components.
pub fn ensemble_predict(
    probs: &[ProbabilityVolume],
    phase: Phase,
    ts: &ThresholdSet,
) -> Result<LabelVolume> {
    let mean = ensemble(probs)?;
    let labels = match phase {
        Phase::Pre => suppress_rc(&mean),
        Phase::Post => argmax_label(&mean),
    };
    Ok(apply_thresholds(&labels, ts, phase))
}
