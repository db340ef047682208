//! Acceptance checks for the pipeline as a whole: frozen-table
//! reproduction, sampling distributions, brute-force metric oracles,
//! filtering and ensembling properties, seeded reproducibility, and file
//! round trips. Each check prints a single `ACCEPTANCE ...` verdict line
//! (run with `--nocapture` to see them); tolerances and runtime budgets
//! are pinned inline next to the assertions they guard.

use std::collections::VecDeque;
use std::panic::{catch_unwind, resume_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use lesionlab::augment::{augment_case, AugmentConfig, LabelPool, RandomStream};
use lesionlab::metrics::{
    connected_components, dice, lesion_wise_dice, nsd, Connectivity, LesionMatchReport,
};
use lesionlab::phantom::{make_case, make_probability, LesionKind, LesionSpec, PhantomSpec};
use lesionlab::postproc::{
    apply_thresholds, argmax_label, ensemble, ensemble_predict, suppress_rc, ThresholdSet,
};
use lesionlab::stats::{paired_t, rank_models, ScoreMatrix};
use lesionlab::volume::{
    load_intensity, load_label, load_probability, save_intensity, save_label, save_probability,
    BinaryVolume, Dims, IntensityVolume, LabelVolume, MultiModalCase, Phase, ProbabilityVolume,
    Region,
};
use lesionlab::Error;

/// Runs one acceptance body and prints its verdict line. The body returns
/// a short detail string for the PASS line; any panic inside it is
/// reported as FAIL and re-raised so the test still fails normally.
fn verdict(tag: &str, body: impl FnOnce() -> String) {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(detail) => println!("ACCEPTANCE {tag}: PASS ({detail})"),
        Err(cause) => {
            println!("ACCEPTANCE {tag}: FAIL");
            resume_unwind(cause);
        }
    }
}

// ---------------------------------------------------------------------------
// Frozen reference tables. The seven models are the three augmentation
// policies plus every ensemble of their predictions; scores are mean
// lesion-wise Dice per region, in Region::ALL column order.

const MODELS: [&str; 7] = [
    "baseline",
    "regular",
    "custom",
    "ens-base-reg",
    "ens-base-cust",
    "ens-reg-cust",
    "ens-all",
];

const LESION_DICE: [[f64; 6]; 7] = [
    [0.812, 0.821, 0.894, 0.818, 0.825, 0.849],
    [0.813, 0.824, 0.883, 0.815, 0.827, 0.846],
    [0.813, 0.830, 0.888, 0.802, 0.821, 0.835],
    [0.812, 0.823, 0.893, 0.817, 0.826, 0.848],
    [0.816, 0.835, 0.892, 0.813, 0.827, 0.843],
    [0.815, 0.831, 0.889, 0.805, 0.826, 0.837],
    [0.812, 0.833, 0.893, 0.813, 0.822, 0.844],
];

/// Frozen per-region ranks and row averages for the table above. The
/// frozen table is internally inconsistent in exactly one cell: it lists
/// rank 4 for (ens-reg-cust, RC), while the scores above place that model
/// fifth in the RC column. Recomputation is expected to differ there and
/// nowhere else, so that row's average is checked against the recomputed
/// ranks instead.
const FROZEN_RANKS: [[u32; 6]; 7] = [
    [5, 7, 1, 1, 5, 1],
    [3, 5, 7, 3, 1, 3],
    [3, 4, 6, 7, 7, 7],
    [5, 6, 2, 2, 3, 2],
    [1, 1, 4, 4, 1, 5],
    [2, 3, 4, 6, 3, 6],
    [5, 2, 2, 4, 6, 4],
];

const FROZEN_AVG_RANK: [f64; 7] = [3.33, 3.67, 5.67, 3.33, 2.67, 4.00, 3.83];
const DIVERGENT_MODEL: usize = 5;
const DIVERGENT_REGION: usize = 2; // RC column

/// Mean lesion-wise Dice per region for the three size-threshold presets,
/// and the frozen paired t-test rows between them.
const SWEEP_MEANS: [[f64; 6]; 3] = [
    [0.792, 0.834, 0.864, 0.806, 0.819, 0.838], // set0
    [0.816, 0.835, 0.892, 0.813, 0.827, 0.843], // set1
    [0.811, 0.835, 0.891, 0.813, 0.825, 0.842], // set2
];

const FROZEN_T_ROWS: [(usize, usize, f64, f64); 3] = [
    (0, 1, -2.6963, 0.0430),
    (1, 2, 1.9640, 0.1067),
    (0, 2, -2.5887, 0.0489),
];

fn lesion_dice_csv() -> String {
    let mut out = String::from("model,ET,NETC,RC,SNFH,TC,WT\n");
    for (name, row) in MODELS.iter().zip(LESION_DICE) {
        out.push_str(name);
        for v in row {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    out
}

#[test]
fn c1_rank_table_reproduction() {
    verdict("C1 rank-table-reproduction", || {
        let start = Instant::now();
        let matrix = ScoreMatrix::from_csv_str(&lesion_dice_csv()).unwrap();
        let table = rank_models(&matrix);

        let mut mismatches = Vec::new();
        for m in 0..MODELS.len() {
            for (c, region) in Region::ALL.into_iter().enumerate() {
                if table.rank(m, region) != FROZEN_RANKS[m][c] {
                    mismatches.push((m, c));
                }
            }
        }
        assert_eq!(
            mismatches,
            vec![(DIVERGENT_MODEL, DIVERGENT_REGION)],
            "expected exactly one divergent cell at (ens-reg-cust, RC)"
        );
        assert_eq!(table.rank(DIVERGENT_MODEL, Region::RC), 5);

        for m in 0..MODELS.len() {
            if m == DIVERGENT_MODEL {
                // Average over the recomputed ranks: (2+3+5+6+3+6)/6.
                let expected = 25.0 / 6.0;
                assert!(
                    (table.averages[m] - expected).abs() < 1e-12,
                    "ens-reg-cust average {} != {expected}",
                    table.averages[m]
                );
            } else {
                assert!(
                    (table.averages[m] - FROZEN_AVG_RANK[m]).abs() <= 0.005,
                    "model {} average {} vs frozen {}",
                    MODELS[m],
                    table.averages[m],
                    FROZEN_AVG_RANK[m]
                );
            }
        }

        let elapsed = start.elapsed();
        assert!(elapsed < Duration::from_secs(1), "took {elapsed:?}, budget 1 s");
        format!(
            "41/42 cells match, divergent cell recomputes as rank 5, averages within 0.005, {:.0} ms",
            elapsed.as_secs_f64() * 1e3
        )
    });
}

#[test]
fn c2_threshold_sweep_t_tests() {
    verdict("C2 threshold-sweep-t-tests", || {
        let start = Instant::now();
        for (a, b, want_t, want_p) in FROZEN_T_ROWS {
            let r = paired_t(&SWEEP_MEANS[a], &SWEEP_MEANS[b]).unwrap();
            assert_eq!(r.df, 5, "set{a} vs set{b}");
            assert!(
                (r.t - want_t).abs() <= 1e-3,
                "set{a} vs set{b}: t = {} vs frozen {want_t}",
                r.t
            );
            assert!(
                (r.p - want_p).abs() <= 5e-4,
                "set{a} vs set{b}: p = {} vs frozen {want_p}",
                r.p
            );
        }
        let elapsed = start.elapsed();
        assert!(elapsed < Duration::from_secs(1), "took {elapsed:?}, budget 1 s");
        format!(
            "3 rows within t 1e-3 / p 5e-4, df 5, {:.0} ms",
            elapsed.as_secs_f64() * 1e3
        )
    });
}

// ---------------------------------------------------------------------------
// Augmentation distribution.

fn sampling_host() -> MultiModalCase {
    let spec = PhantomSpec {
        id: Some("host".into()),
        seed: 41,
        lesions: vec![LesionSpec {
            center: [22.0, 40.0, 30.0],
            radius: 6.0,
            kind: LesionKind::shelled(),
        }],
        ..PhantomSpec::default()
    };
    make_case(&spec).unwrap()
}

fn sampling_pool() -> LabelPool {
    let mut pool = LabelPool::new();
    // Donor lesions are kept small enough that even the largest scaled
    // copy almost always finds a spot, so placement failures stay rare
    // and the drawn tumor-count distribution comes through undistorted.
    for (id, seed, radius) in [("donor-a", 11, 5.0), ("donor-b", 12, 4.0), ("donor-c", 13, 4.5)] {
        let spec = PhantomSpec {
            id: Some(id.into()),
            seed,
            lesions: vec![LesionSpec {
                center: [32.0, 32.0, 32.0],
                radius,
                kind: LesionKind::shelled(),
            }],
            ..PhantomSpec::default()
        };
        pool.insert(id, &make_case(&spec).unwrap().label).unwrap();
    }
    pool
}

#[test]
fn c3_augmentation_sampling_distribution() {
    verdict("C3 augmentation-sampling-distribution", || {
        let start = Instant::now();
        let host = sampling_host();
        let pool = sampling_pool();

        let custom = AugmentConfig::custom();
        let mut counts = [0usize; 3];
        let mut snfh_removed = 0usize;
        let mut records = 0usize;
        let mut skipped = 0u32;
        for seed in 0..10_000u64 {
            let (_, outcome) =
                augment_case(&host, &pool, &custom, &mut RandomStream::from_seed(seed)).unwrap();
            counts[outcome.tumors_inserted as usize] += 1;
            skipped += outcome.skipped_placements;
            for r in &outcome.records {
                records += 1;
                snfh_removed += r.snfh_removed as usize;
                let (lo, hi) = if r.snfh_removed {
                    custom.scale_bounds_removed
                } else {
                    custom.scale_bounds_kept
                };
                assert!(lo < r.scale && r.scale < hi, "scale {} outside ({lo}, {hi})", r.scale);
            }
        }
        let freq: Vec<f64> = counts.iter().map(|c| *c as f64 / 10_000.0).collect();
        for (got, want) in freq.iter().zip([0.40, 0.36, 0.24]) {
            assert!((got - want).abs() <= 0.02, "tumor-count frequencies {freq:?}");
        }
        let snfh_frac = snfh_removed as f64 / records as f64;
        assert!((snfh_frac - 0.70).abs() <= 0.02, "SNFH-removal frequency {snfh_frac}");

        let regular = AugmentConfig::regular();
        let mut augmented = 0usize;
        for seed in 0..3_000u64 {
            let (_, outcome) =
                augment_case(&host, &pool, &regular, &mut RandomStream::from_seed(seed)).unwrap();
            assert!(outcome.tumors_inserted <= 1, "regular policy placed a second tumor");
            augmented += (outcome.tumors_inserted > 0) as usize;
            for r in &outcome.records {
                assert!(!r.snfh_removed);
                let (lo, hi) = regular.scale_bounds_kept;
                assert!(lo < r.scale && r.scale < hi);
            }
        }
        let aug_frac = augmented as f64 / 3_000.0;
        assert!((aug_frac - 0.75).abs() <= 0.02, "augmented fraction {aug_frac}");

        let elapsed = start.elapsed();
        assert!(elapsed < Duration::from_secs(120), "took {elapsed:?}, budget 120 s");
        format!(
            "custom {:.3}/{:.3}/{:.3}, snfh {snfh_frac:.3}, regular {aug_frac:.3}, {skipped} skips, {:.0} s",
            freq[0], freq[1], freq[2], elapsed.as_secs_f64()
        )
    });
}

// ---------------------------------------------------------------------------
// Brute-force metric oracles. Everything below recomputes the metrics from
// their definitions (per-voxel counting, BFS flood fill, all-pairs surface
// distances, Chebyshev-ball neighborhoods) without touching the library's
// component labeling, dilation, or surface code.

struct Lcg(u64);

impl Lcg {
    fn next_u64(&mut self) -> u64 {
        self.0 = self
            .0
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        self.0
    }

    fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    fn below(&mut self, n: usize) -> usize {
        (self.next_u64() % n as u64) as usize
    }
}

fn random_mask(dims: Dims, density: f64, rng: &mut Lcg) -> BinaryVolume {
    BinaryVolume {
        dims,
        data: (0..dims.voxel_count()).map(|_| rng.unit() < density).collect(),
    }
}

fn perturbed_copy(mask: &BinaryVolume, flip: f64, rng: &mut Lcg) -> BinaryVolume {
    BinaryVolume {
        dims: mask.dims,
        data: mask.data.iter().map(|v| *v ^ (rng.unit() < flip)).collect(),
    }
}

fn oracle_dice(pred: &BinaryVolume, gt: &BinaryVolume) -> f64 {
    let mut inter = 0usize;
    let mut total = 0usize;
    for (p, g) in pred.data.iter().zip(&gt.data) {
        inter += (*p && *g) as usize;
        total += *p as usize + *g as usize;
    }
    if total == 0 {
        1.0
    } else {
        2.0 * inter as f64 / total as f64
    }
}

/// Surface voxel indices: foreground with a face neighbor that is
/// background or outside the volume, checked coordinate by coordinate.
fn oracle_surface(mask: &BinaryVolume) -> Vec<usize> {
    let dims = mask.dims;
    let at = |x: i64, y: i64, z: i64| -> bool {
        x >= 0
            && y >= 0
            && z >= 0
            && x < dims.nx as i64
            && y < dims.ny as i64
            && z < dims.nz as i64
            && mask.data[dims.index(x as usize, y as usize, z as usize)]
    };
    let mut out = Vec::new();
    for (i, v) in mask.data.iter().enumerate() {
        if !*v {
            continue;
        }
        let (x, y, z) = dims.coords(i);
        let (x, y, z) = (x as i64, y as i64, z as i64);
        let exposed = !at(x - 1, y, z)
            || !at(x + 1, y, z)
            || !at(x, y - 1, z)
            || !at(x, y + 1, z)
            || !at(x, y, z - 1)
            || !at(x, y, z + 1);
        if exposed {
            out.push(i);
        }
    }
    out
}

fn oracle_nsd(pred: &BinaryVolume, gt: &BinaryVolume, tol_mm: f64) -> f64 {
    let dims = pred.dims;
    let sp = oracle_surface(pred);
    let sg = oracle_surface(gt);
    if sp.is_empty() && sg.is_empty() {
        return 1.0;
    }
    if sp.is_empty() || sg.is_empty() {
        return 0.0;
    }
    let tol2 = tol_mm * tol_mm;
    let close = |from: &[usize], to: &[usize]| -> usize {
        from.iter()
            .filter(|&&i| {
                let (x, y, z) = dims.coords(i);
                to.iter().any(|&j| {
                    let (qx, qy, qz) = dims.coords(j);
                    let d2 = ((x as i64 - qx as i64) as f64 * dims.spacing[0] as f64).powi(2)
                        + ((y as i64 - qy as i64) as f64 * dims.spacing[1] as f64).powi(2)
                        + ((z as i64 - qz as i64) as f64 * dims.spacing[2] as f64).powi(2);
                    d2 <= tol2
                })
            })
            .count()
    };
    (close(&sp, &sg) + close(&sg, &sp)) as f64 / (sp.len() + sg.len()) as f64
}

struct OracleComponents {
    labels: Vec<u32>,
    sizes: Vec<usize>,
}

/// BFS flood fill seeded in raster order, so ids agree with
/// first-appearance labeling by construction.
fn oracle_components(mask: &BinaryVolume, connectivity: Connectivity) -> OracleComponents {
    let dims = mask.dims;
    let (nx, ny, nz) = (dims.nx as i64, dims.ny as i64, dims.nz as i64);
    let mut labels = vec![0u32; mask.data.len()];
    let mut sizes = Vec::new();
    for start in 0..mask.data.len() {
        if !mask.data[start] || labels[start] != 0 {
            continue;
        }
        let id = sizes.len() as u32 + 1;
        labels[start] = id;
        let mut size = 0usize;
        let mut queue = VecDeque::from([start]);
        while let Some(i) = queue.pop_front() {
            size += 1;
            let (x, y, z) = dims.coords(i);
            for dz in -1i64..=1 {
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        if (dx, dy, dz) == (0, 0, 0) {
                            continue;
                        }
                        if connectivity == Connectivity::Six
                            && dx.abs() + dy.abs() + dz.abs() != 1
                        {
                            continue;
                        }
                        let (qx, qy, qz) = (x as i64 + dx, y as i64 + dy, z as i64 + dz);
                        if qx < 0 || qy < 0 || qz < 0 || qx >= nx || qy >= ny || qz >= nz {
                            continue;
                        }
                        let q = dims.index(qx as usize, qy as usize, qz as usize);
                        if mask.data[q] && labels[q] == 0 {
                            labels[q] = id;
                            queue.push_back(q);
                        }
                    }
                }
            }
        }
        sizes.push(size);
    }
    OracleComponents { labels, sizes }
}

struct OracleLesionDice {
    score: f64,
    assigned: Vec<Vec<u32>>,
    false_positives: Vec<u32>,
}

/// Exhaustive lesion matching: every predicted component is compared
/// against every ground-truth lesion's Chebyshev-ball neighborhood (radius
/// = dilation iterations), assigned to the largest overlap with ties to
/// the lowest lesion id, and scored as Dice of the lesion against the
/// union of its assigned predictions.
fn oracle_lesion_dice(pred: &BinaryVolume, gt: &BinaryVolume, iters: usize) -> OracleLesionDice {
    let dims = gt.dims;
    let gt_cc = oracle_components(gt, Connectivity::TwentySix);
    let pred_cc = oracle_components(pred, Connectivity::TwentySix);
    let n_gt = gt_cc.sizes.len();
    let n_pred = pred_cc.sizes.len();

    let coords_of = |cc: &OracleComponents, id: u32| -> Vec<(i64, i64, i64)> {
        cc.labels
            .iter()
            .enumerate()
            .filter(|(_, l)| **l == id)
            .map(|(i, _)| {
                let (x, y, z) = dims.coords(i);
                (x as i64, y as i64, z as i64)
            })
            .collect()
    };
    let gt_voxels: Vec<Vec<(i64, i64, i64)>> =
        (1..=n_gt as u32).map(|id| coords_of(&gt_cc, id)).collect();
    let pred_voxels: Vec<Vec<(i64, i64, i64)>> =
        (1..=n_pred as u32).map(|id| coords_of(&pred_cc, id)).collect();

    let mut assigned: Vec<Vec<u32>> = vec![Vec::new(); n_gt];
    let mut false_positives = Vec::new();
    let r = iters as i64;
    for (pi, pv) in pred_voxels.iter().enumerate() {
        let mut best: Option<(usize, usize)> = None;
        for (gi, gv) in gt_voxels.iter().enumerate() {
            let overlap = pv
                .iter()
                .filter(|&&(x, y, z)| {
                    gv.iter().any(|&(gx, gy, gz)| {
                        (x - gx).abs().max((y - gy).abs()).max((z - gz).abs()) <= r
                    })
                })
                .count();
            if overlap > 0 && best.map_or(true, |(b, _)| overlap > b) {
                best = Some((overlap, gi));
            }
        }
        match best {
            Some((_, gi)) => assigned[gi].push(pi as u32 + 1),
            None => false_positives.push(pi as u32 + 1),
        }
    }

    let mut sum = 0.0f64;
    for (gi, preds) in assigned.iter().enumerate() {
        let gid = gi as u32 + 1;
        let mut inter = 0usize;
        let mut total = 0usize;
        for i in 0..gt_cc.labels.len() {
            let in_gt = gt_cc.labels[i] == gid;
            let in_pred = pred_cc.labels[i] != 0 && preds.contains(&pred_cc.labels[i]);
            inter += (in_gt && in_pred) as usize;
            total += in_gt as usize + in_pred as usize;
        }
        sum += if total == 0 {
            1.0
        } else {
            2.0 * inter as f64 / total as f64
        };
    }
    let denom = n_gt + false_positives.len();
    let score = if denom == 0 { 1.0 } else { sum / denom as f64 };
    OracleLesionDice {
        score,
        assigned,
        false_positives,
    }
}

fn check_components(mask: &BinaryVolume) {
    for conn in [Connectivity::Six, Connectivity::TwentySix] {
        let got = connected_components(mask, conn);
        let want = oracle_components(mask, conn);
        assert_eq!(got.labels, want.labels, "{conn:?} labels");
        assert_eq!(got.sizes, want.sizes, "{conn:?} sizes");
        assert_eq!(got.count, want.sizes.len(), "{conn:?} count");
    }
}

fn check_lesion_dice(pred: &BinaryVolume, gt: &BinaryVolume, iters: usize) -> LesionMatchReport {
    let report = lesion_wise_dice(pred, gt, iters).unwrap();
    let want = oracle_lesion_dice(pred, gt, iters);
    assert!(
        report.score == want.score,
        "lesion dice {} vs oracle {}",
        report.score,
        want.score
    );
    let got_assigned: Vec<Vec<u32>> =
        report.matches.iter().map(|m| m.pred_ids.clone()).collect();
    assert_eq!(got_assigned, want.assigned, "lesion assignment");
    let got_fp: Vec<u32> = report.false_positives.iter().map(|f| f.pred_id).collect();
    assert_eq!(got_fp, want.false_positives, "false positives");
    report
}

#[test]
fn c4_metric_brute_force_equivalence() {
    verdict("C4 metric-brute-force-equivalence", || {
        let start = Instant::now();
        let mut rng = Lcg(0x5EED_0001);
        let mut lesions = 0usize;
        let mut false_positives = 0usize;
        for pair in 0..200usize {
            let mut dims = Dims::new(
                1 + rng.below(16),
                1 + rng.below(16),
                1 + rng.below(16),
            );
            if pair % 5 == 0 {
                dims = dims.with_spacing([1.0, 1.2, 2.0]);
            }
            let density = [0.05, 0.10, 0.18, 0.30][pair % 4];
            let gt = random_mask(dims, density, &mut rng);
            let pred = if pair % 2 == 1 {
                perturbed_copy(&gt, 0.08, &mut rng)
            } else {
                random_mask(dims, density, &mut rng)
            };

            let got = dice(&pred, &gt).unwrap();
            let want = oracle_dice(&pred, &gt);
            assert!(got == want, "dice {got} vs oracle {want}");

            let tol = [1.0, 1.5][pair % 2];
            let got = nsd(&pred, &gt, tol).unwrap();
            let want = oracle_nsd(&pred, &gt, tol);
            assert!((got - want).abs() <= 1e-9, "nsd {got} vs oracle {want}");

            check_components(&gt);
            check_components(&pred);

            let report = check_lesion_dice(&pred, &gt, 1 + pair % 3);
            lesions += report.matches.len();
            false_positives += report.false_positives.len();
        }
        let elapsed = start.elapsed();
        assert!(elapsed < Duration::from_secs(60), "took {elapsed:?}, budget 60 s");
        format!(
            "200 pairs, {lesions} lesions / {false_positives} false positives matched, {:.1} s",
            elapsed.as_secs_f64()
        )
    });
}

// ---------------------------------------------------------------------------
// Size-filter properties.

/// A phantom whose lesions each either survive every pass of the shared
/// thresholds whole or are removed whole by the first pass that sees
/// them, so cascade filtering is expected to be idempotent on it.
fn filter_phantom(i: u64) -> PhantomSpec {
    let mut rng = RandomStream::from_seed(0xF117E6 + i);
    let phase = if rng.chance(0.5) { Phase::Pre } else { Phase::Post };
    let wanted = 1 + rng.index(3);
    let mut lesions: Vec<LesionSpec> = Vec::new();
    let mut tries = 0;
    while lesions.len() < wanted && tries < 200 {
        tries += 1;
        let kinds = if phase == Phase::Post { 4 } else { 3 };
        let (radius, kind) = match rng.index(kinds) {
            // Shelled, radius 5..10: edema, core, and rim all clear their
            // thresholds with room for discretization wobble.
            0 => (rng.uniform_open(5.0, 10.0), LesionKind::shelled()),
            // Solid, volume well above the whole-tumor threshold.
            1 => (
                rng.uniform_open(4.2, 8.0),
                LesionKind::Solid {
                    class: 1 + rng.index(3) as u8,
                },
            ),
            // Solid, volume well below it: dropped whole by the WT pass.
            2 => (
                rng.uniform_open(1.2, 2.2),
                LesionKind::Solid {
                    class: 1 + rng.index(3) as u8,
                },
            ),
            // Cavity, above the RC threshold (post-treatment only).
            _ => (rng.uniform_open(3.2, 6.0), LesionKind::Solid { class: 4 }),
        };
        let clearance = 28.0 - radius - 1.5;
        let center = loop {
            let v = [
                rng.uniform_open(-1.0, 1.0),
                rng.uniform_open(-1.0, 1.0),
                rng.uniform_open(-1.0, 1.0),
            ];
            if v.iter().map(|a| a * a).sum::<f64>() <= 1.0 {
                break [
                    (31.5 + v[0] * clearance) as f32,
                    (31.5 + v[1] * clearance) as f32,
                    (31.5 + v[2] * clearance) as f32,
                ];
            }
        };
        let separated = lesions.iter().all(|l| {
            let d2: f64 = l
                .center
                .iter()
                .zip(center)
                .map(|(a, b)| (*a as f64 - b as f64).powi(2))
                .sum();
            d2.sqrt() >= (l.radius + radius as f32 + 2.0) as f64
        });
        if separated {
            lesions.push(LesionSpec {
                center,
                radius: radius as f32,
                kind,
            });
        }
    }
    PhantomSpec {
        id: Some(format!("filter-{i}")),
        seed: i,
        phase,
        lesions,
        ..PhantomSpec::default()
    }
}

/// The boundary fixture: an ET core of exactly 60 (or 59) voxels inside a
/// NETC casing large enough to clear the WT and TC passes.
fn et_boundary_label(shave: bool) -> LabelVolume {
    let dims = Dims::new(20, 12, 12);
    let mut label = LabelVolume::zeros(dims);
    for z in 1..=8 {
        for y in 1..=8 {
            for x in 1..=8 {
                label.data[dims.index(x, y, z)] = 1;
            }
        }
    }
    for z in 2..=6 {
        for y in 2..=5 {
            for x in 2..=4 {
                label.data[dims.index(x, y, z)] = 3;
            }
        }
    }
    if shave {
        label.data[dims.index(2, 2, 2)] = 1;
    }
    label
}

#[test]
fn c5_size_filter_properties() {
    verdict("C5 size-filter-properties", || {
        let set1 = ThresholdSet::set1();
        let mut pruned_voxels = 0usize;
        let mut untouched_phantoms = 0usize;
        let mut suppression_checks = 0usize;
        for i in 0..100u64 {
            let spec = filter_phantom(i);
            let case = make_case(&spec).unwrap();
            let filtered = apply_thresholds(&case.label, &set1, case.phase);
            for (o, l) in filtered.data.iter().zip(&case.label.data) {
                assert!(*o == *l || *o == 0, "filtering rewrote a voxel instead of clearing it");
            }
            let twice = apply_thresholds(&filtered, &set1, case.phase);
            assert_eq!(twice, filtered, "cascade filtering is not idempotent on phantom {i}");
            let removed = filtered
                .data
                .iter()
                .zip(&case.label.data)
                .filter(|(o, l)| **o == 0 && **l != 0)
                .count();
            pruned_voxels += removed;
            untouched_phantoms += (removed == 0) as usize;

            if case.phase == Phase::Post && i % 5 == 0 {
                let p1 = make_probability(&case.label, 0.85, i);
                let p2 = make_probability(&case.label, 0.6, i + 500);
                assert!(!suppress_rc(&p1).contains_code(4));
                let pre = ensemble_predict(&[p1, p2], Phase::Pre, &set1).unwrap();
                assert!(!pre.contains_code(4));
                suppression_checks += 1;
            }
        }
        assert!(pruned_voxels > 0, "no phantom exercised the removal path");
        assert!(untouched_phantoms > 0, "no phantom survived filtering untouched");

        for (shave, expect_et) in [(false, 60usize), (true, 0)] {
            let label = et_boundary_label(shave);
            let et_before = label.data.iter().filter(|c| **c == 3).count();
            assert_eq!(et_before, if shave { 59 } else { 60 });
            let out = apply_thresholds(&label, &set1, Phase::Post);
            let et_after = out.data.iter().filter(|c| **c == 3).count();
            assert_eq!(et_after, expect_et, "ET filtering at the 59/60 boundary");
            let casing = out.data.iter().filter(|c| **c == 1).count();
            assert!(casing >= 450, "the NETC casing should survive");
        }

        // A prediction whose argmax is a cavity must lose it before
        // treatment and keep it after.
        let cavity_spec = PhantomSpec {
            id: Some("cavity".into()),
            seed: 77,
            phase: Phase::Post,
            lesions: vec![LesionSpec {
                center: [31.5, 31.5, 31.5],
                radius: 4.0,
                kind: LesionKind::Solid { class: 4 },
            }],
            ..PhantomSpec::default()
        };
        let cavity = make_case(&cavity_spec).unwrap();
        let prob = make_probability(&cavity.label, 0.9, 7);
        assert!(argmax_label(&prob).contains_code(4));
        assert!(!suppress_rc(&prob).contains_code(4));
        let pre = ensemble_predict(&[prob.clone(), prob], Phase::Pre, &set1).unwrap();
        assert!(!pre.contains_code(4));

        format!(
            "100 phantoms idempotent, {pruned_voxels} voxels pruned, {untouched_phantoms} untouched, \
             ET 60 kept / 59 dropped, {suppression_checks}+1 cavity suppressions"
        )
    });
}

// ---------------------------------------------------------------------------
// Ensemble exactness.

fn random_label(dims: Dims, rng: &mut Lcg) -> LabelVolume {
    let data = (0..dims.voxel_count()).map(|_| rng.below(5) as u8).collect();
    LabelVolume::new(dims, data).unwrap()
}

fn bits_equal(a: &ProbabilityVolume, b: &ProbabilityVolume) -> bool {
    a.data().len() == b.data().len()
        && a.data()
            .iter()
            .zip(b.data())
            .all(|(x, y)| x.to_bits() == y.to_bits())
}

#[test]
fn c6_ensemble_exactness() {
    verdict("C6 ensemble-exactness", || {
        let dims = Dims::cubic(8);
        let mut rng = Lcg(0xE5E3B1E);
        let a = make_probability(&random_label(dims, &mut rng), 0.9, 1);
        let b = make_probability(&random_label(dims, &mut rng), 0.7, 2);
        let c = make_probability(&random_label(dims, &mut rng), 0.8, 3);

        for k in [2usize, 3, 5] {
            let copies: Vec<ProbabilityVolume> = (0..k).map(|_| a.clone()).collect();
            let mean = ensemble(&copies).unwrap();
            assert!(bits_equal(&mean, &a), "mean of {k} identical volumes drifted");
        }

        let mean = ensemble(&[a.clone(), b.clone(), c.clone()]).unwrap();
        let n = dims.voxel_count();
        for i in 0..n * 5 {
            let want =
                ((a.data()[i] as f64 + b.data()[i] as f64 + c.data()[i] as f64) / 3.0) as f32;
            assert!(
                mean.data()[i].to_bits() == want.to_bits(),
                "voxel {i}: mean {} vs oracle {want}",
                mean.data()[i]
            );
        }
        let labels = argmax_label(&mean);
        for i in 0..n {
            let probs = mean.at(i);
            let mut best = 0usize;
            for ch in 1..probs.len() {
                if probs[ch] > probs[best] {
                    best = ch;
                }
            }
            assert_eq!(labels.data[i], best as u8, "argmax at voxel {i}");
        }

        let orders: [[usize; 3]; 6] =
            [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        let inputs = [&a, &b, &c];
        for order in orders {
            let shuffled: Vec<ProbabilityVolume> =
                order.iter().map(|&i| inputs[i].clone()).collect();
            let permuted = ensemble(&shuffled).unwrap();
            assert!(bits_equal(&permuted, &mean), "order {order:?} changed the mean");
        }

        "k in {2,3,5} bit-equal, 3-model mean and argmax match the oracle, 6 orders bit-equal"
            .into()
    });
}

// ---------------------------------------------------------------------------
// Identity and reproducibility.

fn intensity_bits(v: &IntensityVolume) -> Vec<u32> {
    v.data.iter().map(|x| x.to_bits()).collect()
}

fn case_bits_equal(a: &MultiModalCase, b: &MultiModalCase) -> bool {
    a.label.data == b.label.data
        && a.modalities
            .iter()
            .zip(&b.modalities)
            .all(|(x, y)| intensity_bits(x) == intensity_bits(y))
}

fn read_dir_sorted(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().into_string().unwrap(),
                std::fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    out.sort_by(|a, b| a.0.cmp(&b.0));
    out
}

fn assert_dirs_identical(a: &Path, b: &Path) -> usize {
    let fa = read_dir_sorted(a);
    let fb = read_dir_sorted(b);
    let names: Vec<&String> = fa.iter().map(|(n, _)| n).collect();
    assert_eq!(
        names,
        fb.iter().map(|(n, _)| n).collect::<Vec<_>>(),
        "directory listings differ"
    );
    for ((name, bytes_a), (_, bytes_b)) in fa.iter().zip(&fb) {
        assert!(bytes_a == bytes_b, "{name} differs between runs");
    }
    fa.len()
}

fn run_cli(args: &[&str]) {
    let output = Command::new(env!("CARGO_BIN_EXE_lesionlab"))
        .args(args)
        .output()
        .unwrap();
    assert!(
        output.status.success(),
        "lesionlab {args:?} failed: {}",
        String::from_utf8_lossy(&output.stderr)
    );
}

#[test]
fn c7_seeded_identity_and_reproducibility() {
    verdict("C7 seeded-identity-and-reproducibility", || {
        let host = sampling_host();
        let pool = sampling_pool();

        let disabled = AugmentConfig {
            p_insert: 0.0,
            ..AugmentConfig::custom()
        };
        let (out, outcome) =
            augment_case(&host, &pool, &disabled, &mut RandomStream::from_seed(3)).unwrap();
        assert_eq!(outcome.tumors_inserted, 0);
        assert!(outcome.records.is_empty());
        assert!(case_bits_equal(&out, &host), "disabled insertion changed the case");

        let set0 = ThresholdSet::set0();
        for phase in [Phase::Pre, Phase::Post] {
            let label = et_boundary_label(false);
            assert_eq!(apply_thresholds(&label, &set0, phase), label);
        }
        assert_eq!(
            apply_thresholds(&host.label, &set0, Phase::Post),
            host.label
        );

        let cfg = AugmentConfig::custom();
        let (first, o1) =
            augment_case(&host, &pool, &cfg, &mut RandomStream::from_seed(9)).unwrap();
        let (second, o2) =
            augment_case(&host, &pool, &cfg, &mut RandomStream::from_seed(9)).unwrap();
        assert_eq!(o1, o2);
        assert!(case_bits_equal(&first, &second), "same seed produced different volumes");
        assert!(o1.tumors_inserted > 0, "seed 9 should actually insert");

        // The same determinism through the command line, end to end:
        // phantom, augment, and evaluate twice each into separate
        // directories must produce byte-identical files.
        let dir = tempfile::tempdir().unwrap();
        let spec_path = dir.path().join("specs.json");
        let phantom = |id: &str, seed: u64| PhantomSpec {
            id: Some(id.into()),
            dims: Dims::cubic(32),
            seed,
            brain_radius: 14.0,
            lesions: vec![LesionSpec {
                center: [15.5, 15.5, 15.5],
                radius: 5.0,
                kind: LesionKind::shelled(),
            }],
            ..PhantomSpec::default()
        };
        std::fs::write(
            &spec_path,
            format!(
                "[{},{}]",
                phantom("alpha", 21).to_json(),
                phantom("beta", 22).to_json()
            ),
        )
        .unwrap();
        let spec = spec_path.to_str().unwrap();
        let path = |name: &str| dir.path().join(name).to_str().unwrap().to_owned();

        let mut compared = 0usize;
        for (out_a, out_b) in [("cases-a", "cases-b")] {
            run_cli(&["phantom", "--spec", spec, "--out", &path(out_a)]);
            run_cli(&["phantom", "--spec", spec, "--out", &path(out_b)]);
            compared += assert_dirs_identical(&dir.path().join(out_a), &dir.path().join(out_b));
        }
        for (out_a, out_b) in [("aug-a", "aug-b")] {
            let cases = path("cases-a");
            run_cli(&[
                "--seed", "5", "augment", "--cases", &cases, "--augment", "custom", "--out",
                &path(out_a),
            ]);
            run_cli(&[
                "--seed", "5", "augment", "--cases", &cases, "--augment", "custom", "--out",
                &path(out_b),
            ]);
            compared += assert_dirs_identical(&dir.path().join(out_a), &dir.path().join(out_b));
        }
        for (rep_a, rep_b) in [("report-a.csv", "report-b.csv")] {
            let (pred, gt) = (path("aug-a"), path("cases-a"));
            run_cli(&["evaluate", "--pred", &pred, "--gt", &gt, "--out", &path(rep_a)]);
            run_cli(&["evaluate", "--pred", &pred, "--gt", &gt, "--out", &path(rep_b)]);
            for (a, b) in [
                (path(rep_a), path(rep_b)),
                (path("report-a.aggregate.csv"), path("report-b.aggregate.csv")),
            ] {
                assert!(
                    std::fs::read(&a).unwrap() == std::fs::read(&b).unwrap(),
                    "{a} differs between runs"
                );
                compared += 1;
            }
        }

        format!(
            "insertion off and set0 are identities, seed 9 repeats bit-for-bit, \
             {compared} command-line outputs byte-identical"
        )
    });
}

// ---------------------------------------------------------------------------
// File round trips.

#[test]
fn c8_nifti_round_trips_and_corruption() {
    verdict("C8 nifti-round-trips-and-corruption", || {
        let dir = tempfile::tempdir().unwrap();
        let dims = Dims::new(7, 5, 3).with_spacing([1.0, 1.25, 2.0]);
        let n = dims.voxel_count();

        let intensity = IntensityVolume::new(
            dims,
            (0..n).map(|i| (i as f32 - 20.0) * 1.75 + 0.001).collect(),
        )
        .unwrap();
        let label = LabelVolume::new(dims, (0..n).map(|i| (i % 5) as u8).collect()).unwrap();
        let prob = make_probability(&label, 0.9, 12);

        let mut round_trips = 0usize;
        for name in ["plain.nii", "packed.nii.gz"] {
            let p = dir.path().join(name);
            save_intensity(&intensity, &p).unwrap();
            let back = load_intensity(&p).unwrap();
            assert_eq!(back.dims, dims);
            assert_eq!(intensity_bits(&back), intensity_bits(&intensity));

            save_label(&label, &p).unwrap();
            let back = load_label(&p).unwrap();
            assert_eq!(back.dims, dims);
            assert_eq!(back.data, label.data);

            save_probability(&prob, &p).unwrap();
            let back = load_probability(&p).unwrap();
            assert_eq!(back.dims, dims);
            assert!(bits_equal(&back, &prob));
            round_trips += 3;
        }

        let victim = dir.path().join("victim.nii");
        save_intensity(&intensity, &victim).unwrap();
        let pristine = std::fs::read(&victim).unwrap();

        let mut corrupted = pristine.clone();
        corrupted[344..348].copy_from_slice(b"what");
        std::fs::write(&victim, &corrupted).unwrap();
        assert!(matches!(load_intensity(&victim), Err(Error::BadMagic(_))));

        let mut paired = pristine.clone();
        paired[344..348].copy_from_slice(b"ni1\0");
        std::fs::write(&victim, &paired).unwrap();
        assert!(matches!(
            load_intensity(&victim),
            Err(Error::UnsupportedPairedNifti)
        ));

        let mut wrong_type = pristine.clone();
        wrong_type[70..72].copy_from_slice(&4i16.to_le_bytes());
        std::fs::write(&victim, &wrong_type).unwrap();
        assert!(matches!(
            load_intensity(&victim),
            Err(Error::UnsupportedDatatype(4))
        ));

        let truncated = &pristine[..352 + n * 2];
        std::fs::write(&victim, truncated).unwrap();
        match load_intensity(&victim) {
            Err(Error::CorruptLength { expected, actual }) => {
                assert_eq!(expected, n * 4);
                assert_eq!(actual, n * 2);
            }
            other => panic!("expected CorruptLength, got {other:?}"),
        }

        format!(
            "{round_trips} round trips bit-exact across .nii and .nii.gz, \
             4 corruption modes report the right errors"
        )
    });
}
