//! Batch front end: phantom generation, augmentation, evaluation,
//! ensembling, post-processing, ranking, and paired t-tests over
//! directories of case volumes.
//!
//! Every command is deterministic given its inputs, the config file, and
//! the seed; re-runs write identical bytes. Reports go to `--out` (or
//! stdout for `rank` and `ttest`); status lines go to stderr.

pub mod cases;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Deserialize;

use crate::augment::{augment_case, AugmentConfig, AugmentOutcome, LabelPool, RandomStream};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_case, CaseScores, MetricKind};
use crate::phantom::{make_case, make_probability, PhantomSpec};
use crate::postproc::{apply_thresholds, ensemble_predict, ThresholdSet};
use crate::stats::{aggregate_scores, paired_t, rank_models, ScoreMatrix};
use crate::volume::{
    load_intensity_with_header, load_label, load_label_with_header, load_probability,
    save_intensity, save_intensity_with, save_label, save_label_with, save_probability,
    IntensityVolume, Modality, MultiModalCase, Phase, ProbabilityVolume, Region,
};

use cases::{volume_path, PhaseManifest, PROB_SUFFIX, SEG_SUFFIX};

/// Seed used when neither `--seed` nor the config file provides one.
pub const DEFAULT_SEED: u64 = 42;

const CASE_SUFFIXES: [&str; 5] = ["t1n", "t1c", "t2w", "t2f", "seg"];

#[derive(Parser)]
#[command(
    name = "lesionlab",
    version,
    about = "Synthetic lesion insertion and lesion-wise evaluation for 3D brain MRI"
)]
struct Cli {
    /// JSON run config; explicit flags override its fields.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Master seed for every random draw.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// Worker threads for case-level parallelism.
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,

    /// Report format for evaluate, rank, and ttest.
    #[arg(long, global = true, value_enum, value_name = "FMT")]
    format: Option<ReportFormat>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic multi-modal cases from a JSON spec file.
    Phantom {
        /// JSON file holding one case spec or an array of them.
        #[arg(long, value_name = "FILE")]
        spec: PathBuf,

        /// Directory for the generated volumes.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,

        /// Also write a probability map per case, giving the true class
        /// this confidence.
        #[arg(long, value_name = "CONF")]
        probability: Option<f64>,
    },

    /// Insert donor lesions into cases and write augmented copies.
    Augment {
        /// Directory of input cases (four modalities + seg per id).
        #[arg(long, value_name = "DIR")]
        cases: Option<PathBuf>,

        /// Donor segmentation directory; defaults to the cases directory.
        #[arg(long, value_name = "DIR")]
        pool: Option<PathBuf>,

        /// Directory for augmented copies and the outcomes log.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,

        /// Preset name (regular | custom) or path to a JSON config.
        #[arg(long, value_name = "NAME|FILE")]
        augment: Option<String>,

        /// case_id,phase CSV; unlisted cases count as post-treatment.
        #[arg(long, value_name = "FILE")]
        manifest: Option<PathBuf>,
    },

    /// Score predictions against ground truth, per case and aggregated.
    Evaluate {
        /// Directory of predicted segmentations.
        #[arg(long, value_name = "DIR")]
        pred: PathBuf,

        /// Directory of ground-truth segmentations.
        #[arg(long, value_name = "DIR")]
        gt: PathBuf,

        /// Report file; the aggregate lands next to it as
        /// <stem>.aggregate.<ext>.
        #[arg(long, value_name = "FILE")]
        out: PathBuf,

        /// case_id,phase CSV; unlisted cases count as post-treatment.
        #[arg(long, value_name = "FILE")]
        manifest: Option<PathBuf>,
    },

    /// Average probability maps from several models and decode labels.
    Ensemble {
        /// Probability directory of one model; repeat per model.
        #[arg(long = "probs", value_name = "DIR", required = true)]
        probs: Vec<PathBuf>,

        /// case_id,phase CSV; unlisted cases count as post-treatment.
        #[arg(long, value_name = "FILE")]
        manifest: Option<PathBuf>,

        /// Threshold set name (set0 | set1 | set2) or path to a JSON file.
        #[arg(long, value_name = "NAME|FILE")]
        thresholds: Option<String>,

        /// Directory for the decoded segmentations.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },

    /// Re-filter existing segmentations with a threshold set.
    Postprocess {
        /// Directory of segmentations to filter.
        #[arg(long, value_name = "DIR")]
        labels: Option<PathBuf>,

        /// Threshold set name (set0 | set1 | set2) or path to a JSON file.
        #[arg(long, value_name = "NAME|FILE")]
        thresholds: Option<String>,

        /// Directory for the filtered segmentations.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,

        /// case_id,phase CSV; unlisted cases count as post-treatment.
        #[arg(long, value_name = "FILE")]
        manifest: Option<PathBuf>,
    },

    /// Rank models per region from an aggregate score table.
    Rank {
        /// Score matrix CSV (model,ET,NETC,RC,SNFH,TC,WT).
        #[arg(long, value_name = "FILE")]
        scores: PathBuf,

        /// Output file; stdout when omitted.
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },

    /// Paired t-test between the first rows of two score tables.
    Ttest {
        /// Score matrix CSV for the first model.
        #[arg(long, value_name = "FILE")]
        a: PathBuf,

        /// Score matrix CSV for the second model.
        #[arg(long, value_name = "FILE")]
        b: PathBuf,

        /// Output file; stdout when omitted.
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
enum ReportFormat {
    Csv,
    Json,
}

/// On-disk run configuration. Flags override fields; fields override
/// built-in defaults.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RunConfig {
    input_dir: Option<PathBuf>,
    output_dir: Option<PathBuf>,
    /// Preset name or inline augmentation config.
    augment: Option<serde_json::Value>,
    /// Set name or inline threshold rows.
    thresholds: Option<serde_json::Value>,
    seed: Option<u64>,
    jobs: Option<usize>,
    format: Option<ReportFormat>,
}

impl RunConfig {
    fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::InvalidConfig(format!("run config {}: {e}", path.display())))
    }
}

struct Ctx {
    config: RunConfig,
    seed: u64,
    format: ReportFormat,
}

/// Parses arguments, runs the selected command, and maps the outcome to
/// an exit code: 0 on success, 2 for usage or config problems, 3 for
/// file-level failures.
pub fn run() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code: u8 = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Io { .. }
        | Error::BadMagic(_)
        | Error::UnsupportedPairedNifti
        | Error::UnsupportedDatatype(_)
        | Error::CorruptLength { .. }
        | Error::InvalidHeader(_)
        | Error::NonFiniteValue(_) => 3,
        _ => 2,
    }
}

fn execute(cli: Cli) -> Result<()> {
    let config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let jobs = cli.jobs.or(config.jobs);
    let ctx = Ctx {
        seed: cli.seed.or(config.seed).unwrap_or(DEFAULT_SEED),
        format: cli.format.or(config.format).unwrap_or(ReportFormat::Csv),
        config,
    };
    let command = cli.command;
    let body = move || dispatch(command, &ctx);
    match jobs {
        None => body(),
        Some(0) => Err(Error::InvalidConfig("--jobs must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::InvalidConfig(format!("cannot build a {n}-thread pool: {e}")))?
            .install(body),
    }
}

fn dispatch(command: Command, ctx: &Ctx) -> Result<()> {
    match command {
        Command::Phantom {
            spec,
            out,
            probability,
        } => cmd_phantom(&spec, out, probability, ctx),
        Command::Augment {
            cases,
            pool,
            out,
            augment,
            manifest,
        } => cmd_augment(cases, pool, out, augment.as_deref(), manifest, ctx),
        Command::Evaluate {
            pred,
            gt,
            out,
            manifest,
        } => cmd_evaluate(pred, gt, &out, manifest, ctx),
        Command::Ensemble {
            probs,
            manifest,
            thresholds,
            out,
        } => cmd_ensemble(probs, manifest, thresholds.as_deref(), out, ctx),
        Command::Postprocess {
            labels,
            thresholds,
            out,
            manifest,
        } => cmd_postprocess(labels, thresholds.as_deref(), out, manifest, ctx),
        Command::Rank { scores, out } => cmd_rank(&scores, out.as_deref(), ctx),
        Command::Ttest { a, b, out } => cmd_ttest(&a, &b, out.as_deref(), ctx),
    }
}

/// Resolves an input directory from a flag or the config's `input_dir`.
fn input_dir(flag: Option<PathBuf>, ctx: &Ctx, what: &str) -> Result<PathBuf> {
    let dir = flag.or_else(|| ctx.config.input_dir.clone()).ok_or_else(|| {
        Error::InvalidConfig(format!(
            "no {what} directory: pass the flag or set input_dir in the config"
        ))
    })?;
    existing_dir(dir, what)
}

fn existing_dir(dir: PathBuf, what: &str) -> Result<PathBuf> {
    if dir.is_dir() {
        Ok(dir)
    } else {
        Err(Error::InvalidConfig(format!(
            "{what} directory {} does not exist",
            dir.display()
        )))
    }
}

/// Resolves the output directory from a flag or the config's
/// `output_dir`, creating it if needed.
fn output_dir(flag: Option<PathBuf>, ctx: &Ctx) -> Result<PathBuf> {
    let dir = flag.or_else(|| ctx.config.output_dir.clone()).ok_or_else(|| {
        Error::InvalidConfig(
            "no output directory: pass --out or set output_dir in the config".into(),
        )
    })?;
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

/// `--augment` wins over the config's `augment` field; the built-in
/// default is the regular preset.
fn resolve_augment(flag: Option<&str>, ctx: &Ctx) -> Result<AugmentConfig> {
    match (flag, &ctx.config.augment) {
        (Some(s), _) => augment_from_name(s),
        (None, Some(serde_json::Value::String(s))) => augment_from_name(s),
        (None, Some(value)) => AugmentConfig::from_json(&value.to_string()),
        (None, None) => Ok(AugmentConfig::regular()),
    }
}

fn augment_from_name(s: &str) -> Result<AugmentConfig> {
    if let Some(cfg) = AugmentConfig::preset(s) {
        return Ok(cfg);
    }
    let path = Path::new(s);
    if path.is_file() {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        AugmentConfig::from_json(&text)
    } else {
        Err(Error::InvalidConfig(format!(
            "augment config {s:?} is neither a preset (regular, custom) nor a readable file"
        )))
    }
}

/// `--thresholds` wins over the config's `thresholds` field; the
/// built-in default is set0, which filters nothing.
fn resolve_thresholds(flag: Option<&str>, ctx: &Ctx) -> Result<ThresholdSet> {
    match (flag, &ctx.config.thresholds) {
        (Some(s), _) => thresholds_from_name(s),
        (None, Some(serde_json::Value::String(s))) => thresholds_from_name(s),
        (None, Some(value)) => ThresholdSet::from_json(&value.to_string()),
        (None, None) => Ok(ThresholdSet::set0()),
    }
}

fn thresholds_from_name(s: &str) -> Result<ThresholdSet> {
    if let Some(ts) = ThresholdSet::preset(s) {
        return Ok(ts);
    }
    let path = Path::new(s);
    if path.is_file() {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ThresholdSet::from_json(&text)
    } else {
        Err(Error::InvalidConfig(format!(
            "threshold set {s:?} is neither a preset (set0, set1, set2) nor a readable file"
        )))
    }
}

fn cmd_phantom(
    spec_path: &Path,
    out: Option<PathBuf>,
    probability: Option<f64>,
    ctx: &Ctx,
) -> Result<()> {
    if let Some(conf) = probability {
        if !(conf > 0.0 && conf <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "--probability {conf} outside (0, 1]"
            )));
        }
    }
    let text = std::fs::read_to_string(spec_path).map_err(|e| Error::io(spec_path, e))?;
    let specs = parse_phantom_specs(&text)?;
    let out = output_dir(out, ctx)?;
    specs.par_iter().try_for_each(|spec| {
        let case = make_case(spec)?;
        write_case(&case, &out)?;
        if let Some(conf) = probability {
            let prob = make_probability(&case.label, conf, spec.seed);
            save_probability(&prob, volume_path(&out, &case.id, PROB_SUFFIX))?;
        }
        Ok(())
    })?;
    eprintln!("wrote {} case(s) to {}", specs.len(), out.display());
    Ok(())
}

fn parse_phantom_specs(text: &str) -> Result<Vec<PhantomSpec>> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| Error::InvalidConfig(format!("phantom spec: {e}")))?;
    let items = match value {
        serde_json::Value::Array(items) => items,
        single => vec![single],
    };
    let specs: Vec<PhantomSpec> = items
        .into_iter()
        .map(|v| {
            serde_json::from_value(v).map_err(|e| Error::InvalidConfig(format!("phantom spec: {e}")))
        })
        .collect::<Result<_>>()?;
    let mut seen = std::collections::BTreeSet::new();
    for spec in &specs {
        if !seen.insert(spec.case_id()) {
            return Err(Error::InvalidConfig(format!(
                "duplicate case id {:?} in phantom spec",
                spec.case_id()
            )));
        }
    }
    Ok(specs)
}

fn write_case(case: &MultiModalCase, dir: &Path) -> Result<()> {
    for (m, vol) in Modality::ALL.iter().zip(&case.modalities) {
        save_intensity(vol, volume_path(dir, &case.id, m.suffix()))?;
    }
    save_label(&case.label, volume_path(dir, &case.id, SEG_SUFFIX))
}

fn cmd_augment(
    cases_dir: Option<PathBuf>,
    pool_dir: Option<PathBuf>,
    out: Option<PathBuf>,
    augment: Option<&str>,
    manifest: Option<PathBuf>,
    ctx: &Ctx,
) -> Result<()> {
    let cases_dir = input_dir(cases_dir, ctx, "cases")?;
    let pool_dir = match pool_dir {
        Some(dir) => existing_dir(dir, "pool")?,
        None => cases_dir.clone(),
    };
    let out = output_dir(out, ctx)?;
    let cfg = resolve_augment(augment, ctx)?;
    let phases = PhaseManifest::load_optional(manifest.as_ref())?;

    let pool = load_pool(&pool_dir)?;
    let case_files = complete_cases(&cases_dir)?;
    if case_files.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "no cases found in {}",
            cases_dir.display()
        )));
    }

    let mut outcomes: Vec<(String, AugmentOutcome)> = case_files
        .par_iter()
        .enumerate()
        .map(|(index, (id, files))| {
            let outcome = augment_one(
                id,
                files,
                phases.phase_of(id),
                &pool,
                &cfg,
                ctx.seed ^ index as u64,
                &out,
            )?;
            Ok((id.clone(), outcome))
        })
        .collect::<Result<_>>()?;
    outcomes.sort_by(|a, b| a.0.cmp(&b.0));

    let log: serde_json::Map<String, serde_json::Value> = outcomes
        .into_iter()
        .map(|(id, o)| (id, serde_json::to_value(o).expect("outcome serializes")))
        .collect();
    let log_path = out.join("outcomes.json");
    let mut rendered =
        serde_json::to_string_pretty(&serde_json::Value::Object(log)).expect("log serializes");
    rendered.push('\n');
    std::fs::write(&log_path, rendered).map_err(|e| Error::io(&log_path, e))?;
    eprintln!("augmented {} case(s) into {}", case_files.len(), out.display());
    Ok(())
}

/// Loads every donor segmentation under `dir`. All-background
/// segmentations cannot donate and are skipped.
fn load_pool(dir: &Path) -> Result<LabelPool> {
    let mut pool = LabelPool::new();
    for (id, path) in cases::scan_suffix(dir, SEG_SUFFIX)? {
        let label = load_label(&path)?;
        match pool.insert(id, &label) {
            Ok(()) | Err(Error::EmptyMask) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(pool)
}

/// Ids under `dir` holding all five case volumes, sorted. An id with
/// some but not all of them is an error; prob-only ids are ignored.
fn complete_cases(dir: &Path) -> Result<Vec<(String, BTreeMap<String, PathBuf>)>> {
    let mut out = Vec::new();
    for (id, files) in cases::scan_dir(dir)? {
        let missing: Vec<&str> = CASE_SUFFIXES
            .iter()
            .copied()
            .filter(|s| !files.contains_key(*s))
            .collect();
        if missing.len() == CASE_SUFFIXES.len() {
            continue;
        }
        if !missing.is_empty() {
            return Err(Error::InvalidConfig(format!(
                "case {id}: missing {} volume(s) in {}",
                missing.join(", "),
                dir.display()
            )));
        }
        out.push((id, files));
    }
    Ok(out)
}

fn augment_one(
    id: &str,
    files: &BTreeMap<String, PathBuf>,
    phase: Phase,
    pool: &LabelPool,
    cfg: &AugmentConfig,
    seed: u64,
    out: &Path,
) -> Result<AugmentOutcome> {
    let mut modalities = Vec::with_capacity(4);
    let mut headers = Vec::with_capacity(4);
    for m in Modality::ALL {
        let (vol, header) = load_intensity_with_header(&files[m.suffix()])?;
        modalities.push(vol);
        headers.push(header);
    }
    let modalities: [IntensityVolume; 4] = match modalities.try_into() {
        Ok(a) => a,
        Err(_) => unreachable!("four modalities"),
    };
    let (label, label_header) = load_label_with_header(&files[SEG_SUFFIX])?;
    let case = MultiModalCase::new(id, modalities, label, phase)?;

    let mut rng = RandomStream::from_seed(seed);
    let (augmented, outcome) = augment_case(&case, pool, cfg, &mut rng)?;

    for (m, (vol, header)) in Modality::ALL
        .iter()
        .zip(augmented.modalities.iter().zip(&headers))
    {
        save_intensity_with(vol, header, volume_path(out, id, m.suffix()))?;
    }
    save_label_with(&augmented.label, &label_header, volume_path(out, id, SEG_SUFFIX))?;
    Ok(outcome)
}

fn cmd_evaluate(
    pred: PathBuf,
    gt: PathBuf,
    out: &Path,
    manifest: Option<PathBuf>,
    ctx: &Ctx,
) -> Result<()> {
    let pred_dir = existing_dir(pred, "pred")?;
    let gt_dir = existing_dir(gt, "gt")?;
    let phases = PhaseManifest::load_optional(manifest.as_ref())?;

    let pred_files = cases::scan_suffix(&pred_dir, SEG_SUFFIX)?;
    let gt_files = cases::scan_suffix(&gt_dir, SEG_SUFFIX)?;
    if pred_files.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "no segmentations found in {}",
            pred_dir.display()
        )));
    }
    require_same_ids(
        &pred_files,
        &gt_files,
        &pred_dir.display().to_string(),
        &gt_dir.display().to_string(),
    )?;

    let ids: Vec<&String> = pred_files.keys().collect();
    let scored: Vec<(String, CaseScores)> = ids
        .par_iter()
        .map(|id| {
            let p = load_label(&pred_files[*id])?;
            let g = load_label(&gt_files[*id])?;
            let scores = evaluate_case(&p, &g, phases.phase_of(id))?;
            Ok(((*id).clone(), scores))
        })
        .collect::<Result<_>>()?;

    write_evaluation(&scored, out, ctx.format)?;
    eprintln!(
        "scored {} case(s); report {}, aggregate {}",
        scored.len(),
        out.display(),
        aggregate_path(out, ctx.format).display()
    );
    Ok(())
}

/// Both directions must match: every prediction needs a ground truth and
/// vice versa.
fn require_same_ids(
    a: &BTreeMap<String, PathBuf>,
    b: &BTreeMap<String, PathBuf>,
    a_desc: &str,
    b_desc: &str,
) -> Result<()> {
    for id in a.keys() {
        if !b.contains_key(id) {
            return Err(Error::InvalidConfig(format!(
                "case {id}: present in {a_desc} but missing from {b_desc}"
            )));
        }
    }
    for id in b.keys() {
        if !a.contains_key(id) {
            return Err(Error::InvalidConfig(format!(
                "case {id}: present in {b_desc} but missing from {a_desc}"
            )));
        }
    }
    Ok(())
}

fn aggregate_path(out: &Path, format: ReportFormat) -> PathBuf {
    let ext = match format {
        ReportFormat::Csv => "csv",
        ReportFormat::Json => "json",
    };
    let stem = out
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("report");
    out.with_file_name(format!("{stem}.aggregate.{ext}"))
}

fn write_evaluation(
    scored: &[(String, CaseScores)],
    out: &Path,
    format: ReportFormat,
) -> Result<()> {
    let all: Vec<CaseScores> = scored.iter().map(|(_, s)| s.clone()).collect();
    let agg_out = aggregate_path(out, format);
    match format {
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record([
                "case_id",
                "region",
                "legacy_dice",
                "lesion_dice",
                "legacy_nsd",
                "lesion_nsd",
            ])
            .expect("csv header");
            for (id, scores) in scored {
                for (region, rs) in scores.regions() {
                    w.write_record([
                        id.as_str(),
                        region.name(),
                        &format!("{:.6}", rs.legacy_dice),
                        &format!("{:.6}", rs.lesion_dice),
                        &format!("{:.6}", rs.legacy_nsd),
                        &format!("{:.6}", rs.lesion_nsd),
                    ])
                    .expect("csv row");
                }
            }
            write_bytes(out, w.into_inner().expect("csv buffer"))?;

            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["metric", "region", "mean", "sd"])
                .expect("csv header");
            for metric in MetricKind::ALL {
                for region in Region::ALL {
                    match aggregate_scores(&all, metric, region) {
                        Ok((mean, sd)) => w
                            .write_record([
                                metric.name(),
                                region.name(),
                                &format!("{mean:.6}"),
                                &format!("{sd:.6}"),
                            ])
                            .expect("csv row"),
                        Err(Error::EmptySelection(_)) => continue,
                        Err(e) => return Err(e),
                    }
                }
            }
            write_bytes(&agg_out, w.into_inner().expect("csv buffer"))
        }
        ReportFormat::Json => {
            let rows: Vec<serde_json::Value> = scored
                .iter()
                .flat_map(|(id, scores)| {
                    scores.regions().map(move |(region, rs)| {
                        serde_json::json!({
                            "case_id": id,
                            "region": region.name(),
                            "legacy_dice": rs.legacy_dice,
                            "lesion_dice": rs.lesion_dice,
                            "legacy_nsd": rs.legacy_nsd,
                            "lesion_nsd": rs.lesion_nsd,
                        })
                    })
                })
                .collect();
            write_json(out, &rows)?;

            let mut agg = Vec::new();
            for metric in MetricKind::ALL {
                for region in Region::ALL {
                    match aggregate_scores(&all, metric, region) {
                        Ok((mean, sd)) => agg.push(serde_json::json!({
                            "metric": metric.name(),
                            "region": region.name(),
                            "mean": mean,
                            "sd": sd,
                        })),
                        Err(Error::EmptySelection(_)) => continue,
                        Err(e) => return Err(e),
                    }
                }
            }
            write_json(&agg_out, &agg)
        }
    }
}

fn write_bytes(path: &Path, bytes: Vec<u8>) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut rendered = serde_json::to_string_pretty(value).expect("report serializes");
    rendered.push('\n');
    write_bytes(path, rendered.into_bytes())
}

fn cmd_ensemble(
    probs: Vec<PathBuf>,
    manifest: Option<PathBuf>,
    thresholds: Option<&str>,
    out: Option<PathBuf>,
    ctx: &Ctx,
) -> Result<()> {
    let dirs: Vec<PathBuf> = probs
        .into_iter()
        .map(|d| existing_dir(d, "probs"))
        .collect::<Result<_>>()?;
    let out = output_dir(out, ctx)?;
    let ts = resolve_thresholds(thresholds, ctx)?;
    let phases = PhaseManifest::load_optional(manifest.as_ref())?;

    let file_maps: Vec<BTreeMap<String, PathBuf>> = dirs
        .iter()
        .map(|d| cases::scan_suffix(d, PROB_SUFFIX))
        .collect::<Result<_>>()?;
    if file_maps[0].is_empty() {
        return Err(Error::InvalidConfig(format!(
            "no probability volumes found in {}",
            dirs[0].display()
        )));
    }
    for (map, dir) in file_maps.iter().zip(&dirs).skip(1) {
        require_same_ids(
            &file_maps[0],
            map,
            &dirs[0].display().to_string(),
            &dir.display().to_string(),
        )?;
    }

    let ids: Vec<&String> = file_maps[0].keys().collect();
    ids.par_iter().try_for_each(|id| {
        let vols: Vec<ProbabilityVolume> = file_maps
            .iter()
            .map(|m| load_probability(&m[*id]))
            .collect::<Result<_>>()?;
        let label = ensemble_predict(&vols, phases.phase_of(id), &ts)?;
        save_label(&label, volume_path(&out, id, SEG_SUFFIX))
    })?;
    eprintln!(
        "ensembled {} model(s) over {} case(s) into {}",
        dirs.len(),
        ids.len(),
        out.display()
    );
    Ok(())
}

fn cmd_postprocess(
    labels: Option<PathBuf>,
    thresholds: Option<&str>,
    out: Option<PathBuf>,
    manifest: Option<PathBuf>,
    ctx: &Ctx,
) -> Result<()> {
    let labels_dir = input_dir(labels, ctx, "labels")?;
    let out = output_dir(out, ctx)?;
    let ts = resolve_thresholds(thresholds, ctx)?;
    let phases = PhaseManifest::load_optional(manifest.as_ref())?;

    let files = cases::scan_suffix(&labels_dir, SEG_SUFFIX)?;
    if files.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "no segmentations found in {}",
            labels_dir.display()
        )));
    }
    files.par_iter().try_for_each(|(id, path)| {
        let (label, header) = load_label_with_header(path)?;
        let filtered = apply_thresholds(&label, &ts, phases.phase_of(id));
        save_label_with(&filtered, &header, volume_path(&out, id, SEG_SUFFIX))
    })?;
    eprintln!("filtered {} segmentation(s) into {}", files.len(), out.display());
    Ok(())
}

fn cmd_rank(scores: &Path, out: Option<&Path>, ctx: &Ctx) -> Result<()> {
    let matrix = read_matrix(scores)?;
    let table = rank_models(&matrix);
    let rendered = match ctx.format {
        ReportFormat::Csv => table.to_csv_string(),
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(&table).expect("rank table serializes");
            s.push('\n');
            s
        }
    };
    emit(rendered, out)
}

fn cmd_ttest(a: &Path, b: &Path, out: Option<&Path>, ctx: &Ctx) -> Result<()> {
    let ma = read_matrix(a)?;
    let mb = read_matrix(b)?;
    let result = paired_t(first_row(&ma, a)?, first_row(&mb, b)?)?;
    let rendered = match ctx.format {
        ReportFormat::Csv => format!("t,p,df\n{:.6},{:.6},{}\n", result.t, result.p, result.df),
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(&result).expect("t-test result serializes");
            s.push('\n');
            s
        }
    };
    emit(rendered, out)
}

fn read_matrix(path: &Path) -> Result<ScoreMatrix> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ScoreMatrix::from_csv_str(&text).map_err(|e| match e {
        Error::InvalidConfig(detail) => Error::MalformedInput {
            path: path.to_path_buf(),
            detail,
        },
        other => other,
    })
}

fn first_row<'m>(matrix: &'m ScoreMatrix, path: &Path) -> Result<&'m [f64]> {
    if matrix.models().is_empty() {
        return Err(Error::MalformedInput {
            path: path.to_path_buf(),
            detail: "no data rows".into(),
        });
    }
    Ok(matrix.row(0))
}

fn emit(text: String, out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => write_bytes(path, text.into_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}
