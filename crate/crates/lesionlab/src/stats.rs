//! Model comparison: score aggregation, per-region competition ranking,
//! and paired t-tests between score vectors.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::metrics::{CaseScores, MetricKind};
use crate::volume::Region;

/// Mean score per model and region. Rows are models, columns follow
/// [`Region::ALL`].
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    models: Vec<String>,
    values: Vec<f64>,
}

const N_REGIONS: usize = Region::ALL.len();

impl ScoreMatrix {
    /// `values` is row-major, one row of six region scores per model, each
    /// in `[0, 1]`.
    pub fn new(models: Vec<String>, values: Vec<f64>) -> Result<Self> {
        if values.len() != models.len() * N_REGIONS {
            return Err(Error::LengthMismatch(models.len() * N_REGIONS, values.len()));
        }
        if let Some(i) = values.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidConfig(format!(
                "score {} for model {:?} is outside [0, 1]",
                values[i],
                models[i / N_REGIONS]
            )));
        }
        Ok(ScoreMatrix { models, values })
    }

    pub fn models(&self) -> &[String] {
        &self.models
    }

    pub fn row(&self, model: usize) -> &[f64] {
        &self.values[model * N_REGIONS..(model + 1) * N_REGIONS]
    }

    pub fn score(&self, model: usize, region: Region) -> f64 {
        self.row(model)[region_slot(region)]
    }

    pub fn column(&self, region: Region) -> Vec<f64> {
        let c = region_slot(region);
        (0..self.models.len()).map(|m| self.values[m * N_REGIONS + c]).collect()
    }

    /// Parses `model,ET,NETC,RC,SNFH,TC,WT` CSV.
    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let header: Vec<String> = reader
            .headers()
            .map_err(|e| Error::InvalidConfig(format!("score matrix header: {e}")))?
            .iter()
            .map(str::to_owned)
            .collect();
        let expected: Vec<&str> =
            std::iter::once("model").chain(Region::ALL.iter().map(|r| r.name())).collect();
        if header != expected {
            return Err(Error::InvalidConfig(format!(
                "score matrix header {header:?}, expected {expected:?}"
            )));
        }
        let mut models = Vec::new();
        let mut values = Vec::new();
        for record in reader.records() {
            let record =
                record.map_err(|e| Error::InvalidConfig(format!("score matrix row: {e}")))?;
            if record.len() != N_REGIONS + 1 {
                return Err(Error::InvalidConfig(format!(
                    "score matrix row for {:?} has {} fields, expected {}",
                    record.get(0).unwrap_or(""),
                    record.len(),
                    N_REGIONS + 1
                )));
            }
            models.push(record[0].to_owned());
            for field in record.iter().skip(1) {
                let v: f64 = field.parse().map_err(|_| {
                    Error::InvalidConfig(format!("score matrix value {field:?} is not a number"))
                })?;
                values.push(v);
            }
        }
        ScoreMatrix::new(models, values)
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("model");
        for r in Region::ALL {
            out.push(',');
            out.push_str(r.name());
        }
        out.push('\n');
        for (m, name) in self.models.iter().enumerate() {
            out.push_str(name);
            for v in self.row(m) {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}

fn region_slot(region: Region) -> usize {
    Region::ALL.iter().position(|r| *r == region).unwrap()
}

/// Competition ranks (1 = best score) per model and region, plus each
/// model's average rank.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankTable {
    pub models: Vec<String>,
    /// Row-major over [`Region::ALL`].
    pub ranks: Vec<u32>,
    pub averages: Vec<f64>,
}

impl RankTable {
    pub fn rank(&self, model: usize, region: Region) -> u32 {
        self.ranks[model * N_REGIONS + region_slot(region)]
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("model");
        for r in Region::ALL {
            out.push(',');
            out.push_str(r.name());
        }
        out.push_str(",avg_rank\n");
        for (m, name) in self.models.iter().enumerate() {
            out.push_str(name);
            for c in 0..N_REGIONS {
                out.push_str(&format!(",{}", self.ranks[m * N_REGIONS + c]));
            }
            out.push_str(&format!(",{:.4}\n", self.averages[m]));
        }
        out
    }
}

/// Ranks every model per region, higher scores first. Ties share the
/// minimum rank: a model's rank is 1 plus the number of strictly better
/// scores in its column.
pub fn rank_models(scores: &ScoreMatrix) -> RankTable {
    let n = scores.models().len();
    let mut ranks = vec![0u32; n * N_REGIONS];
    for (c, region) in Region::ALL.into_iter().enumerate() {
        let col = scores.column(region);
        for (m, rank) in column_ranks(&col).into_iter().enumerate() {
            ranks[m * N_REGIONS + c] = rank;
        }
    }
    let averages = (0..n)
        .map(|m| {
            let row = &ranks[m * N_REGIONS..(m + 1) * N_REGIONS];
            row.iter().sum::<u32>() as f64 / N_REGIONS as f64
        })
        .collect();
    RankTable {
        models: scores.models().to_vec(),
        ranks,
        averages,
    }
}

fn column_ranks(col: &[f64]) -> Vec<u32> {
    col.iter()
        .map(|v| 1 + col.iter().filter(|o| *o > v).count() as u32)
        .collect()
}

/// Two-tailed paired t-test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TTestResult {
    pub t: f64,
    pub p: f64,
    pub df: u32,
}

/// Paired t-test of `a` against `b`: t = mean(d) / (sd(d)/sqrt(n)) for
/// d = a - b with sample standard deviation, df = n - 1. When all
/// differences are equal, the statistic degenerates and is reported
/// conventionally: t = ±inf with p = 0 for a nonzero mean difference,
/// t = 0 with p = 1 otherwise.
pub fn paired_t(a: &[f64], b: &[f64]) -> Result<TTestResult> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(a.len(), b.len()));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::TooFewSamples(n));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let (mean, sd) = mean_sd(&d);
    let df = (n - 1) as u32;
    if sd == 0.0 {
        return Ok(if mean == 0.0 {
            TTestResult { t: 0.0, p: 1.0, df }
        } else {
            TTestResult {
                t: mean.signum() * f64::INFINITY,
                p: 0.0,
                df,
            }
        });
    }
    let t = mean / (sd / (n as f64).sqrt());
    Ok(TTestResult {
        t,
        p: student_t_two_tailed(t, df),
        df,
    })
}

/// Mean and sample standard deviation (n - 1 denominator; 0 when n = 1).
fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// Mean and sample standard deviation of one metric over the cases that
/// report the region. Pre-treatment cases carry no RC entry, so an
/// all-pre-treatment cohort has no RC selection.
pub fn aggregate_scores(
    cases: &[CaseScores],
    metric: MetricKind,
    region: Region,
) -> Result<(f64, f64)> {
    let values: Vec<f64> = cases
        .iter()
        .filter_map(|c| c.get(region))
        .map(|rs| rs.get(metric))
        .collect();
    if values.is_empty() {
        return Err(Error::EmptySelection(format!(
            "no {} scores for region {}",
            metric.name(),
            region
        )));
    }
    Ok(mean_sd(&values))
}

/// P(|T| >= |t|) for Student's t with `df` degrees of freedom, via the
/// regularized incomplete beta function: I_{df/(df+t^2)}(df/2, 1/2).
fn student_t_two_tailed(t: f64, df: u32) -> f64 {
    if t == 0.0 {
        return 1.0;
    }
    if t.is_infinite() {
        return 0.0;
    }
    let v = df as f64;
    inc_beta(v / 2.0, 0.5, v / (v + t * t))
}

/// Lanczos approximation of ln Γ(z), accurate to ~1e-13 for z > 0.
fn ln_gamma(z: f64) -> f64 {
    const COEF: [f64; 8] = [
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_13,
        -176.615_029_162_140_59,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_571_6e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if z < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * z).sin()).ln() - ln_gamma(1.0 - z);
    }
    let z = z - 1.0;
    let mut x = 0.999_999_999_999_809_93;
    for (i, c) in COEF.iter().enumerate() {
        x += c / (z + i as f64 + 1.0);
    }
    let t = z + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (z + 0.5) * t.ln() - t + x.ln()
}

/// Regularized incomplete beta I_x(a, b) by Lentz's continued fraction,
/// using the symmetry I_x(a,b) = 1 - I_{1-x}(b,a) to stay in the
/// fast-converging regime.
fn inc_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const FPMIN: f64 = 1e-300;
    const EPS: f64 = 3e-14;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < FPMIN {
        d = FPMIN;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=300 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = 1.0 + aa / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = 1.0 + aa / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}
