//! Image-quality metrics for super-resolved patches.
//!
//! All functions take the estimate first and the reference second. Undefined
//! values (zero-power references, flat images) come back as `None`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2, Zip};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stats::pcc;

/// Reported value for a perfect match in dB-valued metrics.
pub const DB_FLOOR: f64 = 300.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
pub const UIQI_WINDOW: usize = 8;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("shape mismatch: {0:?} vs {1:?}")]
    Shape((usize, usize), (usize, usize)),
    #[error("image of {0:?} is smaller than the {1}×{1} window")]
    TooSmall((usize, usize), usize),
    #[error("{0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = MetricError> = std::result::Result<T, E>;

fn same_shape(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(MetricError::Shape(a.dim(), b.dim()));
    }
    Ok(())
}

fn mse(est: ArrayView2<'_, f64>, reference: ArrayView2<'_, f64>) -> f64 {
    let n = est.len() as f64;
    Zip::from(est).and(reference).fold(0.0, |acc, &e, &r| acc + (e - r) * (e - r)) / n
}

/// `max(ref) − min(ref)`.
pub fn data_range(reference: ArrayView2<'_, f64>) -> f64 {
    let (lo, hi) = reference
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    hi - lo
}

/// Normalised mean squared error in dB; −300 for an exact match.
pub fn nmse(est: ArrayView2<'_, f64>, reference: ArrayView2<'_, f64>) -> Result<Option<f64>> {
    same_shape(est, reference)?;
    let power = reference.iter().map(|r| r * r).sum::<f64>() / reference.len() as f64;
    if power == 0.0 {
        return Ok(None);
    }
    let err = mse(est, reference);
    if err == 0.0 {
        return Ok(Some(-DB_FLOOR));
    }
    Ok(Some((10.0 * (err / power).log10()).max(-DB_FLOOR)))
}

pub fn maxae(est: ArrayView2<'_, f64>, reference: ArrayView2<'_, f64>) -> Result<f64> {
    same_shape(est, reference)?;
    Ok(Zip::from(est).and(reference).fold(0.0f64, |m, &e, &r| m.max((e - r).abs())))
}

fn effective_range(data_range: f64) -> f64 {
    if data_range > 0.0 { data_range } else { 1.0 }
}

/// Peak signal-to-noise ratio in dB, capped at 300. A zero range counts as 1.
pub fn psnr(est: ArrayView2<'_, f64>, reference: ArrayView2<'_, f64>, data_range: f64) -> Result<f64> {
    same_shape(est, reference)?;
    let err = mse(est, reference);
    if err == 0.0 {
        return Ok(DB_FLOOR);
    }
    let l = effective_range(data_range);
    Ok((10.0 * (l * l / err).log10()).min(DB_FLOOR))
}

/// Half-sample symmetric index: `… b a | a b c … | c b …`.
fn mirror(i: isize, n: usize) -> usize {
    let n = n as isize;
    let m = i.rem_euclid(2 * n);
    (if m < n { m } else { 2 * n - 1 - m }) as usize
}

fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let half = (size / 2) as f64;
    let taps: Vec<f64> = (0..size)
        .map(|k| {
            let d = k as f64 - half;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / s).collect()
}

/// Separable filtering with symmetric extension, output the same size.
fn filter_separable(img: &Array2<f64>, taps: &[f64]) -> Array2<f64> {
    let (rows, cols) = img.dim();
    let r = (taps.len() / 2) as isize;
    let mut tmp = Array2::zeros((rows, cols));
    for i in 0..rows {
        for j in 0..cols {
            let mut s = 0.0;
            for (k, t) in taps.iter().enumerate() {
                s += t * img[[i, mirror(j as isize + k as isize - r, cols)]];
            }
            tmp[[i, j]] = s;
        }
    }
    let mut out = Array2::zeros((rows, cols));
    for i in 0..rows {
        for j in 0..cols {
            let mut s = 0.0;
            for (k, t) in taps.iter().enumerate() {
                s += t * tmp[[mirror(i as isize + k as isize - r, rows), j]];
            }
            out[[i, j]] = s;
        }
    }
    out
}

/// Mean structural similarity over a Gaussian-weighted window centred on
/// every pixel (symmetric extension at the borders).
pub fn ssim(est: ArrayView2<'_, f64>, reference: ArrayView2<'_, f64>, data_range: f64) -> Result<f64> {
    same_shape(est, reference)?;
    let l = effective_range(data_range);
    let c1 = (SSIM_K1 * l).powi(2);
    let c2 = (SSIM_K2 * l).powi(2);
    let taps = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA);
    let x = est.to_owned();
    let y = reference.to_owned();
    let mx = filter_separable(&x, &taps);
    let my = filter_separable(&y, &taps);
    let xx = filter_separable(&(&x * &x), &taps);
    let yy = filter_separable(&(&y * &y), &taps);
    let xy = filter_separable(&(&x * &y), &taps);
    let mut total = 0.0;
    for idx in 0..x.len() {
        let (i, j) = (idx / x.ncols(), idx % x.ncols());
        let (ux, uy) = (mx[[i, j]], my[[i, j]]);
        let vx = xx[[i, j]] - ux * ux;
        let vy = yy[[i, j]] - uy * uy;
        let cxy = xy[[i, j]] - ux * uy;
        total += ((2.0 * ux * uy + c1) * (2.0 * cxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
    }
    Ok((total / x.len() as f64).clamp(-1.0, 1.0))
}

/// Universal image quality index averaged over all 8×8 windows; windows with
/// a zero denominator are skipped, and `None` means every window was.
pub fn uiqi(est: ArrayView2<'_, f64>, reference: ArrayView2<'_, f64>) -> Result<Option<f64>> {
    same_shape(est, reference)?;
    let (rows, cols) = est.dim();
    let w = UIQI_WINDOW;
    if rows < w || cols < w {
        return Err(MetricError::TooSmall(est.dim(), w));
    }
    let n = (w * w) as f64;
    let (mut sum, mut count) = (0.0, 0usize);
    for i in 0..=rows - w {
        for j in 0..=cols - w {
            let xs = est.slice(ndarray::s![i..i + w, j..j + w]);
            let ys = reference.slice(ndarray::s![i..i + w, j..j + w]);
            let ux = xs.sum() / n;
            let uy = ys.sum() / n;
            let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
            Zip::from(&xs).and(&ys).for_each(|&a, &b| {
                vx += (a - ux) * (a - ux);
                vy += (b - uy) * (b - uy);
                cxy += (a - ux) * (b - uy);
            });
            let den = (vx + vy) * (ux * ux + uy * uy);
            if den != 0.0 {
                sum += 4.0 * cxy * ux * uy / den;
                count += 1;
            }
        }
    }
    Ok((count > 0).then(|| (sum / count as f64).clamp(-1.0, 1.0)))
}

fn laplacian(img: ArrayView2<'_, f64>) -> Vec<f64> {
    let (rows, cols) = img.dim();
    let at = |i: isize, j: isize| img[[mirror(i, rows), mirror(j, cols)]];
    let mut out = Vec::with_capacity(rows * cols);
    for i in 0..rows as isize {
        for j in 0..cols as isize {
            out.push(4.0 * at(i, j) - at(i - 1, j) - at(i + 1, j) - at(i, j - 1) - at(i, j + 1));
        }
    }
    out
}

/// Spatial correlation coefficient: Pearson correlation of the
/// Laplacian-filtered images.
pub fn scc(est: ArrayView2<'_, f64>, reference: ArrayView2<'_, f64>) -> Result<Option<f64>> {
    same_shape(est, reference)?;
    Ok(pcc(&laplacian(est), &laplacian(reference)).ok().flatten())
}

/// Relative NMSE improvement of an estimate over a baseline, both in dB.
/// Positive when the estimate is better.
pub fn nir(est_nmse_db: f64, base_nmse_db: f64) -> Option<f64> {
    // adding 0.0 turns the -0.0 of a self-comparison into 0.0
    (base_nmse_db != 0.0).then(|| (est_nmse_db - base_nmse_db) / base_nmse_db + 0.0)
}

pub fn nir_from_arrays(
    est: ArrayView2<'_, f64>,
    base: ArrayView2<'_, f64>,
    truth: ArrayView2<'_, f64>,
) -> Result<Option<f64>> {
    let (Some(e), Some(b)) = (nmse(est, truth)?, nmse(base, truth)?) else {
        return Ok(None);
    };
    Ok(nir(e, b))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    /// Network output against the transformed ground truth.
    Transformed,
    /// Back-transformed output against raw emissions.
    Isoprene,
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Domain::Transformed => "transformed",
            Domain::Isoprene => "isoprene",
        })
    }
}

/// Domain selector as accepted on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DomainSelection {
    T,
    I,
    Both,
}

impl DomainSelection {
    pub fn domains(self) -> &'static [Domain] {
        match self {
            Self::T => &[Domain::Transformed],
            Self::I => &[Domain::Isoprene],
            Self::Both => &[Domain::Transformed, Domain::Isoprene],
        }
    }
}

impl FromStr for DomainSelection {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "t" | "transformed" => Ok(Self::T),
            "i" | "isoprene" => Ok(Self::I),
            "both" => Ok(Self::Both),
            _ => Err(format!("unknown domain `{s}` (expected t, i or both)")),
        }
    }
}

/// One row of a metrics CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchMetrics {
    pub patch_id: u64,
    pub domain: Domain,
    pub nmse_db: Option<f64>,
    pub maxae: f64,
    pub ssim: f64,
    pub psnr_db: f64,
    pub uiqi: Option<f64>,
    pub scc: Option<f64>,
}

/// All metrics for one patch, with the data range taken from the truth.
pub fn evaluate(
    patch_id: u64,
    domain: Domain,
    est: ArrayView2<'_, f64>,
    truth: ArrayView2<'_, f64>,
) -> Result<PatchMetrics> {
    let range = data_range(truth);
    Ok(PatchMetrics {
        patch_id,
        domain,
        nmse_db: nmse(est, truth)?,
        maxae: maxae(est, truth)?,
        ssim: ssim(est, truth, range)?,
        psnr_db: psnr(est, truth, range)?,
        uiqi: uiqi(est, truth)?,
        scc: scc(est, truth)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub n: usize,
    pub avg: f64,
    pub std: f64,
}

impl Aggregate {
    fn of(values: impl Iterator<Item = f64>) -> Option<Aggregate> {
        let v: Vec<f64> = values.collect();
        if v.is_empty() {
            return None;
        }
        let n = v.len() as f64;
        let avg = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - avg).powi(2)).sum::<f64>() / n;
        Some(Aggregate {
            n: v.len(),
            avg,
            std: var.sqrt(),
        })
    }
}

pub const METRIC_NAMES: [&str; 6] = ["nmse_db", "maxae", "ssim", "psnr_db", "uiqi", "scc"];

fn metric_value(m: &PatchMetrics, name: &str) -> Option<f64> {
    match name {
        "nmse_db" => m.nmse_db,
        "maxae" => Some(m.maxae),
        "ssim" => Some(m.ssim),
        "psnr_db" => Some(m.psnr_db),
        "uiqi" => m.uiqi,
        "scc" => m.scc,
        _ => None,
    }
}

/// Per-patch rows plus average and standard deviation per domain and metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub records: Vec<PatchMetrics>,
    pub aggregates: BTreeMap<Domain, BTreeMap<String, Aggregate>>,
}

impl MetricsReport {
    pub fn new(records: Vec<PatchMetrics>) -> Self {
        let mut aggregates: BTreeMap<Domain, BTreeMap<String, Aggregate>> = BTreeMap::new();
        let domains: std::collections::BTreeSet<Domain> = records.iter().map(|r| r.domain).collect();
        for d in domains {
            let entry = aggregates.entry(d).or_default();
            for name in METRIC_NAMES {
                let vals = records.iter().filter(|r| r.domain == d).filter_map(|r| metric_value(r, name));
                if let Some(a) = Aggregate::of(vals) {
                    entry.insert(name.to_string(), a);
                }
            }
        }
        Self { records, aggregates }
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.records {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let records = r.deserialize().collect::<Result<Vec<PatchMetrics>, _>>()?;
        Ok(Self::new(records))
    }

    pub fn write_aggregates(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(&self.aggregates)?)?;
        Ok(())
    }

    pub fn mean_nmse(&self, domain: Domain) -> Option<f64> {
        self.aggregates.get(&domain)?.get("nmse_db").map(|a| a.avg)
    }
}

/// One line of the comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub name: String,
    pub domain: Domain,
    pub metric: String,
    pub avg: f64,
    pub std: f64,
    /// NMSE improvement against the baseline; set on NMSE rows only.
    pub nir: Option<f64>,
}

/// Side-by-side table of several evaluations, with NIR against `baseline`.
pub fn compare(evals: &[(String, MetricsReport)], baseline: &MetricsReport) -> Vec<ReportRow> {
    let mut rows = Vec::new();
    for domain in [Domain::Transformed, Domain::Isoprene] {
        let base_nmse = baseline.mean_nmse(domain);
        for (name, report) in evals {
            let Some(aggs) = report.aggregates.get(&domain) else {
                continue;
            };
            for metric in METRIC_NAMES {
                let Some(a) = aggs.get(metric) else { continue };
                let nir = (metric == "nmse_db")
                    .then(|| base_nmse.and_then(|b| nir(a.avg, b)))
                    .flatten();
                rows.push(ReportRow {
                    name: name.clone(),
                    domain,
                    metric: metric.to_string(),
                    avg: a.avg,
                    std: a.std,
                    nir,
                });
            }
        }
    }
    rows
}

pub fn write_report_csv(rows: &[ReportRow], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
