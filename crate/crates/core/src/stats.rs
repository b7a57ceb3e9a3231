//! Correlation and entropy between emission patches and driver maps.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::NaiveDate;
use ndarray::ArrayView2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::patchset::{DriverKind, PatchError, PatchStore};

pub const DEFAULT_BINS: usize = 32;

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("at least {need} values are required, got {got}")]
    TooFew { got: usize, need: usize },
    #[error("bins must be at least 2, got {0}")]
    BadBins(usize),
    #[error("driver `{0}` is not in the store")]
    MissingDriver(DriverKind),
    #[error(transparent)]
    Patch(#[from] PatchError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = StatsError> = std::result::Result<T, E>;

fn paired<'a>(a: &'a [f64], b: &'a [f64]) -> Result<impl Iterator<Item = (f64, f64)> + 'a> {
    if a.len() != b.len() {
        return Err(StatsError::LengthMismatch(a.len(), b.len()));
    }
    Ok(a.iter().zip(b).map(|(&x, &y)| (x, y)).filter(|(x, y)| !x.is_nan() && !y.is_nan()))
}

/// Pearson correlation over paired non-missing values; `None` when either
/// side has zero variance.
pub fn pcc(a: &[f64], b: &[f64]) -> Result<Option<f64>> {
    // single-pass co-moment update
    let (mut n, mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0f64, 0.0, 0.0, 0.0, 0.0, 0.0);
    for (x, y) in paired(a, b)? {
        n += 1.0;
        let dx = x - mx;
        let dy = y - my;
        mx += dx / n;
        my += dy / n;
        sxx += dx * (x - mx);
        syy += dy * (y - my);
        sxy += dx * (y - my);
    }
    if n < 2.0 {
        return Err(StatsError::TooFew { got: n as usize, need: 2 });
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return Ok(None);
    }
    Ok(Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0)))
}

fn bin_indices(v: &[f64], bins: usize) -> Vec<usize> {
    let (lo, hi) = v
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    let width = hi - lo;
    v.iter()
        .map(|&x| {
            if width > 0.0 {
                (((x - lo) / width * bins as f64) as usize).min(bins - 1)
            } else {
                0
            }
        })
        .collect()
}

fn finite_pairs(x: &[f64], y: &[f64], bins: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if bins < 2 {
        return Err(StatsError::BadBins(bins));
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = paired(x, y)?.unzip();
    if xs.is_empty() {
        return Err(StatsError::TooFew { got: 0, need: 1 });
    }
    Ok((xs, ys))
}

fn entropy_of_counts(counts: impl Iterator<Item = usize>, total: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| c as f64 / total * (total / c as f64).log2())
        .sum()
}

/// Shannon entropy in bits over `bins` uniform bins spanning the data range.
pub fn entropy(x: &[f64], bins: usize) -> Result<f64> {
    let (xs, _) = finite_pairs(x, x, bins)?;
    let mut counts = vec![0usize; bins];
    for b in bin_indices(&xs, bins) {
        counts[b] += 1;
    }
    Ok(entropy_of_counts(counts.into_iter(), xs.len() as f64))
}

/// `H(X | Y)` in bits from the joint histogram of per-variable min–max bins.
pub fn conditional_entropy(x: &[f64], y: &[f64], bins: usize) -> Result<f64> {
    let (xs, ys) = finite_pairs(x, y, bins)?;
    let bx = bin_indices(&xs, bins);
    let by = bin_indices(&ys, bins);
    let mut joint = vec![0usize; bins * bins];
    let mut marginal_y = vec![0usize; bins];
    for (&i, &j) in bx.iter().zip(&by) {
        joint[j * bins + i] += 1;
        marginal_y[j] += 1;
    }
    let total = xs.len() as f64;
    let mut h = 0.0;
    for j in 0..bins {
        let ny = marginal_y[j];
        for i in 0..bins {
            let nxy = joint[j * bins + i];
            if nxy > 0 {
                h += nxy as f64 / total * (ny as f64 / nxy as f64).log2();
            }
        }
    }
    Ok(h)
}

/// Mean, population standard deviation and median.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    pub median: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Summary> {
        let mut v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
        if v.is_empty() {
            return None;
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        v.sort_by(f64::total_cmp);
        let m = v.len() / 2;
        let median = if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) };
        Some(Summary {
            n: v.len(),
            mean,
            std: var.sqrt(),
            median,
        })
    }
}

/// Per-patch quantities for one driver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchStats {
    pub patch_id: u64,
    pub date: Option<NaiveDate>,
    pub pcc: Option<f64>,
    pub entropy_isop: f64,
    pub conditional_entropy: f64,
    pub mean_isop: f64,
    pub mean_driver: f64,
}

pub fn patch_stats(
    patch_id: u64,
    date: Option<NaiveDate>,
    isop: ArrayView2<'_, f64>,
    driver: ArrayView2<'_, f64>,
    bins: usize,
) -> Result<PatchStats> {
    let x: Vec<f64> = isop.iter().copied().collect();
    let y: Vec<f64> = driver.iter().copied().collect();
    let mean = |v: &[f64]| {
        let (s, n) = v.iter().filter(|x| !x.is_nan()).fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
        s / n as f64
    };
    Ok(PatchStats {
        patch_id,
        date,
        pcc: pcc(&x, &y)?,
        entropy_isop: entropy(&x, bins)?,
        conditional_entropy: conditional_entropy(&x, &y, bins)?,
        mean_isop: mean(&x),
        mean_driver: mean(&y),
    })
}

/// Patch-averaged values per date and their cross-patch correlation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationSeries {
    pub dates: Vec<Option<NaiveDate>>,
    pub mean_isoprene: Vec<f64>,
    pub mean_driver: Vec<f64>,
    pub pcc_per_date: Vec<Option<f64>>,
    /// Correlation of the two mean series over time.
    pub temporal_pcc: Option<f64>,
}

pub fn temporal_series(stats: &[PatchStats]) -> CorrelationSeries {
    let mut by_date: BTreeMap<Option<NaiveDate>, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for s in stats {
        let e = by_date.entry(s.date).or_default();
        e.0.push(s.mean_isop);
        e.1.push(s.mean_driver);
    }
    let mut series = CorrelationSeries {
        dates: Vec::new(),
        mean_isoprene: Vec::new(),
        mean_driver: Vec::new(),
        pcc_per_date: Vec::new(),
        temporal_pcc: None,
    };
    for (date, (iso, drv)) in by_date {
        series.dates.push(date);
        series.mean_isoprene.push(iso.iter().sum::<f64>() / iso.len() as f64);
        series.mean_driver.push(drv.iter().sum::<f64>() / drv.len() as f64);
        series.pcc_per_date.push(pcc(&iso, &drv).ok().flatten());
    }
    series.temporal_pcc = pcc(&series.mean_isoprene, &series.mean_driver).ok().flatten();
    series
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyReport {
    pub conditional: Option<Summary>,
    pub unconditional: Option<Summary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub driver: DriverKind,
    pub bins: usize,
    pub n_patches: usize,
    pub spatial_pcc: Option<Summary>,
    pub entropy: EntropyReport,
    pub temporal: CorrelationSeries,
}

impl StatsReport {
    pub fn from_patches(driver: DriverKind, bins: usize, stats: &[PatchStats]) -> Self {
        let pccs: Vec<f64> = stats.iter().filter_map(|s| s.pcc).collect();
        let cond: Vec<f64> = stats.iter().map(|s| s.conditional_entropy).collect();
        let unc: Vec<f64> = stats.iter().map(|s| s.entropy_isop).collect();
        Self {
            driver,
            bins,
            n_patches: stats.len(),
            spatial_pcc: Summary::of(&pccs),
            entropy: EntropyReport {
                conditional: Summary::of(&cond),
                unconditional: Summary::of(&unc),
            },
            temporal: temporal_series(stats),
        }
    }
}

/// Per-patch statistics over a store, in index order.
pub fn analyze_store(
    store: &PatchStore,
    driver: DriverKind,
    bins: usize,
    ids: Option<&[u64]>,
) -> Result<Vec<PatchStats>> {
    let slot = store
        .meta()
        .driver_position(driver)
        .ok_or(StatsError::MissingDriver(driver))?;
    let entries: Vec<_> = match ids {
        Some(ids) => ids
            .iter()
            .map(|&id| {
                store
                    .entry(id)
                    .ok_or_else(|| PatchError::BadStore(format!("no patch with id {id}")).into())
            })
            .collect::<Result<_>>()?,
        None => store.index().iter().collect(),
    };
    entries
        .par_iter()
        .map(|e| {
            let p = store.read_entry(e)?;
            patch_stats(e.patch_id, e.date, p.i_hr.view(), p.drivers_hr[slot].view(), bins)
        })
        .collect()
}

/// Write per-patch and per-date CSVs for plotting.
pub fn write_csvs(stats: &[PatchStats], series: &CorrelationSeries, patches: &Path, dates: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(patches)?;
    for s in stats {
        w.serialize(s)?;
    }
    w.flush()?;

    let norm = |v: &[f64]| -> Vec<f64> {
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        v.iter().map(|x| if hi > lo { (x - lo) / (hi - lo) } else { 0.0 }).collect()
    };
    let (ni, nd) = (norm(&series.mean_isoprene), norm(&series.mean_driver));
    let mut w = csv::Writer::from_path(dates)?;
    w.write_record(["date", "mean_isoprene", "mean_driver", "norm_isoprene", "norm_driver", "pcc"])?;
    for k in 0..series.dates.len() {
        w.write_record([
            series.dates[k].map(|d| d.to_string()).unwrap_or_default(),
            series.mean_isoprene[k].to_string(),
            series.mean_driver[k].to_string(),
            ni[k].to_string(),
            nd[k].to_string(),
            series.pcc_per_date[k].map(|p| p.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
