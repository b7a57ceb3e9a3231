//! Sliding-window patch extraction and LR/driver generation.

mod store;

pub use store::{PatchStore, StoreMeta, StoreWriter, INDEX_FILE, META_FILE, STORE_FILE, TRANSFORM_FILE};

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::{rescale_bicubic, GeoExtent, RasterError, RasterGrid, RasterKind};
use crate::transform::{QuantileFitter, TransformError, TransformModel, DEFAULT_QUANTILES, DEFAULT_RESERVOIR};

#[derive(Debug, Error)]
pub enum PatchError {
    #[error("invalid patch configuration: {0}")]
    Config(String),
    #[error("patch of {patch} cells does not fit a {rows}×{cols} grid")]
    PatchTooLarge { patch: usize, rows: usize, cols: usize },
    #[error("emission grids do not share one extent")]
    ExtentMismatch,
    #[error("driver `{0}` is not aligned to the emission grid")]
    MisalignedDriver(String),
    #[error("bad patch store: {0}")]
    BadStore(String),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = PatchError> = std::result::Result<T, E>;

/// Upper end used to map LAI onto `[0, 1]`; larger values saturate.
pub const LAI_SCALE: f64 = 10.0;

/// Auxiliary gridded variables that can be stacked as input channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DriverKind {
    /// Cropland percentage.
    Cl,
    /// Tree-cover percentage.
    Tc,
    Lai,
}

impl DriverKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Cl => "cl",
            Self::Tc => "tc",
            Self::Lai => "lai",
        }
    }

    pub fn raster_kind(self) -> RasterKind {
        match self {
            Self::Cl | Self::Tc => RasterKind::Percentage,
            Self::Lai => RasterKind::Lai,
        }
    }

    /// Physical value → network input in `[0, 1]`.
    pub fn scale(self, v: f64) -> f64 {
        match self {
            Self::Cl | Self::Tc => (v / 100.0).clamp(0.0, 1.0),
            Self::Lai => (v / LAI_SCALE).clamp(0.0, 1.0),
        }
    }

    fn physical_max(self) -> f64 {
        match self {
            Self::Cl | Self::Tc => 100.0,
            Self::Lai => f64::INFINITY,
        }
    }
}

impl fmt::Display for DriverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DriverKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "cl" => Ok(Self::Cl),
            "tc" => Ok(Self::Tc),
            "lai" => Ok(Self::Lai),
            other => Err(format!("unknown driver `{other}` (expected cl, tc or lai)")),
        }
    }
}

/// Window geometry in cells.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatchConfig {
    pub patch_cells: usize,
    pub stride_cells: usize,
    pub zero_threshold: f64,
    pub alpha: usize,
}

impl Default for PatchConfig {
    fn default() -> Self {
        Self {
            patch_cells: 30,
            stride_cells: 10,
            zero_threshold: 0.10,
            alpha: 2,
        }
    }
}

fn cells(deg: f64, cell_size: f64, what: &str) -> Result<usize> {
    let n = deg / cell_size;
    let rounded = n.round();
    if rounded < 1.0 || (n - rounded).abs() > 1e-6 {
        return Err(PatchError::Config(format!(
            "{what} of {deg}° is not a positive multiple of the {cell_size}° cell"
        )));
    }
    Ok(rounded as usize)
}

impl PatchConfig {
    pub fn from_degrees(
        patch_deg: f64,
        stride_deg: f64,
        cell_size: f64,
        zero_threshold: f64,
        alpha: usize,
    ) -> Result<Self> {
        let cfg = Self {
            patch_cells: cells(patch_deg, cell_size, "patch size")?,
            stride_cells: cells(stride_deg, cell_size, "stride")?,
            zero_threshold,
            alpha,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch_cells == 0 || self.stride_cells == 0 {
            return Err(PatchError::Config("patch and stride must be positive".into()));
        }
        if self.alpha < 1 || self.patch_cells % self.alpha != 0 {
            return Err(PatchError::Config(format!(
                "patch of {} cells is not divisible by alpha = {}",
                self.patch_cells, self.alpha
            )));
        }
        if !(0.0..=1.0).contains(&self.zero_threshold) {
            return Err(PatchError::Config(format!(
                "zero threshold {} outside [0, 1]",
                self.zero_threshold
            )));
        }
        Ok(())
    }

    pub fn lr_cells(&self) -> usize {
        self.patch_cells / self.alpha
    }

    /// Window origins fully inside a `rows × cols` grid, row-major.
    pub fn origins(&self, rows: usize, cols: usize) -> Result<Vec<(usize, usize)>> {
        let p = self.patch_cells;
        if p > rows || p > cols {
            return Err(PatchError::PatchTooLarge { patch: p, rows, cols });
        }
        let per_axis = |n: usize| (n - p) / self.stride_cells + 1;
        let mut out = Vec::with_capacity(per_axis(rows) * per_axis(cols));
        for i in 0..per_axis(rows) {
            for j in 0..per_axis(cols) {
                out.push((i * self.stride_cells, j * self.stride_cells));
            }
        }
        Ok(out)
    }

    /// `Some(zero_fraction)` if the window is retained.
    pub fn screen(&self, window: ArrayView2<'_, f64>) -> Option<f64> {
        let n = window.len();
        let mut zeros = 0usize;
        for &v in window.iter() {
            if v.is_nan() {
                return None;
            }
            if v == 0.0 {
                zeros += 1;
            }
        }
        let fraction = zeros as f64 / n as f64;
        // strict "more than", tolerant of the threshold's decimal rounding
        if zeros as f64 > self.zero_threshold * n as f64 + 1e-9 {
            None
        } else {
            Some(fraction)
        }
    }
}

/// A retained window: which grid, where, and how sparse.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowRef {
    pub date_index: usize,
    pub row: usize,
    pub col: usize,
    pub zero_fraction: f64,
}

/// Retained windows over a time series of emission grids, ordered by
/// origin (row-major) and then by date.
pub fn extract_patches(emission: &[RasterGrid], cfg: &PatchConfig) -> Result<Vec<WindowRef>> {
    cfg.validate()?;
    let Some(first) = emission.first() else {
        return Ok(Vec::new());
    };
    if emission.iter().any(|g| g.extent() != first.extent()) {
        return Err(PatchError::ExtentMismatch);
    }
    let origins = cfg.origins(first.rows(), first.cols())?;
    let mut dates: Vec<usize> = (0..emission.len()).collect();
    dates.sort_by_key(|&d| emission[d].timestamp());

    let p = cfg.patch_cells;
    let screened: Vec<Vec<Option<f64>>> = dates
        .par_iter()
        .map(|&d| {
            let data = emission[d].data();
            origins
                .iter()
                .map(|&(r, c)| cfg.screen(data.slice(ndarray::s![r..r + p, c..c + p])))
                .collect()
        })
        .collect();

    let mut out = Vec::new();
    for (o, &(row, col)) in origins.iter().enumerate() {
        for (k, &date_index) in dates.iter().enumerate() {
            if let Some(zero_fraction) = screened[k][o] {
                out.push(WindowRef {
                    date_index,
                    row,
                    col,
                    zero_fraction,
                });
            }
        }
    }
    Ok(out)
}

/// Metadata for one stored patch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchIndexEntry {
    pub patch_id: u64,
    pub extent: GeoExtent,
    pub date: Option<NaiveDate>,
    /// Modal climate-class code over the window; `None` if no class data.
    pub climate_class: Option<u8>,
    pub zero_fraction: f64,
    pub store_offset: u64,
}

impl PatchIndexEntry {
    pub fn center(&self) -> (f64, f64) {
        self.extent.center()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub meta: PatchIndexEntry,
    pub i_hr: Array2<f64>,
    pub i_lr: Array2<f64>,
    pub t_hr: Array2<f64>,
    pub t_lr: Array2<f64>,
    /// Downsampled driver windows in physical units, one per store driver.
    pub drivers_lr: Vec<Array2<f64>>,
    /// The same drivers at HR, kept for the statistics study.
    pub drivers_hr: Vec<Array2<f64>>,
}

impl Patch {
    /// Channel count of the stacked SR input.
    pub fn channels(&self) -> usize {
        1 + self.drivers_lr.len()
    }
}

/// Driver grids aligned to the emission grid.
#[derive(Debug, Clone, Copy)]
pub struct DriverGrid<'a> {
    pub kind: DriverKind,
    pub grid: &'a RasterGrid,
}

/// Most frequent class code; ties go to the lowest code, missing ignored.
pub fn modal_class(window: ArrayView2<'_, f64>) -> Option<u8> {
    let mut counts: BTreeMap<u8, usize> = BTreeMap::new();
    for &v in window.iter().filter(|v| !v.is_nan()) {
        *counts.entry(v as u8).or_default() += 1;
    }
    let mut best: Option<(u8, usize)> = None;
    for (code, n) in counts {
        if best.is_none_or(|(_, m)| n > m) {
            best = Some((code, n));
        }
    }
    best.map(|(code, _)| code)
}

fn downsample_window(window: ArrayView2<'_, f64>, lr: usize, lo: f64, hi: f64) -> Array2<f64> {
    rescale_bicubic(window, lr, lr).mapv(|v| if v.is_nan() { v } else { v.clamp(lo, hi) })
}

/// Assemble one patch from a retained window.
pub fn build_patch(
    emission: &RasterGrid,
    window: &WindowRef,
    drivers: &[DriverGrid<'_>],
    climate: Option<&RasterGrid>,
    transform: &TransformModel,
    cfg: &PatchConfig,
    patch_id: u64,
) -> Result<Patch> {
    let p = cfg.patch_cells;
    let lr = cfg.lr_cells();
    for d in drivers {
        if d.grid.extent() != emission.extent() {
            return Err(PatchError::MisalignedDriver(d.kind.name().into()));
        }
    }
    if let Some(c) = climate {
        if c.extent() != emission.extent() {
            return Err(PatchError::MisalignedDriver("climate".into()));
        }
    }
    let (r, c) = (window.row, window.col);
    let i_hr = emission.window(r, c, p, p);
    let i_lr = downsample_window(i_hr.view(), lr, 0.0, f64::INFINITY);
    let t_hr = transform.forward_array(&i_hr)?;
    let t_lr = transform.forward_array(&i_lr)?;

    let mut drivers_hr = Vec::with_capacity(drivers.len());
    let mut drivers_lr = Vec::with_capacity(drivers.len());
    for d in drivers {
        // driver gaps (sea, no data) count as zero coverage
        let hr = d.grid.window(r, c, p, p).mapv(|v| if v.is_nan() { 0.0 } else { v });
        drivers_lr.push(downsample_window(hr.view(), lr, 0.0, d.kind.physical_max()));
        drivers_hr.push(hr);
    }
    let climate_class = climate.and_then(|g| modal_class(g.window(r, c, p, p).view()));

    Ok(Patch {
        meta: PatchIndexEntry {
            patch_id,
            extent: emission.extent().window(r, c, p, p),
            date: emission.timestamp(),
            climate_class,
            zero_fraction: window.zero_fraction,
            store_offset: 0,
        },
        i_hr,
        i_lr,
        t_hr,
        t_lr,
        drivers_lr,
        drivers_hr,
    })
}

/// Fit a transform on every HR value of the retained windows.
pub fn fit_transform_on_windows(
    emission: &[RasterGrid],
    windows: &[WindowRef],
    cfg: &PatchConfig,
    n_q: usize,
) -> Result<TransformModel> {
    let p = cfg.patch_cells;
    let mut fitter = QuantileFitter::with_capacity(n_q, DEFAULT_RESERVOIR, 0);
    for w in windows {
        let data = emission[w.date_index].data();
        fitter.extend(data.slice(ndarray::s![w.row..w.row + p, w.col..w.col + p]).iter().copied())?;
    }
    Ok(fitter.finish()?)
}

/// Summary of a completed extraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractSummary {
    pub n_dates: usize,
    pub n_windows: usize,
    pub n_retained: usize,
}

/// Extract, build and persist every retained patch into `out_dir`.
///
/// Without a supplied transform, one is fitted on all retained HR values.
pub fn build_store(
    out_dir: &std::path::Path,
    emission: &[RasterGrid],
    drivers: &[(DriverKind, RasterGrid)],
    climate: Option<&RasterGrid>,
    cfg: &PatchConfig,
    transform: Option<TransformModel>,
) -> Result<ExtractSummary> {
    let windows = extract_patches(emission, cfg)?;
    if windows.is_empty() {
        return Err(PatchError::BadStore("no patch passed the filters".into()));
    }
    let transform = match transform {
        Some(t) => t,
        None => fit_transform_on_windows(emission, &windows, cfg, DEFAULT_QUANTILES.min(windows.len() * cfg.patch_cells.pow(2)))?,
    };
    let driver_refs: Vec<DriverGrid<'_>> = drivers
        .iter()
        .map(|(kind, grid)| DriverGrid { kind: *kind, grid })
        .collect();
    let meta = StoreMeta::new(cfg, drivers.iter().map(|d| d.0).collect(), emission[0].extent().cell_size);
    let mut writer = StoreWriter::create(out_dir, meta, &transform)?;

    const CHUNK: usize = 1024;
    for (chunk_no, chunk) in windows.chunks(CHUNK).enumerate() {
        let built: Vec<Patch> = chunk
            .par_iter()
            .enumerate()
            .map(|(k, w)| {
                build_patch(
                    &emission[w.date_index],
                    w,
                    &driver_refs,
                    climate,
                    &transform,
                    cfg,
                    (chunk_no * CHUNK + k) as u64,
                )
            })
            .collect::<Result<_>>()?;
        for patch in built {
            writer.push(patch)?;
        }
    }
    writer.finish()?;
    let n_windows = cfg.origins(emission[0].rows(), emission[0].cols())?.len() * emission.len();
    Ok(ExtractSummary {
        n_dates: emission.len(),
        n_windows,
        n_retained: windows.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::MISSING;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn extent(rows: usize, cols: usize) -> GeoExtent {
        GeoExtent::new(0.0, cols as f64 * 0.1, 40.0, 40.0 + rows as f64 * 0.1, 0.1).unwrap()
    }

    fn emission(data: Array2<f64>, day: u32) -> RasterGrid {
        let (r, c) = data.dim();
        RasterGrid::new(
            extent(r, c),
            data,
            RasterKind::Emission,
            NaiveDate::from_ymd_opt(2019, 1, day),
        )
        .unwrap()
    }

    #[test]
    fn window_count_matches_origin_formula() {
        let cfg = PatchConfig::default();
        for (rows, cols) in [(60, 60), (30, 30), (59, 75), (45, 100)] {
            let g = emission(Array2::from_elem((rows, cols), 1.0), 1);
            let w = extract_patches(&[g], &cfg).unwrap();
            let per = |n: usize| (n - 30) / 10 + 1;
            assert_eq!(w.len(), per(rows) * per(cols), "{rows}×{cols}");
        }
        let small = emission(Array2::from_elem((20, 40), 1.0), 1);
        assert!(matches!(
            extract_patches(&[small], &cfg),
            Err(PatchError::PatchTooLarge { .. })
        ));
    }

    #[test]
    fn all_zero_grid_keeps_nothing() {
        let g = emission(Array2::zeros((60, 60)), 1);
        assert!(extract_patches(&[g], &PatchConfig::default()).unwrap().is_empty());
    }

    #[test]
    fn zero_threshold_is_strict() {
        let cfg = PatchConfig::default();
        for (zeros, kept) in [(90, true), (91, false)] {
            let mut data = Array2::from_elem((30, 30), 1.0);
            for k in 0..zeros {
                data[[k / 30, k % 30]] = 0.0;
            }
            let w = extract_patches(&[emission(data, 1)], &cfg).unwrap();
            assert_eq!(w.len() == 1, kept, "{zeros} zeros");
        }
    }

    #[test]
    fn missing_cell_discards_window() {
        let mut data = Array2::from_elem((40, 30), 1.0);
        data[[35, 3]] = MISSING;
        let w = extract_patches(&[emission(data, 1)], &PatchConfig::default()).unwrap();
        assert_eq!(w.len(), 1);
        assert_eq!((w[0].row, w[0].col), (0, 0));
    }

    #[test]
    fn order_is_origin_then_date() {
        let cfg = PatchConfig::default();
        // dates given out of order
        let grids = vec![
            emission(Array2::from_elem((40, 40), 1.0), 3),
            emission(Array2::from_elem((40, 40), 1.0), 1),
        ];
        let w = extract_patches(&grids, &cfg).unwrap();
        let got: Vec<_> = w.iter().map(|w| (w.row, w.col, w.date_index)).collect();
        assert_eq!(
            got,
            vec![(0, 0, 1), (0, 0, 0), (0, 10, 1), (0, 10, 0), (10, 0, 1), (10, 0, 0), (10, 10, 1), (10, 10, 0)]
        );
    }

    #[test]
    fn adjacent_windows_overlap_by_two_thirds() {
        let e = extent(60, 60);
        let cfg = PatchConfig::default();
        let a = e.window(0, 0, 30, 30);
        let b = e.window(0, cfg.stride_cells, 30, 30);
        let overlap_lon = a.lon_max - b.lon_min;
        assert!((overlap_lon - 2.0).abs() < 1e-9);
        assert!((a.height() - 3.0).abs() < 1e-9);
    }

    #[test]
    fn degrees_to_cells() {
        let cfg = PatchConfig::from_degrees(3.0, 1.0, 0.1, 0.1, 2).unwrap();
        assert_eq!(cfg, PatchConfig::default());
        assert_eq!(cfg.lr_cells(), 15);
        assert!(PatchConfig::from_degrees(3.05, 1.0, 0.1, 0.1, 2).is_err());
        assert!(PatchConfig::from_degrees(3.0, 1.0, 0.1, 0.1, 4).is_err());
    }

    #[test]
    fn modal_class_breaks_ties_low() {
        let w = Array2::from_shape_vec((2, 3), vec![15.0, 15.0, 26.0, 26.0, 8.0, MISSING]).unwrap();
        assert_eq!(modal_class(w.view()), Some(15));
        let w = Array2::from_elem((2, 2), MISSING);
        assert_eq!(modal_class(w.view()), None);
    }

    #[test]
    fn build_patch_shapes_and_ranges() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let e = extent(40, 40);
        let em = RasterGrid::new(
            e,
            Array2::from_shape_fn((40, 40), |_| rng.random::<f64>() * 1e-11),
            RasterKind::Emission,
            None,
        )
        .unwrap();
        let cl = RasterGrid::new(
            e,
            Array2::from_shape_fn((40, 40), |(r, _)| if r < 20 { 100.0 } else { 0.0 }),
            RasterKind::Percentage,
            None,
        )
        .unwrap();
        let climate = RasterGrid::new(e, Array2::from_elem((40, 40), 15.0), RasterKind::ClimateClass, None).unwrap();
        let t = TransformModel::fit(em.data().iter().copied(), 100).unwrap();
        let cfg = PatchConfig::default();
        let w = extract_patches(std::slice::from_ref(&em), &cfg).unwrap();
        let drivers = [DriverGrid { kind: DriverKind::Cl, grid: &cl }];
        let p = build_patch(&em, &w[3], &drivers, Some(&climate), &t, &cfg, 9).unwrap();
        assert_eq!(p.i_hr.dim(), (30, 30));
        assert_eq!(p.i_lr.dim(), (15, 15));
        assert_eq!(p.channels(), 2);
        assert_eq!(p.meta.climate_class, Some(15));
        assert_eq!(p.meta.patch_id, 9);
        assert!(p.i_lr.iter().all(|&v| v >= 0.0));
        assert!(p.t_hr.iter().chain(p.t_lr.iter()).all(|v| (0.0..=1.0).contains(v)));
        assert!(p.drivers_lr[0].iter().all(|v| (0.0..=100.0).contains(v)));
        assert_eq!(p.i_hr, em.window(10, 10, 30, 30));

        let shifted = RasterGrid::new(extent(40, 40).window(0, 1, 40, 39), Array2::zeros((40, 39)), RasterKind::Percentage, None).unwrap();
        let bad = [DriverGrid { kind: DriverKind::Tc, grid: &shifted }];
        assert!(matches!(
            build_patch(&em, &w[0], &bad, None, &t, &cfg, 0),
            Err(PatchError::MisalignedDriver(_))
        ));
    }

    #[test]
    fn driver_scaling() {
        assert_eq!(DriverKind::Cl.scale(50.0), 0.5);
        assert_eq!(DriverKind::Lai.scale(25.0), 1.0);
        assert_eq!("TC".parse::<DriverKind>().unwrap(), DriverKind::Tc);
        assert!("x".parse::<DriverKind>().is_err());
    }
}
