//! Gridded inputs on a regular, cell-registered lat/lon grid.
//!
//! Rows run north to south (row 0 is the northernmost band) and columns run
//! west to east. Cell `(r, c)` is centred at
//! `(lon_min + (c + 0.5)·cell, lat_max − (r + 0.5)·cell)`.
//! Missing cells (sea, no data) hold [`MISSING`], which is a NaN.

mod classes;
pub mod dump;
pub mod netcdf;
pub mod resample;

use chrono::NaiveDate;
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use classes::{ClimateClass, LandCoverClass};
pub use resample::{
    align_to, bicubic_at, class_fraction, coarsen, cubic_weight, downsample_bicubic,
    rescale_bicubic, resample_bicubic, CoarsenMode, CoarsenSource,
};

/// Sentinel for a missing cell.
pub const MISSING: f64 = f64::NAN;

/// Tolerance, in degrees, for grid-geometry comparisons.
pub const GEOMETRY_TOLERANCE: f64 = 1e-9;

#[inline]
pub fn is_missing(v: f64) -> bool {
    v.is_nan()
}

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("invalid extent: {0}")]
    InvalidExtent(String),
    #[error("data shape {got:?} does not match extent shape {want:?}")]
    ShapeMismatch {
        got: (usize, usize),
        want: (usize, usize),
    },
    #[error("value {value} at ({row}, {col}) is not valid for a {kind:?} grid")]
    InvalidValue {
        kind: RasterKind,
        row: usize,
        col: usize,
        value: f64,
    },
    #[error("unknown land-cover code {0}")]
    UnknownLandCover(u8),
    #[error("variable `{0}` not found")]
    MissingVariable(String),
    #[error("coordinate `{axis}` is not uniformly spaced (step {step} deviates from {expected})")]
    NonUniformGrid {
        axis: String,
        step: f64,
        expected: f64,
    },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("target cell size {target} is not an integer multiple of source cell size {source_cell}")]
    NonIntegerRatio { target: f64, source_cell: f64 },
    #[error("extents do not overlap")]
    EmptyOverlap,
    #[error("source grid of {rows}x{cols} cells is too small for bicubic interpolation (needs 4x4)")]
    TooSmall { rows: usize, cols: usize },
    #[error("target extent lies outside the source extent")]
    OutsideSource,
    #[error("grid of {rows}x{cols} cells is not divisible by factor {factor}")]
    NotDivisible {
        rows: usize,
        cols: usize,
        factor: usize,
    },
    #[error("bad raw dump: {0}")]
    BadDump(String),
    #[error("netcdf: {0}")]
    NetCdf(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = RasterError> = std::result::Result<T, E>;

/// Geographic bounds of a grid, in degrees, plus its cell edge length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoExtent {
    pub lon_min: f64,
    pub lon_max: f64,
    pub lat_min: f64,
    pub lat_max: f64,
    pub cell_size: f64,
}

impl GeoExtent {
    pub fn new(lon_min: f64, lon_max: f64, lat_min: f64, lat_max: f64, cell_size: f64) -> Result<Self> {
        let extent = Self {
            lon_min,
            lon_max,
            lat_min,
            lat_max,
            cell_size,
        };
        extent.validate()?;
        Ok(extent)
    }

    /// The study area over Europe, 0.1° cells with centres from 11.95° W to
    /// 44.95° E and 34.05° N to 71.95° N.
    pub fn europe() -> Self {
        Self {
            lon_min: -12.0,
            lon_max: 45.0,
            lat_min: 34.0,
            lat_max: 72.0,
            cell_size: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.lon_min, self.lon_max, self.lat_min, self.lat_max, self.cell_size]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(RasterError::InvalidExtent("non-finite bound".into()));
        }
        if self.cell_size <= 0.0 {
            return Err(RasterError::InvalidExtent(format!(
                "cell size {} must be positive",
                self.cell_size
            )));
        }
        if self.lon_min >= self.lon_max || self.lat_min >= self.lat_max {
            return Err(RasterError::InvalidExtent(format!(
                "empty bounds lon [{}, {}] lat [{}, {}]",
                self.lon_min, self.lon_max, self.lat_min, self.lat_max
            )));
        }
        for (span, axis) in [(self.width(), "lon"), (self.height(), "lat")] {
            let cells = span / self.cell_size;
            if (cells - cells.round()).abs() * self.cell_size > GEOMETRY_TOLERANCE {
                return Err(RasterError::InvalidExtent(format!(
                    "{axis} span {span} is not a multiple of cell size {}",
                    self.cell_size
                )));
            }
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.lon_max - self.lon_min
    }

    pub fn height(&self) -> f64 {
        self.lat_max - self.lat_min
    }

    pub fn rows(&self) -> usize {
        (self.height() / self.cell_size).round() as usize
    }

    pub fn cols(&self) -> usize {
        (self.width() / self.cell_size).round() as usize
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows(), self.cols())
    }

    pub fn lon_center(&self, col: usize) -> f64 {
        self.lon_min + (col as f64 + 0.5) * self.cell_size
    }

    pub fn lat_center(&self, row: usize) -> f64 {
        self.lat_max - (row as f64 + 0.5) * self.cell_size
    }

    pub fn center(&self) -> (f64, f64) {
        (
            0.5 * (self.lon_min + self.lon_max),
            0.5 * (self.lat_min + self.lat_max),
        )
    }

    /// Whether `(lon, lat)` falls inside, lower/left edges inclusive.
    pub fn contains_point(&self, lon: f64, lat: f64) -> bool {
        lon >= self.lon_min && lon < self.lon_max && lat >= self.lat_min && lat < self.lat_max
    }

    /// Whether `other` lies within `self`, up to [`GEOMETRY_TOLERANCE`].
    pub fn contains(&self, other: &GeoExtent) -> bool {
        other.lon_min >= self.lon_min - GEOMETRY_TOLERANCE
            && other.lon_max <= self.lon_max + GEOMETRY_TOLERANCE
            && other.lat_min >= self.lat_min - GEOMETRY_TOLERANCE
            && other.lat_max <= self.lat_max + GEOMETRY_TOLERANCE
    }

    pub fn overlaps(&self, other: &GeoExtent) -> bool {
        self.lon_min < other.lon_max
            && other.lon_min < self.lon_max
            && self.lat_min < other.lat_max
            && other.lat_min < self.lat_max
    }

    /// Same bounds, different cell size.
    pub fn with_cell_size(&self, cell_size: f64) -> Result<Self> {
        Self::new(self.lon_min, self.lon_max, self.lat_min, self.lat_max, cell_size)
    }

    /// Sub-extent covering `rows × cols` cells starting at `(row, col)`.
    pub fn window(&self, row: usize, col: usize, rows: usize, cols: usize) -> Self {
        let cs = self.cell_size;
        Self {
            lon_min: self.lon_min + col as f64 * cs,
            lon_max: self.lon_min + (col + cols) as f64 * cs,
            lat_min: self.lat_max - (row + rows) as f64 * cs,
            lat_max: self.lat_max - row as f64 * cs,
            cell_size: cs,
        }
    }

    /// Fractional `(row, col)` of a point in cell-centre coordinates: the
    /// centre of cell `(r, c)` maps to exactly `(r, c)`.
    pub fn fractional_index(&self, lon: f64, lat: f64) -> (f64, f64) {
        (
            (self.lat_max - lat) / self.cell_size - 0.5,
            (lon - self.lon_min) / self.cell_size - 0.5,
        )
    }
}

/// What a grid carries, with its physical unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RasterKind {
    /// Emission flux, mol·cm⁻²·s⁻¹.
    Emission,
    /// Leaf area index, m²/m².
    Lai,
    /// Percentage 0–100.
    Percentage,
    /// Köppen-Geiger class code.
    ClimateClass,
}

/// A 2-D georeferenced array. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterGrid {
    extent: GeoExtent,
    data: Array2<f64>,
    kind: RasterKind,
    timestamp: Option<NaiveDate>,
}

impl RasterGrid {
    pub fn new(
        extent: GeoExtent,
        data: Array2<f64>,
        kind: RasterKind,
        timestamp: Option<NaiveDate>,
    ) -> Result<Self> {
        extent.validate()?;
        if data.dim() != extent.shape() {
            return Err(RasterError::ShapeMismatch {
                got: data.dim(),
                want: extent.shape(),
            });
        }
        for ((row, col), &value) in data.indexed_iter() {
            if is_missing(value) {
                continue;
            }
            let ok = match kind {
                RasterKind::Emission | RasterKind::Lai => value >= 0.0 && value.is_finite(),
                RasterKind::Percentage => (0.0..=100.0).contains(&value),
                RasterKind::ClimateClass => {
                    value.fract() == 0.0 && ClimateClass::from_code(value as u8).is_some()
                }
            };
            if !ok {
                return Err(RasterError::InvalidValue {
                    kind,
                    row,
                    col,
                    value,
                });
            }
        }
        Ok(Self {
            extent,
            data,
            kind,
            timestamp,
        })
    }

    pub fn extent(&self) -> &GeoExtent {
        &self.extent
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn into_data(self) -> Array2<f64> {
        self.data
    }

    pub fn kind(&self) -> RasterKind {
        self.kind
    }

    pub fn timestamp(&self) -> Option<NaiveDate> {
        self.timestamp
    }

    pub fn with_timestamp(mut self, timestamp: Option<NaiveDate>) -> Self {
        self.timestamp = timestamp;
        self
    }

    pub fn rows(&self) -> usize {
        self.data.nrows()
    }

    pub fn cols(&self) -> usize {
        self.data.ncols()
    }

    /// Copy of a `rows × cols` window starting at `(row, col)`.
    pub fn window(&self, row: usize, col: usize, rows: usize, cols: usize) -> Array2<f64> {
        self.data
            .slice(ndarray::s![row..row + rows, col..col + cols])
            .to_owned()
    }
}

/// A fine-resolution categorical land-cover map. Code 0 means no data.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoricalLandCover {
    extent: GeoExtent,
    data: Array2<u8>,
}

impl CategoricalLandCover {
    pub const NO_DATA: u8 = 0;

    pub fn new(extent: GeoExtent, data: Array2<u8>) -> Result<Self> {
        extent.validate()?;
        if data.dim() != extent.shape() {
            return Err(RasterError::ShapeMismatch {
                got: data.dim(),
                want: extent.shape(),
            });
        }
        if let Some(&bad) = data
            .iter()
            .find(|&&c| c != Self::NO_DATA && LandCoverClass::from_code(c).is_none())
        {
            return Err(RasterError::UnknownLandCover(bad));
        }
        Ok(Self { extent, data })
    }

    pub fn extent(&self) -> &GeoExtent {
        &self.extent
    }

    pub fn data(&self) -> &Array2<u8> {
        &self.data
    }
}
