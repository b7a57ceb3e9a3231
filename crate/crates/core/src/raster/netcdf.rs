//! NetCDF classic container I/O for `(time?, lat, lon)` grids.
//!
//! One data variable per file with 1-D coordinate variables named like their
//! dimensions (`lat`/`latitude`, `lon`/`longitude`, optionally `time`).
//! Coordinates are cell centres in degrees, ascending or descending.

use std::collections::HashMap;
use std::path::Path;

use chrono::{Duration, NaiveDate, NaiveDateTime};
use ndarray::{Array2, Axis};
use netcdf3::{DataSet, DataVector, FileReader, FileWriter, Version, NC_FILL_F64};

use super::{CategoricalLandCover, GeoExtent, RasterError, RasterGrid, RasterKind, Result, MISSING};

/// Tolerance, in degrees, on coordinate spacing.
pub const SPACING_TOLERANCE: f64 = 1e-6;

const LAT_NAMES: [&str; 3] = ["lat", "latitude", "y"];
const LON_NAMES: [&str; 3] = ["lon", "longitude", "x"];

/// How to read a data variable.
#[derive(Debug, Clone)]
pub struct LoadOptions {
    pub variable: String,
    pub kind: RasterKind,
    /// Required when the time dimension holds more than one step.
    pub time_index: Option<usize>,
    /// Attribute holding the missing-value marker. When unset, `_FillValue`
    /// and then `missing_value` are tried.
    pub missing_attr: Option<String>,
}

impl LoadOptions {
    pub fn new(variable: &str, kind: RasterKind) -> Self {
        Self {
            variable: variable.to_owned(),
            kind,
            time_index: None,
            missing_attr: None,
        }
    }

    pub fn time_index(mut self, index: usize) -> Self {
        self.time_index = Some(index);
        self
    }
}

fn nc_err(e: impl std::fmt::Debug) -> RasterError {
    RasterError::NetCdf(format!("{e:?}"))
}

fn to_f64(v: DataVector) -> Vec<f64> {
    match v {
        DataVector::I8(d) => d.into_iter().map(f64::from).collect(),
        DataVector::U8(d) => d.into_iter().map(f64::from).collect(),
        DataVector::I16(d) => d.into_iter().map(f64::from).collect(),
        DataVector::I32(d) => d.into_iter().map(f64::from).collect(),
        DataVector::F32(d) => d.into_iter().map(f64::from).collect(),
        DataVector::F64(d) => d,
    }
}

fn attr_f64(ds: &DataSet, var: &str, attr: &str) -> Option<f64> {
    let a = ds.get_var_attr(var, attr)?;
    a.get_f64()
        .and_then(|v| v.first().copied())
        .or_else(|| a.get_f32().and_then(|v| v.first().map(|x| f64::from(*x))))
        .or_else(|| a.get_i32().and_then(|v| v.first().map(|x| f64::from(*x))))
        .or_else(|| a.get_i16().and_then(|v| v.first().map(|x| f64::from(*x))))
        .or_else(|| a.get_i8().and_then(|v| v.first().map(|x| f64::from(*x))))
        .or_else(|| a.get_u8().and_then(|v| v.first().map(|x| f64::from(*x))))
}

/// Snap to 1e-9° so bounds computed from centres compare exactly.
fn snap(x: f64) -> f64 {
    (x * 1e9).round() / 1e9
}

struct Axis1d {
    cell: f64,
    lo_edge: f64,
    hi_edge: f64,
    descending: bool,
}

fn uniform_axis(name: &str, coords: &[f64]) -> Result<Axis1d> {
    if coords.len() < 2 {
        return Err(RasterError::DimensionMismatch(format!(
            "coordinate `{name}` needs at least two cells"
        )));
    }
    let n = coords.len();
    let step = (coords[n - 1] - coords[0]) / (n - 1) as f64;
    if step == 0.0 {
        return Err(RasterError::NonUniformGrid {
            axis: name.to_owned(),
            step: 0.0,
            expected: 0.0,
        });
    }
    for w in coords.windows(2) {
        let d = w[1] - w[0];
        if (d - step).abs() > SPACING_TOLERANCE {
            return Err(RasterError::NonUniformGrid {
                axis: name.to_owned(),
                step: d,
                expected: step,
            });
        }
    }
    let cell = step.abs();
    let lo = coords[0].min(coords[n - 1]);
    let hi = coords[0].max(coords[n - 1]);
    Ok(Axis1d {
        cell,
        lo_edge: snap(lo - cell / 2.0),
        hi_edge: snap(hi + cell / 2.0),
        descending: step < 0.0,
    })
}

struct Layout {
    extent: GeoExtent,
    lat_desc: bool,
    lon_desc: bool,
    time_len: Option<usize>,
    time_dim: Option<String>,
}

fn layout(ds: &DataSet, vars: &mut HashMap<String, DataVector>, variable: &str) -> Result<Layout> {
    let var = ds
        .get_var(variable)
        .ok_or_else(|| RasterError::MissingVariable(variable.to_owned()))?;
    let dims = var.dim_names();
    let (time_dim, lat_dim, lon_dim) = match dims.as_slice() {
        [lat, lon] => (None, lat.clone(), lon.clone()),
        [t, lat, lon] => (Some(t.clone()), lat.clone(), lon.clone()),
        _ => {
            return Err(RasterError::DimensionMismatch(format!(
                "`{variable}` has dimensions {dims:?}, expected (time?, lat, lon)"
            )))
        }
    };
    if !LAT_NAMES.contains(&lat_dim.to_ascii_lowercase().as_str())
        || !LON_NAMES.contains(&lon_dim.to_ascii_lowercase().as_str())
    {
        return Err(RasterError::DimensionMismatch(format!(
            "`{variable}` dimensions {dims:?} are not (time?, lat, lon)"
        )));
    }
    let mut read_coord = |name: &str| -> Result<Vec<f64>> {
        vars.remove(name)
            .map(to_f64)
            .ok_or_else(|| RasterError::MissingVariable(name.to_owned()))
    };
    let lat = read_coord(&lat_dim)?;
    let lon = read_coord(&lon_dim)?;
    let lat_axis = uniform_axis(&lat_dim, &lat)?;
    let lon_axis = uniform_axis(&lon_dim, &lon)?;
    if (lat_axis.cell - lon_axis.cell).abs() > SPACING_TOLERANCE {
        return Err(RasterError::DimensionMismatch(format!(
            "lat spacing {} differs from lon spacing {}",
            lat_axis.cell, lon_axis.cell
        )));
    }
    let cell = snap(lon_axis.cell);
    let extent = GeoExtent::new(
        lon_axis.lo_edge,
        lon_axis.hi_edge,
        lat_axis.lo_edge,
        lat_axis.hi_edge,
        cell,
    )?;
    let time_len = time_dim.as_ref().and_then(|t| ds.dim_size(t));
    Ok(Layout {
        extent,
        lat_desc: lat_axis.descending,
        lon_desc: lon_axis.descending,
        time_len,
        time_dim,
    })
}

fn parse_time_units(units: &str) -> Option<(f64, NaiveDateTime)> {
    let (unit, base) = units.split_once(" since ")?;
    let per_day = match unit.trim().to_ascii_lowercase().as_str() {
        "days" | "day" => 1.0,
        "hours" | "hour" => 24.0,
        "minutes" | "minute" => 1440.0,
        "seconds" | "second" => 86400.0,
        _ => return None,
    };
    let base = base.trim();
    let base = NaiveDateTime::parse_from_str(base, "%Y-%m-%d %H:%M:%S")
        .or_else(|_| NaiveDateTime::parse_from_str(base, "%Y-%m-%dT%H:%M:%S"))
        .ok()
        .or_else(|| {
            NaiveDate::parse_from_str(base.split_whitespace().next()?, "%Y-%m-%d")
                .ok()?
                .and_hms_opt(0, 0, 0)
        })?;
    Some((per_day, base))
}

fn timestamps(ds: &DataSet, vars: &mut HashMap<String, DataVector>, time_dim: &str) -> Vec<Option<NaiveDate>> {
    let n = ds.dim_size(time_dim).unwrap_or(0);
    let Some(values) = vars.remove(time_dim) else {
        return vec![None; n];
    };
    let units = ds.get_var_attr_as_string(time_dim, "units");
    to_f64(values)
        .into_iter()
        .map(|v| {
            let (per_day, base) = parse_time_units(units.as_deref()?)?;
            let seconds = (v / per_day * 86400.0).round() as i64;
            Some((base + Duration::seconds(seconds)).date())
        })
        .collect()
}

fn orient(mut data: Array2<f64>, lat_desc: bool, lon_desc: bool) -> Array2<f64> {
    if !lat_desc {
        data.invert_axis(Axis(0));
    }
    if lon_desc {
        data.invert_axis(Axis(1));
    }
    data.as_standard_layout().into_owned()
}

fn read_frames(path: &Path, opts: &LoadOptions) -> Result<(Layout, Vec<Array2<f64>>, Vec<Option<NaiveDate>>)> {
    let mut reader = FileReader::open(path).map_err(nc_err)?;
    let mut vars = reader.read_all_vars().map_err(nc_err)?;
    let (ds, _) = reader.close();
    let layout = layout(&ds, &mut vars, &opts.variable)?;
    let missing = match &opts.missing_attr {
        Some(a) => attr_f64(&ds, &opts.variable, a),
        None => attr_f64(&ds, &opts.variable, "_FillValue")
            .or_else(|| attr_f64(&ds, &opts.variable, "missing_value")),
    };
    let values = vars
        .remove(&opts.variable)
        .map(to_f64)
        .ok_or_else(|| RasterError::MissingVariable(opts.variable.clone()))?;
    let (rows, cols) = layout.extent.shape();
    let frames = layout.time_len.unwrap_or(1);
    if values.len() != frames * rows * cols {
        return Err(RasterError::DimensionMismatch(format!(
            "`{}` holds {} values, expected {frames}x{rows}x{cols}",
            opts.variable,
            values.len()
        )));
    }
    let dates = match &layout.time_dim {
        Some(t) => timestamps(&ds, &mut vars, t),
        None => vec![None],
    };
    let grids = values
        .chunks_exact(rows * cols)
        .map(|chunk| {
            let cleaned: Vec<f64> = chunk
                .iter()
                .map(|&v| if Some(v) == missing { MISSING } else { v })
                .collect();
            let a = Array2::from_shape_vec((rows, cols), cleaned).expect("sized above");
            orient(a, layout.lat_desc, layout.lon_desc)
        })
        .collect();
    Ok((layout, grids, dates))
}

/// Load one time step of a data variable.
pub fn load_raster(path: impl AsRef<Path>, opts: &LoadOptions) -> Result<RasterGrid> {
    let (layout, mut frames, dates) = read_frames(path.as_ref(), opts)?;
    let index = match (opts.time_index, frames.len()) {
        (Some(i), n) if i < n => i,
        (Some(i), n) => {
            return Err(RasterError::DimensionMismatch(format!(
                "time index {i} out of range for {n} steps"
            )))
        }
        (None, 1) => 0,
        (None, n) => {
            return Err(RasterError::DimensionMismatch(format!(
                "{n} time steps present, a time index is required"
            )))
        }
    };
    let data = frames.swap_remove(index);
    RasterGrid::new(layout.extent, data, opts.kind, dates.get(index).copied().flatten())
}

/// Load every time step of a data variable.
pub fn load_series(path: impl AsRef<Path>, opts: &LoadOptions) -> Result<Vec<RasterGrid>> {
    let (layout, frames, dates) = read_frames(path.as_ref(), opts)?;
    frames
        .into_iter()
        .zip(dates)
        .map(|(data, date)| RasterGrid::new(layout.extent, data, opts.kind, date))
        .collect()
}

/// Load a categorical land-cover map; values that are missing or not valid
/// class codes become no-data (0).
pub fn load_land_cover(path: impl AsRef<Path>, variable: &str) -> Result<CategoricalLandCover> {
    let opts = LoadOptions::new(variable, RasterKind::Lai);
    let (layout, mut frames, _) = read_frames(path.as_ref(), &opts)?;
    if frames.len() != 1 {
        return Err(RasterError::DimensionMismatch(
            "land cover must be a single map".into(),
        ));
    }
    let data = frames.swap_remove(0).mapv(|v| {
        if v.is_nan() || !(0.0..=255.0).contains(&v) {
            CategoricalLandCover::NO_DATA
        } else {
            let code = v as u8;
            if super::LandCoverClass::from_code(code).is_some() {
                code
            } else {
                CategoricalLandCover::NO_DATA
            }
        }
    });
    CategoricalLandCover::new(layout.extent, data)
}

fn axis_values(extent: &GeoExtent) -> (Vec<f64>, Vec<f64>) {
    let lat = (0..extent.rows()).map(|r| snap(extent.lat_center(r))).collect();
    let lon = (0..extent.cols()).map(|c| snap(extent.lon_center(c))).collect();
    (lat, lon)
}

fn write_frames(
    path: &Path,
    variable: &str,
    extent: &GeoExtent,
    frames: &[Vec<f64>],
    dates: Option<Vec<NaiveDate>>,
    units: Option<&str>,
) -> Result<()> {
    let (rows, cols) = extent.shape();
    let (lat, lon) = axis_values(extent);
    let mut ds = DataSet::new();
    ds.add_fixed_dim("lat", rows).map_err(nc_err)?;
    ds.add_fixed_dim("lon", cols).map_err(nc_err)?;
    ds.add_var_f64("lat", &["lat"]).map_err(nc_err)?;
    ds.add_var_attr_string("lat", "units", "degrees_north").map_err(nc_err)?;
    ds.add_var_f64("lon", &["lon"]).map_err(nc_err)?;
    ds.add_var_attr_string("lon", "units", "degrees_east").map_err(nc_err)?;
    let epoch = NaiveDate::from_ymd_opt(1970, 1, 1).expect("valid date");
    if let Some(dates) = &dates {
        ds.add_fixed_dim("time", dates.len()).map_err(nc_err)?;
        ds.add_var_f64("time", &["time"]).map_err(nc_err)?;
        ds.add_var_attr_string("time", "units", "days since 1970-01-01").map_err(nc_err)?;
        ds.add_var_f64(variable, &["time", "lat", "lon"]).map_err(nc_err)?;
    } else {
        ds.add_var_f64(variable, &["lat", "lon"]).map_err(nc_err)?;
    }
    ds.add_var_attr_f64(variable, "_FillValue", vec![NC_FILL_F64]).map_err(nc_err)?;
    if let Some(u) = units {
        ds.add_var_attr_string(variable, "units", u).map_err(nc_err)?;
    }

    let mut writer = FileWriter::open(path).map_err(nc_err)?;
    writer.set_def(&ds, Version::Offset64Bit, 0).map_err(nc_err)?;
    writer.write_var_f64("lat", &lat).map_err(nc_err)?;
    writer.write_var_f64("lon", &lon).map_err(nc_err)?;
    if let Some(dates) = &dates {
        let t: Vec<f64> = dates.iter().map(|d| (*d - epoch).num_days() as f64).collect();
        writer.write_var_f64("time", &t).map_err(nc_err)?;
    }
    let mut values = Vec::with_capacity(frames.len() * rows * cols);
    for f in frames {
        values.extend(f.iter().map(|v| if v.is_nan() { NC_FILL_F64 } else { *v }));
    }
    writer.write_var_f64(variable, &values).map_err(nc_err)?;
    writer.close().map_err(nc_err)?;
    Ok(())
}

fn kind_units(kind: RasterKind) -> &'static str {
    match kind {
        RasterKind::Emission => "mol cm-2 s-1",
        RasterKind::Lai => "m2 m-2",
        RasterKind::Percentage => "percent",
        RasterKind::ClimateClass => "1",
    }
}

/// Write grids sharing one extent. A time axis is written when every grid
/// carries a timestamp; otherwise exactly one grid is expected.
pub fn write_raster(path: impl AsRef<Path>, variable: &str, grids: &[RasterGrid]) -> Result<()> {
    let first = grids
        .first()
        .ok_or_else(|| RasterError::DimensionMismatch("nothing to write".into()))?;
    if grids.iter().any(|g| g.extent() != first.extent()) {
        return Err(RasterError::DimensionMismatch("grids have different extents".into()));
    }
    let dates: Option<Vec<NaiveDate>> = grids.iter().map(|g| g.timestamp()).collect();
    if dates.is_none() && grids.len() > 1 {
        return Err(RasterError::DimensionMismatch(
            "several grids without timestamps".into(),
        ));
    }
    let frames: Vec<Vec<f64>> = grids.iter().map(|g| g.data().iter().copied().collect()).collect();
    write_frames(
        path.as_ref(),
        variable,
        first.extent(),
        &frames,
        dates,
        Some(kind_units(first.kind())),
    )
}

pub fn write_land_cover(path: impl AsRef<Path>, variable: &str, lc: &CategoricalLandCover) -> Result<()> {
    let frame: Vec<f64> = lc
        .data()
        .iter()
        .map(|&c| if c == CategoricalLandCover::NO_DATA { MISSING } else { f64::from(c) })
        .collect();
    write_frames(path.as_ref(), variable, lc.extent(), &[frame], None, None)
}
