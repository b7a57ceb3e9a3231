//! Block aggregation, cubic-convolution resampling and grid alignment.
//!
//! Bicubic sampling uses the Keys cubic convolution kernel with `a = −0.5`
//! over a 4×4 neighbourhood. Samples beyond the grid edge are taken from the
//! mirror image of the grid (half-sample symmetric: `… 1 0 | 0 1 … n−1 | n−1 n−2 …`).

use ndarray::{Array2, ArrayView2};

use super::{
    is_missing, CategoricalLandCover, GeoExtent, LandCoverClass, RasterError, RasterGrid,
    RasterKind, Result, GEOMETRY_TOLERANCE, MISSING,
};

const KEYS_A: f64 = -0.5;

/// Cubic convolution kernel, `a = −0.5` (Catmull–Rom).
#[inline]
pub fn cubic_weight(t: f64) -> f64 {
    let t = t.abs();
    if t <= 1.0 {
        ((KEYS_A + 2.0) * t - (KEYS_A + 3.0)) * t * t + 1.0
    } else if t < 2.0 {
        ((KEYS_A * t - 5.0 * KEYS_A) * t + 8.0 * KEYS_A) * t - 4.0 * KEYS_A
    } else {
        0.0
    }
}

/// Half-sample symmetric index extension into `0..n`.
#[inline]
pub(crate) fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let m = i.rem_euclid(period);
    (if m >= n { period - 1 - m } else { m }) as usize
}

#[inline]
fn kernel_weights(frac: f64) -> [f64; 4] {
    [
        cubic_weight(frac + 1.0),
        cubic_weight(frac),
        cubic_weight(1.0 - frac),
        cubic_weight(2.0 - frac),
    ]
}

/// Bicubic value at fractional cell-centre coordinates `(row, col)`.
///
/// A missing neighbour is replaced by the nearest non-missing value in its
/// kernel row; a kernel row with nothing valid borrows the nearest valid row.
/// If all sixteen neighbours are missing the result is [`MISSING`].
pub fn bicubic_at(data: ArrayView2<'_, f64>, row: f64, col: f64) -> f64 {
    let (rows, cols) = data.dim();
    let r0 = row.floor();
    let c0 = col.floor();
    let wy = kernel_weights(row - r0);
    let wx = kernel_weights(col - c0);
    let (r0, c0) = (r0 as isize, c0 as isize);

    let mut patch = [[0.0; 4]; 4];
    let mut any_missing = false;
    for (j, prow) in patch.iter_mut().enumerate() {
        let r = reflect(r0 - 1 + j as isize, rows);
        for (i, v) in prow.iter_mut().enumerate() {
            *v = data[[r, reflect(c0 - 1 + i as isize, cols)]];
            any_missing |= is_missing(*v);
        }
    }
    if any_missing && !fill_missing(&mut patch) {
        return MISSING;
    }

    let mut acc = 0.0;
    for (prow, wyj) in patch.iter().zip(wy) {
        let mut line = 0.0;
        for (v, wxi) in prow.iter().zip(wx) {
            line += wxi * v;
        }
        acc += wyj * line;
    }
    acc
}

/// Returns false when every cell is missing.
fn fill_missing(patch: &mut [[f64; 4]; 4]) -> bool {
    let mut row_valid = [false; 4];
    for (j, prow) in patch.iter_mut().enumerate() {
        let src = *prow;
        let valid: Vec<usize> = (0..4).filter(|&i| !is_missing(src[i])).collect();
        if valid.is_empty() {
            continue;
        }
        row_valid[j] = true;
        for (i, v) in prow.iter_mut().enumerate() {
            if is_missing(*v) {
                let nearest = valid
                    .iter()
                    .copied()
                    .min_by_key(|&k| (k as isize - i as isize).unsigned_abs())
                    .expect("non-empty");
                *v = src[nearest];
            }
        }
    }
    let valid_rows: Vec<usize> = (0..4).filter(|&j| row_valid[j]).collect();
    if valid_rows.is_empty() {
        return false;
    }
    for j in 0..4 {
        if !row_valid[j] {
            let nearest = valid_rows
                .iter()
                .copied()
                .min_by_key(|&k| (k as isize - j as isize).unsigned_abs())
                .expect("non-empty");
            patch[j] = patch[nearest];
        }
    }
    true
}

/// Bicubic resize of an array whose input and output cover the same extent.
pub fn rescale_bicubic(src: ArrayView2<'_, f64>, out_rows: usize, out_cols: usize) -> Array2<f64> {
    let (rows, cols) = src.dim();
    let sy = rows as f64 / out_rows as f64;
    let sx = cols as f64 / out_cols as f64;
    Array2::from_shape_fn((out_rows, out_cols), |(r, c)| {
        bicubic_at(src, (r as f64 + 0.5) * sy - 0.5, (c as f64 + 0.5) * sx - 0.5)
    })
}

fn clamp_to_kind(kind: RasterKind, v: f64) -> f64 {
    if is_missing(v) {
        return v;
    }
    match kind {
        RasterKind::Emission | RasterKind::Lai => v.max(0.0),
        RasterKind::Percentage => v.clamp(0.0, 100.0),
        RasterKind::ClimateClass => v,
    }
}

fn nearest_at(src: &RasterGrid, lon: f64, lat: f64) -> f64 {
    let e = src.extent();
    if !e.contains_point(lon, lat) {
        return MISSING;
    }
    let (r, c) = e.fractional_index(lon, lat);
    let r = (r + 0.5).floor().clamp(0.0, (src.rows() - 1) as f64) as usize;
    let c = (c + 0.5).floor().clamp(0.0, (src.cols() - 1) as f64) as usize;
    src.data()[[r, c]]
}

/// Resample `src` onto the cell centres of `target` by cubic convolution.
///
/// Results are clamped to the physical range of the grid kind (non-negative
/// emission and LAI, 0–100 for percentages). Class grids are resampled by
/// nearest neighbour, since interpolated codes are meaningless.
pub fn resample_bicubic(src: &RasterGrid, target: &GeoExtent) -> Result<RasterGrid> {
    target.validate()?;
    if src.rows() < 4 || src.cols() < 4 {
        return Err(RasterError::TooSmall {
            rows: src.rows(),
            cols: src.cols(),
        });
    }
    if !src.extent().contains(target) {
        return Err(RasterError::OutsideSource);
    }
    let kind = src.kind();
    let data = Array2::from_shape_fn(target.shape(), |(r, c)| {
        let lon = target.lon_center(c);
        let lat = target.lat_center(r);
        if kind == RasterKind::ClimateClass {
            nearest_at(src, lon, lat)
        } else {
            let (fr, fc) = src.extent().fractional_index(lon, lat);
            clamp_to_kind(kind, bicubic_at(src.data().view(), fr, fc))
        }
    });
    RasterGrid::new(*target, data, kind, src.timestamp())
}

/// Reduce resolution by an integer factor, sampling the coarse cell centres
/// with [`resample_bicubic`].
pub fn downsample_bicubic(src: &RasterGrid, factor: usize) -> Result<RasterGrid> {
    if factor == 0 || src.rows() % factor != 0 || src.cols() % factor != 0 {
        return Err(RasterError::NotDivisible {
            rows: src.rows(),
            cols: src.cols(),
            factor,
        });
    }
    let target = src
        .extent()
        .with_cell_size(src.extent().cell_size * factor as f64)?;
    resample_bicubic(src, &target)
}

/// Input to [`coarsen`].
#[derive(Debug, Clone, Copy)]
pub enum CoarsenSource<'a> {
    Grid(&'a RasterGrid),
    LandCover(&'a CategoricalLandCover),
}

impl CoarsenSource<'_> {
    fn extent(&self) -> &GeoExtent {
        match self {
            Self::Grid(g) => g.extent(),
            Self::LandCover(lc) => lc.extent(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoarsenMode {
    /// Arithmetic mean of the non-missing cells of each block.
    BlockMean,
    /// Percentage of the non-missing cells of each block equal to the class.
    ClassFraction(LandCoverClass),
}

fn integer_ratio(target: f64, source: f64) -> Result<usize> {
    let ratio = target / source;
    let rounded = ratio.round();
    if rounded < 1.0 || (ratio - rounded).abs() > GEOMETRY_TOLERANCE * ratio.max(1.0) {
        return Err(RasterError::NonIntegerRatio {
            target,
            source_cell: source,
        });
    }
    Ok(rounded as usize)
}

/// Aggregate a fine grid into blocks of `target_cell_size`.
pub fn coarsen(src: CoarsenSource<'_>, target_cell_size: f64, mode: CoarsenMode) -> Result<RasterGrid> {
    let extent = *src.extent();
    let factor = integer_ratio(target_cell_size, extent.cell_size)?;
    let target = extent
        .with_cell_size(target_cell_size)
        .map_err(|_| RasterError::NonIntegerRatio {
            target: target_cell_size,
            source_cell: extent.cell_size,
        })?;
    let (rows, cols) = target.shape();
    if rows == 0 || cols == 0 {
        return Err(RasterError::EmptyOverlap);
    }

    match (src, mode) {
        (CoarsenSource::Grid(grid), CoarsenMode::BlockMean) => {
            if grid.kind() == RasterKind::ClimateClass {
                return Err(RasterError::DimensionMismatch(
                    "block mean of categorical climate codes".into(),
                ));
            }
            let fine = grid.data();
            let data = Array2::from_shape_fn((rows, cols), |(r, c)| {
                let block = fine.slice(ndarray::s![
                    r * factor..(r + 1) * factor,
                    c * factor..(c + 1) * factor
                ]);
                let (sum, n) = block
                    .iter()
                    .filter(|v| !is_missing(**v))
                    .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
                if n == 0 {
                    MISSING
                } else {
                    sum / n as f64
                }
            });
            RasterGrid::new(target, data, grid.kind(), grid.timestamp())
        }
        (CoarsenSource::LandCover(lc), CoarsenMode::ClassFraction(class)) => {
            let fine = lc.data();
            let code = class.code();
            let data = Array2::from_shape_fn((rows, cols), |(r, c)| {
                let block = fine.slice(ndarray::s![
                    r * factor..(r + 1) * factor,
                    c * factor..(c + 1) * factor
                ]);
                let (hits, valid) = block
                    .iter()
                    .filter(|&&v| v != CategoricalLandCover::NO_DATA)
                    .fold((0usize, 0usize), |(h, n), &v| (h + usize::from(v == code), n + 1));
                if valid == 0 {
                    MISSING
                } else {
                    100.0 * hits as f64 / valid as f64
                }
            });
            RasterGrid::new(target, data, RasterKind::Percentage, None)
        }
        (CoarsenSource::Grid(_), CoarsenMode::ClassFraction(_)) => Err(RasterError::DimensionMismatch(
            "class fractions need a categorical land-cover source".into(),
        )),
        (CoarsenSource::LandCover(_), CoarsenMode::BlockMean) => Err(RasterError::DimensionMismatch(
            "block mean of categorical land-cover codes".into(),
        )),
    }
}

/// Percentage of `class` in each `target_cell_size` block of `lc`.
pub fn class_fraction(
    lc: &CategoricalLandCover,
    target_cell_size: f64,
    class: LandCoverClass,
) -> Result<RasterGrid> {
    coarsen(
        CoarsenSource::LandCover(lc),
        target_cell_size,
        CoarsenMode::ClassFraction(class),
    )
}

fn registration_matches(src: &GeoExtent, reference: &GeoExtent) -> bool {
    if (src.cell_size - reference.cell_size).abs() > GEOMETRY_TOLERANCE {
        return false;
    }
    let off = (reference.lon_min - src.lon_min) / src.cell_size;
    let off_lat = (src.lat_max - reference.lat_max) / src.cell_size;
    (off - off.round()).abs() * src.cell_size < GEOMETRY_TOLERANCE
        && (off_lat - off_lat.round()).abs() * src.cell_size < GEOMETRY_TOLERANCE
}

/// Put `src` on the grid of `reference`.
///
/// A grid already sharing the reference registration is cropped (cells beyond
/// `src` become missing); otherwise values are interpolated bicubically, or by
/// nearest neighbour for class grids. Reference cells whose centre lies
/// outside `src` are missing.
pub fn align_to(src: &RasterGrid, reference: &GeoExtent) -> Result<RasterGrid> {
    reference.validate()?;
    let se = *src.extent();
    if !se.overlaps(reference) {
        return Err(RasterError::EmptyOverlap);
    }
    let kind = src.kind();
    let shape = reference.shape();

    let data = if registration_matches(&se, reference) {
        let dr = ((se.lat_max - reference.lat_max) / se.cell_size).round() as isize;
        let dc = ((reference.lon_min - se.lon_min) / se.cell_size).round() as isize;
        Array2::from_shape_fn(shape, |(r, c)| {
            let sr = r as isize + dr;
            let sc = c as isize + dc;
            if sr < 0 || sc < 0 || sr >= src.rows() as isize || sc >= src.cols() as isize {
                MISSING
            } else {
                src.data()[[sr as usize, sc as usize]]
            }
        })
    } else if kind == RasterKind::ClimateClass {
        Array2::from_shape_fn(shape, |(r, c)| {
            nearest_at(src, reference.lon_center(c), reference.lat_center(r))
        })
    } else {
        if src.rows() < 4 || src.cols() < 4 {
            return Err(RasterError::TooSmall {
                rows: src.rows(),
                cols: src.cols(),
            });
        }
        Array2::from_shape_fn(shape, |(r, c)| {
            let lon = reference.lon_center(c);
            let lat = reference.lat_center(r);
            if !se.contains_point(lon, lat) {
                return MISSING;
            }
            let (fr, fc) = se.fractional_index(lon, lat);
            clamp_to_kind(kind, bicubic_at(src.data().view(), fr, fc))
        })
    };
    RasterGrid::new(*reference, data, kind, src.timestamp())
}
