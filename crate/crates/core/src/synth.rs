//! Small synthetic inputs for smoke runs and the guide.
//!
//! A 6°×6° area at 0.1° with a monthly emission series, a 0.05° categorical
//! land-cover map, a LAI map and four climate quadrants (Cfb, Dfb, Dfc and
//! a Mediterranean class), written as NetCDF with a matching `run.toml`.
//! Emission grows with tree cover, follows a summer peak and is zero over a
//! small sea block in the north-west corner.

use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::folds::Region;
use crate::raster::{
    class_fraction, netcdf, CategoricalLandCover, ClimateClass, GeoExtent, LandCoverClass, RasterError, RasterGrid,
    RasterKind,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToySpec {
    pub lon_min: f64,
    pub lat_min: f64,
    /// Side of the square area in degrees.
    pub size_deg: f64,
    pub n_dates: usize,
    pub year: i32,
    pub seed: u64,
}

impl Default for ToySpec {
    fn default() -> Self {
        Self {
            lon_min: 10.0,
            lat_min: 44.0,
            size_deg: 6.0,
            n_dates: 12,
            year: 2019,
            seed: 0,
        }
    }
}

/// Files written by [`write_toy`], relative to its output directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToyFiles {
    pub emission: PathBuf,
    pub land_cover: PathBuf,
    pub lai: PathBuf,
    pub climate: PathBuf,
    pub config: PathBuf,
}

pub const CELL: f64 = 0.1;
pub const LC_CELL: f64 = 0.05;

/// Sum of a few random plane waves, per cell.
fn waves(rows: usize, cols: usize, rng: &mut ChaCha8Rng, terms: usize, amp: f64, freq: (f64, f64)) -> Array2<f64> {
    let w: Vec<[f64; 4]> = (0..terms)
        .map(|_| {
            let f = rng.random_range(freq.0..freq.1);
            let theta = rng.random_range(0.0..std::f64::consts::TAU);
            [
                rng.random_range(0.5 * amp..amp),
                f * theta.cos(),
                f * theta.sin(),
                rng.random_range(0.0..std::f64::consts::TAU),
            ]
        })
        .collect();
    Array2::from_shape_fn((rows, cols), |(i, j)| {
        w.iter().map(|[a, ky, kx, p]| a * (ky * i as f64 + kx * j as f64 + p).sin()).sum()
    })
}

pub struct ToyData {
    pub emission: Vec<RasterGrid>,
    pub land_cover: CategoricalLandCover,
    pub lai: RasterGrid,
    pub climate: RasterGrid,
}

impl ToySpec {
    pub fn extent(&self) -> GeoExtent {
        GeoExtent::new(
            self.lon_min,
            self.lon_min + self.size_deg,
            self.lat_min,
            self.lat_min + self.size_deg,
            CELL,
        )
        .expect("toy extent is valid")
    }

    /// A band through the middle of the area that crosses all four quadrants.
    pub fn holdout_region(&self) -> Region {
        let mid = self.lon_min + self.size_deg / 2.0;
        Region {
            lon_min: mid - 1.0,
            lon_max: mid + 1.0,
            lat_min: self.lat_min,
            lat_max: self.lat_min + self.size_deg,
        }
    }

    fn is_sea(&self, lon: f64, lat: f64) -> bool {
        lon < self.lon_min + 1.2 && lat > self.lat_min + self.size_deg - 1.0
    }

    pub fn generate(&self) -> Result<ToyData, RasterError> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let extent = self.extent();
        let lc_extent = extent.with_cell_size(LC_CELL)?;
        let (lr, lc) = lc_extent.shape();

        // wavelengths between 0.3° and 1.5°
        let freq = (
            std::f64::consts::TAU * LC_CELL / 1.5,
            std::f64::consts::TAU * LC_CELL / 0.3,
        );
        let trees = waves(lr, lc, &mut rng, 4, 0.5, freq);
        let crops = waves(lr, lc, &mut rng, 4, 0.5, freq);
        let codes = Array2::from_shape_fn((lr, lc), |(i, j)| {
            let class = if self.is_sea(lc_extent.lon_center(j), lc_extent.lat_center(i)) {
                LandCoverClass::PermanentWater
            } else if trees[[i, j]] > 0.3 {
                LandCoverClass::TreeCover
            } else if crops[[i, j]] > 0.0 {
                LandCoverClass::Cropland
            } else if trees[[i, j]] < -1.0 {
                LandCoverClass::BuiltUp
            } else {
                LandCoverClass::Grassland
            };
            class.code()
        });
        let land_cover = CategoricalLandCover::new(lc_extent, codes)?;

        let tc = class_fraction(&land_cover, CELL, LandCoverClass::TreeCover)?;
        let grass = class_fraction(&land_cover, CELL, LandCoverClass::Grassland)?;
        let (rows, cols) = extent.shape();
        let sea = Array2::from_shape_fn((rows, cols), |(i, j)| self.is_sea(extent.lon_center(j), extent.lat_center(i)));

        let lai = RasterGrid::new(
            extent,
            Array2::from_shape_fn((rows, cols), |(i, j)| {
                if sea[[i, j]] {
                    0.0
                } else {
                    0.5 + 4.5 * tc.data()[[i, j]] / 100.0 + 1.5 * grass.data()[[i, j]] / 100.0
                }
            }),
            RasterKind::Lai,
            None,
        )?;

        let (mid_r, mid_c) = (rows / 2, cols / 2);
        let climate = RasterGrid::new(
            extent,
            Array2::from_shape_fn((rows, cols), |(i, j)| {
                let class = match (i < mid_r, j < mid_c) {
                    (true, true) => ClimateClass::Cfb,
                    (true, false) => ClimateClass::Dfb,
                    (false, true) => ClimateClass::Csa,
                    (false, false) => ClimateClass::Dfc,
                };
                f64::from(class.code())
            }),
            RasterKind::ClimateClass,
            None,
        )?;

        let mut emission = Vec::with_capacity(self.n_dates);
        for k in 0..self.n_dates {
            let month = (k % 12) as f64 + 1.0;
            let season = 0.15 + 0.85 * (-((month - 7.0) / 2.0).powi(2)).exp();
            let noise = waves(rows, cols, &mut rng, 3, 0.3, (0.2, 0.8));
            let data = Array2::from_shape_fn((rows, cols), |(i, j)| {
                if sea[[i, j]] {
                    return 0.0;
                }
                let cover = 0.05 + tc.data()[[i, j]] / 100.0 + 0.2 * grass.data()[[i, j]] / 100.0;
                season * cover * noise[[i, j]].exp()
            });
            let date = NaiveDate::from_ymd_opt(self.year + (k / 12) as i32, (k % 12) as u32 + 1, 15)
                .expect("valid date");
            emission.push(RasterGrid::new(extent, data, RasterKind::Emission, Some(date))?);
        }
        Ok(ToyData {
            emission,
            land_cover,
            lai,
            climate,
        })
    }

    /// Run settings sized for the toy area.
    pub fn run_config(&self) -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.inputs.emission = Some("emission.nc".into());
        cfg.inputs.land_cover = Some("land_cover.nc".into());
        cfg.inputs.climate = Some("climate.nc".into());
        cfg.inputs.lai = Some("lai.nc".into());
        cfg.inputs.cl = Some("prep/cl.nc".into());
        cfg.inputs.tc = Some("prep/tc.nc".into());
        cfg.folds.region = self.holdout_region();
        cfg.folds.holdout = 24;
        cfg.folds.seed = self.seed;
        cfg.model.hidden = vec![8, 8];
        cfg.train.lr = 1e-3;
        cfg.train.max_epochs = 15;
        cfg.train.batch_size = 16;
        cfg.train.plateau_patience = 4;
        cfg.train.early_stop_patience = 8;
        cfg.train.rng_seed = self.seed;
        cfg
    }
}

/// Generate the toy inputs into `dir`.
pub fn write_toy(dir: &Path, spec: &ToySpec) -> Result<ToyFiles, RasterError> {
    std::fs::create_dir_all(dir)?;
    let data = spec.generate()?;
    let files = ToyFiles {
        emission: "emission.nc".into(),
        land_cover: "land_cover.nc".into(),
        lai: "lai.nc".into(),
        climate: "climate.nc".into(),
        config: "run.toml".into(),
    };
    netcdf::write_raster(dir.join(&files.emission), "isoprene", &data.emission)?;
    netcdf::write_land_cover(dir.join(&files.land_cover), "lc", &data.land_cover)?;
    netcdf::write_raster(dir.join(&files.lai), "lai", std::slice::from_ref(&data.lai))?;
    netcdf::write_raster(dir.join(&files.climate), "climate", std::slice::from_ref(&data.climate))?;
    std::fs::write(dir.join(&files.config), spec.run_config().to_toml())?;
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_data_is_consistent() {
        let spec = ToySpec::default();
        let d = spec.generate().unwrap();
        assert_eq!(d.emission.len(), 12);
        assert_eq!(d.emission[0].data().dim(), (60, 60));
        assert_eq!(d.land_cover.data().dim(), (120, 120));
        // the north-west sea block is exactly zero
        assert_eq!(d.emission[6].data()[[0, 0]], 0.0);
        assert!(d.emission[6].data()[[30, 30]] > 0.0);
        // summer is stronger than winter
        let total = |g: &RasterGrid| g.data().sum();
        assert!(total(&d.emission[6]) > 2.0 * total(&d.emission[0]));
        let codes: std::collections::BTreeSet<u8> = d.land_cover.data().iter().copied().collect();
        for c in [LandCoverClass::TreeCover, LandCoverClass::Cropland, LandCoverClass::PermanentWater] {
            assert!(codes.contains(&c.code()), "{c:?} missing");
        }
        assert_eq!(spec.generate().unwrap().emission, d.emission);
    }

    #[test]
    fn files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let spec = ToySpec {
            n_dates: 2,
            ..ToySpec::default()
        };
        let files = write_toy(dir.path(), &spec).unwrap();
        let opts = netcdf::LoadOptions::new("isoprene", RasterKind::Emission);
        let series = netcdf::load_series(dir.path().join(&files.emission), &opts).unwrap();
        assert_eq!(series, spec.generate().unwrap().emission);
        let cfg = RunConfig::load(dir.path().join(&files.config)).unwrap();
        assert_eq!(cfg.resolve(Path::new("lai.nc")), dir.path().join("lai.nc"));
        cfg.validate().unwrap();
    }
}
