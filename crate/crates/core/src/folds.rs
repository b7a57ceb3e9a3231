//! Climate-stratified dataset folds with standard, unseen-spatial and
//! unseen-climate test partitions.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::patchset::PatchIndexEntry;
use crate::raster::{ClimateClass, GeoExtent};

#[derive(Debug, Error)]
pub enum FoldError {
    #[error("invalid fold spec: {0}")]
    Spec(String),
    #[error("fold `{fold}`: no eligible patches for {pool}")]
    EmptyPool { fold: String, pool: &'static str },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = FoldError> = std::result::Result<T, E>;

pub const DEFAULT_HOLDOUT: usize = 10_000;
pub const DEFAULT_RATIOS: [f64; 3] = [0.75, 0.05, 0.20];

/// Bounding box used for the spatial hold-out. A patch belongs to it when
/// its centre does (west/south edges inclusive).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub lon_min: f64,
    pub lon_max: f64,
    pub lat_min: f64,
    pub lat_max: f64,
}

impl Region {
    pub fn contains(&self, lon: f64, lat: f64) -> bool {
        lon >= self.lon_min && lon < self.lon_max && lat >= self.lat_min && lat < self.lat_max
    }

    pub fn contains_patch(&self, entry: &PatchIndexEntry) -> bool {
        let (lon, lat) = entry.center();
        self.contains(lon, lat)
    }

    pub fn inside(&self, area: &GeoExtent) -> bool {
        self.lon_min >= area.lon_min
            && self.lon_max <= area.lon_max
            && self.lat_min >= area.lat_min
            && self.lat_max <= area.lat_max
    }
}

impl Default for Region {
    /// A central-European box; any box inside the study area may be used.
    fn default() -> Self {
        Self {
            lon_min: 15.0,
            lon_max: 25.0,
            lat_min: 45.0,
            lat_max: 52.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldSpec {
    pub name: String,
    pub held_out_classes: Vec<ClimateClass>,
    pub split_ratios: [f64; 3],
    pub spatial_holdout_region: Region,
    pub holdout_sample_size: usize,
    pub rng_seed: u64,
}

impl FoldSpec {
    pub fn new(name: &str, held_out_classes: Vec<ClimateClass>) -> Self {
        Self {
            name: name.to_string(),
            held_out_classes,
            split_ratios: DEFAULT_RATIOS,
            spatial_holdout_region: Region::default(),
            holdout_sample_size: DEFAULT_HOLDOUT,
            rng_seed: 0,
        }
    }

    /// The four standard folds: Cfb, Dfb, Dfc and the Mediterranean composite.
    pub fn standard(med: &[ClimateClass], region: Region, holdout: usize, seed: u64) -> Vec<FoldSpec> {
        let mut folds = vec![
            Self::new("Cfb", vec![ClimateClass::Cfb]),
            Self::new("Dfb", vec![ClimateClass::Dfb]),
            Self::new("Dfc", vec![ClimateClass::Dfc]),
            Self::new("Med", med.to_vec()),
        ];
        for f in &mut folds {
            f.spatial_holdout_region = region;
            f.holdout_sample_size = holdout;
            f.rng_seed = seed;
        }
        folds
    }

    pub fn validate(&self) -> Result<()> {
        if self.held_out_classes.is_empty() {
            return Err(FoldError::Spec(format!("fold `{}` holds out no class", self.name)));
        }
        let sum: f64 = self.split_ratios.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || self.split_ratios.iter().any(|r| *r < 0.0) {
            return Err(FoldError::Spec(format!("split ratios {:?} do not sum to 1", self.split_ratios)));
        }
        let r = &self.spatial_holdout_region;
        if !(r.lon_min < r.lon_max && r.lat_min < r.lat_max) {
            return Err(FoldError::Spec("empty spatial hold-out region".into()));
        }
        Ok(())
    }

    fn holds_out(&self, code: Option<u8>) -> bool {
        code.is_some_and(|c| self.held_out_classes.iter().any(|h| h.code() == c))
    }
}

/// Patch ids per partition. Every list is sorted ascending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldManifest {
    pub spec: FoldSpec,
    pub train: Vec<u64>,
    pub val: Vec<u64>,
    pub test_standard: Vec<u64>,
    pub test_unseen_spatial: Vec<u64>,
    pub test_unseen_climate: Vec<u64>,
    /// Hold-out candidates that were not sampled; used by no partition.
    pub unsampled: Vec<u64>,
}

impl FoldManifest {
    pub fn partition(&self, name: &str) -> Option<&[u64]> {
        Some(match name {
            "train" => &self.train,
            "val" => &self.val,
            "test_standard" | "test" => &self.test_standard,
            "test_unseen_spatial" => &self.test_unseen_spatial,
            "test_unseen_climate" => &self.test_unseen_climate,
            _ => return None,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

fn sorted(mut v: Vec<u64>) -> Vec<u64> {
    v.sort_unstable();
    v
}

/// Shuffle `pool` and keep up to `n`; returns (sampled, rest).
fn sample(pool: &mut [u64], n: usize, rng: &mut ChaCha8Rng) -> (Vec<u64>, Vec<u64>) {
    pool.shuffle(rng);
    let k = n.min(pool.len());
    (pool[..k].to_vec(), pool[k..].to_vec())
}

pub fn build_fold(index: &[PatchIndexEntry], spec: &FoldSpec) -> Result<FoldManifest> {
    spec.validate()?;
    let empty = |pool| FoldError::EmptyPool {
        fold: spec.name.clone(),
        pool,
    };
    let mut climate_pool = Vec::new();
    let mut spatial_pool = Vec::new();
    let mut rest = Vec::new();
    for e in index {
        if spec.holds_out(e.climate_class) {
            climate_pool.push(e.patch_id);
        } else if spec.spatial_holdout_region.contains_patch(e) {
            spatial_pool.push(e.patch_id);
        } else {
            rest.push(e.patch_id);
        }
    }
    if rest.is_empty() {
        return Err(empty("train/val/test"));
    }
    if climate_pool.is_empty() {
        return Err(empty("test_unseen_climate"));
    }
    if spatial_pool.is_empty() {
        return Err(empty("test_unseen_spatial"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let (unseen_climate, mut unsampled) = sample(&mut climate_pool, spec.holdout_sample_size, &mut rng);
    let (unseen_spatial, spatial_rest) = sample(&mut spatial_pool, spec.holdout_sample_size, &mut rng);
    unsampled.extend(spatial_rest);

    rest.shuffle(&mut rng);
    let n = rest.len() as f64;
    let n_train = (spec.split_ratios[0] * n).round() as usize;
    let n_val = ((spec.split_ratios[1] * n).round() as usize).min(rest.len() - n_train);
    let test = rest.split_off(n_train + n_val);
    let val = rest.split_off(n_train);

    Ok(FoldManifest {
        spec: spec.clone(),
        train: sorted(rest),
        val: sorted(val),
        test_standard: sorted(test),
        test_unseen_spatial: sorted(unseen_spatial),
        test_unseen_climate: sorted(unseen_climate),
        unsampled: sorted(unsampled),
    })
}

/// Distinct climate codes present in an index.
pub fn classes_present(index: &[PatchIndexEntry]) -> BTreeSet<u8> {
    index.iter().filter_map(|e| e.climate_class).collect()
}
