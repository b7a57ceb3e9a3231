//! Declarative run description, read from TOML.
//!
//! Every section has defaults, so a config file only lists what differs.
//! Relative input paths resolve against the data directory: `data_dir` in
//! the file, else the `ISOSR_DATA_DIR` environment variable, else the
//! directory holding the config file.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::folds::{FoldSpec, Region, DEFAULT_HOLDOUT, DEFAULT_RATIOS};
use crate::metrics::DomainSelection;
use crate::patchset::DriverKind;
use crate::raster::ClimateClass;
use crate::sr::TrainConfig;

pub const DATA_DIR_ENV: &str = "ISOSR_DATA_DIR";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config {path}: {source}")]
    Parse {
        path: PathBuf,
        source: Box<toml::de::Error>,
    },
    #[error("{0}")]
    Invalid(String),
}

/// Channel 0 (emission) followed by an ordered driver list.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ChannelSet(pub Vec<DriverKind>);

impl ChannelSet {
    pub fn drivers(&self) -> &[DriverKind] {
        &self.0
    }
}

impl FromStr for ChannelSet {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut parts = s.split(',').map(str::trim);
        match parts.next() {
            Some(p) if p.eq_ignore_ascii_case("isop") => {}
            _ => return Err(format!("channel list `{s}` must start with `isop`")),
        }
        let mut drivers = Vec::new();
        for p in parts {
            let d: DriverKind = p.parse()?;
            if drivers.contains(&d) {
                return Err(format!("driver `{d}` listed twice"));
            }
            drivers.push(d);
        }
        Ok(Self(drivers))
    }
}

impl fmt::Display for ChannelSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("isop")?;
        for d in &self.0 {
            write!(f, ",{d}")?;
        }
        Ok(())
    }
}

impl Serialize for ChannelSet {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ChannelSet {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// Input files and the variable read from each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputsConfig {
    /// A NetCDF file or a directory of them (read in name order).
    pub emission: Option<PathBuf>,
    pub emission_var: String,
    pub land_cover: Option<PathBuf>,
    pub land_cover_var: String,
    pub cl: Option<PathBuf>,
    pub cl_var: String,
    pub tc: Option<PathBuf>,
    pub tc_var: String,
    pub lai: Option<PathBuf>,
    pub lai_var: String,
    pub climate: Option<PathBuf>,
    pub climate_var: String,
}

impl Default for InputsConfig {
    fn default() -> Self {
        Self {
            emission: None,
            emission_var: "isoprene".into(),
            land_cover: None,
            land_cover_var: "lc".into(),
            cl: None,
            cl_var: "cl".into(),
            tc: None,
            tc_var: "tc".into(),
            lai: None,
            lai_var: "lai".into(),
            climate: None,
            climate_var: "climate".into(),
        }
    }
}

impl InputsConfig {
    pub fn driver(&self, kind: DriverKind) -> (Option<&PathBuf>, &str) {
        match kind {
            DriverKind::Cl => (self.cl.as_ref(), &self.cl_var),
            DriverKind::Tc => (self.tc.as_ref(), &self.tc_var),
            DriverKind::Lai => (self.lai.as_ref(), &self.lai_var),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PatchSettings {
    pub patch_deg: f64,
    pub stride_deg: f64,
    pub zero_thresh: f64,
    pub alpha: usize,
    pub n_quantiles: usize,
}

impl Default for PatchSettings {
    fn default() -> Self {
        Self {
            patch_deg: 3.0,
            stride_deg: 1.0,
            zero_thresh: 0.10,
            alpha: 2,
            n_quantiles: crate::transform::DEFAULT_QUANTILES,
        }
    }
}

/// The four standard folds, or an explicit list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FoldsConfig {
    pub med: Vec<ClimateClass>,
    pub region: Region,
    pub holdout: usize,
    pub ratios: [f64; 3],
    pub seed: u64,
    /// Replaces the standard folds when non-empty.
    pub custom: Vec<FoldSpec>,
}

impl Default for FoldsConfig {
    fn default() -> Self {
        Self {
            med: ClimateClass::MEDITERRANEAN.to_vec(),
            region: Region::default(),
            holdout: DEFAULT_HOLDOUT,
            ratios: DEFAULT_RATIOS,
            seed: 0,
            custom: Vec::new(),
        }
    }
}

impl FoldsConfig {
    pub fn specs(&self) -> Vec<FoldSpec> {
        if !self.custom.is_empty() {
            return self.custom.clone();
        }
        let mut specs = FoldSpec::standard(&self.med, self.region, self.holdout, self.seed);
        for s in &mut specs {
            s.split_ratios = self.ratios;
        }
        specs
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSettings {
    /// Feature maps of the hidden convolution layers.
    pub hidden: Vec<usize>,
    pub channels: ChannelSet,
}

impl Default for ModelSettings {
    fn default() -> Self {
        Self {
            hidden: vec![16, 16],
            channels: ChannelSet::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StatsSettings {
    pub driver: DriverKind,
    pub bins: usize,
}

impl Default for StatsSettings {
    fn default() -> Self {
        Self {
            driver: DriverKind::Tc,
            bins: crate::stats::DEFAULT_BINS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data_dir: Option<PathBuf>,
    pub inputs: InputsConfig,
    pub patches: PatchSettings,
    pub folds: FoldsConfig,
    pub model: ModelSettings,
    pub train: TrainConfig,
    pub stats: StatsSettings,
    pub domain: DomainSelection,
    /// Directory the config was read from; not part of the file.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data_dir: None,
            inputs: InputsConfig::default(),
            patches: PatchSettings::default(),
            folds: FoldsConfig::default(),
            model: ModelSettings::default(),
            train: TrainConfig::default(),
            stats: StatsSettings::default(),
            domain: DomainSelection::Both,
            base_dir: None,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.into(),
            source,
        })?;
        let mut cfg = Self::from_toml(&text).map_err(|source| ConfigError::Parse {
            path: path.into(),
            source: Box::new(source),
        })?;
        cfg.base_dir = path.parent().map(Path::to_path_buf);
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// The directory relative inputs resolve against, if any.
    pub fn data_dir(&self) -> Option<PathBuf> {
        let base = self.base_dir.clone();
        match &self.data_dir {
            Some(d) if d.is_relative() => Some(base.unwrap_or_default().join(d)),
            Some(d) => Some(d.clone()),
            None => std::env::var_os(DATA_DIR_ENV).map(PathBuf::from).or(base),
        }
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        match self.data_dir() {
            Some(d) if path.is_relative() => d.join(path),
            _ => path.to_path_buf(),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        let p = &self.patches;
        if !(p.patch_deg > 0.0 && p.stride_deg > 0.0) {
            return invalid("patch and stride sizes must be positive".into());
        }
        if !(0.0..=1.0).contains(&p.zero_thresh) {
            return invalid(format!("zero_thresh {} outside [0, 1]", p.zero_thresh));
        }
        if p.alpha < 2 {
            return invalid("alpha must be at least 2".into());
        }
        if p.n_quantiles < 2 {
            return invalid("n_quantiles must be at least 2".into());
        }
        if self.model.hidden.iter().any(|&h| h == 0) {
            return invalid("hidden layers need at least one feature map".into());
        }
        if self.stats.bins < 2 {
            return invalid("stats.bins must be at least 2".into());
        }
        self.train.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        for s in self.folds.specs() {
            s.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn channel_sets() {
        for s in ["isop", "isop,cl", "isop,tc", "isop,cl,tc", "isop,lai"] {
            let c: ChannelSet = s.parse().unwrap();
            assert_eq!(c.to_string(), s);
        }
        assert_eq!("isop, TC".parse::<ChannelSet>().unwrap().0, vec![DriverKind::Tc]);
        assert!("cl".parse::<ChannelSet>().is_err());
        assert!("isop,cl,cl".parse::<ChannelSet>().is_err());
        assert!("isop,xx".parse::<ChannelSet>().is_err());
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let cfg = RunConfig::from_toml(
            r#"
            domain = "t"
            [model]
            channels = "isop,cl"
            [train]
            lr = 0.001
            [folds]
            holdout = 50
            region = { lon_min = 12.0, lon_max = 14.0, lat_min = 44.0, lat_max = 50.0 }
            "#,
        )
        .unwrap();
        assert_eq!(cfg.domain, DomainSelection::T);
        assert_eq!(cfg.model.channels.0, vec![DriverKind::Cl]);
        assert_eq!(cfg.train.lr, 1e-3);
        assert_eq!(cfg.train.max_epochs, 500);
        assert_eq!(cfg.patches, PatchSettings::default());
        let specs = cfg.folds.specs();
        assert_eq!(specs.len(), 4);
        assert!(specs.iter().all(|s| s.holdout_sample_size == 50));
        cfg.validate().unwrap();

        let back = RunConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_keys_and_bad_values_rejected() {
        assert!(RunConfig::from_toml("[train]\nlearning_rate = 1.0").is_err());
        assert!(RunConfig::from_toml("bogus = 1").is_err());
        let mut cfg = RunConfig::default();
        cfg.patches.zero_thresh = 1.5;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.train.lr_min = 1.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn relative_inputs_use_the_data_dir() {
        let cfg = RunConfig {
            data_dir: Some("/data".into()),
            ..RunConfig::default()
        };
        assert_eq!(cfg.resolve(Path::new("cl.nc")), PathBuf::from("/data/cl.nc"));
        assert_eq!(cfg.resolve(Path::new("/abs/cl.nc")), PathBuf::from("/abs/cl.nc"));
        let cfg = RunConfig {
            data_dir: Some("inputs".into()),
            base_dir: Some("/runs/a".into()),
            ..RunConfig::default()
        };
        assert_eq!(cfg.resolve(Path::new("tc.nc")), PathBuf::from("/runs/a/inputs/tc.nc"));
    }
}
