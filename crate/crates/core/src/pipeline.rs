//! The end-to-end steps behind each CLI subcommand.
//!
//! Every step reads its inputs from disk and writes its artifacts, so steps
//! can run as separate processes. Errors fall into three classes (see
//! [`PipelineError::exit_code`]).

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ChannelSet, ConfigError, RunConfig};
use crate::folds::{build_fold, FoldError, FoldManifest};
use crate::metrics::{self, Domain, DomainSelection, MetricError, MetricsReport};
use crate::patchset::{
    build_store, extract_patches, fit_transform_on_windows, DriverKind, ExtractSummary, Patch, PatchConfig, PatchError,
    PatchIndexEntry, PatchStore,
};
use crate::raster::{align_to, class_fraction, netcdf, LandCoverClass, RasterError, RasterGrid, RasterKind};
use crate::sr::{self, ConvModel, SrBackend, SrError, SrInput, Topology, TrainHistory, TrainSample};
use crate::stats::{self, StatsError, StatsReport};
use crate::transform::{QuantileFitter, TransformError, TransformModel, DEFAULT_RESERVOIR};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("missing input {what}: {}", path.display())]
    MissingInput { what: String, path: PathBuf },
    #[error("data error: {0}")]
    Data(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl PipelineError {
    /// 1 for configuration errors, 2 for data errors, 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 1,
            Self::MissingInput { .. } | Self::Data(_) => 2,
            Self::Numerical(_) => 3,
        }
    }
}

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;

fn data(e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Data(e.to_string())
}

impl From<ConfigError> for PipelineError {
    fn from(e: ConfigError) -> Self {
        Self::Config(e.to_string())
    }
}

impl From<RasterError> for PipelineError {
    fn from(e: RasterError) -> Self {
        data(e)
    }
}

impl From<TransformError> for PipelineError {
    fn from(e: TransformError) -> Self {
        match e {
            TransformError::BadQuantileCount(_) => Self::Config(e.to_string()),
            e => data(e),
        }
    }
}

impl From<PatchError> for PipelineError {
    fn from(e: PatchError) -> Self {
        match e {
            PatchError::Config(_) => Self::Config(e.to_string()),
            PatchError::Transform(t) => t.into(),
            e => data(e),
        }
    }
}

impl From<FoldError> for PipelineError {
    fn from(e: FoldError) -> Self {
        match e {
            FoldError::Spec(_) => Self::Config(e.to_string()),
            e => data(e),
        }
    }
}

impl From<StatsError> for PipelineError {
    fn from(e: StatsError) -> Self {
        match e {
            StatsError::BadBins(_) => Self::Config(e.to_string()),
            StatsError::Patch(p) => p.into(),
            e => data(e),
        }
    }
}

impl From<MetricError> for PipelineError {
    fn from(e: MetricError) -> Self {
        data(e)
    }
}

impl From<SrError> for PipelineError {
    fn from(e: SrError) -> Self {
        match e {
            SrError::NonFiniteLoss { .. } => Self::Numerical(e.to_string()),
            SrError::Config(_) => Self::Config(e.to_string()),
            e => data(e),
        }
    }
}

impl From<std::io::Error> for PipelineError {
    fn from(e: std::io::Error) -> Self {
        data(e)
    }
}

impl From<serde_json::Error> for PipelineError {
    fn from(e: serde_json::Error) -> Self {
        data(e)
    }
}

/// Resolve a configured input and check that it exists.
pub fn require(cfg: &RunConfig, path: Option<&PathBuf>, what: &str) -> Result<PathBuf> {
    let path = path.ok_or_else(|| PipelineError::Config(format!("no {what} input configured")))?;
    let resolved = cfg.resolve(path);
    if !resolved.exists() {
        return Err(PipelineError::MissingInput {
            what: what.to_string(),
            path: resolved,
        });
    }
    Ok(resolved)
}

fn existing(path: &Path, what: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(PipelineError::MissingInput {
            what: what.to_string(),
            path: path.to_path_buf(),
        })
    }
}

/// Append `suffix` to a file name: `model.bin` → `model.bin.transform.json`.
pub fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(suffix);
    path.with_file_name(name)
}

pub const TRANSFORM_SIDECAR: &str = ".transform.json";
pub const HISTORY_SIDECAR: &str = ".history.json";

/// Emission series from one NetCDF file or every `.nc` file of a directory.
pub fn load_emission(path: &Path, variable: &str) -> Result<Vec<RasterGrid>> {
    let opts = netcdf::LoadOptions::new(variable, RasterKind::Emission);
    let files = if path.is_dir() {
        let mut files: Vec<PathBuf> = std::fs::read_dir(path)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "nc"))
            .collect();
        files.sort();
        files
    } else {
        vec![path.to_path_buf()]
    };
    if files.is_empty() {
        return Err(data(format!("no .nc files in {}", path.display())));
    }
    let mut grids = Vec::new();
    for f in files {
        grids.extend(netcdf::load_series(&f, &opts)?);
    }
    Ok(grids)
}

/// A static grid; several time steps are averaged cell by cell.
pub fn load_static(path: &Path, variable: &str, kind: RasterKind) -> Result<RasterGrid> {
    let mut series = netcdf::load_series(path, &netcdf::LoadOptions::new(variable, kind))?;
    if series.len() == 1 {
        return Ok(series.pop().expect("one grid"));
    }
    if kind == RasterKind::ClimateClass {
        return Err(data(format!("{} holds several climate maps", path.display())));
    }
    let first = &series[0];
    let mut sum = ndarray::Array2::<f64>::zeros(first.data().dim());
    let mut count = ndarray::Array2::<f64>::zeros(first.data().dim());
    for g in &series {
        ndarray::Zip::from(&mut sum)
            .and(&mut count)
            .and(g.data())
            .for_each(|s, n, &v| {
                if !v.is_nan() {
                    *s += v;
                    *n += 1.0;
                }
            });
    }
    let mean = ndarray::Zip::from(&sum)
        .and(&count)
        .map_collect(|&s, &n| if n > 0.0 { s / n } else { f64::NAN });
    Ok(RasterGrid::new(*first.extent(), mean, kind, None)?)
}

fn aligned(grid: RasterGrid, reference: &RasterGrid) -> Result<RasterGrid> {
    if grid.extent() == reference.extent() {
        Ok(grid)
    } else {
        Ok(align_to(&grid, reference.extent())?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessOutput {
    pub cl: PathBuf,
    pub tc: PathBuf,
}

/// Cropland and tree-cover percentage maps on the emission grid.
pub fn preprocess(cfg: &RunConfig, out_dir: &Path) -> Result<PreprocessOutput> {
    let emission_path = require(cfg, cfg.inputs.emission.as_ref(), "emission")?;
    let lc_path = require(cfg, cfg.inputs.land_cover.as_ref(), "land cover")?;
    let reference = load_emission(&emission_path, &cfg.inputs.emission_var)?
        .into_iter()
        .next()
        .ok_or_else(|| data("emission input holds no grids"))?;
    let lc = netcdf::load_land_cover(&lc_path, &cfg.inputs.land_cover_var)?;
    let target = reference.extent().cell_size;
    let factor = (target / lc.extent().cell_size).round().max(1.0);
    let block = factor * lc.extent().cell_size;

    std::fs::create_dir_all(out_dir)?;
    let out = PreprocessOutput {
        cl: out_dir.join("cl.nc"),
        tc: out_dir.join("tc.nc"),
    };
    for (class, path, var) in [
        (LandCoverClass::Cropland, &out.cl, &cfg.inputs.cl_var),
        (LandCoverClass::TreeCover, &out.tc, &cfg.inputs.tc_var),
    ] {
        let fraction = aligned(class_fraction(&lc, block, class)?, &reference)?;
        netcdf::write_raster(path, var, &[fraction])?;
    }
    Ok(out)
}

/// Drivers present in the configuration: CL and TC always, LAI if given.
pub fn configured_drivers(cfg: &RunConfig) -> Vec<DriverKind> {
    let mut d = vec![DriverKind::Cl, DriverKind::Tc];
    if cfg.inputs.lai.is_some() {
        d.push(DriverKind::Lai);
    }
    d
}

pub fn patch_config(cfg: &RunConfig, cell_size: f64) -> Result<PatchConfig> {
    let p = &cfg.patches;
    Ok(PatchConfig::from_degrees(
        p.patch_deg,
        p.stride_deg,
        cell_size,
        p.zero_thresh,
        p.alpha,
    )?)
}

/// Load inputs and write a patch store to `out_dir`.
pub fn extract(cfg: &RunConfig, out_dir: &Path) -> Result<ExtractSummary> {
    let emission_path = require(cfg, cfg.inputs.emission.as_ref(), "emission")?;
    let mut drivers = Vec::new();
    for kind in configured_drivers(cfg) {
        let (path, var) = cfg.inputs.driver(kind);
        let path = require(cfg, path, &format!("driver `{kind}`"))?;
        drivers.push((kind, path, var.to_string()));
    }
    let climate_path = match &cfg.inputs.climate {
        Some(p) => Some(require(cfg, Some(p), "climate")?),
        None => None,
    };

    let emission = load_emission(&emission_path, &cfg.inputs.emission_var)?;
    let reference = emission.first().ok_or_else(|| data("emission input holds no grids"))?;
    let pcfg = patch_config(cfg, reference.extent().cell_size)?;
    let driver_grids = drivers
        .into_iter()
        .map(|(kind, path, var)| Ok((kind, aligned(load_static(&path, &var, kind.raster_kind())?, reference)?)))
        .collect::<Result<Vec<_>>>()?;
    let climate = match climate_path {
        Some(p) => Some(aligned(
            load_static(&p, &cfg.inputs.climate_var, RasterKind::ClimateClass)?,
            reference,
        )?),
        None => None,
    };

    let windows = extract_patches(&emission, &pcfg)?;
    if windows.is_empty() {
        return Err(data("no patch passed the zero-emission filter"));
    }
    let n_q = cfg.patches.n_quantiles.min(windows.len() * pcfg.patch_cells.pow(2));
    let transform = fit_transform_on_windows(&emission, &windows, &pcfg, n_q)?;
    drop(windows);
    Ok(build_store(
        out_dir,
        &emission,
        &driver_grids,
        climate.as_ref(),
        &pcfg,
        Some(transform),
    )?)
}

/// Index entries from a store directory or a bare `index.jsonl`.
pub fn read_index(path: &Path) -> Result<Vec<PatchIndexEntry>> {
    existing(path, "patch index")?;
    if path.is_dir() {
        return Ok(PatchStore::open(path)?.index().to_vec());
    }
    std::fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(PipelineError::from))
        .collect()
}

/// Build every configured fold; manifests go to `out_dir/fold_<name>.json`.
pub fn build_folds(cfg: &RunConfig, index_path: &Path, out_dir: &Path) -> Result<Vec<(FoldManifest, PathBuf)>> {
    let index = read_index(index_path)?;
    std::fs::create_dir_all(out_dir)?;
    let mut out = Vec::new();
    for spec in cfg.folds.specs() {
        let manifest = build_fold(&index, &spec)?;
        let path = out_dir.join(format!("fold_{}.json", spec.name));
        manifest.save(&path)?;
        out.push((manifest, path));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsOutput {
    pub report: PathBuf,
    pub patches_csv: PathBuf,
    pub dates_csv: PathBuf,
}

/// Driver/emission statistics over a whole store.
pub fn analyze_stats(store_dir: &Path, driver: DriverKind, bins: usize, out: &Path) -> Result<StatsOutput> {
    existing(store_dir, "patch store")?;
    let store = PatchStore::open(store_dir)?;
    let per_patch = stats::analyze_store(&store, driver, bins, None)?;
    let report = StatsReport::from_patches(driver, bins, &per_patch);
    let stem = out.file_stem().unwrap_or_default().to_string_lossy().into_owned();
    let result = StatsOutput {
        report: out.to_path_buf(),
        patches_csv: out.with_file_name(format!("{stem}_patches.csv")),
        dates_csv: out.with_file_name(format!("{stem}_dates.csv")),
    };
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(out, serde_json::to_string_pretty(&report)?)?;
    stats::write_csvs(&per_patch, &report.temporal, &result.patches_csv, &result.dates_csv)?;
    Ok(result)
}

fn read_patches(store: &PatchStore, ids: &[u64]) -> Result<Vec<Patch>> {
    ids.par_iter().map(|&id| Ok(store.read(id)?)).collect()
}

/// Quantile transform fitted on the HR emission of the given patches.
pub fn fit_transform(patches: &[Patch], n_q: usize) -> Result<TransformModel> {
    let n = patches.iter().map(|p| p.i_hr.len()).sum::<usize>();
    let mut fitter = QuantileFitter::with_capacity(n_q.min(n.max(2)), DEFAULT_RESERVOIR, 0);
    for p in patches {
        fitter.extend(p.i_hr.iter().copied())?;
    }
    Ok(fitter.finish()?)
}

/// Positions of the requested drivers in the store records.
fn driver_slots(store: &PatchStore, channels: &ChannelSet) -> Result<Vec<(DriverKind, usize)>> {
    channels
        .drivers()
        .iter()
        .map(|&d| {
            store
                .meta()
                .driver_position(d)
                .map(|slot| (d, slot))
                .ok_or_else(|| data(format!("driver `{d}` is not in the patch store")))
        })
        .collect()
}

fn sr_input(patch: &Patch, t: &TransformModel, slots: &[(DriverKind, usize)], alpha: usize) -> Result<SrInput> {
    let t_lr = t.forward_array(&patch.i_lr)?;
    let drivers: Vec<_> = slots.iter().map(|&(d, s)| (d, patch.drivers_lr[s].view())).collect();
    Ok(SrInput::stack(t_lr.view(), &drivers, alpha)?)
}

fn train_samples(
    patches: &[Patch],
    t: &TransformModel,
    slots: &[(DriverKind, usize)],
    alpha: usize,
) -> Result<Vec<TrainSample>> {
    patches
        .par_iter()
        .map(|p| {
            Ok(TrainSample {
                input: sr_input(p, t, slots, alpha)?,
                target: t.forward_array(&p.i_hr)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutput {
    pub model: PathBuf,
    pub transform: PathBuf,
    pub history: TrainHistory,
}

/// Fit the fold transform and train a conv model on the fold's train split.
pub fn train(
    cfg: &RunConfig,
    store_dir: &Path,
    manifest_path: &Path,
    channels: &ChannelSet,
    out: &Path,
    on_epoch: impl FnMut(&sr::EpochLog),
) -> Result<TrainOutput> {
    cfg.validate()?;
    existing(store_dir, "patch store")?;
    existing(manifest_path, "fold manifest")?;
    let store = PatchStore::open(store_dir)?;
    let manifest = FoldManifest::load(manifest_path)?;
    let slots = driver_slots(&store, channels)?;
    if manifest.train.is_empty() || manifest.val.is_empty() {
        return Err(data("fold has an empty train or validation split"));
    }
    let alpha = store.meta().alpha;

    let train_patches = read_patches(&store, &manifest.train)?;
    let transform = fit_transform(&train_patches, cfg.patches.n_quantiles)?;
    let train_set = train_samples(&train_patches, &transform, &slots, alpha)?;
    drop(train_patches);
    let val_set = train_samples(&read_patches(&store, &manifest.val)?, &transform, &slots, alpha)?;

    let topology = Topology {
        in_channels: 1 + slots.len(),
        hidden: cfg.model.hidden.clone(),
        alpha,
    };
    let mut model = ConvModel::new(topology, channels.drivers().to_vec(), cfg.train.rng_seed);
    let history = sr::train(&mut model, &train_set, &val_set, &cfg.train, on_epoch)?;

    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    SrBackend::ConvModel(model).save(out)?;
    let transform_path = sidecar(out, TRANSFORM_SIDECAR);
    transform.save(&transform_path)?;
    std::fs::write(sidecar(out, HISTORY_SIDECAR), serde_json::to_string_pretty(&history)?)?;
    Ok(TrainOutput {
        model: out.to_path_buf(),
        transform: transform_path,
        history,
    })
}

/// A trained model file or the bicubic baseline.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ModelRef {
    Bicubic,
    File(PathBuf),
}

impl std::str::FromStr for ModelRef {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(if s == "bicubic" { Self::Bicubic } else { Self::File(s.into()) })
    }
}

/// Backend plus the transform it works under. A model file uses its
/// transform sidecar; the baseline, or a model without one, uses the fold
/// transform when a manifest is given and the store transform otherwise.
fn resolve_model(
    model: &ModelRef,
    store: &PatchStore,
    manifest: Option<&FoldManifest>,
    n_q: usize,
) -> Result<(SrBackend, TransformModel)> {
    let fallback = || -> Result<TransformModel> {
        match manifest {
            Some(m) => fit_transform(&read_patches(store, &m.train)?, n_q),
            None => Ok(store.transform()?),
        }
    };
    match model {
        ModelRef::Bicubic => Ok((
            SrBackend::BicubicBaseline(sr::BicubicBaseline {
                alpha: store.meta().alpha,
            }),
            fallback()?,
        )),
        ModelRef::File(path) => {
            existing(path, "model")?;
            let backend = SrBackend::load(path)?;
            let side = sidecar(path, TRANSFORM_SIDECAR);
            let transform = if side.exists() {
                TransformModel::load(&side)?
            } else {
                fallback()?
            };
            Ok((backend, transform))
        }
    }
}

/// Patch ids from a JSON array or whitespace-separated text.
pub fn read_ids(path: &Path) -> Result<Vec<u64>> {
    existing(path, "id list")?;
    let text = std::fs::read_to_string(path)?;
    if text.trim_start().starts_with('[') {
        return Ok(serde_json::from_str(&text)?);
    }
    text.split_whitespace()
        .map(|t| t.parse().map_err(|_| data(format!("bad patch id `{t}` in {}", path.display()))))
        .collect()
}

/// Super-resolve patches back to emission units, one NetCDF file each.
pub fn deploy(model: &ModelRef, store_dir: &Path, ids: &[u64], out_dir: &Path) -> Result<Vec<PathBuf>> {
    existing(store_dir, "patch store")?;
    let store = PatchStore::open(store_dir)?;
    let (backend, transform) = resolve_model(model, &store, None, 0)?;
    let channels = ChannelSet(backend.drivers().to_vec());
    let slots = driver_slots(&store, &channels)?;
    std::fs::create_dir_all(out_dir)?;
    ids.iter()
        .map(|&id| {
            let patch = store.read(id)?;
            let input = sr_input(&patch, &transform, &slots, backend.alpha())?;
            let hr = backend.deploy(&transform, &input)?;
            let grid = RasterGrid::new(patch.meta.extent, hr, RasterKind::Emission, patch.meta.date)?;
            let path = out_dir.join(format!("patch_{id}.nc"));
            netcdf::write_raster(&path, "isoprene", &[grid])?;
            Ok(path)
        })
        .collect()
}

/// Metrics for one partition of a fold.
pub fn evaluate(
    cfg: &RunConfig,
    store_dir: &Path,
    manifest_path: &Path,
    model: &ModelRef,
    domain: DomainSelection,
    partition: &str,
    out: &Path,
) -> Result<MetricsReport> {
    existing(store_dir, "patch store")?;
    existing(manifest_path, "fold manifest")?;
    let store = PatchStore::open(store_dir)?;
    let manifest = FoldManifest::load(manifest_path)?;
    let ids = manifest
        .partition(partition)
        .ok_or_else(|| PipelineError::Config(format!("unknown partition `{partition}`")))?
        .to_vec();
    let (backend, transform) = resolve_model(model, &store, Some(&manifest), cfg.patches.n_quantiles)?;
    let channels = ChannelSet(backend.drivers().to_vec());
    let slots = driver_slots(&store, &channels)?;

    let per_patch: Vec<Vec<metrics::PatchMetrics>> = ids
        .par_iter()
        .map(|&id| {
            let patch = store.read(id)?;
            let input = sr_input(&patch, &transform, &slots, backend.alpha())?;
            let out_t = backend.super_resolve(&input)?;
            let mut rows = Vec::new();
            for &d in domain.domains() {
                let m = match d {
                    Domain::Transformed => {
                        let truth = transform.forward_array(&patch.i_hr)?;
                        metrics::evaluate(id, d, out_t.view(), truth.view())?
                    }
                    Domain::Isoprene => {
                        let est = transform.inverse_array(&out_t);
                        metrics::evaluate(id, d, est.view(), patch.i_hr.view())?
                    }
                };
                rows.push(m);
            }
            Ok(rows)
        })
        .collect::<Result<_>>()?;
    let report = MetricsReport::new(per_patch.into_iter().flatten().collect());
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    report.write_csv(out)?;
    report.write_aggregates(out.with_extension("json"))?;
    Ok(report)
}

/// Comparison table of several evaluation CSVs against a baseline CSV.
pub fn report(evals: &[PathBuf], baseline: &Path, out: &Path) -> Result<Vec<metrics::ReportRow>> {
    existing(baseline, "baseline evaluation")?;
    let base = MetricsReport::read_csv(baseline)?;
    let mut named = Vec::with_capacity(evals.len());
    for path in evals {
        existing(path, "evaluation")?;
        let name = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        named.push((name, MetricsReport::read_csv(path)?));
    }
    let rows = metrics::compare(&named, &base);
    metrics::write_report_csv(&rows, out)?;
    Ok(rows)
}

/// Artifacts of a complete toy run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyRun {
    pub config: PathBuf,
    pub store: PathBuf,
    pub manifests: Vec<PathBuf>,
    pub stats: StatsOutput,
    pub models: Vec<PathBuf>,
    pub evaluations: Vec<PathBuf>,
    pub report: PathBuf,
}

/// Generate the toy inputs in `dir` and run every step on the first fold,
/// training one model without and one with the land-cover drivers.
pub fn run_toy(dir: &Path, seed: u64) -> Result<ToyRun> {
    let spec = crate::synth::ToySpec {
        seed,
        ..crate::synth::ToySpec::default()
    };
    let files = crate::synth::write_toy(dir, &spec)?;
    let config = dir.join(&files.config);
    let cfg = RunConfig::load(&config)?;
    cfg.validate()?;

    preprocess(&cfg, &dir.join("prep"))?;
    let store = dir.join("store");
    extract(&cfg, &store)?;
    let folds = build_folds(&cfg, &store, &dir.join("folds"))?;
    let stats = analyze_stats(&store, cfg.stats.driver, cfg.stats.bins, &dir.join("stats/report.json"))?;

    let manifest = folds[0].1.clone();
    let mut models = Vec::new();
    let mut evaluations = Vec::new();
    let eval_dir = dir.join("eval");
    let base = eval_dir.join("bicubic.csv");
    evaluate(&cfg, &store, &manifest, &ModelRef::Bicubic, cfg.domain, "test_standard", &base)?;
    evaluations.push(base.clone());
    for channels in ["isop", "isop,cl,tc"] {
        let set: ChannelSet = channels.parse().map_err(PipelineError::Config)?;
        let name = channels.replace(',', "_");
        let model = dir.join("models").join(format!("{name}.bin"));
        train(&cfg, &store, &manifest, &set, &model, |_| {})?;
        let eval = eval_dir.join(format!("{name}.csv"));
        evaluate(&cfg, &store, &manifest, &ModelRef::File(model.clone()), cfg.domain, "test_standard", &eval)?;
        models.push(model);
        evaluations.push(eval);
    }
    let report_path = dir.join("report.csv");
    report(&evaluations, &base, &report_path)?;
    Ok(ToyRun {
        config,
        store,
        manifests: folds.into_iter().map(|(_, p)| p).collect(),
        stats,
        models,
        evaluations,
        report: report_path,
    })
}
