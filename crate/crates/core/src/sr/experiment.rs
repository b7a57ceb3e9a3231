//! Single-channel versus driver-stacked training on synthetic patches.
//!
//! Each HR patch is a smooth field plus fine patterns whose local amplitude
//! follows a smooth driver field. The patterns alternate sign every HR cell,
//! so factor-2 bicubic downsampling removes them: only a model that sees the
//! drivers can restore them.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{train, ConvModel, Result, SrBackend, SrInput, Topology, TrainConfig, TrainHistory, TrainSample};
use crate::metrics::nmse;
use crate::raster::rescale_bicubic;

/// Shape of the synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub lr_size: usize,
    pub alpha: usize,
    /// Number of driver fields, 1 or 2.
    pub drivers: usize,
    /// Peak amplitude of each fine pattern.
    pub amplitude: f64,
    /// `false` builds the control set: constant drivers and a random
    /// per-patch pattern amplitude the drivers say nothing about.
    pub informative: bool,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_train: 2000,
            n_val: 200,
            n_test: 200,
            lr_size: 15,
            alpha: 2,
            drivers: 1,
            amplitude: 0.15,
            informative: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPatch {
    pub t_lr: Array2<f64>,
    pub drivers_lr: Vec<Array2<f64>>,
    pub t_hr: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub train: Vec<SyntheticPatch>,
    pub val: Vec<SyntheticPatch>,
    pub test: Vec<SyntheticPatch>,
}

/// Sign of fine pattern `k` at HR cell `(i, j)`.
fn pattern(k: usize, i: usize, j: usize) -> f64 {
    let parity = if k == 0 { i + j } else { i };
    if parity % 2 == 0 { 1.0 } else { -1.0 }
}

fn smooth_field(n: usize, rng: &mut ChaCha8Rng, terms: usize, amp: f64, max_freq: f64) -> Array2<f64> {
    let waves: Vec<[f64; 5]> = (0..terms)
        .map(|_| {
            [
                rng.random_range(-amp..amp),
                rng.random_range(0.02..max_freq),
                rng.random_range(0.02..max_freq),
                rng.random_range(0.0..std::f64::consts::TAU),
                rng.random_range(0.0..std::f64::consts::TAU),
            ]
        })
        .collect();
    Array2::from_shape_fn((n, n), |(i, j)| {
        waves
            .iter()
            .map(|[a, fy, fx, py, px]| a * (fy * i as f64 + py).sin() * (fx * j as f64 + px).cos())
            .sum()
    })
}

fn make_patch(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> SyntheticPatch {
    let hr = spec.lr_size * spec.alpha;
    let base = smooth_field(hr, rng, 3, 0.08, 0.35).mapv(|v| 0.5 + v);
    let mut drivers_hr = Vec::with_capacity(spec.drivers);
    let mut amps = Vec::with_capacity(spec.drivers);
    for _ in 0..spec.drivers {
        if spec.informative {
            drivers_hr.push(smooth_field(hr, rng, 2, 0.5, 0.2).mapv(|v| (0.5 + v).clamp(0.0, 1.0)));
            amps.push(spec.amplitude);
        } else {
            drivers_hr.push(Array2::from_elem((hr, hr), 0.5));
            amps.push(rng.random_range(-spec.amplitude..spec.amplitude));
        }
    }
    let t_hr = Array2::from_shape_fn((hr, hr), |(i, j)| {
        let detail: f64 = (0..spec.drivers)
            .map(|k| amps[k] * drivers_hr[k][[i, j]] * pattern(k, i, j))
            .sum();
        (base[[i, j]] + detail).clamp(0.0, 1.0)
    });
    let lr = spec.lr_size;
    let down = |a: &Array2<f64>| rescale_bicubic(a.view(), lr, lr).mapv(|v| v.clamp(0.0, 1.0));
    SyntheticPatch {
        t_lr: down(&t_hr),
        drivers_lr: drivers_hr.iter().map(down).collect(),
        t_hr,
    }
}

pub fn generate(spec: &SyntheticSpec) -> SyntheticDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut take = |n: usize| (0..n).map(|_| make_patch(spec, &mut rng)).collect();
    SyntheticDataset {
        train: take(spec.n_train),
        val: take(spec.n_val),
        test: take(spec.n_test),
    }
}

/// Channel 0 plus the drivers listed in `drivers` (indices into the patch).
pub fn stacked(patch: &SyntheticPatch, drivers: &[usize], alpha: usize) -> Result<SrInput> {
    let (h, w) = patch.t_lr.dim();
    let mut ch = ndarray::Array3::zeros((1 + drivers.len(), h, w));
    ch.index_axis_mut(ndarray::Axis(0), 0).assign(&patch.t_lr);
    for (k, &d) in drivers.iter().enumerate() {
        ch.index_axis_mut(ndarray::Axis(0), k + 1).assign(&patch.drivers_lr[d]);
    }
    SrInput::new(ch, alpha)
}

fn samples(set: &[SyntheticPatch], drivers: &[usize], alpha: usize) -> Result<Vec<TrainSample>> {
    set.iter()
        .map(|p| {
            Ok(TrainSample {
                input: stacked(p, drivers, alpha)?,
                target: p.t_hr.clone(),
            })
        })
        .collect()
}

/// Average per-patch NMSE (dB) of a backend's clamped output on `set`.
pub fn mean_nmse_db(backend: &SrBackend, set: &[SyntheticPatch], drivers: &[usize], alpha: usize) -> Result<f64> {
    let mut total = 0.0;
    for p in set {
        let out = backend.super_resolve(&stacked(p, drivers, alpha)?)?;
        total += nmse(out.view(), p.t_hr.view())
            .expect("matching shapes")
            .expect("synthetic targets are never all zero");
    }
    Ok(total / set.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigResult {
    /// Driver indices stacked after channel 0.
    pub drivers: Vec<usize>,
    pub test_nmse_db: f64,
    pub history: TrainHistory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub bicubic_nmse_db: f64,
    /// First entry is the single-channel reference.
    pub configs: Vec<ConfigResult>,
    /// NIR of each later configuration against the first.
    pub nir: Vec<f64>,
}

/// Train one model per driver subset and compare them on the test split.
pub fn run(
    data: &SyntheticDataset,
    spec: &SyntheticSpec,
    configs: &[Vec<usize>],
    hidden: &[usize],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(usize, &super::EpochLog),
) -> Result<ExperimentResult> {
    let alpha = spec.alpha;
    let bicubic = SrBackend::BicubicBaseline(super::BicubicBaseline { alpha });
    let bicubic_nmse_db = mean_nmse_db(&bicubic, &data.test, &[], alpha)?;
    let mut results = Vec::with_capacity(configs.len());
    for (c, drivers) in configs.iter().enumerate() {
        let topology = Topology {
            in_channels: 1 + drivers.len(),
            hidden: hidden.to_vec(),
            alpha,
        };
        let mut model = ConvModel::new(topology, Vec::new(), cfg.rng_seed);
        let history = train(
            &mut model,
            &samples(&data.train, drivers, alpha)?,
            &samples(&data.val, drivers, alpha)?,
            cfg,
            |log| on_epoch(c, log),
        )?;
        let backend = SrBackend::ConvModel(model);
        results.push(ConfigResult {
            drivers: drivers.clone(),
            test_nmse_db: mean_nmse_db(&backend, &data.test, drivers, alpha)?,
            history,
        });
    }
    let reference = results[0].test_nmse_db;
    let nir = results[1..]
        .iter()
        .map(|r| crate::metrics::nir(r.test_nmse_db, reference).unwrap_or(f64::NAN))
        .collect();
    Ok(ExperimentResult {
        bicubic_nmse_db,
        configs: results,
        nir,
    })
}

/// Training settings used for the desk-scale comparison.
pub fn desk_config(seed: u64) -> TrainConfig {
    TrainConfig {
        lr: 1e-3,
        max_epochs: 40,
        rng_seed: seed,
        ..TrainConfig::default()
    }
}
