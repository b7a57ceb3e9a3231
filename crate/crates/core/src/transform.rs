//! Rank-based transform of emission values to a uniform `[0, 1]` distribution.
//!
//! The fitted model is the empirical quantile function sampled at `N_q`
//! evenly spaced probabilities. The forward map inverts it piecewise-linearly,
//! the inverse evaluates it piecewise-linearly. Values outside the fitted range
//! clamp to the end points; NaN (missing) passes through both directions.
//!
//! ```
//! use isosr::transform::TransformModel;
//!
//! let samples: Vec<f64> = (0..=1000).map(|i| (i as f64 / 100.0).exp()).collect();
//! let model = TransformModel::fit(samples.iter().copied(), 101).unwrap();
//! let u = model.forward(samples[500]).unwrap();
//! assert!((u - 0.5).abs() < 1e-12);
//! assert!((model.inverse(u) - samples[500]).abs() < 1e-9);
//! ```

use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_QUANTILES: usize = 1000;
/// Samples kept in memory while fitting; beyond this, reservoir sampling.
pub const DEFAULT_RESERVOIR: usize = 1_000_000;
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum TransformError {
    #[error("need at least {need} finite samples to fit, got {got}")]
    TooFewSamples { got: usize, need: usize },
    #[error("non-finite input {0}")]
    NonFinite(f64),
    #[error("at least two quantiles are required, got {0}")]
    BadQuantileCount(usize),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = TransformError> = std::result::Result<T, E>;

/// The fitted quantile table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformModel {
    version: u32,
    n_q: usize,
    n_fitted: usize,
    quantile_grid: Vec<f64>,
}

/// Streaming fitter: holds at most `capacity` samples, chosen uniformly by
/// reservoir sampling once more have been seen.
#[derive(Debug)]
pub struct QuantileFitter {
    n_q: usize,
    capacity: usize,
    reservoir: Vec<f64>,
    seen: usize,
    rng: ChaCha8Rng,
}

impl QuantileFitter {
    pub fn new(n_q: usize) -> Self {
        Self::with_capacity(n_q, DEFAULT_RESERVOIR, 0)
    }

    pub fn with_capacity(n_q: usize, capacity: usize, seed: u64) -> Self {
        Self {
            n_q,
            capacity: capacity.max(1),
            reservoir: Vec::new(),
            seen: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Add one sample. NaN is treated as missing and skipped.
    pub fn push(&mut self, x: f64) -> Result<()> {
        if x.is_nan() {
            return Ok(());
        }
        if !x.is_finite() {
            return Err(TransformError::NonFinite(x));
        }
        self.seen += 1;
        if self.reservoir.len() < self.capacity {
            self.reservoir.push(x);
        } else {
            let j = self.rng.random_range(0..self.seen);
            if j < self.capacity {
                self.reservoir[j] = x;
            }
        }
        Ok(())
    }

    pub fn extend<I: IntoIterator<Item = f64>>(&mut self, samples: I) -> Result<()> {
        samples.into_iter().try_for_each(|x| self.push(x))
    }

    pub fn finish(mut self) -> Result<TransformModel> {
        if self.n_q < 2 {
            return Err(TransformError::BadQuantileCount(self.n_q));
        }
        if self.reservoir.len() < self.n_q {
            return Err(TransformError::TooFewSamples {
                got: self.reservoir.len(),
                need: self.n_q,
            });
        }
        self.reservoir.sort_unstable_by(f64::total_cmp);
        let sorted = &self.reservoir;
        let last = (sorted.len() - 1) as f64;
        let mut grid: Vec<f64> = (0..self.n_q)
            .map(|k| {
                let h = k as f64 / (self.n_q - 1) as f64 * last;
                let lo = h.floor() as usize;
                let frac = h - lo as f64;
                if lo + 1 < sorted.len() {
                    sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
                } else {
                    sorted[lo]
                }
            })
            .collect();
        for k in 1..grid.len() {
            if grid[k] < grid[k - 1] {
                grid[k] = grid[k - 1];
            }
        }
        Ok(TransformModel {
            version: FORMAT_VERSION,
            n_q: self.n_q,
            n_fitted: self.seen,
            quantile_grid: grid,
        })
    }
}

impl TransformModel {
    /// Fit on every finite sample (NaN skipped as missing).
    pub fn fit<I: IntoIterator<Item = f64>>(samples: I, n_q: usize) -> Result<Self> {
        let mut fitter = QuantileFitter::with_capacity(n_q, usize::MAX, 0);
        fitter.extend(samples)?;
        fitter.finish()
    }

    pub fn from_quantiles(quantile_grid: Vec<f64>, n_fitted: usize) -> Result<Self> {
        let model = Self {
            version: FORMAT_VERSION,
            n_q: quantile_grid.len(),
            n_fitted,
            quantile_grid,
        };
        model.validate()?;
        Ok(model)
    }

    fn validate(&self) -> Result<()> {
        if self.n_q < 2 || self.quantile_grid.len() != self.n_q {
            return Err(TransformError::InvalidModel(format!(
                "n_q = {} with {} quantiles",
                self.n_q,
                self.quantile_grid.len()
            )));
        }
        if self.quantile_grid.iter().any(|q| !q.is_finite()) {
            return Err(TransformError::InvalidModel("non-finite quantile".into()));
        }
        if self.quantile_grid.windows(2).any(|w| w[1] < w[0]) {
            return Err(TransformError::InvalidModel("quantiles decrease".into()));
        }
        Ok(())
    }

    pub fn n_q(&self) -> usize {
        self.n_q
    }

    pub fn n_fitted(&self) -> usize {
        self.n_fitted
    }

    pub fn quantiles(&self) -> &[f64] {
        &self.quantile_grid
    }

    pub fn min(&self) -> f64 {
        self.quantile_grid[0]
    }

    pub fn max(&self) -> f64 {
        self.quantile_grid[self.n_q - 1]
    }

    /// Map an emission value into `[0, 1]`.
    ///
    /// A value equal to a run of identical quantiles maps to the midpoint of
    /// the run's probability span, so a constant fit sends its value to 0.5.
    pub fn forward(&self, x: f64) -> Result<f64> {
        if x.is_nan() {
            return Ok(x);
        }
        if !x.is_finite() {
            return Err(TransformError::NonFinite(x));
        }
        let q = &self.quantile_grid;
        let denom = (self.n_q - 1) as f64;
        if x < q[0] {
            return Ok(0.0);
        }
        if x > q[self.n_q - 1] {
            return Ok(1.0);
        }
        let first_ge = q.partition_point(|&v| v < x);
        let past_le = q.partition_point(|&v| v <= x);
        if past_le > first_ge {
            // tie block first_ge..past_le
            let mid = (first_ge + past_le - 1) as f64 / 2.0;
            return Ok(mid / denom);
        }
        let lo = past_le - 1;
        let hi = first_ge;
        let frac = (x - q[lo]) / (q[hi] - q[lo]);
        Ok(((lo as f64 + frac) / denom).clamp(0.0, 1.0))
    }

    /// Map `u` (clamped to `[0, 1]`) back to an emission value.
    pub fn inverse(&self, u: f64) -> f64 {
        if u.is_nan() {
            return u;
        }
        let q = &self.quantile_grid;
        let h = u.clamp(0.0, 1.0) * (self.n_q - 1) as f64;
        let lo = (h.floor() as usize).min(self.n_q - 2);
        let frac = h - lo as f64;
        (q[lo] + frac * (q[lo + 1] - q[lo])).clamp(self.min(), self.max())
    }

    pub fn forward_array(&self, a: &Array2<f64>) -> Result<Array2<f64>> {
        let mut out = Array2::zeros(a.dim());
        for (o, &x) in out.iter_mut().zip(a.iter()) {
            *o = self.forward(x)?;
        }
        Ok(out)
    }

    pub fn inverse_array(&self, u: &Array2<f64>) -> Array2<f64> {
        u.mapv(|v| self.inverse(v))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let model: Self = serde_json::from_str(s)?;
        if model.version != FORMAT_VERSION {
            return Err(TransformError::InvalidModel(format!(
                "unsupported version {}",
                model.version
            )));
        }
        model.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
