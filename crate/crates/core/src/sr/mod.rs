//! Super-resolution backends.
//!
//! An [`SrInput`] stacks the transformed LR emission patch (channel 0) with
//! any number of driver channels, all in `[0, 1]`. A backend maps it to one
//! `αH × αW` channel.

mod conv;
pub mod experiment;
mod train;

pub use conv::{ConvModel, Topology};
pub use train::{train, EpochLog, PlateauSchedule, ScheduleEvent, TrainConfig, TrainHistory, TrainSample};

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array2, Array3, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::patchset::DriverKind;
use crate::raster::rescale_bicubic;
use crate::transform::TransformModel;

#[derive(Debug, Error)]
pub enum SrError {
    #[error("input has {got} channels, the model expects {want}")]
    ChannelMismatch { got: usize, want: usize },
    #[error("input scale factor {got} does not match the backend's {want}")]
    AlphaMismatch { got: usize, want: usize },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("invalid training setup: {0}")]
    Config(String),
    #[error("bad model file: {0}")]
    BadModel(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = SrError> = std::result::Result<T, E>;

/// Stacked `[C, H, W]` input.
#[derive(Debug, Clone, PartialEq)]
pub struct SrInput {
    channels: Array3<f64>,
    alpha: usize,
}

impl SrInput {
    pub fn new(channels: Array3<f64>, alpha: usize) -> Result<Self> {
        if channels.len_of(Axis(0)) == 0 {
            return Err(SrError::InvalidInput("no channels".into()));
        }
        if alpha == 0 {
            return Err(SrError::InvalidInput("alpha must be positive".into()));
        }
        if let Some(v) = channels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(SrError::InvalidInput(format!("value {v} outside [0, 1]")));
        }
        Ok(Self { channels, alpha })
    }

    /// Channel 0 from `t_lr`, then each driver window scaled to `[0, 1]`.
    pub fn stack(t_lr: ArrayView2<'_, f64>, drivers: &[(DriverKind, ArrayView2<'_, f64>)], alpha: usize) -> Result<Self> {
        let (h, w) = t_lr.dim();
        let mut channels = Array3::zeros((1 + drivers.len(), h, w));
        channels.index_axis_mut(Axis(0), 0).assign(&t_lr);
        for (k, (kind, d)) in drivers.iter().enumerate() {
            if d.dim() != (h, w) {
                return Err(SrError::InvalidInput(format!("driver `{kind}` has shape {:?}, expected {:?}", d.dim(), (h, w))));
            }
            channels.index_axis_mut(Axis(0), k + 1).assign(&d.mapv(|v| kind.scale(v)));
        }
        Self::new(channels, alpha)
    }

    pub fn channels(&self) -> &Array3<f64> {
        &self.channels
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len_of(Axis(0))
    }

    pub fn alpha(&self) -> usize {
        self.alpha
    }

    pub fn height(&self) -> usize {
        self.channels.len_of(Axis(1))
    }

    pub fn width(&self) -> usize {
        self.channels.len_of(Axis(2))
    }

    pub fn output_shape(&self) -> (usize, usize) {
        (self.alpha * self.height(), self.alpha * self.width())
    }

    /// Bicubic upsampling of channel 0 without clamping.
    pub fn skip(&self) -> Array2<f64> {
        let (h, w) = self.output_shape();
        rescale_bicubic(self.channels.index_axis(Axis(0), 0), h, w)
    }
}

/// Upsamples channel 0 and ignores the drivers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BicubicBaseline {
    pub alpha: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SrBackend {
    BicubicBaseline(BicubicBaseline),
    ConvModel(ConvModel),
}

impl SrBackend {
    pub fn alpha(&self) -> usize {
        match self {
            Self::BicubicBaseline(b) => b.alpha,
            Self::ConvModel(m) => m.topology().alpha,
        }
    }

    pub fn drivers(&self) -> &[DriverKind] {
        match self {
            Self::BicubicBaseline(_) => &[],
            Self::ConvModel(m) => m.drivers(),
        }
    }

    /// Output in `[0, 1]`, shape `αH × αW`.
    pub fn super_resolve(&self, input: &SrInput) -> Result<Array2<f64>> {
        if input.alpha() != self.alpha() {
            return Err(SrError::AlphaMismatch {
                got: input.alpha(),
                want: self.alpha(),
            });
        }
        let raw = match self {
            Self::BicubicBaseline(_) => input.skip(),
            Self::ConvModel(m) => m.forward(input)?,
        };
        Ok(raw.mapv(|v| v.clamp(0.0, 1.0)))
    }

    /// Back to emission units through the inverse transform.
    pub fn deploy(&self, transform: &TransformModel, input: &SrInput) -> Result<Array2<f64>> {
        Ok(transform.inverse_array(&self.super_resolve(input)?))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let (header, weights) = match self {
            Self::BicubicBaseline(b) => (ModelHeader::bicubic(b.alpha), Vec::new()),
            Self::ConvModel(m) => (m.header(), m.params().to_vec()),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(8 + json.len() + weights.len() * 8);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for w in &weights {
            out.extend_from_slice(&w.to_le_bytes());
        }
        std::fs::File::create(path)?.write_all(&out)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        if bytes.len() < 8 {
            return Err(SrError::BadModel("truncated header".into()));
        }
        let len = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes")) as usize;
        let body = bytes
            .get(8..8 + len)
            .ok_or_else(|| SrError::BadModel("truncated header".into()))?;
        let header: ModelHeader = serde_json::from_slice(body)?;
        if header.format != MODEL_FORMAT || header.version != MODEL_VERSION {
            return Err(SrError::BadModel(format!("unsupported format {} v{}", header.format, header.version)));
        }
        let blob = &bytes[8 + len..];
        if blob.len() != header.n_weights * 8 {
            return Err(SrError::BadModel(format!(
                "expected {} weights, found {} bytes",
                header.n_weights,
                blob.len()
            )));
        }
        let weights: Vec<f64> = blob
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        match header.backend {
            BackendKind::Bicubic => Ok(Self::BicubicBaseline(BicubicBaseline { alpha: header.topology.alpha })),
            BackendKind::Conv => Ok(Self::ConvModel(ConvModel::from_parts(
                header.topology,
                header.drivers,
                header.seed,
                weights,
            )?)),
        }
    }
}

const MODEL_FORMAT: &str = "isosr-sr";
const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum BackendKind {
    Bicubic,
    Conv,
}

/// JSON header of a model file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ModelHeader {
    format: String,
    version: u32,
    backend: BackendKind,
    topology: Topology,
    drivers: Vec<DriverKind>,
    seed: u64,
    n_weights: usize,
}

impl ModelHeader {
    fn bicubic(alpha: usize) -> Self {
        Self {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            backend: BackendKind::Bicubic,
            topology: Topology {
                in_channels: 1,
                hidden: Vec::new(),
                alpha,
            },
            drivers: Vec::new(),
            seed: 0,
            n_weights: 0,
        }
    }
}

impl ConvModel {
    fn header(&self) -> ModelHeader {
        ModelHeader {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            backend: BackendKind::Conv,
            topology: self.topology().clone(),
            drivers: self.drivers().to_vec(),
            seed: self.seed(),
            n_weights: self.params().len(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn ramp_input(h: usize, w: usize) -> SrInput {
        let ch = Array2::from_shape_fn((h, w), |(i, j)| 0.1 + 0.02 * i as f64 + 0.03 * j as f64);
        SrInput::stack(ch.view(), &[], 2).unwrap()
    }

    #[test]
    fn bicubic_constant_and_ramp() {
        let b = SrBackend::BicubicBaseline(BicubicBaseline { alpha: 2 });
        let c = SrInput::stack(Array2::from_elem((15, 15), 0.4).view(), &[], 2).unwrap();
        let out = b.super_resolve(&c).unwrap();
        assert_eq!(out.dim(), (30, 30));
        assert!(out.iter().all(|v| (v - 0.4).abs() < 1e-12));

        let out = b.super_resolve(&ramp_input(15, 15)).unwrap();
        for i in 3..27 {
            for j in 3..27 {
                // HR cell (i, j) sits at LR fractional index (i - 0.5) / 2
                let (fi, fj) = ((i as f64 - 0.5) / 2.0, (j as f64 - 0.5) / 2.0);
                let want = 0.1 + 0.02 * fi + 0.03 * fj;
                assert!((out[[i, j]] - want).abs() <= 1e-9, "({i}, {j})");
            }
        }
    }

    #[test]
    fn input_validation() {
        let bad = Array3::from_elem((1, 4, 4), 1.5);
        assert!(SrInput::new(bad, 2).is_err());
        let d = Array2::from_elem((3, 3), 50.0);
        let t = Array2::from_elem((4, 4), 0.5);
        assert!(SrInput::stack(t.view(), &[(DriverKind::Cl, d.view())], 2).is_err());
        let d = Array2::from_elem((4, 4), 50.0);
        let s = SrInput::stack(t.view(), &[(DriverKind::Cl, d.view())], 2).unwrap();
        assert_eq!(s.n_channels(), 2);
        assert_eq!(s.channels()[[1, 0, 0]], 0.5);
        let b = SrBackend::BicubicBaseline(BicubicBaseline { alpha: 3 });
        assert!(matches!(b.super_resolve(&s), Err(SrError::AlphaMismatch { .. })));
    }

    #[test]
    fn deploy_stays_in_fitted_range() {
        let t = TransformModel::fit((1..=500).map(|k| k as f64 * 1e-12), 50).unwrap();
        let b = SrBackend::BicubicBaseline(BicubicBaseline { alpha: 2 });
        let out = b.deploy(&t, &ramp_input(15, 15)).unwrap();
        assert!(out.iter().all(|&v| v >= t.min() && v <= t.max()));
    }

    #[test]
    fn model_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = ConvModel::new(Topology::new(2, 2), vec![DriverKind::Tc], 5);
        let backend = SrBackend::ConvModel(m);
        let path = dir.path().join("m.bin");
        backend.save(&path).unwrap();
        assert_eq!(SrBackend::load(&path).unwrap(), backend);

        let base = SrBackend::BicubicBaseline(BicubicBaseline { alpha: 2 });
        base.save(&path).unwrap();
        assert_eq!(SrBackend::load(&path).unwrap(), base);

        let bytes = std::fs::read(&path).unwrap();
        let len = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
        let header: serde_json::Value = serde_json::from_slice(&bytes[8..8 + len]).unwrap();
        assert_eq!(header["backend"], "bicubic");
        std::fs::write(&path, &bytes[..4]).unwrap();
        assert!(SrBackend::load(&path).is_err());
    }
}
