//! Coefficient estimation: least squares, gradient descent, and a learned
//! predictor.
//!
//! Three routes from images to coefficient maps, in increasing generality:
//!
//! * [`fit::fit_pixel_ls`] / [`fit::fit_map_ls`] — closed-form per-pixel
//!   least squares across views; exact on noise-free data.
//! * [`fit::fit_map_gd`] — gradient descent through the differentiable
//!   renderer; same optimum, but exercises the adjoint end to end.
//! * [`train::train_predictor`] — a convolutional predictor that maps an
//!   elevation window to coefficients, trained against rendered targets
//!   only (single-view inference, no per-scene optimization).

pub mod checkpoint;
pub mod dataset;
pub mod fit;
pub mod nn;
pub mod optim;
pub mod train;
pub mod unet;

use std::path::PathBuf;

use thiserror::Error;

use crate::brdf::{BrdfError, ModelKind};
use crate::photogeom::GeomError;
use crate::raster::RasterError;
use crate::render::RenderError;

pub use dataset::{PreparedDataset, PreparedSample};
pub use fit::{fit_map_gd, fit_map_ls, fit_pixel_ls, FitDiagnostics, GdConfig, GdFit, LsFit, PixelObservation};
pub use optim::OptimKind;
pub use train::{
    compare_models, evaluate, predict_coeffs, train_predictor, write_loss_curves,
    ComparisonReport, ComparisonRow, EpochStats, TrainConfig, TrainOutcome,
};
pub use unet::{PredictorNet, DEFAULT_WIDTHS};

#[derive(Debug, Error)]
pub enum InferError {
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Brdf(#[from] BrdfError),
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json error at {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("bad checkpoint {path}: {reason}")]
    CheckpointFormat { path: PathBuf, reason: String },
    #[error("dataset at {path} has no samples")]
    EmptyDataset { path: PathBuf },
    #[error("bad manifest: {reason}")]
    BadManifest { reason: String },
    #[error("need {needed} unshadowed observations, got {got} (rank {rank})")]
    UnderObserved { needed: usize, got: usize, rank: usize },
    #[error(
        "pixel ({row}, {col}) is under-observed: need {needed}, got {got} (rank {rank})"
    )]
    PixelUnderObserved { row: usize, col: usize, needed: usize, got: usize, rank: usize },
    #[error("optimization diverged at step {step} (loss {loss})")]
    Diverged { step: usize, loss: f64 },
    #[error("loss became non-finite at step {step}")]
    NonFiniteLoss { step: usize },
    #[error("at least one view is required")]
    NoViews,
    #[error("no unshadowed pixels to fit against")]
    NoUsablePixels,
    #[error("expected model {want}, got {got}")]
    ModelMismatch { want: ModelKind, got: ModelKind },
    #[error("expected dimensions {want:?}, got {got:?}")]
    DimsMismatch { want: (usize, usize), got: (usize, usize) },
    #[error("training became unstable (non-finite loss) at iteration {iteration}")]
    TrainingInstability { iteration: usize },
    #[error("no {split} samples")]
    NoSamples { split: &'static str },
    #[error("bad training config: {reason}")]
    BadTrainConfig { reason: String },
}
