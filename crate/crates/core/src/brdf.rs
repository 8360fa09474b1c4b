//! The cosine-polynomial reflectance family M1..M6.
//!
//! Every model is a polynomial in cosines of the per-pixel angles with one
//! scalar coefficient per term, so radiance is *linear* in the coefficient
//! vector: `L = basis(angles) . coeffs`. That linearity is what makes the
//! per-pixel least-squares fit closed-form and the renderer adjoint trivial
//! (the gradient with respect to the coefficients is the basis vector
//! itself). Models form nesting chains by adding terms:
//! `M1 ⊂ M2 ⊂ {M3, M4, M5}`, while M6 reparameterizes in half/difference
//! angles and nests nothing.
//!
//! | model | terms                                                        |
//! |-------|--------------------------------------------------------------|
//! | M1    | a cos(th_i) + b cos(th_p)                                    |
//! | M2    | M1 + c                                                       |
//! | M3    | a cos(th_i) + b cos(th_p) + c cos(th_i) cos(th_p) + d        |
//! | M4    | a cos(th_i) + b cos(th_p) + c cos^2(th_i) + d                |
//! | M5    | a cos(th_i) + b cos(th_p) + c cos^2(th_p) + d                |
//! | M6    | a cos(th_h) + b cos(th_d) + c cos(phi_h) + d cos(phi_d)      |

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::photogeom::PixelAngles;
use crate::raster::{container, Raster, RasterError};

#[derive(Debug, Error)]
pub enum BrdfError {
    #[error("{model} takes {expected} coefficients, got {got}")]
    WrongArity { model: ModelKind, expected: usize, got: usize },
    #[error("coefficient map channel {channel} has mismatched dimensions")]
    ChannelMismatch { channel: usize },
    #[error("coefficient map contains non-finite values in channel {channel}")]
    NonFinite { channel: usize },
    #[error("unknown model name {0:?}")]
    UnknownModel(String),
    #[error(transparent)]
    Raster(#[from] RasterError),
}

pub type Result<T> = std::result::Result<T, BrdfError>;

/// Upper bound on coefficients across the family; fixed-size scratch arrays
/// use this so hot loops never allocate.
pub const MAX_PARAMS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    M1,
    M2,
    M3,
    M4,
    M5,
    M6,
}

impl ModelKind {
    pub const ALL: [ModelKind; 6] =
        [ModelKind::M1, ModelKind::M2, ModelKind::M3, ModelKind::M4, ModelKind::M5, ModelKind::M6];

    pub fn n_params(self) -> usize {
        match self {
            ModelKind::M1 => 2,
            ModelKind::M2 => 3,
            _ => 4,
        }
    }

    /// The model this one extends by exactly one term, if any. Fitting a
    /// model can never do worse than its nested reduction on the same data.
    pub fn nested(self) -> Option<ModelKind> {
        match self {
            ModelKind::M1 | ModelKind::M6 => None,
            ModelKind::M2 => Some(ModelKind::M1),
            ModelKind::M3 | ModelKind::M4 | ModelKind::M5 => Some(ModelKind::M2),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::M1 => "M1",
            ModelKind::M2 => "M2",
            ModelKind::M3 => "M3",
            ModelKind::M4 => "M4",
            ModelKind::M5 => "M5",
            ModelKind::M6 => "M6",
        }
    }

    /// Per-coefficient channel names, `n_params` of them.
    pub fn channel_names(self) -> &'static [&'static str] {
        &["a", "b", "c", "d"][..self.n_params()]
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = BrdfError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "M1" => Ok(ModelKind::M1),
            "M2" => Ok(ModelKind::M2),
            "M3" => Ok(ModelKind::M3),
            "M4" => Ok(ModelKind::M4),
            "M5" => Ok(ModelKind::M5),
            "M6" => Ok(ModelKind::M6),
            other => Err(BrdfError::UnknownModel(other.to_string())),
        }
    }
}

/// Basis vector at one pixel; slots past `n_params` are zero.
///
/// Because radiance is linear in the coefficients, this is simultaneously
/// the design-matrix row for least squares and the exact gradient of the
/// radiance with respect to the coefficient vector.
pub fn basis(model: ModelKind, a: &PixelAngles) -> [f64; MAX_PARAMS] {
    let ci = a.theta_i.cos();
    let cp = a.theta_p.cos();
    match model {
        ModelKind::M1 => [ci, cp, 0.0, 0.0],
        ModelKind::M2 => [ci, cp, 1.0, 0.0],
        ModelKind::M3 => [ci, cp, ci * cp, 1.0],
        ModelKind::M4 => [ci, cp, ci * ci, 1.0],
        ModelKind::M5 => [ci, cp, cp * cp, 1.0],
        ModelKind::M6 => [a.theta_h.cos(), a.theta_d.cos(), a.phi_h.cos(), a.phi_d.cos()],
    }
}

/// Gradient of the radiance with respect to the coefficients — the basis
/// vector, by linearity.
pub fn grad_coeffs(model: ModelKind, a: &PixelAngles) -> [f64; MAX_PARAMS] {
    basis(model, a)
}

/// Dot product of a basis row with a padded coefficient array.
#[inline]
pub fn eval_basis(basis: &[f64; MAX_PARAMS], coeffs: &[f64; MAX_PARAMS]) -> f64 {
    basis[0] * coeffs[0] + basis[1] * coeffs[1] + basis[2] * coeffs[2] + basis[3] * coeffs[3]
}

/// Radiance of `model` with the given coefficients at one pixel's angles.
pub fn eval(model: ModelKind, coeffs: &[f64], a: &PixelAngles) -> Result<f64> {
    if coeffs.len() != model.n_params() {
        return Err(BrdfError::WrongArity {
            model,
            expected: model.n_params(),
            got: coeffs.len(),
        });
    }
    let mut padded = [0.0; MAX_PARAMS];
    padded[..coeffs.len()].copy_from_slice(coeffs);
    Ok(eval_basis(&basis(model, a), &padded))
}

/// Per-pixel coefficient fields for one model: `n_params` aligned rasters.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientMap {
    model: ModelKind,
    channels: Vec<Raster<f64>>,
}

/// Header written next to the channel rasters.
#[derive(Debug, Serialize, Deserialize)]
struct CoeffMapHeader {
    model: ModelKind,
    channels: Vec<String>,
}

impl CoefficientMap {
    /// Validates channel count, matching dimensions, and finiteness.
    pub fn new(model: ModelKind, channels: Vec<Raster<f64>>) -> Result<Self> {
        if channels.len() != model.n_params() {
            return Err(BrdfError::WrongArity {
                model,
                expected: model.n_params(),
                got: channels.len(),
            });
        }
        for (i, ch) in channels.iter().enumerate() {
            if ch.dims() != channels[0].dims() {
                return Err(BrdfError::ChannelMismatch { channel: i });
            }
            if ch.as_slice().iter().any(|v| !v.is_finite()) {
                return Err(BrdfError::NonFinite { channel: i });
            }
        }
        Ok(Self { model, channels })
    }

    /// Spatially constant map.
    pub fn uniform(model: ModelKind, coeffs: &[f64], width: usize, height: usize) -> Result<Self> {
        if coeffs.len() != model.n_params() {
            return Err(BrdfError::WrongArity {
                model,
                expected: model.n_params(),
                got: coeffs.len(),
            });
        }
        let channels = coeffs.iter().map(|&c| Raster::filled(width, height, c)).collect();
        Self::new(model, channels)
    }

    pub fn model(&self) -> ModelKind {
        self.model
    }

    pub fn channels(&self) -> &[Raster<f64>] {
        &self.channels
    }

    pub fn dims(&self) -> (usize, usize) {
        self.channels[0].dims()
    }

    pub fn width(&self) -> usize {
        self.channels[0].width()
    }

    pub fn height(&self) -> usize {
        self.channels[0].height()
    }

    /// Padded coefficient vector at one pixel.
    #[inline]
    pub fn coeffs_at(&self, row: usize, col: usize) -> [f64; MAX_PARAMS] {
        let mut out = [0.0; MAX_PARAMS];
        for (slot, ch) in out.iter_mut().zip(&self.channels) {
            *slot = ch.at(row, col);
        }
        out
    }

    pub fn set_coeffs(&mut self, row: usize, col: usize, coeffs: &[f64]) {
        debug_assert_eq!(coeffs.len(), self.channels.len());
        for (ch, &v) in self.channels.iter_mut().zip(coeffs) {
            ch.set(row, col, v);
        }
    }

    /// Crops all channels to the same window.
    pub fn crop(&self, row0: usize, col0: usize, size: usize) -> Result<CoefficientMap> {
        let channels = self
            .channels
            .iter()
            .map(|ch| ch.crop(row0, col0, size))
            .collect::<std::result::Result<_, _>>()?;
        CoefficientMap::new(self.model, channels)
    }

    /// Writes `<base>.json` plus one `<base>.<channel>.sg2r` per channel.
    pub fn save(&self, dir: &Path, base: &str) -> Result<PathBuf> {
        let names = self.model.channel_names();
        for (name, ch) in names.iter().zip(&self.channels) {
            container::write_f32(&dir.join(format!("{base}.{name}.sg2r")), ch)?;
        }
        let header = CoeffMapHeader {
            model: self.model,
            channels: names.iter().map(|s| s.to_string()).collect(),
        };
        let path = dir.join(format!("{base}.json"));
        let text = serde_json::to_string_pretty(&header)
            .map_err(|e| RasterError::Json { path: path.display().to_string(), source: e })?;
        std::fs::write(&path, text)
            .map_err(|e| RasterError::Io { path: path.display().to_string(), source: e })?;
        Ok(path)
    }

    /// Loads a map written by [`CoefficientMap::save`]; `header_path` is the
    /// `<base>.json` file.
    pub fn load(header_path: &Path) -> Result<CoefficientMap> {
        let text = std::fs::read_to_string(header_path).map_err(|e| RasterError::Io {
            path: header_path.display().to_string(),
            source: e,
        })?;
        let header: CoeffMapHeader = serde_json::from_str(&text).map_err(|e| RasterError::Json {
            path: header_path.display().to_string(),
            source: e,
        })?;
        let base = header_path
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.strip_suffix(".json"))
            .unwrap_or_default()
            .to_string();
        let mut channels = Vec::with_capacity(header.channels.len());
        for name in &header.channels {
            let path = header_path.with_file_name(format!("{base}.{name}.sg2r"));
            channels.push(container::read_f32(&path)?);
        }
        CoefficientMap::new(header.model, channels)
    }
}
