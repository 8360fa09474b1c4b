//! Forward rendering of terrain radiance and its analytic adjoint.
//!
//! A pixel's radiance is the model basis dotted with that pixel's
//! coefficients, or exactly 0 where terrain blocks the sun. Radiance is
//! stored *unclamped* — negative model output survives into the loss so
//! fitting sees the true residual; clamping happens only on export for
//! display. Cast shadows are a hard visibility test, deliberately treated as
//! a constant in differentiation: the adjoint of the shading is exact for
//! the coefficient maps while shadow boundaries contribute nothing.
//!
//! Shadow test: from each surface point, march toward the sun sampling the
//! ray at half-pixel spacing (`t_k = k * gsd / 2`, `k >= 1`, absolute
//! positions, not accumulated steps); the point is shadowed iff the
//! bilinearly interpolated terrain height strictly exceeds the ray height at
//! some sample before the ray leaves the grid. Rays that climb above the
//! global maximum elevation can never be blocked afterward, which is the one
//! shortcut taken — it provably never changes the verdict.

use nalgebra::Vector3;
use rayon::prelude::*;
use thiserror::Error;

use crate::brdf::{self, BrdfError, CoefficientMap, ModelKind, MAX_PARAMS};
use crate::photogeom::{self, CameraPose, GeomError, ViewLightGeometry};
use crate::raster::{DemGrid, Raster};

#[derive(Debug, Error)]
pub enum RenderError {
    #[error(transparent)]
    Geometry(#[from] GeomError),
    #[error(transparent)]
    Brdf(#[from] BrdfError),
    #[error("coefficient map is {got:?} but terrain is {want:?}")]
    CoeffDimsMismatch { got: (usize, usize), want: (usize, usize) },
    #[error("image dimensions disagree: {0:?} vs {1:?}")]
    ImageDimsMismatch((usize, usize), (usize, usize)),
    #[error("no pixels available to the loss (all masked or shadowed)")]
    NoLossPixels,
}

pub type Result<T> = std::result::Result<T, RenderError>;

/// Loss behavior knobs.
#[derive(Debug, Clone, Copy)]
pub struct RenderOptions {
    /// Count shadowed pixels in the photometric loss (they compare 0 against
    /// the target). Off by default: shadowed pixels say nothing about the
    /// coefficients.
    pub include_shadowed_in_loss: bool,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self { include_shadowed_in_loss: false }
    }
}

/// One rendered view.
#[derive(Debug, Clone)]
pub struct RenderedImage {
    /// Unclamped radiance; exactly 0 where `shadow` is set.
    pub radiance: Raster<f64>,
    /// True where the sun is occluded.
    pub shadow: Raster<bool>,
    /// Geometry the image was shaded with, for reuse by fitting.
    pub geometry: std::sync::Arc<ViewLightGeometry>,
}

impl RenderedImage {
    /// Radiance clamped at zero, for image export only.
    pub fn display_radiance(&self) -> Raster<f64> {
        self.radiance.map(|v| v.max(0.0))
    }
}

/// Casts shadows for a fully valid DEM. `true` means shadowed.
///
/// A sun at or below the horizon (`z <= 0` after normalization) shadows
/// everything.
pub fn shadow_mask(dem: &DemGrid, sun_dir: &Vector3<f64>) -> Result<Raster<bool>> {
    if !dem.is_fully_valid() {
        return Err(GeomError::NotFullyValid.into());
    }
    let dir = sun_dir.try_normalize(1e-12).ok_or(GeomError::InvalidSunDir)?;
    let (w, h) = dem.elevations().dims();
    if dir.z <= 0.0 {
        return Ok(Raster::filled(w, h, true));
    }
    let z_max = dem.max_elevation().expect("fully valid DEM has elevations");
    let step = dem.gsd() / 2.0;
    let rows: Vec<Vec<bool>> = (0..h)
        .into_par_iter()
        .map(|r| {
            let mut row = Vec::with_capacity(w);
            for c in 0..w {
                let [x, y] = dem.world_xy(r, c);
                let z = dem.elevations().at(r, c);
                let mut shadowed = false;
                for k in 1.. {
                    let t = k as f64 * step;
                    let sz = z + t * dir.z;
                    if sz > z_max {
                        break; // above every possible occluder, forever
                    }
                    let Some(height) = dem.sample_elevation(x + t * dir.x, y + t * dir.y) else {
                        break; // left the grid
                    };
                    if height > sz {
                        shadowed = true;
                        break;
                    }
                }
                row.push(shadowed);
            }
            row
        })
        .collect();
    let mut out = Raster::filled(w, h, false);
    for (r, row) in rows.into_iter().enumerate() {
        for (c, v) in row.into_iter().enumerate() {
            out.set(r, c, v);
        }
    }
    Ok(out)
}

/// Precomputed per-pixel basis rows and shadow mask for one (view, model)
/// pair — the workhorse of every fitting loop. Forward renders and adjoint
/// passes through a `ViewBasis` are cheap dot products.
#[derive(Debug, Clone)]
pub struct ViewBasis {
    model: ModelKind,
    basis: Raster<[f64; MAX_PARAMS]>,
    shadow: Raster<bool>,
}

impl ViewBasis {
    pub fn new(geom: &ViewLightGeometry, shadow: Raster<bool>, model: ModelKind) -> Result<Self> {
        if geom.dims() != shadow.dims() {
            return Err(RenderError::ImageDimsMismatch(geom.dims(), shadow.dims()));
        }
        let (w, h) = geom.dims();
        let mut basis = Raster::filled(w, h, [0.0; MAX_PARAMS]);
        for r in 0..h {
            for c in 0..w {
                basis.set(r, c, brdf::basis(model, &geom.angles_at(r, c)));
            }
        }
        Ok(Self { model, basis, shadow })
    }

    pub fn model(&self) -> ModelKind {
        self.model
    }

    pub fn dims(&self) -> (usize, usize) {
        self.basis.dims()
    }

    pub fn shadow(&self) -> &Raster<bool> {
        &self.shadow
    }

    pub fn basis_at(&self, row: usize, col: usize) -> [f64; MAX_PARAMS] {
        self.basis.at(row, col)
    }

    pub fn is_shadowed(&self, row: usize, col: usize) -> bool {
        self.shadow.at(row, col)
    }

    /// Shades every pixel: basis . coeffs, 0 where shadowed.
    pub fn forward(&self, coeffs: &CoefficientMap) -> Result<Raster<f64>> {
        if coeffs.dims() != self.dims() {
            return Err(RenderError::CoeffDimsMismatch { got: coeffs.dims(), want: self.dims() });
        }
        if coeffs.model() != self.model {
            return Err(BrdfError::WrongArity {
                model: self.model,
                expected: self.model.n_params(),
                got: coeffs.model().n_params(),
            }
            .into());
        }
        let (w, h) = self.dims();
        let mut out = Raster::filled(w, h, 0.0);
        for r in 0..h {
            for c in 0..w {
                if !self.shadow.at(r, c) {
                    out.set(r, c, brdf::eval_basis(&self.basis.at(r, c), &coeffs.coeffs_at(r, c)));
                }
            }
        }
        Ok(out)
    }

    /// Adjoint of [`ViewBasis::forward`]: pulls a gradient image back to one
    /// gradient raster per coefficient channel. Shadowed pixels contribute
    /// nothing (their radiance is constant in the coefficients).
    pub fn backward(&self, image_grad: &Raster<f64>) -> Result<Vec<Raster<f64>>> {
        if image_grad.dims() != self.dims() {
            return Err(RenderError::ImageDimsMismatch(image_grad.dims(), self.dims()));
        }
        let (w, h) = self.dims();
        let n = self.model.n_params();
        let mut grads = vec![Raster::filled(w, h, 0.0); n];
        for r in 0..h {
            for c in 0..w {
                if self.shadow.at(r, c) {
                    continue;
                }
                let g = image_grad.at(r, c);
                let basis = self.basis.at(r, c);
                for (k, grad) in grads.iter_mut().enumerate() {
                    grad.set(r, c, g * basis[k]);
                }
            }
        }
        Ok(grads)
    }

    /// Restricts the view to a square window.
    pub fn crop(&self, row0: usize, col0: usize, size: usize) -> Result<ViewBasis> {
        Ok(ViewBasis {
            model: self.model,
            basis: self.basis.crop(row0, col0, size).map_err(BrdfError::from)?,
            shadow: self.shadow.crop(row0, col0, size).map_err(BrdfError::from)?,
        })
    }
}

/// Renders one view of a fully valid DEM under a distant sun.
pub fn render(
    dem: &DemGrid,
    coeffs: &CoefficientMap,
    camera: &CameraPose,
    sun_dir: &Vector3<f64>,
) -> Result<RenderedImage> {
    if coeffs.dims() != dem.elevations().dims() {
        return Err(RenderError::CoeffDimsMismatch {
            got: coeffs.dims(),
            want: dem.elevations().dims(),
        });
    }
    let geometry = photogeom::view_light_field(dem, camera, sun_dir)?;
    let shadow = shadow_mask(dem, sun_dir)?;
    let view = ViewBasis::new(&geometry, shadow, coeffs.model())?;
    let radiance = view.forward(coeffs)?;
    Ok(RenderedImage {
        radiance,
        shadow: view.shadow,
        geometry: std::sync::Arc::new(geometry),
    })
}

/// Mean-squared photometric error and the residuals behind it.
#[derive(Debug, Clone)]
pub struct LossReport {
    pub mse: f64,
    /// `rendered - target` on counted pixels, 0 elsewhere.
    pub residuals: Raster<f64>,
    /// Pixels that entered the mean.
    pub n_pixels: usize,
}

impl LossReport {
    /// d(mse)/d(rendered): `2 * residual / n` on counted pixels.
    pub fn image_gradient(&self) -> Raster<f64> {
        let n = self.n_pixels as f64;
        self.residuals.map(|r| 2.0 * r / n)
    }
}

/// MSE between a rendered radiance raster and a target.
///
/// Counts pixels that are valid (per the optional mask) and unshadowed —
/// shadowed pixels join only with `include_shadowed_in_loss`. Fails if
/// nothing is countable.
pub fn photometric_loss(
    rendered: &Raster<f64>,
    shadow: &Raster<bool>,
    target: &Raster<f64>,
    valid: Option<&Raster<bool>>,
    opts: &RenderOptions,
) -> Result<LossReport> {
    if rendered.dims() != target.dims() {
        return Err(RenderError::ImageDimsMismatch(rendered.dims(), target.dims()));
    }
    if rendered.dims() != shadow.dims() {
        return Err(RenderError::ImageDimsMismatch(rendered.dims(), shadow.dims()));
    }
    if let Some(v) = valid {
        if v.dims() != rendered.dims() {
            return Err(RenderError::ImageDimsMismatch(v.dims(), rendered.dims()));
        }
    }
    let (w, h) = rendered.dims();
    let mut residuals = Raster::filled(w, h, 0.0);
    let mut sum_sq = 0.0;
    let mut n = 0usize;
    for r in 0..h {
        for c in 0..w {
            if let Some(v) = valid {
                if !v.at(r, c) {
                    continue;
                }
            }
            if shadow.at(r, c) && !opts.include_shadowed_in_loss {
                continue;
            }
            let res = rendered.at(r, c) - target.at(r, c);
            residuals.set(r, c, res);
            sum_sq += res * res;
            n += 1;
        }
    }
    if n == 0 {
        return Err(RenderError::NoLossPixels);
    }
    Ok(LossReport { mse: sum_sq / n as f64, residuals, n_pixels: n })
}

impl RenderedImage {
    /// [`photometric_loss`] against this image's radiance and shadow mask.
    pub fn loss(
        &self,
        target: &Raster<f64>,
        valid: Option<&Raster<bool>>,
        opts: &RenderOptions,
    ) -> Result<LossReport> {
        photometric_loss(&self.radiance, &self.shadow, target, valid, opts)
    }
}
