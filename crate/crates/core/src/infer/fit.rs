//! Coefficient estimation from rendered or captured images.
//!
//! Radiance is linear in the reflectance coefficients, so per-pixel recovery
//! from multiple views is a small linear least-squares problem; the
//! gradient-descent route optimizes whole coefficient maps through the same
//! forward model and exists to exercise and validate the adjoint.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::brdf::{CoefficientMap, ModelKind, MAX_PARAMS};
use crate::infer::optim::{OptimKind, Optimizer};
use crate::infer::InferError;
use crate::raster::Raster;
use crate::render::ViewBasis;

/// One view's contribution to a single pixel's linear system.
#[derive(Debug, Clone, Copy)]
pub struct PixelObservation {
    /// Basis vector (gradient of radiance w.r.t. coefficients) at the pixel.
    pub basis: [f64; MAX_PARAMS],
    /// Observed radiance.
    pub target: f64,
    /// Shadowed pixels carry no photometric information and are skipped.
    pub shadowed: bool,
}

/// Result of a per-pixel least-squares solve.
#[derive(Debug, Clone)]
pub struct LsFit {
    pub coeffs: Vec<f64>,
    /// Root-mean-square residual over the used observations.
    pub residual_rmse: f64,
    /// Condition number of the design matrix (singular value ratio).
    pub condition: f64,
    /// Observations actually used (unshadowed).
    pub n_used: usize,
}

/// Condition number above which the normal equations are abandoned for a
/// singular-value solve of the design matrix itself.
const CONDITION_CUTOFF: f64 = 1e8;

/// Fits one pixel's coefficients from its observations across views.
///
/// The fast path solves the normal equations by Cholesky; ill-conditioned or
/// non-positive-definite systems fall back to an SVD of the design matrix.
/// Rank below the parameter count is an [`InferError::UnderObserved`].
pub fn fit_pixel_ls(model: ModelKind, obs: &[PixelObservation]) -> Result<LsFit, InferError> {
    let n = model.n_params();
    let used: Vec<&PixelObservation> = obs.iter().filter(|o| !o.shadowed).collect();
    let m = used.len();
    if m < n {
        return Err(InferError::UnderObserved { needed: n, got: m, rank: m.min(n) });
    }
    let a = DMatrix::from_fn(m, n, |r, c| used[r].basis[c]);
    let y = DVector::from_fn(m, |r, _| used[r].target);

    let svd = a.clone().svd(true, true);
    let sigma_max = svd.singular_values.max();
    let sigma_min = svd.singular_values.min();
    let rank = svd.singular_values.iter().filter(|&&s| s > 1e-12 * sigma_max).count();
    if rank < n {
        return Err(InferError::UnderObserved { needed: n, got: m, rank });
    }
    let condition = sigma_max / sigma_min;

    let coeffs = if condition <= CONDITION_CUTOFF {
        let gram = a.transpose() * &a;
        let rhs = a.transpose() * &y;
        match Cholesky::new(gram) {
            Some(chol) => chol.solve(&rhs),
            // Numerically non-PD despite the rank check: defer to the SVD.
            None => svd.solve(&y, 1e-12 * sigma_max).expect("svd solve with computed u/v"),
        }
    } else {
        svd.solve(&y, 1e-12 * sigma_max).expect("svd solve with computed u/v")
    };

    let residual = &a * &coeffs - &y;
    let residual_rmse = (residual.norm_squared() / m as f64).sqrt();
    Ok(LsFit { coeffs: coeffs.iter().copied().collect(), residual_rmse, condition, n_used: m })
}

/// Per-pixel diagnostics from a map-wide least-squares fit.
#[derive(Debug, Clone)]
pub struct FitDiagnostics {
    pub condition: Raster<f64>,
    pub n_used: Raster<f64>,
    pub residual_rmse: Raster<f64>,
}

/// Fits every pixel of a scene independently from its views.
///
/// All views must share the scene's dimensions and model. A pixel without
/// enough unshadowed observations fails the whole fit — callers control view
/// geometry, so starving a pixel is a setup bug worth surfacing loudly.
pub fn fit_map_ls(
    views: &[(&ViewBasis, &Raster<f64>)],
) -> Result<(CoefficientMap, FitDiagnostics), InferError> {
    let (model, width, height) = check_views(views)?;
    let n = model.n_params();
    let mut channels = vec![Raster::filled(width, height, 0.0); n];
    let mut condition = Raster::filled(width, height, 0.0);
    let mut n_used = Raster::filled(width, height, 0.0);
    let mut residual = Raster::filled(width, height, 0.0);
    let mut obs = Vec::with_capacity(views.len());
    for row in 0..height {
        for col in 0..width {
            obs.clear();
            for (vb, target) in views {
                obs.push(PixelObservation {
                    basis: vb.basis_at(row, col),
                    target: target.at(row, col),
                    shadowed: vb.is_shadowed(row, col),
                });
            }
            let fit = fit_pixel_ls(model, &obs).map_err(|e| match e {
                InferError::UnderObserved { needed, got, rank } => {
                    InferError::PixelUnderObserved { row, col, needed, got, rank }
                }
                other => other,
            })?;
            for (k, ch) in channels.iter_mut().enumerate() {
                ch.set(row, col, fit.coeffs[k]);
            }
            condition.set(row, col, fit.condition);
            n_used.set(row, col, fit.n_used as f64);
            residual.set(row, col, fit.residual_rmse);
        }
    }
    let map = CoefficientMap::new(model, channels)?;
    Ok((map, FitDiagnostics { condition, n_used, residual_rmse: residual }))
}

/// Settings for [`fit_map_gd`].
#[derive(Debug, Clone)]
pub struct GdConfig {
    pub steps: usize,
    pub learning_rate: f64,
    pub optimizer: OptimKind,
}

impl Default for GdConfig {
    fn default() -> Self {
        Self { steps: 500, learning_rate: 0.05, optimizer: OptimKind::Adam }
    }
}

/// Outcome of a gradient-descent map fit.
#[derive(Debug, Clone)]
pub struct GdFit {
    pub coeffs: CoefficientMap,
    /// Mean photometric MSE across views, one entry per step.
    pub loss_trajectory: Vec<f64>,
}

/// Fits a coefficient map by gradient descent through the differentiable
/// forward model, averaging the photometric loss over all views.
///
/// Starts from `init` when given, otherwise from all-zero coefficients.
/// Ten consecutive loss increases abort with [`InferError::Diverged`]; a
/// non-finite loss aborts immediately.
pub fn fit_map_gd(
    views: &[(&ViewBasis, &Raster<f64>)],
    init: Option<CoefficientMap>,
    cfg: &GdConfig,
) -> Result<GdFit, InferError> {
    let (model, width, height) = check_views(views)?;
    let n = model.n_params();
    let mut channels = match init {
        Some(map) => {
            if map.model() != model {
                return Err(InferError::ModelMismatch { want: model, got: map.model() });
            }
            if map.dims() != (width, height) {
                return Err(InferError::DimsMismatch {
                    want: (width, height),
                    got: map.dims(),
                });
            }
            map.channels().to_vec()
        }
        None => vec![Raster::filled(width, height, 0.0); n],
    };

    let n_px = width * height;
    let mut optims: Vec<Optimizer> =
        (0..n).map(|_| Optimizer::new(cfg.optimizer, cfg.learning_rate, n_px)).collect();
    let mut trajectory = Vec::with_capacity(cfg.steps);
    let mut rising = 0usize;

    for step in 0..cfg.steps {
        // Forward + accumulate gradients over views.
        let mut grads = vec![vec![0.0; n_px]; n];
        let mut loss_sum = 0.0;
        for (vb, target) in views {
            let map = CoefficientMap::new(model, channels.clone())?;
            let rendered = vb.forward(&map)?;
            let mut n_loss_px = 0usize;
            let mut sq = 0.0;
            let mut image_grad = Raster::filled(width, height, 0.0);
            for row in 0..height {
                for col in 0..width {
                    if vb.is_shadowed(row, col) {
                        continue;
                    }
                    let r = rendered.at(row, col) - target.at(row, col);
                    sq += r * r;
                    image_grad.set(row, col, r);
                    n_loss_px += 1;
                }
            }
            if n_loss_px == 0 {
                return Err(InferError::NoUsablePixels);
            }
            loss_sum += sq / n_loss_px as f64;
            let scale = 2.0 / (n_loss_px as f64 * views.len() as f64);
            let image_grad = image_grad.map(|v| v * scale);
            for (k, g) in vb.backward(&image_grad)?.into_iter().enumerate() {
                for (acc, v) in grads[k].iter_mut().zip(g.as_slice()) {
                    *acc += v;
                }
            }
        }
        let loss = loss_sum / views.len() as f64;
        if !loss.is_finite() {
            return Err(InferError::NonFiniteLoss { step });
        }
        if let Some(&prev) = trajectory.last() {
            rising = if loss > prev { rising + 1 } else { 0 };
            if rising >= 10 {
                return Err(InferError::Diverged { step, loss });
            }
        }
        trajectory.push(loss);

        for (k, ch) in channels.iter_mut().enumerate() {
            optims[k].step(ch.as_mut_slice(), &grads[k]);
        }
    }

    Ok(GdFit { coeffs: CoefficientMap::new(model, channels)?, loss_trajectory: trajectory })
}

/// Validates that all views agree on model and dimensions.
fn check_views(
    views: &[(&ViewBasis, &Raster<f64>)],
) -> Result<(ModelKind, usize, usize), InferError> {
    let (first, _) = views.first().ok_or(InferError::NoViews)?;
    let model = first.model();
    let (width, height) = first.dims();
    for (vb, target) in views {
        if vb.model() != model {
            return Err(InferError::ModelMismatch { want: model, got: vb.model() });
        }
        if vb.dims() != (width, height) || target.dims() != (width, height) {
            return Err(InferError::DimsMismatch { want: (width, height), got: target.dims() });
        }
    }
    Ok((model, width, height))
}
