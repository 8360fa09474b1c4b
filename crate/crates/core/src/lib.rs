//! Differentiable heightfield rendering and spatially varying BRDF estimation.
//!
//! The crate turns a digital elevation model (DEM) plus per-pixel reflectance
//! coefficients into rendered radiance images, and goes the other way: given
//! observed images of known terrain under known sun/camera geometry it
//! recovers the coefficient maps, either by closed-form least squares, by
//! gradient descent through the renderer's analytic adjoint, or with a small
//! convolutional predictor trained on synthetic terrain.
//!
//! Module layout mirrors the data flow:
//!
//! * [`raster`]    — grids, DEM container I/O, crop sampling, dataset splits
//! * [`photogeom`] — surface normals, view/light geometry, angle fields
//! * [`brdf`]      — the cosine-polynomial reflectance family M1..M6
//! * [`render`]    — shadow masking, forward shading, analytic adjoint
//! * [`synth`]     — fractal terrain + coefficient field + view synthesis
//! * [`infer`]     — least-squares and gradient fitting, CNN predictor
//! * [`metrics`]   — PSNR / SSIM / baselines and evaluation reports
//! * [`cli`]       — the `svbrdf` command-line front end
//!
//! All in-memory computation is `f64`; on-disk rasters are `f32`.

pub mod brdf;
pub mod cli;
pub mod infer;
pub mod metrics;
pub mod photogeom;
pub mod raster;
pub mod render;
pub mod seed;
pub mod synth;
