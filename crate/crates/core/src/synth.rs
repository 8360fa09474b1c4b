//! Synthetic scenes: fractal terrain, coefficient fields, rendered views,
//! and dataset emission.
//!
//! Terrain is spectral-synthesis fractional Brownian motion: white Gaussian
//! noise shaped in the frequency domain by `|f|^(-beta/2)` and transformed
//! back, then rescaled to the requested peak-to-peak relief. Coefficient
//! fields mix smoothed noise with a slope-derived feature so reflectance
//! correlates with geometry the way real regolith does. Views draw a mix of
//! orthographic-nadir and tilted perspective cameras plus a sun position per
//! view, and render ground-truth radiance with the forward model.
//!
//! Everything generated here is quantized to `f32`-representable values
//! before use, so a dataset re-rendered from its on-disk artifacts
//! reproduces the stored targets bit for bit.

use std::f64::consts::TAU;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::brdf::{BrdfError, CoefficientMap, ModelKind};
use crate::photogeom::{self, CameraPose, GeomError, Projection};
use crate::raster::container::{self, MetaSidecar};
use crate::raster::manifest::{self, SampleManifest};
use crate::raster::sampling::{self, Split, SplitRatios};
use crate::raster::{DemGrid, Raster, RasterError};
use crate::render::{self, RenderError, RenderedImage};
use crate::seed;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid scene configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Geometry(#[from] GeomError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Brdf(#[from] BrdfError),
    #[error(transparent)]
    Raster(#[from] RasterError),
}

pub type Result<T> = std::result::Result<T, SynthError>;

/// One coefficient channel's spatial field: `mean + amplitude * feature`,
/// where the feature mixes correlated noise and normalized terrain slope.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CoeffChannelSpec {
    pub mean: f64,
    /// Peak feature excursion; the feature itself is bounded by 1 in
    /// absolute value, so the channel stays within `mean +- amplitude`.
    pub amplitude: f64,
    /// Gaussian smoothing length of the noise component, in meters.
    pub correlation_length_m: f64,
}

/// How crops are cut from generated scenes.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CropPlan {
    pub size_px: usize,
    /// Total crops across all scenes and views.
    pub count: usize,
    /// Geographic tile edge for split assignment, meters.
    pub tile_size_m: f64,
    pub ratios: SplitRatios,
}

impl Default for CropPlan {
    fn default() -> Self {
        Self { size_px: 32, count: 128, tile_size_m: 320.0, ratios: SplitRatios::default() }
    }
}

/// Full recipe for one synthetic scene.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    pub dem_size: usize,
    pub gsd: f64,
    /// Peak-to-peak elevation range, meters.
    pub relief_amplitude: f64,
    /// Power-spectrum slope beta; larger is smoother terrain.
    pub spectral_exponent: f64,
    pub origin: [f64; 2],
    pub model: ModelKind,
    /// One spec per model coefficient.
    pub channels: Vec<CoeffChannelSpec>,
    /// Noise-vs-slope mix in the coefficient feature: 1 = pure noise,
    /// 0 = a deterministic function of terrain slope.
    pub noise_weight: f64,
    pub n_views: usize,
    /// Fraction of views taken straight down with an orthographic camera.
    pub nadir_fraction: f64,
    pub oblique_fov_deg: f64,
    pub oblique_tilt_range_deg: (f64, f64),
    pub sun_elevation_range_deg: (f64, f64),
    pub sun_azimuth_range_deg: (f64, f64),
    /// Additive Gaussian noise on target images (zero keeps targets equal to
    /// the rendered radiance).
    pub image_noise_sigma: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            dem_size: 128,
            gsd: 5.0,
            relief_amplitude: 30.0,
            spectral_exponent: 2.4,
            origin: [0.0, 0.0],
            model: ModelKind::M2,
            channels: default_channels(ModelKind::M2, 5.0),
            noise_weight: 0.5,
            n_views: 4,
            nadir_fraction: 0.7,
            oblique_fov_deg: 45.0,
            oblique_tilt_range_deg: (20.0, 35.0),
            sun_elevation_range_deg: (15.0, 55.0),
            sun_azimuth_range_deg: (0.0, 360.0),
            image_noise_sigma: 0.0,
            seed: 0,
        }
    }
}

/// Plausible regolith-like defaults: a dominant incidence term, a weaker
/// phase term, small higher-order terms, all varying on a 10-pixel scale.
pub fn default_channels(model: ModelKind, gsd: f64) -> Vec<CoeffChannelSpec> {
    let means = [0.7, 0.25, 0.08, 0.05];
    (0..model.n_params())
        .map(|i| CoeffChannelSpec {
            mean: means[i],
            amplitude: 0.3 * means[i],
            correlation_length_m: 10.0 * gsd,
        })
        .collect()
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(SynthError::InvalidConfig(msg.to_string()));
        if self.dem_size < 2 {
            return bad("dem_size must be at least 2");
        }
        if !(self.gsd.is_finite() && self.gsd > 0.0) {
            return bad("gsd must be finite and positive");
        }
        if !(self.relief_amplitude.is_finite() && self.relief_amplitude >= 0.0) {
            return bad("relief_amplitude must be finite and non-negative");
        }
        if !(self.spectral_exponent.is_finite() && self.spectral_exponent >= 0.0) {
            return bad("spectral_exponent must be finite and non-negative");
        }
        if self.channels.len() != self.model.n_params() {
            return bad("one channel spec per model coefficient required");
        }
        for spec in &self.channels {
            if !(spec.mean.is_finite()
                && spec.amplitude.is_finite()
                && spec.amplitude >= 0.0
                && spec.correlation_length_m.is_finite()
                && spec.correlation_length_m >= 0.0)
            {
                return bad("channel specs must be finite with non-negative amplitude and length");
            }
        }
        if !(0.0..=1.0).contains(&self.noise_weight) {
            return bad("noise_weight must lie in [0, 1]");
        }
        if self.n_views == 0 {
            return bad("n_views must be positive");
        }
        if !(0.0..=1.0).contains(&self.nadir_fraction) {
            return bad("nadir_fraction must lie in [0, 1]");
        }
        if !(self.oblique_fov_deg > 0.0 && self.oblique_fov_deg < 180.0) {
            return bad("oblique_fov_deg must lie in (0, 180)");
        }
        let (tilt_lo, tilt_hi) = self.oblique_tilt_range_deg;
        if !(0.0..90.0).contains(&tilt_lo) || !(0.0..90.0).contains(&tilt_hi) || tilt_lo > tilt_hi {
            return bad("oblique tilt range must be ordered within [0, 90)");
        }
        let (elev_lo, elev_hi) = self.sun_elevation_range_deg;
        if !(elev_lo > 0.0 && elev_hi <= 90.0 && elev_lo <= elev_hi) {
            return bad("sun elevation range must be ordered within (0, 90]");
        }
        let (az_lo, az_hi) = self.sun_azimuth_range_deg;
        if !(az_lo.is_finite() && az_hi.is_finite() && az_lo <= az_hi) {
            return bad("sun azimuth range must be ordered and finite");
        }
        if !(self.image_noise_sigma.is_finite() && self.image_noise_sigma >= 0.0) {
            return bad("image_noise_sigma must be finite and non-negative");
        }
        Ok(())
    }

    /// World edge length of the generated DEM, meters.
    pub fn extent_m(&self) -> f64 {
        self.dem_size as f64 * self.gsd
    }
}

/// One rendered view with its (possibly noisy) training target.
#[derive(Debug, Clone)]
pub struct SceneView {
    pub camera: CameraPose,
    pub sun_dir: Vector3<f64>,
    pub image: RenderedImage,
    /// Radiance plus optional additive noise; equals `image.radiance`
    /// when `image_noise_sigma` is zero.
    pub target: Raster<f64>,
}

/// A complete synthetic scene: terrain, true coefficients, rendered views.
#[derive(Debug, Clone)]
pub struct GroundTruthBundle {
    pub dem: DemGrid,
    pub coeffs: CoefficientMap,
    pub views: Vec<SceneView>,
}

/// Quantizes to the nearest `f32`, so later container round trips are exact.
fn quantize_f32(raster: &Raster<f64>) -> Raster<f64> {
    raster.map(|v| v as f32 as f64)
}

fn fft2(data: &mut [Complex<f64>], n: usize, planner: &mut FftPlanner<f64>, inverse: bool) {
    let fft = if inverse { planner.plan_fft_inverse(n) } else { planner.plan_fft_forward(n) };
    for row in data.chunks_exact_mut(n) {
        fft.process(row);
    }
    // Columns via transpose-rows-transpose; the grid is square.
    for r in 0..n {
        for c in r + 1..n {
            data.swap(r * n + c, c * n + r);
        }
    }
    for row in data.chunks_exact_mut(n) {
        fft.process(row);
    }
    for r in 0..n {
        for c in r + 1..n {
            data.swap(r * n + c, c * n + r);
        }
    }
}

/// Fractional-Brownian-motion terrain by spectral synthesis.
///
/// White Gaussian noise is shaped by `|f|^(-beta/2)` (DC removed), inverse
/// transformed, recentered, and scaled to the exact peak-to-peak relief.
/// Deterministic per config seed; any grid size works.
pub fn generate_dem(cfg: &SynthConfig) -> Result<DemGrid> {
    cfg.validate()?;
    let n = cfg.dem_size;
    let mut rng = seed::stream_rng(cfg.seed, "dem");
    if cfg.relief_amplitude == 0.0 {
        let flat = Raster::filled(n, n, 0.0);
        return Ok(DemGrid::fully_valid(flat, cfg.gsd, cfg.origin)?);
    }
    let mut field: Vec<Complex<f64>> =
        (0..n * n).map(|_| Complex::new(seed::standard_normal(&mut rng), 0.0)).collect();
    let mut planner = FftPlanner::new();
    fft2(&mut field, n, &mut planner, false);
    // Wrapped frequency in cycles per sample for bin k of an n-point FFT.
    let freq = |k: usize| -> f64 { k.min(n - k) as f64 / n as f64 };
    for ky in 0..n {
        for kx in 0..n {
            let f = freq(kx).hypot(freq(ky));
            let gain = if f > 0.0 { f.powf(-cfg.spectral_exponent / 2.0) } else { 0.0 };
            field[ky * n + kx] *= gain;
        }
    }
    fft2(&mut field, n, &mut planner, true);
    let scale = 1.0 / (n * n) as f64;
    let mut z = Raster::from_vec(n, n, field.iter().map(|c| c.re * scale).collect())?;
    let (lo, hi) = z.finite_min_max().expect("synthesized field is finite");
    let ptp = hi - lo;
    if ptp > 0.0 {
        let gain = cfg.relief_amplitude / ptp;
        // Center the range on zero: min maps to -relief/2, max to +relief/2.
        z = z.map(|v| (v - lo) * gain - cfg.relief_amplitude / 2.0);
    }
    Ok(DemGrid::fully_valid(quantize_f32(&z), cfg.gsd, cfg.origin)?)
}

/// Separable Gaussian blur with clamp-to-edge borders; identity for
/// non-positive sigma.
pub fn blur_gaussian(raster: &Raster<f64>, sigma_px: f64) -> Raster<f64> {
    if sigma_px <= 0.0 {
        return raster.clone();
    }
    let radius = (3.0 * sigma_px).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-0.5 * (i as f64 / sigma_px).powi(2)).exp())
        .collect();
    let norm: f64 = kernel.iter().sum();
    let kernel: Vec<f64> = kernel.iter().map(|k| k / norm).collect();
    let (w, h) = raster.dims();
    let clamp = |v: isize, hi: usize| v.clamp(0, hi as isize - 1) as usize;
    let mut horiz = Raster::filled(w, h, 0.0);
    for r in 0..h {
        for c in 0..w {
            let acc: f64 = kernel
                .iter()
                .enumerate()
                .map(|(i, k)| k * raster.at(r, clamp(c as isize + i as isize - radius, w)))
                .sum();
            horiz.set(r, c, acc);
        }
    }
    let mut out = Raster::filled(w, h, 0.0);
    for r in 0..h {
        for c in 0..w {
            let acc: f64 = kernel
                .iter()
                .enumerate()
                .map(|(i, k)| k * horiz.at(clamp(r as isize + i as isize - radius, h), c))
                .sum();
            out.set(r, c, acc);
        }
    }
    out
}

/// Zero-mean, max-abs-1 normalization; a (near-)constant field becomes zero.
fn normalize_feature(raster: &Raster<f64>) -> Raster<f64> {
    let mean = raster.mean();
    let centered = raster.map(|v| v - mean);
    let max_abs = centered.as_slice().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if max_abs <= 1e-12 {
        Raster::filled(raster.width(), raster.height(), 0.0)
    } else {
        centered.map(|v| v / max_abs)
    }
}

/// Per-pixel coefficient fields over the given terrain.
///
/// Each channel is `mean + amplitude * (alpha * noise + (1 - alpha) * slope)`
/// where both features are zero-mean with unit max-abs, `alpha` is the
/// config's `noise_weight`, the noise is Gaussian-smoothed to the channel's
/// correlation length, and the slope feature is the normalized gradient
/// magnitude of the DEM (shared by all channels). With `amplitude = 0` a
/// channel is constant; with `noise_weight = 0` it is a deterministic
/// function of the terrain.
pub fn generate_coeff_field(cfg: &SynthConfig, dem: &DemGrid) -> Result<CoefficientMap> {
    cfg.validate()?;
    let mut rng = seed::stream_rng(cfg.seed, "coeffs");
    let (w, h) = dem.elevations().dims();
    let slope_raw = photogeom::elevation_gradients(dem)?.map(|(dx, dy)| dx.hypot(dy));
    let slope = normalize_feature(&slope_raw);
    let mut channels = Vec::with_capacity(cfg.channels.len());
    for spec in &cfg.channels {
        // Always draw the noise so channel k's stream position does not
        // depend on earlier channels' amplitudes.
        let white = {
            let mut field = Raster::filled(w, h, 0.0);
            for r in 0..h {
                for c in 0..w {
                    field.set(r, c, seed::standard_normal(&mut rng));
                }
            }
            field
        };
        let noise = normalize_feature(&blur_gaussian(&white, spec.correlation_length_m / dem.gsd()));
        let mut channel = Raster::filled(w, h, 0.0);
        for r in 0..h {
            for c in 0..w {
                let feature = cfg.noise_weight * noise.at(r, c)
                    + (1.0 - cfg.noise_weight) * slope.at(r, c);
                channel.set(r, c, spec.mean + spec.amplitude * feature);
            }
        }
        channels.push(quantize_f32(&channel));
    }
    Ok(CoefficientMap::new(cfg.model, channels)?)
}

fn uniform_in(rng: &mut ChaCha8Rng, range: (f64, f64)) -> f64 {
    if range.0 == range.1 {
        range.0
    } else {
        rng.gen_range(range.0..range.1)
    }
}

/// Unit direction toward the sun for an elevation/azimuth draw.
/// Azimuth is measured from +x (east) counterclockwise toward +y (north).
fn sample_sun(rng: &mut ChaCha8Rng, cfg: &SynthConfig) -> Vector3<f64> {
    let elev = uniform_in(rng, cfg.sun_elevation_range_deg).to_radians();
    let az = uniform_in(rng, cfg.sun_azimuth_range_deg).to_radians();
    Vector3::new(elev.cos() * az.cos(), elev.cos() * az.sin(), elev.sin())
}

/// Draws a nadir-orthographic or tilted-perspective camera. Every camera
/// sits strictly above the terrain's maximum elevation by construction.
fn sample_camera(rng: &mut ChaCha8Rng, cfg: &SynthConfig, dem: &DemGrid) -> Result<CameraPose> {
    let extent = cfg.extent_m().max(1.0);
    let (w, h) = dem.elevations().dims();
    let center_xy = [
        dem.origin()[0] + (w - 1) as f64 * dem.gsd() / 2.0,
        dem.origin()[1] + (h - 1) as f64 * dem.gsd() / 2.0,
    ];
    let z_mean = dem.elevations().mean();
    let z_max = dem.max_elevation().expect("synth DEMs are fully valid");
    let target = Vector3::new(center_xy[0], center_xy[1], z_mean);
    let size = (cfg.dem_size as u32, cfg.dem_size as u32);

    let nadir = rng.gen::<f64>() < cfg.nadir_fraction;
    let pose = if nadir {
        CameraPose::look_at(
            Vector3::new(center_xy[0], center_xy[1], z_max + extent),
            target,
            Vector3::y(),
            cfg.oblique_fov_deg,
            size,
            Projection::OrthographicNadir,
        )
    } else {
        let tilt = uniform_in(rng, cfg.oblique_tilt_range_deg).to_radians();
        let az = rng.gen_range(0.0..TAU);
        let cam_z = z_max + extent * rng.gen_range(0.8..1.6);
        let horiz = (cam_z - z_mean) * tilt.tan();
        let position = Vector3::new(
            center_xy[0] + horiz * az.cos(),
            center_xy[1] + horiz * az.sin(),
            cam_z,
        );
        CameraPose::look_at(
            position,
            target,
            Vector3::y(),
            cfg.oblique_fov_deg,
            size,
            Projection::Perspective,
        )
    };
    Ok(pose?)
}

/// Renders `n_views` (camera, sun) draws of the given terrain and
/// coefficients, attaching targets with optional additive image noise.
pub fn generate_views(
    cfg: &SynthConfig,
    dem: &DemGrid,
    coeffs: &CoefficientMap,
) -> Result<Vec<SceneView>> {
    cfg.validate()?;
    let mut view_rng = seed::stream_rng(cfg.seed, "views");
    let mut noise_rng = seed::stream_rng(cfg.seed, "image-noise");
    let mut views = Vec::with_capacity(cfg.n_views);
    for _ in 0..cfg.n_views {
        let camera = sample_camera(&mut view_rng, cfg, dem)?;
        let sun_dir = sample_sun(&mut view_rng, cfg);
        let image = render::render(dem, coeffs, &camera, &sun_dir)?;
        let target = if cfg.image_noise_sigma > 0.0 {
            quantize_f32(&image.radiance.map(|v| {
                v + cfg.image_noise_sigma * seed::standard_normal(&mut noise_rng)
            }))
        } else {
            image.radiance.clone()
        };
        views.push(SceneView { camera, sun_dir, image, target });
    }
    Ok(views)
}

/// Terrain + coefficients + views in one call.
pub fn generate_scene(cfg: &SynthConfig) -> Result<GroundTruthBundle> {
    let dem = generate_dem(cfg)?;
    let coeffs = generate_coeff_field(cfg, &dem)?;
    let views = generate_views(cfg, &dem, &coeffs)?;
    Ok(GroundTruthBundle { dem, coeffs, views })
}

/// Dataset-level metadata written next to the manifests.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetStats {
    /// Std of raw elevations over all training-split crop windows.
    pub dataset_std: f64,
    pub crop_size_px: usize,
    pub tile_size_m: f64,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
}

/// Where [`write_dataset`] put things.
#[derive(Debug, Clone)]
pub struct DatasetPaths {
    pub root: PathBuf,
    pub manifest_path: PathBuf,
    pub stats_path: PathBuf,
    pub stats: DatasetStats,
}

fn io_err(path: &Path, source: std::io::Error) -> SynthError {
    SynthError::Raster(RasterError::Io { path: path.display().to_string(), source })
}
/// Writes scenes and a crop manifest under `root`.
///
/// Layout: `scene_XXX/dem.sg2r` (+ mask and sidecar), `scene_XXX/truth.json`
/// (+ channel rasters), `scene_XXX/views/view_XXX.sg2r`, and
/// `scene_XXX/views.json` recording each view's camera and sun, plus
/// root-level `manifests.jsonl` and `stats.json` from [`plan_crops`].
pub fn write_dataset(
    root: &Path,
    scenes: &[GroundTruthBundle],
    plan: &CropPlan,
    dataset_seed: u64,
) -> Result<DatasetPaths> {
    plan.ratios.validate().map_err(SynthError::Raster)?;
    if scenes.is_empty() {
        return Err(SynthError::InvalidConfig("write_dataset needs at least one scene".into()));
    }
    fs::create_dir_all(root).map_err(|e| io_err(root, e))?;

    for (s, scene) in scenes.iter().enumerate() {
        let scene_name = format!("scene_{s:03}");
        let scene_dir = root.join(&scene_name);
        let views_dir = scene_dir.join("views");
        fs::create_dir_all(&views_dir).map_err(|e| io_err(&views_dir, e))?;
        scene.dem.save(&scene_dir, "dem")?;
        scene.coeffs.save(&scene_dir, "truth")?;
        let mut records = Vec::with_capacity(scene.views.len());
        for (v, view) in scene.views.iter().enumerate() {
            let rel = format!("{scene_name}/views/view_{v:03}.sg2r");
            let path = root.join(&rel);
            container::write_f32(&path, &view.target)?;
            container::write_sidecar(
                &path,
                &MetaSidecar {
                    gsd: Some(scene.dem.gsd()),
                    origin: Some(scene.dem.origin()),
                    ..Default::default()
                },
            )?;
            records.push(ViewRecord {
                view: v as u32,
                target_path: rel,
                camera: view.camera.clone(),
                sun_dir: [view.sun_dir.x, view.sun_dir.y, view.sun_dir.z],
            });
        }
        write_view_records(&scene_dir.join("views.json"), &records)?;
    }

    plan_crops(root, plan, dataset_seed)
}

/// One view's provenance, stored per scene so crops can be re-planned from
/// disk alone.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ViewRecord {
    pub view: u32,
    /// Target container path relative to the dataset root.
    pub target_path: String,
    pub camera: CameraPose,
    pub sun_dir: [f64; 3],
}

fn write_view_records(path: &Path, records: &[ViewRecord]) -> Result<()> {
    let text = serde_json::to_string_pretty(records).map_err(|e| {
        SynthError::Raster(RasterError::Json { path: path.display().to_string(), source: e })
    })?;
    fs::write(path, text).map_err(|e| io_err(path, e))
}

/// Reads a scene's `views.json`.
pub fn read_view_records(path: &Path) -> Result<Vec<ViewRecord>> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| {
        SynthError::Raster(RasterError::Json { path: path.display().to_string(), source: e })
    })
}

/// Scene directories under `root` as `(name, path)`, ordered by scene index.
pub fn scene_dirs(root: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut found: Vec<(usize, String, PathBuf)> = Vec::new();
    let entries = fs::read_dir(root).map_err(|e| io_err(root, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| io_err(root, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(idx) = name.strip_prefix("scene_").and_then(|s| s.parse::<usize>().ok()) {
            if entry.path().is_dir() {
                found.push((idx, name, entry.path()));
            }
        }
    }
    found.sort_by_key(|(idx, _, _)| *idx);
    Ok(found.into_iter().map(|(_, name, path)| (name, path)).collect())
}

/// Plans crops over the scenes already on disk under `root` and writes
/// `manifests.jsonl` and `stats.json`.
///
/// The crop budget is split across (scene, view) images proportionally to
/// valid area; crops are sampled from eroded masks so every window is fully
/// valid; splits are geographic by world tile. Re-running with the same plan
/// and seed reproduces the files byte for byte.
pub fn plan_crops(root: &Path, plan: &CropPlan, dataset_seed: u64) -> Result<DatasetPaths> {
    plan.ratios.validate().map_err(SynthError::Raster)?;
    let dirs = scene_dirs(root)?;
    if dirs.is_empty() {
        return Err(SynthError::InvalidConfig(format!(
            "no scene_* directories under {}",
            root.display()
        )));
    }

    let mut dems: Vec<DemGrid> = Vec::with_capacity(dirs.len());
    let mut scene_records: Vec<Vec<ViewRecord>> = Vec::with_capacity(dirs.len());
    let mut eroded_masks = Vec::with_capacity(dirs.len());
    let mut unit_areas = Vec::new();
    for (_, dir) in &dirs {
        let dem = DemGrid::load(&dir.join("dem.sg2r"))?;
        let records = read_view_records(&dir.join("views.json"))?;
        let eroded = sampling::erode_mask(dem.valid(), plan.size_px);
        let area = eroded.count_true() as f64 * dem.gsd() * dem.gsd();
        for _ in 0..records.len() {
            unit_areas.push(area);
        }
        dems.push(dem);
        scene_records.push(records);
        eroded_masks.push(eroded);
    }

    let budget = sampling::allocate_crop_budget(&unit_areas, plan.count)?;
    let split_seed = seed::derive(dataset_seed, "split");
    let mut manifests: Vec<SampleManifest> = Vec::with_capacity(plan.count);
    let mut unit = 0usize;
    for (s, (name, _)) in dirs.iter().enumerate() {
        let dem = &dems[s];
        for (v, record) in scene_records[s].iter().enumerate() {
            let crops = sampling::sample_crop_centers(
                &eroded_masks[s],
                plan.size_px,
                dem.gsd(),
                budget[unit],
                seed::derive(dataset_seed, &format!("crops/{s}/{v}")),
            )?;
            unit += 1;
            for crop in crops {
                let footprint = crop
                    .footprint(dem.origin())
                    .expect("sampled centers have in-bounds windows");
                let tile = sampling::tile_id(footprint.center(), plan.tile_size_m)?;
                manifests.push(SampleManifest {
                    crop,
                    dem_path: format!("{name}/dem.sg2r"),
                    target_path: record.target_path.clone(),
                    view: record.view,
                    camera: record.camera.clone(),
                    sun_dir: record.sun_dir,
                    footprint,
                    tile_id: tile,
                    split: sampling::split_for_tile(tile, plan.ratios, split_seed),
                });
            }
        }
    }
    manifest::verify_split_purity(&manifests)?;

    // Dataset-wide normalization scale: std of raw elevations over the
    // training crops (Welford, single pass).
    let (mut count, mut mean, mut m2) = (0u64, 0.0f64, 0.0f64);
    let dem_index: std::collections::BTreeMap<String, usize> = dirs
        .iter()
        .enumerate()
        .map(|(s, (name, _))| (format!("{name}/dem.sg2r"), s))
        .collect();
    for m in manifests.iter().filter(|m| m.split == Split::Train) {
        let scene_idx = dem_index[&m.dem_path];
        let (row0, col0) = m.crop.corner().expect("manifest crops are in bounds");
        let window = dems[scene_idx].elevations().crop(row0, col0, m.crop.size_px)?;
        for &z in window.as_slice() {
            count += 1;
            let delta = z - mean;
            mean += delta / count as f64;
            m2 += delta * (z - mean);
        }
    }
    if count == 0 {
        return Err(SynthError::InvalidConfig(
            "no training crops were produced; increase the crop count or train ratio".into(),
        ));
    }
    let dataset_std = (m2 / count as f64).sqrt();
    if !(dataset_std.is_finite() && dataset_std > 0.0) {
        return Err(SynthError::InvalidConfig(
            "training elevations are constant; normalization std would be zero".into(),
        ));
    }

    let stats = DatasetStats {
        dataset_std,
        crop_size_px: plan.size_px,
        tile_size_m: plan.tile_size_m,
        n_train: manifests.iter().filter(|m| m.split == Split::Train).count(),
        n_val: manifests.iter().filter(|m| m.split == Split::Val).count(),
        n_test: manifests.iter().filter(|m| m.split == Split::Test).count(),
    };
    let manifest_path = root.join("manifests.jsonl");
    manifest::write_manifests(&manifest_path, &manifests)?;
    let stats_path = root.join("stats.json");
    let text = serde_json::to_string_pretty(&stats)
        .map_err(|e| RasterError::Json { path: stats_path.display().to_string(), source: e })?;
    fs::write(&stats_path, text).map_err(|e| io_err(&stats_path, e))?;

    Ok(DatasetPaths { root: root.to_path_buf(), manifest_path, stats_path, stats })
}

/// A scene reloaded from its directory: terrain plus each view's geometry
/// record and stored target.
#[derive(Debug)]
pub struct LoadedScene {
    pub dem: DemGrid,
    pub truth: CoefficientMap,
    pub views: Vec<LoadedView>,
}

#[derive(Debug)]
pub struct LoadedView {
    pub record: ViewRecord,
    pub target: Raster<f64>,
}

/// Reloads one scene directory written by [`write_dataset`].
pub fn load_scene(root: &Path, scene_dir: &Path) -> Result<LoadedScene> {
    let dem = DemGrid::load(&scene_dir.join("dem.sg2r"))?;
    let truth = CoefficientMap::load(&scene_dir.join("truth.json"))?;
    let records = read_view_records(&scene_dir.join("views.json"))?;
    let mut views = Vec::with_capacity(records.len());
    for record in records {
        let target = container::read_f32(&root.join(&record.target_path))?;
        views.push(LoadedView { record, target });
    }
    Ok(LoadedScene { dem, truth, views })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn small_cfg(seed: u64) -> SynthConfig {
        SynthConfig {
            dem_size: 48,
            gsd: 2.0,
            relief_amplitude: 8.0,
            n_views: 3,
            channels: default_channels(ModelKind::M2, 2.0),
            seed,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn dem_is_deterministic_with_exact_relief() {
        let cfg = small_cfg(5);
        let a = generate_dem(&cfg).unwrap();
        let b = generate_dem(&cfg).unwrap();
        assert_eq!(a.elevations(), b.elevations());
        let (lo, hi) = a.elevations().finite_min_max().unwrap();
        assert_relative_eq!(hi - lo, 8.0, max_relative = 1e-6);
        assert_relative_eq!(hi, 4.0, max_relative = 1e-5);
        let c = generate_dem(&small_cfg(6)).unwrap();
        assert_ne!(a.elevations(), c.elevations());
    }

    #[test]
    fn zero_relief_is_flat() {
        let cfg = SynthConfig { relief_amplitude: 0.0, ..small_cfg(1) };
        let dem = generate_dem(&cfg).unwrap();
        assert!(dem.elevations().as_slice().iter().all(|&z| z == 0.0));
    }

    #[test]
    fn larger_spectral_exponent_gives_smoother_terrain() {
        let rough_cfg = SynthConfig { spectral_exponent: 1.0, ..small_cfg(3) };
        let smooth_cfg = SynthConfig { spectral_exponent: 3.5, ..small_cfg(3) };
        let roughness = |dem: &DemGrid| -> f64 {
            let g = photogeom::elevation_gradients(dem).unwrap();
            g.as_slice().iter().map(|(dx, dy)| dx.hypot(*dy)).sum::<f64>()
                / (dem.width() * dem.height()) as f64
        };
        let rough = roughness(&generate_dem(&rough_cfg).unwrap());
        let smooth = roughness(&generate_dem(&smooth_cfg).unwrap());
        assert!(
            rough > 1.5 * smooth,
            "expected beta=1 roughness {rough} to dominate beta=3.5 roughness {smooth}"
        );
    }

    #[test]
    fn coeff_fields_stay_within_amplitude_and_respect_zero_amplitude() {
        let mut cfg = small_cfg(9);
        cfg.channels[1].amplitude = 0.0;
        let dem = generate_dem(&cfg).unwrap();
        let map = generate_coeff_field(&cfg, &dem).unwrap();
        for (spec, channel) in cfg.channels.iter().zip(map.channels()) {
            for &v in channel.as_slice() {
                assert!(
                    (v - spec.mean).abs() <= spec.amplitude + 1e-9,
                    "channel value {v} strayed past {} +- {}",
                    spec.mean,
                    spec.amplitude
                );
            }
        }
        // Zero amplitude means exactly constant.
        assert!(map.channels()[1].as_slice().iter().all(|&v| v == cfg.channels[1].mean));
    }

    #[test]
    fn slope_only_fields_are_a_function_of_terrain() {
        let cfg = SynthConfig { noise_weight: 0.0, ..small_cfg(4) };
        let dem = generate_dem(&cfg).unwrap();
        let a = generate_coeff_field(&cfg, &dem).unwrap();
        // Different seed, same terrain: noise stream differs but is unused.
        let cfg2 = SynthConfig { seed: 77, ..cfg.clone() };
        let b = generate_coeff_field(&cfg2, &dem).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn camera_mix_follows_nadir_fraction() {
        let dem = generate_dem(&small_cfg(2)).unwrap();
        for (fraction, want) in [(1.0, Projection::OrthographicNadir), (0.0, Projection::Perspective)]
        {
            let cfg = SynthConfig { nadir_fraction: fraction, n_views: 5, ..small_cfg(2) };
            let coeffs = generate_coeff_field(&cfg, &dem).unwrap();
            let views = generate_views(&cfg, &dem, &coeffs).unwrap();
            assert_eq!(views.len(), 5);
            for view in &views {
                assert_eq!(view.camera.projection, want);
                assert!(view.camera.position.z > dem.max_elevation().unwrap());
                assert!(view.sun_dir.z > 0.0);
            }
        }
    }

    #[test]
    fn noise_free_targets_equal_rendered_radiance() {
        let bundle = generate_scene(&small_cfg(12)).unwrap();
        for view in &bundle.views {
            assert_eq!(view.target, view.image.radiance);
        }
        // And the whole pipeline is reproducible.
        let again = generate_scene(&small_cfg(12)).unwrap();
        assert_eq!(bundle.views[0].target, again.views[0].target);
        assert_eq!(bundle.coeffs, again.coeffs);
    }

    #[test]
    fn noisy_targets_differ_but_are_deterministic() {
        let cfg = SynthConfig { image_noise_sigma: 0.01, ..small_cfg(13) };
        let a = generate_scene(&cfg).unwrap();
        assert_ne!(a.views[0].target, a.views[0].image.radiance);
        let b = generate_scene(&cfg).unwrap();
        assert_eq!(a.views[0].target, b.views[0].target);
    }

    #[test]
    fn dataset_round_trips_and_re_renders_bit_identically() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_cfg(21);
        let scenes = vec![generate_scene(&cfg).unwrap()];
        let plan = CropPlan { size_px: 16, count: 24, tile_size_m: 64.0, ..CropPlan::default() };
        let paths = write_dataset(dir.path(), &scenes, &plan, 99).unwrap();

        let manifests = manifest::read_manifests(&paths.manifest_path).unwrap();
        assert_eq!(manifests.len(), 24);
        manifest::verify_split_purity(&manifests).unwrap();
        assert!(paths.stats.dataset_std > 0.0);
        assert_eq!(
            paths.stats.n_train + paths.stats.n_val + paths.stats.n_test,
            24
        );

        // Re-render the first manifest entirely from disk artifacts: the
        // stored target must be reproduced bit for bit at f32 precision.
        let m = &manifests[0];
        let dem = DemGrid::load(&dir.path().join(&m.dem_path)).unwrap();
        let coeffs = CoefficientMap::load(&dir.path().join("scene_000/truth.json")).unwrap();
        let sun = Vector3::new(m.sun_dir[0], m.sun_dir[1], m.sun_dir[2]);
        let image = render::render(&dem, &coeffs, &m.camera, &sun).unwrap();
        let stored = container::read_f32(&dir.path().join(&m.target_path)).unwrap();
        for (a, b) in image.radiance.as_slice().iter().zip(stored.as_slice()) {
            assert_eq!(*a as f32, *b as f32);
        }
    }

    #[test]
    fn config_validation_catches_mistakes() {
        let mut cfg = small_cfg(1);
        cfg.channels.pop();
        assert!(matches!(generate_dem(&cfg), Err(SynthError::InvalidConfig(_))));
        let cfg = SynthConfig { noise_weight: 1.5, ..small_cfg(1) };
        assert!(cfg.validate().is_err());
        let cfg = SynthConfig { sun_elevation_range_deg: (0.0, 30.0), ..small_cfg(1) };
        assert!(cfg.validate().is_err());
        let cfg = SynthConfig { n_views: 0, ..small_cfg(1) };
        assert!(cfg.validate().is_err());
    }
}
