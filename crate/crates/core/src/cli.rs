//! Command-line interface: dataset synthesis, fitting, training, rendering,
//! and evaluation.
//!
//! Every command is deterministic for a given seed; rerunning with the same
//! arguments reproduces output files byte for byte. Flags beat values from
//! `--config`; config values beat built-in defaults.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use crate::brdf::{CoefficientMap, ModelKind};
use crate::infer::checkpoint::{load_checkpoint, save_checkpoint};
use crate::infer::fit::{fit_map_gd, fit_map_ls, GdConfig};
use crate::infer::{
    compare_models, predict_coeffs, train_predictor, write_loss_curves, OptimKind,
    PreparedDataset, TrainConfig,
};
use crate::metrics::{self, psnr, range_normalize, ssim, EvalReport, EvalRow};
use crate::photogeom::view_light_field;
use crate::raster::container::{export_png16, write_f32};
use crate::raster::sampling::{Split, SplitRatios};
use crate::raster::Raster;
use crate::render::{shadow_mask, ViewBasis};
use crate::seed;
use crate::synth::{
    default_channels, generate_scene, load_scene, plan_crops, scene_dirs, write_dataset,
    CropPlan, SynthConfig,
};
use nalgebra::Vector3;

#[derive(Debug, Parser)]
#[command(
    name = "svbrdf",
    version,
    about = "Synthetic terrain reflectance: generate datasets, fit coefficient maps, train predictors"
)]
pub struct Cli {
    /// TOML config file supplying defaults; explicit flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic scenes and write a cropped dataset.
    SynthGen(SynthGenArgs),
    /// Re-plan crops and splits over scenes already on disk.
    SampleCrops(SampleCropsArgs),
    /// Fit a coefficient map to one scene's views (least squares or GD).
    Fit(FitArgs),
    /// Train the coefficient predictor on a dataset.
    Train(TrainArgs),
    /// Predict coefficient maps for dataset samples with a checkpoint.
    Predict(PredictArgs),
    /// Render views of a scene from a coefficient map.
    Render(RenderArgs),
    /// Per-sample image-space comparison of estimators on the test split.
    Eval(EvalArgs),
    /// Train one predictor per reflectance model and tabulate final losses.
    CompareModels(CompareModelsArgs),
}

/// Optional defaults loaded from `--config`.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    #[serde(default)]
    synth: SynthSection,
    #[serde(default)]
    crops: CropsSection,
    #[serde(default)]
    train: TrainSection,
    #[serde(default)]
    fit: FitSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SynthSection {
    dem_size: Option<usize>,
    gsd: Option<f64>,
    scenes: Option<usize>,
    views: Option<usize>,
    model: Option<ModelKind>,
    noise_weight: Option<f64>,
    image_noise_sigma: Option<f64>,
    relief_amplitude: Option<f64>,
    spectral_exponent: Option<f64>,
    coeff_amplitude_scale: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct CropsSection {
    size_px: Option<usize>,
    count: Option<usize>,
    tile_size_m: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainSection {
    epochs: Option<usize>,
    batch_size: Option<usize>,
    learning_rate: Option<f64>,
    optimizer: Option<OptimKind>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FitSection {
    steps: Option<usize>,
    learning_rate: Option<f64>,
    optimizer: Option<OptimKind>,
}

#[derive(Debug, Args)]
pub struct SynthGenArgs {
    /// Output dataset directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Number of scenes.
    #[arg(long)]
    pub scenes: Option<usize>,
    /// Root seed; every stream below derives from it.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// DEM side length in pixels.
    #[arg(long)]
    pub size: Option<usize>,
    /// Ground sample distance in meters.
    #[arg(long)]
    pub gsd: Option<f64>,
    /// Views rendered per scene.
    #[arg(long)]
    pub views: Option<usize>,
    /// Reflectance model (m1..m6).
    #[arg(long)]
    pub model: Option<ModelKind>,
    /// Blend between noise (1.0) and slope (0.0) in coefficient fields.
    #[arg(long)]
    pub noise_weight: Option<f64>,
    /// Additive Gaussian noise sigma on targets.
    #[arg(long)]
    pub image_noise: Option<f64>,
    /// Crop side length in pixels.
    #[arg(long)]
    pub crop_size: Option<usize>,
    /// Total crops across all scenes and views.
    #[arg(long)]
    pub crop_count: Option<usize>,
    /// Geographic split tile side in meters.
    #[arg(long)]
    pub tile_size: Option<f64>,
    /// Allow writing into an existing non-empty directory.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct SampleCropsArgs {
    /// Dataset root containing scene_* directories.
    #[arg(long)]
    pub root: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub crop_size: Option<usize>,
    #[arg(long)]
    pub crop_count: Option<usize>,
    #[arg(long)]
    pub tile_size: Option<f64>,
    /// Overwrite an existing manifests.jsonl.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Dataset root.
    #[arg(long)]
    pub root: PathBuf,
    /// Scene index to fit.
    #[arg(long, default_value_t = 0)]
    pub scene: usize,
    /// Output directory for the fitted map and diagnostics.
    #[arg(long)]
    pub out: PathBuf,
    /// Reflectance model to fit (m2 if omitted).
    #[arg(long)]
    pub model: Option<ModelKind>,
    /// `ls` for closed-form least squares, `gd` for gradient descent.
    #[arg(long, default_value = "ls")]
    pub method: FitMethod,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub optimizer: Option<OptimKind>,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum FitMethod {
    Ls,
    Gd,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset root.
    #[arg(long)]
    pub root: PathBuf,
    /// Output directory for the checkpoint and loss curves.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "m2")]
    pub model: ModelKind,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub optimizer: Option<OptimKind>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Dataset root.
    #[arg(long)]
    pub root: PathBuf,
    /// Trained checkpoint path.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Output directory; one subdirectory per sample.
    #[arg(long)]
    pub out: PathBuf,
    /// Which split to predict.
    #[arg(long, default_value = "test")]
    pub split: Split,
    /// Cap on the number of samples written.
    #[arg(long, default_value_t = 16)]
    pub limit: usize,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    /// Dataset root.
    #[arg(long)]
    pub root: PathBuf,
    /// Scene index to render.
    #[arg(long, default_value_t = 0)]
    pub scene: usize,
    /// Coefficient-map header (defaults to the scene's ground truth).
    #[arg(long)]
    pub coeffs: Option<PathBuf>,
    /// Render only this view index.
    #[arg(long)]
    pub view: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Dataset root.
    #[arg(long)]
    pub root: PathBuf,
    /// Output directory for eval.csv and the text summary.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "m2")]
    pub model: ModelKind,
    /// Optional predictor checkpoint to include as a method.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Split to evaluate.
    #[arg(long, default_value = "test")]
    pub split: Split,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct CompareModelsArgs {
    /// Dataset root.
    #[arg(long)]
    pub root: PathBuf,
    /// Output directory for comparison.csv and per-model curves.
    #[arg(long)]
    pub out: PathBuf,
    /// Comma-separated models to compare.
    #[arg(long, value_delimiter = ',', default_value = "m1,m2,m3")]
    pub models: Vec<ModelKind>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub optimizer: Option<OptimKind>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub force: bool,
}

/// Runs the parsed command; the binary maps errors to exit code 1.
pub fn run(cli: Cli) -> Result<()> {
    let file_cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            toml::from_str(&text)
                .with_context(|| format!("parsing config {}", path.display()))?
        }
        None => FileConfig::default(),
    };
    match cli.command {
        Command::SynthGen(args) => synth_gen(args, &file_cfg),
        Command::SampleCrops(args) => sample_crops(args, &file_cfg),
        Command::Fit(args) => fit(args, &file_cfg),
        Command::Train(args) => train(args, &file_cfg),
        Command::Predict(args) => predict(args),
        Command::Render(args) => render_cmd(args),
        Command::Eval(args) => eval(args),
        Command::CompareModels(args) => compare(args, &file_cfg),
    }
}

/// Pixels that carry photometric information: the complement of the shadow
/// mask (metrics include where the mask is true).
fn loss_mask(vb: &ViewBasis) -> Raster<bool> {
    vb.shadow().map(|s| !s)
}

/// Refuses to write into an existing non-empty directory unless forced.
fn ensure_out_dir(path: &Path, force: bool) -> Result<()> {
    if path.exists() {
        let non_empty = std::fs::read_dir(path)
            .with_context(|| format!("reading {}", path.display()))?
            .next()
            .is_some();
        if non_empty && !force {
            bail!(
                "output directory {} is not empty; pass --force to write into it",
                path.display()
            );
        }
    }
    std::fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(())
}

fn crop_plan(
    size: Option<usize>,
    count: Option<usize>,
    tile: Option<f64>,
    cfg: &FileConfig,
) -> CropPlan {
    let defaults = CropPlan::default();
    CropPlan {
        size_px: size.or(cfg.crops.size_px).unwrap_or(defaults.size_px),
        count: count.or(cfg.crops.count).unwrap_or(defaults.count),
        tile_size_m: tile.or(cfg.crops.tile_size_m).unwrap_or(defaults.tile_size_m),
        ratios: SplitRatios::default(),
    }
}

fn train_config(
    epochs: Option<usize>,
    batch_size: Option<usize>,
    learning_rate: Option<f64>,
    optimizer: Option<OptimKind>,
    seed: u64,
    cfg: &FileConfig,
) -> TrainConfig {
    let d = TrainConfig::default();
    TrainConfig {
        epochs: epochs.or(cfg.train.epochs).unwrap_or(d.epochs),
        batch_size: batch_size.or(cfg.train.batch_size).unwrap_or(d.batch_size),
        learning_rate: learning_rate.or(cfg.train.learning_rate).unwrap_or(d.learning_rate),
        optimizer: optimizer.or(cfg.train.optimizer).unwrap_or(d.optimizer),
        seed,
        ..d
    }
}

fn synth_gen(args: SynthGenArgs, cfg: &FileConfig) -> Result<()> {
    ensure_out_dir(&args.out, args.force)?;
    let base = SynthConfig::default();
    let n_scenes = args.scenes.or(cfg.synth.scenes).unwrap_or(2);
    let dem_size = args.size.or(cfg.synth.dem_size).unwrap_or(base.dem_size);
    let gsd = args.gsd.or(cfg.synth.gsd).unwrap_or(base.gsd);
    let model = args.model.or(cfg.synth.model).unwrap_or(base.model);
    let extent = dem_size as f64 * gsd;

    let mut scenes = Vec::with_capacity(n_scenes);
    for i in 0..n_scenes {
        let mut scene_cfg = SynthConfig {
            dem_size,
            gsd,
            model,
            n_views: args.views.or(cfg.synth.views).unwrap_or(base.n_views),
            noise_weight: args
                .noise_weight
                .or(cfg.synth.noise_weight)
                .unwrap_or(base.noise_weight),
            image_noise_sigma: args
                .image_noise
                .or(cfg.synth.image_noise_sigma)
                .unwrap_or(base.image_noise_sigma),
            relief_amplitude: cfg.synth.relief_amplitude.unwrap_or(base.relief_amplitude),
            spectral_exponent: cfg.synth.spectral_exponent.unwrap_or(base.spectral_exponent),
            // Tiles must never collide across scenes: keep footprints disjoint.
            origin: [i as f64 * 2.0 * extent, 0.0],
            seed: seed::derive(args.seed, &format!("scene/{i}")),
            ..base.clone()
        };
        scene_cfg.channels = default_channels(model, gsd);
        if let Some(scale) = cfg.synth.coeff_amplitude_scale {
            for ch in &mut scene_cfg.channels {
                ch.amplitude *= scale;
            }
        }
        scenes.push(generate_scene(&scene_cfg)?);
    }

    let plan = crop_plan(args.crop_size, args.crop_count, args.tile_size, cfg);
    let paths = write_dataset(&args.out, &scenes, &plan, args.seed)?;
    let s = &paths.stats;
    println!(
        "wrote {} scenes to {} ({} train / {} val / {} test crops of {} px, elevation std {:.3} m)",
        n_scenes,
        paths.root.display(),
        s.n_train,
        s.n_val,
        s.n_test,
        s.crop_size_px,
        s.dataset_std,
    );
    Ok(())
}

fn sample_crops(args: SampleCropsArgs, cfg: &FileConfig) -> Result<()> {
    let manifest_path = args.root.join("manifests.jsonl");
    if manifest_path.exists() && !args.force {
        bail!(
            "{} already exists; pass --force to re-plan crops",
            manifest_path.display()
        );
    }
    let plan = crop_plan(args.crop_size, args.crop_count, args.tile_size, cfg);
    let paths = plan_crops(&args.root, &plan, args.seed)?;
    let s = &paths.stats;
    println!(
        "planned {} crops ({} train / {} val / {} test) under {}",
        s.n_train + s.n_val + s.n_test,
        s.n_train,
        s.n_val,
        s.n_test,
        paths.root.display(),
    );
    Ok(())
}

/// Builds every view's basis and target for one scene.
fn scene_views(
    root: &Path,
    scene_idx: usize,
    model: ModelKind,
) -> Result<(crate::synth::LoadedScene, Vec<(ViewBasis, Raster<f64>)>)> {
    let dirs = scene_dirs(root)?;
    let (_, dir) = dirs
        .get(scene_idx)
        .with_context(|| format!("scene {scene_idx} not found under {}", root.display()))?;
    let scene = load_scene(root, dir)?;
    let mut views = Vec::with_capacity(scene.views.len());
    for view in &scene.views {
        let sun = Vector3::new(
            view.record.sun_dir[0],
            view.record.sun_dir[1],
            view.record.sun_dir[2],
        );
        let geom = view_light_field(&scene.dem, &view.record.camera, &sun)?;
        let shadow = shadow_mask(&scene.dem, &sun)?;
        views.push((ViewBasis::new(&geom, shadow, model)?, view.target.clone()));
    }
    Ok((scene, views))
}

fn fit(args: FitArgs, cfg: &FileConfig) -> Result<()> {
    ensure_out_dir(&args.out, args.force)?;
    let model = args.model.unwrap_or(ModelKind::M2);
    let (_, views) = scene_views(&args.root, args.scene, model)?;
    let pairs: Vec<(&ViewBasis, &Raster<f64>)> = views.iter().map(|(v, t)| (v, t)).collect();

    let fitted = match args.method {
        FitMethod::Ls => {
            let (map, diag) = fit_map_ls(&pairs)?;
            write_f32(&args.out.join("condition.sg2r"), &diag.condition)?;
            write_f32(&args.out.join("residual_rmse.sg2r"), &diag.residual_rmse)?;
            map
        }
        FitMethod::Gd => {
            let d = GdConfig::default();
            let gd_cfg = GdConfig {
                steps: args.steps.or(cfg.fit.steps).unwrap_or(d.steps),
                learning_rate: args
                    .learning_rate
                    .or(cfg.fit.learning_rate)
                    .unwrap_or(d.learning_rate),
                optimizer: args.optimizer.or(cfg.fit.optimizer).unwrap_or(d.optimizer),
            };
            let fit = fit_map_gd(&pairs, None, &gd_cfg)?;
            let mut csv = String::from("step,mse\n");
            for (i, l) in fit.loss_trajectory.iter().enumerate() {
                writeln!(csv, "{i},{l}")?;
            }
            std::fs::write(args.out.join("loss.csv"), csv)?;
            fit.coeffs
        }
    };
    fitted.save(&args.out, "fitted")?;

    // Report the photometric error of the fit per view.
    let mut total = 0.0;
    for (vb, target) in &pairs {
        let rendered = vb.forward(&fitted)?;
        total += metrics::mse(&rendered, target, Some(&loss_mask(vb)))?;
    }
    println!(
        "fitted {} ({} params) on scene {}; mean per-view MSE {:.3e}; wrote {}",
        model,
        model.n_params(),
        args.scene,
        total / pairs.len() as f64,
        args.out.join("fitted.json").display(),
    );
    Ok(())
}

fn train(args: TrainArgs, cfg: &FileConfig) -> Result<()> {
    ensure_out_dir(&args.out, args.force)?;
    let data = PreparedDataset::load(&args.root, args.model)?;
    let tc = train_config(
        args.epochs,
        args.batch_size,
        args.learning_rate,
        args.optimizer,
        args.seed,
        cfg,
    );
    let mut outcome = train_predictor(&data, &tc)?;
    let ckpt = args.out.join("predictor.sgck");
    save_checkpoint(&mut outcome.net, &ckpt)?;
    write_loss_curves(&args.out.join("curves.csv"), args.model, &outcome.curves)?;
    let last = outcome.curves.last().context("training produced no epochs")?;
    println!(
        "trained {} for {} iterations: train MSE {:.4e} -> {:.4e}{}; wrote {}",
        args.model,
        outcome.iters_run,
        outcome.initial_train_mse,
        last.train_mse,
        last.val_mse.map_or(String::new(), |v| format!(", val MSE {v:.4e}")),
        ckpt.display(),
    );
    Ok(())
}

fn predict(args: PredictArgs) -> Result<()> {
    ensure_out_dir(&args.out, args.force)?;
    let mut net = load_checkpoint(&args.checkpoint)?;
    let data = PreparedDataset::load(&args.root, net.model())?;
    let samples = data.split(args.split);
    if samples.is_empty() {
        bail!("no samples in the {} split", args.split);
    }
    let n = samples.len().min(args.limit);
    for (i, sample) in samples.iter().take(n).enumerate() {
        let map = predict_coeffs(&mut net, &sample.input)?;
        let dir = args.out.join(format!("sample_{i:04}"));
        std::fs::create_dir_all(&dir)?;
        map.save(&dir, "predicted")?;
    }
    println!(
        "predicted {} {} samples with {} into {}",
        n,
        args.split,
        net.model(),
        args.out.display(),
    );
    Ok(())
}

fn render_cmd(args: RenderArgs) -> Result<()> {
    ensure_out_dir(&args.out, args.force)?;
    let dirs = scene_dirs(&args.root)?;
    let (_, dir) = dirs
        .get(args.scene)
        .with_context(|| format!("scene {} not found under {}", args.scene, args.root.display()))?;
    let scene = load_scene(&args.root, dir)?;
    let coeffs = match &args.coeffs {
        Some(path) => CoefficientMap::load(path)?,
        None => scene.truth.clone(),
    };
    let (_, views) = scene_views(&args.root, args.scene, coeffs.model())?;

    let selected: Vec<usize> = match args.view {
        Some(v) => {
            if v >= views.len() {
                bail!("scene has {} views, asked for view {v}", views.len());
            }
            vec![v]
        }
        None => (0..views.len()).collect(),
    };
    for v in selected {
        let (vb, target) = &views[v];
        let rendered = vb.forward(&coeffs)?;
        let base = args.out.join(format!("render_view_{v:03}"));
        write_f32(&base.with_extension("sg2r"), &rendered)?;
        export_png16(&base.with_extension("png"), &rendered, None)?;
        let err = metrics::mse(&rendered, target, Some(&loss_mask(vb)))?;
        println!("view {v}: MSE vs stored target {err:.4e}");
    }
    println!("wrote renders to {}", args.out.display());
    Ok(())
}

fn eval(args: EvalArgs) -> Result<()> {
    ensure_out_dir(&args.out, args.force)?;
    let data = PreparedDataset::load(&args.root, args.model)?;
    let samples = data.split(args.split);
    if samples.is_empty() {
        bail!("no samples in the {} split", args.split);
    }
    let mut net = match &args.checkpoint {
        Some(path) => Some(load_checkpoint(path)?),
        None => None,
    };
    if let Some(net) = &net {
        if net.model() != args.model {
            bail!(
                "checkpoint was trained for {}, eval asked for {}",
                net.model(),
                args.model
            );
        }
    }

    // Scene-level fits shared by that scene's samples.
    let dirs = scene_dirs(&args.root)?;
    let mut fits: std::collections::BTreeMap<String, (CoefficientMap, Vec<f64>)> =
        std::collections::BTreeMap::new();
    for (idx, (name, _)) in dirs.iter().enumerate() {
        let (_, views) = scene_views(&args.root, idx, args.model)?;
        let pairs: Vec<(&ViewBasis, &Raster<f64>)> = views.iter().map(|(v, t)| (v, t)).collect();
        let (map, _) = fit_map_ls(&pairs)?;
        let uniform = metrics::uniform_baseline(&pairs)?;
        fits.insert(name.clone(), (map, uniform.coeffs));
    }

    let mut rows = Vec::new();
    for (i, sample) in samples.iter().enumerate() {
        let scene_name = sample
            .manifest
            .dem_path
            .split('/')
            .next()
            .context("manifest dem_path has a scene directory")?;
        let (fitted_map, uniform_coeffs) = &fits[scene_name];
        let (row0, col0) = sample.manifest.crop.corner().context("in-bounds crop")?;
        let size = sample.manifest.crop.size_px;
        let name = format!("{}_{i:04}", args.split);

        let peak = sample
            .target
            .as_slice()
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max)
            .max(1e-9);
        let mask = loss_mask(&sample.view);

        let fitted_crop = fitted_map.crop(row0, col0, size)?;
        let rendered = sample.view.forward(&fitted_crop)?;
        rows.push(EvalRow {
            sample: name.clone(),
            method: "svbrdf".into(),
            mse: metrics::mse(&rendered, &sample.target, Some(&mask))?,
            psnr: psnr(&rendered, &sample.target, Some(&mask), peak)?,
            ssim: ssim(&rendered, &sample.target, peak)?,
        });

        let uniform_map = CoefficientMap::uniform(args.model, uniform_coeffs, size, size)?;
        let uniform_rendered = sample.view.forward(&uniform_map)?;
        let normalized = range_normalize(&uniform_rendered, &sample.target)?;
        rows.push(EvalRow {
            sample: name.clone(),
            method: "uniform".into(),
            mse: metrics::mse(&normalized, &sample.target, Some(&mask))?,
            psnr: psnr(&normalized, &sample.target, Some(&mask), peak)?,
            ssim: ssim(&normalized, &sample.target, peak)?,
        });

        if let Some(net) = &mut net {
            let predicted = predict_coeffs(net, &sample.input)?;
            let rendered = sample.view.forward(&predicted)?;
            rows.push(EvalRow {
                sample: name,
                method: "predictor".into(),
                mse: metrics::mse(&rendered, &sample.target, Some(&mask))?,
                psnr: psnr(&rendered, &sample.target, Some(&mask), peak)?,
                ssim: ssim(&rendered, &sample.target, peak)?,
            });
        }
    }

    let report = EvalReport { rows };
    std::fs::write(args.out.join("eval.csv"), report.to_csv())?;
    let table = report.to_text_table();
    std::fs::write(args.out.join("summary.txt"), &table)?;
    print!("{table}");
    Ok(())
}

fn compare(args: CompareModelsArgs, cfg: &FileConfig) -> Result<()> {
    ensure_out_dir(&args.out, args.force)?;
    if args.models.is_empty() {
        bail!("pass at least one model via --models");
    }
    let tc = train_config(
        args.epochs,
        args.batch_size,
        args.learning_rate,
        args.optimizer,
        args.seed,
        cfg,
    );
    let report = compare_models(&args.root, &args.models, &tc)?;
    std::fs::write(args.out.join("comparison.csv"), report.to_csv())?;
    for (model, curves) in &report.curves {
        write_loss_curves(&args.out.join(format!("curves_{model}.csv")), *model, curves)?;
    }
    print!("{}", report.to_text_table());
    println!("wrote comparison to {}", args.out.display());
    Ok(())
}
