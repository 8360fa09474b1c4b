//! Trains the coefficient predictor against rendered targets.
//!
//! The loss is photometric: predicted coefficient maps are pushed through
//! each sample's precomputed view basis and compared to the stored radiance,
//! so the network never sees ground-truth coefficients. Gradients flow back
//! through the renderer's adjoint into the network.

use std::path::Path;

use crate::brdf::{CoefficientMap, ModelKind};
use crate::infer::dataset::{PreparedDataset, PreparedSample};
use crate::infer::nn::Tensor4;
use crate::infer::optim::{OptimKind, Optimizer};
use crate::infer::unet::{PredictorNet, DEFAULT_WIDTHS};
use crate::infer::InferError;
use crate::raster::Raster;
use crate::seed;

/// Knobs for [`train_predictor`].
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimKind,
    pub widths: [usize; 4],
    pub leaky_slope: f64,
    pub seed: u64,
    /// Hard cap on optimizer steps across all epochs (tests and budgeted
    /// runs); `None` trains every epoch to completion.
    pub max_iters: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 16,
            learning_rate: 1e-4,
            optimizer: OptimKind::Adam,
            widths: DEFAULT_WIDTHS,
            leaky_slope: 0.01,
            seed: 0,
            max_iters: None,
        }
    }
}

/// Mean photometric MSE per split after each epoch.
#[derive(Debug, Clone, Copy)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: Option<f64>,
}

/// A finished training run.
#[derive(Debug)]
pub struct TrainOutcome {
    pub net: PredictorNet,
    pub curves: Vec<EpochStats>,
    pub iters_run: usize,
    /// Mean train-split MSE of the untrained network (all-zero prediction).
    pub initial_train_mse: f64,
}

/// Trains a fresh predictor on the dataset's training split.
///
/// Batches are shuffled each epoch from a dedicated RNG stream of
/// `cfg.seed`, so runs are bit-reproducible. A non-finite batch loss aborts
/// with [`InferError::TrainingInstability`].
pub fn train_predictor(
    data: &PreparedDataset,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, InferError> {
    if data.train.is_empty() {
        return Err(InferError::NoSamples { split: "train" });
    }
    if cfg.batch_size == 0 || cfg.epochs == 0 {
        return Err(InferError::BadTrainConfig {
            reason: "epochs and batch_size must be positive".into(),
        });
    }
    let mut net = PredictorNet::new(data.model, cfg.widths, cfg.leaky_slope, cfg.seed);
    let mut optims: Vec<Optimizer> = Vec::new();
    net.visit_params(&mut |p, _| {
        optims.push(Optimizer::new(cfg.optimizer, cfg.learning_rate, p.len()));
    });

    let initial_train_mse = evaluate(&mut net, &data.train)?;
    let mut shuffle_rng = seed::stream_rng(cfg.seed, "batches");
    let mut curves = Vec::with_capacity(cfg.epochs);
    let mut iters = 0usize;

    'epochs: for epoch in 0..cfg.epochs {
        net.set_training(true);
        let mut order: Vec<usize> = (0..data.train.len()).collect();
        for i in (1..order.len()).rev() {
            let j = rand::Rng::gen_range(&mut shuffle_rng, 0..=i);
            order.swap(i, j);
        }

        let mut loss_sum = 0.0;
        let mut n_seen = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            if cfg.max_iters.is_some_and(|cap| iters >= cap) {
                break 'epochs;
            }
            let samples: Vec<&PreparedSample> = batch.iter().map(|&i| &data.train[i]).collect();
            let loss = train_batch(&mut net, &samples)?;
            if !loss.is_finite() {
                return Err(InferError::TrainingInstability { iteration: iters });
            }
            let mut bi = 0;
            net.visit_params_mut(&mut |p, g| {
                optims[bi].step(p, g);
                bi += 1;
            });
            iters += 1;
            loss_sum += loss * batch.len() as f64;
            n_seen += batch.len();
        }
        if n_seen == 0 {
            break;
        }
        let train_mse = loss_sum / n_seen as f64;
        let val_mse =
            if data.val.is_empty() { None } else { Some(evaluate(&mut net, &data.val)?) };
        curves.push(EpochStats { epoch, train_mse, val_mse });
    }

    net.set_training(false);
    Ok(TrainOutcome { net, curves, iters_run: iters, initial_train_mse })
}

/// One optimizer step's forward and backward over a batch.
/// Returns the batch loss: the mean over samples of per-sample masked MSE.
fn train_batch(net: &mut PredictorNet, samples: &[&PreparedSample]) -> Result<f64, InferError> {
    let b = samples.len();
    let (w, h) = samples[0].input.dims();
    let mut x = Tensor4::zeros(b, 1, h, w);
    for (s, sample) in samples.iter().enumerate() {
        let dst = x.idx(s, 0, 0, 0);
        x.data[dst..dst + h * w].copy_from_slice(sample.input.as_slice());
    }
    let out = net.forward(&x);
    let n_coeff = net.model().n_params();

    let mut dy = Tensor4::zeros(b, n_coeff, h, w);
    let mut loss_sum = 0.0;
    for (s, sample) in samples.iter().enumerate() {
        let (residuals, n_px) = residuals_for(&out, s, sample)?;
        let mut sq = 0.0;
        // dLoss/d coeff_k = 2 r b_k / (n_px * B) at unshadowed pixels.
        let scale = 2.0 / (n_px as f64 * b as f64);
        for row in 0..h {
            for col in 0..w {
                let r = residuals.at(row, col);
                if sample.view.is_shadowed(row, col) {
                    continue;
                }
                sq += r * r;
                let basis = sample.view.basis_at(row, col);
                for k in 0..n_coeff {
                    dy.set(s, k, row, col, scale * r * basis[k]);
                }
            }
        }
        loss_sum += sq / n_px as f64;
    }
    net.backward(&dy);
    Ok(loss_sum / b as f64)
}

/// Renders sample `s` of the output tensor through the sample's basis and
/// subtracts the target. Shadowed pixels are left at zero residual.
/// Also returns the number of pixels participating in the loss.
fn residuals_for(
    out: &Tensor4,
    s: usize,
    sample: &PreparedSample,
) -> Result<(Raster<f64>, usize), InferError> {
    let (w, h) = sample.target.dims();
    let n_coeff = sample.view.model().n_params();
    let mut residuals = Raster::filled(w, h, 0.0);
    let mut n_px = 0usize;
    for row in 0..h {
        for col in 0..w {
            if sample.view.is_shadowed(row, col) {
                continue;
            }
            let basis = sample.view.basis_at(row, col);
            let mut radiance = 0.0;
            for k in 0..n_coeff {
                radiance += out.at(s, k, row, col) * basis[k];
            }
            residuals.set(row, col, radiance - sample.target.at(row, col));
            n_px += 1;
        }
    }
    if n_px == 0 {
        return Err(InferError::NoUsablePixels);
    }
    Ok((residuals, n_px))
}

/// Mean per-sample photometric MSE with the network in inference mode.
pub fn evaluate(net: &mut PredictorNet, samples: &[PreparedSample]) -> Result<f64, InferError> {
    if samples.is_empty() {
        return Err(InferError::NoSamples { split: "evaluation" });
    }
    let was_training = net.is_training();
    net.set_training(false);
    let mut total = 0.0;
    for sample in samples {
        let (w, h) = sample.input.dims();
        let x = Tensor4::from_vec(1, 1, h, w, sample.input.as_slice().to_vec());
        let out = net.forward(&x);
        let (residuals, n_px) = residuals_for(&out, 0, sample)?;
        let sq: f64 = residuals.as_slice().iter().map(|r| r * r).sum();
        total += sq / n_px as f64;
    }
    net.set_training(was_training);
    Ok(total / samples.len() as f64)
}

/// Runs the network on one input window and packages the prediction.
pub fn predict_coeffs(
    net: &mut PredictorNet,
    input: &Raster<f64>,
) -> Result<CoefficientMap, InferError> {
    let (w, h) = input.dims();
    let was_training = net.is_training();
    net.set_training(false);
    let x = Tensor4::from_vec(1, 1, h, w, input.as_slice().to_vec());
    let out = net.forward(&x);
    net.set_training(was_training);
    let n = net.model().n_params();
    let mut channels = Vec::with_capacity(n);
    for k in 0..n {
        let mut ch = Raster::filled(w, h, 0.0);
        ch.as_mut_slice().copy_from_slice(out.plane(0, k));
        channels.push(ch);
    }
    Ok(CoefficientMap::new(net.model(), channels)?)
}

/// Writes per-epoch loss curves as `epoch,split,model,mse` CSV rows.
pub fn write_loss_curves(
    path: &Path,
    model: ModelKind,
    curves: &[EpochStats],
) -> Result<(), InferError> {
    let mut text = String::from("epoch,split,model,mse\n");
    for row in curves {
        text.push_str(&format!("{},train,{},{}\n", row.epoch, model, row.train_mse));
        if let Some(v) = row.val_mse {
            text.push_str(&format!("{},val,{},{}\n", row.epoch, model, v));
        }
    }
    std::fs::write(path, text).map_err(|e| InferError::Io { path: path.to_path_buf(), source: e })
}

/// Final losses of one model in a multi-model comparison.
#[derive(Debug, Clone)]
pub struct ComparisonRow {
    pub model: ModelKind,
    pub params: usize,
    pub final_train_mse: f64,
    pub final_val_mse: Option<f64>,
}

/// Side-by-side training comparison across reflectance models.
#[derive(Debug)]
pub struct ComparisonReport {
    pub rows: Vec<ComparisonRow>,
    pub curves: Vec<(ModelKind, Vec<EpochStats>)>,
}

impl ComparisonReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("model,n_params,train_mse,val_mse\n");
        for r in &self.rows {
            let val = r.final_val_mse.map_or(String::new(), |v| v.to_string());
            out.push_str(&format!("{},{},{},{}\n", r.model, r.params, r.final_train_mse, val));
        }
        out
    }

    pub fn to_text_table(&self) -> String {
        let mut out = String::from("model  params  train MSE     val MSE\n");
        for r in &self.rows {
            let val = r.final_val_mse.map_or("-".to_string(), |v| format!("{v:.6e}"));
            out.push_str(&format!(
                "{:<6} {:>6}  {:<12.6e}  {val}\n",
                r.model.to_string(),
                r.params,
                r.final_train_mse
            ));
        }
        out
    }
}

/// Trains one predictor per model on the same dataset root and tabulates
/// final losses. Each model re-prepares the dataset because the per-pixel
/// basis depends on the model.
pub fn compare_models(
    root: &Path,
    models: &[ModelKind],
    cfg: &TrainConfig,
) -> Result<ComparisonReport, InferError> {
    let mut rows = Vec::with_capacity(models.len());
    let mut curves = Vec::with_capacity(models.len());
    for &model in models {
        let data = PreparedDataset::load(root, model)?;
        let outcome = train_predictor(&data, cfg)?;
        let last = outcome.curves.last().ok_or(InferError::BadTrainConfig {
            reason: "training produced no epochs".into(),
        })?;
        rows.push(ComparisonRow {
            model,
            params: model.n_params(),
            final_train_mse: last.train_mse,
            final_val_mse: last.val_mse,
        });
        curves.push((model, outcome.curves));
    }
    Ok(ComparisonReport { rows, curves })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::sampling::SplitRatios;
    use crate::synth::{generate_scene, write_dataset, CropPlan, SynthConfig};
    use tempfile::tempdir;

    fn small_data(dir: &Path, noise_weight: f64) -> PreparedDataset {
        let cfg = SynthConfig {
            dem_size: 64,
            n_views: 2,
            noise_weight,
            seed: 5150,
            ..Default::default()
        };
        let scene = generate_scene(&cfg).unwrap();
        let plan = CropPlan {
            size_px: 16,
            count: 20,
            tile_size_m: 64.0,
            ratios: SplitRatios::default(),
        };
        write_dataset(dir, &[scene], &plan, 3).unwrap();
        PreparedDataset::load(dir, ModelKind::M2).unwrap()
    }

    #[test]
    fn few_steps_of_training_reduce_the_loss() {
        let dir = tempdir().unwrap();
        let data = small_data(dir.path(), 0.0);
        let cfg = TrainConfig {
            epochs: 30,
            batch_size: 8,
            learning_rate: 2e-3,
            widths: [4, 8, 16, 32],
            max_iters: Some(60),
            seed: 9,
            ..Default::default()
        };
        let outcome = train_predictor(&data, &cfg).unwrap();
        assert!(outcome.iters_run <= 60);
        let last = outcome.curves.last().unwrap();
        assert!(
            last.train_mse < outcome.initial_train_mse,
            "train loss should drop: {} -> {}",
            outcome.initial_train_mse,
            last.train_mse
        );
        // The untrained network predicts zero coefficients, so the initial
        // loss is the mean squared radiance.
        assert!(outcome.initial_train_mse > 0.0);
    }

    #[test]
    fn training_is_reproducible_for_a_seed() {
        let dir = tempdir().unwrap();
        let data = small_data(dir.path(), 0.5);
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 4,
            learning_rate: 1e-3,
            widths: [2, 4, 8, 16],
            seed: 31,
            ..Default::default()
        };
        let a = train_predictor(&data, &cfg).unwrap();
        let b = train_predictor(&data, &cfg).unwrap();
        let pairs = a.curves.iter().zip(&b.curves);
        for (x, y) in pairs {
            assert_eq!(x.train_mse, y.train_mse);
            assert_eq!(x.val_mse, y.val_mse);
        }
    }

    #[test]
    fn prediction_shapes_follow_the_model() {
        let dir = tempdir().unwrap();
        let data = small_data(dir.path(), 0.0);
        let mut net = PredictorNet::new(ModelKind::M2, [2, 4, 8, 16], 0.01, 0);
        let map = predict_coeffs(&mut net, &data.train[0].input).unwrap();
        assert_eq!(map.model(), ModelKind::M2);
        assert_eq!(map.dims(), (16, 16));
        // Zero head means all-zero prediction.
        assert!(map.channels().iter().all(|ch| ch.as_slice().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn loss_curve_csv_has_one_row_per_split_epoch() {
        let dir = tempdir().unwrap();
        let curves = vec![
            EpochStats { epoch: 0, train_mse: 0.5, val_mse: Some(0.6) },
            EpochStats { epoch: 1, train_mse: 0.4, val_mse: Some(0.5) },
        ];
        let path = dir.path().join("curves.csv");
        write_loss_curves(&path, ModelKind::M3, &curves).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "epoch,split,model,mse");
        assert_eq!(lines.len(), 5);
        assert!(lines[1].starts_with("0,train,m3,"));
        assert!(lines[2].starts_with("0,val,m3,"));
    }

    #[test]
    fn empty_train_split_is_rejected() {
        let dir = tempdir().unwrap();
        let mut data = small_data(dir.path(), 0.0);
        data.train.clear();
        assert!(matches!(
            train_predictor(&data, &TrainConfig::default()),
            Err(InferError::NoSamples { split: "train" })
        ));
    }
}
