//! Loads a written dataset into memory, ready for fitting or training.
//!
//! Geometry is recomputed from each scene's full DEM and each view's stored
//! camera and sun — exactly as the targets were rendered — and only then
//! cropped to the sample windows. Cropping first would change border normals
//! and shadows, and training inputs would no longer match their targets.

use std::collections::BTreeMap;
use std::path::Path;

use crate::brdf::ModelKind;
use crate::infer::InferError;
use crate::photogeom::view_light_field;
use crate::raster::container::read_f32;
use crate::raster::manifest::{read_manifests, verify_split_purity, SampleManifest};
use crate::raster::sampling::Split;
use crate::raster::{normalize_crop, DemGrid, NormalizationStats, Raster};
use crate::render::{shadow_mask, ViewBasis};
use crate::synth::DatasetStats;
use nalgebra::Vector3;

/// One crop, fully prepared: normalized input, per-pixel basis, target.
#[derive(Debug, Clone)]
pub struct PreparedSample {
    pub manifest: SampleManifest,
    /// Mean-centered, std-scaled elevation window (the network input).
    pub input: Raster<f64>,
    /// Basis and shadow mask restricted to the window.
    pub view: ViewBasis,
    /// Observed radiance over the window.
    pub target: Raster<f64>,
}

/// A dataset loaded for one reflectance model.
#[derive(Debug, Clone)]
pub struct PreparedDataset {
    pub model: ModelKind,
    pub stats: DatasetStats,
    pub train: Vec<PreparedSample>,
    pub val: Vec<PreparedSample>,
    pub test: Vec<PreparedSample>,
}

impl PreparedDataset {
    /// Reads manifests, stats, scenes, and targets under `root` and prepares
    /// every sample. Split purity is re-verified on load; a leaking manifest
    /// file fails loudly rather than contaminating evaluation.
    pub fn load(root: &Path, model: ModelKind) -> Result<Self, InferError> {
        let manifest_path = root.join("manifests.jsonl");
        let manifests = read_manifests(&manifest_path)?;
        if manifests.is_empty() {
            return Err(InferError::EmptyDataset { path: root.to_path_buf() });
        }
        verify_split_purity(&manifests)?;

        let stats_path = root.join("stats.json");
        let stats_text = std::fs::read_to_string(&stats_path)
            .map_err(|e| InferError::Io { path: stats_path.clone(), source: e })?;
        let stats: DatasetStats = serde_json::from_str(&stats_text)
            .map_err(|e| InferError::Json { path: stats_path.clone(), source: e })?;
        let norm = NormalizationStats::new(stats.dataset_std)?;

        // Scene DEMs, keyed by their manifest-relative path.
        let mut dems: BTreeMap<&str, DemGrid> = BTreeMap::new();
        for m in &manifests {
            if !dems.contains_key(m.dem_path.as_str()) {
                dems.insert(&m.dem_path, DemGrid::load(&root.join(&m.dem_path))?);
            }
        }

        // Full-frame basis and target per view, keyed by target path.
        let mut views: BTreeMap<&str, (ViewBasis, Raster<f64>)> = BTreeMap::new();
        for m in &manifests {
            if views.contains_key(m.target_path.as_str()) {
                continue;
            }
            let dem = &dems[m.dem_path.as_str()];
            let sun = Vector3::new(m.sun_dir[0], m.sun_dir[1], m.sun_dir[2]);
            let geom = view_light_field(dem, &m.camera, &sun)?;
            let shadow = shadow_mask(dem, &sun)?;
            let basis = ViewBasis::new(&geom, shadow, model)?;
            let target = read_f32(&root.join(&m.target_path))?;
            views.insert(&m.target_path, (basis, target));
        }

        let mut out = Self { model, stats, train: Vec::new(), val: Vec::new(), test: Vec::new() };
        for m in &manifests {
            let (row0, col0) = m
                .crop
                .corner()
                .ok_or_else(|| InferError::BadManifest {
                    reason: format!("crop at {:?} has no in-bounds corner", m.crop.center),
                })?;
            let size = m.crop.size_px;
            let dem = &dems[m.dem_path.as_str()];
            let (basis, target) = &views[m.target_path.as_str()];
            let window = dem.elevations().crop(row0, col0, size)?;
            let sample = PreparedSample {
                manifest: m.clone(),
                input: normalize_crop(&window, &norm)?,
                view: basis.crop(row0, col0, size)?,
                target: target.crop(row0, col0, size)?,
            };
            match m.split {
                Split::Train => out.train.push(sample),
                Split::Val => out.val.push(sample),
                Split::Test => out.test.push(sample),
            }
        }
        Ok(out)
    }

    pub fn split(&self, split: Split) -> &[PreparedSample] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn crop_size(&self) -> usize {
        self.stats.crop_size_px
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::sampling::SplitRatios;
    use crate::synth::{generate_scene, write_dataset, CropPlan, SynthConfig};
    use tempfile::tempdir;

    fn tiny_dataset(root: &Path) -> crate::synth::DatasetPaths {
        let cfg = SynthConfig {
            dem_size: 64,
            n_views: 2,
            seed: 424,
            image_noise_sigma: 0.0,
            ..Default::default()
        };
        let scene = generate_scene(&cfg).unwrap();
        let plan = CropPlan {
            size_px: 16,
            count: 24,
            tile_size_m: 64.0,
            ratios: SplitRatios::default(),
        };
        write_dataset(root, &[scene], &plan, 77).unwrap()
    }

    #[test]
    fn load_partitions_every_manifest_row() {
        let dir = tempdir().unwrap();
        let paths = tiny_dataset(dir.path());
        let data = PreparedDataset::load(dir.path(), ModelKind::M2).unwrap();
        assert_eq!(data.len(), 24);
        assert_eq!(data.train.len(), paths.stats.n_train);
        assert_eq!(data.val.len(), paths.stats.n_val);
        assert_eq!(data.test.len(), paths.stats.n_test);
        assert_eq!(data.crop_size(), 16);
    }

    #[test]
    fn inputs_are_normalized_windows() {
        let dir = tempdir().unwrap();
        tiny_dataset(dir.path());
        let data = PreparedDataset::load(dir.path(), ModelKind::M2).unwrap();
        for sample in data.train.iter().chain(&data.val).chain(&data.test) {
            assert_eq!(sample.input.dims(), (16, 16));
            // Mean-centered by construction.
            assert!(sample.input.mean().abs() < 1e-9);
            assert!(sample.input.as_slice().iter().all(|v| v.is_finite()));
        }
    }

    /// The loader's recomputed geometry must reproduce the stored targets
    /// exactly (at stored f32 precision): same full-DEM normals, same
    /// shadows, same crop windows.
    #[test]
    fn recomputed_renders_match_stored_targets_bit_for_bit() {
        let dir = tempdir().unwrap();
        tiny_dataset(dir.path());
        let data = PreparedDataset::load(dir.path(), ModelKind::M2).unwrap();
        let truth = crate::brdf::CoefficientMap::load(&dir.path().join("scene_000/truth.json"))
            .unwrap();
        for sample in data.train.iter().chain(&data.val).chain(&data.test) {
            let (row0, col0) = sample.manifest.crop.corner().unwrap();
            let truth_crop = truth.crop(row0, col0, 16).unwrap();
            let rendered = sample.view.forward(&truth_crop).unwrap();
            for (got, want) in rendered.as_slice().iter().zip(sample.target.as_slice()) {
                assert_eq!(*got as f32, *want as f32);
            }
        }
    }

    #[test]
    fn leaking_manifest_fails_the_load() {
        let dir = tempdir().unwrap();
        tiny_dataset(dir.path());
        // Append a copy of the first row with its split flipped: the same
        // tile now appears in two splits, which the loader must reject.
        let path = dir.path().join("manifests.jsonl");
        let text = std::fs::read_to_string(&path).unwrap();
        let first = text.lines().next().unwrap();
        let mut row: serde_json::Value = serde_json::from_str(first).unwrap();
        row["split"] = serde_json::Value::String(
            if row["split"] == "train" { "val" } else { "train" }.into(),
        );
        let leak = serde_json::to_string(&row).unwrap();
        std::fs::write(&path, format!("{text}{leak}\n")).unwrap();
        assert!(PreparedDataset::load(dir.path(), ModelKind::M2).is_err());
    }

    #[test]
    fn missing_dataset_is_a_clean_error() {
        let dir = tempdir().unwrap();
        assert!(PreparedDataset::load(&dir.path().join("nope"), ModelKind::M1).is_err());
    }
}
