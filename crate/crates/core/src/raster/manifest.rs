//! Sample manifests: one JSON line per (terrain crop, target image) pair.
//!
//! A manifest row carries everything needed to rebuild the training sample
//! from the referenced files — crop window, camera pose, sun direction —
//! plus the geographic tile id and split assignment used for leak checks.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write as _};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::sampling::Split;
use super::{CropSpec, RasterError, Result, WorldRect};
use crate::photogeom::CameraPose;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleManifest {
    pub crop: CropSpec,
    /// Elevation container of the parent DEM, relative to the dataset root.
    pub dem_path: String,
    /// Target radiance container, relative to the dataset root.
    pub target_path: String,
    /// Index of the view this target was rendered from.
    pub view: u32,
    pub camera: CameraPose,
    pub sun_dir: [f64; 3],
    pub footprint: WorldRect,
    pub tile_id: i64,
    pub split: Split,
}

/// Writes manifests as JSON lines.
pub fn write_manifests(path: &Path, manifests: &[SampleManifest]) -> Result<()> {
    let io = |e| RasterError::Io { path: path.display().to_string(), source: e };
    let mut file = fs::File::create(path).map_err(io)?;
    for m in manifests {
        let line = serde_json::to_string(m)
            .map_err(|e| RasterError::Json { path: path.display().to_string(), source: e })?;
        writeln!(file, "{line}").map_err(io)?;
    }
    Ok(())
}

/// Reads a JSONL manifest file; blank lines are ignored.
pub fn read_manifests(path: &Path) -> Result<Vec<SampleManifest>> {
    let file = fs::File::open(path)
        .map_err(|e| RasterError::Io { path: path.display().to_string(), source: e })?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| RasterError::Io { path: path.display().to_string(), source: e })?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| RasterError::Json { path: path.display().to_string(), source: e })?,
        );
    }
    Ok(out)
}

/// Fails if any geographic tile appears in more than one split.
pub fn verify_split_purity(manifests: &[SampleManifest]) -> Result<()> {
    let mut seen: BTreeMap<i64, Split> = BTreeMap::new();
    for m in manifests {
        match seen.insert(m.tile_id, m.split) {
            Some(prev) if prev != m.split => {
                return Err(RasterError::SplitLeak { tile_id: m.tile_id })
            }
            _ => {}
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::photogeom::Projection;
    use nalgebra::{Matrix3, Vector3};
    use tempfile::tempdir;

    fn sample(tile_id: i64, split: Split) -> SampleManifest {
        SampleManifest {
            crop: CropSpec { size_px: 32, gsd: 2.0, center: (40, 48) },
            dem_path: "scene_000/dem.sg2r".into(),
            target_path: "scene_000/views/view_000.sg2r".into(),
            view: 0,
            camera: CameraPose::new(
                Vector3::new(0.0, 0.0, 500.0),
                Matrix3::new(1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, -1.0),
                45.0,
                (32, 32),
                Projection::OrthographicNadir,
            )
            .unwrap(),
            sun_dir: [0.5, 0.0, 0.8660254037844386],
            footprint: WorldRect { min: [48.0, 48.0], max: [110.0, 110.0] },
            tile_id,
            split,
        }
    }

    #[test]
    fn jsonl_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("manifests.jsonl");
        let rows = vec![sample(1, Split::Train), sample(2, Split::Test)];
        write_manifests(&path, &rows).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert_eq!(read_manifests(&path).unwrap(), rows);
    }

    #[test]
    fn split_purity_detects_leaks() {
        let clean = vec![sample(1, Split::Train), sample(1, Split::Train), sample(2, Split::Val)];
        verify_split_purity(&clean).unwrap();
        let leaky = vec![sample(1, Split::Train), sample(1, Split::Test)];
        assert!(matches!(
            verify_split_purity(&leaky),
            Err(RasterError::SplitLeak { tile_id: 1 })
        ));
    }
}
