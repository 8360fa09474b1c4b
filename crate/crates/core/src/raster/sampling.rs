//! Crop-center erosion, crop sampling, budget allocation, geographic splits.
//!
//! Datasets are built by sampling fixed-size square crops from valid terrain.
//! [`erode_mask`] shrinks a validity mask to the set of legal crop *centers*;
//! [`sample_crop_centers`] draws distinct centers uniformly from that set;
//! [`allocate_crop_budget`] apportions a global crop budget across scenes in
//! proportion to valid area; [`assign_geographic_split`] assigns crops to
//! train/val/test by the world tile they fall in, so spatially overlapping
//! crops can never straddle a split boundary.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{CropSpec, Raster, RasterError, Result};
use crate::seed;

/// Dataset partition a sample belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}` (expected train, val, or test)")),
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

/// Train/val/test proportions; must be non-negative and sum to 1.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self { train: 0.8, val: 0.1, test: 0.1 }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        let ok = parts.iter().all(|p| p.is_finite() && *p >= 0.0)
            && (parts.iter().sum::<f64>() - 1.0).abs() <= 1e-9;
        if ok {
            Ok(())
        } else {
            Err(RasterError::InvalidRatios(parts))
        }
    }
}

/// Marks the pixels that can serve as the center of a fully valid,
/// fully in-bounds `size_px x size_px` crop window.
///
/// The window for center `c` starts at `c - size_px / 2` (integer division)
/// on each axis. A window larger than the raster — or `size_px == 0`, which
/// has no meaningful window — yields an all-false mask.
pub fn erode_mask(valid: &Raster<bool>, size_px: usize) -> Raster<bool> {
    let (w, h) = valid.dims();
    let mut out = Raster::filled(w, h, false);
    if size_px == 0 || size_px > w || size_px > h {
        return out;
    }
    // Summed-area table over the 0/1 mask: window validity in O(1) per pixel.
    let mut sat = vec![0u64; (w + 1) * (h + 1)];
    for r in 0..h {
        for c in 0..w {
            sat[(r + 1) * (w + 1) + (c + 1)] = u64::from(valid.at(r, c))
                + sat[r * (w + 1) + (c + 1)]
                + sat[(r + 1) * (w + 1) + c]
                - sat[r * (w + 1) + c];
        }
    }
    let window_sum = |r0: usize, c0: usize, s: usize| -> u64 {
        sat[(r0 + s) * (w + 1) + (c0 + s)] + sat[r0 * (w + 1) + c0]
            - sat[r0 * (w + 1) + (c0 + s)]
            - sat[(r0 + s) * (w + 1) + c0]
    };
    let half = size_px / 2;
    let full = (size_px * size_px) as u64;
    for r in half..h {
        let r0 = r - half;
        if r0 + size_px > h {
            break;
        }
        for c in half..w {
            let c0 = c - half;
            if c0 + size_px > w {
                break;
            }
            if window_sum(r0, c0, size_px) == full {
                out.set(r, c, true);
            }
        }
    }
    out
}

/// Draws `count` distinct crop centers uniformly from the legal-center mask.
///
/// Centers come from a partial Fisher-Yates shuffle over the legal set in
/// raster order, driven by the `crops` sub-stream of `seed`, so the result
/// is a deterministic function of (mask, size, seed).
pub fn sample_crop_centers(
    eroded: &Raster<bool>,
    size_px: usize,
    gsd: f64,
    count: usize,
    seed: u64,
) -> Result<Vec<CropSpec>> {
    let mut legal: Vec<(usize, usize)> = Vec::new();
    for r in 0..eroded.height() {
        for c in 0..eroded.width() {
            if eroded.at(r, c) {
                legal.push((r, c));
            }
        }
    }
    if legal.len() < count {
        return Err(RasterError::InsufficientValidArea {
            requested: count,
            available: legal.len(),
        });
    }
    let mut rng = seed::stream_rng(seed, "crops");
    for i in 0..count {
        let j = rng.gen_range(i..legal.len());
        legal.swap(i, j);
    }
    Ok(legal[..count]
        .iter()
        .map(|&center| CropSpec { size_px, gsd, center })
        .collect())
}

/// Splits `total` crops across scenes proportionally to their valid areas
/// (largest-remainder rounding; ties broken toward the lower index).
///
/// Zero-area scenes receive zero crops. Fails if any area is negative or
/// non-finite, or if `total > 0` while every area is zero.
pub fn allocate_crop_budget(valid_areas: &[f64], total: usize) -> Result<Vec<usize>> {
    for &a in valid_areas {
        if !a.is_finite() || a < 0.0 {
            return Err(RasterError::InvalidArea(a));
        }
    }
    let sum: f64 = valid_areas.iter().sum();
    if total == 0 {
        return Ok(vec![0; valid_areas.len()]);
    }
    if sum <= 0.0 {
        return Err(RasterError::NoValidArea(total));
    }
    let mut counts: Vec<usize> = Vec::with_capacity(valid_areas.len());
    let mut remainders: Vec<(usize, f64)> = Vec::with_capacity(valid_areas.len());
    let mut assigned = 0usize;
    for (i, &a) in valid_areas.iter().enumerate() {
        let quota = total as f64 * a / sum;
        let base = quota.floor() as usize;
        counts.push(base);
        assigned += base;
        remainders.push((i, quota - base as f64));
    }
    // Stable sort keeps index order among equal remainders.
    remainders.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
    for &(i, _) in remainders.iter().take(total - assigned) {
        counts[i] += 1;
    }
    Ok(counts)
}

/// Packs floor-quantized tile coordinates into one id. Injective as long as
/// both coordinates fit in 32 bits, which `tile_coords` guarantees.
fn pack_tile(tx: i64, ty: i64) -> i64 {
    (((tx as u32 as u64) << 32) | (ty as u32 as u64)) as i64
}

/// Tile id of the world point `(x, y)` on a square grid of `tile_size_m`.
pub fn tile_id(xy: [f64; 2], tile_size_m: f64) -> Result<i64> {
    if !(tile_size_m.is_finite() && tile_size_m > 0.0) {
        return Err(RasterError::InvalidTileSize(tile_size_m));
    }
    let tx = (xy[0] / tile_size_m).floor();
    let ty = (xy[1] / tile_size_m).floor();
    for t in [tx, ty] {
        if !(t >= i32::MIN as f64 && t <= i32::MAX as f64) {
            return Err(RasterError::TileIndexOverflow(t as i64));
        }
    }
    Ok(pack_tile(tx as i64, ty as i64))
}

/// Split assignment for one tile: a seeded hash of the tile id is mapped to
/// `[0, 1)` and cut at the cumulative ratios. Every point in a tile lands in
/// the same split, for any sample count.
pub fn split_for_tile(id: i64, ratios: SplitRatios, seed: u64) -> Split {
    let u = seed::unit_hash(seed ^ 0x5e17_7e5a_17d5_eed5, id as u64);
    if u < ratios.train {
        Split::Train
    } else if u < ratios.train + ratios.val {
        Split::Val
    } else {
        Split::Test
    }
}

/// Assigns each world point to a split by its geographic tile.
pub fn assign_geographic_split(
    centers: &[[f64; 2]],
    tile_size_m: f64,
    ratios: SplitRatios,
    seed: u64,
) -> Result<Vec<Split>> {
    ratios.validate()?;
    centers
        .iter()
        .map(|&xy| Ok(split_for_tile(tile_id(xy, tile_size_m)?, ratios, seed)))
        .collect()
}
