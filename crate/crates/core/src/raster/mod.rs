//! Raster grids and the dataset plumbing built on them.
//!
//! A [`Raster<T>`] is a dense row-major grid; a [`DemGrid`] couples an
//! elevation raster with a validity mask and georeferencing (ground sample
//! distance + world origin). Everything downstream — geometry, rendering,
//! fitting — indexes pixels as `(row, col)` with row 0 at the origin edge,
//! so world coordinates of pixel `(r, c)` are
//! `(origin.x + c * gsd, origin.y + r * gsd)`.
//!
//! Submodules: [`container`] for on-disk raster I/O, [`sampling`] for crop
//! erosion / sampling / budget allocation / geographic splits, [`manifest`]
//! for the JSONL sample manifests that tie datasets together.

pub mod container;
pub mod manifest;
pub mod sampling;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("raster dimensions {width}x{height} do not match data length {len}")]
    DimensionMismatch { width: usize, height: usize, len: usize },
    #[error("raster must be at least {min}x{min}, got {width}x{height}")]
    TooSmall { width: usize, height: usize, min: usize },
    #[error("ground sample distance must be finite and positive, got {0}")]
    InvalidGsd(f64),
    #[error("valid pixel ({row}, {col}) has non-finite elevation {value}")]
    NonFiniteElevation { row: usize, col: usize, value: f64 },
    #[error("normalization std must be finite and positive, got {0}")]
    InvalidStd(f64),
    #[error("crop contains non-finite or invalid pixels")]
    InvalidCrop,
    #[error("requested {requested} crops but only {available} legal centers exist")]
    InsufficientValidArea { requested: usize, available: usize },
    #[error("valid area must be finite and non-negative, got {0}")]
    InvalidArea(f64),
    #[error("cannot allocate {0} crops: total valid area is zero")]
    NoValidArea(usize),
    #[error("split ratios must be non-negative and sum to 1, got {0:?}")]
    InvalidRatios([f64; 3]),
    #[error("tile size must be finite and positive, got {0}")]
    InvalidTileSize(f64),
    #[error("tile coordinate {0} exceeds the 32-bit tile index range")]
    TileIndexOverflow(i64),
    #[error("crop window exceeds raster bounds")]
    CropOutOfBounds,
    #[error("sample manifests assign tile {tile_id} to more than one split")]
    SplitLeak { tile_id: i64 },
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed container {path}: {reason}")]
    Format { path: String, reason: String },
    #[error("json error on {path}: {source}")]
    Json { path: String, source: serde_json::Error },
}

pub type Result<T> = std::result::Result<T, RasterError>;

/// Dense row-major grid of `T`.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Copy> Raster<T> {
    /// Grid of the given dimensions with every pixel set to `fill`.
    pub fn filled(width: usize, height: usize, fill: T) -> Self {
        Self { width, height, data: vec![fill; width * height] }
    }

    /// Wraps an existing row-major buffer; `data.len()` must be `width * height`.
    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height {
            return Err(RasterError::DimensionMismatch { width, height, len: data.len() });
        }
        Ok(Self { width, height, data })
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    /// `(width, height)`.
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    fn idx(&self, row: usize, col: usize) -> usize {
        debug_assert!(row < self.height && col < self.width);
        row * self.width + col
    }

    /// Value at `(row, col)`. Panics if out of bounds.
    #[inline]
    pub fn at(&self, row: usize, col: usize) -> T {
        self.data[self.idx(row, col)]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: T) {
        let i = self.idx(row, col);
        self.data[i] = value;
    }

    pub fn in_bounds(&self, row: isize, col: isize) -> bool {
        row >= 0 && col >= 0 && (row as usize) < self.height && (col as usize) < self.width
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    /// Copies the `size x size` window whose top-left corner is `(row0, col0)`.
    pub fn crop(&self, row0: usize, col0: usize, size: usize) -> Result<Raster<T>> {
        if row0 + size > self.height || col0 + size > self.width {
            return Err(RasterError::CropOutOfBounds);
        }
        let mut data = Vec::with_capacity(size * size);
        for r in row0..row0 + size {
            data.extend_from_slice(&self.data[r * self.width + col0..r * self.width + col0 + size]);
        }
        Ok(Raster { width: size, height: size, data })
    }

    /// New raster of the same shape with `f` applied to every pixel.
    pub fn map<U: Copy>(&self, mut f: impl FnMut(T) -> U) -> Raster<U> {
        Raster {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

impl Raster<f64> {
    /// Min and max over finite pixels; `None` if no pixel is finite.
    pub fn finite_min_max(&self) -> Option<(f64, f64)> {
        let mut range: Option<(f64, f64)> = None;
        for &v in &self.data {
            if v.is_finite() {
                let (lo, hi) = range.get_or_insert((v, v));
                *lo = lo.min(v);
                *hi = hi.max(v);
            }
        }
        range
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }
}

impl Raster<bool> {
    pub fn count_true(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }
}

/// Digital elevation model: georeferenced heights plus a validity mask.
///
/// Invalid pixels carry no usable elevation (they may hold NaN); every
/// operation that shades or differentiates terrain requires the pixels it
/// touches to be valid.
#[derive(Debug, Clone)]
pub struct DemGrid {
    elevations: Raster<f64>,
    valid: Raster<bool>,
    gsd: f64,
    origin: [f64; 2],
}

impl DemGrid {
    /// Validates and assembles a DEM.
    ///
    /// Requires matching raster dimensions of at least 2x2, a finite positive
    /// `gsd` (meters per pixel), and finite elevation at every valid pixel.
    pub fn new(
        elevations: Raster<f64>,
        valid: Raster<bool>,
        gsd: f64,
        origin: [f64; 2],
    ) -> Result<Self> {
        if elevations.dims() != valid.dims() {
            return Err(RasterError::DimensionMismatch {
                width: valid.width(),
                height: valid.height(),
                len: elevations.as_slice().len(),
            });
        }
        if elevations.width() < 2 || elevations.height() < 2 {
            return Err(RasterError::TooSmall {
                width: elevations.width(),
                height: elevations.height(),
                min: 2,
            });
        }
        if !(gsd.is_finite() && gsd > 0.0) {
            return Err(RasterError::InvalidGsd(gsd));
        }
        if !(origin[0].is_finite() && origin[1].is_finite()) {
            return Err(RasterError::InvalidGsd(f64::NAN));
        }
        for row in 0..elevations.height() {
            for col in 0..elevations.width() {
                let z = elevations.at(row, col);
                if valid.at(row, col) && !z.is_finite() {
                    return Err(RasterError::NonFiniteElevation { row, col, value: z });
                }
            }
        }
        Ok(Self { elevations, valid, gsd, origin })
    }

    /// Fully valid DEM from an elevation raster alone.
    pub fn fully_valid(elevations: Raster<f64>, gsd: f64, origin: [f64; 2]) -> Result<Self> {
        let valid = Raster::filled(elevations.width(), elevations.height(), true);
        Self::new(elevations, valid, gsd, origin)
    }

    pub fn elevations(&self) -> &Raster<f64> {
        &self.elevations
    }

    pub fn valid(&self) -> &Raster<bool> {
        &self.valid
    }

    pub fn gsd(&self) -> f64 {
        self.gsd
    }

    pub fn origin(&self) -> [f64; 2] {
        self.origin
    }

    pub fn width(&self) -> usize {
        self.elevations.width()
    }

    pub fn height(&self) -> usize {
        self.elevations.height()
    }

    pub fn is_fully_valid(&self) -> bool {
        self.valid.as_slice().iter().all(|&v| v)
    }

    /// World `(x, y)` of the pixel center `(row, col)`.
    pub fn world_xy(&self, row: usize, col: usize) -> [f64; 2] {
        [self.origin[0] + col as f64 * self.gsd, self.origin[1] + row as f64 * self.gsd]
    }

    /// Bilinearly interpolated elevation at world `(x, y)`, or `None` when the
    /// point falls outside the grid of pixel centers. Validity is not
    /// consulted; callers restrict themselves to fully valid terrain.
    pub fn sample_elevation(&self, x: f64, y: f64) -> Option<f64> {
        let fx = (x - self.origin[0]) / self.gsd;
        let fy = (y - self.origin[1]) / self.gsd;
        if !(fx >= 0.0 && fy >= 0.0) {
            return None;
        }
        let (w, h) = self.elevations.dims();
        if fx > (w - 1) as f64 || fy > (h - 1) as f64 {
            return None;
        }
        let c0 = (fx.floor() as usize).min(w - 2);
        let r0 = (fy.floor() as usize).min(h - 2);
        let tx = fx - c0 as f64;
        let ty = fy - r0 as f64;
        let z00 = self.elevations.at(r0, c0);
        let z01 = self.elevations.at(r0, c0 + 1);
        let z10 = self.elevations.at(r0 + 1, c0);
        let z11 = self.elevations.at(r0 + 1, c0 + 1);
        Some(z00 * (1.0 - tx) * (1.0 - ty) + z01 * tx * (1.0 - ty) + z10 * (1.0 - tx) * ty + z11 * tx * ty)
    }

    /// Max elevation over valid pixels, or `None` if nothing is valid.
    pub fn max_elevation(&self) -> Option<f64> {
        let mut best: Option<f64> = None;
        for row in 0..self.height() {
            for col in 0..self.width() {
                if self.valid.at(row, col) {
                    let z = self.elevations.at(row, col);
                    best = Some(best.map_or(z, |b: f64| b.max(z)));
                }
            }
        }
        best
    }

    /// Sub-DEM for a crop window; the window must lie inside the grid.
    pub fn crop(&self, row0: usize, col0: usize, size: usize) -> Result<DemGrid> {
        let elevations = self.elevations.crop(row0, col0, size)?;
        let valid = self.valid.crop(row0, col0, size)?;
        let origin = [
            self.origin[0] + col0 as f64 * self.gsd,
            self.origin[1] + row0 as f64 * self.gsd,
        ];
        DemGrid::new(elevations, valid, self.gsd, origin)
    }
}

/// Dataset-wide elevation scale used to normalize network inputs.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub dataset_std: f64,
}

impl NormalizationStats {
    pub fn new(dataset_std: f64) -> Result<Self> {
        if !(dataset_std.is_finite() && dataset_std > 0.0) {
            return Err(RasterError::InvalidStd(dataset_std));
        }
        Ok(Self { dataset_std })
    }
}

/// Square crop window on a parent raster, identified by its center pixel.
///
/// The window spans rows `center.0 - size_px/2 ..` for `size_px` rows (and
/// likewise for columns, integer division), which must lie inside the parent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CropSpec {
    pub size_px: usize,
    pub gsd: f64,
    /// Center pixel as `(row, col)`.
    pub center: (usize, usize),
}

impl CropSpec {
    /// Top-left corner `(row0, col0)` of the window.
    pub fn corner(&self) -> Option<(usize, usize)> {
        let half = self.size_px / 2;
        let row0 = self.center.0.checked_sub(half)?;
        let col0 = self.center.1.checked_sub(half)?;
        Some((row0, col0))
    }

    /// Ground footprint in square meters: `(size_px * gsd)^2`.
    pub fn footprint_area_m2(&self) -> f64 {
        let side = self.size_px as f64 * self.gsd;
        side * side
    }

    /// World-axis-aligned footprint rectangle given the parent's origin.
    pub fn footprint(&self, parent_origin: [f64; 2]) -> Option<WorldRect> {
        let (row0, col0) = self.corner()?;
        let min = [
            parent_origin[0] + col0 as f64 * self.gsd,
            parent_origin[1] + row0 as f64 * self.gsd,
        ];
        let side = (self.size_px - 1) as f64 * self.gsd;
        Some(WorldRect { min, max: [min[0] + side, min[1] + side] })
    }
}

/// Axis-aligned rectangle in world coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorldRect {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl WorldRect {
    pub fn center(&self) -> [f64; 2] {
        [(self.min[0] + self.max[0]) / 2.0, (self.min[1] + self.max[1]) / 2.0]
    }
}

/// Mean-centers a crop's elevations and scales by the dataset-wide std.
///
/// The crop must be entirely finite (sampled from valid terrain).
pub fn normalize_crop(crop: &Raster<f64>, stats: &NormalizationStats) -> Result<Raster<f64>> {
    if !(stats.dataset_std.is_finite() && stats.dataset_std > 0.0) {
        return Err(RasterError::InvalidStd(stats.dataset_std));
    }
    if crop.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(RasterError::InvalidCrop);
    }
    let mean = crop.mean();
    Ok(crop.map(|v| (v - mean) / stats.dataset_std))
}
