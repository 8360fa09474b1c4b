//! On-disk raster container and image exports.
//!
//! Rasters are stored in a minimal binary container (magic `SG2R`), always
//! little-endian, always row-major, with `f32` payloads for scalar fields
//! and `u8` payloads for masks. In-memory math stays `f64`; the container is
//! the only place precision is intentionally dropped. Georeferencing and
//! display scaling travel in a JSON sidecar next to the raster
//! (`<name>.meta.json`). For quick looks there are 16-bit grayscale PNG and
//! ASCII PGM exports with the linear scaling recorded in the sidecar.

use std::fs;
use std::io::{Read as _, Write as _};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{DemGrid, Raster, RasterError, Result};

const MAGIC: &[u8; 4] = b"SG2R";
const VERSION: u16 = 1;
const DTYPE_F32: u8 = 0;
const DTYPE_U8: u8 = 1;

/// Payload of a container file.
#[derive(Debug, Clone, PartialEq)]
pub enum ContainerData {
    /// `f32` payload widened to `f64`.
    F32(Raster<f64>),
    U8(Raster<u8>),
}

/// Sidecar metadata; every field optional so producers record what they know.
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
pub struct MetaSidecar {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gsd: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub origin: Option<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset_std: Option<f64>,
    /// `(lo, hi)` mapped to the integer range of an image export.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub png_scale: Option<(f64, f64)>,
}

fn io_err(path: &Path, source: std::io::Error) -> RasterError {
    RasterError::Io { path: path.display().to_string(), source }
}

fn format_err(path: &Path, reason: impl Into<String>) -> RasterError {
    RasterError::Format { path: path.display().to_string(), reason: reason.into() }
}

/// `foo.sg2r -> foo.meta.json`; other names just gain the suffix.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
    let stem = name.strip_suffix(".sg2r").unwrap_or(name);
    path.with_file_name(format!("{stem}.meta.json"))
}

fn write_header(buf: &mut Vec<u8>, dtype: u8, width: usize, height: usize) {
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.push(dtype);
    buf.extend_from_slice(&(width as u32).to_le_bytes());
    buf.extend_from_slice(&(height as u32).to_le_bytes());
}

/// Writes a scalar raster as `f32` payload.
pub fn write_f32(path: &Path, raster: &Raster<f64>) -> Result<()> {
    let mut buf = Vec::with_capacity(15 + raster.as_slice().len() * 4);
    write_header(&mut buf, DTYPE_F32, raster.width(), raster.height());
    for &v in raster.as_slice() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| io_err(path, e))
}

/// Writes a mask raster as `u8` payload (`true -> 1`).
pub fn write_mask(path: &Path, mask: &Raster<bool>) -> Result<()> {
    let mut buf = Vec::with_capacity(15 + mask.as_slice().len());
    write_header(&mut buf, DTYPE_U8, mask.width(), mask.height());
    buf.extend(mask.as_slice().iter().map(|&v| u8::from(v)));
    fs::write(path, buf).map_err(|e| io_err(path, e))
}

/// Reads any container file.
pub fn read(path: &Path) -> Result<ContainerData> {
    let mut file = fs::File::open(path).map_err(|e| io_err(path, e))?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes).map_err(|e| io_err(path, e))?;
    if bytes.len() < 15 {
        return Err(format_err(path, "file shorter than header"));
    }
    if &bytes[0..4] != MAGIC {
        return Err(format_err(path, "bad magic"));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(format_err(path, format!("unsupported version {version}")));
    }
    let dtype = bytes[6];
    let width = u32::from_le_bytes(bytes[7..11].try_into().unwrap()) as usize;
    let height = u32::from_le_bytes(bytes[11..15].try_into().unwrap()) as usize;
    let n = width
        .checked_mul(height)
        .ok_or_else(|| format_err(path, "dimension overflow"))?;
    let payload = &bytes[15..];
    match dtype {
        DTYPE_F32 => {
            if payload.len() != n * 4 {
                return Err(format_err(
                    path,
                    format!("expected {} payload bytes, found {}", n * 4, payload.len()),
                ));
            }
            let data = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect();
            Ok(ContainerData::F32(Raster::from_vec(width, height, data)?))
        }
        DTYPE_U8 => {
            if payload.len() != n {
                return Err(format_err(
                    path,
                    format!("expected {} payload bytes, found {}", n, payload.len()),
                ));
            }
            Ok(ContainerData::U8(Raster::from_vec(width, height, payload.to_vec())?))
        }
        other => Err(format_err(path, format!("unknown dtype tag {other}"))),
    }
}

/// Reads a container expected to hold a scalar field.
pub fn read_f32(path: &Path) -> Result<Raster<f64>> {
    match read(path)? {
        ContainerData::F32(r) => Ok(r),
        ContainerData::U8(_) => Err(format_err(path, "expected f32 payload, found u8")),
    }
}

/// Reads a container expected to hold a mask; any nonzero byte is `true`.
pub fn read_mask(path: &Path) -> Result<Raster<bool>> {
    match read(path)? {
        ContainerData::U8(r) => Ok(r.map(|v| v != 0)),
        ContainerData::F32(_) => Err(format_err(path, "expected u8 payload, found f32")),
    }
}

pub fn write_sidecar(raster_path: &Path, meta: &MetaSidecar) -> Result<()> {
    let path = sidecar_path(raster_path);
    let text = serde_json::to_string_pretty(meta)
        .map_err(|e| RasterError::Json { path: path.display().to_string(), source: e })?;
    fs::write(&path, text).map_err(|e| io_err(&path, e))
}

pub fn read_sidecar(raster_path: &Path) -> Result<MetaSidecar> {
    let path = sidecar_path(raster_path);
    let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
    serde_json::from_str(&text)
        .map_err(|e| RasterError::Json { path: path.display().to_string(), source: e })
}

impl DemGrid {
    /// Writes `<base>.sg2r` (elevations), `<base>.valid.sg2r` (mask) and
    /// `<base>.meta.json` (georeferencing) into `dir`.
    pub fn save(&self, dir: &Path, base: &str) -> Result<PathBuf> {
        let elev_path = dir.join(format!("{base}.sg2r"));
        write_f32(&elev_path, self.elevations())?;
        write_mask(&dir.join(format!("{base}.valid.sg2r")), self.valid())?;
        write_sidecar(
            &elev_path,
            &MetaSidecar { gsd: Some(self.gsd()), origin: Some(self.origin()), ..Default::default() },
        )?;
        Ok(elev_path)
    }

    /// Loads a DEM written by [`DemGrid::save`]; `path` is the elevation
    /// container. A missing mask file means fully valid.
    pub fn load(path: &Path) -> Result<DemGrid> {
        let elevations = read_f32(path)?;
        let meta = read_sidecar(path)?;
        let gsd = meta.gsd.ok_or_else(|| format_err(path, "sidecar missing gsd"))?;
        let origin = meta.origin.unwrap_or([0.0, 0.0]);
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        let stem = name.strip_suffix(".sg2r").unwrap_or(name);
        let mask_path = path.with_file_name(format!("{stem}.valid.sg2r"));
        let valid = if mask_path.exists() {
            read_mask(&mask_path)?
        } else {
            Raster::filled(elevations.width(), elevations.height(), true)
        };
        DemGrid::new(elevations, valid, gsd, origin)
    }
}

/// Maps `raster` linearly from `range` (default: its finite min/max) onto
/// `0..=u16::MAX` and returns the `(lo, hi)` actually used. A degenerate
/// range maps everything to 0.
fn quantize_u16(raster: &Raster<f64>, range: Option<(f64, f64)>) -> (Vec<u16>, (f64, f64)) {
    let (lo, hi) = range
        .or_else(|| raster.finite_min_max())
        .unwrap_or((0.0, 0.0));
    let span = hi - lo;
    let data = raster
        .as_slice()
        .iter()
        .map(|&v| {
            if span <= 0.0 || !v.is_finite() {
                0u16
            } else {
                (((v - lo) / span).clamp(0.0, 1.0) * f64::from(u16::MAX)).round() as u16
            }
        })
        .collect();
    (data, (lo, hi))
}

/// Writes a 16-bit grayscale PNG plus a sidecar recording the linear scale.
pub fn export_png16(
    path: &Path,
    raster: &Raster<f64>,
    range: Option<(f64, f64)>,
) -> Result<(f64, f64)> {
    let (pixels, scale) = quantize_u16(raster, range);
    let mut img = image::ImageBuffer::<image::Luma<u16>, Vec<u16>>::new(
        raster.width() as u32,
        raster.height() as u32,
    );
    for (i, p) in img.pixels_mut().enumerate() {
        *p = image::Luma([pixels[i]]);
    }
    img.save(path)
        .map_err(|e| format_err(path, format!("png encode failed: {e}")))?;
    write_sidecar(path, &MetaSidecar { png_scale: Some(scale), ..Default::default() })?;
    Ok(scale)
}

/// Writes an ASCII PGM (P2, maxval 65535) plus the scale sidecar.
pub fn export_pgm(
    path: &Path,
    raster: &Raster<f64>,
    range: Option<(f64, f64)>,
) -> Result<(f64, f64)> {
    let (pixels, scale) = quantize_u16(raster, range);
    let mut file = fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut text = format!("P2\n{} {}\n65535\n", raster.width(), raster.height());
    for row in pixels.chunks(raster.width()) {
        let line: Vec<String> = row.iter().map(u16::to_string).collect();
        text.push_str(&line.join(" "));
        text.push('\n');
    }
    file.write_all(text.as_bytes()).map_err(|e| io_err(path, e))?;
    write_sidecar(path, &MetaSidecar { png_scale: Some(scale), ..Default::default() })?;
    Ok(scale)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn ramp(width: usize, height: usize) -> Raster<f64> {
        Raster::from_vec(width, height, (0..width * height).map(|i| i as f64 * 0.25).collect())
            .unwrap()
    }

    #[test]
    fn f32_round_trip_is_exact_at_f32_precision() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("field.sg2r");
        let r = ramp(7, 5);
        write_f32(&path, &r).unwrap();
        let back = read_f32(&path).unwrap();
        assert_eq!(back.dims(), (7, 5));
        for (a, b) in r.as_slice().iter().zip(back.as_slice()) {
            assert_eq!(*a as f32, *b as f32);
            assert_eq!(*b, f64::from(*a as f32)); // widened exactly
        }
    }

    #[test]
    fn mask_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("mask.sg2r");
        let mut m = Raster::filled(4, 3, true);
        m.set(2, 1, false);
        write_mask(&path, &m).unwrap();
        assert_eq!(read_mask(&path).unwrap(), m);
        assert!(read_f32(&path).is_err());
    }

    #[test]
    fn corrupt_containers_are_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.sg2r");
        fs::write(&path, b"NOPE").unwrap();
        assert!(matches!(read(&path), Err(RasterError::Format { .. })));

        let good = dir.path().join("good.sg2r");
        write_f32(&good, &ramp(4, 4)).unwrap();
        let mut bytes = fs::read(&good).unwrap();
        bytes.truncate(bytes.len() - 3);
        fs::write(&good, &bytes).unwrap();
        assert!(matches!(read(&good), Err(RasterError::Format { .. })));
    }

    #[test]
    fn dem_save_load_round_trip() {
        let dir = tempdir().unwrap();
        let mut valid = Raster::filled(5, 4, true);
        valid.set(0, 0, false);
        let dem = DemGrid::new(ramp(5, 4), valid, 2.5, [100.0, -50.0]).unwrap();
        let path = dem.save(dir.path(), "dem").unwrap();
        let back = DemGrid::load(&path).unwrap();
        assert_eq!(back.gsd(), 2.5);
        assert_eq!(back.origin(), [100.0, -50.0]);
        assert_eq!(back.valid(), dem.valid());
        assert_eq!(back.elevations().at(2, 3), dem.elevations().at(2, 3));
    }

    #[test]
    fn sidecar_paths_strip_container_suffix() {
        assert_eq!(sidecar_path(Path::new("/a/dem.sg2r")), PathBuf::from("/a/dem.meta.json"));
        assert_eq!(sidecar_path(Path::new("view.png")), PathBuf::from("view.png.meta.json"));
    }

    #[test]
    fn png_export_records_scale() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("view.png");
        let r = ramp(8, 8);
        let scale = export_png16(&path, &r, None).unwrap();
        assert_eq!(scale, (0.0, 63.0 * 0.25));
        let meta = read_sidecar(&path).unwrap();
        assert_eq!(meta.png_scale, Some(scale));
        let img = image::open(&path).unwrap().into_luma16();
        assert_eq!(img.get_pixel(0, 0).0[0], 0);
        assert_eq!(img.get_pixel(7, 7).0[0], u16::MAX);
    }

    #[test]
    fn pgm_export_is_ascii_p2() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("view.pgm");
        export_pgm(&path, &ramp(3, 2), Some((0.0, 1.0))).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("P2\n3 2\n65535\n"));
        assert_eq!(text.split_whitespace().count(), 4 + 6);
    }

    #[test]
    fn constant_raster_quantizes_to_zero() {
        let r = Raster::filled(3, 3, 5.0);
        let (pixels, scale) = quantize_u16(&r, None);
        assert_eq!(scale, (5.0, 5.0));
        assert!(pixels.iter().all(|&p| p == 0));
    }
}
