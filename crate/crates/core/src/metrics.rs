//! Image quality metrics, the uniform baseline, and evaluation reports.
//!
//! PSNR is reported against a caller-chosen peak (the max of the ground
//! truth sample, decided at evaluation time) with an explicit `Exact`
//! sentinel for zero error instead of an infinity that poisons averages.
//! SSIM uses the standard 11x11 Gaussian window (sigma 1.5), valid-mode
//! (windows fully inside the image), and stabilization constants
//! `C1 = (0.01 peak)^2`, `C2 = (0.03 peak)^2`.
//!
//! The *uniform baseline* answers "how well does one global coefficient
//! vector explain the images?" — the spatially varying fit must beat it to
//! justify its extra freedom. Its radiance spans a different range than the
//! target, so [`range_normalize`] maps a rendered image's range onto the
//! target's before scoring; that keeps the comparison about structure, not
//! brightness calibration.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::brdf::ModelKind;
use crate::raster::Raster;
use crate::render::ViewBasis;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("image dimensions disagree: {0:?} vs {1:?}")]
    DimsMismatch((usize, usize), (usize, usize)),
    #[error("no pixels to compare")]
    EmptyInput,
    #[error("peak must be finite and positive, got {0}")]
    BadPeak(f64),
    #[error("images must be at least {side}x{side} for the SSIM window")]
    TooSmallForWindow { side: usize },
    #[error("baseline fit needs {needed} independent observations, got rank {rank} from {got}")]
    UnderObserved { needed: usize, got: usize, rank: usize },
    #[error("views disagree on the reflectance model")]
    ModelMismatch,
}

pub type Result<T> = std::result::Result<T, MetricsError>;

/// Mean squared error over optionally masked pixels.
pub fn mse(a: &Raster<f64>, b: &Raster<f64>, valid: Option<&Raster<bool>>) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(MetricsError::DimsMismatch(a.dims(), b.dims()));
    }
    if let Some(v) = valid {
        if v.dims() != a.dims() {
            return Err(MetricsError::DimsMismatch(v.dims(), a.dims()));
        }
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for (i, (x, y)) in a.as_slice().iter().zip(b.as_slice()).enumerate() {
        if valid.map_or(true, |v| v.as_slice()[i]) {
            let d = x - y;
            sum += d * d;
            n += 1;
        }
    }
    if n == 0 {
        return Err(MetricsError::EmptyInput);
    }
    Ok(sum / n as f64)
}

/// Peak signal-to-noise ratio; zero error is its own variant rather than an
/// infinite decibel value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Psnr {
    Decibels(f64),
    /// MSE was exactly zero.
    Exact,
}

impl Psnr {
    pub fn as_db(&self) -> Option<f64> {
        match self {
            Psnr::Decibels(db) => Some(*db),
            Psnr::Exact => None,
        }
    }
}

impl std::fmt::Display for Psnr {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Psnr::Decibels(db) => write!(f, "{db:.2} dB"),
            Psnr::Exact => f.write_str("exact"),
        }
    }
}

/// PSNR of `a` against reference `b` with the given signal peak.
pub fn psnr(
    a: &Raster<f64>,
    b: &Raster<f64>,
    valid: Option<&Raster<bool>>,
    peak: f64,
) -> Result<Psnr> {
    if !(peak.is_finite() && peak > 0.0) {
        return Err(MetricsError::BadPeak(peak));
    }
    let err = mse(a, b, valid)?;
    if err == 0.0 {
        Ok(Psnr::Exact)
    } else {
        Ok(Psnr::Decibels(10.0 * (peak * peak / err).log10()))
    }
}

const SSIM_SIDE: usize = 11;
const SSIM_SIGMA: f64 = 1.5;

fn ssim_kernel() -> [f64; SSIM_SIDE * SSIM_SIDE] {
    let mut k = [0.0; SSIM_SIDE * SSIM_SIDE];
    let c = (SSIM_SIDE / 2) as f64;
    let mut sum = 0.0;
    for r in 0..SSIM_SIDE {
        for col in 0..SSIM_SIDE {
            let d2 = (r as f64 - c).powi(2) + (col as f64 - c).powi(2);
            let w = (-d2 / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
            k[r * SSIM_SIDE + col] = w;
            sum += w;
        }
    }
    for w in &mut k {
        *w /= sum;
    }
    k
}

/// Mean structural similarity over all fully interior 11x11 windows.
///
/// Identical images score exactly 1; anti-correlated structure can push the
/// score negative.
pub fn ssim(a: &Raster<f64>, b: &Raster<f64>, peak: f64) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(MetricsError::DimsMismatch(a.dims(), b.dims()));
    }
    if !(peak.is_finite() && peak > 0.0) {
        return Err(MetricsError::BadPeak(peak));
    }
    let (w, h) = a.dims();
    if w < SSIM_SIDE || h < SSIM_SIDE {
        return Err(MetricsError::TooSmallForWindow { side: SSIM_SIDE });
    }
    let kernel = ssim_kernel();
    let c1 = (0.01 * peak) * (0.01 * peak);
    let c2 = (0.03 * peak) * (0.03 * peak);
    let mut total = 0.0;
    let mut count = 0u64;
    for r0 in 0..=(h - SSIM_SIDE) {
        for c0 in 0..=(w - SSIM_SIDE) {
            let (mut mx, mut my) = (0.0, 0.0);
            let (mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0);
            for kr in 0..SSIM_SIDE {
                for kc in 0..SSIM_SIDE {
                    let wgt = kernel[kr * SSIM_SIDE + kc];
                    let x = a.at(r0 + kr, c0 + kc);
                    let y = b.at(r0 + kr, c0 + kc);
                    mx += wgt * x;
                    my += wgt * y;
                    xx += wgt * x * x;
                    yy += wgt * y * y;
                    xy += wgt * x * y;
                }
            }
            let vx = xx - mx * mx;
            let vy = yy - my * my;
            let cov = xy - mx * my;
            total += ((2.0 * mx * my + c1) * (2.0 * cov + c2))
                / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Linearly maps `rendered`'s value range onto `target`'s.
///
/// A constant rendered image carries no range information and maps to the
/// target's mean everywhere.
pub fn range_normalize(rendered: &Raster<f64>, target: &Raster<f64>) -> Result<Raster<f64>> {
    if rendered.dims() != target.dims() {
        return Err(MetricsError::DimsMismatch(rendered.dims(), target.dims()));
    }
    let (rlo, rhi) = rendered.finite_min_max().ok_or(MetricsError::EmptyInput)?;
    let (tlo, thi) = target.finite_min_max().ok_or(MetricsError::EmptyInput)?;
    if rhi - rlo <= 0.0 {
        return Ok(Raster::filled(target.width(), target.height(), target.mean()));
    }
    let gain = (thi - tlo) / (rhi - rlo);
    Ok(rendered.map(|v| tlo + (v - rlo) * gain))
}

/// A single global coefficient vector fitted to many views at once.
#[derive(Debug, Clone)]
pub struct BaselineFit {
    pub model: ModelKind,
    pub coeffs: Vec<f64>,
    pub n_obs: usize,
    /// Condition number of the accumulated normal matrix.
    pub condition: f64,
}

/// Least-squares fit of one coefficient vector shared by every pixel of
/// every view — the spatially *uniform* competitor a spatially varying fit
/// has to beat. Shadowed pixels are excluded.
pub fn uniform_baseline(views: &[(&ViewBasis, &Raster<f64>)]) -> Result<BaselineFit> {
    let model = views.first().ok_or(MetricsError::EmptyInput)?.0.model();
    let n = model.n_params();
    let mut gram = DMatrix::<f64>::zeros(n, n);
    let mut rhs = DMatrix::<f64>::zeros(n, 1);
    let mut n_obs = 0usize;
    for (view, target) in views {
        if view.model() != model {
            return Err(MetricsError::ModelMismatch);
        }
        if view.dims() != target.dims() {
            return Err(MetricsError::DimsMismatch(view.dims(), target.dims()));
        }
        let (w, h) = view.dims();
        for r in 0..h {
            for c in 0..w {
                if view.is_shadowed(r, c) {
                    continue;
                }
                let basis = view.basis_at(r, c);
                let y = target.at(r, c);
                for i in 0..n {
                    rhs[(i, 0)] += basis[i] * y;
                    for j in 0..n {
                        gram[(i, j)] += basis[i] * basis[j];
                    }
                }
                n_obs += 1;
            }
        }
    }
    if n_obs < n {
        return Err(MetricsError::UnderObserved { needed: n, got: n_obs, rank: n_obs.min(n) });
    }
    let svd = gram.clone().svd(true, true);
    let s_max = svd.singular_values[0];
    let s_min = svd.singular_values[n - 1];
    let rank = svd.singular_values.iter().filter(|s| **s > 1e-12 * s_max).count();
    if rank < n {
        return Err(MetricsError::UnderObserved { needed: n, got: n_obs, rank });
    }
    let solution = svd.solve(&rhs, 1e-12 * s_max).expect("svd.solve with u,v computed");
    Ok(BaselineFit {
        model,
        coeffs: solution.column(0).iter().copied().collect(),
        n_obs,
        condition: if s_min > 0.0 { s_max / s_min } else { f64::INFINITY },
    })
}

/// One scored sample in an evaluation run.
#[derive(Debug, Clone)]
pub struct EvalRow {
    pub sample: String,
    pub method: String,
    pub mse: f64,
    pub psnr: Psnr,
    pub ssim: f64,
}

/// Per-method aggregate of an [`EvalReport`].
#[derive(Debug, Clone, PartialEq)]
pub struct MethodSummary {
    pub method: String,
    pub n: usize,
    pub mean_mse: f64,
    /// Mean over finite PSNR rows; `None` when every row was exact.
    pub mean_psnr_db: Option<f64>,
    pub n_exact_psnr: usize,
    pub mean_ssim: f64,
}

/// Collection of per-sample scores for one or more methods.
#[derive(Debug, Clone, Default)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    /// Per-method means, in first-appearance order.
    pub fn aggregate(&self) -> Vec<MethodSummary> {
        let mut order: Vec<String> = Vec::new();
        for row in &self.rows {
            if !order.contains(&row.method) {
                order.push(row.method.clone());
            }
        }
        order
            .into_iter()
            .map(|method| {
                let rows: Vec<&EvalRow> = self.rows.iter().filter(|r| r.method == method).collect();
                let n = rows.len();
                let mean_mse = rows.iter().map(|r| r.mse).sum::<f64>() / n as f64;
                let dbs: Vec<f64> = rows.iter().filter_map(|r| r.psnr.as_db()).collect();
                MethodSummary {
                    method,
                    n,
                    mean_mse,
                    mean_psnr_db: if dbs.is_empty() {
                        None
                    } else {
                        Some(dbs.iter().sum::<f64>() / dbs.len() as f64)
                    },
                    n_exact_psnr: n - dbs.len(),
                    mean_ssim: rows.iter().map(|r| r.ssim).sum::<f64>() / n as f64,
                }
            })
            .collect()
    }

    /// Per-sample rows as CSV; exact PSNR serializes as `inf`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("sample,method,mse,psnr_db,ssim\n");
        for r in &self.rows {
            let db = r.psnr.as_db().map_or("inf".to_string(), |v| format!("{v:.6}"));
            out.push_str(&format!("{},{},{:.6e},{},{:.6}\n", r.sample, r.method, r.mse, db, r.ssim));
        }
        out
    }

    /// Aggregates as an aligned text table (columns: MSE, PSNR, SSIM).
    pub fn to_text_table(&self) -> String {
        let summaries = self.aggregate();
        let name_w = summaries
            .iter()
            .map(|s| s.method.len())
            .chain(["method".len()])
            .max()
            .unwrap_or(6);
        let mut out = format!(
            "{:<name_w$}  {:>6}  {:>12}  {:>10}  {:>8}\n",
            "method", "n", "MSE", "PSNR (dB)", "SSIM"
        );
        for s in summaries {
            let psnr = match (s.mean_psnr_db, s.n_exact_psnr) {
                (Some(db), 0) => format!("{db:.2}"),
                (Some(db), k) => format!("{db:.2}*{k}"),
                (None, _) => "exact".to_string(),
            };
            out.push_str(&format!(
                "{:<name_w$}  {:>6}  {:>12.6e}  {:>10}  {:>8.4}\n",
                s.method, s.n, s.mean_mse, psnr, s.mean_ssim
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn gradient_image(w: usize, h: usize, scale: f64) -> Raster<f64> {
        let mut r = Raster::filled(w, h, 0.0);
        for row in 0..h {
            for col in 0..w {
                r.set(row, col, scale * (row as f64 * 0.17 + (col as f64 * 0.23).sin()));
            }
        }
        r
    }

    #[test]
    fn psnr_reference_points() {
        let a = Raster::filled(4, 4, 1.0);
        // mse = peak^2 / 100 gives exactly 20 dB.
        let peak: f64 = 2.0;
        let b = Raster::filled(4, 4, 1.0 + (peak * peak / 100.0).sqrt());
        match psnr(&a, &b, None, peak).unwrap() {
            Psnr::Decibels(db) => assert_relative_eq!(db, 20.0, epsilon = 1e-12),
            Psnr::Exact => panic!("nonzero mse"),
        }
        assert_eq!(psnr(&a, &a, None, peak).unwrap(), Psnr::Exact);
        assert_eq!(format!("{}", Psnr::Exact), "exact");
        assert!(psnr(&a, &b, None, 0.0).is_err());
    }

    #[test]
    fn ssim_of_identical_images_is_exactly_one() {
        let img = gradient_image(16, 13, 1.0);
        assert_eq!(ssim(&img, &img, 2.0).unwrap(), 1.0);
    }

    #[test]
    fn ssim_penalizes_noise_and_rejects_small_images() {
        let img = gradient_image(20, 20, 1.0);
        let mut noisy = img.clone();
        let mut rng = crate::seed::stream_rng(3, "ssim-test");
        for r in 0..20 {
            for c in 0..20 {
                noisy.set(r, c, img.at(r, c) + 0.4 * crate::seed::standard_normal(&mut rng));
            }
        }
        let s = ssim(&img, &noisy, 4.0).unwrap();
        assert!(s < 0.95, "noise should cost similarity, got {s}");
        assert!(s > -1.1);
        assert!(matches!(
            ssim(&gradient_image(10, 10, 1.0), &gradient_image(10, 10, 1.0), 1.0),
            Err(MetricsError::TooSmallForWindow { .. })
        ));
    }

    #[test]
    fn ssim_goes_negative_on_inverted_structure() {
        // Half dark, half bright against its own inversion: structure is
        // perfectly anti-correlated.
        let peak = 1.0;
        let (w, h) = (22, 11);
        let mut a = Raster::filled(w, h, 0.0);
        for r in 0..h {
            for c in w / 2..w {
                a.set(r, c, peak);
            }
        }
        let b = a.map(|v| peak - v);
        assert!(ssim(&a, &b, peak).unwrap() < 0.0);
    }

    #[test]
    fn ssim_matches_direct_formula_on_one_window() {
        // An 11x11 image is a single window; recompute the score with
        // independent two-pass moments.
        let a = gradient_image(11, 11, 1.0);
        let b = gradient_image(11, 11, 1.0).map(|v| 0.8 * v + 0.05 * (v * 3.0).cos());
        let peak = 2.0;
        let got = ssim(&a, &b, peak).unwrap();

        let kernel = ssim_kernel();
        let (mut mx, mut my) = (0.0, 0.0);
        for r in 0..11 {
            for c in 0..11 {
                mx += kernel[r * 11 + c] * a.at(r, c);
                my += kernel[r * 11 + c] * b.at(r, c);
            }
        }
        let (mut vx, mut vy, mut cov) = (0.0, 0.0, 0.0);
        for r in 0..11 {
            for c in 0..11 {
                let w = kernel[r * 11 + c];
                vx += w * (a.at(r, c) - mx) * (a.at(r, c) - mx);
                vy += w * (b.at(r, c) - my) * (b.at(r, c) - my);
                cov += w * (a.at(r, c) - mx) * (b.at(r, c) - my);
            }
        }
        let c1 = (0.01 * peak) * (0.01 * peak);
        let c2 = (0.03 * peak) * (0.03 * peak);
        let want =
            ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
        assert_relative_eq!(got, want, epsilon = 1e-10);
    }

    #[test]
    fn range_normalize_matches_endpoints() {
        let rendered = Raster::from_vec(2, 2, vec![2.0, 4.0, 3.0, 2.5]).unwrap();
        let target = Raster::from_vec(2, 2, vec![10.0, 30.0, 20.0, 15.0]).unwrap();
        let out = range_normalize(&rendered, &target).unwrap();
        assert_relative_eq!(out.at(0, 0), 10.0);
        assert_relative_eq!(out.at(0, 1), 30.0);
        assert_relative_eq!(out.at(1, 0), 20.0);

        let flat = Raster::filled(2, 2, 7.0);
        let out = range_normalize(&flat, &target).unwrap();
        for &v in out.as_slice() {
            assert_relative_eq!(v, target.mean());
        }
    }

    #[test]
    fn uniform_baseline_recovers_a_truly_uniform_scene() {
        use crate::brdf::CoefficientMap;
        use crate::photogeom::{self, CameraPose, Projection};
        use crate::render;
        use nalgebra::Vector3;

        let mut z = Raster::filled(12, 12, 0.0);
        for r in 0..12 {
            for c in 0..12 {
                z.set(r, c, 0.8 * ((c as f64 * 0.6).sin() + (r as f64 * 0.8).cos()));
            }
        }
        let dem = crate::raster::DemGrid::fully_valid(z, 1.0, [0.0, 0.0]).unwrap();
        let truth = [0.7, 0.2, 0.05];
        let coeffs = CoefficientMap::uniform(ModelKind::M2, &truth, 12, 12).unwrap();
        let cam = CameraPose::look_at(
            Vector3::new(6.0, 6.0, 50.0),
            Vector3::new(6.0, 6.0, 0.0),
            Vector3::y(),
            45.0,
            (12, 12),
            Projection::OrthographicNadir,
        )
        .unwrap();
        let suns = [Vector3::new(0.6, 0.1, 0.8), Vector3::new(-0.3, 0.5, 0.9)];
        let mut views = Vec::new();
        for sun in &suns {
            let geom = photogeom::view_light_field(&dem, &cam, sun).unwrap();
            let shadow = render::shadow_mask(&dem, sun).unwrap();
            let vb = ViewBasis::new(&geom, shadow, ModelKind::M2).unwrap();
            let img = vb.forward(&coeffs).unwrap();
            views.push((vb, img));
        }
        let refs: Vec<(&ViewBasis, &Raster<f64>)> = views.iter().map(|(v, t)| (v, t)).collect();
        let fit = uniform_baseline(&refs).unwrap();
        assert_eq!(fit.model, ModelKind::M2);
        assert!(fit.n_obs > 100);
        for (got, want) in fit.coeffs.iter().zip(&truth) {
            assert_relative_eq!(got, want, epsilon = 1e-9);
        }
    }

    #[test]
    fn uniform_baseline_reports_rank_deficiency_on_flat_terrain() {
        use crate::brdf::CoefficientMap;
        use crate::photogeom::{self, CameraPose, Projection};
        use crate::render;
        use nalgebra::Vector3;

        // Flat terrain, one nadir view: every pixel has the same basis row,
        // so the M2 normal matrix has rank 1.
        let dem = crate::raster::DemGrid::fully_valid(Raster::filled(8, 8, 0.0), 1.0, [0.0, 0.0])
            .unwrap();
        let coeffs = CoefficientMap::uniform(ModelKind::M2, &[0.7, 0.2, 0.05], 8, 8).unwrap();
        let cam = CameraPose::look_at(
            Vector3::new(4.0, 4.0, 50.0),
            Vector3::new(4.0, 4.0, 0.0),
            Vector3::y(),
            45.0,
            (8, 8),
            Projection::OrthographicNadir,
        )
        .unwrap();
        let sun = Vector3::new(0.5, 0.0, 1.0);
        let geom = photogeom::view_light_field(&dem, &cam, &sun).unwrap();
        let shadow = render::shadow_mask(&dem, &sun).unwrap();
        let vb = ViewBasis::new(&geom, shadow, ModelKind::M2).unwrap();
        let img = vb.forward(&coeffs).unwrap();
        match uniform_baseline(&[(&vb, &img)]) {
            Err(MetricsError::UnderObserved { needed: 3, rank: 1, .. }) => {}
            other => panic!("expected rank-1 under-observation, got {other:?}"),
        }
    }

    #[test]
    fn report_rolls_up_by_method() {
        let report = EvalReport {
            rows: vec![
                EvalRow { sample: "s0".into(), method: "fit".into(), mse: 1.0, psnr: Psnr::Decibels(20.0), ssim: 0.9 },
                EvalRow { sample: "s1".into(), method: "fit".into(), mse: 3.0, psnr: Psnr::Exact, ssim: 0.7 },
                EvalRow { sample: "s0".into(), method: "uniform".into(), mse: 10.0, psnr: Psnr::Decibels(10.0), ssim: 0.4 },
            ],
        };
        let agg = report.aggregate();
        assert_eq!(agg.len(), 2);
        assert_eq!(agg[0].method, "fit");
        assert_eq!(agg[0].n, 2);
        assert_relative_eq!(agg[0].mean_mse, 2.0);
        assert_eq!(agg[0].mean_psnr_db, Some(20.0));
        assert_eq!(agg[0].n_exact_psnr, 1);
        let csv = report.to_csv();
        assert!(csv.contains("s1,fit,3.000000e0,inf,0.700000"));
        let table = report.to_text_table();
        assert!(table.contains("MSE"));
        assert!(table.lines().count() >= 3);
    }
}
