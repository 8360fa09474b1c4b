//! View/light geometry over heightfield terrain.
//!
//! Turns a DEM plus a camera pose and a sun direction into the per-pixel
//! quantities the reflectance models consume: surface normals, unit vectors
//! toward sun and camera, the classical angle set (incidence, phase,
//! emission) and the half/difference parameterization (theta_h, phi_h,
//! theta_d, phi_d). The half/difference frame is built per pixel from the
//! normal and a north-aligned tangent: the halfway vector's polar/azimuth
//! angles are measured in that frame, then the incoming direction is rotated
//! by the rotation carrying the halfway vector onto the normal and its
//! polar/azimuth angles are the difference angles. An exact consequence used
//! as a test oracle everywhere: `theta_d` equals half the phase angle.
//!
//! Conventions: world x east, y north, z up; all direction vectors are unit
//! and point *away* from the surface; pixel `(row, col)` sits at world
//! `(origin.x + col * gsd, origin.y + row * gsd, elevation)`.

use nalgebra::{Matrix3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::{DemGrid, Raster};

#[derive(Debug, Error)]
pub enum GeomError {
    #[error("operation requires a fully valid DEM")]
    NotFullyValid,
    #[error("sun direction must be finite and nonzero")]
    InvalidSunDir,
    #[error("camera orientation must be a rotation matrix (orthonormal, det +1)")]
    BadOrientation,
    #[error("perspective field of view must lie in (0, 180) degrees, got {0}")]
    BadFov(f64),
    #[error("camera position must be finite")]
    BadCameraPosition,
    #[error("camera at z={camera_z} sits at or below the terrain (z={terrain_z})")]
    CameraBelowTerrain { camera_z: f64, terrain_z: f64 },
    #[error("sun and camera directions cancel: halfway vector undefined")]
    HalfVectorUndefined,
    #[error("halfway vector opposes the surface normal: difference frame undefined")]
    HalfVectorOpposed,
    #[error("degenerate view/light configuration at pixel ({row}, {col})")]
    DegenerateAtPixel { row: usize, col: usize },
}

pub type Result<T> = std::result::Result<T, GeomError>;

/// How a camera maps terrain to image pixels. Only the direction toward the
/// camera enters the shading model, so orthographic nadir views use a
/// constant up vector while perspective views vary per pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Projection {
    Perspective,
    OrthographicNadir,
}

/// Camera pose and intrinsics.
///
/// `orientation` is the world-to-camera rotation with rows = camera axes in
/// world coordinates (x right, y down, z forward).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    pub position: Vector3<f64>,
    pub orientation: Matrix3<f64>,
    pub fov_deg: f64,
    pub image_size: (u32, u32),
    pub projection: Projection,
}

impl CameraPose {
    pub fn new(
        position: Vector3<f64>,
        orientation: Matrix3<f64>,
        fov_deg: f64,
        image_size: (u32, u32),
        projection: Projection,
    ) -> Result<Self> {
        if !position.iter().all(|v| v.is_finite()) {
            return Err(GeomError::BadCameraPosition);
        }
        let residual = orientation * orientation.transpose() - Matrix3::identity();
        if residual.norm() > 1e-9 || (orientation.determinant() - 1.0).abs() > 1e-9 {
            return Err(GeomError::BadOrientation);
        }
        if projection == Projection::Perspective && !(fov_deg > 0.0 && fov_deg < 180.0) {
            return Err(GeomError::BadFov(fov_deg));
        }
        Ok(Self { position, orientation, fov_deg, image_size, projection })
    }

    /// Pose looking from `position` toward `target`, image up roughly along
    /// `up_hint` (falls back to north, then east, if the hint is parallel to
    /// the view direction).
    pub fn look_at(
        position: Vector3<f64>,
        target: Vector3<f64>,
        up_hint: Vector3<f64>,
        fov_deg: f64,
        image_size: (u32, u32),
        projection: Projection,
    ) -> Result<Self> {
        let forward = (target - position)
            .try_normalize(1e-12)
            .ok_or(GeomError::BadCameraPosition)?;
        let mut x_cam = forward.cross(&up_hint);
        for fallback in [Vector3::y(), Vector3::x()] {
            if x_cam.norm() > 1e-9 {
                break;
            }
            x_cam = forward.cross(&fallback);
        }
        let x_cam = x_cam.normalize();
        let y_cam = forward.cross(&x_cam);
        let orientation = Matrix3::from_rows(&[x_cam.transpose(), y_cam.transpose(), forward.transpose()]);
        Self::new(position, orientation, fov_deg, image_size, projection)
    }
}

/// Classical angle triple in radians: solar incidence, phase, emission.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassicalAngles {
    pub theta_i: f64,
    pub theta_p: f64,
    pub theta_o: f64,
}

/// Half/difference angles in radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RusinkiewiczAngles {
    pub theta_h: f64,
    pub phi_h: f64,
    pub theta_d: f64,
    pub phi_d: f64,
}

/// Everything the reflectance models need at one pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelAngles {
    pub theta_i: f64,
    pub theta_p: f64,
    pub theta_o: f64,
    pub theta_h: f64,
    pub phi_h: f64,
    pub theta_d: f64,
    pub phi_d: f64,
}

/// Dense per-pixel geometry for one (terrain, camera, sun) triple.
#[derive(Debug, Clone)]
pub struct ViewLightGeometry {
    pub normal: Raster<Vector3<f64>>,
    pub tangent: Raster<Vector3<f64>>,
    pub to_camera: Raster<Vector3<f64>>,
    /// Unit direction toward the sun, shared by all pixels (distant source).
    pub to_sun: Vector3<f64>,
    pub theta_i: Raster<f64>,
    pub theta_p: Raster<f64>,
    pub theta_o: Raster<f64>,
    pub theta_h: Raster<f64>,
    pub phi_h: Raster<f64>,
    pub theta_d: Raster<f64>,
    pub phi_d: Raster<f64>,
    pub camera: CameraPose,
}

impl ViewLightGeometry {
    pub fn dims(&self) -> (usize, usize) {
        self.normal.dims()
    }

    pub fn angles_at(&self, row: usize, col: usize) -> PixelAngles {
        PixelAngles {
            theta_i: self.theta_i.at(row, col),
            theta_p: self.theta_p.at(row, col),
            theta_o: self.theta_o.at(row, col),
            theta_h: self.theta_h.at(row, col),
            phi_h: self.phi_h.at(row, col),
            theta_d: self.theta_d.at(row, col),
            phi_d: self.phi_d.at(row, col),
        }
    }
}

fn acos_clamped(x: f64) -> f64 {
    x.clamp(-1.0, 1.0).acos()
}

/// Elevation gradients `(dz/dx, dz/dy)` in meters per meter for a fully
/// valid DEM: central differences in the interior, one-sided on the borders.
pub fn elevation_gradients(dem: &DemGrid) -> Result<Raster<(f64, f64)>> {
    if !dem.is_fully_valid() {
        return Err(GeomError::NotFullyValid);
    }
    let (w, h) = dem.elevations().dims();
    let gsd = dem.gsd();
    let z = dem.elevations();
    let mut out = Raster::filled(w, h, (0.0, 0.0));
    for r in 0..h {
        for c in 0..w {
            let dzdx = if c == 0 {
                (z.at(r, 1) - z.at(r, 0)) / gsd
            } else if c == w - 1 {
                (z.at(r, w - 1) - z.at(r, w - 2)) / gsd
            } else {
                (z.at(r, c + 1) - z.at(r, c - 1)) / (2.0 * gsd)
            };
            let dzdy = if r == 0 {
                (z.at(1, c) - z.at(0, c)) / gsd
            } else if r == h - 1 {
                (z.at(h - 1, c) - z.at(h - 2, c)) / gsd
            } else {
                (z.at(r + 1, c) - z.at(r - 1, c)) / (2.0 * gsd)
            };
            out.set(r, c, (dzdx, dzdy));
        }
    }
    Ok(out)
}

/// Unit surface normals of a fully valid DEM: `(-dz/dx, -dz/dy, 1)`
/// normalized, so every normal has positive z.
pub fn surface_normals(dem: &DemGrid) -> Result<Raster<Vector3<f64>>> {
    Ok(elevation_gradients(dem)?.map(|(dzdx, dzdy)| Vector3::new(-dzdx, -dzdy, 1.0).normalize()))
}

/// Classical incidence / phase / emission angles for unit directions.
pub fn classical_angles(
    n: &Vector3<f64>,
    w_i: &Vector3<f64>,
    w_o: &Vector3<f64>,
) -> ClassicalAngles {
    ClassicalAngles {
        theta_i: acos_clamped(n.dot(w_i)),
        theta_p: acos_clamped(w_i.dot(w_o)),
        theta_o: acos_clamped(n.dot(w_o)),
    }
}

/// World north projected into the tangent plane of `n`; falls back to east
/// when `n` is (anti)parallel to north. Heightfield normals always have
/// positive z, so the fallback never triggers on real terrain.
pub fn tangent_from_north(n: &Vector3<f64>) -> Vector3<f64> {
    for axis in [Vector3::y(), Vector3::x()] {
        let t = axis - n * n.dot(&axis);
        if let Some(unit) = t.try_normalize(1e-9) {
            return unit;
        }
    }
    unreachable!("two orthogonal axes cannot both be parallel to a unit normal")
}

/// Half/difference angles for one surface frame and direction pair.
///
/// `n` and `t` must be unit and orthogonal; `w_i`, `w_o` unit. Azimuths are
/// measured in the `(t, n x t)` basis. The difference direction is `w_i`
/// rotated by the rotation carrying the halfway vector onto `n` (identity
/// when they already coincide).
pub fn rusinkiewicz_angles(
    n: &Vector3<f64>,
    t: &Vector3<f64>,
    w_i: &Vector3<f64>,
    w_o: &Vector3<f64>,
) -> Result<RusinkiewiczAngles> {
    let half_sum = w_i + w_o;
    let h = half_sum.try_normalize(1e-12).ok_or(GeomError::HalfVectorUndefined)?;
    let b = n.cross(t);
    let theta_h = acos_clamped(n.dot(&h));
    let phi_h = h.dot(&b).atan2(h.dot(t));
    let w_d = match Rotation3::rotation_between(&h, n) {
        Some(rot) => rot * w_i,
        // Antiparallel h and n: no unique rotation exists.
        None => return Err(GeomError::HalfVectorOpposed),
    };
    let theta_d = acos_clamped(w_d.dot(n));
    let phi_d = w_d.dot(&b).atan2(w_d.dot(t));
    Ok(RusinkiewiczAngles { theta_h, phi_h, theta_d, phi_d })
}

/// Direction from the surface point toward the camera.
fn to_camera(camera: &CameraPose, p: &Vector3<f64>) -> Option<Vector3<f64>> {
    match camera.projection {
        Projection::OrthographicNadir => Some(Vector3::z()),
        Projection::Perspective => (camera.position - p).try_normalize(1e-12),
    }
}

/// Computes the full per-pixel geometry for a fully valid DEM.
///
/// Rejects a non-unit-normalizable sun direction and a perspective camera at
/// or below the terrain (bilinear surface height when over the grid, the
/// DEM's minimum elevation otherwise).
pub fn view_light_field(
    dem: &DemGrid,
    camera: &CameraPose,
    sun_dir: &Vector3<f64>,
) -> Result<ViewLightGeometry> {
    if !dem.is_fully_valid() {
        return Err(GeomError::NotFullyValid);
    }
    let w_i = sun_dir.try_normalize(1e-12).ok_or(GeomError::InvalidSunDir)?;
    if !w_i.iter().all(|v| v.is_finite()) {
        return Err(GeomError::InvalidSunDir);
    }
    if camera.projection == Projection::Perspective {
        let ground = dem
            .sample_elevation(camera.position.x, camera.position.y)
            .or_else(|| dem.elevations().finite_min_max().map(|(lo, _)| lo));
        if let Some(terrain_z) = ground {
            if camera.position.z <= terrain_z {
                return Err(GeomError::CameraBelowTerrain {
                    camera_z: camera.position.z,
                    terrain_z,
                });
            }
        }
    }

    let (w, h) = dem.elevations().dims();
    let normal = surface_normals(dem)?;
    let mut tangent = Raster::filled(w, h, Vector3::zeros());
    let mut to_cam = Raster::filled(w, h, Vector3::zeros());
    let mut theta_i = Raster::filled(w, h, 0.0);
    let mut theta_p = Raster::filled(w, h, 0.0);
    let mut theta_o = Raster::filled(w, h, 0.0);
    let mut theta_h = Raster::filled(w, h, 0.0);
    let mut phi_h = Raster::filled(w, h, 0.0);
    let mut theta_d = Raster::filled(w, h, 0.0);
    let mut phi_d = Raster::filled(w, h, 0.0);

    for r in 0..h {
        for c in 0..w {
            let [x, y] = dem.world_xy(r, c);
            let p = Vector3::new(x, y, dem.elevations().at(r, c));
            let n = normal.at(r, c);
            let w_o = to_camera(camera, &p)
                .ok_or(GeomError::DegenerateAtPixel { row: r, col: c })?;
            let t = tangent_from_north(&n);
            let classical = classical_angles(&n, &w_i, &w_o);
            let rusink = rusinkiewicz_angles(&n, &t, &w_i, &w_o)
                .map_err(|_| GeomError::DegenerateAtPixel { row: r, col: c })?;
            tangent.set(r, c, t);
            to_cam.set(r, c, w_o);
            theta_i.set(r, c, classical.theta_i);
            theta_p.set(r, c, classical.theta_p);
            theta_o.set(r, c, classical.theta_o);
            theta_h.set(r, c, rusink.theta_h);
            phi_h.set(r, c, rusink.phi_h);
            theta_d.set(r, c, rusink.theta_d);
            phi_d.set(r, c, rusink.phi_d);
        }
    }

    Ok(ViewLightGeometry {
        normal,
        tangent,
        to_camera: to_cam,
        to_sun: w_i,
        theta_i,
        theta_p,
        theta_o,
        theta_h,
        phi_h,
        theta_d,
        phi_d,
        camera: camera.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

    fn flat_dem(w: usize, h: usize) -> DemGrid {
        DemGrid::fully_valid(Raster::filled(w, h, 0.0), 1.0, [0.0, 0.0]).unwrap()
    }

    fn nadir_camera() -> CameraPose {
        CameraPose::look_at(
            Vector3::new(2.0, 2.0, 100.0),
            Vector3::new(2.0, 2.0, 0.0),
            Vector3::y(),
            45.0,
            (64, 64),
            Projection::OrthographicNadir,
        )
        .unwrap()
    }

    #[test]
    fn normals_of_inclined_plane_are_exact() {
        // z = 2x + 3y is linear, so both central and one-sided differences
        // recover the gradient exactly, borders included.
        let (w, h, gsd) = (6, 5, 0.5);
        let mut z = Raster::filled(w, h, 0.0);
        for r in 0..h {
            for c in 0..w {
                z.set(r, c, 2.0 * (c as f64 * gsd) + 3.0 * (r as f64 * gsd));
            }
        }
        let dem = DemGrid::fully_valid(z, gsd, [0.0, 0.0]).unwrap();
        let normals = surface_normals(&dem).unwrap();
        let expected = Vector3::new(-2.0, -3.0, 1.0).normalize();
        for r in 0..h {
            for c in 0..w {
                assert_relative_eq!(normals.at(r, c), expected, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn normals_require_full_validity_and_point_up() {
        let mut valid = Raster::filled(3, 3, true);
        valid.set(1, 1, false);
        let dem = DemGrid::new(Raster::filled(3, 3, 0.0), valid, 1.0, [0.0, 0.0]).unwrap();
        assert!(matches!(surface_normals(&dem), Err(GeomError::NotFullyValid)));

        let steep = DemGrid::fully_valid(
            Raster::from_vec(3, 3, (0..9).map(|i| (i % 3) as f64 * 50.0).collect()).unwrap(),
            1.0,
            [0.0, 0.0],
        )
        .unwrap();
        for n in surface_normals(&steep).unwrap().as_slice() {
            assert!(n.z > 0.0);
            assert_relative_eq!(n.norm(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn classical_angles_on_known_configurations() {
        let n = Vector3::z();
        let w_i = Vector3::new(0.0, FRAC_PI_4.sin(), FRAC_PI_4.cos());
        let a = classical_angles(&n, &w_i, &Vector3::z());
        assert_relative_eq!(a.theta_i, FRAC_PI_4, epsilon = 1e-12);
        assert_relative_eq!(a.theta_p, FRAC_PI_4, epsilon = 1e-12);
        assert_relative_eq!(a.theta_o, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn half_difference_angles_on_a_right_angle_pair() {
        // Sun at the horizon along +x, camera overhead: the halfway vector
        // leans 45 degrees east, and the difference polar angle is half the
        // 90-degree phase.
        let n = Vector3::z();
        let t = tangent_from_north(&n);
        let a = rusinkiewicz_angles(&n, &t, &Vector3::x(), &Vector3::z()).unwrap();
        assert_relative_eq!(a.theta_h, FRAC_PI_4, epsilon = 1e-12);
        assert_relative_eq!(a.theta_d, FRAC_PI_4, epsilon = 1e-12);
        // +x is at azimuth -90 from north in the (north, n x north) basis.
        assert_relative_eq!(a.phi_h, -FRAC_PI_2, epsilon = 1e-12);
        assert_relative_eq!(a.phi_d, -FRAC_PI_2, epsilon = 1e-12);
    }

    #[test]
    fn coincident_directions_make_all_angles_zero() {
        let n = Vector3::z();
        let t = tangent_from_north(&n);
        let a = rusinkiewicz_angles(&n, &t, &Vector3::z(), &Vector3::z()).unwrap();
        assert_relative_eq!(a.theta_h, 0.0, epsilon = 1e-12);
        assert_relative_eq!(a.theta_d, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn opposed_directions_are_degenerate() {
        let n = Vector3::z();
        let t = tangent_from_north(&n);
        assert!(matches!(
            rusinkiewicz_angles(&n, &t, &Vector3::x(), &(-Vector3::x())),
            Err(GeomError::HalfVectorUndefined)
        ));
        // w_i = w_o = -n puts the halfway vector exactly opposite the normal.
        assert!(matches!(
            rusinkiewicz_angles(&n, &t, &(-Vector3::z()), &(-Vector3::z())),
            Err(GeomError::HalfVectorOpposed)
        ));
    }

    #[test]
    fn tangent_is_unit_orthogonal_and_north_seeking() {
        let n = Vector3::new(0.3, -0.2, 0.9).normalize();
        let t = tangent_from_north(&n);
        assert_relative_eq!(t.norm(), 1.0, epsilon = 1e-12);
        assert_relative_eq!(t.dot(&n), 0.0, epsilon = 1e-12);
        assert!(t.y > 0.0);
        // Degenerate: normal straight north falls back to east.
        let t2 = tangent_from_north(&Vector3::y());
        assert_relative_eq!(t2, Vector3::x(), epsilon = 1e-12);
    }

    #[test]
    fn view_field_nadir_over_flat_terrain() {
        let dem = flat_dem(5, 5);
        let sun = Vector3::new(1.0, 0.0, 1.0);
        let geom = view_light_field(&dem, &nadir_camera(), &sun).unwrap();
        assert_relative_eq!(geom.to_sun.norm(), 1.0, epsilon = 1e-15);
        for r in 0..5 {
            for c in 0..5 {
                assert_relative_eq!(geom.to_camera.at(r, c), Vector3::z(), epsilon = 1e-15);
                assert_relative_eq!(geom.theta_o.at(r, c), 0.0, epsilon = 1e-12);
                assert_relative_eq!(geom.theta_i.at(r, c), FRAC_PI_4, epsilon = 1e-12);
                // theta_d is half the phase everywhere.
                assert_relative_eq!(
                    geom.theta_d.at(r, c),
                    geom.theta_p.at(r, c) / 2.0,
                    epsilon = 1e-12
                );
            }
        }
    }

    #[test]
    fn perspective_camera_below_terrain_is_rejected() {
        let dem = flat_dem(5, 5);
        let cam = CameraPose::look_at(
            Vector3::new(2.0, 2.0, -1.0),
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::y(),
            45.0,
            (32, 32),
            Projection::Perspective,
        )
        .unwrap();
        assert!(matches!(
            view_light_field(&dem, &cam, &Vector3::z()),
            Err(GeomError::CameraBelowTerrain { .. })
        ));
        // Same pose above the surface is fine.
        let cam = CameraPose { position: Vector3::new(2.0, 2.0, 10.0), ..cam };
        assert!(view_light_field(&dem, &cam, &Vector3::z()).is_ok());
    }

    #[test]
    fn bad_sun_and_bad_orientation_are_rejected() {
        let dem = flat_dem(4, 4);
        assert!(matches!(
            view_light_field(&dem, &nadir_camera(), &Vector3::zeros()),
            Err(GeomError::InvalidSunDir)
        ));
        let skewed = Matrix3::new(1.0, 0.2, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(matches!(
            CameraPose::new(Vector3::z(), skewed, 45.0, (8, 8), Projection::Perspective),
            Err(GeomError::BadOrientation)
        ));
        assert!(matches!(
            CameraPose::new(Vector3::z(), Matrix3::identity(), 0.0, (8, 8), Projection::Perspective),
            Err(GeomError::BadFov(_))
        ));
    }

    fn arb_unit_upper() -> impl Strategy<Value = Vector3<f64>> {
        // Directions with z bounded away from the horizon so the halfway
        // vector never collapses.
        (-1.0f64..1.0, -1.0f64..1.0, 0.2f64..1.0)
            .prop_map(|(x, y, z)| Vector3::new(x, y, z).normalize())
    }

    proptest! {
        #[test]
        fn theta_d_is_half_phase(w_i in arb_unit_upper(), w_o in arb_unit_upper()) {
            let n = Vector3::z();
            let t = tangent_from_north(&n);
            let a = rusinkiewicz_angles(&n, &t, &w_i, &w_o).unwrap();
            let phase = acos_clamped(w_i.dot(&w_o));
            prop_assert!((a.theta_d - phase / 2.0).abs() < 1e-12);
        }

        #[test]
        fn angles_are_rotation_invariant(
            w_i in arb_unit_upper(),
            w_o in arb_unit_upper(),
            axis in arb_unit_upper(),
            angle in -3.0f64..3.0,
        ) {
            let n = Vector3::new(0.1, -0.2, 1.0).normalize();
            let t = tangent_from_north(&n);
            let a = rusinkiewicz_angles(&n, &t, &w_i, &w_o).unwrap();
            let rot = Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle);
            let b = rusinkiewicz_angles(&(rot * n), &(rot * t), &(rot * w_i), &(rot * w_o)).unwrap();
            prop_assert!((a.theta_h - b.theta_h).abs() < 1e-9);
            prop_assert!((a.phi_h - b.phi_h).abs() < 1e-9);
            prop_assert!((a.theta_d - b.theta_d).abs() < 1e-9);
            prop_assert!((a.phi_d - b.phi_d).abs() < 1e-9);
        }
    }
}
