//! Camera viewpoint perturbations: distance (C1), spherical position (C2)
//! and in-place orientation (C3).
//!
//! Severity levels split each parameter range into five equal-width bands;
//! level `k` samples uniformly inside band `k`.

use crate::geometry::{self, Vec3};
use crate::perturbation::SeverityLevel;
use crate::rng::{CounterRng, SeedKey};
use crate::scene::CameraSpec;
use serde::{Deserialize, Serialize};

pub const DISTANCE_RANGE: (f64, f64) = (1.01, 2.00);
pub const CONE_RANGE_DEG: (f64, f64) = (15.0, 75.0);
pub const ORIENTATION_RANGE_DEG: (f64, f64) = (2.0, 10.0);

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum CameraError {
    #[error("{name} = {value} is outside [{lo}, {hi}]")]
    ParameterRange {
        name: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("degenerate camera geometry: {0}")]
    DegenerateGeometry(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CameraPerturbKind {
    Distance,
    Sphere,
    Orientation,
}

impl CameraPerturbKind {
    pub const ALL: [CameraPerturbKind; 3] = [
        CameraPerturbKind::Distance,
        CameraPerturbKind::Sphere,
        CameraPerturbKind::Orientation,
    ];
}

/// Fully resolved camera perturbation. `kind` selects which fields are applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraPerturbParams {
    pub kind: CameraPerturbKind,
    pub distance_factor: f64,
    pub delta_azimuth_deg: f64,
    pub delta_elevation_deg: f64,
    pub yaw_deg: f64,
    pub pitch_deg: f64,
    pub roll_deg: f64,
    pub cone_min_deg: f64,
    pub cone_max_deg: f64,
}

impl CameraPerturbParams {
    pub fn apply(&self, camera: &CameraSpec) -> Result<CameraSpec, CameraError> {
        match self.kind {
            CameraPerturbKind::Distance => perturb_distance(camera, self.distance_factor),
            CameraPerturbKind::Sphere => perturb_sphere(camera, self.delta_azimuth_deg, self.delta_elevation_deg),
            CameraPerturbKind::Orientation => perturb_orientation(camera, self.yaw_deg, self.pitch_deg, self.roll_deg),
        }
    }

    /// Total angular offset of the spherical move, in degrees.
    pub fn sphere_magnitude_deg(&self) -> f64 {
        self.delta_azimuth_deg.hypot(self.delta_elevation_deg)
    }
}

/// `[lo, hi]` of band `level` when `range` is cut into five equal parts.
pub fn level_band(range: (f64, f64), level: SeverityLevel) -> (f64, f64) {
    let width = (range.1 - range.0) / 5.0;
    let k = f64::from(level.get() - 1);
    let lo = range.0 + width * k;
    // Pin the top band to the range end so rounding never leaves it.
    let hi = if level.get() == 5 {
        range.1
    } else {
        range.0 + width * (k + 1.0)
    };
    (lo, hi)
}

fn check_range(name: &'static str, value: f64, (lo, hi): (f64, f64)) -> Result<(), CameraError> {
    if value.is_finite() && value >= lo && value <= hi {
        Ok(())
    } else {
        Err(CameraError::ParameterRange { name, value, lo, hi })
    }
}

/// C1: moves the camera along the line through `look_center`.
pub fn perturb_distance(camera: &CameraSpec, factor: f64) -> Result<CameraSpec, CameraError> {
    check_range("distance_factor", factor, DISTANCE_RANGE)?;
    let c = camera.look_center;
    let p = camera.position;
    let mut out = camera.clone();
    for k in 0..3 {
        out.position[k] = c[k] + factor * (p[k] - c[k]);
    }
    Ok(out)
}

/// C2: moves the camera on the sphere around `look_center` and re-aims it.
pub fn perturb_sphere(
    camera: &CameraSpec,
    delta_azimuth_deg: f64,
    delta_elevation_deg: f64,
) -> Result<CameraSpec, CameraError> {
    if delta_azimuth_deg == 0.0 && delta_elevation_deg == 0.0 {
        return Ok(camera.clone());
    }
    let c = camera.look_center;
    let rel = geometry::sub(&camera.position, &c);
    let radius = geometry::norm(&rel);
    if !(radius > 1e-12) {
        return Err(CameraError::DegenerateGeometry(
            "camera position coincides with look_center".into(),
        ));
    }
    let horizontal = rel[0].hypot(rel[1]);
    if horizontal < 1e-12 * radius {
        return Err(CameraError::DegenerateGeometry(
            "camera sits on the up-axis through look_center; azimuth is undefined".into(),
        ));
    }
    let azimuth = rel[1].atan2(rel[0]) + delta_azimuth_deg.to_radians();
    let elevation = rel[2].atan2(horizontal) + delta_elevation_deg.to_radians();
    let limit = std::f64::consts::FRAC_PI_2;
    if !(elevation > -limit && elevation < limit) {
        return Err(CameraError::DegenerateGeometry(format!(
            "resulting elevation {:.3} deg leaves (-90, 90)",
            elevation.to_degrees()
        )));
    }
    let (se, ce) = elevation.sin_cos();
    let (sa, ca) = azimuth.sin_cos();
    let position: Vec3 = [c[0] + radius * ce * ca, c[1] + radius * ce * sa, c[2] + radius * se];
    let rotation = geometry::look_at(position, c)
        .ok_or_else(|| CameraError::DegenerateGeometry("view direction parallel to the up-axis".into()))?;
    Ok(CameraSpec {
        position,
        rotation,
        ..camera.clone()
    })
}

fn check_offset(name: &'static str, deg: f64) -> Result<(), CameraError> {
    if deg == 0.0 {
        return Ok(());
    }
    check_range(name, deg.abs(), ORIENTATION_RANGE_DEG)
}

/// C3: rotates the camera in place by `Rz(yaw) * Ry(pitch) * Rx(roll)` in the world frame.
///
/// Each offset is either exactly zero (axis untouched) or has magnitude in `[2, 10]` degrees.
pub fn perturb_orientation(
    camera: &CameraSpec,
    yaw_deg: f64,
    pitch_deg: f64,
    roll_deg: f64,
) -> Result<CameraSpec, CameraError> {
    check_offset("yaw_deg", yaw_deg)?;
    check_offset("pitch_deg", pitch_deg)?;
    check_offset("roll_deg", roll_deg)?;
    let delta = geometry::ypr_to_matrix(yaw_deg.to_radians(), pitch_deg.to_radians(), roll_deg.to_radians());
    Ok(CameraSpec {
        rotation: geometry::mul(&delta, &camera.rotation),
        ..camera.clone()
    })
}

fn signed(rng: &mut CounterRng, band: (f64, f64)) -> f64 {
    let m = rng.uniform(band.0, band.1);
    if rng.coin() {
        m
    } else {
        -m
    }
}

/// Draws every camera parameter for a level; `kind` is drawn uniformly too.
pub fn sample_camera_perturbation(level: SeverityLevel, seed: u64) -> CameraPerturbParams {
    let mut rng = SeedKey::new(seed).str("camera").u64(u64::from(level.get())).rng();
    let kind = CameraPerturbKind::ALL[rng.index(3)];

    let distance_factor = {
        let (lo, hi) = level_band(DISTANCE_RANGE, level);
        rng.uniform(lo, hi)
    };

    let (cone_min_deg, cone_max_deg) = level_band(CONE_RANGE_DEG, level);
    let magnitude = rng.uniform(cone_min_deg, cone_max_deg);
    let direction = rng.uniform(0.0, 360.0).to_radians();
    let delta_azimuth_deg = magnitude * direction.cos();
    let delta_elevation_deg = magnitude * direction.sin();

    let band = level_band(ORIENTATION_RANGE_DEG, level);
    let yaw_deg = signed(&mut rng, band);
    let pitch_deg = signed(&mut rng, band);
    let roll_deg = signed(&mut rng, band);

    CameraPerturbParams {
        kind,
        distance_factor,
        delta_azimuth_deg,
        delta_elevation_deg,
        yaw_deg,
        pitch_deg,
        roll_deg,
        cone_min_deg,
        cone_max_deg,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::IDENTITY;

    fn level(k: u8) -> SeverityLevel {
        SeverityLevel::new(k).unwrap()
    }

    fn cam(position: Vec3, center: Vec3) -> CameraSpec {
        CameraSpec {
            position,
            rotation: geometry::look_at(position, center).unwrap_or(IDENTITY),
            look_center: center,
            fov_deg: 45.0,
        }
    }

    fn close(a: &Vec3, b: &Vec3, tol: f64) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn distance_scales_about_center() {
        let c = cam([0.0, 0.0, 1.0], [0.0, 0.0, 0.0]);
        assert_eq!(perturb_distance(&c, 2.0).unwrap().position, [0.0, 0.0, 2.0]);
        let c = cam([1.0, 1.0, 1.0], [1.0, 1.0, 0.0]);
        let out = perturb_distance(&c, 1.5).unwrap();
        assert!(close(&out.position, &[1.0, 1.0, 1.5], 1e-15));
        assert_eq!(out.rotation, c.rotation);
        assert!(matches!(
            perturb_distance(&c, 1.0),
            Err(CameraError::ParameterRange { .. })
        ));
    }

    #[test]
    fn sphere_identity_is_exact() {
        let c = cam([1.0, 0.5, 1.2], [0.0, 0.0, 0.8]);
        assert_eq!(perturb_sphere(&c, 0.0, 0.0).unwrap(), c);
    }

    #[test]
    fn sphere_quarter_turn_in_azimuth() {
        // Spherical-coordinate oracle: (r, az, el) = (1, 0, 0) -> (1, 90 deg, 0).
        let c = cam([1.0, 0.0, 0.0], [0.0, 0.0, 0.0]);
        let out = perturb_sphere(&c, 90.0, 0.0).unwrap();
        assert!(close(&out.position, &[0.0, 1.0, 0.0], 1e-12));
        assert!((geometry::norm(&out.position) - 1.0).abs() < 1e-12);
        let forward = geometry::forward_axis(&out.rotation);
        assert!(close(&forward, &[0.0, -1.0, 0.0], 1e-12));
    }

    #[test]
    fn sphere_rejects_pole_and_overshoot() {
        let above = cam([0.0, 0.0, 1.0], [0.0, 0.0, 0.0]);
        assert!(matches!(
            perturb_sphere(&above, 90.0, 0.0),
            Err(CameraError::DegenerateGeometry(_))
        ));
        let c = cam([1.0, 0.0, 1.0], [0.0, 0.0, 0.0]);
        assert!(matches!(
            perturb_sphere(&c, 0.0, 50.0),
            Err(CameraError::DegenerateGeometry(_))
        ));
        let degenerate = CameraSpec {
            position: [0.0; 3],
            ..c
        };
        assert!(perturb_sphere(&degenerate, 10.0, 0.0).is_err());
    }

    #[test]
    fn orientation_inverse_pair_and_closed_form() {
        let c = cam([1.0, 0.5, 1.2], [0.0, 0.0, 0.8]);
        let there = perturb_orientation(&c, 2.0, 0.0, 0.0).unwrap();
        let back = perturb_orientation(&there, -2.0, 0.0, 0.0).unwrap();
        for i in 0..3 {
            assert!(close(&back.rotation[i], &c.rotation[i], 1e-9));
        }
        let id = CameraSpec {
            rotation: IDENTITY,
            ..c.clone()
        };
        let r = perturb_orientation(&id, 5.0, 0.0, 0.0).unwrap().rotation;
        let a = 5f64.to_radians();
        let rz = [[a.cos(), -a.sin(), 0.0], [a.sin(), a.cos(), 0.0], [0.0, 0.0, 1.0]];
        for i in 0..3 {
            assert!(close(&r[i], &rz[i], 1e-12));
        }
        let full = perturb_orientation(&c, 10.0, 10.0, 10.0).unwrap();
        assert!((geometry::det(&full.rotation) - 1.0).abs() < 1e-9);
        assert_eq!(full.position, c.position);
        assert!(perturb_orientation(&c, 1.0, 0.0, 0.0).is_err());
        assert!(perturb_orientation(&c, 0.0, 0.0, 11.0).is_err());
    }

    #[test]
    fn sampling_is_deterministic_and_banded() {
        assert_eq!(
            sample_camera_perturbation(level(1), 42),
            sample_camera_perturbation(level(1), 42)
        );
        for s in 0..1000u64 {
            let p5 = sample_camera_perturbation(level(5), s);
            let m = p5.sphere_magnitude_deg();
            assert!((63.0 - 1e-9..=75.0 + 1e-9).contains(&m), "{m}");
            let p1 = sample_camera_perturbation(level(1), s);
            assert!((1.01..=1.208 + 1e-12).contains(&p1.distance_factor));
            for a in [p1.yaw_deg, p1.pitch_deg, p1.roll_deg] {
                assert!((2.0..=3.6 + 1e-12).contains(&a.abs()));
            }
        }
    }

    #[test]
    fn bands_increase_with_level() {
        for k in 1..5u8 {
            for range in [DISTANCE_RANGE, CONE_RANGE_DEG, ORIENTATION_RANGE_DEG] {
                assert!(level_band(range, level(k + 1)).1 > level_band(range, level(k)).1);
            }
        }
    }
}
