//! Small rigid-body helpers over plain arrays.
//!
//! Rotations follow the intrinsic Z-Y-X convention:
//! `R(roll, pitch, yaw) = Rz(yaw) * Ry(pitch) * Rx(roll)`.
//! The world up-axis is `+z`.

use nalgebra::{Matrix3, Vector3};

pub type Vec3 = [f64; 3];
/// Row-major 3x3 matrix.
pub type Mat3 = [[f64; 3]; 3];

pub const WORLD_UP: Vec3 = [0.0, 0.0, 1.0];
pub const IDENTITY: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

pub fn to_na(m: &Mat3) -> Matrix3<f64> {
    Matrix3::from_row_slice(&[
        m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2],
    ])
}

pub fn from_na(m: &Matrix3<f64>) -> Mat3 {
    [
        [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
        [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
        [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
    ]
}

pub fn vec_na(v: &Vec3) -> Vector3<f64> {
    Vector3::new(v[0], v[1], v[2])
}

pub fn vec_arr(v: &Vector3<f64>) -> Vec3 {
    [v[0], v[1], v[2]]
}

pub fn mul(a: &Mat3, b: &Mat3) -> Mat3 {
    from_na(&(to_na(a) * to_na(b)))
}

pub fn det(m: &Mat3) -> f64 {
    to_na(m).determinant()
}

/// `max |(R^T R - I)_ij|`.
pub fn orthonormality_error(m: &Mat3) -> f64 {
    let r = to_na(m);
    (r.transpose() * r - Matrix3::identity()).amax()
}

pub fn norm(v: &Vec3) -> f64 {
    vec_na(v).norm()
}

pub fn sub(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn rot_x(a: f64) -> Mat3 {
    let (s, c) = a.sin_cos();
    [[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]]
}

pub fn rot_y(a: f64) -> Mat3 {
    let (s, c) = a.sin_cos();
    [[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]]
}

pub fn rot_z(a: f64) -> Mat3 {
    let (s, c) = a.sin_cos();
    [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]
}

/// `Rz(yaw) * Ry(pitch) * Rx(roll)` for `rpy = [roll, pitch, yaw]`.
pub fn rpy_to_matrix(rpy: Vec3) -> Mat3 {
    ypr_to_matrix(rpy[2], rpy[1], rpy[0])
}

pub fn ypr_to_matrix(yaw: f64, pitch: f64, roll: f64) -> Mat3 {
    mul(&mul(&rot_z(yaw), &rot_y(pitch)), &rot_x(roll))
}

/// Wraps an angle into `(-pi, pi]`; in-range angles are returned bit-identical.
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    if a > -PI && a <= PI {
        return a;
    }
    let mut w = a.rem_euclid(TAU);
    if w > PI {
        w -= TAU;
    }
    w
}

/// Camera-to-world rotation looking from `eye` towards `target` with `+z` up.
///
/// Columns are forward, left, up. Returns `None` when the view direction is
/// (anti)parallel to the up-axis or `eye == target`.
pub fn look_at(eye: Vec3, target: Vec3) -> Option<Mat3> {
    let f = vec_na(&target) - vec_na(&eye);
    let len = f.norm();
    if !(len > 1e-12) {
        return None;
    }
    let forward = f / len;
    let left = vec_na(&WORLD_UP).cross(&forward);
    let left_len = left.norm();
    if left_len < 1e-9 {
        return None;
    }
    let left = left / left_len;
    let up = forward.cross(&left);
    let m = Matrix3::from_columns(&[forward, left, up]);
    Some(from_na(&m))
}

/// First column of a camera rotation: the optical axis in world coordinates.
pub fn forward_axis(m: &Mat3) -> Vec3 {
    [m[0][0], m[1][0], m[2][0]]
}

pub fn angle_between(a: &Vec3, b: &Vec3) -> f64 {
    let (a, b) = (vec_na(a), vec_na(b));
    // atan2 form stays accurate for tiny angles.
    a.cross(&b).norm().atan2(a.dot(&b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ypr_matches_closed_form() {
        let a = 5f64.to_radians();
        let m = ypr_to_matrix(a, 0.0, 0.0);
        let (s, c) = a.sin_cos();
        let expected = [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]];
        for i in 0..3 {
            for j in 0..3 {
                assert!((m[i][j] - expected[i][j]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn look_at_points_forward_axis_at_target() {
        let eye = [1.0, 2.0, 1.5];
        let target = [0.0, 0.0, 0.8];
        let r = look_at(eye, target).unwrap();
        let dir = sub(&target, &eye);
        assert!(angle_between(&forward_axis(&r), &dir) < 1e-12);
        assert!(orthonormality_error(&r) < 1e-12);
        assert!((det(&r) - 1.0).abs() < 1e-12);
        assert!(look_at([0.0, 0.0, 2.0], [0.0, 0.0, 0.0]).is_none());
    }

    #[test]
    fn wrap_angle_is_half_open() {
        use std::f64::consts::PI;
        assert_eq!(wrap_angle(PI), PI);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-15);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
    }
}
