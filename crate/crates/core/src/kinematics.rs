//! Analytic kinematics of the 3-DoF (abduction, hip pitch, knee) leg.
//!
//! All positions are expressed in the hip frame, whose axes are aligned
//! with the body frame (x forward, y left, z up). With every joint at zero
//! the leg hangs straight down and the foot sits at
//! `(0, s * abduction_offset, -(thigh + calf))`, where `s` is +1 for left
//! legs and -1 for right legs. The knee angle is negative (knee points
//! backward).

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Determinant below which a leg Jacobian is treated as singular.
pub const SINGULAR_DET: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KinematicsError {
    #[error("foot target out of reach: in-plane distance {distance:.6} m outside [{min:.6}, {max:.6}]")]
    OutOfReach { distance: f64, min: f64, max: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn sign(self) -> f64 {
        match self {
            Side::Left => 1.0,
            Side::Right => -1.0,
        }
    }

    pub fn mirrored(self) -> Side {
        match self {
            Side::Left => Side::Right,
            Side::Right => Side::Left,
        }
    }
}

/// Link lengths of one leg. The abduction offset is given unsigned and the
/// side decides its sign.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LegGeometry {
    pub abduction_offset: f64,
    pub thigh_length: f64,
    pub calf_length: f64,
}

impl Default for LegGeometry {
    fn default() -> Self {
        Self {
            abduction_offset: 0.08,
            thigh_length: 0.213,
            calf_length: 0.213,
        }
    }
}

impl LegGeometry {
    /// Bounds on the in-plane hip-to-foot distance.
    pub fn planar_reach(&self) -> (f64, f64) {
        ((self.thigh_length - self.calf_length).abs(), self.thigh_length + self.calf_length)
    }

    /// Bounds on the full 3-D hip-to-foot distance.
    pub fn spatial_reach(&self) -> (f64, f64) {
        let (lo, hi) = self.planar_reach();
        let d2 = self.abduction_offset * self.abduction_offset;
        ((d2 + lo * lo).sqrt(), (d2 + hi * hi).sqrt())
    }
}

/// Joint angles `(abduction, hip, knee)` in radians.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointAngles(pub Vector3<f64>);

impl JointAngles {
    pub fn new(abduction: f64, hip: f64, knee: f64) -> Self {
        Self(Vector3::new(abduction, hip, knee))
    }

    pub fn zeros() -> Self {
        Self(Vector3::zeros())
    }

    pub fn abduction(&self) -> f64 {
        self.0.x
    }

    pub fn hip(&self) -> f64 {
        self.0.y
    }

    pub fn knee(&self) -> f64 {
        self.0.z
    }
}

pub fn forward(q: &JointAngles, geo: &LegGeometry, side: Side) -> Vector3<f64> {
    let (l1, l2) = (geo.thigh_length, geo.calf_length);
    let y_off = side.sign() * geo.abduction_offset;
    let (sa, ca) = q.abduction().sin_cos();
    let (sh, ch) = q.hip().sin_cos();
    let (shk, chk) = (q.hip() + q.knee()).sin_cos();

    let x = -l1 * sh - l2 * shk;
    let z_plane = -l1 * ch - l2 * chk;
    Vector3::new(x, y_off * ca - z_plane * sa, y_off * sa + z_plane * ca)
}

/// Knee-backward inverse kinematics.
pub fn inverse(p: &Vector3<f64>, geo: &LegGeometry, side: Side) -> Result<JointAngles, KinematicsError> {
    let (l1, l2) = (geo.thigh_length, geo.calf_length);
    let y_off = side.sign() * geo.abduction_offset;
    let (min_r, max_r) = geo.planar_reach();

    let rho2 = p.y * p.y + p.z * p.z;
    let leg_plane2 = rho2 - y_off * y_off;
    if leg_plane2 < -1e-12 {
        return Err(KinematicsError::OutOfReach {
            distance: rho2.sqrt(),
            min: geo.abduction_offset,
            max: max_r,
        });
    }
    let z_plane = -leg_plane2.max(0.0).sqrt();
    let abduction = wrap_angle(p.z.atan2(p.y) - z_plane.atan2(y_off));

    let r2 = p.x * p.x + z_plane * z_plane;
    let r = r2.sqrt();
    let tol = 1e-12 * (1.0 + max_r);
    if r > max_r + tol || r < min_r - tol {
        return Err(KinematicsError::OutOfReach {
            distance: r,
            min: min_r,
            max: max_r,
        });
    }
    let cos_knee = ((r2 - l1 * l1 - l2 * l2) / (2.0 * l1 * l2)).clamp(-1.0, 1.0);
    let knee = -cos_knee.acos();
    let a = l1 + l2 * knee.cos();
    let b = l2 * knee.sin();
    let hip = (-p.x).atan2(-z_plane) - b.atan2(a);
    Ok(JointAngles::new(abduction, wrap_angle(hip), knee))
}

/// Analytic Jacobian `d forward / d q` (columns: abduction, hip, knee).
pub fn jacobian(q: &JointAngles, geo: &LegGeometry, side: Side) -> Matrix3<f64> {
    let (l1, l2) = (geo.thigh_length, geo.calf_length);
    let y_off = side.sign() * geo.abduction_offset;
    let (sa, ca) = q.abduction().sin_cos();
    let (sh, ch) = q.hip().sin_cos();
    let (shk, chk) = (q.hip() + q.knee()).sin_cos();

    let x = -l1 * sh - l2 * shk;
    let z_plane = -l1 * ch - l2 * chk;

    Matrix3::new(
        0.0,
        z_plane,
        -l2 * chk,
        -y_off * sa - z_plane * ca,
        x * sa,
        -l2 * shk * sa,
        y_off * ca - z_plane * sa,
        -x * ca,
        l2 * shk * ca,
    )
}

pub fn is_singular(j: &Matrix3<f64>) -> bool {
    j.determinant().abs() < SINGULAR_DET
}

/// Pulls a hip-frame target into the reachable set so that [`inverse`]
/// succeeds. Returns the clipped point and whether clipping happened.
pub fn clip_to_reach(p: &Vector3<f64>, geo: &LegGeometry, side: Side) -> (Vector3<f64>, bool) {
    let y_off = side.sign() * geo.abduction_offset;
    let mut out = *p;
    let mut clipped = false;

    let rho = (p.y * p.y + p.z * p.z).sqrt();
    if rho < geo.abduction_offset {
        clipped = true;
        if rho > 1e-12 {
            let s = geo.abduction_offset / rho;
            out.y *= s;
            out.z *= s;
        } else {
            out.y = y_off;
            out.z = 0.0;
        }
    }

    let (lo, hi) = geo.spatial_reach();
    // keep a hair inside the boundary so the acos stays well-conditioned
    let (lo, hi) = (lo + 1e-9, hi - 1e-9);
    let n = out.norm();
    if n > hi {
        out *= hi / n;
        clipped = true;
    } else if n < lo {
        if n > 1e-12 {
            out *= lo / n;
        } else {
            out = Vector3::new(0.0, y_off, -lo);
        }
        clipped = true;
    }
    (out, clipped)
}

/// Damped least-squares solve of `J x = b`.
pub fn damped_solve(j: &Matrix3<f64>, b: &Vector3<f64>, lambda: f64) -> Vector3<f64> {
    if let Some(inv) = j.try_inverse() {
        if j.determinant().abs() > SINGULAR_DET {
            return inv * b;
        }
    }
    let jt = j.transpose();
    let m = j * jt + Matrix3::identity() * (lambda * lambda);
    match m.try_inverse() {
        Some(inv) => jt * (inv * b),
        None => Vector3::zeros(),
    }
}

pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut w = a % two_pi;
    if w > std::f64::consts::PI {
        w -= two_pi;
    } else if w <= -std::f64::consts::PI {
        w += two_pi;
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn geo() -> LegGeometry {
        LegGeometry::default()
    }

    #[test]
    fn straight_leg_forward() {
        let p = forward(&JointAngles::zeros(), &geo(), Side::Left);
        assert_relative_eq!(p, Vector3::new(0.0, 0.08, -0.426), epsilon = 1e-15);
        let p = forward(&JointAngles::zeros(), &geo(), Side::Right);
        assert_relative_eq!(p, Vector3::new(0.0, -0.08, -0.426), epsilon = 1e-15);
    }

    #[test]
    fn right_angle_knee_matches_law_of_cosines() {
        let g = geo();
        let q = JointAngles::new(0.0, 0.0, -FRAC_PI_2);
        let p = forward(&q, &g, Side::Left);
        // hip and abduction at zero: thigh straight down, calf horizontal
        assert_relative_eq!(p.z, -(0.213 + 0.213 * (FRAC_PI_2).cos()), epsilon = 1e-15);
        assert_relative_eq!(p.x, 0.213, epsilon = 1e-15);
        let planar = (p.norm_squared() - 0.08f64.powi(2)).sqrt();
        let expected = (0.213f64.powi(2) * 2.0 + 2.0 * 0.213 * 0.213 * (-FRAC_PI_2).cos()).sqrt();
        assert_relative_eq!(planar, expected, epsilon = 1e-12);
    }

    #[test]
    fn inverse_of_straight_leg() {
        let q = inverse(&Vector3::new(0.0, 0.08, -0.426), &geo(), Side::Left).unwrap();
        assert_relative_eq!(q.0, Vector3::zeros(), epsilon = 1e-7);
    }

    #[test]
    fn inverse_at_max_reach_has_zero_knee() {
        let g = geo();
        let p = forward(&JointAngles::new(0.2, 0.4, 0.0), &g, Side::Right);
        let q = inverse(&p, &g, Side::Right).unwrap();
        assert!(q.knee().abs() < 1e-6, "knee {}", q.knee());
        assert_relative_eq!(forward(&q, &g, Side::Right), p, epsilon = 1e-9);
    }

    #[test]
    fn out_of_reach_is_reported() {
        let err = inverse(&Vector3::new(0.0, 0.08, -0.5), &geo(), Side::Left).unwrap_err();
        assert!(matches!(err, KinematicsError::OutOfReach { .. }));
    }

    #[test]
    fn straight_leg_is_singular() {
        let j = jacobian(&JointAngles::zeros(), &geo(), Side::Left);
        assert!(j.determinant().abs() < 1e-12);
        assert!(is_singular(&j));
        let j = jacobian(&JointAngles::new(0.0, 0.8, -1.6), &geo(), Side::Left);
        assert!(!is_singular(&j));
    }

    #[test]
    fn clip_brings_target_into_reach() {
        let g = geo();
        for p in [
            Vector3::new(0.0, 0.0, -1.0),
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(0.3, 0.01, 0.0),
            Vector3::new(0.0, 0.0, -0.05),
        ] {
            let (c, _) = clip_to_reach(&p, &g, Side::Left);
            assert!(inverse(&c, &g, Side::Left).is_ok(), "{p:?} -> {c:?}");
        }
    }

    fn joint_strategy() -> impl Strategy<Value = JointAngles> {
        (-0.8f64..0.8, -1.2f64..1.2, -2.6f64..-0.2).prop_map(|(a, h, k)| JointAngles::new(a, h, k))
    }

    proptest! {
        #[test]
        fn fk_ik_roundtrip(q in joint_strategy(), left in any::<bool>()) {
            let side = if left { Side::Left } else { Side::Right };
            let g = geo();
            let p = forward(&q, &g, side);
            let q2 = inverse(&p, &g, side).unwrap();
            let p2 = forward(&q2, &g, side);
            prop_assert!((p - p2).norm() < 1e-9);
        }

        #[test]
        fn mirror_symmetry(q in joint_strategy()) {
            let g = geo();
            let left = forward(&q, &g, Side::Left);
            let mirrored = JointAngles::new(-q.abduction(), q.hip(), q.knee());
            let right = forward(&mirrored, &g, Side::Right);
            prop_assert!((left - Vector3::new(right.x, -right.y, right.z)).norm() < 1e-12);
        }
    }
}
