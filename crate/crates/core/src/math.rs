//! Fixed-size vector algebra and the attitude matrices used by the plant and
//! the linearizing transform.
//!
//! Attitude is parameterised by Euler angles `(phi, theta, psi)` composed as
//! `R = Rx(phi) * Ry(theta) * Rz(psi)` (body to inertial, body rates
//! `omega_b` expressed in the body frame). This is the one sequence whose
//! inverse kinematics reproduce [`att_kinematics`], so that
//! `d/dt R = R * skew(omega_b)` holds whenever `theta_dot = A(theta) * omega_b`.
//! A consequence worth knowing: the thrust axis `R * e3` does not depend on
//! `psi`.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// `cos(pitch)` at or below this value is treated as the kinematic singularity.
pub const COS_PITCH_FLOOR: f64 = 1e-6;

#[derive(Debug, Error, Clone, Copy, PartialEq)]
#[error("attitude kinematics singular: cos(pitch) = {cos_pitch:e}")]
pub struct KinematicSingularity {
    pub cos_pitch: f64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InertiaError {
    #[error("inertia matrix has non-finite entries")]
    NonFinite,
    #[error("inertia matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("inertia matrix is not positive definite")]
    NotPositiveDefinite,
}

/// Roll, pitch and heading in radians.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EulerAngles {
    pub phi: f64,
    pub theta: f64,
    pub psi: f64,
}

impl EulerAngles {
    pub const fn new(phi: f64, theta: f64, psi: f64) -> Self {
        Self { phi, theta, psi }
    }

    pub fn from_vec(v: &Vec3) -> Self {
        Self::new(v.x, v.y, v.z)
    }

    pub fn to_vec(self) -> Vec3 {
        Vec3::new(self.phi, self.theta, self.psi)
    }

    /// Copy with heading wrapped to `(-pi, pi]`. Integration keeps heading
    /// unwrapped; wrap only when reporting.
    pub fn wrapped(self) -> Self {
        Self { psi: wrap_angle(self.psi), ..self }
    }

    /// `(cos(theta), tan(theta))`, or the singularity when the pitch is at
    /// +-pi/2 within [`COS_PITCH_FLOOR`].
    pub fn pitch_terms(&self) -> Result<(f64, f64), KinematicSingularity> {
        let c = self.theta.cos();
        if c <= COS_PITCH_FLOOR || !c.is_finite() {
            return Err(KinematicSingularity { cos_pitch: c });
        }
        Ok((c, self.theta.sin() / c))
    }
}

/// Wraps an angle to `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w - 2.0 * PI
    } else {
        w
    }
}

/// Cross-product matrix: `skew(w) * v == w.cross(v)`.
pub fn skew(w: &Vec3) -> Mat3 {
    Mat3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// Euler-rate map `A(theta)` with `theta_dot = A * omega_b`.
pub fn att_kinematics(att: &EulerAngles) -> Result<Mat3, KinematicSingularity> {
    let (ct, _) = att.pitch_terms()?;
    let st = att.theta.sin();
    let (sp, cp) = att.psi.sin_cos();
    Ok(Mat3::new(
        cp,
        -sp,
        0.0,
        ct * sp,
        ct * cp,
        0.0,
        -st * cp,
        st * sp,
        ct,
    ) / ct)
}

/// Body-to-inertial rotation `Rx(phi) * Ry(theta) * Rz(psi)`.
pub fn rot_body_to_inertial(att: &EulerAngles) -> Mat3 {
    let (sf, cf) = att.phi.sin_cos();
    let (st, ct) = att.theta.sin_cos();
    let (sp, cp) = att.psi.sin_cos();
    Mat3::new(
        ct * cp,
        -ct * sp,
        st,
        cf * sp + sf * st * cp,
        cf * cp - sf * st * sp,
        -sf * ct,
        sf * sp - cf * st * cp,
        sf * cp + cf * st * sp,
        cf * ct,
    )
}

/// Roll and pitch that point the body z axis along `axis` (any nonzero
/// vector with positive z component). Heading does not enter the thrust axis
/// under this Euler sequence.
pub fn tilt_from_thrust_axis(axis: &Vec3) -> (f64, f64) {
    let n = axis.normalize();
    let theta = n.x.clamp(-1.0, 1.0).asin();
    let phi = (-n.y).atan2(n.z);
    (phi, theta)
}

/// Validated rigid-body inertia with its inverse cached.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Inertia {
    j: Mat3,
    j_inv: Mat3,
}

impl Inertia {
    pub fn new(j: Mat3) -> Result<Self, InertiaError> {
        if j.iter().any(|v| !v.is_finite()) {
            return Err(InertiaError::NonFinite);
        }
        let asym = (j - j.transpose()).amax();
        if asym > 1e-12 * j.amax().max(1.0) {
            return Err(InertiaError::NotSymmetric(asym));
        }
        let chol = j.cholesky().ok_or(InertiaError::NotPositiveDefinite)?;
        Ok(Self { j, j_inv: chol.inverse() })
    }

    pub fn diagonal(jx: f64, jy: f64, jz: f64) -> Result<Self, InertiaError> {
        Self::new(Mat3::from_diagonal(&Vec3::new(jx, jy, jz)))
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.j
    }

    pub fn inverse(&self) -> &Mat3 {
        &self.j_inv
    }
}

/// Gyroscopic coupling `J^-1 (w x J w)`.
pub fn gyroscopic(w: &Vec3, inertia: &Inertia) -> Vec3 {
    inertia.inverse() * w.cross(&(inertia.matrix() * w))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn max_abs(m: &Mat3) -> f64 {
        m.amax()
    }

    #[test]
    fn skew_matches_printed_pattern() {
        let s = skew(&Vec3::new(1.0, 2.0, 3.0));
        let expected = Mat3::new(0.0, -3.0, 2.0, 3.0, 0.0, -1.0, -2.0, 1.0, 0.0);
        assert_eq!(s, expected);
        assert_eq!(skew(&Vec3::zeros()), Mat3::zeros());
        assert_eq!(skew(&Vec3::x()) * Vec3::y(), Vec3::z());
    }

    #[test]
    fn skew_is_antisymmetric_and_annihilates_its_vector() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let w = Vec3::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0));
            let s = skew(&w);
            assert_eq!(s, -s.transpose());
            assert!((s * w).amax() < 1e-15);
        }
    }

    #[test]
    fn kinematics_at_zero_and_quarter_turn_heading() {
        let a0 = att_kinematics(&EulerAngles::default()).unwrap();
        assert!(max_abs(&(a0 - Mat3::identity())) < 1e-15);
        let a = att_kinematics(&EulerAngles::new(0.0, 0.0, PI / 2.0)).unwrap();
        let expected = Mat3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        assert!(max_abs(&(a - expected)) < 1e-15);
    }

    #[test]
    fn kinematics_rejects_vertical_pitch() {
        let err = att_kinematics(&EulerAngles::new(0.0, PI / 2.0, 0.0)).unwrap_err();
        assert!(err.cos_pitch <= COS_PITCH_FLOOR);
        assert!(att_kinematics(&EulerAngles::new(0.0, -PI / 2.0, 0.3)).is_err());
        assert!(att_kinematics(&EulerAngles::new(0.0, PI / 2.0 - 1e-4, 0.3)).is_ok());
    }

    #[test]
    fn rotation_is_proper_orthonormal() {
        assert_eq!(rot_body_to_inertial(&EulerAngles::default()), Mat3::identity());
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let att = EulerAngles::new(
                rng.gen_range(-PI..PI),
                rng.gen_range(-PI..PI),
                rng.gen_range(-10.0..10.0),
            );
            let r = rot_body_to_inertial(&att);
            assert!(max_abs(&(r.transpose() * r - Mat3::identity())) < 1e-12);
            assert!((r.determinant() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rotation_matches_elementary_product() {
        // Independent route: compose the three elementary rotations.
        let att = EulerAngles::new(0.4, -0.7, 2.1);
        let rx = nalgebra::Rotation3::from_axis_angle(&Vec3::x_axis(), att.phi);
        let ry = nalgebra::Rotation3::from_axis_angle(&Vec3::y_axis(), att.theta);
        let rz = nalgebra::Rotation3::from_axis_angle(&Vec3::z_axis(), att.psi);
        let composed = (rx * ry * rz).into_inner();
        assert!(max_abs(&(composed - rot_body_to_inertial(&att))) < 1e-15);
    }

    #[test]
    fn thrust_axis_recovers_tilt() {
        let att = EulerAngles::new(0.3, -0.9, 1.7);
        let axis = rot_body_to_inertial(&att) * Vec3::z() * 7.0;
        let (phi, theta) = tilt_from_thrust_axis(&axis);
        assert!((phi - att.phi).abs() < 1e-14);
        assert!((theta - att.theta).abs() < 1e-14);
    }

    #[test]
    fn gyroscopic_examples() {
        let j = Inertia::diagonal(1.0, 2.0, 3.0).unwrap();
        // w x Jw = [1,1,1] x [1,2,3] = [1,-2,1] by hand.
        let hg = gyroscopic(&Vec3::new(1.0, 1.0, 1.0), &j);
        assert!((hg - Vec3::new(1.0, -1.0, 1.0 / 3.0)).amax() < 1e-15);
        assert_eq!(gyroscopic(&Vec3::zeros(), &j), Vec3::zeros());
        let iso = Inertia::diagonal(0.7, 0.7, 0.7).unwrap();
        assert!(gyroscopic(&Vec3::new(0.3, -2.0, 5.0), &iso).amax() < 1e-15);
    }

    #[test]
    fn gyroscopic_torque_is_orthogonal_to_rate() {
        let j = Inertia::new(Mat3::new(0.03, 0.001, 0.0, 0.001, 0.05, 0.002, 0.0, 0.002, 0.09)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let w = Vec3::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0));
            let torque = w.cross(&(j.matrix() * w));
            assert!(w.dot(&torque).abs() < 1e-12);
        }
    }

    #[test]
    fn inertia_validation() {
        assert!(matches!(Inertia::diagonal(1.0, -1.0, 1.0), Err(InertiaError::NotPositiveDefinite)));
        let asym = Mat3::new(1.0, 0.5, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(matches!(Inertia::new(asym), Err(InertiaError::NotSymmetric(_))));
        assert!(matches!(Inertia::diagonal(f64::NAN, 1.0, 1.0), Err(InertiaError::NonFinite)));
    }

    #[test]
    fn wrap_angle_range() {
        assert_eq!(wrap_angle(PI), PI);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-15);
        assert!((wrap_angle(3.0 * PI + 0.1) - (-PI + 0.1)).abs() < 1e-12);
        assert!((wrap_angle(0.25) - 0.25).abs() < 1e-15);
    }
}
