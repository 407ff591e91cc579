//! Feedback linearization of the extended plant.
//!
//! Outputs are the position `r` (relative degree 4 per axis) and the heading
//! `psi` (relative degree 2). Their highest derivatives are affine in the
//! command,
//!
//! ```text
//! [r''''; psi''] = E(theta, zeta) * u_bar + [h_r; h_psi] + [d_r; d_psi]
//! ```
//!
//! where `E` is block lower-triangular with `det E = zeta^2`, `h_*` collect
//! the known nonlinearities and `d_*` the disturbance pass-through. The flat
//! coordinates are `z = [r, v, a, s, psi, eta]` (14 states, no internal
//! dynamics).

use nalgebra::{Matrix4, SVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math::{
    att_kinematics, gyroscopic, rot_body_to_inertial, skew, tilt_from_thrust_axis, EulerAngles,
    KinematicSingularity, Mat3, Vec3,
};
use crate::model::{
    angular_acceleration, CommandBar, DisturbanceSample, ExtendedState, VehicleParams,
};

pub const FLAT_DIM: usize = 14;
pub type FlatVector = SVector<f64, FLAT_DIM>;

/// Condition number of `E` above which the feedback logs a warning.
pub const CONDITION_WARN: f64 = 1e8;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FlatState {
    pub r: Vec3,
    pub v: Vec3,
    pub a: Vec3,
    /// Jerk.
    pub s: Vec3,
    pub psi: f64,
    pub eta: f64,
}

impl FlatState {
    pub fn to_vector(&self) -> FlatVector {
        let mut out = FlatVector::zeros();
        out.fixed_rows_mut::<3>(0).copy_from(&self.r);
        out.fixed_rows_mut::<3>(3).copy_from(&self.v);
        out.fixed_rows_mut::<3>(6).copy_from(&self.a);
        out.fixed_rows_mut::<3>(9).copy_from(&self.s);
        out[12] = self.psi;
        out[13] = self.eta;
        out
    }

    pub fn from_vector(z: &FlatVector) -> Self {
        Self {
            r: z.fixed_rows::<3>(0).into_owned(),
            v: z.fixed_rows::<3>(3).into_owned(),
            a: z.fixed_rows::<3>(6).into_owned(),
            s: z.fixed_rows::<3>(9).into_owned(),
            psi: z[12],
            eta: z[13],
        }
    }

    /// `[r_x, r_y, r_z, psi]`.
    pub fn outputs(&self) -> [f64; 4] {
        [self.r.x, self.r.y, self.r.z, self.psi]
    }
}

/// Command of the linearized chains: snap for position, angular
/// acceleration for heading.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VirtualCommand {
    pub v_r: Vec3,
    pub v_psi: f64,
}

impl VirtualCommand {
    pub fn new(v_r: Vec3, v_psi: f64) -> Self {
        Self { v_r, v_psi }
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.v_r.x, self.v_r.y, self.v_r.z, self.v_psi]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(Vec3::new(a[0], a[1], a[2]), a[3])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum DomainViolation {
    NonFinite,
    Thrust { zeta: f64, zeta_min: f64 },
    Roll { phi: f64, limit: f64 },
    Pitch { theta: f64, limit: f64 },
}

impl std::fmt::Display for DomainViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::NonFinite => write!(f, "state has non-finite components"),
            Self::Thrust { zeta, zeta_min } => {
                write!(f, "thrust zeta = {zeta:.6} not above zeta_min = {zeta_min}")
            }
            Self::Roll { phi, limit } => write!(f, "|roll| = {:.6} rad not below {limit:.6}", phi.abs()),
            Self::Pitch { theta, limit } => {
                write!(f, "|pitch| = {:.6} rad not below {limit:.6}", theta.abs())
            }
        }
    }
}

#[derive(Debug, Error, Clone, Copy, PartialEq)]
pub enum FlError {
    #[error(transparent)]
    Singular(#[from] KinematicSingularity),
    #[error("state outside the linearization domain: {0}")]
    OutsideDomain(DomainViolation),
}

/// Margins that shrink the invertibility domain `{zeta != 0, |phi| < pi/2,
/// |theta| < pi/2}` to a practical operating region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DomainMargins {
    pub zeta_min: f64,
    pub tilt_margin: f64,
}

impl Default for DomainMargins {
    fn default() -> Self {
        Self { zeta_min: crate::model::DEFAULT_ZETA_MIN, tilt_margin: crate::model::DEFAULT_TILT_MARGIN }
    }
}

impl From<&VehicleParams> for DomainMargins {
    fn from(p: &VehicleParams) -> Self {
        Self { zeta_min: p.zeta_min, tilt_margin: p.tilt_margin }
    }
}

pub fn domain_violation(x: &ExtendedState, m: &DomainMargins) -> Option<DomainViolation> {
    if !x.is_finite() {
        return Some(DomainViolation::NonFinite);
    }
    let limit = std::f64::consts::FRAC_PI_2 - m.tilt_margin;
    if x.zeta <= m.zeta_min {
        Some(DomainViolation::Thrust { zeta: x.zeta, zeta_min: m.zeta_min })
    } else if x.theta.phi.abs() >= limit {
        Some(DomainViolation::Roll { phi: x.theta.phi, limit })
    } else if x.theta.theta.abs() >= limit {
        Some(DomainViolation::Pitch { theta: x.theta.theta, limit })
    } else {
        None
    }
}

pub fn in_domain(x: &ExtendedState, m: &DomainMargins) -> bool {
    domain_violation(x, m).is_none()
}

/// Heading-rate row: `eta = b_psi . omega_b`.
pub fn b_psi(att: &EulerAngles) -> Result<Vec3, KinematicSingularity> {
    let (_, t) = att.pitch_terms()?;
    let (sp, cp) = att.psi.sin_cos();
    Ok(Vec3::new(-t * cp, t * sp, 1.0))
}

/// Time derivative of [`b_psi`] along `theta_dot = A(theta) omega_b`.
pub fn b_psi_dot(att: &EulerAngles, omega_b: &Vec3) -> Result<Vec3, KinematicSingularity> {
    let (c, t) = att.pitch_terms()?;
    let rates = att_kinematics(att)? * omega_b;
    let (pitch_rate, heading_rate) = (rates.y, rates.z);
    let (sp, cp) = att.psi.sin_cos();
    let sec2 = 1.0 / (c * c);
    Ok(Vec3::new(
        -pitch_rate * cp * sec2 + t * sp * heading_rate,
        pitch_rate * sp * sec2 + t * cp * heading_rate,
        0.0,
    ))
}

/// Known heading nonlinearity `b_psi_dot . omega_b - b_psi . h_g`.
pub fn h_psi(x: &ExtendedState, p: &VehicleParams) -> Result<f64, KinematicSingularity> {
    let hg = gyroscopic(&x.omega_b, &p.inertia);
    Ok(b_psi_dot(&x.theta, &x.omega_b)?.dot(&x.omega_b) - b_psi(&x.theta)?.dot(&hg))
}

/// Heading disturbance `b_psi . d`.
pub fn d_psi(att: &EulerAngles, d: &Vec3) -> Result<f64, KinematicSingularity> {
    Ok(b_psi(att)?.dot(d))
}

/// Command coupling of `u2`, `u3` into the heading acceleration.
pub fn h_psi_star(att: &EulerAngles, u2: f64, u3: f64) -> Result<f64, KinematicSingularity> {
    let b = b_psi(att)?;
    Ok(b.x * u2 + b.y * u3)
}

/// Position jerk `R ([0, 0, chi] + S(omega_b) [0, 0, zeta]) + a_d_dot`.
pub fn jerk(x: &ExtendedState, a_d_dot: &Vec3) -> Vec3 {
    let r = rot_body_to_inertial(&x.theta);
    r * (Vec3::new(0.0, 0.0, x.chi) + skew(&x.omega_b) * Vec3::new(0.0, 0.0, x.zeta)) + a_d_dot
}

/// Position snap from the expanded derivative of the jerk, with the body
/// angular acceleration taken from the plant.
pub fn snap_raw(x: &ExtendedState, u: &CommandBar, w: &DisturbanceSample, p: &VehicleParams) -> Vec3 {
    let r = rot_body_to_inertial(&x.theta);
    let wd = angular_acceleration(x, u, w, p);
    let om = &x.omega_b;
    let command_term = Vec3::new(wd.y * x.zeta, -wd.x * x.zeta, u.u1_ddot);
    let rate_term = 2.0 * x.chi * Vec3::new(om.y, -om.x, 0.0);
    let centripetal = x.zeta * Vec3::new(om.x * om.z, om.y * om.z, -(om.x * om.x + om.y * om.y));
    r * (command_term + rate_term + centripetal) + w.a_d_ddot
}

/// Heading acceleration `b_psi . omega_b_dot + b_psi_dot . omega_b`, with the
/// angular acceleration taken from the plant.
pub fn psi_ddot_raw(
    x: &ExtendedState,
    u: &CommandBar,
    w: &DisturbanceSample,
    p: &VehicleParams,
) -> Result<f64, KinematicSingularity> {
    let wd = angular_acceleration(x, u, w, p);
    Ok(b_psi(&x.theta)?.dot(&wd) + b_psi_dot(&x.theta, &x.omega_b)?.dot(&x.omega_b))
}

/// Known snap nonlinearity.
pub fn h_r(x: &ExtendedState, p: &VehicleParams) -> Vec3 {
    let r = rot_body_to_inertial(&x.theta);
    let om = &x.omega_b;
    let hg = gyroscopic(om, &p.inertia);
    let with_thrust = Vec3::new(
        om.x * om.z - hg.y,
        om.y * om.z + hg.x,
        -(om.x * om.x + om.y * om.y),
    );
    r * (x.zeta * with_thrust + 2.0 * x.chi * Vec3::new(om.y, -om.x, 0.0))
}

/// Disturbance pass-through into the snap. Only the roll and pitch
/// components of the rotational disturbance enter, scaled by thrust.
pub fn d_r(x: &ExtendedState, w: &DisturbanceSample) -> Vec3 {
    let r = rot_body_to_inertial(&x.theta);
    r * Vec3::new(x.zeta * w.d.y, -x.zeta * w.d.x, 0.0) + w.a_d_ddot
}

/// `B_r = R * [[0, 0, zeta], [0, -zeta, 0], [1, 0, 0]]`, mapping
/// `[u1_ddot, u2, u3]` to snap.
pub fn thrust_block(att: &EulerAngles, zeta: f64) -> Mat3 {
    let m = Mat3::new(0.0, 0.0, zeta, 0.0, -zeta, 0.0, 1.0, 0.0, 0.0);
    rot_body_to_inertial(att) * m
}

/// The transformed position command `u_r = B_r [u1_ddot, u2, u3]`.
pub fn position_command_transform(x: &ExtendedState, u: &CommandBar) -> Vec3 {
    thrust_block(&x.theta, x.zeta) * Vec3::new(u.u1_ddot, u.u2, u.u3)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecouplingMatrix {
    m: Matrix4<f64>,
    det: f64,
}

impl DecouplingMatrix {
    pub fn matrix(&self) -> &Matrix4<f64> {
        &self.m
    }

    pub fn determinant(&self) -> f64 {
        self.det
    }

    /// 2-norm condition number; infinite when singular.
    pub fn condition_number(&self) -> f64 {
        let sv = self.m.singular_values();
        let (lo, hi) = (sv.min(), sv.max());
        if lo == 0.0 {
            f64::INFINITY
        } else {
            hi / lo
        }
    }

    pub fn apply(&self, u: &CommandBar) -> [f64; 4] {
        let y = self.m * nalgebra::Vector4::from(u.to_array());
        [y[0], y[1], y[2], y[3]]
    }
}

pub fn decoupling_matrix(att: &EulerAngles, zeta: f64) -> Result<DecouplingMatrix, KinematicSingularity> {
    let b = b_psi(att)?;
    let br = thrust_block(att, zeta);
    let mut m = Matrix4::zeros();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&br);
    m[(3, 1)] = b.x;
    m[(3, 2)] = b.y;
    m[(3, 3)] = 1.0;
    Ok(DecouplingMatrix { det: m.determinant(), m })
}

/// Disturbance-free flat coordinates `z = T(x)`.
pub fn flat_state(x: &ExtendedState, p: &VehicleParams) -> Result<FlatState, KinematicSingularity> {
    let r = rot_body_to_inertial(&x.theta);
    Ok(FlatState {
        r: x.r,
        v: x.v,
        a: r * Vec3::new(0.0, 0.0, x.zeta) - p.gravity(),
        s: jerk(x, &Vec3::zeros()),
        psi: x.theta.psi,
        eta: b_psi(&x.theta)?.dot(&x.omega_b),
    })
}

/// Inverse of [`flat_state`]. Requires a thrust axis `a + g` with positive
/// vertical component.
pub fn flat_state_inverse(z: &FlatState, p: &VehicleParams) -> Result<ExtendedState, FlError> {
    let thrust = z.a + p.gravity();
    let zeta = thrust.norm();
    if !(zeta > 0.0 && thrust.z > 0.0) {
        return Err(FlError::OutsideDomain(DomainViolation::Thrust { zeta, zeta_min: 0.0 }));
    }
    let (phi, theta) = tilt_from_thrust_axis(&thrust);
    let att = EulerAngles::new(phi, theta, z.psi);
    let body_jerk = rot_body_to_inertial(&att).transpose() * z.s;
    let wx = -body_jerk.y / zeta;
    let wy = body_jerk.x / zeta;
    let b = b_psi(&att)?;
    let wz = z.eta - b.x * wx - b.y * wy;
    Ok(ExtendedState {
        r: z.r,
        v: z.v,
        theta: att,
        omega_b: Vec3::new(wx, wy, wz),
        zeta,
        chi: body_jerk.z,
    })
}

/// Snap and heading acceleration from the factored input-output map
/// `E u_bar + [h_r; h_psi] + [d_r; d_psi]`.
pub fn snap_factored(
    x: &ExtendedState,
    u: &CommandBar,
    w: &DisturbanceSample,
    p: &VehicleParams,
) -> Result<(Vec3, f64), KinematicSingularity> {
    let e = decoupling_matrix(&x.theta, x.zeta)?;
    let eu = e.apply(u);
    let snap = Vec3::new(eu[0], eu[1], eu[2]) + h_r(x, p) + d_r(x, w);
    let psi_ddot = eu[3] + h_psi(x, p)? + d_psi(&x.theta, &w.d)?;
    Ok((snap, psi_ddot))
}

/// Linearizing feedback `u_bar = E^-1 (v - [h_r; h_psi])`.
///
/// Solved by block substitution: `R^T` inverts the rotation in `B_r`, the
/// remaining 3x3 factor is a signed permutation scaled by `zeta`, and `u4`
/// follows from the last row.
pub fn fl_feedback(x: &ExtendedState, v: &VirtualCommand, p: &VehicleParams) -> Result<CommandBar, FlError> {
    if let Some(violation) = domain_violation(x, &DomainMargins::from(p)) {
        return Err(FlError::OutsideDomain(violation));
    }
    let r = rot_body_to_inertial(&x.theta);
    let q = r.transpose() * (v.v_r - h_r(x, p));
    let u1_ddot = q.z;
    let u2 = -q.y / x.zeta;
    let u3 = q.x / x.zeta;
    let u4 = v.v_psi - h_psi(x, p)? - h_psi_star(&x.theta, u2, u3)?;
    if log::log_enabled!(log::Level::Warn) {
        let cond = decoupling_matrix(&x.theta, x.zeta)?.condition_number();
        if cond > CONDITION_WARN {
            log::warn!("decoupling matrix near singular: cond(E) = {cond:.3e}");
        }
    }
    Ok(CommandBar::new(u1_ddot, u2, u3, u4))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{hover_trim, rhs, CommandBounds, DEFAULT_TILT_MARGIN};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

    fn iso_params() -> VehicleParams {
        VehicleParams::new(Mat3::identity() * 0.05, 9.81, 1.0, DEFAULT_TILT_MARGIN, CommandBounds::default())
            .unwrap()
    }

    fn random_state(rng: &mut ChaCha8Rng) -> ExtendedState {
        let mut v3 = |lim: f64| Vec3::new(rng.gen_range(-lim..lim), rng.gen_range(-lim..lim), rng.gen_range(-lim..lim));
        let (r, v, w) = (v3(10.0), v3(5.0), v3(5.0));
        ExtendedState {
            r,
            v,
            theta: EulerAngles::new(rng.gen_range(-1.2..1.2), rng.gen_range(-1.2..1.2), rng.gen_range(-3.1..3.1)),
            omega_b: w,
            zeta: rng.gen_range(2.0..20.0),
            chi: rng.gen_range(-5.0..5.0),
        }
    }

    /// Central-difference directional derivative of `f` along `dx`.
    fn along<F: Fn(&ExtendedState) -> f64>(f: F, x: &ExtendedState, dx: &ExtendedState, h: f64) -> f64 {
        let xv = x.to_vector();
        let dv = dx.to_vector();
        let plus = ExtendedState::from_vector(&(xv + dv * h));
        let minus = ExtendedState::from_vector(&(xv - dv * h));
        (f(&plus) - f(&minus)) / (2.0 * h)
    }

    #[test]
    fn b_psi_examples() {
        assert_eq!(b_psi(&EulerAngles::new(0.4, 0.0, 1.0)).unwrap(), Vec3::new(-0.0, 0.0, 1.0));
        let b = b_psi(&EulerAngles::new(0.0, FRAC_PI_4, 0.0)).unwrap();
        assert!((b - Vec3::new(-1.0, 0.0, 1.0)).amax() < 1e-15);
        assert!(b_psi(&EulerAngles::new(0.0, FRAC_PI_2, 0.0)).is_err());
    }

    #[test]
    fn b_psi_is_the_heading_row_of_the_kinematics() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let x = random_state(&mut rng);
            let a = att_kinematics(&x.theta).unwrap();
            let row = a.row(2).transpose();
            assert!((row - b_psi(&x.theta).unwrap()).amax() < 1e-15);
        }
    }

    #[test]
    fn b_psi_dot_examples() {
        let att = EulerAngles::default();
        assert_eq!(b_psi_dot(&att, &Vec3::zeros()).unwrap(), Vec3::zeros());
        let q = 0.7;
        let bd = b_psi_dot(&att, &Vec3::new(0.0, q, 0.0)).unwrap();
        assert!((bd - Vec3::new(-q, 0.0, 0.0)).amax() < 1e-15);
    }

    #[test]
    fn b_psi_dot_matches_directional_derivative() {
        let p = iso_params();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let x = random_state(&mut rng);
            let dx = rhs(&x, &CommandBar::default(), &DisturbanceSample::default(), &p).unwrap();
            let analytic = b_psi_dot(&x.theta, &x.omega_b).unwrap();
            for i in 0..3 {
                let fd = along(|s| b_psi(&s.theta).unwrap()[i], &x, &dx, 1e-6);
                assert!((fd - analytic[i]).abs() < 1e-6 * (1.0 + analytic[i].abs()), "{fd} vs {}", analytic[i]);
            }
        }
    }

    #[test]
    fn h_psi_examples() {
        let p = VehicleParams::default();
        let x = ExtendedState { theta: EulerAngles::new(0.3, -0.4, 2.0), zeta: 9.81, ..Default::default() };
        assert_eq!(h_psi(&x, &p).unwrap(), 0.0);
        // isotropic inertia: gyroscopic part vanishes
        let iso = iso_params();
        let x = ExtendedState { omega_b: Vec3::new(0.3, 0.8, -0.2), zeta: 9.81, ..Default::default() };
        let expected = b_psi_dot(&x.theta, &x.omega_b).unwrap().dot(&x.omega_b);
        assert!((h_psi(&x, &iso).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn jerk_examples() {
        let x = ExtendedState { chi: 1.0, ..Default::default() };
        assert_eq!(jerk(&x, &Vec3::zeros()), Vec3::new(0.0, 0.0, 1.0));
        let x = ExtendedState { zeta: 9.81, omega_b: Vec3::new(0.0, 0.1, 0.0), ..Default::default() };
        assert!((jerk(&x, &Vec3::zeros()) - Vec3::new(0.981, 0.0, 0.0)).amax() < 1e-15);
        let x = ExtendedState { zeta: 9.81, ..Default::default() };
        assert_eq!(jerk(&x, &Vec3::zeros()), Vec3::zeros());
    }

    #[test]
    fn jerk_is_derivative_of_acceleration() {
        let p = VehicleParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let x = random_state(&mut rng);
            let u = CommandBar::new(1.0, 2.0, -1.0, 0.5);
            let dx = rhs(&x, &u, &DisturbanceSample::default(), &p).unwrap();
            let j = jerk(&x, &Vec3::zeros());
            for i in 0..3 {
                let fd = along(|s| flat_state(s, &p).unwrap().a[i], &x, &dx, 1e-6);
                assert!((fd - j[i]).abs() < 1e-6 * (1.0 + j[i].abs()));
            }
        }
    }

    #[test]
    fn snap_raw_examples() {
        let p = VehicleParams::default();
        let w0 = DisturbanceSample::default();
        let x = ExtendedState { zeta: 9.81, ..Default::default() };
        let s = snap_raw(&x, &CommandBar::new(2.5, 0.0, 0.0, 0.0), &w0, &p);
        assert_eq!(s, Vec3::new(0.0, 0.0, 2.5));
        let (trim, u0) = hover_trim(&p, Vec3::zeros(), 0.3);
        assert!(snap_raw(&trim, &u0, &w0, &p).amax() < 1e-15);
    }

    #[test]
    fn snap_raw_is_derivative_of_jerk() {
        // Oracle independent of the algebra: differentiate the jerk along the
        // plant vector field.
        let p = VehicleParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..200 {
            let x = random_state(&mut rng);
            let u = CommandBar::new(rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0));
            let w = DisturbanceSample { d: Vec3::new(0.1, -0.2, 0.3), ..Default::default() };
            let dx = rhs(&x, &u, &w, &p).unwrap();
            let snap = snap_raw(&x, &u, &w, &p);
            for i in 0..3 {
                let fd = along(|s| jerk(s, &Vec3::zeros())[i], &x, &dx, 1e-6);
                assert!((fd - snap[i]).abs() < 1e-5 * (1.0 + snap[i].abs()), "{fd} vs {}", snap[i]);
            }
            let psi_dd = psi_ddot_raw(&x, &u, &w, &p).unwrap();
            let fd = along(|s| b_psi(&s.theta).unwrap().dot(&s.omega_b), &x, &dx, 1e-6);
            assert!((fd - psi_dd).abs() < 1e-5 * (1.0 + psi_dd.abs()));
        }
    }

    #[test]
    fn h_r_examples() {
        let iso = iso_params();
        let x = ExtendedState { zeta: 7.0, chi: 3.0, theta: EulerAngles::new(0.2, 0.1, 0.0), ..Default::default() };
        assert_eq!(h_r(&x, &iso), Vec3::zeros());
        let x = ExtendedState { zeta: 9.81, omega_b: Vec3::new(0.1, 0.0, 0.0), ..Default::default() };
        assert!((h_r(&x, &iso) - Vec3::new(0.0, 0.0, -0.0981)).amax() < 1e-15);
        let x = ExtendedState { chi: 1.0, omega_b: Vec3::new(0.0, 0.5, 0.0), ..Default::default() };
        assert!((h_r(&x, &iso) - Vec3::new(1.0, 0.0, 0.0)).amax() < 1e-15);
    }

    #[test]
    fn d_r_examples_and_scalings() {
        let x = ExtendedState { zeta: 9.81, ..Default::default() };
        assert_eq!(d_r(&x, &DisturbanceSample::default()), Vec3::zeros());
        let w = DisturbanceSample { d: Vec3::new(0.01, 0.0, 0.0), ..Default::default() };
        assert!((d_r(&x, &w) - Vec3::new(0.0, -0.0981, 0.0)).amax() < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let x = random_state(&mut rng);
            let w = DisturbanceSample { d: Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), 0.7), ..Default::default() };
            let doubled = ExtendedState { zeta: 2.0 * x.zeta, ..x };
            assert_eq!(d_r(&doubled, &w), 2.0 * d_r(&x, &w));
            let w3 = DisturbanceSample { d: 3.0 * w.d, ..w };
            assert!((d_r(&x, &w3) - 3.0 * d_r(&x, &w)).amax() < 1e-13);
        }
    }

    #[test]
    fn decoupling_matrix_at_hover() {
        let e = decoupling_matrix(&EulerAngles::default(), 9.81).unwrap();
        let expected = Matrix4::new(
            0.0, 0.0, 9.81, 0.0, //
            0.0, -9.81, 0.0, 0.0, //
            1.0, 0.0, 0.0, 0.0, //
            0.0, 0.0, 0.0, 1.0,
        );
        assert!((e.matrix() - expected).amax() < 1e-15);
        assert!((e.determinant() - 9.81 * 9.81).abs() < 1e-12);
    }

    #[test]
    fn decoupling_matrix_is_singular_without_thrust() {
        let e = decoupling_matrix(&EulerAngles::new(0.2, 0.3, 0.1), 0.0).unwrap();
        assert_eq!(e.determinant(), 0.0);
        assert!(e.condition_number() > 1e15);
        assert!(decoupling_matrix(&EulerAngles::new(0.0, FRAC_PI_2, 0.0), 9.81).is_err());
    }

    #[test]
    fn decoupling_matrix_structure() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let x = random_state(&mut rng);
            let e = decoupling_matrix(&x.theta, x.zeta).unwrap();
            let m = e.matrix();
            assert_eq!(m.fixed_view::<3, 1>(0, 3).into_owned(), nalgebra::Vector3::zeros());
            assert_eq!(m[(3, 0)], 0.0);
            assert_eq!(m[(3, 3)], 1.0);
            let rel = (e.determinant() - x.zeta * x.zeta).abs() / (x.zeta * x.zeta);
            assert!(rel < 1e-12);
        }
    }

    #[test]
    fn domain_membership() {
        let m = DomainMargins::default();
        let mut x = ExtendedState { zeta: 9.81, theta: EulerAngles::new(0.3, -0.2, 0.0), ..Default::default() };
        assert!(in_domain(&x, &m));
        x.zeta = 0.0;
        assert!(matches!(domain_violation(&x, &m), Some(DomainViolation::Thrust { .. })));
        x.zeta = 9.81;
        x.theta.theta = FRAC_PI_2;
        assert!(matches!(domain_violation(&x, &m), Some(DomainViolation::Pitch { .. })));
        x.theta.theta = 0.0;
        x.theta.phi = -1.5;
        assert!(matches!(domain_violation(&x, &m), Some(DomainViolation::Roll { .. })));
        x.theta.phi = 0.0;
        x.chi = f64::NAN;
        assert_eq!(domain_violation(&x, &m), Some(DomainViolation::NonFinite));
    }

    #[test]
    fn flat_state_at_hover() {
        let p = VehicleParams::default();
        let r0 = Vec3::new(1.0, 2.0, 3.0);
        let (x, _) = hover_trim(&p, r0, 0.7);
        let z = flat_state(&x, &p).unwrap();
        assert_eq!(z, FlatState { r: r0, psi: 0.7, ..Default::default() });
    }

    #[test]
    fn flat_state_inverse_round_trips() {
        let p = VehicleParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..500 {
            let x = random_state(&mut rng);
            let z = flat_state(&x, &p).unwrap();
            let back = flat_state_inverse(&z, &p).unwrap();
            assert!((back.to_vector() - x.to_vector()).amax() < 1e-10, "{x:?}\n{back:?}");
        }
    }

    #[test]
    fn snap_factored_examples() {
        let p = VehicleParams::default();
        let w0 = DisturbanceSample::default();
        let (x, _) = hover_trim(&p, Vec3::zeros(), 0.0);
        let (s, pdd) = snap_factored(&x, &CommandBar::new(3.0, 0.0, 0.0, 0.0), &w0, &p).unwrap();
        assert!((s - Vec3::new(0.0, 0.0, 3.0)).amax() < 1e-15);
        assert_eq!(pdd, 0.0);
        let x = ExtendedState { theta: EulerAngles::new(0.3, 0.2, 1.0), zeta: 8.0, chi: 2.0, ..Default::default() };
        let (s, pdd) = snap_factored(&x, &CommandBar::default(), &w0, &p).unwrap();
        assert_eq!((s, pdd), (Vec3::zeros(), 0.0));
    }

    #[test]
    fn factored_and_raw_snap_agree() {
        let p = VehicleParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..1000 {
            let x = random_state(&mut rng);
            let u = CommandBar::from_array(std::array::from_fn(|_| rng.gen_range(-10.0..10.0)));
            let w = DisturbanceSample {
                d: Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)),
                a_d_ddot: Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)),
                ..Default::default()
            };
            let (s, pdd) = snap_factored(&x, &u, &w, &p).unwrap();
            assert!((s - snap_raw(&x, &u, &w, &p)).amax() < 1e-9);
            assert!((pdd - psi_ddot_raw(&x, &u, &w, &p).unwrap()).abs() < 1e-9);
        }
    }

    #[test]
    fn feedback_examples() {
        let p = VehicleParams::default();
        let (x, _) = hover_trim(&p, Vec3::zeros(), 0.0);
        assert_eq!(fl_feedback(&x, &VirtualCommand::default(), &p).unwrap(), CommandBar::default());
        let u = fl_feedback(&x, &VirtualCommand::new(Vec3::new(0.0, 0.0, 2.0), 0.0), &p).unwrap();
        assert!((nalgebra::Vector4::from(u.to_array()) - nalgebra::Vector4::new(2.0, 0.0, 0.0, 0.0)).amax() < 1e-15);
    }

    #[test]
    fn feedback_refuses_states_outside_domain() {
        let p = VehicleParams::default();
        let x = ExtendedState { zeta: 0.0, ..Default::default() };
        let err = fl_feedback(&x, &VirtualCommand::default(), &p).unwrap_err();
        assert!(matches!(err, FlError::OutsideDomain(DomainViolation::Thrust { .. })));
    }

    #[test]
    fn feedback_round_trip() {
        let p = VehicleParams::default();
        let w0 = DisturbanceSample::default();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..1000 {
            let x = random_state(&mut rng);
            let v = VirtualCommand::from_array(std::array::from_fn(|_| rng.gen_range(-10.0..10.0)));
            let u = fl_feedback(&x, &v, &p).unwrap();
            let (s, pdd) = snap_factored(&x, &u, &w0, &p).unwrap();
            assert!((s - v.v_r).amax() < 1e-8);
            assert!((pdd - v.v_psi).abs() < 1e-8);
        }
    }

    #[test]
    fn transformed_position_command() {
        let p = VehicleParams::default();
        let (x, _) = hover_trim(&p, Vec3::zeros(), 0.0);
        assert_eq!(position_command_transform(&x, &CommandBar::new(4.0, 0.0, 0.0, 9.0)), Vec3::new(0.0, 0.0, 4.0));
        assert_eq!(position_command_transform(&x, &CommandBar::default()), Vec3::zeros());
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for _ in 0..100 {
            let x = random_state(&mut rng);
            let u = CommandBar::from_array(std::array::from_fn(|_| rng.gen_range(-10.0..10.0)));
            let eu = decoupling_matrix(&x.theta, x.zeta).unwrap().apply(&u);
            assert!((position_command_transform(&x, &u) - Vec3::new(eu[0], eu[1], eu[2])).amax() < 1e-12);
        }
    }

    #[test]
    fn heading_command_coupling() {
        assert_eq!(h_psi_star(&EulerAngles::new(0.5, 0.0, 1.0), 3.0, 4.0).unwrap(), 0.0);
        let v = h_psi_star(&EulerAngles::new(0.0, FRAC_PI_4, 0.0), 1.0, 2.0).unwrap();
        assert!((v + 1.0).abs() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        for _ in 0..100 {
            let x = random_state(&mut rng);
            let u = CommandBar::from_array(std::array::from_fn(|_| rng.gen_range(-10.0..10.0)));
            let last_row = decoupling_matrix(&x.theta, x.zeta).unwrap().apply(&u)[3];
            let via_star = u.u4 + h_psi_star(&x.theta, u.u2, u.u3).unwrap();
            assert!((last_row - via_star).abs() < 1e-12);
            assert!((via_star - b_psi(&x.theta).unwrap().dot(&u.angular())).abs() < 1e-12);
        }
    }

    #[test]
    fn condition_number_grows_toward_vertical_pitch() {
        let mut last = 0.0;
        for i in 0..200 {
            let pitch = i as f64 * (FRAC_PI_2 - 1e-3) / 200.0;
            let cond = decoupling_matrix(&EulerAngles::new(0.0, pitch, 0.4), 9.81).unwrap().condition_number();
            assert!(cond > last, "pitch {pitch}: {cond} <= {last}");
            last = cond;
        }
    }
}
