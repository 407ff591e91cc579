//! The 14-state extended quadrotor plant.
//!
//! The thrust channel is dynamically extended: `zeta` (mass-normalised
//! thrust) and `chi` (its rate) are states, and the second derivative of
//! thrust is the first command. Rotational commands are body-axis angular
//! accelerations, added to the rate dynamics without a `J^-1` factor.

use nalgebra::SVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math::{
    att_kinematics, gyroscopic, rot_body_to_inertial, EulerAngles, Inertia, InertiaError,
    KinematicSingularity, Mat3, Vec3,
};

pub const STATE_DIM: usize = 14;
pub type StateVector = SVector<f64, STATE_DIM>;

/// `[r, v, theta, omega_b, zeta, chi]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ExtendedState {
    pub r: Vec3,
    pub v: Vec3,
    pub theta: EulerAngles,
    pub omega_b: Vec3,
    pub zeta: f64,
    pub chi: f64,
}

impl ExtendedState {
    pub fn to_vector(&self) -> StateVector {
        let mut out = StateVector::zeros();
        out.fixed_rows_mut::<3>(0).copy_from(&self.r);
        out.fixed_rows_mut::<3>(3).copy_from(&self.v);
        out.fixed_rows_mut::<3>(6).copy_from(&self.theta.to_vec());
        out.fixed_rows_mut::<3>(9).copy_from(&self.omega_b);
        out[12] = self.zeta;
        out[13] = self.chi;
        out
    }

    pub fn from_vector(x: &StateVector) -> Self {
        Self {
            r: x.fixed_rows::<3>(0).into_owned(),
            v: x.fixed_rows::<3>(3).into_owned(),
            theta: EulerAngles::from_vec(&x.fixed_rows::<3>(6).into_owned()),
            omega_b: x.fixed_rows::<3>(9).into_owned(),
            zeta: x[12],
            chi: x[13],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_vector().iter().all(|v| v.is_finite())
    }
}

/// `[u1_ddot, u2, u3, u4]`: thrust snap-command and body angular accelerations.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CommandBar {
    pub u1_ddot: f64,
    pub u2: f64,
    pub u3: f64,
    pub u4: f64,
}

impl CommandBar {
    pub const fn new(u1_ddot: f64, u2: f64, u3: f64, u4: f64) -> Self {
        Self { u1_ddot, u2, u3, u4 }
    }

    /// The rotational part `[u2, u3, u4]`.
    pub fn angular(&self) -> Vec3 {
        Vec3::new(self.u2, self.u3, self.u4)
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.u1_ddot, self.u2, self.u3, self.u4]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }
}

/// One time sample of the external disturbances, with the derivatives of the
/// translational channel that appear in the jerk and snap.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DisturbanceSample {
    /// Rotational disturbance (rad/s^2).
    pub d: Vec3,
    /// Translational disturbance (m/s^2).
    pub a_d: Vec3,
    pub a_d_dot: Vec3,
    pub a_d_ddot: Vec3,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CommandBounds {
    pub zeta_max: f64,
    pub u1_ddot_max: f64,
    pub angular_accel_max: f64,
}

impl Default for CommandBounds {
    fn default() -> Self {
        Self { zeta_max: 40.0, u1_ddot_max: 1.0e3, angular_accel_max: 200.0 }
    }
}

impl CommandBounds {
    /// Names of the bounds that `zeta`/`u` exceed, if any.
    pub fn violations(&self, zeta: f64, u: &CommandBar) -> Vec<&'static str> {
        let mut out = Vec::new();
        if zeta > self.zeta_max {
            out.push("zeta_max");
        }
        if u.u1_ddot.abs() > self.u1_ddot_max {
            out.push("u1_ddot_max");
        }
        if u.angular().amax() > self.angular_accel_max {
            out.push("angular_accel_max");
        }
        out
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParamError {
    #[error(transparent)]
    Inertia(#[from] InertiaError),
    #[error("gravity magnitude must be positive and finite, got {0}")]
    Gravity(f64),
    #[error("zeta_min must be positive and finite, got {0}")]
    ZetaMin(f64),
    #[error("tilt margin must lie in [0, pi/2), got {0}")]
    TiltMargin(f64),
    #[error("command bounds must be positive, got {0:?}")]
    Bounds(CommandBounds),
}

pub const DEFAULT_G_MAG: f64 = 9.81;
pub const DEFAULT_ZETA_MIN: f64 = 1.0;
/// 5 degrees.
pub const DEFAULT_TILT_MARGIN: f64 = 0.087;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleParams {
    pub inertia: Inertia,
    pub g_mag: f64,
    /// Lowest admissible mass-normalised thrust (m/s^2).
    pub zeta_min: f64,
    /// Clearance kept from the +-pi/2 roll and pitch limits (rad).
    pub tilt_margin: f64,
    pub bounds: CommandBounds,
}

impl VehicleParams {
    pub fn new(
        inertia: Mat3,
        g_mag: f64,
        zeta_min: f64,
        tilt_margin: f64,
        bounds: CommandBounds,
    ) -> Result<Self, ParamError> {
        let inertia = Inertia::new(inertia)?;
        if !(g_mag.is_finite() && g_mag > 0.0) {
            return Err(ParamError::Gravity(g_mag));
        }
        if !(zeta_min.is_finite() && zeta_min > 0.0) {
            return Err(ParamError::ZetaMin(zeta_min));
        }
        if !(tilt_margin.is_finite() && (0.0..std::f64::consts::FRAC_PI_2).contains(&tilt_margin)) {
            return Err(ParamError::TiltMargin(tilt_margin));
        }
        let b = bounds;
        if !(b.zeta_max > 0.0 && b.u1_ddot_max > 0.0 && b.angular_accel_max > 0.0) {
            return Err(ParamError::Bounds(bounds));
        }
        Ok(Self { inertia, g_mag, zeta_min, tilt_margin, bounds })
    }

    /// Gravity vector `[0, 0, g]`, subtracted in the translational dynamics.
    pub fn gravity(&self) -> Vec3 {
        Vec3::new(0.0, 0.0, self.g_mag)
    }
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self::new(
            Mat3::from_diagonal(&Vec3::new(0.0347563, 0.0458929, 0.0977)),
            DEFAULT_G_MAG,
            DEFAULT_ZETA_MIN,
            DEFAULT_TILT_MARGIN,
            CommandBounds::default(),
        )
        .expect("default vehicle parameters are valid")
    }
}

/// Body angular acceleration `u - J^-1 (w x J w) + d`.
pub fn angular_acceleration(
    x: &ExtendedState,
    u: &CommandBar,
    w: &DisturbanceSample,
    p: &VehicleParams,
) -> Vec3 {
    u.angular() - gyroscopic(&x.omega_b, &p.inertia) + w.d
}

/// Translational acceleration `R [0, 0, zeta] - g + a_d`.
pub fn translational_acceleration(x: &ExtendedState, w: &DisturbanceSample, p: &VehicleParams) -> Vec3 {
    rot_body_to_inertial(&x.theta) * Vec3::new(0.0, 0.0, x.zeta) - p.gravity() + w.a_d
}

/// Time derivative of the extended state, in the same field layout.
pub fn rhs(
    x: &ExtendedState,
    u: &CommandBar,
    w: &DisturbanceSample,
    p: &VehicleParams,
) -> Result<ExtendedState, KinematicSingularity> {
    let euler_rates = att_kinematics(&x.theta)? * x.omega_b;
    Ok(ExtendedState {
        r: x.v,
        v: translational_acceleration(x, w, p),
        theta: EulerAngles::from_vec(&euler_rates),
        omega_b: angular_acceleration(x, u, w, p),
        zeta: x.chi,
        chi: u.u1_ddot,
    })
}

/// Hover equilibrium at `r0` with heading `psi0`.
pub fn hover_trim(p: &VehicleParams, r0: Vec3, psi0: f64) -> (ExtendedState, CommandBar) {
    let x = ExtendedState {
        r: r0,
        v: Vec3::zeros(),
        theta: EulerAngles::new(0.0, 0.0, psi0),
        omega_b: Vec3::zeros(),
        zeta: p.g_mag,
        chi: 0.0,
    };
    (x, CommandBar::default())
}
