//! TOML scenario files.
//!
//! ```toml
//! [run]
//! duration_s = 10.0
//! step_s = 1e-3
//!
//! [initial]
//! mode = "on_reference"
//!
//! [guidance]
//! kind = "track"
//! lambda_pos_rad_s = 2.0
//!
//! [guidance.reference]
//! kind = "circle"
//! center_m = [0.0, 0.0, 1.0]
//! radius_m = 2.0
//! rate_rad_s = 0.5
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::{ControlError, GainSet, ReferenceSpec, Waypoint, DEFAULT_LAMBDA_POS, DEFAULT_LAMBDA_PSI};
use crate::linearize::{flat_state_inverse, FlError, FlatState};
use crate::math::{EulerAngles, Mat3, Vec3};
use crate::model::{
    hover_trim, CommandBounds, ExtendedState, ParamError, VehicleParams, DEFAULT_G_MAG, DEFAULT_TILT_MARGIN,
    DEFAULT_ZETA_MIN,
};
use crate::sim::{
    ControlUpdate, DisturbanceSpec, Guidance, Pulse, Scenario, Signal, VerificationToggles, DEFAULT_DURATION,
    DEFAULT_STEP,
};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed scenario: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid vehicle parameters: {0}")]
    Params(#[from] ParamError),
    #[error("invalid guidance: {0}")]
    Control(#[from] ControlError),
    #[error("initial state not reachable from the reference: {0}")]
    Initial(#[from] FlError),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub run: RunConfig,
    #[serde(default)]
    pub vehicle: VehicleConfig,
    #[serde(default)]
    pub initial: InitialConfig,
    #[serde(default)]
    pub guidance: GuidanceConfig,
    #[serde(default)]
    pub disturbance: DisturbanceConfig,
    #[serde(default)]
    pub verification: VerificationToggles,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub duration_s: f64,
    pub step_s: f64,
    pub control_update: ControlUpdate,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self { duration_s: DEFAULT_DURATION, step_s: DEFAULT_STEP, control_update: ControlUpdate::Continuous }
    }
}

/// Diagonal `[jx, jy, jz]` or a full symmetric 3x3 matrix (rows).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InertiaConfig {
    Diagonal([f64; 3]),
    Full([[f64; 3]; 3]),
}

impl InertiaConfig {
    pub fn matrix(&self) -> Mat3 {
        match self {
            InertiaConfig::Diagonal(d) => Mat3::from_diagonal(&Vec3::from(*d)),
            InertiaConfig::Full(rows) => Mat3::from_fn(|i, j| rows[i][j]),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VehicleConfig {
    pub inertia_kg_m2: InertiaConfig,
    pub g_mag_m_s2: f64,
    pub zeta_min_m_s2: f64,
    pub tilt_margin_rad: f64,
    pub zeta_max_m_s2: f64,
    pub u1_ddot_max_m_s4: f64,
    pub angular_accel_max_rad_s2: f64,
}

impl Default for VehicleConfig {
    fn default() -> Self {
        let p = VehicleParams::default();
        let j = p.inertia.matrix();
        Self {
            inertia_kg_m2: InertiaConfig::Diagonal([j[(0, 0)], j[(1, 1)], j[(2, 2)]]),
            g_mag_m_s2: DEFAULT_G_MAG,
            zeta_min_m_s2: DEFAULT_ZETA_MIN,
            tilt_margin_rad: DEFAULT_TILT_MARGIN,
            zeta_max_m_s2: p.bounds.zeta_max,
            u1_ddot_max_m_s4: p.bounds.u1_ddot_max,
            angular_accel_max_rad_s2: p.bounds.angular_accel_max,
        }
    }
}

impl VehicleConfig {
    pub fn params(&self) -> Result<VehicleParams, ParamError> {
        VehicleParams::new(
            self.inertia_kg_m2.matrix(),
            self.g_mag_m_s2,
            self.zeta_min_m_s2,
            self.tilt_margin_rad,
            CommandBounds {
                zeta_max: self.zeta_max_m_s2,
                u1_ddot_max: self.u1_ddot_max_m_s4,
                angular_accel_max: self.angular_accel_max_rad_s2,
            },
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialMode {
    /// Trimmed hover at `r_m`, heading `psi_rad`.
    #[default]
    Hover,
    /// Exactly on the reference at t = 0 (tracking guidance only).
    OnReference,
    /// Every state given explicitly; omitted entries are zero, thrust
    /// defaults to `g`.
    Explicit,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitialConfig {
    pub mode: InitialMode,
    pub r_m: [f64; 3],
    pub psi_rad: f64,
    pub v_m_s: [f64; 3],
    /// Roll, pitch, yaw.
    pub euler_rad: Option<[f64; 3]>,
    pub omega_rad_s: [f64; 3],
    pub zeta_m_s2: Option<f64>,
    pub chi_m_s3: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ReferenceConfig {
    Hover {
        #[serde(default)]
        position_m: [f64; 3],
        #[serde(default)]
        psi_rad: f64,
    },
    Circle {
        #[serde(default)]
        center_m: [f64; 3],
        radius_m: f64,
        rate_rad_s: f64,
        #[serde(default)]
        psi0_rad: f64,
        #[serde(default)]
        heading_rate_rad_s: f64,
    },
    Waypoints {
        waypoints: Vec<WaypointConfig>,
    },
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        ReferenceConfig::Hover { position_m: [0.0; 3], psi_rad: 0.0 }
    }
}

impl ReferenceConfig {
    pub fn spec(&self) -> ReferenceSpec {
        match self {
            ReferenceConfig::Hover { position_m, psi_rad } => {
                ReferenceSpec::Hover { position: Vec3::from(*position_m), psi: *psi_rad }
            }
            ReferenceConfig::Circle { center_m, radius_m, rate_rad_s, psi0_rad, heading_rate_rad_s } => {
                ReferenceSpec::Circle {
                    center: Vec3::from(*center_m),
                    radius: *radius_m,
                    rate: *rate_rad_s,
                    psi0: *psi0_rad,
                    heading_rate: *heading_rate_rad_s,
                }
            }
            ReferenceConfig::Waypoints { waypoints } => ReferenceSpec::Waypoints(
                waypoints
                    .iter()
                    .map(|w| Waypoint { time: w.time_s, position: Vec3::from(w.position_m), psi: w.psi_rad })
                    .collect(),
            ),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaypointConfig {
    pub time_s: f64,
    pub position_m: [f64; 3],
    #[serde(default)]
    pub psi_rad: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PulseChannel {
    SnapX,
    SnapY,
    SnapZ,
    PsiDdot,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PulseConfig {
    pub channel: PulseChannel,
    /// m/s^4 on snap channels, rad/s^2 on the heading channel.
    pub amplitude: f64,
    pub start_s: f64,
    pub end_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GuidanceConfig {
    Track {
        #[serde(default)]
        reference: ReferenceConfig,
        #[serde(default = "default_lambda_pos")]
        lambda_pos_rad_s: f64,
        #[serde(default = "default_lambda_psi")]
        lambda_psi_rad_s: f64,
    },
    Pulses {
        #[serde(default)]
        pulses: Vec<PulseConfig>,
    },
}

fn default_lambda_pos() -> f64 {
    DEFAULT_LAMBDA_POS
}

fn default_lambda_psi() -> f64 {
    DEFAULT_LAMBDA_PSI
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        GuidanceConfig::Track {
            reference: ReferenceConfig::default(),
            lambda_pos_rad_s: DEFAULT_LAMBDA_POS,
            lambda_psi_rad_s: DEFAULT_LAMBDA_PSI,
        }
    }
}

impl GuidanceConfig {
    pub fn guidance(&self) -> Result<Guidance, ConfigError> {
        Ok(match self {
            GuidanceConfig::Track { reference, lambda_pos_rad_s, lambda_psi_rad_s } => {
                let reference = reference.spec();
                reference.validate()?;
                Guidance::Track { reference, gains: GainSet::from_poles(*lambda_pos_rad_s, *lambda_psi_rad_s)? }
            }
            GuidanceConfig::Pulses { pulses } => Guidance::OpenLoop {
                pulses: pulses
                    .iter()
                    .map(|p| Pulse { channel: p.channel as usize, amplitude: p.amplitude, start: p.start_s, end: p.end_s })
                    .collect(),
            },
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DisturbanceConfig {
    /// Body-frame angular acceleration disturbance, per axis.
    pub d_rad_s2: [Signal; 3],
    /// Inertial translational acceleration disturbance, per axis.
    pub a_d_m_s2: [Signal; 3],
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario config is always representable in TOML")
    }

    /// Overrides the pole locations of tracking guidance.
    pub fn set_poles(&mut self, lambda_pos: Option<f64>, lambda_psi: Option<f64>) {
        if let GuidanceConfig::Track { lambda_pos_rad_s, lambda_psi_rad_s, .. } = &mut self.guidance {
            if let Some(l) = lambda_pos {
                *lambda_pos_rad_s = l;
            }
            if let Some(l) = lambda_psi {
                *lambda_psi_rad_s = l;
            }
        }
    }

    pub fn scenario(&self) -> Result<Scenario, ConfigError> {
        let params = self.vehicle.params()?;
        let guidance = self.guidance.guidance()?;
        let initial = self.initial_state(&params, &guidance)?;
        let scenario = Scenario {
            duration: self.run.duration_s,
            step: self.run.step_s,
            initial,
            params,
            guidance,
            disturbance: DisturbanceSpec { d: self.disturbance.d_rad_s2, a_d: self.disturbance.a_d_m_s2 },
            control_update: self.run.control_update,
            verification: self.verification,
        };
        scenario.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(scenario)
    }

    fn initial_state(&self, params: &VehicleParams, guidance: &Guidance) -> Result<ExtendedState, ConfigError> {
        let ic = &self.initial;
        match ic.mode {
            InitialMode::Hover => Ok(hover_trim(params, Vec3::from(ic.r_m), ic.psi_rad).0),
            InitialMode::OnReference => {
                let Guidance::Track { reference, .. } = guidance else {
                    return Err(ConfigError::Invalid("initial mode on_reference needs tracking guidance".into()));
                };
                let rp = reference.sample(0.0);
                let z = FlatState { r: rp.r[0], v: rp.r[1], a: rp.r[2], s: rp.r[3], psi: rp.psi[0], eta: rp.psi[1] };
                Ok(flat_state_inverse(&z, params)?)
            }
            InitialMode::Explicit => {
                let theta = match ic.euler_rad {
                    Some([phi, theta, psi]) => EulerAngles::new(phi, theta, psi),
                    None => EulerAngles::new(0.0, 0.0, ic.psi_rad),
                };
                Ok(ExtendedState {
                    r: Vec3::from(ic.r_m),
                    v: Vec3::from(ic.v_m_s),
                    theta,
                    omega_b: Vec3::from(ic.omega_rad_s),
                    zeta: ic.zeta_m_s2.unwrap_or(params.g_mag),
                    chi: ic.chi_m_s3,
                })
            }
        }
    }
}
