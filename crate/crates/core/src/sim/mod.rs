//! Closed-loop simulation of the extended plant under the linearizing
//! feedback, plus the oracles that check the loop against its linear model.

mod checks;
mod disturbance;
mod integrate;
mod telemetry;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::{tracking_command, GainSet, ReferencePoint, ReferenceSpec};
use crate::linearize::{
    decoupling_matrix, domain_violation, fl_feedback, flat_state, psi_ddot_raw, snap_raw,
    DomainMargins, DomainViolation, FlError, FlatState, VirtualCommand,
};
use crate::math::KinematicSingularity;
use crate::model::{rhs, CommandBar, ExtendedState, StateVector, VehicleParams};

pub use checks::{
    fd_derivative_check, fd_derivative_check_strided, linearization_exactness_check, CheckError,
    ChannelDeviation, ExactnessReport, FdReport, OutputChannel, FD_ABSOLUTE_FLOOR,
};
pub use disturbance::{disturbance_eval, DisturbanceSpec, Signal};
pub use integrate::rk4_step;
pub use telemetry::{RunSummary, Telemetry, TelemetryError, TelemetryRow, TELEMETRY_COLUMNS, TELEMETRY_FORMAT};

pub const DEFAULT_STEP: f64 = 1e-3;
pub const DEFAULT_DURATION: f64 = 10.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("left the linearization domain at t = {t:.6} s: {violation}")]
    DomainExit { t: f64, violation: DomainViolation },
    #[error("non-finite state at t = {t:.6} s")]
    NonFinite { t: f64 },
    #[error("attitude singularity at t = {t:.6} s: {source}")]
    Singular { t: f64, source: KinematicSingularity },
}

impl SimError {
    fn from_fl(t: f64, e: FlError) -> Self {
        match e {
            FlError::OutsideDomain(violation) => Self::DomainExit { t, violation },
            FlError::Singular(source) => Self::Singular { t, source },
        }
    }
}

/// A failed run, with everything recorded before the failure.
#[derive(Debug, Error)]
#[error("{error}")]
pub struct Aborted {
    pub error: SimError,
    pub partial: Telemetry,
}

/// How often the virtual command is recomputed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlUpdate {
    /// Evaluated at every integrator stage (continuous-time law).
    #[default]
    Continuous,
    /// Sampled at the start of each step and held.
    Sampled,
}

/// Open-loop rectangular pulse on one virtual-command channel
/// (`0..=2` snap x/y/z, `3` heading acceleration), active on `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pulse {
    pub channel: usize,
    pub amplitude: f64,
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Guidance {
    Track { reference: ReferenceSpec, gains: GainSet },
    OpenLoop { pulses: Vec<Pulse> },
}

impl Guidance {
    pub fn reference_at(&self, t: f64) -> ReferencePoint {
        match self {
            Guidance::Track { reference, .. } => reference.sample(t),
            Guidance::OpenLoop { .. } => ReferencePoint { t, ..Default::default() },
        }
    }

    pub fn command(&self, t: f64, z: &FlatState) -> VirtualCommand {
        match self {
            Guidance::Track { reference, gains } => tracking_command(z, &reference.sample(t), gains),
            Guidance::OpenLoop { pulses } => {
                let mut v = [0.0; 4];
                for p in pulses.iter().filter(|p| t >= p.start && t < p.end) {
                    v[p.channel] += p.amplitude;
                }
                VirtualCommand::from_array(v)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerificationToggles {
    /// Run the integrator-chain comparison after the simulation.
    pub exactness_check: bool,
    /// Run finite-difference checks on the recorded telemetry.
    pub fd_checks: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub duration: f64,
    pub step: f64,
    pub initial: ExtendedState,
    pub params: VehicleParams,
    pub guidance: Guidance,
    pub disturbance: DisturbanceSpec,
    pub control_update: ControlUpdate,
    pub verification: VerificationToggles,
}

impl Scenario {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidScenario(m));
        if !(self.step.is_finite() && self.step > 0.0) {
            return bad(format!("step must be positive, got {}", self.step));
        }
        if !(self.duration.is_finite() && self.duration >= self.step) {
            return bad(format!("duration {} must be at least one step ({})", self.duration, self.step));
        }
        if !self.initial.is_finite() {
            return bad("initial state must be finite".into());
        }
        match &self.guidance {
            Guidance::Track { reference, .. } => {
                reference.validate().map_err(|e| SimError::InvalidScenario(e.to_string()))?
            }
            Guidance::OpenLoop { pulses } => {
                if let Some(p) = pulses.iter().find(|p| p.channel > 3 || !p.amplitude.is_finite() || p.end.partial_cmp(&p.start).is_none_or(|o| o == std::cmp::Ordering::Less)) {
                    return bad(format!("invalid pulse {p:?}"));
                }
            }
        }
        Ok(())
    }

    /// Number of integration steps; the telemetry holds one more row.
    pub fn steps(&self) -> usize {
        (self.duration / self.step).round() as usize
    }
}

/// Closed-loop vector field. `held` is the sampled virtual command, or `None`
/// to evaluate the guidance law at `t`.
fn closed_loop_rhs(
    sc: &Scenario,
    t: f64,
    x: &StateVector,
    held: Option<&VirtualCommand>,
) -> Result<StateVector, SimError> {
    let state = ExtendedState::from_vector(x);
    let v = match held {
        Some(v) => *v,
        None => {
            let z = flat_state(&state, &sc.params).map_err(|source| SimError::Singular { t, source })?;
            sc.guidance.command(t, &z)
        }
    };
    let u = fl_feedback(&state, &v, &sc.params).map_err(|e| SimError::from_fl(t, e))?;
    let w = disturbance_eval(&sc.disturbance, t);
    let dx = rhs(&state, &u, &w, &sc.params).map_err(|source| SimError::Singular { t, source })?;
    Ok(dx.to_vector())
}

fn record(sc: &Scenario, t: f64, state: &ExtendedState) -> Result<(TelemetryRow, Vec<&'static str>), SimError> {
    let p = &sc.params;
    let singular = |source| SimError::Singular { t, source };
    let flat = flat_state(state, p).map_err(singular)?;
    let v = sc.guidance.command(t, &flat);
    let u = fl_feedback(state, &v, p).map_err(|e| SimError::from_fl(t, e))?;
    let w = disturbance_eval(&sc.disturbance, t);
    let snap = snap_raw(state, &u, &w, p);
    let psi_ddot = psi_ddot_raw(state, &u, &w, p).map_err(singular)?;
    let cond = decoupling_matrix(&state.theta, state.zeta).map_err(singular)?.condition_number();
    let row = TelemetryRow {
        t,
        state: *state,
        flat,
        command: u,
        virtual_command: v,
        reference: sc.guidance.reference_at(t),
        in_domain: true,
        condition_number: cond,
        snap_residual: snap - v.v_r,
        psi_ddot_residual: psi_ddot - v.v_psi,
    };
    Ok((row, p.bounds.violations(state.zeta, &u)))
}

/// Runs the closed loop over the scenario horizon.
pub fn simulate(sc: &Scenario) -> Result<Telemetry, Aborted> {
    let mut telemetry = Telemetry::new(sc.step);
    let abort = |error, partial| Aborted { error, partial };
    if let Err(e) = sc.validate() {
        return Err(abort(e, telemetry));
    }
    let margins = DomainMargins::from(&sc.params);
    let h = sc.step;
    let n = sc.steps();
    let mut x = sc.initial.to_vector();
    for k in 0..=n {
        let t = k as f64 * h;
        let state = ExtendedState::from_vector(&x);
        if let Some(violation) = domain_violation(&state, &margins) {
            return Err(abort(SimError::DomainExit { t, violation }, telemetry));
        }
        let (row, saturated) = match record(sc, t, &state) {
            Ok(r) => r,
            Err(e) => return Err(abort(e, telemetry)),
        };
        if !saturated.is_empty() {
            if telemetry.saturation_events == 0 {
                log::warn!("command bounds exceeded at t = {t:.4} s: {}", saturated.join(", "));
            }
            telemetry.saturation_events += 1;
        }
        let held = row.virtual_command;
        telemetry.rows.push(row);
        if k == n {
            break;
        }
        let step = match sc.control_update {
            ControlUpdate::Continuous => rk4_step(&x, t, h, |ts, xs| closed_loop_rhs(sc, ts, xs, None)),
            ControlUpdate::Sampled => rk4_step(&x, t, h, |ts, xs| closed_loop_rhs(sc, ts, xs, Some(&held))),
        };
        x = match step {
            Ok(next) => next,
            Err(e) => return Err(abort(e, telemetry)),
        };
    }
    if telemetry.saturation_events > 1 {
        log::warn!("command bounds exceeded on {} samples", telemetry.saturation_events);
    }
    Ok(telemetry)
}

/// Integrates the plant alone under an arbitrary command law (no
/// linearizing feedback, no domain guard). Returns one state per grid point.
pub fn integrate_plant<F>(
    x0: &ExtendedState,
    params: &VehicleParams,
    disturbance: &DisturbanceSpec,
    step: f64,
    steps: usize,
    mut command: F,
) -> Result<Vec<ExtendedState>, SimError>
where
    F: FnMut(f64, &ExtendedState) -> CommandBar,
{
    let mut out = Vec::with_capacity(steps + 1);
    let mut x = x0.to_vector();
    out.push(*x0);
    for k in 0..steps {
        let t = k as f64 * step;
        x = rk4_step(&x, t, step, |ts, xs| {
            let s = ExtendedState::from_vector(xs);
            let u = command(ts, &s);
            let w = disturbance_eval(disturbance, ts);
            rhs(&s, &u, &w, params)
                .map(|d| d.to_vector())
                .map_err(|source| SimError::Singular { t: ts, source })
        })?;
        out.push(ExtendedState::from_vector(&x));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{Inertia, Mat3, Vec3};
    use crate::model::hover_trim;

    fn hover_scenario() -> Scenario {
        let params = VehicleParams::default();
        let r0 = Vec3::new(0.0, 0.0, 1.0);
        let (initial, _) = hover_trim(&params, r0, 0.3);
        Scenario {
            duration: 10.0,
            step: 1e-3,
            initial,
            params,
            guidance: Guidance::Track {
                reference: ReferenceSpec::Hover { position: r0, psi: 0.3 },
                gains: GainSet::default(),
            },
            disturbance: DisturbanceSpec::default(),
            control_update: ControlUpdate::Continuous,
            verification: VerificationToggles::default(),
        }
    }

    #[test]
    fn hover_holds_position() {
        let sc = hover_scenario();
        let tel = simulate(&sc).unwrap();
        assert_eq!(tel.rows.len(), 10_001);
        let drift = tel
            .rows
            .iter()
            .map(|r| (r.state.r - sc.initial.r).norm())
            .fold(0.0, f64::max);
        assert!(drift < 1e-9, "drift {drift}");
    }

    #[test]
    fn open_loop_trim_stays_at_trim() {
        let p = VehicleParams::default();
        let (x0, u0) = hover_trim(&p, Vec3::new(1.0, 2.0, 3.0), 1.2);
        let traj = integrate_plant(&x0, &p, &DisturbanceSpec::default(), 1e-3, 10_000, |_, _| u0).unwrap();
        let drift = traj.iter().map(|x| (x.to_vector() - x0.to_vector()).amax()).fold(0.0, f64::max);
        assert!(drift < 1e-9, "drift {drift}");
    }

    #[test]
    fn isotropic_free_rotation_keeps_rate_magnitude() {
        let p = VehicleParams { inertia: Inertia::new(Mat3::identity() * 0.04).unwrap(), ..Default::default() };
        let x0 = ExtendedState {
            omega_b: Vec3::new(0.3, -0.2, 0.5),
            zeta: 9.81,
            ..Default::default()
        };
        let traj = integrate_plant(&x0, &p, &DisturbanceSpec::default(), 1e-3, 10_000, |_, _| CommandBar::default())
            .unwrap();
        let w0 = x0.omega_b.norm();
        let worst = traj.iter().map(|x| (x.omega_b.norm() - w0).abs()).fold(0.0, f64::max);
        assert!(worst < 1e-8);
    }

    #[test]
    fn zero_thrust_start_is_refused() {
        let mut sc = hover_scenario();
        sc.initial.zeta = 0.0;
        let err = simulate(&sc).unwrap_err();
        assert!(matches!(err.error, SimError::DomainExit { t, violation: DomainViolation::Thrust { .. } } if t == 0.0));
        assert!(err.partial.rows.is_empty());
    }

    #[test]
    fn invalid_scenarios_are_rejected() {
        let mut sc = hover_scenario();
        sc.step = 0.0;
        assert!(matches!(simulate(&sc).unwrap_err().error, SimError::InvalidScenario(_)));
        let mut sc = hover_scenario();
        sc.duration = 1e-4;
        assert!(matches!(simulate(&sc).unwrap_err().error, SimError::InvalidScenario(_)));
        let mut sc = hover_scenario();
        sc.guidance = Guidance::OpenLoop { pulses: vec![Pulse { channel: 7, amplitude: 1.0, start: 0.0, end: 1.0 }] };
        assert!(matches!(simulate(&sc).unwrap_err().error, SimError::InvalidScenario(_)));
    }

    #[test]
    fn pulses_superpose_on_their_channel() {
        let g = Guidance::OpenLoop {
            pulses: vec![
                Pulse { channel: 1, amplitude: 2.0, start: 0.0, end: 1.0 },
                Pulse { channel: 1, amplitude: 0.5, start: 0.5, end: 2.0 },
                Pulse { channel: 3, amplitude: -1.0, start: 1.0, end: 1.5 },
            ],
        };
        let z = FlatState::default();
        assert_eq!(g.command(0.7, &z).to_array(), [0.0, 2.5, 0.0, 0.0]);
        assert_eq!(g.command(1.2, &z).to_array(), [0.0, 0.5, 0.0, -1.0]);
        assert_eq!(g.command(2.0, &z).to_array(), [0.0; 4]);
    }
}
