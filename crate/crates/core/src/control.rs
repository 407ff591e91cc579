//! Linear tracking on the decoupled integrator chains: a 4th-order chain per
//! position axis and a 2nd-order chain for heading.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linearize::{FlatState, VirtualCommand};
use crate::math::{wrap_angle, Vec3};

pub const DEFAULT_LAMBDA_POS: f64 = 2.0;
pub const DEFAULT_LAMBDA_PSI: f64 = 3.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControlError {
    #[error("unsupported chain order {0} (expected 2 or 4)")]
    UnsupportedOrder(usize),
    #[error("pole magnitude must be positive and finite, got {0}")]
    PoleMagnitude(f64),
    #[error("invalid reference: {0}")]
    Reference(String),
}

/// Gains placing every pole of an order-`order` integrator chain at
/// `-lambda`: the coefficients of `(s + lambda)^order` below the leading
/// term, lowest-order state first.
pub fn chain_gains(order: usize, lambda: f64) -> Result<Vec<f64>, ControlError> {
    if order != 2 && order != 4 {
        return Err(ControlError::UnsupportedOrder(order));
    }
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(ControlError::PoleMagnitude(lambda));
    }
    // k_i = C(n, i) * lambda^(n - i)
    let mut gains = Vec::with_capacity(order);
    let mut binom = 1.0;
    for i in 0..order {
        gains.push(binom * lambda.powi((order - i) as i32));
        binom = binom * (order - i) as f64 / (i + 1) as f64;
    }
    Ok(gains)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainSet {
    /// Gains on `r, v, a, s` (applied per axis).
    pub k_pos: [f64; 4],
    /// Gains on `psi, eta`.
    pub k_psi: [f64; 2],
    pub lambda_pos: f64,
    pub lambda_psi: f64,
}

impl GainSet {
    pub fn from_poles(lambda_pos: f64, lambda_psi: f64) -> Result<Self, ControlError> {
        let kp = chain_gains(4, lambda_pos)?;
        let kh = chain_gains(2, lambda_psi)?;
        Ok(Self {
            k_pos: [kp[0], kp[1], kp[2], kp[3]],
            k_psi: [kh[0], kh[1]],
            lambda_pos,
            lambda_psi,
        })
    }
}

impl Default for GainSet {
    fn default() -> Self {
        Self::from_poles(DEFAULT_LAMBDA_POS, DEFAULT_LAMBDA_PSI).expect("default poles are valid")
    }
}

/// Reference sample: `r[k]` is the k-th derivative of position,
/// `psi[k]` the k-th derivative of heading.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ReferencePoint {
    pub t: f64,
    pub r: [Vec3; 5],
    pub psi: [f64; 3],
}

/// `v = feedforward + K (reference - state)` on each chain. Heading error is
/// wrapped to `(-pi, pi]`.
pub fn tracking_command(z: &FlatState, reference: &ReferencePoint, gains: &GainSet) -> VirtualCommand {
    let k = &gains.k_pos;
    let rr = &reference.r;
    let v_r = rr[4]
        + k[0] * (rr[0] - z.r)
        + k[1] * (rr[1] - z.v)
        + k[2] * (rr[2] - z.a)
        + k[3] * (rr[3] - z.s);
    let psi_err = wrap_angle(reference.psi[0] - z.psi);
    let v_psi = reference.psi[2] + gains.k_psi[0] * psi_err + gains.k_psi[1] * (reference.psi[1] - z.eta);
    VirtualCommand::new(v_r, v_psi)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub time: f64,
    pub position: Vec3,
    pub psi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ReferenceSpec {
    Hover {
        position: Vec3,
        psi: f64,
    },
    /// Horizontal circle `center + radius (cos wt, sin wt, 0)` with heading
    /// `psi0 + heading_rate t`.
    Circle {
        center: Vec3,
        radius: f64,
        rate: f64,
        psi0: f64,
        heading_rate: f64,
    },
    /// Rest-to-rest segments between timed waypoints, held at the ends.
    Waypoints(Vec<Waypoint>),
}

/// Rest-to-rest blend on `[0, 1]`: degree-9 polynomial with
/// derivatives 1 through 4 vanishing at both ends.
const BLEND: [f64; 10] = [0.0, 0.0, 0.0, 0.0, 0.0, 126.0, -420.0, 540.0, -315.0, 70.0];

/// Value and first four derivatives of the blend at `tau`.
fn blend(tau: f64) -> [f64; 5] {
    let mut out = [0.0; 5];
    let mut coeffs = BLEND.to_vec();
    for slot in out.iter_mut() {
        *slot = coeffs.iter().rev().fold(0.0, |acc, c| acc * tau + c);
        coeffs = coeffs.iter().enumerate().skip(1).map(|(i, c)| c * i as f64).collect();
    }
    out
}

impl ReferenceSpec {
    pub fn validate(&self) -> Result<(), ControlError> {
        let bad = |msg: String| Err(ControlError::Reference(msg));
        match self {
            Self::Hover { position, psi } => {
                if !(position.iter().all(|v| v.is_finite()) && psi.is_finite()) {
                    return bad("hover setpoint must be finite".into());
                }
            }
            Self::Circle { center, radius, rate, psi0, heading_rate } => {
                if !(radius.is_finite() && *radius > 0.0) {
                    return bad(format!("circle radius must be positive, got {radius}"));
                }
                if !(rate.is_finite() && *rate > 0.0) {
                    return bad(format!("circle rate must be positive, got {rate}"));
                }
                if !(center.iter().all(|v| v.is_finite()) && psi0.is_finite() && heading_rate.is_finite()) {
                    return bad("circle parameters must be finite".into());
                }
            }
            Self::Waypoints(points) => {
                if points.is_empty() {
                    return bad("waypoint list is empty".into());
                }
                for pair in points.windows(2) {
                    if pair[1].time.partial_cmp(&pair[0].time) != Some(std::cmp::Ordering::Greater) {
                        return bad(format!(
                            "waypoint times must increase strictly ({} then {})",
                            pair[0].time, pair[1].time
                        ));
                    }
                }
                if points.iter().any(|w| !(w.time.is_finite() && w.psi.is_finite() && w.position.iter().all(|v| v.is_finite()))) {
                    return bad("waypoints must be finite".into());
                }
            }
        }
        Ok(())
    }

    /// Samples a validated spec.
    pub fn sample(&self, t: f64) -> ReferencePoint {
        let mut out = ReferencePoint { t, ..Default::default() };
        match self {
            Self::Hover { position, psi } => {
                out.r[0] = *position;
                out.psi[0] = *psi;
            }
            Self::Circle { center, radius, rate, psi0, heading_rate } => {
                let phase = rate * t;
                let (s, c) = phase.sin_cos();
                // d^k/dt^k (cos, sin) = rate^k (cos, sin) rotated by k quarter turns
                let dirs = [(c, s), (-s, c), (-c, -s), (s, -c), (c, s)];
                for (k, (dx, dy)) in dirs.iter().enumerate() {
                    let scale = radius * rate.powi(k as i32);
                    out.r[k] = Vec3::new(scale * dx, scale * dy, 0.0);
                }
                out.r[0] += center;
                out.psi = [psi0 + heading_rate * t, *heading_rate, 0.0];
            }
            Self::Waypoints(points) => {
                let first = &points[0];
                let last = &points[points.len() - 1];
                if t <= first.time {
                    out.r[0] = first.position;
                    out.psi[0] = first.psi;
                } else if t >= last.time {
                    out.r[0] = last.position;
                    out.psi[0] = last.psi;
                } else {
                    let i = points.partition_point(|w| w.time <= t) - 1;
                    let (a, b) = (&points[i], &points[i + 1]);
                    let span = b.time - a.time;
                    let sigma = blend((t - a.time) / span);
                    let dp = b.position - a.position;
                    let dpsi = b.psi - a.psi;
                    for (k, sk) in sigma.iter().enumerate() {
                        let scale = sk / span.powi(k as i32);
                        out.r[k] = dp * scale;
                        if k < 3 {
                            out.psi[k] = dpsi * scale;
                        }
                    }
                    out.r[0] += a.position;
                    out.psi[0] += a.psi;
                }
            }
        }
        out
    }
}

/// Validates `spec` and samples it at `t`.
pub fn reference(spec: &ReferenceSpec, t: f64) -> Result<ReferencePoint, ControlError> {
    spec.validate()?;
    Ok(spec.sample(t))
}
