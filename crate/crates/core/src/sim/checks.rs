//! Oracles run on simulation output.

use serde::Serialize;
use thiserror::Error;

use super::{simulate, Aborted, ControlUpdate, Scenario, Telemetry, TelemetryRow};
use crate::linearize::{FlatState, VirtualCommand};

#[derive(Debug, Error)]
pub enum CheckError {
    #[error(transparent)]
    Aborted(#[from] Aborted),
    #[error("the integrator-chain comparison needs a disturbance-free scenario")]
    DisturbanceNotZero,
    #[error("need at least {needed} samples, have {have}")]
    InsufficientSamples { needed: usize, have: usize },
    #[error("telemetry time grid is not uniform near t = {0}")]
    NonUniformGrid(f64),
    #[error("derivative order {order} not available for channel {channel:?}")]
    UnsupportedOrder { channel: OutputChannel, order: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum OutputChannel {
    X,
    Y,
    Z,
    Psi,
}

impl OutputChannel {
    pub const ALL: [OutputChannel; 4] = [Self::X, Self::Y, Self::Z, Self::Psi];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Relative degree of the channel.
    pub fn chain_order(self) -> usize {
        if self == Self::Psi {
            2
        } else {
            4
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChannelDeviation {
    pub channel: OutputChannel,
    pub rms: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExactnessReport {
    pub step: f64,
    pub channels: [ChannelDeviation; 4],
    /// Largest deviation over all 14 flat coordinates.
    pub max_flat_deviation: f64,
    /// Outputs of the integrator chains, one entry per grid point.
    pub chain_outputs: Vec<[f64; 4]>,
    /// Outputs of the nonlinear plant.
    pub plant_outputs: Vec<[f64; 4]>,
}

impl ExactnessReport {
    pub fn max_deviation(&self) -> f64 {
        self.channels.iter().map(|c| c.max).fold(0.0, f64::max)
    }
}

/// Exact update of the decoupled chains under a command held for `h`.
fn advance_chains(z: &FlatState, v: &VirtualCommand, h: f64) -> FlatState {
    let (h2, h3, h4) = (h * h / 2.0, h * h * h / 6.0, h * h * h * h / 24.0);
    FlatState {
        r: z.r + z.v * h + z.a * h2 + z.s * h3 + v.v_r * h4,
        v: z.v + z.a * h + z.s * h2 + v.v_r * h3,
        a: z.a + z.s * h + v.v_r * h2,
        s: z.s + v.v_r * h,
        psi: z.psi + z.eta * h + v.v_psi * h2,
        eta: z.eta + v.v_psi * h,
    }
}

/// Runs the nonlinear closed loop with a sample-and-hold virtual command,
/// then drives pure integrator chains with the recorded commands from the
/// same initial flat state and compares the two.
///
/// With the command held over each step the chains are integrated exactly,
/// so the deviation is the integration error of the nonlinear loop alone.
pub fn linearization_exactness_check(scenario: &Scenario) -> Result<ExactnessReport, CheckError> {
    if !scenario.disturbance.is_zero() {
        return Err(CheckError::DisturbanceNotZero);
    }
    let sc = Scenario { control_update: ControlUpdate::Sampled, ..scenario.clone() };
    let tel = simulate(&sc)?;
    let h = sc.step;
    let mut z = tel.rows[0].flat;
    let mut sq = [0.0; 4];
    let mut max = [0.0f64; 4];
    let mut max_flat = 0.0f64;
    let mut chain_outputs = Vec::with_capacity(tel.rows.len());
    let mut plant_outputs = Vec::with_capacity(tel.rows.len());
    for (k, row) in tel.rows.iter().enumerate() {
        if k > 0 {
            z = advance_chains(&z, &tel.rows[k - 1].virtual_command, h);
        }
        let (yc, yp) = (z.outputs(), row.flat.outputs());
        for i in 0..4 {
            let e = (yc[i] - yp[i]).abs();
            sq[i] += e * e;
            max[i] = max[i].max(e);
        }
        max_flat = max_flat.max((z.to_vector() - row.flat.to_vector()).amax());
        chain_outputs.push(yc);
        plant_outputs.push(yp);
    }
    let n = tel.rows.len() as f64;
    let channels = std::array::from_fn(|i| ChannelDeviation {
        channel: OutputChannel::ALL[i],
        rms: (sq[i] / n).sqrt(),
        max: max[i],
    });
    Ok(ExactnessReport { step: h, channels, max_flat_deviation: max_flat, chain_outputs, plant_outputs })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FdReport {
    pub channel: OutputChannel,
    pub order: usize,
    /// Finite-difference spacing (s).
    pub spacing: f64,
    pub points: usize,
    pub max_residual: f64,
    /// Truncation estimate `c_k * max|g''| * spacing^2` (doubled) plus a
    /// round-off allowance, with `g` the recorded analytic derivative.
    pub expected_bound: f64,
}

impl FdReport {
    pub fn passed(&self) -> bool {
        self.max_residual <= self.expected_bound
    }
}

/// Absolute floor on the FD bound. Analytic derivatives are assembled from
/// O(1) terms and carry about this much round-off even where they vanish.
pub const FD_ABSOLUTE_FLOOR: f64 = 1e-12;

/// Central stencil for the k-th derivative: `(offsets, weights)`, to be
/// divided by `spacing^k`. Leading error `c_k f^(k+2) spacing^2`.
fn stencil(order: usize) -> (&'static [i64], &'static [f64], f64) {
    match order {
        1 => (&[-1, 1], &[-0.5, 0.5], 1.0 / 6.0),
        2 => (&[-1, 0, 1], &[1.0, -2.0, 1.0], 1.0 / 12.0),
        3 => (&[-2, -1, 1, 2], &[-0.5, 1.0, -1.0, 0.5], 1.0 / 4.0),
        _ => (&[-2, -1, 0, 1, 2], &[1.0, -4.0, 6.0, -4.0, 1.0], 1.0 / 6.0),
    }
}

fn analytic_derivative(row: &TelemetryRow, channel: OutputChannel, order: usize) -> f64 {
    let i = channel.index();
    match (channel, order) {
        (OutputChannel::Psi, 1) => row.flat.eta,
        (OutputChannel::Psi, _) => row.psi_ddot(),
        (_, 1) => row.flat.v[i],
        (_, 2) => row.flat.a[i],
        (_, 3) => row.flat.s[i],
        _ => row.snap()[i],
    }
}

/// [`fd_derivative_check_strided`] with spacing equal to the telemetry step.
pub fn fd_derivative_check(tel: &Telemetry, channel: OutputChannel, order: usize) -> Result<FdReport, CheckError> {
    fd_derivative_check_strided(tel, channel, order, 1)
}

/// Compares central finite differences of a recorded output with the
/// recorded analytic derivative of the same order. The spacing is
/// `stride` telemetry steps.
pub fn fd_derivative_check_strided(
    tel: &Telemetry,
    channel: OutputChannel,
    order: usize,
    stride: usize,
) -> Result<FdReport, CheckError> {
    if order == 0 || order > channel.chain_order() {
        return Err(CheckError::UnsupportedOrder { channel, order });
    }
    let stride = stride.max(1);
    let (offsets, weights, c_k) = stencil(order);
    let reach = offsets.iter().map(|o| o.unsigned_abs() as usize).max().unwrap_or(1) * stride;
    let needed = 2 * reach + 1;
    if tel.rows.len() < needed {
        return Err(CheckError::InsufficientSamples { needed, have: tel.rows.len() });
    }
    let dt = tel.rows[1].t - tel.rows[0].t;
    for w in tel.rows.windows(2) {
        if ((w[1].t - w[0].t) - dt).abs() > 1e-9 * dt.abs().max(1.0) || dt <= 0.0 {
            return Err(CheckError::NonUniformGrid(w[0].t));
        }
    }
    let spacing = dt * stride as f64;
    let y: Vec<f64> = tel.rows.iter().map(|r| r.flat.outputs()[channel.index()]).collect();
    let g: Vec<f64> = tel.rows.iter().map(|r| analytic_derivative(r, channel, order)).collect();

    let scale = spacing.powi(order as i32);
    let mut max_residual = 0.0f64;
    let mut max_curvature = 0.0f64;
    let mut max_abs = 0.0f64;
    for i in reach..tel.rows.len() - reach {
        // differences taken relative to the centre sample: exact zero on
        // constant signals
        let fd = offsets
            .iter()
            .zip(weights)
            .map(|(o, w)| w * (y[(i as i64 + o * stride as i64) as usize] - y[i]))
            .sum::<f64>()
            / scale;
        max_residual = max_residual.max((fd - g[i]).abs());
        let curvature = (g[i + stride] - 2.0 * g[i] + g[i - stride]) / (spacing * spacing);
        max_curvature = max_curvature.max(curvature.abs());
        max_abs = max_abs.max(y[i].abs());
    }
    let weight_sum: f64 = weights.iter().map(|w| w.abs()).sum();
    let roundoff = 8.0 * f64::EPSILON * max_abs * weight_sum / scale + FD_ABSOLUTE_FLOOR;
    let expected_bound = 2.0 * c_k * max_curvature * spacing * spacing + roundoff;
    Ok(FdReport {
        channel,
        order,
        spacing,
        points: tel.rows.len() - 2 * reach,
        max_residual,
        expected_bound,
    })
}
