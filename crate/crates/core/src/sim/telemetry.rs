//! Per-step run records and their CSV form.
//!
//! The CSV starts with a format line (`# quadfl-telemetry/1`), then a fixed
//! header row, then one row per grid point. Floats are written with 17
//! significant digits so files round-trip exactly.

use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};

use thiserror::Error;

use crate::control::ReferencePoint;
use crate::linearize::{FlatState, FlatVector, VirtualCommand};
use crate::math::{wrap_angle, Vec3};
use crate::model::{CommandBar, ExtendedState, StateVector};

pub const TELEMETRY_FORMAT: &str = "quadfl-telemetry/1";

#[rustfmt::skip]
pub const TELEMETRY_COLUMNS: [&str; 61] = [
    "t",
    "r_x", "r_y", "r_z", "v_x", "v_y", "v_z", "phi", "theta", "psi",
    "omega_x", "omega_y", "omega_z", "zeta", "chi",
    "z_r_x", "z_r_y", "z_r_z", "z_v_x", "z_v_y", "z_v_z", "z_a_x", "z_a_y", "z_a_z",
    "z_s_x", "z_s_y", "z_s_z", "z_psi", "z_eta",
    "u1_ddot", "u2", "u3", "u4",
    "v_r_x", "v_r_y", "v_r_z", "v_psi",
    "ref_r_x", "ref_r_y", "ref_r_z", "ref_v_x", "ref_v_y", "ref_v_z",
    "ref_a_x", "ref_a_y", "ref_a_z", "ref_s_x", "ref_s_y", "ref_s_z",
    "ref_snap_x", "ref_snap_y", "ref_snap_z", "ref_psi", "ref_psi_dot", "ref_psi_ddot",
    "in_domain", "cond_e",
    "res_snap_x", "res_snap_y", "res_snap_z", "res_psi_ddot",
];

const IN_DOMAIN_COL: usize = 55;

#[derive(Debug, Error)]
pub enum TelemetryError {
    #[error("telemetry I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("telemetry CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("unsupported telemetry format line {0:?}")]
    Format(String),
    #[error("unexpected telemetry header")]
    Header,
    #[error("bad value {value:?} in row {row}, column {column}")]
    Value { row: usize, column: &'static str, value: String },
}

/// Everything recorded at one grid point. `snap_residual` and
/// `psi_ddot_residual` are the plant's actual snap / heading acceleration
/// minus the virtual command, i.e. what the linearization did not cancel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TelemetryRow {
    pub t: f64,
    pub state: ExtendedState,
    pub flat: FlatState,
    pub command: CommandBar,
    pub virtual_command: VirtualCommand,
    pub reference: ReferencePoint,
    pub in_domain: bool,
    pub condition_number: f64,
    pub snap_residual: Vec3,
    pub psi_ddot_residual: f64,
}

impl TelemetryRow {
    pub fn to_values(&self) -> [f64; 61] {
        let mut out = [0.0; 61];
        out[0] = self.t;
        out[1..15].copy_from_slice(self.state.to_vector().as_slice());
        out[15..29].copy_from_slice(self.flat.to_vector().as_slice());
        out[29..33].copy_from_slice(&self.command.to_array());
        out[33..37].copy_from_slice(&self.virtual_command.to_array());
        for (k, d) in self.reference.r.iter().enumerate() {
            out[37 + 3 * k..40 + 3 * k].copy_from_slice(d.as_slice());
        }
        out[52..55].copy_from_slice(&self.reference.psi);
        out[IN_DOMAIN_COL] = if self.in_domain { 1.0 } else { 0.0 };
        out[56] = self.condition_number;
        out[57..60].copy_from_slice(self.snap_residual.as_slice());
        out[60] = self.psi_ddot_residual;
        out
    }

    pub fn from_values(v: &[f64; 61]) -> Self {
        let v3 = |i: usize| Vec3::new(v[i], v[i + 1], v[i + 2]);
        Self {
            t: v[0],
            state: ExtendedState::from_vector(&StateVector::from_column_slice(&v[1..15])),
            flat: FlatState::from_vector(&FlatVector::from_column_slice(&v[15..29])),
            command: CommandBar::from_array([v[29], v[30], v[31], v[32]]),
            virtual_command: VirtualCommand::from_array([v[33], v[34], v[35], v[36]]),
            reference: ReferencePoint {
                t: v[0],
                r: std::array::from_fn(|k| v3(37 + 3 * k)),
                psi: [v[52], v[53], v[54]],
            },
            in_domain: v[IN_DOMAIN_COL] != 0.0,
            condition_number: v[56],
            snap_residual: v3(57),
            psi_ddot_residual: v[60],
        }
    }

    /// The plant's position snap (virtual command plus residual).
    pub fn snap(&self) -> Vec3 {
        self.virtual_command.v_r + self.snap_residual
    }

    /// The plant's heading acceleration.
    pub fn psi_ddot(&self) -> f64 {
        self.virtual_command.v_psi + self.psi_ddot_residual
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Telemetry {
    pub step: f64,
    pub rows: Vec<TelemetryRow>,
    /// Grid points where a command bound was exceeded (logged, not enforced).
    pub saturation_events: usize,
}

impl Telemetry {
    pub fn new(step: f64) -> Self {
        Self { step, rows: Vec::new(), saturation_events: 0 }
    }

    pub fn all_finite(&self) -> bool {
        self.rows.iter().all(|r| r.to_values().iter().all(|v| v.is_finite()))
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<(), TelemetryError> {
        writeln!(out, "# {TELEMETRY_FORMAT}")?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(TELEMETRY_COLUMNS)?;
        let mut fields: Vec<String> = Vec::with_capacity(61);
        for row in &self.rows {
            fields.clear();
            for (i, v) in row.to_values().iter().enumerate() {
                fields.push(if i == IN_DOMAIN_COL { format!("{}", *v as u8) } else { format!("{v:.16e}") });
            }
            w.write_record(&fields)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a file written by [`Telemetry::write_csv`]. The step is taken
    /// from the first two time stamps.
    pub fn read_csv<R: Read>(input: R) -> Result<Self, TelemetryError> {
        let mut input = BufReader::new(input);
        let mut first = String::new();
        input.read_line(&mut first)?;
        let tag = first.trim_end();
        if tag != format!("# {TELEMETRY_FORMAT}") {
            return Err(TelemetryError::Format(tag.to_string()));
        }
        let mut reader = csv::Reader::from_reader(input);
        if reader.headers()?.iter().ne(TELEMETRY_COLUMNS.iter().copied()) {
            return Err(TelemetryError::Header);
        }
        let mut rows = Vec::new();
        for (i, record) in reader.records().enumerate() {
            let record = record?;
            let mut values = [0.0; 61];
            for (j, field) in record.iter().enumerate().take(61) {
                values[j] = field.parse().map_err(|_| TelemetryError::Value {
                    row: i,
                    column: TELEMETRY_COLUMNS[j],
                    value: field.to_string(),
                })?;
            }
            if record.len() != 61 {
                return Err(TelemetryError::Header);
            }
            rows.push(TelemetryRow::from_values(&values));
        }
        let step = if rows.len() >= 2 { rows[1].t - rows[0].t } else { 0.0 };
        Ok(Self { step, rows, saturation_events: 0 })
    }
}

/// Headline numbers of one run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunSummary {
    pub samples: usize,
    pub final_time: f64,
    pub final_position_error: f64,
    pub final_heading_error: f64,
    pub max_position_drift: f64,
    pub max_condition_number: f64,
    pub domain_violations: usize,
    pub saturation_events: usize,
}

impl RunSummary {
    pub fn from_telemetry(tel: &Telemetry) -> Self {
        let first = tel.rows.first();
        let last = tel.rows.last();
        let drift = match first {
            Some(f) => tel.rows.iter().map(|r| (r.state.r - f.state.r).norm()).fold(0.0, f64::max),
            None => 0.0,
        };
        Self {
            samples: tel.rows.len(),
            final_time: last.map_or(0.0, |r| r.t),
            final_position_error: last.map_or(0.0, |r| (r.state.r - r.reference.r[0]).norm()),
            final_heading_error: last.map_or(0.0, |r| wrap_angle(r.reference.psi[0] - r.flat.psi).abs()),
            max_position_drift: drift,
            max_condition_number: tel.rows.iter().map(|r| r.condition_number).fold(0.0, f64::max),
            domain_violations: tel.rows.iter().filter(|r| !r.in_domain).count(),
            saturation_events: tel.saturation_events,
        }
    }

    /// Largest position tracking error over rows with `t >= after`.
    pub fn max_position_error_after(tel: &Telemetry, after: f64) -> f64 {
        tel.rows
            .iter()
            .filter(|r| r.t >= after)
            .map(|r| (r.state.r - r.reference.r[0]).norm())
            .fold(0.0, f64::max)
    }
}

impl fmt::Display for RunSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "samples               {}", self.samples)?;
        writeln!(f, "final time            {:.6} s", self.final_time)?;
        writeln!(f, "final position error  {:.6e} m", self.final_position_error)?;
        writeln!(f, "final heading error   {:.6e} rad", self.final_heading_error)?;
        writeln!(f, "max position drift    {:.6e} m", self.max_position_drift)?;
        writeln!(f, "max cond(E)           {:.6e}", self.max_condition_number)?;
        writeln!(f, "domain violations     {}", self.domain_violations)?;
        write!(f, "saturation events     {}", self.saturation_events)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::EulerAngles;
    use proptest::prelude::*;

    fn arb_row() -> impl Strategy<Value = TelemetryRow> {
        (prop::collection::vec(-1e6..1e6f64, 61), any::<bool>()).prop_map(|(v, dom)| {
            let mut values = [0.0; 61];
            values.copy_from_slice(&v);
            values[IN_DOMAIN_COL] = if dom { 1.0 } else { 0.0 };
            TelemetryRow::from_values(&values)
        })
    }

    proptest! {
        #[test]
        fn csv_round_trip_is_exact(rows in prop::collection::vec(arb_row(), 1..6)) {
            let tel = Telemetry { step: 0.0, rows, saturation_events: 0 };
            let mut buf = Vec::new();
            tel.write_csv(&mut buf).unwrap();
            let back = Telemetry::read_csv(buf.as_slice()).unwrap();
            for (a, b) in tel.rows.iter().zip(&back.rows) {
                let (va, vb) = (a.to_values(), b.to_values());
                prop_assert!(va.iter().zip(vb.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
            }
        }
    }

    #[test]
    fn header_is_fixed() {
        let tel = Telemetry::new(0.1);
        let mut buf = Vec::new();
        tel.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("# quadfl-telemetry/1"));
        assert_eq!(lines.next().unwrap().split(',').count(), 61);
    }

    #[test]
    fn rejects_foreign_files() {
        assert!(matches!(Telemetry::read_csv("t,x\n1,2\n".as_bytes()), Err(TelemetryError::Format(_))));
        assert!(matches!(
            Telemetry::read_csv("# quadfl-telemetry/1\nt,x\n1,2\n".as_bytes()),
            Err(TelemetryError::Header)
        ));
    }

    #[test]
    fn summary_of_static_run() {
        let state = ExtendedState { r: Vec3::new(1.0, 0.0, 0.0), theta: EulerAngles::new(0.0, 0.0, 0.5), zeta: 9.81, ..Default::default() };
        let row = TelemetryRow {
            t: 0.0,
            state,
            flat: FlatState { r: state.r, psi: 0.5, ..Default::default() },
            command: CommandBar::default(),
            virtual_command: VirtualCommand::default(),
            reference: ReferencePoint { r: [Vec3::new(1.0, 0.0, 0.0), Vec3::zeros(), Vec3::zeros(), Vec3::zeros(), Vec3::zeros()], psi: [0.5, 0.0, 0.0], t: 0.0 },
            in_domain: true,
            condition_number: 9.81,
            snap_residual: Vec3::zeros(),
            psi_ddot_residual: 0.0,
        };
        let tel = Telemetry { step: 0.1, rows: vec![row, TelemetryRow { t: 0.1, ..row }], saturation_events: 0 };
        let s = RunSummary::from_telemetry(&tel);
        assert_eq!(s.samples, 2);
        assert_eq!(s.final_position_error, 0.0);
        assert_eq!(s.max_position_drift, 0.0);
        assert_eq!(s.max_condition_number, 9.81);
        assert!(s.to_string().contains("max cond(E)"));
    }
}
