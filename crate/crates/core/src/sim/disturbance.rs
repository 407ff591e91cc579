//! Deterministic disturbance signals with closed-form derivatives.

use serde::{Deserialize, Serialize};

use crate::math::Vec3;
use crate::model::DisturbanceSample;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Signal {
    #[default]
    Zero,
    Constant {
        value: f64,
    },
    /// `amplitude * sin(frequency_rad_s * t + phase_rad)`
    Sinusoid {
        amplitude: f64,
        frequency_rad_s: f64,
        #[serde(default)]
        phase_rad: f64,
    },
}

impl Signal {
    /// Value and first two time derivatives at `t`.
    pub fn eval(&self, t: f64) -> [f64; 3] {
        match *self {
            Signal::Zero => [0.0; 3],
            Signal::Constant { value } => [value, 0.0, 0.0],
            Signal::Sinusoid { amplitude, frequency_rad_s: w, phase_rad } => {
                let (s, c) = (w * t + phase_rad).sin_cos();
                [amplitude * s, amplitude * w * c, -amplitude * w * w * s]
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        match *self {
            Signal::Zero => true,
            Signal::Constant { value } => value == 0.0,
            Signal::Sinusoid { amplitude, .. } => amplitude == 0.0,
        }
    }
}

/// One signal per axis of the rotational (`d`) and translational (`a_d`)
/// disturbance channels.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DisturbanceSpec {
    #[serde(default)]
    pub d: [Signal; 3],
    #[serde(default)]
    pub a_d: [Signal; 3],
}

impl DisturbanceSpec {
    pub fn is_zero(&self) -> bool {
        self.d.iter().chain(&self.a_d).all(Signal::is_zero)
    }
}

pub fn disturbance_eval(spec: &DisturbanceSpec, t: f64) -> DisturbanceSample {
    let d = spec.d.map(|s| s.eval(t)[0]);
    let ad = spec.a_d.map(|s| s.eval(t));
    DisturbanceSample {
        d: Vec3::from(d),
        a_d: Vec3::new(ad[0][0], ad[1][0], ad[2][0]),
        a_d_dot: Vec3::new(ad[0][1], ad[1][1], ad[2][1]),
        a_d_ddot: Vec3::new(ad[0][2], ad[1][2], ad[2][2]),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_spec_gives_zero_sample() {
        let spec = DisturbanceSpec::default();
        assert!(spec.is_zero());
        assert_eq!(disturbance_eval(&spec, 3.7), DisturbanceSample::default());
    }

    #[test]
    fn sinusoid_derivatives() {
        let (a, w) = (0.3, 2.5);
        let spec = DisturbanceSpec {
            a_d: [Signal::Sinusoid { amplitude: a, frequency_rad_s: w, phase_rad: 0.0 }, Signal::Zero, Signal::Zero],
            ..Default::default()
        };
        for i in 0..20 {
            let t = i as f64 * 0.31;
            let s = disturbance_eval(&spec, t);
            assert!((s.a_d.x - a * (w * t).sin()).abs() < 1e-15);
            assert!((s.a_d_dot.x - a * w * (w * t).cos()).abs() < 1e-15);
            assert!((s.a_d_ddot.x + a * w * w * (w * t).sin()).abs() < 1e-14);
        }
    }

    #[test]
    fn sinusoid_derivatives_match_finite_differences() {
        let sig = Signal::Sinusoid { amplitude: 1.7, frequency_rad_s: 3.0, phase_rad: 0.4 };
        let h = 1e-4;
        for i in 0..20 {
            let t = i as f64 * 0.17;
            let [_, d1, d2] = sig.eval(t);
            let fd1 = (sig.eval(t + h)[0] - sig.eval(t - h)[0]) / (2.0 * h);
            let fd2 = (sig.eval(t + h)[1] - sig.eval(t - h)[1]) / (2.0 * h);
            assert!((fd1 - d1).abs() < 1e-6 && (fd2 - d2).abs() < 1e-6);
        }
    }

    #[test]
    fn constant_bias_has_zero_derivatives() {
        let spec = DisturbanceSpec {
            d: [Signal::Constant { value: 0.01 }, Signal::Zero, Signal::Zero],
            a_d: [Signal::Zero, Signal::Constant { value: -0.2 }, Signal::Zero],
        };
        assert!(!spec.is_zero());
        let s = disturbance_eval(&spec, 12.0);
        assert_eq!(s.d, Vec3::new(0.01, 0.0, 0.0));
        assert_eq!(s.a_d, Vec3::new(0.0, -0.2, 0.0));
        assert_eq!(s.a_d_dot, Vec3::zeros());
        assert_eq!(s.a_d_ddot, Vec3::zeros());
    }
}
