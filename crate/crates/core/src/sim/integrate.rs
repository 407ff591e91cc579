//! Classical fixed-step Runge-Kutta integration.

use nalgebra::SVector;

use super::SimError;

/// One RK4 step of `dx/dt = f(t, x)`. Errors from `f` propagate; a
/// non-finite result aborts with [`SimError::NonFinite`].
pub fn rk4_step<const N: usize, F>(
    x: &SVector<f64, N>,
    t: f64,
    h: f64,
    mut f: F,
) -> Result<SVector<f64, N>, SimError>
where
    F: FnMut(f64, &SVector<f64, N>) -> Result<SVector<f64, N>, SimError>,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(SimError::InvalidScenario(format!("integration step must be positive, got {h}")));
    }
    let half = 0.5 * h;
    let k1 = f(t, x)?;
    let k2 = f(t + half, &(x + k1 * half))?;
    let k3 = f(t + half, &(x + k2 * half))?;
    let k4 = f(t + h, &(x + k3 * h))?;
    let next = x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    if next.iter().any(|v| !v.is_finite()) {
        return Err(SimError::NonFinite { t: t + h });
    }
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Matrix2, Vector1, Vector2};

    #[test]
    fn exponential_decay_single_step() {
        let x = rk4_step(&Vector1::new(1.0), 0.0, 0.1, |_, x| Ok(-x)).unwrap();
        // 1 - h + h^2/2 - h^3/6 + h^4/24 at h = 0.1
        assert!((x[0] - 0.904_837_5).abs() < 1e-12);
        assert!((x[0] - (-0.1f64).exp()).abs() < 1e-7);
    }

    #[test]
    fn zero_field_leaves_state_unchanged() {
        let x0 = Vector2::new(3.0, -4.0);
        assert_eq!(rk4_step(&x0, 1.0, 0.5, |_, _| Ok(Vector2::zeros())).unwrap(), x0);
    }

    #[test]
    fn rejects_bad_step_and_non_finite_results() {
        assert!(matches!(
            rk4_step(&Vector1::new(1.0), 0.0, 0.0, |_, x| Ok(*x)),
            Err(SimError::InvalidScenario(_))
        ));
        assert!(matches!(
            rk4_step(&Vector1::new(1.0), 0.0, 0.1, |_, _| Ok(Vector1::new(f64::INFINITY))),
            Err(SimError::NonFinite { .. })
        ));
    }

    #[test]
    fn fourth_order_convergence_on_linear_system() {
        // Harmonic oscillator; exact solution is a rotation.
        let a = Matrix2::new(0.0, 1.0, -4.0, -0.3);
        let x0 = Vector2::new(1.0, 0.0);
        let horizon = 2.0;
        // Reference from a much finer integration of the same system.
        let solve = |steps: usize| {
            let h = horizon / steps as f64;
            let mut x = x0;
            for i in 0..steps {
                x = rk4_step(&x, i as f64 * h, h, |_, x| Ok(a * x)).unwrap();
            }
            x
        };
        let exact = {
            // matrix exponential through eigen-free series with many terms
            let mut term = Matrix2::identity();
            let mut sum = Matrix2::identity();
            for k in 1..60 {
                term = term * a * horizon / k as f64;
                sum += term;
            }
            sum * x0
        };
        let hs: Vec<f64> = [20usize, 40, 80, 160].iter().map(|n| horizon / *n as f64).collect();
        let errs: Vec<f64> = [20usize, 40, 80, 160].iter().map(|n| (solve(*n) - exact).norm()).collect();
        for w in errs.windows(2) {
            assert!((w[0] / w[1] - 16.0).abs() < 2.0, "ratio {}", w[0] / w[1]);
        }
        // least-squares slope on log-log axes
        let (lx, ly): (Vec<f64>, Vec<f64>) = hs.iter().zip(&errs).map(|(h, e)| (h.ln(), e.ln())).unzip();
        let n = lx.len() as f64;
        let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
        let slope = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
            / lx.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
        assert!((slope - 4.0).abs() < 0.1, "slope {slope}");
    }
}
