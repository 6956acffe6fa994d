use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::PlannerError;

/// `l(t) = c0 + c1 t + ... + c5 t^5`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct QuinticCoefficients(pub [f64; 6]);

/// `s(t) = c0 + c1 t + ... + c4 t^4`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct QuarticCoefficients(pub [f64; 5]);

fn horner(c: &[f64], t: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, v| acc * t + v)
}

macro_rules! poly_eval {
    ($ty:ty) => {
        impl $ty {
            pub fn coefficients(&self) -> &[f64] {
                &self.0
            }

            pub fn value(&self, t: f64) -> f64 {
                horner(&self.0, t)
            }

            /// k-th time derivative at `t`.
            pub fn derivative(&self, k: usize, t: f64) -> f64 {
                let c = &self.0;
                if k >= c.len() {
                    return 0.0;
                }
                let deriv: Vec<f64> = (k..c.len())
                    .map(|i| c[i] * ((i - k + 1)..=i).map(|f| f as f64).product::<f64>())
                    .collect();
                horner(&deriv, t)
            }

            pub fn is_finite(&self) -> bool {
                self.0.iter().all(|v| v.is_finite())
            }
        }
    };
}

poly_eval!(QuinticCoefficients);
poly_eval!(QuarticCoefficients);

/// Fits the quintic matching `[l, l_dot, l_ddot]` at `t = 0` (`start`) and
/// at `t = tau` (`end`).
pub fn fit_quintic(start: [f64; 3], end: [f64; 3], tau: f64) -> Result<QuinticCoefficients, PlannerError> {
    if !tau.is_finite() || tau <= 0.0 {
        return Err(PlannerError::BadHorizon(tau));
    }
    if start.iter().chain(end.iter()).any(|v| !v.is_finite()) {
        return Err(PlannerError::NonFinite);
    }
    let (c0, c1, c2) = (start[0], start[1], start[2] / 2.0);
    let (t, t2, t3, t4, t5) = (tau, tau * tau, tau.powi(3), tau.powi(4), tau.powi(5));
    let m1 = Matrix3::new(1.0, t, t2, 0.0, 1.0, 2.0 * t, 0.0, 0.0, 2.0);
    let m2 = Matrix3::new(t3, t4, t5, 3.0 * t2, 4.0 * t3, 5.0 * t4, 6.0 * t, 12.0 * t2, 20.0 * t3);
    let rhs = Vector3::from(end) - m1 * Vector3::new(c0, c1, c2);
    let upper = m2.lu().solve(&rhs).ok_or(PlannerError::BadHorizon(tau))?;
    Ok(QuinticCoefficients([c0, c1, c2, upper[0], upper[1], upper[2]]))
}

/// Fits the quartic matching `[s, s_dot, s_ddot]` at `t = 0` and
/// `[s_dot, s_ddot]` at `t = tau`; the terminal position is free.
pub fn fit_quartic(start: [f64; 3], end: [f64; 2], tau: f64) -> Result<QuarticCoefficients, PlannerError> {
    if !tau.is_finite() || tau <= 0.0 {
        return Err(PlannerError::BadHorizon(tau));
    }
    if start.iter().chain(end.iter()).any(|v| !v.is_finite()) {
        return Err(PlannerError::NonFinite);
    }
    let (c0, c1, c2) = (start[0], start[1], start[2] / 2.0);
    let t = tau;
    let m1 = Matrix2::new(1.0, 2.0 * t, 0.0, 2.0);
    let m2 = Matrix2::new(3.0 * t * t, 4.0 * t.powi(3), 6.0 * t, 12.0 * t * t);
    let rhs = Vector2::from(end) - m1 * Vector2::new(c1, c2);
    let upper = m2.lu().solve(&rhs).ok_or(PlannerError::BadHorizon(tau))?;
    Ok(QuarticCoefficients([c0, c1, c2, upper[0], upper[1]]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Cramer's rule on the upper 3x3 block, written out independently.
    fn cramer3(a: [[f64; 3]; 3], b: [f64; 3]) -> [f64; 3] {
        let det = |m: [[f64; 3]; 3]| {
            m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
        };
        let d = det(a);
        let mut out = [0.0; 3];
        for (col, slot) in out.iter_mut().enumerate() {
            let mut m = a;
            for row in 0..3 {
                m[row][col] = b[row];
            }
            *slot = det(m) / d;
        }
        out
    }

    #[test]
    fn zero_boundary_gives_zero_polynomial() {
        let q = fit_quintic([0.0; 3], [0.0; 3], 4.0).unwrap();
        assert!(q.0.iter().all(|c| *c == 0.0));
    }

    #[test]
    fn lane_change_coefficients_match_cramer() {
        let q = fit_quintic([0.0; 3], [3.5, 0.0, 0.0], 4.0).unwrap();
        let t = 4.0f64;
        let a = [
            [t.powi(3), t.powi(4), t.powi(5)],
            [3.0 * t * t, 4.0 * t.powi(3), 5.0 * t.powi(4)],
            [6.0 * t, 12.0 * t * t, 20.0 * t.powi(3)],
        ];
        let oracle = cramer3(a, [3.5, 0.0, 0.0]);
        assert_eq!(&q.0[..3], &[0.0, 0.0, 0.0]);
        for (got, want) in q.0[3..].iter().zip(oracle) {
            assert!((got - want).abs() < 1e-12);
        }
        assert!((q.0[3] - 0.546875).abs() < 1e-12);
        assert!((q.0[4] + 0.205078125).abs() < 1e-12);
        assert!((q.0[5] - 0.0205078125).abs() < 1e-12);
    }

    #[test]
    fn stationary_quintic_is_constant() {
        let q = fit_quintic([1.0, 0.0, 0.0], [1.0, 0.0, 0.0], 2.0).unwrap();
        for i in 0..=20 {
            assert!((q.value(i as f64 * 0.1) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn quartic_cases() {
        let q = fit_quartic([0.0, 15.0, 0.0], [15.0, 0.0], 4.0).unwrap();
        assert!(q.0[3].abs() < 1e-15 && q.0[4].abs() < 1e-15);
        assert!((q.value(3.0) - 45.0).abs() < 1e-12);

        let q = fit_quartic([0.0, 10.0, 0.0], [14.0, 0.0], 4.0).unwrap();
        // Independent 2x2 solve for c3, c4: 3t^2 c3 + 4t^3 c4 = 4, 6t c3 + 12t^2 c4 = 0.
        let t = 4.0f64;
        let (a, b, c, d) = (3.0 * t * t, 4.0 * t.powi(3), 6.0 * t, 12.0 * t * t);
        let det = a * d - b * c;
        let (c3, c4) = ((4.0 * d) / det, (-4.0 * c) / det);
        assert!((q.0[3] - c3).abs() < 1e-12 && (q.0[4] - c4).abs() < 1e-12);
        assert!((q.derivative(1, 4.0) - 14.0).abs() < 1e-9);

        let q = fit_quartic([5.0, 0.0, 0.0], [0.0, 0.0], 1.0).unwrap();
        assert!((q.value(0.7) - 5.0).abs() < 1e-15);
    }

    #[test]
    fn bad_horizon_rejected() {
        assert!(matches!(fit_quintic([0.0; 3], [0.0; 3], 0.0), Err(PlannerError::BadHorizon(_))));
        assert!(matches!(fit_quartic([0.0; 3], [0.0; 2], -1.0), Err(PlannerError::BadHorizon(_))));
        assert!(matches!(fit_quintic([f64::NAN, 0.0, 0.0], [0.0; 3], 1.0), Err(PlannerError::NonFinite)));
    }

    #[test]
    fn derivative_orders() {
        let q = QuinticCoefficients([1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let t = 0.7;
        let d3 = 24.0 + 120.0 * t + 360.0 * t * t;
        assert!((q.derivative(3, t) - d3).abs() < 1e-12);
        assert_eq!(q.derivative(6, t), 0.0);
    }

    proptest! {
        #[test]
        fn quintic_boundary_residuals(
            l0 in prop::array::uniform3(-5.0f64..5.0),
            l1 in prop::array::uniform3(-5.0f64..5.0),
            tau in 1.0f64..8.0,
        ) {
            let q = fit_quintic(l0, l1, tau).unwrap();
            for k in 0..3 {
                prop_assert!((q.derivative(k, 0.0) - l0[k]).abs() < 1e-9);
                prop_assert!((q.derivative(k, tau) - l1[k]).abs() < 1e-9);
            }
        }

        #[test]
        fn quartic_boundary_residuals(
            s0 in prop::array::uniform3(-20.0f64..20.0),
            s1 in prop::array::uniform2(-20.0f64..20.0),
            tau in 1.0f64..8.0,
        ) {
            let q = fit_quartic(s0, s1, tau).unwrap();
            for k in 0..3 {
                prop_assert!((q.derivative(k, 0.0) - s0[k]).abs() < 1e-9);
            }
            prop_assert!((q.derivative(1, tau) - s1[0]).abs() < 1e-9);
            prop_assert!((q.derivative(2, tau) - s1[1]).abs() < 1e-9);
        }
    }
}
