//! Steering blend and the baseline authority laws.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::driver::DriverStateKind;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ArbitrationError {
    #[error("authority {0} outside [0, 1]")]
    LambdaOutOfRange(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AuthoritySource {
    #[serde(rename = "RL")]
    Rl,
    #[serde(rename = "FACD")]
    Facd,
    #[serde(rename = "DCCD")]
    Dccd,
    Manual,
    FullAuto,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuthorityDecision {
    pub lambda: f64,
    pub source: AuthoritySource,
}

impl AuthorityDecision {
    pub fn new(lambda: f64, source: AuthoritySource) -> Result<Self, ArbitrationError> {
        let lambda = match source {
            AuthoritySource::Manual => 0.0,
            AuthoritySource::FullAuto => 1.0,
            _ => lambda,
        };
        if !(0.0..=1.0).contains(&lambda) {
            return Err(ArbitrationError::LambdaOutOfRange(lambda));
        }
        Ok(Self { lambda, source })
    }

    pub fn manual() -> Self {
        Self { lambda: 0.0, source: AuthoritySource::Manual }
    }
}

/// Unclamped blend `λ δ_a + (1 − λ) δ_h`.
pub fn blend_raw(delta_a: f64, delta_h: f64, lambda: f64) -> Result<f64, ArbitrationError> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(ArbitrationError::LambdaOutOfRange(lambda));
    }
    Ok(lambda * delta_a + (1.0 - lambda) * delta_h)
}

/// Blended steering clamped to `±max_steer`.
pub fn blend(delta_a: f64, delta_h: f64, lambda: f64, max_steer: f64) -> Result<f64, ArbitrationError> {
    let raw = blend_raw(delta_a, delta_h, lambda)?;
    if raw.abs() > max_steer {
        log::debug!("blended steering {raw:.4} clamped to ±{max_steer}");
    }
    Ok(raw.clamp(-max_steer, max_steer))
}

pub fn facd_lambda(kind: DriverStateKind) -> f64 {
    match kind {
        DriverStateKind::Concentrated => 0.2,
        DriverStateKind::Normal => 0.5,
        DriverStateKind::Distracted => 0.8,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DccdParams {
    pub lambda_min: f64,
    pub mu1: f64,
    pub mu2: f64,
    pub mu3: f64,
    pub mu4: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub di_concentrated: f64,
    pub di_normal: f64,
    pub di_distracted: f64,
}

impl Default for DccdParams {
    fn default() -> Self {
        Self {
            lambda_min: 0.1,
            mu1: 2.0,
            mu2: 3.0,
            mu3: 1.0,
            mu4: 3.0,
            alpha1: 0.75,
            alpha2: 0.22,
            di_concentrated: 0.6,
            di_normal: 0.45,
            di_distracted: 0.3,
        }
    }
}

impl DccdParams {
    /// Driver involvement for a driver state.
    pub fn involvement(&self, kind: DriverStateKind) -> f64 {
        match kind {
            DriverStateKind::Concentrated => self.di_concentrated,
            DriverStateKind::Normal => self.di_normal,
            DriverStateKind::Distracted => self.di_distracted,
        }
    }
}

pub fn driving_ability(e_d: f64, e_yaw: f64, p: &DccdParams) -> f64 {
    1.0 / (1.0 + (p.alpha1 * e_d).powi(2) + (p.alpha2 * e_yaw).powi(2))
}

pub fn dccd_lambda(di: f64, da: f64, p: &DccdParams) -> f64 {
    let raw = (-(p.mu1 * di).powf(p.mu2) * (p.mu3 * da).powf(p.mu4)).exp();
    raw.max(p.lambda_min)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::driver::quantify_state;
    use proptest::prelude::*;

    #[test]
    fn blend_examples() {
        assert_eq!(blend(0.10, 0.05, 0.0, 0.5).unwrap(), 0.05);
        assert_eq!(blend(0.10, 0.05, 1.0, 0.5).unwrap(), 0.10);
        assert!((blend(0.2, -0.1, 0.5, 0.5).unwrap() - 0.05).abs() < 1e-15);
        assert_eq!(blend(0.6, 0.6, 0.5, 0.5).unwrap(), 0.5);
        assert_eq!(blend(0.1, 0.0, 1.2, 0.5), Err(ArbitrationError::LambdaOutOfRange(1.2)));
    }

    #[test]
    fn facd_levels_match_quantified_state() {
        for kind in DriverStateKind::ALL {
            assert_eq!(facd_lambda(kind), quantify_state(kind));
        }
        assert_eq!(facd_lambda(DriverStateKind::Concentrated), 0.2);
        assert_eq!(facd_lambda(DriverStateKind::Normal), 0.5);
        assert_eq!(facd_lambda(DriverStateKind::Distracted), 0.8);
    }

    #[test]
    fn driving_ability_examples() {
        let p = DccdParams::default();
        assert_eq!(driving_ability(0.0, 0.0, &p), 1.0);
        // 1 / (1 + 0.5625)
        assert!((driving_ability(1.0, 0.0, &p) - 0.64).abs() < 1e-15);
        assert!(driving_ability(1.5, 0.1, &p) < driving_ability(1.0, 0.1, &p));
    }

    #[test]
    fn dccd_examples() {
        let p = DccdParams::default();
        // Series evaluation of exp(-x) as an independent oracle.
        let exp_neg = |x: f64| (0..40).fold((1.0, 0.0), |(term, sum), k| (term * -x / (k as f64 + 1.0), sum + term)).1;
        assert!((dccd_lambda(0.3, 1.0, &p) - exp_neg(0.216)).abs() < 1e-12);
        assert!((dccd_lambda(0.6, 1.0, &p) - exp_neg(1.728)).abs() < 1e-12);
        assert!((dccd_lambda(0.3, 1.0, &p) - 0.8058).abs() < 1e-4);
        assert!((dccd_lambda(0.6, 1.0, &p) - 0.1777).abs() < 1e-4);
        assert_eq!(dccd_lambda(1.0, 1.0, &p), 0.1);
    }

    #[test]
    fn decision_invariants() {
        assert_eq!(AuthorityDecision::new(0.7, AuthoritySource::Manual).unwrap().lambda, 0.0);
        assert_eq!(AuthorityDecision::new(0.2, AuthoritySource::FullAuto).unwrap().lambda, 1.0);
        assert!(AuthorityDecision::new(-0.1, AuthoritySource::Rl).is_err());
    }

    proptest! {
        #[test]
        fn blend_is_affine(a in -0.5f64..0.5, h in -0.5f64..0.5, l in 0.0f64..=1.0) {
            let d = blend_raw(a, h, l).unwrap();
            prop_assert!(((d - h).abs() - l * (a - h).abs()).abs() <= 1e-15);
        }

        #[test]
        fn dccd_bounded_and_monotone(di in 0.01f64..1.0, da in 0.01f64..1.0, bump in 0.001f64..0.2) {
            let p = DccdParams::default();
            let l = dccd_lambda(di, da, &p);
            prop_assert!((0.1..=1.0).contains(&l));
            prop_assert!(dccd_lambda((di + bump).min(1.0), da, &p) <= l);
            prop_assert!(dccd_lambda(di, (da + bump).min(1.0), &p) <= l);
        }
    }
}
