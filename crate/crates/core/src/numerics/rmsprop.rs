//! RMSProp optimizer over flat parameter vectors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Optimizer hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RmsPropConfig {
    pub learning_rate: f64,
    pub rho: f64,
    pub epsilon: f64,
}

impl Default for RmsPropConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            rho: 0.9,
            epsilon: 1e-8,
        }
    }
}

impl RmsPropConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::Config(format!(
                "rho must lie in (0,1), got {}",
                self.rho
            )));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config(format!(
                "epsilon must be > 0, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// Running mean of squared gradients, one entry per parameter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RmsPropState {
    pub config: RmsPropConfig,
    pub v: Vec<f64>,
}

impl RmsPropState {
    pub fn new(config: RmsPropConfig, len: usize) -> Self {
        Self {
            config,
            v: vec![0.0; len],
        }
    }

    /// One in-place update: `v ← ρv + (1−ρ)g²`, `p ← p − lr·g/(√v + ε)`.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.v.len() {
            return Err(Error::contract(format!(
                "rmsprop lengths differ: params {}, grads {}, state {}",
                params.len(),
                grads.len(),
                self.v.len()
            )));
        }
        let RmsPropConfig {
            learning_rate,
            rho,
            epsilon,
        } = self.config;
        for ((p, &g), v) in params.iter_mut().zip(grads).zip(self.v.iter_mut()) {
            *v = rho * *v + (1.0 - rho) * g * g;
            *p -= learning_rate * g / (v.sqrt() + epsilon);
        }
        Ok(())
    }
}

/// Pure form of [`RmsPropState::step`]: returns the updated parameters and state.
pub fn rmsprop_step(
    state: &RmsPropState,
    params: &[f64],
    grads: &[f64],
) -> Result<(Vec<f64>, RmsPropState)> {
    let mut next = state.clone();
    let mut p = params.to_vec();
    next.step(&mut p, grads)?;
    Ok((p, next))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg() -> RmsPropConfig {
        RmsPropConfig {
            learning_rate: 0.01,
            rho: 0.9,
            epsilon: 1e-8,
        }
    }

    #[test]
    fn first_step_closed_form() {
        let s = RmsPropState::new(cfg(), 1);
        let (p, s) = rmsprop_step(&s, &[0.0], &[1.0]).unwrap();
        assert!((s.v[0] - 0.1).abs() < 1e-15);
        // -0.01 / (sqrt(0.1) + 1e-8)
        assert!((p[0] + 0.031_622_775_6).abs() < 1e-9, "{}", p[0]);
    }

    #[test]
    fn zero_gradient_only_decays_state() {
        let mut s = RmsPropState::new(cfg(), 2);
        s.v = vec![0.5, 2.0];
        let (p, s2) = rmsprop_step(&s, &[1.0, -3.0], &[0.0, 0.0]).unwrap();
        assert_eq!(p, vec![1.0, -3.0]);
        assert!((s2.v[0] - 0.45).abs() < 1e-15 && (s2.v[1] - 1.8).abs() < 1e-15);
    }

    #[test]
    fn two_steps_match_hand_recurrence() {
        let s = RmsPropState::new(cfg(), 1);
        let (p1, s1) = rmsprop_step(&s, &[0.0], &[1.0]).unwrap();
        let (p2, s2) = rmsprop_step(&s1, &p1, &[1.0]).unwrap();
        let v1 = 0.1_f64;
        let v2 = 0.9 * v1 + 0.1;
        let expect = -0.01 / (v1.sqrt() + 1e-8) - 0.01 / (v2.sqrt() + 1e-8);
        assert!((s2.v[0] - v2).abs() < 1e-12);
        assert!((p2[0] - expect).abs() < 1e-12);
    }

    #[test]
    fn length_mismatch_is_contract_error() {
        let s = RmsPropState::new(cfg(), 2);
        assert!(matches!(
            rmsprop_step(&s, &[0.0], &[1.0]),
            Err(Error::Contract(_))
        ));
    }

    proptest! {
        #[test]
        fn step_is_pure_and_state_nonnegative(
            p in prop::collection::vec(-10.0f64..10.0, 1..8),
            seed in 0u64..1000,
        ) {
            let g: Vec<f64> = p.iter().enumerate().map(|(i, x)| (x * 1.3 + i as f64 + seed as f64 * 1e-3).sin()).collect();
            let s = RmsPropState::new(cfg(), p.len());
            let a = rmsprop_step(&s, &p, &g).unwrap();
            let b = rmsprop_step(&s, &p, &g).unwrap();
            prop_assert_eq!(&a, &b);
            prop_assert!(a.1.v.iter().all(|v| *v >= 0.0));
        }
    }
}
