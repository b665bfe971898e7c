//! Adam with bias correction, keyed by parameter name so moment slots
//! survive across steps while graphs are rebuilt every pass.

use indexmap::IndexMap;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Optimizer state. One step covers all tensors updated with the same
/// timestep; call [`Adam::begin_step`] once per batch.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    slots: IndexMap<String, Moments>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            step: 0,
            slots: IndexMap::new(),
        }
    }

    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    /// Current learning rate; callers may scale it per step for schedules.
    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Apply one Adam update to a named tensor in place. A non-finite
    /// gradient aborts without touching parameters or moments.
    pub fn update(&mut self, name: &str, params: &mut [f64], grad: &[f64], lr: f64) -> Result<()> {
        if params.len() != grad.len() {
            return Err(Error::shape(format!(
                "adam: gradient length {} does not match parameter length {} for {name}",
                grad.len(),
                params.len()
            )));
        }
        if let Some(idx) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::numeric(format!(
                "adam: non-finite gradient at index {idx} of {name}; step aborted"
            )));
        }
        let AdamConfig { beta1, beta2, eps, .. } = self.config;
        let t = self.step.max(1) as i32;
        let slot = self
            .slots
            .entry(name.to_string())
            .or_insert_with(|| Moments {
                m: vec![0.0; params.len()],
                v: vec![0.0; params.len()],
            });
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for i in 0..params.len() {
            slot.m[i] = beta1 * slot.m[i] + (1.0 - beta1) * grad[i];
            slot.v[i] = beta2 * slot.v[i] + (1.0 - beta2) * grad[i] * grad[i];
            let m_hat = slot.m[i] / bc1;
            let v_hat = slot.v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_grad_fresh_state_leaves_params_unchanged() {
        let mut adam = Adam::new(AdamConfig::default());
        adam.begin_step();
        let mut w = vec![1.5, -0.5];
        adam.update("w", &mut w, &[0.0, 0.0], 0.1).unwrap();
        assert_eq!(w, vec![1.5, -0.5]);
    }

    #[test]
    fn zero_grad_decays_existing_moments() {
        let mut adam = Adam::new(AdamConfig::default());
        adam.begin_step();
        let mut w = vec![0.0];
        adam.update("w", &mut w, &[1.0], 0.1).unwrap();
        let m1 = adam.slots["w"].m[0];
        let v1 = adam.slots["w"].v[0];
        adam.begin_step();
        adam.update("w", &mut w, &[0.0], 0.1).unwrap();
        assert!((adam.slots["w"].m[0] - 0.9 * m1).abs() < 1e-15);
        assert!((adam.slots["w"].v[0] - 0.999 * v1).abs() < 1e-15);
    }

    #[test]
    fn first_step_matches_hand_evaluation() {
        // g = 1: m-hat = v-hat = 1, so the update is exactly -lr/(1 + eps).
        let mut adam = Adam::new(AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        });
        adam.begin_step();
        let mut w = vec![0.0];
        adam.update("w", &mut w, &[1.0], 0.1).unwrap();
        assert!((w[0] + 0.1).abs() < 1e-8, "step was {}", w[0]);
    }

    #[test]
    fn converges_on_quadratic() {
        // 100 steps on f(w) = (w - 3)^2 from w = 0 with lr = 0.3.
        let mut adam = Adam::new(AdamConfig {
            lr: 0.3,
            ..AdamConfig::default()
        });
        let mut w = vec![0.0];
        for _ in 0..100 {
            adam.begin_step();
            let g = 2.0 * (w[0] - 3.0);
            adam.update("w", &mut w, &[g], 0.3).unwrap();
        }
        assert!((w[0] - 3.0).abs() < 0.1, "w = {}", w[0]);
    }

    #[test]
    fn nan_grad_aborts_without_update() {
        let mut adam = Adam::new(AdamConfig::default());
        adam.begin_step();
        let mut w = vec![1.0];
        let err = adam.update("w", &mut w, &[f64::NAN], 0.1);
        assert!(err.is_err());
        assert_eq!(w, vec![1.0]);
        assert!(adam.slots.get("w").is_none());
    }

    #[test]
    fn deterministic_given_identical_inputs() {
        let run = || {
            let mut adam = Adam::new(AdamConfig::default());
            let mut w = vec![0.2, -0.7, 1.1];
            for s in 0..50 {
                adam.begin_step();
                let g: Vec<f64> = w.iter().map(|x| 2.0 * x + s as f64 * 0.01).collect();
                adam.update("w", &mut w, &g, 1e-2).unwrap();
            }
            w
        };
        let a = run();
        let b = run();
        assert_eq!(a, b);
    }
}
