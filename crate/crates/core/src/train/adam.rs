//! Adam with standard defaults (beta1 0.9, beta2 0.999, epsilon 1e-8) and
//! bias correction, keyed by parameter name so state survives checkpointing.

use std::collections::BTreeMap;

use crate::model::{NamedArray, ParamSlot, TrainabilityMode};

pub(crate) const BETA1: f64 = 0.9;
pub(crate) const BETA2: f64 = 0.999;
pub(crate) const EPSILON: f64 = 1e-8;

#[derive(Clone, Debug)]
pub(crate) struct Adam {
    /// Parameter set this state was built for; a phase switch replaces the
    /// whole optimizer.
    pub mode: TrainabilityMode,
    pub steps: u64,
    pub moment1: BTreeMap<String, Vec<f64>>,
    pub moment2: BTreeMap<String, Vec<f64>>,
}

impl Adam {
    pub fn new(mode: TrainabilityMode) -> Adam {
        Adam {
            mode,
            steps: 0,
            moment1: BTreeMap::new(),
            moment2: BTreeMap::new(),
        }
    }

    pub fn step(&mut self, slots: &mut [ParamSlot<'_>], learning_rate: f64) {
        self.steps += 1;
        let correction1 = 1.0 - BETA1.powi(self.steps as i32);
        let correction2 = 1.0 - BETA2.powi(self.steps as i32);
        for slot in slots {
            let m = self
                .moment1
                .entry(slot.name.to_string())
                .or_insert_with(|| vec![0.0; slot.value.len()]);
            let v = self
                .moment2
                .entry(slot.name.to_string())
                .or_insert_with(|| vec![0.0; slot.value.len()]);
            for i in 0..slot.value.len() {
                let g = slot.grad[i];
                m[i] = BETA1 * m[i] + (1.0 - BETA1) * g;
                v[i] = BETA2 * v[i] + (1.0 - BETA2) * g * g;
                let m_hat = m[i] / correction1;
                let v_hat = v[i] / correction2;
                slot.value[i] -= learning_rate * m_hat / (v_hat.sqrt() + EPSILON);
            }
        }
    }

    pub fn moment_arrays(&self) -> (Vec<NamedArray>, Vec<NamedArray>) {
        let to_arrays = |map: &BTreeMap<String, Vec<f64>>| {
            map.iter()
                .map(|(name, data)| NamedArray {
                    name: name.clone(),
                    shape: vec![data.len()],
                    data: data.clone(),
                })
                .collect()
        };
        (to_arrays(&self.moment1), to_arrays(&self.moment2))
    }

    pub fn from_arrays(
        mode: TrainabilityMode,
        steps: u64,
        moment1: &[NamedArray],
        moment2: &[NamedArray],
    ) -> Adam {
        let to_map = |arrays: &[NamedArray]| {
            arrays
                .iter()
                .map(|a| (a.name.clone(), a.data.clone()))
                .collect()
        };
        Adam {
            mode,
            steps,
            moment1: to_map(moment1),
            moment2: to_map(moment2),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Drive a single scalar parameter through f(x) = (x - 3)^2.
    fn quadratic_step(adam: &mut Adam, x: &mut f64, lr: f64) {
        let grad = [2.0 * (*x - 3.0)];
        let mut value = [*x];
        let mut slots = vec![ParamSlot::new("x", &mut value, &grad)];
        adam.step(&mut slots, lr);
        *x = value[0];
    }

    #[test]
    fn first_step_has_unit_magnitude_times_lr() {
        let mut adam = Adam::new(TrainabilityMode::All);
        let mut x = 0.0;
        quadratic_step(&mut adam, &mut x, 0.1);
        // After bias correction the first update is lr * g / (|g| + eps).
        assert!((x - 0.1).abs() < 1e-6, "first step was {x}");
    }

    #[test]
    fn converges_on_a_quadratic() {
        let mut adam = Adam::new(TrainabilityMode::All);
        let mut x = 0.0;
        for _ in 0..2000 {
            quadratic_step(&mut adam, &mut x, 0.05);
        }
        assert!((x - 3.0).abs() < 1e-2, "ended at {x}");
    }

    #[test]
    fn state_round_trips_through_arrays() {
        let mut adam = Adam::new(TrainabilityMode::HeadOnly);
        let mut x = 1.0;
        for _ in 0..5 {
            quadratic_step(&mut adam, &mut x, 0.1);
        }
        let (m, v) = adam.moment_arrays();
        let restored = Adam::from_arrays(adam.mode, adam.steps, &m, &v);
        assert_eq!(restored.steps, adam.steps);
        assert_eq!(restored.moment1, adam.moment1);
        assert_eq!(restored.moment2, adam.moment2);

        let mut x_a = x;
        let mut x_b = x;
        let mut adam_b = restored;
        quadratic_step(&mut adam, &mut x_a, 0.1);
        quadratic_step(&mut adam_b, &mut x_b, 0.1);
        assert_eq!(x_a.to_bits(), x_b.to_bits());
    }
}
