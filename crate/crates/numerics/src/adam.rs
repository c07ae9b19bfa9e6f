//! Adam with bias correction and a linear-warmup / inverse-square-root schedule.

use crate::params::{Gradients, ParamStore};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Steps of linear warmup before inverse-sqrt decay; `0` keeps `lr` constant.
    pub warmup_steps: u64,
    /// Rescale gradients whose global L2 norm exceeds this.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            warmup_steps: 4000,
            clip_norm: None,
        }
    }
}

impl AdamConfig {
    /// Learning rate applied at 1-based step `t`.
    pub fn lr_at(&self, t: u64) -> f64 {
        if self.warmup_steps == 0 || t == 0 {
            return self.lr;
        }
        let t = t as f64;
        let w = self.warmup_steps as f64;
        self.lr * (t / w).min((w / t).sqrt())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum StepOutcome {
    Applied { lr: f64 },
    /// The gradient held NaN/Inf; parameters and moments were left untouched.
    SkippedNonFinite,
}

#[derive(Clone, Debug)]
pub struct AdamState<S> {
    pub config: AdamConfig,
    first_moment: Vec<Vec<S>>,
    second_moment: Vec<Vec<S>>,
    step: u64,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(store: &ParamStore<S>, config: AdamConfig) -> Self {
        let zeros = || -> Vec<Vec<S>> {
            store
                .iter()
                .map(|(_, p)| vec![S::zero(); p.tensor.len()])
                .collect()
        };
        Self {
            config,
            first_moment: zeros(),
            second_moment: zeros(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self) -> &[Vec<S>] {
        &self.first_moment
    }

    pub fn second_moment(&self) -> &[Vec<S>] {
        &self.second_moment
    }

    pub fn step(&mut self, store: &mut ParamStore<S>, grads: &Gradients<S>) -> StepOutcome {
        if !grads.is_finite() {
            return StepOutcome::SkippedNonFinite;
        }
        let clip = match self.config.clip_norm {
            Some(max) => {
                let norm = grads.global_norm();
                if norm > max {
                    max / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        self.step += 1;
        let t = self.step as i32;
        let c = &self.config;
        let lr = c.lr_at(self.step);
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let (b1, b2) = (S::from_f64(c.beta1), S::from_f64(c.beta2));
        let (one_b1, one_b2) = (S::from_f64(1.0 - c.beta1), S::from_f64(1.0 - c.beta2));
        let step_size = S::from_f64(lr / bc1);
        let inv_bc2_sqrt = S::from_f64(1.0 / bc2.sqrt());
        let eps = S::from_f64(c.eps);
        let clip = S::from_f64(clip);

        let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
        for id in ids {
            let i = id.0;
            let g = grads.get(id);
            let m = &mut self.first_moment[i];
            let v = &mut self.second_moment[i];
            let w = store.get_mut(id).data_mut();
            for (((wj, mj), vj), &gj) in w.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(g) {
                let gj = gj * clip;
                *mj = b1 * *mj + one_b1 * gj;
                *vj = b2 * *vj + one_b2 * gj * gj;
                *wj -= step_size * *mj / (vj.sqrt() * inv_bc2_sqrt + eps);
            }
        }
        StepOutcome::Applied { lr }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamId;
    use crate::tensor::Tensor;

    #[test]
    fn schedule_warms_up_linearly_then_decays() {
        let c = AdamConfig {
            lr: 1e-3,
            warmup_steps: 100,
            ..Default::default()
        };
        assert!((c.lr_at(50) - 5e-4).abs() < 1e-12);
        assert!((c.lr_at(100) - 1e-3).abs() < 1e-12);
        assert!((c.lr_at(400) - 5e-4).abs() < 1e-12);
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut store = ParamStore::new();
        store.add("w", Tensor::matrix(1, 3, vec![1.0f64, -2.0, 0.5]).unwrap());
        let before = store.get(ParamId(0)).clone();
        let mut st = AdamState::new(&store, AdamConfig::default());
        let grads = Gradients::zeros_like(&store);
        assert!(matches!(st.step(&mut store, &grads), StepOutcome::Applied { .. }));
        assert_eq!(store.get(ParamId(0)), &before);
        assert_eq!(st.step_count(), 1);
    }

    #[test]
    fn non_finite_gradient_skips_the_step() {
        let mut store = ParamStore::new();
        store.add("w", Tensor::scalar(1.0f64));
        let mut st = AdamState::new(&store, AdamConfig::default());
        let mut grads = Gradients::zeros_like(&store);
        grads.get_mut(ParamId(0))[0] = f64::NAN;
        assert_eq!(st.step(&mut store, &grads), StepOutcome::SkippedNonFinite);
        assert_eq!(store.get(ParamId(0)).data(), &[1.0]);
        assert_eq!(st.step_count(), 0);
    }
}
