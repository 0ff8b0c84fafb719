use crate::real::Real;
use crate::tensor::ParamSet;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    Applied,
    /// Gradients contained NaN or infinity; nothing was changed.
    SkippedNonFinite,
}

/// Bias-corrected Adam. Moments have the same structure as the parameters.
#[derive(Debug, Clone)]
pub struct AdamState<P> {
    pub config: AdamConfig,
    pub step: u64,
    pub m: P,
    pub v: P,
}

impl<P> AdamState<P> {
    pub fn new<T: Real>(config: AdamConfig, params: &P) -> Self
    where
        P: ParamSet<T>,
    {
        Self {
            config,
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    pub fn update<T: Real>(&mut self, params: &mut P, grads: &P) -> StepOutcome
    where
        P: ParamSet<T>,
    {
        if !grads.all_finite() {
            return StepOutcome::SkippedNonFinite;
        }
        self.step += 1;
        let c = self.config;
        let b1 = T::of(c.beta1);
        let b2 = T::of(c.beta2);
        let one = T::one();
        let bc1 = T::of(1.0 - c.beta1.powi(self.step.min(i32::MAX as u64) as i32));
        let bc2 = T::of(1.0 - c.beta2.powi(self.step.min(i32::MAX as u64) as i32));
        let lr = T::of(c.learning_rate);
        let eps = T::of(c.epsilon);

        let g_list = grads.named_tensors();
        let ms = self.m.tensors_mut();
        let vs = self.v.tensors_mut();
        let ps = params.tensors_mut();
        for (((p, m), v), (_, g)) in ps.into_iter().zip(ms).zip(vs).zip(g_list) {
            for (((pv, mv), vv), &gv) in p
                .data_mut()
                .iter_mut()
                .zip(m.data_mut())
                .zip(v.data_mut())
                .zip(g.data())
            {
                *mv = b1 * *mv + (one - b1) * gv;
                *vv = b2 * *vv + (one - b2) * gv * gv;
                let mhat = *mv / bc1;
                let vhat = *vv / bc2;
                *pv -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        StepOutcome::Applied
    }
}
