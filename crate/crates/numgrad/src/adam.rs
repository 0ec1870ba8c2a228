use crate::{NumError, Tensor};

/// Adam with bias correction and a per-epoch exponential learning-rate decay.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub first_moment: Vec<Tensor>,
    pub second_moment: Vec<Tensor>,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub decay_rate: f64,
}

impl AdamState {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            step: 0,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            decay_rate: 1.0,
        }
    }

    pub fn with_decay(mut self, decay_rate: f64) -> Self {
        self.decay_rate = decay_rate;
        self
    }

    /// `learning_rate * decay_rate^epoch`.
    pub fn effective_lr(&self, epoch: u32) -> f64 {
        self.learning_rate * self.decay_rate.powi(epoch as i32)
    }

    /// Applies one bias-corrected update to `params` in place.
    ///
    /// Moment buffers are created on the first call and must match the
    /// parameter shapes on every later call.
    pub fn step(
        &mut self,
        params: &mut [&mut Tensor],
        grads: &[Tensor],
        epoch: u32,
    ) -> Result<(), NumError> {
        if params.len() != grads.len() {
            return Err(NumError::ParamCount {
                params: params.len(),
                grads: grads.len(),
            });
        }
        if self.first_moment.is_empty() {
            self.first_moment = params.iter().map(|p| Tensor::zeros(p.rows(), p.cols())).collect();
            self.second_moment = self.first_moment.clone();
        }
        if self.first_moment.len() != params.len() {
            return Err(NumError::ParamCount {
                params: params.len(),
                grads: self.first_moment.len(),
            });
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.first_moment) {
            if p.shape() != g.shape() || p.shape() != m.shape() {
                return Err(NumError::ShapeMismatch {
                    op: "adam_step",
                    left: p.shape(),
                    right: g.shape(),
                });
            }
        }

        self.step += 1;
        let lr = self.effective_lr(epoch);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.epsilon);
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        for (k, p) in params.iter_mut().enumerate() {
            let g = grads[k].data();
            let m = self.first_moment[k].data_mut();
            for (mi, gi) in m.iter_mut().zip(g) {
                *mi = b1 * *mi + (1.0 - b1) * gi;
            }
            let v = self.second_moment[k].data_mut();
            for (vi, gi) in v.iter_mut().zip(g) {
                *vi = b2 * *vi + (1.0 - b2) * gi * gi;
            }
            let m = self.first_moment[k].data();
            let v = self.second_moment[k].data();
            for ((w, mi), vi) in p.data_mut().iter_mut().zip(m).zip(v) {
                let m_hat = mi / c1;
                let v_hat = vi / c2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
