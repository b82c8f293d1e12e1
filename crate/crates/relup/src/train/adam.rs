//! Adam optimizer and the step-halving learning-rate schedule.

use crate::tensor::Tensor;

/// Adam with bias correction. Holds shared handles to the parameters it
/// updates; gradients are cleared after every step.
pub struct Adam {
    params: Vec<Tensor>,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
    step_count: u64,
    pub learning_rate: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    pub fn new(params: Vec<Tensor>, learning_rate: f64) -> Self {
        let first_moment = params.iter().map(|p| vec![0.0; p.numel()]).collect();
        let second_moment = params.iter().map(|p| vec![0.0; p.numel()]).collect();
        Adam {
            params,
            first_moment,
            second_moment,
            step_count: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.learning_rate = lr;
    }

    /// Applies one update from the accumulated gradients, then clears them.
    /// Parameters without a gradient are treated as having a zero gradient.
    pub fn step(&mut self) {
        self.step_count += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step_count as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step_count as i32);
        for (i, p) in self.params.iter().enumerate() {
            let grad = p.grad().unwrap_or_else(|| vec![0.0; p.numel()]);
            let m = &mut self.first_moment[i];
            let v = &mut self.second_moment[i];
            p.with_data_mut(|data| {
                for j in 0..data.len() {
                    m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * grad[j];
                    v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * grad[j] * grad[j];
                    let m_hat = m[j] / bc1;
                    let v_hat = v[j] / bc2;
                    data[j] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.eps);
                }
            });
            p.zero_grad();
        }
    }
}

/// Initial rate halved every 50 epochs: `initial * 0.5^(epoch / 50)`.
pub fn lr_schedule(epoch: usize, initial_lr: f64) -> f64 {
    initial_lr * 0.5f64.powi((epoch / 50) as i32)
}
