use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    iteration: usize,
}

impl Adam {
    /// Moments shaped like `params`; beta1 0.9, beta2 0.999, epsilon 1e-8.
    pub fn new(params: &[&Tensor], learning_rate: f64) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            m: params.iter().map(|p| Tensor::zeros(p.rows(), p.cols())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.rows(), p.cols())).collect(),
            iteration: 0,
        }
    }

    /// Number of steps taken so far.
    pub fn iteration(&self) -> usize {
        self.iteration
    }

    /// One update. Tensors whose `frozen` flag is set keep their values and moments.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor], frozen: &[bool]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() || frozen.len() != self.m.len() {
            return Err(Error::invalid("Adam parameter, gradient and moment counts differ"));
        }
        self.iteration += 1;
        let t = self.iteration as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.learning_rate, self.epsilon);
        for (i, p) in params.iter_mut().enumerate() {
            if frozen[i] {
                continue;
            }
            let g = &grads[i];
            if g.shape() != p.shape() {
                return Err(Error::invalid("gradient shape differs from its parameter"));
            }
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for (((x, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + (1.0 - b1) * gi;
                *vi = b2 * *vi + (1.0 - b2) * gi * gi;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *x -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
