//! Adam with optional coupled weight decay.

use crate::dense::DenseMatrix;
use crate::scalar::{num, Scalar};

#[derive(Clone, Debug)]
pub struct AdamConfig {
    pub lr: f64,
    /// Coupled decay: added to the gradient as `wd * theta` before the
    /// moment updates.
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, weight_decay: 0.0, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

pub struct Adam<T: Scalar> {
    cfg: AdamConfig,
    t: u64,
    m: Vec<DenseMatrix<T>>,
    v: Vec<DenseMatrix<T>>,
}

impl<T: Scalar> Adam<T> {
    /// Moment buffers are allocated to match `shapes`, which must equal the
    /// parameter walk order used at step time.
    pub fn new(cfg: AdamConfig, shapes: &[(usize, usize)]) -> Self {
        let m = shapes.iter().map(|&(r, c)| DenseMatrix::zeros(r, c)).collect::<Vec<_>>();
        let v = shapes.iter().map(|&(r, c)| DenseMatrix::zeros(r, c)).collect();
        Self { cfg, t: 0, m, v }
    }

    /// One update. `grads[i]` pairs with `params[i]`; a `None` gradient
    /// skips that parameter entirely (no decay, no moment update). The step
    /// counter is global, so bias correction assumes parameters are either
    /// always or never updated.
    pub fn step(&mut self, params: Vec<&mut DenseMatrix<T>>, grads: &[Option<DenseMatrix<T>>]) {
        assert_eq!(params.len(), self.m.len(), "parameter walk changed size");
        assert_eq!(params.len(), grads.len());
        self.t += 1;
        let bc1 = num::<T>(1.0 - self.cfg.beta1.powi(self.t as i32));
        let bc2 = num::<T>(1.0 - self.cfg.beta2.powi(self.t as i32));
        let (b1, b2) = (num::<T>(self.cfg.beta1), num::<T>(self.cfg.beta2));
        let one = T::one();
        let lr = num::<T>(self.cfg.lr);
        let wd = num::<T>(self.cfg.weight_decay);
        let eps = num::<T>(self.cfg.eps);

        for ((theta, grad), (m, v)) in
            params.into_iter().zip(grads).zip(self.m.iter_mut().zip(&mut self.v))
        {
            let Some(g) = grad else { continue };
            assert_eq!(theta.shape(), g.shape(), "gradient shape mismatch");
            let ts = theta.as_mut_slice();
            let (ms, vs) = (m.as_mut_slice(), v.as_mut_slice());
            for i in 0..ts.len() {
                let gi = g.as_slice()[i] + wd * ts[i];
                ms[i] = b1 * ms[i] + (one - b1) * gi;
                vs[i] = b2 * vs[i] + (one - b2) * gi * gi;
                let m_hat = ms[i] / bc1;
                let v_hat = vs[i] / bc2;
                ts[i] = ts[i] - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }
}
