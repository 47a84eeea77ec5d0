use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam with bias-corrected moments.
#[derive(Clone, Debug)]
pub struct Adam {
    pub cfg: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u32,
}

impl Adam {
    pub fn new(cfg: AdamConfig, n_params: usize) -> Self {
        Adam { cfg, m: vec![0.0; n_params], v: vec![0.0; n_params], t: 0 }
    }

    pub fn steps(&self) -> u32 {
        self.t
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), grads.len());
        assert_eq!(params.len(), self.m.len());
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.cfg;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        if lr == 0.0 {
            // Still advance the moments so a later lr change resumes cleanly.
            for i in 0..params.len() {
                self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * grads[i];
                self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * grads[i] * grads[i];
            }
            return;
        }
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
}

/// Rescales `grads` so their global L2 norm is at most `max_norm`; returns
/// the norm before clipping.
pub fn clip_grad_norm(grads: &mut [f64], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        grads.iter_mut().for_each(|g| *g *= s);
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![0.5, -1.0, 3.0];
        let mut opt = Adam::new(AdamConfig::default(), 3);
        opt.step(&mut p, &[0.0; 3]);
        assert_eq!(p, vec![0.5, -1.0, 3.0]);
    }

    #[test]
    fn first_step_is_lr_times_sign() {
        let cfg = AdamConfig { lr: 1e-3, ..AdamConfig::default() };
        let g = [2.5, -0.01, 40.0, -7.0];
        let mut p = vec![0.0; 4];
        Adam::new(cfg, 4).step(&mut p, &g);
        for (pi, gi) in p.iter().zip(g) {
            // m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps).
            let expect = -cfg.lr * gi / (gi.abs() + cfg.eps);
            assert!((pi - expect).abs() < 1e-15);
            assert!((pi + cfg.lr * gi.signum()).abs() < 1e-8);
        }
    }

    #[test]
    fn quadratic_loss_decreases_monotonically() {
        // f(x) = (x - 3)^2 from x = 0.
        let mut x = vec![0.0];
        let mut opt = Adam::new(AdamConfig { lr: 0.01, ..AdamConfig::default() }, 1);
        let mut prev = f64::INFINITY;
        for _ in 0..200 {
            let loss = (x[0] - 3.0f64).powi(2);
            assert!(loss < prev);
            prev = loss;
            let g = [2.0 * (x[0] - 3.0)];
            opt.step(&mut x, &g);
        }
        assert!(prev < 9.0 * 0.5);
    }

    #[test]
    fn zero_lr_is_identity() {
        let mut p = vec![0.1, 0.2];
        let mut opt = Adam::new(AdamConfig { lr: 0.0, ..AdamConfig::default() }, 2);
        for _ in 0..5 {
            opt.step(&mut p, &[1.0, -2.0]);
        }
        assert_eq!(p, vec![0.1, 0.2]);
    }

    #[test]
    fn clipping_bounds_norm() {
        let mut g = vec![3.0, 4.0];
        assert_eq!(clip_grad_norm(&mut g, 1.0), 5.0);
        assert!((g[0] - 0.6).abs() < 1e-15 && (g[1] - 0.8).abs() < 1e-15);
        let mut small = vec![0.1];
        clip_grad_norm(&mut small, 1.0);
        assert_eq!(small, vec![0.1]);
    }
}
