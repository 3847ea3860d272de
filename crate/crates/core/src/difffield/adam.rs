use serde::{Deserialize, Serialize};

use super::Params;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Learning rate halves every this many steps.
    pub decay_every: usize,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, decay_every: 20_000 }
    }
}

/// Adaptive-moment optimizer state for one parameter set.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new<P: Params + ?Sized>(params: &P, config: AdamConfig) -> Self {
        let n = params.param_count();
        Self { config, step: 0, m: vec![0.0; n], v: vec![0.0; n] }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn current_lr(&self) -> f64 {
        let halvings = if self.config.decay_every == 0 { 0 } else { self.step / self.config.decay_every as u64 };
        self.config.lr * 0.5f64.powi(halvings.min(1000) as i32)
    }

    pub fn step<P: Params + ?Sized>(&mut self, params: &mut P) {
        assert_eq!(params.param_count(), self.m.len(), "optimizer/parameter mismatch");
        let lr = self.current_lr();
        self.step += 1;
        let AdamConfig { beta1, beta2, eps, .. } = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        let (m, v) = (&mut self.m, &mut self.v);
        let mut offset = 0;
        params.visit_params(&mut |p, g| {
            for i in 0..p.len() {
                let k = offset + i;
                m[k] = beta1 * m[k] + (1.0 - beta1) * g[i];
                v[k] = beta2 * v[k] + (1.0 - beta2) * g[i] * g[i];
                let mhat = m[k] / bc1;
                let vhat = v[k] / bc2;
                p[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
            offset += p.len();
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Scalar {
        w: [f64; 1],
        g: [f64; 1],
    }

    impl Params for Scalar {
        fn visit_params(&mut self, f: &mut dyn FnMut(&mut [f64], &[f64])) {
            f(&mut self.w, &self.g);
        }
        fn param_count(&self) -> usize {
            1
        }
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = Scalar { w: [1.5], g: [0.0] };
        let mut opt = Adam::new(&p, AdamConfig::default());
        for _ in 0..10 {
            opt.step(&mut p);
        }
        assert_eq!(p.w[0], 1.5);
    }

    #[test]
    fn step_descends() {
        for g in [2.0, -0.3] {
            let mut p = Scalar { w: [0.0], g: [g] };
            let mut opt = Adam::new(&p, AdamConfig::default());
            opt.step(&mut p);
            assert!(p.w[0] * g < 0.0);
        }
    }

    #[test]
    fn converges_on_quadratic() {
        let mut p = Scalar { w: [0.0], g: [0.0] };
        let mut opt = Adam::new(&p, AdamConfig { lr: 0.5, decay_every: 25, ..AdamConfig::default() });
        for _ in 0..100 {
            p.g[0] = 2.0 * (p.w[0] - 3.0);
            opt.step(&mut p);
        }
        assert!((p.w[0] - 3.0).abs() < 1e-2, "{}", p.w[0]);
    }

    #[test]
    fn learning_rate_halves_on_schedule() {
        let mut p = Scalar { w: [0.0], g: [1.0] };
        let mut opt = Adam::new(&p, AdamConfig { decay_every: 3, ..AdamConfig::default() });
        assert_eq!(opt.current_lr(), 1e-3);
        for _ in 0..3 {
            opt.step(&mut p);
        }
        assert_eq!(opt.current_lr(), 5e-4);
        for _ in 0..3 {
            opt.step(&mut p);
        }
        assert_eq!(opt.current_lr(), 2.5e-4);
        assert_eq!(opt.steps(), 6);
    }
}
