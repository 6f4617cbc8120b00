//! Adam with decoupled weight decay.

use super::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-6,
            weight_decay: 0.01,
        }
    }
}

/// Per-parameter first/second moment state.
#[derive(Debug, Clone)]
pub struct AdamW {
    config: AdamWConfig,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(config: AdamWConfig, param_lens: &[usize]) -> Self {
        Self {
            config,
            step: 0,
            first: param_lens.iter().map(|&n| vec![0.0; n]).collect(),
            second: param_lens.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update at learning rate `lr`. `decay[i]` selects whether parameter
    /// `i` receives weight decay.
    pub fn step(
        &mut self,
        params: &mut [&mut Tensor],
        grads: &[Vec<f64>],
        decay: &[bool],
        lr: f64,
    ) {
        assert_eq!(params.len(), grads.len());
        self.step += 1;
        let c = self.config;
        let bias1 = 1.0 - c.beta1.powi(self.step as i32);
        let bias2 = 1.0 - c.beta2.powi(self.step as i32);
        for (i, p) in params.iter_mut().enumerate() {
            let g = &grads[i];
            let m = &mut self.first[i];
            let v = &mut self.second[i];
            let wd = if decay[i] { c.weight_decay } else { 0.0 };
            for (j, w) in p.data_mut().iter_mut().enumerate() {
                m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g[j];
                v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g[j] * g[j];
                let mhat = m[j] / bias1;
                let vhat = v[j] / bias2;
                *w -= lr * (mhat / (vhat.sqrt() + c.eps) + wd * *w);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_learning_rate_leaves_weights_untouched() {
        let mut w = Tensor::vector(vec![0.5, -1.25, 3.0]);
        let before = w.clone();
        let mut opt = AdamW::new(AdamWConfig::default(), &[3]);
        opt.step(&mut [&mut w], &[vec![1.0, -2.0, 0.1]], &[true], 0.0);
        assert_eq!(w, before);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut w = Tensor::vector(vec![3.0, -2.0]);
        let mut opt = AdamW::new(
            AdamWConfig {
                weight_decay: 0.0,
                ..Default::default()
            },
            &[2],
        );
        for _ in 0..2000 {
            let g: Vec<f64> = w.data().iter().map(|x| 2.0 * x).collect();
            opt.step(&mut [&mut w], &[g], &[false], 0.01);
        }
        assert!(w.max_abs() < 1e-2, "{:?}", w);
    }
}
