//! Adam optimizer and a reduce-on-plateau learning-rate schedule with early
//! stopping.

use serde::{Deserialize, Serialize};

use super::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates for a flat list of parameter tensors.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One bias-corrected update. `params` and `grads` must list tensors of
    /// matching shapes in the same order on every call.
    pub fn step<'a, T: Real + 'a>(
        &mut self,
        params: impl IntoIterator<Item = &'a mut Tensor<T>>,
        grads: impl IntoIterator<Item = &'a Tensor<T>>,
        lr: f64,
    ) {
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for (k, (p, g)) in params.into_iter().zip(grads).enumerate() {
            debug_assert_eq!(p.shape, g.shape);
            if self.m.len() <= k {
                self.m.push(vec![0.0; p.len()]);
                self.v.push(vec![0.0; p.len()]);
            }
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for (((w, gi), mi), vi) in p.data.iter_mut().zip(&g.data).zip(m.iter_mut()).zip(v.iter_mut()) {
                let gi = gi.as_f64();
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let update = lr * (*mi / c1) / ((*vi / c2).sqrt() + eps);
                *w = T::from_f64_lossy(w.as_f64() - update);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlateauConfig {
    /// Epochs without improvement before the learning rate is multiplied by `factor`.
    pub patience: usize,
    pub factor: f64,
    /// Epochs without improvement before training stops.
    pub stop_patience: usize,
}

impl Default for PlateauConfig {
    fn default() -> Self {
        PlateauConfig {
            patience: 10,
            factor: 0.5,
            stop_patience: 30,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlateauAction {
    Continue,
    Improved,
    Reduced,
    Stop,
}

/// Tracks the validation loss. An epoch improves when its loss is strictly
/// below the best seen so far.
#[derive(Debug, Clone)]
pub struct PlateauScheduler {
    pub config: PlateauConfig,
    lr: f64,
    best: f64,
    since_best: usize,
    since_reduce: usize,
}

impl PlateauScheduler {
    pub fn new(lr: f64, config: PlateauConfig) -> Self {
        PlateauScheduler {
            config,
            lr,
            best: f64::INFINITY,
            since_best: 0,
            since_reduce: 0,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn observe(&mut self, val_loss: f64) -> PlateauAction {
        if val_loss < self.best {
            self.best = val_loss;
            self.since_best = 0;
            self.since_reduce = 0;
            return PlateauAction::Improved;
        }
        self.since_best += 1;
        self.since_reduce += 1;
        if self.since_best >= self.config.stop_patience {
            return PlateauAction::Stop;
        }
        if self.since_reduce >= self.config.patience {
            self.since_reduce = 0;
            self.lr *= self.config.factor;
            return PlateauAction::Reduced;
        }
        PlateauAction::Continue
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_adam_step_moves_by_lr() {
        let mut p = vec![Tensor::from_vec(&[1], vec![0.5f64])];
        let g = vec![Tensor::from_vec(&[1], vec![1.0f64])];
        let mut adam = Adam::new(AdamConfig::default());
        adam.step(p.iter_mut(), g.iter(), 3e-4);
        assert!((p[0].data[0] - (0.5 - 3e-4)).abs() < 1e-10);
    }

    #[test]
    fn flat_loss_halves_at_ten_and_stops_at_thirty() {
        let mut s = PlateauScheduler::new(1e-3, PlateauConfig::default());
        let mut events = Vec::new();
        for epoch in 0..100 {
            match s.observe(1.0) {
                PlateauAction::Reduced => events.push((epoch, "reduce")),
                PlateauAction::Stop => {
                    events.push((epoch, "stop"));
                    break;
                }
                _ => {}
            }
        }
        assert_eq!(events, vec![(10, "reduce"), (20, "reduce"), (30, "stop")]);
        assert!((s.lr() - 2.5e-4).abs() < 1e-15);
    }

    #[test]
    fn improvement_resets_counters() {
        let mut s = PlateauScheduler::new(1.0, PlateauConfig::default());
        s.observe(1.0);
        for _ in 0..9 {
            assert_eq!(s.observe(1.0), PlateauAction::Continue);
        }
        assert_eq!(s.observe(0.5), PlateauAction::Improved);
        for _ in 0..9 {
            assert_eq!(s.observe(0.5), PlateauAction::Continue);
        }
        assert_eq!(s.observe(0.5), PlateauAction::Reduced);
    }
}
