use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use super::params::{GradientSet, ParamSet};
use crate::error::{bail, Result};
use crate::scalar::Scalar;

/// Bias-corrected Adam with optional L2 weight decay folded into the gradient.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    pub weight_decay: T,
    m: Vec<Array2<T>>,
    v: Vec<Array2<T>>,
    t: i32,
}

impl<T: Scalar> Adam<T> {
    pub fn new(params: &ParamSet<T>, lr: T) -> Self {
        let zeros = params.zeros_like();
        Self {
            lr,
            beta1: T::of(0.9),
            beta2: T::of(0.999),
            eps: T::of(1e-8),
            weight_decay: T::zero(),
            m: zeros.tensors().to_vec(),
            v: zeros.tensors().to_vec(),
            t: 0,
        }
    }

    pub fn with_weight_decay(mut self, wd: T) -> Self {
        self.weight_decay = wd;
        self
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    pub fn step(&mut self, params: &mut ParamSet<T>, grads: &GradientSet<T>) -> Result<()> {
        if !params.same_layout(grads) || params.len() != self.m.len() {
            bail!(Shape, "gradient layout does not match the optimizer state");
        }
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let bc1 = T::one() - b1.powi(self.t);
        let bc2 = T::one() - b2.powi(self.t);
        let (lr, eps, wd) = (self.lr, self.eps, self.weight_decay);
        for (((p, g), m), v) in params.tensors_mut().iter_mut().zip(grads.tensors()).zip(&mut self.m).zip(&mut self.v) {
            Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                let g = if wd == T::zero() { g } else { g + wd * *p };
                *m = b1 * *m + (T::one() - b1) * g;
                *v = b2 * *v + (T::one() - b2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScheduleAction {
    Continue,
    DecayLr,
    Stop,
}

/// Reduce-on-plateau learning-rate schedule with a stopping rule: after
/// `patience` epochs without improvement of the validation metric the rate is
/// multiplied by `factor`; training stops once the rate has shrunk to
/// `initial / stop_factor` or below.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlateauSchedule {
    pub initial_lr: f64,
    pub lr: f64,
    pub patience: usize,
    pub factor: f64,
    pub stop_factor: f64,
    best: Option<f64>,
    bad_epochs: usize,
    decays: usize,
}

impl PlateauSchedule {
    pub fn new(initial_lr: f64, patience: usize, stop_factor: f64) -> Self {
        Self { initial_lr, lr: initial_lr, patience, factor: 0.1, stop_factor, best: None, bad_epochs: 0, decays: 0 }
    }

    pub fn decays(&self) -> usize {
        self.decays
    }

    /// Whether the last reported metric was a new best.
    pub fn best(&self) -> Option<f64> {
        self.best
    }

    /// Feeds one epoch's validation metric (higher is better).
    pub fn observe(&mut self, metric: f64) -> ScheduleAction {
        if self.best.is_none_or(|b| metric > b) {
            self.best = Some(metric);
            self.bad_epochs = 0;
            return ScheduleAction::Continue;
        }
        self.bad_epochs += 1;
        if self.bad_epochs < self.patience {
            return ScheduleAction::Continue;
        }
        self.bad_epochs = 0;
        self.lr *= self.factor;
        self.decays += 1;
        let floor = self.initial_lr / self.stop_factor;
        if self.lr <= floor * (1.0 + 1e-9) {
            ScheduleAction::Stop
        } else {
            ScheduleAction::DecayLr
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn single(x: f64) -> ParamSet<f64> {
        let mut p = ParamSet::new();
        p.push("w", array![[x]]);
        p
    }

    #[test]
    fn zero_gradient_keeps_parameters() {
        let mut p = single(1.5);
        let mut adam = Adam::new(&p, 0.1);
        adam.step(&mut p, &single(0.0)).unwrap();
        assert_eq!(p.tensors()[0][[0, 0]], 1.5);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = single(0.0);
        let mut adam = Adam::new(&p, 0.1);
        adam.step(&mut p, &single(1.0)).unwrap();
        // m_hat = v_hat = 1, update = -0.1 / (1 + 1e-8)
        assert_abs_diff_eq!(p.tensors()[0][[0, 0]], -0.1, epsilon = 1e-8);
    }

    #[test]
    fn identical_tensors_get_identical_updates() {
        let mut p = ParamSet::new();
        p.push("a", array![[0.3, -1.0]]);
        p.push("b", array![[0.3, -1.0]]);
        let mut g = ParamSet::new();
        g.push("a", array![[0.5, 2.0]]);
        g.push("b", array![[0.5, 2.0]]);
        let mut adam = Adam::new(&p, 0.01);
        for _ in 0..5 {
            adam.step(&mut p, &g).unwrap();
        }
        assert_eq!(p.tensors()[0], p.tensors()[1]);
    }

    #[test]
    fn improving_metric_never_decays() {
        let mut s = PlateauSchedule::new(0.01, 20, 1000.0);
        for e in 0..500 {
            assert_eq!(s.observe(e as f64), ScheduleAction::Continue);
        }
    }

    #[test]
    fn flat_metric_schedule() {
        // simulated by hand: epoch 1 sets the best, 20 stale epochs follow
        let mut s = PlateauSchedule::new(0.01, 20, 1000.0);
        let mut events = vec![];
        for epoch in 1..=100 {
            match s.observe(0.5) {
                ScheduleAction::Continue => {}
                a => events.push((epoch, a)),
            }
            if matches!(events.last(), Some((_, ScheduleAction::Stop))) {
                break;
            }
        }
        assert_eq!(
            events,
            vec![(21, ScheduleAction::DecayLr), (41, ScheduleAction::DecayLr), (61, ScheduleAction::Stop)]
        );
    }

    #[test]
    fn stop_factor_bounds_decays() {
        let mut s = PlateauSchedule::new(1e-3, 10, 100.0);
        let mut epochs = 0;
        while s.observe(0.0) != ScheduleAction::Stop {
            epochs += 1;
            assert!(epochs < 1000);
        }
        assert_eq!(s.decays(), 2);
    }
}
