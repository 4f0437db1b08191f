use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LrSchedule {
    Constant(f64),
    /// `lr(s) = start * (end / start)^(s / total)`, held at `end` past `total`.
    Exponential { start: f64, end: f64, total: usize },
}

impl LrSchedule {
    pub fn at(&self, step: usize) -> f64 {
        match *self {
            LrSchedule::Constant(lr) => lr,
            LrSchedule::Exponential { start, end, total } => {
                let frac = if total == 0 {
                    1.0
                } else {
                    (step as f64 / total as f64).min(1.0)
                };
                start * (end / start).powf(frac)
            }
        }
    }
}

/// Adam with bias correction. Each element keeps its own step count, so the
/// parameter buffer may grow between steps (new entries start fresh).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub schedule: LrSchedule,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: Vec<u32>,
}

impl Adam {
    pub fn new(schedule: LrSchedule) -> Self {
        Adam {
            schedule,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: Vec::new(),
            v: Vec::new(),
            t: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// One update at global step `step` (which drives the learning-rate schedule).
    /// Elements whose gradient is exactly zero and that have never been updated
    /// are left untouched.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], step: usize) {
        assert_eq!(params.len(), grads.len());
        if self.m.len() < params.len() {
            self.m.resize(params.len(), 0.0);
            self.v.resize(params.len(), 0.0);
            self.t.resize(params.len(), 0);
        }
        let lr = self.schedule.at(step);
        let (b1, b2) = (self.beta1, self.beta2);
        for i in 0..params.len() {
            let g = grads[i];
            if g == 0.0 && self.t[i] == 0 {
                continue;
            }
            self.t[i] += 1;
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g;
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g;
            let t = self.t[i] as i32;
            let mhat = self.m[i] / (1.0 - b1.powi(t));
            let vhat = self.v[i] / (1.0 - b2.powi(t));
            params[i] -= lr * mhat / (vhat.sqrt() + self.eps);
        }
    }

    /// Forget moment history for one element (used when a slot is reassigned).
    pub fn reset(&mut self, index: usize) {
        if index < self.m.len() {
            self.m[index] = 0.0;
            self.v[index] = 0.0;
            self.t[index] = 0;
        }
    }
}
