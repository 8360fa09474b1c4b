//! First-order optimizers over flat parameter buffers.

use serde::{Deserialize, Serialize};

/// Which update rule to use. Adam is the default everywhere; plain SGD is
/// kept for debugging because its trajectory is easy to reason about.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OptimKind {
    Sgd,
    #[default]
    Adam,
}

impl std::str::FromStr for OptimKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "sgd" => Ok(Self::Sgd),
            "adam" => Ok(Self::Adam),
            other => Err(format!("unknown optimizer `{other}` (expected sgd or adam)")),
        }
    }
}

/// Adam with the usual constants (beta1 0.9, beta2 0.999, eps 1e-8) and
/// bias-corrected moment estimates.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(lr: f64, len: usize) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: vec![0.0; len], v: vec![0.0; len] }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), self.m.len(), "adam state length");
        assert_eq!(params.len(), grads.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grads[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grads[i] * grads[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Vanilla gradient descent.
#[derive(Debug, Clone)]
pub struct Sgd {
    lr: f64,
}

impl Sgd {
    pub fn new(lr: f64) -> Self {
        Self { lr }
    }

    pub fn step(&self, params: &mut [f64], grads: &[f64]) {
        for (p, g) in params.iter_mut().zip(grads) {
            *p -= self.lr * g;
        }
    }
}

/// One optimizer state bound to one parameter buffer.
#[derive(Debug, Clone)]
pub enum Optimizer {
    Sgd(Sgd),
    Adam(Adam),
}

impl Optimizer {
    pub fn new(kind: OptimKind, lr: f64, len: usize) -> Self {
        match kind {
            OptimKind::Sgd => Self::Sgd(Sgd::new(lr)),
            OptimKind::Adam => Self::Adam(Adam::new(lr, len)),
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        match self {
            Self::Sgd(s) => s.step(params, grads),
            Self::Adam(a) => a.step(params, grads),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn sgd_moves_against_the_gradient() {
        let sgd = Sgd::new(0.1);
        let mut p = vec![1.0, -2.0];
        sgd.step(&mut p, &[0.5, -1.0]);
        assert_eq!(p, vec![0.95, -1.9]);
    }

    #[test]
    fn adam_first_step_has_unit_scale() {
        // With bias correction, step 1 moves by exactly lr * sign(grad)
        // (up to eps) regardless of gradient magnitude.
        let mut adam = Adam::new(0.01, 2);
        let mut p = vec![0.0, 0.0];
        adam.step(&mut p, &[1e3, -1e-3]);
        assert_relative_eq!(p[0], -0.01, epsilon = 1e-6);
        assert_relative_eq!(p[1], 0.01, epsilon = 1e-4);
    }

    #[test]
    fn adam_minimizes_a_quadratic() {
        // f(x) = (x - 3)^2, gradient 2(x - 3).
        let mut adam = Adam::new(0.1, 1);
        let mut x = vec![0.0];
        for _ in 0..500 {
            let g = 2.0 * (x[0] - 3.0);
            adam.step(&mut x, &[g]);
        }
        assert_relative_eq!(x[0], 3.0, epsilon = 1e-3);
    }

    #[test]
    fn kind_parses_case_insensitively() {
        assert_eq!("Adam".parse::<OptimKind>().unwrap(), OptimKind::Adam);
        assert_eq!("SGD".parse::<OptimKind>().unwrap(), OptimKind::Sgd);
        assert!("newton".parse::<OptimKind>().is_err());
    }
}
