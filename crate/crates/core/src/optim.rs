//! First-order optimizers over flat parameter vectors.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    #[default]
    Adam,
}

#[derive(Debug, Clone)]
pub enum Optimizer {
    Sgd {
        lr: f64,
    },
    Adam {
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
        m: Vec<f64>,
        v: Vec<f64>,
        t: i32,
    },
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, n: usize) -> Optimizer {
        match kind {
            OptimizerKind::Sgd => Optimizer::Sgd { lr },
            OptimizerKind::Adam => Optimizer::Adam {
                lr,
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
                m: vec![0.0; n],
                v: vec![0.0; n],
                t: 0,
            },
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        match self {
            Optimizer::Sgd { lr } => {
                for (p, g) in params.iter_mut().zip(grads) {
                    *p -= *lr * g;
                }
            }
            Optimizer::Adam {
                lr,
                beta1,
                beta2,
                eps,
                m,
                v,
                t,
            } => {
                *t += 1;
                let c1 = 1.0 - beta1.powi(*t);
                let c2 = 1.0 - beta2.powi(*t);
                for i in 0..params.len() {
                    let g = grads[i];
                    m[i] = *beta1 * m[i] + (1.0 - *beta1) * g;
                    v[i] = *beta2 * v[i] + (1.0 - *beta2) * g * g;
                    params[i] -= *lr * (m[i] / c1) / ((v[i] / c2).sqrt() + *eps);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_first_step_is_lr_sized() {
        let mut p = vec![1.0, -2.0];
        let mut o = Optimizer::new(OptimizerKind::Adam, 0.1, 2);
        o.step(&mut p, &[3.0, -0.5]);
        assert!((p[0] - 0.9).abs() < 1e-6 && (p[1] + 1.9).abs() < 1e-6);
    }

    #[test]
    fn sgd_minimizes_quadratic() {
        let mut p = vec![4.0];
        let mut o = Optimizer::new(OptimizerKind::Sgd, 0.25, 1);
        for _ in 0..50 {
            let g = [2.0 * p[0]];
            o.step(&mut p, &g);
        }
        assert!(p[0].abs() < 1e-10);
    }
}
