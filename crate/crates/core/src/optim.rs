use serde::{Deserialize, Serialize};

use crate::autograd::Mat;
use crate::encoder::round_f32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// SGD or Adam over a fixed list of tensors, restricted to the slots where
/// `trainable` is set. Parameters are rounded to f32 precision after each
/// update so checkpoints hold them exactly.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    trainable: Vec<bool>,
    m: Vec<Option<Mat>>,
    v: Vec<Option<Mat>>,
    t: i32,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, trainable: Vec<bool>) -> Self {
        let n = trainable.len();
        Optimizer {
            kind,
            lr,
            trainable,
            m: vec![None; n],
            v: vec![None; n],
            t: 0,
        }
    }

    pub fn trainable(&self) -> &[bool] {
        &self.trainable
    }

    pub fn step(&mut self, params: Vec<&mut Mat>, grads: &[Mat]) {
        assert_eq!(params.len(), self.trainable.len());
        self.t += 1;
        let bc1 = 1.0 - BETA1.powi(self.t);
        let bc2 = 1.0 - BETA2.powi(self.t);
        for (i, p) in params.into_iter().enumerate() {
            if !self.trainable[i] {
                continue;
            }
            let g = &grads[i];
            match self.kind {
                OptimizerKind::Sgd => p.scaled_add(-self.lr, g),
                OptimizerKind::Adam => {
                    let m = self.m[i].get_or_insert_with(|| Mat::zeros(g.raw_dim()));
                    let v = self.v[i].get_or_insert_with(|| Mat::zeros(g.raw_dim()));
                    let lr = self.lr;
                    ndarray::Zip::from(&mut **p)
                        .and(&mut *m)
                        .and(&mut *v)
                        .and(g)
                        .for_each(|p, m, v, &g| {
                            *m = BETA1 * *m + (1.0 - BETA1) * g;
                            *v = BETA2 * *v + (1.0 - BETA2) * g * g;
                            *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + EPS);
                        });
                }
            }
            round_f32(p);
        }
    }
}
