use serde::{Deserialize, Serialize};

use super::ModelParams;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSettings {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub weight_decay: f64,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        OptimizerSettings {
            kind: OptimizerKind::Adam,
            lr: 1e-3,
            weight_decay: 1e-4,
        }
    }
}

impl OptimizerSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::param(format!("learning rate must be positive, got {}", self.lr)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::param(format!(
                "weight decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        Ok(())
    }
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

/// SGD with coupled L2 decay, or Adam with decoupled weight decay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerState {
    pub settings: OptimizerSettings,
    pub step: u64,
    pub first_moment: Option<ModelParams>,
    pub second_moment: Option<ModelParams>,
}

impl OptimizerState {
    pub fn new(settings: OptimizerSettings) -> Self {
        OptimizerState {
            settings,
            step: 0,
            first_moment: None,
            second_moment: None,
        }
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &ModelParams) -> Result<()> {
        if !params.same_shape(grads) {
            return Err(Error::param("gradient shapes do not match parameters"));
        }
        let lr = self.settings.lr;
        let wd = self.settings.weight_decay;
        self.step += 1;
        match self.settings.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.values_mut().zip(grads.values()) {
                    *p -= lr * (g + wd * *p);
                }
            }
            OptimizerKind::Adam => {
                let m = self.first_moment.get_or_insert_with(|| params.zeros_like());
                let v = self.second_moment.get_or_insert_with(|| params.zeros_like());
                if !m.same_shape(params) || !v.same_shape(params) {
                    return Err(Error::param("moment buffers do not match parameters"));
                }
                let c1 = 1.0 - BETA1.powi(self.step as i32);
                let c2 = 1.0 - BETA2.powi(self.step as i32);
                for (((p, g), mi), vi) in params
                    .values_mut()
                    .zip(grads.values())
                    .zip(m.values_mut())
                    .zip(v.values_mut())
                {
                    *mi = BETA1 * *mi + (1.0 - BETA1) * g;
                    *vi = BETA2 * *vi + (1.0 - BETA2) * g * g;
                    let update = (*mi / c1) / ((*vi / c2).sqrt() + EPS);
                    *p -= lr * (update + wd * *p);
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Activation, Dense};
    use ndarray::{array, Array1};

    fn scalar(v: f64) -> ModelParams {
        ModelParams {
            encoder: vec![Dense {
                weights: array![[v]],
                bias: Array1::zeros(1),
                activation: Activation::Identity,
            }],
            classifier: Dense::zeros(1, 2, Activation::Identity),
        }
    }

    #[test]
    fn sgd_step_on_scalar() {
        let mut p = scalar(1.0);
        let g = scalar(1.0);
        let mut opt = OptimizerState::new(OptimizerSettings {
            kind: OptimizerKind::Sgd,
            lr: 0.1,
            weight_decay: 0.0,
        });
        opt.step(&mut p, &g).unwrap();
        assert!((p.encoder[0].weights[[0, 0]] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_is_scale_free() {
        for scale in [1e-4, 1.0, 1e3] {
            let mut p = scalar(1.0);
            let g = scalar(scale);
            let mut opt = OptimizerState::new(OptimizerSettings {
                kind: OptimizerKind::Adam,
                lr: 1e-3,
                weight_decay: 0.0,
            });
            opt.step(&mut p, &g).unwrap();
            let moved = 1.0 - p.encoder[0].weights[[0, 0]];
            assert!((moved - 1e-3).abs() < 1e-6, "scale {scale}: moved {moved}");
        }
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        for kind in [OptimizerKind::Sgd, OptimizerKind::Adam] {
            let mut p = scalar(0.7);
            let before = p.clone();
            let g = p.zeros_like();
            let mut opt = OptimizerState::new(OptimizerSettings {
                kind,
                lr: 0.5,
                weight_decay: 0.0,
            });
            for _ in 0..3 {
                opt.step(&mut p, &g).unwrap();
            }
            assert_eq!(p, before);
        }
    }

    #[test]
    fn decoupled_decay_shrinks_weights() {
        let mut p = scalar(2.0);
        let g = p.zeros_like();
        let mut opt = OptimizerState::new(OptimizerSettings {
            kind: OptimizerKind::Adam,
            lr: 0.1,
            weight_decay: 0.5,
        });
        opt.step(&mut p, &g).unwrap();
        assert!((p.encoder[0].weights[[0, 0]] - (2.0 - 0.1 * 0.5 * 2.0)).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut p = scalar(1.0);
        let mut g = scalar(1.0);
        g.classifier = Dense::zeros(1, 3, Activation::Identity);
        let mut opt = OptimizerState::new(OptimizerSettings::default());
        assert!(opt.step(&mut p, &g).is_err());
    }
}
