use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape, Result};
use crate::nn::{Gradients, MlpModel};

/// Optimizer choice and hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizerConfig {
    Sgd {
        lr: f64,
    },
    Adam {
        lr: f64,
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_eps")]
        eps: f64,
    },
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl OptimizerConfig {
    pub fn adam(lr: f64) -> Self {
        OptimizerConfig::Adam {
            lr,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }

    pub fn lr(&self) -> f64 {
        match *self {
            OptimizerConfig::Sgd { lr } | OptimizerConfig::Adam { lr, .. } => lr,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let lr = self.lr();
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(invalid(format!("learning rate must be positive, got {lr}")));
        }
        if let OptimizerConfig::Adam { beta1, beta2, eps, .. } = *self {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || eps <= 0.0 {
                return Err(invalid("adam needs beta1, beta2 in [0, 1) and eps > 0"));
            }
        }
        Ok(())
    }
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig::adam(1e-4)
    }
}

/// Mutable optimizer state. Moment buffers exist only for Adam and are
/// flat, in the model's parameter order.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    config: OptimizerConfig,
    first_moment: Option<Vec<f64>>,
    second_moment: Option<Vec<f64>>,
    timestep: u64,
}

impl OptimizerState {
    pub fn new(config: OptimizerConfig, model: &MlpModel) -> Result<Self> {
        config.validate()?;
        let n = model.param_count();
        let (m, v) = match config {
            OptimizerConfig::Sgd { .. } => (None, None),
            OptimizerConfig::Adam { .. } => (Some(vec![0.0; n]), Some(vec![0.0; n])),
        };
        Ok(Self {
            config,
            first_moment: m,
            second_moment: v,
            timestep: 0,
        })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn timestep(&self) -> u64 {
        self.timestep
    }
}

/// Applies one update in place: plain gradient descent for SGD, the
/// bias-corrected moment update for Adam.
pub fn optimizer_step(
    model: &mut MlpModel,
    grads: &Gradients,
    state: &mut OptimizerState,
) -> Result<()> {
    if !model.same_shape(grads) {
        return Err(shape("gradients are not shaped like the model"));
    }
    if let Some(m) = &state.first_moment {
        if m.len() != model.param_count() {
            return Err(shape("optimizer state belongs to a different model"));
        }
    }
    state.timestep += 1;
    match state.config {
        OptimizerConfig::Sgd { lr } => {
            for (p, g) in model.params_mut().zip(grads.values()) {
                *p -= lr * g;
            }
        }
        OptimizerConfig::Adam { lr, beta1, beta2, eps } => {
            let m = state.first_moment.as_mut().expect("adam state");
            let v = state.second_moment.as_mut().expect("adam state");
            let t = state.timestep as i32;
            let c1 = 1.0 - beta1.powi(t);
            let c2 = 1.0 - beta2.powi(t);
            for (((p, g), m), v) in model
                .params_mut()
                .zip(grads.values())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Matrix;
    use crate::nn::Layer;

    fn scalar_model(theta: f64) -> MlpModel {
        let w = Matrix::new(1, 1, vec![theta]).unwrap();
        MlpModel::from_layers(vec![Layer::new(w, vec![0.0]).unwrap()]).unwrap()
    }

    fn scalar_grad(g: f64) -> Gradients {
        Gradients {
            layers: vec![Layer::new(Matrix::new(1, 1, vec![g]).unwrap(), vec![0.0]).unwrap()],
        }
    }

    #[test]
    fn sgd_substitution() {
        let mut model = scalar_model(1.0);
        let mut st = OptimizerState::new(OptimizerConfig::Sgd { lr: 0.1 }, &model).unwrap();
        optimizer_step(&mut model, &scalar_grad(2.0), &mut st).unwrap();
        assert!((model.layers()[0].weight.get(0, 0) - 0.8).abs() < 1e-15);
        assert_eq!(st.timestep(), 1);
    }

    #[test]
    fn sgd_zero_gradient_is_noop() {
        let mut model = scalar_model(1.25);
        let before = model.clone();
        let mut st = OptimizerState::new(OptimizerConfig::Sgd { lr: 0.5 }, &model).unwrap();
        optimizer_step(&mut model, &scalar_grad(0.0), &mut st).unwrap();
        assert_eq!(model, before);
    }

    #[test]
    fn adam_first_step_is_lr_sized() {
        for g in [1e-3, 1.0, 250.0] {
            let mut model = scalar_model(0.0);
            let mut st = OptimizerState::new(OptimizerConfig::adam(0.01), &model).unwrap();
            optimizer_step(&mut model, &scalar_grad(g), &mut st).unwrap();
            let step = -model.layers()[0].weight.get(0, 0);
            let expected = 0.01 * g / (g.abs() + 1e-8);
            assert!((step - expected).abs() < 1e-12, "g={g}: step {step}");
        }
    }

    #[test]
    fn rejects_mismatched_gradients() {
        let mut model = scalar_model(0.0);
        let mut st = OptimizerState::new(OptimizerConfig::adam(0.01), &model).unwrap();
        let bad = Gradients {
            layers: vec![Layer::new(Matrix::zeros(1, 2), vec![0.0]).unwrap()],
        };
        assert!(optimizer_step(&mut model, &bad, &mut st).is_err());
    }

    #[test]
    fn config_roundtrips_through_json() {
        let cfg: OptimizerConfig = serde_json::from_str(r#"{"kind":"adam","lr":0.001}"#).unwrap();
        assert_eq!(cfg, OptimizerConfig::adam(0.001));
        assert!(serde_json::from_str::<OptimizerConfig>(r#"{"kind":"sgd","lr":0.1,"x":1}"#).is_err());
    }
}
