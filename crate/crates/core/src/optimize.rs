//! First-order optimizers over flat `f64` parameter buffers.
//!
//! A model hands the optimizer a list of buffers (one per tensor) and a
//! matching list of gradients; the optimizer keeps per-buffer moment
//! estimates in [`OptimizerState`].

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum OptimizeError {
    #[error("shape mismatch in buffer {buffer}: expected {expected}, got {actual}")]
    ShapeMismatch {
        buffer: usize,
        expected: usize,
        actual: usize,
    },
    #[error("non-finite gradient in buffer {buffer} at {index}")]
    NonFiniteGradient { buffer: usize, index: usize },
    #[error("invalid optimizer config: {0}")]
    InvalidConfig(String),
    #[error("unknown optimizer `{0}` (expected sgd, rmsprop or adam)")]
    UnknownKind(String),
}

pub type Result<T> = std::result::Result<T, OptimizeError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    SgdMomentum,
    RmsProp,
    Adam,
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::SgdMomentum => "sgd",
            OptimizerKind::RmsProp => "rmsprop",
            OptimizerKind::Adam => "adam",
        })
    }
}

impl FromStr for OptimizerKind {
    type Err = OptimizeError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sgd" | "sgd_momentum" | "momentum" => Ok(OptimizerKind::SgdMomentum),
            "rmsprop" => Ok(OptimizerKind::RmsProp),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(OptimizeError::UnknownKind(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub momentum: f64,
    pub rho: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Decoupled: applied directly to the parameters, not through the moments.
    pub weight_decay: f64,
}

impl OptimizerConfig {
    pub fn new(kind: OptimizerKind, learning_rate: f64) -> Self {
        Self {
            kind,
            learning_rate,
            momentum: 0.9,
            rho: 0.9,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.0,
        }
    }

    pub fn adam(learning_rate: f64) -> Self {
        Self::new(OptimizerKind::Adam, learning_rate)
    }

    pub fn rmsprop(learning_rate: f64) -> Self {
        Self::new(OptimizerKind::RmsProp, learning_rate)
    }

    pub fn sgd(learning_rate: f64, momentum: f64) -> Self {
        Self {
            momentum,
            ..Self::new(OptimizerKind::SgdMomentum, learning_rate)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..1.0).contains(&v) {
                Ok(())
            } else {
                Err(OptimizeError::InvalidConfig(format!("{name} = {v} not in [0, 1)")))
            }
        };
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(OptimizeError::InvalidConfig(format!(
                "learning_rate = {} must be positive",
                self.learning_rate
            )));
        }
        unit("momentum", self.momentum)?;
        unit("rho", self.rho)?;
        unit("beta1", self.beta1)?;
        unit("beta2", self.beta2)?;
        if !(self.epsilon > 0.0) {
            return Err(OptimizeError::InvalidConfig("epsilon must be positive".into()));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(OptimizeError::InvalidConfig("weight_decay must be >= 0".into()));
        }
        Ok(())
    }
}

/// Per-buffer moment estimates. Buffers are allocated on the first step.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub step_count: u64,
    /// Momentum velocity (SGD) or first moment (Adam).
    pub first_moment: Vec<Vec<f64>>,
    /// Running mean of squared gradients (RMSProp, Adam).
    pub second_moment: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new() -> Self {
        Self::default()
    }

    fn ensure_shapes(&mut self, shapes: &[usize]) -> Result<()> {
        if self.first_moment.is_empty() && self.step_count == 0 {
            self.first_moment = shapes.iter().map(|&n| vec![0.0; n]).collect();
            self.second_moment = shapes.iter().map(|&n| vec![0.0; n]).collect();
            return Ok(());
        }
        if self.first_moment.len() != shapes.len() {
            return Err(OptimizeError::ShapeMismatch {
                buffer: self.first_moment.len().min(shapes.len()),
                expected: self.first_moment.len(),
                actual: shapes.len(),
            });
        }
        for (b, (buf, &n)) in self.first_moment.iter().zip(shapes).enumerate() {
            if buf.len() != n {
                return Err(OptimizeError::ShapeMismatch {
                    buffer: b,
                    expected: buf.len(),
                    actual: n,
                });
            }
        }
        Ok(())
    }
}

/// Applies one update in place to every buffer.
///
/// * SGD with momentum: `v <- mu v + g`, `p <- p - lr v`
/// * RMSProp: `s <- rho s + (1 - rho) g^2`, `p <- p - lr g / sqrt(s + eps)`
/// * Adam: bias-corrected moments, `p <- p - lr m_hat / (sqrt(v_hat) + eps)`
///
/// Validation happens before any buffer is touched, so on error neither the
/// parameters nor the state change.
pub fn step(
    params: &mut [&mut [f64]],
    grads: &[&[f64]],
    state: &mut OptimizerState,
    config: &OptimizerConfig,
) -> Result<()> {
    if params.len() != grads.len() {
        return Err(OptimizeError::ShapeMismatch {
            buffer: params.len().min(grads.len()),
            expected: params.len(),
            actual: grads.len(),
        });
    }
    for (b, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.len() != g.len() {
            return Err(OptimizeError::ShapeMismatch {
                buffer: b,
                expected: p.len(),
                actual: g.len(),
            });
        }
        if let Some(index) = g.iter().position(|v| !v.is_finite()) {
            return Err(OptimizeError::NonFiniteGradient { buffer: b, index });
        }
    }
    let shapes: Vec<usize> = params.iter().map(|p| p.len()).collect();
    state.ensure_shapes(&shapes)?;
    state.step_count += 1;

    let lr = config.learning_rate;
    let t = state.step_count as i32;
    let bias1 = 1.0 - config.beta1.powi(t);
    let bias2 = 1.0 - config.beta2.powi(t);

    for (b, (param, grad)) in params.iter_mut().zip(grads).enumerate() {
        let m = &mut state.first_moment[b];
        let s = &mut state.second_moment[b];
        for i in 0..param.len() {
            let g = grad[i];
            let delta = match config.kind {
                OptimizerKind::SgdMomentum => {
                    m[i] = config.momentum * m[i] + g;
                    -lr * m[i]
                }
                OptimizerKind::RmsProp => {
                    s[i] = config.rho * s[i] + (1.0 - config.rho) * g * g;
                    -lr * g / (s[i] + config.epsilon).sqrt()
                }
                OptimizerKind::Adam => {
                    m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g;
                    s[i] = config.beta2 * s[i] + (1.0 - config.beta2) * g * g;
                    let m_hat = m[i] / bias1;
                    let v_hat = s[i] / bias2;
                    -lr * m_hat / (v_hat.sqrt() + config.epsilon)
                }
            };
            if config.weight_decay > 0.0 {
                param[i] -= lr * config.weight_decay * param[i];
            }
            param[i] += delta;
        }
    }
    Ok(())
}

/// Convenience wrapper for a single flat buffer.
pub fn step_flat(
    params: &mut [f64],
    grads: &[f64],
    state: &mut OptimizerState,
    config: &OptimizerConfig,
) -> Result<()> {
    step(&mut [params], &[grads], state, config)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimized {
    pub params: Vec<f64>,
    /// Loss before the first step followed by the loss after every step.
    pub history: Vec<f64>,
}

/// Runs `steps` optimizer updates on `objective`, which returns the loss and
/// gradient at a point.
pub fn minimize<F>(
    objective: F,
    init: Vec<f64>,
    config: &OptimizerConfig,
    steps: usize,
) -> Result<Minimized>
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    config.validate()?;
    let mut params = init;
    let mut state = OptimizerState::new();
    let (mut loss, mut grad) = objective(&params);
    let mut history = Vec::with_capacity(steps + 1);
    history.push(loss);
    for _ in 0..steps {
        step_flat(&mut params, &grad, &mut state, config)?;
        (loss, grad) = objective(&params);
        history.push(loss);
    }
    Ok(Minimized { params, history })
}
