//! When is the agent confused, and did a question help.

use serde::{Deserialize, Serialize};

use crate::actioner::{Actioner, PolicyOutput, StateInfo};
use crate::math::{l2_norm, ln};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfusionMode {
    Entropy,
    Gradient,
    Fixed,
}

impl ConfusionMode {
    pub fn name(self) -> &'static str {
        match self {
            ConfusionMode::Entropy => "entropy",
            ConfusionMode::Gradient => "gradient",
            ConfusionMode::Fixed => "fixed",
        }
    }

    pub fn parse(s: &str) -> Option<ConfusionMode> {
        [ConfusionMode::Entropy, ConfusionMode::Gradient, ConfusionMode::Fixed]
            .into_iter()
            .find(|m| m.name() == s)
    }
}

/// Thresholds are in nats for entropies and plain l2 units for the gradient norm.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfusionConfig {
    pub mode: ConfusionMode,
    pub entropy_action_threshold: f64,
    pub entropy_object_threshold: f64,
    pub grad_norm_threshold: f64,
    pub fixed_period: usize,
    pub max_questions_per_step: usize,
    pub fixed_uses_commit_check: bool,
    pub grad_includes_object_always: bool,
}

impl Default for ConfusionConfig {
    fn default() -> Self {
        ConfusionConfig {
            mode: ConfusionMode::Entropy,
            entropy_action_threshold: 0.9,
            entropy_object_threshold: 0.9,
            grad_norm_threshold: 1.2,
            fixed_period: 5,
            max_questions_per_step: 1,
            fixed_uses_commit_check: false,
            grad_includes_object_always: false,
        }
    }
}

impl ConfusionConfig {
    pub fn is_valid(&self) -> bool {
        self.entropy_action_threshold >= 0.0
            && self.entropy_object_threshold >= 0.0
            && self.grad_norm_threshold >= 0.0
            && self.fixed_period >= 1
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMeasure {
    pub mode: ConfusionMode,
    pub action_entropy: f64,
    pub object_entropy: f64,
    /// Zero unless measured in gradient mode.
    pub grad_norm: f64,
    pub is_interaction: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
pub enum ConfusionError {
    #[error("not a probability distribution")]
    InvalidDistribution,
    #[error("measure mode does not match the configured mode")]
    ModeMismatch,
}

/// Shannon entropy in nats with `0 ln 0 = 0`.
pub fn entropy(p: &[f64]) -> Result<f64, ConfusionError> {
    let mut total = 0.0;
    for &x in p {
        if x < -1e-9 || !x.is_finite() {
            return Err(ConfusionError::InvalidDistribution);
        }
        total += x;
    }
    if (total - 1.0).abs() > 1e-6 {
        return Err(ConfusionError::InvalidDistribution);
    }
    let mut h = 0.0;
    for &x in p {
        if x > 0.0 {
            h -= x * ln(x);
        }
    }
    Ok(h.max(0.0))
}

/// Measures confusion of an already computed policy output.
pub fn measure_output(model: &Actioner, out: &PolicyOutput, cfg: &ConfusionConfig) -> ConfusionMeasure {
    let kind = out.action_kind();
    let is_interaction = kind.is_interaction();
    let grad_norm = if cfg.mode == ConfusionMode::Gradient {
        let include = is_interaction || cfg.grad_includes_object_always;
        let g = model
            .grad_wrt_hidden(&out.h, kind.index(), out.object_label(), include)
            .expect("hidden width matches heads");
        l2_norm(&g)
    } else {
        0.0
    };
    ConfusionMeasure {
        mode: cfg.mode,
        action_entropy: entropy(&out.p_action).expect("softmax output"),
        object_entropy: entropy(&out.p_object).expect("softmax output"),
        grad_norm,
        is_interaction,
    }
}

pub fn measure(model: &Actioner, state: &StateInfo, cfg: &ConfusionConfig) -> (PolicyOutput, ConfusionMeasure) {
    let out = model.predict(state);
    let m = measure_output(model, &out, cfg);
    (out, m)
}

pub fn is_confused(m: &ConfusionMeasure, cfg: &ConfusionConfig, t: usize) -> Result<bool, ConfusionError> {
    if cfg.mode != ConfusionMode::Fixed && m.mode != cfg.mode {
        return Err(ConfusionError::ModeMismatch);
    }
    Ok(match cfg.mode {
        ConfusionMode::Entropy => {
            m.action_entropy > cfg.entropy_action_threshold
                || (m.is_interaction && m.object_entropy > cfg.entropy_object_threshold)
        }
        ConfusionMode::Gradient => m.grad_norm > cfg.grad_norm_threshold,
        ConfusionMode::Fixed => t.is_multiple_of(cfg.fixed_period.max(1)),
    })
}

fn entropy_decreased(before: &ConfusionMeasure, after: &ConfusionMeasure) -> bool {
    let d_action = after.action_entropy - before.action_entropy;
    let d_object = after.object_entropy - before.object_entropy;
    d_action < 0.0 || (before.is_interaction && d_object < 0.0)
}

/// Strict-decrease rule. Fixed mode commits unconditionally unless
/// `fixed_uses_commit_check`, in which case the entropy rule applies.
pub fn should_commit(
    before: &ConfusionMeasure,
    after: &ConfusionMeasure,
    cfg: &ConfusionConfig,
) -> Result<bool, ConfusionError> {
    if before.mode != after.mode {
        return Err(ConfusionError::ModeMismatch);
    }
    match cfg.mode {
        ConfusionMode::Entropy | ConfusionMode::Gradient if before.mode != cfg.mode => Err(ConfusionError::ModeMismatch),
        ConfusionMode::Entropy => Ok(entropy_decreased(before, after)),
        ConfusionMode::Gradient => Ok(after.grad_norm < before.grad_norm),
        ConfusionMode::Fixed => Ok(!cfg.fixed_uses_commit_check || entropy_decreased(before, after)),
    }
}
