//! Flow-DPO: preference pairs ranked by OKS and the rectified-flow DPO loss
//!
//! ```text
//! L_w  = |v_w - v_θ_w|² - |v_w - v_ref_w|²        (L_l likewise)
//! a    = -(β_t / 2) (L_w - L_l),    β_t = β (1 - t²)
//! loss = -log σ(a)
//! ```

mod pairs;
mod toy;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use pairs::{build_preference_pairs, ConditionGroup, PairReport, PreferencePair, DEFAULT_MARGIN};
pub use toy::{synthetic_pairs, train_toy_control, ToyPair, ToySet, TrainConfig, TrainReport};

/// Default DPO strength.
pub const DEFAULT_BETA: f64 = 250.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DpoError {
    #[error("t = {0} is outside [0, 1]")]
    TimeOutOfRange(f64),
    #[error("beta must be positive, got {0}")]
    InvalidBeta(f64),
    #[error("velocity length mismatch: {0}")]
    Dimension(String),
    #[error("non-finite input in {0}")]
    NonFinite(&'static str),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("error-rate reduction undefined: mean OKS before is 1")]
    UndefinedReduction,
    #[error("training diverged at step {step}: loss {loss}")]
    Diverged { step: usize, loss: f64 },
}

/// `β (1 - t²)`.
pub fn beta_schedule(t: f64, beta: f64) -> Result<f64, DpoError> {
    if !(0.0..=1.0).contains(&t) {
        return Err(DpoError::TimeOutOfRange(t));
    }
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(DpoError::InvalidBeta(beta));
    }
    Ok(beta * (1.0 - t * t))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpoBatch {
    pub v_w: Vec<f64>,
    pub v_l: Vec<f64>,
    pub v_theta_w: Vec<f64>,
    pub v_theta_l: Vec<f64>,
    pub v_ref_w: Vec<f64>,
    pub v_ref_l: Vec<f64>,
    pub t: f64,
    pub beta: f64,
}

impl DpoBatch {
    fn validate(&self) -> Result<(), DpoError> {
        let n = self.v_w.len();
        let fields: [(&'static str, &Vec<f64>); 6] = [
            ("v_w", &self.v_w),
            ("v_l", &self.v_l),
            ("v_theta_w", &self.v_theta_w),
            ("v_theta_l", &self.v_theta_l),
            ("v_ref_w", &self.v_ref_w),
            ("v_ref_l", &self.v_ref_l),
        ];
        for (name, v) in fields {
            if v.len() != n {
                return Err(DpoError::Dimension(format!("{name} has {} entries, v_w has {n}", v.len())));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(DpoError::NonFinite(name));
            }
        }
        if !self.t.is_finite() {
            return Err(DpoError::NonFinite("t"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DpoLoss {
    pub loss: f64,
    /// The sigmoid argument `a`.
    pub logit: f64,
    pub beta_t: f64,
    pub l_w: f64,
    pub l_l: f64,
    pub grad_theta_w: Vec<f64>,
    pub grad_theta_l: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Loss and its exact gradients with respect to the policy velocities:
///
/// ```text
/// ∂loss/∂v_θ_w =  σ(-a) β_t (v_θ_w - v_w)
/// ∂loss/∂v_θ_l = -σ(-a) β_t (v_θ_l - v_l)
/// ```
pub fn flow_dpo_loss(batch: &DpoBatch) -> Result<DpoLoss, DpoError> {
    batch.validate()?;
    let beta_t = beta_schedule(batch.t, batch.beta)?;
    let l_w = sq_dist(&batch.v_w, &batch.v_theta_w) - sq_dist(&batch.v_w, &batch.v_ref_w);
    let l_l = sq_dist(&batch.v_l, &batch.v_theta_l) - sq_dist(&batch.v_l, &batch.v_ref_l);
    let logit = -(beta_t / 2.0) * (l_w - l_l);
    let loss = softplus(-logit);
    let weight = sigmoid(-logit) * beta_t;
    let grad_theta_w = batch.v_theta_w.iter().zip(&batch.v_w).map(|(p, v)| weight * (p - v)).collect();
    let grad_theta_l = batch.v_theta_l.iter().zip(&batch.v_l).map(|(p, v)| -weight * (p - v)).collect();
    Ok(DpoLoss {
        loss,
        logit,
        beta_t,
        l_w,
        l_l,
        grad_theta_w,
        grad_theta_l,
    })
}

/// Mean loss over batches.
pub fn mean_loss(batches: &[DpoBatch]) -> Result<f64, DpoError> {
    if batches.is_empty() {
        return Err(DpoError::Empty("batches"));
    }
    let mut total = 0.0;
    for b in batches {
        total += flow_dpo_loss(b)?.loss;
    }
    Ok(total / batches.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentStats {
    pub mean_before: f64,
    pub std_before: f64,
    pub mean_after: f64,
    pub std_after: f64,
    pub error_rate_before: f64,
    pub error_rate_after: f64,
    /// Relative reduction of the error rate `1 - mean(OKS)`.
    pub reduction: f64,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Mean ± population std of OKS before and after, and the relative
/// reduction of the error rate `1 - mean`.
pub fn alignment_summary(before: &[f64], after: &[f64]) -> Result<AlignmentStats, DpoError> {
    if before.is_empty() {
        return Err(DpoError::Empty("before"));
    }
    if after.is_empty() {
        return Err(DpoError::Empty("after"));
    }
    if before.iter().chain(after).any(|x| !x.is_finite()) {
        return Err(DpoError::NonFinite("oks"));
    }
    let (mb, sb) = mean_std(before);
    let (ma, sa) = mean_std(after);
    let (eb, ea) = (1.0 - mb, 1.0 - ma);
    if eb == 0.0 {
        return Err(DpoError::UndefinedReduction);
    }
    Ok(AlignmentStats {
        mean_before: mb,
        std_before: sb,
        mean_after: ma,
        std_after: sa,
        error_rate_before: eb,
        error_rate_after: ea,
        reduction: (eb - ea) / eb,
    })
}

#[cfg(test)]
mod tests;
