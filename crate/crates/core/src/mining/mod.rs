//! Hard-sample mining: predict OKS from body parameters and keep the
//! candidates predicted to be hardest.
//!
//! Feature layout for a model with `J` joints (length `3J + 20`):
//!
//! | slots               | content                          |
//! |---------------------|----------------------------------|
//! | `3j .. 3j + 3`      | canonical axis-angle of joint j  |
//! | `3J + b`            | shape coefficient `beta[b]`      |
//! | `3J + 10 + e`       | expression coefficient `psi[e]`  |

mod gbdt;

use thiserror::Error;

use crate::body_model::{SmplxParams, NUM_BETAS, NUM_EXPRESSION};

pub use gbdt::{fit, GbdtConfig, GbdtModel, Node, Tree, MODEL_VERSION};

pub type FeatureVector = Vec<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MiningError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("non-finite feature value")]
    NonFinite,
    #[error("target {0} outside [0, 1]")]
    TargetRange(f64),
    #[error("invalid GBDT config: {0}")]
    InvalidConfig(String),
    #[error("malformed model: {0}")]
    MalformedModel(String),
    #[error("{0}")]
    Io(String),
}

pub fn feature_len(num_joints: usize) -> usize {
    3 * num_joints + NUM_BETAS + NUM_EXPRESSION
}

/// Slot of `beta[b]`.
pub fn beta_slot(num_joints: usize, b: usize) -> usize {
    3 * num_joints + b
}

/// Slot of `psi[e]`.
pub fn psi_slot(num_joints: usize, e: usize) -> usize {
    3 * num_joints + NUM_BETAS + e
}

pub fn featurize(params: &SmplxParams, num_joints: usize) -> Result<FeatureVector, MiningError> {
    if params.theta.len() != num_joints {
        return Err(MiningError::Dimension(format!(
            "theta has {} joints, expected {num_joints}",
            params.theta.len()
        )));
    }
    if params.beta.len() != NUM_BETAS || params.psi.len() != NUM_EXPRESSION {
        return Err(MiningError::Dimension(format!(
            "beta/psi lengths {}/{}, expected {NUM_BETAS}/{NUM_EXPRESSION}",
            params.beta.len(),
            params.psi.len()
        )));
    }
    let canonical = params.canonicalized().map_err(|_| MiningError::NonFinite)?;
    let mut out: Vec<f64> = Vec::with_capacity(feature_len(num_joints));
    out.extend(canonical.theta.iter().flatten());
    out.extend(&canonical.beta);
    out.extend(&canonical.psi);
    if out.iter().any(|v| !v.is_finite()) {
        return Err(MiningError::NonFinite);
    }
    Ok(out)
}

/// The `n` candidates with the lowest predicted OKS, ordered by
/// `(prediction, id)`. Asking for more than there are returns all of them.
pub fn select_hard_samples(
    candidates: &[(String, FeatureVector)],
    model: &GbdtModel,
    n: usize,
) -> Result<Vec<String>, MiningError> {
    if n > candidates.len() {
        log::warn!("asked for {n} hard samples, only {} candidates", candidates.len());
    }
    let mut scored = Vec::with_capacity(candidates.len());
    for (id, x) in candidates {
        scored.push((model.predict(x)?, id));
    }
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1)));
    Ok(scored.into_iter().take(n).map(|(_, id)| id.clone()).collect())
}
