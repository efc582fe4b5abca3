//! Flow-DPO on a linear velocity model `v_θ(z) = W z`.
//!
//! The reference model is the initial `W`. Every pair carries its own input,
//! targets and timestep, fixed at construction, so the objective is a
//! deterministic function of `W` and full-batch gradient descent on it is
//! reproducible.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{flow_dpo_loss, DpoBatch, DpoError, DEFAULT_BETA};
use crate::seeds;

#[derive(Debug, Clone, PartialEq)]
pub struct ToyPair {
    pub z_w: DVector<f64>,
    pub z_l: DVector<f64>,
    pub v_w: DVector<f64>,
    pub v_l: DVector<f64>,
    pub t: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToySet {
    pub pairs: Vec<ToyPair>,
    /// Map that produced the winner targets.
    pub winner_map: DMatrix<f64>,
    /// Initial policy, also the reference.
    pub init: DMatrix<f64>,
}

/// `n` pairs with inputs of size `dim_in` and velocities of size `dim_out`.
/// Winner targets come from a fixed map `A`, loser targets from a corrupted
/// map `A + 2G`; the initial policy is a small random matrix.
pub fn synthetic_pairs(n: usize, dim_in: usize, dim_out: usize, seed: u64) -> ToySet {
    let mut rng = seeds::rng(seed, "toy-dpo");
    let mut gauss = |r: usize, c: usize, s: f64| DMatrix::from_fn(r, c, |_, _| s * rng.sample::<f64, _>(StandardNormal));
    let a = gauss(dim_out, dim_in, 1.0);
    let b = &a + gauss(dim_out, dim_in, 2.0);
    let init = gauss(dim_out, dim_in, 0.1);
    let mut pairs = Vec::with_capacity(n);
    let mut rng = seeds::rng(seed, "toy-dpo-pairs");
    for _ in 0..n {
        let z_w = DVector::from_fn(dim_in, |_, _| rng.sample::<f64, _>(StandardNormal));
        let z_l = DVector::from_fn(dim_in, |_, _| rng.sample::<f64, _>(StandardNormal));
        let t = rng.random_range(0.0..1.0);
        pairs.push(ToyPair {
            v_w: &a * &z_w,
            v_l: &b * &z_l,
            z_w,
            z_l,
            t,
        });
    }
    ToySet {
        pairs,
        winner_map: a,
        init,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    pub learning_rate: f64,
    pub beta: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            learning_rate: 1e-3,
            beta: DEFAULT_BETA,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean loss before each step, then after the last one (`steps + 1` values).
    pub losses: Vec<f64>,
    pub initial_win_rate: f64,
    pub final_win_rate: f64,
    pub final_loss: f64,
    #[serde(skip)]
    pub weights: Vec<f64>,
}

fn batch(pair: &ToyPair, w: &DMatrix<f64>, reference: &DMatrix<f64>, beta: f64) -> DpoBatch {
    DpoBatch {
        v_w: pair.v_w.as_slice().to_vec(),
        v_l: pair.v_l.as_slice().to_vec(),
        v_theta_w: (w * &pair.z_w).as_slice().to_vec(),
        v_theta_l: (w * &pair.z_l).as_slice().to_vec(),
        v_ref_w: (reference * &pair.z_w).as_slice().to_vec(),
        v_ref_l: (reference * &pair.z_l).as_slice().to_vec(),
        t: pair.t,
        beta,
    }
}

/// Mean loss, win rate (`L_w < L_l`) and the gradient with respect to `W`.
fn evaluate(
    set: &ToySet,
    w: &DMatrix<f64>,
    beta: f64,
) -> Result<(f64, f64, DMatrix<f64>), DpoError> {
    let n = set.pairs.len() as f64;
    let mut loss = 0.0;
    let mut wins = 0usize;
    let mut grad = DMatrix::zeros(w.nrows(), w.ncols());
    for pair in &set.pairs {
        let out = flow_dpo_loss(&batch(pair, w, &set.init, beta))?;
        loss += out.loss;
        wins += (out.l_w < out.l_l) as usize;
        let gw = DVector::from_vec(out.grad_theta_w);
        let gl = DVector::from_vec(out.grad_theta_l);
        grad += gw * pair.z_w.transpose() + gl * pair.z_l.transpose();
    }
    Ok((loss / n, wins as f64 / n, grad / n))
}

/// Full-batch gradient descent on the mean Flow-DPO loss.
pub fn train_toy_control(set: &ToySet, cfg: &TrainConfig) -> Result<TrainReport, DpoError> {
    if set.pairs.is_empty() {
        return Err(DpoError::Empty("pairs"));
    }
    let mut w = set.init.clone();
    let mut losses = Vec::with_capacity(cfg.steps + 1);
    let (loss0, initial_win_rate, mut grad) = evaluate(set, &w, cfg.beta)?;
    losses.push(loss0);
    let mut win_rate = initial_win_rate;
    for step in 1..=cfg.steps {
        w -= &grad * cfg.learning_rate;
        let (loss, wr, g) = evaluate(set, &w, cfg.beta)?;
        if !loss.is_finite() || w.iter().any(|x| !x.is_finite()) {
            return Err(DpoError::Diverged { step, loss });
        }
        losses.push(loss);
        win_rate = wr;
        grad = g;
    }
    Ok(TrainReport {
        final_loss: *losses.last().expect("at least the initial loss"),
        losses,
        initial_win_rate,
        final_win_rate: win_rate,
        weights: w.as_slice().to_vec(),
    })
}
