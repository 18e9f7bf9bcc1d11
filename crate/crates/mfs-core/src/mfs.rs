//! Iterative construction of the minimal forcing subset.
//!
//! The outer loop alternates a constrained counterfactual solve with greedy
//! selection of the instance whose loss rises most under the counterfactual
//! parameters, removes it, and updates the model by a one-step Newton
//! estimate or an exact retrain. It stops when the counterfactual loss gap
//! closes below δ, no instance has positive score, the decision flips, or a
//! size cap is hit; a final exact retrain verifies the flip.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::model::{self, Claim, Dataset, ModelParams};
use crate::solver;

/// How parameters are updated after each removal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UpdateMode {
    NewtonApprox,
    ExactRetrain,
}

impl fmt::Display for UpdateMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            UpdateMode::NewtonApprox => "newton-approx",
            UpdateMode::ExactRetrain => "exact-retrain",
        })
    }
}

impl FromStr for UpdateMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "newton-approx" => Ok(UpdateMode::NewtonApprox),
            "exact-retrain" => Ok(UpdateMode::ExactRetrain),
            other => Err(Error::InvalidParam(format!(
                "update mode must be newton-approx or exact-retrain, got {other:?}"
            ))),
        }
    }
}

/// Knobs of the construction loop. `max_set_size: None` resolves to n/4.
/// Training hyperparameters ride along because the loop trains internally.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MfsConfig {
    pub epsilon: f64,
    pub delta: f64,
    pub max_set_size: Option<usize>,
    pub update_mode: UpdateMode,
    pub inner_iters: usize,
    pub alpha: f64,
    pub train_tol: f64,
    pub train_max_iter: usize,
}

impl Default for MfsConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.4,
            delta: 1e-4,
            max_set_size: None,
            update_mode: UpdateMode::NewtonApprox,
            inner_iters: 20,
            alpha: 0.01,
            train_tol: 1e-10,
            train_max_iter: 100,
        }
    }
}

impl MfsConfig {
    /// Validate against a dataset of n active instances and resolve the cap.
    pub fn resolved_cap(&self, n: usize) -> Result<usize> {
        if !(self.delta > 0.0) {
            return Err(Error::InvalidParam(format!(
                "delta must be > 0, got {}",
                self.delta
            )));
        }
        if !(self.epsilon >= 0.0) {
            return Err(Error::InvalidParam(format!(
                "epsilon must be >= 0, got {}",
                self.epsilon
            )));
        }
        if self.inner_iters == 0 {
            return Err(Error::InvalidParam("inner_iters must be >= 1".into()));
        }
        if n < 2 {
            return Err(Error::EmptyDataset);
        }
        let cap = match self.max_set_size {
            Some(cap) => cap,
            None => (n / 4).clamp(1, n - 1),
        };
        if cap == 0 || cap > n - 1 {
            return Err(Error::InvalidParam(format!(
                "max_set_size must be in [1, {}], got {cap}",
                n - 1
            )));
        }
        Ok(cap)
    }
}

/// One removal: the selected instance, its counterfactual loss-increase
/// score, the loss pair that justified continuing, and the target confidence
/// after the removal.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MfsStep {
    pub selected_id: usize,
    pub score: f64,
    pub loss_unconstrained: f64,
    pub loss_constrained: f64,
    pub confidence_at_target: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExitReason {
    LossGapClosed,
    DecisionFlipped,
    CapReached,
    NoPositiveScore,
}

/// Outcome of one construction run. Serializes to a versioned JSON document.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MfsResult {
    pub schema_version: u32,
    pub seed: u64,
    pub config: MfsConfig,
    pub claim: ClaimEcho,
    pub initial_confidence: f64,
    pub steps: Vec<MfsStep>,
    pub exit_reason: ExitReason,
    pub flipped_on_retrain: bool,
    /// Log-odds toward the counterfactual class at x* after the final exact
    /// retrain; ≥ 0 means the decision flipped.
    pub retrain_log_odds: f64,
}

/// Serializable copy of the claim a result explains.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClaimEcho {
    pub x_star: Vec<f64>,
    pub decided_class: u8,
    pub epsilon: f64,
}

impl From<&Claim> for ClaimEcho {
    fn from(c: &Claim) -> Self {
        Self {
            x_star: c.x_star.clone(),
            decided_class: c.decided_class,
            epsilon: c.epsilon,
        }
    }
}

impl MfsResult {
    pub fn selected_ids(&self) -> Vec<usize> {
        self.steps.iter().map(|s| s.selected_id).collect()
    }
}

pub const RESULT_SCHEMA_VERSION: u32 = 1;

fn confidence_in(params: &ModelParams, x: &[f64], class: u8) -> Result<f64> {
    let p1 = model::predict_proba(params, x)?;
    Ok(if class == 1 { p1 } else { 1.0 - p1 })
}

/// Per-instance selection scores max[l(zᵢ, π̂_c) − l(zᵢ, π̂), 0] over the
/// active set, ordered by id.
pub fn score_instances(
    dataset: &Dataset,
    params_unconstrained: &ModelParams,
    params_constrained: &ModelParams,
) -> Result<Vec<(usize, f64)>> {
    let active = dataset.active_vec();
    if active.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if dataset.dim() != params_unconstrained.dim() || dataset.dim() != params_constrained.dim() {
        return Err(Error::Shape {
            expected: dataset.dim(),
            got: params_unconstrained.dim().min(params_constrained.dim()),
        });
    }
    let scores = exec::ordered_map(&active, |inst| {
        let l_u = model::per_sample_loss(inst, params_unconstrained).expect("dims checked");
        let l_c = model::per_sample_loss(inst, params_constrained).expect("dims checked");
        (inst.id, (l_c - l_u).max(0.0))
    });
    Ok(scores)
}

fn argmax_positive(scores: &[(usize, f64)]) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for &(id, score) in scores {
        if score > 0.0 && best.map(|(_, b)| score > b).unwrap_or(true) {
            best = Some((id, score));
        }
    }
    best
}

/// Iteratively construct the forcing subset for a claim.
///
/// Trains on the dataset, verifies the claim matches the model's prediction,
/// then loops: counterfactual solve, δ gap test, greedy selection (ties to
/// the lowest id), removal, parameter update per `update_mode`. A final
/// exact retrain on the remaining instances records whether the decision
/// really flips.
pub fn construct_mfs(
    dataset: &Dataset,
    claim: &Claim,
    config: &MfsConfig,
    rng_seed: u64,
) -> Result<MfsResult> {
    let cap = config.resolved_cap(dataset.active_count())?;
    if claim.epsilon != config.epsilon {
        return Err(Error::InvalidParam(format!(
            "claim epsilon {} disagrees with config epsilon {}",
            claim.epsilon, config.epsilon
        )));
    }
    let mut ds = dataset.clone();
    let mut params = solver::train(&ds, config.alpha, config.train_tol, config.train_max_iter)?;
    let predicted = model::predict_class(&params, &claim.x_star)?;
    if predicted != claim.decided_class {
        return Err(Error::StaleClaim {
            claimed: claim.decided_class,
            predicted,
        });
    }
    let initial_confidence = confidence_in(&params, &claim.x_star, claim.decided_class)?;

    let mut steps: Vec<MfsStep> = Vec::new();
    let exit_reason = loop {
        let counterfactual =
            solver::counterfactual_params(&ds, &params, claim, config.inner_iters)?;
        let loss_unconstrained = model::total_loss(&ds, &params)?;
        let loss_constrained = model::total_loss(&ds, &counterfactual)?;
        if loss_constrained - loss_unconstrained < config.delta {
            break ExitReason::LossGapClosed;
        }
        let scores = score_instances(&ds, &params, &counterfactual)?;
        let Some((selected_id, score)) = argmax_positive(&scores) else {
            break ExitReason::NoPositiveScore;
        };
        let removed = ds
            .get(selected_id)
            .expect("selected from active set")
            .clone();
        params = match config.update_mode {
            UpdateMode::NewtonApprox => {
                let updated = solver::one_step_newton_remove(&ds, &params, &removed)?;
                ds.deactivate(selected_id)?;
                updated
            }
            UpdateMode::ExactRetrain => {
                ds.deactivate(selected_id)?;
                solver::train(&ds, config.alpha, config.train_tol, config.train_max_iter)?
            }
        };
        let confidence_at_target = confidence_in(&params, &claim.x_star, claim.decided_class)?;
        steps.push(MfsStep {
            selected_id,
            score,
            loss_unconstrained,
            loss_constrained,
            confidence_at_target,
        });
        if model::predict_class(&params, &claim.x_star)? != claim.decided_class {
            break ExitReason::DecisionFlipped;
        }
        if steps.len() >= cap {
            break ExitReason::CapReached;
        }
    };

    let final_params = solver::train(
        &ds,
        config.alpha,
        config.train_tol.min(1e-10),
        config.train_max_iter,
    )?;
    let flipped_on_retrain =
        model::predict_class(&final_params, &claim.x_star)? != claim.decided_class;
    let (retrain_log_odds, _) =
        model::log_odds(&final_params, &claim.x_star, claim.counter_class())?;

    Ok(MfsResult {
        schema_version: RESULT_SCHEMA_VERSION,
        seed: rng_seed,
        config: config.clone(),
        claim: claim.into(),
        initial_confidence,
        steps,
        exit_reason,
        flipped_on_retrain,
        retrain_log_odds,
    })
}

/// Confidence in the decided class before any removal and after each step.
pub fn confidence_trajectory(result: &MfsResult) -> Vec<f64> {
    let mut out = Vec::with_capacity(result.steps.len() + 1);
    out.push(result.initial_confidence);
    out.extend(result.steps.iter().map(|s| s.confidence_at_target));
    out
}
