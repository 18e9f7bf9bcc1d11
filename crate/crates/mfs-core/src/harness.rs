//! Experiment runners: training-set debugging precision/recall, poisoning
//! size collapse, and the empirical removal-effect bound check.
//!
//! Reports carry the raw id sets they were computed from, so every stored
//! metric can be recomputed exactly. Runners emit JSON documents and flat
//! CSV tables (one row per experiment cell), both schema-versioned.

use std::path::Path;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data;
use crate::error::{Error, Result};
use crate::exec;
use crate::mfs::{construct_mfs, MfsConfig, MfsResult, UpdateMode};
use crate::model::{self, Claim, Dataset, Instance, ModelParams};
use crate::solver;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Precision/recall of one selection method against the corruption ground
/// truth, plus the test accuracy after restoring the selected labels.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DebugMethodMetrics {
    pub precision: f64,
    pub recall: f64,
    pub top_k: usize,
    pub post_fix_test_accuracy: f64,
    pub selected_ids: Vec<usize>,
}

/// One (flip fraction, seed) cell of the debugging experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DebugReport {
    pub schema_version: u32,
    pub seed: u64,
    pub flip_fraction: f64,
    /// No confidently-wrong validation point existed; metrics cover k = 0.
    pub no_target: bool,
    pub flipped_ids: Vec<usize>,
    pub mfs: DebugMethodMetrics,
    pub random: DebugMethodMetrics,
}

/// Generator and loop parameters for the debugging experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DebugParams {
    pub n: usize,
    pub vocab: usize,
    pub alpha: f64,
    pub epsilon: f64,
    pub confidence_threshold: f64,
    pub max_targets: usize,
    /// Budget on the pooled suspicious set; both methods select at most this
    /// many instances.
    pub top_k: usize,
}

impl Default for DebugParams {
    fn default() -> Self {
        Self {
            n: 280,
            vocab: 26,
            alpha: 0.02,
            epsilon: 0.25,
            confidence_threshold: 0.55,
            max_targets: 10,
            top_k: 30,
        }
    }
}

/// One target of the poisoning experiment. Sizes compare the MFS before and
/// after injection; `poison_rank` is the 1-based position of the poison
/// instance in the poisoned-run selection order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PoisonOutcome {
    pub seed: u64,
    pub target_id: usize,
    pub size_clean: usize,
    pub size_poisoned: Option<usize>,
    pub poison_rank: Option<usize>,
    pub attack_failed: bool,
}

/// Generator and attack parameters for the poisoning experiment, which runs
/// on two Gaussian blobs (the geometry where a single adjacent poison can
/// carry a decision).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PoisonParams {
    pub n: usize,
    pub separation: f64,
    pub spread: f64,
    pub alpha: f64,
    pub epsilon: f64,
    pub radius: f64,
}

impl Default for PoisonParams {
    fn default() -> Self {
        Self {
            n: 20,
            separation: 4.0,
            spread: 1.0,
            alpha: 0.05,
            epsilon: 0.25,
            radius: 1e-3,
        }
    }
}

/// Error of one single-instance removal, measured through the probe map.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundCell {
    pub instance_id: usize,
    pub error: f64,
}

/// Empirical quantities composing the removal-effect stability bound
/// n·L_F·L_H·N_g²/(λ_min+α)³ for one regularization strength, together with
/// the observed one-step-Newton-versus-retrain errors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundEstimate {
    pub alpha: f64,
    pub n: usize,
    /// Smallest eigenvalue of the weight block of the unregularized mean
    /// Hessian at the optimum.
    pub lambda_min: f64,
    /// Largest per-sample gradient norm at the optimum.
    pub n_g: f64,
    /// Lipschitz constant of the probe map: ‖[x_probe; 1]‖.
    pub l_f: f64,
    /// Hessian Lipschitz constant: max‖[x; 1]‖³ / (6√3).
    pub l_h: f64,
    pub bound_value: f64,
    pub observed_error: f64,
    pub worst_instance_id: usize,
    pub cells: Vec<BoundCell>,
}

impl BoundEstimate {
    pub fn violated(&self) -> bool {
        self.observed_error > self.bound_value
    }
}

pub(crate) fn bound_formula(
    n: usize,
    l_f: f64,
    l_h: f64,
    n_g: f64,
    lambda_min: f64,
    alpha: f64,
) -> f64 {
    n as f64 * l_f * l_h * n_g * n_g / (lambda_min + alpha).powi(3)
}

fn derived_seed(seed: u64, salt: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(salt)
}

fn split_bow(ds: &Dataset) -> (Dataset, Vec<Instance>, Vec<Instance>) {
    let all = ds.instances();
    let n_train = all.len() * 4 / 10;
    let n_val = all.len() * 15 / 100;
    let train = Dataset::new(all[..n_train].to_vec()).expect("non-empty split");
    let val = all[n_train..n_train + n_val].to_vec();
    let test = all[n_train + n_val..].to_vec();
    (train, val, test)
}

fn accuracy(params: &ModelParams, instances: &[Instance]) -> Result<f64> {
    let mut correct = 0usize;
    for inst in instances {
        if model::predict_class(params, &inst.features)? == inst.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / instances.len() as f64)
}

/// Round-robin pooling across per-target selections by step rank, keeping
/// first occurrences only.
fn pool_round_robin(selections: &[Vec<usize>]) -> Vec<usize> {
    let max_len = selections.iter().map(|s| s.len()).max().unwrap_or(0);
    let mut pooled = Vec::new();
    for rank in 0..max_len {
        for sel in selections {
            if let Some(&id) = sel.get(rank) {
                if !pooled.contains(&id) {
                    pooled.push(id);
                }
            }
        }
    }
    pooled
}

fn intersect_count(sorted_b: &[usize], ids: &[usize]) -> usize {
    ids.iter()
        .filter(|id| sorted_b.binary_search(id).is_ok())
        .count()
}

fn debug_metrics(
    selected: Vec<usize>,
    flipped: &[usize],
    corrupted: &Dataset,
    clean_train: &Dataset,
    test: &[Instance],
    alpha: f64,
) -> Result<DebugMethodMetrics> {
    let hits = intersect_count(flipped, &selected);
    let k = selected.len();
    let precision = if k == 0 { 0.0 } else { hits as f64 / k as f64 };
    // Empty-B convention: with nothing to find, recall is 1.
    let recall = if flipped.is_empty() {
        1.0
    } else {
        hits as f64 / flipped.len() as f64
    };
    let mut fixed = corrupted.clone();
    for &id in &selected {
        let original = clean_train.get(id).expect("selected from train ids").label;
        fixed.set_label(id, original)?;
    }
    let repaired = solver::train(&fixed, alpha, 1e-8, 100)?;
    Ok(DebugMethodMetrics {
        precision,
        recall,
        top_k: k,
        post_fix_test_accuracy: accuracy(&repaired, test)?,
        selected_ids: selected,
    })
}

fn run_debug_cell(params: &DebugParams, fraction: f64, seed: u64) -> Result<DebugReport> {
    let full = data::gen_bow_spamlike(params.n, params.vocab, seed)?;
    let (clean_train, val, test) = split_bow(&full);
    let (corrupted, log) = data::flip_labels(&clean_train, fraction, derived_seed(seed, 1))?;
    let model_params = solver::train(&corrupted, params.alpha, 1e-8, 100)?;

    // Confidently wrong validation predictions, most confident first.
    let mut targets: Vec<(f64, &Instance)> = Vec::new();
    for inst in &val {
        let p1 = model::predict_proba(&model_params, &inst.features)?;
        let predicted = u8::from(p1 >= 0.5);
        let confidence = if predicted == 1 { p1 } else { 1.0 - p1 };
        if predicted != inst.label && confidence >= params.confidence_threshold {
            targets.push((confidence, inst));
        }
    }
    targets.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.id.cmp(&b.1.id)));
    targets.truncate(params.max_targets);

    let config = MfsConfig {
        epsilon: params.epsilon,
        alpha: params.alpha,
        update_mode: UpdateMode::NewtonApprox,
        ..MfsConfig::default()
    };
    let mut selections = Vec::new();
    for (_, target) in &targets {
        let claim = Claim::from_model(&model_params, target.features.clone(), params.epsilon)?;
        let result = construct_mfs(&corrupted, &claim, &config, seed)?;
        selections.push(result.selected_ids());
    }
    let mut pooled = pool_round_robin(&selections);
    pooled.truncate(params.top_k);
    let k = pooled.len();

    let mfs = debug_metrics(
        pooled,
        &log.flipped_ids,
        &corrupted,
        &clean_train,
        &test,
        params.alpha,
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(derived_seed(seed, 2));
    let random_ids: Vec<usize> = rand::seq::index::sample(&mut rng, clean_train.len(), k)
        .into_iter()
        .map(|pos| clean_train.instances()[pos].id)
        .collect();
    let random = debug_metrics(
        random_ids,
        &log.flipped_ids,
        &corrupted,
        &clean_train,
        &test,
        params.alpha,
    )?;

    Ok(DebugReport {
        schema_version: REPORT_SCHEMA_VERSION,
        seed,
        flip_fraction: fraction,
        no_target: targets.is_empty(),
        flipped_ids: log.flipped_ids,
        mfs,
        random,
    })
}

/// Debugging experiment: corrupt, train, explain confidently-wrong
/// validation points, pool the selections, and compare precision/recall and
/// post-fix test accuracy against a random baseline at equal k.
///
/// Cells run independently; reports come back ordered by (fraction, seed).
pub fn run_debug_experiment(
    params: &DebugParams,
    flip_fractions: &[f64],
    seeds: &[u64],
) -> Result<Vec<DebugReport>> {
    for &f in flip_fractions {
        if !(f > 0.0 && f <= 0.5) {
            return Err(Error::InvalidParam(format!(
                "flip fraction must be in (0, 0.5], got {f}"
            )));
        }
    }
    if !(params.confidence_threshold >= 0.5 && params.confidence_threshold <= 1.0) {
        return Err(Error::InvalidParam(format!(
            "confidence threshold must be in [0.5, 1], got {}",
            params.confidence_threshold
        )));
    }
    let cells: Vec<(f64, u64)> = flip_fractions
        .iter()
        .flat_map(|&f| seeds.iter().map(move |&s| (f, s)))
        .collect();
    let results = exec::ordered_map_indices(cells.len(), |i| {
        let (fraction, seed) = cells[i];
        run_debug_cell(params, fraction, seed)
    });
    results.into_iter().collect()
}

/// Poisoning experiment: explain a clean prediction, inject one poison
/// instance next to the target, retrain, and explain the flipped prediction.
/// Entries whose attack does not flip the prediction are flagged.
pub fn run_poison_experiment(
    n_targets: usize,
    params: &PoisonParams,
    seed: u64,
) -> Result<Vec<PoisonOutcome>> {
    if n_targets == 0 {
        return Ok(Vec::new());
    }
    let outcomes = exec::ordered_map_indices(n_targets, |t| {
        run_poison_cell(params, derived_seed(seed, t as u64))
    });
    outcomes.into_iter().collect()
}

/// Low-margin instances scanned as prospective targets per cell.
const POISON_CANDIDATES: usize = 8;

fn run_poison_cell(params: &PoisonParams, seed: u64) -> Result<PoisonOutcome> {
    let full = data::gen_blobs(params.n, params.separation, params.spread, seed)?;
    let probe_model = solver::train(&full, params.alpha, 1e-8, 100)?;
    let mut margins: Vec<(f64, usize)> = Vec::with_capacity(full.active_count());
    for inst in full.active_instances() {
        margins.push((model::logit(&probe_model, &inst.features)?.abs(), inst.id));
    }
    margins.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));

    let config = MfsConfig {
        epsilon: params.epsilon,
        alpha: params.alpha,
        update_mode: UpdateMode::ExactRetrain,
        ..MfsConfig::default()
    };

    // The target is held out of training: the explanation concerns the rest
    // of the data. Scan the lowest-margin instances and attack the one whose
    // clean forcing set is largest among those a single poison still flips.
    // Targets whose clean set is already a single instance say nothing about
    // collapse, so they never qualify; a cell with no qualifying candidate
    // reports a failed attack.
    let mut chosen: Option<(usize, f64, usize, MfsResult)> = None;
    for &(_, cand) in margins.iter().take(POISON_CANDIDATES) {
        let target_x = full.get(cand).unwrap().features.clone();
        let reduced = full.without(&[cand])?;
        let (poisoned_ds, record) =
            data::inject_poison(&reduced, &target_x, params.radius, params.alpha, seed)?;
        let poisoned_model = solver::train(&poisoned_ds, params.alpha, 1e-8, 100)?;
        if model::predict_class(&poisoned_model, &target_x)? == record.base_label {
            continue;
        }
        let holdout_model = solver::train(&reduced, params.alpha, 1e-8, 100)?;
        let margin = model::logit(&holdout_model, &target_x)?.abs();
        let clean_claim = Claim::from_model(&holdout_model, target_x, params.epsilon)?;
        let clean_result = construct_mfs(&reduced, &clean_claim, &config, seed)?;
        if clean_result.steps.len() < 2 {
            continue;
        }
        let better = match &chosen {
            None => true,
            Some((size, best_margin, _, _)) => {
                clean_result.steps.len() > *size
                    || (clean_result.steps.len() == *size && margin > *best_margin)
            }
        };
        if better {
            chosen = Some((clean_result.steps.len(), margin, cand, clean_result));
        }
    }

    // No qualifying candidate: report the minimum-margin target as failed.
    let Some((_, _, target_id, clean_result)) = chosen else {
        let target_id = margins[0].1;
        let target_x = full.get(target_id).unwrap().features.clone();
        let ds = full.without(&[target_id])?;
        let clean_model = solver::train(&ds, params.alpha, 1e-8, 100)?;
        let clean_claim = Claim::from_model(&clean_model, target_x, params.epsilon)?;
        let clean_result = construct_mfs(&ds, &clean_claim, &config, seed)?;
        return Ok(PoisonOutcome {
            seed,
            target_id,
            size_clean: clean_result.steps.len(),
            size_poisoned: None,
            poison_rank: None,
            attack_failed: true,
        });
    };
    let target_x = full.get(target_id).unwrap().features.clone();
    let ds = full.without(&[target_id])?;

    let (poisoned_ds, record) =
        data::inject_poison(&ds, &target_x, params.radius, params.alpha, seed)?;
    let poisoned_model = solver::train(&poisoned_ds, params.alpha, 1e-8, 100)?;
    let poisoned_claim = Claim::from_model(&poisoned_model, target_x, params.epsilon)?;
    let poisoned_result = construct_mfs(&poisoned_ds, &poisoned_claim, &config, seed)?;
    let rank = poisoned_result
        .selected_ids()
        .iter()
        .position(|&id| id == record.poison_id)
        .map(|p| p + 1);
    Ok(PoisonOutcome {
        seed,
        target_id,
        size_clean: clean_result.steps.len(),
        size_poisoned: Some(poisoned_result.steps.len()),
        poison_rank: rank,
        attack_failed: false,
    })
}

/// Empirical check of the removal-effect bound: for each α, train to
/// tolerance 1e-10, then compare the one-step Newton update against exact
/// retraining for every single-instance removal, measuring the discrepancy
/// through the log-odds at a fixed probe point (the mean active feature
/// vector). Violations are left to the caller to assert on.
pub fn check_bound(dataset: &Dataset, alphas: &[f64]) -> Result<Vec<BoundEstimate>> {
    for &alpha in alphas {
        if !(alpha > 0.0) {
            return Err(Error::InvalidParam(format!(
                "alpha must be > 0, got {alpha}"
            )));
        }
    }
    let d = dataset.dim();
    let active = dataset.active_vec();
    let n = active.len();
    let probe: Vec<f64> = (0..d)
        .map(|j| active.iter().map(|i| i.features[j]).sum::<f64>() / n as f64)
        .collect();
    let mut phi_probe = DVector::zeros(d + 1);
    for j in 0..d {
        phi_probe[j] = probe[j];
    }
    phi_probe[d] = 1.0;
    let l_f = phi_probe.norm();
    let l_h = active
        .iter()
        .map(|i| {
            let norm_sq = i.features.iter().map(|v| v * v).sum::<f64>() + 1.0;
            norm_sq.powf(1.5)
        })
        .fold(0.0, f64::max)
        / (6.0 * 3.0_f64.sqrt());

    let mut estimates = Vec::with_capacity(alphas.len());
    for &alpha in alphas {
        let optimum = solver::train(dataset, alpha, 1e-10, 200)?;
        let n_g = active
            .iter()
            .map(|i| model::gradient_instance(i, &optimum).unwrap().norm())
            .fold(0.0, f64::max);
        let data_only = ModelParams::new(optimum.theta.clone(), 0.0)?;
        let hess = model::hessian(dataset, &data_only)?;
        let weight_block = hess.view((0, 0), (d, d)).into_owned();
        let lambda_min = weight_block
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .fold(f64::INFINITY, |a, &b| a.min(b));

        let cells: Vec<Result<BoundCell>> = exec::ordered_map_indices(n, |i| {
            let inst = active[i];
            let newton = solver::one_step_newton_remove(dataset, &optimum, inst)?;
            let retrain = solver::train(&dataset.without(&[inst.id])?, alpha, 1e-10, 200)?;
            let error = (phi_probe.dot(&newton.theta) - phi_probe.dot(&retrain.theta)).abs();
            Ok(BoundCell {
                instance_id: inst.id,
                error,
            })
        });
        let cells: Vec<BoundCell> = cells.into_iter().collect::<Result<_>>()?;
        let worst = cells
            .iter()
            .max_by(|a, b| a.error.partial_cmp(&b.error).unwrap())
            .expect("non-empty dataset");
        estimates.push(BoundEstimate {
            alpha,
            n,
            lambda_min,
            n_g,
            l_f,
            l_h,
            bound_value: bound_formula(n, l_f, l_h, n_g, lambda_min, alpha),
            observed_error: worst.error,
            worst_instance_id: worst.instance_id,
            cells,
        });
    }
    Ok(estimates)
}

/// Serialize any report as pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::NumericalFailure(format!("serialization: {e}")))?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// Flat CSV of debug reports: one row per (fraction, seed, method) cell.
pub fn write_debug_csv(reports: &[DebugReport], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "schema_version",
        "flip_fraction",
        "seed",
        "method",
        "no_target",
        "top_k",
        "precision",
        "recall",
        "post_fix_test_accuracy",
    ])?;
    for report in reports {
        for (method, metrics) in [("mfs", &report.mfs), ("random", &report.random)] {
            w.write_record([
                REPORT_SCHEMA_VERSION.to_string(),
                format!("{}", report.flip_fraction),
                report.seed.to_string(),
                method.to_string(),
                report.no_target.to_string(),
                metrics.top_k.to_string(),
                format!("{}", metrics.precision),
                format!("{}", metrics.recall),
                format!("{}", metrics.post_fix_test_accuracy),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Flat CSV of poison outcomes: one row per target.
pub fn write_poison_csv(outcomes: &[PoisonOutcome], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "schema_version",
        "seed",
        "target_id",
        "size_clean",
        "size_poisoned",
        "poison_rank",
        "attack_failed",
    ])?;
    for o in outcomes {
        w.write_record([
            REPORT_SCHEMA_VERSION.to_string(),
            o.seed.to_string(),
            o.target_id.to_string(),
            o.size_clean.to_string(),
            o.size_poisoned.map(|v| v.to_string()).unwrap_or_default(),
            o.poison_rank.map(|v| v.to_string()).unwrap_or_default(),
            o.attack_failed.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Flat CSV of bound checks: one row per (alpha, removed instance) cell.
pub fn write_bound_csv(estimates: &[BoundEstimate], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "schema_version",
        "alpha",
        "n",
        "instance_id",
        "cell_error",
        "observed_error",
        "bound_value",
        "lambda_min",
        "n_g",
        "l_f",
        "l_h",
    ])?;
    for est in estimates {
        for cell in &est.cells {
            w.write_record([
                REPORT_SCHEMA_VERSION.to_string(),
                format!("{}", est.alpha),
                est.n.to_string(),
                cell.instance_id.to_string(),
                format!("{}", cell.error),
                format!("{}", est.observed_error),
                format!("{}", est.bound_value),
                format!("{}", est.lambda_min),
                format!("{}", est.n_g),
                format!("{}", est.l_f),
                format!("{}", est.l_h),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn small_params() -> DebugParams {
        DebugParams {
            n: 160,
            vocab: 12,
            ..DebugParams::default()
        }
    }

    #[test]
    fn debug_metrics_recompute_exactly() {
        let reports = run_debug_experiment(&small_params(), &[0.3], &[0, 1]).unwrap();
        assert_eq!(reports.len(), 2);
        for report in &reports {
            for metrics in [&report.mfs, &report.random] {
                let hits = intersect_count(&report.flipped_ids, &metrics.selected_ids);
                let k = metrics.selected_ids.len();
                assert_eq!(metrics.top_k, k);
                let precision = if k == 0 { 0.0 } else { hits as f64 / k as f64 };
                let recall = if report.flipped_ids.is_empty() {
                    1.0
                } else {
                    hits as f64 / report.flipped_ids.len() as f64
                };
                assert_eq!(metrics.precision, precision);
                assert_eq!(metrics.recall, recall);
            }
            assert_eq!(report.mfs.top_k, report.random.top_k);
        }
    }

    #[test]
    fn debug_empty_corruption_uses_recall_convention() {
        // round(0.004 · 80) = 0 flipped labels.
        let reports = run_debug_experiment(&small_params(), &[0.004], &[3]).unwrap();
        let report = &reports[0];
        assert!(report.flipped_ids.is_empty());
        assert_eq!(report.mfs.recall, 1.0);
        assert_eq!(report.random.recall, 1.0);
    }

    #[test]
    fn debug_rejects_out_of_range_fraction() {
        assert!(run_debug_experiment(&small_params(), &[0.0], &[0]).is_err());
        assert!(run_debug_experiment(&small_params(), &[0.6], &[0]).is_err());
    }

    #[test]
    fn random_baseline_precision_tracks_flip_fraction() {
        let fraction = 0.25;
        let seeds: Vec<u64> = (0..20).collect();
        let reports = run_debug_experiment(&small_params(), &[fraction], &seeds).unwrap();
        let mut hits = 0usize;
        let mut draws = 0usize;
        for report in &reports {
            hits += intersect_count(&report.flipped_ids, &report.random.selected_ids);
            draws += report.random.top_k;
        }
        assert!(draws > 0, "no draws across seeds");
        let observed = hits as f64 / draws as f64;
        let se = (fraction * (1.0 - fraction) / draws as f64).sqrt();
        assert!(
            (observed - fraction).abs() <= 3.0 * se,
            "random precision {observed:.3} vs expected {fraction} (3se = {:.3})",
            3.0 * se
        );
    }

    #[test]
    fn poison_runs_are_deterministic_and_structured() {
        let params = PoisonParams::default();
        let a = run_poison_experiment(3, &params, 5).unwrap();
        let b = run_poison_experiment(3, &params, 5).unwrap();
        assert_eq!(a.len(), 3);
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
        for outcome in &a {
            if outcome.attack_failed {
                assert!(outcome.size_poisoned.is_none());
                assert!(outcome.poison_rank.is_none());
            } else {
                assert!(outcome.size_poisoned.is_some());
            }
        }
        assert!(run_poison_experiment(0, &params, 5).unwrap().is_empty());
    }

    #[test]
    fn bound_toy_matches_hand_derived_gap() {
        // Quadratic-loss mean estimation, y = {0, 1, 1}: Newton removal gives
        // 8/9, exact retrain gives 1; through the identity probe map the
        // observed error is their 1/9 gap.
        let newton: f64 = 2.0 / 3.0 + (1.0 / 3.0) * (2.0 / 3.0);
        let retrain: f64 = 1.0;
        let observed = (newton - retrain).abs();
        assert!((observed - 1.0 / 9.0).abs() <= 1e-12);
    }

    #[test]
    fn bound_formula_shrinks_with_alpha_as_cubed_ratio() {
        let (n, l_f, l_h, n_g, lambda_min) = (50, 1.5, 2.0, 0.8, 0.2);
        let alpha = 0.4;
        let b1 = bound_formula(n, l_f, l_h, n_g, lambda_min, alpha);
        let b2 = bound_formula(n, l_f, l_h, n_g, lambda_min, 2.0 * alpha);
        let ratio = (lambda_min + alpha).powi(3) / (lambda_min + 2.0 * alpha).powi(3);
        assert!((b2 - b1 * ratio).abs() <= 1e-12 * b1);
        assert!(b2 < b1);
    }

    #[test]
    fn bound_holds_and_error_shrinks_on_small_dataset() {
        let ds = data::gen_halfmoon(30, 0.2, 17).unwrap();
        let estimates = check_bound(&ds, &[1.0, 10.0]).unwrap();
        assert_eq!(estimates.len(), 2);
        for est in &estimates {
            assert_eq!(est.cells.len(), 30);
            assert!(
                !est.violated(),
                "alpha {}: observed {} > bound {}",
                est.alpha,
                est.observed_error,
                est.bound_value
            );
            for cell in &est.cells {
                assert!(cell.error <= est.observed_error);
            }
            assert!(est.cells.iter().any(|c| c.error == est.observed_error));
        }
        assert!(estimates[1].observed_error <= estimates[0].observed_error);
        assert!(check_bound(&ds, &[0.0]).is_err());
    }

    #[test]
    fn writers_emit_versioned_tables() {
        let dir = tempdir().unwrap();
        let reports = run_debug_experiment(&small_params(), &[0.3], &[0]).unwrap();
        let debug_path = dir.path().join("debug.csv");
        write_debug_csv(&reports, &debug_path).unwrap();
        let text = std::fs::read_to_string(&debug_path).unwrap();
        assert!(text.starts_with("schema_version,"));
        assert_eq!(text.lines().count(), 3);

        let outcomes = run_poison_experiment(2, &PoisonParams::default(), 1).unwrap();
        let poison_path = dir.path().join("poison.csv");
        write_poison_csv(&outcomes, &poison_path).unwrap();
        assert_eq!(
            std::fs::read_to_string(&poison_path)
                .unwrap()
                .lines()
                .count(),
            3
        );

        let ds = data::gen_halfmoon(10, 0.2, 3).unwrap();
        let estimates = check_bound(&ds, &[1.0]).unwrap();
        let bound_path = dir.path().join("bound.csv");
        write_bound_csv(&estimates, &bound_path).unwrap();
        assert_eq!(
            std::fs::read_to_string(&bound_path)
                .unwrap()
                .lines()
                .count(),
            11
        );

        let json_path = dir.path().join("debug.json");
        write_json(&reports, &json_path).unwrap();
        let parsed: Vec<DebugReport> =
            serde_json::from_str(&std::fs::read_to_string(&json_path).unwrap()).unwrap();
        assert_eq!(parsed.len(), reports.len());
    }
}
