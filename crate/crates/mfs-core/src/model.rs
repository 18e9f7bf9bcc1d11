//! Binary logistic classifier with L2-regularized cross-entropy loss.
//!
//! Parameters are `d` weights followed by an unregularized intercept. All
//! quantities (loss, gradient, Hessian, log-odds) are exact analytic forms;
//! probabilities go through numerically stable formulations. Logits are
//! clamped to ±30 for loss evaluation only, never for derivatives.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::exec;

/// Logit magnitude beyond which the loss saturates.
const LOGIT_CLAMP: f64 = 30.0;

/// One training point: stable id, feature vector, binary label.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub id: usize,
    pub features: Vec<f64>,
    pub label: u8,
}

impl Instance {
    pub fn new(id: usize, features: Vec<f64>, label: u8) -> Result<Self> {
        if label > 1 {
            return Err(Error::InvalidParam(format!(
                "label must be 0 or 1, got {label}"
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParam(format!(
                "instance {id} has non-finite features"
            )));
        }
        Ok(Self {
            id,
            features,
            label,
        })
    }
}

/// Indexed training set with logical removal.
///
/// Instances keep their ids across removals; removal only clears a slot in
/// the active mask. Instances are stored in ascending id order.
#[derive(Debug, Clone)]
pub struct Dataset {
    instances: Vec<Instance>,
    dim: usize,
    active: Vec<bool>,
}

impl Dataset {
    pub fn new(instances: Vec<Instance>) -> Result<Self> {
        if instances.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let dim = instances[0].features.len();
        for inst in &instances {
            if inst.features.len() != dim {
                return Err(Error::Shape {
                    expected: dim,
                    got: inst.features.len(),
                });
            }
        }
        let mut sorted = instances;
        sorted.sort_by_key(|i| i.id);
        if sorted.windows(2).any(|w| w[0].id == w[1].id) {
            return Err(Error::InvalidParam("duplicate instance ids".into()));
        }
        let n = sorted.len();
        Ok(Self {
            instances: sorted,
            dim,
            active: vec![true; n],
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn active_count(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }

    pub fn instances(&self) -> &[Instance] {
        &self.instances
    }

    pub fn active_instances(&self) -> impl Iterator<Item = &Instance> {
        self.instances
            .iter()
            .zip(&self.active)
            .filter(|(_, &a)| a)
            .map(|(i, _)| i)
    }

    /// Active instances collected into a slice-friendly vector of references.
    pub fn active_vec(&self) -> Vec<&Instance> {
        self.active_instances().collect()
    }

    fn index_of(&self, id: usize) -> Option<usize> {
        self.instances.binary_search_by_key(&id, |i| i.id).ok()
    }

    pub fn get(&self, id: usize) -> Option<&Instance> {
        self.index_of(id).map(|ix| &self.instances[ix])
    }

    pub fn is_active(&self, id: usize) -> bool {
        self.index_of(id).map(|ix| self.active[ix]).unwrap_or(false)
    }

    /// Logically remove an instance. The last active instance cannot be
    /// removed; the active count stays at least one.
    pub fn deactivate(&mut self, id: usize) -> Result<()> {
        let ix = self.index_of(id).ok_or(Error::InactiveInstance(id))?;
        if !self.active[ix] {
            return Err(Error::InactiveInstance(id));
        }
        if self.active_count() == 1 {
            return Err(Error::EmptyDataset);
        }
        self.active[ix] = false;
        Ok(())
    }

    /// Flip the stored label of an instance in place.
    pub fn set_label(&mut self, id: usize, label: u8) -> Result<()> {
        if label > 1 {
            return Err(Error::InvalidParam(format!("label {label}")));
        }
        let ix = self.index_of(id).ok_or(Error::InactiveInstance(id))?;
        self.instances[ix].label = label;
        Ok(())
    }

    /// Append a new instance with an id one past the current maximum.
    pub fn push(&mut self, features: Vec<f64>, label: u8) -> Result<usize> {
        if features.len() != self.dim {
            return Err(Error::Shape {
                expected: self.dim,
                got: features.len(),
            });
        }
        let id = self.instances.last().map(|i| i.id + 1).unwrap_or(0);
        self.instances.push(Instance::new(id, features, label)?);
        self.active.push(true);
        Ok(id)
    }

    /// Copy of this dataset with the given ids deactivated.
    pub fn without(&self, ids: &[usize]) -> Result<Dataset> {
        let mut out = self.clone();
        for &id in ids {
            out.deactivate(id)?;
        }
        Ok(out)
    }
}

/// Classifier parameters: `d` weights plus intercept, and the L2 strength
/// applied to the weights only.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub theta: DVector<f64>,
    pub alpha: f64,
}

impl ModelParams {
    pub fn new(theta: DVector<f64>, alpha: f64) -> Result<Self> {
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalFailure("non-finite parameters".into()));
        }
        if !(alpha >= 0.0) {
            return Err(Error::InvalidParam(format!(
                "alpha must be >= 0, got {alpha}"
            )));
        }
        Ok(Self { theta, alpha })
    }

    pub fn zeros(dim: usize, alpha: f64) -> Result<Self> {
        Self::new(DVector::zeros(dim + 1), alpha)
    }

    /// Feature dimension `d` (parameter length minus intercept).
    pub fn dim(&self) -> usize {
        self.theta.len() - 1
    }

    fn check_dim(&self, features: &[f64]) -> Result<()> {
        if features.len() != self.dim() {
            return Err(Error::Shape {
                expected: self.dim(),
                got: features.len(),
            });
        }
        Ok(())
    }
}

/// The statement being explained: the model assigns class `decided_class`
/// at `x_star`, with slack `epsilon` on the counterfactual constraint.
#[derive(Debug, Clone, PartialEq)]
pub struct Claim {
    pub x_star: Vec<f64>,
    pub decided_class: u8,
    pub epsilon: f64,
}

impl Claim {
    pub fn new(x_star: Vec<f64>, decided_class: u8, epsilon: f64) -> Result<Self> {
        if !(epsilon >= 0.0) {
            return Err(Error::InvalidParam(format!(
                "epsilon must be >= 0, got {epsilon}"
            )));
        }
        if decided_class > 1 {
            return Err(Error::InvalidParam(format!(
                "decided class must be 0 or 1, got {decided_class}"
            )));
        }
        Ok(Self {
            x_star,
            decided_class,
            epsilon,
        })
    }

    /// Build a claim from the model's own decision at `x_star`.
    pub fn from_model(params: &ModelParams, x_star: Vec<f64>, epsilon: f64) -> Result<Self> {
        let decided = predict_class(params, &x_star)?;
        Self::new(x_star, decided, epsilon)
    }

    /// The counterfactual class the constraint pushes toward.
    pub fn counter_class(&self) -> u8 {
        1 - self.decided_class
    }
}

/// θᵀ[x;1]: the raw log-odds toward class 1.
pub fn logit(params: &ModelParams, features: &[f64]) -> Result<f64> {
    params.check_dim(features)?;
    let d = params.dim();
    let mut z = params.theta[d];
    for (w, x) in params.theta.iter().take(d).zip(features) {
        z += w * x;
    }
    Ok(z)
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// p(class 1 | x).
pub fn predict_proba(params: &ModelParams, features: &[f64]) -> Result<f64> {
    Ok(sigmoid(logit(params, features)?))
}

/// Predicted class; the boundary tie goes to class 1.
pub fn predict_class(params: &ModelParams, features: &[f64]) -> Result<u8> {
    Ok(if logit(params, features)? >= 0.0 {
        1
    } else {
        0
    })
}

/// Stable binary cross-entropy at (possibly clamped) logit `z`.
fn bce(z: f64, y: u8) -> f64 {
    let zc = z.clamp(-LOGIT_CLAMP, LOGIT_CLAMP);
    zc.max(0.0) - zc * f64::from(y) + (-zc.abs()).exp().ln_1p()
}

/// Cross-entropy of one instance; regularization excluded.
pub fn per_sample_loss(instance: &Instance, params: &ModelParams) -> Result<f64> {
    let z = logit(params, &instance.features)?;
    Ok(bce(z, instance.label))
}

/// Mean cross-entropy over active instances plus (α/2)‖w‖² on the weights.
pub fn total_loss(dataset: &Dataset, params: &ModelParams) -> Result<f64> {
    let active = dataset.active_vec();
    if active.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if dataset.dim() != params.dim() {
        return Err(Error::Shape {
            expected: params.dim(),
            got: dataset.dim(),
        });
    }
    let losses = exec::ordered_map(&active, |inst| {
        let z = logit(params, &inst.features).expect("dim checked");
        bce(z, inst.label)
    });
    let mean = exec::pairwise_sum(&losses) / active.len() as f64;
    let d = params.dim();
    let ridge: f64 = (0..d).map(|j| params.theta[j] * params.theta[j]).sum();
    Ok(mean + 0.5 * params.alpha * ridge)
}

/// Gradient of one instance's loss: (σ(z) − y)·[x;1]. No regularization.
pub fn gradient_instance(instance: &Instance, params: &ModelParams) -> Result<DVector<f64>> {
    let z = logit(params, &instance.features)?;
    let r = sigmoid(z) - f64::from(instance.label);
    let d = params.dim();
    let mut g = DVector::zeros(d + 1);
    for j in 0..d {
        g[j] = r * instance.features[j];
    }
    g[d] = r;
    Ok(g)
}

/// Gradient of `total_loss`: mean per-sample gradient plus α on the weights.
pub fn gradient_total(dataset: &Dataset, params: &ModelParams) -> Result<DVector<f64>> {
    let active = dataset.active_vec();
    if active.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if dataset.dim() != params.dim() {
        return Err(Error::Shape {
            expected: params.dim(),
            got: dataset.dim(),
        });
    }
    let d = params.dim();
    let residuals = exec::ordered_map(&active, |inst| {
        let z = logit(params, &inst.features).expect("dim checked");
        sigmoid(z) - f64::from(inst.label)
    });
    let n = active.len() as f64;
    let mut g = DVector::zeros(d + 1);
    // Fixed accumulation order keeps results identical across build variants.
    for (inst, &r) in active.iter().zip(&residuals) {
        for j in 0..d {
            g[j] += r * inst.features[j];
        }
        g[d] += r;
    }
    g /= n;
    for j in 0..d {
        g[j] += params.alpha * params.theta[j];
    }
    Ok(g)
}

/// Hessian of `total_loss`: mean of σ(1−σ)[x;1][x;1]ᵀ plus α on the weight
/// block diagonal. Symmetric by construction.
pub fn hessian(dataset: &Dataset, params: &ModelParams) -> Result<DMatrix<f64>> {
    let active = dataset.active_vec();
    if active.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if dataset.dim() != params.dim() {
        return Err(Error::Shape {
            expected: params.dim(),
            got: dataset.dim(),
        });
    }
    let d = params.dim();
    let weights = exec::ordered_map(&active, |inst| {
        let z = logit(params, &inst.features).expect("dim checked");
        let s = sigmoid(z);
        s * (1.0 - s)
    });
    let n = active.len() as f64;
    let mut h = DMatrix::zeros(d + 1, d + 1);
    let mut phi = vec![0.0; d + 1];
    for (inst, &w) in active.iter().zip(&weights) {
        phi[..d].copy_from_slice(&inst.features);
        phi[d] = 1.0;
        for r in 0..=d {
            let wr = w * phi[r];
            for c in r..=d {
                h[(r, c)] += wr * phi[c];
            }
        }
    }
    h /= n;
    for r in 0..=d {
        for c in (r + 1)..=d {
            h[(c, r)] = h[(r, c)];
        }
    }
    for j in 0..d {
        h[(j, j)] += params.alpha;
    }
    Ok(h)
}

/// Signed log-odds toward class `toward` and its gradient in θ.
///
/// For the logistic model this is ±θᵀ[x;1], exactly linear in θ, so the
/// gradient ±[x;1] is constant.
pub fn log_odds(params: &ModelParams, x: &[f64], toward: u8) -> Result<(f64, DVector<f64>)> {
    let z = logit(params, x)?;
    let s = if toward == 1 { 1.0 } else { -1.0 };
    let d = params.dim();
    let mut g = DVector::zeros(d + 1);
    for j in 0..d {
        g[j] = s * x[j];
    }
    g[d] = s;
    Ok((s * z, g))
}
