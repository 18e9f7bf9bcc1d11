//! Dataset generation, CSV ingestion, and corruption utilities.
//!
//! Generators are pure functions of their parameters and seed. CSV files use
//! a header row, '.' decimal separator, and a named 0/1 label column.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::DVector;
use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{self, Dataset, Instance};
use crate::solver;

/// Ground truth of a label-flipping corruption, the set B in the debugging
/// experiments.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorruptionLog {
    pub flipped_ids: Vec<usize>,
    pub flip_fraction: f64,
    pub seed: u64,
}

/// Record of an injected poison instance. `base_label` is the clean model's
/// prediction at `target_x`; the poison instance carries the opposite label.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PoisonRecord {
    pub poison_id: usize,
    pub target_x: Vec<f64>,
    pub base_label: u8,
}

/// Two interleaving crescents of n/2 points each in 2-D, Gaussian jitter of
/// scale `noise`. Class 0 sits on the upper unit semicircle, class 1 on the
/// shifted lower semicircle. Deterministic per seed.
pub fn gen_halfmoon(n: usize, noise: f64, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    if !n.is_multiple_of(2) {
        return Err(Error::Shape {
            expected: n - 1,
            got: n,
        });
    }
    if !(noise >= 0.0) {
        return Err(Error::InvalidParam(format!(
            "noise must be >= 0, got {noise}"
        )));
    }
    let m = n / 2;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut instances = Vec::with_capacity(n);
    let angle = |k: usize| {
        if m == 1 {
            0.5 * PI
        } else {
            PI * k as f64 / (m - 1) as f64
        }
    };
    for k in 0..m {
        let t = angle(k);
        let x = vec![
            t.cos() + noise * normal.sample(&mut rng),
            t.sin() + noise * normal.sample(&mut rng),
        ];
        instances.push(Instance::new(k, x, 0)?);
    }
    for k in 0..m {
        let t = angle(k);
        let x = vec![
            1.0 - t.cos() + noise * normal.sample(&mut rng),
            0.5 - t.sin() + noise * normal.sample(&mut rng),
        ];
        instances.push(Instance::new(m + k, x, 1)?);
    }
    Dataset::new(instances)
}

/// Two isotropic 2-D Gaussian blobs of n/2 points each, class 0 centered at
/// (-separation/2, 0) and class 1 at (+separation/2, 0), both with standard
/// deviation `spread`. Deterministic per seed.
pub fn gen_blobs(n: usize, separation: f64, spread: f64, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    if !n.is_multiple_of(2) {
        return Err(Error::Shape {
            expected: n - 1,
            got: n,
        });
    }
    if !(spread >= 0.0) {
        return Err(Error::InvalidParam(format!(
            "spread must be >= 0, got {spread}"
        )));
    }
    let m = n / 2;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut instances = Vec::with_capacity(n);
    for (label, center) in [(0u8, -0.5 * separation), (1u8, 0.5 * separation)] {
        for k in 0..m {
            let x = vec![
                center + spread * normal.sample(&mut rng),
                spread * normal.sample(&mut rng),
            ];
            instances.push(Instance::new(label as usize * m + k, x, label)?);
        }
    }
    Dataset::new(instances)
}

/// Write the active view of a dataset: header `f0,..,f{d-1},label`, one row
/// per active instance. Floats print in shortest round-trip form.
pub fn save_csv(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    let d = dataset.dim();
    let mut header: Vec<String> = (0..d).map(|j| format!("f{j}")).collect();
    header.push("label".into());
    writer.write_record(&header)?;
    for inst in dataset.active_instances() {
        let mut row: Vec<String> = inst.features.iter().map(|v| format!("{v}")).collect();
        row.push(format!("{}", inst.label));
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}

/// Parse a CSV file into a dataset. `label_col` names the 0/1 label column;
/// every other column is a feature, in header order. Ids follow row order.
/// Errors name the 1-based file line (the header is line 1).
pub fn load_csv(path: &Path, label_col: &str) -> Result<Dataset> {
    let display = path.display().to_string();
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let label_ix = headers
        .iter()
        .position(|h| h == label_col)
        .ok_or_else(|| Error::Parse {
            path: display.clone(),
            line: 1,
            msg: format!("label column {label_col:?} not found in header"),
        })?;
    let mut instances = Vec::new();
    for (row_ix, record) in reader.records().enumerate() {
        let record = record?;
        let line = record
            .position()
            .map(|p| p.line())
            .unwrap_or(row_ix as u64 + 2);
        let parse_err = |msg: String| Error::Parse {
            path: display.clone(),
            line,
            msg,
        };
        let mut features = Vec::with_capacity(headers.len().saturating_sub(1));
        let mut label = None;
        for (col_ix, field) in record.iter().enumerate() {
            let value: f64 = field.trim().parse().map_err(|_| {
                parse_err(format!(
                    "invalid number {field:?} in column {:?}",
                    &headers[col_ix]
                ))
            })?;
            if !value.is_finite() {
                return Err(parse_err(format!(
                    "non-finite value in column {:?}",
                    &headers[col_ix]
                )));
            }
            if col_ix == label_ix {
                if value == 0.0 {
                    label = Some(0u8);
                } else if value == 1.0 {
                    label = Some(1u8);
                } else {
                    return Err(parse_err(format!("unknown label value {field:?}")));
                }
            } else {
                features.push(value);
            }
        }
        let label = label.ok_or_else(|| parse_err("missing label field".into()))?;
        instances.push(Instance::new(instances.len(), features, label)?);
    }
    Dataset::new(instances)
}

/// Invert the labels of round(fraction·n) uniformly sampled instances.
/// Flipping twice with the same seed restores the original labels.
pub fn flip_labels(
    dataset: &Dataset,
    fraction: f64,
    seed: u64,
) -> Result<(Dataset, CorruptionLog)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidParam(format!(
            "flip fraction must be in (0, 1), got {fraction}"
        )));
    }
    let n = dataset.len();
    let k = (fraction * n as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut flipped_ids: Vec<usize> = rand::seq::index::sample(&mut rng, n, k)
        .into_iter()
        .map(|pos| dataset.instances()[pos].id)
        .collect();
    flipped_ids.sort_unstable();
    let mut out = dataset.clone();
    for &id in &flipped_ids {
        let label = out.get(id).expect("sampled id exists").label;
        out.set_label(id, 1 - label)?;
    }
    Ok((
        out,
        CorruptionLog {
            flipped_ids,
            flip_fraction: fraction,
            seed,
        },
    ))
}

/// Append one poison instance near `target_x`: uniform jitter within the
/// radius ball, labeled opposite to what a model trained on the clean data
/// (at regularization `alpha`) predicts at `target_x`.
pub fn inject_poison(
    dataset: &Dataset,
    target_x: &[f64],
    radius: f64,
    alpha: f64,
    seed: u64,
) -> Result<(Dataset, PoisonRecord)> {
    if !(radius > 0.0) {
        return Err(Error::InvalidParam(format!(
            "radius must be > 0, got {radius}"
        )));
    }
    let d = dataset.dim();
    if target_x.len() != d {
        return Err(Error::Shape {
            expected: d,
            got: target_x.len(),
        });
    }
    let clean = solver::train(dataset, alpha, 1e-8, 100)?;
    let base_label = model::predict_class(&clean, target_x)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dir = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
    if dir.norm() < 1e-12 {
        dir[0] = 1.0;
    }
    dir.normalize_mut();
    let r = radius * rng.random::<f64>().powf(1.0 / d as f64);
    let features: Vec<f64> = (0..d).map(|j| target_x[j] + r * dir[j]).collect();
    let mut out = dataset.clone();
    let poison_id = out.push(features, 1 - base_label)?;
    Ok((
        out,
        PoisonRecord {
            poison_id,
            target_x: target_x.to_vec(),
            base_label,
        },
    ))
}

/// Sparse nonnegative count vectors from two class-conditional multinomials
/// with partially overlapping support. The first third of the vocabulary is
/// a Zipf head of function words shared by both classes and carrying about
/// half of each document; the remainder splits into two content bands, each
/// sampled heavily by its own class and lightly by the other. Document
/// lengths are Poisson(12), labels alternate by id. Deterministic per seed.
pub fn gen_bow_spamlike(n: usize, vocab: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    if vocab < 2 {
        return Err(Error::InvalidParam(format!(
            "vocab must be >= 2, got {vocab}"
        )));
    }
    const LEAK: f64 = 0.3;
    let head = vocab / 3;
    let rest = vocab - head;
    let split = head + (rest - rest / 2);
    let head_harmonic: f64 = (0..head).map(|r| 1.0 / (r + 1) as f64).sum();
    let class_weights = |own: std::ops::Range<usize>, other: std::ops::Range<usize>| {
        let mut w = vec![0.0; vocab];
        let band_mass = own.len() as f64 + LEAK * other.len() as f64;
        if head > 0 {
            let scale = band_mass / head_harmonic;
            for (r, slot) in w.iter_mut().take(head).enumerate() {
                *slot = scale / (r + 1) as f64;
            }
        }
        for j in own {
            w[j] = 1.0;
        }
        for j in other {
            w[j] = LEAK;
        }
        w
    };
    let w0 = class_weights(head..split, split..vocab);
    let w1 = class_weights(split..vocab, head..split);
    let dist0 = WeightedIndex::new(&w0)
        .map_err(|e| Error::InvalidParam(format!("class 0 weights: {e}")))?;
    let dist1 = WeightedIndex::new(&w1)
        .map_err(|e| Error::InvalidParam(format!("class 1 weights: {e}")))?;
    let poisson = Poisson::new(12.0).expect("positive rate");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut instances = Vec::with_capacity(n);
    for i in 0..n {
        let label = (i % 2) as u8;
        let draw: f64 = poisson.sample(&mut rng);
        let len = (draw.round() as usize).max(1);
        let mut counts = vec![0.0; vocab];
        let dist = if label == 0 { &dist0 } else { &dist1 };
        for _ in 0..len {
            counts[rng.sample(dist)] += 1.0;
        }
        instances.push(Instance::new(i, counts, label)?);
    }
    Dataset::new(instances)
}
