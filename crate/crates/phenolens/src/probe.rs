//! Linear probing of frozen representations: class-weighted softmax
//! cross-entropy, seeded mini-batch SGD, early stopping on validation
//! accuracy, and the evaluation metrics (accuracy, per-class recall,
//! row-normalized confusion matrix).
//!
//! Probes initialize at zero (the objective is convex) and break argmax ties
//! toward the lowest class index, so training and prediction are fully
//! deterministic.

use ndarray::{Array1, Array2};

use crate::embedding::EmbeddingSet;
use crate::error::{Error, Result};
use crate::rng::SplitMix64;

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    pub max_epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Evaluations without validation-accuracy improvement before stopping.
    pub patience: usize,
    /// Epochs between validation evaluations.
    pub eval_interval: usize,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            max_epochs: 200,
            lr: 0.2,
            batch_size: 32,
            patience: 10,
            eval_interval: 1,
            seed: 42,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::invalid_config("lr", "must be > 0"));
        }
        if self.patience == 0 {
            return Err(Error::invalid_config("patience", "must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid_config("batch_size", "must be >= 1"));
        }
        if self.eval_interval == 0 {
            return Err(Error::invalid_config("eval_interval", "must be >= 1"));
        }
        Ok(())
    }
}

/// Trained linear classifier.
#[derive(Debug, Clone)]
pub struct ProbeParams {
    pub classes: Vec<String>,
    /// Loss weight per class.
    pub class_weights: Vec<f64>,
    /// K x D weight matrix.
    pub weights: Array2<f32>,
    /// K biases.
    pub bias: Array1<f32>,
}

impl ProbeParams {
    pub fn dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }
}

/// Inverse-frequency class weights `w_i = n / (n_i * C)`; balanced counts
/// give exactly 1 for every class, and `sum_i n_i * w_i = n`.
pub fn class_weights(counts: &[usize]) -> Result<Vec<f64>> {
    if counts.is_empty() {
        return Err(Error::EmptyInput("no class counts".into()));
    }
    if let Some(k) = counts.iter().position(|&c| c == 0) {
        return Err(Error::EmptyClass(format!("class index {k} has zero samples")));
    }
    let n: usize = counts.iter().sum();
    let c = counts.len();
    Ok(counts
        .iter()
        .map(|&n_i| n as f64 / (n_i as f64 * c as f64))
        .collect())
}

/// Affine scores of one representation, accumulated in f64.
fn scores(probe: &ProbeParams, h: ndarray::ArrayView1<'_, f64>) -> Vec<f64> {
    (0..probe.n_classes())
        .map(|k| {
            let wrow = probe.weights.row(k);
            let mut acc = probe.bias[k] as f64;
            for (hv, wv) in h.iter().zip(wrow.iter()) {
                acc += hv * (*wv as f64);
            }
            acc
        })
        .collect()
}

/// Argmax with ties resolved to the lowest class index.
fn argmax_low(scores: &[f64]) -> usize {
    let mut best = 0usize;
    for (k, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = k;
        }
    }
    best
}

fn class_indices(set: &EmbeddingSet, classes: &[String]) -> Result<Vec<usize>> {
    let labels = set.require_labels()?;
    labels
        .iter()
        .map(|l| {
            classes.iter().position(|c| c == l).ok_or_else(|| {
                Error::ClassMismatch(format!("label `{l}` is not in the training class list"))
            })
        })
        .collect()
}

fn predict_indices(probe: &ProbeParams, set: &EmbeddingSet) -> Result<Vec<usize>> {
    if set.dim() != probe.dim() {
        return Err(Error::DimensionMismatch(format!(
            "embeddings have dim {} but probe expects {}",
            set.dim(),
            probe.dim()
        )));
    }
    Ok((0..set.len())
        .map(|i| argmax_low(&scores(probe, set.reps.row(i))))
        .collect())
}

fn accuracy_against(probe: &ProbeParams, set: &EmbeddingSet, truth: &[usize]) -> Result<f64> {
    let predicted = predict_indices(probe, set)?;
    let correct = predicted.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(correct as f64 / truth.len() as f64)
}

/// Train a linear probe with class-weighted softmax cross-entropy. Returns
/// the parameters from the best validation evaluation and that accuracy.
/// The initial (zero) parameters count as the first evaluation.
pub fn train_probe(
    train: &EmbeddingSet,
    val: &EmbeddingSet,
    cfg: &ProbeConfig,
) -> Result<(ProbeParams, f64)> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::EmptyInput("probe training needs non-empty train and val sets".into()));
    }
    if train.dim() != val.dim() {
        return Err(Error::DimensionMismatch(format!(
            "train dim {} vs val dim {}",
            train.dim(),
            val.dim()
        )));
    }
    let classes = train.class_list();
    if classes.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "probe needs at least 2 classes, got {}",
            classes.len()
        )));
    }
    let train_y = class_indices(train, &classes)?;
    let val_y = class_indices(val, &classes)?;

    let mut counts = vec![0usize; classes.len()];
    for &y in &train_y {
        counts[y] += 1;
    }
    let weights = class_weights(&counts)?;

    let dim = train.dim();
    let k_classes = classes.len();
    let mut probe = ProbeParams {
        classes,
        class_weights: weights,
        weights: Array2::zeros((k_classes, dim)),
        bias: Array1::zeros(k_classes),
    };

    let mut best_acc = accuracy_against(&probe, val, &val_y)?;
    let mut best = probe.clone();
    let mut stale_evals = 0usize;

    let root = SplitMix64::new(cfg.seed);
    'training: for epoch in 1..=cfg.max_epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        root.child(&[6, epoch as u64]).shuffle(&mut order);

        for batch in order.chunks(cfg.batch_size) {
            let inv_batch = 1.0 / batch.len() as f64;
            let mut d_w = Array2::<f64>::zeros((k_classes, dim));
            let mut d_b = vec![0.0f64; k_classes];
            for &i in batch {
                let h = train.reps.row(i);
                let s = scores(&probe, h);
                let max = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = s.iter().map(|v| (v - max).exp()).collect();
                let denom: f64 = exps.iter().sum();
                let y = train_y[i];
                let wy = probe.class_weights[y];
                for k in 0..k_classes {
                    let p = exps[k] / denom;
                    let target = if k == y { 1.0 } else { 0.0 };
                    let coeff = wy * (p - target) * inv_batch;
                    d_b[k] += coeff;
                    let mut dw_row = d_w.row_mut(k);
                    let ds = dw_row.as_slice_mut().expect("standard layout");
                    for (dv, hv) in ds.iter_mut().zip(h.iter()) {
                        *dv += coeff * hv;
                    }
                }
            }
            for k in 0..k_classes {
                for d in 0..dim {
                    probe.weights[[k, d]] =
                        (probe.weights[[k, d]] as f64 - cfg.lr * d_w[[k, d]]) as f32;
                }
                probe.bias[k] = (probe.bias[k] as f64 - cfg.lr * d_b[k]) as f32;
            }
        }

        if epoch % cfg.eval_interval == 0 {
            let acc = accuracy_against(&probe, val, &val_y)?;
            if acc > best_acc {
                best_acc = acc;
                best = probe.clone();
                stale_evals = 0;
            } else {
                stale_evals += 1;
                if stale_evals >= cfg.patience {
                    break 'training;
                }
            }
        }
    }
    Ok((best, best_acc))
}

/// Predicted class labels.
pub fn predict(probe: &ProbeParams, set: &EmbeddingSet) -> Result<Vec<String>> {
    Ok(predict_indices(probe, set)?
        .into_iter()
        .map(|k| probe.classes[k].clone())
        .collect())
}

/// Evaluation metrics over a labeled set.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct Metrics {
    pub classes: Vec<String>,
    pub accuracy: f64,
    /// Recall per class; 0 where the class has no support.
    pub per_class_recall: Vec<f64>,
    /// Row-normalized over the true class; rows with zero support are
    /// all-zero (see `support`).
    pub confusion: Vec<Vec<f64>>,
    pub support: Vec<usize>,
}

/// Accuracy, per-class recall, and the row-normalized confusion matrix of
/// `probe` on a labeled set.
pub fn evaluate(probe: &ProbeParams, set: &EmbeddingSet) -> Result<Metrics> {
    if set.is_empty() {
        return Err(Error::EmptyInput("cannot evaluate on an empty set".into()));
    }
    let truth = class_indices(set, &probe.classes)?;
    let predicted = predict_indices(probe, set)?;
    let k_classes = probe.n_classes();
    let mut counts = vec![vec![0usize; k_classes]; k_classes];
    for (&t, &p) in truth.iter().zip(&predicted) {
        counts[t][p] += 1;
    }
    let support: Vec<usize> = counts.iter().map(|row| row.iter().sum()).collect();
    let total: usize = support.iter().sum();
    let correct: usize = (0..k_classes).map(|k| counts[k][k]).sum();
    let confusion: Vec<Vec<f64>> = counts
        .iter()
        .zip(&support)
        .map(|(row, &n)| {
            if n == 0 {
                vec![0.0; k_classes]
            } else {
                row.iter().map(|&c| c as f64 / n as f64).collect()
            }
        })
        .collect();
    let per_class_recall: Vec<f64> = (0..k_classes)
        .map(|k| {
            if support[k] == 0 {
                0.0
            } else {
                counts[k][k] as f64 / support[k] as f64
            }
        })
        .collect();
    Ok(Metrics {
        classes: probe.classes.clone(),
        accuracy: correct as f64 / total as f64,
        per_class_recall,
        confusion,
        support,
    })
}

/// Stratified label-efficiency sweep: for each fraction, train a probe on a
/// seeded per-class subsample (original row order preserved) and report test
/// accuracy. Fraction 1.0 reproduces the full-set probe exactly.
pub fn label_fraction_curve(
    train: &EmbeddingSet,
    val: &EmbeddingSet,
    test: &EmbeddingSet,
    fractions: &[f64],
    cfg: &ProbeConfig,
) -> Result<Vec<(f64, f64)>> {
    if fractions.is_empty() {
        return Err(Error::invalid_config("fractions", "must be non-empty"));
    }
    if fractions.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid_config("fractions", "must be strictly ascending"));
    }
    if fractions.iter().any(|&f| !(f > 0.0 && f <= 1.0)) {
        return Err(Error::invalid_config("fractions", "must lie in (0, 1]"));
    }
    let labels = train.require_labels()?;
    let classes = train.class_list();
    let root = SplitMix64::new(cfg.seed);

    let mut out = Vec::with_capacity(fractions.len());
    for (f_idx, &fraction) in fractions.iter().enumerate() {
        let mut chosen = Vec::new();
        for (k, class) in classes.iter().enumerate() {
            let members: Vec<usize> = labels
                .iter()
                .enumerate()
                .filter(|(_, l)| **l == class.as_str())
                .map(|(i, _)| i)
                .collect();
            let want = (fraction * members.len() as f64).round() as usize;
            if want == 0 {
                return Err(Error::Stratification(format!(
                    "fraction {fraction} keeps no samples of class `{class}` ({} available)",
                    members.len()
                )));
            }
            let mut pool = members;
            root.child(&[7, f_idx as u64, k as u64]).shuffle(&mut pool);
            chosen.extend_from_slice(&pool[..want.min(pool.len())]);
        }
        chosen.sort_unstable();
        let subset = train.select(&chosen)?;
        let (probe, _) = train_probe(&subset, val, cfg)?;
        let metrics = evaluate(&probe, test)?;
        out.push((fraction, metrics.accuracy));
    }
    Ok(out)
}
