//! NT-Xent contrastive objective and the self-supervised training loop.
//!
//! Rows 2i and 2i+1 of the projection matrix are the two views of sample i
//! (interleaved positive-pair layout). The loss for an anchor a with
//! positive p is `-log(exp(s_ap/t) / sum_{b != a} exp(s_ab/t))` with s the
//! dot product of unit rows; the reported value is the mean over all 2N
//! anchors. Softmax denominators are stabilized by per-anchor max
//! subtraction.

use std::time::Instant;

use ndarray::Array2;

use crate::data::augment::{make_views, AugmentPolicy};
use crate::data::ImageGrid;
use crate::encoder::{
    backward, encode, init_params, lr_at, project, sgd_momentum_step, EncoderArch, EncoderParams,
    LrSchedule, OptimizerState,
};
use crate::error::{Error, Result};
use crate::rng::SplitMix64;

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ContrastiveConfig {
    pub temperature: f64,
    /// Sample pairs per step; each step sees 2 * batch_size rows.
    pub batch_size: usize,
    pub epochs: usize,
    pub schedule: LrSchedule,
    pub augment: AugmentPolicy,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl ContrastiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(Error::invalid_config("temperature", "must be > 0"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid_config("batch_size", "must be >= 1"));
        }
        self.schedule.validate()?;
        self.augment.validate()?;
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid_config("momentum", "must be in [0, 1)"));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::invalid_config("weight_decay", "must be >= 0"));
        }
        Ok(())
    }
}

/// Per-epoch training trace.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct TrainLog {
    pub epoch_loss: Vec<f64>,
    /// Learning rate at the first step of each epoch.
    pub epoch_lr: Vec<f64>,
    pub epoch_seconds: Vec<f64>,
}

const UNIT_NORM_TOL: f64 = 1e-5;

fn validate_input(z: &Array2<f64>, temperature: f64) -> Result<()> {
    if !(temperature.is_finite() && temperature > 0.0) {
        return Err(Error::invalid_config("temperature", "must be > 0"));
    }
    let rows = z.nrows();
    if rows < 2 {
        return Err(Error::InsufficientData(format!(
            "need at least one pair (2 rows), got {rows}"
        )));
    }
    if rows % 2 != 0 {
        return Err(Error::DimensionMismatch(format!(
            "row count {rows} is odd; views must come in pairs"
        )));
    }
    for (i, row) in z.rows().into_iter().enumerate() {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > UNIT_NORM_TOL {
            return Err(Error::NotNormalized(format!("row {i} has norm {norm:.8}")));
        }
    }
    Ok(())
}

/// Pairwise dot products; the diagonal is never read.
fn similarities(z: &Array2<f64>) -> Array2<f64> {
    let n = z.nrows();
    let mut s = Array2::zeros((n, n));
    for a in 0..n {
        let za = z.row(a);
        let zas = za.as_slice().expect("standard layout");
        for b in (a + 1)..n {
            let zb = z.row(b);
            let dot = zas
                .iter()
                .zip(zb.as_slice().expect("standard layout"))
                .map(|(x, y)| x * y)
                .sum::<f64>();
            s[[a, b]] = dot;
            s[[b, a]] = dot;
        }
    }
    s
}

fn partner(a: usize) -> usize {
    a ^ 1
}

/// The NT-Xent formula on arbitrary rows (dot products taken as-is, no
/// renormalization). Used by finite-difference checks, which must evaluate
/// the formula slightly off the unit sphere; prefer [`nt_xent_loss`].
pub fn nt_xent_loss_unchecked(z: &Array2<f64>, temperature: f64) -> Result<f64> {
    if !(temperature.is_finite() && temperature > 0.0) {
        return Err(Error::invalid_config("temperature", "must be > 0"));
    }
    let n = z.nrows();
    if n < 2 || n % 2 != 0 {
        return Err(Error::InsufficientData(format!(
            "need an even row count >= 2, got {n}"
        )));
    }
    let s = similarities(z);
    let mut total = 0.0f64;
    for a in 0..n {
        let mut max = f64::NEG_INFINITY;
        for b in 0..n {
            if b != a {
                max = max.max(s[[a, b]] / temperature);
            }
        }
        let mut denom = 0.0f64;
        for b in 0..n {
            if b != a {
                denom += (s[[a, b]] / temperature - max).exp();
            }
        }
        let log_sum = max + denom.ln();
        total += log_sum - s[[a, partner(a)]] / temperature;
    }
    Ok((total / n as f64).max(0.0))
}

/// Mean NT-Xent loss over all anchors of unit-norm rows.
pub fn nt_xent_loss(z: &Array2<f64>, temperature: f64) -> Result<f64> {
    validate_input(z, temperature)?;
    nt_xent_loss_unchecked(z, temperature)
}

/// Exact gradient of [`nt_xent_loss`] with respect to each row of `z`.
pub fn nt_xent_grad(z: &Array2<f64>, temperature: f64) -> Result<Array2<f64>> {
    validate_input(z, temperature)?;
    let n = z.nrows();
    let p = z.ncols();
    let s = similarities(z);

    // g[a][b] = dLoss/ds_ab for the ordered pair (a, b), b != a:
    // (softmax_a(b) - [b == partner(a)]) / (temperature * n)
    let mut g = Array2::zeros((n, n));
    for a in 0..n {
        let mut max = f64::NEG_INFINITY;
        for b in 0..n {
            if b != a {
                max = max.max(s[[a, b]] / temperature);
            }
        }
        let mut denom = 0.0f64;
        for b in 0..n {
            if b != a {
                denom += (s[[a, b]] / temperature - max).exp();
            }
        }
        for b in 0..n {
            if b != a {
                let soft = (s[[a, b]] / temperature - max).exp() / denom;
                let target = if b == partner(a) { 1.0 } else { 0.0 };
                g[[a, b]] = (soft - target) / (temperature * n as f64);
            }
        }
    }

    // s_ab depends on both rows: dL/dz_c = sum_b (g[c][b] + g[b][c]) * z_b.
    let mut d = Array2::zeros((n, p));
    for c in 0..n {
        let mut drow = d.row_mut(c);
        let ds = drow.as_slice_mut().expect("standard layout");
        for b in 0..n {
            if b == c {
                continue;
            }
            let coeff = g[[c, b]] + g[[b, c]];
            let zb = z.row(b);
            for (dv, zv) in ds.iter_mut().zip(zb.as_slice().expect("standard layout")) {
                *dv += coeff * zv;
            }
        }
    }
    Ok(d)
}

/// Self-supervised training: per epoch, shuffle the dataset (seeded), build
/// two augmented views per sample, and take one SGD step per full batch
/// (incomplete trailing batches are dropped). Returns the final parameters
/// and the per-epoch log; fully determined by `(arch, cfg, images)`.
pub fn train_ssl(
    arch: &EncoderArch,
    cfg: &ContrastiveConfig,
    images: &[ImageGrid],
) -> Result<(EncoderParams, TrainLog)> {
    cfg.validate()?;
    arch.validate()?;
    if images.is_empty() {
        return Err(Error::EmptyInput("training dataset is empty".into()));
    }
    let side2 = images[0].side() * images[0].side();
    if side2 != arch.input_dim {
        return Err(Error::DimensionMismatch(format!(
            "image size {side2} does not match arch input_dim {}",
            arch.input_dim
        )));
    }
    let steps_per_epoch = images.len() / cfg.batch_size;
    if cfg.epochs > 0 && steps_per_epoch == 0 {
        return Err(Error::invalid_config(
            "batch_size",
            format!("exceeds dataset size {}", images.len()),
        ));
    }
    let needed_steps = (cfg.epochs * steps_per_epoch) as u64;
    if cfg.epochs > 0 && cfg.schedule.total_steps < needed_steps {
        return Err(Error::invalid_config(
            "schedule.total_steps",
            format!(
                "{} steps scheduled but {needed_steps} required",
                cfg.schedule.total_steps
            ),
        ));
    }

    let mut params = init_params(arch, cfg.seed)?;
    let mut state = OptimizerState::new(&params, cfg.momentum, cfg.weight_decay)?;
    let root = SplitMix64::new(cfg.seed);
    let mut log = TrainLog {
        epoch_loss: Vec::with_capacity(cfg.epochs),
        epoch_lr: Vec::with_capacity(cfg.epochs),
        epoch_seconds: Vec::with_capacity(cfg.epochs),
    };

    let mut global_step = 0u64;
    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let mut order: Vec<usize> = (0..images.len()).collect();
        root.child(&[3, epoch as u64]).shuffle(&mut order);

        let mut epoch_loss = 0.0f64;
        let mut epoch_first_lr = 0.0f64;
        for step in 0..steps_per_epoch {
            let batch_ids = &order[step * cfg.batch_size..(step + 1) * cfg.batch_size];
            let mut batch = Array2::zeros((2 * cfg.batch_size, arch.input_dim));
            for (j, &idx) in batch_ids.iter().enumerate() {
                let mut view_rng = root.child(&[4, epoch as u64, step as u64, j as u64]);
                let (va, vb) = make_views(&images[idx], &cfg.augment, &mut view_rng);
                for (k, v) in va.flat().into_iter().enumerate() {
                    batch[[2 * j, k]] = v;
                }
                for (k, v) in vb.flat().into_iter().enumerate() {
                    batch[[2 * j + 1, k]] = v;
                }
            }

            let staged = (|| -> Result<f64> {
                let h = encode(arch, &params, &batch)?;
                let z = project(&params, &h)?;
                let loss = nt_xent_loss(&z, cfg.temperature)?;
                let d_z = nt_xent_grad(&z, cfg.temperature)?;
                let grads = backward(arch, &params, &batch, &d_z)?;
                let lr = lr_at(&cfg.schedule, global_step)?;
                if step == 0 {
                    epoch_first_lr = lr;
                }
                sgd_momentum_step(&mut params, &grads, &mut state, lr)?;
                Ok(loss)
            })();
            let loss = staged.map_err(|e| at_step(e, epoch, step))?;
            epoch_loss += loss;
            global_step += 1;
        }

        log.epoch_loss.push(epoch_loss / steps_per_epoch as f64);
        log.epoch_lr.push(epoch_first_lr);
        log.epoch_seconds.push(started.elapsed().as_secs_f64());
    }
    Ok((params, log))
}

/// Attach the failing epoch/step to a training error without changing its
/// category.
fn at_step(err: Error, epoch: usize, step: usize) -> Error {
    let tag = format!("epoch {epoch} step {step}");
    match err {
        Error::DegenerateEmbedding(m) => Error::DegenerateEmbedding(format!("{tag}: {m}")),
        Error::NonFiniteInput(m) => Error::NonFiniteInput(format!("{tag}: {m}")),
        Error::NotNormalized(m) => Error::NotNormalized(format!("{tag}: {m}")),
        Error::Numeric(m) => Error::Numeric(format!("{tag}: {m}")),
        other => other,
    }
}
