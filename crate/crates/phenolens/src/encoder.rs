//! Feed-forward backbone and projection head with analytic gradients, plus
//! the SGD-with-momentum optimizer and warmup-cosine learning-rate schedule.
//!
//! Parameters are stored in f32 (matching the checkpoint payload format);
//! every forward, backward, and update computation runs in f64 with a fixed
//! ascending reduction order, so results are bit-reproducible regardless of
//! platform threading.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::rng::SplitMix64;

/// Network shape. `input_dim` is the flattened image size; analytics consume
/// the `rep_dim`-dimensional backbone output, the contrastive loss consumes
/// the `proj_dim`-dimensional head output.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct EncoderArch {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub rep_dim: usize,
    pub proj_hidden: usize,
    pub proj_dim: usize,
}

impl Default for EncoderArch {
    fn default() -> Self {
        EncoderArch {
            input_dim: 1024,
            hidden_dims: vec![256, 128],
            rep_dim: 64,
            proj_hidden: 64,
            proj_dim: 32,
        }
    }
}

impl EncoderArch {
    pub fn validate(&self) -> Result<()> {
        let dims = [self.input_dim, self.rep_dim, self.proj_hidden, self.proj_dim];
        if dims.iter().any(|&d| d == 0) || self.hidden_dims.iter().any(|&d| d == 0) {
            return Err(Error::invalid_config("arch", "all dimensions must be >= 1"));
        }
        Ok(())
    }

    /// (in, out) pairs for the backbone: input -> hidden... -> rep_dim.
    pub fn backbone_shapes(&self) -> Vec<(usize, usize)> {
        let mut dims = vec![self.input_dim];
        dims.extend_from_slice(&self.hidden_dims);
        dims.push(self.rep_dim);
        dims.windows(2).map(|w| (w[0], w[1])).collect()
    }

    /// (in, out) pairs for the projection head: rep_dim -> proj_hidden -> proj_dim.
    pub fn head_shapes(&self) -> Vec<(usize, usize)> {
        vec![
            (self.rep_dim, self.proj_hidden),
            (self.proj_hidden, self.proj_dim),
        ]
    }

    /// Total scalar parameter count: sum of fan_in*fan_out + fan_out per layer.
    pub fn parameter_count(&self) -> usize {
        self.backbone_shapes()
            .iter()
            .chain(self.head_shapes().iter())
            .map(|&(i, o)| i * o + o)
            .sum()
    }
}

/// One affine layer; weights are out x in, row o holding output unit o.
#[derive(Debug, Clone)]
pub struct Layer {
    pub w: Array2<f32>,
    pub b: Array1<f32>,
}

#[derive(Debug, Clone)]
pub struct EncoderParams {
    pub backbone: Vec<Layer>,
    pub head: Vec<Layer>,
}

/// f64 gradients mirroring [`EncoderParams`].
#[derive(Debug, Clone)]
pub struct LayerGrad {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct EncoderGrads {
    pub backbone: Vec<LayerGrad>,
    pub head: Vec<LayerGrad>,
}

impl EncoderParams {
    /// Flatten in checkpoint payload order: backbone layers then head
    /// layers, each weight matrix row-major followed by its bias.
    pub fn to_flat(&self) -> Vec<f32> {
        let mut out = Vec::new();
        for layer in self.backbone.iter().chain(self.head.iter()) {
            out.extend(layer.w.iter().copied());
            out.extend(layer.b.iter().copied());
        }
        out
    }

    pub fn from_flat(arch: &EncoderArch, flat: &[f32]) -> Result<EncoderParams> {
        if flat.len() != arch.parameter_count() {
            return Err(Error::CorruptCheckpoint(format!(
                "expected {} parameters, found {}",
                arch.parameter_count(),
                flat.len()
            )));
        }
        let mut cursor = 0usize;
        let mut take_layer = |(fan_in, fan_out): (usize, usize)| {
            let w_len = fan_in * fan_out;
            let w = Array2::from_shape_vec((fan_out, fan_in), flat[cursor..cursor + w_len].to_vec())
                .expect("shape arithmetic");
            cursor += w_len;
            let b = Array1::from_vec(flat[cursor..cursor + fan_out].to_vec());
            cursor += fan_out;
            Layer { w, b }
        };
        let backbone = arch.backbone_shapes().into_iter().map(&mut take_layer).collect();
        let head = arch.head_shapes().into_iter().map(&mut take_layer).collect();
        Ok(EncoderParams { backbone, head })
    }
}

impl EncoderGrads {
    pub fn zeros_like(params: &EncoderParams) -> EncoderGrads {
        let zero = |layers: &[Layer]| {
            layers
                .iter()
                .map(|l| LayerGrad {
                    w: Array2::zeros(l.w.dim()),
                    b: Array1::zeros(l.b.len()),
                })
                .collect()
        };
        EncoderGrads {
            backbone: zero(&params.backbone),
            head: zero(&params.head),
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for layer in self.backbone.iter().chain(self.head.iter()) {
            out.extend(layer.w.iter().copied());
            out.extend(layer.b.iter().copied());
        }
        out
    }
}

/// Scaled-normal fan-in initialization: weights N(0, 1/fan_in), biases zero.
pub fn init_params(arch: &EncoderArch, seed: u64) -> Result<EncoderParams> {
    arch.validate()?;
    let mut rng = SplitMix64::new(seed).child(&[2]);
    let mut draw = |(fan_in, fan_out): (usize, usize)| {
        let std = 1.0 / (fan_in as f64).sqrt();
        let w = Array2::from_shape_fn((fan_out, fan_in), |_| (rng.normal() * std) as f32);
        Layer {
            w,
            b: Array1::zeros(fan_out),
        }
    };
    let backbone = arch.backbone_shapes().into_iter().map(&mut draw).collect();
    let head = arch.head_shapes().into_iter().map(&mut draw).collect();
    Ok(EncoderParams { backbone, head })
}

/// y[n][o] = b[o] + sum_k x[n][k] * w[o][k], f64 accumulation in ascending k.
fn affine(x: &Array2<f64>, layer: &Layer) -> Array2<f64> {
    let n = x.nrows();
    let out_dim = layer.w.nrows();
    let mut y = Array2::zeros((n, out_dim));
    for i in 0..n {
        let xrow = x.row(i);
        let xs = xrow.as_slice().expect("standard layout");
        for o in 0..out_dim {
            let wrow = layer.w.row(o);
            let ws = wrow.as_slice().expect("standard layout");
            let mut acc = layer.b[o] as f64;
            for (xv, wv) in xs.iter().zip(ws) {
                acc += xv * (*wv as f64);
            }
            y[[i, o]] = acc;
        }
    }
    y
}

fn relu(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| if v > 0.0 { v } else { 0.0 })
}

/// Forward through a layer stack with a rectifier after every layer except
/// the last. Returns pre-activations per layer plus the final output;
/// `acts[i]` is the input to layer i.
struct StackForward {
    acts: Vec<Array2<f64>>,
    preacts: Vec<Array2<f64>>,
    output: Array2<f64>,
}

fn forward_stack(layers: &[Layer], input: Array2<f64>) -> StackForward {
    let mut acts = Vec::with_capacity(layers.len());
    let mut preacts = Vec::with_capacity(layers.len());
    let mut x = input;
    for (i, layer) in layers.iter().enumerate() {
        let z = affine(&x, layer);
        acts.push(x);
        let next = if i + 1 < layers.len() { relu(&z) } else { z.clone() };
        preacts.push(z);
        x = next;
    }
    StackForward {
        acts,
        preacts,
        output: x,
    }
}

/// Backward through a stack; returns per-layer grads and the gradient with
/// respect to the stack input.
fn backward_stack(
    layers: &[Layer],
    fwd: &StackForward,
    d_output: Array2<f64>,
) -> (Vec<LayerGrad>, Array2<f64>) {
    let mut grads: Vec<LayerGrad> = layers
        .iter()
        .map(|l| LayerGrad {
            w: Array2::zeros(l.w.dim()),
            b: Array1::zeros(l.b.len()),
        })
        .collect();
    let mut d_act = d_output;
    for i in (0..layers.len()).rev() {
        // Rectifier derivative applies to every layer but the last; the
        // subgradient at exactly zero is taken as zero.
        let dz = if i + 1 < layers.len() {
            let mut dz = d_act.clone();
            dz.zip_mut_with(&fwd.preacts[i], |g, &z| {
                if z <= 0.0 {
                    *g = 0.0;
                }
            });
            dz
        } else {
            d_act
        };
        let input = &fwd.acts[i];
        let n = input.nrows();
        let (out_dim, in_dim) = layers[i].w.dim();
        for row in 0..n {
            let xrow = input.row(row);
            let xs = xrow.as_slice().expect("standard layout");
            let grow = dz.row(row);
            for o in 0..out_dim {
                let g = grow[o];
                grads[i].b[o] += g;
                let mut wrow = grads[i].w.row_mut(o);
                let wslice = wrow.as_slice_mut().expect("standard layout");
                for (wg, xv) in wslice.iter_mut().zip(xs) {
                    *wg += g * xv;
                }
            }
        }
        // dInput[n][k] = sum_o dz[n][o] * w[o][k]
        let mut d_in = Array2::zeros((n, in_dim));
        for row in 0..n {
            let grow = dz.row(row);
            let mut drow = d_in.row_mut(row);
            let ds = drow.as_slice_mut().expect("standard layout");
            for o in 0..out_dim {
                let g = grow[o];
                let wrow = layers[i].w.row(o);
                let ws = wrow.as_slice().expect("standard layout");
                for (dv, wv) in ds.iter_mut().zip(ws) {
                    *dv += g * (*wv as f64);
                }
            }
        }
        d_act = d_in;
    }
    (grads, d_act)
}

fn check_batch(arch: &EncoderArch, batch: &Array2<f32>) -> Result<()> {
    if batch.ncols() != arch.input_dim {
        return Err(Error::DimensionMismatch(format!(
            "batch width {} does not match input_dim {}",
            batch.ncols(),
            arch.input_dim
        )));
    }
    if batch.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput("encoder batch contains NaN or infinity".into()));
    }
    Ok(())
}

fn to_f64(batch: &Array2<f32>) -> Array2<f64> {
    batch.mapv(|v| v as f64)
}

/// Backbone forward pass: representations H (N x rep_dim).
pub fn encode(arch: &EncoderArch, params: &EncoderParams, batch: &Array2<f32>) -> Result<Array2<f64>> {
    check_batch(arch, batch)?;
    Ok(forward_stack(&params.backbone, to_f64(batch)).output)
}

const NORM_FLOOR: f64 = 1e-12;

/// Projection head forward pass: unit-norm rows Z (N x proj_dim).
pub fn project(params: &EncoderParams, h: &Array2<f64>) -> Result<Array2<f64>> {
    if h.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput("projection input contains NaN or infinity".into()));
    }
    let mut z = forward_stack(&params.head, h.clone()).output;
    for (i, mut row) in z.rows_mut().into_iter().enumerate() {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < NORM_FLOOR {
            return Err(Error::DegenerateEmbedding(format!(
                "projection row {i} has norm {norm:.3e} before normalization"
            )));
        }
        row.mapv_inplace(|v| v / norm);
    }
    Ok(z)
}

/// Exact reverse-mode gradients of `sum(d_loss_d_z * Z(params, batch))` with
/// respect to every parameter; recomputes the forward pass internally.
pub fn backward(
    arch: &EncoderArch,
    params: &EncoderParams,
    batch: &Array2<f32>,
    d_loss_d_z: &Array2<f64>,
) -> Result<EncoderGrads> {
    check_batch(arch, batch)?;
    if d_loss_d_z.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput("upstream gradient contains NaN or infinity".into()));
    }
    let backbone_fwd = forward_stack(&params.backbone, to_f64(batch));
    let head_fwd = forward_stack(&params.head, backbone_fwd.output.clone());
    let y = &head_fwd.output;
    if d_loss_d_z.dim() != y.dim() {
        return Err(Error::DimensionMismatch(format!(
            "upstream gradient shape {:?} does not match projection output {:?}",
            d_loss_d_z.dim(),
            y.dim()
        )));
    }

    // Through the row normalization z = y / |y|:
    // dL/dy = (g - z * (z . g)) / |y|
    let n = y.nrows();
    let p = y.ncols();
    let mut d_y = Array2::zeros((n, p));
    for i in 0..n {
        let yrow = y.row(i);
        let norm = yrow.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < NORM_FLOOR {
            return Err(Error::DegenerateEmbedding(format!(
                "projection row {i} has norm {norm:.3e} before normalization"
            )));
        }
        let g = d_loss_d_z.row(i);
        let z: Vec<f64> = yrow.iter().map(|v| v / norm).collect();
        let dot: f64 = z.iter().zip(g.iter()).map(|(zv, gv)| zv * gv).sum();
        for k in 0..p {
            d_y[[i, k]] = (g[k] - z[k] * dot) / norm;
        }
    }

    let (head_grads, d_h) = backward_stack(&params.head, &head_fwd, d_y);
    let (backbone_grads, _d_input) = backward_stack(&params.backbone, &backbone_fwd, d_h);
    Ok(EncoderGrads {
        backbone: backbone_grads,
        head: head_grads,
    })
}

/// Momentum buffers and hyperparameters for the SGD update.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    momentum: Vec<f32>,
    pub step: u64,
    pub beta: f64,
    pub weight_decay: f64,
}

impl OptimizerState {
    pub fn new(params: &EncoderParams, beta: f64, weight_decay: f64) -> Result<OptimizerState> {
        if !(0.0..1.0).contains(&beta) {
            return Err(Error::invalid_config("momentum", "must be in [0, 1)"));
        }
        if !(weight_decay.is_finite() && weight_decay >= 0.0) {
            return Err(Error::invalid_config("weight_decay", "must be >= 0"));
        }
        Ok(OptimizerState {
            momentum: vec![0.0; params.to_flat().len()],
            step: 0,
            beta,
            weight_decay,
        })
    }

    pub fn momentum_flat(&self) -> &[f32] {
        &self.momentum
    }
}

/// v' = beta*v + g + weight_decay*w; w' = w - lr*v'.
pub fn sgd_momentum_step(
    params: &mut EncoderParams,
    grads: &EncoderGrads,
    state: &mut OptimizerState,
    lr: f64,
) -> Result<()> {
    let mut flat = params.to_flat();
    let grads_flat = grads.to_flat();
    if flat.len() != grads_flat.len() || flat.len() != state.momentum.len() {
        return Err(Error::DimensionMismatch(format!(
            "params/grads/momentum lengths {} / {} / {} differ",
            flat.len(),
            grads_flat.len(),
            state.momentum.len()
        )));
    }
    for ((w, g), v) in flat.iter_mut().zip(&grads_flat).zip(state.momentum.iter_mut()) {
        let v_new = state.beta * (*v as f64) + g + state.weight_decay * (*w as f64);
        *v = v_new as f32;
        *w = (*w as f64 - lr * v_new) as f32;
    }
    state.step += 1;
    // Reassemble in the same flat order.
    let mut cursor = 0usize;
    for layer in params.backbone.iter_mut().chain(params.head.iter_mut()) {
        for wv in layer.w.iter_mut() {
            *wv = flat[cursor];
            cursor += 1;
        }
        for bv in layer.b.iter_mut() {
            *bv = flat[cursor];
            cursor += 1;
        }
    }
    debug_assert_eq!(cursor, flat.len());
    Ok(())
}

/// Linear warmup to `peak_lr` over `warmup_steps`, then cosine decay to zero
/// at `total_steps`. `peak_lr = base_lr * sqrt(batch_size / reference_batch)`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub reference_batch: usize,
    pub batch_size: usize,
    pub warmup_steps: u64,
    pub total_steps: u64,
}

impl LrSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr.is_finite() && self.base_lr >= 0.0) {
            return Err(Error::invalid_config("base_lr", "must be finite and >= 0"));
        }
        if self.reference_batch == 0 || self.batch_size == 0 {
            return Err(Error::invalid_config("reference_batch/batch_size", "must be >= 1"));
        }
        if self.total_steps <= self.warmup_steps {
            return Err(Error::invalid_config(
                "total_steps",
                "must exceed warmup_steps",
            ));
        }
        Ok(())
    }

    pub fn peak_lr(&self) -> f64 {
        self.base_lr * (self.batch_size as f64 / self.reference_batch as f64).sqrt()
    }
}

/// Learning rate at a 0-based step, valid for 0 <= step <= total_steps.
pub fn lr_at(schedule: &LrSchedule, step: u64) -> Result<f64> {
    schedule.validate()?;
    if step > schedule.total_steps {
        return Err(Error::ScheduleExhausted {
            step,
            total: schedule.total_steps,
        });
    }
    let peak = schedule.peak_lr();
    if step < schedule.warmup_steps {
        return Ok(peak * step as f64 / schedule.warmup_steps as f64);
    }
    let phase =
        (step - schedule.warmup_steps) as f64 / (schedule.total_steps - schedule.warmup_steps) as f64;
    Ok(peak * 0.5 * (1.0 + (std::f64::consts::PI * phase).cos()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_arch() -> EncoderArch {
        EncoderArch {
            input_dim: 2,
            hidden_dims: vec![2],
            rep_dim: 1,
            proj_hidden: 2,
            proj_dim: 2,
        }
    }

    #[test]
    fn parameter_count_matches_shape_arithmetic() {
        let arch = EncoderArch::default();
        // 1024->256->128->64 backbone plus 64->64->32 head, five layers.
        let expected = (1024 * 256 + 256)
            + (256 * 128 + 128)
            + (128 * 64 + 64)
            + (64 * 64 + 64)
            + (64 * 32 + 32);
        assert_eq!(arch.parameter_count(), expected);
        assert_eq!(init_params(&arch, 0).unwrap().to_flat().len(), expected);
    }

    #[test]
    fn init_biases_zero_and_deterministic() {
        let arch = EncoderArch::default();
        let a = init_params(&arch, 5).unwrap();
        let b = init_params(&arch, 5).unwrap();
        for layer in a.backbone.iter().chain(a.head.iter()) {
            assert!(layer.b.iter().all(|&v| v == 0.0));
        }
        let bits = |p: &EncoderParams| p.to_flat().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        let c = init_params(&arch, 6).unwrap();
        assert_ne!(bits(&a), bits(&c));
    }

    #[test]
    fn zero_params_encode_to_zero() {
        let arch = tiny_arch();
        let mut params = init_params(&arch, 1).unwrap();
        for layer in params.backbone.iter_mut().chain(params.head.iter_mut()) {
            layer.w.fill(0.0);
            layer.b.fill(0.0);
        }
        let x = Array2::from_shape_vec((3, 2), vec![0.2f32, 0.4, 0.9, 0.1, 0.0, 0.0]).unwrap();
        let h = encode(&arch, &params, &x).unwrap();
        assert!(h.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hand_computed_two_layer_forward() {
        let arch = tiny_arch();
        let params = EncoderParams {
            backbone: vec![
                Layer {
                    w: Array2::from_shape_vec((2, 2), vec![0.5, -0.25, 0.3, 0.8]).unwrap(),
                    b: Array1::from_vec(vec![0.1, -0.2]),
                },
                Layer {
                    w: Array2::from_shape_vec((1, 2), vec![0.7, -0.4]).unwrap(),
                    b: Array1::from_vec(vec![0.05]),
                },
            ],
            head: init_params(&arch, 0).unwrap().head,
        };
        let x = Array2::from_shape_vec((1, 2), vec![1.0f32, 0.5]).unwrap();
        let h = encode(&arch, &params, &x).unwrap();
        // z0 = (0.5*1 - 0.25*0.5 + 0.1, 0.3*1 + 0.8*0.5 - 0.2) = (0.475, 0.5),
        // both positive, h = 0.7*0.475 - 0.4*0.5 + 0.05 = 0.1825. The manual
        // recomputation quantizes constants to f32 exactly as storage does.
        let q = |v: f32| v as f64;
        let z0 = q(0.5) * q(1.0) + q(-0.25) * q(0.5) + q(0.1);
        let z1 = q(0.3) * q(1.0) + q(0.8) * q(0.5) + q(-0.2);
        let expected = q(0.7) * z0 + q(-0.4) * z1 + q(0.05);
        assert!((expected - 0.1825).abs() < 1e-6);
        assert!((h[[0, 0]] - expected).abs() < 1e-15, "{}", h[[0, 0]]);
    }

    #[test]
    fn duplicate_rows_give_duplicate_outputs() {
        let arch = tiny_arch();
        let params = init_params(&arch, 3).unwrap();
        let x = Array2::from_shape_vec((3, 2), vec![0.3f32, 0.7, 0.3, 0.7, 0.1, 0.9]).unwrap();
        let h = encode(&arch, &params, &x).unwrap();
        assert_eq!(h.row(0).to_vec(), h.row(1).to_vec());
    }

    #[test]
    fn encode_rejects_non_finite_input() {
        let arch = tiny_arch();
        let params = init_params(&arch, 3).unwrap();
        let x = Array2::from_shape_vec((1, 2), vec![f32::NAN, 0.0]).unwrap();
        assert!(matches!(encode(&arch, &params, &x), Err(Error::NonFiniteInput(_))));
    }

    #[test]
    fn projection_rows_unit_norm() {
        let arch = EncoderArch {
            input_dim: 4,
            hidden_dims: vec![6],
            rep_dim: 5,
            proj_hidden: 4,
            proj_dim: 3,
        };
        let params = init_params(&arch, 9).unwrap();
        let x = Array2::from_shape_fn((7, 4), |(i, j)| ((i * 7 + j) as f32 * 0.13).sin().abs());
        let h = encode(&arch, &params, &x).unwrap();
        let z = project(&params, &h).unwrap();
        for row in z.rows() {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-6, "norm {norm}");
        }
    }

    #[test]
    fn identity_head_normalizes_three_four() {
        // One hidden layer with identity weights passes (3,4) through the
        // rectifier unchanged; normalization gives (0.6, 0.8).
        let arch = EncoderArch {
            input_dim: 2,
            hidden_dims: vec![2],
            rep_dim: 2,
            proj_hidden: 2,
            proj_dim: 2,
        };
        let mut params = init_params(&arch, 0).unwrap();
        params.head[0].w = Array2::from_shape_vec((2, 2), vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        params.head[0].b.fill(0.0);
        params.head[1].w = Array2::from_shape_vec((2, 2), vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        params.head[1].b.fill(0.0);
        let h = Array2::from_shape_vec((1, 2), vec![3.0f64, 4.0]).unwrap();
        let z = project(&params, &h).unwrap();
        assert!((z[[0, 0]] - 0.6).abs() < 1e-12);
        assert!((z[[0, 1]] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn zero_projection_is_degenerate() {
        let arch = tiny_arch();
        let mut params = init_params(&arch, 0).unwrap();
        for layer in params.head.iter_mut() {
            layer.w.fill(0.0);
            layer.b.fill(0.0);
        }
        let h = Array2::zeros((1, 1));
        assert!(matches!(project(&params, &h), Err(Error::DegenerateEmbedding(_))));
    }

    #[test]
    fn backward_zero_upstream_gives_zero_grads() {
        let arch = tiny_arch();
        let params = init_params(&arch, 4).unwrap();
        let x = Array2::from_shape_vec((2, 2), vec![0.5f32, 0.25, 0.75, 0.1]).unwrap();
        let g = Array2::zeros((2, 2));
        let grads = backward(&arch, &params, &x, &g).unwrap();
        assert!(grads.to_flat().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_is_linear_in_upstream() {
        let arch = tiny_arch();
        let params = init_params(&arch, 4).unwrap();
        let x = Array2::from_shape_vec((2, 2), vec![0.5f32, 0.25, 0.75, 0.1]).unwrap();
        let g = Array2::from_shape_fn((2, 2), |(i, j)| 0.3 * (i as f64 + 1.0) - 0.2 * j as f64);
        let g2 = g.mapv(|v| 2.0 * v);
        let grads = backward(&arch, &params, &x, &g).unwrap().to_flat();
        let grads2 = backward(&arch, &params, &x, &g2).unwrap().to_flat();
        for (a, b) in grads.iter().zip(&grads2) {
            assert_eq!(*b, 2.0 * *a);
        }
    }

    #[test]
    fn sgd_direct_substitution_example() {
        // One scalar parameter: w=1, g=0.5, beta=0.9, v=0.2, lambda=0, lr=0.1
        // gives v'=0.68 and w'=0.932.
        let arch = EncoderArch {
            input_dim: 1,
            hidden_dims: vec![],
            rep_dim: 1,
            proj_hidden: 1,
            proj_dim: 1,
        };
        let mut params = init_params(&arch, 0).unwrap();
        let flat_len = params.to_flat().len();
        // Backbone is a single 1x1 layer; set its weight to 1.
        params.backbone[0].w[[0, 0]] = 1.0;
        let mut state = OptimizerState::new(&params, 0.9, 0.0).unwrap();
        state.momentum[0] = 0.2;
        let mut grads = EncoderGrads::zeros_like(&params);
        grads.backbone[0].w[[0, 0]] = 0.5;
        sgd_momentum_step(&mut params, &grads, &mut state, 0.1).unwrap();
        assert!((state.momentum[0] as f64 - 0.68).abs() < 1e-6);
        assert!((params.backbone[0].w[[0, 0]] as f64 - 0.932).abs() < 1e-6);
        assert_eq!(state.step, 1);
        assert_eq!(params.to_flat().len(), flat_len);
    }

    #[test]
    fn sgd_zero_lr_keeps_params_updates_momentum() {
        let arch = tiny_arch();
        let mut params = init_params(&arch, 8).unwrap();
        let before = params.to_flat();
        let mut grads = EncoderGrads::zeros_like(&params);
        grads.backbone[0].w[[0, 0]] = 1.5;
        let mut state = OptimizerState::new(&params, 0.9, 0.0).unwrap();
        sgd_momentum_step(&mut params, &grads, &mut state, 0.0).unwrap();
        assert_eq!(params.to_flat(), before);
        assert!((state.momentum[0] - 1.5).abs() < 1e-7);
    }

    #[test]
    fn sgd_plain_gradient_step_when_beta_and_decay_zero() {
        let arch = tiny_arch();
        let mut params = init_params(&arch, 8).unwrap();
        let w0 = params.backbone[0].w[[0, 0] ] as f64;
        let mut grads = EncoderGrads::zeros_like(&params);
        grads.backbone[0].w[[0, 0]] = 0.25;
        let mut state = OptimizerState::new(&params, 0.0, 0.0).unwrap();
        sgd_momentum_step(&mut params, &grads, &mut state, 0.2).unwrap();
        assert!((params.backbone[0].w[[0, 0]] as f64 - (w0 - 0.2 * 0.25)).abs() < 1e-7);
    }

    #[test]
    fn schedule_endpoints_and_midpoint() {
        let schedule = LrSchedule {
            base_lr: 0.3,
            reference_batch: 256,
            batch_size: 64,
            warmup_steps: 10,
            total_steps: 110,
        };
        let peak = 0.3 * (64.0f64 / 256.0).sqrt();
        assert_eq!(lr_at(&schedule, 0).unwrap(), 0.0);
        assert!((lr_at(&schedule, 10).unwrap() - peak).abs() < 1e-15);
        assert!((lr_at(&schedule, 60).unwrap() - peak / 2.0).abs() < 1e-12);
        assert!(lr_at(&schedule, 110).unwrap().abs() < 1e-15);
        assert!(matches!(
            lr_at(&schedule, 111),
            Err(Error::ScheduleExhausted { .. })
        ));
    }

    #[test]
    fn schedule_validation() {
        let mut s = LrSchedule {
            base_lr: 0.3,
            reference_batch: 256,
            batch_size: 64,
            warmup_steps: 10,
            total_steps: 10,
        };
        assert!(s.validate().is_err());
        s.total_steps = 11;
        assert!(s.validate().is_ok());
        s.base_lr = -1.0;
        assert!(s.validate().is_err());
    }
}
