//! Bias-free fully-connected ReLU networks with the centered predictor
//! `F(x) = f(w, x) − f(w⁰, x)`, trained by hinge-to-zero SGD or by logistic
//! loss with early stopping.

use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{invalid, Error, Result};
use crate::linalg::dot;
use crate::perceptron::hinge_loss;
use crate::train::{epoch_len, sample_batch, LossKind, RunRecord, TrainConfig};
use crate::{derive_seed, rng_from_seed};

/// Row-major `rows × cols` weight matrix mapping `cols` inputs to `rows` outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    fn gaussian<R: Rng + ?Sized>(rows: usize, cols: usize, std: f64, rng: &mut R) -> Self {
        let data = (0..rows * cols).map(|_| std * rng.sample::<f64, _>(StandardNormal)).collect();
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Entries may change, shape may not.
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    fn mul_vec(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend((0..self.rows).map(|i| dot(self.row(i), x)));
    }

    /// `out = Mᵀ v`.
    fn mul_t_vec(&self, v: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.resize(self.cols, 0.0);
        for (i, &vi) in v.iter().enumerate() {
            if vi != 0.0 {
                for (o, m) in out.iter_mut().zip(self.row(i)) {
                    *o += vi * m;
                }
            }
        }
    }

    /// `self += c · u vᵀ`.
    fn add_outer(&mut self, c: f64, u: &[f64], v: &[f64]) {
        for (i, &ui) in u.iter().enumerate() {
            let a = c * ui;
            if a != 0.0 {
                let row = &mut self.data[i * self.cols..(i + 1) * self.cols];
                for (r, vj) in row.iter_mut().zip(v) {
                    *r += a * vj;
                }
            }
        }
    }
}

/// Architecture of a network: `depth` hidden layers of `width` units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpParams {
    pub depth: usize,
    pub width: usize,
}

impl Default for MlpParams {
    fn default() -> Self {
        Self { depth: 5, width: 64 }
    }
}

pub const DEFAULT_INPUT_DIM: usize = 16;
pub const DEFAULT_CHI: f64 = 1.5;
pub const LAZY_ALPHA: f64 = 32768.0;
pub const FEATURE_ALPHA: f64 = 1.0 / 1024.0;
pub const TEST_SET_SIZE: usize = 2048;

/// Current weights plus the frozen initialization they are measured against.
#[derive(Debug, Clone)]
pub struct MlpState {
    layers: Vec<Matrix>,
    initial: Arc<Vec<Matrix>>,
    pub t: f64,
    pub steps: u64,
}

/// Draws a network with hidden weights `N(0, 1/h)`, first-layer weights
/// `N(0, 1/d)` and output weights `N(0, 1/h²)`.
///
/// `depth = 0` gives a single linear layer with std `1/√d`.
pub fn init_network(depth: usize, width: usize, d: usize, seed: u64) -> Result<MlpState> {
    if width == 0 {
        return Err(invalid("width must be >= 1"));
    }
    if d == 0 {
        return Err(invalid("input dimension must be >= 1"));
    }
    let mut rng = rng_from_seed(seed);
    let mut layers = Vec::with_capacity(depth + 1);
    if depth == 0 {
        layers.push(Matrix::gaussian(1, d, 1.0 / (d as f64).sqrt(), &mut rng));
    } else {
        layers.push(Matrix::gaussian(width, d, 1.0 / (d as f64).sqrt(), &mut rng));
        for _ in 1..depth {
            layers.push(Matrix::gaussian(width, width, 1.0 / (width as f64).sqrt(), &mut rng));
        }
        layers.push(Matrix::gaussian(1, width, 1.0 / width as f64, &mut rng));
    }
    Ok(MlpState { initial: Arc::new(layers.clone()), layers, t: 0.0, steps: 0 })
}

/// Per-layer activations kept for backpropagation.
#[derive(Debug, Default, Clone)]
struct Workspace {
    acts: Vec<Vec<f64>>,
    delta: Vec<f64>,
    tmp: Vec<f64>,
}

fn forward(layers: &[Matrix], x: &[f64], ws: &mut Workspace) -> f64 {
    let hidden = layers.len() - 1;
    ws.acts.resize_with(hidden + 1, Vec::new);
    ws.acts[0].clear();
    ws.acts[0].extend_from_slice(x);
    for l in 0..hidden {
        let (before, after) = ws.acts.split_at_mut(l + 1);
        let out = &mut after[0];
        layers[l].mul_vec(&before[l], out);
        for v in out.iter_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
    }
    dot(layers[hidden].row(0), &ws.acts[hidden])
}

/// Adds `c · ∇_w f` to `grad`, using activations left by [`forward`].
fn backward(layers: &[Matrix], ws: &mut Workspace, c: f64, grad: &mut [Matrix]) {
    let hidden = layers.len() - 1;
    grad[hidden].add_outer(c, &[1.0], &ws.acts[hidden]);
    if hidden == 0 {
        return;
    }
    ws.delta.clear();
    ws.delta.extend(layers[hidden].row(0).iter().zip(&ws.acts[hidden]).map(|(w, a)| {
        if *a > 0.0 {
            c * w
        } else {
            0.0
        }
    }));
    for l in (0..hidden).rev() {
        grad[l].add_outer(1.0, &ws.delta, &ws.acts[l]);
        if l == 0 {
            break;
        }
        layers[l].mul_t_vec(&ws.delta, &mut ws.tmp);
        for (t, a) in ws.tmp.iter_mut().zip(&ws.acts[l]) {
            if *a <= 0.0 {
                *t = 0.0;
            }
        }
        std::mem::swap(&mut ws.delta, &mut ws.tmp);
    }
}

/// `∂f/∂x` from activations left by [`forward`].
fn input_backward(layers: &[Matrix], ws: &mut Workspace) -> Vec<f64> {
    let hidden = layers.len() - 1;
    let mut out = Vec::new();
    if hidden == 0 {
        return layers[0].row(0).to_vec();
    }
    ws.delta.clear();
    ws.delta.extend(
        layers[hidden]
            .row(0)
            .iter()
            .zip(&ws.acts[hidden])
            .map(|(w, a)| if *a > 0.0 { *w } else { 0.0 }),
    );
    for l in (0..hidden).rev() {
        layers[l].mul_t_vec(&ws.delta, &mut ws.tmp);
        if l == 0 {
            std::mem::swap(&mut out, &mut ws.tmp);
            break;
        }
        for (t, a) in ws.tmp.iter_mut().zip(&ws.acts[l]) {
            if *a <= 0.0 {
                *t = 0.0;
            }
        }
        std::mem::swap(&mut ws.delta, &mut ws.tmp);
    }
    out
}

fn zeros_like(layers: &[Matrix]) -> Vec<Matrix> {
    layers.iter().map(|m| Matrix::zeros(m.rows, m.cols)).collect()
}

fn flat_norm(layers: &[Matrix]) -> f64 {
    layers.iter().flat_map(|m| &m.data).map(|v| v * v).sum::<f64>().sqrt()
}

impl MlpState {
    pub fn layers(&self) -> &[Matrix] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Matrix] {
        &mut self.layers
    }

    pub fn initial_layers(&self) -> &[Matrix] {
        &self.initial
    }

    pub fn depth(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn width(&self) -> usize {
        if self.depth() == 0 {
            0
        } else {
            self.layers[0].rows
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].cols
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|m| m.data.len()).sum()
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch { expected: self.input_dim(), got: x.len() });
        }
        Ok(())
    }

    /// Uncentered output `f(w, x)`.
    pub fn raw_output(&self, x: &[f64]) -> Result<f64> {
        self.check_input(x)?;
        Ok(forward(&self.layers, x, &mut Workspace::default()))
    }

    /// `f(w⁰, x)`.
    pub fn initial_output(&self, x: &[f64]) -> Result<f64> {
        self.check_input(x)?;
        Ok(forward(&self.initial, x, &mut Workspace::default()))
    }

    pub fn weight_norm(&self) -> f64 {
        flat_norm(&self.layers)
    }

    /// `‖w − w⁰‖ / ‖w⁰‖` over all parameters.
    pub fn delta_w(&self) -> f64 {
        let diff: f64 = self
            .layers
            .iter()
            .zip(self.initial.iter())
            .flat_map(|(a, b)| a.data.iter().zip(&b.data))
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        diff.sqrt() / flat_norm(&self.initial)
    }

    /// Centered outputs on every point of `ds`.
    pub fn outputs(&self, ds: &Dataset) -> Result<Vec<f64>> {
        let mut ws = Workspace::default();
        self.check_input(ds.point(0))?;
        Ok(ds
            .iter()
            .map(|(x, _)| forward(&self.layers, x, &mut ws) - forward(&self.initial, x, &mut ws))
            .collect())
    }

    /// Fraction of points with `y F ≤ 0`.
    pub fn error_rate(&self, ds: &Dataset) -> Result<f64> {
        if ds.is_empty() {
            return Ok(0.0);
        }
        let out = self.outputs(ds)?;
        let wrong = out.iter().zip(ds.labels()).filter(|(f, y)| **y * **f <= 0.0).count();
        Ok(wrong as f64 / ds.len() as f64)
    }
}

pub fn centered_predictor(m: &MlpState, x: &[f64]) -> Result<f64> {
    Ok(m.raw_output(x)? - m.initial_output(x)?)
}

/// `∇_w f(w, x)`, shaped like the layers.
pub fn param_gradient(m: &MlpState, x: &[f64]) -> Result<Vec<Matrix>> {
    m.check_input(x)?;
    let mut ws = Workspace::default();
    let mut grad = zeros_like(&m.layers);
    forward(&m.layers, x, &mut ws);
    backward(&m.layers, &mut ws, 1.0, &mut grad);
    Ok(grad)
}

/// Gradient of `(1/B) Σ_batch max(0, α⁻¹ − y F)`; only points with
/// `y F < α⁻¹` contribute.
pub fn grad_loss(m: &MlpState, ds: &Dataset, batch: &[usize], alpha: f64) -> Result<Vec<Matrix>> {
    if ds.dim() != m.input_dim() {
        return Err(Error::DimensionMismatch { expected: m.input_dim(), got: ds.dim() });
    }
    if let Some(&bad) = batch.iter().find(|&&i| i >= ds.len()) {
        return Err(invalid(format!("batch index {bad} out of range")));
    }
    let margin = 1.0 / alpha;
    let mut ws = Workspace::default();
    let mut grad = zeros_like(&m.layers);
    let scale = 1.0 / batch.len() as f64;
    for &mu in batch {
        let x = ds.point(mu);
        let y = ds.label(mu);
        let f0 = forward(&m.initial, x, &mut ws);
        let f = forward(&m.layers, x, &mut ws);
        if y * (f - f0) < margin {
            backward(&m.layers, &mut ws, -y * scale, &mut grad);
        }
    }
    Ok(grad)
}

/// `∂_x F` by backpropagation to the input.
pub fn input_gradient(m: &MlpState, x: &[f64]) -> Result<Vec<f64>> {
    m.check_input(x)?;
    let mut ws = Workspace::default();
    forward(&m.layers, x, &mut ws);
    let g = input_backward(&m.layers, &mut ws);
    forward(&m.initial, x, &mut ws);
    let g0 = input_backward(&m.initial, &mut ws);
    Ok(g.iter().zip(&g0).map(|(a, b)| a - b).collect())
}

/// Components of `∂_x F(x*)` along and across the unit normal of the true
/// boundary. `x_star` is expected to lie close to the model boundary.
pub fn input_gradient_alignment(
    m: &MlpState,
    x_star: &[f64],
    true_normal: Option<&[f64]>,
) -> Result<(f64, f64)> {
    let n = true_normal.ok_or(Error::NoTrueNormal)?;
    if n.len() != x_star.len() {
        return Err(Error::DimensionMismatch { expected: n.len(), got: x_star.len() });
    }
    let g = input_gradient(m, x_star)?;
    let par = dot(&g, n);
    let perp: f64 = g.iter().zip(n).map(|(gi, ni)| (gi - par * ni).powi(2)).sum();
    Ok((par.abs(), perp.sqrt()))
}

/// Bisects the segment `a → b` for a zero of `F`; the endpoints must have
/// opposite predicted signs.
pub fn boundary_point(m: &MlpState, a: &[f64], b: &[f64], tol: f64) -> Result<Vec<f64>> {
    let fa = centered_predictor(m, a)?;
    let fb = centered_predictor(m, b)?;
    if fa * fb > 0.0 {
        return Err(invalid("segment endpoints lie on the same side of the boundary"));
    }
    let lerp = |s: f64| -> Vec<f64> { a.iter().zip(b).map(|(u, v)| u + s * (v - u)).collect() };
    let (mut lo, mut hi) = (0.0, 1.0);
    let mut x = lerp(0.5);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        x = lerp(mid);
        let f = centered_predictor(m, &x)?;
        if f.abs() <= tol {
            break;
        }
        if (f > 0.0) == (fa > 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(x)
}

/// Training-time view of a state: cached `f(w⁰, x_μ)` for the training set.
struct Trainer<'a> {
    ds: &'a Dataset,
    f0: Vec<f64>,
    ws: Workspace,
    grad: Vec<Matrix>,
    batch: Vec<usize>,
}

impl<'a> Trainer<'a> {
    fn new(m: &MlpState, ds: &'a Dataset) -> Self {
        let mut ws = Workspace::default();
        let f0 = ds.iter().map(|(x, _)| forward(&m.initial, x, &mut ws)).collect();
        Self { ds, f0, ws, grad: zeros_like(&m.layers), batch: Vec::new() }
    }

    fn margin_of(&mut self, m: &MlpState, mu: usize) -> f64 {
        self.ds.label(mu) * (forward(&m.layers, self.ds.point(mu), &mut self.ws) - self.f0[mu])
    }

    fn outputs(&mut self, m: &MlpState) -> Vec<f64> {
        (0..self.ds.len())
            .map(|mu| forward(&m.layers, self.ds.point(mu), &mut self.ws) - self.f0[mu])
            .collect()
    }

    fn train_error(&mut self, m: &MlpState) -> f64 {
        let wrong = (0..self.ds.len()).filter(|&mu| self.margin_of(m, mu) <= 0.0).count();
        wrong as f64 / self.ds.len() as f64
    }

    /// One step `w ← w + (η/B) Σ_batch g(yF) y ∇_w f`, with the gate `g`
    /// evaluated at the pre-step weights.
    fn step<R: Rng + ?Sized>(&mut self, m: &mut MlpState, cfg: &TrainConfig, kind: LossKind, rng: &mut R) {
        sample_batch(rng, self.ds.len(), cfg.batch_size, &mut self.batch);
        for g in &mut self.grad {
            g.data.fill(0.0);
        }
        let margin = cfg.margin();
        let lr = cfg.eta / cfg.batch_size as f64;
        let mut any = false;
        for k in 0..self.batch.len() {
            let mu = self.batch[k];
            let y = self.ds.label(mu);
            let f = forward(&m.layers, self.ds.point(mu), &mut self.ws) - self.f0[mu];
            let gate = match kind {
                LossKind::Hinge => {
                    if y * f < margin {
                        1.0
                    } else {
                        0.0
                    }
                }
                LossKind::Xent => logistic(-cfg.alpha * y * f),
            };
            if gate != 0.0 {
                backward(&m.layers, &mut self.ws, lr * gate * y, &mut self.grad);
                any = true;
            }
        }
        if any {
            for (w, g) in m.layers.iter_mut().zip(&self.grad) {
                for (a, b) in w.data.iter_mut().zip(&g.data) {
                    *a += b;
                }
            }
        }
        m.steps += 1;
        m.t = m.steps as f64 * cfg.eta;
    }
}

fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn regime_label(alpha: f64) -> String {
    if alpha >= 1.0 { "lazy" } else { "feature" }.to_string()
}

fn network_record(cfg: &TrainConfig, ds: &Dataset, net: &MlpParams, kind: LossKind) -> RunRecord {
    let mut rec = RunRecord::blank(cfg, ds.len(), ds.dim());
    rec.depth = Some(net.depth);
    rec.width = Some(net.width);
    rec.regime_alpha = Some(regime_label(cfg.alpha));
    rec.loss_kind = Some(kind);
    rec
}

/// Seed of the initial weights; SGD batches use a stream derived from it.
fn init_seed(cfg: &TrainConfig) -> u64 {
    cfg.seed
}

fn sgd_seed(cfg: &TrainConfig) -> u64 {
    derive_seed(cfg.seed, 1)
}

/// Hinge-to-zero SGD from a fresh initialization.
pub fn sgd_train(
    ds: &Dataset,
    test: Option<&Dataset>,
    cfg: &TrainConfig,
    net: &MlpParams,
) -> Result<RunRecord> {
    train_network(ds, test, cfg, net).map(|(_, rec)| rec)
}

/// Like [`sgd_train`] but also returns the final network.
///
/// The loss is checked once per epoch and the epoch in which it first reaches
/// zero is replayed to find the exact step.
pub fn train_network(
    ds: &Dataset,
    test: Option<&Dataset>,
    cfg: &TrainConfig,
    net: &MlpParams,
) -> Result<(MlpState, RunRecord)> {
    cfg.validate()?;
    cfg.check_batch(ds.len())?;
    let mut m = init_network(net.depth, net.width, ds.dim(), init_seed(cfg))?;
    let mut rng = rng_from_seed(sgd_seed(cfg));
    let mut tr = Trainer::new(&m, ds);
    let epoch = epoch_len(ds.len(), cfg.batch_size);
    let mut diverged = false;

    loop {
        let snapshot = (m.clone(), rng.clone());
        for _ in 0..epoch {
            tr.step(&mut m, cfg, LossKind::Hinge, &mut rng);
        }
        let wn = m.weight_norm();
        if !wn.is_finite() || wn > cfg.divergence_norm {
            diverged = true;
            break;
        }
        let loss = hinge_loss(&tr.outputs(&m), ds.labels(), cfg.alpha)?;
        if !loss.is_finite() {
            diverged = true;
            break;
        }
        if loss == 0.0 {
            let (start, start_rng) = snapshot;
            m = first_zero_in_epoch(&mut tr, cfg, &m, start, start_rng);
            break;
        }
        if m.steps >= cfg.max_steps {
            diverged = true;
            break;
        }
    }

    let mut rec = network_record(cfg, ds, net, LossKind::Hinge);
    rec.delta_w = m.delta_w();
    rec.t_star = m.t;
    rec.steps = m.steps;
    rec.diverged = diverged;
    if !diverged {
        rec.test_error = test.map(|t| m.error_rate(t)).transpose()?;
    }
    Ok((m, rec))
}

fn first_zero_in_epoch(
    tr: &mut Trainer<'_>,
    cfg: &TrainConfig,
    end: &MlpState,
    mut m: MlpState,
    mut rng: crate::Rng,
) -> MlpState {
    let margin = cfg.margin();
    let margins: Vec<f64> = (0..tr.ds.len()).map(|mu| tr.margin_of(end, mu)).collect();
    let mut order: Vec<usize> = (0..tr.ds.len()).collect();
    order.sort_by(|&a, &b| margins[a].total_cmp(&margins[b]));
    while m.steps < end.steps {
        tr.step(&mut m, cfg, LossKind::Hinge, &mut rng);
        let failing = (0..order.len()).find(|&k| tr.margin_of(&m, order[k]) < margin);
        match failing {
            Some(k) => order[..=k].rotate_right(1),
            None => return m,
        }
    }
    end.clone()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopConfig {
    pub checkpoint_every: u64,
    pub patience: usize,
    pub validation_fraction: f64,
}

impl Default for EarlyStopConfig {
    fn default() -> Self {
        Self { checkpoint_every: 64, patience: 5, validation_fraction: 0.2 }
    }
}

impl EarlyStopConfig {
    pub fn validate(&self) -> Result<()> {
        if self.checkpoint_every == 0 {
            return Err(invalid("checkpoint interval must be >= 1"));
        }
        if self.patience == 0 {
            return Err(invalid("patience must be >= 1"));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(invalid(format!(
                "validation fraction must lie in (0, 1), got {}",
                self.validation_fraction
            )));
        }
        Ok(())
    }
}

/// Logistic-loss SGD with checkpointed early stopping.
///
/// The per-point loss is `α⁻¹ log(1 + e^{−α y F})`, so the hinge gate is
/// replaced by `σ(−α y F)`. A held-out slice of `ds` serves as validation set.
/// Training stops once the training error is zero and the validation error
/// has not improved for `patience` checkpoints; the record describes the best
/// checkpoint, and `t_star` is its time.
pub fn cross_entropy_train_early_stop(
    ds: &Dataset,
    test: Option<&Dataset>,
    cfg: &TrainConfig,
    net: &MlpParams,
    es: &EarlyStopConfig,
) -> Result<RunRecord> {
    cross_entropy_network(ds, test, cfg, net, es).map(|(_, rec)| rec)
}

pub fn cross_entropy_network(
    ds: &Dataset,
    test: Option<&Dataset>,
    cfg: &TrainConfig,
    net: &MlpParams,
    es: &EarlyStopConfig,
) -> Result<(MlpState, RunRecord)> {
    cfg.validate()?;
    es.validate()?;
    let n_val = ((ds.len() as f64) * es.validation_fraction).round() as usize;
    if n_val == 0 || n_val >= ds.len() {
        return Err(invalid(format!(
            "validation split of {n_val} points is unusable for {} points",
            ds.len()
        )));
    }
    let (train, val) = crate::data::split_train_test(ds, ds.len() - n_val, derive_seed(cfg.seed, 2))?;
    cfg.check_batch(train.len())?;
    let mut m = init_network(net.depth, net.width, ds.dim(), init_seed(cfg))?;
    let mut rng = rng_from_seed(sgd_seed(cfg));
    let mut tr = Trainer::new(&m, &train);
    let mut best: Option<(f64, MlpState)> = None;
    let mut since_best = 0usize;
    let mut diverged = false;
    let mut exhausted = false;

    loop {
        for _ in 0..es.checkpoint_every {
            tr.step(&mut m, cfg, LossKind::Xent, &mut rng);
        }
        let wn = m.weight_norm();
        if !wn.is_finite() || wn > cfg.divergence_norm {
            diverged = true;
            break;
        }
        let val_err = m.error_rate(&val)?;
        match &best {
            Some((b, _)) if val_err >= *b => since_best += 1,
            _ => {
                best = Some((val_err, m.clone()));
                since_best = 0;
            }
        }
        if tr.train_error(&m) == 0.0 && since_best >= es.patience {
            break;
        }
        if m.steps >= cfg.max_steps {
            exhausted = true;
            break;
        }
    }

    let chosen = match best {
        Some((_, b)) if !diverged => b,
        _ => m,
    };
    let mut rec = network_record(cfg, &train, net, LossKind::Xent);
    rec.delta_w = chosen.delta_w();
    rec.t_star = chosen.t;
    rec.steps = chosen.steps;
    rec.diverged = diverged;
    if exhausted {
        rec.failure = Some("max_steps exhausted before early stopping".into());
    }
    if !diverged {
        rec.test_error = test.map(|t| chosen.error_rate(t)).transpose()?;
    }
    Ok((chosen, rec))
}

/// Outcome of a divergence-temperature search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TmaxSearch {
    /// Largest temperature seen to converge.
    pub t_max: f64,
    /// Smallest temperature above `t_max` seen to fail.
    pub t_fail: f64,
    /// Every `(T, converged)` evaluation in the order performed.
    pub evaluations: Vec<(f64, bool)>,
}

/// Bracketing ratio `t_fail / t_max` at which bisection stops.
pub const TMAX_REL_WIDTH: f64 = 1.25;

/// Scans `grid` from the top for the largest converging temperature, then
/// bisects geometrically against the next grid value until the bracket ratio
/// drops below [`TMAX_REL_WIDTH`].
pub fn find_tmax_with(
    grid: &[f64],
    mut converges: impl FnMut(f64) -> Result<bool>,
) -> Result<TmaxSearch> {
    if grid.len() < 2 {
        return Err(invalid("temperature grid needs at least two values"));
    }
    if grid.iter().any(|&t| !(t > 0.0 && t.is_finite())) {
        return Err(invalid("temperatures must be positive"));
    }
    let mut sorted = grid.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let mut evaluations = Vec::new();
    let mut found = None;
    for i in (0..sorted.len()).rev() {
        let ok = converges(sorted[i])?;
        evaluations.push((sorted[i], ok));
        if ok {
            found = Some(i);
            break;
        }
    }
    let i = match found {
        None => return Err(Error::GridExhausted("no temperature in the grid converged".into())),
        Some(i) if i + 1 == sorted.len() => {
            return Err(Error::GridExhausted("every temperature in the grid converged".into()))
        }
        Some(i) => i,
    };
    let (mut lo, mut hi) = (sorted[i], sorted[i + 1]);
    while hi / lo >= TMAX_REL_WIDTH {
        let mid = (lo * hi).sqrt();
        let ok = converges(mid)?;
        evaluations.push((mid, ok));
        if ok {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(TmaxSearch { t_max: lo, t_fail: hi, evaluations })
}

/// Per-run settings for [`find_tmax`] other than the temperature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TmaxConfig {
    pub batch_size: usize,
    pub seed: u64,
    pub max_steps: u64,
}

/// T_max for hinge training of `net` on `ds` at scale `alpha`: a run
/// converges when it reaches zero loss without diverging or running out of
/// steps.
pub fn find_tmax(
    alpha: f64,
    ds: &Dataset,
    net: &MlpParams,
    grid: &[f64],
    tc: &TmaxConfig,
) -> Result<TmaxSearch> {
    find_tmax_with(grid, |t| {
        let cfg = TrainConfig::from_temperature(alpha, t, tc.batch_size, tc.seed)?
            .with_max_steps(tc.max_steps);
        Ok(!sgd_train(ds, None, &cfg, net)?.diverged)
    })
}
