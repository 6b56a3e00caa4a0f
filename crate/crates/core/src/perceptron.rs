//! Linear classifier `F(w, x) = w·x/√d`, zero-initialized and trained by
//! SGD on the margin-α⁻¹ hinge loss until the full-batch loss is exactly 0.

use rand::Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{dot, norm};
use crate::rng_from_seed;
use crate::train::{epoch_len, is_checkpoint_step, sample_batch, Checkpoint, RunRecord, TrainConfig};

pub fn predict(w: &[f64], x: &[f64]) -> Result<f64> {
    if w.len() != x.len() {
        return Err(Error::DimensionMismatch { expected: w.len(), got: x.len() });
    }
    Ok(dot(w, x) / (w.len() as f64).sqrt())
}

/// Mean of `max(0, α⁻¹ − y F)` over the points.
pub fn hinge_loss(outputs: &[f64], labels: &[f64], alpha: f64) -> Result<f64> {
    if outputs.len() != labels.len() {
        return Err(Error::DimensionMismatch { expected: labels.len(), got: outputs.len() });
    }
    if outputs.is_empty() {
        return Ok(0.0);
    }
    let margin = 1.0 / alpha;
    let total: f64 = outputs
        .iter()
        .zip(labels)
        .map(|(f, y)| (margin - y * f).max(0.0))
        .sum();
    Ok(total / outputs.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerceptronState {
    pub w: Vec<f64>,
    pub t: f64,
    pub steps: u64,
}

impl PerceptronState {
    pub fn zeros(dim: usize) -> Self {
        Self { w: vec![0.0; dim], t: 0.0, steps: 0 }
    }

    pub fn outputs(&self, ds: &Dataset) -> Vec<f64> {
        let scale = 1.0 / (self.w.len() as f64).sqrt();
        ds.iter().map(|(x, _)| dot(&self.w, x) * scale).collect()
    }

    pub fn loss(&self, ds: &Dataset, alpha: f64) -> f64 {
        hinge_loss(&self.outputs(ds), ds.labels(), alpha).expect("lengths match")
    }

    pub fn train_error(&self, ds: &Dataset) -> f64 {
        misclassification(&self.w, ds)
    }

    /// One SGD update on a fresh batch of `B` distinct indices.
    ///
    /// Every active point (`yF < α⁻¹`) in the batch adds `(η/B) y x/√d` to `w`,
    /// all gates evaluated at the pre-step weights.
    pub fn sgd_step<R: Rng + ?Sized>(
        &mut self,
        ds: &Dataset,
        cfg: &TrainConfig,
        rng: &mut R,
        batch: &mut Vec<usize>,
    ) {
        let d = self.w.len();
        let inv_sqrt_d = 1.0 / (d as f64).sqrt();
        let margin = cfg.margin();
        sample_batch(rng, ds.len(), cfg.batch_size, batch);
        let coef = cfg.eta / cfg.batch_size as f64 * inv_sqrt_d;
        // retain only active indices, gates computed before any update
        batch.retain(|&mu| ds.label(mu) * dot(&self.w, ds.point(mu)) * inv_sqrt_d < margin);
        for &mu in batch.iter() {
            let c = coef * ds.label(mu);
            for (wi, xi) in self.w.iter_mut().zip(ds.point(mu)) {
                *wi += c * xi;
            }
        }
        self.steps += 1;
        self.t = self.steps as f64 * cfg.eta;
    }
}

pub(crate) fn misclassification(w: &[f64], ds: &Dataset) -> f64 {
    if ds.is_empty() {
        return 0.0;
    }
    let wrong = ds.iter().filter(|(x, y)| y * dot(w, x) <= 0.0).count();
    wrong as f64 / ds.len() as f64
}

/// Components of `w` along and across the unit normal `n`: `(w·n, ‖w − (w·n) n‖)`.
pub fn split_weights(w: &[f64], n: &[f64]) -> (f64, f64) {
    let w1 = dot(w, n);
    let perp: f64 = w.iter().zip(n).map(|(a, b)| (a - w1 * b).powi(2)).sum();
    (w1, perp.sqrt())
}

/// Per-point fitting condition `w₁|x₁| + y w⊥·x⊥ ≥ √d/α`.
///
/// Without a true normal the equivalent form `y w·x ≥ √d/α` is used.
pub fn fitting_margin_check(w: &[f64], ds: &Dataset, alpha: f64) -> Vec<bool> {
    let threshold = (w.len() as f64).sqrt() / alpha;
    match ds.true_normal() {
        Some(n) => {
            let (w1, _) = split_weights(w, n);
            ds.iter()
                .map(|(x, y)| {
                    let x1 = dot(x, n);
                    let perp_dot = dot(w, x) - w1 * x1;
                    w1 * x1.abs() + y * perp_dot >= threshold
                })
                .collect()
        }
        None => ds.iter().map(|(x, y)| y * dot(w, x) >= threshold).collect(),
    }
}

/// Boundary alignment `w₁/‖w⊥‖`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Alignment {
    Ratio(f64),
    /// `‖w⊥‖ = 0`: the boundary coincides with the true one.
    Perfect,
}

impl Alignment {
    pub fn value(self) -> f64 {
        match self {
            Alignment::Ratio(r) => r,
            Alignment::Perfect => f64::INFINITY,
        }
    }
}

/// Alignment relative to the first coordinate axis.
pub fn alignment_ratio(w: &[f64]) -> Alignment {
    let perp = norm(&w[1..]);
    if perp == 0.0 {
        Alignment::Perfect
    } else {
        Alignment::Ratio(w[0] / perp)
    }
}

/// `max_μ c_μ/|x₁^μ|` with `c_μ = −y w⊥·x⊥/‖w⊥‖`, using the run's own `w⊥`.
pub fn max_noise_ratio(w: &[f64], ds: &Dataset) -> Result<f64> {
    let n = ds.true_normal().ok_or(Error::NoTrueNormal)?;
    let (w1, perp) = split_weights(w, n);
    if perp == 0.0 {
        return Err(Error::InvalidParameter("w_perp is zero".into()));
    }
    Ok(ds
        .iter()
        .map(|(x, y)| {
            let x1 = dot(x, n);
            let c = -y * (dot(w, x) - w1 * x1) / perp;
            c / x1.abs()
        })
        .fold(f64::NEG_INFINITY, f64::max))
}

/// Runs SGD from `w = 0` until the full-batch hinge loss is exactly zero.
///
/// The loss is checked once per epoch (`⌈P/B⌉` steps); the epoch in which it
/// first reaches zero is replayed to locate the exact zero-loss step. Runs whose weights blow
/// past `divergence_norm`, turn non-finite, or exhaust `max_steps` come back
/// with `diverged` set.
pub fn train_to_zero(ds: &Dataset, cfg: &TrainConfig) -> Result<RunRecord> {
    train_to_zero_with_test(ds, None, cfg)
}

pub fn train_to_zero_with_test(
    ds: &Dataset,
    test: Option<&Dataset>,
    cfg: &TrainConfig,
) -> Result<RunRecord> {
    train_state(ds, test, cfg).map(|(_, record)| record)
}

/// Like [`train_to_zero_with_test`] but also hands back the final weights.
pub fn train_state(
    ds: &Dataset,
    test: Option<&Dataset>,
    cfg: &TrainConfig,
) -> Result<(PerceptronState, RunRecord)> {
    cfg.validate()?;
    cfg.check_batch(ds.len())?;
    let d = ds.dim();
    let mut rng = rng_from_seed(cfg.seed);
    let mut state = PerceptronState::zeros(d);
    let mut batch = Vec::with_capacity(cfg.batch_size);
    let epoch = epoch_len(ds.len(), cfg.batch_size);
    let mut trajectory = cfg.record_trajectory.then(Vec::new);
    let mut diverged = false;

    loop {
        let snapshot = (state.clone(), rng.clone());
        for _ in 0..epoch {
            state.sgd_step(ds, cfg, &mut rng, &mut batch);
            if let Some(traj) = trajectory.as_mut() {
                if is_checkpoint_step(state.steps) {
                    traj.push(checkpoint(&state, ds));
                }
            }
        }
        let wn = norm(&state.w);
        if !wn.is_finite() || wn > cfg.divergence_norm {
            diverged = true;
            break;
        }
        let loss = state.loss(ds, cfg.alpha);
        if !loss.is_finite() {
            diverged = true;
            break;
        }
        if loss == 0.0 {
            let (start, start_rng) = snapshot;
            state = first_zero_in_epoch(ds, cfg, &state, start, start_rng, &mut batch);
            if let Some(traj) = trajectory.as_mut() {
                traj.retain(|c| c.steps <= state.steps);
            }
            break;
        }
        if state.steps >= cfg.max_steps {
            diverged = true;
            break;
        }
    }

    let mut rec = RunRecord::blank(cfg, ds.len(), d);
    if let Some(n) = ds.true_normal() {
        let (w1, perp) = split_weights(&state.w, n);
        rec.w1_final = Some(w1);
        rec.w_perp_norm = Some(perp);
    }
    rec.delta_w = norm(&state.w);
    rec.steps = state.steps;
    rec.t_star = state.t;
    rec.diverged = diverged;
    rec.test_error = test.map(|t| misclassification(&state.w, t));
    if let Some(mut traj) = trajectory {
        if traj.last().map(|c| c.steps) != Some(state.steps) {
            traj.push(checkpoint(&state, ds));
        }
        rec.trajectory = Some(traj);
    }
    Ok((state, rec))
}

/// Replays the epoch that ended at zero loss and returns the state at its
/// first zero-loss step.
///
/// Points are tested in ascending order of their margin at `end`; a failing
/// point is moved to the front, so most non-final steps exit after a few dot
/// products.
fn first_zero_in_epoch(
    ds: &Dataset,
    cfg: &TrainConfig,
    end: &PerceptronState,
    mut state: PerceptronState,
    mut rng: crate::Rng,
    batch: &mut Vec<usize>,
) -> PerceptronState {
    let scale = 1.0 / (ds.dim() as f64).sqrt();
    let margin = cfg.margin();
    let margins: Vec<f64> = ds.iter().map(|(x, y)| y * dot(&end.w, x)).collect();
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.sort_by(|&a, &b| margins[a].total_cmp(&margins[b]));
    while state.steps < end.steps {
        state.sgd_step(ds, cfg, &mut rng, batch);
        let failing = order
            .iter()
            .position(|&mu| ds.label(mu) * (dot(&state.w, ds.point(mu)) * scale) < margin);
        match failing {
            Some(k) => order[..=k].rotate_right(1),
            None => return state,
        }
    }
    end.clone()
}

fn checkpoint(state: &PerceptronState, ds: &Dataset) -> Checkpoint {
    let (w1, perp) = match ds.true_normal() {
        Some(n) => {
            let (a, b) = split_weights(&state.w, n);
            (Some(a), Some(b))
        }
        None => (None, None),
    };
    Checkpoint {
        t: state.t,
        steps: state.steps,
        w1,
        w_perp_norm: perp,
        train_error: state.train_error(ds),
    }
}
