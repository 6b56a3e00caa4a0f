//! Types shared by the perceptron and network engines.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Hyper-parameters of one SGD run. The temperature is always `eta / batch_size`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub alpha: f64,
    pub eta: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub max_steps: u64,
    pub divergence_norm: f64,
    #[serde(default)]
    pub record_trajectory: bool,
}

pub const DEFAULT_DIVERGENCE_NORM: f64 = 1e8;
pub const DEFAULT_MAX_STEPS: u64 = 200_000_000;

impl TrainConfig {
    pub fn new(alpha: f64, eta: f64, batch_size: usize, seed: u64) -> Result<Self> {
        let cfg = Self {
            alpha,
            eta,
            batch_size,
            seed,
            max_steps: DEFAULT_MAX_STEPS,
            divergence_norm: DEFAULT_DIVERGENCE_NORM,
            record_trajectory: false,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Config with `eta = temperature * batch_size`.
    pub fn from_temperature(alpha: f64, temperature: f64, batch_size: usize, seed: u64) -> Result<Self> {
        Self::new(alpha, temperature * batch_size as f64, batch_size, seed)
    }

    pub fn with_max_steps(mut self, max_steps: u64) -> Self {
        self.max_steps = max_steps;
        self
    }

    pub fn with_divergence_norm(mut self, norm: f64) -> Self {
        self.divergence_norm = norm;
        self
    }

    pub fn with_trajectory(mut self, on: bool) -> Self {
        self.record_trajectory = on;
        self
    }

    pub fn temperature(&self) -> f64 {
        self.eta / self.batch_size as f64
    }

    pub fn margin(&self) -> f64 {
        1.0 / self.alpha
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(invalid(format!("alpha must be positive, got {}", self.alpha)));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(invalid(format!("eta must be positive, got {}", self.eta)));
        }
        if self.batch_size == 0 {
            return Err(invalid("batch size must be positive"));
        }
        if self.max_steps == 0 {
            return Err(invalid("max_steps must be positive"));
        }
        if !(self.divergence_norm > 0.0) {
            return Err(invalid("divergence threshold must be positive"));
        }
        Ok(())
    }

    pub(crate) fn check_batch(&self, p: usize) -> Result<()> {
        if self.batch_size > p {
            return Err(invalid(format!(
                "batch size {} exceeds training set size {p}",
                self.batch_size
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Hinge,
    Xent,
}

/// One trajectory sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub t: f64,
    pub steps: u64,
    pub w1: Option<f64>,
    pub w_perp_norm: Option<f64>,
    pub train_error: f64,
}

/// Observables of one finished run, one JSON object per line on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub w1_final: Option<f64>,
    pub w_perp_norm: Option<f64>,
    pub delta_w: f64,
    pub t_star: f64,
    pub steps: u64,
    pub diverged: bool,
    pub test_error: Option<f64>,
    pub alpha: f64,
    pub eta: f64,
    pub batch_size: usize,
    pub temperature: f64,
    #[serde(rename = "P")]
    pub p: usize,
    pub chi: Option<f64>,
    pub d: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regime_alpha: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss_kind: Option<LossKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zeta_phase: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_index: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec_fingerprint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trajectory: Option<Vec<Checkpoint>>,
}

impl RunRecord {
    pub(crate) fn blank(cfg: &TrainConfig, p: usize, d: usize) -> Self {
        Self {
            w1_final: None,
            w_perp_norm: None,
            delta_w: 0.0,
            t_star: 0.0,
            steps: 0,
            diverged: false,
            test_error: None,
            alpha: cfg.alpha,
            eta: cfg.eta,
            batch_size: cfg.batch_size,
            temperature: cfg.temperature(),
            p,
            chi: None,
            d,
            seed: cfg.seed,
            depth: None,
            width: None,
            regime_alpha: None,
            loss_kind: None,
            zeta_phase: None,
            failure: None,
            run_index: None,
            spec_fingerprint: None,
            trajectory: None,
        }
    }

    /// Numeric view of a field by its JSON name, used by fits and plots.
    pub fn field(&self, name: &str) -> Option<f64> {
        match name {
            "w1_final" => self.w1_final,
            "w_perp_norm" => self.w_perp_norm,
            "delta_w" => Some(self.delta_w),
            "t_star" => Some(self.t_star),
            "steps" => Some(self.steps as f64),
            "test_error" => self.test_error,
            "alpha" => Some(self.alpha),
            "eta" => Some(self.eta),
            "batch_size" => Some(self.batch_size as f64),
            "temperature" => Some(self.temperature),
            "P" => Some(self.p as f64),
            "chi" => self.chi,
            "d" => Some(self.d as f64),
            "seed" => Some(self.seed as f64),
            "depth" => self.depth.map(|v| v as f64),
            "width" => self.width.map(|v| v as f64),
            "run_index" => self.run_index.map(|v| v as f64),
            _ => None,
        }
    }

    pub fn has_field(name: &str) -> bool {
        FIELD_NAMES.contains(&name)
    }
}

pub const FIELD_NAMES: &[&str] = &[
    "w1_final",
    "w_perp_norm",
    "delta_w",
    "t_star",
    "steps",
    "test_error",
    "alpha",
    "eta",
    "batch_size",
    "temperature",
    "P",
    "chi",
    "d",
    "seed",
    "depth",
    "width",
    "run_index",
];

/// Draws `k` distinct indices from `0..n` into `out` (Floyd's algorithm).
pub(crate) fn sample_batch<R: Rng + ?Sized>(rng: &mut R, n: usize, k: usize, out: &mut Vec<usize>) {
    out.clear();
    if k == n {
        out.extend(0..n);
        return;
    }
    for j in (n - k)..n {
        let r = rng.random_range(0..=j);
        if out.contains(&r) {
            out.push(j);
        } else {
            out.push(r);
        }
    }
}

/// Steps per epoch, `⌈P / B⌉`.
pub(crate) fn epoch_len(p: usize, b: usize) -> u64 {
    p.div_ceil(b) as u64
}

/// Step counts at which trajectories are sampled: 1, 2, 4, ...
pub(crate) fn is_checkpoint_step(steps: u64) -> bool {
    steps.is_power_of_two()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng_from_seed;

    #[test]
    fn temperature_is_ratio() {
        let cfg = TrainConfig::new(2.0, 0.3, 4, 0).unwrap();
        assert_eq!(cfg.temperature(), 0.3 / 4.0);
        let cfg = TrainConfig::from_temperature(1.0, 0.05, 2, 0).unwrap();
        assert_eq!(cfg.eta, 0.1);
        assert!(TrainConfig::new(0.0, 0.1, 1, 0).is_err());
        assert!(TrainConfig::new(1.0, 0.1, 0, 0).is_err());
        assert!(cfg.check_batch(1).is_err());
    }

    #[test]
    fn batches_are_distinct_and_in_range() {
        let mut rng = rng_from_seed(4);
        let mut buf = Vec::new();
        for k in [1, 2, 5, 10] {
            for _ in 0..200 {
                sample_batch(&mut rng, 10, k, &mut buf);
                assert_eq!(buf.len(), k);
                let mut s = buf.clone();
                s.sort_unstable();
                s.dedup();
                assert_eq!(s.len(), k);
                assert!(buf.iter().all(|&i| i < 10));
            }
        }
    }

    #[test]
    fn batch_sampling_is_uniform() {
        let mut rng = rng_from_seed(9);
        let mut buf = Vec::new();
        let mut counts = [0usize; 6];
        let draws = 60_000;
        for _ in 0..draws {
            sample_batch(&mut rng, 6, 2, &mut buf);
            for &i in &buf {
                counts[i] += 1;
            }
        }
        let expect = draws as f64 * 2.0 / 6.0;
        for c in counts {
            assert!((c as f64 - expect).abs() < 5.0 * expect.sqrt(), "{counts:?}");
        }
    }

    #[test]
    fn record_field_lookup() {
        let cfg = TrainConfig::new(1.0, 0.2, 2, 5).unwrap();
        let rec = RunRecord::blank(&cfg, 10, 3);
        assert_eq!(rec.field("P"), Some(10.0));
        assert_eq!(rec.field("temperature"), Some(0.1));
        assert_eq!(rec.field("nope"), None);
        let json = serde_json::to_string(&rec).unwrap();
        for key in ["w1_final", "w_perp_norm", "t_star", "steps", "diverged", "alpha", "eta",
                    "batch_size", "temperature", "\"P\"", "chi", "\"d\"", "seed"] {
            assert!(json.contains(key), "missing {key} in {json}");
        }
        let back: RunRecord = serde_json::from_str(&json).unwrap();
        assert_eq!(back, rec);
    }
}
