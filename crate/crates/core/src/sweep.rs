//! Declarative grids of training runs, executed in parallel and stored as
//! append-only JSONL.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Mutex;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{sample_chi_dataset, ChiDistribution, Dataset};
use crate::error::{invalid, Error, Result};
use crate::mlp::{self, EarlyStopConfig, MlpParams};
use crate::perceptron;
use crate::train::{epoch_len, LossKind, RunRecord, TrainConfig, DEFAULT_DIVERGENCE_NORM};
use crate::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Perceptron,
    Mlp,
}

/// Value lists spanned by a sweep. Exactly one of `temperature` and `eta` is
/// given; the other stays empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub alpha: Vec<f64>,
    #[serde(default)]
    pub temperature: Vec<f64>,
    #[serde(default)]
    pub eta: Vec<f64>,
    pub batch_size: Vec<usize>,
    #[serde(rename = "P")]
    pub p: Vec<usize>,
    pub chi: Vec<f64>,
    pub d: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckpointUnit {
    Steps,
    Epochs,
}

/// Network settings for `mlp` sweeps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSettings {
    pub depth: usize,
    pub width: usize,
    #[serde(default = "default_loss")]
    pub loss: LossKind,
    #[serde(default)]
    pub early_stop: EarlyStopConfig,
    /// Unit of `early_stop.checkpoint_every`.
    #[serde(default = "default_unit")]
    pub checkpoint_unit: CheckpointUnit,
}

fn default_loss() -> LossKind {
    LossKind::Hinge
}

fn default_unit() -> CheckpointUnit {
    CheckpointUnit::Steps
}

impl Default for MlpSettings {
    fn default() -> Self {
        let p = MlpParams::default();
        Self {
            depth: p.depth,
            width: p.width,
            loss: LossKind::Hinge,
            early_stop: EarlyStopConfig::default(),
            checkpoint_unit: CheckpointUnit::Steps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub model_kind: ModelKind,
    pub grid: SweepGrid,
    pub replicas: usize,
    pub base_seed: u64,
    pub max_steps: u64,
    #[serde(default = "default_divergence")]
    pub divergence_norm: f64,
    /// Held-out points drawn per run for the test error; 0 disables it.
    #[serde(default)]
    pub test_size: usize,
    #[serde(default)]
    pub mlp: Option<MlpSettings>,
}

fn default_divergence() -> f64 {
    DEFAULT_DIVERGENCE_NORM
}

/// Grid coordinates of one run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunPoint {
    pub run_index: u64,
    pub alpha: f64,
    /// Temperature or learning rate, depending on the grid.
    pub rate: f64,
    pub batch_size: usize,
    pub p: usize,
    pub chi: f64,
    pub d: usize,
    pub replica: usize,
}

const DATA_STREAM: u64 = 0x5eed_da7a;
const TEST_STREAM: u64 = 0x7e57;

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        let g = &self.grid;
        let rates = match (g.temperature.is_empty(), g.eta.is_empty()) {
            (false, true) => &g.temperature,
            (true, false) => &g.eta,
            _ => return Err(invalid("give exactly one of grid.temperature and grid.eta")),
        };
        if g.alpha.is_empty() || g.batch_size.is_empty() || g.p.is_empty() || g.chi.is_empty() || g.d.is_empty() {
            return Err(invalid("every grid dimension needs at least one value"));
        }
        if rates.iter().chain(&g.alpha).any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(invalid("alpha and temperature/eta values must be positive"));
        }
        if g.chi.iter().any(|&c| !(c >= 0.0 && c.is_finite())) {
            return Err(invalid("chi values must be >= 0"));
        }
        if g.batch_size.contains(&0) || g.p.contains(&0) || g.d.iter().any(|&d| d < 2) {
            return Err(invalid("batch sizes and P must be >= 1, d must be >= 2"));
        }
        if self.replicas == 0 {
            return Err(invalid("replicas must be >= 1"));
        }
        if self.max_steps == 0 {
            return Err(invalid("max_steps must be >= 1"));
        }
        if let Some(m) = &self.mlp {
            if m.width == 0 {
                return Err(invalid("mlp width must be >= 1"));
            }
            if m.loss == LossKind::Xent {
                m.early_stop.validate()?;
            }
        }
        Ok(())
    }

    fn rates(&self) -> &[f64] {
        if self.grid.eta.is_empty() {
            &self.grid.temperature
        } else {
            &self.grid.eta
        }
    }

    pub fn run_count(&self) -> usize {
        let g = &self.grid;
        g.alpha.len() * self.rates().len() * g.batch_size.len() * g.p.len() * g.chi.len() * g.d.len() * self.replicas
    }

    /// All runs in index order; the replica index varies fastest, then `d`,
    /// `chi`, `P`, batch size, rate and `alpha`.
    pub fn runs(&self) -> Vec<RunPoint> {
        let g = &self.grid;
        let mut out = Vec::with_capacity(self.run_count());
        for &alpha in &g.alpha {
            for &rate in self.rates() {
                for &batch_size in &g.batch_size {
                    for &p in &g.p {
                        for &chi in &g.chi {
                            for &d in &g.d {
                                for replica in 0..self.replicas {
                                    let run_index = out.len() as u64;
                                    out.push(RunPoint { run_index, alpha, rate, batch_size, p, chi, d, replica });
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Hex SHA-256 of the spec's JSON form.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(self).expect("spec serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Seed of the training set of a run. It depends on the replica and the
    /// data coordinates only, so runs differing in α, T or B share data.
    pub fn data_seed(&self, run: &RunPoint) -> u64 {
        let mut s = derive_seed(self.base_seed ^ DATA_STREAM, run.replica as u64);
        s = derive_seed(s, run.p as u64);
        s = derive_seed(s, run.chi.to_bits());
        derive_seed(s, run.d as u64)
    }

    pub fn train_config(&self, run: &RunPoint) -> Result<TrainConfig> {
        let seed = derive_seed(self.base_seed, run.run_index);
        let cfg = if self.grid.eta.is_empty() {
            TrainConfig::from_temperature(run.alpha, run.rate, run.batch_size, seed)?
        } else {
            TrainConfig::new(run.alpha, run.rate, run.batch_size, seed)?
        };
        Ok(cfg.with_max_steps(self.max_steps).with_divergence_norm(self.divergence_norm))
    }

    /// Executes one run; engine errors become failed records.
    pub fn execute(&self, run: &RunPoint) -> RunRecord {
        let mut rec = match self.try_execute(run) {
            Ok(rec) => rec,
            Err(e) => self.failed_record(run, &e),
        };
        rec.chi = Some(run.chi);
        rec.run_index = Some(run.run_index);
        rec.spec_fingerprint = Some(self.fingerprint());
        rec
    }

    fn try_execute(&self, run: &RunPoint) -> Result<RunRecord> {
        let cfg = self.train_config(run)?;
        let dist = ChiDistribution::new(run.chi, run.d)?;
        let data_seed = self.data_seed(run);
        let ds = sample_chi_dataset(&dist, run.p, data_seed)?;
        let test = match self.test_size {
            0 => None,
            n => Some(sample_chi_dataset(&dist, n, derive_seed(data_seed, TEST_STREAM))?),
        };
        match self.model_kind {
            ModelKind::Perceptron => perceptron::train_to_zero_with_test(&ds, test.as_ref(), &cfg),
            ModelKind::Mlp => self.run_mlp(&ds, test.as_ref(), &cfg),
        }
    }

    fn run_mlp(&self, ds: &Dataset, test: Option<&Dataset>, cfg: &TrainConfig) -> Result<RunRecord> {
        let settings = self.mlp.clone().unwrap_or_default();
        let net = MlpParams { depth: settings.depth, width: settings.width };
        match settings.loss {
            LossKind::Hinge => mlp::sgd_train(ds, test, cfg, &net),
            LossKind::Xent => {
                let mut es = settings.early_stop;
                if settings.checkpoint_unit == CheckpointUnit::Epochs {
                    let n_val = (ds.len() as f64 * es.validation_fraction).round() as usize;
                    let train = ds.len().saturating_sub(n_val).max(1);
                    es.checkpoint_every *= epoch_len(train, cfg.batch_size);
                }
                mlp::cross_entropy_train_early_stop(ds, test, cfg, &net, &es)
            }
        }
    }

    fn failed_record(&self, run: &RunPoint, e: &Error) -> RunRecord {
        // the config itself may be what failed, so build it without validation
        let cfg = TrainConfig {
            alpha: run.alpha,
            eta: if self.grid.eta.is_empty() { run.rate * run.batch_size as f64 } else { run.rate },
            batch_size: run.batch_size.max(1),
            seed: derive_seed(self.base_seed, run.run_index),
            max_steps: self.max_steps,
            divergence_norm: self.divergence_norm,
            record_trajectory: false,
        };
        let mut rec = RunRecord::blank(&cfg, run.p, run.d);
        rec.batch_size = run.batch_size;
        rec.failure = Some(e.to_string());
        if self.model_kind == ModelKind::Mlp {
            let s = self.mlp.clone().unwrap_or_default();
            rec.depth = Some(s.depth);
            rec.width = Some(s.width);
            rec.loss_kind = Some(s.loss);
        }
        rec
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub records: Vec<RunRecord>,
    pub spec_fingerprint: String,
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    if workers == 0 {
        return Err(invalid("worker count must be >= 1"));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| invalid(format!("cannot start worker pool: {e}")))
}

/// Runs every grid point on `workers` threads; records come back sorted by
/// run index.
pub fn run_sweep(spec: &SweepSpec, workers: usize) -> Result<SweepResult> {
    spec.validate()?;
    let runs = spec.runs();
    let records = pool(workers)?.install(|| runs.par_iter().map(|r| spec.execute(r)).collect());
    Ok(SweepResult { records, spec_fingerprint: spec.fingerprint() })
}

pub fn record_line(rec: &RunRecord) -> Result<String> {
    Ok(serde_json::to_string(rec)?)
}

/// Writes records as JSONL, one object per line.
pub fn persist(path: impl AsRef<Path>, records: &[RunRecord]) -> Result<()> {
    let path = path.as_ref();
    let tmp = path.with_extension("jsonl.tmp");
    {
        let mut out = std::io::BufWriter::new(File::create(&tmp)?);
        for r in records {
            writeln!(out, "{}", record_line(r)?)?;
        }
        out.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Reads a JSONL store. A final line that fails to parse (an interrupted
/// write) is dropped with a warning; a bad line elsewhere is an error.
pub fn load(path: impl AsRef<Path>) -> Result<Vec<RunRecord>> {
    let path = path.as_ref();
    let lines: Vec<String> = BufReader::new(File::open(path)?).lines().collect::<std::io::Result<_>>()?;
    let last = lines.iter().rposition(|l| !l.trim().is_empty());
    let mut records = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<RunRecord>(line) {
            Ok(r) => records.push(r),
            Err(e) if Some(i) == last => {
                warn!("{}: discarding unreadable final line {}: {e}", path.display(), i + 1);
            }
            Err(e) => return Err(e.into()),
        }
    }
    Ok(records)
}

/// Completes the sweep stored at `path`, running only the missing indices.
///
/// Finished records are appended as they complete; at the end the store is
/// rewritten in run-index order, so a resumed store matches an uninterrupted
/// one byte for byte.
pub fn resume(spec: &SweepSpec, path: impl AsRef<Path>, workers: usize) -> Result<SweepResult> {
    spec.validate()?;
    let path = path.as_ref();
    let fingerprint = spec.fingerprint();
    let mut done = if path.exists() { load(path)? } else { Vec::new() };
    if let Some(found) = done
        .iter()
        .filter_map(|r| r.spec_fingerprint.as_deref())
        .find(|f| *f != fingerprint)
    {
        return Err(Error::FingerprintMismatch { expected: fingerprint, found: found.to_string() });
    }
    let total = spec.run_count() as u64;
    done.retain(|r| r.run_index.is_some_and(|i| i < total));
    done.sort_by_key(|r| r.run_index);
    done.dedup_by_key(|r| r.run_index);
    let have: std::collections::HashSet<u64> = done.iter().filter_map(|r| r.run_index).collect();
    let todo: Vec<RunPoint> = spec.runs().into_iter().filter(|r| !have.contains(&r.run_index)).collect();

    if !todo.is_empty() {
        // rewrite first so a torn final line does not precede new appends
        persist(path, &done)?;
        let writer = Mutex::new(OpenOptions::new().append(true).open(path)?);
        let fresh: Vec<Result<RunRecord>> = pool(workers)?.install(|| {
            todo.par_iter()
                .map(|r| {
                    let rec = spec.execute(r);
                    let line = record_line(&rec)?;
                    let mut f = writer.lock().expect("writer lock");
                    writeln!(f, "{line}")?;
                    f.flush()?;
                    Ok(rec)
                })
                .collect()
        });
        for r in fresh {
            done.push(r?);
        }
        done.sort_by_key(|r| r.run_index);
    }
    persist(path, &done)?;
    Ok(SweepResult { records: done, spec_fingerprint: fingerprint })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn small_spec() -> SweepSpec {
        SweepSpec {
            model_kind: ModelKind::Perceptron,
            grid: SweepGrid {
                alpha: vec![1.0],
                temperature: vec![0.05, 0.2, 0.5],
                eta: vec![],
                batch_size: vec![2],
                p: vec![16, 32],
                chi: vec![1.0],
                d: vec![8],
            },
            replicas: 2,
            base_seed: 42,
            max_steps: 1_000_000,
            divergence_norm: DEFAULT_DIVERGENCE_NORM,
            test_size: 0,
            mlp: None,
        }
    }

    #[test]
    fn grid_enumeration() {
        let spec = small_spec();
        assert_eq!(spec.run_count(), 12);
        let runs = spec.runs();
        assert_eq!(runs.len(), 12);
        assert!(runs.iter().enumerate().all(|(i, r)| r.run_index == i as u64));
        assert_eq!((runs[0].replica, runs[1].replica), (0, 1));
        assert_eq!(spec.data_seed(&runs[0]), spec.data_seed(&runs[4]));
        assert_ne!(spec.data_seed(&runs[0]), spec.data_seed(&runs[1]));
    }

    #[test]
    fn validation() {
        let mut s = small_spec();
        s.grid.eta = vec![0.1];
        assert!(s.validate().is_err());
        let mut s = small_spec();
        s.grid.p.clear();
        assert!(s.validate().is_err());
        let mut s = small_spec();
        s.replicas = 0;
        assert!(s.validate().is_err());
        assert!(run_sweep(&small_spec(), 0).is_err());
    }

    #[test]
    fn fingerprint_tracks_content() {
        let a = small_spec();
        let mut b = small_spec();
        assert_eq!(a.fingerprint(), b.fingerprint());
        b.base_seed += 1;
        assert_ne!(a.fingerprint(), b.fingerprint());
        assert_eq!(a.fingerprint().len(), 64);
    }

    #[test]
    fn bad_runs_become_failed_records() {
        let mut spec = small_spec();
        spec.grid.batch_size = vec![20];
        let res = run_sweep(&spec, 1).unwrap();
        assert_eq!(res.records.len(), 12);
        for r in &res.records {
            if r.p == 16 {
                assert!(r.failure.as_deref().unwrap().contains("batch size"));
            } else {
                assert!(r.failure.is_none());
            }
        }
    }
}
