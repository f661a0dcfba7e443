//! Mini-batch SGD with constant and diminishing step schedules, restart
//! sweeps, and convergence diagnostics.
//!
//! The update is `theta_{k+1} = theta_k - gamma_k * G(theta_k)` where `k`
//! counts global steps across every epoch (and, in continuation runs,
//! across every homotopy stage). Batches are drawn by seeded
//! shuffle-each-epoch without replacement, so a run is bit-reproducible
//! from its seed when executed sequentially.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::linalg::{norm_sq, Rng, Vector};
use crate::{HtaError, Result};

/// Step-size schedule `gamma_k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum StepSchedule {
    Constant { gamma: f64 },
    /// `gamma_k = gamma0 / (k + 1)`: diverging sum, converging square sum.
    Diminishing { gamma0: f64 },
}

impl StepSchedule {
    #[inline]
    pub fn gamma(&self, k: usize) -> f64 {
        match *self {
            StepSchedule::Constant { gamma } => gamma,
            StepSchedule::Diminishing { gamma0 } => gamma0 / (k as f64 + 1.0),
        }
    }
}

/// Training configuration. Paper-parity defaults: constant 0.05 learning
/// rate, batch 128, 380 epochs, 15 restarts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub schedule: StepSchedule,
    /// Clamped to the dataset size at run time.
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub restarts: usize,
    /// Keep every s-th iterate for the convergence diagnostics; `None`
    /// retains nothing. The retained subsequence approximates the
    /// theorem quantities.
    pub retain_theta_every: Option<usize>,
    /// Evaluate the probe callback every this many steps.
    pub probe_every: Option<usize>,
    /// Compute the full-batch loss at the end of each epoch.
    pub epoch_full_loss: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            schedule: StepSchedule::Constant { gamma: 0.05 },
            batch_size: 128,
            epochs: 380,
            seed: 0,
            restarts: 15,
            retain_theta_every: None,
            probe_every: None,
            epoch_full_loss: false,
        }
    }
}

/// Anything SGD can train: a loss over (theta, mini-batch of sample
/// indices). Implementations may keep scratch state, hence `&mut self`.
pub trait StochasticObjective {
    fn param_count(&self) -> usize;
    fn sample_count(&self) -> usize;
    /// Mean batch loss; writes the mean batch gradient into `grad`.
    fn batch_loss_grad(&mut self, theta: &[f64], batch: &[usize], grad: &mut [f64]) -> f64;
}

/// One SGD update, in place: `theta -= gamma_k * grad`. Panics on a
/// length mismatch. Single-writer by contract.
pub fn sgd_step(theta: &mut [f64], grad: &[f64], k: usize, sched: &StepSchedule) {
    assert_eq!(theta.len(), grad.len(), "sgd_step shape mismatch: {} vs {}", theta.len(), grad.len());
    let gamma = sched.gamma(k);
    for (t, g) in theta.iter_mut().zip(grad) {
        *t -= gamma * g;
    }
}

/// Per-step record: the batch loss is evaluated at `theta_k`, before the
/// update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub k: usize,
    pub t: f64,
    pub gamma: f64,
    pub batch_loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub t: f64,
    pub epoch: usize,
    pub mean_batch_loss: f64,
    pub full_loss: Option<f64>,
}

/// Retained iterate for the theorem diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaSample {
    pub k: usize,
    pub t: f64,
    pub gamma: f64,
    pub theta: Vector,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeRecord {
    pub step: usize,
    pub loss: f64,
}

/// Everything a training run leaves behind.
#[derive(Debug, Clone, Default)]
pub struct DiagnosticsTrace {
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
    pub theta_samples: Vec<ThetaSample>,
    pub probes: Vec<ProbeRecord>,
}

impl DiagnosticsTrace {
    pub fn last_epoch_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.mean_batch_loss)
    }

    /// CSV export: `step,k,t,gamma,batch_loss,full_loss` with `full_loss`
    /// filled on epoch-final rows when it was computed.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "step,k,t,gamma,batch_loss,full_loss")?;
        // Epochs are appended in step order; pair each with its final row
        // (the row after which `step` resets to 0, or the last row).
        let mut full_by_row = std::collections::HashMap::new();
        let mut epoch_ends = Vec::with_capacity(self.epochs.len());
        for (i, s) in self.steps.iter().enumerate().skip(1) {
            if s.step == 0 {
                epoch_ends.push(i - 1);
            }
        }
        if !self.steps.is_empty() {
            epoch_ends.push(self.steps.len() - 1);
        }
        for (end, ep) in epoch_ends.iter().zip(&self.epochs) {
            if let Some(fl) = ep.full_loss {
                full_by_row.insert(*end, fl);
            }
        }
        for (i, s) in self.steps.iter().enumerate() {
            match full_by_row.get(&i) {
                Some(fl) => writeln!(w, "{},{},{},{},{},{}", s.step, s.k, s.t, s.gamma, s.batch_loss, fl)?,
                None => writeln!(w, "{},{},{},{},{},", s.step, s.k, s.t, s.gamma, s.batch_loss)?,
            }
        }
        Ok(())
    }
}

/// Sequential SGD driver. Owns the shuffle RNG and the global step
/// counter so several stages (homotopy steps) share one schedule.
#[derive(Debug, Clone)]
pub struct SgdDriver {
    pub schedule: StepSchedule,
    pub batch_size: usize,
    pub rng: Rng,
    pub k: usize,
    pub retain_theta_every: Option<usize>,
    pub probe_every: Option<usize>,
    pub epoch_full_loss: bool,
}

impl SgdDriver {
    pub fn new(cfg: &TrainConfig) -> Self {
        SgdDriver {
            schedule: cfg.schedule,
            batch_size: cfg.batch_size.max(1),
            rng: Rng::new(cfg.seed),
            k: 0,
            retain_theta_every: cfg.retain_theta_every,
            probe_every: cfg.probe_every,
            epoch_full_loss: cfg.epoch_full_loss,
        }
    }

    /// Runs up to `epochs` epochs (or forever if `None`), stopping early
    /// once `max_steps` steps have been taken in *this call*. Either
    /// bound may be `None`, not both. `t` is recorded in the trace.
    pub fn run<O: StochasticObjective + ?Sized>(
        &mut self,
        obj: &mut O,
        theta: &mut Vector,
        epochs: Option<usize>,
        max_steps: Option<usize>,
        t: f64,
        trace: &mut DiagnosticsTrace,
    ) -> Result<()> {
        self.run_with_probe(obj, theta, epochs, max_steps, t, trace, &mut |_, _| None)
    }

    /// As [`SgdDriver::run`], with a probe called every `probe_every`
    /// steps (after the update); a returned value is recorded.
    #[allow(clippy::too_many_arguments)]
    pub fn run_with_probe<O: StochasticObjective + ?Sized>(
        &mut self,
        obj: &mut O,
        theta: &mut Vector,
        epochs: Option<usize>,
        max_steps: Option<usize>,
        t: f64,
        trace: &mut DiagnosticsTrace,
        probe: &mut dyn FnMut(usize, &[f64]) -> Option<f64>,
    ) -> Result<()> {
        assert!(epochs.is_some() || max_steps.is_some(), "unbounded training loop");
        assert_eq!(theta.len(), obj.param_count(), "theta length mismatch");
        let n = obj.sample_count();
        if n == 0 {
            return Err(HtaError::Data("cannot train on an empty dataset".into()));
        }
        let batch = self.batch_size.min(n);
        let mut grad = vec![0.0; theta.len()];
        let mut order: Vec<usize> = (0..n).collect();
        let mut steps_taken = 0usize;

        let mut epoch = 0usize;
        loop {
            if let Some(e) = epochs {
                if epoch >= e {
                    break;
                }
            }
            if let Some(m) = max_steps {
                if steps_taken >= m {
                    break;
                }
            }
            self.rng.shuffle(&mut order);
            let mut epoch_loss = 0.0;
            let mut epoch_batches = 0usize;
            for (b, chunk) in order.chunks(batch).enumerate() {
                if let Some(m) = max_steps {
                    if steps_taken >= m {
                        break;
                    }
                }
                let loss = obj.batch_loss_grad(theta, chunk, &mut grad);
                if !loss.is_finite() {
                    return Err(HtaError::Diverged { step: self.k, loss });
                }
                let gamma = self.schedule.gamma(self.k);
                trace.steps.push(StepRecord { step: b, k: self.k, t, gamma, batch_loss: loss });
                if let Some(every) = self.retain_theta_every {
                    if self.k % every == 0 {
                        trace.theta_samples.push(ThetaSample { k: self.k, t, gamma, theta: theta.clone() });
                    }
                }
                sgd_step(theta, &grad, self.k, &self.schedule);
                self.k += 1;
                steps_taken += 1;
                epoch_loss += loss;
                epoch_batches += 1;
                if let Some(every) = self.probe_every {
                    if steps_taken % every == 0 || Some(steps_taken) == max_steps {
                        if let Some(l) = probe(self.k, theta) {
                            trace.probes.push(ProbeRecord { step: self.k, loss: l });
                        }
                    }
                }
            }
            if epoch_batches == 0 {
                break;
            }
            let full = if self.epoch_full_loss {
                let all: Vec<usize> = (0..n).collect();
                let mut scratch = vec![0.0; theta.len()];
                Some(obj.batch_loss_grad(theta, &all, &mut scratch))
            } else {
                None
            };
            trace.epochs.push(EpochRecord {
                t,
                epoch,
                mean_batch_loss: epoch_loss / epoch_batches as f64,
                full_loss: full,
            });
            epoch += 1;
        }
        Ok(())
    }
}

/// The spec-level `train` entry point: fresh driver from `cfg`, runs
/// `cfg.epochs` epochs, returns the trace. `theta` is updated in place.
pub fn train<O: StochasticObjective + ?Sized>(
    obj: &mut O,
    theta: &mut Vector,
    cfg: &TrainConfig,
) -> Result<DiagnosticsTrace> {
    let mut driver = SgdDriver::new(cfg);
    let mut trace = DiagnosticsTrace::default();
    driver.run(obj, theta, Some(cfg.epochs), None, 0.0, &mut trace)?;
    Ok(trace)
}

/// Outcome of one restart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestartSummary {
    pub restart: usize,
    pub seed: u64,
    pub train_loss: f64,
    pub test_loss: f64,
}

/// Best-of-R result of a restart sweep.
#[derive(Debug, Clone)]
pub struct SweepResult<T> {
    pub runs: Vec<RestartSummary>,
    pub best_index: usize,
    pub best: T,
}

impl<T> SweepResult<T> {
    pub fn best_summary(&self) -> &RestartSummary {
        &self.runs[self.best_index]
    }
}

/// Runs `restarts` independent seeded runs of `run_one` and keeps the one
/// with the lowest test loss (ties to the lowest index, so the result is
/// independent of execution order). `parallel > 1` runs that many workers
/// at a time; each run is still internally sequential and seeded, so the
/// selected result is identical either way.
pub fn restart_sweep<T: Send>(
    restarts: usize,
    base_seed: u64,
    parallel: usize,
    run_one: impl Fn(usize, u64) -> Result<(RestartSummary, T)> + Sync,
) -> Result<SweepResult<T>> {
    assert!(restarts >= 1, "restarts must be >= 1");
    let mut seed_rng = Rng::new(base_seed);
    let seeds: Vec<u64> = (0..restarts).map(|_| seed_rng.derive_seed()).collect();

    let mut outcomes: Vec<Option<Result<(RestartSummary, T)>>> = (0..restarts).map(|_| None).collect();
    if parallel <= 1 {
        for (r, slot) in outcomes.iter_mut().enumerate() {
            *slot = Some(run_one(r, seeds[r]));
        }
    } else {
        let next = std::sync::atomic::AtomicUsize::new(0);
        let slots: Vec<std::sync::Mutex<Option<Result<(RestartSummary, T)>>>> =
            (0..restarts).map(|_| std::sync::Mutex::new(None)).collect();
        std::thread::scope(|scope| {
            for _ in 0..parallel.min(restarts) {
                scope.spawn(|| loop {
                    let r = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                    if r >= restarts {
                        break;
                    }
                    let out = run_one(r, seeds[r]);
                    *slots[r].lock().unwrap() = Some(out);
                });
            }
        });
        for (slot, cell) in outcomes.iter_mut().zip(slots) {
            *slot = cell.into_inner().unwrap();
        }
    }

    let mut runs: Vec<RestartSummary> = Vec::with_capacity(restarts);
    let mut best_index = 0;
    let mut best_payload = None;
    for (r, outcome) in outcomes.into_iter().enumerate() {
        let (summary, payload) = outcome.expect("worker completed")?;
        if best_payload.is_none() || summary.test_loss < runs[best_index].test_loss {
            best_index = r;
            best_payload = Some(payload);
        }
        runs.push(summary);
    }
    Ok(SweepResult { runs, best_index, best: best_payload.unwrap() })
}

/// The Theorem-1 quantity over the retained iterates: the sequence of
/// `(k, (1/A_K) * sum_{k<=K} gamma_k * ||grad f(theta_k)||^2)` with
/// `A_K = sum_{k<=K} gamma_k`, both sums restricted to the retained
/// subsequence.
pub fn theorem1_metric(
    trace: &DiagnosticsTrace,
    mut full_gradient: impl FnMut(&[f64]) -> Vector,
) -> Vec<(usize, f64)> {
    let mut out = Vec::with_capacity(trace.theta_samples.len());
    let mut weighted = 0.0;
    let mut a_k = 0.0;
    for s in &trace.theta_samples {
        let g = full_gradient(&s.theta);
        weighted += s.gamma * norm_sq(&g);
        a_k += s.gamma;
        out.push((s.k, weighted / a_k));
    }
    out
}

/// Gamma-weighted averages of the retained iterates and their `t` values
/// (the Theorem-2 averaged iterate). Errors on an empty trace.
pub fn averaged_iterates(trace: &DiagnosticsTrace) -> Result<(Vector, f64)> {
    if trace.theta_samples.is_empty() {
        return Err(HtaError::Config("averaged_iterates needs retained theta samples".into()));
    }
    let dim = trace.theta_samples[0].theta.len();
    let mut theta_bar = vec![0.0; dim];
    let mut t_bar = 0.0;
    let mut total = 0.0;
    for s in &trace.theta_samples {
        for (acc, v) in theta_bar.iter_mut().zip(&s.theta) {
            *acc += s.gamma * v;
        }
        t_bar += s.gamma * s.t;
        total += s.gamma;
    }
    for v in theta_bar.iter_mut() {
        *v /= total;
    }
    Ok((theta_bar, t_bar / total))
}
