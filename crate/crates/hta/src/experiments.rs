//! Paired HTA-vs-baseline harnesses: sin-sum approximation, Van der Pol
//! surrogates with parameter estimation, the optimal-structure search,
//! and the three-state classification head.
//!
//! Fairness contract: within any paired comparison both methods see the
//! same dataset and split, the same loss, and the same total optimizer
//! budget. The continuation method splits that budget evenly across its
//! phases (the t = 0 pre-solve plus the N homotopy steps), with any
//! remainder epochs going to the earliest phases so the totals match
//! exactly.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::data::{
    sin_target, sparse_grid_dataset, split, uniform_grid_dataset, vdp_dataset, vdp_solve,
    Dataset, SparseGridSpec, VdpConfig,
};
use crate::homotopy::{
    dataset_loss, hta_train, widen, BlendObjective, HomotopyBlend, HtaSchedule, MlpObjective,
};
use crate::linalg::Rng;
use crate::network::{Activation, LossKind, Mlp};
use crate::optim::{
    restart_sweep, DiagnosticsTrace, RestartSummary, SgdDriver, StepSchedule, SweepResult,
    TrainConfig,
};
use crate::{HtaError, Result};

const SEED_MIX: u64 = 0x9E37_79B9_7F4A_7C15;

fn mix_seed(seed: u64, salt: u64) -> u64 {
    Rng::new(seed ^ salt.wrapping_mul(SEED_MIX)).derive_seed()
}

/// Splits `total` across `phases`, remainder to the earliest phases, so
/// the parts always sum to `total`.
pub fn split_budget(total: usize, phases: usize) -> Vec<usize> {
    assert!(phases > 0);
    let per = total / phases;
    let rem = total % phases;
    (0..phases).map(|i| per + usize::from(i < rem)).collect()
}

/// How the continuation method's phases consume the epoch/step budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BudgetPolicy {
    /// Every solve (the t = 0 pre-solve and each homotopy step) runs the
    /// full budget, the way the repeated "solve" steps of the
    /// continuation loop read. This is the reference protocol.
    PerSolve,
    /// One shared total split evenly across the phases, so both methods
    /// consume identical SGD step counts.
    SharedTotal,
}

impl BudgetPolicy {
    pub fn phase_budgets(self, total: usize, phases: usize) -> Vec<usize> {
        match self {
            BudgetPolicy::PerSolve => vec![total; phases],
            BudgetPolicy::SharedTotal => split_budget(total, phases),
        }
    }
}

/// `(err_trad - err_hta) / err_trad`; 0 when the baseline error is 0.
pub fn rate_of_improvement(err_trad: f64, err_hta: f64) -> f64 {
    if err_trad == 0.0 {
        0.0
    } else {
        (err_trad - err_hta) / err_trad
    }
}

/// One method's side of a paired experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: String,
    pub runs: Vec<RestartSummary>,
    pub best: RestartSummary,
    pub config: serde_json::Value,
    pub wall_secs: f64,
}

impl MethodReport {
    fn new<T>(
        method: &str,
        sweep: &SweepResult<T>,
        shared_config: &serde_json::Value,
        wall_secs: f64,
    ) -> Self {
        let best = sweep.best_summary().clone();
        for run in &sweep.runs {
            assert!(best.test_loss <= run.test_loss, "best-of-restarts must dominate");
        }
        let mut config = shared_config.clone();
        config["method"] = json!(method);
        MethodReport { method: method.to_string(), runs: sweep.runs.clone(), best, config, wall_secs }
    }

    /// The snapshot with the method tag removed, for fairness checks.
    pub fn config_modulo_method(&self) -> serde_json::Value {
        let mut c = self.config.clone();
        if let Some(obj) = c.as_object_mut() {
            obj.remove("method");
        }
        c
    }
}

/// A paired comparison, serialized as `metrics.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub experiment: String,
    pub dataset_points: usize,
    pub train_points: usize,
    pub test_points: usize,
    pub traditional: MethodReport,
    pub hta: MethodReport,
    /// `(trad - hta) / trad` over the best test losses.
    pub rate_of_improvement: f64,
}

impl ComparisonReport {
    fn assemble(
        experiment: String,
        dataset_points: usize,
        train_points: usize,
        test_points: usize,
        traditional: MethodReport,
        hta: MethodReport,
    ) -> Self {
        assert_eq!(
            traditional.config_modulo_method(),
            hta.config_modulo_method(),
            "paired methods must share their config"
        );
        let roi = rate_of_improvement(traditional.best.test_loss, hta.best.test_loss);
        ComparisonReport {
            experiment,
            dataset_points,
            train_points,
            test_points,
            traditional,
            hta,
            rate_of_improvement: roi,
        }
    }
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

// --- sin-sum approximation (Examples 1 and 2) ------------------------------

/// Configuration for the function-approximation comparisons. Defaults are
/// the reference protocol: learning rate 0.05, batch 128, 380 epochs, 15
/// restarts, delta_t 0.5, domain `[-pi, pi]^n`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ApproxConfig {
    pub dim: usize,
    /// 1 = single hidden layer (widen 10 -> 20), 2 = two hidden layers
    /// (widen (10,10) -> (10,20) -> (20,20)).
    pub hidden_layers: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub restarts: usize,
    pub delta_t: f64,
    pub seed: u64,
    pub parallel: usize,
    pub domain: (f64, f64),
    pub budget: BudgetPolicy,
}

impl Default for ApproxConfig {
    fn default() -> Self {
        ApproxConfig {
            dim: 1,
            hidden_layers: 1,
            lr: 0.05,
            batch_size: 128,
            epochs: 380,
            restarts: 15,
            delta_t: 0.5,
            seed: 0,
            parallel: 1,
            domain: (-std::f64::consts::PI, std::f64::consts::PI),
            budget: BudgetPolicy::PerSolve,
        }
    }
}

/// The sin-sum dataset: uniform 100-per-axis grid for n <= 3, level-6
/// sparse grid beyond.
pub fn sin_dataset(n: usize, domain: (f64, f64)) -> Result<Dataset> {
    if n <= 3 {
        uniform_grid_dataset(n, 100, domain, sin_target)
    } else {
        sparse_grid_dataset(SparseGridSpec::new(n, 6)?, domain, sin_target)
    }
}

/// Example 1: single-hidden-layer comparison (width 20 baseline vs a
/// width-10 start widened to 20).
pub fn example1(cfg: &ApproxConfig) -> Result<ComparisonReport> {
    let cfg = ApproxConfig { hidden_layers: 1, ..cfg.clone() };
    approx_experiment(&cfg)
}

/// Example 2: two-hidden-layer comparison through the width path
/// (10,10) -> (20,10) -> (20,20) against a (20,20) baseline.
pub fn example2(cfg: &ApproxConfig) -> Result<ComparisonReport> {
    let cfg = ApproxConfig { hidden_layers: 2, ..cfg.clone() };
    approx_experiment(&cfg)
}

pub fn approx_experiment(cfg: &ApproxConfig) -> Result<ComparisonReport> {
    if cfg.dim == 0 {
        return Err(HtaError::Config("dim must be >= 1".into()));
    }
    if !(cfg.hidden_layers == 1 || cfg.hidden_layers == 2) {
        return Err(HtaError::Config("hidden_layers must be 1 or 2".into()));
    }
    let sched = HtaSchedule::new(cfg.delta_t, 1)?; // validates delta_t; epochs set per phase
    let full = sin_dataset(cfg.dim, cfg.domain)?;
    let (train, test) = split(&full, 0.9, cfg.seed)?;

    let (trad_widths, base_widths): (Vec<usize>, Vec<usize>) = if cfg.hidden_layers == 1 {
        (vec![20], vec![10])
    } else {
        (vec![20, 20], vec![10, 10])
    };
    let shared_config = json!({
        "experiment": format!("approx{}", cfg.hidden_layers),
        "dim": cfg.dim,
        "lr": cfg.lr,
        "batch_size": cfg.batch_size,
        "epochs": cfg.epochs,
        "restarts": cfg.restarts,
        "delta_t": cfg.delta_t,
        "budget": cfg.budget,
        "data_seed": cfg.seed,
        "domain": [cfg.domain.0, cfg.domain.1],
        "widths": trad_widths,
        "train_points": train.len(),
        "test_points": test.len(),
        "provenance": full.provenance(),
    });

    let mut trad_dims = vec![cfg.dim];
    trad_dims.extend(&trad_widths);
    trad_dims.push(1);

    let start = Instant::now();
    let trad = restart_sweep(cfg.restarts, mix_seed(cfg.seed, 1), cfg.parallel, |r, seed| {
        let (summary, net, _) = train_plain(&trad_dims, &train, &test, cfg, r, seed)?;
        Ok((summary, net))
    })?;
    let trad_secs = start.elapsed().as_secs_f64();

    let n_steps = sched.steps();
    let start = Instant::now();
    let hta = restart_sweep(cfg.restarts, mix_seed(cfg.seed, 2), cfg.parallel, |r, seed| {
        run_hta_widening(&base_widths, cfg, n_steps, &train, &test, r, seed)
    })?;
    let hta_secs = start.elapsed().as_secs_f64();

    Ok(ComparisonReport::assemble(
        format!("approx{} n={}", cfg.hidden_layers, cfg.dim),
        full.len(),
        train.len(),
        test.len(),
        MethodReport::new("traditional", &trad, &shared_config, trad_secs),
        MethodReport::new("hta", &hta, &shared_config, hta_secs),
    ))
}

fn train_plain(
    dims: &[usize],
    train: &Dataset,
    test: &Dataset,
    cfg: &ApproxConfig,
    restart: usize,
    seed: u64,
) -> Result<(RestartSummary, Mlp, DiagnosticsTrace)> {
    let mut rng = Rng::new(seed);
    let mut net = Mlp::random(dims, Activation::ReLU, &mut rng);
    let shuffle_seed = rng.derive_seed();
    let mut theta = net.pack();
    let mut driver = SgdDriver::new(&TrainConfig {
        schedule: StepSchedule::Constant { gamma: cfg.lr },
        batch_size: cfg.batch_size,
        seed: shuffle_seed,
        ..TrainConfig::default()
    });
    let mut trace = DiagnosticsTrace::default();
    {
        let mut obj = MlpObjective { net: &mut net, data: train, kind: LossKind::SquaredError };
        driver.run(&mut obj, &mut theta, Some(cfg.epochs), None, 1.0, &mut trace)?;
    }
    net.unpack(&theta);
    let summary = RestartSummary {
        restart,
        seed,
        train_loss: dataset_loss(&net, train, LossKind::SquaredError),
        test_loss: dataset_loss(&net, test, LossKind::SquaredError),
    };
    Ok((summary, net, trace))
}

/// One HTA restart: train the base, then widen each hidden layer in turn
/// (one continuation stage per layer), splitting the epoch budget evenly
/// over pre-solve + all homotopy steps.
fn run_hta_widening(
    base_widths: &[usize],
    cfg: &ApproxConfig,
    n_steps: usize,
    train: &Dataset,
    test: &Dataset,
    restart: usize,
    seed: u64,
) -> Result<(RestartSummary, Mlp)> {
    let mut rng = Rng::new(seed);
    let mut dims = vec![cfg.dim];
    dims.extend(base_widths);
    dims.push(1);
    let mut net = Mlp::random(&dims, Activation::ReLU, &mut rng);
    let shuffle_seed = rng.derive_seed();

    let phases = 1 + base_widths.len() * n_steps;
    let budgets = cfg.budget.phase_budgets(cfg.epochs, phases);
    let mut phase = 0;

    let mut driver = SgdDriver::new(&TrainConfig {
        schedule: StepSchedule::Constant { gamma: cfg.lr },
        batch_size: cfg.batch_size,
        seed: shuffle_seed,
        ..TrainConfig::default()
    });
    let mut trace = DiagnosticsTrace::default();

    // t = 0 pre-solve on the small network.
    let mut theta = net.pack();
    {
        let mut obj = MlpObjective { net: &mut net, data: train, kind: LossKind::SquaredError };
        driver.run(&mut obj, &mut theta, Some(budgets[phase]), None, 0.0, &mut trace)?;
    }
    net.unpack(&theta);
    phase += 1;

    for layer in 0..base_widths.len() {
        let added = 20 - base_widths[layer];
        let (large, view) = widen(&net, layer, added, &mut rng)?;
        let mut blend = HomotopyBlend::new(large, view)?;
        let sched = HtaSchedule::new(cfg.delta_t, 1)?;
        let mut theta = blend.large.pack();
        for i in 1..=n_steps {
            blend.set_t(sched.t_at(i));
            let t = blend.t();
            let mut obj = BlendObjective { blend: &mut blend, data: train, kind: LossKind::SquaredError };
            driver.run(&mut obj, &mut theta, Some(budgets[phase]), None, t, &mut trace)?;
            phase += 1;
        }
        blend.large.unpack(&theta);
        net = blend.large;
    }
    debug_assert_eq!(phase, phases);

    let summary = RestartSummary {
        restart,
        seed,
        train_loss: dataset_loss(&net, train, LossKind::SquaredError),
        test_loss: dataset_loss(&net, test, LossKind::SquaredError),
    };
    Ok((summary, net))
}

// --- Van der Pol surrogate (Example 3) --------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VdpSurrogateConfig {
    pub mesh: f64,
    /// Total SGD steps per method (the reference checkpoint is 5e4).
    pub total_steps: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub restarts: usize,
    pub delta_t: f64,
    pub seed: u64,
    pub parallel: usize,
    /// Record the test loss every this many steps.
    pub probe_every: usize,
    /// Hidden width of the surrogate; the continuation starts from half.
    pub hidden: usize,
    /// Hidden activation. Sigmoid by default: with the raw `(mu, k)`
    /// grid (inputs up to 14) and this learning rate, ReLU units die en
    /// masse within the first epochs and both surrogates collapse to
    /// constant predictors.
    pub activation: Activation,
}

impl Default for VdpSurrogateConfig {
    fn default() -> Self {
        VdpSurrogateConfig {
            mesh: 0.1,
            total_steps: 50_000,
            lr: 0.05,
            batch_size: 128,
            restarts: 15,
            delta_t: 0.5,
            seed: 0,
            parallel: 1,
            probe_every: 1000,
            hidden: 20,
            activation: Activation::Sigmoid,
        }
    }
}

/// Trained surrogates plus the paired report. The datasets ride along so
/// the estimation step reuses them.
pub struct VdpSurrogateOutcome {
    pub report: ComparisonReport,
    pub traditional_net: Mlp,
    pub hta_net: Mlp,
    pub traditional_trace: DiagnosticsTrace,
    pub hta_trace: DiagnosticsTrace,
    pub train: Dataset,
    pub test: Dataset,
}

/// Trains single-hidden-layer surrogates `(mu, k) -> y(1)` on the
/// `[1,10]^2` grid and evaluates on the `[11,14]^2` grid, by both
/// methods, with a step (not epoch) budget.
pub fn vdp_surrogate(cfg: &VdpSurrogateConfig) -> Result<VdpSurrogateOutcome> {
    let sched = HtaSchedule::new(cfg.delta_t, 1)?;
    if cfg.hidden < 2 {
        return Err(HtaError::Config("surrogate needs at least 2 hidden units".into()));
    }
    let train = vdp_dataset((1.0, 10.0), (1.0, 10.0), cfg.mesh)?;
    let test = vdp_dataset((11.0, 14.0), (11.0, 14.0), cfg.mesh)?;

    let shared_config = json!({
        "experiment": "vdp_surrogate",
        "mesh": cfg.mesh,
        "total_steps": cfg.total_steps,
        "lr": cfg.lr,
        "batch_size": cfg.batch_size,
        "restarts": cfg.restarts,
        "delta_t": cfg.delta_t,
        "data_seed": cfg.seed,
        "hidden": cfg.hidden,
        "activation": cfg.activation,
        "train_points": train.len(),
        "test_points": test.len(),
    });

    let start = Instant::now();
    let trad = restart_sweep(cfg.restarts, mix_seed(cfg.seed, 11), cfg.parallel, |r, seed| {
        vdp_train_plain(cfg, &train, &test, r, seed)
    })?;
    let trad_secs = start.elapsed().as_secs_f64();

    let n_steps = sched.steps();
    let start = Instant::now();
    let hta = restart_sweep(cfg.restarts, mix_seed(cfg.seed, 12), cfg.parallel, |r, seed| {
        vdp_train_hta(cfg, n_steps, &train, &test, r, seed)
    })?;
    let hta_secs = start.elapsed().as_secs_f64();

    let report = ComparisonReport::assemble(
        "vdp_surrogate".into(),
        train.len() + test.len(),
        train.len(),
        test.len(),
        MethodReport::new("traditional", &trad, &shared_config, trad_secs),
        MethodReport::new("hta", &hta, &shared_config, hta_secs),
    );
    let (trad_net, trad_trace) = trad.best;
    let (hta_net, hta_trace) = hta.best;
    Ok(VdpSurrogateOutcome {
        report,
        traditional_net: trad_net,
        hta_net,
        traditional_trace: trad_trace,
        hta_trace,
        train,
        test,
    })
}

fn vdp_train_plain(
    cfg: &VdpSurrogateConfig,
    train: &Dataset,
    test: &Dataset,
    restart: usize,
    seed: u64,
) -> Result<(RestartSummary, (Mlp, DiagnosticsTrace))> {
    let mut rng = Rng::new(seed);
    let mut net = Mlp::random(&[2, cfg.hidden, 1], cfg.activation, &mut rng);
    let shuffle_seed = rng.derive_seed();
    let mut driver = SgdDriver::new(&TrainConfig {
        schedule: StepSchedule::Constant { gamma: cfg.lr },
        batch_size: cfg.batch_size,
        seed: shuffle_seed,
        probe_every: Some(cfg.probe_every),
        ..TrainConfig::default()
    });
    let mut trace = DiagnosticsTrace::default();
    let mut theta = net.pack();
    let mut probe_net = net.clone();
    {
        let mut obj = MlpObjective { net: &mut net, data: train, kind: LossKind::SquaredError };
        let mut probe = |_k: usize, th: &[f64]| {
            probe_net.unpack(th);
            Some(dataset_loss(&probe_net, test, LossKind::SquaredError))
        };
        driver.run_with_probe(&mut obj, &mut theta, None, Some(cfg.total_steps), 1.0, &mut trace, &mut probe)?;
    }
    net.unpack(&theta);
    let summary = RestartSummary {
        restart,
        seed,
        train_loss: dataset_loss(&net, train, LossKind::SquaredError),
        test_loss: dataset_loss(&net, test, LossKind::SquaredError),
    };
    Ok((summary, (net, trace)))
}

fn vdp_train_hta(
    cfg: &VdpSurrogateConfig,
    n_steps: usize,
    train: &Dataset,
    test: &Dataset,
    restart: usize,
    seed: u64,
) -> Result<(RestartSummary, (Mlp, DiagnosticsTrace))> {
    let mut rng = Rng::new(seed);
    let base_width = cfg.hidden / 2;
    let mut net = Mlp::random(&[2, base_width, 1], cfg.activation, &mut rng);
    let shuffle_seed = rng.derive_seed();
    let budgets = split_budget(cfg.total_steps, 1 + n_steps);

    let mut driver = SgdDriver::new(&TrainConfig {
        schedule: StepSchedule::Constant { gamma: cfg.lr },
        batch_size: cfg.batch_size,
        seed: shuffle_seed,
        probe_every: Some(cfg.probe_every),
        ..TrainConfig::default()
    });
    let mut trace = DiagnosticsTrace::default();

    let mut theta = net.pack();
    {
        let mut probe_net = net.clone();
        let mut obj = MlpObjective { net: &mut net, data: train, kind: LossKind::SquaredError };
        let mut probe = |_k: usize, th: &[f64]| {
            probe_net.unpack(th);
            Some(dataset_loss(&probe_net, test, LossKind::SquaredError))
        };
        driver.run_with_probe(&mut obj, &mut theta, None, Some(budgets[0]), 0.0, &mut trace, &mut probe)?;
    }
    net.unpack(&theta);

    let (large, view) = widen(&net, 0, cfg.hidden - base_width, &mut rng)?;
    let mut blend = HomotopyBlend::new(large, view)?;
    let sched = HtaSchedule::new(cfg.delta_t, 1)?;
    let mut theta = blend.large.pack();
    for i in 1..=n_steps {
        blend.set_t(sched.t_at(i));
        let t = blend.t();
        let mut probe_net = blend.large.clone();
        let blend_t = t;
        let view_probe = blend.view.clone();
        let mut obj = BlendObjective { blend: &mut blend, data: train, kind: LossKind::SquaredError };
        let mut probe = |_k: usize, th: &[f64]| {
            probe_net.unpack(th);
            if blend_t >= 1.0 {
                Some(dataset_loss(&probe_net, test, LossKind::SquaredError))
            } else {
                // Mid-path the deployed model is the blend itself.
                let mut probe_blend = HomotopyBlend::new(probe_net.clone(), view_probe.clone()).ok()?;
                probe_blend.set_t(blend_t);
                let mut loss = 0.0;
                for s in 0..test.len() {
                    let out = probe_blend.forward(test.input(s));
                    let d = out[0] - test.target(s)[0];
                    loss += d * d;
                }
                Some(loss / test.len() as f64)
            }
        };
        driver.run_with_probe(&mut obj, &mut theta, None, Some(budgets[i]), t, &mut trace, &mut probe)?;
    }
    blend.large.unpack(&theta);
    let net = blend.large;

    let summary = RestartSummary {
        restart,
        seed,
        train_loss: dataset_loss(&net, train, LossKind::SquaredError),
        test_loss: dataset_loss(&net, test, LossKind::SquaredError),
    };
    Ok((summary, (net, trace)))
}

// --- parameter estimation ---------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimateConfig {
    /// How many test-grid samples to estimate (subsampled evenly).
    pub samples: usize,
    pub steps: usize,
    pub lr: f64,
    pub init: (f64, f64),
}

impl Default for EstimateConfig {
    fn default() -> Self {
        EstimateConfig { samples: 100, steps: 2000, lr: 0.05, init: (11.0, 11.0) }
    }
}

/// Gradient descent on `(S(mu,k) - y_tilde)^2` through the frozen
/// surrogate, w.r.t. the inputs only.
pub fn param_estimate(
    surrogate: &Mlp,
    y_tilde: f64,
    init: (f64, f64),
    steps: usize,
    lr: f64,
) -> Result<(f64, f64)> {
    assert_eq!(surrogate.input_dim(), 2, "surrogate must map (mu, k) to y(1)");
    let mut p = vec![init.0, init.1];
    let mut scratch = vec![0.0; surrogate.param_count()];
    for step in 0..steps {
        let (out, cache) = surrogate.forward_cached(&p);
        let err = out[0] - y_tilde;
        scratch.fill(0.0);
        let d_in = surrogate.backward_into(&cache, &[2.0 * err], 1.0, &mut scratch);
        p[0] -= lr * d_in[0];
        p[1] -= lr * d_in[1];
        if !(p[0].is_finite() && p[1].is_finite()) {
            return Err(HtaError::Diverged { step, loss: err * err });
        }
    }
    Ok((p[0], p[1]))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimationSample {
    pub mu: f64,
    pub k: f64,
    pub mu_star: f64,
    pub k_star: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EstimationResult {
    pub samples: Vec<EstimationSample>,
    pub err_pe: f64,
}

/// Mean Euclidean distance between true and estimated parameter pairs.
pub fn err_pe_from_samples(samples: &[EstimationSample]) -> f64 {
    let total: f64 = samples
        .iter()
        .map(|s| ((s.mu_star - s.mu).powi(2) + (s.k_star - s.k).powi(2)).sqrt())
        .sum();
    total / samples.len() as f64
}

/// Runs the estimation over the given parameter pairs: the artificial
/// data is the ODE truth `y(1; mu, k)`, and every estimate starts from
/// `cfg.init`.
pub fn err_pe(surrogate: &Mlp, true_params: &[(f64, f64)], cfg: &EstimateConfig) -> Result<EstimationResult> {
    if true_params.is_empty() {
        return Err(HtaError::Config("err_pe needs at least one sample".into()));
    }
    let mut samples = Vec::with_capacity(true_params.len());
    for &(mu, k) in true_params {
        let y_tilde = vdp_solve(&VdpConfig::with_params(mu, k))?.y;
        let (mu_star, k_star) = param_estimate(surrogate, y_tilde, cfg.init, cfg.steps, cfg.lr)?;
        samples.push(EstimationSample { mu, k, mu_star, k_star });
    }
    let err_pe = err_pe_from_samples(&samples);
    Ok(EstimationResult { samples, err_pe })
}

/// Evenly subsampled `(mu, k)` pairs from a dataset's input rows.
pub fn subsample_params(ds: &Dataset, max_samples: usize) -> Vec<(f64, f64)> {
    assert!(max_samples >= 1);
    let n = ds.len();
    if n <= max_samples {
        return (0..n).map(|i| (ds.input(i)[0], ds.input(i)[1])).collect();
    }
    (0..max_samples)
        .map(|i| {
            let idx = i * n / max_samples;
            (ds.input(idx)[0], ds.input(idx)[1])
        })
        .collect()
}

#[derive(Debug, Serialize)]
pub struct EstimateOutcome {
    pub traditional: EstimationResult,
    pub hta: EstimationResult,
    pub config: serde_json::Value,
}

/// Full Example-3 pipeline: train both surrogates, then compare their
/// parameter-estimation error over the test grid.
pub fn estimation_experiment(
    surrogate_cfg: &VdpSurrogateConfig,
    est_cfg: &EstimateConfig,
) -> Result<(EstimateOutcome, VdpSurrogateOutcome)> {
    let outcome = vdp_surrogate(surrogate_cfg)?;
    let params = subsample_params(&outcome.test, est_cfg.samples);
    let traditional = err_pe(&outcome.traditional_net, &params, est_cfg)?;
    let hta = err_pe(&outcome.hta_net, &params, est_cfg)?;
    let config = json!({
        "experiment": "param_estimate",
        "samples": params.len(),
        "steps": est_cfg.steps,
        "lr": est_cfg.lr,
        "init": [est_cfg.init.0, est_cfg.init.1],
    });
    Ok((EstimateOutcome { traditional, hta, config }, outcome))
}

// --- optimal-structure search ------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OsfConfig {
    pub base_widths: (usize, usize),
    /// Nodes added per growth step ("node-by-node" is quantum 1).
    pub quantum: usize,
    /// Keep a growth batch when the new nodes' outgoing-weight RMS is at
    /// least this fraction of the existing outgoing-weight RMS.
    pub eps_zero_rel: f64,
    /// At most this many kept growth batches per layer.
    pub max_rounds_per_layer: usize,
    pub delta_t: f64,
    pub epochs_per_step: usize,
    pub base_epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for OsfConfig {
    fn default() -> Self {
        OsfConfig {
            base_widths: (10, 10),
            quantum: 10,
            eps_zero_rel: 1e-3,
            max_rounds_per_layer: 16,
            delta_t: 0.5,
            epochs_per_step: 50,
            base_epochs: 200,
            lr: 0.05,
            batch_size: 128,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, PartialEq)]
pub struct GrowthRecord {
    pub layer: usize,
    pub added: usize,
    /// RMS of the new nodes' outgoing weights after optimization.
    pub new_rms: f64,
    /// RMS of the pre-existing outgoing weights of the same layer.
    pub existing_rms: f64,
    pub kept: bool,
}

#[derive(Debug, Clone, Copy, Serialize, PartialEq, Eq)]
pub enum StopReason {
    /// Both layers' latest growth batches optimized to (near) zero.
    Converged,
    /// A layer kept growing until its round budget ran out.
    BudgetExhausted,
}

#[derive(Debug, Clone, Serialize)]
pub struct StructureResult {
    pub widths: Vec<usize>,
    pub history: Vec<GrowthRecord>,
    pub stop_reason: StopReason,
}

/// RMS of the outgoing weights of units `first_new..` of hidden layer
/// `layer` (the columns they feed into layer `layer+1`), and of the
/// pre-existing columns.
fn outgoing_rms(net: &Mlp, layer: usize, first_new: usize) -> (f64, f64) {
    let next = &net.layers()[layer + 1];
    let (mut new_sq, mut new_n) = (0.0, 0usize);
    let (mut old_sq, mut old_n) = (0.0, 0usize);
    for i in 0..next.out_dim() {
        let row = next.weights.row(i);
        for (j, &w) in row.iter().enumerate() {
            if j >= first_new {
                new_sq += w * w;
                new_n += 1;
            } else {
                old_sq += w * w;
                old_n += 1;
            }
        }
    }
    ((new_sq / new_n.max(1) as f64).sqrt(), (old_sq / old_n.max(1) as f64).sqrt())
}

/// Grows the first hidden layer batch by batch with the continuation
/// schedule, stopping a layer when the newly added nodes' outgoing
/// weights optimize to near zero (the batch is then reverted), then does
/// the same for the second hidden layer.
pub fn osf_search(data: &Dataset, kind: LossKind, output_dim: usize, cfg: &OsfConfig) -> Result<(StructureResult, Mlp)> {
    if cfg.quantum == 0 {
        return Err(HtaError::Config("growth quantum must be positive".into()));
    }
    if cfg.base_widths.0 < output_dim || cfg.base_widths.1 < output_dim {
        return Err(HtaError::Config(format!(
            "base widths {:?} must be at least the output dim {output_dim}",
            cfg.base_widths
        )));
    }
    let sched = HtaSchedule::new(cfg.delta_t, cfg.epochs_per_step)?;
    let mut rng = Rng::new(cfg.seed);
    let dims = vec![data.input_dim(), cfg.base_widths.0, cfg.base_widths.1, output_dim];
    let mut net = Mlp::random(&dims, Activation::ReLU, &mut rng);
    let mut driver = SgdDriver::new(&TrainConfig {
        schedule: StepSchedule::Constant { gamma: cfg.lr },
        batch_size: cfg.batch_size,
        seed: rng.derive_seed(),
        ..TrainConfig::default()
    });
    let mut trace = DiagnosticsTrace::default();

    let mut theta = net.pack();
    {
        let mut obj = MlpObjective { net: &mut net, data, kind };
        driver.run(&mut obj, &mut theta, Some(cfg.base_epochs), None, 0.0, &mut trace)?;
    }
    net.unpack(&theta);

    let mut history = Vec::new();
    let mut exhausted = false;
    for layer in 0..2usize {
        let mut rounds = 0;
        loop {
            if rounds >= cfg.max_rounds_per_layer {
                exhausted = true;
                break;
            }
            let snapshot = net.clone();
            let first_new = net.layers()[layer].out_dim();
            let (large, view) = widen(&net, layer, cfg.quantum, &mut rng)?;
            let mut blend = HomotopyBlend::new(large, view)?;
            hta_train(&mut blend, data, kind, &sched, &mut driver, &mut trace)?;
            let trained = blend.large;
            let (new_rms, existing_rms) = outgoing_rms(&trained, layer, first_new);
            let kept = new_rms >= cfg.eps_zero_rel * existing_rms;
            history.push(GrowthRecord { layer, added: cfg.quantum, new_rms, existing_rms, kept });
            if kept {
                net = trained;
                rounds += 1;
            } else {
                net = snapshot;
                break;
            }
        }
    }

    let result = StructureResult {
        widths: net.hidden_widths(),
        history,
        stop_reason: if exhausted { StopReason::BudgetExhausted } else { StopReason::Converged },
    };
    Ok((result, net))
}

/// Data generated by a random teacher network, for structure-recovery
/// tests: inputs uniform on `[-1,1]^n`, targets the teacher's outputs.
pub fn teacher_dataset(
    input_dim: usize,
    teacher_widths: (usize, usize),
    output_dim: usize,
    n_samples: usize,
    seed: u64,
) -> Result<(Dataset, Mlp)> {
    let mut rng = Rng::new(seed);
    let teacher = Mlp::random(
        &[input_dim, teacher_widths.0, teacher_widths.1, output_dim],
        Activation::ReLU,
        &mut rng,
    );
    let xs: Vec<Vec<f64>> = (0..n_samples)
        .map(|_| (0..input_dim).map(|_| rng.uniform(-1.0, 1.0)).collect())
        .collect();
    let ys: Vec<Vec<f64>> = xs.iter().map(|x| teacher.forward(x)).collect();
    let ds = Dataset::from_rows(&xs, &ys, format!("teacher widths={teacher_widths:?} seed={seed}"))?;
    Ok((ds, teacher))
}

// --- three-state classification head -----------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HeadConfig {
    pub w1: usize,
    pub w2: usize,
    pub feature_dim: usize,
    pub classes: usize,
    pub train_samples: usize,
    pub test_samples: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs_per_phase: usize,
    pub delta_t: f64,
    pub seed: u64,
}

impl Default for HeadConfig {
    fn default() -> Self {
        HeadConfig {
            w1: 64,
            w2: 64,
            feature_dim: 512,
            classes: 10,
            train_samples: 2000,
            test_samples: 500,
            lr: 0.05,
            batch_size: 128,
            epochs_per_phase: 5,
            delta_t: 0.5,
            seed: 0,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct HeadOutcome {
    pub config: serde_json::Value,
    /// Mean cross-entropy per phase (t = 0 solve, then each homotopy step).
    pub phase_losses: Vec<(f64, f64)>,
    pub final_train_loss: f64,
    pub final_test_loss: f64,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub final_dims: Vec<usize>,
    #[serde(skip)]
    pub net: Mlp,
    #[serde(skip)]
    pub trace: DiagnosticsTrace,
}

/// Gaussian blobs around per-class centroids: a stand-in for the feature
/// vectors a convolutional backbone would emit.
pub fn synthetic_features(
    n_samples: usize,
    dim: usize,
    classes: usize,
    noise: f64,
    seed: u64,
) -> Result<Dataset> {
    let mut rng = Rng::new(seed);
    let centroids: Vec<Vec<f64>> = (0..classes)
        .map(|_| (0..dim).map(|_| rng.uniform(-1.0, 1.0)).collect())
        .collect();
    let gaussian = |rng: &mut Rng| -> f64 {
        let u1 = 1.0 - rng.next_f64();
        let u2 = rng.next_f64();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    };
    let mut xs = Vec::with_capacity(n_samples);
    let mut ys = Vec::with_capacity(n_samples);
    for i in 0..n_samples {
        let c = i % classes;
        let x: Vec<f64> = centroids[c].iter().map(|&m| m + noise * gaussian(&mut rng)).collect();
        xs.push(x);
        ys.push(vec![c as f64]);
    }
    Dataset::from_rows(&xs, &ys, format!("synthetic_features dim={dim} classes={classes} noise={noise} seed={seed}"))
}

pub fn classification_accuracy(net: &Mlp, data: &Dataset) -> f64 {
    let mut correct = 0usize;
    for i in 0..data.len() {
        let out = net.forward(data.input(i));
        let pred = out
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(j, _)| j)
            .unwrap();
        if pred == data.target(i)[0] as usize {
            correct += 1;
        }
    }
    correct as f64 / data.len() as f64
}

/// Three-state growth of a classification head
/// `(w1, w2) -> (feature_dim, w2) -> (feature_dim, feature_dim)` with the
/// cross-entropy loss on synthetic features.
pub fn fc_head_three_state(cfg: &HeadConfig) -> Result<HeadOutcome> {
    if cfg.w1 > cfg.feature_dim || cfg.w2 > cfg.feature_dim {
        return Err(HtaError::Config("w1 and w2 must not exceed the target width".into()));
    }
    if cfg.w1 < cfg.classes || cfg.w2 < cfg.classes {
        return Err(HtaError::Config("hidden widths must be at least the class count".into()));
    }
    let sched = HtaSchedule::new(cfg.delta_t, cfg.epochs_per_phase)?;
    let total = cfg.train_samples + cfg.test_samples;
    let full = synthetic_features(total, cfg.feature_dim, cfg.classes, 0.8, cfg.seed)?;
    let (train, test) = split(&full, cfg.train_samples as f64 / total as f64, mix_seed(cfg.seed, 3))?;

    let mut rng = Rng::new(mix_seed(cfg.seed, 4));
    let base = Mlp::random(&[cfg.feature_dim, cfg.w1, cfg.w2, cfg.classes], Activation::ReLU, &mut rng);
    let mut driver = SgdDriver::new(&TrainConfig {
        schedule: StepSchedule::Constant { gamma: cfg.lr },
        batch_size: cfg.batch_size,
        seed: rng.derive_seed(),
        ..TrainConfig::default()
    });
    let mut trace = DiagnosticsTrace::default();
    let stages = vec![
        (
            crate::homotopy::GrowthOp::Widen { layer: 0, added: cfg.feature_dim - cfg.w1 },
            sched,
        ),
        (
            crate::homotopy::GrowthOp::Widen { layer: 1, added: cfg.feature_dim - cfg.w2 },
            sched,
        ),
    ];
    let net = crate::homotopy::multi_stage_train(
        base,
        &stages,
        &train,
        LossKind::CategoricalCrossEntropy,
        cfg.epochs_per_phase,
        &mut driver,
        &mut rng,
        &mut trace,
    )?;

    // Mean loss per (t, phase) block of the epoch records.
    let mut phase_losses: Vec<(f64, f64)> = Vec::new();
    for ep in &trace.epochs {
        match phase_losses.last_mut() {
            Some((t, loss)) if *t == ep.t => *loss = ep.mean_batch_loss.min(*loss),
            _ => phase_losses.push((ep.t, ep.mean_batch_loss)),
        }
    }

    Ok(HeadOutcome {
        config: serde_json::to_value(cfg)?,
        phase_losses,
        final_train_loss: dataset_loss(&net, &train, LossKind::CategoricalCrossEntropy),
        final_test_loss: dataset_loss(&net, &test, LossKind::CategoricalCrossEntropy),
        train_accuracy: classification_accuracy(&net, &train),
        test_accuracy: classification_accuracy(&net, &test),
        final_dims: net.dims(),
        net,
        trace,
    })
}

// --- report aggregation -------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct ReportRow {
    pub experiment: String,
    pub traditional_loss: f64,
    pub hta_loss: f64,
    pub rate_of_improvement: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReportTable {
    pub rows: Vec<ReportRow>,
}

/// Merges paired reports into one ROI table.
pub fn compare_report(reports: &[ComparisonReport]) -> ReportTable {
    let rows = reports
        .iter()
        .map(|r| ReportRow {
            experiment: r.experiment.clone(),
            traditional_loss: r.traditional.best.test_loss,
            hta_loss: r.hta.best.test_loss,
            rate_of_improvement: rate_of_improvement(r.traditional.best.test_loss, r.hta.best.test_loss),
        })
        .collect();
    ReportTable { rows }
}

impl ReportTable {
    pub fn write_csv<W: std::io::Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "experiment,traditional_loss,hta_loss,rate_of_improvement")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{}",
                r.experiment, r.traditional_loss, r.hta_loss, r.rate_of_improvement
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_budget_sums_and_balances() {
        assert_eq!(split_budget(380, 3), vec![127, 127, 126]);
        assert_eq!(split_budget(380, 5), vec![76, 76, 76, 76, 76]);
        assert_eq!(split_budget(50_000, 3), vec![16667, 16667, 16666]);
        for (total, phases) in [(1, 1), (7, 3), (380, 3), (50_000, 3)] {
            assert_eq!(split_budget(total, phases).iter().sum::<usize>(), total);
        }
    }

    #[test]
    fn roi_matches_reference_rows() {
        assert!((rate_of_improvement(7.83, 7.02) - 0.1034).abs() < 5e-4);
        assert!((rate_of_improvement(5.82, 5.14) - 0.1168).abs() < 5e-4);
        assert_eq!(rate_of_improvement(0.3, 0.3), 0.0);
        assert_eq!(rate_of_improvement(0.0, 0.0), 0.0);
    }

    #[test]
    fn err_pe_hand_values() {
        let exact = vec![EstimationSample { mu: 12.0, k: 13.0, mu_star: 12.0, k_star: 13.0 }];
        assert_eq!(err_pe_from_samples(&exact), 0.0);
        let off = vec![EstimationSample { mu: 0.0, k: 0.0, mu_star: 3.0, k_star: 4.0 }];
        assert_eq!(err_pe_from_samples(&off), 5.0);
    }

    #[test]
    fn param_estimate_recovers_linear_surrogate() {
        // S(mu, k) = mu + k exactly; any optimum satisfies mu + k = 22.
        let layers = vec![
            crate::network::Layer {
                weights: crate::linalg::Matrix::from_rows(1, 2, &[1.0, 1.0]),
                bias: vec![0.0],
                activation: Activation::Identity,
            },
        ];
        let surrogate = Mlp::new(2, layers);
        let (mu, k) = param_estimate(&surrogate, 22.0, (11.0, 11.0), 2000, 0.05).unwrap();
        assert!((mu + k - 22.0).abs() < 1e-9, "mu + k = {}", mu + k);
        let residual = surrogate.forward(&[mu, k])[0] - 22.0;
        assert!(residual.abs() < 1e-9);
    }

    #[test]
    fn subsample_params_counts() {
        let ds = vdp_dataset((1.0, 2.0), (1.0, 2.0), 0.5).unwrap(); // 3x3 grid
        assert_eq!(subsample_params(&ds, 100).len(), 9);
        assert_eq!(subsample_params(&ds, 4).len(), 4);
    }

    #[test]
    fn synthetic_features_shape_and_labels() {
        let ds = synthetic_features(60, 16, 10, 0.5, 3).unwrap();
        assert_eq!(ds.len(), 60);
        assert_eq!(ds.input_dim(), 16);
        for i in 0..ds.len() {
            let label = ds.target(i)[0];
            assert_eq!(label, label.round());
            assert!((0.0..10.0).contains(&label));
        }
    }

    #[test]
    fn approx_experiment_is_fair_and_reports_consistently() {
        // Tiny budget: this exercises the plumbing, not the quality.
        let cfg = ApproxConfig {
            dim: 1,
            epochs: 6,
            restarts: 2,
            seed: 5,
            ..ApproxConfig::default()
        };
        let report = example1(&cfg).unwrap();
        assert_eq!(report.traditional.config_modulo_method(), report.hta.config_modulo_method());
        assert_eq!(report.train_points, 90);
        assert_eq!(report.test_points, 10);
        for m in [&report.traditional, &report.hta] {
            assert_eq!(m.runs.len(), 2);
            for run in &m.runs {
                assert!(m.best.test_loss <= run.test_loss);
            }
        }
        let expected_roi =
            rate_of_improvement(report.traditional.best.test_loss, report.hta.best.test_loss);
        assert_eq!(report.rate_of_improvement, expected_roi);
    }

    #[test]
    fn example2_visits_the_three_width_states() {
        // Replay the growth path: (10,10) -> (20,10) -> (20,20).
        let mut rng = Rng::new(0);
        let base = Mlp::random(&[5, 10, 10, 1], Activation::ReLU, &mut rng);
        assert_eq!(base.hidden_widths(), vec![10, 10]);
        let (after1, _) = widen(&base, 0, 10, &mut rng).unwrap();
        assert_eq!(after1.hidden_widths(), vec![20, 10]);
        let (after2, _) = widen(&after1, 1, 10, &mut rng).unwrap();
        assert_eq!(after2.hidden_widths(), vec![20, 20]);
    }

    #[test]
    fn osf_rejects_widths_below_output_dim() {
        let (data, _) = teacher_dataset(4, (10, 10), 10, 32, 1).unwrap();
        let cfg = OsfConfig { base_widths: (5, 10), ..OsfConfig::default() };
        assert!(osf_search(&data, LossKind::SquaredError, 10, &cfg).is_err());
    }

    #[test]
    fn osf_history_widths_never_shrink_below_base() {
        let (data, _) = teacher_dataset(3, (4, 4), 1, 64, 9).unwrap();
        let cfg = OsfConfig {
            base_widths: (4, 4),
            quantum: 2,
            eps_zero_rel: 0.05,
            max_rounds_per_layer: 2,
            base_epochs: 30,
            epochs_per_step: 10,
            batch_size: 16,
            seed: 2,
            ..OsfConfig::default()
        };
        let (result, net) = osf_search(&data, LossKind::SquaredError, 1, &cfg).unwrap();
        assert!(result.widths[0] >= 4 && result.widths[1] >= 4);
        assert_eq!(net.hidden_widths(), result.widths);
        for rec in &result.history {
            assert!(rec.new_rms >= 0.0 && rec.existing_rms >= 0.0);
        }
    }

    #[test]
    fn report_table_recomputes_roi_exactly() {
        let cfg = ApproxConfig { dim: 1, epochs: 4, restarts: 1, seed: 2, ..ApproxConfig::default() };
        let report = example1(&cfg).unwrap();
        let table = compare_report(std::slice::from_ref(&report));
        assert_eq!(table.rows.len(), 1);
        assert_eq!(table.rows[0].rate_of_improvement, report.rate_of_improvement);
        let mut buf = Vec::new();
        table.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().lines().count() == 2);
    }
}
