//! `hta`: homotopy-training experiments from the command line.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use hta::data::{
    load_dataset, save_dataset, sin_target, sparse_grid_dataset, uniform_grid_dataset,
    vdp_dataset, Dataset, SparseGridSpec,
};
use hta::experiments::{
    approx_experiment, compare_report, estimation_experiment, fc_head_three_state, osf_search,
    teacher_dataset, write_json, ApproxConfig, BudgetPolicy, ComparisonReport, EstimateConfig,
    HeadConfig, OsfConfig, VdpSurrogateConfig,
};
use hta::network::LossKind;

#[derive(Parser)]
#[command(name = "hta", version, about = "Homotopy training for fully connected networks: paired experiments, dataset generation, and report emission.")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum BudgetArg {
    /// Each continuation solve runs the full epoch budget (reference protocol).
    PerSolve,
    /// One shared total split across the continuation phases.
    SharedTotal,
}

impl From<BudgetArg> for BudgetPolicy {
    fn from(b: BudgetArg) -> Self {
        match b {
            BudgetArg::PerSolve => BudgetPolicy::PerSolve,
            BudgetArg::SharedTotal => BudgetPolicy::SharedTotal,
        }
    }
}

#[derive(Args, Clone)]
struct TrainArgs {
    /// Learning rate.
    #[arg(long, default_value_t = 0.05)]
    lr: f64,
    /// Mini-batch size.
    #[arg(long, default_value_t = 128)]
    batch: usize,
    /// Epochs per solve.
    #[arg(long, default_value_t = 380)]
    epochs: usize,
    /// Independent restarts; the best test loss is reported.
    #[arg(long, default_value_t = 15)]
    restarts: usize,
    /// Homotopy step size.
    #[arg(long, default_value_t = 0.5)]
    dt: f64,
    /// Master seed (data split, initializations, shuffling).
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Run up to this many restarts concurrently; results are identical
    /// to the sequential order either way.
    #[arg(long, default_value_t = 1)]
    parallel_restarts: usize,
    /// Epoch-budget policy for the continuation phases.
    #[arg(long, value_enum, default_value_t = BudgetArg::PerSolve)]
    budget: BudgetArg,
}

#[derive(Args, Clone)]
struct OutArgs {
    /// Output directory for metrics and traces.
    #[arg(long, env = "HTA_OUT_DIR", default_value = "out")]
    out_dir: PathBuf,
    /// Report format for aggregate tables.
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Subcommand)]
enum Command {
    /// Sin-sum approximation: HTA vs traditional (Examples 1 and 2).
    Approx {
        /// Input dimension.
        #[arg(long, default_value_t = 1)]
        dim: usize,
        /// Hidden layers: 1 (widen 10->20) or 2 ((10,10)->(20,20)).
        #[arg(long, default_value_t = 1)]
        layers: usize,
        #[command(flatten)]
        train: TrainArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Van der Pol surrogate comparison with a step budget.
    Vdp {
        /// Parameter-grid mesh size.
        #[arg(long, default_value_t = 0.1)]
        mesh: f64,
        /// Total SGD steps per method.
        #[arg(long, default_value_t = 50_000)]
        steps: usize,
        /// Record the test loss every this many steps.
        #[arg(long, default_value_t = 1000)]
        probe_every: usize,
        /// Surrogate hidden width (the continuation starts from half).
        #[arg(long, default_value_t = 20)]
        hidden: usize,
        #[command(flatten)]
        train: TrainArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Parameter estimation through trained surrogates, with Err_PE.
    Estimate {
        /// Initial guess "mu,k".
        #[arg(long, default_value = "11,11", value_parser = parse_pair_f64)]
        init: (f64, f64),
        /// Test-grid samples to estimate (subsampled evenly).
        #[arg(long, default_value_t = 100)]
        samples: usize,
        /// Gradient steps per estimate.
        #[arg(long, default_value_t = 2000)]
        est_steps: usize,
        /// Learning rate for the estimation descent.
        #[arg(long, default_value_t = 0.05)]
        est_lr: f64,
        #[arg(long, default_value_t = 0.1)]
        mesh: f64,
        /// Total surrogate-training SGD steps per method.
        #[arg(long, default_value_t = 50_000)]
        steps: usize,
        #[arg(long, default_value_t = 20)]
        hidden: usize,
        #[command(flatten)]
        train: TrainArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Optimal-structure search by node-batch growth.
    Grow {
        /// Base hidden widths "w1,w2".
        #[arg(long, default_value = "10,10", value_parser = parse_pair_usize)]
        base: (usize, usize),
        /// Nodes added per growth step.
        #[arg(long, default_value_t = 10)]
        quantum: usize,
        /// Revert a batch when its outgoing-weight RMS falls below this
        /// fraction of the existing RMS.
        #[arg(long, default_value_t = 1e-3)]
        eps_zero: f64,
        /// Max kept growth batches per layer.
        #[arg(long, default_value_t = 16)]
        max_rounds: usize,
        /// Epochs per homotopy step during growth.
        #[arg(long, default_value_t = 50)]
        n_epoch: usize,
        /// Epochs for the initial base solve.
        #[arg(long, default_value_t = 200)]
        base_epochs: usize,
        /// CSV dataset to search on; defaults to a teacher-generated set.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Teacher hidden widths for the default dataset.
        #[arg(long, default_value = "10,10", value_parser = parse_pair_usize)]
        teacher: (usize, usize),
        /// Samples in the default teacher dataset.
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[command(flatten)]
        train: TrainArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Three-state growth of a classification head on synthetic features.
    Head {
        #[arg(long, default_value_t = 64)]
        w1: usize,
        #[arg(long, default_value_t = 64)]
        w2: usize,
        /// Feature dimension (the final hidden widths).
        #[arg(long, default_value_t = 512)]
        features: usize,
        #[arg(long, default_value_t = 10)]
        classes: usize,
        #[arg(long, default_value_t = 2000)]
        samples: usize,
        /// Epochs per phase.
        #[arg(long, default_value_t = 5)]
        phase_epochs: usize,
        #[command(flatten)]
        train: TrainArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Emit grid or ODE datasets as CSV.
    Data {
        /// Cartesian grid of the sin-sum target.
        #[arg(long, conflicts_with_all = ["sparse", "vdp"])]
        uniform: bool,
        /// Smolyak sparse grid of the sin-sum target.
        #[arg(long, conflicts_with = "vdp")]
        sparse: bool,
        /// Van der Pol y(1) grid over (mu, k).
        #[arg(long)]
        vdp: bool,
        #[arg(long, default_value_t = 2)]
        dim: usize,
        /// Points per dimension for the uniform grid.
        #[arg(long, default_value_t = 100)]
        ppd: usize,
        /// Sparse-grid level.
        #[arg(long, default_value_t = 6)]
        level: usize,
        /// Domain lower bound (sin grids).
        #[arg(long, default_value_t = -std::f64::consts::PI, allow_hyphen_values = true)]
        lo: f64,
        /// Domain upper bound (sin grids).
        #[arg(long, default_value_t = std::f64::consts::PI, allow_hyphen_values = true)]
        hi: f64,
        /// Mesh for the Van der Pol grid.
        #[arg(long, default_value_t = 0.1)]
        mesh: f64,
        /// Emit the [11,14]^2 test grid instead of the [1,10]^2 train grid.
        #[arg(long)]
        test_grid: bool,
        /// Output CSV path (defaults into --out-dir).
        #[arg(long)]
        file: Option<PathBuf>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Merge metrics.json files into one improvement table.
    Report {
        /// metrics.json files from paired experiments.
        #[arg(required = true)]
        files: Vec<PathBuf>,
        #[command(flatten)]
        out: OutArgs,
    },
}

fn parse_pair_f64(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or_else(|| format!("expected `a,b`, got {s:?}"))?;
    Ok((
        a.trim().parse().map_err(|e| format!("bad number {a:?}: {e}"))?,
        b.trim().parse().map_err(|e| format!("bad number {b:?}: {e}"))?,
    ))
}

fn parse_pair_usize(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once(',').ok_or_else(|| format!("expected `a,b`, got {s:?}"))?;
    Ok((
        a.trim().parse().map_err(|e| format!("bad number {a:?}: {e}"))?,
        b.trim().parse().map_err(|e| format!("bad number {b:?}: {e}"))?,
    ))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn ensure_out_dir(dir: &Path) -> hta::Result<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

fn write_comparison(report: &ComparisonReport, out: &OutArgs, stem: &str) -> hta::Result<PathBuf> {
    ensure_out_dir(&out.out_dir)?;
    let path = out.out_dir.join(format!("{stem}_metrics.json"));
    write_json(report, &path)?;
    Ok(path)
}

fn run(cli: Cli) -> hta::Result<()> {
    match cli.command {
        Command::Approx { dim, layers, train, out } => {
            let cfg = ApproxConfig {
                dim,
                hidden_layers: layers,
                lr: train.lr,
                batch_size: train.batch,
                epochs: train.epochs,
                restarts: train.restarts,
                delta_t: train.dt,
                seed: train.seed,
                parallel: train.parallel_restarts,
                budget: train.budget.into(),
                ..ApproxConfig::default()
            };
            let report = approx_experiment(&cfg)?;
            let path = write_comparison(&report, &out, &format!("approx{layers}_n{dim}"))?;
            println!(
                "approx layers={layers} n={dim}: traditional {:.6} vs hta {:.6} (improvement {:.1}%) -> {}",
                report.traditional.best.test_loss,
                report.hta.best.test_loss,
                100.0 * report.rate_of_improvement,
                path.display()
            );
        }
        Command::Vdp { mesh, steps, probe_every, hidden, train, out } => {
            let cfg = VdpSurrogateConfig {
                mesh,
                total_steps: steps,
                lr: train.lr,
                batch_size: train.batch,
                restarts: train.restarts,
                delta_t: train.dt,
                seed: train.seed,
                parallel: train.parallel_restarts,
                probe_every,
                hidden,
            };
            let outcome = hta::experiments::vdp_surrogate(&cfg)?;
            ensure_out_dir(&out.out_dir)?;
            let path = out.out_dir.join("vdp_metrics.json");
            write_json(&outcome.report, &path)?;
            for (name, trace) in [
                ("vdp_traditional_trace.csv", &outcome.traditional_trace),
                ("vdp_hta_trace.csv", &outcome.hta_trace),
            ] {
                let mut f = std::io::BufWriter::new(std::fs::File::create(out.out_dir.join(name))?);
                trace.write_csv(&mut f)?;
            }
            hta::network::save_mlp(&outcome.traditional_net, &out.out_dir.join("vdp_traditional_net.txt"))?;
            hta::network::save_mlp(&outcome.hta_net, &out.out_dir.join("vdp_hta_net.txt"))?;
            println!(
                "vdp surrogate at step {steps} ({} train pts): traditional {:.6} vs hta {:.6} (improvement {:.1}%) -> {}",
                outcome.train.len(),
                outcome.report.traditional.best.test_loss,
                outcome.report.hta.best.test_loss,
                100.0 * outcome.report.rate_of_improvement,
                path.display()
            );
        }
        Command::Estimate { init, samples, est_steps, est_lr, mesh, steps, hidden, train, out } => {
            let surrogate_cfg = VdpSurrogateConfig {
                mesh,
                total_steps: steps,
                lr: train.lr,
                batch_size: train.batch,
                restarts: train.restarts,
                delta_t: train.dt,
                seed: train.seed,
                parallel: train.parallel_restarts,
                hidden,
                ..VdpSurrogateConfig::default()
            };
            let est_cfg = EstimateConfig { samples, steps: est_steps, lr: est_lr, init };
            let (estimate, surrogates) = estimation_experiment(&surrogate_cfg, &est_cfg)?;
            ensure_out_dir(&out.out_dir)?;
            let path = out.out_dir.join("estimate_metrics.json");
            write_json(&estimate, &path)?;
            write_json(&surrogates.report, &out.out_dir.join("estimate_surrogate_metrics.json"))?;
            println!(
                "parameter estimation over {} samples from ({},{}): Err_PE traditional {:.3} vs hta {:.3} -> {}",
                estimate.traditional.samples.len(),
                init.0,
                init.1,
                estimate.traditional.err_pe,
                estimate.hta.err_pe,
                path.display()
            );
        }
        Command::Grow {
            base,
            quantum,
            eps_zero,
            max_rounds,
            n_epoch,
            base_epochs,
            data,
            teacher,
            samples,
            train,
            out,
        } => {
            let (dataset, source) = match data {
                Some(path) => (load_dataset(&path)?, path.display().to_string()),
                None => {
                    let (ds, _) = teacher_dataset(4, teacher, 1, samples, train.seed)?;
                    let src = ds.provenance().to_string();
                    (ds, src)
                }
            };
            let output_dim = dataset.target_dim();
            let cfg = OsfConfig {
                base_widths: base,
                quantum,
                eps_zero_rel: eps_zero,
                max_rounds_per_layer: max_rounds,
                delta_t: train.dt,
                epochs_per_step: n_epoch,
                base_epochs,
                lr: train.lr,
                batch_size: train.batch,
                seed: train.seed,
            };
            let (result, net) = osf_search(&dataset, LossKind::SquaredError, output_dim, &cfg)?;
            ensure_out_dir(&out.out_dir)?;
            let path = out.out_dir.join("grow_structure.json");
            write_json(&serde_json::json!({ "config": cfg, "data": source, "result": result }), &path)?;
            hta::network::save_mlp(&net, &out.out_dir.join("grow_net.txt"))?;
            println!(
                "structure search on {source}: widths {:?}, {:?} after {} growth batches -> {}",
                result.widths,
                result.stop_reason,
                result.history.len(),
                path.display()
            );
        }
        Command::Head { w1, w2, features, classes, samples, phase_epochs, train, out } => {
            let cfg = HeadConfig {
                w1,
                w2,
                feature_dim: features,
                classes,
                train_samples: samples,
                test_samples: (samples / 4).max(classes),
                lr: train.lr,
                batch_size: train.batch,
                epochs_per_phase: phase_epochs,
                delta_t: train.dt,
                seed: train.seed,
            };
            let outcome = fc_head_three_state(&cfg)?;
            ensure_out_dir(&out.out_dir)?;
            let path = out.out_dir.join("head_metrics.json");
            write_json(&outcome, &path)?;
            println!(
                "three-state head {:?}: test cross-entropy {:.4}, test accuracy {:.1}% -> {}",
                outcome.final_dims,
                outcome.final_test_loss,
                100.0 * outcome.test_accuracy,
                path.display()
            );
        }
        Command::Data {
            uniform,
            sparse,
            vdp,
            dim,
            ppd,
            level,
            lo,
            hi,
            mesh,
            test_grid,
            file,
            out,
        } => {
            let ds: Dataset = if vdp {
                if test_grid {
                    vdp_dataset((11.0, 14.0), (11.0, 14.0), mesh)?
                } else {
                    vdp_dataset((1.0, 10.0), (1.0, 10.0), mesh)?
                }
            } else if sparse {
                sparse_grid_dataset(SparseGridSpec::new(dim, level)?, (lo, hi), sin_target)?
            } else if uniform {
                uniform_grid_dataset(dim, ppd, (lo, hi), sin_target)?
            } else {
                return Err(hta::HtaError::Config(
                    "pick one of --uniform, --sparse, --vdp".into(),
                ));
            };
            ensure_out_dir(&out.out_dir)?;
            let path = file.unwrap_or_else(|| {
                let stem = if vdp {
                    format!("vdp_{}", if test_grid { "test" } else { "train" })
                } else if sparse {
                    format!("sparse_n{dim}_l{level}")
                } else {
                    format!("uniform_n{dim}_p{ppd}")
                };
                out.out_dir.join(format!("{stem}.csv"))
            });
            save_dataset(&ds, &path)?;
            println!("{} points written to {} ({})", ds.len(), path.display(), ds.provenance());
        }
        Command::Report { files, out } => {
            let mut reports = Vec::new();
            for f in &files {
                let text = std::fs::read_to_string(f)?;
                let value: serde_json::Value = serde_json::from_str(&text)?;
                reports.push(comparison_from_value(&value, f)?);
            }
            let table = compare_report(&reports);
            ensure_out_dir(&out.out_dir)?;
            match out.format {
                Format::Json => {
                    let path = out.out_dir.join("report.json");
                    write_json(&table, &path)?;
                    println!("{}", serde_json::to_string_pretty(&table)?);
                    println!("report -> {}", path.display());
                }
                Format::Csv => {
                    let path = out.out_dir.join("report.csv");
                    let mut f = std::io::BufWriter::new(std::fs::File::create(&path)?);
                    table.write_csv(&mut f)?;
                    let mut stdout = std::io::stdout();
                    table.write_csv(&mut stdout)?;
                    println!("report -> {}", path.display());
                }
            }
        }
    }
    Ok(())
}

/// Reads the fields `report` needs back out of a metrics.json. Kept
/// lenient so hand-edited files still aggregate.
fn comparison_from_value(value: &serde_json::Value, path: &Path) -> hta::Result<ComparisonReport> {
    serde_json::from_value(value.clone()).map_err(|e| hta::HtaError::Parse {
        line: 0,
        msg: format!("{}: not a paired metrics.json ({e})", path.display()),
    })
}
