//! Command-line pipeline: reference generation, training, scoring and the
//! full benchmark reproduction table.
//!
//! Every training run writes a fully-resolved `config.lock.json` next to its
//! artifacts; rerunning from the same configuration is bit-identical except
//! for the reported wall time.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::eval::{evaluate, write_metrics, write_predictions, write_residuals, MetricsFile};
use crate::graph::{split_inside, split_outside, GraphData, GridSpec};
use crate::lbfgs::LbfgsConfig;
use crate::models::{ensure_dir, load_params, save_params, table_specs, TwoStreamSpec};
use crate::oracle::reference_field;
use crate::problems::Problem;
use crate::train::{
    train_stream, train_two_phase, write_trace, CheckpointCfg, ModelKind, PhaseRun, StreamKind,
};

/// Env var naming the default output root (fallback: `./runs`).
pub const OUT_ROOT_ENV: &str = "PDESTREAM_OUT";

#[derive(Parser, Debug)]
#[command(
    name = "pdestream",
    about = "Two-stream FFNN/GCN collocation solver for PDE benchmarks"
)]
pub struct Cli {
    /// Cap on worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write the reference solution CSV for one problem.
    Oracle {
        #[arg(long)]
        problem: String,
        /// Grid override, e.g. 64x50 or 16x16x11.
        #[arg(long)]
        grid: Option<String>,
        /// Output directory (default: output root).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a model and score it on the held-out test nodes.
    Train(TrainArgs),
    /// Re-score a finished run directory against its reference.
    Evaluate {
        /// Run directory containing config.lock.json and final parameters.
        #[arg(long)]
        run: PathBuf,
    },
    /// Run all models and scenarios and compare against the published errors.
    Reproduce {
        /// Restrict to one problem (default: all four).
        #[arg(long)]
        problem: Option<String>,
        #[arg(long)]
        grid: Option<String>,
        #[arg(long)]
        max_iters: Option<usize>,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Optional JSON config file; explicit flags win over its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub problem: Option<String>,
    /// ffnn, gcn or gcn-ffnn.
    #[arg(long)]
    pub model: Option<String>,
    /// inside or outside.
    #[arg(long)]
    pub scenario: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Grid override, e.g. 64x50 or 16x16x11.
    #[arg(long)]
    pub grid: Option<String>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub history: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Held-out fraction for either scenario.
    #[arg(long)]
    pub split_fraction: Option<f64>,
    /// Checkpoint interval in optimizer iterations (0 disables).
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    /// Also export the training graph as JSON.
    #[arg(long, default_value_t = false)]
    pub export_graph: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    Inside,
    Outside,
}

impl Scenario {
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "inside" => Ok(Scenario::Inside),
            "outside" => Ok(Scenario::Outside),
            _ => Err(Error::Config(format!(
                "unknown scenario '{}'; valid: inside, outside",
                name
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Scenario::Inside => "inside",
            Scenario::Outside => "outside",
        }
    }
}

/// Fully-resolved run configuration; the contents of `config.lock.json`.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct RunConfig {
    pub problem: Problem,
    pub model: ModelKind,
    pub scenario: Scenario,
    pub seed: u64,
    /// Node counts per axis; bounds always follow the benchmark domains.
    pub grid: Vec<usize>,
    pub split_fraction: f64,
    pub max_iters: usize,
    pub history: usize,
    pub learning_rate: f64,
    pub checkpoint_every: usize,
    pub out_dir: PathBuf,
}

impl RunConfig {
    pub fn lbfgs(&self) -> LbfgsConfig {
        LbfgsConfig {
            max_iters: self.max_iters,
            history: self.history,
            learning_rate: self.learning_rate,
            ..Default::default()
        }
    }

    pub fn grid_spec(&self) -> Result<GridSpec> {
        grid_with_counts(self.problem, &self.grid)
    }
}

pub fn parse_grid(text: &str, p: usize) -> Result<Vec<usize>> {
    let counts: Vec<usize> = text
        .split('x')
        .map(|s| s.parse::<usize>().map_err(|_| Error::Config(format!("bad grid '{}'", text))))
        .collect::<Result<_>>()?;
    if counts.len() != p {
        return Err(Error::Config(format!(
            "grid '{}' has {} axes, problem needs {}",
            text,
            counts.len(),
            p
        )));
    }
    Ok(counts)
}

fn grid_with_counts(problem: Problem, counts: &[usize]) -> Result<GridSpec> {
    let default = problem.default_grid();
    let bounds: Vec<(f64, f64)> = default.axes.iter().map(|a| (a.min, a.max)).collect();
    GridSpec::rect(&bounds, counts)
}

pub fn out_root() -> PathBuf {
    std::env::var_os(OUT_ROOT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"))
}

/// Merges config file and flags (flags win) into a resolved RunConfig.
pub fn resolve_config(args: &TrainArgs) -> Result<RunConfig> {
    let base: Option<RunConfig> = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            Some(
                serde_json::from_str(&text)
                    .map_err(|e| Error::Config(format!("config {}: {}", path.display(), e)))?,
            )
        }
        None => None,
    };
    let problem = match (&args.problem, &base) {
        (Some(name), _) => Problem::from_name(name)?,
        (None, Some(b)) => b.problem,
        (None, None) => return Err(Error::Config("missing --problem".into())),
    };
    let model = match (&args.model, &base) {
        (Some(name), _) => ModelKind::from_name(name)?,
        (None, Some(b)) => b.model,
        (None, None) => return Err(Error::Config("missing --model".into())),
    };
    let scenario = match (&args.scenario, &base) {
        (Some(name), _) => Scenario::from_name(name)?,
        (None, Some(b)) => b.scenario,
        (None, None) => return Err(Error::Config("missing --scenario".into())),
    };
    let seed = args.seed.or(base.as_ref().map(|b| b.seed)).unwrap_or(42);
    let grid = match &args.grid {
        Some(text) => parse_grid(text, problem.p())?,
        None => base.as_ref().map(|b| b.grid.clone()).unwrap_or_else(|| {
            problem.default_grid().axes.iter().map(|a| a.count).collect()
        }),
    };
    let defaults = LbfgsConfig::default();
    let cfg = RunConfig {
        problem,
        model,
        scenario,
        seed,
        grid,
        split_fraction: args
            .split_fraction
            .or(base.as_ref().map(|b| b.split_fraction))
            .unwrap_or(0.1),
        max_iters: args
            .max_iters
            .or(base.as_ref().map(|b| b.max_iters))
            .unwrap_or(defaults.max_iters),
        history: args
            .history
            .or(base.as_ref().map(|b| b.history))
            .unwrap_or(defaults.history),
        learning_rate: args
            .learning_rate
            .or(base.as_ref().map(|b| b.learning_rate))
            .unwrap_or(defaults.learning_rate),
        checkpoint_every: args
            .checkpoint_every
            .or(base.as_ref().map(|b| b.checkpoint_every))
            .unwrap_or(1000),
        out_dir: match &args.out {
            Some(dir) => dir.clone(),
            None => match &base {
                Some(b) => b.out_dir.clone(),
                None => out_root().join(format!(
                    "{}-{}-{}-seed{}",
                    problem.name(),
                    model.name(),
                    scenario.name(),
                    seed
                )),
            },
        },
    };
    // The grid counts must build a valid spec before any work starts.
    cfg.grid_spec()?;
    Ok(cfg)
}

pub struct TrainOutcome {
    pub metrics: MetricsFile,
    pub out_dir: PathBuf,
}

/// Training + evaluation graphs and masks for a scenario.
struct ScenarioData {
    /// Graph the loss is assembled on (truncated for outside).
    train_graph: GraphData,
    /// Full-domain graph carrying the train/test masks for scoring.
    eval_graph: GraphData,
}

fn build_scenario(cfg: &RunConfig, spec: &GridSpec) -> Result<ScenarioData> {
    match cfg.scenario {
        Scenario::Inside => {
            // Transductive: one full-domain graph; loss terms honor the
            // train mask, propagation sees every node.
            let (train, test) = split_inside(spec, cfg.split_fraction, cfg.seed)?;
            let mut graph = GraphData::build(spec.clone());
            graph.apply_split(train, test);
            Ok(ScenarioData {
                train_graph: graph.clone(),
                eval_graph: graph,
            })
        }
        Scenario::Outside => {
            let (train, test, train_spec) = split_outside(spec, cfg.split_fraction)?;
            let train_spec = train_spec.ok_or_else(|| {
                Error::Config("outside split leaves fewer than two training time levels".into())
            })?;
            let train_graph = GraphData::build(train_spec);
            let mut eval_graph = GraphData::build(spec.clone());
            eval_graph.apply_split(train, test);
            Ok(ScenarioData {
                train_graph,
                eval_graph,
            })
        }
    }
}

fn checkpoint_cfg(cfg: &RunConfig, stem: &str) -> Option<CheckpointCfg> {
    (cfg.checkpoint_every > 0).then(|| CheckpointCfg {
        dir: cfg.out_dir.clone(),
        stem: stem.to_string(),
        every: cfg.checkpoint_every,
    })
}

fn save_phase(cfg: &RunConfig, stem: &str, run: &PhaseRun) -> Result<()> {
    write_trace(&cfg.out_dir.join(format!("{}.trace.json", stem)), &run.trace)
}

/// Full pipeline: split, train (two-phase for the fused model), score,
/// write artifacts. Returns the metrics for programmatic use.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainOutcome> {
    let start = Instant::now();
    ensure_dir(&cfg.out_dir)?;
    let lock = serde_json::to_string_pretty(cfg)
        .map_err(|e| Error::Config(format!("lock encode: {}", e)))?;
    std::fs::write(cfg.out_dir.join("config.lock.json"), lock + "\n")?;

    let spec = cfg.grid_spec()?;
    let scenario = build_scenario(cfg, &spec)?;
    let specs: TwoStreamSpec = table_specs(cfg.problem);
    let lbfgs = cfg.lbfgs();
    let reference = reference_field(cfg.problem, &spec)?;

    let params = match cfg.model {
        ModelKind::Ffnn | ModelKind::Gcn => {
            let kind = if cfg.model == ModelKind::Ffnn {
                StreamKind::Ffnn
            } else {
                StreamKind::Gcn
            };
            let ck = checkpoint_cfg(cfg, cfg.model.name());
            let run = train_stream(
                cfg.problem,
                &scenario.train_graph,
                kind,
                &specs,
                &lbfgs,
                cfg.seed,
                ck.as_ref(),
            )?;
            save_phase(cfg, cfg.model.name(), &run)?;
            let layout = match kind {
                StreamKind::Ffnn => specs.ffnn.layout(),
                StreamKind::Gcn => specs.gcn.layout(),
            };
            save_params(&cfg.out_dir, &format!("{}.final", cfg.model.name()), &layout, &run.params)?;
            run.params
        }
        ModelKind::GcnFfnn => {
            let ck = checkpoint_cfg(cfg, cfg.model.name());
            let run = train_two_phase(
                cfg.problem,
                &scenario.train_graph,
                &specs,
                &lbfgs,
                cfg.seed,
                None,
                ck.as_ref(),
            )?;
            save_phase(cfg, "ffnn", &run.ffnn)?;
            save_phase(cfg, "gcn", &run.gcn)?;
            save_phase(cfg, "fusion", &run.fusion)?;
            save_params(
                &cfg.out_dir,
                &format!("{}.final", cfg.model.name()),
                &specs.layout(),
                &run.params,
            )?;
            run.params
        }
    };

    let report = evaluate(
        cfg.model,
        &specs,
        &params,
        &scenario.eval_graph,
        &scenario.eval_graph.masks.test.clone(),
        &reference,
    )?;
    write_predictions(
        &cfg.out_dir.join("predictions.csv"),
        cfg.model,
        &specs,
        &params,
        &scenario.eval_graph,
        &reference,
    )?;
    write_residuals(
        &cfg.out_dir.join("residuals.csv"),
        cfg.model,
        &specs,
        &params,
        cfg.problem,
        &scenario.eval_graph,
    )?;
    let metrics = MetricsFile {
        problem: cfg.problem.name().into(),
        model: cfg.model.name().into(),
        scenario: cfg.scenario.name().into(),
        seed: cfg.seed,
        mse_test: report.mse_test,
        l_inf: report.l_inf,
        per_component: report.per_component,
        n_test: report.n_test,
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    write_metrics(&cfg.out_dir.join("metrics.json"), &metrics)?;
    Ok(TrainOutcome {
        metrics,
        out_dir: cfg.out_dir.clone(),
    })
}

pub fn cmd_export_graph(cfg: &RunConfig) -> Result<()> {
    let spec = cfg.grid_spec()?;
    let scenario = build_scenario(cfg, &spec)?;
    scenario
        .eval_graph
        .write_json(&cfg.out_dir.join("graph.json"))
}

pub fn cmd_oracle(problem: &str, grid: Option<&str>, out: Option<&Path>) -> Result<PathBuf> {
    let problem = Problem::from_name(problem)?;
    let spec = match grid {
        Some(text) => grid_with_counts(problem, &parse_grid(text, problem.p())?)?,
        None => problem.default_grid(),
    };
    let field = reference_field(problem, &spec)?;
    let dir = out.map(Path::to_path_buf).unwrap_or_else(out_root);
    ensure_dir(&dir)?;
    let path = dir.join(format!("{}.reference.csv", problem.name()));
    let mut buf = Vec::new();
    field.write_csv(&mut buf)?;
    std::fs::write(&path, buf)?;
    Ok(path)
}

pub fn cmd_evaluate(run: &Path) -> Result<MetricsFile> {
    let lock = run.join("config.lock.json");
    let text = std::fs::read_to_string(&lock)
        .map_err(|e| Error::Config(format!("{}: {}", lock.display(), e)))?;
    let cfg: RunConfig = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {}", lock.display(), e)))?;
    let spec = cfg.grid_spec()?;
    let scenario = build_scenario(&cfg, &spec)?;
    let specs = table_specs(cfg.problem);
    let layout = match cfg.model {
        ModelKind::Ffnn => specs.ffnn.layout(),
        ModelKind::Gcn => specs.gcn.layout(),
        ModelKind::GcnFfnn => specs.layout(),
    };
    let params = load_params(run, &format!("{}.final", cfg.model.name()), &layout)?;
    let reference = reference_field(cfg.problem, &spec)?;
    let start = Instant::now();
    let report = evaluate(
        cfg.model,
        &specs,
        &params,
        &scenario.eval_graph,
        &scenario.eval_graph.masks.test.clone(),
        &reference,
    )?;
    Ok(MetricsFile {
        problem: cfg.problem.name().into(),
        model: cfg.model.name().into(),
        scenario: cfg.scenario.name().into(),
        seed: cfg.seed,
        mse_test: report.mse_test,
        l_inf: report.l_inf,
        per_component: report.per_component,
        n_test: report.n_test,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

/// Published benchmark errors: (problem, model, inside (mse, l_inf),
/// outside (mse, l_inf)).
pub const PUBLISHED: [(&str, &str, (f64, f64), (f64, f64)); 12] = [
    ("1d-burgers", "ffnn", (5.10e-6, 0.025), (6.04e-6, 0.029)),
    ("1d-burgers", "gcn", (6.44e-4, 0.139), (8.81e-4, 0.383)),
    ("1d-burgers", "gcn-ffnn", (3.87e-6, 0.022), (1.50e-6, 0.019)),
    ("1d-schrodinger", "ffnn", (9.00e-6, 0.008), (5.42e-5, 0.017)),
    ("1d-schrodinger", "gcn", (1.30e-4, 0.023), (9.48e-4, 0.030)),
    ("1d-schrodinger", "gcn-ffnn", (8.75e-5, 0.011), (3.39e-5, 0.027)),
    ("2d-burgers", "ffnn", (1.68e-3, 0.085), (4.52e-3, 0.086)),
    ("2d-burgers", "gcn", (2.27e-3, 0.094), (5.92e-4, 0.030)),
    ("2d-burgers", "gcn-ffnn", (1.49e-3, 0.077), (5.99e-4, 0.027)),
    ("2d-schrodinger", "ffnn", (1.47e-7, 0.002), (3.02e-7, 0.002)),
    ("2d-schrodinger", "gcn", (1.19e-6, 0.003), (1.51e-6, 0.003)),
    ("2d-schrodinger", "gcn-ffnn", (1.47e-7, 0.002), (2.58e-7, 0.002)),
];

pub fn published_target(problem: Problem, model: ModelKind, scenario: Scenario) -> (f64, f64) {
    let row = PUBLISHED
        .iter()
        .find(|(p, m, _, _)| *p == problem.name() && *m == model.name())
        .expect("all benchmark rows are tabulated");
    match scenario {
        Scenario::Inside => row.2,
        Scenario::Outside => row.3,
    }
}

pub struct ReproRow {
    pub problem: Problem,
    pub model: ModelKind,
    pub scenario: Scenario,
    pub mse: f64,
    pub l_inf: f64,
    pub target_mse: f64,
    pub target_l_inf: f64,
}

impl ReproRow {
    pub fn ratio(&self) -> f64 {
        self.mse / self.target_mse
    }

    pub fn within_tolerance(&self) -> bool {
        self.ratio() <= 10.0
    }
}

/// Runs the full model × scenario matrix for the selected problems and
/// prints a comparison table against the published numbers.
pub fn cmd_reproduce(
    problem: Option<&str>,
    grid: Option<&str>,
    max_iters: Option<usize>,
    seed: u64,
    out: Option<&Path>,
) -> Result<Vec<ReproRow>> {
    let problems: Vec<Problem> = match problem {
        Some(name) => vec![Problem::from_name(name)?],
        None => vec![
            Problem::Burgers1d,
            Problem::Schrodinger1d,
            Problem::Burgers2d,
            Problem::Schrodinger2d,
        ],
    };
    let root = out.map(Path::to_path_buf).unwrap_or_else(|| out_root().join("reproduce"));
    let mut rows = Vec::new();
    println!(
        "{:<16} {:<9} {:<8} {:>12} {:>12} {:>8} {:>6}",
        "problem", "model", "scenario", "mse", "published", "ratio", "flag"
    );
    for problem in problems {
        for model in [ModelKind::Ffnn, ModelKind::Gcn, ModelKind::GcnFfnn] {
            for scenario in [Scenario::Inside, Scenario::Outside] {
                let grid_counts = match grid {
                    Some(text) => parse_grid(text, problem.p())?,
                    None => problem.default_grid().axes.iter().map(|a| a.count).collect(),
                };
                let defaults = LbfgsConfig::default();
                let cfg = RunConfig {
                    problem,
                    model,
                    scenario,
                    seed,
                    grid: grid_counts,
                    split_fraction: 0.1,
                    max_iters: max_iters.unwrap_or(defaults.max_iters),
                    history: defaults.history,
                    learning_rate: defaults.learning_rate,
                    checkpoint_every: 0,
                    out_dir: root.join(format!(
                        "{}-{}-{}",
                        problem.name(),
                        model.name(),
                        scenario.name()
                    )),
                };
                let outcome = cmd_train(&cfg)?;
                let (target_mse, target_l_inf) = published_target(problem, model, scenario);
                let row = ReproRow {
                    problem,
                    model,
                    scenario,
                    mse: outcome.metrics.mse_test,
                    l_inf: outcome.metrics.l_inf,
                    target_mse,
                    target_l_inf,
                };
                println!(
                    "{:<16} {:<9} {:<8} {:>12.3e} {:>12.3e} {:>8.2} {:>6}",
                    problem.name(),
                    model.name(),
                    scenario.name(),
                    row.mse,
                    row.target_mse,
                    row.ratio(),
                    if row.within_tolerance() { "ok" } else { "OVER" }
                );
                rows.push(row);
            }
        }
    }
    Ok(rows)
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {}", e)))?;
    }
    match cli.command {
        Command::Oracle { problem, grid, out } => {
            let path = cmd_oracle(&problem, grid.as_deref(), out.as_deref())?;
            println!("wrote {}", path.display());
            Ok(())
        }
        Command::Train(args) => {
            let cfg = resolve_config(&args)?;
            if args.export_graph {
                ensure_dir(&cfg.out_dir)?;
                cmd_export_graph(&cfg)?;
            }
            let outcome = cmd_train(&cfg)?;
            println!(
                "{} {} {} seed {}: mse_test {:.6e}, l_inf {:.6e}, {} test nodes -> {}",
                outcome.metrics.problem,
                outcome.metrics.model,
                outcome.metrics.scenario,
                outcome.metrics.seed,
                outcome.metrics.mse_test,
                outcome.metrics.l_inf,
                outcome.metrics.n_test,
                outcome.out_dir.display()
            );
            Ok(())
        }
        Command::Evaluate { run } => {
            let metrics = cmd_evaluate(&run)?;
            let text = serde_json::to_string_pretty(&metrics)
                .map_err(|e| Error::Config(format!("metrics encode: {}", e)))?;
            println!("{}", text);
            Ok(())
        }
        Command::Reproduce {
            problem,
            grid,
            max_iters,
            seed,
            out,
        } => {
            cmd_reproduce(
                problem.as_deref(),
                grid.as_deref(),
                max_iters,
                seed,
                out.as_deref(),
            )?;
            Ok(())
        }
    }
}
