//! `citypipe`: runs the pipeline stages from one JSON config.

use std::path::PathBuf;
use std::process::ExitCode;

use citypipe_core::block_expansion::{self, TransformerSpec};
use citypipe_core::config::ExpandDemoConfig;
use citypipe_core::orchestrator::OrderingMode;
use citypipe_core::pipeline::run_score_from;
use citypipe_core::qa_builder::DatasetMode;
use citypipe_core::{run_all, run_stage, PipelineConfig, PipelineError, RunOptions, Stage, StageReport};
use clap::{Args, Parser, Subcommand, ValueEnum};
use tracing_subscriber::EnvFilter;

#[derive(Debug, Parser)]
#[command(name = "citypipe", version, about = "Traffic-scene captioning pipeline")]
struct Cli {
    /// Pipeline config (JSON). Optional for `expand-demo`.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Rewrite outputs even when their content is unchanged.
    #[arg(long, global = true)]
    force: bool,
    /// Worker cap for stages that run in parallel.
    #[arg(long, global = true)]
    parallelism: Option<usize>,
    /// More log output; repeat for more.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    /// Errors only.
    #[arg(short, long, global = true, conflicts_with = "verbose")]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Filter training tuples and pick the best test views.
    Select(SelectArgs),
    /// Draw visual prompts and local crops.
    Render(RenderArgs),
    /// Assemble the instruction-tuning dataset.
    BuildDataset(DatasetArgs),
    /// Caption the test tuples through a chat endpoint.
    Infer(InferArgs),
    /// Score predictions against references.
    Score(ScoreArgs),
    /// Expand a toy transformer and measure the identity residual.
    ExpandDemo(ExpandArgs),
    /// Every stage from select to score.
    RunAll,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Split {
    Train,
    Test,
}

#[derive(Debug, Args)]
struct SelectArgs {
    #[arg(long)]
    annotations: Option<PathBuf>,
    #[arg(long)]
    thr_p: Option<f64>,
    #[arg(long)]
    thr_v: Option<f64>,
    /// Split whose selection report is printed; `--annotations` overrides that split's input.
    #[arg(long, value_enum, default_value = "train")]
    split: Split,
}

#[derive(Debug, Args)]
struct RenderArgs {
    #[arg(long)]
    annotations: Option<PathBuf>,
    #[arg(long)]
    frames: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    SingleRound,
    MultiRound,
}

#[derive(Debug, Args)]
struct DatasetArgs {
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum OrderArg {
    Independent,
    PedestrianVehicle,
    VehiclePedestrian,
}

#[derive(Debug, Args)]
struct InferArgs {
    /// Chat-completions URL.
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long, value_enum)]
    mode: Option<OrderArg>,
}

#[derive(Debug, Args)]
struct ScoreArgs {
    /// Predictions JSON; defaults to the one in the output directory.
    #[arg(long)]
    pred: Option<PathBuf>,
    /// Annotations holding the reference captions.
    #[arg(long)]
    gt: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ExpandArgs {
    #[arg(long)]
    blocks: Option<usize>,
    #[arg(long)]
    added: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

enum Failure {
    Config(String),
    Stage(String),
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        if e.exit_code() == 2 {
            Failure::Config(e.to_string())
        } else {
            Failure::Stage(e.to_string())
        }
    }
}

fn init_logging(cli: &Cli) {
    let level = match (cli.quiet, cli.verbose) {
        (true, _) => "error",
        (_, 0) => "info",
        (_, 1) => "debug",
        _ => "trace",
    };
    let filter = EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(level));
    tracing_subscriber::fmt().json().with_env_filter(filter).with_writer(std::io::stderr).init();
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, Failure> {
    let Some(path) = &cli.config else {
        return Err(Failure::Config("--config is required for this command".into()));
    };
    PipelineConfig::load(path).map_err(|e| Failure::Config(e.to_string()))
}

fn print_json<T: serde::Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
}

fn print_file(path: PathBuf) -> Result<(), Failure> {
    let text = std::fs::read_to_string(&path).map_err(|e| Failure::Stage(format!("{}: {e}", path.display())))?;
    print!("{text}");
    Ok(())
}

fn apply_overrides(cli: &Cli, cfg: &mut PipelineConfig) {
    if let Some(n) = cli.parallelism {
        cfg.parallelism = n;
    }
    match &cli.command {
        Command::Select(a) => {
            if let Some(p) = &a.annotations {
                match a.split {
                    Split::Train => cfg.paths.annotations = p.clone(),
                    Split::Test => cfg.paths.test_annotations = Some(p.clone()),
                }
            }
            if let Some(t) = a.thr_p {
                cfg.selection.thresholds.thr_p = t;
            }
            if let Some(t) = a.thr_v {
                cfg.selection.thresholds.thr_v = t;
            }
        }
        Command::Render(a) => {
            if let Some(p) = &a.annotations {
                cfg.paths.annotations = p.clone();
            }
            if let Some(p) = &a.frames {
                cfg.paths.frames = p.clone();
            }
            if let Some(p) = &a.out {
                cfg.paths.output = p.clone();
            }
        }
        Command::BuildDataset(a) => {
            if let Some(m) = a.mode {
                cfg.dataset.mode = match m {
                    ModeArg::SingleRound => DatasetMode::SingleRound,
                    ModeArg::MultiRound => DatasetMode::MultiRound,
                };
            }
        }
        Command::Infer(a) => {
            if let Some(url) = &a.endpoint {
                cfg.endpoint.url = url.clone();
            }
            if let Some(m) = a.mode {
                cfg.infer.mode = match m {
                    OrderArg::Independent => OrderingMode::Independent,
                    OrderArg::PedestrianVehicle => OrderingMode::PedestrianVehicle,
                    OrderArg::VehiclePedestrian => OrderingMode::VehiclePedestrian,
                };
            }
        }
        Command::Score(a) => {
            if let Some(p) = &a.gt {
                cfg.paths.test_annotations = Some(p.clone());
            }
        }
        Command::ExpandDemo(a) => apply_expand(a, &mut cfg.expand_demo),
        Command::RunAll => {}
    }
}

fn apply_expand(a: &ExpandArgs, demo: &mut ExpandDemoConfig) {
    let spec: &mut TransformerSpec = &mut demo.spec;
    if let Some(n) = a.blocks {
        spec.n_blocks = n;
    }
    if let Some(d) = a.dim {
        spec.d_model = d;
        spec.d_ffn = 2 * d;
    }
    if let Some(h) = a.heads {
        spec.n_heads = h;
    }
    if let Some(k) = a.added {
        demo.added = k;
    }
    if let Some(s) = a.seed {
        demo.seed = s;
    }
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let opts = RunOptions { force: cli.force };
    if let (Command::ExpandDemo(a), None) = (&cli.command, &cli.config) {
        let mut demo = ExpandDemoConfig::default();
        apply_expand(a, &mut demo);
        demo.spec.validate().map_err(|e| Failure::Config(e.to_string()))?;
        let report = block_expansion::demo(demo.spec, demo.added, demo.seed, demo.samples)
            .map_err(|e| Failure::Stage(e.to_string()))?;
        print_json(&report);
        return Ok(());
    }

    let mut cfg = load_config(cli)?;
    apply_overrides(cli, &mut cfg);
    cfg.validate().map_err(|e| Failure::Config(e.to_string()))?;
    let out = cfg.paths.output.clone();
    let report: StageReport = match &cli.command {
        Command::RunAll => {
            let reports = run_all(&cfg, opts)?;
            print_json(&reports);
            return Ok(());
        }
        Command::Select(a) => {
            run_stage(Stage::Select, &cfg, opts)?;
            let name = match a.split {
                Split::Train => "selection_train.json",
                Split::Test => "selection_test.json",
            };
            return print_file(out.join(name));
        }
        Command::Score(a) => {
            match &a.pred {
                Some(p) => run_score_from(&cfg, opts, p)?,
                None => run_stage(Stage::Score, &cfg, opts)?,
            };
            return print_file(out.join("scorecard.json"));
        }
        Command::ExpandDemo(_) => {
            let r = run_stage(Stage::ExpandDemo, &cfg, opts)?;
            print_json(&r.details);
            return Ok(());
        }
        Command::Render(_) => run_stage(Stage::Render, &cfg, opts)?,
        Command::BuildDataset(_) => run_stage(Stage::BuildDataset, &cfg, opts)?,
        Command::Infer(_) => run_stage(Stage::Infer, &cfg, opts)?,
    };
    print_json(&report);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(&cli);
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            tracing::error!(error = %msg, "configuration error");
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Stage(msg)) => {
            tracing::error!(error = %msg, "stage failed");
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
