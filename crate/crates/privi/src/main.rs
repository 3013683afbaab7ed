use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use privi::error::{Error, Result};
use privi::experiments::{read_output, run_experiment, EfficiencySummary, HeadSummary, PretrainSummary};
use privi::fixtures::{label_from_truth, read_truth, write_corpus, FixtureSpec};
use privi::pipeline::{open_pipeline, render_composition, Pipeline};
use privi::server::{serve, AppState};
use privi::workspace::{RunRecord, WORKSPACE_ENV};
use privi_core::jepa::TargetMode;

#[derive(Parser)]
#[command(name = "privi", version, about = "Primate video curation, frozen-feature classification and latent-prediction toys")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Pipeline config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for per-item stages.
    #[arg(long)]
    workers: Option<usize>,
    /// Artifact directory.
    #[arg(long, env = WORKSPACE_ENV)]
    workspace: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Ema,
    SharedNoStopGrad,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportKind {
    Composition,
    Relevance,
    Heads,
    Eval,
    LabelEfficiency,
    Jepa,
}

#[derive(Subcommand)]
enum Command {
    /// Detect shot cuts in every video.
    Cuts(Common),
    /// Split cut-free segments into fixed-length snippets.
    Chunk(Common),
    /// Embed snippet keyframes.
    Embed(Common),
    /// Run the open-vocabulary detector on snippet keyframes.
    Detect(Common),
    /// Apply the relevance threshold, box filtering and species assignment.
    Filter(Common),
    /// Rebalance sources to their target proportions under the budget.
    Subsample(Common),
    /// Write the final manifest and composition report.
    Manifest(Common),
    /// Train the relevance classifier from the label log.
    TrainRelevance(Common),
    /// Train the attentive-probe ensemble on frozen features.
    TrainHead(Common),
    /// Evaluate the ensemble on the test split.
    Eval(Common),
    /// Train on sequence subsets and report the degradation curve.
    LabelEfficiency(Common),
    /// Latent-prediction pretraining on the toy motion stream.
    JepaToy {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        target_mode: Option<Mode>,
    },
    /// HTTP API for the curation console.
    Serve {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
    },
    /// Print a stored stage summary.
    Report {
        #[command(flatten)]
        common: Common,
        #[arg(value_enum, default_value = "composition")]
        kind: ReportKind,
    },
    /// Write the synthetic fixture corpus.
    #[command(hide = true)]
    Fixture {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        videos: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Append ground-truth labels for fixture snippets.
    #[command(hide = true)]
    FixtureLabels {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        fixture: PathBuf,
        #[arg(long, default_value_t = 200)]
        count: usize,
    },
    /// Serve frames from raw-frame directories over the decoder protocol.
    #[command(hide = true)]
    Decode {
        #[arg(long)]
        root: PathBuf,
    },
}

fn open(c: &Common) -> Result<Pipeline> {
    open_pipeline(&c.config, c.workspace.as_deref(), c.seed, c.workers)
}

fn print_json<T: serde::Serialize>(v: &T) {
    println!("{}", serde_json::to_string_pretty(v).expect("in-memory serialization"));
}

fn stage(c: &Common, name: &str) -> Result<()> {
    let run: RunRecord = open(c)?.run_stage(name)?;
    print_json(&run);
    Ok(())
}

fn experiment(c: &Common, name: &str, mode: Option<TargetMode>) -> Result<()> {
    let p = open(c)?;
    let run = run_experiment(&p, name, mode)?;
    print_json(&run);
    Ok(())
}

fn report(c: &Common, kind: ReportKind) -> Result<()> {
    let p = open(c)?;
    match kind {
        ReportKind::Composition => print!("{}", render_composition(&p.composition()?)),
        ReportKind::Relevance => print_json(&p.relevance_summary()?),
        ReportKind::Heads => print_json(&read_output::<Vec<HeadSummary>>(&p, "train-head", "summary")?),
        ReportKind::Eval => std::io::stdout()
            .write_all(&p.ws.stage_output("eval", "report")?)
            .map_err(|e| Error::io("stdout", e))?,
        ReportKind::LabelEfficiency => print_json(&read_output::<EfficiencySummary>(&p, "label-efficiency", "summary")?),
        ReportKind::Jepa => print_json(&read_output::<PretrainSummary>(&p, "jepa-toy", "summary")?),
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Cuts(c) => stage(&c, "cuts"),
        Command::Chunk(c) => stage(&c, "chunk"),
        Command::Embed(c) => stage(&c, "embed"),
        Command::Detect(c) => stage(&c, "detect"),
        Command::Filter(c) => stage(&c, "filter"),
        Command::Subsample(c) => stage(&c, "subsample"),
        Command::Manifest(c) => stage(&c, "manifest"),
        Command::TrainRelevance(c) => stage(&c, "train-relevance"),
        Command::TrainHead(c) => experiment(&c, "train-head", None),
        Command::Eval(c) => experiment(&c, "eval", None),
        Command::LabelEfficiency(c) => experiment(&c, "label-efficiency", None),
        Command::JepaToy { common, target_mode } => {
            let mode = target_mode.map(|m| match m {
                Mode::Ema => TargetMode::Ema,
                Mode::SharedNoStopGrad => TargetMode::SharedNoStopGrad,
            });
            experiment(&common, "jepa-toy", mode)
        }
        Command::Serve { common, addr } => {
            let state = AppState::new(open(&common)?);
            let rt = tokio::runtime::Builder::new_multi_thread()
                .enable_all()
                .build()
                .map_err(|e| Error::io("tokio runtime", e))?;
            rt.block_on(serve(state, addr))
        }
        Command::Report { common, kind } => report(&common, kind),
        Command::Fixture { out, videos, seed } => {
            let truth = write_corpus(&out, &FixtureSpec { videos, seed, ..FixtureSpec::default() })?;
            eprintln!("wrote {} videos to {}", truth.len(), out.display());
            Ok(())
        }
        Command::FixtureLabels { common, fixture, count } => {
            let p = open(&common)?;
            let truth = read_truth(&fixture)?;
            let n = label_from_truth(&p.ws, &p.stage_manifest("chunk")?, &truth, count, p.config.seed)?;
            eprintln!("appended {n} labels");
            Ok(())
        }
        Command::Decode { root } => {
            let stdin = std::io::stdin().lock();
            privi::frames::serve_decoder(Path::new(&root), stdin, std::io::stdout().lock())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
