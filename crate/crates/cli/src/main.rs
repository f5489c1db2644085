mod config;
mod serve;

use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use storyboard_core::backend::sim::SimBackend;
use storyboard_core::backend::{HttpTransport, ModelClients, Transport};
use storyboard_core::dopesheet::{self, LoadError};
use storyboard_core::pipeline::{self, Engine, HaltPolicy, JobStatus, PipelineError, StoryboardResult};
use storyboard_core::report;

use crate::config::CliConfig;

#[derive(Parser)]
#[command(name = "storyboard", version, about = "Storyboards from stories through image-to-video trajectories")]
struct Cli {
    /// Directory holding jobs/ and store/.
    #[arg(long, global = true, default_value = "storyboard-work")]
    workdir: PathBuf,
    /// JSON file with `run` settings and `backends` endpoints.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Use the simulated backend with this scenario instead of HTTP backends.
    #[arg(long, global = true)]
    sim: Option<PathBuf>,
    /// Keep the simulated backend's state in this file across invocations.
    #[arg(long, global = true, requires = "sim")]
    sim_state: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunFlags {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    halt_policy: Option<HaltPolicy>,
    /// Frames per generated trajectory.
    #[arg(long)]
    frames: Option<u32>,
    /// Consistency gate threshold.
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    max_rounds: Option<usize>,
    /// Candidates kept for subjective review.
    #[arg(long)]
    top_k: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Start a job from a story file.
    Run {
        story: PathBuf,
        #[command(flatten)]
        flags: RunFlags,
    },
    /// Continue an interrupted job.
    Resume {
        story_id: String,
        /// Reset failed shots and run them again.
        #[arg(long)]
        retry_failed: bool,
    },
    /// Print a job's stage and score summary as JSON.
    Inspect { story_id: String },
    /// Write storyboard.png, scores.csv and report.json.
    Report {
        story_id: String,
        /// Output directory; defaults to the job directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a dope sheet file.
    Validate { sheet: PathBuf },
    /// Serve a sim scenario over the backend wire protocol.
    SimServe {
        scenario: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: std::net::IpAddr,
    },
}

/// Usage problems exit 2, pipeline problems exit 1.
enum Failure {
    Usage(anyhow::Error),
    Pipeline(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Pipeline(e)
    }
}

fn usage<T>(r: Result<T>) -> Result<T, Failure> {
    r.map_err(Failure::Usage)
}

fn pipeline_error(e: PipelineError) -> Failure {
    match e {
        PipelineError::Config(_) | PipelineError::Input(_) | PipelineError::AlreadyExists(_) | PipelineError::NotFound(_) => {
            Failure::Usage(e.into())
        }
        e => Failure::Pipeline(e.into()),
    }
}

fn clients(cli: &Cli, cfg: &CliConfig) -> Result<ModelClients> {
    let mut backends = cfg.backends.clone().unwrap_or_default();
    backends.apply_env_overrides(|k| std::env::var(k).ok());
    let transport: Arc<dyn Transport> = match &cli.sim {
        Some(path) => {
            if cfg.backends.is_none() {
                backends.i2v.poll_interval_secs = 0.01;
            }
            let mut sim = SimBackend::from_file(path).with_context(|| format!("loading scenario {}", path.display()))?;
            if let Some(state) = &cli.sim_state {
                sim = sim.with_state_file(state).with_context(|| format!("loading sim state {}", state.display()))?;
            }
            Arc::new(sim)
        }
        None => Arc::new(HttpTransport::new(&backends)),
    };
    backends.validate()?;
    Ok(ModelClients::new(transport, backends))
}

fn load_config(cli: &Cli) -> Result<CliConfig> {
    cli.config.as_deref().map_or_else(|| Ok(CliConfig::default()), CliConfig::load)
}

fn apply_flags(cfg: &mut CliConfig, f: &RunFlags) {
    let run = &mut cfg.run;
    if let Some(v) = f.seed {
        run.seed = v;
    }
    if let Some(v) = f.halt_policy {
        run.halt_policy = v;
    }
    if let Some(v) = f.frames {
        run.video.frame_count = v;
    }
    if let Some(v) = f.threshold {
        run.gate.threshold = v;
    }
    if let Some(v) = f.max_rounds {
        run.gate.max_rounds = v;
    }
    if let Some(v) = f.top_k {
        run.selection.top_k = v;
    }
}

fn print_result(r: &StoryboardResult) -> Result<(), Failure> {
    println!(
        "{}: {} shots selected, {} failed, manifest {}",
        r.story_id,
        r.shots.len(),
        r.failed.len(),
        r.manifest_path.display()
    );
    for s in &r.shots {
        println!("  shot {} frame {} {}", s.index, s.frame_index, s.hash);
    }
    match r.status {
        JobStatus::Completed | JobStatus::Partial => Ok(()),
        status => Err(Failure::Pipeline(anyhow::anyhow!("job {} ended {status:?}", r.story_id))),
    }
}

fn execute(cli: &Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Run { story, flags } => {
            let mut cfg = usage(load_config(cli))?;
            apply_flags(&mut cfg, flags);
            let input = usage(config::load_story(story))?;
            let engine = Engine::new(usage(clients(cli, &cfg))?, &cli.workdir);
            let r = engine.run_story(&input, &cfg.run).map_err(pipeline_error)?;
            print_result(&r)
        }
        Command::Resume { story_id, retry_failed } => {
            let cfg = usage(load_config(cli))?;
            let engine = Engine::new(usage(clients(cli, &cfg))?, &cli.workdir);
            let r = engine.resume(story_id, *retry_failed).map_err(pipeline_error)?;
            print_result(&r)
        }
        Command::Inspect { story_id } => {
            let m = load_manifest(&cli.workdir, story_id)?;
            let text = serde_json::to_string_pretty(&m.summary()).context("encoding summary")?;
            // A closed pipe (`| head`) is not an error.
            let _ = writeln!(std::io::stdout().lock(), "{text}");
            Ok(())
        }
        Command::Report { story_id, out } => {
            let m = load_manifest(&cli.workdir, story_id)?;
            let out = out.clone().unwrap_or_else(|| cli.workdir.join("jobs").join(story_id));
            let store = pipeline::FrameStore::new(cli.workdir.join("store"));
            let files = report::render_report(&m, &store, &out).context("rendering report")?;
            for path in [files.storyboard, files.scores, files.report] {
                println!("{}", path.display());
            }
            Ok(())
        }
        Command::Validate { sheet } => {
            let text = usage(std::fs::read_to_string(sheet).with_context(|| format!("reading {}", sheet.display())))?;
            match dopesheet::load(&text) {
                Ok(ds) => {
                    println!("{}: valid, {} shots", sheet.display(), ds.shots.len());
                    Ok(())
                }
                Err(LoadError::Invalid(report)) => {
                    for v in &report.violations {
                        eprintln!("{}: {v}", sheet.display());
                    }
                    Err(Failure::Pipeline(anyhow::anyhow!("{} violations", report.violations.len())))
                }
                Err(e) => Err(Failure::Pipeline(anyhow::anyhow!("{}: {e}", sheet.display()))),
            }
        }
        Command::SimServe { scenario, port, host } => {
            let sim = usage(
                SimBackend::from_file(scenario).with_context(|| format!("loading scenario {}", scenario.display())),
            )?;
            serve::serve(sim, SocketAddr::new(*host, *port)).map_err(Failure::Pipeline)
        }
    }
}

fn load_manifest(workdir: &Path, story_id: &str) -> Result<pipeline::JobManifest, Failure> {
    let path = workdir.join("jobs").join(story_id).join("manifest.json");
    pipeline::load_manifest(&path).map_err(pipeline_error)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = execute(&cli);
    let _ = std::io::stdout().flush();
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Pipeline(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
