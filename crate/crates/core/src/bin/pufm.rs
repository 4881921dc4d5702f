use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pufm::config::RunConfig;
use pufm::model::ModelKind;
use pufm::pipeline;
use pufm::toy::Shape;
use pufm::Result;

#[derive(Parser)]
#[command(name = "pufm", version, about = "Point-cloud upsampling by flow matching")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Configuration override, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Euler steps at inference.
    #[arg(long, global = true)]
    steps: Option<usize>,
    /// Upsampling rate.
    #[arg(long, global = true)]
    rate: Option<usize>,
    /// Use the adaptive time schedule from the stored loss profile.
    #[arg(long, global = true, conflicts_with = "uniform_schedule")]
    ats: bool,
    /// Use uniformly spaced time steps.
    #[arg(long, global = true)]
    uniform_schedule: bool,
    /// Skip manifold post-processing after integration.
    #[arg(long, global = true)]
    no_postprocess: bool,
    #[arg(long, global = true)]
    model: Option<ModelKind>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate paired sparse/dense clouds from an analytic surface.
    GenToy {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        shape: Option<Shape>,
        #[arg(long)]
        count: Option<usize>,
        /// Dense points per cloud.
        #[arg(long)]
        points: Option<usize>,
    },
    /// Stage-1 flow-matching training from a fresh model.
    Train {
        #[arg(long)]
        data: Option<PathBuf>,
        /// Checkpoint to write.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Stage-2 endpoint refinement of a stage-1 checkpoint.
    Refine {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Where to write the refined checkpoint; defaults to overwriting the input.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Record the per-time loss profile into a checkpoint.
    Profile {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Also write the profile as JSON.
        #[arg(long)]
        profile_out: Option<PathBuf>,
    },
    /// Upsample a point cloud.
    Upsample {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Compare a candidate cloud against a reference.
    Eval {
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        candidate: PathBuf,
        /// Reference surface for point-to-face distance.
        #[arg(long)]
        mesh: Option<PathBuf>,
        /// Write the metrics as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

fn build_config(c: &Common) -> Result<RunConfig> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for kv in &c.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| pufm::Error::InvalidArgument(format!("--set expects KEY=VALUE, got '{kv}'")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(s) = c.seed {
        cfg.seed = s;
        cfg.train.seed = s;
    }
    if let Some(s) = c.steps {
        cfg.sampler.steps = s;
    }
    if let Some(r) = c.rate {
        cfg.rate = r;
    }
    if c.ats {
        cfg.sampler.use_ats = true;
    }
    if c.uniform_schedule {
        cfg.sampler.use_ats = false;
    }
    if c.no_postprocess {
        cfg.sampler.postprocess = false;
    }
    if let Some(m) = c.model {
        cfg.model = m;
    }
    Ok(cfg)
}

fn init_threads() -> Result<()> {
    let Ok(v) = std::env::var("PUFM_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| pufm::Error::InvalidArgument(format!("PUFM_THREADS must be a positive integer, got '{v}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| pufm::Error::InvalidArgument(format!("cannot start {n} threads: {e}")))
}

fn run(cli: Cli) -> Result<()> {
    init_threads()?;
    let mut cfg = build_config(&cli.common)?;
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let data = |arg: &Option<PathBuf>, cfg: &RunConfig| -> Result<PathBuf> {
        pipeline::path_or(arg.as_deref(), cfg.data_dir.as_ref(), "dataset directory (--data)").map(Path::to_path_buf)
    };
    let ckpt = |arg: &Option<PathBuf>, cfg: &RunConfig| -> Result<PathBuf> {
        pipeline::path_or(arg.as_deref(), cfg.checkpoint.as_ref(), "checkpoint (--checkpoint)").map(Path::to_path_buf)
    };
    match &cli.command {
        Command::GenToy { out: dir, shape, count, points } => {
            if let Some(s) = shape {
                cfg.toy_shape = *s;
            }
            if let Some(n) = count {
                cfg.toy_count = *n;
            }
            if let Some(n) = points {
                cfg.toy_points = *n;
            }
            for p in pipeline::cmd_gen_toy(&cfg, dir)? {
                writeln!(out, "wrote {}", p.display()).map_err(|e| pufm::Error::io("<stdout>", e))?;
            }
        }
        Command::Train { data: d, checkpoint } => {
            pipeline::cmd_train(&cfg, &data(d, &cfg)?, &ckpt(checkpoint, &cfg)?, &mut out)?;
        }
        Command::Refine { data: d, checkpoint, output } => {
            let input = ckpt(checkpoint, &cfg)?;
            let output = output.clone().unwrap_or_else(|| input.clone());
            pipeline::cmd_refine(&cfg, &data(d, &cfg)?, &input, &output, &mut out)?;
        }
        Command::Profile { data: d, checkpoint, profile_out } => {
            pipeline::cmd_profile(&cfg, &data(d, &cfg)?, &ckpt(checkpoint, &cfg)?, profile_out.as_deref(), &mut out)?;
        }
        Command::Upsample { checkpoint, input, output } => {
            pipeline::cmd_upsample(&cfg, &ckpt(checkpoint, &cfg)?, input, output)?;
        }
        Command::Eval { reference, candidate, mesh, report } => {
            pipeline::cmd_eval(&cfg, reference, candidate, mesh.as_deref(), report.as_deref(), &mut out)?;
        }
    }
    out.flush().map_err(|e| pufm::Error::io("<stdout>", e))
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("pufm: error: {e}");
            ExitCode::FAILURE
        }
    }
}
