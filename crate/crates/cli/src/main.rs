use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use semrecon::phantom::PhantomKind;
use semrecon::recon::Regularizer;
use semrecon::Error;

mod commands;
mod config;
mod scatter;

use config::{ExperimentConfig, Method, SourceKind, SourceSpec};

/// Semantic regularization for undersampled MRI reconstruction.
#[derive(Parser)]
#[command(name = "semrecon", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON experiment config; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Reuse a non-empty output directory.
    #[arg(long)]
    force: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a phantom dataset.
    GenData(GenDataArgs),
    /// Contrastively pretrain the encoder on a dataset.
    Pretrain(PretrainArgs),
    /// Reconstruct every entry of a dataset.
    Recon(ReconArgs),
    /// Reconstruct one entry under each instruction and map the pixel spread.
    PromptRobustness(RobustnessArgs),
    /// PCA projection of a trajectory against its prior.
    Project(ProjectArgs),
    /// Score saved reconstructions against a dataset.
    Eval(EvalArgs),
}

#[derive(Args)]
struct GenDataArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    size: Option<usize>,
    #[arg(long)]
    coils: Option<usize>,
    /// Acceleration factor.
    #[arg(long = "R")]
    r: Option<f64>,
    #[arg(long)]
    acs: Option<usize>,
    #[arg(long)]
    noise: Option<f64>,
    /// shepp_logan, random_ellipses or layered_rings.
    #[arg(long)]
    phantom: Option<String>,
}

#[derive(Args)]
struct PretrainArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
}

#[derive(Args)]
struct ReconArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    encoder: Option<PathBuf>,
    #[arg(long, value_enum)]
    method: Option<Method>,
    /// none, tv, semantic_image or semantic_language.
    #[arg(long)]
    regularizer: Option<String>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    log_every: Option<usize>,
    /// Dataset supplying the positive exemplars.
    #[arg(long)]
    positives: Option<PathBuf>,
    #[arg(long, value_enum)]
    positive_kind: Option<SourceKind>,
    /// Dataset supplying the negative exemplars.
    #[arg(long)]
    negatives: Option<PathBuf>,
    #[arg(long, value_enum)]
    negative_kind: Option<SourceKind>,
    #[arg(long)]
    instruction: Option<String>,
    /// One instruction per line.
    #[arg(long)]
    instruction_file: Option<PathBuf>,
}

#[derive(Args)]
struct RobustnessArgs {
    #[command(flatten)]
    recon: ReconArgs,
    /// Dataset entry to reconstruct; defaults to the first.
    #[arg(long)]
    entry: Option<String>,
}

#[derive(Args)]
struct ProjectArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    trajectory: PathBuf,
    /// priors.json written by `recon`.
    #[arg(long)]
    priors: PathBuf,
    /// low, mid, high or language.
    #[arg(long)]
    level: String,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Directory holding <id>/image.arr per entry.
    #[arg(long)]
    recon: PathBuf,
    #[arg(long)]
    encoder: Option<PathBuf>,
    /// Method label for the metrics rows.
    #[arg(long, default_value = "external")]
    method: String,
    #[arg(long, default_value = "unknown")]
    backbone: String,
}

fn base_config(common: &Common) -> semrecon::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(common.config.as_deref())?;
    if let Some(out) = &common.out {
        cfg.output = Some(out.clone());
    }
    if let Some(seed) = common.seed {
        cfg.apply_seed(seed);
    }
    Ok(cfg)
}

fn recon_config(a: &ReconArgs) -> semrecon::Result<ExperimentConfig> {
    let mut cfg = base_config(&a.common)?;
    if let Some(d) = &a.dataset {
        cfg.dataset = Some(d.clone());
    }
    if let Some(e) = &a.encoder {
        cfg.encoder = Some(e.clone());
    }
    if let Some(m) = a.method {
        cfg.method = m;
    }
    if let Some(r) = &a.regularizer {
        cfg.recon.regularizer = r.parse::<Regularizer>()?;
    }
    if let Some(l) = a.lambda {
        cfg.recon.lambda = l;
    }
    if let Some(n) = a.iterations {
        cfg.recon.optimizer.iterations = n;
    }
    if let Some(lr) = a.lr {
        cfg.recon.optimizer.lr = Some(lr);
    }
    if let Some(n) = a.log_every {
        cfg.recon.log_every = n;
    }
    let source = |dir: &Option<PathBuf>, kind: Option<SourceKind>, slot: &mut Option<SourceSpec>, default| {
        if let Some(d) = dir {
            *slot = Some(SourceSpec::new(d.clone(), kind.unwrap_or(default)));
        } else if let (Some(k), Some(s)) = (kind, slot.as_mut()) {
            s.kind = k;
        }
    };
    source(&a.positives, a.positive_kind, &mut cfg.prior.positives, SourceKind::Truth);
    source(&a.negatives, a.negative_kind, &mut cfg.prior.negatives, SourceKind::ZeroFilled);
    if let Some(t) = &a.instruction {
        cfg.prior.instruction = Some(t.clone());
    }
    if let Some(f) = &a.instruction_file {
        cfg.prior.instruction_file = Some(f.clone());
    }
    Ok(cfg)
}

fn run(cli: Cli) -> semrecon::Result<()> {
    match cli.command {
        Command::GenData(a) => {
            let mut cfg = base_config(&a.common)?;
            let d = &mut cfg.data;
            if let Some(v) = a.n {
                d.n = v;
            }
            if let Some(v) = a.size {
                d.size = v;
            }
            if let Some(v) = a.coils {
                d.coils = v;
            }
            if let Some(v) = a.r {
                d.acceleration = v;
            }
            if let Some(v) = a.acs {
                d.acs = v;
            }
            if let Some(v) = a.noise {
                d.noise = v;
            }
            if let Some(p) = &a.phantom {
                d.phantom = p.parse::<PhantomKind>()?;
            }
            commands::gen_data(&cfg, a.common.force)
        }
        Command::Pretrain(a) => {
            let mut cfg = base_config(&a.common)?;
            if let Some(d) = &a.dataset {
                cfg.dataset = Some(d.clone());
            }
            if let Some(s) = a.steps {
                cfg.pretrain.steps = s;
            }
            if let Some(lr) = a.lr {
                cfg.pretrain.lr = lr;
            }
            commands::pretrain(&cfg, a.common.force)
        }
        Command::Recon(a) => {
            let cfg = recon_config(&a)?;
            commands::recon(&cfg, a.common.force, commands::thread_count()?)
        }
        Command::PromptRobustness(a) => {
            let cfg = recon_config(&a.recon)?;
            commands::prompt_robustness(&cfg, a.recon.common.force, a.entry.as_deref(), commands::thread_count()?)
        }
        Command::Project(a) => {
            let cfg = base_config(&a.common)?;
            commands::project(&cfg, a.common.force, &a.trajectory, &a.priors, &a.level)
        }
        Command::Eval(a) => {
            let mut cfg = base_config(&a.common)?;
            if let Some(d) = &a.dataset {
                cfg.dataset = Some(d.clone());
            }
            if let Some(e) = &a.encoder {
                cfg.encoder = Some(e.clone());
            }
            commands::eval(&cfg, a.common.force, &a.recon, &a.method, &a.backbone)
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Validation(_) | Error::Dimension(_) | Error::State(_) => 1,
        Error::Divergence { .. } => 2,
        Error::Io { .. } | Error::Format { .. } => 3,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
