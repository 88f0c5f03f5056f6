//! The `dilate` command line.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or format error, 3 a check
//! (`gradcheck`) failed. Messages go to standard error.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::fs;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::context::{build_context, init_identity_basic, init_identity_general, ContextConfig, Variant};
use crate::data::{generate, read_dataset, read_image, write_dataset, write_labels, ShapesSceneConfig};
use crate::error::Error;
use crate::gradcheck;
use crate::model::{attach_context, evaluate, predict};
use crate::netgraph::{receptive_field, rewrite_dense, NetworkSpec, NetworkWeights, RewriteMode};
use crate::train::{loss_csv, parse_stages, train, TrainConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_CHECK: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "dilate", version, about = "Dense prediction with dilated convolutions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum InitKind {
    Identity,
    IdentityNoise,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum VariantArg {
    Basic,
    Large,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Remove,
    Unstride,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print the receptive field after every layer.
    Rf { net: PathBuf },

    /// Write a context module (optionally behind a front end) and its weights.
    Build {
        #[arg(short = 'C', long = "classes")]
        classes: usize,
        #[arg(long, value_enum, default_value = "basic")]
        variant: VariantArg,
        #[arg(long, default_value_t = 8)]
        depth: usize,
        #[arg(long, value_enum, default_value = "identity")]
        init: InitKind,
        /// Noise standard deviation relative to the identity value.
        #[arg(long, default_value_t = 0.01)]
        sigma_scale: f64,
        /// Required whenever anything is drawn at random.
        #[arg(long)]
        seed: Option<u64>,
        /// Net spec of a front end to place before the module.
        #[arg(long)]
        front_end: Option<PathBuf>,
        #[arg(long)]
        net_out: PathBuf,
        #[arg(long)]
        weights_out: PathBuf,
    },

    /// Turn pooling/striding layers into dilation in the layers after them.
    Rewrite {
        net: PathBuf,
        /// Comma-separated layer indices of pooling layers.
        #[arg(long, default_value = "")]
        ablate: String,
        #[arg(long, value_enum, default_value = "remove")]
        mode: ModeArg,
        #[arg(long)]
        out: PathBuf,
    },

    /// Train with SGD; writes final weights and an `iter,loss` CSV.
    Train {
        #[arg(long)]
        net: PathBuf,
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// File of `stage.N.*` keys replacing the config's stages.
        #[arg(long)]
        stages: Option<PathBuf>,
        /// Overrides the config's `seed`.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        weights_out: PathBuf,
        #[arg(long)]
        loss_out: PathBuf,
    },

    /// Per-class and mean IoU over a dataset directory.
    Eval {
        #[arg(long)]
        net: PathBuf,
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        csv: Option<PathBuf>,
    },

    /// Predict a label map (PGM) for one PPM image.
    Infer {
        #[arg(long)]
        net: PathBuf,
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },

    /// Finite-difference gradient checks; exits 3 if any case fails.
    Gradcheck {
        /// Also check this network.
        #[arg(long)]
        net: Option<PathBuf>,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 10)]
        seeds: u64,
    },

    /// Write a synthetic dataset directory.
    GenData {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        count: usize,
        #[arg(long)]
        seed: u64,
    },
}

enum Failure {
    Usage(String),
    Lib(Error),
    Check,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

type CmdResult = std::result::Result<(), Failure>;

fn with_path(path: &Path, e: io::Error) -> Error {
    Error::Io(io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

fn read_text(path: &Path) -> Result<String, Error> {
    fs::read_to_string(path).map_err(|e| with_path(path, e))
}

fn read_net(path: &Path) -> Result<NetworkSpec, Error> {
    read_text(path)?.parse()
}

fn read_weights(path: &Path, net: &NetworkSpec) -> Result<NetworkWeights<f32>, Error> {
    let file = fs::File::open(path).map_err(|e| Error::Io(io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    let w = NetworkWeights::read_from(BufReader::new(file))?;
    w.check_against(net).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    Ok(w)
}

fn write_weights(path: &Path, w: &NetworkWeights<f32>) -> Result<(), Error> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    w.write_to(&mut out)?;
    out.flush()?;
    Ok(())
}

fn need_seed(seed: Option<u64>, why: &str) -> Result<u64, Failure> {
    seed.ok_or_else(|| Failure::Usage(format!("--seed is required {why}")))
}

fn run_command(cmd: Command, out: &mut dyn Write) -> CmdResult {
    match cmd {
        Command::Rf { net } => {
            let net = read_net(&net)?;
            write!(out, "{}", receptive_field(&net)).map_err(Error::from)?;
        }
        Command::Build {
            classes,
            variant,
            depth,
            init,
            sigma_scale,
            seed,
            front_end,
            net_out,
            weights_out,
        } => {
            let variant = match variant {
                VariantArg::Basic => Variant::Basic,
                VariantArg::Large => Variant::Large,
            };
            let cfg = ContextConfig {
                variant,
                ..ContextConfig::basic(classes).with_depth(depth)
            };
            let ctx = build_context(&cfg)?;
            let ctx_w = match (init, variant) {
                (InitKind::Identity, Variant::Basic) => init_identity_basic(&ctx, classes)?,
                (InitKind::Identity, Variant::Large) => init_identity_general(&ctx, classes, 0.0, 0)?,
                (InitKind::IdentityNoise, _) => {
                    let seed = need_seed(seed, "with --init identity-noise")?;
                    init_identity_general(&ctx, classes, sigma_scale, seed)?
                }
            };
            let (net, w) = match front_end {
                None => (ctx, ctx_w),
                Some(path) => {
                    let front = read_net(&path)?;
                    let seed = need_seed(seed, "with --front-end")?;
                    let fw = NetworkWeights::random_fan_in(&front, seed)?;
                    attach_context(&front, &fw, &ctx, &ctx_w)?
                }
            };
            fs::write(&net_out, net.to_string()).map_err(Error::from)?;
            write_weights(&weights_out, &w)?;
        }
        Command::Rewrite { net, ablate, mode, out: dest } => {
            let ablate: BTreeSet<usize> = ablate
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| s.parse().map_err(|_| Failure::Usage(format!("bad layer index `{s}`"))))
                .collect::<Result<_, _>>()?;
            if ablate.is_empty() {
                fs::copy(&net, &dest).map_err(Error::from)?;
            } else {
                let spec = read_net(&net)?;
                let mode = match mode {
                    ModeArg::Remove => RewriteMode::RemovePool,
                    ModeArg::Unstride => RewriteMode::KeepPoolUnstride,
                };
                fs::write(&dest, rewrite_dense(&spec, &ablate, mode)?.to_string()).map_err(Error::from)?;
            }
        }
        Command::Train {
            net,
            weights,
            data,
            config,
            stages,
            seed,
            weights_out,
            loss_out,
        } => {
            let spec = read_net(&net)?;
            let w = read_weights(&weights, &spec)?;
            let mut cfg = TrainConfig::from_kv_text(&read_text(&config)?)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(path) = stages {
                cfg.stages = parse_stages(&read_text(&path)?, cfg.seed)?;
            }
            let samples = read_dataset(&data)?;
            let mut sampler = cfg.sampler()?;
            let outcome = train(&spec, w, &samples, &cfg.plan(), &mut sampler)?;
            write_weights(&weights_out, &outcome.weights)?;
            fs::write(&loss_out, loss_csv(&outcome.loss_history)).map_err(Error::from)?;
            if let Some(last) = outcome.loss_history.last() {
                writeln!(out, "{} iterations, final loss {last:.6}", outcome.loss_history.len()).map_err(Error::from)?;
            }
        }
        Command::Eval { net, weights, data, csv } => {
            let spec = read_net(&net)?;
            let w = read_weights(&weights, &spec)?;
            let report = evaluate(&spec, &w, &read_dataset(&data)?)?.mean_iou();
            write!(out, "{report}").map_err(Error::from)?;
            if let Some(path) = csv {
                fs::write(path, report.to_csv()).map_err(Error::from)?;
            }
        }
        Command::Infer { net, weights, image, out: dest } => {
            let spec = read_net(&net)?;
            let w = read_weights(&weights, &spec)?;
            let labels = predict(&spec, &w, &read_image(&image).map_err(|e| match e {
                Error::Io(io) => with_path(&image, io),
                other => other,
            })?)?;
            write_labels(&dest, &labels)?;
        }
        Command::Gradcheck { net, seed, seeds } => {
            let extra = net.as_deref().map(read_net).transpose()?;
            let cases = gradcheck::standard_suite(seed, seeds, extra.as_ref())?;
            let mut ok = true;
            for case in &cases {
                writeln!(out, "{case}").map_err(Error::from)?;
                ok &= case.passed();
            }
            if !ok {
                return Err(Failure::Check);
            }
        }
        Command::GenData { config, out: dest, count, seed } => {
            let mut cfg = match config {
                Some(path) => ShapesSceneConfig::from_kv_text(&read_text(&path)?)?,
                None => ShapesSceneConfig::default(),
            };
            cfg.seed = seed;
            write_dataset(&dest, &generate(&cfg, count)?)?;
        }
    }
    Ok(())
}

/// Parse `args` (program name first) and run; returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() { write!(err, "{text}") } else { write!(out, "{text}") };
            return code;
        }
    };
    match run_command(cli.command, out) {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(m)) => {
            let _ = writeln!(err, "error: {m}");
            EXIT_USAGE
        }
        Err(Failure::Check) => {
            let _ = writeln!(err, "error: gradient check failed");
            EXIT_CHECK
        }
        Err(Failure::Lib(e)) => {
            let _ = writeln!(err, "error: {e}");
            match e {
                Error::Argument(_) => EXIT_USAGE,
                _ => EXIT_DATA,
            }
        }
    }
}
