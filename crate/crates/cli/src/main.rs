//! recompress-bench: rate-distortion sweeps, BD statistics and
//! recompression-aware preprocessing from the command line.
//!
//! Exit codes: 0 success, 1 failure or partial failure, 2 usage or input
//! error.

mod cmd;
mod config;
mod corpus;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Parser, Subcommand};
use recompress_core::bdstats::Interp;
use recompress_core::condition::{CodecCondition, CodecId};
use recompress_core::extcodec::ProcessGate;
use recompress_core::optimizer::{OptimizeConfig, Supervision};
use recompress_core::proxy::Composition;
use recompress_core::ratecontrol::DEFAULT_TOLERANCE;

use crate::cmd::codec::{EncodeArgs, Rate};
use crate::corpus::SyntheticSpec;
use crate::error::CliError;

#[derive(Parser)]
#[command(name = "recompress-bench", version, about)]
struct Cli {
    /// Worker threads for image-level parallelism (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Seed for synthetic corpora.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Encode one image and print the achieved rate as a JSON line.
    #[command(group(ArgGroup::new("rate").required(true).args(["qp", "target_bpp", "crf"])))]
    Encode {
        #[arg(long, value_parser = cmd::codec::parse_codec, default_value = "refcodec")]
        codec: CodecId,
        #[arg(long)]
        qp: Option<i64>,
        #[arg(long)]
        target_bpp: Option<f64>,
        #[arg(long)]
        crf: Option<i64>,
        #[arg(long, default_value_t = DEFAULT_TOLERANCE)]
        tolerance: f64,
        /// Encoder command template for external codecs.
        #[arg(long)]
        encoder: Option<String>,
        /// Decoder command template for external codecs.
        #[arg(long)]
        decoder: Option<String>,
        input: PathBuf,
        /// Bitstream for refcodec, decoded PNG for external codecs.
        output: PathBuf,
    },
    /// Decode a reference-codec bitstream to PNG or PPM.
    Decode { input: PathBuf, output: PathBuf },
    /// Run an RD sweep described by a TOML config.
    RdRun {
        config: PathBuf,
        /// Overrides the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// BD-rate and BD-quality between two curves.
    Bdrate {
        /// RD CSV or inline `bpp:q,bpp:q,...`.
        #[arg(long)]
        anchor: String,
        #[arg(long)]
        test: String,
        #[arg(long, default_value = "psnr")]
        metric: String,
        /// Codec filter for RD CSV sources.
        #[arg(long)]
        codec: Option<String>,
        /// Codec filter for the test source when it differs from --codec.
        #[arg(long)]
        test_codec: Option<String>,
        #[arg(long, conflicts_with = "lower_is_better")]
        higher_is_better: bool,
        #[arg(long)]
        lower_is_better: bool,
        #[arg(long, default_value = "cubic")]
        interp: Interp,
        #[arg(long)]
        json: bool,
    },
    /// Two-sided paired t-test between two per-image columns.
    Ttest {
        a: String,
        b: String,
        #[arg(long, default_value = "psnr")]
        metric: String,
        #[arg(long)]
        codec: Option<String>,
        #[arg(long)]
        target_bpp: Option<f64>,
        #[arg(long)]
        json: bool,
    },
    /// Optimize preprocessing for every image in a corpus.
    #[command(group(ArgGroup::new("source").required(true).args(["corpus", "synthetic"])))]
    Optimize {
        corpus: Option<PathBuf>,
        /// Use N seeded synthetic images instead of a directory.
        #[arg(long)]
        synthetic: Option<usize>,
        #[arg(long, default_value = "64x64", value_parser = corpus::parse_size)]
        size: (usize, usize),
        #[arg(long)]
        gray: bool,
        #[arg(long)]
        target_bpp: f64,
        #[arg(long, default_value = "noste")]
        mode: Composition,
        #[arg(long, default_value = "slight")]
        supervision: Supervision,
        #[arg(long, default_value_t = 200)]
        steps: usize,
        #[arg(long, default_value_t = 0.05)]
        step_size: f64,
        #[arg(long, default_value_t = 10)]
        re_solve_every: usize,
        #[arg(long, default_value = "optimize-out")]
        out: PathBuf,
        /// Skip the STE / supervision ablation rows.
        #[arg(long)]
        no_ablation: bool,
    },
    /// Print one metric between two images (psnr, ssim, mse).
    Metric {
        #[arg(long)]
        name: String,
        a: PathBuf,
        b: PathBuf,
    },
    /// Write a seeded synthetic corpus as PNGs.
    Synth {
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        count: usize,
        #[arg(long, default_value = "64x64", value_parser = corpus::parse_size)]
        size: (usize, usize),
        #[arg(long)]
        gray: bool,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let workers = cli.workers.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if workers == 0 {
        return Err(CliError::Usage("--workers must be >= 1".into()));
    }
    match cli.command {
        Command::Encode {
            codec,
            qp,
            target_bpp,
            crf,
            tolerance,
            encoder,
            decoder,
            input,
            output,
        } => {
            let rate = match (qp, target_bpp, crf) {
                (Some(q), _, _) => Rate::Qp(q),
                (_, Some(b), _) => Rate::TargetBpp(b),
                (_, _, Some(c)) => Rate::Crf(c),
                _ => unreachable!("clap enforces one rate argument"),
            };
            cmd::codec::encode_cmd(&EncodeArgs {
                codec,
                rate,
                tolerance,
                encoder,
                decoder,
                input,
                output,
            })
        }
        Command::Decode { input, output } => cmd::codec::decode_cmd(&input, &output),
        Command::RdRun { config, out } => {
            let cfg = config::RunConfig::load(&config)?;
            let workers = cli.workers.or(cfg.workers).unwrap_or(workers);
            with_pool(workers, || cmd::rd::run(&cfg, out.as_deref()))
        }
        Command::Bdrate {
            anchor,
            test,
            metric,
            codec,
            test_codec,
            higher_is_better,
            lower_is_better,
            interp,
            json,
        } => cmd::stats::bdrate_cmd(&cmd::stats::BdArgs {
            anchor,
            test,
            metric,
            codec,
            test_codec,
            higher_is_better: match (higher_is_better, lower_is_better) {
                (true, _) => Some(true),
                (_, true) => Some(false),
                _ => None,
            },
            interp,
            json,
        }),
        Command::Ttest {
            a,
            b,
            metric,
            codec,
            target_bpp,
            json,
        } => cmd::stats::ttest_cmd(&cmd::stats::TTestArgs {
            a,
            b,
            metric,
            codec,
            target_bpp,
            json,
        }),
        Command::Optimize {
            corpus: dir,
            synthetic,
            size,
            gray,
            target_bpp,
            mode,
            supervision,
            steps,
            step_size,
            re_solve_every,
            out,
            no_ablation,
        } => {
            let target = CodecCondition::target_bpp(CodecId::RefCodec, target_bpp)
                .map_err(|e| CliError::Usage(e.to_string()))?;
            let mut config = OptimizeConfig::new(target);
            config.mode = mode;
            config.supervision = supervision;
            config.steps = steps;
            config.step_size = step_size;
            config.re_solve_qp_every = re_solve_every;
            let images = match (dir, synthetic) {
                (Some(d), _) => corpus::load_dir(&d)?,
                (None, Some(count)) => corpus::synthetic(
                    &SyntheticSpec {
                        count,
                        width: size.0,
                        height: size.1,
                        gray,
                    },
                    cli.seed,
                )?,
                (None, None) => unreachable!("clap enforces a corpus source"),
            };
            let args = cmd::optimize::OptimizeArgs {
                config,
                out,
                ablation: !no_ablation,
            };
            with_pool(workers, || cmd::optimize::run(&images, &args))
        }
        Command::Metric { name, a, b } => cmd::codec::metric_cmd(&name, &a, &b),
        Command::Synth { out, count, size, gray } => cmd::codec::synth_cmd(
            &out,
            &SyntheticSpec {
                count,
                width: size.0,
                height: size.1,
                gray,
            },
            cli.seed,
        ),
    }
}

fn with_pool<T: Send>(workers: usize, f: impl FnOnce() -> Result<T, CliError> + Send) -> Result<T, CliError> {
    ProcessGate::global().set_limit(workers);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start {workers} workers: {e}")))?;
    pool.install(f)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
