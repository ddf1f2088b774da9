//! `encode`, `decode`, `metric` and `synth`.

use std::path::{Path, PathBuf};

use recompress_core::condition::{CodecCondition, CodecId};
use recompress_core::extcodec::{run_encoder, solve_external, CommandTemplate, EncoderSpec, ExtMode};
use recompress_core::metrics;
use recompress_core::pixel::{load_image, rgb_to_ycbcr420, save_image, ycbcr420_to_rgb};
use recompress_core::ratecontrol::{solve_qp, RateStatus};
use recompress_core::refcodec::{decode, encode, Bitstream, QuantParam};
use serde::Serialize;

use crate::corpus::{self, SyntheticSpec};
use crate::error::CliError;

#[derive(Clone, Copy, Debug)]
pub enum Rate {
    Qp(i64),
    TargetBpp(f64),
    Crf(i64),
}

pub struct EncodeArgs {
    pub codec: CodecId,
    pub rate: Rate,
    pub tolerance: f64,
    pub encoder: Option<String>,
    pub decoder: Option<String>,
    pub input: PathBuf,
    pub output: PathBuf,
}

#[derive(Serialize)]
struct EncodeReport {
    codec: CodecId,
    width: usize,
    height: usize,
    param: i64,
    bits: u64,
    bpp: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    target_bpp: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    status: Option<RateStatus>,
    /// Condition to use downstream; CRF runs turn into their measured bpp.
    condition: CodecCondition,
    #[serde(skip_serializing_if = "Option::is_none")]
    command: Option<String>,
}

fn external_spec(args: &EncodeArgs, mode: ExtMode) -> Result<EncoderSpec, CliError> {
    match (&args.encoder, &args.decoder) {
        (None, None) => Ok(EncoderSpec::default_for(args.codec, mode)?),
        (Some(e), Some(d)) => Ok(EncoderSpec::new(
            args.codec,
            mode,
            CommandTemplate::parse(e)?,
            CommandTemplate::parse(d)?,
        )?),
        _ => Err(CliError::Usage("--encoder and --decoder must be given together".into())),
    }
}

pub fn encode_cmd(args: &EncodeArgs) -> Result<(), CliError> {
    let img = load_image(&args.input)?;
    let (w, h) = img.original_size();
    let area = img.original_area() as f64;
    let report = if args.codec == CodecId::RefCodec {
        let (qp, status) = match args.rate {
            Rate::Qp(q) => (QuantParam::new(q)?, None),
            Rate::TargetBpp(b) => {
                let r = solve_qp(&img, b, args.tolerance)?;
                (r.qp(), Some(r.status))
            }
            Rate::Crf(_) => return Err(CliError::Usage("refcodec has no CRF mode; use --qp or --target-bpp".into())),
        };
        let bs = encode(&rgb_to_ycbcr420(&img)?, qp)?;
        std::fs::write(&args.output, bs.as_bytes())?;
        let bpp = bs.bit_count() as f64 / area;
        EncodeReport {
            codec: args.codec,
            width: w,
            height: h,
            param: qp.value().into(),
            bits: bs.bit_count(),
            bpp,
            target_bpp: match args.rate {
                Rate::TargetBpp(b) => Some(b),
                _ => None,
            },
            status,
            condition: match args.rate {
                Rate::TargetBpp(b) => CodecCondition::target_bpp(args.codec, b).map_err(|e| CliError::Usage(e.to_string()))?,
                _ => CodecCondition::fixed_qp(args.codec, qp.value().into()),
            },
            command: None,
        }
    } else {
        let mode = match args.rate {
            Rate::Crf(_) => ExtMode::Crf,
            _ => ExtMode::Cqp,
        };
        let spec = external_spec(args, mode)?;
        let (param, status) = match args.rate {
            Rate::Qp(q) | Rate::Crf(q) => (q, None),
            Rate::TargetBpp(b) => {
                let r = solve_external(&spec, &img, b, args.tolerance)?;
                (r.param, Some(r.status))
            }
        };
        let r = run_encoder(&spec, &img, param)?;
        save_image(&r.decoded, &args.output)?;
        let bpp = r.bpp();
        let condition = match args.rate {
            Rate::Qp(q) => CodecCondition::fixed_qp(args.codec, q),
            Rate::TargetBpp(b) => CodecCondition::target_bpp(args.codec, b).map_err(|e| CliError::Usage(e.to_string()))?,
            Rate::Crf(c) => CodecCondition::crf(args.codec, c)
                .with_measured_bpp(bpp)
                .map_err(|e| CliError::Usage(e.to_string()))?,
        };
        EncodeReport {
            codec: args.codec,
            width: w,
            height: h,
            param,
            bits: r.bits,
            bpp,
            target_bpp: match args.rate {
                Rate::TargetBpp(b) => Some(b),
                _ => None,
            },
            status,
            condition,
            command: Some(r.command_line),
        }
    };
    println!("{}", serde_json::to_string(&report)?);
    Ok(())
}

#[derive(Serialize)]
struct DecodeReport {
    width: usize,
    height: usize,
    qp: u8,
    bits: u64,
    bpp: f64,
}

pub fn decode_cmd(input: &Path, output: &Path) -> Result<(), CliError> {
    let bytes = std::fs::read(input).map_err(|source| CliError::Input {
        path: input.to_path_buf(),
        source,
    })?;
    let bs = Bitstream::from_bytes(bytes)?;
    let img = ycbcr420_to_rgb(&decode(&bs)?)?;
    save_image(&img, output)?;
    let report = DecodeReport {
        width: bs.width(),
        height: bs.height(),
        qp: bs.qp().value(),
        bits: bs.bit_count(),
        bpp: bs.bpp(),
    };
    println!("{}", serde_json::to_string(&report)?);
    Ok(())
}

/// Print one metric value, in the format external metric templates expect.
pub fn metric_cmd(name: &str, a: &Path, b: &Path) -> Result<(), CliError> {
    let (ia, ib) = (load_image(a)?, load_image(b)?);
    let v = match name.to_ascii_lowercase().as_str() {
        "psnr" => metrics::psnr(&ia, &ib)?,
        "ssim" => metrics::ssim(&ia, &ib)?,
        "mse" => metrics::mse(&ia, &ib)?,
        other => return Err(CliError::Usage(format!("unknown metric {other:?} (psnr, ssim, mse)"))),
    };
    println!("{v}");
    Ok(())
}

pub fn synth_cmd(out: &Path, spec: &SyntheticSpec, seed: u64) -> Result<(), CliError> {
    std::fs::create_dir_all(out)?;
    for img in corpus::synthetic(spec, seed)? {
        save_image(&img.image, out.join(format!("{}.png", img.id)))?;
    }
    println!("wrote {} images to {}", spec.count, out.display());
    Ok(())
}

pub fn parse_codec(s: &str) -> Result<CodecId, String> {
    s.parse().map_err(|e: recompress_core::condition::ConditionError| e.to_string())
}

