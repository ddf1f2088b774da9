//! Subprocess drivers for external encoders and external metrics.
//!
//! Each invocation gets a fresh private directory under
//! `$RECOMPRESS_BENCH_TMP` (or the system temp dir). The directory is removed
//! on success and kept, with its path logged, on failure.

use std::env;
use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::{Condvar, Mutex, OnceLock};

use serde::{Deserialize, Serialize};
use tempfile::TempDir;
use thiserror::Error;

use crate::condition::CodecId;
use crate::pixel::{
    rgb_to_ycbcr420, save_image, ycbcr420_to_rgb, ColorSpace, PixelError, PlanarImage,
};
use crate::ratecontrol::{solve_param, RateError, RateSolveResult, SearchStrategy, SolveOptions};

pub const TMP_ENV: &str = "RECOMPRESS_BENCH_TMP";

#[derive(Debug, Error)]
pub enum ExtError {
    #[error("invalid template: {0}")]
    InvalidTemplate(String),
    #[error("failed to spawn {program}: {source}")]
    Spawn {
        program: String,
        #[source]
        source: io::Error,
    },
    #[error("{command} exited with {status}\n{log}")]
    NonZeroExit {
        command: String,
        status: String,
        log: String,
    },
    #[error("expected 1 output frame, got {frames}")]
    FrameCount { frames: String },
    #[error("decoded size {found} bytes does not match a {width}x{height} frame ({expected} bytes)")]
    DimensionMismatch {
        width: usize,
        height: usize,
        expected: usize,
        found: usize,
    },
    #[error("encoder produced an empty bitstream")]
    EmptyBitstream,
    #[error("metric printed non-numeric output {0:?}")]
    NonNumeric(String),
    #[error("{mode} mode is not supported by {codec}")]
    UnsupportedMode { codec: CodecId, mode: ExtMode },
    #[error("{source} (temp dir kept at {})", dir.display())]
    Retained {
        dir: PathBuf,
        #[source]
        source: Box<ExtError>,
    },
    #[error(transparent)]
    Pixel(#[from] PixelError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl ExtError {
    /// The underlying error, looking through a retained-dir wrapper.
    pub fn root(&self) -> &ExtError {
        match self {
            ExtError::Retained { source, .. } => source.root(),
            other => other,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExtMode {
    Cqp,
    Crf,
}

impl fmt::Display for ExtMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExtMode::Cqp => "cqp",
            ExtMode::Crf => "crf",
        })
    }
}

impl ExtMode {
    fn placeholder(self) -> &'static str {
        match self {
            ExtMode::Cqp => "{qp}",
            ExtMode::Crf => "{crf}",
        }
    }
}

/// A program plus argument tokens with `{name}` placeholders.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommandTemplate {
    pub program: String,
    pub args: Vec<String>,
}

impl CommandTemplate {
    /// Split on whitespace; the first token is the program.
    pub fn parse(s: &str) -> Result<Self, ExtError> {
        let mut it = s.split_whitespace().map(str::to_string);
        let program = it
            .next()
            .ok_or_else(|| ExtError::InvalidTemplate("empty command".into()))?;
        Ok(CommandTemplate {
            program,
            args: it.collect(),
        })
    }

    pub fn mentions(&self, placeholder: &str) -> bool {
        self.args.iter().any(|a| a.contains(placeholder))
    }

    fn require(&self, what: &str, names: &[&str]) -> Result<(), ExtError> {
        for n in names {
            if !self.mentions(n) {
                return Err(ExtError::InvalidTemplate(format!("{what} template lacks {n}")));
            }
        }
        Ok(())
    }

    fn render(&self, vars: &[(&str, String)]) -> Vec<String> {
        self.args
            .iter()
            .map(|a| {
                let mut s = a.clone();
                for (k, v) in vars {
                    s = s.replace(k, v);
                }
                s
            })
            .collect()
    }
}

impl fmt::Display for CommandTemplate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.program)?;
        for a in &self.args {
            write!(f, " {a}")?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub codec: CodecId,
    pub mode: ExtMode,
    /// Placeholders: `{qp}` or `{crf}`, `{w}`, `{h}`, `{in}`, `{out}`.
    pub encoder: CommandTemplate,
    /// Placeholders: `{in}` (bitstream), `{out}` (raw YUV), optional `{w}`, `{h}`.
    pub decoder: CommandTemplate,
    /// Extension given to the bitstream file.
    pub bitstream_ext: String,
    /// Inclusive parameter range searched by rate control.
    pub param_range: (i64, i64),
}

impl EncoderSpec {
    pub fn new(
        codec: CodecId,
        mode: ExtMode,
        encoder: CommandTemplate,
        decoder: CommandTemplate,
    ) -> Result<Self, ExtError> {
        let param_range = match codec {
            CodecId::Vvenc => (0, 63),
            _ => (0, 51),
        };
        let spec = EncoderSpec {
            codec,
            mode,
            encoder,
            decoder,
            bitstream_ext: "bin".into(),
            param_range,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), ExtError> {
        self.encoder
            .require("encoder", &[self.mode.placeholder(), "{w}", "{h}", "{in}", "{out}"])?;
        self.decoder.require("decoder", &["{in}", "{out}"])?;
        if self.param_range.0 > self.param_range.1 {
            return Err(ExtError::InvalidTemplate("empty parameter range".into()));
        }
        Ok(())
    }

    /// Documented default command lines: one picture, no B frames, full range,
    /// 8-bit 4:2:0 raw input. Decoding of x264/x265 output goes through ffmpeg.
    pub fn default_for(codec: CodecId, mode: ExtMode) -> Result<Self, ExtError> {
        let ffmpeg = "ffmpeg -loglevel error -y -i {in} -f rawvideo -pix_fmt yuv420p {out}";
        let rate = match mode {
            ExtMode::Cqp => "--qp {qp}",
            ExtMode::Crf => "--crf {crf}",
        };
        let (enc, dec, ext) = match (codec, mode) {
            (CodecId::X264, _) => (
                format!(
                    "x264 --input-res {{w}}x{{h}} --input-csp i420 --frames 1 --bframes 0 \
                     --keyint 1 --input-range pc --range pc {rate} --output {{out}} {{in}}"
                ),
                ffmpeg,
                "264",
            ),
            (CodecId::X265, _) => (
                format!(
                    "x265 --input {{in}} --input-res {{w}}x{{h}} --input-csp i420 --fps 1 \
                     --frames 1 --bframes 0 --keyint 1 --range full {rate} --output {{out}}"
                ),
                ffmpeg,
                "265",
            ),
            (CodecId::Vvenc, ExtMode::Cqp) => (
                "vvencapp -i {in} -s {w}x{h} -c yuv420 -r 1 -f 1 --qp {qp} -o {out}".to_string(),
                "vvdecapp -b {in} -o {out}",
                "266",
            ),
            (codec, mode) => return Err(ExtError::UnsupportedMode { codec, mode }),
        };
        let mut spec = EncoderSpec::new(
            codec,
            mode,
            CommandTemplate::parse(&enc)?,
            CommandTemplate::parse(dec)?,
        )?;
        spec.bitstream_ext = ext.into();
        Ok(spec)
    }
}

#[derive(Clone, Debug)]
pub struct ExternalResult {
    /// Decoded RGB image carrying the input's original size.
    pub decoded: PlanarImage,
    /// The decoded 8-bit 4:2:0 frame before colour conversion.
    pub decoded_yuv: PlanarImage,
    /// Bitstream file size in bits.
    pub bits: u64,
    pub encoder_log: String,
    /// Full encoder command line as run.
    pub command_line: String,
}

impl ExternalResult {
    /// Rate against the original (unpadded) luma area.
    pub fn bpp(&self) -> f64 {
        self.bits as f64 / self.decoded.original_area() as f64
    }
}

/// Counting semaphore bounding simultaneous external processes.
pub struct ProcessGate {
    limit: Mutex<(usize, usize)>,
    cv: Condvar,
}

pub struct GatePermit<'a>(&'a ProcessGate);

impl ProcessGate {
    pub fn new(limit: usize) -> Self {
        ProcessGate {
            limit: Mutex::new((limit.max(1), 0)),
            cv: Condvar::new(),
        }
    }

    /// Process-wide gate, sized to the CPU count.
    pub fn global() -> &'static ProcessGate {
        static GATE: OnceLock<ProcessGate> = OnceLock::new();
        GATE.get_or_init(|| {
            ProcessGate::new(std::thread::available_parallelism().map_or(1, |n| n.get()))
        })
    }

    pub fn set_limit(&self, limit: usize) {
        self.limit.lock().unwrap().0 = limit.max(1);
        self.cv.notify_all();
    }

    pub fn acquire(&self) -> GatePermit<'_> {
        let mut g = self.limit.lock().unwrap();
        while g.1 >= g.0 {
            g = self.cv.wait(g).unwrap();
        }
        g.1 += 1;
        GatePermit(self)
    }

    pub fn in_use(&self) -> usize {
        self.limit.lock().unwrap().1
    }
}

impl Drop for GatePermit<'_> {
    fn drop(&mut self) {
        self.0.limit.lock().unwrap().1 -= 1;
        self.0.cv.notify_one();
    }
}

/// Find `program` on PATH (or check it directly when it contains a slash).
pub fn resolve_program(program: &str) -> Result<PathBuf, ExtError> {
    let missing = || ExtError::Spawn {
        program: program.to_string(),
        source: io::Error::new(io::ErrorKind::NotFound, "executable not found"),
    };
    if program.contains('/') {
        let p = PathBuf::from(program);
        return if p.is_file() { Ok(p) } else { Err(missing()) };
    }
    env::var_os("PATH")
        .into_iter()
        .flat_map(|paths| env::split_paths(&paths).collect::<Vec<_>>())
        .map(|d| d.join(program))
        .find(|p| p.is_file())
        .ok_or_else(missing)
}

fn private_dir() -> io::Result<TempDir> {
    let root = env::var_os(TMP_ENV).map_or_else(env::temp_dir, PathBuf::from);
    fs::create_dir_all(&root)?;
    tempfile::Builder::new().prefix("recompress-").tempdir_in(root)
}

/// Run `f` inside a fresh temp dir; keep the dir if `f` fails.
fn with_private_dir<T>(f: impl FnOnce(&Path) -> Result<T, ExtError>) -> Result<T, ExtError> {
    let dir = private_dir()?;
    match f(dir.path()) {
        Ok(v) => Ok(v),
        Err(e) => {
            let kept = dir.keep();
            log::warn!("external run failed; temp dir kept at {}", kept.display());
            Err(ExtError::Retained {
                dir: kept,
                source: Box::new(e),
            })
        }
    }
}

fn run(program: &str, args: &[String]) -> Result<(String, Output), ExtError> {
    let line = std::iter::once(program.to_string())
        .chain(args.iter().cloned())
        .collect::<Vec<_>>()
        .join(" ");
    log::info!("running: {line}");
    let out = {
        let _permit = ProcessGate::global().acquire();
        Command::new(program)
            .args(args)
            .output()
            .map_err(|source| ExtError::Spawn {
                program: program.to_string(),
                source,
            })?
    };
    if !out.status.success() {
        return Err(ExtError::NonZeroExit {
            command: line,
            status: out.status.to_string(),
            log: combined_log(&out),
        });
    }
    Ok((line, out))
}

fn combined_log(out: &Output) -> String {
    let mut s = String::from_utf8_lossy(&out.stdout).into_owned();
    s.push_str(&String::from_utf8_lossy(&out.stderr));
    s
}

/// Encode one picture with `param` (QP or CRF), decode it, and measure bits.
pub fn run_encoder(spec: &EncoderSpec, img: &PlanarImage, param: i64) -> Result<ExternalResult, ExtError> {
    spec.validate()?;
    resolve_program(&spec.encoder.program)?;
    resolve_program(&spec.decoder.program)?;
    let yuv = match img.colorspace() {
        ColorSpace::Rgb => rgb_to_ycbcr420(img)?,
        ColorSpace::YCbCr420 => img.clone(),
    };
    let (w, h) = (yuv.width(), yuv.height());
    let (ow, oh) = img.original_size();
    with_private_dir(|dir| {
        let input = dir.join("input.yuv");
        let stream = dir.join(format!("stream.{}", spec.bitstream_ext));
        let recon = dir.join("recon.yuv");
        fs::write(&input, yuv.to_yuv420_bytes()?)?;
        let vars = |i: &Path, o: &Path| {
            vec![
                ("{qp}", param.to_string()),
                ("{crf}", param.to_string()),
                ("{w}", w.to_string()),
                ("{h}", h.to_string()),
                ("{in}", i.display().to_string()),
                ("{out}", o.display().to_string()),
            ]
        };
        let (command_line, enc_out) =
            run(&spec.encoder.program, &spec.encoder.render(&vars(&input, &stream)))?;
        let bits = fs::metadata(&stream)?.len() * 8;
        if bits == 0 {
            return Err(ExtError::EmptyBitstream);
        }
        let (_, dec_out) = run(&spec.decoder.program, &spec.decoder.render(&vars(&stream, &recon)))?;
        let bytes = fs::read(&recon)?;
        let frame = w * h + 2 * (w / 2) * (h / 2);
        if bytes.len() != frame {
            return Err(if bytes.len() % frame == 0 {
                ExtError::FrameCount {
                    frames: (bytes.len() / frame).to_string(),
                }
            } else {
                ExtError::DimensionMismatch {
                    width: w,
                    height: h,
                    expected: frame,
                    found: bytes.len(),
                }
            });
        }
        let decoded_yuv = PlanarImage::from_yuv420_bytes(w, h, &bytes)?.with_original_size(ow, oh)?;
        let decoded = ycbcr420_to_rgb(&decoded_yuv)?;
        let mut encoder_log = combined_log(&enc_out);
        encoder_log.push_str(&combined_log(&dec_out));
        Ok(ExternalResult {
            decoded,
            decoded_yuv,
            bits,
            encoder_log,
            command_line,
        })
    })
}

/// Rate-match an external encoder with the bracketed (non-monotone) search.
pub fn solve_external(
    spec: &EncoderSpec,
    img: &PlanarImage,
    target_bpp: f64,
    tolerance: f64,
) -> Result<RateSolveResult, RateError> {
    let opts = SolveOptions {
        tolerance,
        range: spec.param_range.0..=spec.param_range.1,
        strategy: SearchStrategy::Bracketed,
    };
    solve_param(
        img.original_area(),
        |p| run_encoder(spec, img, p).map(|r| r.bits),
        target_bpp,
        &opts,
    )
}

/// Run an external metric on two images. The template receives the two PNG
/// paths as `{a}` and `{b}` and must print a single number on stdout.
pub fn run_external_metric(
    template: &CommandTemplate,
    a: &PlanarImage,
    b: &PlanarImage,
) -> Result<f64, ExtError> {
    template.require("metric", &["{a}", "{b}"])?;
    resolve_program(&template.program)?;
    with_private_dir(|dir| {
        let pa = dir.join("a.png");
        let pb = dir.join("b.png");
        save_image(a, &pa)?;
        save_image(b, &pb)?;
        let args = template.render(&[
            ("{a}", pa.display().to_string()),
            ("{b}", pb.display().to_string()),
        ]);
        let (_, out) = run(&template.program, &args)?;
        let text = String::from_utf8_lossy(&out.stdout);
        let t = text.trim();
        t.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| ExtError::NonNumeric(t.to_string()))
    })
}
