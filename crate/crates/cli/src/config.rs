//! `rd-run` configuration file (TOML).
//!
//! ```toml
//! corpus = "images"            # or a [synthetic] table
//! codecs = ["refcodec", "x264"]
//! rate_points = [0.1, 0.2, 0.3, 0.5]   # or qps = [22, 27, 32, 37]
//! output = "out"
//! workers = 4
//! seed = 0
//!
//! [[external_metrics]]
//! name = "lpips"
//! command = "python3 lpips_cli.py {a} {b}"
//!
//! [encoders.x264]
//! mode = "cqp"
//! encoder = "x264 ... --qp {qp} --output {out} {in}"
//! decoder = "ffmpeg -i {in} -f rawvideo -pix_fmt yuv420p {out}"
//! ```
//!
//! Relative paths are resolved against the config file's directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use recompress_core::condition::CodecId;
use recompress_core::extcodec::{CommandTemplate, EncoderSpec, ExtMode};
use recompress_core::ratecontrol::DEFAULT_TOLERANCE;
use serde::Deserialize;

use crate::corpus::SyntheticSpec;
use crate::error::{read_text, CliError};

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalMetric {
    pub name: String,
    pub command: String,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderOverride {
    #[serde(default = "default_mode")]
    pub mode: ExtMode,
    pub encoder: Option<String>,
    pub decoder: Option<String>,
    pub range: Option<(i64, i64)>,
}

fn default_mode() -> ExtMode {
    ExtMode::Cqp
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: Option<PathBuf>,
    pub synthetic: Option<SyntheticSpec>,
    pub codecs: Vec<String>,
    #[serde(default)]
    pub rate_points: Vec<f64>,
    /// Fixed encoder parameters (QP, or CRF for encoders in CRF mode).
    #[serde(default)]
    pub qps: Vec<i64>,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default)]
    pub external_metrics: Vec<ExternalMetric>,
    #[serde(default)]
    pub encoders: BTreeMap<String, EncoderOverride>,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    pub workers: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

fn default_tolerance() -> f64 {
    DEFAULT_TOLERANCE
}

fn default_output() -> PathBuf {
    PathBuf::from("rd-out")
}

/// One sweep point: a bpp target or a fixed encoder parameter.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RatePoint {
    Bpp(f64),
    Param(i64),
}

/// A codec entry resolved to either the built-in codec or an external spec.
#[derive(Clone, Debug)]
pub enum CodecEntry {
    Reference,
    External(Box<EncoderSpec>),
}

impl CodecEntry {
    pub fn name(&self) -> &'static str {
        match self {
            CodecEntry::Reference => CodecId::RefCodec.as_str(),
            CodecEntry::External(s) => s.codec.as_str(),
        }
    }
}

pub fn encoder_spec(codec: CodecId, ov: Option<&EncoderOverride>) -> Result<EncoderSpec, CliError> {
    let mode = ov.map_or(ExtMode::Cqp, |o| o.mode);
    let mut spec = match ov.and_then(|o| o.encoder.as_ref().zip(o.decoder.as_ref())) {
        Some((e, d)) => EncoderSpec::new(codec, mode, CommandTemplate::parse(e)?, CommandTemplate::parse(d)?)?,
        None => {
            if ov.is_some_and(|o| o.encoder.is_some() || o.decoder.is_some()) {
                return Err(CliError::Usage(format!("{codec}: give both encoder and decoder templates")));
            }
            EncoderSpec::default_for(codec, mode)?
        }
    };
    if let Some(r) = ov.and_then(|o| o.range) {
        spec.param_range = r;
        spec.validate()?;
    }
    Ok(spec)
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = read_text(path)?;
        let bad = |reason: String| CliError::Config {
            path: path.to_path_buf(),
            reason,
        };
        let mut cfg: RunConfig = toml::from_str(&text).map_err(|e| bad(e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(c) = &cfg.corpus {
            cfg.corpus = Some(base.join(c));
        }
        cfg.output = base.join(&cfg.output);
        cfg.validate().map_err(bad)?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), String> {
        match (&self.corpus, &self.synthetic) {
            (Some(_), Some(_)) => return Err("give either corpus or [synthetic], not both".into()),
            (None, None) => return Err("no corpus: set corpus or [synthetic]".into()),
            _ => {}
        }
        if self.codecs.is_empty() {
            return Err("codecs is empty".into());
        }
        match (self.rate_points.is_empty(), self.qps.is_empty()) {
            (true, true) => return Err("need at least one rate point (rate_points or qps)".into()),
            (false, false) => return Err("give either rate_points or qps, not both".into()),
            _ => {}
        }
        if let Some(b) = self.rate_points.iter().find(|b| !(b.is_finite() && **b > 0.0)) {
            return Err(format!("rate point {b} is not a positive bpp"));
        }
        if !(self.tolerance.is_finite() && self.tolerance >= 0.0) {
            return Err(format!("tolerance {} must be non-negative", self.tolerance));
        }
        if self.workers == Some(0) {
            return Err("workers must be >= 1".into());
        }
        let mut names = std::collections::HashSet::new();
        for m in &self.external_metrics {
            if ["psnr", "ssim", "mse", "status"].contains(&m.name.as_str()) || !names.insert(&m.name) {
                return Err(format!("duplicate metric column {:?}", m.name));
            }
        }
        Ok(())
    }

    pub fn points(&self) -> Vec<RatePoint> {
        if self.qps.is_empty() {
            self.rate_points.iter().map(|&b| RatePoint::Bpp(b)).collect()
        } else {
            self.qps.iter().map(|&q| RatePoint::Param(q)).collect()
        }
    }

    pub fn codec_entries(&self) -> Result<Vec<CodecEntry>, CliError> {
        self.codecs
            .iter()
            .map(|name| {
                let id: CodecId = name.parse().map_err(|e| CliError::Usage(format!("{e}")))?;
                Ok(match id {
                    CodecId::RefCodec => CodecEntry::Reference,
                    other => CodecEntry::External(Box::new(encoder_spec(other, self.encoders.get(name)).map_err(
                        |e| CliError::Usage(format!("codec {name}: {e}")),
                    )?)),
                })
            })
            .collect()
    }
}
