//! The codec condition: which codec, and how its rate is controlled.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConditionError {
    #[error("unknown codec id {0:?}")]
    UnknownCodec(String),
    #[error("target bpp must be positive and finite, got {0}")]
    InvalidBpp(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CodecId {
    #[serde(rename = "refcodec")]
    RefCodec,
    X264,
    X265,
    Vvenc,
}

impl CodecId {
    pub fn as_str(self) -> &'static str {
        match self {
            CodecId::RefCodec => "refcodec",
            CodecId::X264 => "x264",
            CodecId::X265 => "x265",
            CodecId::Vvenc => "vvenc",
        }
    }

    /// Encoder library name as it appears in condition strings.
    pub fn library_name(self) -> &'static str {
        match self {
            CodecId::RefCodec => "refcodec",
            CodecId::X264 => "libx264",
            CodecId::X265 => "libx265",
            CodecId::Vvenc => "vvenc",
        }
    }
}

impl fmt::Display for CodecId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CodecId {
    type Err = ConditionError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "ref" | "refcodec" => Ok(CodecId::RefCodec),
            "x264" | "libx264" | "h264" => Ok(CodecId::X264),
            "x265" | "libx265" | "h265" | "hevc" => Ok(CodecId::X265),
            "vvenc" | "h266" | "vvc" => Ok(CodecId::Vvenc),
            _ => Err(ConditionError::UnknownCodec(s.to_string())),
        }
    }
}

/// Rate-control mode; each variant carries exactly its own parameter.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateMode {
    TargetBpp(f64),
    FixedQp(i64),
    Crf(i64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CodecCondition {
    pub codec: CodecId,
    pub mode: RateMode,
}

impl CodecCondition {
    pub fn target_bpp(codec: CodecId, bpp: f64) -> Result<Self, ConditionError> {
        if !(bpp.is_finite() && bpp > 0.0) {
            return Err(ConditionError::InvalidBpp(bpp));
        }
        Ok(CodecCondition {
            codec,
            mode: RateMode::TargetBpp(bpp),
        })
    }

    pub fn fixed_qp(codec: CodecId, qp: i64) -> Self {
        CodecCondition {
            codec,
            mode: RateMode::FixedQp(qp),
        }
    }

    pub fn crf(codec: CodecId, crf: i64) -> Self {
        CodecCondition {
            codec,
            mode: RateMode::Crf(crf),
        }
    }

    pub fn bpp(&self) -> Option<f64> {
        match self.mode {
            RateMode::TargetBpp(b) => Some(b),
            _ => None,
        }
    }

    /// Replace the rate parameter with a measured bpp. A CRF run becomes a
    /// rate-target condition for everything downstream.
    pub fn with_measured_bpp(self, bpp: f64) -> Result<Self, ConditionError> {
        CodecCondition::target_bpp(self.codec, bpp)
    }

    /// Human-readable condition line used in run logs, e.g.
    /// `A libx264 0.3 bpp compressed image.`
    pub fn condition_string(&self) -> String {
        let lib = self.codec.library_name();
        match self.mode {
            RateMode::TargetBpp(b) => format!("A {lib} {b} bpp compressed image."),
            RateMode::FixedQp(q) => format!("A {lib} qp {q} compressed image."),
            RateMode::Crf(c) => format!("A {lib} crf {c} compressed image."),
        }
    }
}

impl fmt::Display for CodecCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.condition_string())
    }
}
