//! Recompression-aware rate-distortion toolkit.

pub mod bits;
pub mod dct;
pub mod pixel;
pub mod refcodec;
pub mod ratecontrol;
pub mod condition;
pub mod proxy;
pub mod metrics;
pub mod bdstats;
pub mod extcodec;
pub mod optimizer;
pub mod report;
pub mod synth;
