//! Full-reference quality metrics on original-size crops.
//!
//! MSE and PSNR use every channel of the image (RGB for RGB inputs). SSIM is
//! single-scale on BT.601 luma with an 11×11 Gaussian window (σ = 1.5),
//! `K1 = 0.01`, `K2 = 0.03`, dynamic range 1, averaged over window positions
//! that lie fully inside the image.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pixel::{luma, PixelError, PlanarImage, Plane};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("image {width}x{height} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")]
    TooSmall { width: usize, height: usize },
    #[error(transparent)]
    Pixel(#[from] PixelError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricValue {
    pub name: String,
    pub value: f64,
    pub higher_is_better: bool,
}

impl MetricValue {
    pub fn new(name: &str, value: f64) -> Self {
        MetricValue {
            name: name.to_string(),
            value,
            higher_is_better: higher_is_better(name).unwrap_or(true),
        }
    }
}

/// Orientation of the metrics this toolkit knows by name.
pub fn higher_is_better(name: &str) -> Option<bool> {
    match name.to_ascii_lowercase().as_str() {
        "psnr" | "ssim" | "ms-ssim" | "msssim" => Some(true),
        "mse" | "lpips" | "dists" | "fid" => Some(false),
        _ => None,
    }
}

fn check_pair(a: &PlanarImage, b: &PlanarImage) -> Result<(), MetricError> {
    if !a.same_layout(b) {
        return Err(MetricError::DimensionMismatch(format!(
            "{:?} {}x{} (orig {:?}) vs {:?} {}x{} (orig {:?})",
            a.colorspace(),
            a.width(),
            a.height(),
            a.original_size(),
            b.colorspace(),
            b.width(),
            b.height(),
            b.original_size()
        )));
    }
    Ok(())
}

pub fn mse(a: &PlanarImage, b: &PlanarImage) -> Result<f64, MetricError> {
    check_pair(a, b)?;
    let (pa, pb) = (a.cropped_planes(), b.cropped_planes());
    let mut sum = 0.0;
    let mut n = 0usize;
    for (x, y) in pa.iter().zip(&pb) {
        for (u, v) in x.data().iter().zip(y.data()) {
            let d = u - v;
            sum += d * d;
        }
        n += x.data().len();
    }
    Ok(sum / n as f64)
}

/// PSNR in dB for unit peak; identical images give `f64::INFINITY`.
pub fn psnr(a: &PlanarImage, b: &PlanarImage) -> Result<f64, MetricError> {
    Ok(psnr_from_mse(mse(a, b)?))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    }
}

/// Normalised 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let mut taps = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, t) in taps.iter_mut().enumerate() {
        let d = i as f64 - c;
        *t = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = taps.iter().sum();
    for t in &mut taps {
        *t /= s;
    }
    taps
}

/// Valid-mode separable filtering of `data` (row-major `w`×`h`).
fn filter_valid(data: &[f64], w: usize, h: usize, taps: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w - SSIM_WINDOW + 1;
    let oh = h - SSIM_WINDOW + 1;
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            let mut s = 0.0;
            for (k, t) in taps.iter().enumerate() {
                s += t * data[y * w + x + k];
            }
            rows[y * ow + x] = s;
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            let mut s = 0.0;
            for (k, t) in taps.iter().enumerate() {
                s += t * rows[(y + k) * ow + x];
            }
            out[y * ow + x] = s;
        }
    }
    out
}

fn ssim_planes(x: &Plane, y: &Plane) -> Result<f64, MetricError> {
    let (w, h) = (x.width(), x.height());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(MetricError::TooSmall {
            width: w,
            height: h,
        });
    }
    let taps = gaussian_taps();
    let xx: Vec<f64> = x.data().iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.data().iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.data().iter().zip(y.data()).map(|(a, b)| a * b).collect();
    let mu_x = filter_valid(x.data(), w, h, &taps);
    let mu_y = filter_valid(y.data(), w, h, &taps);
    let e_xx = filter_valid(&xx, w, h, &taps);
    let e_yy = filter_valid(&yy, w, h, &taps);
    let e_xy = filter_valid(&xy, w, h, &taps);
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let mut total = 0.0;
    for i in 0..mu_x.len() {
        let (mx, my) = (mu_x[i], mu_y[i]);
        let sx = e_xx[i] - mx * mx;
        let sy = e_yy[i] - my * my;
        let sxy = e_xy[i] - mx * my;
        let num = (2.0 * mx * my + c1) * (2.0 * sxy + c2);
        let den = (mx * mx + my * my + c1) * (sx + sy + c2);
        total += num / den;
    }
    Ok(total / mu_x.len() as f64)
}

pub fn ssim(a: &PlanarImage, b: &PlanarImage) -> Result<f64, MetricError> {
    check_pair(a, b)?;
    let (w, h) = a.original_size();
    let la = luma(a)?.crop(w, h);
    let lb = luma(b)?.crop(w, h);
    ssim_planes(&la, &lb)
}

/// The three in-process metrics in a fixed order: PSNR, SSIM, MSE.
pub fn all_metrics(a: &PlanarImage, b: &PlanarImage) -> Result<Vec<MetricValue>, MetricError> {
    let m = mse(a, b)?;
    Ok(vec![
        MetricValue::new("psnr", psnr_from_mse(m)),
        MetricValue::new("ssim", ssim(a, b)?),
        MetricValue::new("mse", m),
    ])
}
