//! Differentiable stand-in for the reference codec.
//!
//! The proxy runs the same transform as the hard codec but replaces rounding
//! with the soft rounding `s(x) = x - sin(2πx) / 2π`, which is exact on
//! integers and has the closed-form derivative `1 - cos(2πx)`. The QP is
//! resolved on the hard codec (rate is an input, never differentiated) and
//! held fixed for the forward/backward pair. No clamp is applied on the
//! differentiable path; [`ProxyOutput::export`] clamps a copy.
//!
//! RGB inputs go through the linear BT.601 / 4:2:0 stages, whose adjoints
//! are applied on the way back.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::condition::{CodecCondition, CodecId, RateMode};
use crate::dct::{self, Block, BLOCK, N};
use crate::pixel::{
    rgb_to_ycbcr420, ycbcr420_to_rgb_unclamped, ColorSpace, PixelError, PlanarImage, Plane,
    CB_SCALE, CR_SCALE, KB, KG, KR,
};
use crate::ratecontrol::{self, RateError, DEFAULT_TOLERANCE};
use crate::refcodec::{self, quantize, CodecError, QuantParam};

#[derive(Debug, Error)]
pub enum ProxyError {
    #[error("no analytic proxy exists for {0}; evaluate the hard encoder with STE instead")]
    NoAnalyticProxy(CodecId),
    #[error("rate mode {0} is not supported by the proxy")]
    UnsupportedMode(&'static str),
    #[error("tape does not match upstream gradient: {0}")]
    TapeMismatch(String),
    #[error(transparent)]
    Rate(#[from] RateError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Pixel(#[from] PixelError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Composition {
    /// Forward value is the proxy output.
    NoSte,
    /// Forward value is the hard codec output; backward is the proxy's.
    Ste,
}

impl std::str::FromStr for Composition {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "noste" | "no-ste" => Ok(Composition::NoSte),
            "ste" => Ok(Composition::Ste),
            _ => Err(format!("unknown composition mode {s:?} (expected noste|ste)")),
        }
    }
}

impl std::fmt::Display for Composition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Composition::NoSte => "noste",
            Composition::Ste => "ste",
        })
    }
}

/// Soft rounding split as `k + r(f)` with `k` the hard level, so that the
/// value is exactly `k` when `f == 0`. Returns `(s(u), s'(u))`.
#[inline]
pub fn soft_round(u: f64, k: i64) -> (f64, f64) {
    let f = u - k as f64;
    let value = k as f64 + (f - (TAU * f).sin() / TAU);
    (value, 1.0 - (TAU * f).cos())
}

#[derive(Clone, Debug, PartialEq)]
struct PlaneTape {
    width: usize,
    height: usize,
    coeffs: Vec<Block>,
    deriv: Vec<Block>,
}

/// Everything the backward pass needs from one forward call.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientTape {
    input_colorspace: ColorSpace,
    width: usize,
    height: usize,
    original: (usize, usize),
    qp: QuantParam,
    step: f64,
    planes: Vec<PlaneTape>,
}

impl GradientTape {
    pub fn qp(&self) -> QuantParam {
        self.qp
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn input_colorspace(&self) -> ColorSpace {
        self.input_colorspace
    }

    /// Soft-rounding derivative factors, plane by plane, block by block.
    pub fn derivative_factors(&self) -> impl Iterator<Item = f64> + '_ {
        self.planes
            .iter()
            .flat_map(|p| p.deriv.iter().flat_map(|b| b.iter().copied()))
    }

    /// Recompute the forward output from the recorded coefficients.
    pub fn replay(&self) -> Result<PlanarImage, ProxyError> {
        let mut planes = Vec::with_capacity(3);
        for pt in &self.planes {
            let mut data = vec![0.0; pt.width * pt.height];
            let bw = pt.width / N;
            for (i, c) in pt.coeffs.iter().enumerate() {
                let b = soft_block(c, self.step).0;
                dct::store_block(&mut data, pt.width, i % bw, i / bw, &b);
            }
            planes.push(Plane::new(pt.width, pt.height, data)?);
        }
        let ycc = PlanarImage::from_planes(ColorSpace::YCbCr420, self.width, self.height, planes)?
            .with_original_size(self.original.0, self.original.1)?;
        Ok(match self.input_colorspace {
            ColorSpace::YCbCr420 => ycc,
            ColorSpace::Rgb => ycbcr420_to_rgb_unclamped(&ycc)?,
        })
    }
}

/// Soft-quantized reconstruction of one block of coefficients, plus the
/// per-coefficient derivative factors.
fn soft_block(coeffs: &Block, step: f64) -> (Block, Block) {
    let mut rec = [0.0; BLOCK];
    let mut deriv = [0.0; BLOCK];
    for i in 0..BLOCK {
        let k = quantize(coeffs[i], step);
        let (s, d) = soft_round(coeffs[i] / step, k);
        rec[i] = s * step;
        deriv[i] = d;
    }
    let mut out = dct::inverse(&rec);
    for v in &mut out {
        *v += 0.5;
    }
    (out, deriv)
}

#[derive(Clone, Debug)]
pub struct ProxyOutput {
    /// Unclamped differentiable forward value.
    pub image: PlanarImage,
    pub resolved_qp: QuantParam,
    /// bpp of the hard encode at `resolved_qp`.
    pub achieved_bpp: f64,
    pub tape: GradientTape,
}

impl ProxyOutput {
    /// Clamped copy of the forward value.
    pub fn export(&self) -> PlanarImage {
        self.image.clamped()
    }
}

fn to_ycc(img: &PlanarImage) -> Result<PlanarImage, PixelError> {
    match img.colorspace() {
        ColorSpace::YCbCr420 => Ok(img.clone()),
        ColorSpace::Rgb => rgb_to_ycbcr420(img),
    }
}

/// Resolve the reference-codec QP for a condition on the hard codec.
pub fn resolve_qp(img: &PlanarImage, cond: &CodecCondition) -> Result<(QuantParam, f64), ProxyError> {
    if cond.codec != CodecId::RefCodec {
        return Err(ProxyError::NoAnalyticProxy(cond.codec));
    }
    match cond.mode {
        RateMode::TargetBpp(bpp) => {
            let r = ratecontrol::solve_qp(img, bpp, DEFAULT_TOLERANCE)?;
            Ok((r.qp(), r.achieved_bpp))
        }
        RateMode::FixedQp(qp) => {
            let qp = QuantParam::new(qp)?;
            let bits = refcodec::count_bits_any(img, qp)?;
            Ok((qp, bits as f64 / img.original_area() as f64))
        }
        RateMode::Crf(_) => Err(ProxyError::UnsupportedMode("crf")),
    }
}

/// Proxy forward pass at a fixed QP.
pub fn proxy_forward_at(img: &PlanarImage, qp: QuantParam) -> Result<(PlanarImage, GradientTape), ProxyError> {
    let ycc = to_ycc(img)?;
    let step = qp.step();
    let mut out_planes = Vec::with_capacity(3);
    let mut tapes = Vec::with_capacity(3);
    for plane in ycc.planes() {
        let (w, h) = (plane.width(), plane.height());
        let (bw, bh) = (w / N, h / N);
        let mut data = vec![0.0; w * h];
        let mut coeffs = Vec::with_capacity(bw * bh);
        let mut deriv = Vec::with_capacity(bw * bh);
        for by in 0..bh {
            for bx in 0..bw {
                let mut b = dct::load_block(plane.data(), w, bx, by);
                for v in &mut b {
                    *v -= 0.5;
                }
                let c = dct::forward(&b);
                let (rec, d) = soft_block(&c, step);
                dct::store_block(&mut data, w, bx, by, &rec);
                coeffs.push(c);
                deriv.push(d);
            }
        }
        out_planes.push(Plane::new(w, h, data)?);
        tapes.push(PlaneTape {
            width: w,
            height: h,
            coeffs,
            deriv,
        });
    }
    let out = ycc.with_planes(out_planes)?;
    let image = match img.colorspace() {
        ColorSpace::YCbCr420 => out,
        ColorSpace::Rgb => ycbcr420_to_rgb_unclamped(&out)?,
    };
    let tape = GradientTape {
        input_colorspace: img.colorspace(),
        width: img.width(),
        height: img.height(),
        original: img.original_size(),
        qp,
        step,
        planes: tapes,
    };
    Ok((image, tape))
}

pub fn proxy_forward(img: &PlanarImage, cond: &CodecCondition) -> Result<ProxyOutput, ProxyError> {
    let (resolved_qp, achieved_bpp) = resolve_qp(img, cond)?;
    let (image, tape) = proxy_forward_at(img, resolved_qp)?;
    Ok(ProxyOutput {
        image,
        resolved_qp,
        achieved_bpp,
        tape,
    })
}

/// Chain rule through the proxy: per block, DCT of the upstream gradient,
/// scaled by the derivative factors, inverse DCT. Linear in `upstream`.
pub fn proxy_gradient(tape: &GradientTape, upstream: &PlanarImage) -> Result<PlanarImage, ProxyError> {
    if upstream.colorspace() != tape.input_colorspace
        || upstream.width() != tape.width
        || upstream.height() != tape.height
    {
        return Err(ProxyError::TapeMismatch(format!(
            "upstream {:?} {}x{}, tape {:?} {}x{}",
            upstream.colorspace(),
            upstream.width(),
            upstream.height(),
            tape.input_colorspace,
            tape.width,
            tape.height
        )));
    }
    let g_ycc = match tape.input_colorspace {
        ColorSpace::YCbCr420 => upstream.planes().to_vec(),
        ColorSpace::Rgb => ycbcr_to_rgb_adjoint(upstream)?,
    };
    let mut grads = Vec::with_capacity(3);
    for (g, pt) in g_ycc.iter().zip(&tape.planes) {
        let (w, h) = (pt.width, pt.height);
        let bw = w / N;
        let mut data = vec![0.0; w * h];
        for (i, d) in pt.deriv.iter().enumerate() {
            let (bx, by) = (i % bw, i / bw);
            let mut c = dct::forward(&dct::load_block(g.data(), w, bx, by));
            for (cv, dv) in c.iter_mut().zip(d.iter()) {
                *cv *= dv;
            }
            dct::store_block(&mut data, w, bx, by, &dct::inverse(&c));
        }
        grads.push(Plane::new(w, h, data)?);
    }
    match tape.input_colorspace {
        ColorSpace::YCbCr420 => Ok(upstream.with_planes(grads)?),
        ColorSpace::Rgb => Ok(upstream.with_planes(rgb_to_ycbcr_adjoint(&grads, tape.width, tape.height)?)?),
    }
}

/// Adjoint of nearest-neighbour upsampling followed by the inverse matrix.
fn ycbcr_to_rgb_adjoint(g: &PlanarImage) -> Result<Vec<Plane>, PixelError> {
    let (w, h) = (g.width(), g.height());
    let (gr, gg, gb) = (g.plane(0), g.plane(1), g.plane(2));
    let g_from_y = (1.0 - KR - KB) / KG;
    let g_from_cb = -KB / (KG * CB_SCALE);
    let g_from_cr = -KR / (KG * CR_SCALE);
    let mut gy = vec![0.0; w * h];
    let mut gcb = vec![0.0; w * h / 4];
    let mut gcr = vec![0.0; w * h / 4];
    for y in 0..h {
        for x in 0..w {
            let (r, gv, b) = (gr.get(x, y), gg.get(x, y), gb.get(x, y));
            gy[y * w + x] = r + gv * g_from_y + b;
            let ci = (y / 2) * (w / 2) + x / 2;
            gcb[ci] += gv * g_from_cb + b / CB_SCALE;
            gcr[ci] += r / CR_SCALE + gv * g_from_cr;
        }
    }
    Ok(vec![
        Plane::new(w, h, gy)?,
        Plane::new(w / 2, h / 2, gcb)?,
        Plane::new(w / 2, h / 2, gcr)?,
    ])
}

/// Adjoint of the forward matrix followed by 2×2 box averaging.
fn rgb_to_ycbcr_adjoint(g: &[Plane], w: usize, h: usize) -> Result<Vec<Plane>, PixelError> {
    let (gy, gcb, gcr) = (&g[0], &g[1], &g[2]);
    let mut r = vec![0.0; w * h];
    let mut gg = vec![0.0; w * h];
    let mut b = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let ly = gy.get(x, y);
            let cb = gcb.get(x / 2, y / 2) / 4.0 * CB_SCALE;
            let cr = gcr.get(x / 2, y / 2) / 4.0 * CR_SCALE;
            r[i] = ly * KR - cb * KR + cr * (1.0 - KR);
            gg[i] = ly * KG - cb * KG - cr * KG;
            b[i] = ly * KB + cb * (1.0 - KB) - cr * KB;
        }
    }
    Ok(vec![Plane::new(w, h, r)?, Plane::new(w, h, gg)?, Plane::new(w, h, b)?])
}

/// Forward value under the chosen composition, with the proxy's tape.
#[derive(Clone, Debug)]
pub struct Composed {
    pub forward_image: PlanarImage,
    pub tape: GradientTape,
    pub resolved_qp: QuantParam,
    pub achieved_bpp: f64,
}

pub fn compose_at(mode: Composition, img: &PlanarImage, qp: QuantParam) -> Result<Composed, ProxyError> {
    let (proxy_image, tape) = proxy_forward_at(img, qp)?;
    let (forward_image, bits) = match mode {
        Composition::NoSte => (proxy_image, refcodec::count_bits_any(img, qp)?),
        Composition::Ste => refcodec::round_trip(img, qp)?,
    };
    Ok(Composed {
        forward_image,
        tape,
        resolved_qp: qp,
        achieved_bpp: bits as f64 / img.original_area() as f64,
    })
}

pub fn compose(mode: Composition, img: &PlanarImage, cond: &CodecCondition) -> Result<Composed, ProxyError> {
    let (qp, _) = resolve_qp(img, cond)?;
    compose_at(mode, img, qp)
}

/// Supervision image compressed ten QP finer than `qp` (clamped at 0).
pub fn slightly_compressed_target(img: &PlanarImage, qp: QuantParam) -> Result<PlanarImage, ProxyError> {
    let finer = QuantParam::new(i64::from(qp.value()).saturating_sub(10).max(0))?;
    let (image, _) = proxy_forward_at(img, finer)?;
    Ok(image.clamped())
}
