//! Deterministic intra-only reference codec.
//!
//! Each plane of a YCbCr 4:2:0 image is split into 8×8 blocks. A block is
//! level-shifted by one half, transformed with the orthonormal DCT-II and
//! quantized with a uniform round-half-away-from-zero quantizer whose step
//! doubles every 6 QP. Levels are zigzag scanned and coded as
//! `(zero-run, level)` pairs followed by an end-of-block symbol:
//!
//! ```text
//! pair : ue(run + 1) se(level)
//! eob  : ue(0)
//! ```
//!
//! With this layout the bit count can only shrink when the step grows: level
//! magnitudes are non-increasing in the step, Exp-Golomb lengths are
//! non-decreasing in magnitude, and when a level vanishes the two runs around
//! it merge into one codeword that is never longer than the three it replaces.
//!
//! File layout: `"RFC1"`, `u16` width, `u16` height (both big-endian, the
//! unpadded size), `u8` qp, entropy payload, zero padding to a byte boundary.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bits::{se_len, ue_len, BitError, BitReader, BitWriter};
use crate::dct::{self, Block, BLOCK, N, ZIGZAG};
use crate::pixel::{
    rgb_to_ycbcr420, ycbcr420_to_rgb, ColorSpace, PixelError, PlanarImage, Plane, ALIGN,
};

pub const MAGIC: &[u8; 4] = b"RFC1";
pub const HEADER_BYTES: usize = 9;
pub const MAX_QP: u8 = 51;

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("qp {0} out of range [0, 51]")]
    QpOutOfRange(i64),
    #[error("corrupt header: {0}")]
    CorruptHeader(String),
    #[error("payload underrun at bit {0}")]
    PayloadUnderrun(u64),
    #[error("payload overrun: {0} trailing bits after the last block")]
    PayloadOverrun(u64),
    #[error("corrupt payload: {0}")]
    CorruptPayload(String),
    #[error("non-finite sample in input image")]
    NonFinite,
    #[error(transparent)]
    Pixel(#[from] PixelError),
}

impl From<BitError> for CodecError {
    fn from(e: BitError) -> Self {
        match e {
            BitError::Underrun(at) => CodecError::PayloadUnderrun(at),
            BitError::PrefixTooLong => CodecError::CorruptPayload(e.to_string()),
        }
    }
}

/// Quantization parameter in `[0, 51]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "i64", into = "i64")]
pub struct QuantParam(u8);

impl QuantParam {
    pub const MIN: QuantParam = QuantParam(0);
    pub const MAX: QuantParam = QuantParam(MAX_QP);

    pub fn new(qp: i64) -> Result<Self, CodecError> {
        if (0..=i64::from(MAX_QP)).contains(&qp) {
            Ok(QuantParam(qp as u8))
        } else {
            Err(CodecError::QpOutOfRange(qp))
        }
    }

    pub fn value(self) -> u8 {
        self.0
    }

    /// Quantizer step in sample units: `2^((qp - 4) / 6) / 255`.
    pub fn step(self) -> f64 {
        2f64.powf((f64::from(self.0) - 4.0) / 6.0) / 255.0
    }

    pub fn all() -> impl Iterator<Item = QuantParam> {
        (0..=MAX_QP).map(QuantParam)
    }
}

impl TryFrom<i64> for QuantParam {
    type Error = CodecError;
    fn try_from(v: i64) -> Result<Self, Self::Error> {
        QuantParam::new(v)
    }
}

impl From<QuantParam> for i64 {
    fn from(q: QuantParam) -> i64 {
        i64::from(q.0)
    }
}

impl std::fmt::Display for QuantParam {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Per-sample reconstruction bound: `step / 2 · 8`.
///
/// A coefficient error of at most `step / 2` maps to at most `8 · step / 2`
/// per sample through the 8×8 orthonormal transform.
pub fn codec_distortion_bound(qp: QuantParam) -> f64 {
    qp.step() / 2.0 * 8.0
}

/// An encoded picture. `bytes` is the complete file, header included.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Bitstream {
    width: u16,
    height: u16,
    qp: QuantParam,
    bytes: Vec<u8>,
    bit_count: u64,
}

impl Bitstream {
    pub fn width(&self) -> usize {
        usize::from(self.width)
    }

    pub fn height(&self) -> usize {
        usize::from(self.height)
    }

    pub fn qp(&self) -> QuantParam {
        self.qp
    }

    /// Exact size in bits, header included, byte padding excluded.
    pub fn bit_count(&self) -> u64 {
        self.bit_count
    }

    pub fn bpp(&self) -> f64 {
        self.bit_count as f64 / (self.width() * self.height()) as f64
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.bytes
    }

    /// Parse a file produced by [`encode`]. The entropy payload is walked in
    /// full so that `bit_count` is known and malformed payloads are rejected.
    pub fn from_bytes(bytes: Vec<u8>) -> Result<Self, CodecError> {
        let (width, height, qp) = parse_header(&bytes)?;
        let (cw, ch) = coded_size(usize::from(width), usize::from(height));
        let mut reader = BitReader::new(&bytes[HEADER_BYTES..]);
        for (pw, ph) in plane_sizes(cw, ch) {
            for _ in 0..(pw / N) * (ph / N) {
                read_block_levels(&mut reader)?;
            }
        }
        let payload_bits = finish_payload(&reader)?;
        Ok(Bitstream {
            width,
            height,
            qp,
            bytes,
            bit_count: (HEADER_BYTES as u64) * 8 + payload_bits,
        })
    }
}

fn parse_header(bytes: &[u8]) -> Result<(u16, u16, QuantParam), CodecError> {
    if bytes.len() < HEADER_BYTES {
        return Err(CodecError::CorruptHeader(format!(
            "{} bytes, header needs {HEADER_BYTES}",
            bytes.len()
        )));
    }
    if &bytes[..4] != MAGIC {
        return Err(CodecError::CorruptHeader("bad magic".into()));
    }
    let width = u16::from_be_bytes([bytes[4], bytes[5]]);
    let height = u16::from_be_bytes([bytes[6], bytes[7]]);
    if width == 0 || height == 0 {
        return Err(CodecError::CorruptHeader("zero dimension".into()));
    }
    let qp = QuantParam::new(i64::from(bytes[8]))
        .map_err(|_| CodecError::CorruptHeader(format!("qp {} out of range", bytes[8])))?;
    Ok((width, height, qp))
}

/// Trailing bits after the last block must be zero padding inside the final byte.
fn finish_payload(reader: &BitReader<'_>) -> Result<u64, CodecError> {
    let used = reader.position();
    let left = reader.total_bits() - used;
    if left >= 8 {
        return Err(CodecError::PayloadOverrun(left));
    }
    Ok(used)
}

fn coded_size(width: usize, height: usize) -> (usize, usize) {
    (width.div_ceil(ALIGN) * ALIGN, height.div_ceil(ALIGN) * ALIGN)
}

fn plane_sizes(width: usize, height: usize) -> [(usize, usize); 3] {
    [
        (width, height),
        (width / 2, height / 2),
        (width / 2, height / 2),
    ]
}

#[inline]
pub fn quantize(c: f64, step: f64) -> i64 {
    let m = (c.abs() / step + 0.5).floor() as i64;
    if c < 0.0 {
        -m
    } else {
        m
    }
}

/// Quantized levels of one plane, block by block in raster order, each block
/// in raster (not zigzag) coefficient order.
pub(crate) fn plane_levels(plane: &Plane, step: f64) -> Vec<[i64; BLOCK]> {
    let (bw, bh) = (plane.width() / N, plane.height() / N);
    let mut out = Vec::with_capacity(bw * bh);
    for by in 0..bh {
        for bx in 0..bw {
            let mut b = dct::load_block(plane.data(), plane.width(), bx, by);
            for v in &mut b {
                *v -= 0.5;
            }
            let c = dct::forward(&b);
            let mut levels = [0i64; BLOCK];
            for (l, &cv) in levels.iter_mut().zip(c.iter()) {
                *l = quantize(cv, step);
            }
            out.push(levels);
        }
    }
    out
}

/// Bits spent on one block of levels.
pub(crate) fn block_bits(levels: &[i64; BLOCK]) -> u64 {
    let mut bits = 0;
    let mut run = 0u64;
    for &zi in &ZIGZAG {
        let l = levels[zi];
        if l == 0 {
            run += 1;
        } else {
            bits += ue_len(run + 1) + se_len(l);
            run = 0;
        }
    }
    bits + ue_len(0)
}

fn write_block(w: &mut BitWriter, levels: &[i64; BLOCK]) {
    let mut run = 0u64;
    for &zi in &ZIGZAG {
        let l = levels[zi];
        if l == 0 {
            run += 1;
        } else {
            w.write_ue(run + 1);
            w.write_se(l);
            run = 0;
        }
    }
    w.write_ue(0);
}

fn read_block_levels(r: &mut BitReader<'_>) -> Result<[i64; BLOCK], CodecError> {
    let mut levels = [0i64; BLOCK];
    let mut pos = 0usize;
    loop {
        let sym = r.read_ue()?;
        if sym == 0 {
            return Ok(levels);
        }
        let run = (sym - 1) as usize;
        pos = pos.checked_add(run).filter(|&p| p < BLOCK).ok_or_else(|| {
            CodecError::CorruptPayload(format!("run {run} overflows the block"))
        })?;
        let level = r.read_se()?;
        if level == 0 {
            return Err(CodecError::CorruptPayload("zero level in a pair".into()));
        }
        levels[ZIGZAG[pos]] = level;
        pos += 1;
    }
}

fn check_input(img: &PlanarImage) -> Result<(), CodecError> {
    if img.colorspace() != ColorSpace::YCbCr420 {
        return Err(PixelError::WrongColorSpace {
            expected: ColorSpace::YCbCr420,
            found: img.colorspace(),
        }
        .into());
    }
    if img.width() % ALIGN != 0 || img.height() % ALIGN != 0 {
        return Err(PixelError::Unaligned {
            width: img.width(),
            height: img.height(),
        }
        .into());
    }
    let (w, h) = img.original_size();
    if w > usize::from(u16::MAX) || h > usize::from(u16::MAX) {
        return Err(PixelError::DimensionMismatch(format!("{w}x{h} exceeds 65535")).into());
    }
    if img
        .planes()
        .iter()
        .any(|p| p.data().iter().any(|v| !v.is_finite()))
    {
        return Err(CodecError::NonFinite);
    }
    Ok(())
}

pub fn encode(img: &PlanarImage, qp: QuantParam) -> Result<Bitstream, CodecError> {
    check_input(img)?;
    let (w, h) = img.original_size();
    let step = qp.step();
    let mut writer = BitWriter::new();
    writer.write_bits(u64::from(u32::from_be_bytes(*MAGIC)), 32);
    writer.write_bits(w as u64, 16);
    writer.write_bits(h as u64, 16);
    writer.write_bits(u64::from(qp.value()), 8);
    for plane in img.planes() {
        for levels in plane_levels(plane, step) {
            write_block(&mut writer, &levels);
        }
    }
    let bit_count = writer.bit_len();
    Ok(Bitstream {
        width: w as u16,
        height: h as u16,
        qp,
        bytes: writer.into_bytes(),
        bit_count,
    })
}

/// Exact bit count of [`encode`] without producing the bytes.
pub fn count_bits(img: &PlanarImage, qp: QuantParam) -> Result<u64, CodecError> {
    check_input(img)?;
    let step = qp.step();
    let mut bits = HEADER_BYTES as u64 * 8;
    for plane in img.planes() {
        bits += plane_levels(plane, step).iter().map(block_bits).sum::<u64>();
    }
    Ok(bits)
}

/// Reconstruct one plane from its levels, without clamping.
pub(crate) fn reconstruct_plane(
    width: usize,
    height: usize,
    blocks: &[[i64; BLOCK]],
    step: f64,
) -> Vec<f64> {
    let mut data = vec![0.0; width * height];
    let bw = width / N;
    for (i, levels) in blocks.iter().enumerate() {
        let mut c: Block = [0.0; BLOCK];
        for (cv, &l) in c.iter_mut().zip(levels.iter()) {
            *cv = l as f64 * step;
        }
        let mut b = dct::inverse(&c);
        for v in &mut b {
            *v += 0.5;
        }
        dct::store_block(&mut data, width, i % bw, i / bw, &b);
    }
    data
}

pub fn decode(bs: &Bitstream) -> Result<PlanarImage, CodecError> {
    let bytes = bs.as_bytes();
    let (width, height, qp) = parse_header(bytes)?;
    let (w, h) = (usize::from(width), usize::from(height));
    let (cw, ch) = coded_size(w, h);
    let step = qp.step();
    let mut reader = BitReader::new(&bytes[HEADER_BYTES..]);
    let mut planes = Vec::with_capacity(3);
    for (pw, ph) in plane_sizes(cw, ch) {
        let n = (pw / N) * (ph / N);
        let mut blocks = Vec::with_capacity(n);
        for _ in 0..n {
            blocks.push(read_block_levels(&mut reader)?);
        }
        let mut data = reconstruct_plane(pw, ph, &blocks, step);
        for v in &mut data {
            *v = v.clamp(0.0, 1.0);
        }
        planes.push(Plane::new(pw, ph, data)?);
    }
    finish_payload(&reader)?;
    let img = PlanarImage::from_planes(ColorSpace::YCbCr420, cw, ch, planes)?;
    Ok(img.with_original_size(w, h)?)
}

/// Encode and decode an image of either colourspace, returning the
/// reconstruction in the input's colourspace and the exact bit count.
pub fn round_trip(img: &PlanarImage, qp: QuantParam) -> Result<(PlanarImage, u64), CodecError> {
    match img.colorspace() {
        ColorSpace::YCbCr420 => {
            let bs = encode(img, qp)?;
            Ok((decode(&bs)?, bs.bit_count()))
        }
        ColorSpace::Rgb => {
            let ycc = rgb_to_ycbcr420(img)?;
            let bs = encode(&ycc, qp)?;
            Ok((ycbcr420_to_rgb(&decode(&bs)?)?, bs.bit_count()))
        }
    }
}

/// [`count_bits`] for an image of either colourspace.
pub fn count_bits_any(img: &PlanarImage, qp: QuantParam) -> Result<u64, CodecError> {
    match img.colorspace() {
        ColorSpace::YCbCr420 => count_bits(img, qp),
        ColorSpace::Rgb => count_bits(&rgb_to_ycbcr420(img)?, qp),
    }
}
