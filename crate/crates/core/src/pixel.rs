//! Planar image representation, file I/O and colour conversion.
//!
//! Samples are stored as `f64` in `[0, 1]`. Images are padded by edge
//! replication to a multiple of 16 in both dimensions on ingest so that 8×8
//! blocks and 4:2:0 chroma are always aligned; the original size is kept and
//! every metric crops back to it.
//!
//! Colour conversion is BT.601 full range. Chroma is downsampled with a 2×2
//! box average and upsampled with nearest neighbour, which makes the round
//! trip exact on images that are constant inside every 2×2 block.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Luma/chroma alignment every coded image satisfies.
pub const ALIGN: usize = 16;

pub const KR: f64 = 0.299;
pub const KG: f64 = 0.587;
pub const KB: f64 = 0.114;
/// Scale applied to `B - Y` when forming Cb.
pub const CB_SCALE: f64 = 0.564;
/// Scale applied to `R - Y` when forming Cr.
pub const CR_SCALE: f64 = 0.713;

#[derive(Debug, Error)]
pub enum PixelError {
    #[error("unreadable file {path}: {reason}")]
    Unreadable { path: PathBuf, reason: String },
    #[error("unsupported bit depth in {path}: only 8-bit images are accepted")]
    UnsupportedBitDepth { path: PathBuf },
    #[error("zero-sized image")]
    ZeroSized,
    #[error("wrong colorspace: expected {expected:?}, found {found:?}")]
    WrongColorSpace {
        expected: ColorSpace,
        found: ColorSpace,
    },
    #[error("image {width}x{height} is not aligned to multiples of {ALIGN}")]
    Unaligned { width: usize, height: usize },
    #[error("plane size mismatch: {0}")]
    PlaneMismatch(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("raw YUV420 buffer has {found} bytes, expected {expected}")]
    RawSize { expected: usize, found: usize },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ColorSpace {
    Rgb,
    YCbCr420,
}

/// A single channel of samples in row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct Plane {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Plane {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self, PixelError> {
        if data.len() != width * height {
            return Err(PixelError::PlaneMismatch(format!(
                "{} samples for a {width}x{height} plane",
                data.len()
            )));
        }
        Ok(Plane {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Plane {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Top-left `width`×`height` window of this plane.
    pub fn crop(&self, width: usize, height: usize) -> Plane {
        let width = width.min(self.width);
        let height = height.min(self.height);
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            let row = y * self.width;
            data.extend_from_slice(&self.data[row..row + width]);
        }
        Plane {
            width,
            height,
            data,
        }
    }
}

/// An image made of planes, either full-resolution RGB or YCbCr with
/// half-resolution chroma.
#[derive(Clone, Debug, PartialEq)]
pub struct PlanarImage {
    width: usize,
    height: usize,
    colorspace: ColorSpace,
    planes: Vec<Plane>,
    original_width: usize,
    original_height: usize,
}

fn is_aligned(width: usize, height: usize) -> bool {
    width > 0 && height > 0 && width % ALIGN == 0 && height % ALIGN == 0
}

fn padded_dim(v: usize) -> usize {
    v.div_ceil(ALIGN) * ALIGN
}

/// Pad a plane to `width`×`height` by replicating the last column and row.
fn pad_plane(src_w: usize, src_h: usize, src: &[f64], width: usize, height: usize) -> Plane {
    let mut data = Vec::with_capacity(width * height);
    for y in 0..height {
        let sy = y.min(src_h - 1);
        for x in 0..width {
            let sx = x.min(src_w - 1);
            data.push(src[sy * src_w + sx]);
        }
    }
    Plane {
        width,
        height,
        data,
    }
}

impl PlanarImage {
    /// Build an image from already aligned planes.
    pub fn from_planes(
        colorspace: ColorSpace,
        width: usize,
        height: usize,
        planes: Vec<Plane>,
    ) -> Result<Self, PixelError> {
        if width == 0 || height == 0 {
            return Err(PixelError::ZeroSized);
        }
        if !is_aligned(width, height) {
            return Err(PixelError::Unaligned { width, height });
        }
        if planes.len() != 3 {
            return Err(PixelError::PlaneMismatch(format!(
                "expected 3 planes, got {}",
                planes.len()
            )));
        }
        for (i, p) in planes.iter().enumerate() {
            let (ew, eh) = match (colorspace, i) {
                (ColorSpace::YCbCr420, 1 | 2) => (width / 2, height / 2),
                _ => (width, height),
            };
            if p.width != ew || p.height != eh {
                return Err(PixelError::PlaneMismatch(format!(
                    "plane {i} is {}x{}, expected {ew}x{eh}",
                    p.width, p.height
                )));
            }
        }
        Ok(PlanarImage {
            width,
            height,
            colorspace,
            planes,
            original_width: width,
            original_height: height,
        })
    }

    /// Build an RGB image of any size, padding to alignment by edge replication.
    pub fn from_rgb_planes(
        width: usize,
        height: usize,
        r: &[f64],
        g: &[f64],
        b: &[f64],
    ) -> Result<Self, PixelError> {
        if width == 0 || height == 0 {
            return Err(PixelError::ZeroSized);
        }
        let n = width * height;
        if r.len() != n || g.len() != n || b.len() != n {
            return Err(PixelError::PlaneMismatch(format!(
                "RGB planes must each hold {n} samples"
            )));
        }
        let (pw, ph) = (padded_dim(width), padded_dim(height));
        let planes = [r, g, b]
            .iter()
            .map(|src| pad_plane(width, height, src, pw, ph))
            .collect();
        let mut img = PlanarImage::from_planes(ColorSpace::Rgb, pw, ph, planes)?;
        img.original_width = width;
        img.original_height = height;
        Ok(img)
    }

    /// Gray RGB image (all three channels equal), padded as needed.
    pub fn from_gray(width: usize, height: usize, samples: &[f64]) -> Result<Self, PixelError> {
        PlanarImage::from_rgb_planes(width, height, samples, samples, samples)
    }

    /// Interleaved 8-bit RGB, samples mapped `v / 255`.
    pub fn from_rgb8(width: usize, height: usize, bytes: &[u8]) -> Result<Self, PixelError> {
        if width == 0 || height == 0 {
            return Err(PixelError::ZeroSized);
        }
        if bytes.len() != width * height * 3 {
            return Err(PixelError::PlaneMismatch(format!(
                "{} bytes for a {width}x{height} RGB8 image",
                bytes.len()
            )));
        }
        let mut planes = vec![Vec::with_capacity(width * height); 3];
        for px in bytes.chunks_exact(3) {
            for c in 0..3 {
                planes[c].push(f64::from(px[c]) / 255.0);
            }
        }
        PlanarImage::from_rgb_planes(width, height, &planes[0], &planes[1], &planes[2])
    }

    pub fn constant_rgb(width: usize, height: usize, rgb: [f64; 3]) -> Result<Self, PixelError> {
        let planes = rgb.iter().map(|&v| Plane::filled(width, height, v)).collect();
        PlanarImage::from_planes(ColorSpace::Rgb, width, height, planes)
    }

    /// Same geometry and metadata with new planes.
    pub fn with_planes(&self, planes: Vec<Plane>) -> Result<Self, PixelError> {
        let mut img = PlanarImage::from_planes(self.colorspace, self.width, self.height, planes)?;
        img.original_width = self.original_width;
        img.original_height = self.original_height;
        Ok(img)
    }

    /// Record the pre-padding size. Must not exceed the coded size.
    pub fn with_original_size(mut self, width: usize, height: usize) -> Result<Self, PixelError> {
        if width == 0 || height == 0 {
            return Err(PixelError::ZeroSized);
        }
        if width > self.width || height > self.height {
            return Err(PixelError::DimensionMismatch(format!(
                "original {width}x{height} exceeds coded {}x{}",
                self.width, self.height
            )));
        }
        self.original_width = width;
        self.original_height = height;
        Ok(self)
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn colorspace(&self) -> ColorSpace {
        self.colorspace
    }

    pub fn original_size(&self) -> (usize, usize) {
        (self.original_width, self.original_height)
    }

    /// Luma pixel count of the unpadded image; the bpp denominator.
    pub fn original_area(&self) -> usize {
        self.original_width * self.original_height
    }

    pub fn planes(&self) -> &[Plane] {
        &self.planes
    }

    pub fn plane(&self, i: usize) -> &Plane {
        &self.planes[i]
    }

    pub fn into_planes(self) -> Vec<Plane> {
        self.planes
    }

    /// Total sample count over all planes.
    pub fn sample_count(&self) -> usize {
        self.planes.iter().map(|p| p.data.len()).sum()
    }

    /// Planes cropped to the original size (chroma crop rounds up).
    pub fn cropped_planes(&self) -> Vec<Plane> {
        self.planes
            .iter()
            .enumerate()
            .map(|(i, p)| match (self.colorspace, i) {
                (ColorSpace::YCbCr420, 1 | 2) => p.crop(
                    self.original_width.div_ceil(2),
                    self.original_height.div_ceil(2),
                ),
                _ => p.crop(self.original_width, self.original_height),
            })
            .collect()
    }

    pub fn clamped(&self) -> PlanarImage {
        let mut out = self.clone();
        for p in &mut out.planes {
            for v in &mut p.data {
                *v = v.clamp(0.0, 1.0);
            }
        }
        out
    }

    /// Whether every plane matches `other` in geometry and colourspace.
    pub fn same_layout(&self, other: &PlanarImage) -> bool {
        self.colorspace == other.colorspace
            && self.width == other.width
            && self.height == other.height
            && self.original_size() == other.original_size()
    }

    fn expect(&self, cs: ColorSpace) -> Result<(), PixelError> {
        if self.colorspace != cs {
            return Err(PixelError::WrongColorSpace {
                expected: cs,
                found: self.colorspace,
            });
        }
        Ok(())
    }

    /// Interleaved 8-bit RGB of the original-size crop.
    pub fn to_rgb8(&self) -> Result<Vec<u8>, PixelError> {
        self.expect(ColorSpace::Rgb)?;
        let (w, h) = self.original_size();
        let mut out = Vec::with_capacity(w * h * 3);
        for y in 0..h {
            for x in 0..w {
                for p in &self.planes {
                    out.push(to_u8(p.get(x, y)));
                }
            }
        }
        Ok(out)
    }

    /// Raw planar 8-bit YUV420 of the full coded frame: Y, then Cb, then Cr.
    pub fn to_yuv420_bytes(&self) -> Result<Vec<u8>, PixelError> {
        self.expect(ColorSpace::YCbCr420)?;
        let mut out = Vec::with_capacity(self.width * self.height * 3 / 2);
        out.extend(self.planes[0].data.iter().map(|&v| to_u8(v)));
        for p in &self.planes[1..] {
            out.extend(p.data.iter().map(|&v| chroma_to_u8(v)));
        }
        Ok(out)
    }

    /// Inverse of [`PlanarImage::to_yuv420_bytes`] for a `width`×`height` frame.
    pub fn from_yuv420_bytes(width: usize, height: usize, bytes: &[u8]) -> Result<Self, PixelError> {
        let luma = width * height;
        let expected = luma + 2 * (luma / 4);
        if bytes.len() != expected {
            return Err(PixelError::RawSize {
                expected,
                found: bytes.len(),
            });
        }
        let y = bytes[..luma].iter().map(|&b| f64::from(b) / 255.0).collect();
        let cb = bytes[luma..luma + luma / 4]
            .iter()
            .map(|&b| chroma_from_u8(b))
            .collect();
        let cr = bytes[luma + luma / 4..]
            .iter()
            .map(|&b| chroma_from_u8(b))
            .collect();
        PlanarImage::from_planes(
            ColorSpace::YCbCr420,
            width,
            height,
            vec![
                Plane::new(width, height, y)?,
                Plane::new(width / 2, height / 2, cb)?,
                Plane::new(width / 2, height / 2, cr)?,
            ],
        )
    }
}

/// Quantize a `[0,1]` sample to 8 bits, rounding half away from zero.
#[inline]
pub fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Chroma is centred on code 128 so that neutral gray survives 8-bit export.
#[inline]
fn chroma_to_u8(v: f64) -> u8 {
    (((v - 0.5) * 255.0).round() + 128.0).clamp(0.0, 255.0) as u8
}

#[inline]
fn chroma_from_u8(b: u8) -> f64 {
    (f64::from(b) - 128.0) / 255.0 + 0.5
}

/// Bits and bits-per-pixel of one encode. The denominator is the unpadded
/// luma area.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub bits: u64,
    pub bpp: f64,
}

impl RateReport {
    pub fn new(bits: u64, width: usize, height: usize) -> Result<Self, PixelError> {
        if width == 0 || height == 0 {
            return Err(PixelError::ZeroSized);
        }
        Ok(RateReport {
            bits,
            bpp: bits as f64 / (width * height) as f64,
        })
    }

    pub fn for_image(bits: u64, img: &PlanarImage) -> Self {
        let (w, h) = img.original_size();
        RateReport {
            bits,
            bpp: bits as f64 / (w * h) as f64,
        }
    }
}

/// Read an 8-bit PNG or binary PPM into a padded RGB image.
pub fn load_image(path: impl AsRef<Path>) -> Result<PlanarImage, PixelError> {
    let path = path.as_ref();
    let unreadable = |reason: String| PixelError::Unreadable {
        path: path.to_path_buf(),
        reason,
    };
    let reader = image::ImageReader::open(path)
        .map_err(|e| unreadable(e.to_string()))?
        .with_guessed_format()
        .map_err(|e| unreadable(e.to_string()))?;
    let decoded = reader.decode().map_err(|e| unreadable(e.to_string()))?;
    use image::DynamicImage as D;
    match decoded {
        D::ImageLuma8(_) | D::ImageLumaA8(_) | D::ImageRgb8(_) | D::ImageRgba8(_) => {}
        _ => {
            return Err(PixelError::UnsupportedBitDepth {
                path: path.to_path_buf(),
            })
        }
    }
    let rgb = decoded.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    if w == 0 || h == 0 {
        return Err(PixelError::ZeroSized);
    }
    PlanarImage::from_rgb8(w, h, rgb.as_raw())
}

/// Write the original-size crop as PNG, or as binary PPM when the extension
/// is `.ppm`/`.pnm`.
pub fn save_image(img: &PlanarImage, path: impl AsRef<Path>) -> Result<(), PixelError> {
    let path = path.as_ref();
    let rgb = match img.colorspace() {
        ColorSpace::Rgb => img.to_rgb8()?,
        ColorSpace::YCbCr420 => ycbcr420_to_rgb(img)?.to_rgb8()?,
    };
    let (w, h) = img.original_size();
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase);
    if matches!(ext.as_deref(), Some("ppm" | "pnm")) {
        let mut f = fs::File::create(path)?;
        write!(f, "P6\n{w} {h}\n255\n")?;
        f.write_all(&rgb)?;
        return Ok(());
    }
    image::save_buffer_with_format(
        path,
        &rgb,
        w as u32,
        h as u32,
        image::ExtendedColorType::Rgb8,
        image::ImageFormat::Png,
    )
    .map_err(|e| match e {
        image::ImageError::IoError(io) => PixelError::Io(io),
        other => PixelError::Io(std::io::Error::other(other.to_string())),
    })
}

pub fn write_yuv420(img: &PlanarImage, path: impl AsRef<Path>) -> Result<(), PixelError> {
    fs::write(path, img.to_yuv420_bytes()?)?;
    Ok(())
}

pub fn read_yuv420(
    path: impl AsRef<Path>,
    width: usize,
    height: usize,
) -> Result<PlanarImage, PixelError> {
    let bytes = fs::read(path)?;
    PlanarImage::from_yuv420_bytes(width, height, &bytes)
}

/// BT.601 full-range forward transform of a single pixel.
#[inline]
pub fn rgb_to_ycbcr_pixel(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let y = KR * r + KG * g + KB * b;
    (y, 0.5 + (b - y) * CB_SCALE, 0.5 + (r - y) * CR_SCALE)
}

/// Inverse of [`rgb_to_ycbcr_pixel`] using the same constants.
#[inline]
pub fn ycbcr_to_rgb_pixel(y: f64, cb: f64, cr: f64) -> (f64, f64, f64) {
    let r = y + (cr - 0.5) / CR_SCALE;
    let b = y + (cb - 0.5) / CB_SCALE;
    let g = (y - KR * r - KB * b) / KG;
    (r, g, b)
}

/// Luma of an RGB image, full resolution.
pub fn luma(img: &PlanarImage) -> Result<Plane, PixelError> {
    match img.colorspace() {
        ColorSpace::YCbCr420 => Ok(img.plane(0).clone()),
        ColorSpace::Rgb => {
            let (r, g, b) = (img.plane(0), img.plane(1), img.plane(2));
            let data = r
                .data()
                .iter()
                .zip(g.data())
                .zip(b.data())
                .map(|((&r, &g), &b)| KR * r + KG * g + KB * b)
                .collect();
            Plane::new(img.width(), img.height(), data)
        }
    }
}

pub fn rgb_to_ycbcr420(img: &PlanarImage) -> Result<PlanarImage, PixelError> {
    img.expect(ColorSpace::Rgb)?;
    let (w, h) = (img.width(), img.height());
    let (r, g, b) = (img.plane(0), img.plane(1), img.plane(2));
    let mut y = Vec::with_capacity(w * h);
    let mut cb_full = Vec::with_capacity(w * h);
    let mut cr_full = Vec::with_capacity(w * h);
    for i in 0..w * h {
        let (yy, cb, cr) = rgb_to_ycbcr_pixel(r.data[i], g.data[i], b.data[i]);
        y.push(yy);
        cb_full.push(cb);
        cr_full.push(cr);
    }
    let (cw, ch) = (w / 2, h / 2);
    let box_avg = |full: &[f64]| -> Vec<f64> {
        let mut out = Vec::with_capacity(cw * ch);
        for cy in 0..ch {
            for cx in 0..cw {
                let i = 2 * cy * w + 2 * cx;
                out.push((full[i] + full[i + 1] + full[i + w] + full[i + w + 1]) / 4.0);
            }
        }
        out
    };
    let planes = vec![
        Plane::new(w, h, y)?,
        Plane::new(cw, ch, box_avg(&cb_full))?,
        Plane::new(cw, ch, box_avg(&cr_full))?,
    ];
    let out = PlanarImage::from_planes(ColorSpace::YCbCr420, w, h, planes)?;
    out.with_original_size(img.original_width, img.original_height)
}

/// Nearest-neighbour chroma upsample and inverse matrix, without clamping.
pub fn ycbcr420_to_rgb_unclamped(img: &PlanarImage) -> Result<PlanarImage, PixelError> {
    img.expect(ColorSpace::YCbCr420)?;
    let (w, h) = (img.width(), img.height());
    let (yp, cbp, crp) = (img.plane(0), img.plane(1), img.plane(2));
    let mut r = Vec::with_capacity(w * h);
    let mut g = Vec::with_capacity(w * h);
    let mut b = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let (rr, gg, bb) =
                ycbcr_to_rgb_pixel(yp.get(x, y), cbp.get(x / 2, y / 2), crp.get(x / 2, y / 2));
            r.push(rr);
            g.push(gg);
            b.push(bb);
        }
    }
    let planes = vec![Plane::new(w, h, r)?, Plane::new(w, h, g)?, Plane::new(w, h, b)?];
    let out = PlanarImage::from_planes(ColorSpace::Rgb, w, h, planes)?;
    out.with_original_size(img.original_width, img.original_height)
}

pub fn ycbcr420_to_rgb(img: &PlanarImage) -> Result<PlanarImage, PixelError> {
    Ok(ycbcr420_to_rgb_unclamped(img)?.clamped())
}
