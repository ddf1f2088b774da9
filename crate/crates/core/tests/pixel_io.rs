use std::io::Write;

use recompress_core::pixel::{load_image, save_image, ColorSpace, PixelError, PlanarImage};
use recompress_core::synth;

fn write_ppm(path: &std::path::Path, w: usize, h: usize) -> Vec<u8> {
    let rgb: Vec<u8> = (0..w * h * 3).map(|i| ((i * 7 + i / 3) % 256) as u8).collect();
    let mut f = std::fs::File::create(path).unwrap();
    write!(f, "P6\n{w} {h}\n255\n").unwrap();
    f.write_all(&rgb).unwrap();
    rgb
}

#[test]
fn odd_ppm_is_padded_and_remembers_size() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("odd.ppm");
    let rgb = write_ppm(&p, 500, 375);
    let img = load_image(&p).unwrap();
    assert_eq!((img.width(), img.height()), (512, 384));
    assert_eq!(img.original_size(), (500, 375));
    assert_eq!(img.colorspace(), ColorSpace::Rgb);
    assert_eq!(img.to_rgb8().unwrap(), rgb);
    // Padding replicates the last column and row.
    let r = img.plane(0);
    assert_eq!(r.get(511, 10), r.get(499, 10));
    assert_eq!(r.get(20, 383), r.get(20, 374));
}

#[test]
fn aligned_png_is_untouched() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("a.png");
    let img = synth::color_image(512, 512, 4).unwrap();
    save_image(&img, &p).unwrap();
    let back = load_image(&p).unwrap();
    assert_eq!((back.width(), back.height()), (512, 512));
    assert_eq!(back.original_size(), (512, 512));
    assert_eq!(back, img);
}

#[test]
fn round_trip_through_both_formats() {
    let dir = tempfile::tempdir().unwrap();
    let img = synth::color_image(37, 21, 11).unwrap();
    for name in ["x.png", "x.ppm"] {
        let p = dir.path().join(name);
        save_image(&img, &p).unwrap();
        let back = load_image(&p).unwrap();
        assert_eq!(back.original_size(), (37, 21));
        assert_eq!(back.to_rgb8().unwrap(), img.to_rgb8().unwrap(), "{name}");
    }
}

#[test]
fn truncated_png_is_unreadable() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("t.png");
    save_image(&synth::gray_image(64, 64, 1).unwrap(), &p).unwrap();
    let bytes = std::fs::read(&p).unwrap();
    std::fs::write(&p, &bytes[..bytes.len() / 2]).unwrap();
    let err = load_image(&p).unwrap_err();
    assert!(matches!(err, PixelError::Unreadable { .. }));
    assert!(err.to_string().starts_with("unreadable file"));
}

#[test]
fn missing_file_is_unreadable() {
    let err = load_image("/nonexistent/dir/none.png").unwrap_err();
    assert!(matches!(err, PixelError::Unreadable { .. }));
}

#[test]
fn sixteen_bit_png_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("deep.png");
    let buf: image::ImageBuffer<image::Rgb<u16>, Vec<u16>> =
        image::ImageBuffer::from_fn(8, 8, |x, y| image::Rgb([x as u16 * 4000, y as u16 * 4000, 0]));
    buf.save(&p).unwrap();
    let err = load_image(&p).unwrap_err();
    assert!(matches!(err, PixelError::UnsupportedBitDepth { .. }), "{err}");
}

#[test]
fn gray_png_loads_as_equal_channels() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("g.png");
    let buf = image::GrayImage::from_fn(20, 10, |x, y| image::Luma([(x * 10 + y) as u8]));
    buf.save(&p).unwrap();
    let img = load_image(&p).unwrap();
    assert_eq!(img.original_size(), (20, 10));
    assert_eq!(img.plane(0), img.plane(1));
    assert_eq!(img.plane(1), img.plane(2));
    let expect = PlanarImage::from_gray(20, 10, &buf.as_raw().iter().map(|&v| v as f64 / 255.0).collect::<Vec<_>>()).unwrap();
    assert_eq!(img, expect);
}
