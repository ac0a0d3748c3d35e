//! Grayscale PGM images (P2 ASCII and P5 binary). Intensities are scaled to
//! `[0, 1]` by the file's maxval on read and to maxval 255 on write.

use std::io::Cursor;
use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder, ImageFormat};
use myoseg_core::{BinaryMask, Image2D};

use crate::error::CliError;

pub fn decode(bytes: &[u8], path: &Path) -> Result<Image2D, CliError> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Pnm)
        .map_err(|e| CliError::format("PGM image", path, e.to_string()))?;
    if img.color().channel_count() != 1 {
        return Err(CliError::format("PGM image", path, "not a grayscale image"));
    }
    let luma = img.to_luma16();
    let (w, h) = (luma.width() as usize, luma.height() as usize);
    let data = luma.as_raw().iter().map(|&v| v as f64 / 65535.0).collect();
    Ok(Image2D::new(w, h, data)?)
}

pub fn read(path: &Path) -> Result<Image2D, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    decode(&bytes, path)
}

/// Encodes with maxval 255; values are clamped to `[0, 1]` and rounded.
pub fn encode(img: &Image2D, ascii: bool) -> Vec<u8> {
    let bytes: Vec<u8> = img
        .data()
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let encoding = if ascii {
        SampleEncoding::Ascii
    } else {
        SampleEncoding::Binary
    };
    let mut out = Cursor::new(Vec::new());
    PnmEncoder::new(&mut out)
        .with_subtype(PnmSubtype::Graymap(encoding))
        .write_image(&bytes, img.width() as u32, img.height() as u32, ExtendedColorType::L8)
        .expect("in-memory PGM encoding");
    out.into_inner()
}

pub fn write(path: &Path, img: &Image2D) -> Result<(), CliError> {
    std::fs::write(path, encode(img, false)).map_err(|e| CliError::io(path, e))
}

pub fn write_mask(path: &Path, mask: &BinaryMask) -> Result<(), CliError> {
    write(path, &mask.to_image())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ascii_with_small_maxval() {
        let img = decode(b"P2\n# comment\n3 2\n15\n0 5 15\n10 3 1\n", Path::new("x")).unwrap();
        assert_eq!(img.dims(), (3, 2));
        assert!((img.get(1, 0) - 5.0 / 15.0).abs() < 1e-12);
        assert!((img.get(0, 1) - 10.0 / 15.0).abs() < 1e-12);
    }

    #[test]
    fn binary_round_trip_is_exact_on_255_levels() {
        let img = Image2D::from_fn(7, 5, |x, y| ((x * 31 + y * 17) % 256) as f64 / 255.0);
        for ascii in [false, true] {
            let back = decode(&encode(&img, ascii), Path::new("x")).unwrap();
            assert_eq!(back.dims(), img.dims());
            for (a, b) in img.data().iter().zip(back.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        assert!(encode(&img, false).starts_with(b"P5"));
        assert!(encode(&img, true).starts_with(b"P2"));
    }

    #[test]
    fn rejects_garbage() {
        assert!(matches!(
            decode(b"P7 nonsense", Path::new("x")),
            Err(CliError::Format { .. })
        ));
        let color = b"P3 1 1 255 1 2 3";
        assert!(decode(color, Path::new("x")).is_err());
    }
}
