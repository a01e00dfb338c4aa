//! On-disk formats: the `BMAP` blur-field container, float TIFF images and
//! 8-bit grayscale blur maps.
//!
//! `BMAP` layout, all integers little-endian:
//!
//! ```text
//! offset  size     field
//! 0       4        magic "BMAP"
//! 4       1        version (1)
//! 5       4        height (u32)
//! 9       4        width (u32)
//! 13      4*H*W    radii, f32, row-major
//! ```

use std::fs;
use std::path::Path;

use image::{DynamicImage, ImageBuffer, ImageFormat, Luma, Rgb};

use crate::error::{Error, FormatError, Result};
use crate::image::ImageGrid;
use crate::kernels::{BlurField, MAX_RADIUS};

pub const BMAP_MAGIC: [u8; 4] = *b"BMAP";
pub const BMAP_VERSION: u8 = 1;
pub const BMAP_HEADER_LEN: usize = 13;

/// Radius assigned to gray level 255 when importing 8-bit blur maps.
pub const GRAY_FULL_SCALE_RADIUS: f64 = MAX_RADIUS;

pub fn encode_field(field: &BlurField) -> Vec<u8> {
    let mut out = Vec::with_capacity(BMAP_HEADER_LEN + 4 * field.radii().len());
    out.extend_from_slice(&BMAP_MAGIC);
    out.push(BMAP_VERSION);
    out.extend_from_slice(&(field.height() as u32).to_le_bytes());
    out.extend_from_slice(&(field.width() as u32).to_le_bytes());
    for r in field.radii() {
        out.extend_from_slice(&r.to_le_bytes());
    }
    out
}

pub fn decode_field(bytes: &[u8]) -> Result<BlurField, FormatError> {
    if bytes.len() < 4 {
        return Err(FormatError::Truncated {
            expected: BMAP_HEADER_LEN,
            actual: bytes.len(),
        });
    }
    let magic: [u8; 4] = bytes[..4].try_into().expect("four bytes");
    if magic != BMAP_MAGIC {
        return Err(FormatError::BadMagic(magic));
    }
    if bytes.len() < BMAP_HEADER_LEN {
        return Err(FormatError::Truncated {
            expected: BMAP_HEADER_LEN,
            actual: bytes.len(),
        });
    }
    if bytes[4] != BMAP_VERSION {
        return Err(FormatError::UnsupportedVersion(bytes[4]));
    }
    let height = u32::from_le_bytes(bytes[5..9].try_into().expect("four bytes"));
    let width = u32::from_le_bytes(bytes[9..13].try_into().expect("four bytes"));
    let count = (height as usize)
        .checked_mul(width as usize)
        .filter(|&n| n > 0 && n <= (usize::MAX - BMAP_HEADER_LEN) / 4)
        .ok_or(FormatError::BadDimensions { height, width })?;
    let expected = BMAP_HEADER_LEN + 4 * count;
    if bytes.len() < expected {
        return Err(FormatError::Truncated {
            expected,
            actual: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(FormatError::TrailingBytes {
            extra: bytes.len() - expected,
        });
    }
    let radii: Vec<f32> = bytes[BMAP_HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("four bytes")))
        .collect();
    if let Some((index, &value)) = radii
        .iter()
        .enumerate()
        .find(|(_, r)| !(r.is_finite() && (0.0..=MAX_RADIUS as f32).contains(*r)))
    {
        return Err(FormatError::RadiusOutOfRange { index, value });
    }
    Ok(BlurField::new(height as usize, width as usize, radii).expect("validated radii"))
}

pub fn write_field(path: impl AsRef<Path>, field: &BlurField) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_field(field)).map_err(|e| Error::io(path, e))
}

pub fn read_field(path: impl AsRef<Path>) -> Result<BlurField> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(decode_field(&bytes)?)
}

fn codec(path: &Path, source: image::ImageError) -> Error {
    match source {
        image::ImageError::IoError(e) => Error::io(path, e),
        other => Error::Codec {
            path: path.to_path_buf(),
            source: other,
        },
    }
}

fn interleaved_rgb(image: &ImageGrid) -> Vec<f32> {
    let rgb = image.to_rgb();
    let n = rgb.pixels();
    let mut buf = Vec::with_capacity(3 * n);
    for p in 0..n {
        for c in 0..3 {
            buf.push(rgb.plane(c)[p] as f32);
        }
    }
    buf
}

/// Writes `image` as a 32-bit float RGB TIFF. Values round to `f32`.
pub fn write_image_f32(path: impl AsRef<Path>, image: &ImageGrid) -> Result<()> {
    let path = path.as_ref();
    let buf: ImageBuffer<Rgb<f32>, Vec<f32>> = ImageBuffer::from_raw(
        image.width() as u32,
        image.height() as u32,
        interleaved_rgb(image),
    )
    .expect("buffer length matches dimensions");
    DynamicImage::ImageRgb32F(buf)
        .save_with_format(path, ImageFormat::Tiff)
        .map_err(|e| codec(path, e))
}

/// Writes `image` as 8-bit RGB in the format implied by the extension.
pub fn write_image_u8(path: impl AsRef<Path>, image: &ImageGrid) -> Result<()> {
    let path = path.as_ref();
    let data: Vec<u8> = interleaved_rgb(image)
        .into_iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let buf: ImageBuffer<Rgb<u8>, Vec<u8>> =
        ImageBuffer::from_raw(image.width() as u32, image.height() as u32, data)
            .expect("buffer length matches dimensions");
    buf.save(path).map_err(|e| codec(path, e))
}

/// Writes float TIFF for `.tif`/`.tiff` paths and 8-bit otherwise.
pub fn write_image(path: impl AsRef<Path>, image: &ImageGrid) -> Result<()> {
    let path = path.as_ref();
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
    {
        Some(e) if e == "tif" || e == "tiff" => write_image_f32(path, image),
        _ => write_image_u8(path, image),
    }
}

fn grid_from_dynamic(img: DynamicImage) -> ImageGrid {
    let rgb = match img {
        DynamicImage::ImageRgb32F(buf) => buf,
        other => other.to_rgb32f(),
    };
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let raw = rgb.into_raw();
    ImageGrid::from_fn(h, w, 3, |c, y, x| {
        (raw[(y * w + x) * 3 + c] as f64).clamp(0.0, 1.0)
    })
    .expect("decoded samples are finite")
}

/// Reads any supported raster as RGB in [0, 1]. Integer formats are scaled
/// by their maximum code value; float data is clamped.
pub fn read_image(path: impl AsRef<Path>) -> Result<ImageGrid> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|e| codec(path, e))?;
    Ok(grid_from_dynamic(img))
}

pub fn decode_image(bytes: &[u8], path_hint: impl AsRef<Path>) -> Result<ImageGrid> {
    let img = image::load_from_memory(bytes).map_err(|e| codec(path_hint.as_ref(), e))?;
    Ok(grid_from_dynamic(img))
}

/// Imports an 8-bit grayscale blur map: gray level `g` becomes radius
/// `6 g / 255`. Color rasters are reduced to luma first.
pub fn read_gray_map(path: impl AsRef<Path>) -> Result<BlurField> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|e| codec(path, e))?;
    if !matches!(img, DynamicImage::ImageLuma8(_)) {
        log::warn!(
            "{} is not 8-bit grayscale; converting to luma",
            path.display()
        );
    }
    let luma = img.to_luma8();
    let (w, h) = (luma.width() as usize, luma.height() as usize);
    let radii: Vec<f64> = luma
        .into_raw()
        .into_iter()
        .map(|g| g as f64 * GRAY_FULL_SCALE_RADIUS / 255.0)
        .collect();
    BlurField::from_f64_clamped(h, w, &radii)
}

/// Writes `field` as an 8-bit grayscale raster (inverse of [`read_gray_map`]
/// up to quantization).
pub fn write_gray_map(path: impl AsRef<Path>, field: &BlurField) -> Result<()> {
    let path = path.as_ref();
    let data: Vec<u8> = field
        .to_f64()
        .iter()
        .map(|r| {
            (r / GRAY_FULL_SCALE_RADIUS * 255.0)
                .round()
                .clamp(0.0, 255.0) as u8
        })
        .collect();
    let buf: ImageBuffer<Luma<u8>, Vec<u8>> =
        ImageBuffer::from_raw(field.width() as u32, field.height() as u32, data)
            .expect("buffer length matches");
    buf.save(path).map_err(|e| codec(path, e))
}

/// Loads a blur map from either a `BMAP` file (sniffed by magic) or an
/// 8-bit grayscale raster.
pub fn load_blur_map(path: impl AsRef<Path>) -> Result<BlurField> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(&BMAP_MAGIC) {
        Ok(decode_field(&bytes)?)
    } else {
        read_gray_map(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenes::textured_scene;

    fn sample_field() -> BlurField {
        BlurField::from_f64_clamped(
            5,
            7,
            &(0..35)
                .map(|i| (i as f64 * 0.173) % 6.0)
                .collect::<Vec<_>>(),
        )
        .unwrap()
    }

    #[test]
    fn bmap_round_trip_is_bit_exact() {
        let f = sample_field();
        let bytes = encode_field(&f);
        assert_eq!(bytes.len(), BMAP_HEADER_LEN + 4 * 35);
        let back = decode_field(&bytes).unwrap();
        assert_eq!(back.shape(), f.shape());
        for (a, b) in back.radii().iter().zip(f.radii()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn bmap_errors_are_distinct() {
        let good = encode_field(&sample_field());

        let mut bad = good.clone();
        bad[0] = b'X';
        assert_eq!(decode_field(&bad).unwrap_err().code(), 1);

        let mut bad = good.clone();
        bad[4] = 2;
        assert_eq!(
            decode_field(&bad).unwrap_err(),
            FormatError::UnsupportedVersion(2)
        );

        let err = decode_field(&good[..good.len() - 3]).unwrap_err();
        assert!(matches!(err, FormatError::Truncated { .. }));
        assert_eq!(decode_field(&good[..8]).unwrap_err().code(), 3);

        let mut bad = good.clone();
        bad.push(0);
        assert_eq!(
            decode_field(&bad).unwrap_err(),
            FormatError::TrailingBytes { extra: 1 }
        );

        let mut bad = good.clone();
        bad[5..9].copy_from_slice(&0u32.to_le_bytes());
        assert_eq!(decode_field(&bad).unwrap_err().code(), 5);

        let mut bad = good.clone();
        bad[BMAP_HEADER_LEN + 8..BMAP_HEADER_LEN + 12].copy_from_slice(&7.0f32.to_le_bytes());
        assert_eq!(
            decode_field(&bad).unwrap_err(),
            FormatError::RadiusOutOfRange {
                index: 2,
                value: 7.0
            }
        );

        let mut bad = good;
        bad[BMAP_HEADER_LEN..BMAP_HEADER_LEN + 4].copy_from_slice(&f32::NAN.to_le_bytes());
        assert_eq!(decode_field(&bad).unwrap_err().code(), 6);
    }

    #[test]
    fn float_tiff_round_trip_is_exact_after_f32_rounding() {
        let dir = tempfile::tempdir().unwrap();
        let mut img = textured_scene(9, 13, 4);
        img.round_to_f32();
        let path = dir.path().join("x.tiff");
        write_image(&path, &img).unwrap();
        assert_eq!(read_image(&path).unwrap(), img);
    }

    #[test]
    fn png_round_trip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let img = textured_scene(9, 13, 5);
        let path = dir.path().join("x.png");
        write_image(&path, &img).unwrap();
        let back = read_image(&path).unwrap();
        for (a, b) in back.data().iter().zip(img.data()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-7);
        }
    }

    #[test]
    fn gray_map_scales_255_to_six() {
        let dir = tempfile::tempdir().unwrap();
        let f = sample_field();
        let path = dir.path().join("m.png");
        write_gray_map(&path, &f).unwrap();
        let back = load_blur_map(&path).unwrap();
        for (a, b) in back.to_f64().iter().zip(f.to_f64()) {
            assert!((a - b).abs() <= 3.0 / 255.0 + 1e-6);
        }
        let bmap = dir.path().join("m.bmap");
        write_field(&bmap, &f).unwrap();
        assert_eq!(load_blur_map(&bmap).unwrap(), f);
    }

    #[test]
    fn missing_and_corrupt_files_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            read_field(dir.path().join("nope")),
            Err(Error::Io { .. })
        ));
        let junk = dir.path().join("junk.png");
        fs::write(&junk, b"not an image").unwrap();
        assert!(matches!(read_image(&junk), Err(Error::Codec { .. })));
    }
}
