//! Reading and writing images as `[0, 1]` floating-point planes.

use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma, Rgb};

use crate::error::{DeblurError, Result};
use crate::image::Image;

/// Bit depth for written files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BitDepth {
    Eight,
    #[default]
    Sixteen,
}

impl std::str::FromStr for BitDepth {
    type Err = DeblurError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "8" => Ok(BitDepth::Eight),
            "16" => Ok(BitDepth::Sixteen),
            other => Err(DeblurError::Parse(format!(
                "bit depth must be 8 or 16, got {other}"
            ))),
        }
    }
}

fn from_dynamic(img: DynamicImage) -> Result<Image> {
    let gray = matches!(
        img,
        DynamicImage::ImageLuma8(_)
            | DynamicImage::ImageLumaA8(_)
            | DynamicImage::ImageLuma16(_)
            | DynamicImage::ImageLumaA16(_)
    );
    let (w, h) = (img.width() as usize, img.height() as usize);
    if gray {
        let buf = img.into_luma16();
        let data = buf
            .into_raw()
            .into_iter()
            .map(|v| v as f64 / 65535.0)
            .collect();
        Image::new(w, h, 1, data)
    } else {
        let buf = img.into_rgb16();
        let raw = buf.into_raw();
        let n = w * h;
        let mut data = vec![0.0; 3 * n];
        for (i, px) in raw.chunks_exact(3).enumerate() {
            for c in 0..3 {
                data[c * n + i] = px[c] as f64 / 65535.0;
            }
        }
        Image::new(w, h, 3, data)
    }
}

/// Loads a PNG, PGM or PPM file. Grayscale files give one channel, everything
/// else three; alpha is dropped.
pub fn read_image(path: impl AsRef<Path>) -> Result<Image> {
    let img = image::ImageReader::open(path.as_ref())?
        .with_guessed_format()?
        .decode()?;
    from_dynamic(img)
}

fn quantize(v: f64, max: f64) -> f64 {
    (v.clamp(0.0, 1.0) * max).round()
}

/// Writes an image, clamping to `[0, 1]`. The format follows the extension.
pub fn write_image(img: &Image, path: impl AsRef<Path>, depth: BitDepth) -> Result<()> {
    img.ensure_finite("image to write")?;
    let (w, h) = (img.width() as u32, img.height() as u32);
    let n = img.pixel_count();
    let d = img.data();
    let dynamic = match (img.channels(), depth) {
        (1, BitDepth::Eight) => DynamicImage::ImageLuma8(
            ImageBuffer::<Luma<u8>, _>::from_raw(
                w,
                h,
                d.iter().map(|&v| quantize(v, 255.0) as u8).collect(),
            )
            .expect("buffer size matches"),
        ),
        (1, BitDepth::Sixteen) => DynamicImage::ImageLuma16(
            ImageBuffer::<Luma<u16>, _>::from_raw(
                w,
                h,
                d.iter().map(|&v| quantize(v, 65535.0) as u16).collect(),
            )
            .expect("buffer size matches"),
        ),
        (_, BitDepth::Eight) => {
            let raw = (0..n)
                .flat_map(|i| (0..3).map(move |c| quantize(d[c * n + i], 255.0) as u8))
                .collect();
            DynamicImage::ImageRgb8(
                ImageBuffer::<Rgb<u8>, _>::from_raw(w, h, raw).expect("buffer size matches"),
            )
        }
        (_, BitDepth::Sixteen) => {
            let raw = (0..n)
                .flat_map(|i| (0..3).map(move |c| quantize(d[c * n + i], 65535.0) as u16))
                .collect();
            DynamicImage::ImageRgb16(
                ImageBuffer::<Rgb<u16>, _>::from_raw(w, h, raw).expect("buffer size matches"),
            )
        }
    };
    dynamic.save(path.as_ref())?;
    Ok(())
}

/// Loads an 8-bit grayscale mask into `[0, 1]` weights.
pub fn read_mask(path: impl AsRef<Path>) -> Result<Image> {
    let img = image::ImageReader::open(path.as_ref())?
        .with_guessed_format()?
        .decode()?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = img
        .into_luma8()
        .into_raw()
        .into_iter()
        .map(|v| v as f64 / 255.0)
        .collect();
    Image::new(w, h, 1, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(channels: usize) -> Image {
        let (w, h) = (7, 5);
        let n = w * h;
        let data = (0..channels * n)
            .map(|i| i as f64 / (channels * n - 1) as f64)
            .collect();
        Image::new(w, h, channels, data).unwrap()
    }

    #[test]
    fn sixteen_bit_png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        for channels in [1, 3] {
            let img = ramp(channels);
            let path = dir.path().join(format!("r{channels}.png"));
            write_image(&img, &path, BitDepth::Sixteen).unwrap();
            let back = read_image(&path).unwrap();
            assert_eq!(back.channels(), channels);
            assert!(back.max_abs_diff(&img) <= 0.5 / 65535.0 + 1e-12);
        }
    }

    #[test]
    fn eight_bit_and_pnm() {
        let dir = tempfile::tempdir().unwrap();
        let gray = ramp(1);
        let path = dir.path().join("g.pgm");
        write_image(&gray, &path, BitDepth::Eight).unwrap();
        let back = read_image(&path).unwrap();
        assert!(back.max_abs_diff(&gray) <= 0.5 / 255.0 + 1e-12);

        let rgb = ramp(3);
        let path = dir.path().join("c.ppm");
        write_image(&rgb, &path, BitDepth::Eight).unwrap();
        assert_eq!(read_image(&path).unwrap().channels(), 3);
    }

    #[test]
    fn out_of_range_values_are_clamped() {
        let dir = tempfile::tempdir().unwrap();
        let img = Image::new(2, 1, 1, vec![-0.3, 1.7]).unwrap();
        let path = dir.path().join("c.png");
        write_image(&img, &path, BitDepth::Sixteen).unwrap();
        assert_eq!(read_image(&path).unwrap().data(), &[0.0, 1.0]);
    }

    #[test]
    fn mask_loading() {
        let dir = tempfile::tempdir().unwrap();
        let img = Image::new(2, 1, 1, vec![0.0, 1.0]).unwrap();
        let path = dir.path().join("m.png");
        write_image(&img, &path, BitDepth::Eight).unwrap();
        assert_eq!(read_mask(&path).unwrap().data(), &[0.0, 1.0]);
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(
            read_image("/nonexistent/x.png"),
            Err(DeblurError::Io(_))
        ));
        assert!("12".parse::<BitDepth>().is_err());
    }
}
