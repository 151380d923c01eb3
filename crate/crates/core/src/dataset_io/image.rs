// SPDX-License-Identifier: Apache-2.0

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use image::{DynamicImage, ImageReader};

use crate::error::{Error, Result};
use crate::matrix::ImageMatrix;

const LUMA_R: f64 = 0.299;
const LUMA_G: f64 = 0.587;
const LUMA_B: f64 = 0.114;

/// ITU-R 601 luma of an 8-bit RGB triple.
#[inline]
pub fn luminance(r: u8, g: u8, b: u8) -> f64 {
    LUMA_R * f64::from(r) + LUMA_G * f64::from(g) + LUMA_B * f64::from(b)
}

/// Decodes an 8-bit grayscale or RGB(A) raster (PNG or any PNM flavour)
/// into a luminance matrix in `[0, 255]`. Alpha is ignored.
pub fn load_image(path: impl AsRef<Path>) -> Result<ImageMatrix> {
    let path = path.as_ref();
    let reader = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    let img = reader
        .decode()
        .map_err(|e| Error::Decode(format!("{}: {e}", path.display())))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    if w == 0 || h == 0 {
        return Err(Error::Decode(format!("{}: zero-sized image", path.display())));
    }
    let data: Vec<f64> = match img {
        DynamicImage::ImageLuma8(buf) => buf.into_raw().into_iter().map(f64::from).collect(),
        DynamicImage::ImageLumaA8(buf) => buf.pixels().map(|p| f64::from(p.0[0])).collect(),
        DynamicImage::ImageRgb8(buf) => buf.pixels().map(|p| luminance(p.0[0], p.0[1], p.0[2])).collect(),
        DynamicImage::ImageRgba8(buf) => buf.pixels().map(|p| luminance(p.0[0], p.0[1], p.0[2])).collect(),
        other => {
            return Err(Error::Decode(format!(
                "{}: unsupported pixel format {:?} (8-bit gray or RGB only)",
                path.display(),
                other.color()
            )))
        }
    };
    ImageMatrix::new(h, w, data)
}

/// Writes a binary 8-bit graymap (P5); values are rounded and clamped to `[0, 255]`.
pub fn save_graymap(path: impl AsRef<Path>, m: &ImageMatrix) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let bytes: Vec<u8> = m.data().iter().map(|&v| v.round().clamp(0.0, 255.0) as u8).collect();
    write!(out, "P5\n{} {}\n255\n", m.cols(), m.rows())
        .and_then(|_| out.write_all(&bytes))
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decodes_ascii_graymap() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.pgm");
        std::fs::write(&p, "P2\n2 2\n255\n0 255\n128 64\n").unwrap();
        let m = load_image(&p).unwrap();
        assert_eq!(m.shape(), (2, 2));
        assert_eq!(m.data(), &[0.0, 255.0, 128.0, 64.0]);
    }

    #[test]
    fn rgb_uses_rec601_weights() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("red.ppm");
        let mut bytes = b"P6\n1 1\n255\n".to_vec();
        bytes.extend_from_slice(&[255, 0, 0]);
        std::fs::write(&p, bytes).unwrap();
        let m = load_image(&p).unwrap();
        assert!((m[(0, 0)] - 76.245).abs() < 1e-9);
    }

    #[test]
    fn rgb_png_decodes_to_luma() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.png");
        let img = image::RgbImage::from_raw(2, 1, vec![0, 255, 0, 10, 20, 30]).unwrap();
        img.save(&p).unwrap();
        let m = load_image(&p).unwrap();
        assert!((m[(0, 0)] - 0.587 * 255.0).abs() < 1e-9);
        assert!((m[(0, 1)] - luminance(10, 20, 30)).abs() < 1e-12);
    }

    #[test]
    fn sixteen_bit_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("deep.pgm");
        let mut bytes = b"P5\n1 1\n65535\n".to_vec();
        bytes.extend_from_slice(&[1, 2]);
        std::fs::write(&p, bytes).unwrap();
        assert!(matches!(load_image(&p), Err(Error::Decode(_))));
    }

    #[test]
    fn missing_and_garbage_files_fail() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_image(dir.path().join("nope.pgm")), Err(Error::Io { .. })));
        let p = dir.path().join("junk.pgm");
        std::fs::write(&p, b"not an image").unwrap();
        assert!(load_image(&p).is_err());
    }

    #[test]
    fn graymap_roundtrip_is_identity() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.pgm");
        let m = ImageMatrix::from_fn(5, 7, |r, c| ((r * 37 + c * 11) % 256) as f64);
        save_graymap(&p, &m).unwrap();
        let back = load_image(&p).unwrap();
        assert_eq!(back, m);
        save_graymap(&p, &back).unwrap();
        assert_eq!(load_image(&p).unwrap(), m);
    }
}
