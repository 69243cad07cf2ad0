use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use crate::error::{Error, Result};

/// Min-max normalizes `values` into 8-bit gray levels.
pub fn to_gray8(values: &[f64]) -> Vec<u8> {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let span = hi - lo;
    values
        .iter()
        .map(|&v| {
            if span > 0.0 {
                ((v - lo) / span * 255.0).round() as u8
            } else {
                0
            }
        })
        .collect()
}

pub fn write_gray_png(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    if pixels.len() != width * height {
        return Err(Error::dim("pixel buffer does not match PNG size"));
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    encoder.set_color(png::ColorType::Grayscale);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder
        .write_header()
        .map_err(|e| Error::format(path, e.to_string()))?;
    writer
        .write_image_data(pixels)
        .map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_rgb_png(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    if pixels.len() != 3 * width * height {
        return Err(Error::dim("pixel buffer does not match PNG size"));
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    encoder.set_color(png::ColorType::Rgb);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder
        .write_header()
        .map_err(|e| Error::format(path, e.to_string()))?;
    writer
        .write_image_data(pixels)
        .map_err(|e| Error::format(path, e.to_string()))
}

/// 8-bit grayscale PNG of a magnitude image, min-max normalized.
pub fn write_magnitude_png(
    path: &Path,
    height: usize,
    width: usize,
    magnitude: &[f64],
) -> Result<()> {
    write_gray_png(path, width, height, &to_gray8(magnitude))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn min_max_normalization() {
        assert_eq!(to_gray8(&[1.0, 2.0, 3.0]), vec![0, 128, 255]);
        assert_eq!(to_gray8(&[0.5, 0.5]), vec![0, 0]);
    }

    #[test]
    fn writes_a_readable_png() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.png");
        write_magnitude_png(&path, 2, 3, &[0.0, 0.2, 0.4, 0.6, 0.8, 1.0]).unwrap();
        let decoder = png::Decoder::new(std::io::BufReader::new(File::open(&path).unwrap()));
        let reader = decoder.read_info().unwrap();
        assert_eq!(reader.info().width, 3);
        assert_eq!(reader.info().height, 2);
    }
}
