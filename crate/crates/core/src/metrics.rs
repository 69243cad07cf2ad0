//! Image quality metrics on magnitude images normalized by the reference
//! maximum.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::contrastive::{cosine_sim, ContrastiveConfig, Level};
use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::mri::ComplexImage;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn check_same(a: &ComplexImage, b: &ComplexImage) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dim(format!(
            "metric inputs differ in shape: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// Magnitudes of `test` and `reference`, both divided by the reference max.
pub fn normalized_magnitudes(test: &ComplexImage, reference: &ComplexImage) -> Result<(Vec<f64>, Vec<f64>)> {
    check_same(test, reference)?;
    let r = reference.magnitude();
    let max = r.iter().cloned().fold(0.0, f64::max);
    if !(max > 0.0) || !max.is_finite() {
        return Err(Error::invalid("reference image has no positive finite maximum"));
    }
    let t = test.magnitude().iter().map(|v| v / max).collect();
    Ok((t, r.iter().map(|v| v / max).collect()))
}

/// PSNR in dB of two magnitude arrays with unit peak; `+∞` when equal.
pub fn psnr_values(test: &[f64], reference: &[f64]) -> Result<f64> {
    if test.len() != reference.len() || test.is_empty() {
        return Err(Error::dim("psnr inputs must be non-empty and equally long"));
    }
    let mse = test.iter().zip(reference).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / test.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(-10.0 * mse.log10())
}

pub fn psnr(test: &ComplexImage, reference: &ComplexImage) -> Result<f64> {
    let (t, r) = normalized_magnitudes(test, reference)?;
    psnr_values(&t, &r)
}

fn gaussian_window() -> Vec<f64> {
    let c = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-(i as f64 - c).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.iter().map(|v| v / s).collect()
}

/// Separable "valid" filtering with the normalized Gaussian window.
fn filter_valid(x: &[f64], h: usize, w: usize, g: &[f64]) -> Vec<f64> {
    let k = g.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x0 in 0..ow {
            rows[y * ow + x0] = (0..k).map(|i| g[i] * x[y * w + x0 + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y0 in 0..oh {
        for x0 in 0..ow {
            out[y0 * ow + x0] = (0..k).map(|i| g[i] * rows[(y0 + i) * ow + x0]).sum();
        }
    }
    out
}

/// Mean local SSIM of two `h × w` arrays with dynamic range 1.
pub fn ssim_values(test: &[f64], reference: &[f64], h: usize, w: usize) -> Result<f64> {
    if test.len() != h * w || reference.len() != h * w {
        return Err(Error::dim("ssim inputs do not match the given shape"));
    }
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::invalid(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {h}x{w}"
        )));
    }
    let g = gaussian_window();
    let prod = |a: &[f64], b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(x, y)| x * y).collect() };
    let mx = filter_valid(test, h, w, &g);
    let my = filter_valid(reference, h, w, &g);
    let sxx = filter_valid(&prod(test, test), h, w, &g);
    let syy = filter_valid(&prod(reference, reference), h, w, &g);
    let sxy = filter_valid(&prod(test, reference), h, w, &g);
    let c1 = (SSIM_K1 * 1.0f64).powi(2);
    let c2 = (SSIM_K2 * 1.0f64).powi(2);
    let n = mx.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (a, b) = (mx[i], my[i]);
            let vx = sxx[i] - a * a;
            let vy = syy[i] - b * b;
            let cxy = sxy[i] - a * b;
            ((2.0 * a * b + c1) * (2.0 * cxy + c2)) / ((a * a + b * b + c1) * (vx + vy + c2))
        })
        .sum();
    Ok(total / n as f64)
}

pub fn ssim(test: &ComplexImage, reference: &ComplexImage) -> Result<f64> {
    let (t, r) = normalized_magnitudes(test, reference)?;
    ssim_values(&t, &r, test.height, test.width)
}

/// Mean Sobel gradient magnitude over interior pixels of an `h × w` array.
pub fn tenengrad_values(mag: &[f64], h: usize, w: usize) -> Result<f64> {
    if mag.len() != h * w {
        return Err(Error::dim("tenengrad input does not match the given shape"));
    }
    if h < 3 || w < 3 {
        return Err(Error::invalid(format!("tenengrad needs at least 3x3 pixels, got {h}x{w}")));
    }
    let p = |y: usize, x: usize| mag[y * w + x];
    let mut total = 0.0;
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let gx = (p(y - 1, x + 1) + 2.0 * p(y, x + 1) + p(y + 1, x + 1))
                - (p(y - 1, x - 1) + 2.0 * p(y, x - 1) + p(y + 1, x - 1));
            let gy = (p(y + 1, x - 1) + 2.0 * p(y + 1, x) + p(y + 1, x + 1))
                - (p(y - 1, x - 1) + 2.0 * p(y - 1, x) + p(y - 1, x + 1));
            total += (gx * gx + gy * gy).sqrt();
        }
    }
    Ok(total / ((h - 2) * (w - 2)) as f64)
}

/// Tenengrad of `test` normalized by the maximum of `reference`.
pub fn tenengrad(test: &ComplexImage, reference: &ComplexImage) -> Result<f64> {
    let (t, _) = normalized_magnitudes(test, reference)?;
    tenengrad_values(&t, test.height, test.width)
}

/// `Σ_level w_level (1 − cos(e_level(a), e_level(b)))` under a frozen encoder.
pub fn feature_distance(a: &ComplexImage, b: &ComplexImage, encoder: &Encoder) -> Result<f64> {
    check_same(a, b)?;
    let cfg = ContrastiveConfig::default();
    let (ea, eb) = (encoder.encode_image(a)?, encoder.encode_image(b)?);
    let mut d = 0.0;
    for level in Level::IMAGE {
        let c = cosine_sim(ea.get(level).expect("image level"), eb.get(level).expect("image level"))?;
        d += cfg.weight(level) * (1.0 - c).max(0.0);
    }
    Ok(d)
}

/// Per-pixel population standard deviation across `images`, each
/// magnitude normalized by the maximum of `reference`.
pub fn pixel_std_map(images: &[ComplexImage], reference: &ComplexImage) -> Result<Vec<f64>> {
    if images.len() < 2 {
        return Err(Error::invalid("pixel std needs at least two images"));
    }
    let mags = images
        .iter()
        .map(|img| normalized_magnitudes(img, reference).map(|(t, _)| t))
        .collect::<Result<Vec<_>>>()?;
    let n = mags.len() as f64;
    // shifted by the first image so identical inputs give exactly zero
    Ok((0..reference.len())
        .map(|p| {
            let d: Vec<f64> = mags.iter().map(|m| m[p] - mags[0][p]).collect();
            let mean = d.iter().sum::<f64>() / n;
            (d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub psnr: f64,
    pub ssim: f64,
    pub tenengrad: f64,
    pub feature_distance: Option<f64>,
}

impl MetricReport {
    pub fn compute(test: &ComplexImage, reference: &ComplexImage, encoder: Option<&Encoder>) -> Result<Self> {
        let (t, r) = normalized_magnitudes(test, reference)?;
        Ok(Self {
            psnr: psnr_values(&t, &r)?,
            ssim: ssim_values(&t, &r, test.height, test.width)?,
            tenengrad: tenengrad_values(&t, test.height, test.width)?,
            feature_distance: encoder.map(|e| feature_distance(test, reference, e)).transpose()?,
        })
    }
}

/// One row of the metrics CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub run_id: String,
    pub method: String,
    pub backbone: String,
    #[serde(rename = "R")]
    pub r: f64,
    pub psnr: f64,
    pub ssim: f64,
    pub tenengrad: f64,
    pub feature_distance: Option<f64>,
}

impl MetricRow {
    pub fn new(run_id: &str, method: &str, backbone: &str, r: f64, m: &MetricReport) -> Self {
        Self {
            run_id: run_id.to_owned(),
            method: method.to_owned(),
            backbone: backbone.to_owned(),
            r,
            psnr: m.psnr,
            ssim: m.ssim,
            tenengrad: m.tenengrad,
            feature_distance: m.feature_distance,
        }
    }
}

/// Appends rows to `path`, writing the header when the file is new or empty.
pub fn append_metrics_csv(path: &Path, rows: &[MetricRow]) -> Result<()> {
    let fresh = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
    for row in rows {
        w.serialize(row).map_err(|e| Error::format(path, e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    r.deserialize()
        .map(|row| row.map_err(|e| Error::format(path, e.to_string())))
        .collect()
}
