//! Multi-coil Cartesian MRI measurement model.
//!
//! The forward operator maps an image `I` to per-coil k-space
//! `S_j = M F C_j I`, with `F` the unitary 2-D DFT, `C_j` a pointwise coil
//! sensitivity and `M` a binary line mask. The adjoint and a Hermitian
//! CG solver for the normal equations live alongside.

mod cg;
mod fft;
mod mask;
mod operator;

pub use cg::{cg_solve, CgOutcome};
pub use fft::{fft2_unitary, ifft2_unitary};
pub use mask::{add_noise, generate_mask, SamplingMask};
pub use operator::{adjoint, apply_mask, forward_model, normal_op, zero_filled};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major complex image. Also used for single-coil k-space arrays.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexImage {
    pub height: usize,
    pub width: usize,
    pub data: Vec<Complex64>,
}

impl ComplexImage {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![Complex64::new(0.0, 0.0); height * width],
        }
    }

    pub fn new(height: usize, width: usize, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::dim(format!(
                "image data has {} values, expected {}x{}",
                data.len(),
                height,
                width
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn from_real(height: usize, width: usize, values: &[f64]) -> Result<Self> {
        Self::new(
            height,
            width,
            values.iter().map(|&v| Complex64::new(v, 0.0)).collect(),
        )
    }

    /// Builds an image from separate real and imaginary planes.
    pub fn from_planes(height: usize, width: usize, re: &[f64], im: &[f64]) -> Result<Self> {
        if re.len() != im.len() {
            return Err(Error::dim("real and imaginary planes differ in length"));
        }
        Self::new(
            height,
            width,
            re.iter()
                .zip(im)
                .map(|(&r, &i)| Complex64::new(r, i))
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn is_finite(&self) -> bool {
        self.data
            .iter()
            .all(|c| c.re.is_finite() && c.im.is_finite())
    }

    pub fn magnitude(&self) -> Vec<f64> {
        self.data.iter().map(|c| c.norm()).collect()
    }

    pub fn real_plane(&self) -> Vec<f64> {
        self.data.iter().map(|c| c.re).collect()
    }

    pub fn imag_plane(&self) -> Vec<f64> {
        self.data.iter().map(|c| c.im).collect()
    }

    /// `<self, other> = sum conj(self) * other`.
    pub fn inner(&self, other: &ComplexImage) -> Complex64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.data.iter().map(|c| c.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub fn scale(&self, s: f64) -> ComplexImage {
        ComplexImage {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|c| c * s).collect(),
        }
    }

    pub(crate) fn check_same_shape(&self, other: &ComplexImage, what: &str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::dim(format!(
                "{what}: {}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            )));
        }
        Ok(())
    }
}

/// Coil sensitivity maps, jointly normalized to unit sum-of-squares per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct CoilSensitivities {
    pub maps: Vec<ComplexImage>,
}

impl CoilSensitivities {
    pub const SOS_TOLERANCE: f64 = 1e-6;

    /// Wraps the maps after checking shape agreement and the sum-of-squares invariant.
    pub fn new(maps: Vec<ComplexImage>) -> Result<Self> {
        let coils = Self { maps };
        coils.validate()?;
        Ok(coils)
    }

    /// Single uniform coil of unit sensitivity.
    pub fn uniform(height: usize, width: usize) -> Self {
        Self {
            maps: vec![ComplexImage::new(
                height,
                width,
                vec![Complex64::new(1.0, 0.0); height * width],
            )
            .expect("shape is consistent")],
        }
    }

    pub fn n_coils(&self) -> usize {
        self.maps.len()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.maps.first().map(|m| m.shape()).unwrap_or((0, 0))
    }

    pub fn validate(&self) -> Result<()> {
        let first = self
            .maps
            .first()
            .ok_or_else(|| Error::invalid("at least one coil is required"))?;
        for m in &self.maps[1..] {
            first.check_same_shape(m, "coil maps")?;
        }
        for p in 0..first.len() {
            let sos: f64 = self.maps.iter().map(|m| m.data[p].norm_sqr()).sum();
            if (sos - 1.0).abs() > Self::SOS_TOLERANCE {
                return Err(Error::invalid(format!(
                    "coil sum-of-squares is {sos} at pixel {p}, expected 1"
                )));
            }
        }
        Ok(())
    }
}

/// Undersampled multi-coil measurements together with their acquisition model.
#[derive(Debug, Clone, PartialEq)]
pub struct AcquisitionData {
    pub kspace: Vec<ComplexImage>,
    pub mask: SamplingMask,
    pub coils: CoilSensitivities,
    pub noise_sigma: f64,
}

impl AcquisitionData {
    pub fn new(
        kspace: Vec<ComplexImage>,
        mask: SamplingMask,
        coils: CoilSensitivities,
        noise_sigma: f64,
    ) -> Result<Self> {
        let acq = Self {
            kspace,
            mask,
            coils,
            noise_sigma,
        };
        acq.validate()?;
        Ok(acq)
    }

    /// Simulates `M F C_j image + noise` for every coil.
    pub fn simulate(
        image: &ComplexImage,
        coils: &CoilSensitivities,
        mask: &SamplingMask,
        noise_sigma: f64,
        seed: u64,
    ) -> Result<Self> {
        let clean = forward_model(image, coils, mask)?;
        let kspace = add_noise(&clean, mask, noise_sigma, seed)?;
        Self::new(kspace, mask.clone(), coils.clone(), noise_sigma)
    }

    pub fn shape(&self) -> (usize, usize) {
        self.mask.shape()
    }

    pub fn validate(&self) -> Result<()> {
        if self.kspace.len() != self.coils.n_coils() {
            return Err(Error::dim(format!(
                "{} k-space arrays for {} coils",
                self.kspace.len(),
                self.coils.n_coils()
            )));
        }
        if self.coils.shape() != self.mask.shape() {
            return Err(Error::dim("coil maps and mask disagree in shape"));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::invalid("noise sigma must be non-negative"));
        }
        for k in &self.kspace {
            if k.shape() != self.mask.shape() {
                return Err(Error::dim("k-space and mask disagree in shape"));
            }
            for (v, &m) in k.data.iter().zip(&self.mask.pattern) {
                if m == 0 && (v.re != 0.0 || v.im != 0.0) {
                    return Err(Error::invalid(
                        "k-space holds data at an unsampled location",
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Serializable metadata describing how an acquisition was simulated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionMeta {
    pub acceleration: f64,
    pub acs_lines: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}
