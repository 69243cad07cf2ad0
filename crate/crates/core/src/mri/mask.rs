use num_complex::Complex64;
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::ComplexImage;
use crate::error::{Error, Result};

/// Cartesian phase-encode line mask. Rows are phase-encode lines; every
/// row is either fully sampled or fully skipped along the readout (columns).
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingMask {
    pub height: usize,
    pub width: usize,
    pub pattern: Vec<u8>,
    pub acceleration: f64,
    pub acs_lines: usize,
}

impl SamplingMask {
    /// Validates a supplied pattern: binary, constant along each row, and
    /// covering the central `acs_lines` rows.
    pub fn from_pattern(
        height: usize,
        width: usize,
        pattern: Vec<u8>,
        acceleration: f64,
        acs_lines: usize,
    ) -> Result<Self> {
        if pattern.len() != height * width {
            return Err(Error::dim(format!(
                "mask has {} entries, expected {}x{}",
                pattern.len(),
                height,
                width
            )));
        }
        if let Some(bad) = pattern.iter().find(|&&v| v > 1) {
            return Err(Error::invalid(format!("mask entry {bad} is not binary")));
        }
        for r in 0..height {
            let row = &pattern[r * width..(r + 1) * width];
            if row.iter().any(|&v| v != row[0]) {
                return Err(Error::invalid(format!(
                    "mask row {r} is not constant along the readout"
                )));
            }
        }
        if acs_lines > height {
            return Err(Error::invalid("acs_lines exceeds height"));
        }
        let mask = Self {
            height,
            width,
            pattern,
            acceleration,
            acs_lines,
        };
        if mask.acs_rows().any(|r| !mask.row_sampled(r)) {
            return Err(Error::invalid("ACS block is not fully sampled"));
        }
        Ok(mask)
    }

    /// Converts a real-valued grid (e.g. read from disk) into a mask.
    pub fn from_values(
        height: usize,
        width: usize,
        values: &[f64],
        acceleration: f64,
        acs_lines: usize,
    ) -> Result<Self> {
        let mut pattern = Vec::with_capacity(values.len());
        for &v in values {
            pattern.push(match v {
                v if v == 0.0 => 0,
                v if v == 1.0 => 1,
                other => return Err(Error::invalid(format!("mask value {other} is not binary"))),
            });
        }
        Self::from_pattern(height, width, pattern, acceleration, acs_lines)
    }

    pub fn full(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            pattern: vec![1; height * width],
            acceleration: 1.0,
            acs_lines: height,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn row_sampled(&self, row: usize) -> bool {
        self.pattern[row * self.width] == 1
    }

    pub fn sampled_rows(&self) -> usize {
        (0..self.height).filter(|&r| self.row_sampled(r)).count()
    }

    /// Rows belonging to the contiguous central calibration block.
    pub fn acs_rows(&self) -> std::ops::Range<usize> {
        let start = self.height / 2 - self.acs_lines / 2;
        start..start + self.acs_lines
    }

    pub fn as_values(&self) -> Vec<f64> {
        self.pattern.iter().map(|&v| v as f64).collect()
    }
}

/// Line mask with a central ACS block and uniformly drawn outer rows.
///
/// The total number of sampled rows is `round(height / acceleration)`.
pub fn generate_mask(
    height: usize,
    width: usize,
    acceleration: f64,
    acs_lines: usize,
    seed: u64,
) -> Result<SamplingMask> {
    if !(acceleration >= 1.0) || !acceleration.is_finite() {
        return Err(Error::invalid(format!(
            "acceleration must be >= 1, got {acceleration}"
        )));
    }
    if acs_lines > height {
        return Err(Error::invalid(format!(
            "acs_lines {acs_lines} exceeds height {height}"
        )));
    }
    let budget = (height as f64 / acceleration).round() as usize;
    if budget < acs_lines {
        return Err(Error::invalid(format!(
            "infeasible budget: {budget} sampled rows cannot hold {acs_lines} ACS lines"
        )));
    }
    let mut rows = vec![false; height];
    let start = height / 2 - acs_lines / 2;
    for r in rows.iter_mut().skip(start).take(acs_lines) {
        *r = true;
    }
    let outer: Vec<usize> = (0..height).filter(|&r| !rows[r]).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in index::sample(&mut rng, outer.len(), budget - acs_lines) {
        rows[outer[i]] = true;
    }
    let mut pattern = vec![0u8; height * width];
    for (r, _) in rows.iter().enumerate().filter(|(_, &s)| s) {
        pattern[r * width..(r + 1) * width].fill(1);
    }
    Ok(SamplingMask {
        height,
        width,
        pattern,
        acceleration,
        acs_lines,
    })
}

/// Adds i.i.d. complex Gaussian noise (`sigma` per real/imaginary component)
/// at sampled locations. Unsampled locations are left untouched.
pub fn add_noise(
    kspace: &[ComplexImage],
    mask: &SamplingMask,
    sigma: f64,
    seed: u64,
) -> Result<Vec<ComplexImage>> {
    if !(sigma >= 0.0) {
        return Err(Error::invalid(format!(
            "noise sigma must be non-negative, got {sigma}"
        )));
    }
    let mut out = kspace.to_vec();
    if sigma == 0.0 {
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for k in out.iter_mut() {
        if k.shape() != mask.shape() {
            return Err(Error::dim("k-space and mask disagree in shape"));
        }
        for (v, &m) in k.data.iter_mut().zip(&mask.pattern) {
            if m == 1 {
                let re: f64 = StandardNormal.sample(&mut rng);
                let im: f64 = StandardNormal.sample(&mut rng);
                *v += Complex64::new(sigma * re, sigma * im);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_acceleration_samples_everything() {
        let m = generate_mask(32, 16, 1.0, 4, 0).unwrap();
        assert!(m.pattern.iter().all(|&v| v == 1));
    }

    #[test]
    fn budget_and_acs_block() {
        let m = generate_mask(64, 64, 4.0, 8, 7).unwrap();
        assert_eq!(m.sampled_rows(), 16);
        for r in 28..=35 {
            assert!(m.row_sampled(r), "row {r} should be in the ACS block");
        }
        assert_eq!(m.acs_rows(), 28..36);
    }

    #[test]
    fn mask_is_deterministic_per_seed() {
        let a = generate_mask(64, 64, 4.0, 8, 7).unwrap();
        let b = generate_mask(64, 64, 4.0, 8, 7).unwrap();
        let c = generate_mask(64, 64, 4.0, 8, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.pattern, c.pattern);
    }

    #[test]
    fn infeasible_budget_is_rejected() {
        let err = generate_mask(64, 64, 8.0, 12, 0).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
        assert!(generate_mask(64, 64, 0.5, 8, 0).is_err());
    }

    #[test]
    fn rows_are_constant_along_readout() {
        let m = generate_mask(48, 20, 3.0, 6, 11).unwrap();
        SamplingMask::from_pattern(48, 20, m.pattern.clone(), 3.0, 6).unwrap();
    }

    #[test]
    fn non_binary_values_rejected() {
        let err = SamplingMask::from_values(2, 2, &[1.0, 1.0, 0.5, 0.5], 1.0, 0).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn zero_sigma_is_identity() {
        let m = generate_mask(8, 8, 2.0, 2, 1).unwrap();
        let k = vec![ComplexImage::zeros(8, 8)];
        assert_eq!(add_noise(&k, &m, 0.0, 3).unwrap(), k);
        assert!(add_noise(&k, &m, -1.0, 3).is_err());
    }

    #[test]
    fn noise_respects_mask_and_seed() {
        let m = generate_mask(16, 16, 4.0, 2, 1).unwrap();
        let k = vec![ComplexImage::zeros(16, 16); 2];
        let a = add_noise(&k, &m, 0.01, 9).unwrap();
        let b = add_noise(&k, &m, 0.01, 9).unwrap();
        assert_eq!(a, b);
        for coil in &a {
            for (v, &s) in coil.data.iter().zip(&m.pattern) {
                if s == 0 {
                    assert_eq!(*v, Complex64::new(0.0, 0.0));
                }
            }
        }
    }

    #[test]
    fn noise_sample_std_matches_sigma() {
        let m = SamplingMask::full(64, 64);
        let k = vec![ComplexImage::zeros(64, 64)];
        let noisy = add_noise(&k, &m, 0.05, 4).unwrap();
        let n = noisy[0].len() as f64;
        for plane in [noisy[0].real_plane(), noisy[0].imag_plane()] {
            let mean = plane.iter().sum::<f64>() / n;
            let var = plane.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            assert!(
                (var.sqrt() - 0.05).abs() / 0.05 < 0.05,
                "std {}",
                var.sqrt()
            );
        }
    }
}
