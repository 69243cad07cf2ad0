use num_complex::Complex64;

use super::{
    fft2_unitary, ifft2_unitary, AcquisitionData, CoilSensitivities, ComplexImage, SamplingMask,
};
use crate::error::{Error, Result};

fn check_shapes(
    image_shape: (usize, usize),
    coils: &CoilSensitivities,
    mask: &SamplingMask,
) -> Result<()> {
    if coils.n_coils() == 0 {
        return Err(Error::invalid("at least one coil is required"));
    }
    if coils.shape() != image_shape || mask.shape() != image_shape {
        return Err(Error::dim(format!(
            "image {:?}, coils {:?}, mask {:?}",
            image_shape,
            coils.shape(),
            mask.shape()
        )));
    }
    if mask.pattern.iter().any(|&v| v > 1) {
        return Err(Error::invalid("mask is not binary"));
    }
    Ok(())
}

/// Zeroes every unsampled location.
pub fn apply_mask(kspace: &mut ComplexImage, mask: &SamplingMask) {
    for (v, &m) in kspace.data.iter_mut().zip(&mask.pattern) {
        if m == 0 {
            *v = Complex64::new(0.0, 0.0);
        }
    }
}

/// `S_j = M F (C_j ⊙ I)` for every coil, without noise.
pub fn forward_model(
    image: &ComplexImage,
    coils: &CoilSensitivities,
    mask: &SamplingMask,
) -> Result<Vec<ComplexImage>> {
    check_shapes(image.shape(), coils, mask)?;
    Ok(coils
        .maps
        .iter()
        .map(|c| {
            let weighted = ComplexImage {
                height: image.height,
                width: image.width,
                data: c.data.iter().zip(&image.data).map(|(s, x)| s * x).collect(),
            };
            let mut k = fft2_unitary(&weighted);
            apply_mask(&mut k, mask);
            k
        })
        .collect())
}

/// `Σ_j conj(C_j) ⊙ F⁻¹ (M S_j)`, the exact adjoint of [`forward_model`].
pub fn adjoint(
    kspace: &[ComplexImage],
    coils: &CoilSensitivities,
    mask: &SamplingMask,
) -> Result<ComplexImage> {
    check_shapes(mask.shape(), coils, mask)?;
    if kspace.len() != coils.n_coils() {
        return Err(Error::dim(format!(
            "{} k-space arrays for {} coils",
            kspace.len(),
            coils.n_coils()
        )));
    }
    let (h, w) = mask.shape();
    let mut out = ComplexImage::zeros(h, w);
    for (k, c) in kspace.iter().zip(&coils.maps) {
        if k.shape() != (h, w) {
            return Err(Error::dim("k-space array shape differs from mask"));
        }
        let mut masked = k.clone();
        apply_mask(&mut masked, mask);
        let img = ifft2_unitary(&masked);
        for ((o, s), x) in out.data.iter_mut().zip(&c.data).zip(&img.data) {
            *o += s.conj() * x;
        }
    }
    Ok(out)
}

/// `AᴴA x + mu x`, the normal operator used by the CG data-consistency steps.
pub fn normal_op(
    x: &ComplexImage,
    coils: &CoilSensitivities,
    mask: &SamplingMask,
    mu: f64,
) -> Result<ComplexImage> {
    let mut out = adjoint(&forward_model(x, coils, mask)?, coils, mask)?;
    if mu != 0.0 {
        for (o, v) in out.data.iter_mut().zip(&x.data) {
            *o += v * mu;
        }
    }
    Ok(out)
}

/// Coil-combined adjoint reconstruction of the acquired data.
pub fn zero_filled(acq: &AcquisitionData) -> Result<ComplexImage> {
    adjoint(&acq.kspace, &acq.coils, &acq.mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mri::generate_mask;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(h: usize, w: usize, rng: &mut ChaCha8Rng) -> ComplexImage {
        ComplexImage {
            height: h,
            width: w,
            data: (0..h * w)
                .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                .collect(),
        }
    }

    /// Random maps normalized to unit sum-of-squares.
    fn random_coils(n: usize, h: usize, w: usize, rng: &mut ChaCha8Rng) -> CoilSensitivities {
        let mut maps: Vec<ComplexImage> = (0..n).map(|_| random_image(h, w, rng)).collect();
        for p in 0..h * w {
            let sos: f64 = maps
                .iter()
                .map(|m| m.data[p].norm_sqr())
                .sum::<f64>()
                .sqrt();
            for m in maps.iter_mut() {
                m.data[p] /= sos;
            }
        }
        CoilSensitivities::new(maps).unwrap()
    }

    /// Dense matrix of `M F C_j` built column by column from unit impulses
    /// through an explicit DFT sum.
    fn dense_coil_operator(c: &ComplexImage, mask: &SamplingMask) -> Vec<Vec<Complex64>> {
        let (h, w) = c.shape();
        let n = h * w;
        let scale = 1.0 / (n as f64).sqrt();
        let mut rows = vec![vec![Complex64::new(0.0, 0.0); n]; n];
        for (kidx, row) in rows.iter_mut().enumerate() {
            let (ku, kv) = (kidx / w, kidx % w);
            if mask.pattern[kidx] == 0 {
                continue;
            }
            for (pidx, entry) in row.iter_mut().enumerate() {
                let (y, x) = (pidx / w, pidx % w);
                let phase = -2.0
                    * std::f64::consts::PI
                    * ((ku * y) as f64 / h as f64 + (kv * x) as f64 / w as f64);
                *entry = Complex64::from_polar(scale, phase) * c.data[pidx];
            }
        }
        rows
    }

    #[test]
    fn constant_image_full_mask() {
        let img = ComplexImage::from_real(2, 2, &[1.0; 4]).unwrap();
        let k = forward_model(
            &img,
            &CoilSensitivities::uniform(2, 2),
            &SamplingMask::full(2, 2),
        )
        .unwrap();
        assert!((k[0].data[0] - Complex64::new(2.0, 0.0)).norm() < 1e-15);
        assert!(k[0].data[1..].iter().all(|v| v.norm() < 1e-15));
    }

    #[test]
    fn zero_image_gives_zero_kspace() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let coils = random_coils(3, 8, 8, &mut rng);
        let mask = generate_mask(8, 8, 2.0, 2, 0).unwrap();
        let k = forward_model(&ComplexImage::zeros(8, 8), &coils, &mask).unwrap();
        assert!(k.iter().all(|c| c.data.iter().all(|v| v.norm() == 0.0)));
        let back = adjoint(&k, &coils, &mask).unwrap();
        assert!(back.data.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn matches_dense_construction() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let img = random_image(8, 8, &mut rng);
        let coils = random_coils(4, 8, 8, &mut rng);
        let mask = generate_mask(8, 8, 2.0, 2, 5).unwrap();
        let k = forward_model(&img, &coils, &mask).unwrap();
        for (j, c) in coils.maps.iter().enumerate() {
            let dense = dense_coil_operator(c, &mask);
            for (kidx, row) in dense.iter().enumerate() {
                let expect: Complex64 = row.iter().zip(&img.data).map(|(a, x)| a * x).sum();
                assert!((k[j].data[kidx] - expect).norm() < 1e-12);
                if mask.pattern[kidx] == 0 {
                    assert_eq!(k[j].data[kidx], Complex64::new(0.0, 0.0));
                }
            }
        }
    }

    #[test]
    fn adjoint_dot_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let coils = random_coils(4, 8, 8, &mut rng);
        let mask = generate_mask(8, 8, 2.0, 2, 3).unwrap();
        let x = random_image(8, 8, &mut rng);
        let y: Vec<ComplexImage> = (0..4).map(|_| random_image(8, 8, &mut rng)).collect();
        let ax = forward_model(&x, &coils, &mask).unwrap();
        let lhs: Complex64 = ax.iter().zip(&y).map(|(a, b)| a.inner(b)).sum();
        let rhs = x.inner(&adjoint(&y, &coils, &mask).unwrap());
        let ax_norm = ax.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        let y_norm = y.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        assert!((lhs - rhs).norm() / (ax_norm * y_norm) < 1e-12);
    }

    #[test]
    fn unitary_round_trip_full_mask() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_image(16, 12, &mut rng);
        let coils = random_coils(3, 16, 12, &mut rng);
        let mask = SamplingMask::full(16, 12);
        let back = adjoint(&forward_model(&x, &coils, &mask).unwrap(), &coils, &mask).unwrap();
        for (a, b) in x.data.iter().zip(&back.data) {
            assert!((a - b).norm() < 1e-10);
        }
    }

    #[test]
    fn shape_mismatch_is_dimension_error() {
        let img = ComplexImage::zeros(4, 4);
        let coils = CoilSensitivities::uniform(4, 4);
        let err = forward_model(&img, &coils, &SamplingMask::full(4, 8)).unwrap_err();
        assert!(matches!(err, Error::Dimension(_)));
        let err = adjoint(&[], &coils, &SamplingMask::full(4, 4)).unwrap_err();
        assert!(matches!(err, Error::Dimension(_)));
    }

    #[test]
    fn non_binary_mask_is_validation_error() {
        let mut mask = SamplingMask::full(4, 4);
        mask.pattern[3] = 2;
        let err = forward_model(
            &ComplexImage::zeros(4, 4),
            &CoilSensitivities::uniform(4, 4),
            &mask,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }
}
