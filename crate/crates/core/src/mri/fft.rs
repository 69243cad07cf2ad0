use std::cell::RefCell;

use num_complex::Complex64;
use rustfft::{FftDirection, FftPlanner};

use super::ComplexImage;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn transform(image: &ComplexImage, direction: FftDirection) -> ComplexImage {
    let (h, w) = image.shape();
    let mut data = image.data.clone();
    let mut cols = vec![Complex64::new(0.0, 0.0); h * w];
    PLANNER.with(|planner| {
        let mut planner = planner.borrow_mut();
        let row_fft = planner.plan_fft(w, direction);
        let col_fft = planner.plan_fft(h, direction);
        row_fft.process(&mut data);
        for r in 0..h {
            for c in 0..w {
                cols[c * h + r] = data[r * w + c];
            }
        }
        col_fft.process(&mut cols);
    });
    let scale = 1.0 / ((h * w) as f64).sqrt();
    for r in 0..h {
        for c in 0..w {
            data[r * w + c] = cols[c * h + r] * scale;
        }
    }
    ComplexImage {
        height: h,
        width: w,
        data,
    }
}

/// Orthonormal 2-D DFT (scaled by `1/sqrt(HW)`), no fftshift.
pub fn fft2_unitary(image: &ComplexImage) -> ComplexImage {
    transform(image, FftDirection::Forward)
}

/// Inverse of [`fft2_unitary`]; also its adjoint.
pub fn ifft2_unitary(kspace: &ComplexImage) -> ComplexImage {
    transform(kspace, FftDirection::Inverse)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_maps_to_scaled_dc() {
        let img = ComplexImage::from_real(2, 2, &[1.0; 4]).unwrap();
        let k = fft2_unitary(&img);
        assert!((k.data[0].re - 2.0).abs() < 1e-15);
        for v in &k.data[1..] {
            assert!(v.norm() < 1e-15);
        }
    }

    #[test]
    fn round_trip_non_square() {
        let data = (0..12)
            .map(|i| Complex64::new(i as f64, (i * i) as f64 * 0.1))
            .collect();
        let img = ComplexImage::new(3, 4, data).unwrap();
        let back = ifft2_unitary(&fft2_unitary(&img));
        for (a, b) in img.data.iter().zip(&back.data) {
            assert!((a - b).norm() < 1e-12);
        }
    }
}
