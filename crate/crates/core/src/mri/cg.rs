use num_complex::Complex64;

use super::ComplexImage;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct CgOutcome {
    pub x: ComplexImage,
    pub iterations: usize,
    /// Final `‖b − A x‖ / ‖b‖`.
    pub relative_residual: f64,
    /// Relative residual after each iteration, starting with the initial guess.
    pub residual_history: Vec<f64>,
}

fn axpy(y: &mut [Complex64], a: Complex64, x: &[Complex64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

fn dot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn norm(a: &[Complex64]) -> f64 {
    a.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

/// Conjugate gradient for Hermitian positive (semi)definite `normal_op`.
///
/// CG iterates are passed through minimal-residual smoothing, so the
/// returned iterate's residual is never larger than the plain CG residual
/// and the reported history is non-increasing. `x0` defaults to zero.
pub fn cg_solve<F>(
    normal_op: F,
    rhs: &ComplexImage,
    x0: Option<&ComplexImage>,
    tol: f64,
    max_iter: usize,
) -> Result<CgOutcome>
where
    F: Fn(&ComplexImage) -> Result<ComplexImage>,
{
    if !(tol > 0.0) {
        return Err(Error::invalid(format!(
            "CG tolerance must be positive, got {tol}"
        )));
    }
    let (h, w) = rhs.shape();
    let mut x = match x0 {
        Some(x0) => {
            rhs.check_same_shape(x0, "CG initial guess")?;
            x0.clone()
        }
        None => ComplexImage::zeros(h, w),
    };
    let b_norm = match rhs.norm() {
        n if n > 0.0 => n,
        _ => 1.0,
    };

    let ax = normal_op(&x)?;
    rhs.check_same_shape(&ax, "normal operator output")?;
    let mut r: Vec<Complex64> = rhs.data.iter().zip(&ax.data).map(|(b, a)| b - a).collect();
    let mut p = r.clone();
    let mut rs = dot(&r, &r).re;
    // smoothed iterate and its residual
    let mut y = x.clone();
    let mut s = r.clone();
    let mut s_norm = norm(&s);
    if !s_norm.is_finite() {
        return Err(Error::Divergence {
            iteration: 0,
            reason: "non-finite initial residual in CG".into(),
        });
    }
    let mut history = vec![s_norm / b_norm];
    let mut iterations = 0;

    while iterations < max_iter && s_norm / b_norm > tol {
        let ap = normal_op(&ComplexImage {
            height: h,
            width: w,
            data: p.clone(),
        })?;
        let pap = dot(&p, &ap.data).re;
        if !(pap > 0.0) {
            if pap.is_nan() {
                return Err(Error::Divergence {
                    iteration: iterations,
                    reason: "non-finite curvature in CG".into(),
                });
            }
            // search direction in the null space: nothing further to gain
            break;
        }
        let alpha = rs / pap;
        axpy(&mut x.data, Complex64::new(alpha, 0.0), &p);
        axpy(&mut r, Complex64::new(-alpha, 0.0), &ap.data);
        iterations += 1;

        if !alpha.is_finite() || r.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::Divergence {
                iteration: iterations,
                reason: "non-finite residual in CG".into(),
            });
        }
        let d: Vec<Complex64> = r.iter().zip(&s).map(|(ri, si)| ri - si).collect();
        let dd = dot(&d, &d).re;
        if dd > 0.0 {
            let eta = -dot(&d, &s) / dd;
            let mut s_next = s.clone();
            axpy(&mut s_next, eta, &d);
            let next_norm = norm(&s_next);
            // the line minimum can exceed the old norm only through rounding
            if next_norm <= s_norm {
                let step: Vec<Complex64> = x.data.iter().zip(&y.data).map(|(a, b)| a - b).collect();
                axpy(&mut y.data, eta, &step);
                s = s_next;
                s_norm = next_norm;
            }
        }
        history.push(s_norm / b_norm);

        let rs_new = dot(&r, &r).re;
        let beta = rs_new / rs;
        for (pi, ri) in p.iter_mut().zip(&r) {
            *pi = ri + beta * *pi;
        }
        rs = rs_new;
    }

    Ok(CgOutcome {
        x: y,
        iterations,
        relative_residual: s_norm / b_norm,
        residual_history: history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vector(values: &[f64]) -> ComplexImage {
        ComplexImage::from_real(1, values.len(), values).unwrap()
    }

    #[test]
    fn identity_converges_in_one_iteration() {
        let b = vector(&[1.0, -2.0, 3.0, 0.5]);
        let out = cg_solve(|x| Ok(x.clone()), &b, None, 1e-6, 20).unwrap();
        assert_eq!(out.iterations, 1);
        for (a, e) in out.x.data.iter().zip(&b.data) {
            assert!((a - e).norm() < 1e-14);
        }
    }

    #[test]
    fn scaled_identity() {
        let b = vector(&[2.0, 4.0, 6.0, 8.0]);
        let out = cg_solve(|x| Ok(x.scale(2.0)), &b, None, 1e-10, 20).unwrap();
        for (a, e) in out.x.data.iter().zip(&[1.0, 2.0, 3.0, 4.0]) {
            assert!((a.re - e).abs() < 1e-12 && a.im.abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_non_positive_tolerance() {
        let b = vector(&[1.0]);
        assert!(cg_solve(|x| Ok(x.clone()), &b, None, 0.0, 5).is_err());
    }

    #[test]
    fn reports_divergence_on_nan_operator() {
        let b = vector(&[1.0, 2.0]);
        let err = cg_solve(|x| Ok(x.scale(f64::NAN)), &b, None, 1e-6, 5).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }));
    }

    #[test]
    fn history_is_non_increasing() {
        // ill-conditioned diagonal system, where plain CG residuals oscillate
        let diag: Vec<f64> = (0..24).map(|i| 1.0 + (i as f64).powi(3)).collect();
        let b = vector(
            &(0..24)
                .map(|i| ((i * 7) % 5) as f64 - 2.0)
                .collect::<Vec<_>>(),
        );
        let op = |x: &ComplexImage| {
            let mut y = x.clone();
            for (v, d) in y.data.iter_mut().zip(&diag) {
                *v *= d;
            }
            Ok(y)
        };
        let out = cg_solve(op, &b, None, 1e-12, 200).unwrap();
        for pair in out.residual_history.windows(2) {
            assert!(pair[1] <= pair[0]);
        }
        assert!(out.relative_residual <= 1e-12);
    }
}
