use crate::error::{Error, Result};
use crate::mri::ComplexImage;

/// Dense row-major f64 tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::dim(format!(
                "tensor shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }

    /// Stacks real and imaginary planes into a `[2, H, W]` tensor.
    pub fn from_image(image: &ComplexImage) -> Self {
        let mut data = image.real_plane();
        data.extend(image.imag_plane());
        Self {
            shape: vec![2, image.height, image.width],
            data,
        }
    }

    /// Inverse of [`Tensor::from_image`].
    pub fn to_image(&self) -> Result<ComplexImage> {
        match self.shape.as_slice() {
            &[2, h, w] => {
                let (re, im) = self.data.split_at(h * w);
                ComplexImage::from_planes(h, w, re, im)
            }
            other => Err(Error::dim(format!(
                "expected a [2, H, W] tensor, got {other:?}"
            ))),
        }
    }
}

/// `c = op(a) · op(b) + beta · c` with `op(a)` of shape `[m, k]` and
/// `op(b)` of shape `[k, n]`. Transposed operands are read in place.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if trans_a {
        (1, m as isize)
    } else {
        (k as isize, 1)
    };
    let (rsb, csb) = if trans_b {
        (1, k as isize)
    } else {
        (n as isize, 1)
    };
    // SAFETY: the slices hold exactly m*k, k*n and m*n elements, and the
    // strides above address each operand within those bounds.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
