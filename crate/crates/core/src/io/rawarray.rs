//! Raw array file format.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! 16 bytes   magic "SEMRECON-ARR\0\0\0\0"
//! u32        rank
//! u32 x rank dims
//! u8         dtype: 0 = f32, 1 = f64, 2 = complex64 (f32 pairs), 3 = complex128
//! ...        payload, row-major; complex values interleaved (re, im)
//! ```

use std::path::Path;

use num_complex::{Complex32, Complex64};

use crate::error::{Error, Result};
use crate::mri::ComplexImage;

pub const MAGIC: &[u8; 16] = b"SEMRECON-ARR\0\0\0\0";

#[derive(Debug, Clone, PartialEq)]
pub enum ArrayData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    C64(Vec<Complex32>),
    C128(Vec<Complex64>),
}

impl ArrayData {
    pub fn len(&self) -> usize {
        match self {
            ArrayData::F32(v) => v.len(),
            ArrayData::F64(v) => v.len(),
            ArrayData::C64(v) => v.len(),
            ArrayData::C128(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn tag(&self) -> u8 {
        match self {
            ArrayData::F32(_) => 0,
            ArrayData::F64(_) => 1,
            ArrayData::C64(_) => 2,
            ArrayData::C128(_) => 3,
        }
    }

    fn is_finite(&self) -> bool {
        match self {
            ArrayData::F32(v) => v.iter().all(|x| x.is_finite()),
            ArrayData::F64(v) => v.iter().all(|x| x.is_finite()),
            ArrayData::C64(v) => v.iter().all(|x| x.re.is_finite() && x.im.is_finite()),
            ArrayData::C128(v) => v.iter().all(|x| x.re.is_finite() && x.im.is_finite()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawArray {
    pub dims: Vec<usize>,
    pub data: ArrayData,
}

impl RawArray {
    pub fn new(dims: Vec<usize>, data: ArrayData) -> Result<Self> {
        let expected: usize = dims.iter().product();
        if expected != data.len() {
            return Err(Error::dim(format!(
                "array dims {dims:?} hold {expected} values, data has {}",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn real(dims: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        Self::new(dims, ArrayData::F64(values))
    }

    pub fn from_image(image: &ComplexImage) -> Self {
        Self {
            dims: vec![image.height, image.width],
            data: ArrayData::C128(image.data.clone()),
        }
    }

    /// Stacks same-shape images along a leading axis.
    pub fn from_images(images: &[ComplexImage]) -> Result<Self> {
        let first = images
            .first()
            .ok_or_else(|| Error::invalid("cannot stack zero images"))?;
        let mut data = Vec::with_capacity(images.len() * first.len());
        for img in images {
            first.check_same_shape(img, "stacked images")?;
            data.extend_from_slice(&img.data);
        }
        Ok(Self {
            dims: vec![images.len(), first.height, first.width],
            data: ArrayData::C128(data),
        })
    }

    /// Complex values widened to f64; real arrays get a zero imaginary part.
    pub fn complex_values(&self) -> Vec<Complex64> {
        match &self.data {
            ArrayData::F32(v) => v.iter().map(|&x| Complex64::new(x as f64, 0.0)).collect(),
            ArrayData::F64(v) => v.iter().map(|&x| Complex64::new(x, 0.0)).collect(),
            ArrayData::C64(v) => v
                .iter()
                .map(|x| Complex64::new(x.re as f64, x.im as f64))
                .collect(),
            ArrayData::C128(v) => v.clone(),
        }
    }

    /// Real values; fails for complex arrays.
    pub fn real_values(&self) -> Result<Vec<f64>> {
        match &self.data {
            ArrayData::F32(v) => Ok(v.iter().map(|&x| x as f64).collect()),
            ArrayData::F64(v) => Ok(v.clone()),
            _ => Err(Error::invalid("expected a real-valued array")),
        }
    }

    pub fn to_image(&self) -> Result<ComplexImage> {
        match self.dims.as_slice() {
            &[h, w] => ComplexImage::new(h, w, self.complex_values()),
            other => Err(Error::dim(format!(
                "expected a rank-2 image, got dims {other:?}"
            ))),
        }
    }

    pub fn to_images(&self) -> Result<Vec<ComplexImage>> {
        match self.dims.as_slice() {
            &[n, h, w] => {
                let values = self.complex_values();
                values
                    .chunks(h * w)
                    .take(n)
                    .map(|chunk| ComplexImage::new(h, w, chunk.to_vec()))
                    .collect()
            }
            other => Err(Error::dim(format!(
                "expected a rank-3 stack, got dims {other:?}"
            ))),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 4 * (self.dims.len() + 1) + 1 + self.data.len() * 16);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.dims.len() as u32).to_le_bytes());
        for &d in &self.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.push(self.data.tag());
        match &self.data {
            ArrayData::F32(v) => v
                .iter()
                .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            ArrayData::F64(v) => v
                .iter()
                .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            ArrayData::C64(v) => v.iter().for_each(|x| {
                out.extend_from_slice(&x.re.to_le_bytes());
                out.extend_from_slice(&x.im.to_le_bytes());
            }),
            ArrayData::C128(v) => v.iter().for_each(|x| {
                out.extend_from_slice(&x.re.to_le_bytes());
                out.extend_from_slice(&x.im.to_le_bytes());
            }),
        }
        out
    }

    /// Parses a byte buffer; `origin` is only used in error messages.
    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let fail = |reason: &str| Error::format(origin, reason);
        if bytes.len() < 21 || &bytes[..16] != MAGIC {
            return Err(fail("missing SEMRECON-ARR magic"));
        }
        let read_u32 = |at: usize| -> Result<u32> {
            bytes
                .get(at..at + 4)
                .map(|b| u32::from_le_bytes(b.try_into().expect("slice of four bytes")))
                .ok_or_else(|| fail("truncated header"))
        };
        let rank = read_u32(16)? as usize;
        if rank > 8 {
            return Err(fail("rank above 8 is not supported"));
        }
        let dims: Vec<usize> = (0..rank)
            .map(|i| read_u32(20 + 4 * i).map(|d| d as usize))
            .collect::<Result<_>>()?;
        let tag_at = 20 + 4 * rank;
        let tag = *bytes.get(tag_at).ok_or_else(|| fail("truncated header"))?;
        let count: usize = dims.iter().product();
        let payload = &bytes[tag_at + 1..];
        let width = match tag {
            0 => 4,
            1 => 8,
            2 => 8,
            3 => 16,
            other => return Err(fail(&format!("unknown dtype tag {other}"))),
        };
        if payload.len() != count * width {
            return Err(fail(&format!(
                "payload has {} bytes, dims {:?} need {}",
                payload.len(),
                dims,
                count * width
            )));
        }
        let f32_at = |i: usize| f32::from_le_bytes(payload[i..i + 4].try_into().expect("4 bytes"));
        let f64_at = |i: usize| f64::from_le_bytes(payload[i..i + 8].try_into().expect("8 bytes"));
        let data = match tag {
            0 => ArrayData::F32((0..count).map(|i| f32_at(4 * i)).collect()),
            1 => ArrayData::F64((0..count).map(|i| f64_at(8 * i)).collect()),
            2 => ArrayData::C64(
                (0..count)
                    .map(|i| Complex32::new(f32_at(8 * i), f32_at(8 * i + 4)))
                    .collect(),
            ),
            _ => ArrayData::C128(
                (0..count)
                    .map(|i| Complex64::new(f64_at(16 * i), f64_at(16 * i + 8)))
                    .collect(),
            ),
        };
        Ok(Self { dims, data })
    }
}

pub fn write_array(path: &Path, array: &RawArray) -> Result<()> {
    if !array.data.is_finite() {
        return Err(Error::invalid(format!(
            "refusing to write non-finite values to {}",
            path.display()
        )));
    }
    std::fs::write(path, array.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_array(path: &Path) -> Result<RawArray> {
    let bytes = std::fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::format(path, "file not found"),
        _ => Error::io(path, e),
    })?;
    RawArray::from_bytes(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout_is_exact() {
        let arr = RawArray::new(vec![1, 2], ArrayData::F32(vec![1.0, -2.0])).unwrap();
        let bytes = arr.to_bytes();
        assert_eq!(&bytes[..16], b"SEMRECON-ARR\0\0\0\0");
        assert_eq!(&bytes[16..20], &2u32.to_le_bytes());
        assert_eq!(&bytes[20..24], &1u32.to_le_bytes());
        assert_eq!(&bytes[24..28], &2u32.to_le_bytes());
        assert_eq!(bytes[28], 0);
        assert_eq!(&bytes[29..33], &1.0f32.to_le_bytes());
        assert_eq!(bytes.len(), 37);
    }

    #[test]
    fn corrupt_header_is_format_error() {
        let mut bytes = RawArray::real(vec![2], vec![1.0, 2.0]).unwrap().to_bytes();
        bytes[3] = b'x';
        let err = RawArray::from_bytes(&bytes, Path::new("bad.arr")).unwrap_err();
        assert!(matches!(err, Error::Format { .. }));
        let mut bytes = RawArray::real(vec![2], vec![1.0, 2.0]).unwrap().to_bytes();
        bytes.pop();
        assert!(RawArray::from_bytes(&bytes, Path::new("short.arr")).is_err());
    }

    proptest! {
        #[test]
        fn bytes_round_trip_bit_exact(values in proptest::collection::vec(any::<f64>(), 1..64)) {
            let n = values.len();
            let complex: Vec<Complex64> = values.chunks(2).map(|c| Complex64::new(c[0], *c.last().unwrap())).collect();
            for arr in [
                RawArray::real(vec![n], values.clone()).unwrap(),
                RawArray::new(vec![complex.len(), 1], ArrayData::C128(complex.clone())).unwrap(),
            ] {
                let back = RawArray::from_bytes(&arr.to_bytes(), Path::new("mem")).unwrap();
                prop_assert_eq!(arr.to_bytes(), back.to_bytes());
            }
        }
    }
}
