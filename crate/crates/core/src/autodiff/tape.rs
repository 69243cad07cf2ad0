//! Tape-based reverse-mode differentiation over dense tensors.
//!
//! Every operation appends a node holding its value and how it was
//! produced. [`Tape::backward`] walks the nodes in reverse and accumulates
//! gradients only along paths that start at a node created with
//! [`Tape::param`]. Constants never receive gradients, which is how frozen
//! weights are kept frozen.

use super::tensor::{gemm, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

/// Operation with a hand-written backward pass.
///
/// `backward` receives the input values, the output value and the upstream
/// gradient, and returns one gradient per input (`None` where not needed).
pub trait CustomOp {
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &[f64]) -> Vec<Option<Vec<f64>>>;
}

enum Op<'a> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddRow(Var, Var),
    MulRow(Var, Var),
    MatMul {
        a: Var,
        b: Var,
        ta: bool,
        tb: bool,
    },
    Transpose(Var),
    Reshape(Var),
    Sin(Var),
    Relu(Var),
    Gelu(Var),
    Tanh(Var),
    SoftmaxRows(Var),
    LayerNormRows {
        x: Var,
        eps: f64,
    },
    MeanRows(Var),
    L2Normalize(Var),
    Sum(Var),
    Concat(Vec<Var>),
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    InstanceNorm {
        x: Var,
        eps: f64,
    },
    AvgPool2(Var),
    Upsample2(Var),
    Magnitude(Var),
    Patchify {
        x: Var,
        patch: usize,
    },
    Custom {
        inputs: Vec<Var>,
        op: Box<dyn CustomOp + 'a>,
    },
}

struct Node<'a> {
    value: Tensor,
    op: Op<'a>,
    requires_grad: bool,
}

/// Gradients produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient for `v`, or `None` when no differentiable path reaches it.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient for `v`, zeros when absent.
    pub fn get_or_zeros(&self, v: Var, len: usize) -> Vec<f64> {
        self.get(v)
            .map(|g| g.to_vec())
            .unwrap_or_else(|| vec![0.0; len])
    }
}

#[derive(Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
}

fn gelu(x: f64) -> (f64, f64) {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    const A: f64 = 0.044_715;
    let inner = C * (x + A * x * x * x);
    let t = inner.tanh();
    let value = 0.5 * x * (1.0 + t);
    let deriv = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * A * x * x);
    (value, deriv)
}

fn im2col(x: &[f64], c: usize, h: usize, w: usize, k: usize) -> Vec<f64> {
    let pad = (k / 2) as isize;
    let hw = h * w;
    let mut cols = vec![0.0; c * k * k * hw];
    for ch in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ch * k + ky) * k + kx;
                let dst = &mut cols[row * hw..(row + 1) * hw];
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src_row = &x[ch * hw + sy as usize * w..ch * hw + (sy as usize + 1) * w];
                    let x_lo = (-dx).max(0) as usize;
                    let x_hi = (w as isize - dx).min(w as isize) as usize;
                    for xx in x_lo..x_hi {
                        dst[y * w + xx] = src_row[(xx as isize + dx) as usize];
                    }
                }
            }
        }
    }
    cols
}

fn col2im(cols: &[f64], c: usize, h: usize, w: usize, k: usize) -> Vec<f64> {
    let pad = (k / 2) as isize;
    let hw = h * w;
    let mut x = vec![0.0; c * hw];
    for ch in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ch * k + ky) * k + kx;
                let src = &cols[row * hw..(row + 1) * hw];
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let x_lo = (-dx).max(0) as usize;
                    let x_hi = (w as isize - dx).min(w as isize) as usize;
                    for xx in x_lo..x_hi {
                        x[ch * hw + sy as usize * w + (xx as isize + dx) as usize] +=
                            src[y * w + xx];
                    }
                }
            }
        }
    }
    x
}

/// Normalizes each of `groups` contiguous chunks to zero mean, unit variance.
fn normalize_groups(x: &[f64], groups: usize, eps: f64) -> (Vec<f64>, Vec<f64>) {
    let n = x.len() / groups;
    let mut y = vec![0.0; x.len()];
    let mut inv_std = vec![0.0; groups];
    for g in 0..groups {
        let chunk = &x[g * n..(g + 1) * n];
        let mean = chunk.iter().sum::<f64>() / n as f64;
        let var = chunk.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let is = 1.0 / (var + eps).sqrt();
        inv_std[g] = is;
        for (o, v) in y[g * n..(g + 1) * n].iter_mut().zip(chunk) {
            *o = (v - mean) * is;
        }
    }
    (y, inv_std)
}

fn normalize_groups_backward(y: &[f64], inv_std: &[f64], grad: &[f64]) -> Vec<f64> {
    let groups = inv_std.len();
    let n = y.len() / groups;
    let mut dx = vec![0.0; y.len()];
    for g in 0..groups {
        let ys = &y[g * n..(g + 1) * n];
        let gs = &grad[g * n..(g + 1) * n];
        let sum_g: f64 = gs.iter().sum();
        let sum_gy: f64 = gs.iter().zip(ys).map(|(a, b)| a * b).sum();
        for i in 0..n {
            dx[g * n + i] = inv_std[g] * (gs[i] - sum_g / n as f64 - ys[i] * sum_gy / n as f64);
        }
    }
    dx
}

fn add_into(dst: &mut Option<Vec<f64>>, g: Vec<f64>) {
    match dst {
        Some(d) => {
            for (a, b) in d.iter_mut().zip(&g) {
                *a += b;
            }
        }
        None => *dst = Some(g),
    }
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op<'a>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].value.shape
    }

    /// Differentiable leaf.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf that never receives gradients.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    fn unary(&mut self, x: Var, data: Vec<f64>, op: Op<'a>) -> Var {
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x);
        self.push(Tensor { shape, data }, op, rg)
    }

    fn zip(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape, vb.shape, "elementwise operands differ in shape");
        va.data
            .iter()
            .zip(&vb.data)
            .map(|(&x, &y)| f(x, y))
            .collect()
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let data = self.zip(a, b, |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        let shape = self.shape(a).to_vec();
        self.push(Tensor { shape, data }, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let data = self.zip(a, b, |x, y| x - y);
        let rg = self.rg(a) || self.rg(b);
        let shape = self.shape(a).to_vec();
        self.push(Tensor { shape, data }, Op::Sub(a, b), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let data = self.zip(a, b, |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        let shape = self.shape(a).to_vec();
        self.push(Tensor { shape, data }, Op::Mul(a, b), rg)
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let data = self.value(x).data.iter().map(|v| v * s).collect();
        self.unary(x, data, Op::Scale(x, s))
    }

    /// `[m, n] + [n]`, broadcasting the vector over rows.
    pub fn add_row(&mut self, x: Var, row: Var) -> Var {
        let n = *self.shape(x).last().expect("non-scalar");
        assert_eq!(self.value(row).len(), n, "row vector length mismatch");
        let r = &self.value(row).data;
        let data = self
            .value(x)
            .data
            .iter()
            .enumerate()
            .map(|(i, v)| v + r[i % n])
            .collect();
        let rg = self.rg(x) || self.rg(row);
        let shape = self.shape(x).to_vec();
        self.push(Tensor { shape, data }, Op::AddRow(x, row), rg)
    }

    /// `[m, n] * [n]`, broadcasting the vector over rows.
    pub fn mul_row(&mut self, x: Var, row: Var) -> Var {
        let n = *self.shape(x).last().expect("non-scalar");
        assert_eq!(self.value(row).len(), n, "row vector length mismatch");
        let r = &self.value(row).data;
        let data = self
            .value(x)
            .data
            .iter()
            .enumerate()
            .map(|(i, v)| v * r[i % n])
            .collect();
        let rg = self.rg(x) || self.rg(row);
        let shape = self.shape(x).to_vec();
        self.push(Tensor { shape, data }, Op::MulRow(x, row), rg)
    }

    fn mm_dims(&self, a: Var, b: Var, ta: bool, tb: bool) -> (usize, usize, usize) {
        let (sa, sb) = (self.shape(a), self.shape(b));
        assert!(
            sa.len() == 2 && sb.len() == 2,
            "matmul needs rank-2 operands"
        );
        let (m, k) = if ta { (sa[1], sa[0]) } else { (sa[0], sa[1]) };
        let (k2, n) = if tb { (sb[1], sb[0]) } else { (sb[0], sb[1]) };
        assert_eq!(k, k2, "matmul inner dimensions differ: {sa:?} x {sb:?}");
        (m, k, n)
    }

    /// `op(a) · op(b)` where `op` optionally transposes a rank-2 operand.
    pub fn matmul_t(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Var {
        let (m, k, n) = self.mm_dims(a, b, ta, tb);
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            &self.value(a).data,
            ta,
            &self.value(b).data,
            tb,
            0.0,
            &mut out,
        );
        let rg = self.rg(a) || self.rg(b);
        self.push(
            Tensor {
                shape: vec![m, n],
                data: out,
            },
            Op::MatMul { a, b, ta, tb },
            rg,
        )
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        self.matmul_t(a, b, false, false)
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let s = self.shape(x).to_vec();
        assert_eq!(s.len(), 2, "transpose needs a rank-2 tensor");
        let (r, c) = (s[0], s[1]);
        let v = &self.value(x).data;
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = v[i * c + j];
            }
        }
        let rg = self.rg(x);
        self.push(
            Tensor {
                shape: vec![c, r],
                data,
            },
            Op::Transpose(x),
            rg,
        )
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        assert_eq!(
            shape.iter().product::<usize>(),
            self.value(x).len(),
            "reshape changes size"
        );
        let data = self.value(x).data.clone();
        let rg = self.rg(x);
        self.push(
            Tensor {
                shape: shape.to_vec(),
                data,
            },
            Op::Reshape(x),
            rg,
        )
    }

    pub fn sin(&mut self, x: Var) -> Var {
        let data = self.value(x).data.iter().map(|v| v.sin()).collect();
        self.unary(x, data, Op::Sin(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let data = self.value(x).data.iter().map(|v| v.max(0.0)).collect();
        self.unary(x, data, Op::Relu(x))
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        let data = self.value(x).data.iter().map(|&v| gelu(v).0).collect();
        self.unary(x, data, Op::Gelu(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let data = self.value(x).data.iter().map(|v| v.tanh()).collect();
        self.unary(x, data, Op::Tanh(x))
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let n = *self.shape(x).last().expect("non-scalar");
        let mut data = self.value(x).data.clone();
        for row in data.chunks_mut(n) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            for v in row.iter_mut() {
                *v /= total;
            }
        }
        self.unary(x, data, Op::SoftmaxRows(x))
    }

    /// Per-row standardization without affine parameters.
    pub fn layer_norm_rows(&mut self, x: Var, eps: f64) -> Var {
        let s = self.shape(x);
        let rows = if s.len() == 1 { 1 } else { s[0] };
        let (data, _) = normalize_groups(&self.value(x).data, rows, eps);
        self.unary(x, data, Op::LayerNormRows { x, eps })
    }

    /// Mean over the leading axis: `[m, n] -> [n]`.
    pub fn mean_rows(&mut self, x: Var) -> Var {
        let s = self.shape(x).to_vec();
        assert_eq!(s.len(), 2, "mean_rows needs a rank-2 tensor");
        let (m, n) = (s[0], s[1]);
        let v = &self.value(x).data;
        let mut data = vec![0.0; n];
        for row in v.chunks(n) {
            for (d, x) in data.iter_mut().zip(row) {
                *d += x;
            }
        }
        for d in data.iter_mut() {
            *d /= m as f64;
        }
        let rg = self.rg(x);
        self.push(
            Tensor {
                shape: vec![n],
                data,
            },
            Op::MeanRows(x),
            rg,
        )
    }

    /// Divides the whole tensor by its Euclidean norm.
    pub fn l2_normalize(&mut self, x: Var) -> Var {
        let v = &self.value(x).data;
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        let data = v.iter().map(|a| a / norm).collect();
        self.unary(x, data, Op::L2Normalize(x))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).data.iter().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(total), Op::Sum(x), rg)
    }

    /// Concatenates the flattened inputs; `shape` must hold the total size.
    pub fn concat(&mut self, parts: &[Var], shape: &[usize]) -> Var {
        let mut data = Vec::new();
        for p in parts {
            data.extend_from_slice(&self.value(*p).data);
        }
        assert_eq!(
            data.len(),
            shape.iter().product::<usize>(),
            "concat shape mismatch"
        );
        let rg = parts.iter().any(|p| self.rg(*p));
        self.push(
            Tensor {
                shape: shape.to_vec(),
                data,
            },
            Op::Concat(parts.to_vec()),
            rg,
        )
    }

    /// Stacks `[C1, H, W]` and `[C2, H, W]` into `[C1 + C2, H, W]`.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Var {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        assert!(
            sa.len() == 3 && sb.len() == 3 && sa[1..] == sb[1..],
            "channel concat mismatch"
        );
        self.concat(&[a, b], &[sa[0] + sb[0], sa[1], sa[2]])
    }

    /// Same-padded stride-1 convolution. `x: [C, H, W]`, `w: [O, C, k, k]`
    /// with odd `k`, `b: [O]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        assert!(
            sx.len() == 3 && sw.len() == 4,
            "conv2d expects [C,H,W] and [O,C,k,k]"
        );
        let (c, h, wd) = (sx[0], sx[1], sx[2]);
        let (o, k) = (sw[0], sw[2]);
        assert!(
            sw[1] == c && sw[3] == k && k % 2 == 1,
            "conv2d kernel shape {sw:?} for input {sx:?}"
        );
        let hw = h * wd;
        let mut out = vec![0.0; o * hw];
        if k == 1 {
            gemm(
                o,
                c,
                hw,
                &self.value(w).data,
                false,
                &self.value(x).data,
                false,
                0.0,
                &mut out,
            );
        } else {
            let cols = im2col(&self.value(x).data, c, h, wd, k);
            gemm(
                o,
                c * k * k,
                hw,
                &self.value(w).data,
                false,
                &cols,
                false,
                0.0,
                &mut out,
            );
        }
        if let Some(b) = b {
            let bias = &self.value(b).data;
            assert_eq!(bias.len(), o, "conv bias length");
            for (ch, chunk) in out.chunks_mut(hw).enumerate() {
                for v in chunk {
                    *v += bias[ch];
                }
            }
        }
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        self.push(
            Tensor {
                shape: vec![o, h, wd],
                data: out,
            },
            Op::Conv2d { x, w, b },
            rg,
        )
    }

    /// Per-channel standardization of a `[C, H, W]` tensor.
    pub fn instance_norm(&mut self, x: Var, eps: f64) -> Var {
        let c = self.shape(x)[0];
        let (data, _) = normalize_groups(&self.value(x).data, c, eps);
        self.unary(x, data, Op::InstanceNorm { x, eps })
    }

    /// 2x2 average pooling of `[C, H, W]` with even `H`, `W`.
    pub fn avg_pool2(&mut self, x: Var) -> Var {
        let s = self.shape(x).to_vec();
        let (c, h, w) = (s[0], s[1], s[2]);
        assert!(
            h % 2 == 0 && w % 2 == 0,
            "avg_pool2 needs even spatial size, got {s:?}"
        );
        let (h2, w2) = (h / 2, w / 2);
        let v = &self.value(x).data;
        let mut data = vec![0.0; c * h2 * w2];
        for ch in 0..c {
            for y in 0..h2 {
                for xx in 0..w2 {
                    let base = ch * h * w + 2 * y * w + 2 * xx;
                    data[(ch * h2 + y) * w2 + xx] =
                        0.25 * (v[base] + v[base + 1] + v[base + w] + v[base + w + 1]);
                }
            }
        }
        let rg = self.rg(x);
        self.push(
            Tensor {
                shape: vec![c, h2, w2],
                data,
            },
            Op::AvgPool2(x),
            rg,
        )
    }

    /// Nearest-neighbour 2x upsampling of `[C, H, W]`.
    pub fn upsample2(&mut self, x: Var) -> Var {
        let s = self.shape(x).to_vec();
        let (c, h, w) = (s[0], s[1], s[2]);
        let v = &self.value(x).data;
        let mut data = vec![0.0; c * 4 * h * w];
        for ch in 0..c {
            for y in 0..2 * h {
                for xx in 0..2 * w {
                    data[(ch * 2 * h + y) * 2 * w + xx] = v[(ch * h + y / 2) * w + xx / 2];
                }
            }
        }
        let rg = self.rg(x);
        self.push(
            Tensor {
                shape: vec![c, 2 * h, 2 * w],
                data,
            },
            Op::Upsample2(x),
            rg,
        )
    }

    /// `[2, H, W]` real/imag planes to `[H, W]` smoothed magnitude
    /// `sqrt(re² + im² + eps²)`.
    pub fn magnitude(&mut self, x: Var, eps: f64) -> Var {
        let s = self.shape(x).to_vec();
        assert!(
            s.len() == 3 && s[0] == 2,
            "magnitude expects [2, H, W], got {s:?}"
        );
        let n = s[1] * s[2];
        let v = &self.value(x).data;
        let data = (0..n)
            .map(|i| (v[i] * v[i] + v[n + i] * v[n + i] + eps * eps).sqrt())
            .collect();
        let rg = self.rg(x);
        self.push(
            Tensor {
                shape: vec![s[1], s[2]],
                data,
            },
            Op::Magnitude(x),
            rg,
        )
    }

    /// Splits `[H, W]` into non-overlapping `patch x patch` tiles, giving
    /// `[(H/p)(W/p), p²]` in row-major tile order.
    pub fn patchify(&mut self, x: Var, patch: usize) -> Var {
        let s = self.shape(x).to_vec();
        assert!(
            s.len() == 2 && s[0] % patch == 0 && s[1] % patch == 0,
            "patchify {s:?} by {patch}"
        );
        let (h, w) = (s[0], s[1]);
        let (ph, pw) = (h / patch, w / patch);
        let v = &self.value(x).data;
        let mut data = vec![0.0; h * w];
        for py in 0..ph {
            for px in 0..pw {
                let t = py * pw + px;
                for i in 0..patch {
                    for j in 0..patch {
                        data[t * patch * patch + i * patch + j] =
                            v[(py * patch + i) * w + px * patch + j];
                    }
                }
            }
        }
        let rg = self.rg(x);
        self.push(
            Tensor {
                shape: vec![ph * pw, patch * patch],
                data,
            },
            Op::Patchify { x, patch },
            rg,
        )
    }

    /// Records an externally computed output with its backward rule.
    pub fn custom(&mut self, inputs: &[Var], output: Tensor, op: Box<dyn CustomOp + 'a>) -> Var {
        let rg = inputs.iter().any(|v| self.rg(*v));
        self.push(
            output,
            Op::Custom {
                inputs: inputs.to_vec(),
                op,
            },
            rg,
        )
    }

    /// Backpropagates from a scalar `root`.
    pub fn backward(&self, root: Var) -> Gradients {
        assert_eq!(
            self.value(root).len(),
            1,
            "backward from a non-scalar needs a seed"
        );
        self.backward_with(root, &[1.0])
    }

    /// Backpropagates `seed` (same length as `root`'s value).
    pub fn backward_with(&self, root: Var, seed: &[f64]) -> Gradients {
        assert_eq!(self.value(root).len(), seed.len(), "seed length mismatch");
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        if self.rg(root) {
            grads[root.0] = Some(seed.to_vec());
        }
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let push = |v: Var, gv: Vec<f64>, grads: &mut Vec<Option<Vec<f64>>>| {
                if self.rg(v) {
                    add_into(&mut grads[v.0], gv);
                }
            };
            match &node.op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    push(*a, g.clone(), &mut grads);
                    push(*b, g.clone(), &mut grads);
                }
                Op::Sub(a, b) => {
                    push(*a, g.clone(), &mut grads);
                    push(*b, g.iter().map(|v| -v).collect(), &mut grads);
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (&self.value(*a).data, &self.value(*b).data);
                    if self.rg(*a) {
                        push(
                            *a,
                            g.iter().zip(vb).map(|(x, y)| x * y).collect(),
                            &mut grads,
                        );
                    }
                    if self.rg(*b) {
                        push(
                            *b,
                            g.iter().zip(va).map(|(x, y)| x * y).collect(),
                            &mut grads,
                        );
                    }
                }
                Op::Scale(x, s) => push(*x, g.iter().map(|v| v * s).collect(), &mut grads),
                Op::AddRow(x, row) => {
                    let n = self.value(*row).len();
                    if self.rg(*row) {
                        let mut gr = vec![0.0; n];
                        for (i, v) in g.iter().enumerate() {
                            gr[i % n] += v;
                        }
                        push(*row, gr, &mut grads);
                    }
                    push(*x, g.clone(), &mut grads);
                }
                Op::MulRow(x, row) => {
                    let r = &self.value(*row).data;
                    let n = r.len();
                    if self.rg(*row) {
                        let xv = &self.value(*x).data;
                        let mut gr = vec![0.0; n];
                        for (i, v) in g.iter().enumerate() {
                            gr[i % n] += v * xv[i];
                        }
                        push(*row, gr, &mut grads);
                    }
                    if self.rg(*x) {
                        push(
                            *x,
                            g.iter().enumerate().map(|(i, v)| v * r[i % n]).collect(),
                            &mut grads,
                        );
                    }
                }
                Op::MatMul { a, b, ta, tb } => {
                    let (m, k, n) = self.mm_dims(*a, *b, *ta, *tb);
                    let (va, vb) = (&self.value(*a).data, &self.value(*b).data);
                    if self.rg(*a) {
                        let mut ga = vec![0.0; m * k];
                        if *ta {
                            // a is [k, m]: ga = op(b) · gᵀ
                            gemm(k, n, m, vb, *tb, &g, true, 0.0, &mut ga);
                        } else {
                            gemm(m, n, k, &g, false, vb, !*tb, 0.0, &mut ga);
                        }
                        push(*a, ga, &mut grads);
                    }
                    if self.rg(*b) {
                        let mut gb = vec![0.0; k * n];
                        if *tb {
                            // b is [n, k]: gb = gᵀ · op(a)
                            gemm(n, m, k, &g, true, va, *ta, 0.0, &mut gb);
                        } else {
                            gemm(k, m, n, va, !*ta, &g, false, 0.0, &mut gb);
                        }
                        push(*b, gb, &mut grads);
                    }
                }
                Op::Transpose(x) => {
                    let s = self.shape(*x);
                    let (r, c) = (s[0], s[1]);
                    let mut gx = vec![0.0; r * c];
                    for i in 0..r {
                        for j in 0..c {
                            gx[i * c + j] = g[j * r + i];
                        }
                    }
                    push(*x, gx, &mut grads);
                }
                Op::Reshape(x) => push(*x, g.clone(), &mut grads),
                Op::Sin(x) => {
                    let xv = &self.value(*x).data;
                    push(
                        *x,
                        g.iter().zip(xv).map(|(gv, v)| gv * v.cos()).collect(),
                        &mut grads,
                    );
                }
                Op::Relu(x) => {
                    let xv = &self.value(*x).data;
                    push(
                        *x,
                        g.iter()
                            .zip(xv)
                            .map(|(gv, v)| if *v > 0.0 { *gv } else { 0.0 })
                            .collect(),
                        &mut grads,
                    );
                }
                Op::Gelu(x) => {
                    let xv = &self.value(*x).data;
                    push(
                        *x,
                        g.iter().zip(xv).map(|(gv, &v)| gv * gelu(v).1).collect(),
                        &mut grads,
                    );
                }
                Op::Tanh(x) => {
                    let y = &node.value.data;
                    push(
                        *x,
                        g.iter().zip(y).map(|(gv, t)| gv * (1.0 - t * t)).collect(),
                        &mut grads,
                    );
                }
                Op::SoftmaxRows(x) => {
                    let y = &node.value.data;
                    let n = *node.value.shape.last().expect("non-scalar");
                    let mut gx = vec![0.0; y.len()];
                    for ((gr, yr), out) in g.chunks(n).zip(y.chunks(n)).zip(gx.chunks_mut(n)) {
                        let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                        for ((o, gv), yv) in out.iter_mut().zip(gr).zip(yr) {
                            *o = yv * (gv - dot);
                        }
                    }
                    push(*x, gx, &mut grads);
                }
                Op::LayerNormRows { x, eps } => {
                    let s = self.shape(*x);
                    let rows = if s.len() == 1 { 1 } else { s[0] };
                    let (y, inv_std) = normalize_groups(&self.value(*x).data, rows, *eps);
                    push(*x, normalize_groups_backward(&y, &inv_std, &g), &mut grads);
                }
                Op::MeanRows(x) => {
                    let s = self.shape(*x);
                    let (m, n) = (s[0], s[1]);
                    let mut gx = vec![0.0; m * n];
                    for row in gx.chunks_mut(n) {
                        for (o, gv) in row.iter_mut().zip(&g) {
                            *o = gv / m as f64;
                        }
                    }
                    push(*x, gx, &mut grads);
                }
                Op::L2Normalize(x) => {
                    let xv = &self.value(*x).data;
                    let norm = xv.iter().map(|a| a * a).sum::<f64>().sqrt();
                    let y = &node.value.data;
                    let dot: f64 = g.iter().zip(y).map(|(a, b)| a * b).sum();
                    push(
                        *x,
                        g.iter()
                            .zip(y)
                            .map(|(gv, yv)| (gv - yv * dot) / norm)
                            .collect(),
                        &mut grads,
                    );
                }
                Op::Sum(x) => {
                    let n = self.value(*x).len();
                    push(*x, vec![g[0]; n], &mut grads);
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let n = self.value(*p).len();
                        push(*p, g[offset..offset + n].to_vec(), &mut grads);
                        offset += n;
                    }
                }
                Op::Conv2d { x, w, b } => {
                    let (sx, sw) = (self.shape(*x), self.shape(*w));
                    let (c, h, wd) = (sx[0], sx[1], sx[2]);
                    let (o, k) = (sw[0], sw[2]);
                    let hw = h * wd;
                    if let Some(b) = b {
                        if self.rg(*b) {
                            push(
                                *b,
                                g.chunks(hw).map(|ch| ch.iter().sum()).collect(),
                                &mut grads,
                            );
                        }
                    }
                    let xv = &self.value(*x).data;
                    let wv = &self.value(*w).data;
                    let ckk = c * k * k;
                    let cols = if k == 1 {
                        None
                    } else {
                        Some(im2col(xv, c, h, wd, k))
                    };
                    let cols_ref = cols.as_deref().unwrap_or(xv);
                    if self.rg(*w) {
                        let mut gw = vec![0.0; o * ckk];
                        gemm(o, hw, ckk, &g, false, cols_ref, true, 0.0, &mut gw);
                        push(*w, gw, &mut grads);
                    }
                    if self.rg(*x) {
                        let mut gcols = vec![0.0; ckk * hw];
                        gemm(ckk, o, hw, wv, true, &g, false, 0.0, &mut gcols);
                        let gx = if k == 1 {
                            gcols
                        } else {
                            col2im(&gcols, c, h, wd, k)
                        };
                        push(*x, gx, &mut grads);
                    }
                }
                Op::InstanceNorm { x, eps } => {
                    let c = self.shape(*x)[0];
                    let (y, inv_std) = normalize_groups(&self.value(*x).data, c, *eps);
                    push(*x, normalize_groups_backward(&y, &inv_std, &g), &mut grads);
                }
                Op::AvgPool2(x) => {
                    let s = self.shape(*x);
                    let (c, h, w) = (s[0], s[1], s[2]);
                    let (h2, w2) = (h / 2, w / 2);
                    let mut gx = vec![0.0; c * h * w];
                    for ch in 0..c {
                        for y in 0..h {
                            for xx in 0..w {
                                gx[(ch * h + y) * w + xx] =
                                    0.25 * g[(ch * h2 + y / 2) * w2 + xx / 2];
                            }
                        }
                    }
                    push(*x, gx, &mut grads);
                }
                Op::Upsample2(x) => {
                    let s = self.shape(*x);
                    let (c, h, w) = (s[0], s[1], s[2]);
                    let mut gx = vec![0.0; c * h * w];
                    for ch in 0..c {
                        for y in 0..2 * h {
                            for xx in 0..2 * w {
                                gx[(ch * h + y / 2) * w + xx / 2] +=
                                    g[(ch * 2 * h + y) * 2 * w + xx];
                            }
                        }
                    }
                    push(*x, gx, &mut grads);
                }
                Op::Magnitude(x) => {
                    let xv = &self.value(*x).data;
                    let y = &node.value.data;
                    let n = y.len();
                    let mut gx = vec![0.0; 2 * n];
                    for i in 0..n {
                        gx[i] = g[i] * xv[i] / y[i];
                        gx[n + i] = g[i] * xv[n + i] / y[i];
                    }
                    push(*x, gx, &mut grads);
                }
                Op::Patchify { x, patch } => {
                    let s = self.shape(*x);
                    let (h, w) = (s[0], s[1]);
                    let p = *patch;
                    let pw = w / p;
                    let mut gx = vec![0.0; h * w];
                    for py in 0..h / p {
                        for px in 0..pw {
                            let t = py * pw + px;
                            for i in 0..p {
                                for j in 0..p {
                                    gx[(py * p + i) * w + px * p + j] = g[t * p * p + i * p + j];
                                }
                            }
                        }
                    }
                    push(*x, gx, &mut grads);
                }
                Op::Custom { inputs, op } => {
                    let vals: Vec<&Tensor> = inputs.iter().map(|v| self.value(*v)).collect();
                    let gs = op.backward(&vals, &node.value, &g);
                    for (v, gv) in inputs.iter().zip(gs) {
                        if let Some(gv) = gv {
                            push(*v, gv, &mut grads);
                        }
                    }
                }
            }
            grads[i] = Some(g);
        }
        Gradients { grads }
    }
}
