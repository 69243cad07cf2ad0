use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::params::{Bound, ParamStore};
use crate::autodiff::{CustomOp, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::mri::{adjoint, cg_solve, normal_op, zero_filled, AcquisitionData, ComplexImage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackboneKind {
    EndToEndUnet,
    Unrolled,
    Inr,
    /// Identity over pixels: the image itself is the parameter vector.
    Pixels,
}

impl BackboneKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::EndToEndUnet => "end_to_end_unet",
            Self::Unrolled => "unrolled",
            Self::Inr => "inr",
            Self::Pixels => "pixels",
        }
    }
}

impl std::str::FromStr for BackboneKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "end_to_end_unet" | "end_to_end" | "unet" => Ok(Self::EndToEndUnet),
            "unrolled" => Ok(Self::Unrolled),
            "inr" => Ok(Self::Inr),
            "pixels" => Ok(Self::Pixels),
            other => Err(Error::invalid(format!("unknown backbone {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnetSpec {
    pub levels: usize,
    pub base_channels: usize,
    /// Channels per level; empty means `base_channels · 2^level`.
    #[serde(default)]
    pub channels: Vec<usize>,
}

impl UnetSpec {
    pub fn channels(&self) -> Vec<usize> {
        if self.channels.is_empty() {
            (0..self.levels).map(|l| self.base_channels << l).collect()
        } else {
            self.channels.clone()
        }
    }
}

impl Default for UnetSpec {
    fn default() -> Self {
        Self {
            levels: 3,
            base_channels: 8,
            channels: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnrolledSpec {
    pub n_stages: usize,
    pub cg_tol: f64,
    pub cg_iters: usize,
    pub shared_weights: bool,
    /// Weight of the network output inside each data-consistency solve.
    pub mu: f64,
}

impl Default for UnrolledSpec {
    fn default() -> Self {
        Self {
            n_stages: 4,
            cg_tol: 1e-6,
            cg_iters: 20,
            shared_weights: false,
            mu: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InrSpec {
    /// Linear layers including the output layer.
    pub n_layers: usize,
    pub hidden_units: usize,
    pub omega0: f64,
}

impl Default for InrSpec {
    fn default() -> Self {
        Self {
            n_layers: 4,
            hidden_units: 64,
            omega0: 30.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneSpec {
    pub kind: BackboneKind,
    #[serde(default)]
    pub unet: UnetSpec,
    #[serde(default)]
    pub unrolled: UnrolledSpec,
    #[serde(default)]
    pub inr: InrSpec,
}

impl BackboneSpec {
    pub fn new(kind: BackboneKind) -> Self {
        Self {
            kind,
            unet: UnetSpec::default(),
            unrolled: UnrolledSpec::default(),
            inr: InrSpec::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            BackboneKind::EndToEndUnet | BackboneKind::Unrolled => {
                let ch = self.unet.channels();
                if self.unet.levels == 0 || ch.len() != self.unet.levels || ch.contains(&0) {
                    return Err(Error::invalid(
                        "U-Net needs at least one level with non-zero channels",
                    ));
                }
                if self.kind == BackboneKind::Unrolled {
                    let u = &self.unrolled;
                    if u.n_stages == 0 || !(u.cg_tol > 0.0) || u.cg_iters == 0 || !(u.mu >= 0.0) {
                        return Err(Error::invalid(
                            "unrolled network needs n_stages ≥ 1, cg_tol > 0, cg_iters ≥ 1, mu ≥ 0",
                        ));
                    }
                }
            }
            BackboneKind::Inr => {
                if self.inr.n_layers < 2 || self.inr.hidden_units == 0 || !(self.inr.omega0 > 0.0) {
                    return Err(Error::invalid(
                        "INR needs n_layers ≥ 2, hidden_units ≥ 1, omega0 > 0",
                    ));
                }
            }
            BackboneKind::Pixels => {}
        }
        Ok(())
    }
}

/// A built network: its spec and the image size it was built for.
#[derive(Debug, Clone, PartialEq)]
pub struct Backbone {
    pub spec: BackboneSpec,
    pub height: usize,
    pub width: usize,
}

/// Per-pixel coordinates normalized to [−1, 1], shape `[H·W, 2]` as (y, x).
pub fn coordinate_grid(height: usize, width: usize) -> Tensor {
    let axis = |i: usize, n: usize| {
        if n > 1 {
            -1.0 + 2.0 * i as f64 / (n - 1) as f64
        } else {
            0.0
        }
    };
    let mut data = Vec::with_capacity(2 * height * width);
    for y in 0..height {
        for x in 0..width {
            data.push(axis(y, height));
            data.push(axis(x, width));
        }
    }
    Tensor {
        shape: vec![height * width, 2],
        data,
    }
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, bound: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-bound..=bound)).collect()
}

fn add_unet_params(p: &mut ParamStore, prefix: &str, channels: &[usize], rng: &mut ChaCha8Rng) {
    let conv =
        |p: &mut ParamStore, rng: &mut ChaCha8Rng, name: String, o: usize, c: usize, k: usize| {
            let fan_in = (c * k * k) as f64;
            let w = uniform(rng, o * c * k * k, (6.0 / fan_in).sqrt());
            p.push(&name, &[o, c, k, k], w);
        };
    let levels = channels.len();
    let mut c_in = 2;
    for (l, &c) in channels.iter().enumerate() {
        conv(p, rng, format!("{prefix}.enc{l}.conv1.weight"), c, c_in, 3);
        conv(p, rng, format!("{prefix}.enc{l}.conv2.weight"), c, c, 3);
        c_in = c;
    }
    for l in (0..levels.saturating_sub(1)).rev() {
        let c = channels[l];
        conv(
            p,
            rng,
            format!("{prefix}.dec{l}.conv1.weight"),
            c,
            channels[l + 1] + c,
            3,
        );
        conv(p, rng, format!("{prefix}.dec{l}.conv2.weight"), c, c, 3);
    }
    let c0 = channels[0];
    let w = uniform(rng, 2 * c0, 0.1 / (c0 as f64).sqrt());
    p.push(&format!("{prefix}.out.weight"), &[2, c0, 1, 1], w);
    p.push(&format!("{prefix}.out.bias"), &[2], vec![0.0; 2]);
}

fn add_inr_params(p: &mut ParamStore, spec: &InrSpec, rng: &mut ChaCha8Rng) {
    let h = spec.hidden_units;
    for l in 0..spec.n_layers {
        let n_in = if l == 0 { 2 } else { h };
        let n_out = if l + 1 == spec.n_layers { 2 } else { h };
        let bound = if l == 0 {
            1.0 / n_in as f64
        } else {
            (6.0 / n_in as f64).sqrt() / spec.omega0
        };
        p.push(
            &format!("inr.l{l}.weight"),
            &[n_out, n_in],
            uniform(rng, n_out * n_in, bound),
        );
        let b = uniform(rng, n_out, 1.0 / (n_in as f64).sqrt());
        p.push(&format!("inr.l{l}.bias"), &[n_out], b);
    }
}

/// Builds a backbone for `height × width` images with seeded initialization.
pub fn build_backbone(
    spec: &BackboneSpec,
    height: usize,
    width: usize,
    seed: u64,
) -> Result<(ParamStore, Backbone)> {
    spec.validate()?;
    if height == 0 || width == 0 {
        return Err(Error::invalid("image size must be non-zero"));
    }
    if matches!(
        spec.kind,
        BackboneKind::EndToEndUnet | BackboneKind::Unrolled
    ) {
        let f = 1usize << (spec.unet.levels - 1);
        if height % f != 0 || width % f != 0 {
            return Err(Error::invalid(format!(
                "{height}x{width} is not divisible by {f} for a {}-level U-Net",
                spec.unet.levels
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ParamStore::new();
    let channels = spec.unet.channels();
    match spec.kind {
        BackboneKind::EndToEndUnet => add_unet_params(&mut p, "unet", &channels, &mut rng),
        BackboneKind::Unrolled => {
            let blocks = if spec.unrolled.shared_weights {
                1
            } else {
                spec.unrolled.n_stages
            };
            for s in 0..blocks {
                add_unet_params(&mut p, &format!("stage{s}"), &channels, &mut rng);
            }
        }
        BackboneKind::Inr => add_inr_params(&mut p, &spec.inr, &mut rng),
        BackboneKind::Pixels => p.push(
            "pixels.image",
            &[2, height, width],
            vec![0.0; 2 * height * width],
        ),
    }
    Ok((
        p,
        Backbone {
            spec: spec.clone(),
            height,
            width,
        },
    ))
}

/// Data-consistency step `x = (AᴴA + μI)⁻¹ (Aᴴs + μ z)` solved by CG from `z`.
struct DcStep {
    acq: Arc<AcquisitionData>,
    mu: f64,
    tol: f64,
    iters: usize,
}

impl DcStep {
    fn solve(&self, z: &ComplexImage) -> Result<ComplexImage> {
        let a = &self.acq;
        let mut rhs = adjoint(&a.kspace, &a.coils, &a.mask)?;
        for (r, v) in rhs.data.iter_mut().zip(&z.data) {
            *r += v * self.mu;
        }
        let op = |v: &ComplexImage| normal_op(v, &a.coils, &a.mask, self.mu);
        Ok(cg_solve(op, &rhs, Some(z), self.tol, self.iters)?.x)
    }

    fn vjp(&self, g: &ComplexImage) -> Result<ComplexImage> {
        let a = &self.acq;
        if self.mu > 0.0 {
            let op = |v: &ComplexImage| normal_op(v, &a.coils, &a.mask, self.mu);
            Ok(cg_solve(op, g, None, self.tol, self.iters)?
                .x
                .scale(self.mu))
        } else {
            // z only survives through the null space of AᴴA
            let op = |v: &ComplexImage| normal_op(v, &a.coils, &a.mask, 0.0);
            let ag = op(g)?;
            let back = cg_solve(op, &ag, None, self.tol, self.iters)?.x;
            let data = g.data.iter().zip(&back.data).map(|(a, b)| a - b).collect();
            ComplexImage::new(g.height, g.width, data)
        }
    }
}

impl CustomOp for DcStep {
    fn backward(
        &self,
        inputs: &[&Tensor],
        _output: &Tensor,
        grad: &[f64],
    ) -> Vec<Option<Vec<f64>>> {
        let shape = inputs[0].shape.clone();
        let g = Tensor {
            shape: shape.clone(),
            data: grad.to_vec(),
        };
        let out = g
            .to_image()
            .and_then(|g| self.vjp(&g))
            .map(|v| Tensor::from_image(&v).data)
            .unwrap_or_else(|_| vec![f64::NAN; grad.len()]);
        vec![Some(out)]
    }
}

impl Backbone {
    /// Network input `d`: the zero-filled image for image-domain networks,
    /// the coordinate grid for the INR.
    pub fn input(&self, acq: &AcquisitionData) -> Result<Tensor> {
        if acq.shape() != (self.height, self.width) {
            return Err(Error::dim(format!(
                "acquisition is {:?}, backbone built for {}x{}",
                acq.shape(),
                self.height,
                self.width
            )));
        }
        Ok(match self.spec.kind {
            BackboneKind::Inr => coordinate_grid(self.height, self.width),
            _ => Tensor::from_image(&zero_filled(acq)?),
        })
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        let expected = match self.spec.kind {
            BackboneKind::Inr => vec![self.height * self.width, 2],
            _ => vec![2, self.height, self.width],
        };
        if shape != expected.as_slice() {
            return Err(Error::dim(format!(
                "backbone input {shape:?}, expected {expected:?}"
            )));
        }
        Ok(())
    }

    fn unet<'a>(&self, tape: &mut Tape<'a>, b: &Bound, prefix: &str, x: Var) -> Var {
        let levels = self.spec.unet.levels;
        let block = |tape: &mut Tape<'a>, name: String, mut h: Var| {
            for conv in ["conv1", "conv2"] {
                h = tape.conv2d(h, b.get(&format!("{name}.{conv}.weight")), None);
                h = tape.instance_norm(h, 1e-5);
                h = tape.relu(h);
            }
            h
        };
        let mut skips = Vec::with_capacity(levels);
        let mut h = x;
        for l in 0..levels {
            if l > 0 {
                h = tape.avg_pool2(h);
            }
            h = block(tape, format!("{prefix}.enc{l}"), h);
            skips.push(h);
        }
        for l in (0..levels - 1).rev() {
            let up = tape.upsample2(h);
            let cat = tape.concat_channels(up, skips[l]);
            h = block(tape, format!("{prefix}.dec{l}"), cat);
        }
        let out = tape.conv2d(
            h,
            b.get(&format!("{prefix}.out.weight")),
            Some(b.get(&format!("{prefix}.out.bias"))),
        );
        tape.add(x, out)
    }

    fn inr<'a>(&self, tape: &mut Tape<'a>, b: &Bound, coords: Var) -> Var {
        let n = self.spec.inr.n_layers;
        let mut h = coords;
        for l in 0..n {
            let z = tape.matmul_t(h, b.get(&format!("inr.l{l}.weight")), false, true);
            let z = tape.add_row(z, b.get(&format!("inr.l{l}.bias")));
            h = if l + 1 == n {
                z
            } else {
                let z = tape.scale(z, self.spec.inr.omega0);
                tape.sin(z)
            };
        }
        let t = tape.transpose(h);
        tape.reshape(t, &[2, self.height, self.width])
    }

    /// Records `f_θ(d)` on `tape`; the output is a `[2, H, W]` image.
    /// `acq` is required by the unrolled network.
    pub fn forward<'a>(
        &self,
        tape: &mut Tape<'a>,
        params: &Bound,
        input: Var,
        acq: Option<&Arc<AcquisitionData>>,
    ) -> Result<Var> {
        self.check_input(tape.shape(input))?;
        match self.spec.kind {
            BackboneKind::EndToEndUnet => Ok(self.unet(tape, params, "unet", input)),
            BackboneKind::Inr => Ok(self.inr(tape, params, input)),
            BackboneKind::Pixels => Ok(params.get("pixels.image")),
            BackboneKind::Unrolled => {
                let acq =
                    acq.ok_or_else(|| Error::invalid("unrolled network needs the acquisition"))?;
                if acq.shape() != (self.height, self.width) {
                    return Err(Error::dim("acquisition shape differs from backbone"));
                }
                let u = &self.spec.unrolled;
                let mut x = input;
                for s in 0..u.n_stages {
                    let block = if u.shared_weights { 0 } else { s };
                    let z = self.unet(tape, params, &format!("stage{block}"), x);
                    let step = DcStep {
                        acq: Arc::clone(acq),
                        mu: u.mu,
                        tol: u.cg_tol,
                        iters: u.cg_iters,
                    };
                    let out = step.solve(&tape.value(z).to_image()?)?;
                    x = tape.custom(&[z], Tensor::from_image(&out), Box::new(step));
                }
                Ok(x)
            }
        }
    }
}

/// Stateful wrapper pairing one forward pass with its backward pass.
pub struct Network {
    pub backbone: Backbone,
    pub params: ParamStore,
    acq: Option<Arc<AcquisitionData>>,
    pending: Option<(Tape<'static>, Bound, Var)>,
}

impl Network {
    pub fn new(backbone: Backbone, params: ParamStore, acq: Option<Arc<AcquisitionData>>) -> Self {
        Self {
            backbone,
            params,
            acq,
            pending: None,
        }
    }

    pub fn forward(&mut self, input: &Tensor) -> Result<ComplexImage> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let x = tape.constant(input.clone());
        let out = self
            .backbone
            .forward(&mut tape, &bound, x, self.acq.as_ref())?;
        let image = tape.value(out).to_image()?;
        self.pending = Some((tape, bound, out));
        Ok(image)
    }

    /// Zeroes the gradient buffer and fills it with `d(loss)/dθ` given
    /// `d(loss)/d(output)` as a `[2, H, W]` tensor.
    pub fn backward(&mut self, loss_grad: &Tensor) -> Result<()> {
        let (tape, bound, out) = self
            .pending
            .take()
            .ok_or_else(|| Error::State("backward called without a preceding forward".into()))?;
        if tape.shape(out) != loss_grad.shape.as_slice() {
            return Err(Error::dim(format!(
                "loss gradient {:?} does not match output {:?}",
                loss_grad.shape,
                tape.shape(out)
            )));
        }
        self.params.zero_grad();
        let grads = tape.backward_with(out, &loss_grad.data);
        self.params.accumulate(&bound, &grads);
        Ok(())
    }
}
