use std::sync::Arc;

use crate::autodiff::{CustomOp, Tape, Tensor, Var};
use crate::contrastive::{prior_loss_on_tape, ContrastiveConfig, Level, PriorPair, Variant};
use crate::encoder::{Encoder, Instruction};
use crate::error::{Error, Result};
use crate::mri::{adjoint, forward_model, AcquisitionData, ComplexImage};

/// `½ Σ_j ‖S_j − M F C_j I‖²` and its image gradient `Aᴴ(A I − S)`.
pub fn dc_loss(image: &ComplexImage, acq: &AcquisitionData) -> Result<(f64, ComplexImage)> {
    if image.shape() != acq.shape() {
        return Err(Error::dim(format!(
            "image {:?} does not match acquisition {:?}",
            image.shape(),
            acq.shape()
        )));
    }
    let pred = forward_model(image, &acq.coils, &acq.mask)?;
    let residual: Vec<ComplexImage> = pred
        .iter()
        .zip(&acq.kspace)
        .map(|(p, s)| {
            let mut r = p.clone();
            for ((v, &m), s) in r.data.iter_mut().zip(&acq.mask.pattern).zip(&s.data) {
                *v = if m == 0 { Default::default() } else { *v - s };
            }
            r
        })
        .collect();
    let value = 0.5 * residual.iter().map(ComplexImage::norm_sqr).sum::<f64>();
    Ok((value, adjoint(&residual, &acq.coils, &acq.mask)?))
}

/// Smoothed isotropic TV summed over the real and imaginary planes of a
/// `[2, H, W]` tensor, with its gradient.
pub fn tv_values(x: &[f64], h: usize, w: usize, eps: f64) -> Result<(f64, Vec<f64>)> {
    if !(eps > 0.0) {
        return Err(Error::invalid(format!("TV smoothing must be positive, got {eps}")));
    }
    if x.len() != 2 * h * w {
        return Err(Error::dim("TV input must be [2, H, W]"));
    }
    let mut value = 0.0;
    let mut grad = vec![0.0; x.len()];
    for plane in 0..2 {
        let o = plane * h * w;
        for y in 0..h {
            for c in 0..w {
                let p = o + y * w + c;
                let dx = if c + 1 < w { x[p + 1] - x[p] } else { 0.0 };
                let dy = if y + 1 < h { x[p + w] - x[p] } else { 0.0 };
                let t = (dx * dx + dy * dy + eps * eps).sqrt();
                value += t - eps;
                if c + 1 < w {
                    grad[p + 1] += dx / t;
                }
                if y + 1 < h {
                    grad[p + w] += dy / t;
                }
                grad[p] -= (dx + dy) / t;
            }
        }
    }
    Ok((value, grad))
}

pub fn tv_loss(image: &ComplexImage, eps: f64) -> Result<(f64, ComplexImage)> {
    let t = Tensor::from_image(image);
    let (v, g) = tv_values(&t.data, image.height, image.width, eps)?;
    Ok((
        v,
        Tensor {
            shape: t.shape,
            data: g,
        }
        .to_image()?,
    ))
}

struct FixedGrad {
    grad: Vec<f64>,
}

impl CustomOp for FixedGrad {
    fn backward(&self, _inputs: &[&Tensor], _output: &Tensor, grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        vec![Some(self.grad.iter().map(|g| g * grad[0]).collect())]
    }
}

/// Records [`dc_loss`] of a `[2, H, W]` variable.
pub fn dc_loss_on_tape<'a>(tape: &mut Tape<'a>, x: Var, acq: &AcquisitionData) -> Result<Var> {
    let img = tape.value(x).to_image()?;
    let (v, g) = dc_loss(&img, acq)?;
    Ok(tape.custom(&[x], Tensor::scalar(v), Box::new(FixedGrad { grad: Tensor::from_image(&g).data })))
}

pub fn tv_loss_on_tape<'a>(tape: &mut Tape<'a>, x: Var, eps: f64) -> Result<Var> {
    let shape = tape.shape(x).to_vec();
    if shape.len() != 3 || shape[0] != 2 {
        return Err(Error::dim(format!("TV input must be [2, H, W], got {shape:?}")));
    }
    let (v, g) = tv_values(&tape.value(x).data, shape[1], shape[2], eps)?;
    Ok(tape.custom(&[x], Tensor::scalar(v), Box::new(FixedGrad { grad: g })))
}

/// Which semantic objective to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SemanticMode {
    /// Weighted sum over the low, mid and high image levels.
    Image,
    /// Multi-positive loss on the fused image-instruction embedding.
    Language,
}

/// Frozen encoder plus detached prior sets.
#[derive(Debug, Clone)]
pub struct SemanticContext {
    pub encoder: Arc<Encoder>,
    pub priors: Vec<Arc<PriorPair>>,
    pub instruction: Option<Instruction>,
    pub contrastive: ContrastiveConfig,
}

impl SemanticContext {
    pub fn new(encoder: Arc<Encoder>, priors: Vec<PriorPair>) -> Self {
        Self {
            encoder,
            priors: priors.into_iter().map(Arc::new).collect(),
            instruction: None,
            contrastive: ContrastiveConfig::default(),
        }
    }

    pub fn with_instruction(mut self, instruction: Instruction) -> Self {
        self.instruction = Some(instruction);
        self
    }

    pub fn prior(&self, level: Level) -> Option<&Arc<PriorPair>> {
        self.priors.iter().find(|p| p.level == level)
    }

    /// Checks that every level the mode needs has a prior.
    pub fn validate(&self, mode: SemanticMode) -> Result<()> {
        self.contrastive.validate()?;
        match mode {
            SemanticMode::Image => {
                for level in Level::IMAGE {
                    if self.contrastive.weight(level) != 0.0 && self.prior(level).is_none() {
                        return Err(Error::invalid(format!("no prior for level {}", level.name())));
                    }
                }
            }
            SemanticMode::Language => {
                if self.instruction.is_none() {
                    return Err(Error::invalid("language mode needs an instruction"));
                }
                if self.prior(Level::Language).is_none() {
                    return Err(Error::invalid("no language-level prior"));
                }
            }
        }
        Ok(())
    }
}

/// Embeddings recorded while evaluating the semantic loss.
pub struct SemanticVars {
    pub loss: Var,
    pub levels: [Var; 3],
    pub language: Option<Var>,
}

/// Records the semantic regularizer of a `[2, H, W]` variable through the
/// frozen encoder.
pub fn semantic_loss_on_tape<'a>(
    tape: &mut Tape<'a>,
    x: Var,
    ctx: &SemanticContext,
    mode: SemanticMode,
) -> Result<SemanticVars> {
    ctx.validate(mode)?;
    let enc = &ctx.encoder;
    let b = enc.bind_frozen(tape);
    let levels = enc.encode_image_on_tape(tape, &b, x)?;
    let tau = ctx.contrastive.temperature;
    match mode {
        SemanticMode::Image => {
            let mut total: Option<Var> = None;
            for (level, e) in Level::IMAGE.iter().zip(levels) {
                let w = ctx.contrastive.weight(*level);
                if w == 0.0 {
                    continue;
                }
                let prior = ctx.prior(*level).expect("validated");
                let l = prior_loss_on_tape(tape, e, prior, tau, ctx.contrastive.variant)?;
                let l = tape.scale(l, w);
                total = Some(match total {
                    None => l,
                    Some(t) => tape.add(t, l),
                });
            }
            let loss = match total {
                Some(t) => t,
                None => tape.constant(Tensor::scalar(0.0)),
            };
            Ok(SemanticVars {
                loss,
                levels,
                language: None,
            })
        }
        SemanticMode::Language => {
            let ins = ctx.instruction.as_ref().expect("validated");
            let text = tape.constant(Tensor::from_vec(enc.encode_text(ins)?));
            let fused = enc.fuse_on_tape(tape, &b, levels[2], text)?;
            let prior = ctx.prior(Level::Language).expect("validated");
            let loss = prior_loss_on_tape(tape, fused, prior, tau, Variant::MultiPositiveEq3)?;
            Ok(SemanticVars {
                loss,
                levels,
                language: Some(fused),
            })
        }
    }
}

/// Semantic loss of `image` and its gradient with respect to the pixels.
pub fn semantic_loss(image: &ComplexImage, ctx: &SemanticContext, mode: SemanticMode) -> Result<(f64, ComplexImage)> {
    let mut tape = Tape::new();
    let x = tape.param(Tensor::from_image(image));
    let vars = semantic_loss_on_tape(&mut tape, x, ctx, mode)?;
    let value = tape.value(vars.loss).item();
    let grads = tape.backward(vars.loss);
    let g = Tensor {
        shape: vec![2, image.height, image.width],
        data: grads.get_or_zeros(x, 2 * image.len()),
    };
    Ok((value, g.to_image()?))
}
