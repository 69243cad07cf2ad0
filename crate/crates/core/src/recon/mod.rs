//! Network-parameterized reconstruction: data consistency plus an optional
//! TV or semantic regularizer, optimized with Adam, with warm start,
//! low-rank fine-tuning and trajectory logging.

mod losses;
mod trajectory;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use losses::{
    dc_loss, dc_loss_on_tape, semantic_loss, semantic_loss_on_tape, tv_loss, tv_loss_on_tape, tv_values,
    SemanticContext, SemanticMode, SemanticVars,
};
pub use trajectory::{
    pca2, project_trajectory, read_projection_csv, write_projection_csv, MetricSnapshot, PointKind,
    ProjectedPoint, TrajectoryLog, TrajectoryRecord,
};

use crate::autodiff::{Tape, Tensor};
use crate::contrastive::Level;
use crate::encoder::classify_quality;
use crate::error::{Error, Result};
use crate::metrics::MetricReport;
use crate::mri::{zero_filled, AcquisitionData, ComplexImage};
use crate::nn::{build_backbone, Backbone, BackboneKind, BackboneSpec, LoraConfig, ParamStore};
use crate::optim::{Adam, AdamConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regularizer {
    None,
    Tv,
    SemanticImage,
    SemanticLanguage,
}

impl Regularizer {
    pub fn name(self) -> &'static str {
        match self {
            Regularizer::None => "none",
            Regularizer::Tv => "tv",
            Regularizer::SemanticImage => "semantic_image",
            Regularizer::SemanticLanguage => "semantic_language",
        }
    }

    pub fn semantic_mode(self) -> Option<SemanticMode> {
        match self {
            Regularizer::SemanticImage => Some(SemanticMode::Image),
            Regularizer::SemanticLanguage => Some(SemanticMode::Language),
            _ => None,
        }
    }
}

impl std::str::FromStr for Regularizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "tv" => Ok(Self::Tv),
            "semantic_image" => Ok(Self::SemanticImage),
            "semantic_language" => Ok(Self::SemanticLanguage),
            other => Err(Error::invalid(format!("unknown regularizer {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    /// Step size; `None` picks the backbone default.
    pub lr: Option<f64>,
    pub iterations: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            lr: None,
            iterations: 500,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Default Adam step size per backbone.
pub fn default_lr(kind: BackboneKind) -> f64 {
    match kind {
        BackboneKind::Inr => 1e-3,
        BackboneKind::EndToEndUnet | BackboneKind::Unrolled => 1e-4,
        BackboneKind::Pixels => 1e-2,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WarmStartConfig {
    /// Parameters to start from instead of the seeded initialization.
    pub checkpoint: Option<PathBuf>,
    /// Iterations over the auxiliary acquisitions (round robin).
    pub steps: usize,
    /// Include the regularizer during warm start; otherwise DC only.
    pub use_regularizer: bool,
}

impl Default for WarmStartConfig {
    fn default() -> Self {
        Self {
            checkpoint: None,
            steps: 200,
            use_regularizer: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReconConfig {
    pub backbone: BackboneSpec,
    pub regularizer: Regularizer,
    pub lambda: f64,
    pub tv_epsilon: f64,
    pub optimizer: OptimizerConfig,
    pub warm_start: Option<WarmStartConfig>,
    pub lora: Option<LoraConfig>,
    pub seed: u64,
    pub log_every: usize,
}

impl Default for ReconConfig {
    fn default() -> Self {
        Self {
            backbone: BackboneSpec::new(BackboneKind::Inr),
            regularizer: Regularizer::None,
            lambda: 0.1,
            tv_epsilon: 1e-3,
            optimizer: OptimizerConfig::default(),
            warm_start: None,
            lora: None,
            seed: 0,
            log_every: 25,
        }
    }
}

impl ReconConfig {
    /// Pixel-space TV compressed sensing started from the zero-filled image.
    pub fn tv_cs(iterations: usize, lambda: f64, seed: u64) -> Self {
        Self {
            backbone: BackboneSpec::new(BackboneKind::Pixels),
            regularizer: Regularizer::Tv,
            lambda,
            optimizer: OptimizerConfig {
                iterations,
                ..OptimizerConfig::default()
            },
            seed,
            ..Self::default()
        }
    }

    pub fn lr(&self) -> f64 {
        self.optimizer.lr.unwrap_or_else(|| default_lr(self.backbone.kind))
    }

    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::invalid(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if self.optimizer.iterations == 0 {
            return Err(Error::invalid("iterations must be at least 1"));
        }
        if !(self.lr() > 0.0) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if self.log_every == 0 {
            return Err(Error::invalid("log_every must be at least 1"));
        }
        if !(self.tv_epsilon > 0.0) {
            return Err(Error::invalid("TV smoothing must be positive"));
        }
        if let Some(l) = &self.lora {
            if l.rank == 0 {
                return Err(Error::invalid("LoRA rank must be at least 1"));
            }
        }
        Ok(())
    }
}

/// Everything `reconstruct` reads besides the config.
#[derive(Debug, Clone, Copy, Default)]
pub struct ReconInputs<'a> {
    pub semantic: Option<&'a SemanticContext>,
    /// Auxiliary acquisitions used by the warm start.
    pub auxiliary: &'a [AcquisitionData],
    /// Ground truth for metric snapshots in the log.
    pub reference: Option<&'a ComplexImage>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub dc: f64,
    pub reg: f64,
}

#[derive(Debug, Clone)]
pub struct ReconOutput {
    pub image: ComplexImage,
    pub log: TrajectoryLog,
    /// Raw loss terms at every main-phase iteration, including the final
    /// evaluation after the last update.
    pub history: Vec<LossRecord>,
    pub params: ParamStore,
}

struct Evaluation {
    dc: f64,
    reg: f64,
    image: ComplexImage,
    grads: Option<Vec<f64>>,
    embeddings: BTreeMap<String, Vec<f64>>,
}

struct Problem<'a> {
    cfg: &'a ReconConfig,
    backbone: &'a Backbone,
    semantic: Option<&'a SemanticContext>,
}

impl Problem<'_> {
    /// One forward pass; `scales` are the DC and regularizer normalizers,
    /// and `None` skips the backward pass.
    fn evaluate(
        &self,
        params: &ParamStore,
        acq: &Arc<AcquisitionData>,
        input: &Tensor,
        with_reg: bool,
        scales: Option<(f64, f64)>,
    ) -> Result<Evaluation> {
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let x = tape.constant(input.clone());
        let out = self.backbone.forward(&mut tape, &bound, x, Some(acq))?;
        let dc = dc_loss_on_tape(&mut tape, out, acq)?;
        let mut embeddings = BTreeMap::new();
        let reg = if with_reg {
            match self.cfg.regularizer {
                Regularizer::None => None,
                Regularizer::Tv => Some(tv_loss_on_tape(&mut tape, out, self.cfg.tv_epsilon)?),
                Regularizer::SemanticImage | Regularizer::SemanticLanguage => {
                    let mode = self.cfg.regularizer.semantic_mode().expect("semantic");
                    let ctx = self.semantic.expect("validated");
                    let vars = semantic_loss_on_tape(&mut tape, out, ctx, mode)?;
                    for (level, v) in Level::IMAGE.iter().zip(vars.levels) {
                        embeddings.insert(level.name().to_string(), tape.value(v).data.clone());
                    }
                    if let Some(l) = vars.language {
                        embeddings.insert(Level::Language.name().to_string(), tape.value(l).data.clone());
                    }
                    Some(vars.loss)
                }
            }
        } else {
            None
        };
        let dc_v = tape.value(dc).item();
        let reg_v = reg.map_or(0.0, |r| tape.value(r).item());
        let image = tape.value(out).to_image()?;
        let grads = match scales {
            None => None,
            Some((sd, sr)) => {
                let dcn = tape.scale(dc, 1.0 / sd);
                let total = match reg {
                    Some(r) => {
                        let rn = tape.scale(r, self.cfg.lambda / sr);
                        tape.add(dcn, rn)
                    }
                    None => dcn,
                };
                let g = tape.backward(total);
                let mut store = params.clone();
                store.zero_grad();
                store.accumulate(&bound, &g);
                Some(store.grads)
            }
        };
        Ok(Evaluation {
            dc: dc_v,
            reg: reg_v,
            image,
            grads,
            embeddings,
        })
    }
}

fn normalizer(v: f64) -> f64 {
    if v.abs() > 1e-12 && v.is_finite() {
        v.abs()
    } else {
        1.0
    }
}

fn check_finite(iteration: usize, e: &Evaluation, lambda: f64) -> Result<()> {
    let total = e.dc + lambda * e.reg;
    if !total.is_finite() || e.grads.as_ref().is_some_and(|g| g.iter().any(|v| !v.is_finite())) {
        return Err(Error::Divergence {
            iteration,
            reason: format!("non-finite loss (dc {}, reg {})", e.dc, e.reg),
        });
    }
    Ok(())
}

/// Optimizes the backbone parameters for `acq`; see [`ReconConfig`].
pub fn reconstruct(acq: &AcquisitionData, cfg: &ReconConfig, inputs: ReconInputs<'_>) -> Result<ReconOutput> {
    cfg.validate()?;
    acq.validate()?;
    let mode = cfg.regularizer.semantic_mode();
    if let Some(mode) = mode {
        let ctx = inputs
            .semantic
            .ok_or_else(|| Error::invalid(format!("{} needs an encoder and priors", cfg.regularizer.name())))?;
        ctx.validate(mode)?;
    }
    let (h, w) = acq.shape();
    for a in inputs.auxiliary {
        if a.shape() != (h, w) {
            return Err(Error::dim("auxiliary acquisition shape differs from the target"));
        }
    }
    let use_reg = cfg.lambda != 0.0 && cfg.regularizer != Regularizer::None;
    let (mut params, backbone) = build_backbone(&cfg.backbone, h, w, cfg.seed)?;
    let problem = Problem {
        cfg,
        backbone: &backbone,
        semantic: inputs.semantic,
    };
    let adam_cfg = AdamConfig {
        lr: cfg.lr(),
        beta1: cfg.optimizer.beta1,
        beta2: cfg.optimizer.beta2,
        eps: cfg.optimizer.eps,
    };

    if let Some(ws) = &cfg.warm_start {
        if let Some(path) = &ws.checkpoint {
            let loaded = ParamStore::load(path)?;
            if loaded.layout().segments.iter().map(|s| (&s.name, &s.shape)).ne(params
                .layout()
                .segments
                .iter()
                .map(|s| (&s.name, &s.shape)))
            {
                return Err(Error::format(path, "warm-start checkpoint does not match the backbone"));
            }
            params = loaded;
        }
        if ws.steps > 0 {
            if inputs.auxiliary.is_empty() {
                return Err(Error::invalid("warm start needs auxiliary acquisitions"));
            }
            let aux: Vec<Arc<AcquisitionData>> = inputs.auxiliary.iter().cloned().map(Arc::new).collect();
            let aux_inputs: Vec<Tensor> = aux.iter().map(|a| backbone.input(a)).collect::<Result<_>>()?;
            let warm_reg = use_reg && ws.use_regularizer;
            let mut scales: Vec<Option<(f64, f64)>> = vec![None; aux.len()];
            let mut adam = Adam::new(adam_cfg, params.len());
            let mask = params.trainable_mask();
            for step in 0..ws.steps {
                let k = step % aux.len();
                if scales[k].is_none() {
                    let e = problem.evaluate(&params, &aux[k], &aux_inputs[k], warm_reg, None)?;
                    scales[k] = Some((normalizer(e.dc), normalizer(e.reg)));
                }
                let e = problem.evaluate(&params, &aux[k], &aux_inputs[k], warm_reg, scales[k])?;
                check_finite(step, &e, cfg.lambda)?;
                adam.step(&mut params.values, e.grads.as_ref().expect("gradients"), &mask);
            }
        }
    }
    if let Some(l) = &cfg.lora {
        params = params.apply_lora(l)?;
    }
    if cfg.backbone.kind == BackboneKind::Pixels {
        let zf = Tensor::from_image(&zero_filled(acq)?);
        params
            .get_mut("pixels.image")
            .expect("pixel backbone")
            .copy_from_slice(&zf.data);
    }

    let acq = Arc::new(acq.clone());
    let input = backbone.input(&acq)?;
    let mask = params.trainable_mask();
    let mut adam = Adam::new(adam_cfg, params.len());
    let mut log = TrajectoryLog::default();
    let mut history = Vec::with_capacity(cfg.optimizer.iterations + 1);
    let mut scales = None;
    let iters = cfg.optimizer.iterations;
    let mut image = ComplexImage::zeros(h, w);
    for it in 0..=iters {
        let last = it == iters;
        let e = if last {
            problem.evaluate(&params, &acq, &input, use_reg, None)?
        } else {
            if scales.is_none() {
                let e0 = problem.evaluate(&params, &acq, &input, use_reg, None)?;
                scales = Some((normalizer(e0.dc), normalizer(e0.reg)));
            }
            problem.evaluate(&params, &acq, &input, use_reg, scales)?
        };
        check_finite(it, &e, cfg.lambda)?;
        history.push(LossRecord { dc: e.dc, reg: e.reg });
        if it % cfg.log_every == 0 || last {
            log.push(record(it, &e, &inputs, mode)?)?;
        }
        if last {
            image = e.image;
            break;
        }
        adam.step(&mut params.values, e.grads.as_ref().expect("gradients"), &mask);
    }
    Ok(ReconOutput {
        image,
        log,
        history,
        params,
    })
}

fn record(it: usize, e: &Evaluation, inputs: &ReconInputs<'_>, mode: Option<SemanticMode>) -> Result<TrajectoryRecord> {
    let mut embeddings = e.embeddings.clone();
    if embeddings.is_empty() {
        if let Some(ctx) = inputs.semantic {
            let em = ctx.encoder.encode_image(&e.image)?;
            for level in Level::IMAGE {
                embeddings.insert(level.name().to_string(), em.get(level).expect("image level").to_vec());
            }
        }
    }
    let quality = match (mode, inputs.semantic) {
        (Some(SemanticMode::Language), Some(ctx)) => {
            let prior = ctx.prior(Level::Language).expect("validated");
            let lang = match embeddings.get(Level::Language.name()) {
                Some(v) => v.clone(),
                None => {
                    let em = ctx.encoder.encode_image(&e.image)?;
                    let text = ctx.encoder.encode_text(ctx.instruction.as_ref().expect("validated"))?;
                    let v = ctx.encoder.fuse(&em, &text)?;
                    embeddings.insert(Level::Language.name().to_string(), v.clone());
                    v
                }
            };
            Some(classify_quality(&lang, prior)?)
        }
        _ => None,
    };
    let metrics = match inputs.reference {
        Some(r) => {
            let m = MetricReport::compute(&e.image, r, None)?;
            Some(MetricSnapshot {
                psnr: m.psnr,
                ssim: m.ssim,
                tenengrad: m.tenengrad,
            })
        }
        None => None,
    };
    Ok(TrajectoryRecord {
        iteration: it,
        dc_loss: e.dc,
        reg_loss: e.reg,
        embeddings,
        quality,
        metrics,
    })
}
