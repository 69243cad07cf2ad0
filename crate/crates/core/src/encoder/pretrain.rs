use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{parse_instructions, Encoder, Instruction, BLUR_INSTRUCTIONS, QUALITY_INSTRUCTIONS};
use crate::autodiff::{Tape, Tensor};
use crate::contrastive::{cosine_sim, supervised_contrastive_on_tape, DEFAULT_TEMPERATURE};
use crate::error::{Error, Result};
use crate::mri::{generate_mask, zero_filled, AcquisitionData, ComplexImage};
use crate::optim::{Adam, AdamConfig};
use crate::phantom::{make_phantom, simulate_coils, PhantomKind, PhantomSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Degradation {
    Clean,
    /// Zero-filled at R=4 with 4 coils.
    Aliased,
    /// Complex Gaussian noise in the image domain.
    Noisy,
    /// Gaussian blur.
    Blurred,
}

impl Degradation {
    pub const ALL: [Degradation; 4] = [
        Degradation::Clean,
        Degradation::Aliased,
        Degradation::Noisy,
        Degradation::Blurred,
    ];

    fn class(self) -> usize {
        self as usize
    }
}

/// Separable Gaussian blur of real and imaginary planes, replicate boundary.
pub fn blur_image(img: &ComplexImage, sigma: f64) -> ComplexImage {
    if sigma <= 0.0 {
        return img.clone();
    }
    let r = (3.0 * sigma).ceil() as isize;
    let k: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    let k: Vec<f64> = k.iter().map(|v| v / s).collect();
    let (h, w) = img.shape();
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut tmp = img.clone();
    for y in 0..h {
        for x in 0..w {
            tmp.data[y * w + x] = (-r..=r)
                .zip(&k)
                .map(|(d, kv)| img.data[y * w + clamp(x as isize + d, w)] * *kv)
                .sum();
        }
    }
    let mut out = tmp.clone();
    for y in 0..h {
        for x in 0..w {
            out.data[y * w + x] = (-r..=r)
                .zip(&k)
                .map(|(d, kv)| tmp.data[clamp(y as isize + d, h) * w + x] * *kv)
                .sum();
        }
    }
    out
}

fn subject_seed(seed: u64, i: usize) -> u64 {
    seed.wrapping_mul(1_000_003).wrapping_add(i as u64)
}

/// Phantom subjects, each with one image per [`Degradation`].
#[derive(Debug, Clone)]
pub struct PretrainSet {
    pub subjects: Vec<[ComplexImage; 4]>,
}

impl PretrainSet {
    pub const BLUR_SIGMA: f64 = 1.5;
    pub const NOISE_SIGMA: f64 = 0.05;

    pub fn generate(n_subjects: usize, size: usize, seed: u64) -> Result<Self> {
        if n_subjects == 0 {
            return Err(Error::invalid("pretraining needs at least one subject"));
        }
        let kinds = [
            PhantomKind::RandomEllipses,
            PhantomKind::LayeredRings,
            PhantomKind::SheppLogan,
        ];
        let clean = (0..n_subjects)
            .map(|i| {
                let s = subject_seed(seed, i);
                make_phantom(&PhantomSpec::new(kinds[i % kinds.len()], size, s))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_images(clean, seed)
    }

    /// Derives the degraded versions of each clean image.
    pub fn from_images(clean: Vec<ComplexImage>, seed: u64) -> Result<Self> {
        let first = clean
            .first()
            .ok_or_else(|| Error::invalid("pretraining needs at least one subject"))?;
        let (h, w) = first.shape();
        if clean.iter().any(|c| c.shape() != (h, w)) {
            return Err(Error::dim("pretraining images must share one shape"));
        }
        if !clean.iter().all(ComplexImage::is_finite) {
            return Err(Error::invalid("pretraining images must be finite"));
        }
        let coils = simulate_coils(4, h, w)?;
        let mut subjects = Vec::with_capacity(clean.len());
        for (i, clean) in clean.into_iter().enumerate() {
            let s = subject_seed(seed, i);
            let mask = generate_mask(h, w, 4.0, (h / 8).max(2), s)?;
            let aliased = zero_filled(&AcquisitionData::simulate(&clean, &coils, &mask, 0.0, s)?)?;
            let mut rng = ChaCha8Rng::seed_from_u64(s ^ 0xa5a5);
            let normal = Normal::new(0.0, Self::NOISE_SIGMA).expect("positive sigma");
            let mut noisy = clean.clone();
            for v in noisy.data.iter_mut() {
                v.re += normal.sample(&mut rng);
                v.im += normal.sample(&mut rng);
            }
            let blurred = blur_image(&clean, Self::BLUR_SIGMA);
            subjects.push([clean, aliased, noisy, blurred]);
        }
        Ok(Self { subjects })
    }

    pub fn image(&self, subject: usize, d: Degradation) -> &ComplexImage {
        &self.subjects[subject][d.class()]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub batch_subjects: usize,
    pub temperature: f64,
    pub language_weight: f64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            steps: 500,
            lr: 1e-3,
            batch_subjects: 4,
            temperature: DEFAULT_TEMPERATURE,
            language_weight: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    /// Training loss of each step's batch.
    pub losses: Vec<f64>,
    /// Loss on a fixed batch before and after training.
    pub initial_eval: f64,
    pub final_eval: f64,
}

struct Batch {
    subjects: Vec<usize>,
    quality: Vec<Instruction>,
}

/// Summed per-level and language contrastive loss of one batch; weights are
/// trainable when `train` is set.
fn batch_loss(
    encoder: &Encoder,
    set: &PretrainSet,
    batch: &Batch,
    blur: &Instruction,
    cfg: &PretrainConfig,
    train: bool,
) -> Result<(f64, Option<Vec<f64>>)> {
    let mut tape = Tape::new();
    let b = encoder.bind_trainable(&mut tape);
    let blur_text = encoder.encode_text_on_tape(&mut tape, &b, blur)?;
    let mut levels: [Vec<_>; 3] = Default::default();
    let mut labels = Vec::new();
    let mut lang_rows = Vec::new();
    let mut lang_labels = Vec::new();
    for (slot, &s) in batch.subjects.iter().enumerate() {
        let q_text = encoder.encode_text_on_tape(&mut tape, &b, &batch.quality[slot])?;
        for d in Degradation::ALL {
            let x = tape.constant(Tensor::from_image(set.image(s, d)));
            let e = encoder.encode_image_on_tape(&mut tape, &b, x)?;
            for (l, v) in e.iter().enumerate() {
                levels[l].push(*v);
            }
            labels.push(d.class());
            lang_rows.push(encoder.fuse_on_tape(&mut tape, &b, e[2], q_text)?);
            lang_labels.push(usize::from(d != Degradation::Clean));
            lang_rows.push(encoder.fuse_on_tape(&mut tape, &b, e[2], blur_text)?);
            let smeared = matches!(d, Degradation::Aliased | Degradation::Blurred);
            lang_labels.push(if smeared { 2 } else { 3 });
        }
    }
    let healthy = |rows: &[_]| {
        rows.iter().all(|&r| {
            let d: &[f64] = &tape.value(r).data;
            d.iter().all(|v| v.is_finite()) && d.iter().any(|&v| v != 0.0)
        })
    };
    if !levels.iter().all(|rows| healthy(rows)) || !healthy(&lang_rows) {
        return Err(Error::Divergence {
            iteration: 0,
            reason: "non-finite or collapsed embeddings".into(),
        });
    }
    let mut total = None;
    for rows in &levels {
        let l = supervised_contrastive_on_tape(&mut tape, rows, &labels, cfg.temperature)?;
        total = Some(match total {
            None => l,
            Some(t) => tape.add(t, l),
        });
    }
    let lang =
        supervised_contrastive_on_tape(&mut tape, &lang_rows, &lang_labels, cfg.temperature)?;
    let lang = tape.scale(lang, cfg.language_weight);
    let total = tape.add(total.expect("three levels"), lang);
    let loss = tape.value(total).item();
    if !train {
        return Ok((loss, None));
    }
    let grads = tape.backward(total);
    let mut store = encoder.params.clone();
    store.zero_grad();
    store.accumulate(&b, &grads);
    Ok((loss, Some(store.grads)))
}

fn sample_batch(rng: &mut ChaCha8Rng, n: usize, k: usize, quality: &[Instruction]) -> Batch {
    let subjects = rand::seq::index::sample(rng, n, k.min(n)).into_vec();
    let quality = subjects
        .iter()
        .map(|_| quality.choose(rng).expect("instructions present").clone())
        .collect();
    Batch { subjects, quality }
}

/// Contrastive pretraining of every encoder weight; the returned encoder is
/// meant to be used frozen.
pub fn pretrain_encoder(
    encoder: &Encoder,
    set: &PretrainSet,
    cfg: &PretrainConfig,
) -> Result<(Encoder, PretrainReport)> {
    if !(cfg.lr > 0.0) || !(cfg.temperature > 0.0) || cfg.batch_subjects == 0 {
        return Err(Error::invalid(
            "pretraining needs positive lr, temperature and batch size",
        ));
    }
    if set.subjects.len() < 2 {
        return Err(Error::invalid("pretraining needs at least two subjects"));
    }
    let quality: Vec<Instruction> = parse_instructions(QUALITY_INSTRUCTIONS)
        .iter()
        .map(|t| encoder.instruction(t))
        .collect::<Result<_>>()?;
    let blur = encoder.instruction(&parse_instructions(BLUR_INSTRUCTIONS)[0])?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let eval_batch = sample_batch(&mut rng, set.subjects.len(), cfg.batch_subjects, &quality);

    let mut enc = encoder.clone();
    let initial_eval = batch_loss(&enc, set, &eval_batch, &blur, cfg, false)?.0;
    let mask = enc.params.trainable_mask();
    let mut adam = Adam::new(AdamConfig::with_lr(cfg.lr), enc.params.len());
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let batch = sample_batch(&mut rng, set.subjects.len(), cfg.batch_subjects, &quality);
        let (loss, grads) = batch_loss(&enc, set, &batch, &blur, cfg, true).map_err(|e| match e {
            Error::Divergence { reason, .. } => Error::Divergence { iteration: step, reason },
            e => e,
        })?;
        let grads = grads.expect("training pass returns gradients");
        if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::Divergence {
                iteration: step,
                reason: format!("non-finite pretraining loss {loss}"),
            });
        }
        adam.step(&mut enc.params.values, &grads, &mask);
        if enc.params.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                iteration: step,
                reason: "non-finite encoder weights after update".into(),
            });
        }
        losses.push(loss);
    }
    let final_eval = batch_loss(&enc, set, &eval_batch, &blur, cfg, false)
        .map_err(|e| match e {
            Error::Divergence { reason, .. } => Error::Divergence {
                iteration: cfg.steps,
                reason,
            },
            e => e,
        })?
        .0;
    enc.params.freeze_all();
    Ok((
        enc,
        PretrainReport {
            losses,
            initial_eval,
            final_eval,
        },
    ))
}

/// Mean high-level cosine similarity within degradation classes and across
/// them, over all pairs of distinct images in `set`.
pub fn class_separation(encoder: &Encoder, set: &PretrainSet) -> Result<(f64, f64)> {
    let mut emb = Vec::new();
    for s in 0..set.subjects.len() {
        for d in Degradation::ALL {
            emb.push((d, encoder.encode_image(set.image(s, d))?.high));
        }
    }
    let (mut within, mut nw, mut cross, mut nc) = (0.0, 0usize, 0.0, 0usize);
    for i in 0..emb.len() {
        for j in i + 1..emb.len() {
            let c = cosine_sim(&emb[i].1, &emb[j].1)?;
            if emb[i].0 == emb[j].0 {
                within += c;
                nw += 1;
            } else {
                cross += c;
                nc += 1;
            }
        }
    }
    Ok((within / nw.max(1) as f64, cross / nc.max(1) as f64))
}
