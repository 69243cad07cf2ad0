//! Desk-scale frozen semantic encoder: hierarchical image encoder, hashed
//! text encoder and a fusion head producing language-level embeddings.

mod pretrain;
mod prior;

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{CustomOp, Tape, Tensor, Var};
use crate::contrastive::Level;
use crate::error::{Error, Result};
use crate::mri::ComplexImage;
use crate::nn::{Bound, ParamStore, Segment};

pub use pretrain::{
    blur_image, class_separation, pretrain_encoder, Degradation, PretrainConfig, PretrainReport,
    PretrainSet,
};
pub use prior::{
    build_prior_image_language, build_prior_image_only, classify_quality, perturb_text,
    PerturbationConfig, QualityLabel, QualityResponse,
};

pub const QUALITY_INSTRUCTIONS: &str = include_str!("../../data/quality_instructions.txt");
pub const BLUR_INSTRUCTIONS: &str = include_str!("../../data/blur_instructions.txt");

/// Non-empty trimmed lines of an instruction file.
pub fn parse_instructions(text: &str) -> Vec<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_owned)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    Transformer,
    /// Fixed random projections of multi-scale patch statistics.
    Analytic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub kind: EncoderKind,
    pub patch: usize,
    pub d_model: usize,
    pub n_blocks: usize,
    pub mlp_ratio: usize,
    /// Output dimensions of the low, mid and high image levels.
    pub level_dims: [usize; 3],
    pub vocab: usize,
    pub text_dim: usize,
    pub fuse_hidden: usize,
    pub language_dim: usize,
    /// Smoothing inside the magnitude `sqrt(re² + im² + eps²)`.
    pub magnitude_eps: f64,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            kind: EncoderKind::Transformer,
            patch: 8,
            d_model: 32,
            n_blocks: 3,
            mlp_ratio: 2,
            level_dims: [64, 128, 256],
            vocab: 4096,
            text_dim: 64,
            fuse_hidden: 128,
            language_dim: 128,
            magnitude_eps: 1e-3,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn analytic(seed: u64) -> Self {
        Self {
            kind: EncoderKind::Analytic,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch == 0 || self.d_model == 0 || self.n_blocks == 0 || self.mlp_ratio == 0 {
            return Err(Error::invalid("encoder sizes must be non-zero"));
        }
        if self.level_dims.contains(&0) || self.vocab == 0 || self.text_dim == 0 {
            return Err(Error::invalid("embedding dimensions must be non-zero"));
        }
        if self.fuse_hidden == 0 || self.language_dim == 0 || !(self.magnitude_eps > 0.0) {
            return Err(Error::invalid(
                "fusion sizes and magnitude eps must be positive",
            ));
        }
        Ok(())
    }

    /// 1-based block indices tapped for the low, mid and high levels.
    pub fn taps(&self) -> [usize; 3] {
        [1, self.n_blocks.div_ceil(2), self.n_blocks]
    }

    fn analytic_scales(&self) -> [usize; 3] {
        [4, 8, 16]
    }
}

/// Unit-norm embeddings at the three image levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageEmbeddings {
    pub low: Vec<f64>,
    pub mid: Vec<f64>,
    pub high: Vec<f64>,
}

impl ImageEmbeddings {
    pub fn get(&self, level: Level) -> Option<&[f64]> {
        match level {
            Level::Low => Some(&self.low),
            Level::Mid => Some(&self.mid),
            Level::High => Some(&self.high),
            Level::Language => None,
        }
    }
}

/// A language instruction and its token ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instruction {
    pub text: String,
    pub token_ids: Vec<usize>,
}

impl Instruction {
    pub fn new(text: &str, vocab: usize) -> Result<Self> {
        Ok(Self {
            text: text.to_owned(),
            token_ids: tokenize(text, vocab)?,
        })
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Lowercases, splits on anything that is not alphanumeric and hashes each
/// word into `vocab` ids.
pub fn tokenize(text: &str, vocab: usize) -> Result<Vec<usize>> {
    if vocab == 0 {
        return Err(Error::invalid("vocabulary size must be non-zero"));
    }
    let lower = text.to_lowercase();
    let ids: Vec<usize> = lower
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(|w| (fnv1a(w.as_bytes()) % vocab as u64) as usize)
        .collect();
    if ids.is_empty() {
        return Err(Error::invalid(format!(
            "instruction {text:?} has no tokens"
        )));
    }
    Ok(ids)
}

/// Fixed 2-D sinusoidal position code, `[rows·cols, d]`.
fn positional_encoding(rows: usize, cols: usize, d: usize) -> Tensor {
    let half = d / 2;
    let mut data = vec![0.0; rows * cols * d];
    for r in 0..rows {
        for c in 0..cols {
            let t = r * cols + c;
            for (k, pos) in [(0usize, r), (half, c)] {
                for i in 0..half / 2 {
                    let freq = 1.0 / 10000f64.powf(2.0 * i as f64 / half as f64);
                    data[t * d + k + 2 * i] = (pos as f64 * freq).sin();
                    data[t * d + k + 2 * i + 1] = (pos as f64 * freq).cos();
                }
            }
        }
    }
    Tensor {
        shape: vec![rows * cols, d],
        data,
    }
}

/// Mean of table rows selected by token ids.
struct TextMean {
    ids: Vec<usize>,
    dim: usize,
}

impl CustomOp for TextMean {
    fn backward(
        &self,
        inputs: &[&Tensor],
        _output: &Tensor,
        grad: &[f64],
    ) -> Vec<Option<Vec<f64>>> {
        let mut g = vec![0.0; inputs[0].len()];
        let w = 1.0 / self.ids.len() as f64;
        for &id in &self.ids {
            for (dst, src) in g[id * self.dim..(id + 1) * self.dim].iter_mut().zip(grad) {
                *dst += w * src;
            }
        }
        vec![Some(g)]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub cfg: EncoderConfig,
    pub params: ParamStore,
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, bound: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-bound..=bound)).collect()
}

impl Encoder {
    /// Seeded, untrained encoder.
    pub fn new(cfg: EncoderConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut p = ParamStore::new();
        let lin = |p: &mut ParamStore,
                   rng: &mut ChaCha8Rng,
                   name: &str,
                   o: usize,
                   i: usize,
                   bias: bool| {
            let b = (1.0 / i as f64).sqrt();
            p.push(&format!("{name}.weight"), &[o, i], uniform(rng, o * i, b));
            if bias {
                p.push(&format!("{name}.bias"), &[o], uniform(rng, o, b));
            }
        };
        let d = cfg.d_model;
        if cfg.kind == EncoderKind::Transformer {
            lin(
                &mut p,
                &mut rng,
                "img.patch",
                d,
                cfg.patch * cfg.patch,
                true,
            );
            for k in 0..cfg.n_blocks {
                for m in ["q", "k", "v", "o"] {
                    lin(&mut p, &mut rng, &format!("img.b{k}.{m}"), d, d, false);
                }
                lin(
                    &mut p,
                    &mut rng,
                    &format!("img.b{k}.mlp1"),
                    cfg.mlp_ratio * d,
                    d,
                    true,
                );
                lin(
                    &mut p,
                    &mut rng,
                    &format!("img.b{k}.mlp2"),
                    d,
                    cfg.mlp_ratio * d,
                    true,
                );
            }
            for (l, &dim) in cfg.level_dims.iter().enumerate() {
                lin(&mut p, &mut rng, &format!("img.proj{l}"), dim, d, false);
            }
        }
        p.push(
            "text.table",
            &[cfg.vocab, cfg.text_dim],
            (0..cfg.vocab * cfg.text_dim)
                .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
                .collect(),
        );
        lin(
            &mut p,
            &mut rng,
            "fuse.l1",
            cfg.fuse_hidden,
            cfg.level_dims[2] + cfg.text_dim,
            true,
        );
        lin(
            &mut p,
            &mut rng,
            "fuse.l2",
            cfg.language_dim,
            cfg.fuse_hidden,
            true,
        );
        Ok(Self { cfg, params: p })
    }

    /// Binds the image and fusion weights as constants (the text table is
    /// left off the tape).
    pub fn bind_frozen(&self, tape: &mut Tape<'_>) -> Bound {
        self.params
            .bind_with(tape, |s: &Segment| s.name != "text.table", true)
    }

    /// Binds all weights as trainable parameters.
    pub fn bind_trainable(&self, tape: &mut Tape<'_>) -> Bound {
        self.params.bind(tape)
    }

    fn check_image_shape(&self, h: usize, w: usize) -> Result<()> {
        let f = match self.cfg.kind {
            EncoderKind::Transformer => self.cfg.patch,
            EncoderKind::Analytic => self.cfg.analytic_scales()[2],
        };
        if h % f != 0 || w % f != 0 || h == 0 || w == 0 {
            return Err(Error::dim(format!(
                "encoder needs image sides divisible by {f}, got {h}x{w}"
            )));
        }
        Ok(())
    }

    fn linear<'a>(tape: &mut Tape<'a>, b: &Bound, name: &str, x: Var, bias: bool) -> Var {
        let y = tape.matmul_t(x, b.get(&format!("{name}.weight")), false, true);
        if bias {
            tape.add_row(y, b.get(&format!("{name}.bias")))
        } else {
            y
        }
    }

    fn block<'a>(&self, tape: &mut Tape<'a>, b: &Bound, k: usize, x: Var) -> Var {
        let d = self.cfg.d_model as f64;
        let n = tape.layer_norm_rows(x, 1e-5);
        let q = Self::linear(tape, b, &format!("img.b{k}.q"), n, false);
        let kk = Self::linear(tape, b, &format!("img.b{k}.k"), n, false);
        let v = Self::linear(tape, b, &format!("img.b{k}.v"), n, false);
        let scores = tape.matmul_t(q, kk, false, true);
        let scores = tape.scale(scores, 1.0 / d.sqrt());
        let attn = tape.softmax_rows(scores);
        let mixed = tape.matmul(attn, v);
        let o = Self::linear(tape, b, &format!("img.b{k}.o"), mixed, false);
        let h = tape.add(x, o);
        let n2 = tape.layer_norm_rows(h, 1e-5);
        let m = Self::linear(tape, b, &format!("img.b{k}.mlp1"), n2, true);
        let m = tape.gelu(m);
        let m = Self::linear(tape, b, &format!("img.b{k}.mlp2"), m, true);
        tape.add(h, m)
    }

    fn analytic_projection(&self, level: usize, features: usize) -> Tensor {
        let dim = self.cfg.level_dims[level];
        let mut rng = ChaCha8Rng::seed_from_u64(
            self.cfg.seed ^ (0x9e37_79b9 + level as u64 * 7919 + features as u64),
        );
        let b = (3.0 / features as f64).sqrt();
        Tensor {
            shape: vec![dim, features],
            data: uniform(&mut rng, dim * features, b),
        }
    }

    /// Records the three level embeddings of a `[2, H, W]` image on `tape`.
    /// Gradients reach the image; encoder weights bound by `b` decide
    /// whether the weights receive gradients too.
    pub fn encode_image_on_tape<'a>(
        &self,
        tape: &mut Tape<'a>,
        b: &Bound,
        image: Var,
    ) -> Result<[Var; 3]> {
        let shape = tape.shape(image).to_vec();
        let (h, w) = match shape.as_slice() {
            &[2, h, w] => (h, w),
            other => {
                return Err(Error::dim(format!(
                    "encoder input must be [2, H, W], got {other:?}"
                )))
            }
        };
        self.check_image_shape(h, w)?;
        if tape.value(image).data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("encoder input contains non-finite values"));
        }
        let mag = tape.magnitude(image, self.cfg.magnitude_eps);
        let mut outs = Vec::with_capacity(3);
        match self.cfg.kind {
            EncoderKind::Transformer => {
                let p = self.cfg.patch;
                let tokens = tape.patchify(mag, p);
                let x = Self::linear(tape, b, "img.patch", tokens, true);
                let pos = tape.constant(positional_encoding(h / p, w / p, self.cfg.d_model));
                let mut x = tape.add(x, pos);
                let taps = self.cfg.taps();
                let mut tapped = Vec::new();
                for k in 0..self.cfg.n_blocks {
                    x = self.block(tape, b, k, x);
                    if taps.contains(&(k + 1)) {
                        tapped.push((k + 1, x));
                    }
                }
                for (l, t) in taps.iter().enumerate() {
                    let x = tapped.iter().find(|(k, _)| k == t).expect("tap recorded").1;
                    let pooled = tape.mean_rows(x);
                    let pooled = tape.reshape(pooled, &[1, self.cfg.d_model]);
                    let e = Self::linear(tape, b, &format!("img.proj{l}"), pooled, false);
                    let e = tape.reshape(e, &[self.cfg.level_dims[l]]);
                    outs.push(tape.l2_normalize(e));
                }
            }
            EncoderKind::Analytic => {
                for (l, &s) in self.cfg.analytic_scales().iter().enumerate() {
                    let tiles = tape.patchify(mag, s);
                    let n_tiles = (h / s) * (w / s);
                    let avg = tape.constant(Tensor {
                        shape: vec![s * s, 1],
                        data: vec![1.0 / (s * s) as f64; s * s],
                    });
                    let mean = tape.matmul(tiles, avg);
                    let sq = tape.mul(tiles, tiles);
                    let mean_sq = tape.matmul(sq, avg);
                    let feats = tape.concat(&[mean, mean_sq], &[1, 2 * n_tiles]);
                    let proj = tape.constant(self.analytic_projection(l, 2 * n_tiles));
                    let e = tape.matmul_t(feats, proj, false, true);
                    let e = tape.tanh(e);
                    let e = tape.reshape(e, &[self.cfg.level_dims[l]]);
                    outs.push(tape.l2_normalize(e));
                }
            }
        }
        Ok([outs[0], outs[1], outs[2]])
    }

    /// Detached embeddings of `image`.
    pub fn encode_image(&self, image: &ComplexImage) -> Result<ImageEmbeddings> {
        if !image.is_finite() {
            return Err(Error::invalid("encoder input contains non-finite values"));
        }
        let mut tape = Tape::new();
        let b = self.bind_frozen(&mut tape);
        let x = tape.constant(Tensor::from_image(image));
        let [lo, mi, hi] = self.encode_image_on_tape(&mut tape, &b, x)?;
        Ok(ImageEmbeddings {
            low: tape.value(lo).data.clone(),
            mid: tape.value(mi).data.clone(),
            high: tape.value(hi).data.clone(),
        })
    }

    pub fn instruction(&self, text: &str) -> Result<Instruction> {
        Instruction::new(text, self.cfg.vocab)
    }

    /// Mean-pooled token embedding (not normalized).
    pub fn encode_text(&self, instruction: &Instruction) -> Result<Vec<f64>> {
        if instruction.token_ids.is_empty() {
            return Err(Error::invalid("instruction has no tokens"));
        }
        let table = self.params.get("text.table").expect("text table exists");
        let d = self.cfg.text_dim;
        let mut v = vec![0.0; d];
        for &id in &instruction.token_ids {
            if id >= self.cfg.vocab {
                return Err(Error::invalid(format!("token id {id} outside vocabulary")));
            }
            for (a, b) in v.iter_mut().zip(&table[id * d..(id + 1) * d]) {
                *a += b;
            }
        }
        let n = instruction.token_ids.len() as f64;
        v.iter_mut().for_each(|a| *a /= n);
        Ok(v)
    }

    /// Text vector recorded on `tape` against a bound (trainable) table.
    pub fn encode_text_on_tape<'a>(
        &self,
        tape: &mut Tape<'a>,
        b: &Bound,
        instruction: &Instruction,
    ) -> Result<Var> {
        let value = self.encode_text(instruction)?;
        let table = b.get("text.table");
        Ok(tape.custom(
            &[table],
            Tensor::from_vec(value),
            Box::new(TextMean {
                ids: instruction.token_ids.clone(),
                dim: self.cfg.text_dim,
            }),
        ))
    }

    /// Fusion head on the high-level image embedding and a text vector.
    pub fn fuse_on_tape<'a>(
        &self,
        tape: &mut Tape<'a>,
        b: &Bound,
        high: Var,
        text: Var,
    ) -> Result<Var> {
        if tape.value(high).len() != self.cfg.level_dims[2]
            || tape.value(text).len() != self.cfg.text_dim
        {
            return Err(Error::invalid(format!(
                "fusion expects {} + {} inputs, got {} + {}",
                self.cfg.level_dims[2],
                self.cfg.text_dim,
                tape.value(high).len(),
                tape.value(text).len()
            )));
        }
        let total = self.cfg.level_dims[2] + self.cfg.text_dim;
        let x = tape.concat(&[high, text], &[1, total]);
        let h = Self::linear(tape, b, "fuse.l1", x, true);
        let h = tape.gelu(h);
        let o = Self::linear(tape, b, "fuse.l2", h, true);
        let o = tape.reshape(o, &[self.cfg.language_dim]);
        Ok(tape.l2_normalize(o))
    }

    /// Detached language-level embedding.
    pub fn fuse(&self, image: &ImageEmbeddings, text: &[f64]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let b = self.bind_frozen(&mut tape);
        let h = tape.constant(Tensor::from_vec(image.high.clone()));
        let t = tape.constant(Tensor::from_vec(text.to_vec()));
        let e = self.fuse_on_tape(&mut tape, &b, h, t)?;
        Ok(tape.value(e).data.clone())
    }

    /// Order-sensitive hash of every parameter bit pattern.
    pub fn fingerprint(&self) -> u64 {
        let mut bytes = Vec::with_capacity(self.params.values.len() * 8);
        for v in &self.params.values {
            bytes.extend_from_slice(&v.to_bits().to_le_bytes());
        }
        fnv1a(&bytes)
    }

    /// Writes `encoder.json` plus the parameter checkpoint into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        self.params.save(dir)?;
        let path = dir.join("encoder.json");
        let text = serde_json::to_string_pretty(&self.cfg).expect("config serializes");
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("encoder.json");
        let text = std::fs::read_to_string(&path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::format(&path, "encoder config not found"),
            _ => Error::io(&path, e),
        })?;
        let cfg: EncoderConfig =
            serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
        cfg.validate()?;
        let params = ParamStore::load(dir)?;
        let expected = Encoder::new(cfg.clone())?;
        if expected.params.layout().segments.len() != params.segments().len()
            || expected
                .params
                .segments()
                .iter()
                .zip(params.segments())
                .any(|(a, b)| a.name != b.name || a.shape != b.shape)
        {
            return Err(Error::format(
                dir,
                "checkpoint layout does not match encoder config",
            ));
        }
        Ok(Self { cfg, params })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{make_phantom, PhantomKind, PhantomSpec};

    fn phantom(size: usize, seed: u64) -> ComplexImage {
        make_phantom(&PhantomSpec::new(PhantomKind::RandomEllipses, size, seed)).unwrap()
    }

    fn small_cfg(kind: EncoderKind) -> EncoderConfig {
        EncoderConfig {
            kind,
            d_model: 8,
            level_dims: [6, 7, 8],
            vocab: 64,
            text_dim: 5,
            fuse_hidden: 9,
            language_dim: 4,
            ..EncoderConfig::default()
        }
    }

    #[test]
    fn tokenizer_folds_case_and_is_deterministic() {
        assert_eq!(
            tokenize("High-quality", 4096).unwrap(),
            tokenize("high-quality", 4096).unwrap()
        );
        assert_eq!(tokenize("high-quality", 4096).unwrap().len(), 2);
        assert!(tokenize("  ?! ", 4096).is_err());
        let lines = parse_instructions(QUALITY_INSTRUCTIONS);
        assert_eq!(lines.len(), 20);
        let ids: Vec<Vec<usize>> = lines.iter().map(|l| tokenize(l, 4096).unwrap()).collect();
        for i in 0..ids.len() {
            for j in i + 1..ids.len() {
                assert_ne!(ids[i], ids[j], "instructions {i} and {j}");
            }
        }
    }

    #[test]
    fn text_vector_ignores_word_order() {
        let enc = Encoder::new(EncoderConfig::default()).unwrap();
        let a = enc
            .encode_text(&enc.instruction("high quality").unwrap())
            .unwrap();
        let b = enc
            .encode_text(&enc.instruction("quality high").unwrap())
            .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn embeddings_are_unit_norm_and_deterministic() {
        for kind in [EncoderKind::Transformer, EncoderKind::Analytic] {
            let enc = Encoder::new(EncoderConfig {
                kind,
                ..EncoderConfig::default()
            })
            .unwrap();
            let img = phantom(32, 1);
            let e = enc.encode_image(&img).unwrap();
            assert_eq!(e, enc.encode_image(&img).unwrap());
            for (v, d) in [(&e.low, 64), (&e.mid, 128), (&e.high, 256)] {
                assert_eq!(v.len(), d);
                let n: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                assert!((n - 1.0).abs() < 1e-6);
            }
            let t = enc
                .encode_text(&enc.instruction("is it sharp").unwrap())
                .unwrap();
            let f = enc.fuse(&e, &t).unwrap();
            assert_eq!(f.len(), 128);
            assert!((f.iter().map(|x| x * x).sum::<f64>().sqrt() - 1.0).abs() < 1e-6);
            assert!(enc.fuse(&e, &t[..10]).is_err());
        }
    }

    #[test]
    fn non_finite_images_are_rejected() {
        let enc = Encoder::new(EncoderConfig::default()).unwrap();
        let mut img = phantom(16, 2);
        img.data[3].re = f64::NAN;
        assert!(matches!(enc.encode_image(&img), Err(Error::Validation(_))));
    }

    #[test]
    fn fused_embedding_gradient_reaches_pixels() {
        for kind in [EncoderKind::Transformer, EncoderKind::Analytic] {
            let enc = Encoder::new(small_cfg(kind)).unwrap();
            let text = enc
                .encode_text(&enc.instruction("high or low quality").unwrap())
                .unwrap();
            let w: Vec<f64> = (0..4).map(|i| [0.3, -1.0, 0.7, 0.2][i]).collect();
            let img = Tensor::from_image(&phantom(16, 3));
            let err = crate::autodiff::gradcheck(
                |tape, v| {
                    let b = enc.bind_frozen(tape);
                    let [_, _, hi] = enc.encode_image_on_tape(tape, &b, v[0]).unwrap();
                    let t = tape.constant(Tensor::from_vec(text.clone()));
                    let e = enc.fuse_on_tape(tape, &b, hi, t).unwrap();
                    let wv = tape.constant(Tensor::from_vec(w.clone()));
                    let p = tape.mul(e, wv);
                    tape.sum(p)
                },
                &[img],
                20,
                1e-5,
            );
            assert!(err < 1e-3, "{kind:?}: {err}");
        }
    }

    #[test]
    fn frozen_binding_gives_no_weight_gradients() {
        let enc = Encoder::new(small_cfg(EncoderKind::Transformer)).unwrap();
        let mut tape = Tape::new();
        let b = enc.bind_frozen(&mut tape);
        let x = tape.param(Tensor::from_image(&phantom(16, 4)));
        let [lo, _, _] = enc.encode_image_on_tape(&mut tape, &b, x).unwrap();
        let s = tape.sum(lo);
        let g = tape.backward(s);
        assert!(g.get(b.get("img.patch.weight")).is_none());
        assert!(g.get(x).is_some());
    }

    #[test]
    fn checkpoint_reproduces_embeddings() {
        let dir = tempfile::tempdir().unwrap();
        let enc = Encoder::new(EncoderConfig {
            seed: 9,
            ..EncoderConfig::default()
        })
        .unwrap();
        enc.save(dir.path()).unwrap();
        let back = Encoder::load(dir.path()).unwrap();
        assert_eq!(back, enc);
        let img = phantom(16, 5);
        assert_eq!(
            back.encode_image(&img).unwrap(),
            enc.encode_image(&img).unwrap()
        );
        assert_eq!(back.fingerprint(), enc.fingerprint());
    }
}
