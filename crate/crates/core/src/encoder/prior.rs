use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Encoder, Instruction};
use crate::contrastive::{centroid, cosine_sim, Level, PriorPair};
use crate::error::{Error, Result};
use crate::mri::ComplexImage;

/// Gaussian jitter applied to the text vector before fusion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerturbationConfig {
    pub k: usize,
    pub sigma: f64,
    pub seed: u64,
}

impl Default for PerturbationConfig {
    fn default() -> Self {
        Self {
            k: 100,
            sigma: 0.03,
            seed: 0,
        }
    }
}

impl PerturbationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::invalid("perturbation count must be at least 1"));
        }
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(Error::invalid(format!(
                "perturbation sigma must be >= 0, got {}",
                self.sigma
            )));
        }
        Ok(())
    }
}

/// `K` copies of `v`, each with i.i.d. `N(0, σ²)` added per component.
pub fn perturb_text(v: &[f64], cfg: &PerturbationConfig) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let normal = Normal::new(0.0, cfg.sigma.max(f64::MIN_POSITIVE)).expect("sigma validated");
    Ok((0..cfg.k)
        .map(|_| {
            v.iter()
                .map(|x| {
                    if cfg.sigma == 0.0 {
                        *x
                    } else {
                        x + normal.sample(&mut rng)
                    }
                })
                .collect()
        })
        .collect())
}

fn check_sets(pos: &[ComplexImage], neg: &[ComplexImage]) -> Result<()> {
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::invalid(
            "positive and negative image lists must be non-empty",
        ));
    }
    Ok(())
}

/// Low, mid and high level prior pairs from detached image embeddings.
pub fn build_prior_image_only(
    encoder: &Encoder,
    pos: &[ComplexImage],
    neg: &[ComplexImage],
) -> Result<Vec<PriorPair>> {
    check_sets(pos, neg)?;
    let pe = pos
        .iter()
        .map(|i| encoder.encode_image(i))
        .collect::<Result<Vec<_>>>()?;
    let ne = neg
        .iter()
        .map(|i| encoder.encode_image(i))
        .collect::<Result<Vec<_>>>()?;
    Level::IMAGE
        .iter()
        .map(|&level| {
            let pick = |set: &[super::ImageEmbeddings]| -> Vec<Vec<f64>> {
                set.iter()
                    .map(|e| e.get(level).expect("image level").to_vec())
                    .collect()
            };
            PriorPair::new(level, pick(&pe), pick(&ne))
        })
        .collect()
}

/// Language-level prior: every image fused with every perturbed copy of the
/// instruction vector, so `|P| = M_pos·K` and `|N| = M_neg·K`.
pub fn build_prior_image_language(
    encoder: &Encoder,
    pos: &[ComplexImage],
    neg: &[ComplexImage],
    instruction: &Instruction,
    cfg: &PerturbationConfig,
) -> Result<PriorPair> {
    check_sets(pos, neg)?;
    cfg.validate()?;
    let text = encoder.encode_text(instruction)?;
    let texts = perturb_text(&text, cfg)?;
    let fuse_all = |images: &[ComplexImage]| -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(images.len() * texts.len());
        for img in images {
            let e = encoder.encode_image(img)?;
            for t in &texts {
                out.push(encoder.fuse(&e, t)?);
            }
        }
        Ok(out)
    };
    PriorPair::new(Level::Language, fuse_all(pos)?, fuse_all(neg)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QualityLabel {
    Positive,
    Negative,
    Undetermined,
}

impl QualityLabel {
    pub fn name(self) -> &'static str {
        match self {
            QualityLabel::Positive => "positive",
            QualityLabel::Negative => "negative",
            QualityLabel::Undetermined => "undetermined",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityResponse {
    pub label: QualityLabel,
    /// `sim(e, pos centroid) − sim(e, neg centroid)`.
    pub margin: f64,
}

/// Nearest-centroid quality response by cosine similarity.
pub fn classify_quality(e: &[f64], prior: &PriorPair) -> Result<QualityResponse> {
    let margin =
        cosine_sim(e, &centroid(&prior.positives))? - cosine_sim(e, &centroid(&prior.negatives))?;
    let label = if margin > 0.0 {
        QualityLabel::Positive
    } else if margin < 0.0 {
        QualityLabel::Negative
    } else {
        QualityLabel::Undetermined
    };
    Ok(QualityResponse { label, margin })
}
