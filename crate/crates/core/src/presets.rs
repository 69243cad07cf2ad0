//! Seeded fixtures and experiment presets shared by the CLI and the
//! acceptance suite.

use std::sync::Arc;

use crate::encoder::{
    build_prior_image_language, build_prior_image_only, parse_instructions, pretrain_encoder,
    Encoder, EncoderConfig, PerturbationConfig, PretrainConfig, PretrainReport, PretrainSet,
    BLUR_INSTRUCTIONS, QUALITY_INSTRUCTIONS,
};
use crate::error::Result;
use crate::mri::{generate_mask, zero_filled, AcquisitionData, AcquisitionMeta, ComplexImage};
use crate::nn::{BackboneKind, BackboneSpec};
use crate::phantom::{make_phantom, simulate_coils, PhantomKind, PhantomSpec};
use crate::recon::{
    reconstruct, OptimizerConfig, ReconConfig, ReconInputs, Regularizer, SemanticContext,
};

pub const FIXTURE_SIZE: usize = 64;
pub const FIXTURE_COILS: usize = 4;
pub const FIXTURE_ACCELERATION: f64 = 4.0;
pub const FIXTURE_ACS: usize = 8;
pub const FIXTURE_NOISE: f64 = 0.01;

pub const AUX_COUNT: usize = 3;
pub const AUX_SEED: u64 = 100;

pub const ENCODER_SEED: u64 = 7;
pub const ENCODER_SUBJECTS: usize = 24;

/// Iterations for INR reconstructions.
pub const INR_ITERATIONS: usize = 500;
/// Iterations of the pixel-space TV-CS baseline.
pub const TV_CS_ITERATIONS: usize = 300;
/// TV-CS settings that produce the "blurred" exemplars.
pub const BLUR_TV_ITERATIONS: usize = 1000;
pub const BLUR_TV_LAMBDA: f64 = 1.0;
/// Iterations per instruction in the prompt-robustness pipeline.
pub const ROBUSTNESS_ITERATIONS: usize = 300;

pub fn quality_prompt() -> String {
    parse_instructions(QUALITY_INSTRUCTIONS)[0].clone()
}

pub fn blur_prompt() -> String {
    parse_instructions(BLUR_INSTRUCTIONS)[0].clone()
}

/// A simulated acquisition with its ground truth.
#[derive(Debug, Clone)]
pub struct Fixture {
    pub truth: ComplexImage,
    pub acquisition: AcquisitionData,
    pub zero_filled: ComplexImage,
    pub meta: AcquisitionMeta,
}

impl Fixture {
    /// Shepp-Logan at 64×64, 4 coils, R=4 with 8 ACS lines, noise 0.01.
    pub fn shepp_logan(seed: u64) -> Result<Self> {
        Self::simulate(PhantomKind::SheppLogan, FIXTURE_SIZE, seed)
    }

    pub fn simulate(kind: PhantomKind, size: usize, seed: u64) -> Result<Self> {
        let truth = make_phantom(&PhantomSpec::new(kind, size, seed))?;
        let coils = simulate_coils(FIXTURE_COILS, size, size)?;
        let acs = (size / 8).max(2);
        let mask = generate_mask(size, size, FIXTURE_ACCELERATION, acs, seed)?;
        let acquisition = AcquisitionData::simulate(&truth, &coils, &mask, FIXTURE_NOISE, seed)?;
        let zero_filled = zero_filled(&acquisition)?;
        Ok(Self {
            truth,
            acquisition,
            zero_filled,
            meta: AcquisitionMeta {
                acceleration: FIXTURE_ACCELERATION,
                acs_lines: acs,
                noise_sigma: FIXTURE_NOISE,
                seed,
            },
        })
    }
}

/// Auxiliary examples: clean random-ellipse images and their undersampled
/// acquisitions.
#[derive(Debug, Clone)]
pub struct Auxiliary {
    pub clean: Vec<ComplexImage>,
    pub acquisitions: Vec<AcquisitionData>,
    pub zero_filled: Vec<ComplexImage>,
}

impl Auxiliary {
    pub fn generate(count: usize, size: usize, seed: u64) -> Result<Self> {
        let mut aux = Self {
            clean: Vec::with_capacity(count),
            acquisitions: Vec::with_capacity(count),
            zero_filled: Vec::with_capacity(count),
        };
        for s in 0..count as u64 {
            let f = Fixture::simulate(PhantomKind::RandomEllipses, size, seed + s)?;
            aux.clean.push(f.truth);
            aux.acquisitions.push(f.acquisition);
            aux.zero_filled.push(f.zero_filled);
        }
        Ok(aux)
    }

    pub fn standard() -> Result<Self> {
        Self::generate(AUX_COUNT, FIXTURE_SIZE, AUX_SEED)
    }

    /// TV-CS reconstructions of the auxiliary acquisitions.
    pub fn tv_cs(&self, iterations: usize, lambda: f64, seed: u64) -> Result<Vec<ComplexImage>> {
        let cfg = ReconConfig::tv_cs(iterations, lambda, seed);
        self.acquisitions
            .iter()
            .map(|a| Ok(reconstruct(a, &cfg, ReconInputs::default())?.image))
            .collect()
    }
}

pub fn pretrain_set(seed: u64) -> Result<PretrainSet> {
    PretrainSet::generate(ENCODER_SUBJECTS, FIXTURE_SIZE, seed)
}

/// The frozen encoder used by every semantic experiment.
pub fn pretrained_encoder(seed: u64) -> Result<(Encoder, PretrainReport)> {
    let init = Encoder::new(EncoderConfig {
        seed,
        ..EncoderConfig::default()
    })?;
    let cfg = PretrainConfig {
        seed,
        ..PretrainConfig::default()
    };
    pretrain_encoder(&init, &pretrain_set(seed)?, &cfg)
}

fn with_iterations(mut cfg: ReconConfig, iterations: usize, seed: u64) -> ReconConfig {
    cfg.optimizer = OptimizerConfig {
        iterations,
        ..cfg.optimizer
    };
    cfg.seed = seed;
    cfg
}

/// INR backbone with the given regularizer and default λ.
pub fn inr_config(regularizer: Regularizer, iterations: usize, seed: u64) -> ReconConfig {
    with_iterations(
        ReconConfig {
            regularizer,
            ..ReconConfig::default()
        },
        iterations,
        seed,
    )
}

/// Pixel backbone with the language prior; cheap enough to repeat per instruction.
pub fn robustness_config(iterations: usize, seed: u64) -> ReconConfig {
    with_iterations(
        ReconConfig {
            backbone: BackboneSpec::new(BackboneKind::Pixels),
            regularizer: Regularizer::SemanticLanguage,
            ..ReconConfig::default()
        },
        iterations,
        seed,
    )
}

/// Positives: clean auxiliary images. Negatives: their zero-filled versions.
pub fn image_prior(encoder: &Arc<Encoder>, aux: &Auxiliary) -> Result<SemanticContext> {
    let priors = build_prior_image_only(encoder, &aux.clean, &aux.zero_filled)?;
    Ok(SemanticContext::new(encoder.clone(), priors))
}

/// High- vs low-quality language prior under `instruction`.
pub fn quality_prior(
    encoder: &Arc<Encoder>,
    aux: &Auxiliary,
    instruction: &str,
    perturbation: &PerturbationConfig,
) -> Result<SemanticContext> {
    let inst = encoder.instruction(instruction)?;
    let prior = build_prior_image_language(encoder, &aux.clean, &aux.zero_filled, &inst, perturbation)?;
    Ok(SemanticContext::new(encoder.clone(), vec![prior]).with_instruction(inst))
}

/// Blurred vs aliased: positives are TV-CS outputs, negatives zero-filled.
pub fn blur_prior(
    encoder: &Arc<Encoder>,
    aux: &Auxiliary,
    perturbation: &PerturbationConfig,
    seed: u64,
) -> Result<SemanticContext> {
    let blurred = aux.tv_cs(BLUR_TV_ITERATIONS, BLUR_TV_LAMBDA, seed)?;
    let inst = encoder.instruction(&blur_prompt())?;
    let prior = build_prior_image_language(encoder, &blurred, &aux.zero_filled, &inst, perturbation)?;
    Ok(SemanticContext::new(encoder.clone(), vec![prior]).with_instruction(inst))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_is_deterministic() {
        let a = Fixture::simulate(PhantomKind::SheppLogan, 32, 3).unwrap();
        let b = Fixture::simulate(PhantomKind::SheppLogan, 32, 3).unwrap();
        assert_eq!(a.acquisition, b.acquisition);
        assert_eq!(a.acquisition.mask.sampled_rows(), 8);
    }

    #[test]
    fn auxiliary_images_differ() {
        let aux = Auxiliary::generate(2, 32, 5).unwrap();
        assert_eq!(aux.clean.len(), 2);
        assert_ne!(aux.clean[0], aux.clean[1]);
        assert_ne!(aux.clean[0], aux.zero_filled[0]);
    }

    #[test]
    fn prompts_come_from_the_instruction_files() {
        assert!(quality_prompt().contains("high-quality"));
        assert!(blur_prompt().contains("blurred"));
    }
}
