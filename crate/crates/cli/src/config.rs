//! Experiment configuration: a JSON file merged with command-line flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use semrecon::encoder::{PerturbationConfig, PretrainConfig};
use semrecon::nn::{BackboneKind, BackboneSpec};
use semrecon::phantom::PhantomKind;
use semrecon::presets::{BLUR_TV_ITERATIONS, BLUR_TV_LAMBDA};
use semrecon::recon::{ReconConfig, Regularizer};
use semrecon::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Method {
    ZeroFilled,
    TvCs,
    EndToEnd,
    Unrolled,
    Inr,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::ZeroFilled => "zero_filled",
            Method::TvCs => "tv_cs",
            Method::EndToEnd => "end_to_end",
            Method::Unrolled => "unrolled",
            Method::Inr => "inr",
        }
    }

    pub fn backbone(self) -> Option<BackboneKind> {
        match self {
            Method::ZeroFilled => None,
            Method::TvCs => Some(BackboneKind::Pixels),
            Method::EndToEnd => Some(BackboneKind::EndToEndUnet),
            Method::Unrolled => Some(BackboneKind::Unrolled),
            Method::Inr => Some(BackboneKind::Inr),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum SourceKind {
    /// Ground-truth images.
    Truth,
    ZeroFilled,
    /// Pixel-space TV-CS reconstructions of the acquisitions.
    TvCs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSpec {
    pub dataset: PathBuf,
    pub kind: SourceKind,
    #[serde(default = "default_tv_iterations")]
    pub tv_iterations: usize,
    #[serde(default = "default_tv_lambda")]
    pub tv_lambda: f64,
}

fn default_tv_iterations() -> usize {
    BLUR_TV_ITERATIONS
}

fn default_tv_lambda() -> f64 {
    BLUR_TV_LAMBDA
}

impl SourceSpec {
    pub fn new(dataset: PathBuf, kind: SourceKind) -> Self {
        Self {
            dataset,
            kind,
            tv_iterations: BLUR_TV_ITERATIONS,
            tv_lambda: BLUR_TV_LAMBDA,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorMode {
    Image,
    Language,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorSpec {
    /// Must agree with the regularizer when given.
    pub mode: Option<PriorMode>,
    pub positives: Option<SourceSpec>,
    pub negatives: Option<SourceSpec>,
    pub instruction: Option<String>,
    pub instruction_file: Option<PathBuf>,
    pub perturbation: PerturbationConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSpec {
    pub n: usize,
    pub size: usize,
    pub coils: usize,
    #[serde(rename = "R")]
    pub acceleration: f64,
    pub acs: usize,
    pub noise: f64,
    pub phantom: PhantomKind,
}

impl Default for DataSpec {
    fn default() -> Self {
        Self {
            n: 5,
            size: 64,
            coils: 4,
            acceleration: 4.0,
            acs: 8,
            noise: 0.01,
            phantom: PhantomKind::SheppLogan,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: Option<PathBuf>,
    pub encoder: Option<PathBuf>,
    pub method: Method,
    pub recon: ReconConfig,
    pub prior: PriorSpec,
    pub output: Option<PathBuf>,
    pub seed: u64,
    pub data: DataSpec,
    pub pretrain: PretrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            encoder: None,
            method: Method::Inr,
            recon: ReconConfig::default(),
            prior: PriorSpec::default(),
            output: None,
            seed: 0,
            data: DataSpec::default(),
            pretrain: PretrainConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_owned(),
            source: e,
        })?;
        serde_json::from_str(&text).map_err(|e| Error::Validation(format!("config {}: {e}", path.display())))
    }

    /// Distributes the top-level seed to every seeded component.
    pub fn apply_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.recon.seed = seed;
        self.pretrain.seed = seed;
        self.prior.perturbation.seed = seed;
    }

    /// Reconstruction config with the backbone implied by the method.
    /// `tv_cs` defaults to the TV regularizer when none is set.
    pub fn effective_recon(&self) -> ReconConfig {
        let mut cfg = self.recon.clone();
        if let Some(kind) = self.method.backbone() {
            if cfg.backbone.kind != kind {
                let mut spec = BackboneSpec::new(kind);
                spec.unet = cfg.backbone.unet.clone();
                spec.unrolled = cfg.backbone.unrolled.clone();
                spec.inr = cfg.backbone.inr.clone();
                cfg.backbone = spec;
            }
        }
        if self.method == Method::TvCs && cfg.regularizer == Regularizer::None {
            cfg.regularizer = Regularizer::Tv;
        }
        cfg
    }

    pub fn output(&self) -> Result<&Path> {
        self.output
            .as_deref()
            .ok_or_else(|| Error::Validation("an output directory is required (--out)".into()))
    }

    pub fn dataset(&self) -> Result<&Path> {
        self.dataset
            .as_deref()
            .ok_or_else(|| Error::Validation("a dataset directory is required (--dataset)".into()))
    }

    pub fn write_echo(&self, dir: &Path) -> Result<()> {
        let path = dir.join("config.json");
        // the echo lives in the output directory, so the path itself is omitted
        let echo = Self {
            output: None,
            ..self.clone()
        };
        let text = serde_json::to_string_pretty(&echo).expect("config serializes");
        std::fs::write(&path, text).map_err(|e| Error::Io { path, source: e })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_json_fills_defaults() {
        let cfg: ExperimentConfig =
            serde_json::from_str(r#"{"method": "tv_cs", "recon": {"lambda": 0.5}, "data": {"R": 2}}"#).unwrap();
        assert_eq!(cfg.method, Method::TvCs);
        assert_eq!(cfg.recon.lambda, 0.5);
        assert_eq!(cfg.data.acceleration, 2.0);
        assert_eq!(cfg.data.size, 64);
        let r = cfg.effective_recon();
        assert_eq!(r.backbone.kind, BackboneKind::Pixels);
        assert_eq!(r.regularizer, Regularizer::Tv);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"methd": "inr"}"#).is_err());
    }

    #[test]
    fn seed_reaches_every_component() {
        let mut cfg = ExperimentConfig::default();
        cfg.apply_seed(9);
        assert_eq!((cfg.recon.seed, cfg.pretrain.seed, cfg.prior.perturbation.seed), (9, 9, 9));
    }

    #[test]
    fn round_trips_through_json() {
        let mut cfg = ExperimentConfig::default();
        cfg.prior.positives = Some(SourceSpec::new("d".into(), SourceKind::TvCs));
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<ExperimentConfig>(&text).unwrap(), cfg);
    }
}
