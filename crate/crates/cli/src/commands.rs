//! Subcommand implementations. Each one validates its inputs and computes
//! its results before the first file is written.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::Serialize;

use semrecon::contrastive::{Level, PriorPair};
use semrecon::encoder::{
    build_prior_image_language, build_prior_image_only, parse_instructions, pretrain_encoder,
    Encoder, EncoderConfig, PretrainSet,
};
use semrecon::io::{
    read_array, read_dataset, write_array, write_dataset, write_magnitude_png, write_rgb_png,
    DatasetEntry, RawArray,
};
use semrecon::metrics::{append_metrics_csv, pixel_std_map, MetricReport, MetricRow};
use semrecon::mri::{generate_mask, zero_filled, AcquisitionData, AcquisitionMeta, ComplexImage};
use semrecon::phantom::{make_phantom, simulate_coils, PhantomSpec};
use semrecon::recon::{
    project_trajectory, reconstruct, write_projection_csv, ReconConfig, ReconInputs, Regularizer,
    SemanticContext, SemanticMode, TrajectoryLog,
};
use semrecon::{Error, Result};

use crate::config::{ExperimentConfig, Method, PriorMode, SourceKind, SourceSpec};
use crate::scatter;

fn invalid(msg: impl Into<String>) -> Error {
    Error::Validation(msg.into())
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_owned(),
        source,
    }
}

fn require_exists(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(io_err(path, std::io::ErrorKind::NotFound.into()))
    }
}

/// Refuses a non-empty output directory unless `force` is set.
fn check_output(dir: &Path, force: bool) -> Result<()> {
    if dir.is_file() {
        return Err(invalid(format!("output path {} is a file", dir.display())));
    }
    if dir.is_dir() && !force {
        let mut it = std::fs::read_dir(dir).map_err(|e| io_err(dir, e))?;
        if it.next().is_some() {
            return Err(invalid(format!(
                "output directory {} is not empty (use --force)",
                dir.display()
            )));
        }
    }
    Ok(())
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("value serializes");
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

fn write_image(dir: &Path, image: &ComplexImage) -> Result<()> {
    create_dir(dir)?;
    write_array(&dir.join("image.arr"), &RawArray::from_image(image))?;
    let (h, w) = image.shape();
    write_magnitude_png(&dir.join("image.png"), h, w, &image.magnitude())
}

/// Worker count from `SEMRECON_THREADS`, else the available parallelism.
pub fn thread_count() -> Result<usize> {
    match std::env::var("SEMRECON_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(invalid(format!("SEMRECON_THREADS must be a positive integer, got {v:?}"))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

/// Maps `f` over `items` on up to `threads` scoped workers, keeping order.
fn parallel_map<T, R, F>(items: &[T], threads: usize, f: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> Result<R> + Sync,
{
    let threads = threads.clamp(1, items.len().max(1));
    if threads == 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Result<R>>>> = items.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..threads {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                *slots[i].lock().expect("slot lock") = Some(r);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().expect("slot lock").expect("every item ran"))
        .collect()
}

pub fn gen_data(cfg: &ExperimentConfig, force: bool) -> Result<()> {
    let out = cfg.output()?;
    let d = &cfg.data;
    if d.n == 0 {
        return Err(invalid("--n must be at least 1"));
    }
    if d.coils == 0 {
        return Err(invalid("--coils must be at least 1"));
    }
    if !(d.noise >= 0.0) || !d.noise.is_finite() {
        return Err(invalid(format!("--noise must be >= 0, got {}", d.noise)));
    }
    check_output(out, force)?;
    let mut entries = Vec::with_capacity(d.n);
    for i in 0..d.n {
        let seed = cfg.seed.wrapping_add(i as u64);
        let spec = PhantomSpec::new(d.phantom, d.size, seed);
        spec.validate()?;
        let truth = make_phantom(&spec)?;
        let coils = simulate_coils(d.coils, d.size, d.size)?;
        let mask = generate_mask(d.size, d.size, d.acceleration, d.acs, seed)?;
        let acquisition = AcquisitionData::simulate(&truth, &coils, &mask, d.noise, seed)?;
        entries.push(DatasetEntry {
            id: format!("subject_{i:03}"),
            image: Some(truth),
            acquisition,
            meta: AcquisitionMeta {
                acceleration: d.acceleration,
                acs_lines: d.acs,
                noise_sigma: d.noise,
                seed,
            },
        });
    }
    create_dir(out)?;
    write_dataset(out, &entries)?;
    cfg.write_echo(out)?;
    for e in &entries {
        println!(
            "{}: {}x{}, {} coils, R={}, {} sampled rows, noise {}",
            e.id,
            d.size,
            d.size,
            d.coils,
            d.acceleration,
            e.acquisition.mask.sampled_rows(),
            d.noise
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct LossRow {
    step: usize,
    loss: f64,
}

pub fn pretrain(cfg: &ExperimentConfig, force: bool) -> Result<()> {
    let out = cfg.output()?;
    check_output(out, force)?;
    let dataset = read_dataset(cfg.dataset()?)?;
    let clean: Vec<ComplexImage> = dataset.entries.iter().filter_map(|e| e.image.clone()).collect();
    if clean.is_empty() {
        return Err(invalid("dataset has no ground-truth images to pretrain on"));
    }
    let set = PretrainSet::from_images(clean, cfg.seed)?;
    let init = Encoder::new(EncoderConfig {
        seed: cfg.seed,
        ..EncoderConfig::default()
    })?;
    let (encoder, report) = pretrain_encoder(&init, &set, &cfg.pretrain)?;

    create_dir(out)?;
    encoder.save(&out.join("encoder"))?;
    let path = out.join("pretrain_loss.csv");
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(&path).map_err(|e| Error::Format {
        path: path.clone(),
        reason: e.to_string(),
    })?;
    w.write_record(["step", "loss"]).map_err(|e| Error::Format {
        path: path.clone(),
        reason: e.to_string(),
    })?;
    for (step, &loss) in report.losses.iter().enumerate() {
        w.serialize(LossRow { step, loss }).map_err(|e| Error::Format {
            path: path.clone(),
            reason: e.to_string(),
        })?;
    }
    w.flush().map_err(|e| io_err(&path, e))?;
    write_json(&out.join("pretrain_report.json"), &report)?;
    cfg.write_echo(out)?;
    println!(
        "pretrained {} steps on {} subjects: eval loss {:.4} -> {:.4}, fingerprint {:016x}",
        report.losses.len(),
        dataset.entries.len(),
        report.initial_eval,
        report.final_eval,
        encoder.fingerprint()
    );
    Ok(())
}

fn load_sources(spec: &SourceSpec, seed: u64) -> Result<Vec<ComplexImage>> {
    let ds = read_dataset(&spec.dataset)?;
    match spec.kind {
        SourceKind::Truth => ds
            .entries
            .into_iter()
            .map(|e| {
                e.image.ok_or_else(|| {
                    invalid(format!("entry {} in {} has no ground truth", e.id, spec.dataset.display()))
                })
            })
            .collect(),
        SourceKind::ZeroFilled => ds.entries.iter().map(|e| zero_filled(&e.acquisition)).collect(),
        SourceKind::TvCs => {
            let tv = ReconConfig::tv_cs(spec.tv_iterations, spec.tv_lambda, seed);
            ds.entries
                .iter()
                .map(|e| Ok(reconstruct(&e.acquisition, &tv, ReconInputs::default())?.image))
                .collect()
        }
    }
}

fn read_instruction_file(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    Ok(parse_instructions(&text))
}

/// Cheap checks on the prior inputs for `mode`, run before any loading.
fn check_prior_inputs(cfg: &ExperimentConfig, mode: SemanticMode, need_instruction: bool) -> Result<()> {
    let wanted = match mode {
        SemanticMode::Image => PriorMode::Image,
        SemanticMode::Language => PriorMode::Language,
    };
    if let Some(m) = cfg.prior.mode {
        if m != wanted {
            return Err(invalid(format!(
                "prior mode {m:?} does not match regularizer {}",
                cfg.recon.regularizer.name()
            )));
        }
    }
    let encoder = cfg
        .encoder
        .as_deref()
        .ok_or_else(|| invalid("semantic regularizers need --encoder"))?;
    let pos = cfg
        .prior
        .positives
        .as_ref()
        .ok_or_else(|| invalid("semantic regularizers need --positives"))?;
    let neg = cfg
        .prior
        .negatives
        .as_ref()
        .ok_or_else(|| invalid("semantic regularizers need --negatives"))?;
    if mode == SemanticMode::Language && need_instruction {
        if cfg.prior.instruction.is_none() && cfg.prior.instruction_file.is_none() {
            return Err(invalid("semantic_language needs --instruction or --instruction-file"));
        }
    }
    require_exists(encoder)?;
    require_exists(&pos.dataset)?;
    require_exists(&neg.dataset)?;
    if let Some(f) = &cfg.prior.instruction_file {
        require_exists(f)?;
    }
    Ok(())
}

struct PriorSources {
    encoder: Arc<Encoder>,
    positives: Vec<ComplexImage>,
    negatives: Vec<ComplexImage>,
}

fn prior_sources(cfg: &ExperimentConfig) -> Result<PriorSources> {
    let encoder = Arc::new(Encoder::load(cfg.encoder.as_deref().expect("checked"))?);
    let seed = cfg.recon.seed;
    Ok(PriorSources {
        encoder,
        positives: load_sources(cfg.prior.positives.as_ref().expect("checked"), seed)?,
        negatives: load_sources(cfg.prior.negatives.as_ref().expect("checked"), seed)?,
    })
}

fn language_context(cfg: &ExperimentConfig, src: &PriorSources, text: &str) -> Result<SemanticContext> {
    let inst = src.encoder.instruction(text)?;
    let prior = build_prior_image_language(
        &src.encoder,
        &src.positives,
        &src.negatives,
        &inst,
        &cfg.prior.perturbation,
    )?;
    Ok(SemanticContext::new(src.encoder.clone(), vec![prior]).with_instruction(inst))
}

fn instruction_text(cfg: &ExperimentConfig) -> Result<String> {
    if let Some(t) = &cfg.prior.instruction {
        return Ok(t.clone());
    }
    let path = cfg.prior.instruction_file.as_deref().expect("checked");
    read_instruction_file(path)?
        .into_iter()
        .next()
        .ok_or_else(|| invalid(format!("{} has no instructions", path.display())))
}

struct EntryResult {
    id: String,
    image: ComplexImage,
    log: Option<TrajectoryLog>,
    row: Option<MetricRow>,
}

pub fn recon(cfg: &ExperimentConfig, force: bool, threads: usize) -> Result<()> {
    let out = cfg.output()?;
    check_output(out, force)?;
    let rc = cfg.effective_recon();
    let mode = if cfg.method == Method::ZeroFilled {
        None
    } else {
        rc.validate()?;
        rc.regularizer.semantic_mode()
    };
    if let Some(mode) = mode {
        check_prior_inputs(cfg, mode, true)?;
    } else if let Some(e) = &cfg.encoder {
        require_exists(e)?;
    }
    let dataset_dir = cfg.dataset()?;
    require_exists(dataset_dir)?;

    let dataset = read_dataset(dataset_dir)?;
    let (encoder, context) = match mode {
        Some(mode) => {
            let src = prior_sources(cfg)?;
            let ctx = match mode {
                SemanticMode::Image => SemanticContext::new(
                    src.encoder.clone(),
                    build_prior_image_only(&src.encoder, &src.positives, &src.negatives)?,
                ),
                SemanticMode::Language => language_context(cfg, &src, &instruction_text(cfg)?)?,
            };
            ctx.validate(mode)?;
            (Some(src.encoder), Some(ctx))
        }
        None => (
            cfg.encoder.as_deref().map(Encoder::load).transpose()?.map(Arc::new),
            None,
        ),
    };
    let backbone = match cfg.method {
        Method::ZeroFilled => "none",
        _ => rc.backbone.kind.name(),
    };
    let results = parallel_map(&dataset.entries, threads, |entry| {
        let (image, log) = if cfg.method == Method::ZeroFilled {
            (zero_filled(&entry.acquisition)?, None)
        } else {
            let inputs = ReconInputs {
                semantic: context.as_ref(),
                auxiliary: &[],
                reference: entry.image.as_ref(),
            };
            let o = reconstruct(&entry.acquisition, &rc, inputs)?;
            (o.image, Some(o.log))
        };
        let row = match &entry.image {
            Some(truth) => {
                let m = MetricReport::compute(&image, truth, encoder.as_deref())?;
                Some(MetricRow::new(&entry.id, cfg.method.name(), backbone, entry.meta.acceleration, &m))
            }
            None => None,
        };
        Ok(EntryResult {
            id: entry.id.clone(),
            image,
            log,
            row,
        })
    })?;

    create_dir(out)?;
    cfg.write_echo(out)?;
    if let Some(ctx) = &context {
        let priors: Vec<&PriorPair> = ctx.priors.iter().map(|p| p.as_ref()).collect();
        write_json(&out.join("priors.json"), &priors)?;
    }
    let mut rows = Vec::new();
    for r in &results {
        let dir = out.join(&r.id);
        write_image(&dir, &r.image)?;
        if let Some(log) = &r.log {
            log.write_jsonl(&dir.join("trajectory.jsonl"))?;
        }
        if let Some(row) = &r.row {
            println!("{}: psnr {:.2} dB, ssim {:.4}", r.id, row.psnr, row.ssim);
            rows.push(row.clone());
        } else {
            println!("{}: reconstructed", r.id);
        }
    }
    if !rows.is_empty() {
        append_metrics_csv(&out.join("metrics.csv"), &rows)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct RobustnessSummary {
    entry: String,
    instructions: Vec<String>,
    reference: &'static str,
    spatial_mean_std: f64,
}

pub fn prompt_robustness(cfg: &ExperimentConfig, force: bool, entry: Option<&str>, threads: usize) -> Result<()> {
    let out = cfg.output()?;
    check_output(out, force)?;
    if cfg.method == Method::ZeroFilled {
        return Err(invalid("prompt-robustness needs a trainable method"));
    }
    let mut cfg = cfg.clone();
    match cfg.recon.regularizer {
        Regularizer::None | Regularizer::SemanticLanguage => cfg.recon.regularizer = Regularizer::SemanticLanguage,
        other => {
            return Err(invalid(format!(
                "prompt-robustness uses semantic_language, not {}",
                other.name()
            )))
        }
    }
    let file = cfg
        .prior
        .instruction_file
        .clone()
        .ok_or_else(|| invalid("prompt-robustness needs --instruction-file"))?;
    require_exists(&file)?;
    let instructions = read_instruction_file(&file)?;
    if instructions.len() < 2 {
        return Err(invalid(format!(
            "prompt-robustness needs at least 2 instructions, {} has {}",
            file.display(),
            instructions.len()
        )));
    }
    let rc = cfg.effective_recon();
    rc.validate()?;
    check_prior_inputs(&cfg, SemanticMode::Language, false)?;
    let dataset_dir = cfg.dataset()?;
    require_exists(dataset_dir)?;

    let dataset = read_dataset(dataset_dir)?;
    let target = match entry {
        Some(id) => dataset
            .entries
            .iter()
            .find(|e| e.id == id)
            .ok_or_else(|| invalid(format!("dataset has no entry {id:?}")))?,
        None => dataset.entries.first().ok_or_else(|| invalid("dataset is empty"))?,
    };
    let src = prior_sources(&cfg)?;
    let images = parallel_map(&instructions, threads, |text| {
        let ctx = language_context(&cfg, &src, text)?;
        let inputs = ReconInputs {
            semantic: Some(&ctx),
            auxiliary: &[],
            reference: target.image.as_ref(),
        };
        Ok(reconstruct(&target.acquisition, &rc, inputs)?.image)
    })?;
    let (reference, label) = match &target.image {
        Some(t) => (t, "truth"),
        None => (&images[0], "first_reconstruction"),
    };
    let std = pixel_std_map(&images, reference)?;
    let mean = std.iter().sum::<f64>() / std.len() as f64;

    create_dir(out)?;
    cfg.write_echo(out)?;
    for (i, image) in images.iter().enumerate() {
        write_image(&out.join("instructions").join(format!("{i:02}")), image)?;
    }
    let (h, w) = reference.shape();
    write_array(&out.join("std_map.arr"), &RawArray::real(vec![h, w], std.clone())?)?;
    write_magnitude_png(&out.join("std_map.png"), h, w, &std)?;
    write_json(
        &out.join("summary.json"),
        &RobustnessSummary {
            entry: target.id.clone(),
            instructions,
            reference: label,
            spatial_mean_std: mean,
        },
    )?;
    println!(
        "{}: spatial-mean pixel std over {} instructions: {mean:.6}",
        target.id,
        images.len()
    );
    Ok(())
}

pub fn project(cfg: &ExperimentConfig, force: bool, trajectory: &Path, priors: &Path, level: &str) -> Result<()> {
    let out = cfg.output()?;
    check_output(out, force)?;
    let level: Level = level.parse()?;
    let log = TrajectoryLog::read_jsonl(trajectory)?;
    let text = std::fs::read_to_string(priors).map_err(|e| io_err(priors, e))?;
    let pairs: Vec<PriorPair> = serde_json::from_str(&text).map_err(|e| Error::Format {
        path: priors.to_owned(),
        reason: e.to_string(),
    })?;
    let prior = pairs
        .iter()
        .find(|p| p.level == level)
        .ok_or_else(|| invalid(format!("{} has no {} prior", priors.display(), level.name())))?;
    if log.records.iter().any(|r| r.embedding(level).is_none()) {
        return Err(invalid(format!(
            "level {} is not present in {}",
            level.name(),
            trajectory.display()
        )));
    }
    let points = project_trajectory(&log, prior, level)?;

    create_dir(out)?;
    cfg.write_echo(out)?;
    write_projection_csv(&out.join("projection.csv"), &points)?;
    write_rgb_png(&out.join("projection.png"), scatter::SIZE, scatter::SIZE, &scatter::render(&points))?;
    println!(
        "projected {} trajectory points and {} prior members at level {}",
        log.len(),
        prior.positives.len() + prior.negatives.len(),
        level.name()
    );
    Ok(())
}

pub fn eval(cfg: &ExperimentConfig, force: bool, recon_dir: &Path, method: &str, backbone: &str) -> Result<()> {
    let out = cfg.output()?;
    check_output(out, force)?;
    require_exists(recon_dir)?;
    let dataset = read_dataset(cfg.dataset()?)?;
    let encoder = cfg.encoder.as_deref().map(Encoder::load).transpose()?;
    let mut rows = Vec::new();
    for entry in &dataset.entries {
        let Some(truth) = &entry.image else { continue };
        let path: PathBuf = recon_dir.join(&entry.id).join("image.arr");
        let image = read_array(&path)?.to_image()?;
        let m = MetricReport::compute(&image, truth, encoder.as_ref())?;
        rows.push(MetricRow::new(&entry.id, method, backbone, entry.meta.acceleration, &m));
    }
    if rows.is_empty() {
        return Err(invalid("dataset has no entries with ground truth"));
    }

    create_dir(out)?;
    cfg.write_echo(out)?;
    append_metrics_csv(&out.join("metrics.csv"), &rows)?;
    for r in &rows {
        match r.feature_distance {
            Some(fd) => println!("{}: psnr {:.2} dB, ssim {:.4}, feature distance {fd:.4}", r.run_id, r.psnr, r.ssim),
            None => println!("{}: psnr {:.2} dB, ssim {:.4}", r.run_id, r.psnr, r.ssim),
        }
    }
    Ok(())
}
