use std::path::{Path, PathBuf};

use facesynth_core::adapt::{
    bias_pairs, flatten_points, load_model, save_model, scene_landmark_sets, train_adapter, unflatten_points,
    LandmarkPairSet, SystematicBias, TrainHyper,
};
use facesynth_core::augment::{apply_to_image, apply_to_labels, sample_augmentation, AugmentationMode, ImageF32};
use facesynth_core::dataset::formats::{encode_landmarks, read_rgb_png, write_gray_png, write_rgb_png};
use facesynth_core::dataset::{
    generate_dataset, sweep_plan, validate_dataset, write_atomic, write_sample, write_sweep, AblationVariant, RunConfig,
};
use facesynth_core::desk::{desk_assets, desk_template_rig, expression_library, synthetic_corpus, ModelAssets, DESK_SEED};
use facesynth_core::learning::{fit_identity_basis, fit_identity_distribution, IdentityDistribution, ScanCorpus};
use facesynth_core::metrics::{evaluate_landmarks, evaluate_parsing, MergeSpec, MetricsReport};
use facesynth_core::raster::render_scene;
use facesynth_core::scene::{assemble_scene, ExpressionLibrary};
use facesynth_core::seed::{derive_seed, stream};
use facesynth_core::{FaceRig, GenerationConfig, Landmark};
use serde_json::{json, Value};

use crate::error::{CliError, CliResult};
use crate::inputs::{collect_layer_files, pair_files, read_landmarks, read_mask, read_points};
use crate::{Cli, Command, ModeArg, VariantArg};

pub const RIG_FILE: &str = "rig.json";
pub const DISTRIBUTION_FILE: &str = "distribution.json";
pub const EXPRESSIONS_FILE: &str = "expressions.json";

pub struct Output {
    pub json: Value,
    pub text: String,
}

impl Output {
    fn new(json: Value, text: impl Into<String>) -> Self {
        Self { json, text: text.into() }
    }
}

pub fn run(cli: &Cli) -> CliResult<Output> {
    let workers = match cli.workers {
        Some(0) => return Err(CliError::validation("--workers must be at least 1")),
        Some(n) => n,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    // a second initialization in the same process is harmless
    let _ = rayon::ThreadPoolBuilder::new().num_threads(workers).build_global();
    let config = match &cli.config {
        Some(path) => GenerationConfig::load(path)?,
        None => GenerationConfig::default(),
    };
    config.validate()?;
    match &cli.command {
        Command::MakeRig(a) => make_rig(&a.out, a.scans, cli.seed),
        Command::FitModel(a) => fit_model(&a.corpus, a.rig.as_deref(), a.components, &a.out),
        Command::GenDataset(a) => {
            let assets = load_assets(a.assets.assets.as_deref())?;
            let run = RunConfig {
                output_dir: a.out.clone(),
                count: a.count,
                global_seed: cli.seed,
                workers,
                resolution: a.resolution,
                hair_enabled: a.no_hair.then_some(false),
                clothing_enabled: a.no_clothing.then_some(false),
            };
            gen_dataset(&run, &config, &assets)
        }
        Command::Validate(a) => {
            let rig = a.assets.as_deref().map(|d| FaceRig::load(&d.join(RIG_FILE))).transpose()?;
            let manifest = validate_dataset(&a.dir, rig.as_ref())?;
            let n = manifest.samples.len();
            Ok(Output::new(
                json!({ "dir": a.dir, "samples": n, "config_hash": manifest.header.config_hash, "rig_hash": manifest.header.rig_hash }),
                format!("{}: {n} samples valid\n", a.dir.display()),
            ))
        }
        Command::Preview(a) => {
            let assets = load_assets(a.assets.assets.as_deref())?;
            preview(&a.out, a.resolution, cli.seed, &config, &assets)
        }
        Command::Augment(a) => {
            let mut aug = config.augmentation.clone();
            if let Some(mode) = a.mode {
                aug.mode = match mode {
                    ModeArg::None => AugmentationMode::None,
                    ModeArg::AppearanceOnly => AugmentationMode::AppearanceOnly,
                    ModeArg::Full => AugmentationMode::Full,
                };
            }
            augment(&a.sample, &a.out, &aug, cli.seed)
        }
        Command::TrainAdapt(a) => train_adapt(a, cli.seed, &config),
        Command::ApplyAdapt(a) => apply_adapt(&a.model, &a.input, &a.out),
        Command::EvalLandmarks(a) => eval_landmarks(&a.pred, &a.gt, a.threshold),
        Command::EvalParsing(a) => eval_parsing(&a.pred, &a.gt),
        Command::Sweep(a) => {
            let variants: Vec<AblationVariant> = a
                .variants
                .iter()
                .map(|v| match v {
                    VariantArg::Full => AblationVariant::Full,
                    VariantArg::NoClothing => AblationVariant::NoClothing,
                    VariantArg::NoHairOrClothing => AblationVariant::NoHairOrClothing,
                })
                .collect();
            let plan = sweep_plan(&config, &a.counts, &variants)?;
            write_sweep(&a.out, &plan)?;
            let text: String = plan.iter().map(|e| format!("{} {} {}\n", e.config_file, e.variant.name(), e.sample_count)).collect();
            Ok(Output::new(serde_json::to_value(&plan).expect("plan serializes"), text))
        }
    }
}

fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::runtime(e.to_string()))?;
    Ok(write_atomic(path, text.as_bytes())?)
}

/// Assets from a `fit-model` output directory, or the built-in desk assets.
pub fn load_assets(dir: Option<&Path>) -> CliResult<ModelAssets> {
    let Some(dir) = dir else {
        return Ok(desk_assets()?);
    };
    let rig = FaceRig::load(&dir.join(RIG_FILE))?;
    let distribution = IdentityDistribution::load(&dir.join(DISTRIBUTION_FILE))?;
    if distribution.dim() != rig.identity_dim() {
        return Err(CliError::validation(format!(
            "distribution has {} dimensions but the rig has {} identity components",
            distribution.dim(),
            rig.identity_dim()
        )));
    }
    let path = dir.join(EXPRESSIONS_FILE);
    let library = if path.exists() {
        let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
        serde_json::from_str::<ExpressionLibrary>(&text)
            .map_err(|e| CliError::validation(format!("malformed file {}: {e}", path.display())))?
    } else {
        expression_library(rig.expression_dim(), DESK_SEED)
    };
    Ok(ModelAssets { rig, distribution, library })
}

fn make_rig(out: &Path, scans: usize, seed: u64) -> CliResult<Output> {
    if scans < 2 {
        return Err(CliError::validation("--scans must be at least 2"));
    }
    create_dir(out)?;
    let rig = desk_template_rig();
    let corpus = synthetic_corpus(&rig, scans, seed)?;
    rig.save(&out.join(RIG_FILE))?;
    corpus.save(&out.join("corpus.json"))?;
    Ok(Output::new(
        json!({ "rig": out.join(RIG_FILE), "corpus": out.join("corpus.json"), "vertices": rig.vertex_count(), "scans": scans }),
        format!("wrote {} ({} vertices) and corpus.json ({scans} scans) to {}\n", RIG_FILE, rig.vertex_count(), out.display()),
    ))
}

fn fit_model(corpus_path: &Path, rig_path: Option<&Path>, components: usize, out: &Path) -> CliResult<Output> {
    let template = match rig_path {
        Some(p) => FaceRig::load(p)?,
        None => desk_template_rig(),
    };
    let corpus = ScanCorpus::load(corpus_path)?;
    corpus.check_topology(template.faces())?;
    let fit = fit_identity_basis(&corpus, components, template.template_vertices())?;
    let rig = template.with_identity_basis(fit.components, fit.basis.clone())?;
    let distribution = fit_identity_distribution(&fit.betas)?;
    create_dir(out)?;
    rig.save(&out.join(RIG_FILE))?;
    distribution.save(&out.join(DISTRIBUTION_FILE))?;
    write_json(&out.join(EXPRESSIONS_FILE), &expression_library(rig.expression_dim(), DESK_SEED))?;
    write_json(&out.join("fit_report.json"), &fit.report)?;
    let explained: f64 = fit.report.explained_variance_ratio.iter().sum();
    let rms = (fit.report.residual_rms.iter().map(|r| r * r).sum::<f64>() / fit.report.residual_rms.len() as f64).sqrt();
    Ok(Output::new(
        json!({
            "out": out,
            "components": fit.components,
            "scans": corpus.scans.len(),
            "explained_variance": explained,
            "residual_rms": rms,
            "degenerate": fit.report.degenerate,
        }),
        format!(
            "fitted {} components from {} scans: {:.2}% variance explained, residual RMS {rms:.3e}\n",
            fit.components,
            corpus.scans.len(),
            100.0 * explained
        ),
    ))
}

fn gen_dataset(run: &RunConfig, config: &GenerationConfig, assets: &ModelAssets) -> CliResult<Output> {
    let report = generate_dataset(run, config, assets)?;
    let written = report.manifest.samples.len();
    if let Some(first) = report.failures.first() {
        return Err(CliError::runtime(format!(
            "{} of {} samples failed (recorded in the manifest), first: sample {}: {}",
            report.failures.len(),
            run.count,
            first.index,
            first.error
        )));
    }
    Ok(Output::new(
        json!({
            "out": run.output_dir,
            "samples": written,
            "global_seed": run.global_seed,
            "config_hash": report.manifest.header.config_hash,
            "rig_hash": report.manifest.header.rig_hash,
        }),
        format!("wrote {written} samples to {}\n", run.output_dir.display()),
    ))
}

fn preview(out: &Path, resolution: Option<(u32, u32)>, seed: u64, config: &GenerationConfig, assets: &ModelAssets) -> CliResult<Output> {
    let mut config = config.clone();
    if let Some((w, h)) = resolution {
        config.image.width_px = w;
        config.image.height_px = h;
    }
    config.validate()?;
    create_dir(out)?;
    let scene = assemble_scene(&config, assets, seed)?;
    let bundle = render_scene(&scene, &assets.rig, &config)?;
    let record = write_sample(out, 0, seed, &scene, &bundle, true)?;
    write_json(&out.join("scene.json"), &scene)?;
    let files: Vec<PathBuf> = record.files.values().map(|f| out.join(f)).collect();
    Ok(Output::new(
        json!({ "seed": seed, "files": files, "scene": out.join("scene.json"), "coverage": bundle.coverage() }),
        format!("rendered seed {seed} to {} ({:.1}% face coverage)\n", out.display(), 100.0 * bundle.coverage()),
    ))
}

fn augment(sample: &Path, out: &Path, aug: &facesynth_core::augment::AugmentationConfig, seed: u64) -> CliResult<Output> {
    aug.validate()?;
    let (w, h, color) = read_rgb_png(&sample.join("color.png"))?;
    let mask = read_mask(&sample.join("mask.png"))?;
    let landmarks = read_landmarks(&sample.join("landmarks.txt"))?;
    let spec = sample_augmentation(aug, w, h, &mut stream(seed, "cli/augment"))?;
    let image = apply_to_image(&spec, &ImageF32::from_rgb8(w, h, &color))?;
    let (mask, landmarks) = apply_to_labels(&spec, w, h, &mask, &landmarks)?;
    create_dir(out)?;
    write_rgb_png(&out.join("color.png"), w, h, &image.to_rgb8())?;
    write_gray_png(&out.join("mask.png"), w, h, &mask)?;
    write_atomic(&out.join("landmarks.txt"), encode_landmarks(&landmarks).as_bytes())?;
    write_json(&out.join("augmentation.json"), &spec)?;
    Ok(Output::new(
        json!({ "out": out, "spec": spec }),
        format!("augmented {} into {} (rotation {:.2} deg)\n", sample.display(), out.display(), spec.rotation_rad.to_degrees()),
    ))
}

fn train_adapt(a: &crate::TrainAdaptArgs, seed: u64, config: &GenerationConfig) -> CliResult<Output> {
    let pairs = match (&a.pairs, a.synthetic) {
        (Some(path), _) => LandmarkPairSet::load(path)?,
        (None, Some(n)) => {
            let assets = load_assets(a.assets.assets.as_deref())?;
            let sets = scene_landmark_sets(&assets, config, n, derive_seed(seed, "cli/scenes"))?;
            let pairs = bias_pairs(&sets, &SystematicBias::jawline_68(), derive_seed(seed, "cli/bias"))?;
            if let Some(path) = &a.save_pairs {
                pairs.save(path)?;
            }
            pairs
        }
        (None, None) => return Err(CliError::validation("either --pairs or --synthetic is required")),
    };
    let mut hyper = TrainHyper { seed, ..TrainHyper::default() };
    if let Some(v) = a.epochs {
        hyper.epochs = v;
    }
    if let Some(v) = a.hidden {
        hyper.hidden = v;
    }
    if let Some(v) = a.batch_size {
        hyper.batch_size = v;
    }
    if let Some(v) = a.learning_rate {
        hyper.adam.learning_rate = v;
    }
    if let Some(v) = a.validation_fraction {
        hyper.validation_fraction = v;
    }
    let trained = train_adapter(&pairs, &hyper)?;
    save_model(&a.out, &trained.model, Some(&hyper))?;
    if let Some(log) = &a.log {
        write_atomic(log, trained.log.to_text().as_bytes())?;
    }
    Ok(Output::new(
        json!({
            "model": a.out,
            "pairs": pairs.len(),
            "best_epoch": trained.best_epoch,
            "best_validation_mse": trained.best_validation_loss,
            "log": trained.log.epochs,
        }),
        format!(
            "trained on {} pairs: best validation MSE {:.6e} at epoch {}\n",
            pairs.len(),
            trained.best_validation_loss,
            trained.best_epoch
        ),
    ))
}

fn apply_adapt(model_path: &Path, input: &Path, out: &Path) -> CliResult<Output> {
    let (model, _) = load_model(model_path)?;
    let files = collect_layer_files(input, "txt", "landmarks.txt")?;
    if files.is_empty() {
        return Err(CliError::validation(format!("no landmark files under {}", input.display())));
    }
    let single = input.is_file();
    let mut written = Vec::new();
    for (rel, path) in &files {
        let landmarks = read_landmarks(path)?;
        let points: Vec<[f64; 2]> = landmarks.iter().map(|l| [l.x, l.y]).collect();
        let mapped = unflatten_points(&model.forward(&flatten_points(&points))?);
        let adapted: Vec<Landmark> =
            landmarks.iter().zip(&mapped).map(|(l, p)| Landmark { x: p[0], y: p[1], ..*l }).collect();
        let target = if single { out.to_path_buf() } else { out.join(rel) };
        if let Some(parent) = target.parent().filter(|p| !p.as_os_str().is_empty()) {
            create_dir(parent)?;
        }
        write_atomic(&target, encode_landmarks(&adapted).as_bytes())?;
        written.push(target);
    }
    Ok(Output::new(json!({ "written": written }), format!("adapted {} landmark files\n", written.len())))
}

fn eval_landmarks(pred: &Path, gt: &Path, threshold: f64) -> CliResult<Output> {
    let items = pair_files(pred, gt, "txt", "landmarks.txt")?
        .into_iter()
        .map(|(id, p, g)| Ok((id, read_points(&p)?, read_points(&g)?)))
        .collect::<CliResult<Vec<_>>>()?;
    let report = MetricsReport { landmarks: Some(evaluate_landmarks(&items, threshold)?), parsing: None };
    Ok(Output::new(serde_json::to_value(&report).expect("report serializes"), report.to_table()))
}

fn eval_parsing(pred: &Path, gt: &Path) -> CliResult<Output> {
    let items = pair_files(pred, gt, "png", "mask.png")?
        .into_iter()
        .map(|(id, p, g)| Ok((id, read_mask(&p)?, read_mask(&g)?)))
        .collect::<CliResult<Vec<_>>>()?;
    let report = MetricsReport { landmarks: None, parsing: Some(evaluate_parsing(&items, &MergeSpec::helen())?) };
    Ok(Output::new(serde_json::to_value(&report).expect("report serializes"), report.to_table()))
}
