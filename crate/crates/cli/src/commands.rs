use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use fusecue_core::augment::augment;
use fusecue_core::data::{
    dataset_digest, generate_synthetic, load_frames, load_manifest, Split,
};
use fusecue_core::eval::{EvalReport, ScoredFrame};
use fusecue_core::fusion::{export_frozen, import_frozen, ParamBreakdown};
use fusecue_core::nn::train::read_checkpoint_manifest;
use fusecue_core::nn::{load_checkpoint, predict, train, Detector, Sample};
use fusecue_core::tensor::{read_image, write_atomic, write_image, write_tensor};
use fusecue_core::extract;
use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::config::{load_augment, load_run, load_synth, RunConfig};
use crate::{
    AugmentArgs, Cli, Command, EvalArgs, ExportArgs, ExtractArgs, FuseArgs, ParamArgs, SynthArgs,
    TrainArgs,
};

pub fn run(cli: &Cli) -> Result<()> {
    if cli.threads == 0 {
        bail!("--threads must be at least 1");
    }
    match &cli.command {
        Command::Synth(a) => synth(a),
        Command::Extract(a) => extract_cue(a),
        Command::Fuse(a) => fuse(a),
        Command::Augment(a) => augment_samples(a),
        Command::Train(a) => train_run(a),
        Command::Eval(a) => eval(a, cli.threads),
        Command::ExportFrozen(a) => export(a),
        Command::Paramcount(a) => paramcount(a),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())?;
    Ok(())
}

fn synth(a: &SynthArgs) -> Result<()> {
    let mut cfg = load_synth(a.config.as_deref())?;
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.n_videos {
        cfg.n_videos = v;
    }
    if let Some(v) = a.frames_per_video {
        cfg.frames_per_video = v;
    }
    if let Some(v) = a.size {
        cfg.size = v;
    }
    if let Some(v) = a.resize_factor {
        cfg.resize_factor = v;
    }
    if let Some(v) = &a.dataset {
        cfg.dataset = v.clone();
    }
    cfg.validate()?;
    create_dir(&a.out)?;
    let manifest = generate_synthetic(&cfg, &a.out)?;
    let digest = dataset_digest(&manifest)?;
    log::info!("wrote {} ({} videos)", manifest.display(), 2 * cfg.n_videos);
    println!("{}\t{digest}", manifest.display());
    Ok(())
}

fn extract_cue(a: &ExtractArgs) -> Result<()> {
    let img = read_image(&a.input)?;
    let cue = extract(a.cue, &img)?;
    write_tensor(&a.out, cue.tensor())?;
    let (lo, hi) = cue.tensor().min_max();
    log::info!("{} of {}: range [{lo}, {hi}]", a.cue, a.input.display());
    Ok(())
}

fn fuse(a: &FuseArgs) -> Result<()> {
    let block = import_frozen(&a.frozen)?;
    if block.variant != a.variant {
        bail!("{} holds a {} block, not {}", a.frozen.display(), block.variant, a.variant);
    }
    let img = read_image(&a.input)?;
    let [ka, kb] = a.variant.streams();
    let fused = block.fuse(&extract(ka, &img)?, &extract(kb, &img)?)?;
    write_tensor(&a.out, fused.tensor())?;
    Ok(())
}

fn augment_samples(a: &AugmentArgs) -> Result<()> {
    let cfg = load_augment(a.config.as_deref())?;
    cfg.validate()?;
    let img = read_image(&a.input)?;
    create_dir(&a.out)?;
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(a.seed);
    for k in 0..a.n_samples {
        let out = augment(&img, &cfg, &mut rng)?;
        write_image(a.out.join(format!("aug_{k:03}.ppm")), &out)?;
    }
    log::info!("wrote {} samples to {}", a.n_samples, a.out.display());
    Ok(())
}

#[derive(Debug, Serialize)]
struct TrainSummary<'a> {
    config: &'a RunConfig,
    train_frames: usize,
    epochs: Vec<fusecue_core::nn::train::EpochSummary>,
    checkpoints: Vec<String>,
}

fn resolve_run(a: &TrainArgs) -> Result<RunConfig> {
    let mut cfg = load_run(a.config.as_deref())?;
    if let Some(v) = &a.assembly {
        cfg.assembly = v.clone();
    }
    if let Some(v) = a.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = a.batch {
        cfg.batch_size = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.lr {
        cfg.adam.lr = v;
    }
    if let Some(v) = &a.widths {
        cfg.widths = v.clone();
    }
    if a.no_augment {
        cfg.augment = None;
    }
    if let Some(v) = &a.data {
        cfg.data = Some(v.clone());
    }
    if let Some(v) = &a.out {
        cfg.checkpoints = Some(v.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn train_run(a: &TrainArgs) -> Result<()> {
    let cfg = resolve_run(a)?;
    let data = cfg.data.as_deref().context("no training manifest (--data)")?;
    let out = cfg.checkpoints.clone().context("no checkpoint directory (--out)")?;
    let records: Vec<_> =
        load_manifest(data)?.into_iter().filter(|r| r.split == Split::Train).collect();
    let frames = load_frames(data, &records)?;
    let samples: Vec<Sample> = frames
        .into_iter()
        .zip(&records)
        .map(|(frame, r)| Sample {
            frame,
            label: r.label,
        })
        .collect();
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(cfg.seed);
    let mut detector = Detector::new(cfg.assembly()?, &cfg.widths, &mut rng)?;
    create_dir(&out)?;
    log::info!(
        "training {} on {} frames, {} trainable parameters",
        cfg.assembly,
        samples.len(),
        detector.trainable_param_count()
    );
    let report = train(&mut detector, &samples, &cfg.train_config(), Some(&out))?;
    let summary = TrainSummary {
        config: &cfg,
        train_frames: samples.len(),
        checkpoints: report
            .checkpoints
            .iter()
            .map(|p| p.file_name().unwrap_or_default().to_string_lossy().into_owned())
            .collect(),
        epochs: report.epochs,
    };
    write_json(&out.join("train_report.json"), &summary)?;
    if let Some(dir) = &cfg.reports {
        create_dir(dir)?;
        write_json(&dir.join("train_report.json"), &summary)?;
    }
    Ok(())
}

/// One line of a score file.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScoreLine {
    dataset: String,
    video_id: String,
    score: f64,
    label: u8,
}

fn read_scores(path: &Path) -> Result<Vec<ScoredFrame>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let s: ScoreLine = serde_json::from_str(l)
                .with_context(|| format!("{} line {}", path.display(), i + 1))?;
            if s.label > 1 {
                bail!("{} line {}: label {} is not 0 or 1", path.display(), i + 1, s.label);
            }
            Ok(ScoredFrame {
                dataset: s.dataset,
                video_id: s.video_id,
                score: s.score,
                label: s.label,
            })
        })
        .collect()
}

fn score_manifests(ckpt: &Path, manifests: &[PathBuf], threads: usize) -> Result<Vec<ScoredFrame>> {
    let mut detector = load_checkpoint(ckpt)?;
    let mut out = Vec::new();
    for m in manifests {
        let records: Vec<_> =
            load_manifest(m)?.into_iter().filter(|r| r.split == Split::Test).collect();
        if records.is_empty() {
            bail!("{} has no test records", m.display());
        }
        let frames = load_frames(m, &records)?;
        let scores = predict(&mut detector, &frames, threads)?;
        out.extend(records.into_iter().zip(scores).map(|(r, score)| ScoredFrame {
            dataset: r.dataset,
            video_id: r.video_id,
            score,
            label: r.label,
        }));
    }
    Ok(out)
}

fn eval(a: &EvalArgs, threads: usize) -> Result<()> {
    let (frames, config) = match (&a.ckpt, &a.scores) {
        (Some(ckpt), None) => {
            let manifest = read_checkpoint_manifest(ckpt)?;
            let config = serde_json::json!({
                "ckpt": ckpt,
                "manifests": a.manifests,
                "assembly": manifest.assembly.to_string(),
                "widths": manifest.widths,
                "train_config": manifest.train_config,
            });
            (score_manifests(ckpt, &a.manifests, threads)?, config)
        }
        (None, Some(scores)) => (read_scores(scores)?, serde_json::json!({ "scores": scores })),
        _ => bail!("give either --ckpt with --manifests, or --scores"),
    };
    let mut report = EvalReport::from_frames(&frames)?;
    report.config = config;
    if let Some(base) = &a.baseline_report {
        let text =
            std::fs::read_to_string(base).with_context(|| format!("reading {}", base.display()))?;
        let baseline: EvalReport = serde_json::from_str(&text)
            .with_context(|| format!("baseline report {}", base.display()))?;
        report = report.with_baseline(&a.baseline_name, &baseline);
    }
    write_json(&a.out, &report)?;
    print!("{}", report.to_table());
    Ok(())
}

fn export(a: &ExportArgs) -> Result<()> {
    let detector = load_checkpoint(&a.ckpt)?;
    let Some(mut block) = detector.fusion else {
        bail!("{} has no fusion block ({})", a.ckpt.display(), detector.assembly);
    };
    block.freeze();
    export_frozen(&block, &a.out)?;
    Ok(())
}

fn paramcount(a: &ParamArgs) -> Result<()> {
    let breakdown = ParamBreakdown::new(a.first_conv_out, a.kernel, 1, 2);
    println!("{}", breakdown.total());
    println!("{breakdown}");
    Ok(())
}
