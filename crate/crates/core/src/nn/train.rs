//! The training loop, per-epoch checkpoints and inference.
//!
//! Sample order for epoch `e` (1-based) is the dataset order shuffled by a
//! xoshiro256++ generator seeded with `seed + e`. With augmentation on,
//! each sample of each epoch draws from its own generator derived from
//! `(seed, epoch, dataset index)`, so the stream does not depend on batch
//! layout or on how many workers prepared inputs.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use super::layers::Batch;
use super::loss::{bce_loss, sigmoid};
use super::model::{raw_input, Detector, InputAssembly};
use super::optim::{Adam, AdamConfig};
use crate::augment::{augment, AugmentConfig};
use crate::error::{Error, Result};
use crate::fusion::{FrozenBlockFile, FusionBlock};
use crate::tensor::{read_tensor, write_atomic, write_tensor, ImageTensor};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;
const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub adam: AdamConfig,
    pub augment: Option<AugmentConfig>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 32,
            seed: 1024,
            adam: AdamConfig::default(),
            augment: Some(AugmentConfig::default()),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument("epochs and batch size must be positive".into()));
        }
        self.adam.validate()?;
        if let Some(a) = &self.augment {
            a.validate()?;
        }
        Ok(())
    }
}

/// One labelled `[0, 1]` RGB frame.
#[derive(Debug, Clone)]
pub struct Sample {
    pub frame: ImageTensor,
    /// 0 real, 1 fake.
    pub label: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochSummary {
    pub epoch: usize,
    pub mean_loss: f64,
    pub steps: u64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainReport {
    pub epochs: Vec<EpochSummary>,
    pub checkpoints: Vec<PathBuf>,
}

/// Builds raw model inputs for many frames, splitting the work over up to
/// `threads` workers. Output order matches input order.
pub fn raw_inputs(
    frames: &[&ImageTensor],
    assembly: InputAssembly,
    threads: usize,
) -> Result<Vec<ImageTensor>> {
    let threads = threads.max(1).min(frames.len().max(1));
    if threads == 1 {
        return frames.iter().map(|f| raw_input(f, assembly)).collect();
    }
    let chunk = frames.len().div_ceil(threads);
    let parts: Vec<Result<Vec<ImageTensor>>> = std::thread::scope(|s| {
        let handles: Vec<_> = frames
            .chunks(chunk)
            .map(|part| {
                s.spawn(move || part.iter().map(|f| raw_input(f, assembly)).collect())
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("input worker panicked"))
            .collect()
    });
    let mut out = Vec::with_capacity(frames.len());
    for part in parts {
        out.extend(part?);
    }
    Ok(out)
}

/// Stacks equally shaped tensors into an `f64` batch. Panics on an empty
/// slice.
pub fn to_batch(inputs: &[&ImageTensor]) -> Batch {
    let (c, h, w) = inputs[0].dims();
    let mut batch = Batch::zeros(inputs.len(), c, h, w);
    let len = c * h * w;
    for (i, t) in inputs.iter().enumerate() {
        debug_assert_eq!(t.dims(), (c, h, w));
        for (dst, &src) in batch.data[i * len..(i + 1) * len].iter_mut().zip(t.data()) {
            *dst = src as f64;
        }
    }
    batch
}

fn sample_rng(seed: u64, epoch: usize, index: usize) -> Xoshiro256PlusPlus {
    // splitmix-style mixing so nearby (epoch, index) pairs decorrelate
    let mut z = seed
        .wrapping_add((epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add((index as u64).wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    Xoshiro256PlusPlus::seed_from_u64(z ^ (z >> 31))
}

/// Trains `detector` in place. Writes `epoch_NNN/` checkpoints under
/// `checkpoints` when given.
pub fn train(
    detector: &mut Detector,
    data: &[Sample],
    cfg: &TrainConfig,
    checkpoints: Option<&Path>,
) -> Result<TrainReport> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if data.iter().any(|s| s.label > 1) {
        return Err(Error::InvalidArgument("labels must be 0 or 1".into()));
    }
    let assembly = detector.assembly;
    // without augmentation the inputs never change, so build them once
    let fixed = match cfg.augment {
        None => Some(raw_inputs(
            &data.iter().map(|s| &s.frame).collect::<Vec<_>>(),
            assembly,
            1,
        )?),
        Some(_) => None,
    };
    let mut adam = Adam::new(cfg.adam)?;
    let mut report = TrainReport::default();
    let mut step = 0usize;
    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut Xoshiro256PlusPlus::seed_from_u64(cfg.seed + epoch as u64));
        let mut loss_sum = 0.0;
        let mut batches = 0u64;
        for idx in order.chunks(cfg.batch_size) {
            let owned: Vec<ImageTensor>;
            let inputs: Vec<&ImageTensor> = match (&fixed, &cfg.augment) {
                (Some(all), _) => idx.iter().map(|&i| &all[i]).collect(),
                (None, Some(aug)) => {
                    owned = idx
                        .iter()
                        .map(|&i| {
                            let mut rng = sample_rng(cfg.seed, epoch, i);
                            raw_input(&augment(&data[i].frame, aug, &mut rng)?, assembly)
                        })
                        .collect::<Result<_>>()?;
                    owned.iter().collect()
                }
                (None, None) => unreachable!(),
            };
            let labels: Vec<f64> = idx.iter().map(|&i| data[i].label as f64).collect();
            let batch = to_batch(&inputs);
            step += 1;
            detector.zero_grad();
            let logits = detector.forward(&batch, true)?;
            let (loss, dlogits) = bce_loss(&logits, &labels);
            if !loss.is_finite() {
                return Err(Error::Divergence { step });
            }
            detector.backward(&dlogits)?;
            adam.step(detector);
            loss_sum += loss;
            batches += 1;
        }
        let summary = EpochSummary {
            epoch,
            mean_loss: loss_sum / batches as f64,
            steps: adam.step,
        };
        log::info!("epoch {epoch}: mean loss {:.5}", summary.mean_loss);
        if let Some(root) = checkpoints {
            let dir = root.join(format!("epoch_{epoch:03}"));
            save_checkpoint(&dir, detector, &adam, cfg, &summary)?;
            report.checkpoints.push(dir);
        }
        report.epochs.push(summary);
    }
    Ok(report)
}

/// Fake probabilities for `frames`, eval mode, in input order.
pub fn predict(detector: &mut Detector, frames: &[ImageTensor], threads: usize) -> Result<Vec<f64>> {
    const CHUNK: usize = 64;
    let mut out = Vec::with_capacity(frames.len());
    for part in frames.chunks(CHUNK) {
        let refs: Vec<&ImageTensor> = part.iter().collect();
        let raw = raw_inputs(&refs, detector.assembly, threads)?;
        let logits = detector.forward(&to_batch(&raw.iter().collect::<Vec<_>>()), false)?;
        out.extend(logits.into_iter().map(sigmoid));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionState {
    pub block: FrozenBlockFile,
    pub frozen: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub config: AdamConfig,
    /// First and second moments per tensor, as `(m, v)` entries.
    pub moments: Vec<(TensorEntry, TensorEntry)>,
}

/// `manifest.json` of a checkpoint directory. Tensors live next to it as
/// FCT1 files (`f32`); the fusion block is stored inline at full precision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub version: u32,
    pub assembly: InputAssembly,
    pub in_channels: usize,
    pub widths: Vec<usize>,
    pub params: Vec<TensorEntry>,
    pub buffers: Vec<TensorEntry>,
    pub fusion: Option<FusionState>,
    pub optimizer: AdamState,
    pub train_config: TrainConfig,
    pub summary: EpochSummary,
}

fn write_vector(dir: &Path, name: &str, shape: &[usize], values: &[f64]) -> Result<TensorEntry> {
    let file = format!("{name}.fct");
    let t = ImageTensor::from_f64(1, 1, values.len(), values)?;
    write_tensor(dir.join(&file), &t)?;
    Ok(TensorEntry {
        name: name.to_string(),
        shape: shape.to_vec(),
        file,
    })
}

fn read_vector(dir: &Path, entry: &TensorEntry) -> Result<Vec<f64>> {
    let t = read_tensor(dir.join(&entry.file))?;
    let expected: usize = entry.shape.iter().product();
    if t.data().len() != expected {
        return Err(Error::Format(format!(
            "{} holds {} values, shape {:?} needs {expected}",
            entry.file,
            t.data().len(),
            entry.shape
        )));
    }
    Ok(t.data().iter().map(|&v| v as f64).collect())
}

pub fn save_checkpoint(
    dir: &Path,
    detector: &Detector,
    adam: &Adam,
    cfg: &TrainConfig,
    summary: &EpochSummary,
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let params = detector
        .backbone
        .params()
        .iter()
        .map(|p| write_vector(dir, &p.name, &p.shape, &p.value))
        .collect::<Result<Vec<_>>>()?;
    let buffers = detector
        .backbone
        .buffers()
        .iter()
        .map(|(name, v)| write_vector(dir, name, &[v.len()], v))
        .collect::<Result<Vec<_>>>()?;
    let moments = adam
        .slots
        .iter()
        .map(|(name, slot)| {
            let shape = [slot.m.len()];
            Ok((
                write_vector(dir, &format!("adam.{name}.m"), &shape, &slot.m)?,
                write_vector(dir, &format!("adam.{name}.v"), &shape, &slot.v)?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = CheckpointManifest {
        version: CHECKPOINT_FORMAT_VERSION,
        assembly: detector.assembly,
        in_channels: detector.backbone.config.in_channels,
        widths: detector.backbone.config.widths.clone(),
        params,
        buffers,
        fusion: detector.fusion.as_ref().map(|b| FusionState {
            block: b.to_frozen_json(),
            frozen: b.is_frozen(),
        }),
        optimizer: AdamState {
            step: adam.step,
            config: adam.config,
            moments,
        },
        train_config: cfg.clone(),
        summary: summary.clone(),
    };
    let json = serde_json::to_string_pretty(&manifest)?;
    write_atomic(&dir.join(MANIFEST_FILE), json.as_bytes())
}

pub fn read_checkpoint_manifest(dir: &Path) -> Result<CheckpointManifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: CheckpointManifest = serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("checkpoint manifest: {e}")))?;
    if manifest.version != CHECKPOINT_FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {}",
            manifest.version
        )));
    }
    Ok(manifest)
}

/// Rebuilds a detector from a checkpoint directory (weights and BN
/// statistics; optimizer state is not restored).
pub fn load_checkpoint(dir: &Path) -> Result<Detector> {
    let m = read_checkpoint_manifest(dir)?;
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(0);
    let mut det = Detector::new(m.assembly, &m.widths, &mut rng)?;
    if det.backbone.config.in_channels != m.in_channels {
        return Err(Error::Format("input channels disagree with assembly".into()));
    }
    if let Some(state) = m.fusion {
        let mut block = FusionBlock::from_frozen_json(state.block)?;
        if !state.frozen {
            block.params.frozen = false;
        }
        det.fusion = Some(block);
    }
    let mut params = det.backbone.params_mut();
    if params.len() != m.params.len() {
        return Err(Error::Format(format!(
            "checkpoint has {} tensors, model has {}",
            m.params.len(),
            params.len()
        )));
    }
    for (p, entry) in params.iter_mut().zip(&m.params) {
        if p.name != entry.name || p.shape != entry.shape {
            return Err(Error::Format(format!(
                "tensor {} {:?} does not match {} {:?}",
                entry.name, entry.shape, p.name, p.shape
            )));
        }
        p.value = read_vector(dir, entry)?;
    }
    let mut buffers = det.backbone.buffers_mut();
    if buffers.len() != m.buffers.len() {
        return Err(Error::Format("buffer count mismatch".into()));
    }
    for ((name, values), entry) in buffers.iter_mut().zip(&m.buffers) {
        if *name != entry.name || values.len() != entry.shape.iter().product::<usize>() {
            return Err(Error::Format(format!("buffer {} does not match {name}", entry.name)));
        }
        **values = read_vector(dir, entry)?;
    }
    Ok(det)
}
