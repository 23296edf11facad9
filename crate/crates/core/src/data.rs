//! Frame manifests, video-level splits, frame sampling and a synthetic
//! forgery generator.
//!
//! A manifest is JSON lines, one [`SampleRecord`] per line. Relative frame
//! paths are resolved against the manifest's directory.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::{read_image, write_atomic, write_image, ImageTensor};

pub const MANIFEST_NAME: &str = "manifest.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleRecord {
    pub video_id: String,
    pub frame_index: usize,
    pub path: PathBuf,
    /// 0 real, 1 fake.
    pub label: u8,
    pub dataset: String,
    pub split: Split,
}

/// Checks labels, duplicate frames and train/test leakage.
pub fn validate_records(records: &[SampleRecord]) -> Result<()> {
    if records.is_empty() {
        return Err(Error::Manifest("manifest has no records".into()));
    }
    let mut frames = HashSet::new();
    let mut splits: HashMap<(&str, &str), Split> = HashMap::new();
    let mut labels: HashMap<(&str, &str), u8> = HashMap::new();
    for r in records {
        if r.label > 1 {
            return Err(Error::Manifest(format!(
                "video '{}' frame {}: label {} is not 0 or 1",
                r.video_id, r.frame_index, r.label
            )));
        }
        if !frames.insert((&r.dataset, &r.video_id, r.frame_index)) {
            return Err(Error::Manifest(format!(
                "duplicate frame {} of video '{}'",
                r.frame_index, r.video_id
            )));
        }
        let key = (r.dataset.as_str(), r.video_id.as_str());
        if *splits.entry(key).or_insert(r.split) != r.split {
            return Err(Error::Leakage {
                video_id: r.video_id.clone(),
                dataset: r.dataset.clone(),
            });
        }
        if *labels.entry(key).or_insert(r.label) != r.label {
            return Err(Error::Manifest(format!("video '{}' has mixed labels", r.video_id)));
        }
    }
    Ok(())
}

pub fn parse_manifest(text: &str) -> Result<Vec<SampleRecord>> {
    let records = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Manifest(format!("line {}: {e}", i + 1)))
        })
        .collect::<Result<Vec<SampleRecord>>>()?;
    validate_records(&records)?;
    Ok(records)
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<SampleRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text)
}

pub fn encode_manifest(records: &[SampleRecord]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_manifest(path: impl AsRef<Path>, records: &[SampleRecord]) -> Result<()> {
    validate_records(records)?;
    write_atomic(path.as_ref(), encode_manifest(records)?.as_bytes())
}

/// Where a record's frame lives, given the manifest's own path.
pub fn resolve_path(manifest: &Path, record: &SampleRecord) -> PathBuf {
    if record.path.is_absolute() {
        record.path.clone()
    } else {
        manifest
            .parent()
            .unwrap_or_else(|| Path::new(""))
            .join(&record.path)
    }
}

/// Loads the frames of `records` as `[0, 1]` RGB tensors.
pub fn load_frames(manifest: &Path, records: &[SampleRecord]) -> Result<Vec<ImageTensor>> {
    records
        .iter()
        .map(|r| {
            let img = read_image(resolve_path(manifest, r))?;
            match img.channels() {
                3 => Ok(img),
                _ => ImageTensor::concat(&[&img, &img, &img]),
            }
        })
        .collect()
}

/// `k` uniformly spaced indices `floor(j * n / k)`; every frame when
/// `n <= k`.
pub fn sample_frames(n: usize, k: usize) -> Vec<usize> {
    if n <= k {
        return (0..n).collect();
    }
    let mut out: Vec<usize> = (0..k).map(|j| j * n / k).collect();
    out.dedup();
    out
}

/// Keeps the frames picked by [`sample_frames`] in every video.
pub fn subsample_videos(records: &[SampleRecord], k: usize) -> Vec<SampleRecord> {
    let mut by_video: Vec<(&str, &str, Vec<&SampleRecord>)> = Vec::new();
    let mut index: HashMap<(&str, &str), usize> = HashMap::new();
    for r in records {
        let key = (r.dataset.as_str(), r.video_id.as_str());
        let slot = *index.entry(key).or_insert_with(|| {
            by_video.push((key.0, key.1, Vec::new()));
            by_video.len() - 1
        });
        by_video[slot].2.push(r);
    }
    let mut out = Vec::new();
    for (_, _, mut frames) in by_video {
        frames.sort_by_key(|r| r.frame_index);
        out.extend(sample_frames(frames.len(), k).into_iter().map(|i| frames[i].clone()));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub dataset: String,
    /// Source videos; each yields one real and one fake video.
    pub n_videos: usize,
    pub frames_per_video: usize,
    pub size: usize,
    /// Side of the manipulated square as a fraction of `size`.
    pub region_fraction: f64,
    /// The region is shrunk by this factor and scaled back up.
    pub resize_factor: f64,
    /// Width in pixels of the blend ramp at the region's edge.
    pub feather: f64,
    /// Peak relative brightness change applied smoothly over the region.
    pub lighting_shift: f64,
    /// Amplitude of fresh grain added to the pasted region, relative to
    /// the scene's own grain.
    pub regrain: f64,
    /// Fraction of source videos assigned to the test split.
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            dataset: "synthetic".into(),
            n_videos: 16,
            frames_per_video: 8,
            size: 32,
            region_fraction: 0.5,
            resize_factor: 1.7,
            feather: 2.0,
            lighting_shift: 0.15,
            regrain: 0.7,
            test_fraction: 0.25,
            seed: 1024,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.n_videos == 0 || self.frames_per_video == 0 {
            return bad("need at least one video and one frame".into());
        }
        if self.size < 8 {
            return bad(format!("frame size {} below 8", self.size));
        }
        if !(self.resize_factor > 0.0) || self.resize_factor.fract() == 0.0 {
            return bad(format!("resize factor {} must be positive and non-integer", self.resize_factor));
        }
        if !(self.feather >= 0.0) {
            return bad(format!("feather {} is negative", self.feather));
        }
        if !(self.region_fraction > 0.0 && self.region_fraction < 1.0) {
            return bad(format!("region fraction {} outside (0, 1)", self.region_fraction));
        }
        if !(0.0..=1.0).contains(&self.test_fraction) {
            return bad(format!("test fraction {} outside [0, 1]", self.test_fraction));
        }
        if !self.lighting_shift.is_finite() {
            return bad("lighting shift must be finite".into());
        }
        if !(self.regrain >= 0.0 && self.regrain.is_finite()) {
            return bad(format!("regrain {} must be finite and non-negative", self.regrain));
        }
        Ok(())
    }
}

/// Square region `[top, top + side) x [left, left + side)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Region {
    pub top: usize,
    pub left: usize,
    pub side: usize,
}

impl Region {
    pub fn contains(&self, y: usize, x: usize) -> bool {
        (self.top..self.top + self.side).contains(&y) && (self.left..self.left + self.side).contains(&x)
    }
}

/// One generated frame with its record; `region` is set for fakes.
#[derive(Debug, Clone)]
pub struct SynthFrame {
    pub record: SampleRecord,
    pub image: ImageTensor,
    pub region: Option<Region>,
}

#[derive(Debug, Clone)]
struct Wave {
    fy: f64,
    fx: f64,
    phase: f64,
    drift: f64,
    amp: [f64; 3],
}

/// Per-video texture parameters; frames differ by a slow phase drift and
/// fresh fine grain.
#[derive(Debug, Clone)]
struct Scene {
    base: [f64; 3],
    waves: Vec<Wave>,
    /// Coarse noise lattice, bilinearly upsampled.
    lattice: Vec<f64>,
    lattice_side: usize,
    grain: f64,
}

impl Scene {
    fn new(rng: &mut impl Rng) -> Self {
        let base = [rng.gen_range(0.3..0.7), rng.gen_range(0.3..0.7), rng.gen_range(0.3..0.7)];
        let waves = (0..4)
            .map(|i| {
                // low waves shape the frame, higher ones give mid-band texture
                let f = if i < 2 { rng.gen_range(0.02..0.06) } else { rng.gen_range(0.12..0.3) };
                let ang: f64 = rng.gen_range(0.0..std::f64::consts::PI);
                let a = if i < 2 { 0.12 } else { 0.05 };
                Wave {
                    fy: f * ang.sin(),
                    fx: f * ang.cos(),
                    phase: rng.gen_range(0.0..std::f64::consts::TAU),
                    drift: rng.gen_range(-0.15..0.15),
                    amp: [a * rng.gen_range(0.5..1.0), a * rng.gen_range(0.5..1.0), a * rng.gen_range(0.5..1.0)],
                }
            })
            .collect();
        let lattice_side = 6;
        let lattice = (0..lattice_side * lattice_side).map(|_| rng.gen_range(-0.06..0.06)).collect();
        Self {
            base,
            waves,
            lattice,
            lattice_side,
            grain: rng.gen_range(0.03..0.06),
        }
    }

    fn lattice_at(&self, y: f64, x: f64) -> f64 {
        let n = self.lattice_side;
        let (y, x) = (y.clamp(0.0, (n - 1) as f64), x.clamp(0.0, (n - 1) as f64));
        let (y0, x0) = (y.floor() as usize, x.floor() as usize);
        let (y1, x1) = ((y0 + 1).min(n - 1), (x0 + 1).min(n - 1));
        let (fy, fx) = (y - y0 as f64, x - x0 as f64);
        let at = |r: usize, c: usize| self.lattice[r * n + c];
        let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
        let bot = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
        top * (1.0 - fy) + bot * fy
    }

    fn render(&self, size: usize, t: usize, rng: &mut impl Rng) -> Vec<f64> {
        let p = size * size;
        let mut out = vec![0.0; 3 * p];
        let scale = (self.lattice_side - 1) as f64 / (size - 1) as f64;
        let shift = t as f64 * 0.1;
        for y in 0..size {
            for x in 0..size {
                let noise = self.lattice_at(y as f64 * scale, x as f64 * scale + shift * scale);
                let grain: f64 = rng.gen_range(-1.0..1.0) * self.grain;
                for c in 0..3 {
                    let mut v = self.base[c] + noise + grain;
                    for w in &self.waves {
                        let arg = w.fy * y as f64 + w.fx * x as f64 + w.phase + w.drift * t as f64;
                        v += w.amp[c] * (std::f64::consts::TAU * arg).sin();
                    }
                    out[c * p + y * size + x] = v;
                }
            }
        }
        out
    }
}

/// Bilinear resize of one plane (pixel centers aligned, edge clamp).
fn resize_plane(src: &[f64], sh: usize, sw: usize, dh: usize, dw: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(dh * dw);
    let (ry, rx) = (sh as f64 / dh as f64, sw as f64 / dw as f64);
    for y in 0..dh {
        let sy = ((y as f64 + 0.5) * ry - 0.5).clamp(0.0, (sh - 1) as f64);
        let (y0, fy) = (sy.floor() as usize, sy.fract());
        let y1 = (y0 + 1).min(sh - 1);
        for x in 0..dw {
            let sx = ((x as f64 + 0.5) * rx - 0.5).clamp(0.0, (sw - 1) as f64);
            let (x0, fx) = (sx.floor() as usize, sx.fract());
            let x1 = (x0 + 1).min(sw - 1);
            let top = src[y0 * sw + x0] * (1.0 - fx) + src[y0 * sw + x1] * fx;
            let bot = src[y1 * sw + x0] * (1.0 - fx) + src[y1 * sw + x1] * fx;
            out.push(top * (1.0 - fy) + bot * fy);
        }
    }
    out
}

/// Blend weight for offset `(dy, dx)` inside a square of `side`: 1 in the
/// core, ramping linearly to 0 over `feather` pixels at the edge.
fn blend_weight(dy: usize, dx: usize, side: usize, feather: f64) -> f64 {
    let edge = dy.min(dx).min(side - 1 - dy).min(side - 1 - dx) as f64 + 1.0;
    if feather <= 0.0 {
        1.0
    } else {
        (edge / (feather + 1.0)).min(1.0)
    }
}

/// Replaces `region` of `frame` (channel-planar, `size x size`) by its
/// down-and-up resampled copy plus `texture`, feather-blended, with an
/// optional smooth brightness change.
fn manipulate(
    frame: &[f64],
    size: usize,
    region: Region,
    cfg: &SynthConfig,
    light: f64,
    texture: &[f64],
) -> Vec<f64> {
    let p = size * size;
    let side = region.side;
    let small = ((side as f64 / cfg.resize_factor).round() as usize).max(2);
    let mut out = frame.to_vec();
    let center = (side as f64 - 1.0) / 2.0;
    for c in 0..3 {
        let patch: Vec<f64> = (0..side * side)
            .map(|i| frame[c * p + (region.top + i / side) * size + region.left + i % side])
            .collect();
        let down = resize_plane(&patch, side, side, small, small);
        let up = resize_plane(&down, small, small, side, side);
        for dy in 0..side {
            for dx in 0..side {
                let r2 = ((dy as f64 - center).powi(2) + (dx as f64 - center).powi(2)) / (center * center);
                let gain = 1.0 + light * (-r2).exp();
                let a = blend_weight(dy, dx, side, cfg.feather);
                let idx = c * p + (region.top + dy) * size + region.left + dx;
                let pasted = up[dy * side + dx] * gain + texture[dy * side + dx];
                out[idx] = (1.0 - a) * frame[idx] + a * pasted;
            }
        }
    }
    out
}

fn quantize(values: &[f64], size: usize) -> ImageTensor {
    let data = values
        .iter()
        .map(|v| ((v.clamp(0.0, 1.0) * 255.0).round() / 255.0) as f32)
        .collect();
    ImageTensor::new(3, size, size, data).expect("synthetic frame is finite")
}

fn video_rng(seed: u64, video: usize, stream: u64) -> Xoshiro256PlusPlus {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    for _ in 0..=video {
        rng.jump();
    }
    let mut r = Xoshiro256PlusPlus::seed_from_u64(rng.gen::<u64>() ^ stream);
    r.long_jump();
    r
}

/// Generates the dataset in memory: for each source video a real and a fake
/// video (ids `vNNN_real`, `vNNN_fake`) in the same split.
pub fn synthesize(cfg: &SynthConfig) -> Result<Vec<SynthFrame>> {
    cfg.validate()?;
    let mut order: Vec<usize> = (0..cfg.n_videos).collect();
    order.shuffle(&mut Xoshiro256PlusPlus::seed_from_u64(cfg.seed));
    let n_test = (cfg.n_videos as f64 * cfg.test_fraction).round() as usize;
    let test: HashSet<usize> = order[..n_test].iter().copied().collect();
    let side = ((cfg.size as f64 * cfg.region_fraction).round() as usize).clamp(4, cfg.size - 2);
    let mut out = Vec::with_capacity(2 * cfg.n_videos * cfg.frames_per_video);
    for v in 0..cfg.n_videos {
        let mut scene_rng = video_rng(cfg.seed, v, 0);
        let scene = Scene::new(&mut scene_rng);
        let split = if test.contains(&v) { Split::Test } else { Split::Train };
        let top0 = scene_rng.gen_range(1..=cfg.size - side - 1);
        let left0 = scene_rng.gen_range(1..=cfg.size - side - 1);
        let light = cfg.lighting_shift * if scene_rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let mut grain_rng = video_rng(cfg.seed, v, 1);
        for t in 0..cfg.frames_per_video {
            let raw = scene.render(cfg.size, t, &mut grain_rng);
            // the region wanders by at most one pixel between frames
            let wobble = |base: usize, k: usize| {
                let d = [0isize, 1, 0, -1][(t + k) % 4];
                (base as isize + d).clamp(1, (cfg.size - side - 1) as isize) as usize
            };
            let region = Region {
                top: wobble(top0, 0),
                left: wobble(left0, 1),
                side,
            };
            let texture: Vec<f64> = (0..side * side)
                .map(|_| grain_rng.gen_range(-1.0..1.0) * scene.grain * cfg.regrain)
                .collect();
            let fake = manipulate(&raw, cfg.size, region, cfg, light, &texture);
            for (label, values, reg) in [(0u8, &raw, None), (1u8, &fake, Some(region))] {
                let tag = if label == 0 { "real" } else { "fake" };
                let video_id = format!("v{v:03}_{tag}");
                out.push(SynthFrame {
                    record: SampleRecord {
                        path: PathBuf::from(format!("frames/{video_id}/{t:03}.ppm")),
                        video_id,
                        frame_index: t,
                        label,
                        dataset: cfg.dataset.clone(),
                        split,
                    },
                    image: quantize(values, cfg.size),
                    region: reg,
                });
            }
        }
    }
    Ok(out)
}

/// Writes frames as PPM plus `manifest.jsonl` under `out_dir`; returns
/// the manifest path.
pub fn generate_synthetic(cfg: &SynthConfig, out_dir: &Path) -> Result<PathBuf> {
    let frames = synthesize(cfg)?;
    for f in &frames {
        let path = out_dir.join(&f.record.path);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        write_image(&path, &f.image)?;
    }
    let records: Vec<SampleRecord> = frames.into_iter().map(|f| f.record).collect();
    let manifest = out_dir.join(MANIFEST_NAME);
    write_manifest(&manifest, &records)?;
    Ok(manifest)
}

/// SHA-256 over the manifest bytes followed by every referenced file, in
/// manifest order, as lowercase hex.
pub fn dataset_digest(manifest: &Path) -> Result<String> {
    let bytes = std::fs::read(manifest).map_err(|e| Error::io(manifest, e))?;
    let records = parse_manifest(&String::from_utf8_lossy(&bytes))?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    for r in &records {
        let path = resolve_path(manifest, r);
        hasher.update(std::fs::read(&path).map_err(|e| Error::io(&path, e))?);
    }
    Ok(hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect())
}
