//! The lightweight fusion block: two cue channels are mixed by a 1x1
//! convolution without bias (`z = w0 * a + w1 * b`), batch-normalized and
//! passed through a ReLU, giving one extra input channel for the backbone.
//!
//! `w[0]` always multiplies the WDF stream; `w[1]` the complementary cue
//! (phase for LFWS, LBP for LFWL).

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cue::{CueChannel, CueKind};
use crate::error::{Error, Result};
use crate::tensor::{write_atomic, ImageTensor};

pub const DEFAULT_BN_EPS: f64 = 1e-5;
/// Weight kept from the old running statistic on every update.
pub const DEFAULT_BN_MOMENTUM: f64 = 0.9;
pub const FROZEN_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FusionVariant {
    /// WDF + phase channel.
    #[serde(rename = "LFWS")]
    Lfws,
    /// WDF + LBP.
    #[serde(rename = "LFWL")]
    Lfwl,
}

impl FusionVariant {
    /// The cue paired with WDF.
    pub fn complementary(self) -> CueKind {
        match self {
            FusionVariant::Lfws => CueKind::Phase,
            FusionVariant::Lfwl => CueKind::Lbp,
        }
    }

    /// Input streams in weight order.
    pub fn streams(self) -> [CueKind; 2] {
        [CueKind::Wdf, self.complementary()]
    }
}

impl fmt::Display for FusionVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FusionVariant::Lfws => "LFWS",
            FusionVariant::Lfwl => "LFWL",
        })
    }
}

impl FromStr for FusionVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lfws" => Ok(FusionVariant::Lfws),
            "lfwl" => Ok(FusionVariant::Lfwl),
            other => Err(Error::InvalidArgument(format!("unknown fusion variant '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; running statistics are updated.
    Train,
    /// Running statistics; pure.
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionBlockParams {
    pub w: [f64; 2],
    pub gamma: f64,
    pub beta: f64,
    pub running_mean: f64,
    pub running_var: f64,
    pub eps: f64,
    pub momentum: f64,
    pub frozen: bool,
}

impl Default for FusionBlockParams {
    fn default() -> Self {
        Self {
            w: [0.5, 0.5],
            gamma: 1.0,
            beta: 0.0,
            running_mean: 0.0,
            running_var: 1.0,
            eps: DEFAULT_BN_EPS,
            momentum: DEFAULT_BN_MOMENTUM,
            frozen: false,
        }
    }
}

impl FusionBlockParams {
    pub fn with_weights(w: [f64; 2]) -> Self {
        Self {
            w,
            ..Self::default()
        }
    }

    /// Identity batch norm (`gamma = 1, beta = 0, mean = 0, var = 1`) with
    /// the given `eps`.
    pub fn identity_bn(w: [f64; 2], eps: f64) -> Self {
        Self {
            w,
            eps,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = self.w.iter().all(|v| v.is_finite())
            && [self.gamma, self.beta, self.running_mean, self.running_var, self.eps]
                .iter()
                .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidArgument("fusion parameters must be finite".into()));
        }
        if self.running_var < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "running variance {} is negative",
                self.running_var
            )));
        }
        // eps = 0 is accepted for exact identity-BN arithmetic; the
        // denominator itself must stay positive
        if self.eps < 0.0 || self.running_var + self.eps <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "need eps >= 0 and running_var + eps > 0 (eps={}, var={})",
                self.eps, self.running_var
            )));
        }
        if !(0.0..=1.0).contains(&self.momentum) {
            return Err(Error::InvalidArgument(format!("momentum {} outside [0, 1]", self.momentum)));
        }
        Ok(())
    }
}

/// Gradients of one backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionGrads {
    pub w: [f64; 2],
    pub gamma: f64,
    pub beta: f64,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone)]
struct Cache {
    mode: Mode,
    a: Vec<f64>,
    b: Vec<f64>,
    xhat: Vec<f64>,
    active: Vec<bool>,
    inv_std: f64,
}

#[derive(Debug, Clone)]
pub struct FusionBlock {
    pub variant: FusionVariant,
    pub params: FusionBlockParams,
    cache: Option<Cache>,
}

impl FusionBlock {
    pub fn new(variant: FusionVariant, params: FusionBlockParams) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            variant,
            params,
            cache: None,
        })
    }

    pub fn is_frozen(&self) -> bool {
        self.params.frozen
    }

    pub fn freeze(&mut self) {
        self.params.frozen = true;
        self.cache = None;
    }

    /// Trainable scalars: two mixer weights plus the BN affine pair.
    pub fn trainable_param_count(&self) -> usize {
        if self.params.frozen {
            0
        } else {
            4
        }
    }

    /// Mixer output before normalization, `w0 * a + w1 * b`.
    pub fn mix(&self, a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
        if a.len() != b.len() {
            return Err(Error::InvalidShape(format!(
                "fusion streams differ in size: {} vs {}",
                a.len(),
                b.len()
            )));
        }
        let [w0, w1] = self.params.w;
        Ok(a.iter().zip(b).map(|(&x, &y)| w0 * x + w1 * y).collect())
    }

    /// Forward over a flattened batch (every pixel of every frame). Batch
    /// statistics in train mode span the whole slice.
    pub fn forward(&mut self, a: &[f64], b: &[f64], mode: Mode) -> Result<Vec<f64>> {
        if mode == Mode::Train && self.params.frozen {
            return Err(Error::FrozenViolation);
        }
        let z = self.mix(a, b)?;
        if z.is_empty() {
            return Err(Error::InvalidShape("empty fusion input".into()));
        }
        let p = &self.params;
        let (mean, var) = match mode {
            Mode::Eval => (p.running_mean, p.running_var),
            Mode::Train => batch_moments(&z),
        };
        let denom = var + p.eps;
        if !(denom > 0.0) {
            return Err(Error::InvalidArgument(
                "batch variance plus eps is zero; use eps > 0 for training".into(),
            ));
        }
        let inv_std = 1.0 / denom.sqrt();
        let xhat: Vec<f64> = z.iter().map(|&v| (v - mean) * inv_std).collect();
        let pre: Vec<f64> = xhat.iter().map(|&v| p.gamma * v + p.beta).collect();
        let active: Vec<bool> = pre.iter().map(|&v| v > 0.0).collect();
        let out = pre.iter().map(|&v| v.max(0.0)).collect();

        if mode == Mode::Train {
            let n = z.len() as f64;
            let unbiased = if z.len() > 1 { var * n / (n - 1.0) } else { var };
            let m = self.params.momentum;
            self.params.running_mean = m * self.params.running_mean + (1.0 - m) * mean;
            self.params.running_var = m * self.params.running_var + (1.0 - m) * unbiased;
        }
        self.cache = Some(Cache {
            mode,
            a: a.to_vec(),
            b: b.to_vec(),
            xhat,
            active,
            inv_std,
        });
        Ok(out)
    }

    /// Backward for the last forward call.
    pub fn backward(&self, grad_out: &[f64]) -> Result<FusionGrads> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("backward called before forward".into()))?;
        if grad_out.len() != cache.xhat.len() {
            return Err(Error::InvalidShape(format!(
                "gradient has {} values, forward produced {}",
                grad_out.len(),
                cache.xhat.len()
            )));
        }
        let gamma = self.params.gamma;
        let mut dgamma = 0.0;
        let mut dbeta = 0.0;
        let dpre: Vec<f64> = grad_out
            .iter()
            .zip(&cache.active)
            .map(|(&g, &on)| if on { g } else { 0.0 })
            .collect();
        for (&d, &x) in dpre.iter().zip(&cache.xhat) {
            dgamma += d * x;
            dbeta += d;
        }
        let dz: Vec<f64> = match cache.mode {
            Mode::Eval => dpre.iter().map(|&d| d * gamma * cache.inv_std).collect(),
            Mode::Train => {
                let n = dpre.len() as f64;
                let sum_dx: f64 = dpre.iter().map(|&d| d * gamma).sum();
                let sum_dx_x: f64 = dpre
                    .iter()
                    .zip(&cache.xhat)
                    .map(|(&d, &x)| d * gamma * x)
                    .sum();
                dpre.iter()
                    .zip(&cache.xhat)
                    .map(|(&d, &x)| cache.inv_std / n * (n * d * gamma - sum_dx - x * sum_dx_x))
                    .collect()
            }
        };
        let [w0, w1] = self.params.w;
        let mut dw = [0.0; 2];
        for ((&g, &a), &b) in dz.iter().zip(&cache.a).zip(&cache.b) {
            dw[0] += g * a;
            dw[1] += g * b;
        }
        Ok(FusionGrads {
            w: dw,
            gamma: dgamma,
            beta: dbeta,
            a: dz.iter().map(|&g| g * w0).collect(),
            b: dz.iter().map(|&g| g * w1).collect(),
        })
    }

    /// Eval-mode fusion of one pair of cue channels.
    pub fn fuse(&self, a: &CueChannel, b: &CueChannel) -> Result<CueChannel> {
        check_pair(self.variant, a, b)?;
        let mut scratch = self.clone();
        let out = scratch.forward(
            &a.tensor().plane_f64(0),
            &b.tensor().plane_f64(0),
            Mode::Eval,
        )?;
        let t = a.tensor();
        CueChannel::new(
            CueKind::Fused,
            ImageTensor::from_f64(1, t.height(), t.width(), &out)?,
        )
    }

    /// Fuses a batch of pairs. In train mode the batch statistics cover all
    /// pairs and the running statistics are updated once.
    pub fn fuse_batch(
        &mut self,
        pairs: &[(&CueChannel, &CueChannel)],
        mode: Mode,
    ) -> Result<Vec<CueChannel>> {
        let mut a = Vec::new();
        let mut b = Vec::new();
        for (x, y) in pairs {
            check_pair(self.variant, x, y)?;
            a.extend(x.tensor().plane_f64(0));
            b.extend(y.tensor().plane_f64(0));
        }
        let out = self.forward(&a, &b, mode)?;
        let mut offset = 0;
        pairs
            .iter()
            .map(|(x, _)| {
                let t = x.tensor();
                let n = t.plane_len();
                let c = CueChannel::new(
                    CueKind::Fused,
                    ImageTensor::from_f64(1, t.height(), t.width(), &out[offset..offset + n])?,
                );
                offset += n;
                c
            })
            .collect()
    }

    pub fn to_frozen_json(&self) -> FrozenBlockFile {
        FrozenBlockFile {
            version: FROZEN_FORMAT_VERSION,
            variant: self.variant,
            w: self.params.w.to_vec(),
            gamma: self.params.gamma,
            beta: self.params.beta,
            running_mean: self.params.running_mean,
            running_var: self.params.running_var,
            eps: self.params.eps,
        }
    }

    pub fn from_frozen_json(file: FrozenBlockFile) -> Result<Self> {
        if file.version != FROZEN_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported frozen block version {}",
                file.version
            )));
        }
        let w: [f64; 2] = file.w.as_slice().try_into().map_err(|_| {
            Error::Format(format!(
                "fusion block needs exactly 2 mixer weights, found {}",
                file.w.len()
            ))
        })?;
        let params = FusionBlockParams {
            w,
            gamma: file.gamma,
            beta: file.beta,
            running_mean: file.running_mean,
            running_var: file.running_var,
            eps: file.eps,
            momentum: DEFAULT_BN_MOMENTUM,
            frozen: true,
        };
        params
            .validate()
            .map_err(|e| Error::Format(format!("invalid frozen block: {e}")))?;
        Self::new(file.variant, params)
    }
}

fn check_pair(variant: FusionVariant, a: &CueChannel, b: &CueChannel) -> Result<()> {
    if a.tensor().dims() != b.tensor().dims() {
        return Err(Error::InvalidShape(format!(
            "fusion inputs differ: {:?} vs {:?}",
            a.tensor().dims(),
            b.tensor().dims()
        )));
    }
    let [first, second] = variant.streams();
    if a.kind() != first || b.kind() != second {
        return Err(Error::InvalidArgument(format!(
            "{variant} expects ({first}, {second}) streams, got ({}, {})",
            a.kind(),
            b.kind()
        )));
    }
    Ok(())
}

/// Mean and biased variance.
pub fn batch_moments(z: &[f64]) -> (f64, f64) {
    let n = z.len() as f64;
    let mean = z.iter().sum::<f64>() / n;
    let var = z.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var)
}

/// On-disk form of a frozen block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrozenBlockFile {
    pub version: u32,
    pub variant: FusionVariant,
    pub w: Vec<f64>,
    pub gamma: f64,
    pub beta: f64,
    pub running_mean: f64,
    pub running_var: f64,
    pub eps: f64,
}

pub fn export_frozen(block: &FusionBlock, path: impl AsRef<Path>) -> Result<()> {
    let json = serde_json::to_string_pretty(&block.to_frozen_json())?;
    write_atomic(path.as_ref(), json.as_bytes())
}

pub fn import_frozen(path: impl AsRef<Path>) -> Result<FusionBlock> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_frozen(&text)
}

pub fn parse_frozen(text: &str) -> Result<FusionBlock> {
    let file: FrozenBlockFile =
        serde_json::from_str(text).map_err(|e| Error::Format(format!("frozen block: {e}")))?;
    FusionBlock::from_frozen_json(file)
}

/// Extra trainable parameters the fusion route adds to a backbone: the
/// first convolution's weights for the extra input channel(s) (no bias),
/// the bias-free 1x1 mixer, and the BN affine pair.
pub fn count_additional_params(
    first_conv_out: usize,
    kernel: usize,
    extra_input_channels: usize,
    mixer_inputs: usize,
) -> usize {
    ParamBreakdown::new(first_conv_out, kernel, extra_input_channels, mixer_inputs).total()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ParamBreakdown {
    pub first_conv: usize,
    pub mixer: usize,
    pub bn_affine: usize,
}

impl ParamBreakdown {
    pub fn new(
        first_conv_out: usize,
        kernel: usize,
        extra_input_channels: usize,
        mixer_inputs: usize,
    ) -> Self {
        Self {
            first_conv: extra_input_channels * first_conv_out * kernel * kernel,
            mixer: mixer_inputs,
            bn_affine: 2,
        }
    }

    /// Xception's stem: 32 filters of 3x3, one extra channel, two streams.
    pub fn reference() -> Self {
        Self::new(32, 3, 1, 2)
    }

    pub fn total(&self) -> usize {
        self.first_conv + self.mixer + self.bn_affine
    }
}

impl fmt::Display for ParamBreakdown {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} = {} (first conv, extra input channel) + {} (1x1 mixer) + {} (BN gamma, beta)",
            self.total(),
            self.first_conv,
            self.mixer,
            self.bn_affine
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cue(kind: CueKind, v: f32) -> CueChannel {
        CueChannel::new(kind, ImageTensor::filled(1, 2, 2, v)).unwrap()
    }

    fn block(variant: FusionVariant, params: FusionBlockParams) -> FusionBlock {
        FusionBlock::new(variant, params).unwrap()
    }

    /// Loss `sum(c_i * y_i)` and its analytic gradients.
    fn weighted_sum(
        block: &FusionBlock,
        a: &[f64],
        b: &[f64],
        c: &[f64],
        mode: Mode,
    ) -> (f64, Option<FusionGrads>) {
        let mut blk = block.clone();
        let y = blk.forward(a, b, mode).unwrap();
        let loss = y.iter().zip(c).map(|(y, c)| y * c).sum();
        (loss, blk.backward(c).ok())
    }

    #[test]
    fn gradients_match_central_differences() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_xoshiro::Xoshiro256PlusPlus::seed_from_u64(11);
        let n = 24;
        let a: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let c: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let params = FusionBlockParams {
            w: [0.7, -0.4],
            gamma: 1.3,
            beta: 0.2,
            running_mean: 0.1,
            running_var: 0.8,
            ..FusionBlockParams::default()
        };
        let base = block(FusionVariant::Lfws, params);
        let h = 1e-6;
        let rel = |x: f64, y: f64| (x - y).abs() / x.abs().max(y.abs()).max(1e-8);
        for mode in [Mode::Eval, Mode::Train] {
            let (_, g) = weighted_sum(&base, &a, &b, &c, mode);
            let g = g.unwrap();
            let analytic = [g.w[0], g.w[1], g.gamma, g.beta];
            for (k, &an) in analytic.iter().enumerate() {
                let perturb = |d: f64| {
                    let mut blk = base.clone();
                    match k {
                        0 => blk.params.w[0] += d,
                        1 => blk.params.w[1] += d,
                        2 => blk.params.gamma += d,
                        _ => blk.params.beta += d,
                    }
                    weighted_sum(&blk, &a, &b, &c, mode).0
                };
                let fd = (perturb(h) - perturb(-h)) / (2.0 * h);
                assert!(rel(fd, an) < 1e-6, "{mode:?} param {k}: fd {fd} vs {an}");
            }
            for i in 0..n {
                for (stream, grad) in [(0, &g.a), (1, &g.b)] {
                    let eval = |d: f64| {
                        let (mut a2, mut b2) = (a.clone(), b.clone());
                        if stream == 0 { a2[i] += d } else { b2[i] += d }
                        weighted_sum(&base, &a2, &b2, &c, mode).0
                    };
                    let fd = (eval(h) - eval(-h)) / (2.0 * h);
                    assert!(
                        rel(fd, grad[i]) < 1e-6 || (fd - grad[i]).abs() < 1e-9,
                        "{mode:?} input {stream}[{i}]: fd {fd} vs {}",
                        grad[i]
                    );
                }
            }
        }
    }

    #[test]
    fn lfws_learned_weights_example() {
        let b = block(FusionVariant::Lfws, FusionBlockParams::identity_bn([0.18, -0.12], 0.0));
        let out = b.fuse(&cue(CueKind::Wdf, 1.0), &cue(CueKind::Phase, 1.0)).unwrap();
        for &v in out.tensor().data() {
            assert!((v as f64 - 0.06).abs() < 1e-7);
        }
    }

    #[test]
    fn lfwl_negative_mix_is_clamped() {
        let b = block(FusionVariant::Lfwl, FusionBlockParams::identity_bn([0.08, -0.32], 0.0));
        let out = b.fuse(&cue(CueKind::Wdf, 0.0), &cue(CueKind::Lbp, 0.8)).unwrap();
        assert!(out.tensor().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn projection_weights_pass_wdf_through() {
        let b = block(FusionVariant::Lfws, FusionBlockParams::identity_bn([1.0, 0.0], 0.0));
        let a = CueChannel::new(
            CueKind::Wdf,
            ImageTensor::new(1, 1, 4, vec![0.0, 0.25, 0.5, 1.0]).unwrap(),
        )
        .unwrap();
        let out = b.fuse(&a, &cue_row(CueKind::Phase)).unwrap();
        assert_eq!(out.tensor().data(), a.tensor().data());
    }

    fn cue_row(kind: CueKind) -> CueChannel {
        CueChannel::new(kind, ImageTensor::new(1, 1, 4, vec![0.3, -0.9, 0.1, 0.7]).unwrap()).unwrap()
    }

    #[test]
    fn dimension_and_kind_checks() {
        let b = block(FusionVariant::Lfws, FusionBlockParams::default());
        let small = CueChannel::new(CueKind::Phase, ImageTensor::zeros(1, 1, 1)).unwrap();
        assert!(matches!(b.fuse(&cue(CueKind::Wdf, 0.0), &small), Err(Error::InvalidShape(_))));
        assert!(b.fuse(&cue(CueKind::Wdf, 0.0), &cue(CueKind::Lbp, 0.0)).is_err());
    }

    #[test]
    fn frozen_refuses_training() {
        let mut b = block(FusionVariant::Lfws, FusionBlockParams::default());
        b.freeze();
        assert!(matches!(
            b.forward(&[0.0, 1.0], &[1.0, 0.0], Mode::Train),
            Err(Error::FrozenViolation)
        ));
        assert!(b.forward(&[0.0, 1.0], &[1.0, 0.0], Mode::Eval).is_ok());
        assert_eq!(b.trainable_param_count(), 0);
    }

    #[test]
    fn train_mode_updates_running_stats() {
        let mut b = block(FusionVariant::Lfws, FusionBlockParams::with_weights([1.0, 0.0]));
        let a = [1.0, 2.0, 3.0, 4.0];
        let out = b.forward(&a, &[0.0; 4], Mode::Train).unwrap();
        // batch mean 2.5, biased var 1.25, unbiased 5/3
        assert!((b.params.running_mean - 0.25).abs() < 1e-12);
        assert!((b.params.running_var - (0.9 + 0.1 * 5.0 / 3.0)).abs() < 1e-12);
        let expected = (4.0 - 2.5) / (1.25f64 + 1e-5).sqrt();
        assert!((out[3] - expected).abs() < 1e-12);
        assert_eq!(out[0], 0.0);
    }

    #[test]
    fn eval_is_batch_independent() {
        let b = block(FusionVariant::Lfws, FusionBlockParams::with_weights([0.7, -0.4]));
        let x = cue_row(CueKind::Wdf);
        let p = cue_row(CueKind::Phase);
        let alone = b.fuse(&x, &p).unwrap();
        let mut bb = b.clone();
        let other_p = CueChannel::new(CueKind::Phase, ImageTensor::filled(1, 1, 4, -0.2)).unwrap();
        let other_w = CueChannel::new(CueKind::Wdf, ImageTensor::filled(1, 1, 4, 0.9)).unwrap();
        let batch = bb.fuse_batch(&[(&other_w, &other_p), (&x, &p)], Mode::Eval).unwrap();
        assert_eq!(batch[1], alone);
        assert_eq!(bb.params, b.params);
    }

    #[test]
    fn param_counts() {
        assert_eq!(count_additional_params(32, 3, 1, 2), 292);
        assert_eq!(ParamBreakdown::reference().first_conv, 288);
        assert_eq!(count_additional_params(32, 3, 0, 2), 4);
        assert_eq!(count_additional_params(1, 1, 1, 2), 5);
    }

    #[test]
    fn frozen_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("block.json");
        let params = FusionBlockParams {
            w: [0.18, -0.12],
            gamma: 1.3,
            beta: 0.05,
            running_mean: 0.011,
            running_var: 0.42,
            ..FusionBlockParams::default()
        };
        let b = block(FusionVariant::Lfws, params);
        export_frozen(&b, &path).unwrap();
        let back = import_frozen(&path).unwrap();
        assert!(back.is_frozen());
        assert_eq!(back.params.w, b.params.w);
        let x = cue_row(CueKind::Wdf);
        let p = cue_row(CueKind::Phase);
        let before = b.fuse(&x, &p).unwrap();
        let after = back.fuse(&x, &p).unwrap();
        for (u, v) in before.tensor().data().iter().zip(after.tensor().data()) {
            assert_eq!(u.to_bits(), v.to_bits());
        }
    }

    #[test]
    fn frozen_file_rejects_three_weights() {
        let text = r#"{"version":1,"variant":"LFWS","w":[0.1,0.2,0.3],"gamma":1.0,"beta":0.0,"running_mean":0.0,"running_var":1.0,"eps":1e-5}"#;
        assert!(matches!(parse_frozen(text), Err(Error::Format(_))));
        let bad_version = r#"{"version":2,"variant":"LFWS","w":[0.1,0.2],"gamma":1.0,"beta":0.0,"running_mean":0.0,"running_var":1.0,"eps":1e-5}"#;
        assert!(matches!(parse_frozen(bad_version), Err(Error::Format(_))));
    }
}
