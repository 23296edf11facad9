use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use super::layers::{
    global_avg_pool, global_avg_pool_backward, relu_backward, relu_forward, Batch, BatchNorm2d,
    Conv3x3, Linear, MaxPool2, Param,
};
use crate::cue::{extract, CueChannel, CueKind};
use crate::error::{Error, Result};
use crate::fusion::{FusionBlock, FusionBlockParams, FusionVariant, Mode};
use crate::tensor::{normalize, ImageTensor, Standardization};

pub const DEFAULT_WIDTHS: [usize; 4] = [16, 32, 64, 64];

/// How the backbone input is put together.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "with", rename_all = "snake_case")]
pub enum InputAssembly {
    RgbOnly,
    /// RGB plus one raw cue channel.
    Concat(CueKind),
    /// RGB plus the fusion block's output.
    Fused(FusionVariant),
}

impl InputAssembly {
    /// Channels the backbone sees.
    pub fn backbone_channels(self) -> usize {
        match self {
            InputAssembly::RgbOnly => 3,
            _ => 4,
        }
    }

    /// Channels of the raw model input: RGB, then the cues in stream order.
    pub fn raw_channels(self) -> usize {
        3 + self.cues().len()
    }

    pub fn cues(self) -> Vec<CueKind> {
        match self {
            InputAssembly::RgbOnly => vec![],
            InputAssembly::Concat(k) => vec![k],
            InputAssembly::Fused(v) => v.streams().to_vec(),
        }
    }
}

impl fmt::Display for InputAssembly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InputAssembly::RgbOnly => f.write_str("rgb"),
            InputAssembly::Concat(k) => write!(f, "concat:{k}"),
            InputAssembly::Fused(v) => write!(f, "fused:{}", v.to_string().to_lowercase()),
        }
    }
}

impl FromStr for InputAssembly {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        match lower.split_once(':') {
            None if lower == "rgb" => Ok(InputAssembly::RgbOnly),
            Some(("concat", cue)) => match cue.parse()? {
                CueKind::Fused => Err(Error::InvalidArgument("cannot concatenate 'fused'".into())),
                k => Ok(InputAssembly::Concat(k)),
            },
            Some(("fused", v)) => Ok(InputAssembly::Fused(v.parse()?)),
            _ => Err(Error::InvalidArgument(format!(
                "assembly '{s}' is not rgb, concat:<cue> or fused:<variant>"
            ))),
        }
    }
}

/// Raw model input for one `[0, 1]` RGB frame: normalized RGB followed by
/// the cue channels the assembly needs. Fusion happens inside the model.
pub fn raw_input(frame: &ImageTensor, assembly: InputAssembly) -> Result<ImageTensor> {
    if frame.channels() != 3 {
        return Err(Error::InvalidShape(format!(
            "expected an RGB frame, got {} channels",
            frame.channels()
        )));
    }
    let rgb = normalize(frame, Standardization::UNIT_TO_SYMMETRIC)?;
    let cues: Vec<CueChannel> = assembly
        .cues()
        .into_iter()
        .map(|k| extract(k, frame))
        .collect::<Result<_>>()?;
    let mut parts = vec![&rgb];
    parts.extend(cues.iter().map(CueChannel::tensor));
    ImageTensor::concat(&parts)
}

/// Backbone input (3 or 4 channels, order R, G, B, extra) for one frame.
/// The fusion block, when used, runs in eval mode.
pub fn assemble_input(
    frame: &ImageTensor,
    assembly: InputAssembly,
    fusion: Option<&FusionBlock>,
) -> Result<ImageTensor> {
    let raw = raw_input(frame, assembly)?;
    match assembly {
        InputAssembly::RgbOnly | InputAssembly::Concat(_) => Ok(raw),
        InputAssembly::Fused(variant) => {
            let block = fusion.ok_or_else(|| {
                Error::InvalidArgument("fused assembly needs a fusion block".into())
            })?;
            if block.variant != variant {
                return Err(Error::InvalidArgument(format!(
                    "assembly wants {variant}, block is {}",
                    block.variant
                )));
            }
            let [ka, kb] = variant.streams();
            let a = CueChannel::new(ka, raw.channel(3)?)?;
            let b = CueChannel::new(kb, raw.channel(4)?)?;
            let fused = block.fuse(&a, &b)?;
            let rgb = ImageTensor::concat(&[&raw.channel(0)?, &raw.channel(1)?, &raw.channel(2)?])?;
            ImageTensor::concat(&[&rgb, fused.tensor()])
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub in_channels: usize,
    pub widths: Vec<usize>,
}

impl BackboneConfig {
    pub fn new(in_channels: usize, widths: &[usize]) -> Self {
        Self {
            in_channels,
            widths: widths.to_vec(),
        }
    }

    pub fn standard(in_channels: usize) -> Self {
        Self::new(in_channels, &DEFAULT_WIDTHS)
    }
}

#[derive(Debug, Clone)]
struct Stage {
    conv: Conv3x3,
    bn: BatchNorm2d,
    pool: MaxPool2,
    relu_mask: Vec<bool>,
    pre_pool_dims: (usize, usize),
}

/// Conv-BN-ReLU-maxpool stages, global average pooling and a linear head
/// producing one logit.
#[derive(Debug, Clone)]
pub struct TinyBackbone {
    pub config: BackboneConfig,
    stages: Vec<Stage>,
    head: Linear,
    last_dims: (usize, usize, usize, usize),
}

impl TinyBackbone {
    pub fn new(config: BackboneConfig, rng: &mut impl Rng) -> Result<Self> {
        if config.widths.is_empty() || config.widths.contains(&0) || config.in_channels == 0 {
            return Err(Error::InvalidArgument(format!("bad backbone config {config:?}")));
        }
        let mut stages = Vec::new();
        let mut c_in = config.in_channels;
        for (i, &c_out) in config.widths.iter().enumerate() {
            stages.push(Stage {
                conv: Conv3x3::new(&format!("stage{i}.conv"), c_in, c_out, rng),
                bn: BatchNorm2d::new(&format!("stage{i}.bn"), c_out),
                pool: MaxPool2::default(),
                relu_mask: Vec::new(),
                pre_pool_dims: (0, 0),
            });
            c_in = c_out;
        }
        let head = Linear::new("head", c_in, rng);
        Ok(Self {
            config,
            stages,
            head,
            last_dims: (0, 0, 0, 0),
        })
    }

    pub fn forward(&mut self, x: &Batch, train: bool) -> Vec<f64> {
        let mut act = x.clone();
        for st in &mut self.stages {
            let y = st.conv.forward(&act);
            let mut y = st.bn.forward(&y, train);
            st.relu_mask = relu_forward(&mut y);
            st.pre_pool_dims = (y.h, y.w);
            act = st.pool.forward(&y);
        }
        self.last_dims = (act.n, act.c, act.h, act.w);
        let feats = global_avg_pool(&act);
        self.head.forward(&feats, act.n)
    }

    /// Accumulates parameter gradients; returns the input gradient when
    /// requested.
    pub fn backward(&mut self, dlogits: &[f64], want_input_grad: bool) -> Option<Batch> {
        let dfeat = self.head.backward(dlogits);
        let (n, c, h, w) = self.last_dims;
        let mut grad = global_avg_pool_backward(&dfeat, n, c, h, w);
        for (i, st) in self.stages.iter_mut().enumerate().rev() {
            let mut g = st.pool.backward(&grad);
            relu_backward(&mut g, &st.relu_mask);
            let g = st.bn.backward(&g);
            let need = i > 0 || want_input_grad;
            match st.conv.backward(&g, need) {
                Some(dx) => grad = dx,
                None => return None,
            }
        }
        Some(grad)
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut out = Vec::new();
        for st in &self.stages {
            out.extend([&st.conv.weight, &st.bn.gamma, &st.bn.beta]);
        }
        out.extend([&self.head.weight, &self.head.bias]);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = Vec::new();
        for st in &mut self.stages {
            out.push(&mut st.conv.weight);
            out.push(&mut st.bn.gamma);
            out.push(&mut st.bn.beta);
        }
        out.push(&mut self.head.weight);
        out.push(&mut self.head.bias);
        out
    }

    /// Non-trainable BN buffers as `(name, values)`.
    pub fn buffers(&self) -> Vec<(String, &Vec<f64>)> {
        let mut out = Vec::new();
        for (i, st) in self.stages.iter().enumerate() {
            out.push((format!("stage{i}.bn.running_mean"), &st.bn.running_mean));
            out.push((format!("stage{i}.bn.running_var"), &st.bn.running_var));
        }
        out
    }

    pub fn buffers_mut(&mut self) -> Vec<(String, &mut Vec<f64>)> {
        let mut out = Vec::new();
        for (i, st) in self.stages.iter_mut().enumerate() {
            out.push((format!("stage{i}.bn.running_mean"), &mut st.bn.running_mean));
            out.push((format!("stage{i}.bn.running_var"), &mut st.bn.running_var));
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }
}

/// Backbone plus input assembly (and the fusion block for the fused route).
#[derive(Debug, Clone)]
pub struct Detector {
    pub assembly: InputAssembly,
    pub fusion: Option<FusionBlock>,
    pub backbone: TinyBackbone,
    /// Gradients of `[w0, w1, gamma, beta]` of the fusion block.
    pub fusion_grad: [f64; 4],
}

impl Detector {
    /// A freshly initialized detector. The fusion block (if any) gets
    /// uniform mixer weights in `[-1/sqrt(2), 1/sqrt(2)]` and identity BN.
    pub fn new(assembly: InputAssembly, widths: &[usize], rng: &mut impl Rng) -> Result<Self> {
        let fusion = match assembly {
            InputAssembly::Fused(variant) => {
                let bound = 1.0 / 2f64.sqrt();
                let dist = Uniform::new_inclusive(-bound, bound);
                let w = [dist.sample(rng), dist.sample(rng)];
                Some(FusionBlock::new(variant, FusionBlockParams::with_weights(w))?)
            }
            _ => None,
        };
        let backbone = TinyBackbone::new(
            BackboneConfig::new(assembly.backbone_channels(), widths),
            rng,
        )?;
        Ok(Self {
            assembly,
            fusion,
            backbone,
            fusion_grad: [0.0; 4],
        })
    }

    /// Uses `block` (typically frozen) as the fusion stage.
    pub fn with_fusion(mut self, block: FusionBlock) -> Result<Self> {
        match self.assembly {
            InputAssembly::Fused(v) if v == block.variant => {
                self.fusion = Some(block);
                Ok(self)
            }
            other => Err(Error::InvalidArgument(format!(
                "{} block does not fit assembly {other}",
                block.variant
            ))),
        }
    }

    fn fusion_trainable(&self) -> bool {
        self.fusion.as_ref().is_some_and(|f| !f.is_frozen())
    }

    /// Turns a raw batch into the backbone batch.
    fn assemble(&mut self, raw: &Batch, train: bool) -> Result<Batch> {
        if raw.c != self.assembly.raw_channels() {
            return Err(Error::InvalidShape(format!(
                "raw input has {} channels, {} needs {}",
                raw.c,
                self.assembly,
                self.assembly.raw_channels()
            )));
        }
        let InputAssembly::Fused(_) = self.assembly else {
            return Ok(raw.clone());
        };
        let p = raw.plane();
        let mut a = Vec::with_capacity(raw.n * p);
        let mut b = Vec::with_capacity(raw.n * p);
        for i in 0..raw.n {
            a.extend_from_slice(raw.channel(i, 3));
            b.extend_from_slice(raw.channel(i, 4));
        }
        let trainable = self.fusion_trainable();
        let block = self
            .fusion
            .as_mut()
            .ok_or_else(|| Error::InvalidArgument("fused assembly without fusion block".into()))?;
        let mode = if train && trainable { Mode::Train } else { Mode::Eval };
        let fused = block.forward(&a, &b, mode)?;
        let mut out = Batch::zeros(raw.n, 4, raw.h, raw.w);
        for i in 0..raw.n {
            for c in 0..3 {
                out.channel_mut(i, c).copy_from_slice(raw.channel(i, c));
            }
            out.channel_mut(i, 3).copy_from_slice(&fused[i * p..(i + 1) * p]);
        }
        Ok(out)
    }

    pub fn forward(&mut self, raw: &Batch, train: bool) -> Result<Vec<f64>> {
        let x = self.assemble(raw, train)?;
        Ok(self.backbone.forward(&x, train))
    }

    /// Backpropagates `dlogits` from the last forward, accumulating into
    /// every trainable parameter.
    pub fn backward(&mut self, dlogits: &[f64]) -> Result<()> {
        let trainable = self.fusion_trainable();
        let dx = self.backbone.backward(dlogits, trainable);
        if let (true, Some(dx), Some(block)) = (trainable, dx, self.fusion.as_ref()) {
            let p = dx.plane();
            let mut dfused = Vec::with_capacity(dx.n * p);
            for i in 0..dx.n {
                dfused.extend_from_slice(dx.channel(i, 3));
            }
            let g = block.backward(&dfused)?;
            self.fusion_grad[0] += g.w[0];
            self.fusion_grad[1] += g.w[1];
            self.fusion_grad[2] += g.gamma;
            self.fusion_grad[3] += g.beta;
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.backbone.params_mut().into_iter().for_each(Param::zero_grad);
        self.fusion_grad = [0.0; 4];
    }

    /// Every trainable tensor as `(name, values, grads)`, in a fixed order.
    /// Changes to `values` are written back.
    pub fn for_each_trainable(&mut self, mut f: impl FnMut(&str, &mut [f64], &[f64])) {
        if self.fusion_trainable() {
            let block = self.fusion.as_mut().unwrap();
            let p = &mut block.params;
            let mut values = [p.w[0], p.w[1], p.gamma, p.beta];
            f("fusion", &mut values, &self.fusion_grad);
            p.w = [values[0], values[1]];
            p.gamma = values[2];
            p.beta = values[3];
        }
        for param in self.backbone.params_mut() {
            let Param {
                name, value, grad, ..
            } = param;
            f(name, value, grad);
        }
    }

    /// Trainable parameter tensors as `(name, element count)`.
    pub fn trainable_tensors(&self) -> Vec<(String, usize)> {
        let mut out = Vec::new();
        if let Some(block) = &self.fusion {
            if !block.is_frozen() {
                out.push(("fusion.mixer".to_string(), 2));
                out.push(("fusion.bn".to_string(), 2));
            }
        }
        out.extend(self.backbone.params().iter().map(|p| (p.name.clone(), p.len())));
        out
    }

    pub fn trainable_param_count(&self) -> usize {
        self.trainable_tensors().iter().map(|(_, n)| n).sum()
    }
}

/// Trainable tensors present in `extended` but not in `base`, or larger
/// there, with the size difference. Used to account for what an input
/// assembly adds on top of a plain RGB model.
pub fn param_delta(base: &Detector, extended: &Detector) -> Vec<(String, usize)> {
    let base: std::collections::HashMap<String, usize> =
        base.trainable_tensors().into_iter().collect();
    extended
        .trainable_tensors()
        .into_iter()
        .filter_map(|(name, n)| {
            let before = base.get(&name).copied().unwrap_or(0);
            (n > before).then(|| (name, n - before))
        })
        .collect()
}
