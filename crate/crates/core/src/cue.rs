use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{luminance, ImageTensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CueKind {
    Wdf,
    Lbp,
    Phase,
    /// Output of the fusion block.
    Fused,
}

impl CueKind {
    /// Guaranteed value range, if any.
    pub fn range(self) -> Option<(f32, f32)> {
        match self {
            CueKind::Wdf | CueKind::Phase => Some((-1.0, 1.0)),
            CueKind::Lbp => Some((-1.0, 0.8)),
            CueKind::Fused => None,
        }
    }
}

impl fmt::Display for CueKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CueKind::Wdf => "wdf",
            CueKind::Lbp => "lbp",
            CueKind::Phase => "phase",
            CueKind::Fused => "fused",
        })
    }
}

impl FromStr for CueKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "wdf" => Ok(CueKind::Wdf),
            "lbp" => Ok(CueKind::Lbp),
            "phase" | "spsl" => Ok(CueKind::Phase),
            other => Err(Error::InvalidArgument(format!("unknown cue '{other}'"))),
        }
    }
}

/// A single-channel map tagged with the cue that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct CueChannel {
    kind: CueKind,
    tensor: ImageTensor,
}

impl CueChannel {
    pub fn new(kind: CueKind, tensor: ImageTensor) -> Result<Self> {
        if tensor.channels() != 1 {
            return Err(Error::InvalidShape(format!(
                "cue channel must have 1 channel, got {}",
                tensor.channels()
            )));
        }
        if let Some((lo, hi)) = kind.range() {
            let (min, max) = tensor.min_max();
            if min < lo || max > hi {
                return Err(Error::InvalidArgument(format!(
                    "{kind} values [{min}, {max}] exceed [{lo}, {hi}]"
                )));
            }
        }
        Ok(Self { kind, tensor })
    }

    pub fn kind(&self) -> CueKind {
        self.kind
    }

    pub fn tensor(&self) -> &ImageTensor {
        &self.tensor
    }

    pub fn into_tensor(self) -> ImageTensor {
        self.tensor
    }
}

/// Extracts a cue from a `[0, 1]` RGB or grayscale frame.
pub fn extract(kind: CueKind, frame: &ImageTensor) -> Result<CueChannel> {
    let gray = luminance(frame)?;
    match kind {
        CueKind::Wdf => crate::wavelet::wdf(&gray),
        CueKind::Lbp => crate::lbp::lbp(&gray, &crate::lbp::LbpConfig::default()),
        CueKind::Phase => crate::phase::phase_channel(&gray),
        CueKind::Fused => Err(Error::InvalidArgument(
            "the fused channel comes from a fusion block, not a cue extractor".into(),
        )),
    }
}
