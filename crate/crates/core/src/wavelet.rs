//! Orthonormal 2-D Haar (db1) analysis/synthesis and the wavelet-denoised
//! feature (WDF): a multi-level decomposition with every detail band zeroed,
//! reconstructed and rescaled to `[-1, 1]`.
//!
//! One level maps each 2x2 block `[[a, b], [c, d]]` to
//!
//! ```text
//! LL = (a + b + c + d) / 2     LH = (a + b - c - d) / 2
//! HL = (a - b + c - d) / 2     HH = (a - b - c + d) / 2
//! ```
//!
//! so `LH` is horizontal-lowpass / vertical-highpass (it responds to
//! vertical change) and `HL` the transpose. Odd sizes are padded by
//! repeating the last row/column (half-sample symmetric) and the inverse
//! crops the padding away.

use crate::cue::{CueChannel, CueKind};
use crate::error::{Error, Result};
use crate::tensor::ImageTensor;

/// A dense `f64` plane.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Plane {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::InvalidShape(format!(
                "plane data length {} != {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn energy(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    fn from_image(img: &ImageTensor) -> Result<Self> {
        if img.channels() != 1 {
            return Err(Error::InvalidShape(format!(
                "expected a single-channel image, got {} channels",
                img.channels()
            )));
        }
        Ok(Self {
            rows: img.height(),
            cols: img.width(),
            data: img.plane_f64(0),
        })
    }

    /// Pads to even dimensions by repeating the last row/column.
    fn padded_even(&self) -> Plane {
        let rows = self.rows + self.rows % 2;
        let cols = self.cols + self.cols % 2;
        if rows == self.rows && cols == self.cols {
            return self.clone();
        }
        let mut out = Plane::zeros(rows, cols);
        for r in 0..rows {
            let sr = r.min(self.rows - 1);
            for c in 0..cols {
                out.data[r * cols + c] = self.at(sr, c.min(self.cols - 1));
            }
        }
        out
    }
}

/// Detail bands of one decomposition level. `rows`/`cols` are the
/// (unpadded) dimensions of the plane this level decomposed.
#[derive(Debug, Clone, PartialEq)]
pub struct DetailBands {
    pub rows: usize,
    pub cols: usize,
    pub lh: Plane,
    pub hl: Plane,
    pub hh: Plane,
}

impl DetailBands {
    pub fn zero(&mut self) {
        for band in [&mut self.lh, &mut self.hl, &mut self.hh] {
            band.data.iter_mut().for_each(|v| *v = 0.0);
        }
    }
}

/// Multi-level decomposition: detail bands from finest (index 0) to
/// coarsest, plus the coarsest approximation.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveletPyramid {
    pub details: Vec<DetailBands>,
    pub approx: Plane,
}

impl WaveletPyramid {
    pub fn levels(&self) -> usize {
        self.details.len()
    }

    /// Sum of squares over every coefficient.
    pub fn energy(&self) -> f64 {
        self.approx.energy()
            + self
                .details
                .iter()
                .map(|d| d.lh.energy() + d.hl.energy() + d.hh.energy())
                .sum::<f64>()
    }

    pub fn zero_details(&mut self) {
        self.details.iter_mut().for_each(DetailBands::zero);
    }
}

fn analyze_level(input: &Plane) -> (Plane, DetailBands) {
    let p = input.padded_even();
    let (rows, cols) = (p.rows / 2, p.cols / 2);
    let mut ll = Plane::zeros(rows, cols);
    let mut lh = Plane::zeros(rows, cols);
    let mut hl = Plane::zeros(rows, cols);
    let mut hh = Plane::zeros(rows, cols);
    for r in 0..rows {
        for c in 0..cols {
            let a = p.at(2 * r, 2 * c);
            let b = p.at(2 * r, 2 * c + 1);
            let cc = p.at(2 * r + 1, 2 * c);
            let d = p.at(2 * r + 1, 2 * c + 1);
            let i = r * cols + c;
            ll.data[i] = (a + b + cc + d) * 0.5;
            lh.data[i] = (a + b - cc - d) * 0.5;
            hl.data[i] = (a - b + cc - d) * 0.5;
            hh.data[i] = (a - b - cc + d) * 0.5;
        }
    }
    (
        ll,
        DetailBands {
            rows: input.rows,
            cols: input.cols,
            lh,
            hl,
            hh,
        },
    )
}

fn synthesize_level(ll: &Plane, bands: &DetailBands) -> Result<Plane> {
    let (rows, cols) = (bands.rows.div_ceil(2), bands.cols.div_ceil(2));
    for (name, p) in [
        ("LL", ll),
        ("LH", &bands.lh),
        ("HL", &bands.hl),
        ("HH", &bands.hh),
    ] {
        if p.rows != rows || p.cols != cols || p.data.len() != rows * cols {
            return Err(Error::InvalidShape(format!(
                "{name} band is {}x{}, expected {rows}x{cols}",
                p.rows, p.cols
            )));
        }
    }
    let mut out = Plane::zeros(bands.rows, bands.cols);
    for r in 0..rows {
        for c in 0..cols {
            let i = r * cols + c;
            let (s, v, h, d) = (ll.data[i], bands.lh.data[i], bands.hl.data[i], bands.hh.data[i]);
            let block = [
                (s + v + h + d) * 0.5,
                (s + v - h - d) * 0.5,
                (s - v + h - d) * 0.5,
                (s - v - h + d) * 0.5,
            ];
            for (k, value) in block.into_iter().enumerate() {
                let (y, x) = (2 * r + k / 2, 2 * c + k % 2);
                if y < bands.rows && x < bands.cols {
                    out.data[y * bands.cols + x] = value;
                }
            }
        }
    }
    Ok(out)
}

/// Haar analysis of a plane over `levels` levels.
pub fn dwt2_plane(input: &Plane, levels: usize) -> Result<WaveletPyramid> {
    if levels == 0 {
        return Err(Error::InvalidArgument("at least one decomposition level is required".into()));
    }
    if input.rows < 2 || input.cols < 2 {
        return Err(Error::InvalidShape(format!(
            "image {}x{} is smaller than 2x2",
            input.rows, input.cols
        )));
    }
    let mut details = Vec::with_capacity(levels);
    let mut current = input.clone();
    for _ in 0..levels {
        let (ll, bands) = analyze_level(&current);
        details.push(bands);
        current = ll;
    }
    Ok(WaveletPyramid {
        details,
        approx: current,
    })
}

pub fn dwt2(img: &ImageTensor, levels: usize) -> Result<WaveletPyramid> {
    dwt2_plane(&Plane::from_image(img)?, levels)
}

pub fn idwt2_plane(pyr: &WaveletPyramid) -> Result<Plane> {
    let mut current = pyr.approx.clone();
    for bands in pyr.details.iter().rev() {
        current = synthesize_level(&current, bands)?;
    }
    Ok(current)
}

pub fn idwt2(pyr: &WaveletPyramid) -> Result<ImageTensor> {
    let p = idwt2_plane(pyr)?;
    ImageTensor::from_f64(1, p.rows, p.cols, &p.data)
}

/// How the reconstructed approximation is brought into `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Rescale {
    /// Per-image min-max onto `[-1, 1]`; a constant map becomes all zeros.
    #[default]
    PerImageMinMax,
    /// `2x - 1`, clamped, for inputs already known to lie in `[0, 1]`.
    FixedUnit,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WdfConfig {
    pub levels: usize,
    pub rescale: Rescale,
}

impl Default for WdfConfig {
    fn default() -> Self {
        Self {
            levels: 3,
            rescale: Rescale::PerImageMinMax,
        }
    }
}

/// The low-pass reconstruction before rescaling.
pub fn wdf_unscaled(img: &ImageTensor, levels: usize) -> Result<Plane> {
    let mut pyr = dwt2(img, levels)?;
    pyr.zero_details();
    idwt2_plane(&pyr)
}

/// Min-max rescale to `[-1, 1]`. Spreads below `1e-12` relative to the
/// magnitude count as constant and map to zero.
pub fn rescale_symmetric(values: &[f64]) -> Vec<f64> {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let span = hi - lo;
    if !(span > 1e-12 * hi.abs().max(lo.abs()).max(1.0)) {
        return vec![0.0; values.len()];
    }
    values
        .iter()
        .map(|&v| (2.0 * (v - lo) / span - 1.0).clamp(-1.0, 1.0))
        .collect()
}

pub fn wdf_with(img: &ImageTensor, cfg: WdfConfig) -> Result<CueChannel> {
    let low = wdf_unscaled(img, cfg.levels)?;
    let scaled = match cfg.rescale {
        Rescale::PerImageMinMax => rescale_symmetric(&low.data),
        Rescale::FixedUnit => low.data.iter().map(|v| (2.0 * v - 1.0).clamp(-1.0, 1.0)).collect(),
    };
    CueChannel::new(
        CueKind::Wdf,
        ImageTensor::from_f64(1, low.rows, low.cols, &scaled)?,
    )
}

/// WDF with the default three levels and per-image min-max rescaling.
pub fn wdf(img: &ImageTensor) -> Result<CueChannel> {
    wdf_with(img, WdfConfig::default())
}
