//! The image tensor shared by every stage of the pipeline, plus grayscale
//! conversion, range normalization and the on-disk formats (FCT1 tensors,
//! binary PGM/PPM images).
//!
//! Data is `f32`, channel-planar and row-major: element `(c, y, x)` lives at
//! `c * H * W + y * W + x`. Transforms upstream compute in `f64` and cast
//! on the way out.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// BT.601 luma weights.
pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

const FCT1_MAGIC: &[u8; 4] = b"FCT1";

#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl ImageTensor {
    /// Builds a tensor, checking the length and that every value is finite.
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        let expected = channels
            .checked_mul(height)
            .and_then(|v| v.checked_mul(width))
            .ok_or_else(|| Error::InvalidShape("dimension overflow".into()))?;
        if data.len() != expected {
            return Err(Error::InvalidShape(format!(
                "data length {} != {channels}x{height}x{width}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidShape(format!("non-finite value at index {i}")));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f32) -> Self {
        assert!(value.is_finite());
        Self {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }

    /// Builds a tensor from an `f64` buffer, casting to `f32`.
    pub fn from_f64(channels: usize, height: usize, width: usize, data: &[f64]) -> Result<Self> {
        Self::new(
            channels,
            height,
            width,
            data.iter().map(|&v| v as f32).collect(),
        )
    }

    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self::new(channels, height, width, data)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    /// Plane `c` widened to `f64`.
    pub fn plane_f64(&self, c: usize) -> Vec<f64> {
        self.plane(c).iter().map(|&v| v as f64).collect()
    }

    /// Extracts channel `c` as a single-channel tensor.
    pub fn channel(&self, c: usize) -> Result<ImageTensor> {
        if c >= self.channels {
            return Err(Error::InvalidShape(format!(
                "channel {c} out of range for {} channels",
                self.channels
            )));
        }
        Ok(Self {
            channels: 1,
            height: self.height,
            width: self.width,
            data: self.plane(c).to_vec(),
        })
    }

    /// Stacks tensors of identical spatial size along the channel axis.
    pub fn concat(parts: &[&ImageTensor]) -> Result<ImageTensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidShape("nothing to concatenate".into()))?;
        let (h, w) = (first.height, first.width);
        let mut data = Vec::new();
        let mut channels = 0;
        for p in parts {
            if p.height != h || p.width != w {
                return Err(Error::InvalidShape(format!(
                    "cannot concatenate {}x{} with {}x{}",
                    h, w, p.height, p.width
                )));
            }
            channels += p.channels;
            data.extend_from_slice(&p.data);
        }
        Ok(Self {
            channels,
            height: h,
            width: w,
            data,
        })
    }

    /// Applies `f` to every element. Panics if `f` yields a non-finite value.
    pub fn map(&self, f: impl Fn(f32) -> f32) -> ImageTensor {
        let data: Vec<f32> = self.data.iter().map(|&v| f(v)).collect();
        assert!(data.iter().all(|v| v.is_finite()), "map produced non-finite values");
        Self {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data,
        }
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }
}

/// Per-channel affine normalization `y = (x - mu) / sigma`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Standardization {
    pub mu: f64,
    pub sigma: f64,
}

impl Standardization {
    /// Maps `[0, 1]` onto `[-1, 1]`.
    pub const UNIT_TO_SYMMETRIC: Standardization = Standardization {
        mu: 0.5,
        sigma: 0.5,
    };

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) || !self.sigma.is_finite() || !self.mu.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "normalization needs finite mu and sigma > 0, got mu={} sigma={}",
                self.mu, self.sigma
            )));
        }
        Ok(())
    }
}

impl Default for Standardization {
    fn default() -> Self {
        Self::UNIT_TO_SYMMETRIC
    }
}

pub fn normalize(img: &ImageTensor, norm: Standardization) -> Result<ImageTensor> {
    norm.validate()?;
    let data = img
        .data
        .iter()
        .map(|&v| ((v as f64 - norm.mu) / norm.sigma) as f32)
        .collect();
    ImageTensor::new(img.channels, img.height, img.width, data)
}

/// Inverse of [`normalize`].
pub fn denormalize(img: &ImageTensor, norm: Standardization) -> Result<ImageTensor> {
    norm.validate()?;
    let data = img
        .data
        .iter()
        .map(|&v| (v as f64 * norm.sigma + norm.mu) as f32)
        .collect();
    ImageTensor::new(img.channels, img.height, img.width, data)
}

/// BT.601 luma of a 3-channel image.
pub fn to_grayscale(img: &ImageTensor) -> Result<ImageTensor> {
    if img.channels != 3 {
        return Err(Error::InvalidShape(format!(
            "grayscale conversion needs 3 channels, got {}",
            img.channels
        )));
    }
    let n = img.plane_len();
    let (r, g, b) = (img.plane(0), img.plane(1), img.plane(2));
    let data = (0..n)
        .map(|i| {
            let v = LUMA_WEIGHTS[0] * r[i] as f64
                + LUMA_WEIGHTS[1] * g[i] as f64
                + LUMA_WEIGHTS[2] * b[i] as f64;
            v as f32
        })
        .collect();
    ImageTensor::new(1, img.height, img.width, data)
}

/// Grayscale of a 1- or 3-channel image; single-channel input passes through.
pub fn luminance(img: &ImageTensor) -> Result<ImageTensor> {
    match img.channels {
        1 => Ok(img.clone()),
        3 => to_grayscale(img),
        c => Err(Error::InvalidShape(format!(
            "expected 1 or 3 channels, got {c}"
        ))),
    }
}

/// Encodes a tensor in the FCT1 layout.
pub fn encode_tensor(t: &ImageTensor) -> Result<Vec<u8>> {
    if t.data.is_empty() {
        return Err(Error::Format("empty tensors cannot be written".into()));
    }
    let mut out = Vec::with_capacity(20 + 4 * t.data.len());
    out.extend_from_slice(FCT1_MAGIC);
    out.extend_from_slice(&3u32.to_le_bytes());
    for d in [t.channels, t.height, t.width] {
        let d = u32::try_from(d).map_err(|_| Error::Format("dimension exceeds u32".into()))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for v in &t.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_tensor(bytes: &[u8]) -> Result<ImageTensor> {
    if bytes.len() < 20 {
        return Err(Error::Format(format!("header truncated ({} bytes)", bytes.len())));
    }
    if &bytes[0..4] != FCT1_MAGIC {
        return Err(Error::Format(format!("bad magic {:?}", &bytes[0..4])));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
    let rank = word(4);
    if rank != 3 {
        return Err(Error::Format(format!("unsupported rank {rank}")));
    }
    let (c, h, w) = (word(8), word(12), word(16));
    let count = c
        .checked_mul(h)
        .and_then(|v| v.checked_mul(w))
        .ok_or_else(|| Error::Format("dimension overflow".into()))?;
    if count == 0 {
        return Err(Error::Format("empty tensor".into()));
    }
    let payload = &bytes[20..];
    if payload.len() != count * 4 {
        return Err(Error::Format(format!(
            "payload has {} bytes, expected {}",
            payload.len(),
            count * 4
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    ImageTensor::new(c, h, w, data).map_err(|e| Error::Format(e.to_string()))
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<ImageTensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_tensor(&bytes)
}

pub fn write_tensor(path: impl AsRef<Path>, t: &ImageTensor) -> Result<()> {
    write_atomic(path.as_ref(), &encode_tensor(t)?)
}

/// Writes via a sibling temp file and a rename so readers never see a
/// partial artifact.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::io(path, std::io::ErrorKind::InvalidInput.into()))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(file_name);
    tmp_name.push(".tmp");
    let tmp = match dir {
        Some(d) => d.join(&tmp_name),
        None => tmp_name.into(),
    };
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Parses binary PGM (P5) or PPM (P6) with maxval 255, scaling to `[0, 1]`.
pub fn decode_image(bytes: &[u8]) -> Result<ImageTensor> {
    let mut pos = 0;
    let mut token = || -> Result<String> {
        // whitespace and '#' comments may separate header fields
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format("truncated image header".into()));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let magic = token()?;
    let channels = match magic.as_str() {
        "P5" => 1,
        "P6" => 3,
        m => return Err(Error::Format(format!("unsupported image magic '{m}'"))),
    };
    let mut num = |what: &str| -> Result<usize> {
        token()?
            .parse::<usize>()
            .map_err(|_| Error::Format(format!("bad {what} in image header")))
    };
    let width = num("width")?;
    let height = num("height")?;
    let maxval = num("maxval")?;
    if maxval != 255 {
        return Err(Error::Format(format!("unsupported maxval {maxval}")));
    }
    if width == 0 || height == 0 {
        return Err(Error::Format("empty image".into()));
    }
    // exactly one whitespace byte follows maxval
    pos += 1;
    let n = width * height * channels;
    let raster = bytes
        .get(pos..pos + n)
        .ok_or_else(|| Error::Format("image raster truncated".into()))?;
    let mut data = vec![0f32; n];
    let plane = width * height;
    for (i, &b) in raster.iter().enumerate() {
        let (pix, c) = (i / channels, i % channels);
        data[c * plane + pix] = (b as f64 / 255.0) as f32;
    }
    ImageTensor::new(channels, height, width, data)
}

pub fn read_image(path: impl AsRef<Path>) -> Result<ImageTensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_image(&bytes)
}

/// Encodes a 1- or 3-channel `[0, 1]` tensor as PGM/PPM, clamping and
/// rounding to 8 bits.
pub fn encode_image(img: &ImageTensor) -> Result<Vec<u8>> {
    let magic = match img.channels {
        1 => "P5",
        3 => "P6",
        c => {
            return Err(Error::InvalidShape(format!(
                "PGM/PPM needs 1 or 3 channels, got {c}"
            )))
        }
    };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width, img.height).into_bytes();
    let plane = img.plane_len();
    for pix in 0..plane {
        for c in 0..img.channels {
            let v = img.data[c * plane + pix] as f64;
            out.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    Ok(out)
}

pub fn write_image(path: impl AsRef<Path>, img: &ImageTensor) -> Result<()> {
    write_atomic(path.as_ref(), &encode_image(img)?)
}
