//! Phase-only reconstruction.
//!
//! The grayscale frame is transformed with a 2-D FFT, every bin is replaced
//! by the unit phasor with the same angle, and the real part of the inverse
//! transform is kept. Bins with zero magnitude get angle `atan2(0, 0) = 0`,
//! i.e. the phasor `1`. No frequency shift is applied; shifting would only
//! translate the reconstruction spatially.
//!
//! The forward transform is unnormalized and the inverse carries the full
//! `1 / (H * W)`, so the output is bounded by 1 in absolute value.

use rustfft::num_complex::Complex64;
use rustfft::{FftDirection, FftPlanner};

use crate::cue::{CueChannel, CueKind};
use crate::error::{Error, Result};
use crate::tensor::ImageTensor;

/// A complex `rows x cols` plane, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<Complex64>,
}

impl Spectrum {
    pub fn at(&self, r: usize, c: usize) -> Complex64 {
        self.data[r * self.cols + c]
    }
}

fn transform_2d(rows: usize, cols: usize, buf: &mut [Complex64], direction: FftDirection) {
    let mut planner = FftPlanner::<f64>::new();
    let row_fft = planner.plan_fft(cols, direction);
    for row in buf.chunks_exact_mut(cols) {
        row_fft.process(row);
    }
    let col_fft = planner.plan_fft(rows, direction);
    let mut column = vec![Complex64::new(0.0, 0.0); rows];
    for c in 0..cols {
        for r in 0..rows {
            column[r] = buf[r * cols + c];
        }
        col_fft.process(&mut column);
        for r in 0..rows {
            buf[r * cols + c] = column[r];
        }
    }
}

fn check_dims(rows: usize, cols: usize, len: usize) -> Result<()> {
    if rows == 0 || cols == 0 || rows * cols != len {
        return Err(Error::InvalidShape(format!(
            "plane of {len} values does not match {rows}x{cols}"
        )));
    }
    Ok(())
}

/// Unnormalized forward transform of a real plane.
pub fn fft2(rows: usize, cols: usize, plane: &[f64]) -> Result<Spectrum> {
    check_dims(rows, cols, plane.len())?;
    let mut data: Vec<Complex64> = plane.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    transform_2d(rows, cols, &mut data, FftDirection::Forward);
    Ok(Spectrum { rows, cols, data })
}

/// Inverse transform scaled by `1 / (rows * cols)`.
pub fn ifft2(spectrum: &Spectrum) -> Result<Vec<Complex64>> {
    check_dims(spectrum.rows, spectrum.cols, spectrum.data.len())?;
    let mut data = spectrum.data.clone();
    transform_2d(spectrum.rows, spectrum.cols, &mut data, FftDirection::Inverse);
    let scale = 1.0 / (spectrum.rows * spectrum.cols) as f64;
    data.iter_mut().for_each(|v| *v *= scale);
    Ok(data)
}

/// Replaces every bin by `exp(i * angle)`.
pub fn unit_phasors(spectrum: &Spectrum) -> Spectrum {
    let data = spectrum
        .data
        .iter()
        .map(|z| Complex64::from_polar(1.0, z.im.atan2(z.re)))
        .collect();
    Spectrum {
        rows: spectrum.rows,
        cols: spectrum.cols,
        data,
    }
}

/// Phase-only reconstruction in `f64`, before the cast to the output tensor.
pub fn phase_only(rows: usize, cols: usize, plane: &[f64]) -> Result<Vec<f64>> {
    let spectrum = unit_phasors(&fft2(rows, cols, plane)?);
    Ok(ifft2(&spectrum)?.into_iter().map(|z| z.re).collect())
}

pub fn phase_channel(img: &ImageTensor) -> Result<CueChannel> {
    if img.channels() != 1 {
        return Err(Error::InvalidShape(format!(
            "phase channel needs a single-channel image, got {} channels",
            img.channels()
        )));
    }
    let (rows, cols) = (img.height(), img.width());
    let values = phase_only(rows, cols, &img.plane_f64(0))?;
    // |y| <= 1 up to rounding of the transforms
    let clamped: Vec<f64> = values.iter().map(|v| v.clamp(-1.0, 1.0)).collect();
    CueChannel::new(CueKind::Phase, ImageTensor::from_f64(1, rows, cols, &clamped)?)
}
