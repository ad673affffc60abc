use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;

use super::fft::FftPlan;
use super::AudioClip;
use crate::error::{bail, Result};

/// Analysis window applied to each frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WindowFn {
    /// Periodic Hann, `0.5 − 0.5·cos(2πn/N)`.
    #[default]
    Hann,
    Rectangular,
}

impl WindowFn {
    pub fn coefficients(self, len: usize) -> Vec<f64> {
        match self {
            WindowFn::Rectangular => vec![1.0; len],
            WindowFn::Hann => (0..len)
                .map(|n| 0.5 - 0.5 * libm::cos(2.0 * PI * n as f64 / len as f64))
                .collect(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            WindowFn::Hann => "hann",
            WindowFn::Rectangular => "rectangular",
        }
    }

    pub fn parse(s: &str) -> Option<WindowFn> {
        match s {
            "hann" => Some(WindowFn::Hann),
            "rectangular" | "rect" => Some(WindowFn::Rectangular),
            _ => None,
        }
    }
}

/// One-sided STFT: `bins` rows (frequency) by `frames` columns (time),
/// stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexGrid {
    pub bins: usize,
    pub frames: usize,
    pub data: Vec<Complex64>,
    pub window_length: usize,
    pub hop_length: usize,
    pub sample_rate_hz: u32,
}

impl ComplexGrid {
    pub fn at(&self, bin: usize, frame: usize) -> Complex64 {
        self.data[bin * self.frames + frame]
    }
}

/// Number of frames after zero-padding the tail so the last partial frame
/// is complete.
pub fn frame_count(samples: usize, window_length: usize, hop_length: usize) -> usize {
    if samples <= window_length {
        1
    } else {
        1 + (samples - window_length).div_ceil(hop_length)
    }
}

/// Short-time Fourier transform. Column `t` holds the DFT of the windowed
/// frame starting at sample `t·hop_length`; only bins `0..=window_length/2`
/// are kept.
pub fn stft(
    clip: &AudioClip,
    window_length: usize,
    hop_length: usize,
    window_fn: WindowFn,
) -> Result<ComplexGrid> {
    if window_length == 0 {
        bail!(Config, "window length must be positive");
    }
    if hop_length == 0 || hop_length > window_length {
        bail!(
            Config,
            "hop length must lie in 1..={window_length}, got {hop_length}"
        );
    }
    if clip.samples.is_empty() {
        bail!(Config, "cannot transform an empty clip");
    }
    let frames = frame_count(clip.samples.len(), window_length, hop_length);
    let bins = window_length / 2 + 1;
    let window = window_fn.coefficients(window_length);
    let plan = FftPlan::new(window_length);
    let mut data = vec![Complex64::new(0.0, 0.0); bins * frames];
    let mut frame = vec![Complex64::new(0.0, 0.0); window_length];
    for t in 0..frames {
        let start = t * hop_length;
        for (n, slot) in frame.iter_mut().enumerate() {
            let x = clip.samples.get(start + n).copied().unwrap_or(0.0);
            *slot = Complex64::new(x * window[n], 0.0);
        }
        let spectrum = plan.forward(&frame);
        for (k, z) in spectrum.iter().take(bins).enumerate() {
            data[k * frames + t] = *z;
        }
    }
    Ok(ComplexGrid {
        bins,
        frames,
        data,
        window_length,
        hop_length,
        sample_rate_hz: clip.sample_rate_hz,
    })
}
