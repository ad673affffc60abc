use alloc::vec::Vec;

use super::stft::{stft, ComplexGrid, WindowFn};
use super::AudioClip;
use crate::error::{bail, Result};
use crate::tensor::Tensor;

/// Magnitude grid with frequency bins as rows and time frames as columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub values: Tensor,
    pub window_length: usize,
    pub hop_length: usize,
    pub sample_rate_hz: u32,
}

impl Spectrogram {
    pub fn bins(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn frames(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn at(&self, bin: usize, frame: usize) -> f64 {
        self.values.data()[bin * self.frames() + frame]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Compression {
    /// `log(1 + |z|)`
    #[default]
    Log1p,
    /// `|z|`
    Linear,
}

impl Compression {
    pub fn name(self) -> &'static str {
        match self {
            Compression::Log1p => "log1p",
            Compression::Linear => "linear",
        }
    }

    pub fn parse(s: &str) -> Option<Compression> {
        match s {
            "log1p" | "log" => Some(Compression::Log1p),
            "linear" | "raw" => Some(Compression::Linear),
            _ => None,
        }
    }
}

fn from_grid(grid: &ComplexGrid, f: impl Fn(f64) -> f64) -> Spectrogram {
    let values = grid.data.iter().map(|z| f(z.norm())).collect();
    Spectrogram {
        values: Tensor::new(&[grid.bins, grid.frames], values).expect("grid extents are positive"),
        window_length: grid.window_length,
        hop_length: grid.hop_length,
        sample_rate_hz: grid.sample_rate_hz,
    }
}

/// `log(1 + |z|)` elementwise.
pub fn to_log_magnitude(grid: &ComplexGrid) -> Spectrogram {
    from_grid(grid, libm::log1p)
}

pub fn to_magnitude(grid: &ComplexGrid) -> Spectrogram {
    from_grid(grid, |m| m)
}

/// Linear interpolation of every row onto `target_frames` evenly spaced
/// points spanning the original time axis. The frequency axis is untouched.
pub fn resize_width(spec: &Spectrogram, target_frames: usize) -> Result<Spectrogram> {
    if target_frames < 1 {
        bail!(Config, "target frame count must be at least 1");
    }
    let (bins, frames) = (spec.bins(), spec.frames());
    if frames == target_frames {
        return Ok(spec.clone());
    }
    let src = spec.values.data();
    let mut out = Vec::with_capacity(bins * target_frames);
    for row in src.chunks_exact(frames) {
        for j in 0..target_frames {
            let pos = if target_frames == 1 {
                0.0
            } else {
                j as f64 * (frames - 1) as f64 / (target_frames - 1) as f64
            };
            let lo = (libm::floor(pos) as usize).min(frames - 1);
            let hi = (lo + 1).min(frames - 1);
            let a = row[lo];
            out.push(a + (row[hi] - a) * (pos - lo as f64));
        }
    }
    Ok(Spectrogram {
        values: Tensor::new(&[bins, target_frames], out)?,
        ..spec.clone()
    })
}

/// Rescales to `[0, 1]`; a constant input becomes all zeros.
pub fn min_max_normalize(values: &mut [f64]) {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if !(hi > lo) {
        values.fill(0.0);
        return;
    }
    let span = hi - lo;
    for v in values {
        *v = (*v - lo) / span;
    }
}

/// Settings of the audio front end.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectrogramConfig {
    pub sample_rate_hz: u32,
    pub window_length: usize,
    pub hop_length: usize,
    pub window_fn: WindowFn,
    pub compression: Compression,
    /// Frequency rows kept, starting at DC.
    pub bins: usize,
    /// Time columns after width resizing.
    pub frames: usize,
    pub normalize: bool,
}

impl Default for SpectrogramConfig {
    fn default() -> Self {
        // 384-sample Hann windows give 193 one-sided bins; dropping Nyquist
        // leaves exactly 192 rows.
        SpectrogramConfig {
            sample_rate_hz: 16_000,
            window_length: 384,
            hop_length: 256,
            window_fn: WindowFn::Hann,
            compression: Compression::Log1p,
            bins: 192,
            frames: 120,
            normalize: true,
        }
    }
}

impl SpectrogramConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_length == 0 || self.hop_length == 0 || self.hop_length > self.window_length {
            bail!(
                Config,
                "need 0 < hop ({}) <= window ({})",
                self.hop_length,
                self.window_length
            );
        }
        let available = self.window_length / 2 + 1;
        if self.bins == 0 || self.bins > available {
            bail!(
                Config,
                "{} frequency rows requested but a {}-sample window yields {available}",
                self.bins,
                self.window_length
            );
        }
        if self.frames == 0 || self.sample_rate_hz == 0 {
            bail!(Config, "frame count and sample rate must be positive");
        }
        Ok(())
    }
}

/// Clip to a `1 × bins × frames` tensor: resample, STFT, compress, keep the
/// lowest `bins` rows, resize the time axis and normalize to `[0, 1]`.
pub fn spectrogram_pipeline(clip: &AudioClip, config: &SpectrogramConfig) -> Result<Tensor> {
    config.validate()?;
    let clip = if clip.sample_rate_hz == config.sample_rate_hz {
        clip.clone()
    } else {
        clip.resample(config.sample_rate_hz)?
    };
    let grid = stft(&clip, config.window_length, config.hop_length, config.window_fn)?;
    let spec = match config.compression {
        Compression::Log1p => to_log_magnitude(&grid),
        Compression::Linear => to_magnitude(&grid),
    };
    let frames = spec.frames();
    let kept = spec.values.data()[..config.bins * frames].to_vec();
    let spec = Spectrogram {
        values: Tensor::new(&[config.bins, frames], kept)?,
        ..spec
    };
    let resized = resize_width(&spec, config.frames)?;
    let mut data = resized.values.into_data();
    if config.normalize {
        min_max_normalize(&mut data);
    }
    Tensor::new(&[1, config.bins, config.frames], data)
}

/// 8-bit grey levels `round(255·(v−min)/(max−min))` in image order, i.e.
/// with frequency row 0 on the bottom line.
pub fn pgm_pixels(values: &Tensor) -> Result<Vec<u8>> {
    let (rows, cols) = match values.shape() {
        [r, c] => (*r, *c),
        [1, r, c] => (*r, *c),
        other => bail!(Shape, "expected a rank-2 spectrogram, got {:?}", other),
    };
    let mut scaled = values.data().to_vec();
    min_max_normalize(&mut scaled);
    let mut pixels = Vec::with_capacity(rows * cols);
    for r in (0..rows).rev() {
        for v in &scaled[r * cols..(r + 1) * cols] {
            pixels.push(libm::round(255.0 * v) as u8);
        }
    }
    Ok(pixels)
}
