//! Audio front end: PCM samples to the fixed-size spectrogram image fed to
//! the audio branch.

pub mod fft;
mod spectrogram;
mod stft;

use alloc::vec::Vec;

pub use spectrogram::{
    min_max_normalize, pgm_pixels, resize_width, spectrogram_pipeline, to_log_magnitude,
    to_magnitude, Compression, Spectrogram, SpectrogramConfig,
};
pub use stft::{frame_count, stft, ComplexGrid, WindowFn};

use crate::error::{bail, Result};

/// Mono PCM audio with samples nominally in `[−1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate_hz: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate_hz: u32) -> Result<AudioClip> {
        if sample_rate_hz == 0 {
            bail!(Config, "sample rate must be positive");
        }
        Ok(AudioClip { samples, sample_rate_hz })
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }

    /// Linear-interpolation resampling to `target_hz`.
    pub fn resample(&self, target_hz: u32) -> Result<AudioClip> {
        if target_hz == 0 {
            bail!(Config, "target sample rate must be positive");
        }
        if target_hz == self.sample_rate_hz || self.samples.is_empty() {
            return Ok(AudioClip { samples: self.samples.clone(), sample_rate_hz: target_hz });
        }
        let ratio = self.sample_rate_hz as f64 / target_hz as f64;
        let out_len = (libm::round(self.samples.len() as f64 / ratio) as usize).max(1);
        let last = self.samples.len() - 1;
        let samples = (0..out_len)
            .map(|j| {
                let pos = j as f64 * ratio;
                let lo = (libm::floor(pos) as usize).min(last);
                let hi = (lo + 1).min(last);
                let t = pos - lo as f64;
                let a = self.samples[lo];
                a + (self.samples[hi] - a) * t
            })
            .collect();
        Ok(AudioClip { samples, sample_rate_hz: target_hz })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn resampling_keeps_duration_and_line_shape() {
        let clip = AudioClip::new((0..8000).map(|i| i as f64 / 8000.0).collect(), 8000).unwrap();
        let up = clip.resample(16000).unwrap();
        assert_eq!(up.samples.len(), 16000);
        assert_eq!(up.sample_rate_hz, 16000);
        assert!((up.samples[1] - 0.5 / 8000.0).abs() < 1e-15);
        let same = clip.resample(8000).unwrap();
        assert_eq!(same, clip);
    }

    #[test]
    fn rejects_zero_rate() {
        assert!(AudioClip::new(vec![0.0], 0).is_err());
    }
}
