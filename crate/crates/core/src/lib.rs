//! Numerical core of `emofuse`, a dual-branch convolutional emotion
//! classifier that fuses a stack of face frames with a log-magnitude
//! spectrogram of the accompanying speech.
//!
//! The crate is `no_std` with `alloc` and does no IO. Files, the command
//! line and the on-disk fold runner live in the `emofuse` crate.
//!
//! Layout:
//!
//! - [`tensor`], [`autodiff`], [`ops`], [`optim`]: dense f64 tensors, a
//!   per-sample reverse-mode tape and Adam.
//! - [`dsp`]: FFT, STFT and the fixed-size spectrogram pipeline.
//! - [`vision`]: frame sampling, face crops and seeded augmentation.
//! - [`model`]: the visual branch, the audio branch and the two-layer classifier.
//! - [`train`]: mini-batch training with early stopping, and evaluation.
//! - [`loo`]: leave-one-actor-out splits and fold summaries.
//! - [`synth`]: the synthetic audio-visual corpus used for verification.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod autodiff;
pub mod dsp;
mod error;
mod gemm;
pub mod loo;
pub mod model;
pub mod ops;
pub mod optim;
pub mod synth;
pub mod tensor;
pub mod train;
pub mod vision;

pub use error::{Error, Result};
pub use tensor::Tensor;

/// The six emotion categories, in class-index order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Emotion {
    Neutral,
    Happy,
    Anger,
    Disgust,
    Fear,
    Sad,
}

impl Emotion {
    pub const ALL: [Emotion; 6] = [
        Emotion::Neutral,
        Emotion::Happy,
        Emotion::Anger,
        Emotion::Disgust,
        Emotion::Fear,
        Emotion::Sad,
    ];

    pub const COUNT: usize = 6;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Emotion> {
        Self::ALL.get(index).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Emotion::Neutral => "neutral",
            Emotion::Happy => "happy",
            Emotion::Anger => "anger",
            Emotion::Disgust => "disgust",
            Emotion::Fear => "fear",
            Emotion::Sad => "sad",
        }
    }

    /// Accepts the lowercase names and the three-letter CREMA-D codes.
    pub fn parse(s: &str) -> Option<Emotion> {
        let lower = s.trim().to_ascii_lowercase();
        let e = match lower.as_str() {
            "neutral" | "neu" => Emotion::Neutral,
            "happy" | "hap" => Emotion::Happy,
            "anger" | "angry" | "ang" => Emotion::Anger,
            "disgust" | "dis" => Emotion::Disgust,
            "fear" | "fea" => Emotion::Fear,
            "sad" => Emotion::Sad,
            _ => return None,
        };
        Some(e)
    }
}

impl core::fmt::Display for Emotion {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.name())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn emotion_round_trips_through_index_and_name() {
        for (i, e) in Emotion::ALL.iter().enumerate() {
            assert_eq!(e.index(), i);
            assert_eq!(Emotion::from_index(i), Some(*e));
            assert_eq!(Emotion::parse(e.name()), Some(*e));
        }
        assert_eq!(Emotion::parse("ANG"), Some(Emotion::Anger));
        assert_eq!(Emotion::parse("bored"), None);
        assert_eq!(Emotion::from_index(6), None);
    }
}
