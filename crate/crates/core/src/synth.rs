//! Synthetic audio-visual corpus with a known cross-modal structure.
//!
//! Each class is rendered as an oriented bar in the frames and a sine tone
//! in the audio. Classes that share a bar angle can only be told apart by
//! ear, classes that share a frequency only by eye. Actors differ in bar
//! thickness, brightness, position, loudness and pitch.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dsp::AudioClip;
use crate::error::{bail, Result};
use crate::vision::{FrameSequence, Image};
use crate::Emotion;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub n_actors: usize,
    pub clips_per_actor_per_class: usize,
    pub seed: u64,
    pub n_frames: usize,
    pub frame_height: usize,
    pub frame_width: usize,
    pub fps: f64,
    pub sample_rate_hz: u32,
    pub duration_seconds: f64,
    /// Bar angle per class, degrees from horizontal.
    pub angles_deg: [f64; 6],
    /// Tone frequency per class.
    pub frequencies_hz: [f64; 6],
    /// Standard deviation of additive Gaussian noise, relative to signal.
    pub noise_level: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_actors: 6,
            clips_per_actor_per_class: 10,
            seed: 0,
            n_frames: 24,
            frame_height: 72,
            frame_width: 60,
            fps: 24.0,
            sample_rate_hz: 16_000,
            duration_seconds: 1.0,
            angles_deg: [0.0, 0.0, 60.0, 60.0, 120.0, 150.0],
            frequencies_hz: [300.0, 600.0, 900.0, 1200.0, 1500.0, 1500.0],
            noise_level: 0.05,
        }
    }
}

/// Which modality tells two classes apart.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Separability {
    Visual,
    Aural,
    Both,
    Neither,
}

/// One generated clip.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticClip {
    pub clip_id: String,
    pub actor_id: String,
    pub label: Emotion,
    pub frames: FrameSequence,
    pub audio: AudioClip,
}

struct ActorStyle {
    thickness: f64,
    bar: f64,
    background: f64,
    offset_y: f64,
    offset_x: f64,
    amplitude: f64,
    pitch: f64,
}

const ANGLE_JITTER_DEG: f64 = 4.0;

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_actors < 1 || self.clips_per_actor_per_class < 1 {
            bail!(Config, "need at least one actor and one clip per class");
        }
        if self.n_frames < 1 || self.frame_height < 8 || self.frame_width < 8 {
            bail!(Config, "frames must be at least 8×8 and there must be at least one");
        }
        if !(self.fps > 0.0) || !(self.duration_seconds > 0.0) || self.sample_rate_hz == 0 {
            bail!(Config, "fps, duration and sample rate must be positive");
        }
        let nyquist = self.sample_rate_hz as f64 / 2.0;
        if self.frequencies_hz.iter().any(|&f| !(f > 0.0 && f * 1.02 < nyquist)) {
            bail!(Config, "tone frequencies must lie in (0, {nyquist}) Hz with pitch headroom");
        }
        if !(self.noise_level >= 0.0) {
            bail!(Config, "noise level must be non-negative");
        }
        for a in 0..6 {
            for b in a + 1..6 {
                if self.separability(a, b) == Separability::Neither {
                    bail!(Config, "classes {a} and {b} share both angle and frequency");
                }
            }
        }
        Ok(())
    }

    pub fn separability(&self, a: usize, b: usize) -> Separability {
        let visual = libm::fmod(self.angles_deg[a] - self.angles_deg[b], 180.0) != 0.0;
        let aural = self.frequencies_hz[a] != self.frequencies_hz[b];
        match (visual, aural) {
            (true, true) => Separability::Both,
            (true, false) => Separability::Visual,
            (false, true) => Separability::Aural,
            (false, false) => Separability::Neither,
        }
    }

    /// Best accuracy reachable from the frames alone on a class-balanced
    /// set: one class per group of equal angles can be right.
    pub fn video_ceiling(&self) -> f64 {
        let mut groups = 0;
        for c in 0..6 {
            if (0..c).all(|p| self.separability(p, c) != Separability::Aural) {
                groups += 1;
            }
        }
        groups as f64 / 6.0
    }

    pub fn clip_count(&self) -> usize {
        self.n_actors * 6 * self.clips_per_actor_per_class
    }

    pub fn actor_id(actor: usize) -> String {
        format!("actor{:02}", actor + 1)
    }

    /// `(actor, class, index)` for every clip, actor-major.
    pub fn keys(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        let per = self.clips_per_actor_per_class;
        (0..self.n_actors).flat_map(move |a| (0..6).flat_map(move |c| (0..per).map(move |i| (a, c, i))))
    }

    fn style(&self, actor: usize) -> ActorStyle {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(1 << 40 | actor as u64);
        let short = self.frame_height.min(self.frame_width) as f64;
        ActorStyle {
            thickness: short * rng.gen_range(0.07..0.12),
            bar: rng.gen_range(0.65..0.95),
            background: rng.gen_range(0.05..0.25),
            offset_y: short * rng.gen_range(-0.08..0.08),
            offset_x: short * rng.gen_range(-0.08..0.08),
            amplitude: rng.gen_range(0.3..0.6),
            pitch: rng.gen_range(0.98..1.02),
        }
    }

    /// Generates clip `index` of `class` for `actor`. Deterministic in the
    /// spec and the key.
    pub fn clip(&self, actor: usize, class: usize, index: usize) -> Result<SyntheticClip> {
        self.validate()?;
        if actor >= self.n_actors || class >= 6 || index >= self.clips_per_actor_per_class {
            bail!(Config, "clip key ({actor}, {class}, {index}) outside the spec");
        }
        let style = self.style(actor);
        let ordinal = (actor * 6 + class) * self.clips_per_actor_per_class + index;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(ordinal as u64);
        let noise = Normal::new(0.0, self.noise_level.max(f64::MIN_POSITIVE)).expect("valid normal");

        let angle = (self.angles_deg[class] + rng.gen_range(-ANGLE_JITTER_DEG..ANGLE_JITTER_DEG)) * PI / 180.0;
        let (sin, cos) = (libm::sin(angle), libm::cos(angle));
        let sway = rng.gen_range(0.0..2.0 * PI);
        let (h, w) = (self.frame_height, self.frame_width);
        let mut frames = Vec::with_capacity(self.n_frames);
        for t in 0..self.n_frames {
            let drift = 0.04 * h.min(w) as f64 * libm::sin(sway + t as f64 * 0.3);
            let cy = (h as f64 - 1.0) / 2.0 + style.offset_y - drift * cos;
            let cx = (w as f64 - 1.0) / 2.0 + style.offset_x + drift * sin;
            let mut data = Vec::with_capacity(h * w);
            for y in 0..h {
                for x in 0..w {
                    // y grows downwards, so the bar direction is (cos, -sin)
                    let d = libm::fabs((x as f64 - cx) * sin + (y as f64 - cy) * cos);
                    let cover = (style.thickness / 2.0 - d + 0.5).clamp(0.0, 1.0);
                    let v = style.background + (style.bar - style.background) * cover;
                    data.push((v + noise.sample(&mut rng)).clamp(0.0, 1.0));
                }
            }
            frames.push(Image::new(h, w, data)?);
        }

        let n = libm::round(self.duration_seconds * self.sample_rate_hz as f64) as usize;
        let freq = self.frequencies_hz[class] * style.pitch;
        let phase = rng.gen_range(0.0..2.0 * PI);
        let rate = self.sample_rate_hz as f64;
        let samples = (0..n)
            .map(|i| {
                let s = style.amplitude * libm::sin(2.0 * PI * freq * i as f64 / rate + phase);
                (s + style.amplitude * noise.sample(&mut rng)).clamp(-1.0, 1.0)
            })
            .collect();

        let label = Emotion::from_index(class).expect("class < 6");
        Ok(SyntheticClip {
            clip_id: format!("{}_{}_{:02}", Self::actor_id(actor), label.name(), index),
            actor_id: Self::actor_id(actor),
            label,
            frames: FrameSequence::new(frames, Some(self.fps))?,
            audio: AudioClip::new(samples, self.sample_rate_hz)?,
        })
    }
}
