//! Run configuration as `key=value` lines. Values are resolved in the order
//! defaults, config file, command-line flags; the resolved configuration is
//! written next to every output and into checkpoints.

use std::fmt::Write as _;
use std::path::Path;

use emofuse_core::dsp::{Compression, SpectrogramConfig, WindowFn};
use emofuse_core::loo::{LooConfig, Mode};
use emofuse_core::model::{ConvLayer, ModelConfig};
use emofuse_core::optim::WeightDecay;
use emofuse_core::synth::SyntheticSpec;
use emofuse_core::train::TrainConfig;
use emofuse_core::{Emotion, Error, Result};

use crate::io_error;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Seeds initialization, shuffling, augmentation, validation-actor
    /// choice and synthetic data.
    pub seed: u64,
    pub mode: Mode,
    pub spectrogram: SpectrogramConfig,
    /// Visual/audio extents are taken from the stack and spectrogram
    /// settings; `use_audio` from `mode` and `init_seed` from `seed`.
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Validation actor for single-split training; `None` picks one.
    pub validation_actor: Option<String>,
    /// Carve a validation actor out of each leave-one-out training side.
    pub loo_validation: bool,
    pub synth: SyntheticSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            mode: Mode::AudioVideo,
            spectrogram: SpectrogramConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            validation_actor: None,
            loo_validation: true,
            synth: SyntheticSpec::default(),
        }
    }
}

fn format_convs(convs: &[ConvLayer]) -> String {
    convs
        .iter()
        .map(|c| {
            let pool = if c.pool { "+pool" } else { "" };
            format!("{}k{}s{}p{}{pool}", c.out_channels, c.kernel, c.stride, c.padding)
        })
        .collect::<Vec<_>>()
        .join(",")
}

/// Inverse of `format_convs`, e.g. `32k5s1p2+pool,64k3s1p1`.
fn parse_convs(s: &str) -> Option<Vec<ConvLayer>> {
    s.split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| {
            let t = t.trim();
            let (body, pool) = match t.strip_suffix("+pool") {
                Some(b) => (b, true),
                None => (t, false),
            };
            let (out, rest) = body.split_once('k')?;
            let (kernel, rest) = rest.split_once('s')?;
            let (stride, padding) = rest.split_once('p')?;
            Some(ConvLayer {
                out_channels: out.parse().ok()?,
                kernel: kernel.parse().ok()?,
                stride: stride.parse().ok()?,
                padding: padding.parse().ok()?,
                pool,
            })
        })
        .collect()
}

fn list<const N: usize>(v: &[f64; N]) -> String {
    v.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
}

fn parse_list<const N: usize>(s: &str) -> Option<[f64; N]> {
    let v: Vec<f64> = s.split(',').map(|t| t.trim().parse().ok()).collect::<Option<_>>()?;
    v.try_into().ok()
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn flag(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got {value:?}"))),
    }
}

impl RunConfig {
    /// Every key with its current value, in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let s = &self.spectrogram;
        let m = &self.model;
        let t = &self.train;
        let a = &t.augment;
        let y = &self.synth;
        vec![
            ("seed", self.seed.to_string()),
            ("mode", self.mode.name().into()),
            ("sample_rate_hz", s.sample_rate_hz.to_string()),
            ("window_length", s.window_length.to_string()),
            ("hop_length", s.hop_length.to_string()),
            ("window_fn", s.window_fn.name().into()),
            ("compression", s.compression.name().into()),
            ("spec_bins", s.bins.to_string()),
            ("spec_frames", s.frames.to_string()),
            ("normalize", s.normalize.to_string()),
            ("n_frames", m.n_frames.to_string()),
            ("frame_height", m.visual_height.to_string()),
            ("frame_width", m.visual_width.to_string()),
            ("visual_convs", format_convs(&m.visual.convs)),
            ("visual_features", m.visual.feature_len.to_string()),
            ("audio_convs", format_convs(&m.audio.convs)),
            ("audio_features", m.audio.feature_len.to_string()),
            ("hidden_len", m.hidden_len.to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("learning_rate", t.adam.learning_rate.to_string()),
            ("weight_decay", t.adam.weight_decay.to_string()),
            (
                "decay_mode",
                match t.adam.decay_mode {
                    WeightDecay::L2 => "l2",
                    WeightDecay::Decoupled => "decoupled",
                }
                .into(),
            ),
            ("beta1", t.adam.beta1.to_string()),
            ("beta2", t.adam.beta2.to_string()),
            ("epsilon", t.adam.epsilon.to_string()),
            ("max_epochs", t.max_epochs.to_string()),
            ("patience", t.patience.to_string()),
            ("augment_copies", a.copies.to_string()),
            ("max_rotation_deg", a.max_rotation_deg.to_string()),
            ("crop_area", a.crop_area.to_string()),
            ("brightness_min", a.brightness_min.to_string()),
            ("brightness_max", a.brightness_max.to_string()),
            ("flip_probability", a.flip_probability.to_string()),
            ("validation_actor", self.validation_actor.clone().unwrap_or_else(|| "auto".into())),
            ("loo_validation", self.loo_validation.to_string()),
            ("synth_actors", y.n_actors.to_string()),
            ("synth_clips_per_class", y.clips_per_actor_per_class.to_string()),
            ("synth_frames", y.n_frames.to_string()),
            ("synth_frame_height", y.frame_height.to_string()),
            ("synth_frame_width", y.frame_width.to_string()),
            ("synth_fps", y.fps.to_string()),
            ("synth_duration", y.duration_seconds.to_string()),
            ("synth_noise", y.noise_level.to_string()),
            ("synth_angles", list(&y.angles_deg)),
            ("synth_frequencies", list(&y.frequencies_hz)),
        ]
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let s = &mut self.spectrogram;
        let m = &mut self.model;
        let t = &mut self.train;
        let y = &mut self.synth;
        match key.trim() {
            "seed" => self.seed = num(key, value)?,
            "mode" => self.mode = Mode::parse(value)?,
            "sample_rate_hz" => s.sample_rate_hz = num(key, value)?,
            "window_length" => s.window_length = num(key, value)?,
            "hop_length" => s.hop_length = num(key, value)?,
            "window_fn" => {
                s.window_fn = WindowFn::parse(value)
                    .ok_or_else(|| Error::Config(format!("window_fn: unknown window {value:?}")))?
            }
            "compression" => {
                s.compression = Compression::parse(value)
                    .ok_or_else(|| Error::Config(format!("compression: unknown mode {value:?}")))?
            }
            "spec_bins" => s.bins = num(key, value)?,
            "spec_frames" => s.frames = num(key, value)?,
            "normalize" => s.normalize = flag(key, value)?,
            "n_frames" => m.n_frames = num(key, value)?,
            "frame_height" => m.visual_height = num(key, value)?,
            "frame_width" => m.visual_width = num(key, value)?,
            "visual_convs" | "audio_convs" => {
                let convs = parse_convs(value)
                    .ok_or_else(|| Error::Config(format!("{key}: expected layers like 32k5s1p2+pool, got {value:?}")))?;
                if key == "visual_convs" {
                    m.visual.convs = convs;
                } else {
                    m.audio.convs = convs;
                }
            }
            "visual_features" => m.visual.feature_len = num(key, value)?,
            "audio_features" => m.audio.feature_len = num(key, value)?,
            "hidden_len" => m.hidden_len = num(key, value)?,
            "batch_size" => t.batch_size = num(key, value)?,
            "learning_rate" => t.adam.learning_rate = num(key, value)?,
            "weight_decay" => t.adam.weight_decay = num(key, value)?,
            "decay_mode" => {
                t.adam.decay_mode = match value {
                    "l2" => WeightDecay::L2,
                    "decoupled" => WeightDecay::Decoupled,
                    _ => return Err(Error::Config(format!("decay_mode: expected l2 or decoupled, got {value:?}"))),
                }
            }
            "beta1" => t.adam.beta1 = num(key, value)?,
            "beta2" => t.adam.beta2 = num(key, value)?,
            "epsilon" => t.adam.epsilon = num(key, value)?,
            "max_epochs" => t.max_epochs = num(key, value)?,
            "patience" => t.patience = num(key, value)?,
            "augment_copies" => t.augment.copies = num(key, value)?,
            "max_rotation_deg" => t.augment.max_rotation_deg = num(key, value)?,
            "crop_area" => t.augment.crop_area = num(key, value)?,
            "brightness_min" => t.augment.brightness_min = num(key, value)?,
            "brightness_max" => t.augment.brightness_max = num(key, value)?,
            "flip_probability" => t.augment.flip_probability = num(key, value)?,
            "validation_actor" => {
                self.validation_actor = match value {
                    "" | "auto" => None,
                    a => Some(a.to_string()),
                }
            }
            "loo_validation" => self.loo_validation = flag(key, value)?,
            "synth_actors" => y.n_actors = num(key, value)?,
            "synth_clips_per_class" => y.clips_per_actor_per_class = num(key, value)?,
            "synth_frames" => y.n_frames = num(key, value)?,
            "synth_frame_height" => y.frame_height = num(key, value)?,
            "synth_frame_width" => y.frame_width = num(key, value)?,
            "synth_fps" => y.fps = num(key, value)?,
            "synth_duration" => y.duration_seconds = num(key, value)?,
            "synth_noise" => y.noise_level = num(key, value)?,
            "synth_angles" | "synth_frequencies" => {
                let v = parse_list(value).ok_or_else(|| Error::Config(format!("{key}: expected six comma-separated numbers")))?;
                if key == "synth_angles" {
                    y.angles_deg = v;
                } else {
                    y.frequencies_hz = v;
                }
            }
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Applies `key=value` lines; blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got {line:?}", n + 1)))?;
            self.set(k, v).map_err(|e| e.context(format!("line {}", n + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
        self.apply_text(&text).map_err(|e| e.context(path.display()))
    }

    /// Applies one `key=value` override from the command line.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects key=value, got {assignment:?}")))?;
        self.set(k, v)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<RunConfig> {
        let mut c = RunConfig::default();
        c.apply_text(text)?;
        Ok(c)
    }

    /// The model configuration with extents, mode and seed filled in.
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            audio_height: self.spectrogram.bins,
            audio_width: self.spectrogram.frames,
            n_classes: Emotion::COUNT,
            use_audio: self.mode.uses_audio(),
            init_seed: self.seed,
            ..self.model.clone()
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig { shuffle_seed: self.seed, augment_seed: self.seed, ..self.train.clone() }
    }

    pub fn loo_config(&self) -> LooConfig {
        LooConfig {
            model: self.model_config(),
            train: self.train_config(),
            mode: self.mode,
            validation_seed: self.seed,
            validation_actor: self.loo_validation,
        }
    }

    pub fn synth_spec(&self) -> SyntheticSpec {
        SyntheticSpec { seed: self.seed, ..self.synth.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        self.spectrogram.validate()?;
        self.model_config().validate()?;
        self.train_config().validate()?;
        if self.train.adam.learning_rate < 0.0 {
            return Err(Error::Config("learning_rate must be non-negative".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip_is_exact() {
        let mut c = RunConfig::default();
        c.set("learning_rate", "0.001").unwrap();
        c.set("visual_convs", "8k3s1p1+pool,4k3s2p0").unwrap();
        c.set("validation_actor", "actor03").unwrap();
        c.set("synth_angles", "0,0,45,45,90,135").unwrap();
        c.set("epsilon", "1.2345678901234567e-9").unwrap();
        let back = RunConfig::from_text(&c.to_text()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_text(), c.to_text());
    }

    #[test]
    fn later_sources_win() {
        let mut c = RunConfig::default();
        c.apply_text("# comment\nbatch_size=8\nseed = 4\n").unwrap();
        c.apply_override("batch_size=2").unwrap();
        assert_eq!((c.train.batch_size, c.seed), (2, 4));
    }

    #[test]
    fn bad_input_is_reported() {
        let mut c = RunConfig::default();
        assert!(c.set("no_such_key", "1").is_err());
        assert!(c.set("batch_size", "x").is_err());
        assert!(c.apply_text("batch_size").is_err());
        assert!(c.set("visual_convs", "3x3").is_err());
        assert!(c.apply_override("mode").is_err());
    }

    #[test]
    fn defaults_validate_and_derive() {
        let c = RunConfig::default();
        c.validate().unwrap();
        let m = c.model_config();
        assert_eq!((m.audio_height, m.audio_width), (192, 120));
        assert_eq!(m.visual_input(), [20, 98, 80]);
    }
}
