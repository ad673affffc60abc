//! File-backed clip loading for training and evaluation.

use std::path::Path;

use emofuse_core::dsp::{spectrogram_pipeline, SpectrogramConfig};
use emofuse_core::loo::{ClipRecord, Manifest, Mode, SampleSource};
use emofuse_core::synth::SyntheticSpec;
use emofuse_core::train::ClipSample;
use emofuse_core::vision::{build_visual_stack, StackShape};
use emofuse_core::{Result, Tensor};

use crate::config::RunConfig;
use crate::image::{read_boxes, read_frames, write_image};
use crate::manifest::write_manifest;
use crate::wav::{load_wav, write_wav};

/// Frame directory (plus optional box sidecar) to a visual stack.
pub fn load_visual(frames_dir: &Path, boxes: Option<&Path>, shape: &StackShape) -> Result<Tensor> {
    let seq = read_frames(frames_dir)?;
    let boxes = boxes.map(read_boxes).transpose()?;
    build_visual_stack(&seq, boxes.as_deref(), shape).map_err(|e| e.context(frames_dir.display()))
}

pub fn load_spectrogram(wav: &Path, config: &SpectrogramConfig) -> Result<Tensor> {
    spectrogram_pipeline(&load_wav(wav)?, config).map_err(|e| e.context(wav.display()))
}

/// Loads clips from disk and counts the audio files it opens.
#[derive(Debug, Clone)]
pub struct FileSource {
    pub stack: StackShape,
    pub spectrogram: SpectrogramConfig,
    audio_reads: usize,
}

impl FileSource {
    pub fn new(config: &RunConfig) -> FileSource {
        let m = config.model_config();
        FileSource {
            stack: StackShape { frames: m.n_frames, height: m.visual_height, width: m.visual_width },
            spectrogram: config.spectrogram,
            audio_reads: 0,
        }
    }

    pub fn audio_reads(&self) -> usize {
        self.audio_reads
    }
}

impl SampleSource for FileSource {
    fn load(&mut self, record: &ClipRecord, mode: Mode) -> Result<ClipSample> {
        let visual = load_visual(
            Path::new(&record.frames_path),
            record.boxes_path.as_deref().map(Path::new),
            &self.stack,
        )?;
        let audio = if mode.uses_audio() {
            self.audio_reads += 1;
            Some(load_spectrogram(Path::new(&record.audio_path), &self.spectrogram)?)
        } else {
            None
        };
        Ok(ClipSample { visual, audio, label: record.label.index() })
    }
}

/// Writes every clip of `spec` under `out_dir` as
/// `<clip_id>/frames/NNN.pgm` and `<clip_id>/audio.wav`, plus
/// `manifest.tsv` with paths relative to `out_dir`.
pub fn write_synthetic(spec: &SyntheticSpec, out_dir: &Path) -> Result<Manifest> {
    spec.validate()?;
    let mut records = Vec::with_capacity(spec.clip_count());
    for (actor, class, index) in spec.keys() {
        let clip = spec.clip(actor, class, index)?;
        let frames_rel = format!("{}/frames", clip.clip_id);
        let audio_rel = format!("{}/audio.wav", clip.clip_id);
        for (i, frame) in clip.frames.frames.iter().enumerate() {
            write_image(frame, &out_dir.join(&frames_rel).join(format!("{i:03}.pgm")))?;
        }
        write_wav(&clip.audio, &out_dir.join(&audio_rel))?;
        records.push(ClipRecord {
            clip_id: clip.clip_id,
            actor_id: clip.actor_id,
            label: clip.label,
            frames_path: frames_rel,
            audio_path: audio_rel,
            boxes_path: None,
        });
    }
    write_manifest(&records, &out_dir.join("manifest.tsv"))?;
    Manifest::new(records)
}
