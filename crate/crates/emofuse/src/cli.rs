//! `emofuse` subcommands.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use emofuse_core::model::FusionModel;
use emofuse_core::{Emotion, Error, Result};

use crate::checkpoint::load_checkpoint;
use crate::config::RunConfig;
use crate::dataset::{load_spectrogram, load_visual, write_synthetic, FileSource};
use crate::image::export_pgm;
use crate::manifest::read_manifest;
use crate::runner::{eval_loo, summary_table, train_split, Progress};
use crate::write_atomic;

#[derive(Debug, Parser)]
#[command(name = "emofuse", version, about = "Audio-visual emotion classification from face frames and speech")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic bar-and-tone corpus with its manifest.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        settings: Settings,
    },
    /// Render the spectrogram of a WAV file as a PGM image.
    Spectrogram {
        #[arg(long)]
        audio: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        settings: Settings,
    },
    /// Train on every actor but one validation actor and save the best checkpoint.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        validation_actor: Option<String>,
        #[command(flatten)]
        settings: Settings,
    },
    /// Leave-one-actor-out evaluation; finished folds are reused on rerun.
    EvalLoo {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        settings: Settings,
    },
    /// Print the emotion distribution for one clip.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Directory of .pgm/.ppm frames.
        #[arg(long)]
        frames: PathBuf,
        /// Face boxes, one `frame_index,x,y,width,height` per line.
        #[arg(long)]
        boxes: Option<PathBuf>,
        #[arg(long)]
        audio: Option<PathBuf>,
    },
}

/// Configuration sources shared by the subcommands.
#[derive(Debug, Args, Default)]
pub struct Settings {
    /// File of key=value lines applied over the defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// key=value override applied after the config file; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// video or av
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long, short)]
    pub quiet: bool,
}

impl Settings {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut c = RunConfig::default();
        if let Some(path) = &self.config {
            c.apply_file(path)?;
        }
        for o in &self.overrides {
            c.apply_override(o)?;
        }
        if let Some(seed) = self.seed {
            c.seed = seed;
        }
        if let Some(mode) = &self.mode {
            c.set("mode", mode)?;
        }
        c.validate()?;
        Ok(c)
    }
}

fn emit(out: &mut dyn Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes()).map_err(|e| Error::Io(e.to_string()))
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Synth { out: dir, settings } => {
            let config = settings.resolve()?;
            let manifest = write_synthetic(&config.synth_spec(), &dir)?;
            write_atomic(&dir.join("config.txt"), config.to_text().as_bytes())?;
            emit(out, &format!("wrote {} clips to {}\n", manifest.len(), dir.join("manifest.tsv").display()))
        }
        Command::Spectrogram { audio, out: image, settings } => {
            let config = settings.resolve()?;
            let spec = load_spectrogram(&audio, &config.spectrogram)?;
            export_pgm(&spec, &image)
        }
        Command::Train { manifest, out: dir, validation_actor, settings } => {
            let mut config = settings.resolve()?;
            if validation_actor.is_some() {
                config.validation_actor = validation_actor;
            }
            let m = read_manifest(&manifest)?;
            let mut progress = Progress::new(!settings.quiet);
            let outcome = train_split(&m, &config, &dir, &mut FileSource::new(&config), &mut progress)?;
            let best = outcome.best_val_accuracy.map(|a| format!(", validation accuracy {a:.4}")).unwrap_or_default();
            emit(
                out,
                &format!(
                    "trained {} epochs, kept epoch {}{best}; checkpoint {}\n",
                    outcome.reports.len(),
                    outcome.best_epoch,
                    dir.join("checkpoint.bin").display()
                ),
            )
        }
        Command::EvalLoo { manifest, out: dir, settings } => {
            let config = settings.resolve()?;
            let m = read_manifest(&manifest)?;
            let mut progress = Progress::new(!settings.quiet);
            let summary = eval_loo(&m, &config, &dir, &mut FileSource::new(&config), &mut progress)?;
            emit(out, &summary_table(&summary))
        }
        Command::Infer { checkpoint, frames, boxes, audio } => {
            let (model, config) = load_checkpoint(&checkpoint)?;
            let text = infer(&model, &config, &frames, boxes.as_deref(), audio.as_deref())?;
            emit(out, &text)
        }
    }
}

/// Six `name probability` lines followed by `label: name`.
pub fn infer(
    model: &FusionModel,
    config: &RunConfig,
    frames: &Path,
    boxes: Option<&Path>,
    audio: Option<&Path>,
) -> Result<String> {
    let spectrogram = match (model.uses_audio(), audio) {
        (false, Some(_)) => {
            return Err(Error::Usage(
                "mode mismatch: the checkpoint is video-only and takes no audio; drop --audio".into(),
            ))
        }
        (true, None) => {
            return Err(Error::Usage(
                "mode mismatch: the checkpoint fuses audio and video; pass --audio <file.wav>".into(),
            ))
        }
        (true, Some(path)) => Some(load_spectrogram(path, &config.spectrogram)?),
        (false, None) => None,
    };
    let source = FileSource::new(config);
    let stack = load_visual(frames, boxes, &source.stack).map_err(|e| {
        e.context(format!(
            "expected frames resizable to {}×{}×{}",
            source.stack.frames, source.stack.height, source.stack.width
        ))
    })?;
    let p = model.predict(&stack, spectrogram.as_ref())?;
    let mut text = String::new();
    for e in Emotion::ALL {
        text.push_str(&format!("{:<8} {:.12}\n", e.name(), p.probabilities[e.index()]));
    }
    text.push_str(&format!("label: {}\n", p.emotion().map_or("unknown", Emotion::name)));
    Ok(text)
}
