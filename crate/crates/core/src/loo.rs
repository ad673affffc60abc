//! Leave-one-actor-out evaluation: manifests, splits, the fold runner and
//! the mean/std summary over held-out actors.
//!
//! File access stays outside this crate. The runner pulls samples through
//! [`SampleSource`] and persists finished folds through [`FoldStore`].

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{bail, Result};
use crate::model::{init_model, visual_only_variant, ModelConfig};
use crate::train::{evaluate, train, ClipSample, Confusion, TrainConfig, TrainObserver};
use crate::Emotion;

/// Which branches take part in a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    VideoOnly,
    AudioVideo,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::VideoOnly => "video",
            Mode::AudioVideo => "av",
        }
    }

    pub fn parse(s: &str) -> Result<Mode> {
        match s.trim().to_ascii_lowercase().as_str() {
            "video" | "video-only" | "v" => Ok(Mode::VideoOnly),
            "av" | "audio+video" | "audio-video" => Ok(Mode::AudioVideo),
            other => bail!(Config, "unknown mode {other:?} (expected video or av)"),
        }
    }

    pub fn uses_audio(self) -> bool {
        self == Mode::AudioVideo
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClipRecord {
    pub clip_id: String,
    pub actor_id: String,
    pub label: Emotion,
    pub frames_path: String,
    pub audio_path: String,
    pub boxes_path: Option<String>,
}

/// Validated list of clip records: ids unique.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    records: Vec<ClipRecord>,
}

impl Manifest {
    pub fn new(records: Vec<ClipRecord>) -> Result<Manifest> {
        let mut seen = BTreeSet::new();
        for r in &records {
            if r.clip_id.is_empty() || r.actor_id.is_empty() {
                bail!(Config, "record with empty clip or actor id");
            }
            if !seen.insert(r.clip_id.as_str()) {
                bail!(Config, "duplicate clip id {:?}", r.clip_id);
            }
        }
        Ok(Manifest { records })
    }

    pub fn records(&self) -> &[ClipRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Distinct actor ids in sorted order.
    pub fn actors(&self) -> Vec<&str> {
        let set: BTreeSet<&str> = self.records.iter().map(|r| r.actor_id.as_str()).collect();
        set.into_iter().collect()
    }

    /// Indices of the records belonging to `actors`.
    pub fn indices_of(&self, actors: &[&str]) -> Vec<usize> {
        (0..self.records.len()).filter(|&i| actors.contains(&self.records[i].actor_id.as_str())).collect()
    }
}

/// `(train, test)` record indices: the test side holds every clip of `actor`.
pub fn split_loo(manifest: &Manifest, actor: &str) -> Result<(Vec<usize>, Vec<usize>)> {
    let (test, train): (Vec<usize>, Vec<usize>) =
        (0..manifest.len()).partition(|&i| manifest.records[i].actor_id == actor);
    if test.is_empty() {
        bail!(Config, "actor {actor:?} not in manifest");
    }
    Ok((train, test))
}

/// Seeded pick of one validation actor among `candidates`, stable for a
/// given `(seed, held_out)` pair. `None` when fewer than two candidates
/// remain, so training keeps at least one actor.
pub fn pick_validation_actor<'m>(candidates: &[&'m str], held_out: &str, seed: u64) -> Option<&'m str> {
    if candidates.len() < 2 {
        return None;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(held_out.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3)));
    candidates.choose(&mut rng).copied()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldResult {
    pub held_out_actor: String,
    pub validation_actor: Option<String>,
    pub accuracy: f64,
    pub confusion: Confusion,
    pub n_test: usize,
    pub epochs_ran: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LooSummary {
    pub mode: Mode,
    /// Folds sorted by held-out actor.
    pub per_fold: Vec<FoldResult>,
    pub mean_accuracy: f64,
    /// Population standard deviation of fold accuracies.
    pub std_accuracy: f64,
    pub pooled: Confusion,
}

/// Mean, population std and pooled confusion. Folds are ordered by actor
/// first, so the result does not depend on the input order.
pub fn summarize(per_fold: &[FoldResult], mode: Mode) -> Result<LooSummary> {
    let Some(first) = per_fold.first() else {
        bail!(Config, "no folds to summarize");
    };
    let mut folds = per_fold.to_vec();
    folds.sort_by(|a, b| a.held_out_actor.cmp(&b.held_out_actor));
    let n = folds.len() as f64;
    let mean = folds.iter().map(|f| f.accuracy).sum::<f64>() / n;
    let var = folds.iter().map(|f| (f.accuracy - mean) * (f.accuracy - mean)).sum::<f64>() / n;
    let mut pooled = Confusion::new(first.confusion.classes());
    for f in &folds {
        pooled.merge(&f.confusion)?;
    }
    Ok(LooSummary { mode, per_fold: folds, mean_accuracy: mean, std_accuracy: libm::sqrt(var), pooled })
}

/// Turns a manifest record into a model-ready sample. Video-only runs must
/// not touch audio, so the mode is passed along.
pub trait SampleSource {
    fn load(&mut self, record: &ClipRecord, mode: Mode) -> Result<ClipSample>;
}

/// Persistence of finished folds, keyed by held-out actor.
pub trait FoldStore {
    fn load(&mut self, actor: &str) -> Result<Option<FoldResult>>;
    fn save(&mut self, fold: &FoldResult) -> Result<()>;
}

/// Keeps nothing; every fold runs.
pub struct NoStore;

impl FoldStore for NoStore {
    fn load(&mut self, _actor: &str) -> Result<Option<FoldResult>> {
        Ok(None)
    }

    fn save(&mut self, _fold: &FoldResult) -> Result<()> {
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LooConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub mode: Mode,
    /// Seeds the per-fold validation-actor choice.
    pub validation_seed: u64,
    /// Hold out one training actor per fold for early stopping.
    pub validation_actor: bool,
}

/// Trains a fresh model per held-out actor and evaluates on that actor.
/// Folds already present in `store` are reused.
pub fn run_loo(
    manifest: &Manifest,
    config: &LooConfig,
    source: &mut dyn SampleSource,
    store: &mut dyn FoldStore,
    observer: &mut dyn LooObserver,
) -> Result<LooSummary> {
    let actors = manifest.actors();
    if actors.len() < 2 {
        bail!(Config, "leave-one-out needs at least two actors, found {}", actors.len());
    }
    let model_config = ModelConfig { use_audio: config.mode.uses_audio(), ..config.model.clone() };
    model_config.validate()?;
    config.train.validate()?;

    let mut samples: Vec<Option<ClipSample>> = (0..manifest.len()).map(|_| None).collect();
    let mut folds = Vec::with_capacity(actors.len());
    for &actor in &actors {
        if let Some(done) = store.load(actor)? {
            observer.on_fold(&done, true);
            folds.push(done);
            continue;
        }
        let fold = run_fold(manifest, &actors, actor, config, &model_config, source, &mut samples, observer)
            .map_err(|e| e.context(format!("fold for actor {actor:?}")))?;
        store.save(&fold).map_err(|e| e.context(format!("saving fold for actor {actor:?}")))?;
        observer.on_fold(&fold, false);
        folds.push(fold);
    }
    summarize(&folds, config.mode)
}

/// Progress hooks for [`run_loo`].
pub trait LooObserver: TrainObserver {
    fn on_fold(&mut self, _fold: &FoldResult, _resumed: bool) {}
}

impl LooObserver for crate::train::Silent {}

#[allow(clippy::too_many_arguments)]
fn run_fold(
    manifest: &Manifest,
    actors: &[&str],
    actor: &str,
    config: &LooConfig,
    model_config: &ModelConfig,
    source: &mut dyn SampleSource,
    cache: &mut [Option<ClipSample>],
    observer: &mut dyn LooObserver,
) -> Result<FoldResult> {
    let others: Vec<&str> = actors.iter().copied().filter(|a| *a != actor).collect();
    let val_actor = if config.validation_actor {
        pick_validation_actor(&others, actor, config.validation_seed)
    } else {
        None
    };
    let (train_idx, test_idx) = split_loo(manifest, actor)?;
    let (val_idx, train_idx): (Vec<usize>, Vec<usize>) =
        train_idx.into_iter().partition(|&i| Some(manifest.records[i].actor_id.as_str()) == val_actor);

    let mut gather = |idx: &[usize]| -> Result<Vec<ClipSample>> {
        idx.iter()
            .map(|&i| {
                if cache[i].is_none() {
                    let r = &manifest.records[i];
                    cache[i] = Some(source.load(r, config.mode).map_err(|e| e.context(format!("clip {:?}", r.clip_id)))?);
                }
                Ok(cache[i].clone().expect("cached"))
            })
            .collect()
    };
    let train_set = gather(&train_idx)?;
    let val_set = gather(&val_idx)?;
    let test_set = gather(&test_idx)?;

    let model = match config.mode {
        Mode::AudioVideo => init_model(model_config)?,
        Mode::VideoOnly => visual_only_variant(model_config)?,
    };
    let outcome = train(model, &train_set, &val_set, &config.train, observer)?;
    let eval = evaluate(&outcome.model, &test_set)?;
    Ok(FoldResult {
        held_out_actor: actor.into(),
        validation_actor: val_actor.map(String::from),
        accuracy: eval.accuracy,
        confusion: eval.confusion,
        n_test: test_set.len(),
        epochs_ran: outcome.reports.len(),
    })
}
