//! Training and leave-one-actor-out runs over files: fold persistence,
//! epoch logs, summaries and progress output.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use emofuse_core::loo::{
    pick_validation_actor, run_loo, FoldResult, FoldStore, LooObserver, LooSummary, Manifest, Mode,
    SampleSource,
};
use emofuse_core::model::{init_model, visual_only_variant};
use emofuse_core::train::{train, ClipSample, Confusion, EpochReport, TrainObserver, TrainOutcome};
use emofuse_core::{Emotion, Error, Result};

use crate::checkpoint::save_checkpoint;
use crate::config::RunConfig;
use crate::{io_error, write_atomic};

/// Wall clock for the core's training loop, with optional progress lines
/// on standard error.
pub struct Progress {
    start: Instant,
    verbose: bool,
    pub reports: Vec<EpochReport>,
}

impl Progress {
    pub fn new(verbose: bool) -> Progress {
        Progress { start: Instant::now(), verbose, reports: Vec::new() }
    }
}

impl TrainObserver for Progress {
    fn now_seconds(&mut self) -> f64 {
        self.start.elapsed().as_secs_f64()
    }

    fn on_epoch(&mut self, r: &EpochReport) {
        if self.verbose {
            let val = match (r.val_loss, r.val_accuracy) {
                (Some(l), Some(a)) => format!(", val loss {l:.4}, val acc {a:.4}"),
                _ => String::new(),
            };
            eprintln!(
                "epoch {}: train loss {:.4}, train acc {:.4}{val} ({:.1} s)",
                r.epoch, r.train_loss, r.train_accuracy, r.wall_seconds
            );
        }
        self.reports.push(r.clone());
    }
}

impl LooObserver for Progress {
    fn on_fold(&mut self, fold: &FoldResult, resumed: bool) {
        if self.verbose {
            let how = if resumed { "resumed" } else { "done" };
            eprintln!("fold {} {how}: accuracy {:.4} on {} clips", fold.held_out_actor, fold.accuracy, fold.n_test);
        }
    }
}

pub fn epoch_log_csv(reports: &[EpochReport]) -> String {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut out = String::from("epoch,train_loss,train_acc,val_loss,val_acc,seconds\n");
    for r in reports {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{:.3}",
            r.epoch,
            r.train_loss,
            r.train_accuracy,
            opt(r.val_loss),
            opt(r.val_accuracy),
            r.wall_seconds
        );
    }
    out
}

/// Actor id made safe for a file name.
fn file_stem(actor: &str) -> String {
    actor.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

pub fn format_fold(fold: &FoldResult, mode: Mode) -> String {
    let counts: Vec<String> = fold.confusion.counts().iter().map(u64::to_string).collect();
    format!(
        "held_out_actor={}\nvalidation_actor={}\nmode={}\naccuracy={}\nn_test={}\nepochs_ran={}\nconfusion={}\n",
        fold.held_out_actor,
        fold.validation_actor.as_deref().unwrap_or(""),
        mode.name(),
        fold.accuracy,
        fold.n_test,
        fold.epochs_ran,
        counts.join(",")
    )
}

pub fn parse_fold(text: &str) -> Result<(FoldResult, Mode)> {
    let get = |key: &str| -> Result<String> {
        text.lines()
            .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
            .map(str::to_string)
            .ok_or_else(|| Error::Format(format!("fold file lacks {key}")))
    };
    let num = |key: &str, v: String| -> Result<f64> {
        v.parse().map_err(|_| Error::Format(format!("fold file: bad {key} {v:?}")))
    };
    let mode = Mode::parse(&get("mode")?)?;
    let counts = get("confusion")?
        .split(',')
        .map(|c| c.parse::<u64>().map_err(|_| Error::Format(format!("fold file: bad count {c:?}"))))
        .collect::<Result<Vec<_>>>()?;
    let validation = get("validation_actor")?;
    let fold = FoldResult {
        held_out_actor: get("held_out_actor")?,
        validation_actor: (!validation.is_empty()).then_some(validation),
        accuracy: num("accuracy", get("accuracy")?)?,
        confusion: Confusion::from_counts(Emotion::COUNT, counts)?,
        n_test: num("n_test", get("n_test")?)? as usize,
        epochs_ran: num("epochs_ran", get("epochs_ran")?)? as usize,
    };
    if fold.confusion.total() != fold.n_test as u64 {
        return Err(Error::Format("fold file: confusion counts do not sum to n_test".into()));
    }
    Ok((fold, mode))
}

/// One `<actor>.fold` file per finished fold in a directory.
pub struct FoldDir {
    dir: PathBuf,
    mode: Mode,
}

impl FoldDir {
    pub fn new(dir: impl Into<PathBuf>, mode: Mode) -> FoldDir {
        FoldDir { dir: dir.into(), mode }
    }

    pub fn path_for(&self, actor: &str) -> PathBuf {
        self.dir.join(format!("{}.fold", file_stem(actor)))
    }
}

impl FoldStore for FoldDir {
    fn load(&mut self, actor: &str) -> Result<Option<FoldResult>> {
        let path = self.path_for(actor);
        if !path.exists() {
            return Ok(None);
        }
        let text = std::fs::read_to_string(&path).map_err(|e| io_error(&path, e))?;
        let (fold, mode) = parse_fold(&text).map_err(|e| e.context(path.display()))?;
        if mode != self.mode {
            return Err(Error::Config(format!(
                "{} was written by a {} run, this run is {}",
                path.display(),
                mode,
                self.mode
            )));
        }
        if fold.held_out_actor != actor {
            return Err(Error::Config(format!("{} belongs to actor {:?}", path.display(), fold.held_out_actor)));
        }
        Ok(Some(fold))
    }

    fn save(&mut self, fold: &FoldResult) -> Result<()> {
        write_atomic(&self.path_for(&fold.held_out_actor), format_fold(fold, self.mode).as_bytes())
    }
}

pub fn summary_table(summary: &LooSummary) -> String {
    let mut out = format!("mode: {}\n", summary.mode);
    let _ = writeln!(out, "{:<16} {:<16} {:>9} {:>7} {:>7}", "actor", "validation", "accuracy", "n_test", "epochs");
    for f in &summary.per_fold {
        let _ = writeln!(
            out,
            "{:<16} {:<16} {:>9.4} {:>7} {:>7}",
            f.held_out_actor,
            f.validation_actor.as_deref().unwrap_or("-"),
            f.accuracy,
            f.n_test,
            f.epochs_ran
        );
    }
    let _ = writeln!(out, "mean accuracy: {:.4}", summary.mean_accuracy);
    let _ = writeln!(out, "std accuracy:  {:.4}", summary.std_accuracy);
    let _ = writeln!(out, "pooled confusion (rows true, columns predicted):");
    let _ = write!(out, "{:<9}", "");
    for e in Emotion::ALL {
        let _ = write!(out, " {:>8}", e.name());
    }
    out.push('\n');
    for t in Emotion::ALL {
        let _ = write!(out, "{:<9}", t.name());
        for p in Emotion::ALL {
            let _ = write!(out, " {:>8}", summary.pooled.get(t.index(), p.index()));
        }
        out.push('\n');
    }
    out
}

pub fn summary_csv(summary: &LooSummary) -> String {
    let mut out = String::from("actor,accuracy,n_test,epochs\n");
    for f in &summary.per_fold {
        let _ = writeln!(out, "{},{},{},{}", f.held_out_actor, f.accuracy, f.n_test, f.epochs_ran);
    }
    out
}

/// Leave-one-actor-out over a manifest, persisting folds under
/// `out_dir/folds` and writing the resolved config and both summaries.
pub fn eval_loo(
    manifest: &Manifest,
    config: &RunConfig,
    out_dir: &Path,
    source: &mut dyn SampleSource,
    progress: &mut Progress,
) -> Result<LooSummary> {
    config.validate()?;
    write_atomic(&out_dir.join("config.txt"), config.to_text().as_bytes())?;
    let mut store = FoldDir::new(out_dir.join("folds"), config.mode);
    let summary = run_loo(manifest, &config.loo_config(), source, &mut store, progress)?;
    write_atomic(&out_dir.join("summary.txt"), summary_table(&summary).as_bytes())?;
    write_atomic(&out_dir.join("summary.csv"), summary_csv(&summary).as_bytes())?;
    Ok(summary)
}

/// Single split: one validation actor (configured or seeded pick), every
/// other actor trains. Writes `checkpoint.bin`, `epochs.csv` and
/// `config.txt` into `out_dir`.
pub fn train_split(
    manifest: &Manifest,
    config: &RunConfig,
    out_dir: &Path,
    source: &mut dyn SampleSource,
    progress: &mut Progress,
) -> Result<TrainOutcome> {
    config.validate()?;
    let actors = manifest.actors();
    let val_actor = match &config.validation_actor {
        Some(a) if actors.contains(&a.as_str()) => Some(a.as_str()),
        Some(a) => return Err(Error::Config(format!("validation actor {a:?} not in manifest"))),
        None => pick_validation_actor(&actors, "", config.seed),
    };
    let mut train_set: Vec<ClipSample> = Vec::new();
    let mut val_set = Vec::new();
    for r in manifest.records() {
        let s = source.load(r, config.mode).map_err(|e| e.context(format!("clip {:?}", r.clip_id)))?;
        if Some(r.actor_id.as_str()) == val_actor {
            val_set.push(s);
        } else {
            train_set.push(s);
        }
    }
    let model_config = config.model_config();
    let model = match config.mode {
        Mode::AudioVideo => init_model(&model_config)?,
        Mode::VideoOnly => visual_only_variant(&model_config)?,
    };
    write_atomic(&out_dir.join("config.txt"), config.to_text().as_bytes())?;
    let outcome = train(model, &train_set, &val_set, &config.train_config(), progress)?;
    save_checkpoint(&outcome.model, config, &out_dir.join("checkpoint.bin"))?;
    write_atomic(&out_dir.join("epochs.csv"), epoch_log_csv(&outcome.reports).as_bytes())?;
    Ok(outcome)
}

/// Writes the summary table to `out`.
pub fn print_summary(summary: &LooSummary, out: &mut dyn Write) -> Result<()> {
    out.write_all(summary_table(summary).as_bytes()).map_err(|e| Error::Io(e.to_string()))
}

