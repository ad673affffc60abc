use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command as Process;

use clap::Parser;
use emofuse::checkpoint::load_checkpoint;
use emofuse::cli::{run, Cli};
use emofuse::config::RunConfig;
use emofuse::manifest::read_manifest;
use emofuse_core::model::init_model;
use emofuse_core::Error;

const TINY: &str = "\
seed=5
n_frames=4
frame_height=16
frame_width=16
visual_convs=2k3s1p1+pool
visual_features=8
audio_convs=1k3s1p1+pool
audio_features=2
hidden_len=4
batch_size=4
max_epochs=2
augment_copies=1
synth_actors=3
synth_clips_per_class=1
synth_frames=6
synth_frame_height=24
synth_frame_width=20
synth_duration=0.25
";

fn emofuse(args: &[&str]) -> Result<String, Error> {
    let mut argv = vec!["emofuse"];
    argv.extend_from_slice(args);
    let mut out = Vec::new();
    run(Cli::parse_from(argv), &mut out)?;
    Ok(String::from_utf8(out).unwrap())
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    config: PathBuf,
    data: PathBuf,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let config = root.join("tiny.cfg");
    fs::write(&config, TINY).unwrap();
    let data = root.join("data");
    emofuse(&["synth", "--out", s(&data), "--config", s(&config)]).unwrap();
    Fixture { _dir: dir, root, config, data }
}

fn tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn synth_writes_a_reproducible_corpus() {
    let f = fixture();
    let manifest = read_manifest(&f.data.join("manifest.tsv")).unwrap();
    assert_eq!(manifest.len(), 18);
    assert_eq!(manifest.actors(), vec!["actor01", "actor02", "actor03"]);
    let r = &manifest.records()[0];
    assert_eq!(fs::read_dir(&r.frames_path).unwrap().count(), 6);
    assert!(Path::new(&r.audio_path).is_file());

    let again = f.root.join("again");
    emofuse(&["synth", "--out", s(&again), "--config", s(&f.config)]).unwrap();
    assert_eq!(tree(&f.data), tree(&again));
    let other = f.root.join("other");
    emofuse(&["synth", "--out", s(&other), "--config", s(&f.config), "--seed", "6"]).unwrap();
    assert_ne!(tree(&f.data), tree(&other));
}

fn tone_wav(path: &Path, hz: f64, amplitude: f64) {
    let samples = (0..16_000)
        .map(|i| amplitude * (2.0 * std::f64::consts::PI * hz * i as f64 / 16_000.0).sin())
        .collect();
    let clip = emofuse_core::dsp::AudioClip::new(samples, 16_000).unwrap();
    emofuse::wav::write_wav(&clip, path).unwrap();
}

#[test]
fn spectrogram_images() {
    let dir = tempfile::tempdir().unwrap();
    let silent = dir.path().join("silent.wav");
    tone_wav(&silent, 440.0, 0.0);
    let img = dir.path().join("silent.pgm");
    emofuse(&["spectrogram", "--audio", s(&silent), "--out", s(&img)]).unwrap();
    let bytes = fs::read(&img).unwrap();
    assert!(bytes.starts_with(b"P5\n120 192\n255\n"));
    assert!(bytes[15..].iter().all(|&p| p == 0));

    let tone = dir.path().join("tone.wav");
    tone_wav(&tone, 440.0, 0.5);
    emofuse(&["spectrogram", "--audio", s(&tone), "--out", s(&img)]).unwrap();
    let image = emofuse::image::read_image(&img).unwrap();
    let row = 191 - 11;
    for c in 0..120 {
        let best = (0..192).max_by(|&a, &b| image.at(a, c).total_cmp(&image.at(b, c))).unwrap();
        assert_eq!(best, row, "column {c}");
    }
}

#[test]
fn zero_learning_rate_keeps_the_initial_weights() {
    let f = fixture();
    let out = f.root.join("run");
    let text = emofuse(&[
        "train",
        "--manifest",
        s(&f.data.join("manifest.tsv")),
        "--out",
        s(&out),
        "--config",
        s(&f.config),
        "--set",
        "learning_rate=0",
        "--set",
        "patience=0",
        "-q",
    ])
    .unwrap();
    assert!(text.starts_with("trained 2 epochs"), "{text}");
    let (model, config) = load_checkpoint(&out.join("checkpoint.bin")).unwrap();
    assert_eq!(config.train.adam.learning_rate, 0.0);
    assert_eq!(model, init_model(&config.model_config()).unwrap());
    let log = fs::read_to_string(out.join("epochs.csv")).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(lines[0], "epoch,train_loss,train_acc,val_loss,val_acc,seconds");
    assert_eq!(lines.len(), 3);
    let saved = RunConfig::from_text(&fs::read_to_string(out.join("config.txt")).unwrap()).unwrap();
    assert_eq!(saved, config);
}

fn summary_rows(path: &Path) -> Vec<(String, f64)> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[0].to_string(), f[1].parse().unwrap())
        })
        .collect()
}

#[test]
fn eval_loo_persists_and_resumes_folds() {
    let f = fixture();
    let manifest = f.data.join("manifest.tsv");
    let out = f.root.join("loo");
    let args = ["eval-loo", "--manifest", s(&manifest), "--out", s(&out), "--config", s(&f.config), "-q"];
    let first = emofuse(&args).unwrap();
    let folds: Vec<_> = fs::read_dir(out.join("folds")).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(folds.len(), 3);
    let rows = summary_rows(&out.join("summary.csv"));
    assert_eq!(rows.len(), 3);
    let mean = rows.iter().map(|r| r.1).sum::<f64>() / 3.0;
    assert!(first.contains(&format!("mean accuracy: {mean:.4}")), "{first}");

    let stamp = out.join("folds").join("actor02.fold");
    let mut fold = fs::read_to_string(&stamp).unwrap();
    fold = fold
        .lines()
        .map(|l| if l.starts_with("epochs_ran=") { "epochs_ran=77".to_string() } else { l.to_string() })
        .collect::<Vec<_>>()
        .join("\n");
    fs::write(&stamp, fold + "\n").unwrap();
    let second = emofuse(&args).unwrap();
    assert!(second.lines().any(|l| l.starts_with("actor02") && l.ends_with(" 77")), "{second}");
}

#[test]
fn video_mode_never_touches_audio() {
    let f = fixture();
    let manifest = read_manifest(&f.data.join("manifest.tsv")).unwrap();
    for r in manifest.records() {
        fs::remove_file(&r.audio_path).unwrap();
    }
    let out = f.root.join("video");
    let text = emofuse(&[
        "eval-loo",
        "--manifest",
        s(&f.data.join("manifest.tsv")),
        "--out",
        s(&out),
        "--config",
        s(&f.config),
        "--mode",
        "video",
        "-q",
    ])
    .unwrap();
    assert!(text.starts_with("mode: video"), "{text}");
    let av = emofuse(&[
        "eval-loo",
        "--manifest",
        s(&f.data.join("manifest.tsv")),
        "--out",
        s(&f.root.join("av")),
        "--config",
        s(&f.config),
        "-q",
    ]);
    assert!(matches!(av, Err(Error::Io(_))), "{av:?}");
}

fn infer_output(text: &str) -> (Vec<f64>, String) {
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 7, "{text}");
    let probs = lines[..6].iter().map(|l| l.split_whitespace().nth(1).unwrap().parse().unwrap()).collect();
    (probs, lines[6].trim_start_matches("label: ").to_string())
}

#[test]
fn infer_prints_a_distribution_and_checks_the_mode() {
    let f = fixture();
    let manifest = read_manifest(&f.data.join("manifest.tsv")).unwrap();
    let clip = &manifest.records()[1];
    let mut trained = Vec::new();
    for mode in ["av", "video"] {
        let out = f.root.join(mode);
        emofuse(&[
            "train",
            "--manifest",
            s(&f.data.join("manifest.tsv")),
            "--out",
            s(&out),
            "--config",
            s(&f.config),
            "--mode",
            mode,
            "--set",
            "max_epochs=1",
            "-q",
        ])
        .unwrap();
        trained.push(out.join("checkpoint.bin"));
    }
    let av = s(&trained[0]);
    let video = s(&trained[1]);

    let text = emofuse(&["infer", "--checkpoint", av, "--frames", &clip.frames_path, "--audio", &clip.audio_path])
        .unwrap();
    let (probs, label) = infer_output(&text);
    assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    let best = (0..6).max_by(|&a, &b| probs[a].total_cmp(&probs[b])).unwrap();
    assert_eq!(label, emofuse_core::Emotion::ALL[best].name());

    let text = emofuse(&["infer", "--checkpoint", video, "--frames", &clip.frames_path]).unwrap();
    let (probs, _) = infer_output(&text);
    assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);

    for err in [
        emofuse(&["infer", "--checkpoint", av, "--frames", &clip.frames_path]),
        emofuse(&["infer", "--checkpoint", video, "--frames", &clip.frames_path, "--audio", &clip.audio_path]),
    ] {
        match err {
            Err(Error::Usage(m)) => assert!(m.contains("mode mismatch"), "{m}"),
            other => panic!("{other:?}"),
        }
    }
}

#[test]
fn binary_reports_errors_with_a_nonzero_status() {
    let dir = tempfile::tempdir().unwrap();
    let out = Process::new(env!("CARGO_BIN_EXE_emofuse"))
        .args(["infer", "--checkpoint", s(&dir.path().join("none.bin")), "--frames", s(dir.path())])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.starts_with("error: ") && stderr.contains("none.bin"), "{stderr}");

    let out = Process::new(env!("CARGO_BIN_EXE_emofuse")).args(["train"]).output().unwrap();
    assert!(!out.status.success());
}
