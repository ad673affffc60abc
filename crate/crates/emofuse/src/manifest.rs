//! Tab-separated clip manifest:
//! `clip_id  actor_id  label  frames_path  audio_path  [boxes_path]`.
//!
//! Relative paths are resolved against the manifest's directory. A first
//! line starting with `clip_id` is taken as a header; `#` lines are comments.

use std::fmt::Write as _;
use std::path::Path;

use emofuse_core::loo::{ClipRecord, Manifest};
use emofuse_core::{Emotion, Error, Result};

use crate::{io_error, write_atomic};

pub fn parse_manifest(text: &str, base: &Path) -> Result<Manifest> {
    let resolve = |p: &str| -> String {
        let path = Path::new(p);
        if path.is_absolute() {
            p.to_string()
        } else {
            base.join(path).to_string_lossy().into_owned()
        }
    };
    let mut records = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') || (n == 0 && line.starts_with("clip_id")) {
            continue;
        }
        let f: Vec<&str> = line.split('\t').map(str::trim).collect();
        if !(5..=6).contains(&f.len()) {
            return Err(Error::Format(format!("manifest line {}: expected 5 or 6 tab-separated fields, found {}", n + 1, f.len())));
        }
        let label = Emotion::parse(f[2])
            .ok_or_else(|| Error::Format(format!("manifest line {}: unknown label {:?}", n + 1, f[2])))?;
        records.push(ClipRecord {
            clip_id: f[0].to_string(),
            actor_id: f[1].to_string(),
            label,
            frames_path: resolve(f[3]),
            audio_path: resolve(f[4]),
            boxes_path: f.get(5).filter(|s| !s.is_empty()).map(|s| resolve(s)),
        });
    }
    Manifest::new(records)
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_manifest(&text, base).map_err(|e| e.context(path.display()))
}

/// Paths are written as stored in the records.
pub fn format_manifest(records: &[ClipRecord]) -> String {
    let mut out = String::from("clip_id\tactor_id\tlabel\tframes_path\taudio_path\tboxes_path\n");
    for r in records {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}",
            r.clip_id,
            r.actor_id,
            r.label.name(),
            r.frames_path,
            r.audio_path,
            r.boxes_path.as_deref().unwrap_or("")
        );
    }
    out
}

pub fn write_manifest(records: &[ClipRecord], path: &Path) -> Result<()> {
    write_atomic(path, format_manifest(records).as_bytes())
}
