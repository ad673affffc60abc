//! Checkpoint container.
//!
//! ```text
//! emofuse-checkpoint 1
//! seed=0
//! ...                                 run configuration, key=value
//! tensor visual.conv0.weight 32,20,5,5 16000
//! ...                                 one line per parameter tensor
//!
//! <little-endian f64 payloads in header order>
//! ```

use std::fmt::Write as _;
use std::path::Path;

use emofuse_core::model::{init_model, FusionModel};
use emofuse_core::{Error, Result};

use crate::config::RunConfig;
use crate::{read_file, write_atomic};

const MAGIC: &str = "emofuse-checkpoint 1";

pub fn encode_checkpoint(model: &FusionModel, config: &RunConfig) -> Vec<u8> {
    let mut header = format!("{MAGIC}\n{}", config.to_text());
    let params = model.parameters();
    for (name, t) in &params {
        let shape: Vec<String> = t.shape().iter().map(usize::to_string).collect();
        let _ = writeln!(header, "tensor {name} {} {}", shape.join(","), t.len());
    }
    header.push('\n');
    let mut out = header.into_bytes();
    for (_, t) in &params {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Entry {
    name: String,
    shape: Vec<usize>,
    count: usize,
}

fn parse_entry(line: &str) -> Result<Entry> {
    let bad = || Error::Format(format!("malformed tensor line {line:?}"));
    let f: Vec<&str> = line.split_whitespace().collect();
    let [_, name, shape, count] = f[..] else { return Err(bad()) };
    let shape = shape.split(',').map(|d| d.parse().map_err(|_| bad())).collect::<Result<Vec<usize>>>()?;
    let count: usize = count.parse().map_err(|_| bad())?;
    if shape.iter().product::<usize>() != count {
        return Err(Error::Format(format!("tensor {name}: shape {shape:?} does not hold {count} values")));
    }
    Ok(Entry { name: name.to_string(), shape, count })
}

/// Rebuilds the run configuration and the model; names and shapes must
/// match the architecture the configuration describes.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<(FusionModel, RunConfig)> {
    let split = bytes
        .windows(2)
        .position(|w| w == b"\n\n")
        .ok_or_else(|| Error::Format("checkpoint header has no terminating blank line".into()))?;
    let header = std::str::from_utf8(&bytes[..split])
        .map_err(|_| Error::Format("checkpoint header is not UTF-8".into()))?;
    let payload = &bytes[split + 2..];
    let mut lines = header.lines();
    if lines.next() != Some(MAGIC) {
        return Err(Error::Format(format!("not a checkpoint (expected first line {MAGIC:?})")));
    }
    let mut config = RunConfig::default();
    let mut entries = Vec::new();
    for line in lines {
        if line.starts_with("tensor ") {
            entries.push(parse_entry(line)?);
        } else {
            config.apply_text(line)?;
        }
    }
    let expected: usize = entries.iter().map(|e| e.count).sum::<usize>() * 8;
    if payload.len() != expected {
        return Err(Error::Io(format!("checkpoint payload is {} bytes, header lists {expected}", payload.len())));
    }

    let mut model = init_model(&config.model_config())?;
    let names = model.parameter_names();
    if names.len() != entries.len() {
        return Err(Error::Format(format!(
            "checkpoint lists {} tensors, the configured model has {}",
            entries.len(),
            names.len()
        )));
    }
    let mut offset = 0;
    for ((entry, name), tensor) in entries.iter().zip(&names).zip(model.parameters_mut()) {
        if &entry.name != name || entry.shape != tensor.shape() {
            return Err(Error::Format(format!(
                "checkpoint tensor {} {:?} does not match model tensor {name} {:?}",
                entry.name,
                entry.shape,
                tensor.shape()
            )));
        }
        for (dst, src) in tensor.data_mut().iter_mut().zip(payload[offset..].chunks_exact(8)) {
            *dst = f64::from_le_bytes(src.try_into().expect("8-byte chunk"));
        }
        offset += entry.count * 8;
    }
    Ok((model, config))
}

pub fn save_checkpoint(model: &FusionModel, config: &RunConfig, path: &Path) -> Result<()> {
    write_atomic(path, &encode_checkpoint(model, config))
}

pub fn load_checkpoint(path: &Path) -> Result<(FusionModel, RunConfig)> {
    decode_checkpoint(&read_file(path)?).map_err(|e| e.context(path.display()))
}
