//! Binary PGM (P5) and PPM (P6) images, frame directories and face-box
//! sidecars.

use std::path::{Path, PathBuf};

use emofuse_core::dsp::pgm_pixels;
use emofuse_core::vision::{FaceBox, FrameSequence, Image};
use emofuse_core::{Error, Result, Tensor};

use crate::{io_error, read_file, write_atomic};

fn header_fields(bytes: &[u8], count: usize) -> Result<(Vec<String>, usize)> {
    let mut fields = Vec::new();
    let mut i = 0;
    while fields.len() < count {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if i < bytes.len() && bytes[i] == b'#' {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return Err(Error::Io("truncated image header".into()));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..i]).into_owned());
    }
    // exactly one whitespace byte separates the header from the raster
    Ok((fields, i + 1))
}

fn number(field: &str, what: &str) -> Result<usize> {
    field.parse().map_err(|_| Error::Format(format!("bad {what} {field:?} in image header")))
}

/// Decodes P5 (grey) or P6 (colour, converted to luminance) with values
/// scaled to [0, 1].
pub fn decode_image(bytes: &[u8]) -> Result<Image> {
    let (fields, start) = header_fields(bytes, 4)?;
    let channels = match fields[0].as_str() {
        "P5" => 1,
        "P6" => 3,
        other => return Err(Error::Format(format!("unsupported image magic {other:?}, expected P5 or P6"))),
    };
    let width = number(&fields[1], "width")?;
    let height = number(&fields[2], "height")?;
    let maxval = number(&fields[3], "maxval")?;
    if width == 0 || height == 0 || maxval == 0 || maxval > 65535 {
        return Err(Error::Format(format!("image header {width}x{height} maxval {maxval} out of range")));
    }
    let depth = if maxval > 255 { 2 } else { 1 };
    let n = width * height * channels;
    let raster = bytes.get(start..).unwrap_or(&[]);
    if raster.len() < n * depth {
        return Err(Error::Io(format!("truncated raster: {} of {} bytes", raster.len(), n * depth)));
    }
    let scale = 1.0 / maxval as f64;
    let values: Vec<f64> = if depth == 1 {
        raster[..n].iter().map(|&b| b as f64 * scale).collect()
    } else {
        raster[..2 * n].chunks_exact(2).map(|p| u16::from_be_bytes([p[0], p[1]]) as f64 * scale).collect()
    };
    if channels == 1 {
        Image::new(height, width, values)
    } else {
        Image::from_rgb(height, width, &values)
    }
}

pub fn read_image(path: &Path) -> Result<Image> {
    decode_image(&read_file(path)?).map_err(|e| e.context(path.display()))
}

pub fn encode_pgm(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

/// Grey image with values in [0, 1], quantized by rounding.
pub fn write_image(image: &Image, path: &Path) -> Result<()> {
    let pixels: Vec<u8> = image.data.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    write_atomic(path, &encode_pgm(image.width, image.height, &pixels))
}

/// Spectrogram (`bins × frames` or `1 × bins × frames`) as a min-max scaled
/// PGM with frequency row 0 at the bottom.
pub fn export_pgm(spectrogram: &Tensor, path: &Path) -> Result<()> {
    let pixels = pgm_pixels(spectrogram)?;
    let s = spectrogram.shape();
    let (rows, cols) = (s[s.len() - 2], s[s.len() - 1]);
    write_atomic(path, &encode_pgm(cols, rows, &pixels))
}

/// `.pgm`/`.ppm` files of a directory in file-name order.
pub fn frame_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| io_error(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| e.eq_ignore_ascii_case("pgm") || e.eq_ignore_ascii_case("ppm"))
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Config(format!("{}: no .pgm or .ppm frames", dir.display())));
    }
    Ok(files)
}

pub fn read_frames(dir: &Path) -> Result<FrameSequence> {
    let frames = frame_files(dir)?.iter().map(|p| read_image(p)).collect::<Result<Vec<_>>>()?;
    FrameSequence::new(frames, None).map_err(|e| e.context(dir.display()))
}

/// One box per line, `frame_index,x,y,width,height`; blank lines and `#`
/// comments are skipped.
pub fn parse_boxes(text: &str) -> Result<Vec<FaceBox>> {
    let mut boxes = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let v: Vec<usize> = line
            .split(',')
            .map(|f| f.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Format(format!("box line {}: expected five non-negative integers", n + 1)))?;
        let [frame_index, x, y, width, height] = v[..] else {
            return Err(Error::Format(format!("box line {}: expected 5 fields, found {}", n + 1, v.len())));
        };
        boxes.push(FaceBox { frame_index, x, y, width, height });
    }
    Ok(boxes)
}

pub fn read_boxes(path: &Path) -> Result<Vec<FaceBox>> {
    let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    parse_boxes(&text).map_err(|e| e.context(path.display()))
}
