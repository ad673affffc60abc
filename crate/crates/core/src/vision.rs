//! Frame-sequence preprocessing for the visual branch: temporal sampling,
//! face cropping, resizing and seeded, temporally consistent augmentation.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{bail, Result};
use crate::tensor::Tensor;

/// Single-channel image with intensities in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Image> {
        if height == 0 || width == 0 || data.len() != height * width {
            bail!(
                Shape,
                "image {height}×{width} cannot hold {} values",
                data.len()
            );
        }
        Ok(Image { height, width, data })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Image {
        Image { height, width, data: vec![value; height * width] }
    }

    /// Luminance `0.299R + 0.587G + 0.114B` of interleaved RGB values.
    pub fn from_rgb(height: usize, width: usize, rgb: &[f64]) -> Result<Image> {
        if rgb.len() != 3 * height * width {
            bail!(Shape, "RGB buffer of {} values for {height}×{width}", rgb.len());
        }
        let data = rgb
            .chunks_exact(3)
            .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
            .collect();
        Image::new(height, width, data)
    }

    pub fn at(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Bilinear sample with edge replication outside the image.
    pub fn sample(&self, y: f64, x: f64) -> f64 {
        let (y0, y1, ty) = axis(y, self.height);
        let (x0, x1, tx) = axis(x, self.width);
        let top = lerp(self.at(y0, x0), self.at(y0, x1), tx);
        let bottom = lerp(self.at(y1, x0), self.at(y1, x1), tx);
        lerp(top, bottom, ty)
    }
}

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

/// Clamped neighbour indices and weight along one axis.
fn axis(pos: f64, extent: usize) -> (usize, usize, f64) {
    let max = (extent - 1) as f64;
    let p = pos.clamp(0.0, max);
    let lo = libm::floor(p) as usize;
    let hi = (lo + 1).min(extent - 1);
    (lo, hi, p - lo as f64)
}

/// Ordered frames sharing one resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    pub frames: Vec<Image>,
    pub source_fps: Option<f64>,
}

impl FrameSequence {
    pub fn new(frames: Vec<Image>, source_fps: Option<f64>) -> Result<FrameSequence> {
        let Some(first) = frames.first() else {
            bail!(Config, "a frame sequence needs at least one frame");
        };
        if let Some((i, f)) = frames
            .iter()
            .enumerate()
            .find(|(_, f)| f.height != first.height || f.width != first.width)
        {
            bail!(
                Shape,
                "frame {i} is {}×{}, expected {}×{}",
                f.height,
                f.width,
                first.height,
                first.width
            );
        }
        Ok(FrameSequence { frames, source_fps })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Face location in one source frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FaceBox {
    pub frame_index: usize,
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

impl FaceBox {
    pub fn check_inside(&self, frame: &Image) -> Result<()> {
        if self.width == 0
            || self.height == 0
            || self.x + self.width > frame.width
            || self.y + self.height > frame.height
        {
            bail!(
                Geometry,
                "box {}×{} at ({}, {}) for frame {} exceeds the {}×{} frame",
                self.width,
                self.height,
                self.x,
                self.y,
                self.frame_index,
                frame.width,
                frame.height
            );
        }
        Ok(())
    }
}

/// Target geometry of a visual sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StackShape {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
}

impl Default for StackShape {
    fn default() -> Self {
        StackShape { frames: 20, height: 98, width: 80 }
    }
}

impl StackShape {
    pub fn dims(&self) -> [usize; 3] {
        [self.frames, self.height, self.width]
    }
}

/// Indices `round(i·(T−1)/(n−1))`, rounding halves up; `[0]` when `n == 1`.
pub fn sample_indices(total: usize, n: usize) -> Result<Vec<usize>> {
    if n < 1 {
        bail!(Config, "number of sampled frames must be at least 1");
    }
    if total < 1 {
        bail!(Config, "cannot sample from an empty sequence");
    }
    if n == 1 {
        return Ok(vec![0]);
    }
    let (span, div) = (total - 1, n - 1);
    Ok((0..n).map(|i| (2 * i * span + div) / (2 * div)).collect())
}

/// `n` frames equally spaced over the sequence, endpoints included.
pub fn sample_frames(seq: &FrameSequence, n: usize) -> Result<FrameSequence> {
    let idx = sample_indices(seq.len(), n)?;
    Ok(FrameSequence {
        frames: idx.into_iter().map(|i| seq.frames[i].clone()).collect(),
        source_fps: seq.source_fps,
    })
}

/// Bilinear resize with half-pixel centres; at scale 1 it copies exactly.
pub fn resize_bilinear(img: &Image, height: usize, width: usize) -> Image {
    let sy = img.height as f64 / height as f64;
    let sx = img.width as f64 / width as f64;
    let mut data = Vec::with_capacity(height * width);
    for y in 0..height {
        let src_y = (y as f64 + 0.5) * sy - 0.5;
        for x in 0..width {
            data.push(img.sample(src_y, (x as f64 + 0.5) * sx - 0.5));
        }
    }
    Image { height, width, data }
}

/// Crops `face` and resizes it to `height × width`, clamping to `[0, 1]`.
pub fn crop_and_resize(frame: &Image, face: &FaceBox, height: usize, width: usize) -> Result<Image> {
    face.check_inside(frame)?;
    let mut crop = Vec::with_capacity(face.width * face.height);
    for y in face.y..face.y + face.height {
        crop.extend_from_slice(&frame.data[y * frame.width + face.x..y * frame.width + face.x + face.width]);
    }
    let crop = Image { height: face.height, width: face.width, data: crop };
    let mut out = resize_bilinear(&crop, height, width);
    for v in &mut out.data {
        *v = v.clamp(0.0, 1.0);
    }
    Ok(out)
}

/// Box for `frame_index`: an exact match, otherwise the nearest annotated
/// frame (the earlier one on ties).
pub fn box_for_frame(boxes: &[FaceBox], frame_index: usize) -> Option<&FaceBox> {
    boxes.iter().min_by_key(|b| {
        let d = b.frame_index.abs_diff(frame_index);
        (d, b.frame_index)
    })
}

/// Samples, crops and stacks a clip into a `frames × height × width` tensor.
/// Without boxes each whole frame is resized.
pub fn build_visual_stack(
    seq: &FrameSequence,
    boxes: Option<&[FaceBox]>,
    shape: &StackShape,
) -> Result<Tensor> {
    let idx = sample_indices(seq.len(), shape.frames)?;
    let mut data = Vec::with_capacity(shape.frames * shape.height * shape.width);
    for &i in &idx {
        let frame = &seq.frames[i];
        let face = match boxes {
            Some(list) => match box_for_frame(list, i) {
                Some(b) => crop_and_resize(frame, b, shape.height, shape.width)?,
                None => bail!(Geometry, "no face box available for frame {i}"),
            },
            None => {
                let mut img = resize_bilinear(frame, shape.height, shape.width);
                for v in &mut img.data {
                    *v = v.clamp(0.0, 1.0);
                }
                img
            }
        };
        data.extend_from_slice(&face.data);
    }
    Tensor::new(&shape.dims(), data)
}

// ---------------------------------------------------------------- augmentation

/// Ranges of the random label-preserving transforms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentConfig {
    pub max_rotation_deg: f64,
    /// Fraction of the frame area kept by the random crop.
    pub crop_area: f64,
    pub brightness_min: f64,
    pub brightness_max: f64,
    pub flip_probability: f64,
    /// Augmented copies made per clip in addition to the original.
    pub copies: usize,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            max_rotation_deg: 10.0,
            crop_area: 0.9,
            brightness_min: 0.7,
            brightness_max: 1.3,
            flip_probability: 0.5,
            copies: 30,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.max_rotation_deg >= 0.0 && self.max_rotation_deg <= 180.0) {
            bail!(Config, "rotation range must lie in [0, 180] degrees");
        }
        if !(self.crop_area > 0.0 && self.crop_area <= 1.0) {
            bail!(Config, "crop area must lie in (0, 1], got {}", self.crop_area);
        }
        if !(self.brightness_min >= 0.0 && self.brightness_min <= self.brightness_max) {
            bail!(
                Config,
                "brightness range [{}, {}] is invalid",
                self.brightness_min,
                self.brightness_max
            );
        }
        if !(0.0..=1.0).contains(&self.flip_probability) {
            bail!(Config, "flip probability must lie in [0, 1]");
        }
        Ok(())
    }
}

/// One concrete draw of transform parameters, shared by every frame of a clip.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    pub rotation_deg: f64,
    /// Side length of the crop relative to the frame.
    pub crop_scale: f64,
    /// Crop position within the free margin, `0` = top/left, `1` = bottom/right.
    pub crop_offset_y: f64,
    pub crop_offset_x: f64,
    pub brightness: f64,
    pub flip: bool,
}

impl AugmentParams {
    pub const IDENTITY: AugmentParams = AugmentParams {
        rotation_deg: 0.0,
        crop_scale: 1.0,
        crop_offset_y: 0.5,
        crop_offset_x: 0.5,
        brightness: 1.0,
        flip: false,
    };

    pub fn draw(config: &AugmentConfig, rng: &mut impl Rng) -> AugmentParams {
        let r = config.max_rotation_deg;
        let rotation_deg = if r > 0.0 { rng.gen_range(-r..=r) } else { 0.0 };
        let crop_offset_y = rng.gen_range(0.0..=1.0);
        let crop_offset_x = rng.gen_range(0.0..=1.0);
        let brightness = if config.brightness_max > config.brightness_min {
            rng.gen_range(config.brightness_min..=config.brightness_max)
        } else {
            config.brightness_min
        };
        let flip = rng.gen_bool(config.flip_probability);
        AugmentParams {
            rotation_deg,
            crop_scale: libm::sqrt(config.crop_area),
            crop_offset_y,
            crop_offset_x,
            brightness,
            flip,
        }
    }
}

/// Source coordinate for every output pixel: flip, then crop-and-rescale,
/// then rotation about the frame centre.
fn sampling_grid(height: usize, width: usize, p: &AugmentParams) -> Vec<(f64, f64)> {
    let (h, w) = (height as f64, width as f64);
    let crop_h = h * p.crop_scale;
    let crop_w = w * p.crop_scale;
    let origin_y = p.crop_offset_y * (h - crop_h);
    let origin_x = p.crop_offset_x * (w - crop_w);
    let (sy, sx) = (crop_h / h, crop_w / w);
    let (cy, cx) = ((h - 1.0) / 2.0, (w - 1.0) / 2.0);
    let theta = p.rotation_deg.to_radians();
    let (sin, cos) = (libm::sin(theta), libm::cos(theta));
    let mut grid = Vec::with_capacity(height * width);
    for y in 0..height {
        for x in 0..width {
            let xf = if p.flip { width - 1 - x } else { x };
            let yc = origin_y + (y as f64 + 0.5) * sy - 0.5;
            let xc = origin_x + (xf as f64 + 0.5) * sx - 0.5;
            let (dy, dx) = (yc - cy, xc - cx);
            grid.push((cy + (cos * dy - sin * dx), cx + (sin * dy + cos * dx)));
        }
    }
    grid
}

/// Applies one parameter set to every frame of a `frames × height × width` stack.
pub fn apply_augment(stack: &Tensor, params: &AugmentParams) -> Result<Tensor> {
    let [frames, height, width] = match stack.shape() {
        &[f, h, w] => [f, h, w],
        other => bail!(Shape, "visual stack must be rank 3, got {:?}", other),
    };
    let grid = sampling_grid(height, width, params);
    let plane = height * width;
    let mut out = Vec::with_capacity(stack.len());
    for f in 0..frames {
        let img = Image {
            height,
            width,
            data: stack.data()[f * plane..(f + 1) * plane].to_vec(),
        };
        out.extend(
            grid.iter()
                .map(|&(y, x)| (img.sample(y, x) * params.brightness).clamp(0.0, 1.0)),
        );
    }
    Tensor::new(stack.shape(), out)
}

/// Random rotation, crop, brightness and flip drawn from `seed`.
pub fn augment(stack: &Tensor, seed: u64, config: &AugmentConfig) -> Result<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = AugmentParams::draw(config, &mut rng);
    apply_augment(stack, &params)
}

/// The original stack followed by `config.copies` augmentations seeded
/// `base_seed + 1 ..= base_seed + copies`.
pub fn expand_dataset(stack: &Tensor, base_seed: u64, config: &AugmentConfig) -> Result<Vec<Tensor>> {
    config.validate()?;
    let mut out = Vec::with_capacity(config.copies + 1);
    out.push(stack.clone());
    for i in 1..=config.copies as u64 {
        out.push(augment(stack, base_seed.wrapping_add(i), config)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(h: usize, w: usize) -> Image {
        Image::new(h, w, (0..h * w).map(|i| i as f64 / (h * w) as f64).collect()).unwrap()
    }

    #[test]
    fn sampling_examples() {
        assert_eq!(sample_indices(20, 20).unwrap(), (0..20).collect::<Vec<_>>());
        assert_eq!(sample_indices(39, 20).unwrap(), (0..20).map(|i| 2 * i).collect::<Vec<_>>());
        assert_eq!(sample_indices(7, 1).unwrap(), vec![0]);
        assert!(sample_indices(5, 0).is_err());
    }

    #[test]
    fn short_sequences_repeat_monotonically() {
        // round(i·4/19) for i = 0..19, halves rounded up
        let want: Vec<usize> = (0..20)
            .map(|i| libm::floor(i as f64 * 4.0 / 19.0 + 0.5) as usize)
            .collect();
        let got = sample_indices(5, 20).unwrap();
        assert_eq!(got, want);
        assert!(got.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!((got[0], got[19]), (0, 4));
        for f in 0..5 {
            assert!(got.contains(&f));
        }
    }

    #[test]
    fn crop_at_unit_scale_is_exact() {
        let frame = ramp(120, 100);
        let face = FaceBox { frame_index: 0, x: 7, y: 11, width: 80, height: 98 };
        let out = crop_and_resize(&frame, &face, 98, 80).unwrap();
        for y in 0..98 {
            for x in 0..80 {
                assert_eq!(out.at(y, x), frame.at(y + 11, x + 7));
            }
        }
    }

    #[test]
    fn crop_of_constant_frame_is_constant() {
        let frame = Image::filled(50, 60, 0.42);
        let face = FaceBox { frame_index: 0, x: 3, y: 4, width: 17, height: 23 };
        let out = crop_and_resize(&frame, &face, 98, 80).unwrap();
        assert!(out.data.iter().all(|&v| v == 0.42));
    }

    #[test]
    fn checkerboard_upsampling_matches_bilinear_weights() {
        let board = Image::new(2, 2, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let face = FaceBox { frame_index: 0, x: 0, y: 0, width: 2, height: 2 };
        let out = crop_and_resize(&board, &face, 4, 4).unwrap();
        // half-pixel centres map outputs 0..4 to 0, 0.25, 0.75, 1 (clamped)
        let coords = [0.0, 0.25, 0.75, 1.0];
        for (i, &u) in coords.iter().enumerate() {
            for (j, &v) in coords.iter().enumerate() {
                let want = (1.0 - u) * v + u * (1.0 - v);
                assert!((out.at(i, j) - want).abs() < 1e-15, "({i}, {j})");
            }
        }
    }

    #[test]
    fn boxes_outside_the_frame_are_rejected() {
        let frame = Image::filled(10, 10, 0.0);
        let face = FaceBox { frame_index: 0, x: 5, y: 0, width: 6, height: 4 };
        assert!(matches!(crop_and_resize(&frame, &face, 4, 4), Err(crate::Error::Geometry(_))));
    }

    #[test]
    fn nearest_box_lookup() {
        let boxes = [
            FaceBox { frame_index: 0, x: 0, y: 0, width: 1, height: 1 },
            FaceBox { frame_index: 4, x: 1, y: 0, width: 1, height: 1 },
        ];
        assert_eq!(box_for_frame(&boxes, 4).unwrap().x, 1);
        assert_eq!(box_for_frame(&boxes, 2).unwrap().x, 0);
        assert_eq!(box_for_frame(&boxes, 3).unwrap().x, 1);
        assert!(box_for_frame(&[], 0).is_none());
    }

    #[test]
    fn luminance_weights() {
        let img = Image::from_rgb(1, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]).unwrap();
        assert!((img.data[0] - 0.299).abs() < 1e-15);
        assert!((img.data[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mixed_resolution_sequences_are_rejected() {
        let seq = FrameSequence::new(vec![Image::filled(2, 2, 0.0), Image::filled(2, 3, 0.0)], None);
        assert!(seq.is_err());
        assert!(FrameSequence::new(vec![], None).is_err());
    }

    fn stack() -> Tensor {
        Tensor::new(&[3, 12, 10], (0..360).map(|i| libm::sin(i as f64) * 0.5 + 0.5).collect()).unwrap()
    }

    #[test]
    fn identity_params_reproduce_the_stack() {
        let s = stack();
        assert_eq!(apply_augment(&s, &AugmentParams::IDENTITY).unwrap(), s);
    }

    #[test]
    fn double_flip_is_identity() {
        let s = stack();
        let flip = AugmentParams { flip: true, ..AugmentParams::IDENTITY };
        let once = apply_augment(&s, &flip).unwrap();
        assert_ne!(once, s);
        assert_eq!(apply_augment(&once, &flip).unwrap(), s);
    }

    #[test]
    fn augmentation_is_seeded_and_bounded() {
        let s = stack();
        let cfg = AugmentConfig::default();
        let a = augment(&s, 17, &cfg).unwrap();
        assert_eq!(a, augment(&s, 17, &cfg).unwrap());
        assert_ne!(a, augment(&s, 18, &cfg).unwrap());
        assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn expansion_keeps_the_original_first() {
        let s = stack();
        let cfg = AugmentConfig::default();
        let all = expand_dataset(&s, 5, &cfg).unwrap();
        assert_eq!(all.len(), 31);
        assert_eq!(all[0], s);
        assert_eq!(all[3], augment(&s, 8, &cfg).unwrap());
    }

    #[test]
    fn augment_config_validation() {
        assert!(AugmentConfig { crop_area: 0.0, ..AugmentConfig::default() }.validate().is_err());
        assert!(AugmentConfig { brightness_min: 2.0, ..AugmentConfig::default() }.validate().is_err());
        assert!(AugmentConfig { flip_probability: 1.5, ..AugmentConfig::default() }.validate().is_err());
    }
}
