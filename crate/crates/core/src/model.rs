//! The fusion network: a convolutional visual branch over the stacked face
//! frames, a shallower convolutional audio branch over the spectrogram,
//! concatenation of their feature vectors (visual first) and a two-layer
//! fully connected classifier producing one score per emotion.
//!
//! Frames enter the visual branch as input channels of a single 2-D
//! convolution stack, so temporal structure is mixed in the first layer.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{Graph, Var};
use crate::error::{bail, Result};
use crate::ops;
use crate::tensor::Tensor;
use crate::Emotion;

/// One convolution (+ ReLU, + optional 2×2 max-pool) stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvLayer {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub pool: bool,
}

impl ConvLayer {
    pub const fn new(out_channels: usize, kernel: usize, padding: usize) -> ConvLayer {
        ConvLayer { out_channels, kernel, stride: 1, padding, pool: true }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BranchConfig {
    pub convs: Vec<ConvLayer>,
    pub feature_len: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    pub n_frames: usize,
    pub visual_height: usize,
    pub visual_width: usize,
    pub audio_height: usize,
    pub audio_width: usize,
    pub visual: BranchConfig,
    pub audio: BranchConfig,
    pub hidden_len: usize,
    pub n_classes: usize,
    /// `false` builds the video-only variant without an audio branch.
    pub use_audio: bool,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            n_frames: 20,
            visual_height: 98,
            visual_width: 80,
            audio_height: 192,
            audio_width: 120,
            visual: BranchConfig {
                convs: alloc::vec![
                    ConvLayer { stride: 2, ..ConvLayer::new(32, 5, 2) },
                    ConvLayer::new(64, 5, 2),
                    ConvLayer::new(96, 3, 1),
                ],
                feature_len: 256,
            },
            audio: BranchConfig {
                convs: alloc::vec![ConvLayer { stride: 2, ..ConvLayer::new(16, 5, 2) }, ConvLayer::new(32, 3, 1)],
                feature_len: 64,
            },
            hidden_len: 128,
            n_classes: Emotion::COUNT,
            use_audio: true,
            init_seed: 0,
        }
    }
}

/// Spatial extents after each stage; errors when a stage does not fit.
fn branch_dims(input: [usize; 3], branch: &BranchConfig, which: &str) -> Result<[usize; 3]> {
    let [mut c, mut h, mut w] = input;
    for (i, layer) in branch.convs.iter().enumerate() {
        if layer.out_channels == 0 || layer.stride == 0 || layer.kernel % 2 == 0 {
            bail!(
                Config,
                "{which} conv{i}: channels and stride must be positive and the kernel odd"
            );
        }
        if h + 2 * layer.padding < layer.kernel || w + 2 * layer.padding < layer.kernel {
            bail!(Config, "{which} conv{i}: kernel {} does not fit {h}×{w}", layer.kernel);
        }
        h = (h + 2 * layer.padding - layer.kernel) / layer.stride + 1;
        w = (w + 2 * layer.padding - layer.kernel) / layer.stride + 1;
        c = layer.out_channels;
        if layer.pool {
            if h < 2 || w < 2 {
                bail!(Config, "{which} conv{i}: {h}×{w} too small to pool");
            }
            h /= 2;
            w /= 2;
        }
    }
    Ok([c, h, w])
}

impl ModelConfig {
    pub fn visual_input(&self) -> [usize; 3] {
        [self.n_frames, self.visual_height, self.visual_width]
    }

    pub fn audio_input(&self) -> [usize; 3] {
        [1, self.audio_height, self.audio_width]
    }

    pub fn visual_flat_len(&self) -> Result<usize> {
        Ok(branch_dims(self.visual_input(), &self.visual, "visual")?.iter().product())
    }

    pub fn audio_flat_len(&self) -> Result<usize> {
        Ok(branch_dims(self.audio_input(), &self.audio, "audio")?.iter().product())
    }

    pub fn classifier_input_len(&self) -> usize {
        self.visual.feature_len + if self.use_audio { self.audio.feature_len } else { 0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            bail!(Config, "need at least two classes, got {}", self.n_classes);
        }
        if [self.n_frames, self.visual_height, self.visual_width, self.hidden_len, self.visual.feature_len]
            .contains(&0)
        {
            bail!(Config, "visual extents, hidden width and feature length must be positive");
        }
        self.visual_flat_len()?;
        if self.use_audio {
            if self.audio_height == 0 || self.audio_width == 0 || self.audio.feature_len == 0 {
                bail!(Config, "audio extents and feature length must be positive");
            }
            if self.visual.feature_len != 4 * self.audio.feature_len {
                bail!(
                    Config,
                    "visual features ({}) must be four times the audio features ({})",
                    self.visual.feature_len,
                    self.audio.feature_len
                );
            }
            self.audio_flat_len()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv {
    pub layer: ConvLayer,
    pub kernels: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub convs: Vec<Conv>,
    pub fc: Dense,
}

impl Branch {
    fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.convs
            .iter()
            .flat_map(|c| [&c.kernels, &c.bias])
            .chain([&self.fc.weight, &self.fc.bias])
    }

    fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.convs
            .iter_mut()
            .flat_map(|c| [&mut c.kernels, &mut c.bias])
            .chain([&mut self.fc.weight, &mut self.fc.bias])
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().map(Tensor::len).sum()
    }

    fn record<'a>(&'a self, g: &mut Graph<'a>, input: Var, params: &mut Vec<Var>) -> Result<Var> {
        let mut x = input;
        for conv in &self.convs {
            let k = g.leaf(&conv.kernels);
            let b = g.leaf(&conv.bias);
            params.extend([k, b]);
            x = g.conv2d(x, k, b, conv.layer.stride, conv.layer.padding)?;
            x = g.relu(x);
            if conv.layer.pool {
                x = g.maxpool2d(x, 2, 2)?;
            }
        }
        let flat = g.flatten(x);
        let w = g.leaf(&self.fc.weight);
        let b = g.leaf(&self.fc.bias);
        params.extend([w, b]);
        let y = g.linear(flat, w, b)?;
        Ok(g.relu(y))
    }
}

struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    fn he(&mut self, shape: &[usize], fan_in: usize) -> Tensor {
        let normal = Normal::new(0.0, libm::sqrt(2.0 / fan_in as f64)).expect("positive std");
        let count = shape.iter().product();
        let data = (0..count).map(|_| normal.sample(&mut self.rng)).collect();
        Tensor::new(shape, data).expect("valid shape").with_grad()
    }

    fn zeros(&mut self, len: usize) -> Tensor {
        Tensor::zeros(&[len]).with_grad()
    }

    fn dense(&mut self, out: usize, inp: usize) -> Dense {
        Dense { weight: self.he(&[out, inp], inp), bias: self.zeros(out) }
    }

    fn branch(&mut self, in_channels: usize, cfg: &BranchConfig, flat: usize) -> Branch {
        let mut c = in_channels;
        let mut convs = Vec::new();
        for layer in &cfg.convs {
            let fan_in = c * layer.kernel * layer.kernel;
            convs.push(Conv {
                layer: *layer,
                kernels: self.he(&[layer.out_channels, c, layer.kernel, layer.kernel], fan_in),
                bias: self.zeros(layer.out_channels),
            });
            c = layer.out_channels;
        }
        Branch { convs, fc: self.dense(cfg.feature_len, flat) }
    }
}

/// Network parameters together with the configuration that shaped them.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionModel {
    pub config: ModelConfig,
    pub visual: Branch,
    pub audio: Option<Branch>,
    pub hidden: Dense,
    pub output: Dense,
}

/// Values recorded by one forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    pub visual_features: Var,
    pub audio_features: Option<Var>,
    pub classifier_input: Var,
    pub scores: Var,
    /// Parameter leaves in [`FusionModel::parameters`] order.
    pub params: Vec<Var>,
}

/// Softmax output of the classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub probabilities: Vec<f64>,
    /// Most probable class, lowest index on ties.
    pub label: usize,
}

impl Prediction {
    pub fn emotion(&self) -> Option<Emotion> {
        Emotion::from_index(self.label)
    }
}

/// He-normal weights (std `sqrt(2/fan_in)`) and zero biases, drawn from a
/// generator seeded by `config.init_seed` in parameter order.
pub fn init_model(config: &ModelConfig) -> Result<FusionModel> {
    config.validate()?;
    let mut init = Init { rng: ChaCha8Rng::seed_from_u64(config.init_seed) };
    let visual = init.branch(config.n_frames, &config.visual, config.visual_flat_len()?);
    let audio = if config.use_audio {
        Some(init.branch(1, &config.audio, config.audio_flat_len()?))
    } else {
        None
    };
    let hidden = init.dense(config.hidden_len, config.classifier_input_len());
    let output = init.dense(config.n_classes, config.hidden_len);
    Ok(FusionModel { config: config.clone(), visual, audio, hidden, output })
}

/// The same network with the audio branch removed; the classifier sees
/// only the visual features.
pub fn visual_only_variant(config: &ModelConfig) -> Result<FusionModel> {
    init_model(&ModelConfig { use_audio: false, ..config.clone() })
}

impl FusionModel {
    pub fn uses_audio(&self) -> bool {
        self.audio.is_some()
    }

    /// Parameter names in a fixed order, e.g. `visual.conv0.weight`.
    pub fn parameter_names(&self) -> Vec<String> {
        fn branch(prefix: &str, b: &Branch, out: &mut Vec<String>) {
            for i in 0..b.convs.len() {
                out.push(format!("{prefix}.conv{i}.weight"));
                out.push(format!("{prefix}.conv{i}.bias"));
            }
            out.push(format!("{prefix}.fc.weight"));
            out.push(format!("{prefix}.fc.bias"));
        }
        let mut names = Vec::new();
        branch("visual", &self.visual, &mut names);
        if let Some(a) = &self.audio {
            branch("audio", a, &mut names);
        }
        for n in ["hidden.weight", "hidden.bias", "output.weight", "output.bias"] {
            names.push(format!("classifier.{n}"));
        }
        names
    }

    /// Named parameters in a fixed order.
    pub fn parameters(&self) -> Vec<(String, &Tensor)> {
        self.parameter_names().into_iter().zip(self.tensors()).collect()
    }

    fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.visual
            .tensors()
            .chain(self.audio.iter().flat_map(Branch::tensors))
            .chain([&self.hidden.weight, &self.hidden.bias, &self.output.weight, &self.output.bias])
    }

    /// Parameters in [`Self::parameters`] order.
    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = self.visual.tensors_mut().collect();
        if let Some(a) = self.audio.as_mut() {
            out.extend(a.tensors_mut());
        }
        out.extend([
            &mut self.hidden.weight,
            &mut self.hidden.bias,
            &mut self.output.weight,
            &mut self.output.bias,
        ]);
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().map(Tensor::len).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in self.parameters_mut() {
            p.zero_grad();
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().all(Tensor::is_finite)
    }

    fn check_visual(&self, stack: &[usize]) -> Result<()> {
        if stack != self.config.visual_input() {
            bail!(
                Shape,
                "visual input must be {:?}, got {:?}",
                self.config.visual_input(),
                stack
            );
        }
        Ok(())
    }

    fn check_audio(&self, spec: &[usize]) -> Result<()> {
        if spec != self.config.audio_input() {
            bail!(
                Shape,
                "audio input must be {:?}, got {:?}",
                self.config.audio_input(),
                spec
            );
        }
        Ok(())
    }

    /// Records the full network on `g`. `audio` must be present exactly when
    /// the model has an audio branch.
    pub fn record<'a>(&'a self, g: &mut Graph<'a>, visual: Var, audio: Option<Var>) -> Result<Forward> {
        self.check_visual(g.shape(visual))?;
        let mut params = Vec::new();
        let visual_features = self.visual.record(g, visual, &mut params)?;
        let audio_features = match (&self.audio, audio) {
            (Some(branch), Some(a)) => {
                self.check_audio(g.shape(a))?;
                Some(branch.record(g, a, &mut params)?)
            }
            (None, None) => None,
            (Some(_), None) => bail!(
                Usage,
                "this model fuses audio and video but no spectrogram was supplied"
            ),
            (None, Some(_)) => bail!(
                Usage,
                "this is a video-only model and cannot take a spectrogram"
            ),
        };
        let classifier_input = match audio_features {
            Some(a) => g.concat(&[visual_features, a])?,
            None => visual_features,
        };
        let (hw, hb) = (g.leaf(&self.hidden.weight), g.leaf(&self.hidden.bias));
        let (ow, ob) = (g.leaf(&self.output.weight), g.leaf(&self.output.bias));
        params.extend([hw, hb, ow, ob]);
        let h = g.linear(classifier_input, hw, hb)?;
        let h = g.relu(h);
        let scores = g.linear(h, ow, ob)?;
        Ok(Forward { visual_features, audio_features, classifier_input, scores, params })
    }

    /// Visual feature vector for a `frames × height × width` stack.
    pub fn forward_visual(&self, stack: &Tensor) -> Result<Tensor> {
        self.check_visual(stack.shape())?;
        let mut g = Graph::new();
        let x = g.leaf(stack);
        let f = self.visual.record(&mut g, x, &mut Vec::new())?;
        Ok(g.tensor(f))
    }

    /// Audio feature vector for a `1 × bins × frames` spectrogram.
    pub fn forward_audio(&self, spec: &Tensor) -> Result<Tensor> {
        let Some(branch) = &self.audio else {
            bail!(Usage, "video-only model has no audio branch");
        };
        self.check_audio(spec.shape())?;
        let mut g = Graph::new();
        let x = g.leaf(spec);
        let f = branch.record(&mut g, x, &mut Vec::new())?;
        Ok(g.tensor(f))
    }

    /// Raw class scores.
    pub fn forward_fused(&self, stack: &Tensor, spec: Option<&Tensor>) -> Result<Tensor> {
        let mut g = Graph::new();
        let v = g.leaf(stack);
        let a = spec.map(|s| g.leaf(s));
        let fwd = self.record(&mut g, v, a)?;
        Ok(g.tensor(fwd.scores))
    }

    pub fn predict(&self, stack: &Tensor, spec: Option<&Tensor>) -> Result<Prediction> {
        let scores = self.forward_fused(stack, spec)?;
        let probabilities = ops::softmax(&scores)?.into_data();
        let label = crate::tensor::argmax(&probabilities);
        Ok(Prediction { probabilities, label })
    }
}
