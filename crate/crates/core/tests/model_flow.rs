use emofuse_core::autodiff::Graph;
use emofuse_core::model::{init_model, visual_only_variant, BranchConfig, ConvLayer, FusionModel, ModelConfig};
use emofuse_core::optim::{AdamConfig, AdamState};
use emofuse_core::train::{train_step, ClipSample, Example};
use emofuse_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small() -> ModelConfig {
    ModelConfig {
        n_frames: 4,
        visual_height: 12,
        visual_width: 10,
        audio_height: 16,
        audio_width: 8,
        visual: BranchConfig { convs: vec![ConvLayer::new(3, 3, 1), ConvLayer::new(4, 3, 1)], feature_len: 8 },
        audio: BranchConfig { convs: vec![ConvLayer::new(2, 3, 1)], feature_len: 2 },
        hidden_len: 6,
        n_classes: 6,
        use_audio: true,
        init_seed: 5,
    }
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap()
}

fn branch_grads(model: &FusionModel, visual: &Tensor, audio: &Tensor, seed_visual: bool) -> Vec<(String, bool)> {
    let mut g = Graph::new();
    let v = g.leaf(visual);
    let a = g.leaf(audio);
    let fwd = model.record(&mut g, v, Some(a)).unwrap();
    let features = if seed_visual { fwd.visual_features } else { fwd.audio_features.unwrap() };
    let loss = g.sum(features);
    let grads = g.backward(loss).unwrap();
    model
        .parameter_names()
        .into_iter()
        .zip(&fwd.params)
        .map(|(name, &p)| (name, grads.get(p).is_some_and(|d| d.iter().any(|&x| x != 0.0))))
        .collect()
}

#[test]
fn visual_features_ignore_the_audio_input() {
    let model = init_model(&small()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let visual = random(&mut rng, &[4, 12, 10]);
    let capture = |audio: &Tensor| {
        let mut g = Graph::new();
        let v = g.leaf(&visual);
        let a = g.leaf(audio);
        let fwd = model.record(&mut g, v, Some(a)).unwrap();
        let cls = g.value(fwd.classifier_input).to_vec();
        (g.value(fwd.visual_features).to_vec(), cls)
    };
    let (f1, c1) = capture(&random(&mut rng, &[1, 16, 8]));
    let (f2, c2) = capture(&random(&mut rng, &[1, 16, 8]));
    assert_eq!(f1, f2);
    assert_eq!(c1[..8], c2[..8]);
    assert_eq!(c1[..8], f1[..]);
    assert_ne!(c1[8..], c2[8..]);
}

#[test]
fn branch_losses_only_reach_their_own_branch() {
    let model = init_model(&small()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let visual = random(&mut rng, &[4, 12, 10]);
    let audio = random(&mut rng, &[1, 16, 8]);
    let from_visual = branch_grads(&model, &visual, &audio, true);
    assert!(from_visual.iter().any(|(n, t)| *t && n == "visual.fc.weight"));
    for (name, touched) in from_visual {
        assert!(!touched || name.starts_with("visual."), "{name}");
    }
    let from_audio = branch_grads(&model, &visual, &audio, false);
    assert!(from_audio.iter().any(|(n, t)| *t && n == "audio.fc.weight"));
    for (name, touched) in branch_grads(&model, &visual, &audio, false) {
        assert!(!touched || name.starts_with("audio."), "{name}");
    }
}

#[test]
fn video_only_training_leaves_no_audio_parameters() {
    let model = visual_only_variant(&small()).unwrap();
    assert!(model.parameter_names().iter().all(|n| !n.starts_with("audio.")));
    assert_eq!(model.config.classifier_input_len(), 8);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut g = Graph::new();
    let visual = random(&mut rng, &[4, 12, 10]);
    let v = g.leaf(&visual);
    let fwd = model.record(&mut g, v, None).unwrap();
    assert!(fwd.audio_features.is_none());
    assert_eq!(g.shape(fwd.classifier_input), &[8]);
}

#[test]
fn default_model_feature_widths() {
    let model = init_model(&ModelConfig::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let stack = random(&mut rng, &[20, 98, 80]);
    let spec = random(&mut rng, &[1, 192, 120]);
    assert_eq!(model.forward_visual(&stack).unwrap().shape(), &[256]);
    assert_eq!(model.forward_audio(&spec).unwrap().shape(), &[64]);
    let p = model.predict(&stack, Some(&spec)).unwrap();
    assert_eq!(p.probabilities.len(), 6);
    assert!((p.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert!(p.probabilities.iter().all(|&q| q > 0.0));
    let video = visual_only_variant(&ModelConfig::default()).unwrap();
    assert_eq!(video.config.classifier_input_len(), 256);
    assert_eq!(video.output.weight.shape(), &[6, 128]);
}

#[test]
fn overfit_single_sample_predicts_its_label() {
    let mut model = init_model(&small()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let sample = ClipSample { visual: random(&mut rng, &[4, 12, 10]), audio: Some(random(&mut rng, &[1, 16, 8])), label: 4 };
    let config = AdamConfig { learning_rate: 1e-2, ..AdamConfig::default() };
    let mut adam = AdamState::new(config, model.parameters().into_iter().map(|(_, t)| t)).unwrap();
    for _ in 0..100 {
        train_step(&mut model, &mut adam, &[Example::from(&sample)]).unwrap();
    }
    let p = model.predict(&sample.visual, sample.audio.as_ref()).unwrap();
    assert_eq!(p.label, 4);
    assert!(p.probabilities[4] > 0.99, "{:?}", p.probabilities);
}
