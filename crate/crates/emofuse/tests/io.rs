use std::path::Path;

use emofuse::checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
use emofuse::config::RunConfig;
use emofuse::image::{decode_image, export_pgm, parse_boxes, read_image, write_image};
use emofuse::manifest::{format_manifest, parse_manifest};
use emofuse::wav::{decode_wav, encode_wav, load_wav};
use emofuse_core::dsp::AudioClip;
use emofuse_core::model::init_model;
use emofuse_core::vision::{FaceBox, Image};
use emofuse_core::{Emotion, Error, Tensor};

fn wav_bytes(channels: u16, bits: u16, tag: u16, samples: &[i16]) -> Vec<u8> {
    let data_len = (samples.len() * 2) as u32;
    let mut b = Vec::new();
    b.extend_from_slice(b"RIFF");
    b.extend_from_slice(&(36 + data_len).to_le_bytes());
    b.extend_from_slice(b"WAVEfmt ");
    b.extend_from_slice(&16u32.to_le_bytes());
    b.extend_from_slice(&tag.to_le_bytes());
    b.extend_from_slice(&channels.to_le_bytes());
    b.extend_from_slice(&16_000u32.to_le_bytes());
    b.extend_from_slice(&(16_000 * 2 * channels as u32).to_le_bytes());
    b.extend_from_slice(&(2 * channels).to_le_bytes());
    b.extend_from_slice(&bits.to_le_bytes());
    b.extend_from_slice(b"LIST");
    b.extend_from_slice(&3u32.to_le_bytes());
    b.extend_from_slice(b"abc\0");
    b.extend_from_slice(b"data");
    b.extend_from_slice(&data_len.to_le_bytes());
    for s in samples {
        b.extend_from_slice(&s.to_le_bytes());
    }
    b
}

#[test]
fn silent_second_decodes_to_zeros() {
    let clip = decode_wav(&wav_bytes(1, 16, 1, &vec![0; 16_000])).unwrap();
    assert_eq!(clip.samples.len(), 16_000);
    assert_eq!(clip.sample_rate_hz, 16_000);
    assert!(clip.samples.iter().all(|&s| s == 0.0));
}

#[test]
fn stereo_is_averaged_and_scaled() {
    let clip = decode_wav(&wav_bytes(2, 16, 1, &[16384, -16384, 16384, -16384])).unwrap();
    assert_eq!(clip.samples, vec![0.0, 0.0]);
    let clip = decode_wav(&wav_bytes(1, 16, 1, &[16384, -32768])).unwrap();
    assert_eq!(clip.samples, vec![0.5, -1.0]);
}

#[test]
fn wav_errors_name_the_problem() {
    let mut truncated = wav_bytes(1, 16, 1, &[1, 2, 3, 4]);
    truncated.truncate(truncated.len() - 3);
    assert!(matches!(decode_wav(&truncated), Err(Error::Io(_))));
    assert!(matches!(decode_wav(b"RIFF"), Err(Error::Io(_))));
    match decode_wav(&wav_bytes(1, 24, 1, &[0, 0, 0])) {
        Err(Error::Format(m)) => assert!(m.contains("'fmt '"), "{m}"),
        other => panic!("{other:?}"),
    }
    match decode_wav(&wav_bytes(1, 16, 3, &[0])) {
        Err(Error::Format(m)) => assert!(m.contains("'fmt '") && m.contains("PCM"), "{m}"),
        other => panic!("{other:?}"),
    }
    assert!(matches!(decode_wav(b"RIFX\0\0\0\0WAVE"), Err(Error::Format(_))));
}

#[test]
fn wav_round_trip_and_missing_file() {
    let dir = tempfile::tempdir().unwrap();
    let clip = AudioClip::new(vec![0.0, 0.25, -0.5, 0.999, -1.0], 8_000).unwrap();
    let path = dir.path().join("a.wav");
    std::fs::write(&path, encode_wav(&clip)).unwrap();
    let back = load_wav(&path).unwrap();
    assert_eq!(back.sample_rate_hz, 8_000);
    for (a, b) in back.samples.iter().zip(&clip.samples) {
        assert!((a - b).abs() <= 0.5 / 32768.0);
    }
    match load_wav(&dir.path().join("missing.wav")) {
        Err(Error::Io(m)) => assert!(m.contains("missing.wav")),
        other => panic!("{other:?}"),
    }
}

#[test]
fn spectrogram_pgm_is_bottom_up_with_fixed_header() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.pgm");
    export_pgm(&Tensor::new(&[2, 2], vec![0.0, 1.0, 1.0, 0.0]).unwrap(), &path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(bytes, b"P5\n2 2\n255\n\xff\x00\x00\xff");

    export_pgm(&Tensor::full(&[1, 192, 120], 0.3), &path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    assert!(bytes.starts_with(b"P5\n120 192\n255\n"));
    assert_eq!(bytes.len(), 15 + 192 * 120);
    assert!(bytes[15..].iter().all(|&p| p == 0));
}

#[test]
fn images_decode_grey_colour_and_deep() {
    let grey = decode_image(b"P5\n# comment\n2 1\n255\n\x00\xff").unwrap();
    assert_eq!((grey.height, grey.width), (1, 2));
    assert_eq!(grey.data, vec![0.0, 1.0]);
    let colour = decode_image(b"P6 1 1 255\n\xff\x00\x00").unwrap();
    assert!((colour.data[0] - 0.299).abs() < 1e-12);
    let deep = decode_image(b"P5 1 1 65535\n\x80\x00").unwrap();
    assert!((deep.data[0] - 32768.0 / 65535.0).abs() < 1e-12);
    assert!(matches!(decode_image(b"P2 1 1 255\n0"), Err(Error::Format(_))));
    assert!(matches!(decode_image(b"P5 4 4 255\n\x00"), Err(Error::Io(_))));

    let dir = tempfile::tempdir().unwrap();
    let img = Image::new(2, 3, vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0]).unwrap();
    let path = dir.path().join("f.pgm");
    write_image(&img, &path).unwrap();
    let back = read_image(&path).unwrap();
    for (a, b) in back.data.iter().zip(&img.data) {
        assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
    }
}

#[test]
fn boxes_sidecar() {
    let boxes = parse_boxes("# f,x,y,w,h\n0,1,2,3,4\n\n5, 6, 7, 8, 9\n").unwrap();
    assert_eq!(boxes[1], FaceBox { frame_index: 5, x: 6, y: 7, width: 8, height: 9 });
    assert!(parse_boxes("1,2,3").is_err());
    assert!(parse_boxes("1,2,3,4,x").is_err());
}

#[test]
fn manifest_resolves_relative_paths() {
    let text = "clip_id\tactor_id\tlabel\tframes_path\taudio_path\tboxes_path\n\
                c1\tA\thappy\tc1/frames\tc1.wav\t\n\
                c2\tB\tSAD\t/abs/frames\t/abs/c2.wav\tc2.csv\n";
    let m = parse_manifest(text, Path::new("/data")).unwrap();
    let r = m.records();
    assert_eq!(r[0].label, Emotion::Happy);
    assert_eq!(r[0].frames_path, "/data/c1/frames");
    assert_eq!(r[0].boxes_path, None);
    assert_eq!(r[1].label, Emotion::Sad);
    assert_eq!(r[1].audio_path, "/abs/c2.wav");
    assert_eq!(r[1].boxes_path.as_deref(), Some("/data/c2.csv"));
    let again = parse_manifest(&format_manifest(r), Path::new("/elsewhere")).unwrap();
    assert_eq!(again, m);

    assert!(parse_manifest("c1\tA\tbored\tf\ta\n", Path::new(".")).is_err());
    assert!(parse_manifest("c1\tA\thappy\tf\n", Path::new(".")).is_err());
    assert!(parse_manifest("c1\tA\thappy\tf\ta\nc1\tB\tsad\tf\ta\n", Path::new(".")).is_err());
}

fn tiny_config() -> RunConfig {
    let mut c = RunConfig::default();
    c.apply_text(
        "n_frames=2\nframe_height=8\nframe_width=8\nspec_bins=8\nspec_frames=6\n\
         visual_convs=2k3s1p1+pool\naudio_convs=1k3s1p1+pool\nvisual_features=4\naudio_features=1\nhidden_len=3\nseed=9\n",
    )
    .unwrap();
    c
}

#[test]
fn checkpoint_round_trip_is_byte_exact() {
    let config = tiny_config();
    let mut model = init_model(&config.model_config()).unwrap();
    model.hidden.bias.data_mut()[0] = -0.1 / 3.0;
    model.output.bias.data_mut()[2] = f64::MIN_POSITIVE;
    let bytes = encode_checkpoint(&model, &config);
    let (back, back_config) = decode_checkpoint(&bytes).unwrap();
    assert_eq!(back, model);
    assert_eq!(back_config, config);
    assert_eq!(encode_checkpoint(&back, &back_config), bytes);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.bin");
    save_checkpoint(&model, &config, &path).unwrap();
    let (again, _) = load_checkpoint(&path).unwrap();
    assert_eq!(again, model);
}

#[test]
fn damaged_checkpoints_are_rejected() {
    let config = tiny_config();
    let model = init_model(&config.model_config()).unwrap();
    let bytes = encode_checkpoint(&model, &config);
    assert!(decode_checkpoint(&bytes[..bytes.len() - 1]).is_err());
    assert!(decode_checkpoint(b"garbage\n\n").is_err());
    let text = String::from_utf8_lossy(&bytes).replace("hidden_len=3", "hidden_len=4");
    let mut altered = text.as_bytes().to_vec();
    altered.truncate(bytes.len());
    assert!(decode_checkpoint(&altered).is_err());
}
