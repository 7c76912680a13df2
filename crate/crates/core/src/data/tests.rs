use std::fs;
use std::path::Path;

use proptest::prelude::*;

use super::*;

fn gray(h: usize, w: usize, samples: Vec<u8>) -> Image {
    Image::new(h, w, 1, samples).unwrap()
}

fn cfg(h: usize, w: usize, channels: usize, t: usize) -> PreprocessConfig {
    PreprocessConfig {
        target_height: h,
        target_width: w,
        channels,
        sequence_length: t,
    }
}

#[test]
fn white_color_pixel_is_one() {
    let img = Image::new(1, 1, 3, vec![255, 255, 255]).unwrap();
    assert_eq!(preprocess_frame(&img, &cfg(1, 1, 1, 1)).data(), &[1.0]);
}

#[test]
fn luma_is_rounded_before_scaling() {
    // 0.299*10 + 0.587*20 + 0.114*30 = 18.15
    let img = Image::new(1, 1, 3, vec![10, 20, 30]).unwrap();
    assert_eq!(preprocess_frame(&img, &cfg(1, 1, 1, 1)).data(), &[(18.0f64 / 255.0) as f32]);
}

#[test]
fn gray_replicates_to_color() {
    let img = gray(1, 1, vec![51]);
    assert_eq!(preprocess_frame(&img, &cfg(1, 1, 3, 1)).data(), &[0.2, 0.2, 0.2]);
}

#[test]
fn same_extent_resize_is_identity() {
    let samples: Vec<u8> = (0..12).map(|i| i * 20).collect();
    let img = gray(3, 4, samples.clone());
    let out = preprocess_frame(&img, &cfg(3, 4, 1, 1));
    let expect: Vec<f32> = samples.iter().map(|&s| (s as f64 / 255.0) as f32).collect();
    assert_eq!(out.data(), expect.as_slice());
}

#[test]
fn half_pixel_bilinear_downsample() {
    // 2x2 -> 1x1 samples source (0.5, 0.5): the mean of the rows 0 and 255.
    let img = gray(2, 2, vec![0, 0, 255, 255]);
    assert_eq!(preprocess_frame(&img, &cfg(1, 1, 1, 1)).data(), &[0.5]);
}

#[test]
fn upsample_clamps_at_the_border() {
    // 1x2 -> 1x4: sources -0.25 (clamped to 0), 0.25, 0.75, 1.25 (clamped to 1).
    let img = gray(1, 2, vec![0, 100]);
    let out = preprocess_frame(&img, &cfg(1, 4, 1, 1));
    let expect: Vec<f32> = [0.0, 25.0, 75.0, 100.0].iter().map(|v: &f64| (v / 255.0) as f32).collect();
    assert_eq!(out.data(), expect.as_slice());
}

fn numbered_frames(t: usize) -> Vec<Tensor> {
    (0..t).map(|i| Tensor::full([1, 1, 1], i as f32)).collect()
}

fn frame_ids(clip: &Tensor) -> Vec<usize> {
    clip.data().iter().map(|&v| v as usize).collect()
}

#[test]
fn normalize_sequence_rules() {
    let same = normalize_sequence(&numbered_frames(35), 35).unwrap();
    assert_eq!(same.shape(), &[35, 1, 1, 1]);
    assert_eq!(frame_ids(&same), (0..35).collect::<Vec<_>>());

    let long = normalize_sequence(&numbered_frames(70), 35).unwrap();
    assert_eq!(frame_ids(&long), (0..35).map(|k| 2 * k).collect::<Vec<_>>());

    let short = normalize_sequence(&numbered_frames(20), 35).unwrap();
    let mut expect: Vec<usize> = (0..20).collect();
    expect.extend([19; 15]);
    assert_eq!(frame_ids(&short), expect);

    assert!(normalize_sequence(&[], 35).is_err());
}

#[test]
fn split_counts() {
    assert_eq!(train_count(20, 0.8), 16);
    assert_eq!(train_count(10, 0.8), 8);
    for n in 0..500 {
        assert_eq!(train_count(n, 0.8), 4 * n / 5, "n = {n}");
    }
}

proptest! {
    #[test]
    fn normalize_sequence_is_idempotent(t in 1usize..90, l in 1usize..50) {
        let once = normalize_sequence(&numbered_frames(t), l).unwrap();
        let frames: Vec<Tensor> = (0..l).map(|i| once.index(i).unwrap()).collect();
        let twice = normalize_sequence(&frames, l).unwrap();
        prop_assert_eq!(once, twice);
    }
}

fn write_clip(dir: &Path, frames: &[Image]) {
    fs::create_dir_all(dir).unwrap();
    for (k, f) in frames.iter().enumerate() {
        fs::write(dir.join(format!("frame_{k:03}.pgm")), f.encode()).unwrap();
    }
}

#[test]
fn synthetic_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let n = generate_synthetic(dir.path(), 3, 10, 6, [16, 16], 7).unwrap();
    assert_eq!(n, 30);
    let c = cfg(16, 16, 1, 8);
    let m = load_dataset(dir.path(), &c, 0.8, 3).unwrap();
    assert_eq!(m.class_names, vec!["sweep_left", "sweep_right", "sweep_up"]);
    assert_eq!((m.train.len(), m.eval.len()), (24, 6));
    for class in 0..3 {
        assert_eq!(m.train.iter().filter(|s| s.label_index == class).count(), 8);
        assert_eq!(m.eval.iter().filter(|s| s.label_index == class).count(), 2);
    }
    for s in m.train.iter().chain(&m.eval) {
        assert_eq!(s.frames.shape(), &[8, 16, 16, 1]);
        assert!(s.frames.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
    for e in &m.eval {
        assert!(m.train.iter().all(|t| t.clip_id != e.clip_id));
    }
    assert_eq!(m, load_dataset(dir.path(), &c, 0.8, 3).unwrap());
    let other = load_dataset(dir.path(), &c, 0.8, 4).unwrap();
    assert_ne!(
        m.eval.iter().map(|s| &s.clip_id).collect::<Vec<_>>(),
        other.eval.iter().map(|s| &s.clip_id).collect::<Vec<_>>()
    );
}

#[test]
fn synthetic_corpus_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    generate_synthetic(a.path(), 2, 2, 3, [8, 8], 11).unwrap();
    generate_synthetic(b.path(), 2, 2, 3, [8, 8], 11).unwrap();
    for class in &PATTERNS[..2] {
        for clip in ["clip_000", "clip_001"] {
            for k in 0..3 {
                let rel = Path::new(class).join(clip).join(format!("frame_{k:03}.pgm"));
                assert_eq!(fs::read(a.path().join(&rel)).unwrap(), fs::read(b.path().join(&rel)).unwrap());
            }
        }
    }
}

#[test]
fn synthetic_rejects_too_many_classes() {
    let dir = tempfile::tempdir().unwrap();
    assert!(generate_synthetic(dir.path(), 9, 1, 1, [8, 8], 0).is_err());
}

#[test]
fn frame_order_is_lexicographic_not_write_order() {
    let dir = tempfile::tempdir().unwrap();
    let frames: Vec<Image> = (0..4).map(|i| gray(2, 2, vec![i * 60; 4])).collect();
    write_clip(&dir.path().join("a"), &frames);
    let reversed = dir.path().join("b");
    fs::create_dir_all(&reversed).unwrap();
    for (k, f) in frames.iter().enumerate().rev() {
        fs::write(reversed.join(format!("frame_{k:03}.pgm")), f.encode()).unwrap();
    }
    let c = cfg(2, 2, 1, 4);
    assert_eq!(load_clip(&dir.path().join("a"), &c).unwrap(), load_clip(&reversed, &c).unwrap());
}

#[test]
fn dataset_errors() {
    let c = cfg(2, 2, 1, 2);
    let frame = gray(2, 2, vec![0; 4]);

    let empty_class = tempfile::tempdir().unwrap();
    write_clip(&empty_class.path().join("a/clip"), std::slice::from_ref(&frame));
    fs::create_dir_all(empty_class.path().join("b")).unwrap();
    let err = load_dataset(empty_class.path(), &c, 0.8, 0).unwrap_err().to_string();
    assert!(err.contains("class `b` has no clips"), "{err}");

    let no_frames = tempfile::tempdir().unwrap();
    fs::create_dir_all(no_frames.path().join("a/clip")).unwrap();
    fs::write(no_frames.path().join("a/clip/notes.txt"), "x").unwrap();
    let err = load_dataset(no_frames.path(), &c, 0.8, 0).unwrap_err().to_string();
    assert!(err.contains("has no frames"), "{err}");

    let bad_frame = tempfile::tempdir().unwrap();
    write_clip(&bad_frame.path().join("a/clip"), &[frame]);
    fs::write(bad_frame.path().join("a/clip/frame_001.pgm"), b"P5\n2 2\n255\n\0").unwrap();
    let err = load_dataset(bad_frame.path(), &c, 0.8, 0).unwrap_err().to_string();
    assert!(err.contains("truncated payload"), "{err}");

    assert!(load_dataset(Path::new("/nonexistent/slr"), &c, 0.8, 0).is_err());
}
