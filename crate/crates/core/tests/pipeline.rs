use proptest::prelude::*;
use slr_core::arch::{Architecture, ModelSpec};
use slr_core::data::{generate_synthetic, load_clip, load_dataset, PreprocessConfig};
use slr_core::eval::{classification_report, confusion_matrix, grade, top_k, Band, GradeResult};
use slr_core::modelio::{from_bytes, to_bytes, SavedModel};
use slr_core::train::{fit, TrainingConfig};
use slr_core::Rng;

fn small_cfg() -> PreprocessConfig {
    PreprocessConfig {
        target_height: 12,
        target_width: 12,
        channels: 1,
        sequence_length: 6,
    }
}

#[test]
fn synthesize_train_save_reload_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    generate_synthetic(dir.path(), 3, 5, 9, [16, 20], 4).unwrap();
    let cfg = small_cfg();
    let manifest = load_dataset(dir.path(), &cfg, 0.8, 4).unwrap();
    assert_eq!(manifest.class_names, ["sweep_left", "sweep_right", "sweep_up"]);
    assert_eq!((manifest.train.len(), manifest.eval.len()), (12, 3));

    for arch in Architecture::ALL {
        let spec = ModelSpec::build(arch, cfg.clip_shape(), 3, false).unwrap();
        let train = TrainingConfig {
            max_epochs: 3,
            min_epochs: 1,
            batch_size: 4,
            seed: 2,
            ..TrainingConfig::default()
        };
        let (params, history) = fit(&spec, &manifest, &train).unwrap();
        assert!(!history.records.is_empty() && history.records.len() <= 3);
        assert!(history.records.iter().all(|r| r.train_loss.is_finite() && r.val_loss.is_finite()));

        let model = SavedModel {
            spec,
            params,
            preprocess: cfg,
            class_names: manifest.class_names.clone(),
        };
        let bytes = to_bytes(&model).unwrap();
        assert_eq!(to_bytes(&model).unwrap(), bytes);
        let loaded = from_bytes(&bytes).unwrap();
        assert_eq!(loaded, model);

        let clip = load_clip(&dir.path().join("sweep_up").join("clip_004"), &cfg).unwrap();
        let a = model.spec.predict(&model.params, &clip).unwrap();
        let b = loaded.spec.predict(&loaded.params, &clip).unwrap();
        assert_eq!(a, b, "{arch}");
        assert!((a.data().iter().sum::<f32>() - 1.0).abs() < 1e-5);

        let truth: Vec<usize> = manifest.eval.iter().map(|s| s.label_index).collect();
        let pred: Vec<usize> = manifest
            .eval
            .iter()
            .map(|s| loaded.spec.predict(&loaded.params, &s.frames).unwrap().argmax())
            .collect();
        let report = classification_report(&confusion_matrix(&truth, &pred, 3).unwrap()).unwrap();
        assert_eq!(report.total, 3);
        assert_eq!(report.classes.iter().map(|c| c.support).sum::<u64>(), 3);
    }
}

fn probabilities(len: usize) -> impl Strategy<Value = Vec<f32>> {
    prop::collection::vec(0.001f32..1.0, len).prop_map(|v| {
        let s: f32 = v.iter().sum();
        v.into_iter().map(|x| x / s).collect()
    })
}

proptest! {
    #[test]
    fn grade_agrees_with_ranking(probs in (2usize..8).prop_flat_map(probabilities)) {
        let names: Vec<String> = (0..probs.len()).map(|i| format!("sign{i}")).collect();
        let r = GradeResult::new(&probs, &names).unwrap();
        let ranked = top_k(&probs, probs.len());
        prop_assert_eq!(&r.predicted_label, &names[ranked[0].0]);
        prop_assert_eq!(r.grade, (ranked[0].1 * 100.0) as i32);
        prop_assert_eq!(r.grade, grade(ranked[0].1));
        prop_assert_eq!(r.band, Band::from_grade(r.grade));
        let second = r.second_choice.clone().unwrap();
        prop_assert_eq!(second.0, names[ranked[1].0].clone());
        prop_assert!(second.1 <= r.grade);
        for w in ranked.windows(2) {
            prop_assert!(w[0].1 > w[1].1 || (w[0].1 == w[1].1 && w[0].0 < w[1].0));
        }
    }

    #[test]
    fn serialization_is_lossless_for_any_weights(seed in any::<u64>()) {
        let cfg = PreprocessConfig { target_height: 8, target_width: 8, channels: 1, sequence_length: 4 };
        let spec = ModelSpec::build(Architecture::CnnTd, cfg.clip_shape(), 2, true).unwrap();
        let params = spec.init_params(&mut Rng::new(seed)).unwrap();
        let model = SavedModel { spec, params, preprocess: cfg, class_names: vec!["a".into(), "b".into()] };
        let back = from_bytes(&to_bytes(&model).unwrap()).unwrap();
        for (p, q) in model.params.iter().zip(back.params.iter()) {
            prop_assert_eq!(&p.name, &q.name);
            prop_assert!(p.value.data().iter().zip(q.value.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }
}
