use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use slr_core::arch::{param_count, Architecture, ModelSpec};
use slr_core::data::{generate_synthetic, load_clip, load_dataset, ClipSample, PreprocessConfig};
use slr_core::eval::{self, classification_report, confusion_matrix, render_matrix, render_report, top_k, GradeResult};
use slr_core::modelio::{load_model, save_model, SavedModel};
use slr_core::train::{fit_from, format_g6, initial_params, EpochRecord, TrainingConfig};

use crate::{EvaluateArgs, GradeArgs, PredictArgs, SplitArg, SynthArgs, TrainArgs};

pub fn synth(args: &SynthArgs) -> Result<()> {
    let (h, w) = args.size;
    let n = generate_synthetic(
        &args.out,
        args.classes as usize,
        args.clips_per_class as usize,
        args.frames as usize,
        [h, w],
        args.seed,
    )?;
    println!("wrote {n} clips to {}", args.out.display());
    Ok(())
}

fn epoch_line(r: &EpochRecord, max_epochs: u64) -> String {
    format!(
        "epoch {}/{}: loss {} accuracy {} val_loss {} val_accuracy {}",
        r.epoch,
        max_epochs,
        format_g6(r.train_loss),
        format_g6(r.train_accuracy),
        format_g6(r.val_loss),
        format_g6(r.val_accuracy)
    )
}

pub fn train(args: &TrainArgs) -> Result<()> {
    let preprocess = PreprocessConfig {
        target_height: args.size.0,
        target_width: args.size.1,
        channels: args.channels,
        sequence_length: args.frames,
    };
    let manifest = load_dataset(&args.data, &preprocess, args.split, args.seed)?;
    let architecture = Architecture::from(args.arch);
    let spec = ModelSpec::build(
        architecture,
        preprocess.clip_shape(),
        manifest.class_names.len(),
        args.unfreeze_features,
    )?;
    let cfg = TrainingConfig {
        max_epochs: args.epochs as usize,
        min_epochs: args.min_epochs.min(args.epochs) as usize,
        batch_size: args.batch_size as usize,
        learning_rate: args.lr,
        patience: args.patience as usize,
        validation_split: args.val_split,
        seed: args.seed,
        shuffle: true,
    };
    eprintln!(
        "training {architecture} on {} clips ({} classes, {} trainable parameters)",
        manifest.train.len(),
        manifest.class_names.len(),
        param_count(&spec, true)?
    );
    let params = initial_params(&spec, &cfg)?;
    let (params, history) = fit_from(&spec, params, &manifest.train, &cfg, |r| eprintln!("{}", epoch_line(r, args.epochs)))?;
    let last = history.records.last().context("training ran no epochs")?;
    println!("{}", epoch_line(last, args.epochs));
    if history.stopped_early {
        println!("stopped early; best validation loss at epoch {}", history.best_epoch);
    }
    let model = SavedModel {
        spec,
        params,
        preprocess,
        class_names: manifest.class_names,
    };
    save_model(&model, &args.out)?;
    if let Some(path) = &args.history {
        write(path, &history.to_csv())?;
    }
    println!("saved model to {}", args.out.display());
    Ok(())
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

pub fn evaluate(args: &EvaluateArgs) -> Result<()> {
    let model = load_model(&args.model)?;
    let manifest = load_dataset(&args.data, &model.preprocess, args.split, args.seed)?;
    if manifest.class_names != model.class_names {
        bail!(
            "dataset classes {:?} do not match the model's {:?}",
            manifest.class_names,
            model.class_names
        );
    }
    let samples: Vec<&ClipSample> = match args.on {
        SplitArg::Train => manifest.train.iter().collect(),
        SplitArg::Eval => manifest.eval.iter().collect(),
        SplitArg::All => manifest.train.iter().chain(&manifest.eval).collect(),
    };
    if samples.is_empty() {
        bail!("the selected split of {} is empty", args.data.display());
    }
    let mut truth = Vec::with_capacity(samples.len());
    let mut pred = Vec::with_capacity(samples.len());
    for s in samples {
        let probs = model.spec.predict(&model.params, &s.frames)?;
        truth.push(s.label_index);
        pred.push(probs.argmax());
    }
    let cm = confusion_matrix(&truth, &pred, model.class_names.len())?.with_names(model.class_names.clone())?;
    let report = render_report(&classification_report(&cm)?);
    print!("{report}");
    if let Some(path) = &args.report {
        write(path, &report)?;
    }
    if let Some(path) = &args.matrix {
        write(path, &render_matrix(&cm))?;
    }
    Ok(())
}

fn clip_probabilities(model: &SavedModel, clip: &Path) -> Result<Vec<f32>> {
    let frames = load_clip(clip, &model.preprocess)?;
    Ok(model.spec.predict(&model.params, &frames)?.into_data())
}

pub fn predict(args: &PredictArgs) -> Result<()> {
    let model = load_model(&args.model)?;
    let probs = clip_probabilities(&model, &args.clip)?;
    for (i, p) in top_k(&probs, args.top) {
        println!("{} {}%", model.class_names[i], eval::grade(p));
    }
    Ok(())
}

pub fn grade(args: &GradeArgs) -> Result<()> {
    let model = load_model(&args.model)?;
    let probs = clip_probabilities(&model, &args.clip)?;
    print!("{}", GradeResult::new(&probs, &model.class_names)?.render());
    Ok(())
}
