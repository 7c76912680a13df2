//! Clip ingestion: frame decoding, preprocessing, sequence-length
//! normalization, the stratified train/eval split and a synthetic corpus.
//!
//! A dataset is laid out as `root/<label>/<clip_id>/<frame>.pgm|ppm`.
//! Labels, clips and frames are all visited in lexicographic order, so the
//! loaded manifest never depends on directory listing order.

mod netpbm;
mod synth;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Rng, Tensor};

pub use netpbm::{decode_netpbm, Image};
pub use synth::{generate_synthetic, PATTERNS};

/// Default number of frames per clip.
pub const DEFAULT_SEQUENCE_LENGTH: usize = 35;

/// Default share of each class assigned to training.
pub const DEFAULT_SPLIT_RATIO: f64 = 0.8;

/// How raw frames become network input. Stored in model files so that
/// prediction repeats the training-time preprocessing exactly.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub target_height: usize,
    pub target_width: usize,
    pub channels: usize,
    pub sequence_length: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            target_height: 64,
            target_width: 64,
            channels: 1,
            sequence_length: DEFAULT_SEQUENCE_LENGTH,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if self.target_height == 0 || self.target_width == 0 || self.sequence_length == 0 {
            return Err(Error::Config("preprocess extents must be positive".into()));
        }
        if !matches!(self.channels, 1 | 3) {
            return Err(Error::Config(format!("channels must be 1 or 3, got {}", self.channels)));
        }
        Ok(())
    }

    /// Clip tensor shape `[T,H,W,C]` produced by this configuration.
    pub fn clip_shape(&self) -> [usize; 4] {
        [self.sequence_length, self.target_height, self.target_width, self.channels]
    }
}

/// One preprocessed clip.
#[derive(Clone, Debug, PartialEq)]
pub struct ClipSample {
    /// `[T,H,W,C]` with values in `[0,1]`.
    pub frames: Tensor,
    pub label_index: usize,
    /// `<label>/<clip directory>`, unique across the dataset.
    pub clip_id: String,
}

/// A labeled dataset split into training and evaluation clips, each list
/// ordered by class, then clip id.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub class_names: Vec<String>,
    pub train: Vec<ClipSample>,
    pub eval: Vec<ClipSample>,
    pub seed: u64,
}

/// Converts a decoded frame to `[H,W,C]` in `[0,1]`: channel conversion
/// (rounded luma for color to gray, replication for gray to color), then
/// half-pixel bilinear resampling with clamped source coordinates.
pub fn preprocess_frame(image: &Image, cfg: &PreprocessConfig) -> Tensor {
    let (h, w, c) = (image.height, image.width, cfg.channels);
    let mut plane = vec![0.0f64; h * w * c];
    for (i, px) in image.samples.chunks_exact(image.channels).enumerate() {
        let dst = &mut plane[i * c..(i + 1) * c];
        match (image.channels, c) {
            (3, 1) => {
                let y = 0.299 * px[0] as f64 + 0.587 * px[1] as f64 + 0.114 * px[2] as f64;
                dst[0] = y.round();
            }
            (1, _) => dst.fill(px[0] as f64),
            _ => {
                for (d, &s) in dst.iter_mut().zip(px) {
                    *d = s as f64;
                }
            }
        }
    }
    let (oh, ow) = (cfg.target_height, cfg.target_width);
    let rows: Vec<_> = (0..oh).map(|y| sample_axis(y, h, oh)).collect();
    let cols: Vec<_> = (0..ow).map(|x| sample_axis(x, w, ow)).collect();
    let mut out = Vec::with_capacity(oh * ow * c);
    for &(y0, y1, fy) in &rows {
        for &(x0, x1, fx) in &cols {
            for ch in 0..c {
                let at = |y: usize, x: usize| plane[(y * w + x) * c + ch];
                let top = (1.0 - fx) * at(y0, x0) + fx * at(y0, x1);
                let bottom = (1.0 - fx) * at(y1, x0) + fx * at(y1, x1);
                let v = (1.0 - fy) * top + fy * bottom;
                out.push((v / 255.0) as f32);
            }
        }
    }
    Tensor::new([oh, ow, c], out).expect("extent product matches buffer")
}

/// Neighbouring source indices and the weight of the upper one for output
/// coordinate `dst` when resampling `input` samples to `output`.
fn sample_axis(dst: usize, input: usize, output: usize) -> (usize, usize, f64) {
    let src = (dst as f64 + 0.5) * (input as f64 / output as f64) - 0.5;
    let src = src.clamp(0.0, (input - 1) as f64);
    let lo = src.floor() as usize;
    (lo, (lo + 1).min(input - 1), src - lo as f64)
}

/// Maps a clip of any length to exactly `length` frames: uniform
/// subsampling (`index_k = floor(k·T/L)`) when too long, repetition of
/// the final frame when too short. Returns `[L, ...frame shape]`.
pub fn normalize_sequence(frames: &[Tensor], length: usize) -> Result<Tensor> {
    if frames.is_empty() || length == 0 {
        return Err(Error::EmptyInput("normalize_sequence"));
    }
    let t = frames.len();
    let picked: Vec<Tensor> = (0..length)
        .map(|k| {
            let i = if t > length { k * t / length } else { k.min(t - 1) };
            frames[i].clone()
        })
        .collect();
    Tensor::stack(&picked)
}

/// Frame files of one clip directory, sorted by file name.
fn frame_paths(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> = read_dir(dir)?
        .into_iter()
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| e.eq_ignore_ascii_case("pgm") || e.eq_ignore_ascii_case("ppm"))
        })
        .collect();
    paths.sort();
    Ok(paths)
}

fn read_dir(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    entries
        .map(|e| e.map(|e| e.path()).map_err(|e| Error::io(dir, e)))
        .collect()
}

/// Sorted names of the subdirectories of `dir`.
fn subdirectories(dir: &Path) -> Result<Vec<String>> {
    let mut names: Vec<String> = read_dir(dir)?
        .into_iter()
        .filter(|p| p.is_dir())
        .filter_map(|p| p.file_name().and_then(|n| n.to_str()).map(str::to_owned))
        .collect();
    names.sort();
    Ok(names)
}

/// Loads one clip directory as a `[T,H,W,C]` tensor.
pub fn load_clip(dir: &Path, cfg: &PreprocessConfig) -> Result<Tensor> {
    cfg.validate()?;
    let paths = frame_paths(dir)?;
    if paths.is_empty() {
        return Err(Error::Dataset(format!("clip {} has no frames", dir.display())));
    }
    let frames = paths
        .iter()
        .map(|p| {
            let bytes = fs::read(p).map_err(|e| Error::io(p, e))?;
            let image = decode_netpbm(&bytes).map_err(|e| Error::Dataset(format!("{}: {e}", p.display())))?;
            Ok(preprocess_frame(&image, cfg))
        })
        .collect::<Result<Vec<_>>>()?;
    normalize_sequence(&frames, cfg.sequence_length)
}

/// Number of training clips for a class of `n` clips.
pub fn train_count(n: usize, split_ratio: f64) -> usize {
    // The epsilon keeps products such as 0.8 * 10 from flooring to 7.
    ((split_ratio * n as f64) + 1e-9).floor().min(n as f64) as usize
}

/// Loads `root/<label>/<clip>/` into a stratified manifest: per class, in
/// sorted class order, the sorted clip ids are shuffled by one seeded
/// generator and the first `floor(split_ratio·n)` go to training.
pub fn load_dataset(root: &Path, cfg: &PreprocessConfig, split_ratio: f64, seed: u64) -> Result<DatasetManifest> {
    cfg.validate()?;
    if !(split_ratio > 0.0 && split_ratio <= 1.0) {
        return Err(Error::Config(format!("split ratio {split_ratio} is outside (0,1]")));
    }
    let class_names = subdirectories(root)?;
    if class_names.is_empty() {
        return Err(Error::Dataset(format!("{} has no class directories", root.display())));
    }
    let mut rng = Rng::new(seed);
    let mut train = Vec::new();
    let mut eval = Vec::new();
    for (label_index, label) in class_names.iter().enumerate() {
        let mut clips = subdirectories(&root.join(label))?;
        if clips.is_empty() {
            return Err(Error::Dataset(format!("class `{label}` has no clips")));
        }
        rng.shuffle(&mut clips);
        let n_train = train_count(clips.len(), split_ratio);
        for (i, clip) in clips.into_iter().enumerate() {
            let frames = load_clip(&root.join(label).join(&clip), cfg)?;
            let sample = ClipSample {
                frames,
                label_index,
                clip_id: format!("{label}/{clip}"),
            };
            if i < n_train {
                train.push(sample);
            } else {
                eval.push(sample);
            }
        }
    }
    for split in [&mut train, &mut eval] {
        split.sort_by(|a, b| (a.label_index, &a.clip_id).cmp(&(b.label_index, &b.clip_id)));
    }
    Ok(DatasetManifest {
        class_names,
        train,
        eval,
        seed,
    })
}

#[cfg(test)]
mod tests;
