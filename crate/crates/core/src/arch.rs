//! Builders for the four clip-classification architectures.
//!
//! Every builder ends in `dense(num_classes)` followed by `softmax`, and
//! shape-checks the whole stack against the input shape it was given.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{self, apply_layers, stack_output_shape, Bound, LayerConfig, Mode, ParameterStore};
use crate::tensor::{Padding, Rng, Scalar, Tape, Tensor, Var};

/// Default clip shape `(T, H, W, C)`: 35 grayscale 64×64 frames.
pub const DEFAULT_INPUT_SHAPE: [usize; 4] = [35, 64, 64, 1];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    CnnLstm,
    Cnn3d,
    CnnRnnLstm,
    CnnTd,
}

impl Architecture {
    pub const ALL: [Architecture; 4] = [
        Architecture::CnnLstm,
        Architecture::Cnn3d,
        Architecture::CnnRnnLstm,
        Architecture::CnnTd,
    ];

    /// Stable identifier used on the command line and in model files.
    pub fn id(self) -> &'static str {
        match self {
            Architecture::CnnLstm => "cnn_lstm",
            Architecture::Cnn3d => "cnn3d",
            Architecture::CnnRnnLstm => "cnn_rnn_lstm",
            Architecture::CnnTd => "cnn_td",
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Architecture::ALL
            .into_iter()
            .find(|a| a.id() == s)
            .ok_or_else(|| Error::Config(format!("unknown architecture `{s}`")))
    }
}

/// A fully specified model: architecture, input shape and layer stack.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub architecture: Architecture,
    pub input_shape: [usize; 4],
    pub num_classes: usize,
    pub layers: Vec<LayerConfig>,
    /// Only meaningful for [`Architecture::CnnRnnLstm`].
    pub feature_extractor_trainable: bool,
}

impl ModelSpec {
    /// Builds the default stack for `architecture`. The feature-extractor
    /// flag only affects `cnn_rnn_lstm`.
    pub fn build(
        architecture: Architecture,
        input_shape: [usize; 4],
        num_classes: usize,
        feature_extractor_trainable: bool,
    ) -> Result<Self> {
        match architecture {
            Architecture::CnnLstm => build_cnn_lstm(input_shape, num_classes),
            Architecture::Cnn3d => build_cnn3d(input_shape, num_classes),
            Architecture::CnnRnnLstm => {
                build_cnn_rnn_lstm(input_shape, num_classes, feature_extractor_trainable)
            }
            Architecture::CnnTd => build_cnn_td(input_shape, num_classes),
        }
    }

    fn checked(self) -> Result<Self> {
        if self.num_classes == 0 {
            return Err(Error::Config("num_classes must be positive".into()));
        }
        if self.input_shape.contains(&0) {
            return Err(Error::Config(format!("input shape {:?} has a zero extent", self.input_shape)));
        }
        let n = self.layers.len();
        let head_ok = n >= 2
            && matches!(self.layers[n - 2], LayerConfig::Dense { units, .. } if units == self.num_classes)
            && self.layers[n - 1] == LayerConfig::Softmax;
        if !head_ok {
            return Err(Error::Config("model must end in dense(num_classes) and softmax".into()));
        }
        let out = stack_output_shape(&self.layers, &self.input_shape)?;
        if out != [self.num_classes] {
            return Err(Error::shape(
                "model",
                format!("stack produces {out:?}, expected [{}]", self.num_classes),
            ));
        }
        Ok(self)
    }

    /// `(name, shape, trainable)` for every parameter, in store order.
    pub fn param_shapes(&self) -> Result<Vec<(String, Vec<usize>, bool)>> {
        let mut out = Vec::new();
        let mut shape = self.input_shape.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            for p in layer.param_specs(&shape)? {
                out.push((format!("{}/{}", nn::layer_prefix(i), p.name), p.shape, p.trainable));
            }
            shape = layer.output_shape(&shape)?;
        }
        Ok(out)
    }

    pub fn init_params<F: Scalar>(&self, rng: &mut Rng) -> Result<ParameterStore<F>> {
        nn::init_params(&self.layers, &self.input_shape, rng)
    }

    /// Runs the stack on one clip `[T,H,W,C]`, returning class probabilities.
    pub fn forward<F: Scalar>(
        &self,
        tape: &mut Tape<F>,
        bound: &Bound,
        clip: Var,
        mode: &mut Mode<'_>,
    ) -> Result<Var> {
        if tape.shape(clip) != self.input_shape {
            return Err(Error::shape(
                "model",
                format!("clip {:?} does not match input shape {:?}", tape.shape(clip), self.input_shape),
            ));
        }
        apply_layers(tape, &self.layers, "layer", bound, clip, mode)
    }

    /// Class probabilities for one clip, in inference mode.
    pub fn predict<F: Scalar>(&self, params: &ParameterStore<F>, clip: &Tensor<F>) -> Result<Tensor<F>> {
        let mut tape = Tape::new();
        let mut bound = Bound::new();
        for p in params.iter() {
            bound.insert(p.name.clone(), tape.constant(p.value.clone()));
        }
        let x = tape.constant(clip.clone());
        let y = self.forward(&mut tape, &bound, x, &mut Mode::Inference)?;
        Ok(tape.value(y).clone())
    }
}

/// Total scalar parameters of `spec`, optionally only trainable ones.
pub fn param_count(spec: &ModelSpec, trainable_only: bool) -> Result<usize> {
    Ok(spec
        .param_shapes()?
        .iter()
        .filter(|(_, _, trainable)| *trainable || !trainable_only)
        .map(|(_, shape, _)| shape.iter().product::<usize>())
        .sum())
}

fn require(cond: bool, what: &str) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Config(what.to_string()))
    }
}

fn head(num_classes: usize) -> [LayerConfig; 2] {
    [LayerConfig::dense(num_classes), LayerConfig::Softmax]
}

/// ConvLSTM2D(8, 3×3) → max-pool 2×2 → flatten → dense → softmax.
pub fn build_cnn_lstm(input_shape: [usize; 4], num_classes: usize) -> Result<ModelSpec> {
    let [t, h, w, _] = input_shape;
    require(t >= 1, "cnn_lstm needs at least one frame")?;
    require(h >= 2 && w >= 2, "cnn_lstm needs frames of at least 2x2")?;
    let mut layers = vec![
        LayerConfig::Convlstm2d {
            filters: 8,
            kernel: [3, 3],
            padding: Padding::Same,
            return_sequences: false,
            trainable: true,
        },
        LayerConfig::maxpool2d([2, 2]),
        LayerConfig::Flatten,
    ];
    layers.extend(head(num_classes));
    ModelSpec {
        architecture: Architecture::CnnLstm,
        input_shape,
        num_classes,
        layers,
        feature_extractor_trainable: true,
    }
    .checked()
}

/// Three conv3d/relu/max-pool blocks (8, 16, 32 filters) → dense(128) →
/// dense → softmax. The first pool keeps the time axis.
pub fn build_cnn3d(input_shape: [usize; 4], num_classes: usize) -> Result<ModelSpec> {
    let [t, h, w, _] = input_shape;
    require(t >= 4, "cnn3d needs at least 4 frames")?;
    require(h >= 8 && w >= 8, "cnn3d needs frames of at least 8x8 for three pools")?;
    let mut layers = Vec::new();
    for (filters, pool) in [(8, [1, 2, 2]), (16, [2, 2, 2]), (32, [2, 2, 2])] {
        layers.push(LayerConfig::conv3d(filters, [3, 3, 3], Padding::Same));
        layers.push(LayerConfig::Relu);
        layers.push(LayerConfig::maxpool3d(pool));
    }
    layers.extend([LayerConfig::Flatten, LayerConfig::dense(128), LayerConfig::Relu]);
    layers.extend(head(num_classes));
    ModelSpec {
        architecture: Architecture::Cnn3d,
        input_shape,
        num_classes,
        layers,
        feature_extractor_trainable: true,
    }
    .checked()
}

/// The per-frame CNN shared by the time-distributed architectures.
fn frame_cnn(features: usize) -> Vec<LayerConfig> {
    vec![
        LayerConfig::conv2d(8, [3, 3], Padding::Same),
        LayerConfig::Relu,
        LayerConfig::maxpool2d([2, 2]),
        LayerConfig::conv2d(16, [3, 3], Padding::Same),
        LayerConfig::Relu,
        LayerConfig::maxpool2d([2, 2]),
        LayerConfig::Flatten,
        LayerConfig::dense(features),
        LayerConfig::Relu,
    ]
}

/// Time-distributed CNN features → SimpleRNN(32) → LSTM(32) → dense →
/// softmax. With `feature_extractor_trainable == false` the per-frame CNN
/// is frozen.
pub fn build_cnn_rnn_lstm(
    input_shape: [usize; 4],
    num_classes: usize,
    feature_extractor_trainable: bool,
) -> Result<ModelSpec> {
    let [t, h, w, _] = input_shape;
    require(t >= 2, "cnn_rnn_lstm needs at least 2 frames")?;
    require(h >= 4 && w >= 4, "cnn_rnn_lstm needs frames of at least 4x4")?;
    let mut layers = vec![
        LayerConfig::TimeDistributed {
            layers: frame_cnn(64),
            trainable: feature_extractor_trainable,
        },
        LayerConfig::SimpleRnn {
            units: 32,
            return_sequences: true,
            trainable: true,
        },
        LayerConfig::Lstm {
            units: 32,
            return_sequences: false,
            trainable: true,
        },
    ];
    layers.extend(head(num_classes));
    ModelSpec {
        architecture: Architecture::CnnRnnLstm,
        input_shape,
        num_classes,
        layers,
        feature_extractor_trainable,
    }
    .checked()
}

/// Time-distributed CNN features → flatten over time → dense → softmax.
pub fn build_cnn_td(input_shape: [usize; 4], num_classes: usize) -> Result<ModelSpec> {
    let [t, h, w, _] = input_shape;
    require(t >= 1, "cnn_td needs at least one frame")?;
    require(h >= 4 && w >= 4, "cnn_td needs frames of at least 4x4")?;
    let mut layers = vec![
        LayerConfig::TimeDistributed {
            layers: frame_cnn(32),
            trainable: true,
        },
        LayerConfig::Flatten,
    ];
    layers.extend(head(num_classes));
    ModelSpec {
        architecture: Architecture::CnnTd,
        input_shape,
        num_classes,
        layers,
        feature_extractor_trainable: true,
    }
    .checked()
}

#[cfg(test)]
mod tests {
    use super::*;

    const SHAPE: [usize; 4] = DEFAULT_INPUT_SHAPE;

    #[test]
    fn ids_round_trip() {
        for a in Architecture::ALL {
            assert_eq!(a.id().parse::<Architecture>().unwrap(), a);
            assert_eq!(serde_json::to_string(&a).unwrap(), format!("\"{}\"", a.id()));
        }
        assert!("bogus".parse::<Architecture>().is_err());
    }

    #[test]
    fn cnn_lstm_count_matches_closed_form() {
        let spec = build_cnn_lstm(SHAPE, 10).unwrap();
        let convlstm = 4 * (3 * 3 * (1 + 8) * 8 + 8);
        let head = 32 * 32 * 8 * 10 + 10;
        assert_eq!(param_count(&spec, false).unwrap(), convlstm + head);
        assert_eq!(convlstm + head, 84_554);
    }

    #[test]
    fn cnn3d_flatten_extent() {
        let spec = build_cnn3d(SHAPE, 10).unwrap();
        let flat = stack_output_shape(&spec.layers[..10], &SHAPE).unwrap();
        assert_eq!(flat, vec![8 * 8 * 8 * 32]);
        assert_eq!(flat, vec![16384]);
    }

    #[test]
    fn cnn_td_penultimate_extent() {
        let spec = build_cnn_td(SHAPE, 10).unwrap();
        assert_eq!(stack_output_shape(&spec.layers[..2], &SHAPE).unwrap(), vec![35 * 32]);
    }

    #[test]
    fn every_builder_outputs_num_classes() {
        for a in Architecture::ALL {
            let spec = ModelSpec::build(a, SHAPE, 10, true).unwrap();
            assert_eq!(stack_output_shape(&spec.layers, &SHAPE).unwrap(), vec![10]);
            assert_eq!(spec.layers.last(), Some(&LayerConfig::Softmax));
        }
    }

    #[test]
    fn small_layer_counts() {
        let dense = LayerConfig::dense(3).param_specs(&[4]).unwrap();
        assert_eq!(dense.iter().map(|p| p.shape.iter().product::<usize>()).sum::<usize>(), 15);
        let conv = LayerConfig::conv2d(8, [3, 3], Padding::Same).param_specs(&[5, 5, 1]).unwrap();
        assert_eq!(conv.iter().map(|p| p.shape.iter().product::<usize>()).sum::<usize>(), 80);
    }

    #[test]
    fn cnn3d_has_the_most_parameters() {
        let counts: Vec<usize> = Architecture::ALL
            .iter()
            .map(|&a| param_count(&ModelSpec::build(a, SHAPE, 10, false).unwrap(), false).unwrap())
            .collect();
        let cnn3d = counts[1];
        for (i, &c) in counts.iter().enumerate() {
            if i != 1 {
                assert!(cnn3d > c, "{counts:?}");
            }
        }
    }

    #[test]
    fn frozen_extractor_counts_only_sequence_layers() {
        let spec = build_cnn_rnn_lstm(SHAPE, 10, false).unwrap();
        let rnn = 64 * 32 + 32 * 32 + 32;
        let lstm = 4 * (32 * 32 + 32 * 32 + 32);
        let head = 32 * 10 + 10;
        assert_eq!(param_count(&spec, true).unwrap(), rnn + lstm + head);
        let unfrozen = build_cnn_rnn_lstm(SHAPE, 10, true).unwrap();
        assert_eq!(param_count(&unfrozen, true).unwrap(), param_count(&spec, false).unwrap());
    }

    #[test]
    fn too_small_inputs_rejected() {
        assert!(build_cnn_lstm([35, 1, 64, 1], 10).is_err());
        assert!(build_cnn3d([3, 64, 64, 1], 10).is_err());
        assert!(build_cnn3d([35, 4, 4, 1], 10).is_err());
        assert!(build_cnn_rnn_lstm([1, 64, 64, 1], 10, false).is_err());
        assert!(build_cnn_td([35, 3, 64, 1], 10).is_err());
        assert!(build_cnn_td(SHAPE, 0).is_err());
    }

    #[test]
    fn small_forward_is_a_distribution() {
        let shape = [4, 8, 8, 1];
        let clip = Tensor::<f32>::uniform(shape.to_vec(), 0.0, 1.0, &mut Rng::new(2));
        for a in Architecture::ALL {
            let spec = ModelSpec::build(a, shape, 3, true).unwrap();
            let params = spec.init_params(&mut Rng::new(1)).unwrap();
            let p = spec.predict(&params, &clip).unwrap();
            assert_eq!(p.shape(), &[3]);
            assert!((p.data().iter().sum::<f32>() - 1.0).abs() < 1e-5);
            let again = spec.init_params::<f32>(&mut Rng::new(1)).unwrap();
            assert_eq!(params, again);
        }
    }

    #[test]
    fn identical_frames_give_identical_features() {
        let shape = [3, 8, 8, 1];
        let frame = Tensor::<f32>::uniform(vec![8, 8, 1], 0.0, 1.0, &mut Rng::new(5));
        let clip = Tensor::stack(&[frame.clone(), frame.clone(), frame]).unwrap();
        let spec = build_cnn_td(shape, 2).unwrap();
        let params = spec.init_params::<f32>(&mut Rng::new(3)).unwrap();
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let x = tape.constant(clip);
        let feats = apply_layers(&mut tape, &spec.layers[..1], "layer", &bound, x, &mut Mode::Inference).unwrap();
        let f = tape.value(feats);
        assert_eq!(f.index(0).unwrap(), f.index(1).unwrap());
        assert_eq!(f.index(1).unwrap(), f.index(2).unwrap());
    }
}
