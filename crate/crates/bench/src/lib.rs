//! Fixtures shared by the benchmarks.

use slr_core::arch::{Architecture, ModelSpec, DEFAULT_INPUT_SHAPE};
use slr_core::nn::{Mode, ParameterStore};
use slr_core::train::one_hot;
use slr_core::{Result, Rng, Tape, Tensor};

/// Uniform values in `[0,1)`.
pub fn random_tensor(shape: &[usize], seed: u64) -> Tensor {
    Tensor::uniform(shape.to_vec(), 0.0, 1.0, &mut Rng::new(seed))
}

/// A default-shape model with freshly initialized weights.
pub fn default_model(arch: Architecture, num_classes: usize) -> Result<(ModelSpec, ParameterStore<f32>)> {
    let spec = ModelSpec::build(arch, DEFAULT_INPUT_SHAPE, num_classes, true)?;
    let params = spec.init_params(&mut Rng::new(1))?;
    Ok((spec, params))
}

/// One forward and backward pass of a single clip; returns the loss.
pub fn train_step(spec: &ModelSpec, params: &ParameterStore<f32>, clip: &Tensor, label: usize) -> Result<f32> {
    let truth = one_hot::<f32>(label, spec.num_classes)?;
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let x = tape.constant(clip.clone());
    let mut rng = Rng::new(0);
    let y = spec.forward(&mut tape, &bound, x, &mut Mode::Training(&mut rng))?;
    let loss = tape.cross_entropy(y, &truth)?;
    tape.backward(loss)?;
    Ok(tape.value(loss).data()[0])
}
