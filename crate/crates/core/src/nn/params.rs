use std::collections::HashMap;

use super::config::{layer_prefix, Init, LayerConfig};
use crate::error::{Error, Result};
use crate::tensor::{Rng, Scalar, Tape, Tensor, Var};

/// A named parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter<F = f32> {
    pub name: String,
    pub value: Tensor<F>,
    pub trainable: bool,
}

/// Named weight tensors in insertion order.
///
/// Frozen (non-trainable) parameters still take part in the forward pass
/// and receive gradients; the optimizer never updates them.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterStore<F = f32> {
    params: Vec<Parameter<F>>,
    index: HashMap<String, usize>,
}

impl<F: Scalar> ParameterStore<F> {
    pub fn new() -> Self {
        ParameterStore {
            params: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<F>, trainable: bool) -> Result<()> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name `{name}`")));
        }
        self.index.insert(name.clone(), self.params.len());
        self.params.push(Parameter {
            name,
            value,
            trainable,
        });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Parameter<F>> {
        self.index.get(name).map(|&i| &self.params[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Parameter<F>> {
        self.index.get(name).map(|&i| &mut self.params[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<F>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<F>> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total scalar count, optionally only over trainable parameters.
    pub fn count(&self, trainable_only: bool) -> usize {
        self.params
            .iter()
            .filter(|p| p.trainable || !trainable_only)
            .map(|p| p.value.len())
            .sum()
    }

    pub fn set_trainable(&mut self, name: &str, trainable: bool) -> Result<()> {
        let p = self
            .get_mut(name)
            .ok_or_else(|| Error::Config(format!("no parameter `{name}`")))?;
        p.trainable = trainable;
        Ok(())
    }

    pub fn cast<G: Scalar>(&self) -> ParameterStore<G> {
        let mut out = ParameterStore::new();
        for p in &self.params {
            out.insert(p.name.clone(), p.value.cast(), p.trainable)
                .expect("names already unique");
        }
        out
    }

    /// Records trainable parameters on `tape` as gradient-tracking leaves
    /// and frozen ones as constants.
    pub fn bind(&self, tape: &mut Tape<F>) -> Bound {
        let vars = self
            .params
            .iter()
            .map(|p| (p.name.clone(), tape.leaf(p.value.clone(), p.trainable)))
            .collect();
        Bound { vars }
    }
}

/// Parameters recorded on a tape, looked up by name.
#[derive(Clone, Debug, Default)]
pub struct Bound {
    vars: HashMap<String, Var>,
}

impl Bound {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, var: Var) {
        self.vars.insert(name.into(), var);
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Config(format!("parameter `{name}` is not bound")))
    }
}

fn init_tensor<F: Scalar>(shape: &[usize], init: Init, rng: &mut Rng) -> Tensor<F> {
    match init {
        Init::Glorot { fan_in, fan_out } => {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            Tensor::uniform(shape.to_vec(), -limit, limit, rng)
        }
        Init::Zeros => Tensor::zeros(shape.to_vec()),
        Init::ForgetBias { units } => {
            let mut t = Tensor::zeros(shape.to_vec());
            for v in &mut t.data_mut()[units..2 * units] {
                *v = F::one();
            }
            t
        }
    }
}

/// Initializes every parameter of `layers` for inputs of `input_shape`.
///
/// Kernels are Glorot-uniform, biases zero, and recurrent forget-gate
/// biases one. Parameters are drawn in layer order, so a seed fully
/// determines the store.
pub fn init_params<F: Scalar>(
    layers: &[LayerConfig],
    input_shape: &[usize],
    rng: &mut Rng,
) -> Result<ParameterStore<F>> {
    let mut store = ParameterStore::new();
    let mut shape = input_shape.to_vec();
    for (i, layer) in layers.iter().enumerate() {
        for p in layer.param_specs(&shape)? {
            let value = init_tensor(&p.shape, p.init, rng);
            store.insert(format!("{}/{}", layer_prefix(i), p.name), value, p.trainable)?;
        }
        shape = layer.output_shape(&shape)?;
    }
    Ok(store)
}
