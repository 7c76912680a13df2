use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::kernels::{axis_extent, Padding};

/// One layer of a sequential model.
///
/// Serialized (tagged by `kind`) into model files, so field names are part
/// of the on-disk format.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerConfig {
    Dense {
        units: usize,
        trainable: bool,
    },
    Relu,
    Softmax,
    Flatten,
    Dropout {
        rate: f64,
    },
    Conv2d {
        filters: usize,
        kernel: [usize; 2],
        stride: usize,
        padding: Padding,
        trainable: bool,
    },
    Conv3d {
        filters: usize,
        kernel: [usize; 3],
        stride: usize,
        padding: Padding,
        trainable: bool,
    },
    Maxpool2d {
        window: [usize; 2],
        stride: [usize; 2],
    },
    Maxpool3d {
        window: [usize; 3],
        stride: [usize; 3],
    },
    SimpleRnn {
        units: usize,
        return_sequences: bool,
        trainable: bool,
    },
    Lstm {
        units: usize,
        return_sequences: bool,
        trainable: bool,
    },
    Convlstm2d {
        filters: usize,
        kernel: [usize; 2],
        padding: Padding,
        return_sequences: bool,
        trainable: bool,
    },
    TimeDistributed {
        layers: Vec<LayerConfig>,
        trainable: bool,
    },
}

/// How a parameter tensor is initialized.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Glorot-uniform with the given fan-in and fan-out.
    Glorot { fan_in: usize, fan_out: usize },
    Zeros,
    /// Zeros except `1.0` on the forget-gate slice `[units, 2*units)`.
    ForgetBias { units: usize },
}

/// Shape and initializer of one parameter, named relative to its layer.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
    pub trainable: bool,
}

impl LayerConfig {
    pub fn dense(units: usize) -> Self {
        LayerConfig::Dense {
            units,
            trainable: true,
        }
    }

    pub fn conv2d(filters: usize, kernel: [usize; 2], padding: Padding) -> Self {
        LayerConfig::Conv2d {
            filters,
            kernel,
            stride: 1,
            padding,
            trainable: true,
        }
    }

    pub fn conv3d(filters: usize, kernel: [usize; 3], padding: Padding) -> Self {
        LayerConfig::Conv3d {
            filters,
            kernel,
            stride: 1,
            padding,
            trainable: true,
        }
    }

    pub fn maxpool2d(window: [usize; 2]) -> Self {
        LayerConfig::Maxpool2d {
            window,
            stride: window,
        }
    }

    pub fn maxpool3d(window: [usize; 3]) -> Self {
        LayerConfig::Maxpool3d {
            window,
            stride: window,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            LayerConfig::Dense { .. } => "dense",
            LayerConfig::Relu => "relu",
            LayerConfig::Softmax => "softmax",
            LayerConfig::Flatten => "flatten",
            LayerConfig::Dropout { .. } => "dropout",
            LayerConfig::Conv2d { .. } => "conv2d",
            LayerConfig::Conv3d { .. } => "conv3d",
            LayerConfig::Maxpool2d { .. } => "maxpool2d",
            LayerConfig::Maxpool3d { .. } => "maxpool3d",
            LayerConfig::SimpleRnn { .. } => "simple_rnn",
            LayerConfig::Lstm { .. } => "lstm",
            LayerConfig::Convlstm2d { .. } => "convlstm2d",
            LayerConfig::TimeDistributed { .. } => "time_distributed",
        }
    }

    pub fn is_recurrent(&self) -> bool {
        matches!(
            self,
            LayerConfig::SimpleRnn { .. } | LayerConfig::Lstm { .. } | LayerConfig::Convlstm2d { .. }
        )
    }

    /// Checks hyperparameters that do not depend on the input shape.
    pub fn validate(&self) -> Result<()> {
        let positive = |what: &str, v: &[usize]| {
            if v.contains(&0) {
                Err(Error::Config(format!("{}: {what} must be positive", self.kind())))
            } else {
                Ok(())
            }
        };
        match self {
            LayerConfig::Dense { units, .. }
            | LayerConfig::SimpleRnn { units, .. }
            | LayerConfig::Lstm { units, .. } => positive("units", &[*units]),
            LayerConfig::Relu | LayerConfig::Softmax | LayerConfig::Flatten => Ok(()),
            LayerConfig::Dropout { rate } => {
                if (0.0..1.0).contains(rate) {
                    Ok(())
                } else {
                    Err(Error::Config(format!("dropout rate {rate} outside [0,1)")))
                }
            }
            LayerConfig::Conv2d {
                filters,
                kernel,
                stride,
                ..
            } => positive("filters, kernel and stride", &[*filters, kernel[0], kernel[1], *stride]),
            LayerConfig::Conv3d {
                filters,
                kernel,
                stride,
                ..
            } => positive(
                "filters, kernel and stride",
                &[*filters, kernel[0], kernel[1], kernel[2], *stride],
            ),
            LayerConfig::Maxpool2d { window, stride } => {
                positive("window and stride", &[window[0], window[1], stride[0], stride[1]])
            }
            LayerConfig::Maxpool3d { window, stride } => positive("window and stride", &[
                window[0], window[1], window[2], stride[0], stride[1], stride[2],
            ]),
            LayerConfig::Convlstm2d {
                filters,
                kernel,
                padding,
                ..
            } => {
                positive("filters and kernel", &[*filters, kernel[0], kernel[1]])?;
                if *padding != Padding::Same {
                    return Err(Error::Config("convlstm2d supports only same padding".into()));
                }
                Ok(())
            }
            LayerConfig::TimeDistributed { layers, .. } => {
                if layers.is_empty() {
                    return Err(Error::Config("time_distributed wraps no layers".into()));
                }
                for l in layers {
                    if l.is_recurrent() || matches!(l, LayerConfig::TimeDistributed { .. }) {
                        return Err(Error::Config(format!(
                            "time_distributed cannot wrap a {} layer",
                            l.kind()
                        )));
                    }
                    l.validate()?;
                }
                Ok(())
            }
        }
    }

    /// Output shape for a single (unbatched) input of shape `input`.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        self.validate()?;
        let rank_err = |want: &str| {
            Error::shape(
                self.kind(),
                format!("expected {want} input, got {input:?}"),
            )
        };
        match self {
            LayerConfig::Dense { units, .. } => {
                let (_, lead) = input.split_last().ok_or_else(|| rank_err("rank >= 1"))?;
                let mut out = lead.to_vec();
                out.push(*units);
                Ok(out)
            }
            LayerConfig::Relu | LayerConfig::Softmax | LayerConfig::Dropout { .. } => {
                Ok(input.to_vec())
            }
            LayerConfig::Flatten => Ok(vec![input.iter().product()]),
            LayerConfig::Conv2d {
                filters,
                kernel,
                stride,
                padding,
                ..
            } => {
                let &[h, w, _] = input else { return Err(rank_err("[H,W,C]")) };
                let (oh, _) = axis_extent("conv2d", h, kernel[0], *stride, *padding)?;
                let (ow, _) = axis_extent("conv2d", w, kernel[1], *stride, *padding)?;
                Ok(vec![oh, ow, *filters])
            }
            LayerConfig::Conv3d {
                filters,
                kernel,
                stride,
                padding,
                ..
            } => {
                let &[t, h, w, _] = input else { return Err(rank_err("[T,H,W,C]")) };
                let (ot, _) = axis_extent("conv3d", t, kernel[0], *stride, *padding)?;
                let (oh, _) = axis_extent("conv3d", h, kernel[1], *stride, *padding)?;
                let (ow, _) = axis_extent("conv3d", w, kernel[2], *stride, *padding)?;
                Ok(vec![ot, oh, ow, *filters])
            }
            LayerConfig::Maxpool2d { window, stride } => {
                let &[h, w, c] = input else { return Err(rank_err("[H,W,C]")) };
                let (oh, _) = axis_extent("maxpool2d", h, window[0], stride[0], Padding::Valid)?;
                let (ow, _) = axis_extent("maxpool2d", w, window[1], stride[1], Padding::Valid)?;
                Ok(vec![oh, ow, c])
            }
            LayerConfig::Maxpool3d { window, stride } => {
                let &[t, h, w, c] = input else { return Err(rank_err("[T,H,W,C]")) };
                let (ot, _) = axis_extent("maxpool3d", t, window[0], stride[0], Padding::Valid)?;
                let (oh, _) = axis_extent("maxpool3d", h, window[1], stride[1], Padding::Valid)?;
                let (ow, _) = axis_extent("maxpool3d", w, window[2], stride[2], Padding::Valid)?;
                Ok(vec![ot, oh, ow, c])
            }
            LayerConfig::SimpleRnn {
                units,
                return_sequences,
                ..
            }
            | LayerConfig::Lstm {
                units,
                return_sequences,
                ..
            } => {
                let &[t, _] = input else { return Err(rank_err("[T,D]")) };
                Ok(if *return_sequences { vec![t, *units] } else { vec![*units] })
            }
            LayerConfig::Convlstm2d {
                filters,
                return_sequences,
                ..
            } => {
                let &[t, h, w, _] = input else { return Err(rank_err("[T,H,W,C]")) };
                if t == 0 || h == 0 || w == 0 {
                    return Err(Error::EmptyInput("convlstm2d"));
                }
                Ok(if *return_sequences {
                    vec![t, h, w, *filters]
                } else {
                    vec![h, w, *filters]
                })
            }
            LayerConfig::TimeDistributed { layers, .. } => {
                let (&t, frame) = input.split_first().ok_or_else(|| rank_err("[T,...]"))?;
                if frame.is_empty() {
                    return Err(rank_err("[T,...]"));
                }
                let inner = stack_output_shape(layers, frame)?;
                let mut out = vec![t];
                out.extend(inner);
                Ok(out)
            }
        }
    }

    /// Parameters this layer owns for the given input shape, in
    /// initialization order.
    pub fn param_specs(&self, input: &[usize]) -> Result<Vec<ParamSpec>> {
        self.output_shape(input)?;
        let spec = |name: &str, shape: Vec<usize>, init: Init, trainable: bool| ParamSpec {
            name: name.to_string(),
            shape,
            init,
            trainable,
        };
        let glorot = |fan_in, fan_out| Init::Glorot { fan_in, fan_out };
        Ok(match self {
            LayerConfig::Dense { units, trainable } => {
                let k = *input.last().unwrap();
                vec![
                    spec("kernel", vec![k, *units], glorot(k, *units), *trainable),
                    spec("bias", vec![*units], Init::Zeros, *trainable),
                ]
            }
            LayerConfig::Conv2d {
                filters,
                kernel,
                trainable,
                ..
            } => {
                let cin = input[2];
                let rf = kernel[0] * kernel[1];
                vec![
                    spec(
                        "kernel",
                        vec![kernel[0], kernel[1], cin, *filters],
                        glorot(rf * cin, rf * filters),
                        *trainable,
                    ),
                    spec("bias", vec![*filters], Init::Zeros, *trainable),
                ]
            }
            LayerConfig::Conv3d {
                filters,
                kernel,
                trainable,
                ..
            } => {
                let cin = input[3];
                let rf = kernel[0] * kernel[1] * kernel[2];
                vec![
                    spec(
                        "kernel",
                        vec![kernel[0], kernel[1], kernel[2], cin, *filters],
                        glorot(rf * cin, rf * filters),
                        *trainable,
                    ),
                    spec("bias", vec![*filters], Init::Zeros, *trainable),
                ]
            }
            LayerConfig::SimpleRnn { units, trainable, .. } => {
                let (d, u) = (input[1], *units);
                vec![
                    spec("kernel", vec![d, u], glorot(d, u), *trainable),
                    spec("recurrent_kernel", vec![u, u], glorot(u, u), *trainable),
                    spec("bias", vec![u], Init::Zeros, *trainable),
                ]
            }
            LayerConfig::Lstm { units, trainable, .. } => {
                let (d, u) = (input[1], *units);
                vec![
                    spec("kernel", vec![d, 4 * u], glorot(d, 4 * u), *trainable),
                    spec("recurrent_kernel", vec![u, 4 * u], glorot(u, 4 * u), *trainable),
                    spec("bias", vec![4 * u], Init::ForgetBias { units: u }, *trainable),
                ]
            }
            LayerConfig::Convlstm2d {
                filters,
                kernel,
                trainable,
                ..
            } => {
                let (cin, u) = (input[3], *filters);
                let rf = kernel[0] * kernel[1];
                vec![
                    spec(
                        "kernel",
                        vec![kernel[0], kernel[1], cin, 4 * u],
                        glorot(rf * cin, rf * 4 * u),
                        *trainable,
                    ),
                    spec(
                        "recurrent_kernel",
                        vec![kernel[0], kernel[1], u, 4 * u],
                        glorot(rf * u, rf * 4 * u),
                        *trainable,
                    ),
                    spec("bias", vec![4 * u], Init::ForgetBias { units: u }, *trainable),
                ]
            }
            LayerConfig::TimeDistributed { layers, trainable } => {
                let mut out = Vec::new();
                let mut shape = input[1..].to_vec();
                for (j, l) in layers.iter().enumerate() {
                    for mut p in l.param_specs(&shape)? {
                        p.name = format!("inner{j}/{}", p.name);
                        p.trainable &= *trainable;
                        out.push(p);
                    }
                    shape = l.output_shape(&shape)?;
                }
                out
            }
            LayerConfig::Relu
            | LayerConfig::Softmax
            | LayerConfig::Flatten
            | LayerConfig::Dropout { .. }
            | LayerConfig::Maxpool2d { .. }
            | LayerConfig::Maxpool3d { .. } => Vec::new(),
        })
    }
}

/// Output shape of a layer stack applied to `input`.
pub fn stack_output_shape(layers: &[LayerConfig], input: &[usize]) -> Result<Vec<usize>> {
    layers
        .iter()
        .try_fold(input.to_vec(), |shape, l| l.output_shape(&shape))
}

/// Canonical parameter name prefix for layer `index` of a model.
pub fn layer_prefix(index: usize) -> String {
    format!("layer{index}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn time_distributed_rejects_recurrent_and_empty() {
        let td = LayerConfig::TimeDistributed {
            layers: vec![LayerConfig::Lstm {
                units: 2,
                return_sequences: false,
                trainable: true,
            }],
            trainable: true,
        };
        assert!(td.validate().is_err());
        let td = LayerConfig::TimeDistributed {
            layers: vec![],
            trainable: true,
        };
        assert!(td.validate().is_err());
    }

    #[test]
    fn dropout_rate_bounds() {
        assert!(LayerConfig::Dropout { rate: 0.0 }.validate().is_ok());
        assert!(LayerConfig::Dropout { rate: 1.0 }.validate().is_err());
        assert!(LayerConfig::Dropout { rate: -0.1 }.validate().is_err());
    }

    #[test]
    fn shapes_through_a_small_stack() {
        let layers = vec![
            LayerConfig::conv3d(4, [3, 3, 3], Padding::Same),
            LayerConfig::maxpool3d([2, 2, 2]),
            LayerConfig::Flatten,
            LayerConfig::dense(5),
        ];
        assert_eq!(stack_output_shape(&layers, &[6, 8, 8, 1]).unwrap(), vec![5]);
        assert!(stack_output_shape(&layers, &[6, 8, 8]).is_err());
    }

    #[test]
    fn convlstm_requires_same_padding() {
        let l = LayerConfig::Convlstm2d {
            filters: 2,
            kernel: [3, 3],
            padding: Padding::Valid,
            return_sequences: false,
            trainable: true,
        };
        assert!(l.validate().is_err());
    }

    #[test]
    fn config_json_is_tagged() {
        let json = serde_json::to_string(&LayerConfig::dense(3)).unwrap();
        assert_eq!(json, r#"{"kind":"dense","units":3,"trainable":true}"#);
    }
}
