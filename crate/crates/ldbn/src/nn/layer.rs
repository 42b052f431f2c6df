//! A single layer of the sequential model.
//!
//! Forward passes consume their input so caching never copies. What gets
//! cached depends on the mode: inference keeps nothing, adapt keeps only
//! what a BN-parameter backward needs (activation masks, pool argmaxes, BN
//! caches, input shapes), train additionally keeps the inputs of parametric
//! layers so their weight gradients can be formed.

use super::{BatchNorm2d, Mode};
use crate::error::{Error, Result};
use crate::tensor::{
    conv2d_forward, conv2d_grad_input, conv2d_grad_weight, linear_backward, linear_forward,
    linear_grad_input, maxpool2_backward, maxpool2_forward, relu_backward, relu_forward, Tensor,
};

#[derive(Debug, Clone)]
pub enum Layer {
    Conv2d {
        weight: Tensor<f32>,
        stride: usize,
        pad: usize,
        input: Option<Tensor<f32>>,
        input_shape: Option<Vec<usize>>,
        grad_weight: Option<Tensor<f32>>,
    },
    Bn {
        bn: BatchNorm2d,
        grad_gamma: Option<Vec<f32>>,
        grad_beta: Option<Vec<f32>>,
    },
    Relu {
        input: Option<Tensor<f32>>,
    },
    MaxPool2 {
        input_shape: Option<Vec<usize>>,
        argmax: Option<Vec<u32>>,
    },
    Flatten {
        input_shape: Option<Vec<usize>>,
    },
    Linear {
        weight: Tensor<f32>,
        bias: Tensor<f32>,
        input: Option<Tensor<f32>>,
        grad_weight: Option<Tensor<f32>>,
        grad_bias: Option<Tensor<f32>>,
    },
}

impl Layer {
    pub fn conv2d(weight: Tensor<f32>, stride: usize, pad: usize) -> Self {
        Layer::Conv2d {
            weight,
            stride,
            pad,
            input: None,
            input_shape: None,
            grad_weight: None,
        }
    }

    pub fn bn(channels: usize) -> Self {
        Layer::Bn {
            bn: BatchNorm2d::new(channels),
            grad_gamma: None,
            grad_beta: None,
        }
    }

    pub fn relu() -> Self {
        Layer::Relu { input: None }
    }

    pub fn maxpool2() -> Self {
        Layer::MaxPool2 {
            input_shape: None,
            argmax: None,
        }
    }

    pub fn flatten() -> Self {
        Layer::Flatten { input_shape: None }
    }

    pub fn linear(weight: Tensor<f32>, bias: Tensor<f32>) -> Self {
        Layer::Linear {
            weight,
            bias,
            input: None,
            grad_weight: None,
            grad_bias: None,
        }
    }

    pub fn forward(&mut self, x: Tensor<f32>, mode: Mode) -> Result<Tensor<f32>> {
        match self {
            Layer::Conv2d {
                weight,
                stride,
                pad,
                input,
                input_shape,
                ..
            } => {
                let y = conv2d_forward(&x, weight, *stride, *pad)?;
                match mode {
                    Mode::Inference => {
                        *input = None;
                        *input_shape = None;
                    }
                    Mode::Adapt => {
                        *input = None;
                        *input_shape = Some(x.shape().to_vec());
                    }
                    Mode::Train => {
                        *input_shape = Some(x.shape().to_vec());
                        *input = Some(x);
                    }
                }
                Ok(y)
            }
            Layer::Bn { bn, .. } => bn.forward(&x, mode),
            Layer::Relu { input } => {
                let y = relu_forward(&x);
                *input = match mode {
                    Mode::Inference => None,
                    _ => Some(x),
                };
                Ok(y)
            }
            Layer::MaxPool2 {
                input_shape,
                argmax,
            } => {
                let (y, arg) = maxpool2_forward(&x)?;
                match mode {
                    Mode::Inference => {
                        *input_shape = None;
                        *argmax = None;
                    }
                    _ => {
                        *input_shape = Some(x.shape().to_vec());
                        *argmax = Some(arg);
                    }
                }
                Ok(y)
            }
            Layer::Flatten { input_shape } => {
                let shape = x.shape().to_vec();
                if shape.len() < 2 {
                    return Err(Error::dimension(format!(
                        "flatten expects at least rank 2, got {shape:?}"
                    )));
                }
                let n = shape[0];
                let rest: usize = shape[1..].iter().product();
                *input_shape = match mode {
                    Mode::Inference => None,
                    _ => Some(shape.clone()),
                };
                x.reshape(vec![n, rest])
            }
            Layer::Linear {
                weight,
                bias,
                input,
                ..
            } => {
                let y = linear_forward(&x, weight, bias)?;
                *input = match mode {
                    Mode::Train => Some(x),
                    _ => None,
                };
                Ok(y)
            }
        }
    }

    /// Backward through the cached forward. With `full` set, parametric
    /// layers also form their weight gradients (which requires a train-mode
    /// forward for conv/linear). With `need_input_grad` unset the input
    /// gradient is skipped, which saves the largest single kernel call when
    /// this is the bottom layer.
    pub fn backward(
        &mut self,
        grad_out: Tensor<f32>,
        full: bool,
        need_input_grad: bool,
    ) -> Result<Option<Tensor<f32>>> {
        match self {
            Layer::Conv2d {
                weight,
                stride,
                pad,
                input,
                input_shape,
                grad_weight,
            } => {
                if full {
                    let x = input.as_ref().ok_or_else(|| {
                        Error::state("conv backward with weight gradients needs a train-mode forward")
                    })?;
                    *grad_weight = Some(conv2d_grad_weight(x, weight, &grad_out, *stride, *pad)?);
                }
                if !need_input_grad {
                    return Ok(None);
                }
                let shape = input_shape
                    .as_ref()
                    .ok_or_else(|| Error::state("conv backward without adapt/train forward"))?;
                Ok(Some(conv2d_grad_input(
                    shape, weight, &grad_out, *stride, *pad,
                )?))
            }
            Layer::Bn {
                bn,
                grad_gamma,
                grad_beta,
            } => {
                let (gin, gg, gb) = bn.backward(&grad_out)?;
                *grad_gamma = Some(gg);
                *grad_beta = Some(gb);
                Ok(Some(gin))
            }
            Layer::Relu { input } => {
                let x = input
                    .as_ref()
                    .ok_or_else(|| Error::state("relu backward without adapt/train forward"))?;
                Ok(Some(relu_backward(x, &grad_out)))
            }
            Layer::MaxPool2 {
                input_shape,
                argmax,
            } => {
                let (shape, arg) = match (input_shape.as_ref(), argmax.as_ref()) {
                    (Some(s), Some(a)) => (s, a),
                    _ => return Err(Error::state("maxpool backward without adapt/train forward")),
                };
                Ok(Some(maxpool2_backward(shape, arg, &grad_out)?))
            }
            Layer::Flatten { input_shape } => {
                let shape = input_shape
                    .as_ref()
                    .ok_or_else(|| Error::state("flatten backward without adapt/train forward"))?;
                Ok(Some(grad_out.reshape(shape.clone())?))
            }
            Layer::Linear {
                weight,
                input,
                grad_weight,
                grad_bias,
                ..
            } => {
                if full {
                    let x = input.as_ref().ok_or_else(|| {
                        Error::state(
                            "linear backward with weight gradients needs a train-mode forward",
                        )
                    })?;
                    let (gin, gw, gb) = linear_backward(x, weight, &grad_out)?;
                    *grad_weight = Some(gw);
                    *grad_bias = Some(gb);
                    Ok(need_input_grad.then_some(gin))
                } else if need_input_grad {
                    Ok(Some(linear_grad_input(weight, &grad_out)?))
                } else {
                    Ok(None)
                }
            }
        }
    }

    /// Human-readable kind, used in errors and the weight-file listing.
    pub fn kind_name(&self) -> &'static str {
        match self {
            Layer::Conv2d { .. } => "conv2d",
            Layer::Bn { .. } => "bn",
            Layer::Relu { .. } => "relu",
            Layer::MaxPool2 { .. } => "maxpool2",
            Layer::Flatten { .. } => "flatten",
            Layer::Linear { .. } => "linear",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inference_forward_keeps_no_caches() {
        let mut l = Layer::relu();
        l.forward(Tensor::from_fn(vec![1, 4], |i| i as f32 - 2.0), Mode::Inference)
            .unwrap();
        assert!(matches!(l, Layer::Relu { input: None }));
    }

    #[test]
    fn adapt_forward_then_full_conv_backward_is_a_state_error() {
        let w = Tensor::<f32>::full(vec![1, 1, 3, 3], 0.1);
        let mut l = Layer::conv2d(w, 1, 1);
        let x = Tensor::<f32>::from_fn(vec![1, 1, 4, 4], |i| i as f32);
        l.forward(x, Mode::Adapt).unwrap();
        let g = Tensor::<f32>::full(vec![1, 1, 4, 4], 1.0);
        assert!(l.backward(g, true, true).is_err());
    }

    #[test]
    fn adapt_forward_supports_input_gradient_only() {
        let w = Tensor::<f32>::full(vec![1, 1, 3, 3], 0.1);
        let mut l = Layer::conv2d(w, 1, 1);
        let x = Tensor::<f32>::from_fn(vec![1, 1, 4, 4], |i| i as f32);
        l.forward(x, Mode::Adapt).unwrap();
        let g = Tensor::<f32>::full(vec![1, 1, 4, 4], 1.0);
        let gin = l.backward(g, false, true).unwrap();
        assert_eq!(gin.unwrap().shape(), &[1, 1, 4, 4]);
    }
}
