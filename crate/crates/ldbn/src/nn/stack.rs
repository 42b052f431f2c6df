//! Sequential container, parameter bookkeeping, and the reference network.

use super::{BatchNorm2d, Layer, Mode};
use crate::error::Result;
use crate::tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Role of a parameter tensor. Adaptation touches only `BnAffine`;
/// `Stat` tensors are the BN running statistics; everything else is
/// `Frozen` outside of pretraining.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamClass {
    Frozen = 0,
    BnAffine = 1,
    Stat = 2,
}

/// Architecture description of one layer, enough to rebuild it with fresh
/// parameters. This is what the weight-file descriptor table stores.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerDesc {
    Conv2d {
        cout: usize,
        cin: usize,
        k: usize,
        stride: usize,
        pad: usize,
    },
    Bn {
        channels: usize,
    },
    Relu,
    MaxPool2,
    Flatten,
    Linear {
        out_f: usize,
        in_f: usize,
    },
}

#[derive(Debug, Clone)]
pub struct LayerStack {
    layers: Vec<Layer>,
    backward_calls: u64,
    layer_backward_calls: u64,
}

impl LayerStack {
    pub fn new(layers: Vec<Layer>) -> Self {
        Self {
            layers,
            backward_calls: 0,
            layer_backward_calls: 0,
        }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    /// Number of backward passes run so far, across both variants. The
    /// adaptation engine asserts on this: one step, one backward.
    pub fn backward_calls(&self) -> u64 {
        self.backward_calls
    }

    /// Number of individual layer backward invocations so far. One full
    /// pass touches every layer exactly once, so this grows by
    /// [`layer_count`](Self::layer_count) per backward.
    pub fn layer_backward_calls(&self) -> u64 {
        self.layer_backward_calls
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    pub fn forward(&mut self, mut x: Tensor<f32>, mode: Mode) -> Result<Tensor<f32>> {
        for layer in &mut self.layers {
            x = layer.forward(x, mode)?;
        }
        Ok(x)
    }

    /// Backward for pretraining: weight gradients everywhere. Returns the
    /// gradient w.r.t. the model input only when asked, since the usual
    /// caller discards it.
    pub fn backward_full(
        &mut self,
        grad: Tensor<f32>,
        need_input_grad: bool,
    ) -> Result<Option<Tensor<f32>>> {
        self.backward_calls += 1;
        let mut g = grad;
        for i in (0..self.layers.len()).rev() {
            self.layer_backward_calls += 1;
            let need = need_input_grad || i > 0;
            match self.layers[i].backward(g, true, need)? {
                Some(next) => g = next,
                None => return Ok(None),
            }
        }
        Ok(Some(g))
    }

    /// Backward for adaptation: only BN scale/shift gradients are formed.
    /// The pass still visits every layer once; below the lowest BN layer
    /// nothing is asked for, so those visits compute nothing.
    pub fn backward_bn_only(&mut self, grad: Tensor<f32>) -> Result<()> {
        self.backward_calls += 1;
        let lowest_bn = self
            .layers
            .iter()
            .position(|l| matches!(l, Layer::Bn { .. }))
            .unwrap_or(0);
        let mut g = grad;
        for i in (0..self.layers.len()).rev() {
            self.layer_backward_calls += 1;
            match self.layers[i].backward(g, false, i > lowest_bn)? {
                Some(next) => g = next,
                None => break,
            }
        }
        Ok(())
    }

    /// Mutable access to each BN layer plus its parameter gradients, in
    /// stack order. The gradients are taken, so each backward feeds exactly
    /// one optimizer step.
    pub fn take_bn_grads(&mut self) -> Vec<(&mut BatchNorm2d, Option<Vec<f32>>, Option<Vec<f32>>)> {
        self.layers
            .iter_mut()
            .filter_map(|l| match l {
                Layer::Bn {
                    bn,
                    grad_gamma,
                    grad_beta,
                } => Some((bn, grad_gamma.take(), grad_beta.take())),
                _ => None,
            })
            .collect()
    }

    /// Every trainable parameter paired with its taken gradient, in the
    /// [`visit_params`](Self::visit_params) order with the running
    /// statistics skipped. Pretraining feeds this to a full SGD step.
    pub fn take_trainable_grads(&mut self) -> Vec<(&mut [f32], Option<Vec<f32>>)> {
        let mut out: Vec<(&mut [f32], Option<Vec<f32>>)> = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Conv2d {
                    weight,
                    grad_weight,
                    ..
                } => {
                    out.push((weight.data_mut(), grad_weight.take().map(Tensor::into_data)));
                }
                Layer::Bn {
                    bn,
                    grad_gamma,
                    grad_beta,
                } => {
                    out.push((&mut bn.gamma, grad_gamma.take()));
                    out.push((&mut bn.beta, grad_beta.take()));
                }
                Layer::Linear {
                    weight,
                    bias,
                    grad_weight,
                    grad_bias,
                    ..
                } => {
                    out.push((weight.data_mut(), grad_weight.take().map(Tensor::into_data)));
                    out.push((bias.data_mut(), grad_bias.take().map(Tensor::into_data)));
                }
                _ => {}
            }
        }
        out
    }

    pub fn bn_layers_mut(&mut self) -> Vec<&mut BatchNorm2d> {
        self.layers
            .iter_mut()
            .filter_map(|l| match l {
                Layer::Bn { bn, .. } => Some(bn),
                _ => None,
            })
            .collect()
    }

    pub fn descriptors(&self) -> Vec<LayerDesc> {
        self.layers
            .iter()
            .map(|l| match l {
                Layer::Conv2d {
                    weight,
                    stride,
                    pad,
                    ..
                } => LayerDesc::Conv2d {
                    cout: weight.shape()[0],
                    cin: weight.shape()[1],
                    k: weight.shape()[2],
                    stride: *stride,
                    pad: *pad,
                },
                Layer::Bn { bn, .. } => LayerDesc::Bn {
                    channels: bn.channels(),
                },
                Layer::Relu { .. } => LayerDesc::Relu,
                Layer::MaxPool2 { .. } => LayerDesc::MaxPool2,
                Layer::Flatten { .. } => LayerDesc::Flatten,
                Layer::Linear { weight, .. } => LayerDesc::Linear {
                    out_f: weight.shape()[0],
                    in_f: weight.shape()[1],
                },
            })
            .collect()
    }

    /// Rebuilds a stack with zeroed parameters from a descriptor table;
    /// the weight loader fills the tensors afterwards.
    pub fn from_descriptors(descs: &[LayerDesc]) -> Result<Self> {
        let layers = descs
            .iter()
            .map(|d| {
                Ok(match *d {
                    LayerDesc::Conv2d {
                        cout,
                        cin,
                        k,
                        stride,
                        pad,
                    } => Layer::conv2d(Tensor::zeros(vec![cout, cin, k, k]), stride, pad),
                    LayerDesc::Bn { channels } => Layer::bn(channels),
                    LayerDesc::Relu => Layer::relu(),
                    LayerDesc::MaxPool2 => Layer::maxpool2(),
                    LayerDesc::Flatten => Layer::flatten(),
                    LayerDesc::Linear { out_f, in_f } => Layer::linear(
                        Tensor::zeros(vec![out_f, in_f]),
                        Tensor::zeros(vec![out_f]),
                    ),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::new(layers))
    }

    /// Visits every parameter tensor in a fixed order:
    /// layers in stack order, then within a layer conv `weight`,
    /// BN `gamma`/`beta`/`running_mean`/`running_var`, linear `weight`/`bias`.
    pub fn visit_params<F: FnMut(&str, ParamClass, &[usize], &[f32])>(&self, mut f: F) {
        for (i, layer) in self.layers.iter().enumerate() {
            let name = |field: &str| format!("layer{i:02}.{field}");
            match layer {
                Layer::Conv2d { weight, .. } => {
                    f(&name("weight"), ParamClass::Frozen, weight.shape(), weight.data());
                }
                Layer::Bn { bn, .. } => {
                    let c = [bn.channels()];
                    f(&name("gamma"), ParamClass::BnAffine, &c, &bn.gamma);
                    f(&name("beta"), ParamClass::BnAffine, &c, &bn.beta);
                    f(&name("running_mean"), ParamClass::Stat, &c, &bn.running_mean);
                    f(&name("running_var"), ParamClass::Stat, &c, &bn.running_var);
                }
                Layer::Linear { weight, bias, .. } => {
                    f(&name("weight"), ParamClass::Frozen, weight.shape(), weight.data());
                    f(&name("bias"), ParamClass::Frozen, bias.shape(), bias.data());
                }
                _ => {}
            }
        }
    }

    /// Mutable counterpart of [`visit_params`](Self::visit_params), same
    /// order. The callback may fail, aborting the walk.
    pub fn visit_params_mut<F>(&mut self, mut f: F) -> Result<()>
    where
        F: FnMut(&str, ParamClass, &[usize], &mut [f32]) -> Result<()>,
    {
        for (i, layer) in self.layers.iter_mut().enumerate() {
            let name = |field: &str| format!("layer{i:02}.{field}");
            match layer {
                Layer::Conv2d { weight, .. } => {
                    let dims = weight.shape().to_vec();
                    f(&name("weight"), ParamClass::Frozen, &dims, weight.data_mut())?;
                }
                Layer::Bn { bn, .. } => {
                    let c = [bn.channels()];
                    f(&name("gamma"), ParamClass::BnAffine, &c, &mut bn.gamma)?;
                    f(&name("beta"), ParamClass::BnAffine, &c, &mut bn.beta)?;
                    f(&name("running_mean"), ParamClass::Stat, &c, &mut bn.running_mean)?;
                    f(&name("running_var"), ParamClass::Stat, &c, &mut bn.running_var)?;
                }
                Layer::Linear { weight, bias, .. } => {
                    let wd = weight.shape().to_vec();
                    f(&name("weight"), ParamClass::Frozen, &wd, weight.data_mut())?;
                    let bd = bias.shape().to_vec();
                    f(&name("bias"), ParamClass::Frozen, &bd, bias.data_mut())?;
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Total element count of parameters in the given class.
    pub fn param_count(&self, class: ParamClass) -> usize {
        let mut n = 0;
        self.visit_params(|_, c, _, data| {
            if c == class {
                n += data.len();
            }
        });
        n
    }
}

/// The reference detector: four conv/BN/ReLU/pool blocks (16, 32, 64, 64
/// channels) on a 3x64x128 input, then flatten, a 512-wide hidden linear
/// layer and a linear head producing 26 * 14 * 2 logits. Conv and linear
/// weights get He-normal init from the seed; biases start at zero.
pub fn reference_model(seed: u64) -> LayerStack {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::with_capacity(20);
    for (cin, cout) in [(3, 16), (16, 32), (32, 64), (64, 64)] {
        layers.push(Layer::conv2d(he_init(&mut rng, vec![cout, cin, 3, 3]), 1, 1));
        layers.push(Layer::bn(cout));
        layers.push(Layer::relu());
        layers.push(Layer::maxpool2());
    }
    layers.push(Layer::flatten());
    layers.push(Layer::linear(
        he_init(&mut rng, vec![512, 64 * 4 * 8]),
        Tensor::zeros(vec![512]),
    ));
    layers.push(Layer::relu());
    layers.push(Layer::linear(
        he_init(&mut rng, vec![26 * 14 * 2, 512]),
        Tensor::zeros(vec![26 * 14 * 2]),
    ));
    LayerStack::new(layers)
}

fn he_init(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor<f32> {
    let fan_in: usize = shape[1..].iter().product();
    let normal = Normal::new(0.0f32, (2.0 / fan_in as f32).sqrt()).expect("finite std");
    let len: usize = shape.iter().product();
    let data: Vec<f32> = (0..len).map(|_| normal.sample(rng)).collect();
    Tensor::new(shape, data).expect("shape matches data")
}
