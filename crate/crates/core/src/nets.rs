//! Network builders.
//!
//! Builders return raw logits; sigmoid or softmax is applied only by the loss
//! and prediction code, so one architecture serves every training schedule.

use std::fmt;

use rand::rngs::StdRng;
use rand::Rng;

use crate::scalar::Scalar;
use crate::tensor::{Tensor, TensorError, TensorResult};

#[derive(Clone, Debug, PartialEq)]
pub enum BuildError {
    ZeroDimension { what: &'static str },
    UnsupportedChannels { got: usize },
}

impl fmt::Display for BuildError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BuildError::ZeroDimension { what } => write!(f, "{what} must be positive"),
            BuildError::UnsupportedChannels { got } => {
                write!(f, "small cnn supports 1 or 3 input channels, got {got}")
            }
        }
    }
}

impl std::error::Error for BuildError {}

/// Which normalization the training loss will assume for this network.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeadKind {
    /// independent per-class binary prediction
    Sigmoid,
    /// mutually exclusive single-label prediction
    Softmax,
}

impl fmt::Display for HeadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HeadKind::Sigmoid => write!(f, "sigmoid"),
            HeadKind::Softmax => write!(f, "softmax"),
        }
    }
}

/// Architecture description, buildable at any seed.
#[derive(Clone, Debug, PartialEq)]
pub enum ModelSpec {
    Mlp { input_dim: usize, hidden_dims: Vec<usize> },
    SmallCnn { in_channels: usize },
}

impl ModelSpec {
    pub fn build<T: Scalar>(
        &self,
        num_classes: usize,
        head: HeadKind,
        rng: &mut StdRng,
    ) -> Result<Network<T>, BuildError> {
        match self {
            ModelSpec::Mlp { input_dim, hidden_dims } => {
                let mut net = build_mlp(*input_dim, hidden_dims, num_classes, rng)?;
                net.head = head;
                Ok(net)
            }
            ModelSpec::SmallCnn { in_channels } => {
                let mut net = build_small_cnn(*in_channels, num_classes, rng)?;
                net.head = head;
                Ok(net)
            }
        }
    }
}

enum Layer<T: Scalar> {
    Flatten,
    Linear { weight: Tensor<T>, bias: Tensor<T> },
    Conv2d { kernel: Tensor<T>, bias: Tensor<T>, stride: usize, padding: usize },
    Relu,
    MaxPool2,
    GlobalAvgPool,
}

/// A parameterized model: ordered layers plus head metadata.
pub struct Network<T: Scalar> {
    layers: Vec<Layer<T>>,
    pub head: HeadKind,
    pub num_classes: usize,
    min_input_hw: Option<usize>,
}

/// Uniform fan-in init: weights from U(-sqrt(6/fan_in), sqrt(6/fan_in)),
/// zero biases.
fn init_weights<T: Scalar>(count: usize, fan_in: usize, rng: &mut StdRng) -> Vec<T> {
    let bound = (6.0 / fan_in as f64).sqrt();
    (0..count).map(|_| T::from_f64(rng.gen_range(-bound..bound))).collect()
}

/// Fully-connected layers with ReLU between and a linear final layer.
/// An empty `hidden_dims` gives logistic regression.
pub fn build_mlp<T: Scalar>(
    input_dim: usize,
    hidden_dims: &[usize],
    num_classes: usize,
    rng: &mut StdRng,
) -> Result<Network<T>, BuildError> {
    if input_dim == 0 {
        return Err(BuildError::ZeroDimension { what: "input_dim" });
    }
    if num_classes == 0 {
        return Err(BuildError::ZeroDimension { what: "num_classes" });
    }
    if hidden_dims.contains(&0) {
        return Err(BuildError::ZeroDimension { what: "hidden dim" });
    }
    let mut layers = vec![Layer::Flatten];
    let mut cur = input_dim;
    for &h in hidden_dims {
        layers.push(Layer::Linear {
            weight: Tensor::param(init_weights(cur * h, cur, rng), &[cur, h]).expect("mlp weight"),
            bias: Tensor::param(vec![T::zero(); h], &[h]).expect("mlp bias"),
        });
        layers.push(Layer::Relu);
        cur = h;
    }
    layers.push(Layer::Linear {
        weight: Tensor::param(init_weights(cur * num_classes, cur, rng), &[cur, num_classes])
            .expect("mlp weight"),
        bias: Tensor::param(vec![T::zero(); num_classes], &[num_classes]).expect("mlp bias"),
    });
    Ok(Network { layers, head: HeadKind::Sigmoid, num_classes, min_input_hw: None })
}

fn conv_layer<T: Scalar>(
    c_in: usize,
    c_out: usize,
    rng: &mut StdRng,
) -> (Layer<T>, Layer<T>) {
    let fan_in = c_in * 9;
    let kernel = Tensor::param(init_weights(c_out * fan_in, fan_in, rng), &[c_out, c_in, 3, 3])
        .expect("conv kernel");
    let bias = Tensor::param(vec![T::zero(); c_out], &[c_out]).expect("conv bias");
    (Layer::Conv2d { kernel, bias, stride: 1, padding: 1 }, Layer::Relu)
}

/// Fixed desk-scale topology:
/// conv(16,3x3,s1,p1)-ReLU-maxpool2 -> conv(32,...)-ReLU-maxpool2 ->
/// conv(64,...)-ReLU-global-avg-pool -> linear(64 -> C).
/// Accepts any input with H,W >= 8.
pub fn build_small_cnn<T: Scalar>(
    in_channels: usize,
    num_classes: usize,
    rng: &mut StdRng,
) -> Result<Network<T>, BuildError> {
    if !(in_channels == 1 || in_channels == 3) {
        return Err(BuildError::UnsupportedChannels { got: in_channels });
    }
    if num_classes == 0 {
        return Err(BuildError::ZeroDimension { what: "num_classes" });
    }
    let mut layers = Vec::new();
    let (c1, r1) = conv_layer(in_channels, 16, rng);
    layers.extend([c1, r1, Layer::MaxPool2]);
    let (c2, r2) = conv_layer(16, 32, rng);
    layers.extend([c2, r2, Layer::MaxPool2]);
    let (c3, r3) = conv_layer(32, 64, rng);
    layers.extend([c3, r3, Layer::GlobalAvgPool]);
    layers.push(Layer::Linear {
        weight: Tensor::param(init_weights(64 * num_classes, 64, rng), &[64, num_classes])
            .expect("head weight"),
        bias: Tensor::param(vec![T::zero(); num_classes], &[num_classes]).expect("head bias"),
    });
    Ok(Network { layers, head: HeadKind::Sigmoid, num_classes, min_input_hw: Some(8) })
}

impl<T: Scalar> Network<T> {
    /// Maps a `[B, ...]` batch to `[B, C]` logits.
    pub fn forward(&self, input: &Tensor<T>) -> TensorResult<Tensor<T>> {
        let shape = input.shape();
        if let Some(min_hw) = self.min_input_hw {
            if shape.len() != 4 || shape[2] < min_hw || shape[3] < min_hw {
                return Err(TensorError::BadOperand {
                    op: "cnn forward",
                    shape,
                    expected: format!("rank-4 input with H,W >= {min_hw}"),
                });
            }
        }
        let mut cur = input.clone();
        for layer in &self.layers {
            cur = match layer {
                Layer::Flatten => {
                    let s = cur.shape();
                    let rest: usize = s[1..].iter().product();
                    cur.reshape(&[s[0], rest])?
                }
                Layer::Linear { weight, bias } => cur.matmul(weight)?.add_row_bias(bias)?,
                Layer::Conv2d { kernel, bias, stride, padding } => {
                    cur.conv2d(kernel, *stride, *padding)?.add_channel_bias(bias)?
                }
                Layer::Relu => cur.relu(),
                Layer::MaxPool2 => cur.maxpool2()?,
                Layer::GlobalAvgPool => cur.global_avg_pool()?,
            };
        }
        Ok(cur)
    }

    /// Parameter handles in a fixed order (layer order, weight before bias).
    pub fn parameters(&self) -> Vec<Tensor<T>> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Linear { weight, bias } | Layer::Conv2d { kernel: weight, bias, .. } => {
                    out.push(weight.clone());
                    out.push(bias.clone());
                }
                _ => {}
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.parameters().iter().map(Tensor::numel).sum()
    }

    pub fn zero_grad(&self) {
        for p in self.parameters() {
            p.clear_grad();
        }
    }

    /// Deep copy: value-equal parameters with no aliased storage.
    pub fn clone_parameters(&self) -> Network<T> {
        let layers = self
            .layers
            .iter()
            .map(|layer| match layer {
                Layer::Flatten => Layer::Flatten,
                Layer::Relu => Layer::Relu,
                Layer::MaxPool2 => Layer::MaxPool2,
                Layer::GlobalAvgPool => Layer::GlobalAvgPool,
                Layer::Linear { weight, bias } => Layer::Linear {
                    weight: Tensor::param(weight.to_vec(), &weight.shape()).expect("clone weight"),
                    bias: Tensor::param(bias.to_vec(), &bias.shape()).expect("clone bias"),
                },
                Layer::Conv2d { kernel, bias, stride, padding } => Layer::Conv2d {
                    kernel: Tensor::param(kernel.to_vec(), &kernel.shape()).expect("clone kernel"),
                    bias: Tensor::param(bias.to_vec(), &bias.shape()).expect("clone bias"),
                    stride: *stride,
                    padding: *padding,
                },
            })
            .collect();
        Network {
            layers,
            head: self.head,
            num_classes: self.num_classes,
            min_input_hw: self.min_input_hw,
        }
    }

    /// Copies parameter values from `src` into this network in place.
    pub fn copy_parameters_from(&self, src: &Network<T>) {
        let dst = self.parameters();
        let from = src.parameters();
        assert_eq!(dst.len(), from.len(), "architectures differ");
        for (d, s) in dst.iter().zip(&from) {
            d.copy_from_slice(&s.to_vec());
        }
    }

    /// Flat copy of all parameter values, in parameter order.
    pub fn flat_parameters(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.param_count());
        for p in self.parameters() {
            out.extend_from_slice(&p.data());
        }
        out
    }

    pub fn params_bitwise_eq(&self, other: &Network<T>) -> bool {
        let a = self.flat_parameters();
        let b = other.flat_parameters();
        a.len() == b.len() && a.iter().zip(&b).all(|(x, y)| x.bits_eq(*y))
    }

    pub fn param_l2_distance(&self, other: &Network<T>) -> f64 {
        self.flat_parameters()
            .iter()
            .zip(&other.flat_parameters())
            .map(|(a, b)| {
                let d = a.as_f64() - b.as_f64();
                d * d
            })
            .sum::<f64>()
            .sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use crate::tensor::with_no_grad;

    fn rng() -> StdRng {
        stream_rng(99, 1, 0)
    }

    #[test]
    fn mlp_parameter_count() {
        let net: Network<f32> = build_mlp(4, &[8], 3, &mut rng()).unwrap();
        assert_eq!(net.param_count(), 4 * 8 + 8 + 8 * 3 + 3);
    }

    #[test]
    fn mlp_zero_weights_forward_equals_biases() {
        let net: Network<f64> = build_mlp(4, &[8], 3, &mut rng()).unwrap();
        for p in net.parameters() {
            p.fill(0.0);
        }
        // set distinct biases on the last layer
        let params = net.parameters();
        let last_bias = params.last().unwrap();
        last_bias.copy_from_slice(&[0.5, -1.25, 2.0]);
        let x = Tensor::from_vec(vec![0.3; 2 * 4], &[2, 4]).unwrap();
        let logits = net.forward(&x).unwrap();
        assert_eq!(logits.to_vec(), vec![0.5, -1.25, 2.0, 0.5, -1.25, 2.0]);
    }

    #[test]
    fn mlp_batch_output_shape() {
        let net: Network<f32> = build_mlp(4, &[8], 3, &mut rng()).unwrap();
        let x = Tensor::from_vec(vec![0.1; 5 * 4], &[5, 4]).unwrap();
        assert_eq!(net.forward(&x).unwrap().shape(), vec![5, 3]);
    }

    #[test]
    fn mlp_empty_hidden_is_logistic_regression() {
        let net: Network<f32> = build_mlp(6, &[], 2, &mut rng()).unwrap();
        assert_eq!(net.param_count(), 6 * 2 + 2);
    }

    #[test]
    fn mlp_zero_dims_rejected() {
        assert!(build_mlp::<f32>(0, &[4], 2, &mut rng()).is_err());
        assert!(build_mlp::<f32>(4, &[0], 2, &mut rng()).is_err());
        assert!(build_mlp::<f32>(4, &[4], 0, &mut rng()).is_err());
    }

    #[test]
    fn cnn_shapes_for_both_benchmarks() {
        let net: Network<f32> = build_small_cnn(1, 10, &mut rng()).unwrap();
        let x = Tensor::from_vec(vec![0.0; 2 * 1 * 84 * 84], &[2, 1, 84, 84]).unwrap();
        assert_eq!(net.forward(&x).unwrap().shape(), vec![2, 10]);

        let net3: Network<f32> = build_small_cnn(3, 4, &mut rng()).unwrap();
        let x3 = Tensor::from_vec(vec![0.0; 2 * 3 * 28 * 28], &[2, 3, 28, 28]).unwrap();
        assert_eq!(net3.forward(&x3).unwrap().shape(), vec![2, 4]);
    }

    #[test]
    fn cnn_first_conv_parameter_count() {
        let net: Network<f32> = build_small_cnn(1, 10, &mut rng()).unwrap();
        let params = net.parameters();
        assert_eq!(params[0].numel() + params[1].numel(), 16 * 1 * 3 * 3 + 16);
    }

    #[test]
    fn cnn_rejects_small_inputs_and_bad_channels() {
        let net: Network<f32> = build_small_cnn(1, 10, &mut rng()).unwrap();
        let tiny = Tensor::from_vec(vec![0.0; 1 * 1 * 7 * 7], &[1, 1, 7, 7]).unwrap();
        assert!(net.forward(&tiny).is_err());
        assert!(build_small_cnn::<f32>(2, 10, &mut rng()).is_err());
    }

    #[test]
    fn clone_is_value_equal_and_storage_independent() {
        let net: Network<f64> = build_mlp(4, &[6], 3, &mut rng()).unwrap();
        let copy = net.clone_parameters();
        let x = Tensor::from_vec(vec![0.21; 3 * 4], &[3, 4]).unwrap();
        let (a, b) = with_no_grad(|| {
            (net.forward(&x).unwrap().to_vec(), copy.forward(&x).unwrap().to_vec())
        });
        assert!(a.iter().zip(&b).all(|(x, y)| x.bits_eq(*y)), "clone forward differs");

        // mutate the clone; the original must not move
        copy.parameters()[0].fill(7.0);
        let before = net.flat_parameters();
        assert!(net
            .flat_parameters()
            .iter()
            .zip(&before)
            .all(|(x, y)| x.bits_eq(*y)));
        assert!(net.param_l2_distance(&copy) > 0.0);
    }

    #[test]
    fn one_sgd_step_on_clone_moves_it_away() {
        use crate::optim::SgdMomentum;
        let net: Network<f64> = build_mlp(4, &[6], 3, &mut rng()).unwrap();
        let copy = net.clone_parameters();
        let x = Tensor::from_vec(vec![0.4; 2 * 4], &[2, 4]).unwrap();
        let loss = copy.forward(&x).unwrap().sum();
        loss.backward().unwrap();
        let mut opt = SgdMomentum::new(0.1, 0.0, &copy.parameters()).unwrap();
        opt.step(&copy.parameters()).unwrap();
        assert!(net.param_l2_distance(&copy) > 0.0);
    }
}
