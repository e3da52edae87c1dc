//! The stage-1 patch classifier, the stage-2 fusion classifier, checkpoint
//! files and the end-to-end prediction pipeline.
//!
//! Both networks are generic over the scalar type: training runs in `f32`,
//! gradient verification in `f64`.

mod checkpoint;
mod pipeline;

pub use checkpoint::{load_checkpoint, save_checkpoint, Architecture, Checkpoint, TrainMeta, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use pipeline::{FusionClassifier, Pipeline, Prediction};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, param_err, Result};
use crate::layers::{self, Activation, DropoutMask};
use crate::patching::{Heatmap, PatchClassifier};
use crate::rng::Rng;
use crate::tensor::{s, Scalar, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PatchNetConfig {
    pub input_side: usize,
    pub base_channels: usize,
    pub blocks: usize,
    /// Adds a final conv + relu after the last pooling block.
    pub extra_conv: bool,
    pub dropout_rate: f64,
    pub kernel: usize,
    pub channel_cap: usize,
}

impl Default for PatchNetConfig {
    fn default() -> Self {
        Self {
            input_side: 32,
            base_channels: 8,
            blocks: 3,
            extra_conv: true,
            dropout_rate: 0.5,
            kernel: 3,
            channel_cap: 256,
        }
    }
}

impl PatchNetConfig {
    /// Six paired blocks plus one extra conv at 256 pixels.
    pub fn full_scale() -> Self {
        Self {
            input_side: 256,
            base_channels: 32,
            blocks: 6,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks == 0 || self.blocks > 16 {
            return Err(param_err!("blocks must be 1..=16, got {}", self.blocks));
        }
        let div = 1usize << self.blocks;
        if self.input_side == 0 || self.input_side % div != 0 {
            return Err(param_err!(
                "input side {} is not divisible by 2^{} = {div}",
                self.input_side,
                self.blocks
            ));
        }
        if self.kernel % 2 == 0 {
            return Err(param_err!("kernel must be odd for same padding, got {}", self.kernel));
        }
        if self.base_channels == 0 || self.channel_cap < self.base_channels {
            return Err(param_err!(
                "channels need 1 ≤ base ({}) ≤ cap ({})",
                self.base_channels,
                self.channel_cap
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(param_err!("dropout rate must lie in [0, 1), got {}", self.dropout_rate));
        }
        Ok(())
    }

    pub fn conv_layers(&self) -> usize {
        2 * self.blocks + usize::from(self.extra_conv)
    }

    /// Output channels of every conv layer in order.
    pub fn channels(&self) -> Vec<usize> {
        let width = |b: usize| self.base_channels.saturating_mul(1usize << b.min(62)).min(self.channel_cap);
        let mut out: Vec<usize> = (0..self.blocks).flat_map(|b| [width(b), width(b)]).collect();
        if self.extra_conv {
            out.push(width(self.blocks));
        }
        out
    }

    /// Length of the pooled feature vector.
    pub fn feature_len(&self) -> usize {
        *self.channels().last().expect("at least one block")
    }

    /// Spatial side of the last feature map before global pooling.
    pub fn final_side(&self) -> usize {
        self.input_side >> self.blocks
    }

    fn stack_param_count(&self) -> usize {
        let k2 = self.kernel * self.kernel;
        let mut c_in = 1;
        let mut n = 0;
        for c in self.channels() {
            n += c * c_in * k2 + c;
            c_in = c;
        }
        n
    }

    pub fn param_count(&self) -> usize {
        self.stack_param_count() + self.feature_len() + 1
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionNetConfig {
    pub heatmap_side: usize,
    pub heatmap_channels: usize,
    /// Conv stack of the image branch. Its own `dropout_rate` is not used;
    /// both branches share the fusion rate.
    pub image: PatchNetConfig,
    pub dropout_rate: f64,
}

impl Default for FusionNetConfig {
    fn default() -> Self {
        Self {
            heatmap_side: 17,
            heatmap_channels: 8,
            image: PatchNetConfig::default(),
            dropout_rate: 0.5,
        }
    }
}

impl FusionNetConfig {
    pub fn validate(&self) -> Result<()> {
        self.image.validate()?;
        if self.heatmap_side == 0 || self.heatmap_channels == 0 {
            return Err(param_err!(
                "heatmap side ({}) and channels ({}) must be positive",
                self.heatmap_side,
                self.heatmap_channels
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(param_err!("dropout rate must lie in [0, 1), got {}", self.dropout_rate));
        }
        Ok(())
    }

    pub fn heat_features(&self) -> usize {
        self.heatmap_channels * self.heatmap_side * self.heatmap_side
    }

    pub fn head_inputs(&self) -> usize {
        self.heat_features() + self.image.feature_len()
    }

    pub fn param_count(&self) -> usize {
        self.heatmap_channels * 9 + self.heatmap_channels + self.image.stack_param_count() + self.head_inputs() + 1
    }
}

/// Read and write access to a network's parameters in a fixed order.
pub trait Network<T: Scalar> {
    fn named_params(&self) -> Vec<(String, &Tensor<T>)>;
    fn params_mut(&mut self) -> Vec<&mut Tensor<T>>;

    fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.len()).sum()
    }
}

fn uniform_init<T: Scalar>(shape: &[usize], fan_in: usize, rng: &mut Rng) -> Tensor<T> {
    let lim = (6.0 / fan_in as f64).sqrt();
    Tensor::from_fn(shape, |_| s(rng.gen_range(-lim..=lim)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    /// A 2×2 max pool follows the relu.
    pub pool: bool,
}

/// Paired 3×3 convs with relu and 2×2 pooling, an optional extra conv, then
/// global average pooling.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvStack<T> {
    pub layers: Vec<ConvLayer<T>>,
    kernel: usize,
}

/// Activations kept from a forward pass for the adjoint.
pub struct StackTrace<T> {
    inputs: Vec<Tensor<T>>,
    outputs: Vec<Tensor<T>>,
    argmax: Vec<Option<Vec<usize>>>,
    last_shape: Vec<usize>,
}

impl<T: Scalar> ConvStack<T> {
    fn init(cfg: &PatchNetConfig, rng: &mut Rng) -> Self {
        let k = cfg.kernel;
        let mut c_in = 1;
        let layers = cfg
            .channels()
            .into_iter()
            .enumerate()
            .map(|(l, c)| {
                let layer = ConvLayer {
                    weight: uniform_init(&[c, c_in, k, k], c_in * k * k, rng),
                    bias: Tensor::zeros(&[c]),
                    pool: l < 2 * cfg.blocks && l % 2 == 1,
                };
                c_in = c;
                layer
            })
            .collect();
        Self { layers, kernel: k }
    }

    fn pad(&self) -> usize {
        self.kernel / 2
    }

    pub fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let mut x = input.clone();
        for layer in &self.layers {
            x = Activation::Relu.forward(&layers::conv2d(&x, &layer.weight, &layer.bias, 1, self.pad())?);
            if layer.pool {
                x = layers::maxpool2(&x)?.0;
            }
        }
        layers::global_avg_pool(&x)
    }

    pub fn forward_traced(&self, input: &Tensor<T>) -> Result<(Tensor<T>, StackTrace<T>)> {
        let n = self.layers.len();
        let mut trace = StackTrace {
            inputs: Vec::with_capacity(n),
            outputs: Vec::with_capacity(n),
            argmax: Vec::with_capacity(n),
            last_shape: Vec::new(),
        };
        let mut x = input.clone();
        for layer in &self.layers {
            let a = Activation::Relu.forward(&layers::conv2d(&x, &layer.weight, &layer.bias, 1, self.pad())?);
            trace.inputs.push(x);
            if layer.pool {
                let (p, idx) = layers::maxpool2(&a)?;
                trace.argmax.push(Some(idx));
                x = p;
            } else {
                trace.argmax.push(None);
                x = a.clone();
            }
            trace.outputs.push(a);
        }
        trace.last_shape = x.shape().to_vec();
        Ok((layers::global_avg_pool(&x)?, trace))
    }

    /// Returns parameter gradients (weight, bias per layer) and the input
    /// gradient.
    pub fn backward(&self, trace: &StackTrace<T>, grad_features: &Tensor<T>) -> Result<(Vec<Tensor<T>>, Tensor<T>)> {
        let mut g = layers::global_avg_pool_backward(&trace.last_shape, grad_features)?;
        let mut grads = Vec::with_capacity(2 * self.layers.len());
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let a = &trace.outputs[l];
            if let Some(idx) = &trace.argmax[l] {
                g = layers::maxpool2_backward(a.shape(), idx, &g)?;
            }
            let gz = Activation::Relu.backward(a, &g)?;
            let cg = layers::conv2d_backward(&trace.inputs[l], &layer.weight, 1, self.pad(), &gz)?;
            grads.push(cg.bias);
            grads.push(cg.weights);
            g = cg.input;
        }
        grads.reverse();
        Ok((grads, g))
    }

    fn named<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<T>)>) {
        for (l, layer) in self.layers.iter().enumerate() {
            out.push((format!("{prefix}.conv{l}.weight"), &layer.weight));
            out.push((format!("{prefix}.conv{l}.bias"), &layer.bias));
        }
    }

    fn params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor<T>>) {
        for layer in &mut self.layers {
            out.push(&mut layer.weight);
            out.push(&mut layer.bias);
        }
    }

    fn cast<U: Scalar>(&self) -> ConvStack<U> {
        ConvStack {
            layers: self
                .layers
                .iter()
                .map(|l| ConvLayer { weight: l.weight.cast(), bias: l.bias.cast(), pool: l.pool })
                .collect(),
            kernel: self.kernel,
        }
    }
}

fn check_square<T: Scalar>(t: &Tensor<T>, side: usize, what: &str) -> Result<()> {
    if t.shape() != [1, side, side] {
        return Err(dim_err!("{what} has shape {:?}, expected [1, {side}, {side}]", t.shape()));
    }
    Ok(())
}

/// Stage-1 network: conv stack → dropout → dense → sigmoid.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchNet<T = f32> {
    pub config: PatchNetConfig,
    pub stack: ConvStack<T>,
    pub head_weight: Tensor<T>,
    pub head_bias: Tensor<T>,
}

/// Everything the backward pass of one forward call needs.
pub struct PatchTrace<T> {
    stack: StackTrace<T>,
    dropped: Tensor<T>,
    mask: DropoutMask<T>,
}

impl<T: Scalar> PatchNet<T> {
    pub fn init(config: PatchNetConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let stack = ConvStack::init(&config, rng);
        let f = config.feature_len();
        Ok(Self {
            head_weight: uniform_init(&[1, f], f, rng),
            head_bias: Tensor::zeros(&[1]),
            stack,
            config,
        })
    }

    /// Deterministic forward pass.
    pub fn forward(&self, patch: &Tensor<T>) -> Result<T> {
        check_square(patch, self.config.input_side, "patch")?;
        let f = self.stack.forward(patch)?;
        let z = layers::dense(&f, &self.head_weight, &self.head_bias)?;
        Ok(layers::sigmoid(z.data()[0]))
    }

    /// Forward pass that records activations. Dropout is active when
    /// `training` is set.
    pub fn forward_traced(&self, patch: &Tensor<T>, training: bool, rng: &mut Rng) -> Result<(T, PatchTrace<T>)> {
        check_square(patch, self.config.input_side, "patch")?;
        let (f, stack) = self.stack.forward_traced(patch)?;
        let (dropped, mask) = layers::dropout(&f, self.config.dropout_rate, rng, training)?;
        let z = layers::dense(&dropped, &self.head_weight, &self.head_bias)?;
        Ok((layers::sigmoid(z.data()[0]), PatchTrace { stack, dropped, mask }))
    }

    /// Parameter gradients in [`Network::named_params`] order, given the
    /// loss gradient with respect to the pre-sigmoid logit.
    pub fn backward(&self, trace: &PatchTrace<T>, grad_logit: T) -> Result<Vec<Tensor<T>>> {
        let (grads, _) = self.backward_with_input(trace, grad_logit)?;
        Ok(grads)
    }

    pub fn backward_with_input(&self, trace: &PatchTrace<T>, grad_logit: T) -> Result<(Vec<Tensor<T>>, Tensor<T>)> {
        let hg = layers::dense_backward(&trace.dropped, &self.head_weight, &Tensor::vector(vec![grad_logit]))?;
        let gf = trace.mask.backward(&hg.input)?;
        let (mut grads, gx) = self.stack.backward(&trace.stack, &gf)?;
        grads.push(hg.weights);
        grads.push(hg.bias);
        Ok((grads, gx))
    }

    pub fn cast<U: Scalar>(&self) -> PatchNet<U> {
        PatchNet {
            config: self.config.clone(),
            stack: self.stack.cast(),
            head_weight: self.head_weight.cast(),
            head_bias: self.head_bias.cast(),
        }
    }
}

impl<T: Scalar> Network<T> for PatchNet<T> {
    fn named_params(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        self.stack.named("stack", &mut out);
        out.push(("head.weight".into(), &self.head_weight));
        out.push(("head.bias".into(), &self.head_bias));
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        self.stack.params_mut(&mut out);
        out.push(&mut self.head_weight);
        out.push(&mut self.head_bias);
        out
    }
}

impl PatchClassifier for PatchNet<f32> {
    fn input_side(&self) -> usize {
        self.config.input_side
    }

    fn patch_probability(&self, patch: &Tensor<f32>) -> Result<f32> {
        self.forward(patch)
    }
}

/// Stage-2 network. Heatmap branch: conv3×3 → relu → dropout → flatten.
/// Image branch: conv stack → dropout. Head: dense over the concatenation →
/// sigmoid.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionNet<T = f32> {
    pub config: FusionNetConfig,
    pub heat_weight: Tensor<T>,
    pub heat_bias: Tensor<T>,
    pub stack: ConvStack<T>,
    pub head_weight: Tensor<T>,
    pub head_bias: Tensor<T>,
}

pub struct FusionTrace<T> {
    heat_input: Tensor<T>,
    heat_act: Tensor<T>,
    heat_mask: DropoutMask<T>,
    stack: StackTrace<T>,
    image_mask: DropoutMask<T>,
    joined: Tensor<T>,
}

impl<T: Scalar> FusionNet<T> {
    pub fn init(config: FusionNetConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let hc = config.heatmap_channels;
        let heat_weight = uniform_init(&[hc, 1, 3, 3], 9, rng);
        let stack = ConvStack::init(&config.image, rng);
        let n = config.head_inputs();
        Ok(Self {
            heat_weight,
            heat_bias: Tensor::zeros(&[hc]),
            stack,
            head_weight: uniform_init(&[1, n], n, rng),
            head_bias: Tensor::zeros(&[1]),
            config,
        })
    }

    fn check_inputs(&self, image: &Tensor<T>, heat: &Tensor<T>) -> Result<()> {
        check_square(image, self.config.image.input_side, "fusion image")?;
        check_square(heat, self.config.heatmap_side, "heatmap")
    }

    pub fn forward(&self, image: &Tensor<T>, heat: &Tensor<T>) -> Result<T> {
        self.check_inputs(image, heat)?;
        let h = Activation::Relu.forward(&layers::conv2d(heat, &self.heat_weight, &self.heat_bias, 1, 1)?);
        let f = self.stack.forward(image)?;
        let joined = Tensor::vector(h.data().iter().chain(f.data()).copied().collect());
        let z = layers::dense(&joined, &self.head_weight, &self.head_bias)?;
        Ok(layers::sigmoid(z.data()[0]))
    }

    /// `heat` is the `1×G×G` bit grid (see [`Heatmap::bits_tensor`]).
    pub fn forward_traced(
        &self,
        image: &Tensor<T>,
        heat: &Tensor<T>,
        training: bool,
        rng: &mut Rng,
    ) -> Result<(T, FusionTrace<T>)> {
        self.check_inputs(image, heat)?;
        let rate = self.config.dropout_rate;
        let heat_act = Activation::Relu.forward(&layers::conv2d(heat, &self.heat_weight, &self.heat_bias, 1, 1)?);
        let (hd, heat_mask) = layers::dropout(&heat_act, rate, rng, training)?;
        let (f, stack) = self.stack.forward_traced(image)?;
        let (fd, image_mask) = layers::dropout(&f, rate, rng, training)?;
        let joined = Tensor::vector(hd.data().iter().chain(fd.data()).copied().collect());
        let z = layers::dense(&joined, &self.head_weight, &self.head_bias)?;
        Ok((
            layers::sigmoid(z.data()[0]),
            FusionTrace { heat_input: heat.clone(), heat_act, heat_mask, stack, image_mask, joined },
        ))
    }

    pub fn backward(&self, trace: &FusionTrace<T>, grad_logit: T) -> Result<Vec<Tensor<T>>> {
        let hg = layers::dense_backward(&trace.joined, &self.head_weight, &Tensor::vector(vec![grad_logit]))?;
        let split = self.config.heat_features();
        let gj = hg.input.data();
        let g_heat = Tensor::new(trace.heat_act.shape().to_vec(), gj[..split].to_vec())?;
        let g_img = Tensor::vector(gj[split..].to_vec());
        let g_heat = Activation::Relu.backward(&trace.heat_act, &trace.heat_mask.backward(&g_heat)?)?;
        let hc = layers::conv2d_backward(&trace.heat_input, &self.heat_weight, 1, 1, &g_heat)?;
        let (stack_grads, _) = self.stack.backward(&trace.stack, &trace.image_mask.backward(&g_img)?)?;
        let mut grads = vec![hc.weights, hc.bias];
        grads.extend(stack_grads);
        grads.push(hg.weights);
        grads.push(hg.bias);
        Ok(grads)
    }

    pub fn cast<U: Scalar>(&self) -> FusionNet<U> {
        FusionNet {
            config: self.config.clone(),
            heat_weight: self.heat_weight.cast(),
            heat_bias: self.heat_bias.cast(),
            stack: self.stack.cast(),
            head_weight: self.head_weight.cast(),
            head_bias: self.head_bias.cast(),
        }
    }
}

impl<T: Scalar> Network<T> for FusionNet<T> {
    fn named_params(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = vec![("heat.conv.weight".to_string(), &self.heat_weight), ("heat.conv.bias".into(), &self.heat_bias)];
        self.stack.named("image", &mut out);
        out.push(("head.weight".into(), &self.head_weight));
        out.push(("head.bias".into(), &self.head_bias));
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = vec![&mut self.heat_weight, &mut self.heat_bias];
        self.stack.params_mut(&mut out);
        out.push(&mut self.head_weight);
        out.push(&mut self.head_bias);
        out
    }
}

impl FusionClassifier for FusionNet<f32> {
    fn image_side(&self) -> usize {
        self.config.image.input_side
    }

    fn heatmap_side(&self) -> usize {
        self.config.heatmap_side
    }

    fn fusion_probability(&self, image: &Tensor<f32>, heatmap: &Heatmap) -> Result<f32> {
        self.forward(image, &heatmap.bits_tensor())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{grad_check, Differentiable};
    use crate::loss::bce_logit_grad;
    use crate::rng::seeded;
    use proptest::prelude::*;

    fn tiny() -> PatchNetConfig {
        crate::gradcheck::tiny_patchnet_config()
    }

    fn zero_params<T: Scalar, N: Network<T>>(net: &mut N) {
        for p in net.params_mut() {
            p.fill(T::zero());
        }
    }

    #[test]
    fn layer_counts_and_channels() {
        let full = PatchNetConfig::full_scale();
        assert_eq!(full.conv_layers(), 13);
        assert_eq!(full.channels().len(), 13);
        let desk = PatchNetConfig::default();
        assert_eq!(desk.conv_layers(), 7);
        assert_eq!(desk.final_side(), 4);
        assert_eq!(desk.channels(), vec![8, 8, 16, 16, 32, 32, 64]);
        let capped = PatchNetConfig { channel_cap: 20, ..desk };
        assert_eq!(capped.channels(), vec![8, 8, 16, 16, 20, 20, 20]);
        assert!(PatchNetConfig { input_side: 36, ..PatchNetConfig::default() }.validate().is_err());
        assert!(PatchNet::<f32>::init(PatchNetConfig { input_side: 20, ..PatchNetConfig::default() }, &mut seeded(0)).is_err());
    }

    #[test]
    fn desk_stack_reaches_four_by_four() {
        let net = PatchNet::<f32>::init(PatchNetConfig::default(), &mut seeded(1)).unwrap();
        let x = Tensor::full(&[1, 32, 32], 0.3);
        let (_, trace) = net.forward_traced(&x, false, &mut seeded(0)).unwrap();
        assert_eq!(trace.stack.last_shape, vec![64, 4, 4]);
        assert_eq!(net.stack.layers.iter().filter(|l| l.pool).count(), 3);
    }

    #[test]
    fn outputs_are_probabilities_and_inference_is_pure() {
        let net = PatchNet::<f32>::init(PatchNetConfig::default(), &mut seeded(2)).unwrap();
        let mut rng = seeded(3);
        let x = Tensor::from_fn(&[1, 32, 32], |_| rng.gen_range(0.0..1.0));
        let a = net.forward(&x).unwrap();
        let b = net.forward(&x).unwrap();
        assert!(a > 0.0 && a < 1.0);
        assert_eq!(a.to_bits(), b.to_bits());
        let (c, _) = net.forward_traced(&x, false, &mut seeded(9)).unwrap();
        assert_eq!(a.to_bits(), c.to_bits());
        assert!(net.forward(&Tensor::zeros(&[1, 16, 16])).is_err());
    }

    #[test]
    fn zero_weights_give_one_half() {
        let mut net = PatchNet::<f64>::init(PatchNetConfig::default(), &mut seeded(4)).unwrap();
        zero_params(&mut net);
        assert_eq!(net.forward(&Tensor::full(&[1, 32, 32], 0.7)).unwrap(), 0.5);

        let mut f = FusionNet::<f64>::init(FusionNetConfig::default(), &mut seeded(4)).unwrap();
        zero_params(&mut f);
        assert_eq!(f.forward(&Tensor::zeros(&[1, 32, 32]), &Tensor::zeros(&[1, 17, 17])).unwrap(), 0.5);
    }

    #[test]
    fn fusion_senses_a_single_heatmap_bit() {
        let net = FusionNet::<f32>::init(FusionNetConfig::default(), &mut seeded(5)).unwrap();
        let img = Tensor::full(&[1, 32, 32], 0.4);
        let mut heat = Tensor::zeros(&[1, 17, 17]);
        let base = net.forward(&img, &heat).unwrap();
        heat.data_mut()[8 * 17 + 8] = 1.0;
        let flipped = net.forward(&img, &heat).unwrap();
        assert!(base > 0.0 && base < 1.0);
        assert_ne!(base, flipped);
        assert!(net.forward(&img, &Tensor::zeros(&[1, 16, 16])).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn param_count_formula(blocks in 1usize..4, base in 1usize..6, extra in any::<bool>(), cap in 4usize..40, hc in 1usize..5, seed in 0u64..1000) {
            let cfg = PatchNetConfig {
                input_side: 8 << blocks,
                base_channels: base,
                blocks,
                extra_conv: extra,
                channel_cap: cap.max(base),
                ..PatchNetConfig::default()
            };
            let net = PatchNet::<f32>::init(cfg.clone(), &mut seeded(seed)).unwrap();
            prop_assert_eq!(Network::param_count(&net), cfg.param_count());
            // closed form: Σ c_l (c_{l-1}·9 + 1) + C + 1
            let ch = cfg.channels();
            let mut prev = 1;
            let mut expect = 0;
            for &c in &ch {
                expect += c * (prev * 9 + 1);
                prev = c;
            }
            expect += prev + 1;
            prop_assert_eq!(cfg.param_count(), expect);
            prop_assert_eq!(ch.len(), 2 * blocks + usize::from(extra));

            let fcfg = FusionNetConfig { heatmap_side: 5, heatmap_channels: hc, image: cfg, dropout_rate: 0.1 };
            let f = FusionNet::<f32>::init(fcfg.clone(), &mut seeded(seed)).unwrap();
            prop_assert_eq!(Network::param_count(&f), fcfg.param_count());
        }
    }

    #[test]
    fn init_is_seeded_and_fan_in_bounded() {
        let a = PatchNet::<f32>::init(PatchNetConfig::default(), &mut seeded(7)).unwrap();
        let b = PatchNet::<f32>::init(PatchNetConfig::default(), &mut seeded(7)).unwrap();
        let c = PatchNet::<f32>::init(PatchNetConfig::default(), &mut seeded(8)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        for layer in &a.stack.layers {
            let fan_in: usize = layer.weight.shape()[1..].iter().product();
            let lim = (6.0 / fan_in as f64).sqrt() as f32;
            assert!(layer.weight.data().iter().all(|w| w.abs() <= lim));
            assert!(layer.bias.data().iter().all(|&b| b == 0.0));
        }
    }

    #[test]
    fn end_to_end_patchnet_gradient() {
        for seed in 0..20u64 {
            let err = crate::gradcheck::patchnet_suite(seed).unwrap();
            assert!(err < 1e-4, "seed {seed}: relative error {err}");
        }
    }

    struct FusionLoss {
        net: FusionNet<f64>,
        heat: Tensor<f64>,
    }

    impl Differentiable for FusionLoss {
        fn forward(&self, inputs: &[Tensor<f64>]) -> Result<Tensor<f64>> {
            let mut net = self.net.clone();
            for (p, v) in net.params_mut().into_iter().zip(&inputs[1..]) {
                *p = v.clone();
            }
            let (p, _) = net.forward_traced(&inputs[0], &self.heat, true, &mut seeded(3))?;
            Ok(Tensor::vector(vec![crate::loss::bce_loss(p, 1)?.0]))
        }

        fn backward(&self, inputs: &[Tensor<f64>], g: &Tensor<f64>) -> Result<Vec<Tensor<f64>>> {
            let mut net = self.net.clone();
            for (p, v) in net.params_mut().into_iter().zip(&inputs[1..]) {
                *p = v.clone();
            }
            let (p, trace) = net.forward_traced(&inputs[0], &self.heat, true, &mut seeded(3))?;
            let (_, dz) = bce_logit_grad(p, 1)?;
            let mut out = vec![Tensor::zeros(inputs[0].shape())];
            out.extend(net.backward(&trace, dz * g.data()[0])?);
            Ok(out)
        }
    }

    #[test]
    fn fusion_parameter_gradient() {
        let cfg = FusionNetConfig { heatmap_side: 5, heatmap_channels: 2, image: tiny(), dropout_rate: 0.2 };
        let mut rng = seeded(11);
        let net = FusionNet::<f64>::init(cfg, &mut rng).unwrap();
        let heat = Tensor::from_fn(&[1, 5, 5], |_| f64::from(u8::from(rng.gen_bool(0.4))));
        let mut inputs = vec![Tensor::from_fn(&[1, 8, 8], |_| rng.gen_range(0.0..1.0))];
        inputs.extend(net.named_params().into_iter().map(|(_, t)| t.clone()));
        for t in inputs.iter_mut().skip(1) {
            if t.shape().len() == 1 {
                t.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(0.01..0.1));
            }
        }
        // the image input gradient is not produced; check parameters only
        let op = FusionLoss { net, heat };
        struct ParamsOnly<'a>(&'a FusionLoss, Tensor<f64>);
        impl Differentiable for ParamsOnly<'_> {
            fn forward(&self, inputs: &[Tensor<f64>]) -> Result<Tensor<f64>> {
                let mut all = vec![self.1.clone()];
                all.extend_from_slice(inputs);
                self.0.forward(&all)
            }
            fn backward(&self, inputs: &[Tensor<f64>], g: &Tensor<f64>) -> Result<Vec<Tensor<f64>>> {
                let mut all = vec![self.1.clone()];
                all.extend_from_slice(inputs);
                Ok(self.0.backward(&all, g)?.split_off(1))
            }
        }
        let image = inputs.remove(0);
        let err = grad_check(&ParamsOnly(&op, image), &inputs, 1e-6).unwrap();
        assert!(err < 1e-4, "relative error {err}");
    }
}
