//! Finite-difference verification of layer adjoints.

use rand::Rng as _;

use crate::error::{param_err, Result};
use crate::layers::{self, Activation};
use crate::loss::{bce_logit_grad, bce_loss};
use crate::models::{Network, PatchNet, PatchNetConfig};
use crate::rng::{seeded, Rng};
use crate::tensor::Tensor;

/// An operation with a hand-written adjoint, evaluated in double precision.
pub trait Differentiable {
    fn forward(&self, inputs: &[Tensor<f64>]) -> Result<Tensor<f64>>;
    /// Gradients of `<grad_output, forward(inputs)>` with respect to each input.
    fn backward(&self, inputs: &[Tensor<f64>], grad_output: &Tensor<f64>) -> Result<Vec<Tensor<f64>>>;
}

/// Magnitude below which errors are measured absolutely rather than relatively.
pub const RELATIVE_FLOOR: f64 = 1e-4;

/// Compares every adjoint output against central differences of the scalar
/// `Σ rᵢ·outᵢ`, where `r` is a fixed pseudo-random probe. Returns the worst
/// `|analytic − numeric| / max(|analytic|, |numeric|, RELATIVE_FLOOR)`.
pub fn grad_check(op: &dyn Differentiable, inputs: &[Tensor<f64>], eps: f64) -> Result<f64> {
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(param_err!("finite-difference step must lie in [1e-7, 1e-3], got {eps}"));
    }
    if inputs.iter().any(|t| !t.all_finite()) {
        return Err(param_err!("grad_check inputs must be finite"));
    }
    let out = op.forward(inputs)?;
    let mut rng = seeded(0x6772_6164);
    let probe = Tensor::from_fn(out.shape(), |_| rng.gen_range(-1.0..1.0));
    let summary = |t: &Tensor<f64>| -> f64 { t.data().iter().zip(probe.data()).map(|(a, b)| a * b).sum() };
    let analytic = op.backward(inputs, &probe)?;
    if analytic.len() != inputs.len() {
        return Err(param_err!(
            "adjoint returned {} gradients for {} inputs",
            analytic.len(),
            inputs.len()
        ));
    }

    let mut worst = 0.0f64;
    let mut work = inputs.to_vec();
    for (which, grad) in analytic.iter().enumerate() {
        for idx in 0..work[which].len() {
            let orig = work[which].data()[idx];
            work[which].data_mut()[idx] = orig + eps;
            let plus = summary(&op.forward(&work)?);
            work[which].data_mut()[idx] = orig - eps;
            let minus = summary(&op.forward(&work)?);
            work[which].data_mut()[idx] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = grad.data()[idx];
            let denom = a.abs().max(numeric.abs()).max(RELATIVE_FLOOR);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    Ok(worst)
}

/// `inputs = [x, weights, bias]`.
pub struct Conv2dOp {
    pub stride: usize,
    pub padding: usize,
}

impl Differentiable for Conv2dOp {
    fn forward(&self, inputs: &[Tensor<f64>]) -> Result<Tensor<f64>> {
        layers::conv2d(&inputs[0], &inputs[1], &inputs[2], self.stride, self.padding)
    }

    fn backward(&self, inputs: &[Tensor<f64>], g: &Tensor<f64>) -> Result<Vec<Tensor<f64>>> {
        let grads = layers::conv2d_backward(&inputs[0], &inputs[1], self.stride, self.padding, g)?;
        Ok(vec![grads.input, grads.weights, grads.bias])
    }
}

/// `inputs = [x]`.
pub struct MaxPool2Op;

impl Differentiable for MaxPool2Op {
    fn forward(&self, inputs: &[Tensor<f64>]) -> Result<Tensor<f64>> {
        Ok(layers::maxpool2(&inputs[0])?.0)
    }

    fn backward(&self, inputs: &[Tensor<f64>], g: &Tensor<f64>) -> Result<Vec<Tensor<f64>>> {
        let (_, arg) = layers::maxpool2(&inputs[0])?;
        Ok(vec![layers::maxpool2_backward(inputs[0].shape(), &arg, g)?])
    }
}

/// `inputs = [x, weights, bias]`.
pub struct DenseOp;

impl Differentiable for DenseOp {
    fn forward(&self, inputs: &[Tensor<f64>]) -> Result<Tensor<f64>> {
        layers::dense(&inputs[0], &inputs[1], &inputs[2])
    }

    fn backward(&self, inputs: &[Tensor<f64>], g: &Tensor<f64>) -> Result<Vec<Tensor<f64>>> {
        let grads = layers::dense_backward(&inputs[0], &inputs[1], g)?;
        Ok(vec![grads.input, grads.weights, grads.bias])
    }
}

/// `inputs = [x]`.
pub struct ActivationOp(pub Activation);

impl Differentiable for ActivationOp {
    fn forward(&self, inputs: &[Tensor<f64>]) -> Result<Tensor<f64>> {
        Ok(self.0.forward(&inputs[0]))
    }

    fn backward(&self, inputs: &[Tensor<f64>], g: &Tensor<f64>) -> Result<Vec<Tensor<f64>>> {
        let out = self.0.forward(&inputs[0]);
        Ok(vec![self.0.backward(&out, g)?])
    }
}

/// `inputs = [x]`.
pub struct GlobalAvgPoolOp;

impl Differentiable for GlobalAvgPoolOp {
    fn forward(&self, inputs: &[Tensor<f64>]) -> Result<Tensor<f64>> {
        layers::global_avg_pool(&inputs[0])
    }

    fn backward(&self, inputs: &[Tensor<f64>], g: &Tensor<f64>) -> Result<Vec<Tensor<f64>>> {
        Ok(vec![layers::global_avg_pool_backward(inputs[0].shape(), g)?])
    }
}

/// Dropout replayed with a fixed seed so every evaluation draws the same mask.
pub struct DropoutOp {
    pub rate: f64,
    pub seed: u64,
}

impl Differentiable for DropoutOp {
    fn forward(&self, inputs: &[Tensor<f64>]) -> Result<Tensor<f64>> {
        Ok(layers::dropout(&inputs[0], self.rate, &mut seeded(self.seed), true)?.0)
    }

    fn backward(&self, inputs: &[Tensor<f64>], g: &Tensor<f64>) -> Result<Vec<Tensor<f64>>> {
        let (_, mask) = layers::dropout(&inputs[0], self.rate, &mut seeded(self.seed), true)?;
        Ok(vec![mask.backward(g)?])
    }
}

/// `inputs = [patch, params...]`; the output is the BCE loss of a PatchNet
/// for `label`, with dropout replayed from `seed`.
pub struct PatchNetLoss {
    pub net: PatchNet<f64>,
    pub label: u8,
    pub seed: u64,
}

impl PatchNetLoss {
    fn with(&self, inputs: &[Tensor<f64>]) -> PatchNet<f64> {
        let mut net = self.net.clone();
        for (p, v) in net.params_mut().into_iter().zip(&inputs[1..]) {
            *p = v.clone();
        }
        net
    }
}

impl Differentiable for PatchNetLoss {
    fn forward(&self, inputs: &[Tensor<f64>]) -> Result<Tensor<f64>> {
        let (p, _) = self.with(inputs).forward_traced(&inputs[0], true, &mut seeded(self.seed))?;
        Ok(Tensor::vector(vec![bce_loss(p, self.label)?.0]))
    }

    fn backward(&self, inputs: &[Tensor<f64>], g: &Tensor<f64>) -> Result<Vec<Tensor<f64>>> {
        let net = self.with(inputs);
        let (p, trace) = net.forward_traced(&inputs[0], true, &mut seeded(self.seed))?;
        let (_, dz) = bce_logit_grad(p, self.label)?;
        let (grads, gx) = net.backward_with_input(&trace, dz * g.data()[0])?;
        let mut out = vec![gx];
        out.extend(grads);
        Ok(out)
    }
}

fn random(shape: &[usize], rng: &mut Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

/// Continuous values bounded away from zero, so relu kinks stay out of reach
/// of the finite-difference step.
fn off_zero(shape: &[usize], rng: &mut Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let m = rng.gen_range(0.05..1.0);
        if rng.gen_bool(0.5) { m } else { -m }
    })
}

/// Checks every layer adjoint on random inputs drawn from `seed`.
/// Returns `(layer, worst relative error)` pairs.
pub fn layer_suite(seed: u64) -> Result<Vec<(&'static str, f64)>> {
    let mut rng = seeded(seed);
    // Central differences are exact for piecewise-linear ops, so a wide step
    // only trims roundoff. Maxpool keeps a narrow one to stay clear of ties.
    let eps = 1e-4;
    let mut out = Vec::new();
    let dense = [random(&[6], &mut rng), random(&[4, 6], &mut rng), random(&[4], &mut rng)];
    out.push(("dense", grad_check(&DenseOp, &dense, eps)?));
    let conv = [random(&[2, 7, 7], &mut rng), random(&[3, 2, 3, 3], &mut rng), random(&[3], &mut rng)];
    out.push(("conv2d", grad_check(&Conv2dOp { stride: 1, padding: 1 }, &conv, eps)?));
    out.push(("conv2d_strided", grad_check(&Conv2dOp { stride: 2, padding: 0 }, &conv, eps)?));
    out.push(("maxpool2", grad_check(&MaxPool2Op, &[random(&[2, 6, 6], &mut rng)], 1e-6)?));
    out.push(("relu", grad_check(&ActivationOp(Activation::Relu), &[off_zero(&[24], &mut rng)], eps)?));
    let z = Tensor::from_fn(&[24], |_| rng.gen_range(-4.0..4.0));
    out.push(("sigmoid", grad_check(&ActivationOp(Activation::Sigmoid), &[z], eps)?));
    out.push(("global_avg_pool", grad_check(&GlobalAvgPoolOp, &[random(&[3, 4, 4], &mut rng)], eps)?));
    let drop = DropoutOp { rate: 0.3, seed };
    out.push(("dropout", grad_check(&drop, &[random(&[30], &mut rng)], eps)?));
    Ok(out)
}

/// A PatchNet small enough for exhaustive finite differences.
pub fn tiny_patchnet_config() -> PatchNetConfig {
    PatchNetConfig {
        input_side: 8,
        base_channels: 2,
        blocks: 1,
        extra_conv: true,
        dropout_rate: 0.25,
        ..PatchNetConfig::default()
    }
}

/// End-to-end check of the tiny PatchNet: input and every parameter.
pub fn patchnet_suite(seed: u64) -> Result<f64> {
    let mut rng = seeded(100 + seed);
    let net = PatchNet::<f64>::init(tiny_patchnet_config(), &mut rng)?;
    // continuous inputs keep maxpool ties away from the probe
    let mut inputs = vec![random(&[1, 8, 8], &mut rng)];
    inputs.extend(net.named_params().into_iter().map(|(_, t)| t.clone()));
    // nonzero biases so relu kinks are not pinned at zero
    for t in inputs.iter_mut().skip(1) {
        if t.shape().len() == 1 {
            t.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-0.1..0.1));
        }
    }
    grad_check(&PatchNetLoss { net, label: (seed % 2) as u8, seed }, &inputs, 1e-6)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_passes() {
        let mut rng = seeded(1);
        let inputs = [random(&[3], &mut rng), random(&[5, 3], &mut rng), random(&[5], &mut rng)];
        assert!(grad_check(&DenseOp, &inputs, 1e-5).unwrap() < 1e-6);
    }

    #[test]
    fn conv_passes() {
        let mut rng = seeded(2);
        let inputs = [
            random(&[2, 6, 6], &mut rng),
            random(&[3, 2, 3, 3], &mut rng),
            random(&[3], &mut rng),
        ];
        let op = Conv2dOp { stride: 1, padding: 0 };
        assert!(grad_check(&op, &inputs, 1e-5).unwrap() < 1e-6);
    }

    #[test]
    fn sigmoid_passes() {
        let mut rng = seeded(3);
        let inputs = [Tensor::from_fn(&[32], |_| rng.gen_range(-4.0..4.0))];
        assert!(grad_check(&ActivationOp(Activation::Sigmoid), &inputs, 1e-5).unwrap() < 1e-8);
    }

    #[test]
    fn detects_a_wrong_adjoint() {
        struct Broken;
        impl Differentiable for Broken {
            fn forward(&self, inputs: &[Tensor<f64>]) -> Result<Tensor<f64>> {
                Ok(inputs[0].map(|v| v * v))
            }
            fn backward(&self, inputs: &[Tensor<f64>], g: &Tensor<f64>) -> Result<Vec<Tensor<f64>>> {
                // missing factor 2
                let d = inputs[0].data().iter().zip(g.data()).map(|(x, g)| x * g).collect();
                Ok(vec![Tensor::new(inputs[0].shape().to_vec(), d)?])
            }
        }
        let inputs = [Tensor::vector(vec![0.5, -1.0, 2.0])];
        assert!(grad_check(&Broken, &inputs, 1e-5).unwrap() > 0.4);
    }

    #[test]
    fn every_layer_passes_across_seeds() {
        for seed in 0..20 {
            for (name, err) in layer_suite(seed).unwrap() {
                assert!(err < 1e-5, "{name} seed {seed}: {err}");
            }
        }
    }

    #[test]
    fn rejects_bad_step() {
        let inputs = [Tensor::vector(vec![1.0])];
        assert!(grad_check(&ActivationOp(Activation::Relu), &inputs, 1e-2).is_err());
    }
}
