//! Central finite-difference checks of analytic gradients, in `f64`.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::layers::{
    activation_forward, backward, bce_loss, conv2d_forward, crop_forward, dense_forward,
    maxpool2x2_forward, tconv_forward, tconv_sparse_matrix, Activation, ConvSpec,
};
use crate::model::{loss_and_gradients, BatchResult, ModelConfig, Weights, INPUT_CHANNELS};
use crate::renet::{
    directional_sweep, renet_backward, renet_block, sweep_backward, Direction, RenetParams,
    SweepParams,
};
use crate::rng::RngState;
use crate::tensor::Tensor;

pub const STEP: f64 = 1e-3;
/// Bound for maps that are linear in each perturbed scalar.
pub const LINEAR_TOLERANCE: f64 = 1e-6;
pub const TOLERANCE: f64 = 1e-4;

/// `|a − b| / max(|a|, |b|, 1e−8)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Perturbs every scalar of every input by `±step` and compares
/// `(f(x+h) − f(x−h)) / 2h` with the matching entry of `analytic`.
/// Returns the largest relative error.
pub fn finite_diff_check<F>(
    mut f: F,
    inputs: &[Tensor<f64>],
    analytic: &[Tensor<f64>],
    step: f64,
) -> Result<f64>
where
    F: FnMut(&[Tensor<f64>]) -> Result<f64>,
{
    if inputs.len() != analytic.len() {
        return Err(Error::InvalidArgument(format!(
            "{} inputs but {} analytic gradients",
            inputs.len(),
            analytic.len()
        )));
    }
    let mut worst = 0.0f64;
    let mut probe = inputs.to_vec();
    for (t, grad) in analytic.iter().enumerate() {
        probe[t].expect_same_shape(grad)?;
        for e in 0..grad.len() {
            let orig = probe[t].data()[e];
            probe[t].data_mut()[e] = orig + step;
            let plus = f(&probe)?;
            probe[t].data_mut()[e] = orig - step;
            let minus = f(&probe)?;
            probe[t].data_mut()[e] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            worst = worst.max(relative_error(grad.data()[e], numeric));
        }
    }
    Ok(worst)
}

/// A layer and how its inputs are laid out for [`check_layer`].
#[derive(Clone, Debug)]
pub enum LayerUnderTest {
    /// inputs: `[x, weights, bias]`
    Conv(ConvSpec),
    /// inputs: `[x]`
    MaxPool,
    /// inputs: `[x]`
    Activation(Activation),
    /// inputs: `[x, weights, bias]`
    Dense,
    /// inputs: `[x, kernel, bias]`; the sparse matrix is rebuilt from the kernel
    TConv { stride: usize },
    /// inputs: `[x]`
    Crop { border: usize },
    /// inputs: `[pred]`
    Bce { target: Tensor<f64> },
    /// inputs: `[x, W_x, W_z, b]`
    Sweep(Direction),
    /// inputs: `[x, then W_x, W_z, b for down, up, right, left]`
    Renet { patch: (usize, usize) },
}

impl LayerUnderTest {
    /// Output tensor and, for ops that reduce to a scalar, `None` projection.
    fn forward(&self, inputs: &[Tensor<f64>]) -> Result<Tensor<f64>> {
        Ok(match self {
            LayerUnderTest::Conv(spec) => {
                conv2d_forward(&inputs[0], &inputs[1], &inputs[2], *spec)?.0
            }
            LayerUnderTest::MaxPool => maxpool2x2_forward(&inputs[0])?.0,
            LayerUnderTest::Activation(kind) => activation_forward(&inputs[0], *kind)?.0,
            LayerUnderTest::Dense => dense_forward(&inputs[0], &inputs[1], &inputs[2])?.0,
            LayerUnderTest::TConv { stride } => {
                let (h, w, _) = inputs[0].hwc()?;
                let m = Arc::new(tconv_sparse_matrix(&inputs[1], (h, w), *stride)?);
                tconv_forward(&inputs[0], &m, &inputs[2])?.0
            }
            LayerUnderTest::Crop { border } => crop_forward(&inputs[0], *border)?.0,
            LayerUnderTest::Bce { target } => {
                Tensor::from_vec(&[1], vec![bce_loss(&inputs[0], target)?.0])?
            }
            LayerUnderTest::Sweep(dir) => {
                directional_sweep(&inputs[0], *dir, &sweep_params(&inputs[1..4]))?
                    .0
                    .activations
            }
            LayerUnderTest::Renet { patch } => {
                renet_block(&inputs[0], &renet_params(&inputs[1..13]), *patch)?
                    .0
                    .output
            }
        })
    }

    /// All gradients of `Σ projection ⊙ output`, ordered like the inputs.
    fn analytic(
        &self,
        inputs: &[Tensor<f64>],
        projection: &Tensor<f64>,
    ) -> Result<Vec<Tensor<f64>>> {
        let layer_grads = |(_, rec)| -> Result<Vec<Tensor<f64>>> {
            let g = backward(rec, projection)?;
            Ok(std::iter::once(g.input).chain(g.params).collect())
        };
        match self {
            LayerUnderTest::Conv(spec) => {
                layer_grads(conv2d_forward(&inputs[0], &inputs[1], &inputs[2], *spec)?)
            }
            LayerUnderTest::MaxPool => layer_grads(maxpool2x2_forward(&inputs[0])?),
            LayerUnderTest::Activation(kind) => layer_grads(activation_forward(&inputs[0], *kind)?),
            LayerUnderTest::Dense => {
                layer_grads(dense_forward(&inputs[0], &inputs[1], &inputs[2])?)
            }
            LayerUnderTest::TConv { stride } => {
                let (h, w, _) = inputs[0].hwc()?;
                let m = Arc::new(tconv_sparse_matrix(&inputs[1], (h, w), *stride)?);
                layer_grads(tconv_forward(&inputs[0], &m, &inputs[2])?)
            }
            LayerUnderTest::Crop { border } => layer_grads(crop_forward(&inputs[0], *border)?),
            LayerUnderTest::Bce { target } => {
                let (_, rec) = bce_loss(&inputs[0], target)?;
                Ok(vec![backward(rec, projection)?.input])
            }
            LayerUnderTest::Sweep(dir) => {
                let (_, rec) = directional_sweep(&inputs[0], *dir, &sweep_params(&inputs[1..4]))?;
                let (dx, dp) = sweep_backward(rec, projection)?;
                Ok(std::iter::once(dx).chain(dp).collect())
            }
            LayerUnderTest::Renet { patch } => {
                let (_, rec) = renet_block(&inputs[0], &renet_params(&inputs[1..13]), *patch)?;
                let (dx, dp) = renet_backward(rec, projection)?;
                let mut out = vec![dx];
                for d in Direction::ALL {
                    out.extend(dp.get(d).tensors().into_iter().cloned());
                }
                Ok(out)
            }
        }
    }
}

fn sweep_params(t: &[Tensor<f64>]) -> SweepParams<f64> {
    SweepParams {
        input_weights: t[0].clone(),
        recurrent_weights: t[1].clone(),
        bias: t[2].clone(),
    }
}

fn renet_params(t: &[Tensor<f64>]) -> RenetParams<f64> {
    RenetParams {
        down: sweep_params(&t[0..3]),
        up: sweep_params(&t[3..6]),
        right: sweep_params(&t[6..9]),
        left: sweep_params(&t[9..12]),
    }
}

/// Checks one layer on the scalar `Σ R ⊙ output` for a fixed random `R` with
/// entries of magnitude in `[0.5, 1.5]`. Returns the max relative error.
pub fn check_layer(
    layer: &LayerUnderTest,
    inputs: &[Tensor<f64>],
    rng: &mut RngState,
) -> Result<f64> {
    let out = layer.forward(inputs)?;
    let projection = if matches!(layer, LayerUnderTest::Bce { .. }) {
        Tensor::from_vec(&[1], vec![1.0])?
    } else {
        let data = (0..out.len())
            .map(|_| {
                let m = rng.uniform(0.5, 1.5);
                if rng.next_f64() < 0.5 {
                    -m
                } else {
                    m
                }
            })
            .collect();
        Tensor::from_vec(out.shape(), data)?
    };
    let analytic = layer.analytic(inputs, &projection)?;
    let objective = |x: &[Tensor<f64>]| -> Result<f64> {
        let y = layer.forward(x)?;
        Ok(y.data()
            .iter()
            .zip(projection.data())
            .map(|(a, b)| a * b)
            .sum())
    };
    finite_diff_check(objective, inputs, &analytic, STEP)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteEntry {
    pub name: String,
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl SuiteEntry {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut RngState) -> Result<Tensor<f64>> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.uniform(lo, hi)).collect())
}

/// Values at least `gap` apart from each other and from zero, in random order.
fn separated(shape: &[usize], gap: f64, rng: &mut RngState) -> Result<Tensor<f64>> {
    let n: usize = shape.iter().product();
    let mut values: Vec<f64> = (0..n)
        .map(|i| (i as f64 - n as f64 / 2.0 + 0.5) * gap)
        .collect();
    rng.shuffle(&mut values);
    Tensor::from_vec(shape, values)
}

/// Runs the finite-difference check for every layer kind on small random
/// shapes derived from `seed`.
pub fn gradient_suite(seed: u64) -> Result<Vec<SuiteEntry>> {
    let mut rng = RngState::new(seed)?;
    let mut entries = Vec::new();
    let mut run = |name: &str,
                   layer: LayerUnderTest,
                   inputs: Vec<Tensor<f64>>,
                   tolerance: f64,
                   rng: &mut RngState|
     -> Result<()> {
        let err = check_layer(&layer, &inputs, rng)?;
        entries.push(SuiteEntry {
            name: name.to_string(),
            max_rel_error: err,
            tolerance,
        });
        Ok(())
    };

    let spec = ConvSpec::square(2, 3, 3, 1);
    let inputs = vec![
        uniform(&[5, 6, 2], -1.0, 1.0, &mut rng)?,
        uniform(&spec.weight_shape(), -1.0, 1.0, &mut rng)?,
        uniform(&[3], -1.0, 1.0, &mut rng)?,
    ];
    run(
        "conv3x3",
        LayerUnderTest::Conv(spec),
        inputs,
        LINEAR_TOLERANCE,
        &mut rng,
    )?;

    let spec = ConvSpec {
        in_channels: 3,
        out_channels: 2,
        kernel: (2, 3),
        stride: 2,
        padding: 1,
    };
    let inputs = vec![
        uniform(&[5, 5, 3], -1.0, 1.0, &mut rng)?,
        uniform(&spec.weight_shape(), -1.0, 1.0, &mut rng)?,
        uniform(&[2], -1.0, 1.0, &mut rng)?,
    ];
    run(
        "conv_strided",
        LayerUnderTest::Conv(spec),
        inputs,
        LINEAR_TOLERANCE,
        &mut rng,
    )?;

    let x = separated(&[4, 6, 2], 0.05, &mut rng)?;
    run(
        "maxpool2x2",
        LayerUnderTest::MaxPool,
        vec![x],
        LINEAR_TOLERANCE,
        &mut rng,
    )?;

    let x = separated(&[3, 4, 2], 0.1, &mut rng)?;
    run(
        "relu",
        LayerUnderTest::Activation(Activation::Relu),
        vec![x],
        TOLERANCE,
        &mut rng,
    )?;
    let x = uniform(&[3, 4, 2], -2.0, 2.0, &mut rng)?;
    run(
        "tanh",
        LayerUnderTest::Activation(Activation::Tanh),
        vec![x],
        TOLERANCE,
        &mut rng,
    )?;
    let x = uniform(&[3, 4, 2], -3.0, 3.0, &mut rng)?;
    run(
        "sigmoid",
        LayerUnderTest::Activation(Activation::Sigmoid),
        vec![x],
        TOLERANCE,
        &mut rng,
    )?;

    let inputs = vec![
        uniform(&[5], -1.0, 1.0, &mut rng)?,
        uniform(&[5, 3], -1.0, 1.0, &mut rng)?,
        uniform(&[3], -1.0, 1.0, &mut rng)?,
    ];
    run(
        "dense",
        LayerUnderTest::Dense,
        inputs,
        LINEAR_TOLERANCE,
        &mut rng,
    )?;

    let inputs = vec![
        uniform(&[3, 2, 2], -1.0, 1.0, &mut rng)?,
        uniform(&[4, 4, 2, 3], -1.0, 1.0, &mut rng)?,
        uniform(&[3], -1.0, 1.0, &mut rng)?,
    ];
    run(
        "tconv_sparse",
        LayerUnderTest::TConv { stride: 2 },
        inputs,
        LINEAR_TOLERANCE,
        &mut rng,
    )?;

    let x = uniform(&[6, 6, 2], -1.0, 1.0, &mut rng)?;
    run(
        "crop",
        LayerUnderTest::Crop { border: 1 },
        vec![x],
        LINEAR_TOLERANCE,
        &mut rng,
    )?;

    let pred = uniform(&[4, 4, 1], 0.2, 0.8, &mut rng)?;
    let target = Tensor::from_vec(
        &[4, 4, 1],
        (0..16)
            .map(|_| (rng.next_f64() < 0.5) as u8 as f64)
            .collect(),
    )?;
    run(
        "bce",
        LayerUnderTest::Bce { target },
        vec![pred],
        TOLERANCE,
        &mut rng,
    )?;

    for dir in Direction::ALL {
        let inputs = vec![
            uniform(&[3, 4, 3], -1.0, 1.0, &mut rng)?,
            uniform(&[3, 4], -0.8, 0.8, &mut rng)?,
            uniform(&[4, 4], -0.8, 0.8, &mut rng)?,
            uniform(&[4], -0.5, 0.5, &mut rng)?,
        ];
        run(
            &format!("sweep_{}", dir.name()),
            LayerUnderTest::Sweep(dir),
            inputs,
            TOLERANCE,
            &mut rng,
        )?;
    }

    let (units, channels) = (3, 2);
    let patch_len = 2 * 2 * channels;
    let mut inputs = vec![uniform(&[4, 6, channels], -1.0, 1.0, &mut rng)?];
    for d in Direction::ALL {
        let p = if d.axis() == crate::renet::Axis::Vertical {
            patch_len
        } else {
            2 * units
        };
        inputs.push(uniform(&[p, units], -0.6, 0.6, &mut rng)?);
        inputs.push(uniform(&[units, units], -0.6, 0.6, &mut rng)?);
        inputs.push(uniform(&[units], -0.3, 0.3, &mut rng)?);
    }
    run(
        "renet_block",
        LayerUnderTest::Renet { patch: (2, 2) },
        inputs,
        TOLERANCE,
        &mut rng,
    )?;

    Ok(entries)
}

/// Bound for the end-to-end network check.
pub const MODEL_TOLERANCE: f64 = 1e-3;
/// Smaller than [`STEP`] so that few relu units cross their kink.
pub const MODEL_STEP: f64 = 1e-5;

/// Compares the network's analytic gradients of the batch loss with central
/// differences at `samples` randomly chosen parameter scalars, using `f64`
/// weights and a one-image batch of side `image_size`.
pub fn model_gradient_check(
    seed: u64,
    image_size: usize,
    samples: usize,
    step: f64,
) -> Result<f64> {
    let config = ModelConfig {
        image_size,
        seed,
        ..ModelConfig::default()
    };
    let mut rng = RngState::new(seed)?;
    let mut weights = Weights::<f64>::init(&config, &mut rng)?;
    // nonzero biases keep relu inputs away from the kink at exactly 0
    let names = weights.names();
    for (name, t) in names.iter().zip(weights.tensors_mut()) {
        if name.ends_with("bias") {
            *t = uniform(t.shape(), -0.1, 0.1, &mut rng)?;
        }
    }
    let image = uniform(
        &[image_size, image_size, INPUT_CHANNELS],
        0.0,
        1.0,
        &mut rng,
    )?;
    let mask = Tensor::from_vec(
        &[image_size, image_size, 1],
        (0..image_size * image_size)
            .map(|_| if rng.next_f64() < 0.3 { 1.0 } else { 0.0 })
            .collect(),
    )?;
    let loss = |w: &Weights<f64>| -> Result<BatchResult<f64>> {
        loss_and_gradients(&config, w, &[(&image, &mask)])
    };
    let analytic = loss(&weights)?.gradients;
    let sizes: Vec<usize> = weights.tensors().iter().map(|t| t.len()).collect();
    let total: usize = sizes.iter().sum();
    let mut probe = weights.clone();
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let mut flat = rng.below(total);
        let mut t = 0;
        while flat >= sizes[t] {
            flat -= sizes[t];
            t += 1;
        }
        let orig = weights.tensors()[t].data()[flat];
        probe.tensors_mut()[t].data_mut()[flat] = orig + step;
        let plus = loss(&probe)?.loss;
        probe.tensors_mut()[t].data_mut()[flat] = orig - step;
        let minus = loss(&probe)?.loss;
        probe.tensors_mut()[t].data_mut()[flat] = orig;
        let numeric = (plus - minus) / (2.0 * step);
        worst = worst.max(relative_error(analytic.tensors()[t].data()[flat], numeric));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_denominator_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert_eq!(relative_error(1e-9, 0.0), 1e-9 / 1e-8);
        assert!((relative_error(1.0, 1.1) - 0.1 / 1.1).abs() < 1e-15);
    }

    #[test]
    fn detects_a_wrong_gradient() {
        let x = Tensor::from_vec(&[2], vec![0.3, -0.7]).unwrap();
        let f = |t: &[Tensor<f64>]| -> Result<f64> { Ok(t[0].data().iter().map(|v| v * v).sum()) };
        let right = Tensor::from_vec(&[2], vec![0.6, -1.4]).unwrap();
        let wrong = Tensor::from_vec(&[2], vec![0.6, -1.0]).unwrap();
        assert!(finite_diff_check(f, std::slice::from_ref(&x), &[right], STEP).unwrap() < 1e-9);
        assert!(finite_diff_check(f, &[x], &[wrong], STEP).unwrap() > 0.1);
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = RngState::new(3).unwrap();
        let spec = ConvSpec::square(1, 2, 3, 1);
        let x = uniform(&[4, 4, 1], -1.0, 1.0, &mut rng).unwrap();
        let w = uniform(&spec.weight_shape(), -1.0, 1.0, &mut rng).unwrap();
        let b = uniform(&[2], -1.0, 1.0, &mut rng).unwrap();
        let layer = LayerUnderTest::Conv(spec);
        let out = layer.forward(&[x.clone(), w.clone(), b.clone()]).unwrap();
        let grads = layer
            .analytic(&[x, w, b], &Tensor::zeros_like(&out))
            .unwrap();
        assert!(grads.iter().all(|g| g.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn suite_passes() {
        for entry in gradient_suite(1).unwrap() {
            assert!(entry.passed(), "{entry:?}");
        }
    }
}
