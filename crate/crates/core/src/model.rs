//! Network assembly, training and inference.
//!
//! ```text
//! image s×s×3
//!   conv3×3(3→16) relu, conv3×3(16→16) relu, maxpool
//!   conv3×3(16→32) relu, conv3×3(32→32) relu, maxpool
//!   conv3×3(32→64) relu, conv3×3(64→64) relu, conv3×3(64→64) relu   → s/4 × s/4 × 64
//! renet block over 2×2 patches                                        → s/8 × s/8 × 2U
//!   tconv4×4/2(2U→32) crop relu, tconv4×4/2(32→16) crop relu,
//!   tconv4×4/2(16→8) crop relu, conv1×1(8→1) sigmoid                   → s × s × 1
//! ```

use std::fmt::Write as _;
use std::sync::Arc;

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::layers::{
    activation_forward, backward, bce_loss, conv2d_forward, crop_forward, maxpool2x2_forward,
    tconv_forward, tconv_sparse_matrix, Activation, ConvSpec, OpRecord, TConvMatrix,
};
use crate::metrics::{confusion_counts, metrics_from_counts, ConfusionCounts};
use crate::renet::{renet_backward, renet_block, Direction, RenetParams, RenetRecord};
use crate::rng::{glorot_init, he_init, RngState};
use crate::tensor::{Real, Tensor};

pub const INPUT_CHANNELS: usize = 3;
const ENCODER_KERNEL: usize = 3;
const DECODER_KERNEL: usize = 4;
const DECODER_STRIDE: usize = 2;
/// Each transposed conv yields `2·in + 2` cells; one is cropped from each side.
const DECODER_CROP: usize = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EncoderLayer {
    /// 3×3 convolution, padding 1, followed by relu.
    Conv(usize),
    MaxPool,
}

/// Weight initialization of the relu layers. The recurrent sweeps and the
/// sigmoid head are always Glorot-uniform.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitScheme {
    Glorot,
    /// `U(±sqrt(6/fan_in))`, counting only the kernel taps that reach one
    /// output cell.
    He,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub image_size: usize,
    pub encoder: Vec<EncoderLayer>,
    /// Side of the square patches fed to the first recurrent block.
    pub patch: usize,
    pub rnn_units: usize,
    pub renet_blocks: usize,
    /// Output channels of each ×2 transposed-conv stage.
    pub decoder: Vec<usize>,
    pub init: InitScheme,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub threshold: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        use EncoderLayer::{Conv, MaxPool};
        Self {
            image_size: 64,
            encoder: vec![
                Conv(16),
                Conv(16),
                MaxPool,
                Conv(32),
                Conv(32),
                MaxPool,
                Conv(64),
                Conv(64),
                Conv(64),
            ],
            patch: 2,
            rnn_units: 32,
            renet_blocks: 1,
            decoder: vec![32, 16, 8],
            init: InitScheme::He,
            learning_rate: 0.01,
            momentum: 0.9,
            batch_size: 4,
            epochs: 300,
            seed: 42,
            threshold: 0.5,
        }
    }
}

impl ModelConfig {
    pub fn pool_count(&self) -> usize {
        self.encoder
            .iter()
            .filter(|l| **l == EncoderLayer::MaxPool)
            .count()
    }

    pub fn conv_count(&self) -> usize {
        self.encoder.len() - self.pool_count()
    }

    /// Ratio between the image side and the recurrent grid side.
    pub fn downsampling(&self) -> usize {
        (1usize << self.pool_count()) * self.patch
    }

    pub fn encoder_channels(&self) -> usize {
        self.encoder
            .iter()
            .rev()
            .find_map(|l| match l {
                EncoderLayer::Conv(c) => Some(*c),
                EncoderLayer::MaxPool => None,
            })
            .unwrap_or(INPUT_CHANNELS)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.patch == 0 || self.rnn_units == 0 || self.renet_blocks == 0 {
            return fail("patch, rnn_units and renet_blocks must be positive".into());
        }
        if self.encoder.contains(&EncoderLayer::Conv(0)) || self.decoder.contains(&0) {
            return fail("layer widths must be positive".into());
        }
        let down = self.downsampling();
        if self.image_size == 0 || !self.image_size.is_multiple_of(down) {
            return fail(format!(
                "image_size {} is not divisible by {down}",
                self.image_size
            ));
        }
        if 1usize << self.decoder.len() != down {
            return fail(format!(
                "{} decoder stages upsample by {}, but the encoder and patches downsample by {down}",
                self.decoder.len(),
                1usize << self.decoder.len()
            ));
        }
        if self.batch_size == 0 {
            return fail("batch_size must be positive".into());
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return fail(format!("invalid learning rate {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return fail(format!("momentum {} outside [0, 1)", self.momentum));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return fail(format!("threshold {} outside [0, 1]", self.threshold));
        }
        if self.seed == 0 {
            return fail("seed must be nonzero".into());
        }
        Ok(())
    }

    /// Checks that an `h × w` image can pass through the network.
    pub fn check_image_dims(&self, h: usize, w: usize) -> Result<()> {
        let down = self.downsampling();
        if !h.is_multiple_of(down) || !w.is_multiple_of(down) {
            return Err(Error::Config(format!(
                "image size {h}×{w} is not divisible by {down}"
            )));
        }
        Ok(())
    }
}

/// Weight and bias of one convolution or transposed convolution.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvWeights<T = f32> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Real> ConvWeights<T> {
    /// `taps` is the number of kernel positions that reach one output cell.
    fn init(
        scheme: InitScheme,
        kernel: usize,
        taps: usize,
        (c_in, c_out): (usize, usize),
        rng: &mut RngState,
    ) -> Result<Self> {
        let shape = [kernel, kernel, c_in, c_out];
        let weight = match scheme {
            InitScheme::Glorot => glorot_init(&shape, taps * c_in, taps * c_out, rng)?,
            InitScheme::He => he_init(&shape, taps * c_in, rng)?,
        };
        Ok(Self {
            weight,
            bias: Tensor::zeros(&[c_out])?,
        })
    }

    fn cast<U: Real>(&self) -> ConvWeights<U> {
        ConvWeights {
            weight: self.weight.cast(),
            bias: self.bias.cast(),
        }
    }
}

/// All trainable tensors of the network, in declaration order.
#[derive(Clone, Debug, PartialEq)]
pub struct Weights<T = f32> {
    pub encoder: Vec<ConvWeights<T>>,
    pub renet: Vec<RenetParams<T>>,
    pub decoder: Vec<ConvWeights<T>>,
    pub head: ConvWeights<T>,
}

impl<T: Real> Weights<T> {
    /// Random weights and zero biases, drawn in declaration order.
    pub fn init(config: &ModelConfig, rng: &mut RngState) -> Result<Self> {
        config.validate()?;
        let scheme = config.init;
        let k2 = ENCODER_KERNEL * ENCODER_KERNEL;
        let mut encoder = Vec::new();
        let mut c = INPUT_CHANNELS;
        for layer in &config.encoder {
            if let EncoderLayer::Conv(out) = *layer {
                encoder.push(ConvWeights::init(
                    scheme,
                    ENCODER_KERNEL,
                    k2,
                    (c, out),
                    rng,
                )?);
                c = out;
            }
        }
        let u = config.rnn_units;
        let mut renet = Vec::new();
        for b in 0..config.renet_blocks {
            let patch_len = if b == 0 {
                config.patch * config.patch * c
            } else {
                2 * u
            };
            renet.push(RenetParams::glorot(patch_len, u, rng)?);
        }
        let mut decoder = Vec::new();
        let mut c = 2 * u;
        let taps = match scheme {
            InitScheme::Glorot => DECODER_KERNEL * DECODER_KERNEL,
            InitScheme::He => (DECODER_KERNEL / DECODER_STRIDE).pow(2),
        };
        for &out in &config.decoder {
            decoder.push(ConvWeights::init(
                scheme,
                DECODER_KERNEL,
                taps,
                (c, out),
                rng,
            )?);
            c = out;
        }
        let head = ConvWeights::init(InitScheme::Glorot, 1, 1, (c, 1), rng)?;
        Ok(Self {
            encoder,
            renet,
            decoder,
            head,
        })
    }

    pub fn zeros_like(&self) -> Self {
        self.map(Tensor::zeros_like)
    }

    pub fn cast<U: Real>(&self) -> Weights<U> {
        Weights {
            encoder: self.encoder.iter().map(ConvWeights::cast).collect(),
            renet: self.renet.iter().map(RenetParams::cast).collect(),
            decoder: self.decoder.iter().map(ConvWeights::cast).collect(),
            head: self.head.cast(),
        }
    }

    fn map(&self, f: impl Fn(&Tensor<T>) -> Tensor<T>) -> Self {
        let mut out = self.clone();
        for (dst, src) in out.tensors_mut().into_iter().zip(self.tensors()) {
            *dst = f(src);
        }
        out
    }

    /// Names in declaration order.
    pub fn names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for i in 0..self.encoder.len() {
            names.push(format!("encoder.conv{}.weight", i + 1));
            names.push(format!("encoder.conv{}.bias", i + 1));
        }
        for b in 0..self.renet.len() {
            for d in Direction::ALL {
                for part in ["input_weights", "recurrent_weights", "bias"] {
                    names.push(format!("renet{b}.{}.{part}", d.name()));
                }
            }
        }
        for i in 0..self.decoder.len() {
            names.push(format!("decoder.tconv{}.weight", i + 1));
            names.push(format!("decoder.tconv{}.bias", i + 1));
        }
        names.push("head.weight".into());
        names.push("head.bias".into());
        names
    }

    pub fn tensors(&self) -> Vec<&Tensor<T>> {
        let mut out = Vec::new();
        for c in &self.encoder {
            out.extend([&c.weight, &c.bias]);
        }
        for r in &self.renet {
            for d in Direction::ALL {
                out.extend(r.get(d).tensors());
            }
        }
        for c in &self.decoder {
            out.extend([&c.weight, &c.bias]);
        }
        out.extend([&self.head.weight, &self.head.bias]);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        for c in &mut self.encoder {
            out.extend([&mut c.weight, &mut c.bias]);
        }
        for r in &mut self.renet {
            let RenetParams {
                down,
                up,
                right,
                left,
            } = r;
            for p in [down, up, right, left] {
                out.extend(p.tensors_mut());
            }
        }
        for c in &mut self.decoder {
            out.extend([&mut c.weight, &mut c.bias]);
        }
        out.extend([&mut self.head.weight, &mut self.head.bias]);
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// `self += other` tensor by tensor.
    pub fn accumulate(&mut self, other: &Weights<T>) -> Result<()> {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.add_assign(b)?;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            for v in t.data_mut() {
                *v = T::from_f64(v.to_f64() * factor);
            }
        }
    }

    fn expect_same_layout(&self, other: &Weights<T>) -> Result<()> {
        let (a, b) = (self.tensors(), other.tensors());
        if a.len() != b.len() {
            return Err(Error::shape("parameter sets have different tensor counts"));
        }
        for ((x, y), name) in a.iter().zip(&b).zip(self.names()) {
            if x.shape() != y.shape() {
                return Err(Error::shape(format!(
                    "{name}: {:?} vs {:?}",
                    x.shape(),
                    y.shape()
                )));
            }
        }
        Ok(())
    }
}

/// Trainable parameters with their gradient and momentum buffers.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub weights: Weights,
    pub gradients: Weights,
    pub momentum: Weights,
}

const ARCH_ENTRY: &str = "config.architecture";

impl ModelParams {
    pub fn new(config: ModelConfig, weights: Weights) -> Result<Self> {
        config.validate()?;
        let expected = Weights::<f32>::init(&config, &mut RngState::new(1)?)?;
        expected.expect_same_layout(&weights)?;
        let gradients = weights.zeros_like();
        let momentum = weights.zeros_like();
        Ok(Self {
            config,
            weights,
            gradients,
            momentum,
        })
    }

    /// Parameters plus one `config.architecture` entry
    /// `[image_size, patch, rnn_units, renet_blocks, threshold]`.
    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut ckpt = Checkpoint::new();
        let c = &self.config;
        let arch = vec![
            c.image_size as f32,
            c.patch as f32,
            c.rnn_units as f32,
            c.renet_blocks as f32,
            c.threshold as f32,
        ];
        ckpt.push(ARCH_ENTRY, Tensor::from_vec(&[arch.len()], arch)?)?;
        for (name, t) in self.weights.names().into_iter().zip(self.weights.tensors()) {
            ckpt.push(name, t.clone())?;
        }
        Ok(ckpt)
    }

    /// Rebuilds parameters from a checkpoint written by
    /// [`ModelParams::to_checkpoint`]. Training hyperparameters take defaults.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let arch = ckpt.require(ARCH_ENTRY)?.data();
        if arch.len() != 5 {
            return Err(Error::Data(format!("{ARCH_ENTRY} must hold 5 values")));
        }
        let config = ModelConfig {
            image_size: arch[0] as usize,
            patch: arch[1] as usize,
            rnn_units: arch[2] as usize,
            renet_blocks: arch[3] as usize,
            threshold: arch[4] as f64,
            ..ModelConfig::default()
        };
        config.validate().map_err(|e| Error::Data(e.to_string()))?;
        let mut weights = Weights::<f32>::init(&config, &mut RngState::new(1)?)?;
        let names = weights.names();
        for (name, slot) in names.iter().zip(weights.tensors_mut()) {
            let t = ckpt.require(name)?;
            if t.shape() != slot.shape() {
                return Err(Error::Data(format!(
                    "{name} has shape {:?}, expected {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            *slot = t.clone();
        }
        if ckpt.len() != names.len() + 1 {
            return Err(Error::Data(
                "checkpoint has unexpected extra entries".into(),
            ));
        }
        Self::new(config, weights)
    }
}

/// Glorot-initialized parameters for `config`.
pub fn build_model(config: &ModelConfig, rng: &mut RngState) -> Result<ModelParams> {
    let weights = Weights::init(config, rng)?;
    ModelParams::new(config.clone(), weights)
}

/// The network bound to concrete weights and one input size. Holds the
/// sparse matrices of the decoder stages.
pub struct Network<'a, T: Real> {
    config: &'a ModelConfig,
    weights: &'a Weights<T>,
    dims: (usize, usize),
    decoder_matrices: Vec<Arc<TConvMatrix<T>>>,
}

/// Records of one forward pass.
pub struct Tape<T: Real> {
    encoder: Vec<OpRecord<T>>,
    renet: Vec<RenetRecord<T>>,
    decoder: Vec<OpRecord<T>>,
}

impl<'a, T: Real> Network<'a, T> {
    /// Prepares the network for `h × w` images.
    pub fn new(
        config: &'a ModelConfig,
        weights: &'a Weights<T>,
        (h, w): (usize, usize),
    ) -> Result<Self> {
        config.validate()?;
        config.check_image_dims(h, w)?;
        let down = config.downsampling();
        let (mut gh, mut gw) = (h / down, w / down);
        let mut decoder_matrices = Vec::with_capacity(weights.decoder.len());
        for stage in &weights.decoder {
            decoder_matrices.push(Arc::new(tconv_sparse_matrix(
                &stage.weight,
                (gh, gw),
                DECODER_STRIDE,
            )?));
            gh *= 2;
            gw *= 2;
        }
        Ok(Self {
            config,
            weights,
            dims: (h, w),
            decoder_matrices,
        })
    }

    fn check_image(&self, image: &Tensor<T>) -> Result<()> {
        let (h, w, c) = image.hwc()?;
        if (h, w, c) != (self.dims.0, self.dims.1, INPUT_CHANNELS) {
            return Err(Error::shape(format!(
                "network expects {}×{}×{INPUT_CHANNELS} images, got {h}×{w}×{c}",
                self.dims.0, self.dims.1
            )));
        }
        Ok(())
    }

    fn encode_taped(&self, image: &Tensor<T>, tape: &mut Vec<OpRecord<T>>) -> Result<Tensor<T>> {
        self.check_image(image)?;
        let mut x = image.clone();
        let mut convs = self.weights.encoder.iter();
        let mut c = INPUT_CHANNELS;
        for layer in &self.config.encoder {
            match *layer {
                EncoderLayer::Conv(out) => {
                    let cw = convs.next().expect("one weight set per conv");
                    let spec = ConvSpec::square(c, out, ENCODER_KERNEL, ENCODER_KERNEL / 2);
                    let (y, rec) = conv2d_forward(&x, &cw.weight, &cw.bias, spec)?;
                    tape.push(rec);
                    let (y, rec) = activation_forward(&y, Activation::Relu)?;
                    tape.push(rec);
                    x = y;
                    c = out;
                }
                EncoderLayer::MaxPool => {
                    let (y, rec) = maxpool2x2_forward(&x)?;
                    tape.push(rec);
                    x = y;
                }
            }
        }
        Ok(x)
    }

    fn renet_taped(
        &self,
        features: Tensor<T>,
        tape: &mut Vec<RenetRecord<T>>,
    ) -> Result<Tensor<T>> {
        let mut x = features;
        for (b, params) in self.weights.renet.iter().enumerate() {
            let p = if b == 0 { self.config.patch } else { 1 };
            let (out, rec) = renet_block(&x, params, (p, p))?;
            tape.push(rec);
            x = out.output;
        }
        Ok(x)
    }

    fn decode_taped(&self, grid: &Tensor<T>, tape: &mut Vec<OpRecord<T>>) -> Result<Tensor<T>> {
        let down = self.config.downsampling();
        grid.expect_shape(&[
            self.dims.0 / down,
            self.dims.1 / down,
            2 * self.config.rnn_units,
        ])?;
        let mut x = grid.clone();
        for (stage, matrix) in self.weights.decoder.iter().zip(&self.decoder_matrices) {
            let (y, rec) = tconv_forward(&x, matrix, &stage.bias)?;
            tape.push(rec);
            let (y, rec) = crop_forward(&y, DECODER_CROP)?;
            tape.push(rec);
            let (y, rec) = activation_forward(&y, Activation::Relu)?;
            tape.push(rec);
            x = y;
        }
        let c = x.hwc()?.2;
        let head = &self.weights.head;
        let (y, rec) = conv2d_forward(&x, &head.weight, &head.bias, ConvSpec::square(c, 1, 1, 0))?;
        tape.push(rec);
        let (y, rec) = activation_forward(&y, Activation::Sigmoid)?;
        tape.push(rec);
        Ok(y)
    }

    /// Encoder only: `h × w × 3` to `h/4 × w/4 × 64` with the default plan.
    pub fn encode(&self, image: &Tensor<T>) -> Result<Tensor<T>> {
        self.encode_taped(image, &mut Vec::new())
    }

    /// Recurrent blocks only.
    pub fn renet(&self, features: &Tensor<T>) -> Result<Tensor<T>> {
        self.renet_taped(features.clone(), &mut Vec::new())
    }

    /// Decoder only: `h/8 × w/8 × 2U` to `h × w × 1` probabilities.
    pub fn decode(&self, grid: &Tensor<T>) -> Result<Tensor<T>> {
        self.decode_taped(grid, &mut Vec::new())
    }

    /// Probability mask for one image.
    pub fn forward(&self, image: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward_taped(image)?.0)
    }

    pub fn forward_taped(&self, image: &Tensor<T>) -> Result<(Tensor<T>, Tape<T>)> {
        let mut tape = Tape {
            encoder: Vec::new(),
            renet: Vec::new(),
            decoder: Vec::new(),
        };
        let features = self.encode_taped(image, &mut tape.encoder)?;
        let grid = self.renet_taped(features, &mut tape.renet)?;
        let prob = self.decode_taped(&grid, &mut tape.decoder)?;
        Ok((prob, tape))
    }

    /// Gradients of every weight given the gradient at the probability output.
    pub fn backward(&self, tape: Tape<T>, upstream: &Tensor<T>) -> Result<Weights<T>> {
        let mut grads = self.weights.zeros_like();
        let mut g = upstream.clone();

        let mut decoder = tape.decoder;
        let rec = decoder.pop().expect("sigmoid");
        g = backward(rec, &g)?.input;
        let rec = decoder.pop().expect("head");
        let mut hg = backward(rec, &g)?;
        g = hg.input;
        grads.head.bias = hg.params.pop().expect("bias");
        grads.head.weight = hg.params.pop().expect("weight");
        for stage in grads.decoder.iter_mut().rev() {
            for _ in 0..2 {
                g = backward(decoder.pop().expect("relu/crop"), &g)?.input;
            }
            let mut sg = backward(decoder.pop().expect("tconv"), &g)?;
            g = sg.input;
            stage.bias = sg.params.pop().expect("bias");
            stage.weight = sg.params.pop().expect("weight");
        }

        for (rec, slot) in tape
            .renet
            .into_iter()
            .rev()
            .zip(grads.renet.iter_mut().rev())
        {
            let (dx, dp) = renet_backward(rec, &g)?;
            *slot = dp;
            g = dx;
        }

        let mut convs = grads.encoder.iter_mut().rev();
        for rec in tape.encoder.into_iter().rev() {
            let is_conv = matches!(rec, OpRecord::Conv(_));
            let mut lg = backward(rec, &g)?;
            if is_conv {
                let slot = convs.next().expect("conv slot");
                slot.bias = lg.params.pop().expect("bias");
                slot.weight = lg.params.pop().expect("weight");
            }
            g = lg.input;
        }
        Ok(grads)
    }
}

/// `forward` for a single image at its own size.
pub fn forward<T: Real>(
    config: &ModelConfig,
    weights: &Weights<T>,
    image: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (h, w, _) = image.hwc()?;
    Network::new(config, weights, (h, w))?.forward(image)
}

/// Loss, summed-then-averaged gradients and per-sample probability maps of a batch.
pub struct BatchResult<T: Real> {
    pub loss: f64,
    pub gradients: Weights<T>,
    pub predictions: Vec<Tensor<T>>,
}

/// Mean BCE over a batch of `(image, mask)` pairs and its gradients.
/// Samples are processed in order and their gradients summed in that order.
pub fn loss_and_gradients<T: Real>(
    config: &ModelConfig,
    weights: &Weights<T>,
    batch: &[(&Tensor<T>, &Tensor<T>)],
) -> Result<BatchResult<T>> {
    let Some((first, _)) = batch.first() else {
        return Err(Error::Data("empty batch".into()));
    };
    let (h, w, _) = first.hwc()?;
    let net = Network::new(config, weights, (h, w))?;
    let scale = T::from_f64(1.0 / batch.len() as f64);
    let mut total = weights.zeros_like();
    let mut loss = 0.0;
    let mut predictions = Vec::with_capacity(batch.len());
    for (image, mask) in batch {
        let (prob, tape) = net.forward_taped(image)?;
        let (l, rec) = bce_loss(&prob, mask)?;
        let dprob = backward(rec, &Tensor::from_vec(&[1], vec![scale])?)?.input;
        let g = net.backward(tape, &dprob)?;
        total.accumulate(&g)?;
        loss += l;
        predictions.push(prob);
    }
    Ok(BatchResult {
        loss: loss / batch.len() as f64,
        gradients: total,
        predictions,
    })
}

/// One step of SGD with momentum: `v ← μ·v − lr·g`, `θ ← θ + v`.
pub fn sgd_update(params: &mut ModelParams, lr: f64, momentum: f64) -> Result<()> {
    params.weights.expect_same_layout(&params.gradients)?;
    params.weights.expect_same_layout(&params.momentum)?;
    let grads = params.gradients.tensors();
    for ((theta, v), g) in params
        .weights
        .tensors_mut()
        .into_iter()
        .zip(params.momentum.tensors_mut())
        .zip(grads)
    {
        for ((t, vel), &gr) in theta.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
            *vel = (momentum * *vel as f64 - lr * gr as f64) as f32;
            *t = (*t as f64 + *vel as f64) as f32;
        }
    }
    Ok(())
}

/// Binary mask: 1 where `prob ≥ threshold`.
pub fn predict_mask<T: Real>(prob: &Tensor<T>, threshold: f64) -> Tensor<T> {
    prob.map(|p| {
        if p.to_f64() >= threshold {
            T::from_f64(1.0)
        } else {
            T::default()
        }
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    /// Dice over all pixels predicted during the epoch's training passes.
    pub dice: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainTrace {
    pub epochs: Vec<EpochRecord>,
}

impl TrainTrace {
    /// Header line `epoch,loss,dice` then one line per epoch, 6 decimals.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,loss,dice\n");
        for r in &self.epochs {
            let _ = writeln!(s, "{},{:.6},{:.6}", r.epoch, r.loss, r.dice);
        }
        s
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }
}

/// A training pair.
#[derive(Clone, Debug)]
pub struct Sample {
    pub image: Tensor,
    pub mask: Tensor,
}

/// Minibatch SGD over `epochs`. The generator initializes the weights, then
/// shuffles the sample order once per epoch.
pub fn train(
    config: &ModelConfig,
    dataset: &[Sample],
    rng: &mut RngState,
) -> Result<(ModelParams, TrainTrace)> {
    train_with_callback(config, dataset, rng, |_| {})
}

/// [`train`], calling `on_epoch` after every epoch.
pub fn train_with_callback(
    config: &ModelConfig,
    dataset: &[Sample],
    rng: &mut RngState,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(ModelParams, TrainTrace)> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    let s = config.image_size;
    for (i, sample) in dataset.iter().enumerate() {
        sample
            .image
            .expect_shape(&[s, s, INPUT_CHANNELS])
            .map_err(|e| Error::Data(format!("sample {i}: {e}")))?;
        sample
            .mask
            .expect_shape(&[s, s, 1])
            .map_err(|e| Error::Data(format!("sample {i}: {e}")))?;
    }

    let mut params = build_model(config, rng)?;
    let mut trace = TrainTrace::default();
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    for epoch in 1..=config.epochs {
        rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        let mut counts = ConfusionCounts::default();
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<(&Tensor, &Tensor)> = chunk
                .iter()
                .map(|&i| (&dataset[i].image, &dataset[i].mask))
                .collect();
            let result = loss_and_gradients(config, &params.weights, &batch)?;
            loss_sum += result.loss * chunk.len() as f64;
            for (prob, &i) in result.predictions.iter().zip(chunk) {
                counts +=
                    confusion_counts(&predict_mask(prob, config.threshold), &dataset[i].mask)?;
            }
            params.gradients = result.gradients;
            sgd_update(&mut params, config.learning_rate, config.momentum)?;
        }
        let record = EpochRecord {
            epoch,
            loss: loss_sum / dataset.len() as f64,
            dice: metrics_from_counts(&counts)?.di,
        };
        on_epoch(&record);
        trace.epochs.push(record);
    }
    Ok((params, trace))
}

/// Thresholded prediction for one image.
pub fn infer(params: &ModelParams, image: &Tensor) -> Result<Tensor> {
    let prob = forward(&params.config, &params.weights, image)?;
    Ok(predict_mask(&prob, params.config.threshold))
}
