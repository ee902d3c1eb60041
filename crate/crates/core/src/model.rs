//! The network: Siamese encoder, view fusion, transformation decoder
//! (fusion and average schemes) and the classification head.
//!
//! One parameter set encodes every view, original and transformed; a
//! view-wise max pool fuses per-view features into the object
//! descriptor. The decoder is a single linear layer on the concatenated
//! (original, transformed) features; the classifier is a linear layer on
//! the fused original descriptor only.

use crate::error::{Error, Result};
use crate::geometry::Rotation3;
use crate::renderer::{ViewImage, ViewSet};
use crate::rng::SplitMix64;
use crate::tensor::{Scalar, Tape, Tensor, Var};

/// Channel widths of the three conv blocks.
pub const CONV_CHANNELS: [usize; 3] = [16, 32, 64];
/// Descriptor dimension d.
pub const FEATURE_DIM: usize = 128;

/// Shared weight-shape metadata.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    /// Expected view resolution (height, width); both divisible by 8.
    pub input_hw: (usize, usize),
    pub feature_dim: usize,
    pub num_classes: usize,
}

impl ModelConfig {
    pub fn new(input_hw: (usize, usize), num_classes: usize) -> Result<Self> {
        if input_hw.0 < 8 || input_hw.1 < 8 || !input_hw.0.is_multiple_of(8) || !input_hw.1.is_multiple_of(8) {
            return Err(Error::domain(format!(
                "encoder input {}x{} must be at least 8x8 and divisible by 8",
                input_hw.0, input_hw.1
            )));
        }
        if num_classes == 0 {
            return Err(Error::domain("model needs at least one class"));
        }
        Ok(ModelConfig {
            input_hw,
            feature_dim: FEATURE_DIM,
            num_classes,
        })
    }

    /// Flattened width after the three conv/pool blocks.
    pub fn flat_dim(&self) -> usize {
        CONV_CHANNELS[2] * (self.input_hw.0 / 8) * (self.input_hw.1 / 8)
    }
}

/// The Siamese feature extractor: three conv(3x3)-relu-pool blocks then
/// a linear map to the descriptor.
#[derive(Debug, Clone)]
pub struct Encoder<T> {
    pub input_hw: (usize, usize),
    pub feature_dim: usize,
    pub conv1: Tensor<T>,
    pub conv2: Tensor<T>,
    pub conv3: Tensor<T>,
    pub fc_weight: Tensor<T>,
    pub fc_bias: Tensor<T>,
}

/// One linear layer from concatenated descriptors (2d) to the three
/// normalized transformation parameters.
#[derive(Debug, Clone)]
pub struct Decoder<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Linear layer from the fused descriptor to class logits.
#[derive(Debug, Clone)]
pub struct ClassifierHead<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub encoder: Encoder<T>,
    pub decoder: Decoder<T>,
    pub head: ClassifierHead<T>,
}

fn uniform_tensor<T: Scalar>(shape: Vec<usize>, fan_in: usize, rng: &mut SplitMix64) -> Tensor<T> {
    let scale = 1.0 / (fan_in as f64).sqrt();
    let len: usize = shape.iter().product();
    let data: Vec<T> = (0..len)
        .map(|_| T::from_f64(rng.uniform(-scale, scale)))
        .collect();
    Tensor::new(shape, data).expect("shape/data agree by construction")
}

impl<T: Scalar> Model<T> {
    /// Fresh model with centered-uniform 1/sqrt(fan_in) weights and zero
    /// biases, drawn in a fixed order from the seed.
    pub fn init(config: ModelConfig, seed: u64) -> Self {
        let mut rng = SplitMix64::new(seed);
        let d = config.feature_dim;
        let flat = config.flat_dim();
        let k = config.num_classes;
        let conv1 = uniform_tensor(vec![CONV_CHANNELS[0], 1, 3, 3], 9, &mut rng);
        let conv2 = uniform_tensor(
            vec![CONV_CHANNELS[1], CONV_CHANNELS[0], 3, 3],
            CONV_CHANNELS[0] * 9,
            &mut rng,
        );
        let conv3 = uniform_tensor(
            vec![CONV_CHANNELS[2], CONV_CHANNELS[1], 3, 3],
            CONV_CHANNELS[1] * 9,
            &mut rng,
        );
        let fc_weight = uniform_tensor(vec![flat, d], flat, &mut rng);
        let dec_weight = uniform_tensor(vec![2 * d, 3], 2 * d, &mut rng);
        let head_weight = uniform_tensor(vec![d, k], d, &mut rng);
        Model {
            config,
            encoder: Encoder {
                input_hw: config.input_hw,
                feature_dim: d,
                conv1,
                conv2,
                conv3,
                fc_weight,
                fc_bias: Tensor::zeros(vec![d]),
            },
            decoder: Decoder {
                weight: dec_weight,
                bias: Tensor::zeros(vec![3]),
            },
            head: ClassifierHead {
                weight: head_weight,
                bias: Tensor::zeros(vec![k]),
            },
        }
    }

    /// Parameters in their canonical checkpoint order.
    pub fn named_params(&self) -> Vec<(&'static str, &Tensor<T>)> {
        vec![
            ("encoder.conv1", &self.encoder.conv1),
            ("encoder.conv2", &self.encoder.conv2),
            ("encoder.conv3", &self.encoder.conv3),
            ("encoder.fc.weight", &self.encoder.fc_weight),
            ("encoder.fc.bias", &self.encoder.fc_bias),
            ("decoder.weight", &self.decoder.weight),
            ("decoder.bias", &self.decoder.bias),
            ("head.weight", &self.head.weight),
            ("head.bias", &self.head.bias),
        ]
    }

    pub fn named_params_mut(&mut self) -> Vec<(&'static str, &mut Tensor<T>)> {
        vec![
            ("encoder.conv1", &mut self.encoder.conv1),
            ("encoder.conv2", &mut self.encoder.conv2),
            ("encoder.conv3", &mut self.encoder.conv3),
            ("encoder.fc.weight", &mut self.encoder.fc_weight),
            ("encoder.fc.bias", &mut self.encoder.fc_bias),
            ("decoder.weight", &mut self.decoder.weight),
            ("decoder.bias", &mut self.decoder.bias),
            ("head.weight", &mut self.head.weight),
            ("head.bias", &mut self.head.bias),
        ]
    }

    /// Records every parameter on the tape as trainable.
    pub fn bind(&self, tape: &mut Tape<T>) -> Result<BoundModel> {
        self.bind_with(tape, true)
    }

    /// Records every parameter as a constant (inference only).
    pub fn bind_frozen(&self, tape: &mut Tape<T>) -> Result<BoundModel> {
        self.bind_with(tape, false)
    }

    fn bind_with(&self, tape: &mut Tape<T>, trainable: bool) -> Result<BoundModel> {
        Ok(BoundModel {
            encoder: self.encoder.bind_with(tape, trainable)?,
            dec_weight: bind_tensor(tape, &self.decoder.weight, trainable)?,
            dec_bias: bind_tensor(tape, &self.decoder.bias, trainable)?,
            head_weight: bind_tensor(tape, &self.head.weight, trainable)?,
            head_bias: bind_tensor(tape, &self.head.bias, trainable)?,
        })
    }
}

fn bind_tensor<T: Scalar>(tape: &mut Tape<T>, t: &Tensor<T>, trainable: bool) -> Result<Var> {
    if trainable {
        tape.parameter(t.clone())
    } else {
        tape.constant(t.clone())
    }
}

/// Tape handles for the encoder weights.
#[derive(Debug, Clone, Copy)]
pub struct BoundEncoder {
    pub input_hw: (usize, usize),
    pub feature_dim: usize,
    pub flat_dim: usize,
    pub conv1: Var,
    pub conv2: Var,
    pub conv3: Var,
    pub fc_weight: Var,
    pub fc_bias: Var,
}

/// Tape handles for one bound copy of the model.
#[derive(Debug, Clone, Copy)]
pub struct BoundModel {
    pub encoder: BoundEncoder,
    pub dec_weight: Var,
    pub dec_bias: Var,
    pub head_weight: Var,
    pub head_bias: Var,
}

impl BoundModel {
    /// Parameter vars in `named_params` order, for gradient collection.
    pub fn param_vars(&self) -> [Var; 9] {
        [
            self.encoder.conv1,
            self.encoder.conv2,
            self.encoder.conv3,
            self.encoder.fc_weight,
            self.encoder.fc_bias,
            self.dec_weight,
            self.dec_bias,
            self.head_weight,
            self.head_bias,
        ]
    }
}

impl<T: Scalar> Encoder<T> {
    fn bind_with(&self, tape: &mut Tape<T>, trainable: bool) -> Result<BoundEncoder> {
        let flat_dim = self.fc_weight.shape()[0];
        Ok(BoundEncoder {
            input_hw: self.input_hw,
            feature_dim: self.feature_dim,
            flat_dim,
            conv1: bind_tensor(tape, &self.conv1, trainable)?,
            conv2: bind_tensor(tape, &self.conv2, trainable)?,
            conv3: bind_tensor(tape, &self.conv3, trainable)?,
            fc_weight: bind_tensor(tape, &self.fc_weight, trainable)?,
            fc_bias: bind_tensor(tape, &self.fc_bias, trainable)?,
        })
    }

    /// Feature vectors for a batch of views through a frozen tape.
    pub fn encode_views(&self, views: &[&ViewImage]) -> Result<Vec<Vec<T>>> {
        for v in views {
            if (v.height(), v.width()) != self.input_hw {
                return Err(Error::domain(format!(
                    "view resolution {}x{} does not match encoder input {}x{}",
                    v.height(),
                    v.width(),
                    self.input_hw.0,
                    self.input_hw.1
                )));
            }
        }
        let mut tape = Tape::new();
        let be = self.bind_with(&mut tape, false)?;
        let x = tape.constant(views_to_tensor(views)?)?;
        let descs = encode_batch(&mut tape, &be, x)?;
        Ok(tape
            .value(descs)
            .data()
            .chunks_exact(self.feature_dim)
            .map(|c| c.to_vec())
            .collect())
    }

    /// Feature vector of one view.
    pub fn encode(&self, view: &ViewImage) -> Result<Vec<T>> {
        Ok(self
            .encode_views(&[view])?
            .into_iter()
            .next()
            .expect("one view in, one descriptor out"))
    }
}

/// Stacks view images into an [n, 1, h, w] input tensor.
pub fn views_to_tensor<T: Scalar>(views: &[&ViewImage]) -> Result<Tensor<T>> {
    if views.is_empty() {
        return Err(Error::domain("views_to_tensor needs at least one view"));
    }
    let (h, w) = (views[0].height(), views[0].width());
    let mut data = Vec::with_capacity(views.len() * h * w);
    for v in views {
        if v.height() != h || v.width() != w {
            return Err(Error::domain("views differ in resolution"));
        }
        data.extend(v.pixels().iter().map(|&p| T::from_f64(p)));
    }
    Tensor::new(vec![views.len(), 1, h, w], data)
}

/// Encoder forward on the tape: x [n, 1, h, w] -> descriptors [n, d].
pub fn encode_batch<T: Scalar>(tape: &mut Tape<T>, enc: &BoundEncoder, x: Var) -> Result<Var> {
    let shape = tape.shape(x).to_vec();
    if shape.len() != 4 || (shape[2], shape[3]) != enc.input_hw || shape[1] != 1 {
        return Err(Error::domain(format!(
            "encoder expects [n, 1, {}, {}], got {:?}",
            enc.input_hw.0, enc.input_hw.1, shape
        )));
    }
    let n = shape[0];
    let mut h = x;
    for conv in [enc.conv1, enc.conv2, enc.conv3] {
        h = tape.conv2d(h, conv)?;
        h = tape.relu(h)?;
        h = tape.maxpool2d(h)?;
    }
    let flat = tape.reshape(h, vec![n, enc.flat_dim])?;
    tape.dense(flat, enc.fc_weight, enc.fc_bias)
}

/// Which decoding scheme turns per-view features into one estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    /// Decode once from max-fused descriptors (original, transformed).
    Fusion,
    /// Decode per view pair and average the estimates.
    Average,
}

impl Scheme {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "fusion" => Ok(Scheme::Fusion),
            "average" => Ok(Scheme::Average),
            other => Err(Error::domain(format!(
                "unknown scheme '{other}' (expected 'fusion' or 'average')"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Scheme::Fusion => "fusion",
            Scheme::Average => "average",
        }
    }
}

/// Joint forward pass products for one batch of objects.
pub struct MvterForward {
    /// Transformation estimates [batch, 3].
    pub prediction: Var,
    /// Max-fused original-view descriptors [batch, d].
    pub fused_original: Var,
}

/// Runs the encoder over original and transformed view stacks (both
/// [batch * m, 1, h, w], object-major) and decodes the transformation
/// with the requested scheme.
pub fn forward_mvter<T: Scalar>(
    tape: &mut Tape<T>,
    bm: &BoundModel,
    original: Var,
    transformed: Var,
    batch: usize,
    views_per_object: usize,
    scheme: Scheme,
) -> Result<MvterForward> {
    let m = views_per_object;
    if m == 0 || batch == 0 {
        return Err(Error::domain("forward_mvter needs at least one object and view"));
    }
    let d = bm.encoder.feature_dim;
    let desc_orig = encode_batch(tape, &bm.encoder, original)?;
    let desc_trans = encode_batch(tape, &bm.encoder, transformed)?;
    let grouped_orig = tape.reshape(desc_orig, vec![batch, m, d])?;
    let fused_original = tape.view_max(grouped_orig)?;
    let prediction = match scheme {
        Scheme::Fusion => {
            let grouped_trans = tape.reshape(desc_trans, vec![batch, m, d])?;
            let fused_trans = tape.view_max(grouped_trans)?;
            let cat = tape.concat_cols(fused_original, fused_trans)?;
            tape.dense(cat, bm.dec_weight, bm.dec_bias)?
        }
        Scheme::Average => {
            let cat = tape.concat_cols(desc_orig, desc_trans)?;
            let per_view = tape.dense(cat, bm.dec_weight, bm.dec_bias)?;
            let grouped = tape.reshape(per_view, vec![batch, m, 3])?;
            tape.view_mean(grouped)?
        }
    };
    Ok(MvterForward {
        prediction,
        fused_original,
    })
}

/// Class logits from fused descriptors [n, d] -> [n, k].
pub fn classify_batch<T: Scalar>(tape: &mut Tape<T>, bm: &BoundModel, fused: Var) -> Result<Var> {
    tape.dense(fused, bm.head_weight, bm.head_bias)
}

/// Elementwise maximum over view descriptors.
pub fn fuse<T: Scalar>(descriptors: &[Vec<T>]) -> Result<Vec<T>> {
    let first = descriptors
        .first()
        .ok_or_else(|| Error::domain("fuse needs at least one descriptor"))?;
    let mut out = first.clone();
    for desc in &descriptors[1..] {
        if desc.len() != out.len() {
            return Err(Error::domain(format!(
                "fuse dimension mismatch: {} vs {}",
                desc.len(),
                out.len()
            )));
        }
        for (o, &v) in out.iter_mut().zip(desc) {
            if v > *o {
                *o = v;
            }
        }
    }
    Ok(out)
}

fn linear<T: Scalar>(input: &[T], weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Vec<T>> {
    let shape = weight.shape();
    if shape.len() != 2 || input.len() != shape[0] || bias.len() != shape[1] {
        return Err(Error::domain(format!(
            "linear shape mismatch: input {} vs weight {:?}",
            input.len(),
            shape
        )));
    }
    let o = shape[1];
    let mut out: Vec<T> = bias.data().to_vec();
    let w = weight.data();
    for (row, &x) in input.iter().enumerate() {
        let wrow = &w[row * o..(row + 1) * o];
        for (acc, &wv) in out.iter_mut().zip(wrow) {
            *acc = *acc + x * wv;
        }
    }
    Ok(out)
}

/// Decodes the transformation from the fused original/transformed
/// descriptor pair (fusion scheme, single object).
pub fn decode_fusion<T: Scalar>(f_orig: &[T], f_trans: &[T], dec: &Decoder<T>) -> Result<[T; 3]> {
    if f_orig.len() != f_trans.len() {
        return Err(Error::domain(format!(
            "decode_fusion dimension mismatch: {} vs {}",
            f_orig.len(),
            f_trans.len()
        )));
    }
    let mut cat = Vec::with_capacity(f_orig.len() * 2);
    cat.extend_from_slice(f_orig);
    cat.extend_from_slice(f_trans);
    let out = linear(&cat, &dec.weight, &dec.bias)?;
    Ok([out[0], out[1], out[2]])
}

/// Per-view estimates averaged into one (average scheme, single object).
pub fn decode_average<T: Scalar>(pairs: &[(Vec<T>, Vec<T>)], dec: &Decoder<T>) -> Result<[T; 3]> {
    if pairs.is_empty() {
        return Err(Error::domain("decode_average needs at least one view pair"));
    }
    let mut sum = [T::zero(); 3];
    for (orig, trans) in pairs {
        let est = decode_fusion(orig, trans, dec)?;
        for (s, e) in sum.iter_mut().zip(est) {
            *s = *s + e;
        }
    }
    let inv = T::one() / T::from_f64(pairs.len() as f64);
    Ok([sum[0] * inv, sum[1] * inv, sum[2] * inv])
}

/// Class logits for one fused descriptor.
pub fn classify<T: Scalar>(fused: &[T], head: &ClassifierHead<T>) -> Result<Vec<T>> {
    linear(fused, &head.weight, &head.bias)
}

/// Normalized regression target: angles / 180, componentwise in [-1, 1].
pub fn angles_to_target(t: &Rotation3) -> [f64; 3] {
    let a = t.angles();
    [a[0] / 180.0, a[1] / 180.0, a[2] / 180.0]
}

/// Inverse of [`angles_to_target`]. Values must lie in [-1, 1].
pub fn target_to_angles(v: [f64; 3]) -> Result<[f64; 3]> {
    for &c in &v {
        if !c.is_finite() || !(-1.0..=1.0).contains(&c) {
            return Err(Error::domain(format!(
                "normalized target component {c} outside [-1, 1]"
            )));
        }
    }
    Ok([v[0] * 180.0, v[1] * 180.0, v[2] * 180.0])
}

/// Object descriptor: encode every view of the set, then max-fuse.
pub fn object_descriptor<T: Scalar>(model: &Model<T>, views: &ViewSet) -> Result<Vec<T>> {
    let refs: Vec<&ViewImage> = views.views().iter().collect();
    let descs = model.encoder.encode_views(&refs)?;
    fuse(&descs)
}

/// Writes the model to an MVTR checkpoint (values stored as f32).
pub fn save_model<T: Scalar>(model: &Model<T>, path: &std::path::Path) -> Result<()> {
    let tensors: Vec<crate::tensor::checkpoint::CheckpointTensor> = model
        .named_params()
        .into_iter()
        .map(|(name, t)| crate::tensor::checkpoint::CheckpointTensor {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            data: t.data().iter().map(|v| v.into_f64() as f32).collect(),
        })
        .collect();
    crate::tensor::checkpoint::write_checkpoint(path, &tensors)
}

/// Reads a checkpoint into a model of the given configuration. Names
/// and shapes must match exactly.
pub fn load_model<T: Scalar>(path: &std::path::Path, config: ModelConfig) -> Result<Model<T>> {
    let tensors = crate::tensor::checkpoint::read_checkpoint(path)?;
    let mut model = Model::init(config, 0);
    let expected = model.named_params().len();
    if tensors.len() != expected {
        return Err(Error::domain(format!(
            "checkpoint holds {} tensors, model expects {expected}",
            tensors.len()
        )));
    }
    for (name, param) in model.named_params_mut() {
        let stored = tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::domain(format!("checkpoint missing tensor '{name}'")))?;
        if stored.shape != param.shape() {
            return Err(Error::domain(format!(
                "checkpoint tensor '{name}' has shape {:?}, model expects {:?}",
                stored.shape,
                param.shape()
            )));
        }
        for (dst, &src) in param.data_mut().iter_mut().zip(&stored.data) {
            *dst = T::from_f64(src as f64);
        }
    }
    Ok(model)
}

/// Post-relu activations of the first conv block for a stack of views:
/// [n, c1, h, w].
pub fn first_block_activations<T: Scalar>(
    model: &Model<T>,
    views: &[&ViewImage],
) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let bm = model.bind_frozen(&mut tape)?;
    let x = tape.constant(views_to_tensor(views)?)?;
    let shape = tape.shape(x).to_vec();
    if (shape[2], shape[3]) != bm.encoder.input_hw {
        return Err(Error::domain(format!(
            "view resolution {}x{} does not match encoder input {}x{}",
            shape[2], shape[3], bm.encoder.input_hw.0, bm.encoder.input_hw.1
        )));
    }
    let c = tape.conv2d(x, bm.encoder.conv1)?;
    let r = tape.relu(c)?;
    Ok(tape.value(r).clone())
}
