//! ConvNeXt-style classifier: patchify stem, stages of depthwise blocks with
//! normalized 2×2 strided downsampling between them, pooled and normalized
//! embedding, linear head.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::ops::{conv2d, depthwise_conv2d, gelu, global_avg_pool, layer_norm, linear};
use super::{weights, ModelConfig, NnxError, Tensor};

/// Parameters of one residual block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams {
    pub dw_weight: Tensor,
    pub dw_bias: Tensor,
    pub norm_weight: Tensor,
    pub norm_bias: Tensor,
    pub pw1_weight: Tensor,
    pub pw1_bias: Tensor,
    pub pw2_weight: Tensor,
    pub pw2_bias: Tensor,
}

impl BlockParams {
    /// All-zero parameters for a block of `width` channels.
    pub fn zeros(width: usize, kernel_size: usize, mlp_ratio: usize) -> Self {
        let hidden = width * mlp_ratio;
        Self {
            dw_weight: Tensor::zeros(vec![width, 1, kernel_size, kernel_size]),
            dw_bias: Tensor::zeros(vec![width]),
            norm_weight: Tensor::zeros(vec![width]),
            norm_bias: Tensor::zeros(vec![width]),
            pw1_weight: Tensor::zeros(vec![hidden, width]),
            pw1_bias: Tensor::zeros(vec![hidden]),
            pw2_weight: Tensor::zeros(vec![width, hidden]),
            pw2_bias: Tensor::zeros(vec![width]),
        }
    }
}

/// depthwise k×k → layer norm → pointwise expand → GELU → pointwise project → residual add.
pub fn convnext_block(x: &Tensor, params: &BlockParams, epsilon: f32) -> Result<Tensor, NnxError> {
    let k = params.dw_weight.shape().get(2).copied().unwrap_or(0);
    let dw = depthwise_conv2d(x, &params.dw_weight, &params.dw_bias, k / 2)?;
    if dw.shape() != x.shape() {
        return Err(NnxError::ShapeMismatch(format!(
            "depthwise output {:?} differs from block input {:?}",
            dw.shape(),
            x.shape()
        )));
    }
    let h = dw.to_channels_last()?;
    let h = layer_norm(&h, &params.norm_weight, &params.norm_bias, epsilon)?;
    let h = linear(&h, &params.pw1_weight, &params.pw1_bias)?;
    let h = gelu(&h);
    let h = linear(&h, &params.pw2_weight, &params.pw2_bias)?;
    let branch = h.to_channels_first()?;
    if branch.shape() != x.shape() {
        return Err(NnxError::ShapeMismatch(format!(
            "block branch {:?} differs from block input {:?}",
            branch.shape(),
            x.shape()
        )));
    }
    let mut out = x.clone();
    out.data_mut()
        .iter_mut()
        .zip(branch.data())
        .for_each(|(o, b)| *o += b);
    Ok(out)
}

/// Layer norm over the channel axis of a `(C, H, W)` tensor.
fn channel_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor, epsilon: f32) -> Result<Tensor, NnxError> {
    layer_norm(&x.to_channels_last()?, gamma, beta, epsilon)?.to_channels_first()
}

#[derive(Debug, Clone)]
struct Downsample {
    norm_weight: Tensor,
    norm_bias: Tensor,
    conv_weight: Tensor,
    conv_bias: Tensor,
}

#[derive(Debug, Clone)]
struct Stage {
    downsample: Option<Downsample>,
    blocks: Vec<BlockParams>,
}

/// Outputs of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub logits: Vec<f32>,
    pub embedding: Vec<f32>,
}

/// A loaded, immutable classifier.
#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    stem_weight: Tensor,
    stem_bias: Tensor,
    stem_norm_weight: Tensor,
    stem_norm_bias: Tensor,
    stages: Vec<Stage>,
    norm_weight: Tensor,
    norm_bias: Tensor,
    head_weight: Tensor,
    head_bias: Tensor,
    fingerprint: String,
}

impl Model {
    /// Assembles a model from a name → tensor table, which must contain
    /// exactly the parameters the config requires.
    pub fn from_parameters(config: ModelConfig, mut params: BTreeMap<String, Tensor>) -> Result<Self, NnxError> {
        config.validate()?;
        for (name, shape) in config.parameter_specs() {
            match params.get(&name) {
                None => return Err(NnxError::MissingTensor(name)),
                Some(t) if t.shape() != shape.as_slice() => {
                    return Err(NnxError::TensorShapeMismatch {
                        name,
                        expected: shape,
                        found: t.shape().to_vec(),
                    })
                }
                Some(t) if !t.is_finite() => return Err(NnxError::NonFiniteTensor(name)),
                Some(_) => {}
            }
        }
        if params.len() != config.parameter_specs().len() {
            let known: Vec<String> = config.parameter_specs().into_iter().map(|(n, _)| n).collect();
            let extra = params.keys().find(|k| !known.contains(k)).cloned().unwrap_or_default();
            return Err(NnxError::UnexpectedTensor(extra));
        }

        let mut take = |name: &str| params.remove(name).expect("presence checked above");
        let stem_weight = take("stem.conv.weight");
        let stem_bias = take("stem.conv.bias");
        let stem_norm_weight = take("stem.norm.weight");
        let stem_norm_bias = take("stem.norm.bias");
        let mut stages = Vec::with_capacity(config.stage_depths.len());
        for (s, &depth) in config.stage_depths.iter().enumerate() {
            let downsample = (s > 0).then(|| Downsample {
                norm_weight: take(&format!("stages.{s}.downsample.norm.weight")),
                norm_bias: take(&format!("stages.{s}.downsample.norm.bias")),
                conv_weight: take(&format!("stages.{s}.downsample.conv.weight")),
                conv_bias: take(&format!("stages.{s}.downsample.conv.bias")),
            });
            let blocks = (0..depth)
                .map(|b| {
                    let p = format!("stages.{s}.blocks.{b}");
                    BlockParams {
                        dw_weight: take(&format!("{p}.dwconv.weight")),
                        dw_bias: take(&format!("{p}.dwconv.bias")),
                        norm_weight: take(&format!("{p}.norm.weight")),
                        norm_bias: take(&format!("{p}.norm.bias")),
                        pw1_weight: take(&format!("{p}.pwconv1.weight")),
                        pw1_bias: take(&format!("{p}.pwconv1.bias")),
                        pw2_weight: take(&format!("{p}.pwconv2.weight")),
                        pw2_bias: take(&format!("{p}.pwconv2.bias")),
                    }
                })
                .collect();
            stages.push(Stage { downsample, blocks });
        }
        let mut model = Self {
            stem_weight,
            stem_bias,
            stem_norm_weight,
            stem_norm_bias,
            stages,
            norm_weight: take("norm.weight"),
            norm_bias: take("norm.bias"),
            head_weight: take("head.weight"),
            head_bias: take("head.bias"),
            config,
            fingerprint: String::new(),
        };
        let digest = Sha256::digest(weights::encode(&model));
        model.fingerprint = hex::encode(&digest[..6]);
        Ok(model)
    }

    /// Deterministic random weights, scaled by fan-in. Used for fixtures.
    pub fn random(config: ModelConfig, seed: u64) -> Result<Self, NnxError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = BTreeMap::new();
        for (name, shape) in config.parameter_specs() {
            let numel: usize = shape.iter().product();
            let data: Vec<f32> = if name.ends_with("norm.weight") {
                (0..numel).map(|_| 1.0 + rng.random_range(-0.1..0.1)).collect()
            } else if name.ends_with("bias") {
                (0..numel).map(|_| rng.random_range(-0.05..0.05)).collect()
            } else {
                let fan_in: usize = shape[1..].iter().product::<usize>().max(1);
                let bound = 1.0 / (fan_in as f32).sqrt();
                (0..numel).map(|_| rng.random_range(-bound..bound)).collect()
            };
            params.insert(name, Tensor::new(shape, data)?);
        }
        Self::from_parameters(config, params)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Short content hash of the serialized weights.
    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    /// Human-readable identity reported by the service.
    pub fn descriptor(&self) -> String {
        let c = &self.config;
        format!(
            "convnext depths={:?} widths={:?} input={} sha256:{}",
            c.stage_depths, c.stage_widths, c.input_size, self.fingerprint
        )
    }

    /// `(C, H, W)` shape the model accepts.
    pub fn input_shape(&self) -> [usize; 3] {
        [self.config.in_channels, self.config.input_size, self.config.input_size]
    }

    /// Parameters in canonical file order.
    pub fn named_parameters(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = vec![
            ("stem.conv.weight".into(), &self.stem_weight),
            ("stem.conv.bias".into(), &self.stem_bias),
            ("stem.norm.weight".into(), &self.stem_norm_weight),
            ("stem.norm.bias".into(), &self.stem_norm_bias),
        ];
        for (s, stage) in self.stages.iter().enumerate() {
            if let Some(d) = &stage.downsample {
                out.push((format!("stages.{s}.downsample.norm.weight"), &d.norm_weight));
                out.push((format!("stages.{s}.downsample.norm.bias"), &d.norm_bias));
                out.push((format!("stages.{s}.downsample.conv.weight"), &d.conv_weight));
                out.push((format!("stages.{s}.downsample.conv.bias"), &d.conv_bias));
            }
            for (b, blk) in stage.blocks.iter().enumerate() {
                let p = format!("stages.{s}.blocks.{b}");
                out.push((format!("{p}.dwconv.weight"), &blk.dw_weight));
                out.push((format!("{p}.dwconv.bias"), &blk.dw_bias));
                out.push((format!("{p}.norm.weight"), &blk.norm_weight));
                out.push((format!("{p}.norm.bias"), &blk.norm_bias));
                out.push((format!("{p}.pwconv1.weight"), &blk.pw1_weight));
                out.push((format!("{p}.pwconv1.bias"), &blk.pw1_bias));
                out.push((format!("{p}.pwconv2.weight"), &blk.pw2_weight));
                out.push((format!("{p}.pwconv2.bias"), &blk.pw2_bias));
            }
        }
        out.push(("norm.weight".into(), &self.norm_weight));
        out.push(("norm.bias".into(), &self.norm_bias));
        out.push(("head.weight".into(), &self.head_weight));
        out.push(("head.bias".into(), &self.head_bias));
        out
    }

    /// Runs the encoder and head on one `(C, H, W)` input.
    pub fn forward(&self, input: &Tensor) -> Result<ForwardOutput, NnxError> {
        if input.shape() != self.input_shape() {
            return Err(NnxError::ShapeMismatch(format!(
                "model expects input {:?}, got {:?}",
                self.input_shape(),
                input.shape()
            )));
        }
        if !input.is_finite() {
            return Err(NnxError::NonFinite);
        }
        let eps = self.config.layer_norm_eps;
        let patch = self.config.stem_patch;
        let mut x = conv2d(input, &self.stem_weight, &self.stem_bias, patch, 0)?;
        x = channel_norm(&x, &self.stem_norm_weight, &self.stem_norm_bias, eps)?;
        for stage in &self.stages {
            if let Some(d) = &stage.downsample {
                x = channel_norm(&x, &d.norm_weight, &d.norm_bias, eps)?;
                x = conv2d(&x, &d.conv_weight, &d.conv_bias, 2, 0)?;
            }
            for block in &stage.blocks {
                x = convnext_block(&x, block, eps)?;
            }
        }
        let pooled = global_avg_pool(&x)?;
        let embedding = layer_norm(&pooled, &self.norm_weight, &self.norm_bias, eps)?;
        let logits = linear(&embedding, &self.head_weight, &self.head_bias)?;
        if !logits.is_finite() || !embedding.is_finite() {
            return Err(NnxError::NonFinite);
        }
        Ok(ForwardOutput {
            logits: logits.into_data(),
            embedding: embedding.into_data(),
        })
    }
}
