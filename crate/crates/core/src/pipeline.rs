//! Photo bytes → model input → forward pass, shared by the service, the
//! ingestion backfill and the evaluation harness.

use thiserror::Error;

use crate::dating::{decide_with, DatingDecision, DecisionError, DecisionPolicy, EmbeddingVector};
use crate::evalbench::Prediction;
use crate::imageproc::{decode, remove_background, resize_bilinear, to_model_input, Image, ImageError, Normalization};
use crate::nnx::{ops::softmax, ForwardOutput, Model, NnxError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Model(#[from] NnxError),
    #[error(transparent)]
    Decision(#[from] DecisionError),
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PreprocessConfig {
    pub normalization: Normalization,
    /// Flood-fill tolerance when background removal runs before inference.
    pub remove_background: Option<u8>,
}


/// Resizes to the model's input side and normalizes.
pub fn prepare(image: &Image, model: &Model, cfg: &PreprocessConfig) -> Result<crate::nnx::Tensor, ImageError> {
    let side = model.config().input_size as u32;
    let mut resized = resize_bilinear(image, side, side)?;
    if let Some(tolerance) = cfg.remove_background {
        resized = remove_background(&resized, tolerance)?.0;
    }
    to_model_input(&resized, &cfg.normalization, side)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Inference {
    pub output: ForwardOutput,
    pub probabilities: Vec<f32>,
}

impl Inference {
    pub fn embedding(&self) -> Result<EmbeddingVector, crate::dating::RetrievalError> {
        EmbeddingVector::new(self.output.embedding.clone())
    }

    pub fn decide(&self, policy: &DecisionPolicy) -> Result<DatingDecision, DecisionError> {
        decide_with(policy, &self.probabilities)
    }

    pub fn prediction(&self, policy: &DecisionPolicy) -> Result<Prediction, DecisionError> {
        let d = self.decide(policy)?;
        Ok(d.ranked.first().map_or(Prediction::OtherStuffs, |r| Prediction::Dated(r.period)))
    }
}

pub fn infer_image(image: &Image, model: &Model, cfg: &PreprocessConfig) -> Result<Inference, PipelineError> {
    let input = prepare(image, model, cfg)?;
    let output = model.forward(&input)?;
    let probabilities = softmax(&output.logits)?;
    Ok(Inference { output, probabilities })
}

pub fn infer_bytes(bytes: &[u8], model: &Model, cfg: &PreprocessConfig) -> Result<Inference, PipelineError> {
    infer_image(&decode(bytes)?, model, cfg)
}
