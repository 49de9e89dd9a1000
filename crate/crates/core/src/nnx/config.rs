use std::fmt::Write as _;

use crate::period::Period;

use super::NnxError;

/// Architecture description carried inside every weights bundle.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub input_size: usize,
    pub in_channels: usize,
    pub stem_patch: usize,
    pub stage_depths: Vec<usize>,
    pub stage_widths: Vec<usize>,
    pub num_classes: usize,
    pub embedding_dim: usize,
    pub kernel_size: usize,
    pub mlp_ratio: usize,
    pub layer_norm_eps: f32,
}

const ARCHITECTURE: &str = "convnext";
const DOWNSAMPLE: &str = "norm_conv2x2";

impl ModelConfig {
    /// Two-stage reference configuration used throughout the tests.
    pub fn tiny() -> Self {
        Self {
            input_size: 32,
            in_channels: 3,
            stem_patch: 4,
            stage_depths: vec![1, 1],
            stage_widths: vec![8, 16],
            num_classes: Period::COUNT,
            embedding_dim: 16,
            kernel_size: 7,
            mlp_ratio: 4,
            layer_norm_eps: 1e-6,
        }
    }

    pub fn validate(&self) -> Result<(), NnxError> {
        let bad = |m: String| Err(NnxError::BadConfig(m));
        if self.num_classes != Period::COUNT {
            return bad(format!("num_classes must be {}, got {}", Period::COUNT, self.num_classes));
        }
        if self.stage_depths.is_empty() || self.stage_depths.len() != self.stage_widths.len() {
            return bad(format!(
                "stage_depths {:?} and stage_widths {:?} must be non-empty and equally long",
                self.stage_depths, self.stage_widths
            ));
        }
        if self.stage_widths.contains(&0) {
            return bad("stage widths must be positive".into());
        }
        if Some(&self.embedding_dim) != self.stage_widths.last() {
            return bad(format!(
                "embedding_dim {} must equal the last stage width",
                self.embedding_dim
            ));
        }
        if self.in_channels == 0 || self.stem_patch == 0 || self.mlp_ratio == 0 {
            return bad("in_channels, stem_patch and mlp_ratio must be positive".into());
        }
        if self.kernel_size.is_multiple_of(2) {
            return bad(format!("kernel_size must be odd, got {}", self.kernel_size));
        }
        if !(self.layer_norm_eps > 0.0 && self.layer_norm_eps.is_finite()) {
            return bad(format!("layer_norm_eps must be positive, got {}", self.layer_norm_eps));
        }
        let mut side = self.input_size / self.stem_patch;
        for _ in 1..self.stage_widths.len() {
            side /= 2;
        }
        if side == 0 {
            return bad(format!(
                "input_size {} collapses to zero after downsampling",
                self.input_size
            ));
        }
        Ok(())
    }

    /// Spatial side length entering stage `index`.
    pub fn stage_side(&self, index: usize) -> usize {
        (self.input_size / self.stem_patch) >> index
    }

    /// Every parameter the model needs, in canonical file order.
    pub fn parameter_specs(&self) -> Vec<(String, Vec<usize>)> {
        let mut specs = Vec::new();
        let k = self.kernel_size;
        let first = self.stage_widths[0];
        specs.push(("stem.conv.weight".into(), vec![first, self.in_channels, self.stem_patch, self.stem_patch]));
        specs.push(("stem.conv.bias".into(), vec![first]));
        specs.push(("stem.norm.weight".into(), vec![first]));
        specs.push(("stem.norm.bias".into(), vec![first]));
        for (s, (&depth, &width)) in self.stage_depths.iter().zip(&self.stage_widths).enumerate() {
            if s > 0 {
                let prev = self.stage_widths[s - 1];
                specs.push((format!("stages.{s}.downsample.norm.weight"), vec![prev]));
                specs.push((format!("stages.{s}.downsample.norm.bias"), vec![prev]));
                specs.push((format!("stages.{s}.downsample.conv.weight"), vec![width, prev, 2, 2]));
                specs.push((format!("stages.{s}.downsample.conv.bias"), vec![width]));
            }
            let hidden = width * self.mlp_ratio;
            for b in 0..depth {
                let p = format!("stages.{s}.blocks.{b}");
                specs.push((format!("{p}.dwconv.weight"), vec![width, 1, k, k]));
                specs.push((format!("{p}.dwconv.bias"), vec![width]));
                specs.push((format!("{p}.norm.weight"), vec![width]));
                specs.push((format!("{p}.norm.bias"), vec![width]));
                specs.push((format!("{p}.pwconv1.weight"), vec![hidden, width]));
                specs.push((format!("{p}.pwconv1.bias"), vec![hidden]));
                specs.push((format!("{p}.pwconv2.weight"), vec![width, hidden]));
                specs.push((format!("{p}.pwconv2.bias"), vec![width]));
            }
        }
        specs.push(("norm.weight".into(), vec![self.embedding_dim]));
        specs.push(("norm.bias".into(), vec![self.embedding_dim]));
        specs.push(("head.weight".into(), vec![self.num_classes, self.embedding_dim]));
        specs.push(("head.bias".into(), vec![self.num_classes]));
        specs
    }

    pub fn to_text(&self) -> String {
        let join = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        let mut s = String::new();
        let _ = writeln!(s, "architecture={ARCHITECTURE}");
        let _ = writeln!(s, "input_size={}", self.input_size);
        let _ = writeln!(s, "in_channels={}", self.in_channels);
        let _ = writeln!(s, "stem_patch={}", self.stem_patch);
        let _ = writeln!(s, "stage_depths={}", join(&self.stage_depths));
        let _ = writeln!(s, "stage_widths={}", join(&self.stage_widths));
        let _ = writeln!(s, "num_classes={}", self.num_classes);
        let _ = writeln!(s, "embedding_dim={}", self.embedding_dim);
        let _ = writeln!(s, "kernel_size={}", self.kernel_size);
        let _ = writeln!(s, "mlp_ratio={}", self.mlp_ratio);
        let _ = writeln!(s, "layer_norm_eps={}", self.layer_norm_eps);
        let _ = writeln!(s, "downsample={DOWNSAMPLE}");
        s
    }

    pub fn from_text(text: &str) -> Result<Self, NnxError> {
        let mut cfg = Self {
            input_size: 0,
            in_channels: 3,
            stem_patch: 4,
            stage_depths: Vec::new(),
            stage_widths: Vec::new(),
            num_classes: 0,
            embedding_dim: 0,
            kernel_size: 7,
            mlp_ratio: 4,
            layer_norm_eps: 1e-6,
        };
        let bad = |m: String| NnxError::BadConfig(m);
        let int = |k: &str, v: &str| v.trim().parse::<usize>().map_err(|_| bad(format!("{k}: not an integer: {v:?}")));
        let list = |k: &str, v: &str| -> Result<Vec<usize>, NnxError> {
            v.split(',').map(|p| int(k, p)).collect()
        };
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("expected key=value, got {line:?}")))?;
            match key.trim() {
                "architecture" if value.trim() == ARCHITECTURE => {}
                "downsample" if value.trim() == DOWNSAMPLE => {}
                "architecture" | "downsample" => {
                    return Err(bad(format!("unsupported {key}: {value:?}")));
                }
                "input_size" => cfg.input_size = int(key, value)?,
                "in_channels" => cfg.in_channels = int(key, value)?,
                "stem_patch" => cfg.stem_patch = int(key, value)?,
                "stage_depths" => cfg.stage_depths = list(key, value)?,
                "stage_widths" => cfg.stage_widths = list(key, value)?,
                "num_classes" => cfg.num_classes = int(key, value)?,
                "embedding_dim" => cfg.embedding_dim = int(key, value)?,
                "kernel_size" => cfg.kernel_size = int(key, value)?,
                "mlp_ratio" => cfg.mlp_ratio = int(key, value)?,
                "layer_norm_eps" => {
                    cfg.layer_norm_eps = value
                        .trim()
                        .parse()
                        .map_err(|_| bad(format!("layer_norm_eps: not a number: {value:?}")))?
                }
                other => return Err(bad(format!("unknown config key {other:?}"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
