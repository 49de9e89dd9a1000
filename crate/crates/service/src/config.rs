//! Flat `key = value` service configuration.
//!
//! Every key can be overridden from the environment: upper-case it, replace
//! `.` with `_` and prefix `SERVICE_` (so `detector.url` becomes
//! `SERVICE_DETECTOR_URL`).

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use thiserror::Error;

use dingdate_core::dating::{DEFAULT_OTHER_STUFFS_THRESHOLD, DEFAULT_REFERENCE_K};

pub const MIN_UPLOAD_BYTES: usize = 1 << 20;
pub const ENV_PREFIX: &str = "SERVICE_";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {reason}")]
    Syntax { line: usize, reason: String },
    #[error("unknown key {0:?}")]
    UnknownKey(String),
    #[error("{key}: {reason}")]
    Invalid { key: String, reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServiceConfig {
    pub listen: SocketAddr,
    pub weights: PathBuf,
    pub catalog: PathBuf,
    /// `None` selects the built-in stub detector.
    pub detector_url: Option<String>,
    pub detector_timeout: Duration,
    pub detector_max_concurrent: usize,
    pub score_threshold: f32,
    pub max_boxes: usize,
    pub reference_k: usize,
    pub other_stuffs_threshold: f32,
    pub max_upload_bytes: usize,
    pub inference_concurrency: usize,
    /// Requests allowed to wait for an inference slot before 503.
    pub queue_bound: usize,
    pub remove_background: bool,
    pub background_tolerance: u8,
    pub filter_by_period: bool,
    /// Directory where uploads are kept for triage. Off when `None`.
    pub retain_uploads: Option<PathBuf>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            listen: "127.0.0.1:8080".parse().unwrap(),
            weights: PathBuf::from("weights.nnxw"),
            catalog: PathBuf::from("catalog"),
            detector_url: None,
            detector_timeout: Duration::from_millis(2000),
            detector_max_concurrent: 4,
            score_threshold: 0.5,
            max_boxes: 10,
            reference_k: DEFAULT_REFERENCE_K,
            other_stuffs_threshold: DEFAULT_OTHER_STUFFS_THRESHOLD,
            max_upload_bytes: 8 << 20,
            inference_concurrency: 2,
            queue_bound: 64,
            remove_background: false,
            background_tolerance: 10,
            filter_by_period: false,
            retain_uploads: None,
        }
    }
}

pub const KEYS: [&str; 17] = [
    "listen",
    "weights",
    "catalog",
    "detector.url",
    "detector.timeout_ms",
    "detector.max_concurrent",
    "score_threshold",
    "max_boxes",
    "reference_k",
    "other_stuffs_threshold",
    "max_upload_bytes",
    "inference.concurrency",
    "inference.queue_bound",
    "preprocess.remove_background",
    "preprocess.background_tolerance",
    "retrieval.filter_by_period",
    "debug.retain_uploads",
];

fn env_name(key: &str) -> String {
    format!("{ENV_PREFIX}{}", key.replace('.', "_").to_ascii_uppercase())
}

fn parse_value<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    v.parse().map_err(|e: T::Err| ConfigError::Invalid {
        key: key.into(),
        reason: format!("{v:?}: {e}"),
    })
}

fn parse_lines(text: &str) -> Result<BTreeMap<String, String>, ConfigError> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
            line: i + 1,
            reason: format!("expected key = value, got {line:?}"),
        })?;
        let k = k.trim();
        if !KEYS.contains(&k) {
            return Err(ConfigError::UnknownKey(k.into()));
        }
        out.insert(k.to_string(), v.trim().to_string());
    }
    Ok(out)
}

impl ServiceConfig {
    /// Parses file text, then applies overrides looked up through `env`.
    pub fn parse_with_env(text: &str, env: impl Fn(&str) -> Option<String>) -> Result<Self, ConfigError> {
        let mut values = parse_lines(text)?;
        for key in KEYS {
            if let Some(v) = env(&env_name(key)) {
                values.insert(key.to_string(), v.trim().to_string());
            }
        }
        let mut c = Self::default();
        for (k, v) in &values {
            let k = k.as_str();
            match k {
                "listen" => c.listen = parse_value(k, v)?,
                "weights" => c.weights = PathBuf::from(v),
                "catalog" => c.catalog = PathBuf::from(v),
                "detector.url" => c.detector_url = (!v.is_empty() && v != "stub").then(|| v.clone()),
                "detector.timeout_ms" => c.detector_timeout = Duration::from_millis(parse_value(k, v)?),
                "detector.max_concurrent" => c.detector_max_concurrent = parse_value(k, v)?,
                "score_threshold" => c.score_threshold = parse_value(k, v)?,
                "max_boxes" => c.max_boxes = parse_value(k, v)?,
                "reference_k" => c.reference_k = parse_value(k, v)?,
                "other_stuffs_threshold" => c.other_stuffs_threshold = parse_value(k, v)?,
                "max_upload_bytes" => c.max_upload_bytes = parse_value(k, v)?,
                "inference.concurrency" => c.inference_concurrency = parse_value(k, v)?,
                "inference.queue_bound" => c.queue_bound = parse_value(k, v)?,
                "preprocess.remove_background" => c.remove_background = parse_value(k, v)?,
                "preprocess.background_tolerance" => c.background_tolerance = parse_value(k, v)?,
                "retrieval.filter_by_period" => c.filter_by_period = parse_value(k, v)?,
                "debug.retain_uploads" => c.retain_uploads = (!v.is_empty()).then(|| PathBuf::from(v)),
                _ => unreachable!("keys are checked against KEYS"),
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        Self::parse_with_env(text, |_| None)
    }

    /// Reads `path` and applies `SERVICE_*` overrides from the process
    /// environment. Relative paths resolve against the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut c = Self::parse_with_env(&text, |k| std::env::var(k).ok())?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut c.weights, &mut c.catalog] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let Some(p) = c.retain_uploads.as_mut().filter(|p| p.is_relative()) {
            *p = base.join(&*p);
        }
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |key: &str, reason: String| {
            Err(ConfigError::Invalid {
                key: key.into(),
                reason,
            })
        };
        for (key, v) in [
            ("score_threshold", self.score_threshold),
            ("other_stuffs_threshold", self.other_stuffs_threshold),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return invalid(key, format!("{v} is outside [0, 1]"));
            }
        }
        if self.reference_k < 1 {
            return invalid("reference_k", "must be at least 1".into());
        }
        if self.max_boxes < 1 {
            return invalid("max_boxes", "must be at least 1".into());
        }
        if self.max_upload_bytes < MIN_UPLOAD_BYTES {
            return invalid(
                "max_upload_bytes",
                format!("{} is below the 1 MiB minimum", self.max_upload_bytes),
            );
        }
        if self.inference_concurrency < 1 {
            return invalid("inference.concurrency", "must be at least 1".into());
        }
        if self.detector_max_concurrent < 1 {
            return invalid("detector.max_concurrent", "must be at least 1".into());
        }
        if self.detector_timeout.is_zero() {
            return invalid("detector.timeout_ms", "must be positive".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let c = ServiceConfig::parse("").unwrap();
        assert_eq!(c, ServiceConfig::default());
        assert_eq!(c.reference_k, 5);
        assert_eq!(c.other_stuffs_threshold, 0.05);
    }

    #[test]
    fn env_overrides_file() {
        let c = ServiceConfig::parse_with_env("listen = 0.0.0.0:9000\ndetector.url = stub\n", |k| {
            (k == "SERVICE_DETECTOR_URL").then(|| "http://127.0.0.1:7000/detect".to_string())
        })
        .unwrap();
        assert_eq!(c.listen.port(), 9000);
        assert_eq!(c.detector_url.as_deref(), Some("http://127.0.0.1:7000/detect"));
    }

    #[test]
    fn rejects_out_of_range() {
        assert!(matches!(
            ServiceConfig::parse("score_threshold = 1.5"),
            Err(ConfigError::Invalid { ref key, .. }) if key == "score_threshold"
        ));
        assert!(matches!(ServiceConfig::parse("reference_k = 0"), Err(ConfigError::Invalid { .. })));
        assert!(matches!(
            ServiceConfig::parse("max_upload_bytes = 1000"),
            Err(ConfigError::Invalid { .. })
        ));
        assert!(matches!(ServiceConfig::parse("colour = red"), Err(ConfigError::UnknownKey(_))));
        assert!(matches!(ServiceConfig::parse("oops"), Err(ConfigError::Syntax { line: 1, .. })));
    }
}
