//! Annotated reference-artifact catalog.
//!
//! Manifest format: UTF-8, one record per line, tab-separated columns
//!
//! ```text
//! id  period  shape  literature  excavation  museum  image_ref  [embedding_ref  [feature_boxes]]
//! ```
//!
//! Free-text columns escape `\\`, `\t`, `\n` and `\r` with a backslash.
//! `embedding_ref` names an index sidecar next to the manifest that holds the
//! record's vector under its id. `feature_boxes` is a `;`-separated list of
//! `label:score:x0,y0,x1,y1`. Blank lines are skipped; lines starting with
//! `#` are comments, and a `# version=N` comment must carry version 1.

mod store;

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use crate::period::{Dynasty, Period, PeriodError, Phase};
pub use store::CatalogStore;

use crate::dating::{EmbeddingIndex, EmbeddingVector, RetrievalError};
use crate::detect::{DetectionBox, PartLabel};

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "catalog.tsv";
pub const EMBEDDINGS_FILE: &str = "embeddings.idx";

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("artifact id {0:?} already registered")]
    DuplicateId(String),
    #[error("invalid record field {field}: {reason}")]
    InvalidRecord { field: &'static str, reason: String },
    #[error("artifact {0:?} not found")]
    NotFound(String),
    #[error("manifest line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("embedding sidecar {path}: {source}")]
    Sidecar {
        path: PathBuf,
        #[source]
        source: RetrievalError,
    },
    #[error("image {image_ref:?} for artifact {id:?} is not in the store")]
    DanglingImage { id: String, image_ref: String },
    #[error("not a JPEG or PNG image")]
    UnsupportedImage,
}

impl CatalogError {
    fn invalid(field: &'static str, reason: impl Into<String>) -> Self {
        CatalogError::InvalidRecord {
            field,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CatalogError::Io {
            path: path.into(),
            source,
        }
    }
}

/// One catalogued Ding with its expert annotations.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArtifactRecord {
    pub id: String,
    pub period: Period,
    pub shape: String,
    pub literature: String,
    pub excavation: String,
    pub museum: String,
    pub image_ref: String,
    #[serde(skip)]
    pub embedding: Option<EmbeddingVector>,
    pub feature_boxes: Vec<DetectionBox>,
}

/// Untyped record as supplied by an ingestion source. Every field is
/// optional here so that absence can be reported by name.
#[derive(Debug, Clone, Default, Deserialize)]
pub struct RecordDescriptor {
    pub id: Option<String>,
    pub period: Option<String>,
    pub shape: Option<String>,
    pub literature: Option<String>,
    pub excavation: Option<String>,
    pub museum: Option<String>,
    pub image_ref: Option<String>,
    #[serde(default)]
    pub embedding: Option<Vec<f32>>,
    #[serde(default)]
    pub feature_boxes: Vec<DetectionBox>,
}

fn valid_id(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= 128
        && id
            .chars()
            .all(|c| !c.is_whitespace() && !c.is_control() && !matches!(c, '/' | '\\' | '?' | '#' | '%'))
}

/// `<64 hex sha256>.<jpg|png>`.
pub fn valid_image_ref(image_ref: &str) -> bool {
    match image_ref.split_once('.') {
        Some((hash, ext)) => {
            hash.len() == 64
                && hash.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b))
                && matches!(ext, "jpg" | "png")
        }
        None => false,
    }
}

impl ArtifactRecord {
    pub fn from_descriptor(d: RecordDescriptor) -> Result<Self, CatalogError> {
        fn present(field: &'static str, v: Option<String>) -> Result<String, CatalogError> {
            v.ok_or_else(|| CatalogError::invalid(field, "missing"))
        }
        let id = present("id", d.id)?;
        let period = present("period", d.period)?
            .parse::<Period>()
            .map_err(|e| CatalogError::invalid("period", e.to_string()))?;
        let record = Self {
            id,
            period,
            shape: present("shape", d.shape)?,
            literature: present("literature", d.literature)?,
            excavation: present("excavation", d.excavation)?,
            museum: present("museum", d.museum)?,
            image_ref: present("image_ref", d.image_ref)?,
            embedding: d
                .embedding
                .map(EmbeddingVector::new)
                .transpose()
                .map_err(|e| CatalogError::invalid("embedding", e.to_string()))?,
            feature_boxes: d.feature_boxes,
        };
        record.validate()?;
        Ok(record)
    }

    pub fn validate(&self) -> Result<(), CatalogError> {
        if !valid_id(&self.id) {
            return Err(CatalogError::invalid("id", format!("{:?} is not a valid identifier", self.id)));
        }
        if !valid_image_ref(&self.image_ref) {
            return Err(CatalogError::invalid(
                "image_ref",
                format!("{:?} is not a content-addressed image handle", self.image_ref),
            ));
        }
        if let Some(e) = &self.embedding {
            if e.dim() == 0 || e.as_slice().iter().all(|v| *v == 0.0) {
                return Err(CatalogError::invalid("embedding", "empty or all-zero vector"));
            }
        }
        if let Some(b) = self.feature_boxes.iter().find(|b| !b.is_valid()) {
            return Err(CatalogError::invalid("feature_boxes", format!("invalid box {b:?}")));
        }
        Ok(())
    }
}

/// In-memory catalog keyed by artifact id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Catalog {
    records: BTreeMap<String, ArtifactRecord>,
}

impl Catalog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn register_artifact(&mut self, record: ArtifactRecord) -> Result<String, CatalogError> {
        record.validate()?;
        if self.records.contains_key(&record.id) {
            return Err(CatalogError::DuplicateId(record.id));
        }
        if let Some(e) = &record.embedding {
            if let Some(dim) = self.embedding_dim() {
                if e.dim() != dim {
                    return Err(CatalogError::invalid(
                        "embedding",
                        format!("dimension {} differs from catalog dimension {dim}", e.dim()),
                    ));
                }
            }
        }
        let id = record.id.clone();
        self.records.insert(id.clone(), record);
        Ok(id)
    }

    pub fn get_artifact(&self, id: &str) -> Result<&ArtifactRecord, CatalogError> {
        self.records.get(id).ok_or_else(|| CatalogError::NotFound(id.to_string()))
    }

    /// Ids with the given period, ascending.
    pub fn list_by_period(&self, period: Period) -> Vec<String> {
        self.records
            .values()
            .filter(|r| r.period == period)
            .map(|r| r.id.clone())
            .collect()
    }

    pub fn records(&self) -> impl Iterator<Item = &ArtifactRecord> {
        self.records.values()
    }

    pub(crate) fn records_mut(&mut self) -> impl Iterator<Item = &mut ArtifactRecord> {
        self.records.values_mut()
    }

    fn embedding_dim(&self) -> Option<usize> {
        self.records.values().find_map(|r| r.embedding.as_ref().map(|e| e.dim()))
    }

    /// Exact index over every record that carries an embedding.
    pub fn embedding_index(&self) -> Result<EmbeddingIndex, RetrievalError> {
        EmbeddingIndex::build(
            self.records
                .values()
                .filter_map(|r| r.embedding.clone().map(|e| (r.id.clone(), e))),
        )
    }

    /// Serializes the manifest; records with embeddings reference `sidecar`.
    pub fn to_manifest(&self, sidecar: &str) -> String {
        let mut out = format!("# version={MANIFEST_VERSION}\n");
        for r in self.records.values() {
            let mut cols = vec![
                escape(&r.id),
                r.period.to_string(),
                escape(&r.shape),
                escape(&r.literature),
                escape(&r.excavation),
                escape(&r.museum),
                r.image_ref.clone(),
            ];
            let emb = if r.embedding.is_some() { sidecar.to_string() } else { String::new() };
            let boxes = format_boxes(&r.feature_boxes);
            if !boxes.is_empty() {
                cols.push(emb);
                cols.push(boxes);
            } else if !emb.is_empty() {
                cols.push(emb);
            }
            let _ = writeln!(out, "{}", cols.join("\t"));
        }
        out
    }

    /// Parses manifest text. `resolve` supplies the index for an embedding_ref.
    pub fn parse_manifest(
        text: &str,
        mut resolve: impl FnMut(&str) -> Result<EmbeddingIndex, CatalogError>,
    ) -> Result<Self, CatalogError> {
        let mut catalog = Catalog::new();
        let mut sidecars: HashMap<String, EmbeddingIndex> = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            let parse_err = |reason: String| CatalogError::Parse { line: line_no, reason };
            let trimmed = line.trim_end_matches('\r');
            if trimmed.trim().is_empty() {
                continue;
            }
            if let Some(comment) = trimmed.strip_prefix('#') {
                if let Some(v) = comment.trim().strip_prefix("version=") {
                    if v.trim() != MANIFEST_VERSION.to_string() {
                        return Err(parse_err(format!("unsupported manifest version {v:?}")));
                    }
                }
                continue;
            }
            let cols: Vec<&str> = trimmed.split('\t').collect();
            if !(7..=9).contains(&cols.len()) {
                return Err(parse_err(format!("expected 7 to 9 tab-separated fields, found {}", cols.len())));
            }
            let text_col = |idx: usize| unescape(cols[idx]).map_err(&parse_err);
            let mut descriptor = RecordDescriptor {
                id: Some(text_col(0)?),
                period: Some(cols[1].to_string()),
                shape: Some(text_col(2)?),
                literature: Some(text_col(3)?),
                excavation: Some(text_col(4)?),
                museum: Some(text_col(5)?),
                image_ref: Some(cols[6].to_string()),
                embedding: None,
                feature_boxes: Vec::new(),
            };
            if let Some(reference) = cols.get(7).filter(|c| !c.is_empty()) {
                if !sidecars.contains_key(*reference) {
                    sidecars.insert(reference.to_string(), resolve(reference)?);
                }
                let id = descriptor.id.as_deref().unwrap_or_default();
                let vector = sidecars[*reference]
                    .get(id)
                    .ok_or_else(|| parse_err(format!("{reference} has no vector for {id:?}")))?;
                descriptor.embedding = Some(vector.to_vec());
            }
            if let Some(boxes) = cols.get(8) {
                descriptor.feature_boxes = parse_boxes(boxes).map_err(parse_err)?;
            }
            let record = ArtifactRecord::from_descriptor(descriptor).map_err(|e| parse_err(e.to_string()))?;
            catalog.register_artifact(record).map_err(|e| parse_err(e.to_string()))?;
        }
        Ok(catalog)
    }

    /// Writes the manifest and, when any record has an embedding, its
    /// sidecar next to it. Both files are replaced atomically.
    pub fn write_manifest(&self, path: &Path) -> Result<(), CatalogError> {
        let dir = path.parent().unwrap_or(Path::new("."));
        let index = self.embedding_index().map_err(|source| CatalogError::Sidecar {
            path: dir.join(EMBEDDINGS_FILE),
            source,
        })?;
        if !index.is_empty() {
            write_atomic(&dir.join(EMBEDDINGS_FILE), &index.to_bytes())?;
        }
        write_atomic(path, self.to_manifest(EMBEDDINGS_FILE).as_bytes())
    }
}

/// Loads a manifest file; embedding references resolve relative to its directory.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Catalog, CatalogError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| CatalogError::io(path, e))?;
    let dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    Catalog::parse_manifest(&text, |reference| {
        let sidecar = dir.join(reference);
        EmbeddingIndex::load(&sidecar).map_err(|source| CatalogError::Sidecar { path: sidecar, source })
    })
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CatalogError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| CatalogError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| CatalogError::io(path, e))
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

fn unescape(s: &str) -> Result<String, String> {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('\\') => out.push('\\'),
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            other => return Err(format!("bad escape sequence \\{}", other.map(String::from).unwrap_or_default())),
        }
    }
    Ok(out)
}

fn format_boxes(boxes: &[DetectionBox]) -> String {
    boxes
        .iter()
        .map(|b| {
            let [x0, y0, x1, y1] = b.coords;
            format!("{}:{}:{},{},{},{}", b.label, b.score, x0, y0, x1, y1)
        })
        .collect::<Vec<_>>()
        .join(";")
}

fn parse_boxes(s: &str) -> Result<Vec<DetectionBox>, String> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(';')
        .map(|item| {
            let mut parts = item.splitn(3, ':');
            let (Some(label), Some(score), Some(coords)) = (parts.next(), parts.next(), parts.next()) else {
                return Err(format!("malformed feature box {item:?}"));
            };
            let label: PartLabel = label.parse()?;
            let score: f32 = score.parse().map_err(|_| format!("bad box score {score:?}"))?;
            let c: Vec<f32> = coords
                .split(',')
                .map(|v| v.parse::<f32>().map_err(|_| format!("bad box coordinate {v:?}")))
                .collect::<Result<_, _>>()?;
            let coords: [f32; 4] = c.try_into().map_err(|_| format!("feature box {item:?} needs 4 coordinates"))?;
            Ok(DetectionBox { label, score, coords })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const IMG: &str = "0000000000000000000000000000000000000000000000000000000000000000.jpg";

    fn record(id: &str, period: Period) -> ArtifactRecord {
        ArtifactRecord {
            id: id.into(),
            period,
            shape: "round body, three legs".into(),
            literature: "Some Bronze Catalogue, vol. 2".into(),
            excavation: "Anyang".into(),
            museum: "Provincial Museum".into(),
            image_ref: IMG.into(),
            embedding: None,
            feature_boxes: Vec::new(),
        }
    }

    fn descriptor(period: &str) -> RecordDescriptor {
        RecordDescriptor {
            id: Some("d001".into()),
            period: Some(period.into()),
            shape: Some(String::new()),
            literature: Some(String::new()),
            excavation: Some(String::new()),
            museum: Some(String::new()),
            image_ref: Some(IMG.into()),
            ..Default::default()
        }
    }

    #[test]
    fn register_get_round_trip() {
        let mut c = Catalog::new();
        let r = record("d001", Period::ShangLate);
        assert_eq!(c.register_artifact(r.clone()).unwrap(), "d001");
        assert_eq!(c.get_artifact("d001").unwrap(), &r);
        assert!(matches!(c.register_artifact(r), Err(CatalogError::DuplicateId(id)) if id == "d001"));
        assert!(matches!(c.get_artifact("missing"), Err(CatalogError::NotFound(_))));
    }

    #[test]
    fn shang_mid_is_rejected_by_name() {
        match ArtifactRecord::from_descriptor(descriptor("Shang.Mid")) {
            Err(CatalogError::InvalidRecord { field, .. }) => assert_eq!(field, "period"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(ArtifactRecord::from_descriptor(descriptor("Shang.Late")).is_ok());
    }

    #[test]
    fn absent_field_is_named_but_empty_is_fine() {
        let mut d = descriptor("Shang.Late");
        d.museum = None;
        assert!(matches!(
            ArtifactRecord::from_descriptor(d),
            Err(CatalogError::InvalidRecord { field: "museum", .. })
        ));
    }

    #[test]
    fn list_by_period_filters_and_sorts() {
        let mut c = Catalog::new();
        assert!(c.list_by_period(Period::WesternZhouEarly).is_empty());
        c.register_artifact(record("z9", Period::WesternZhouEarly)).unwrap();
        c.register_artifact(record("a1", Period::ShangEarly)).unwrap();
        c.register_artifact(record("b2", Period::WesternZhouEarly)).unwrap();
        assert_eq!(c.list_by_period(Period::WesternZhouEarly), vec!["b2", "z9"]);
        assert!(c.list_by_period(Period::WarringStatesLate).is_empty());
    }

    #[test]
    fn manifest_round_trip_with_escapes_and_boxes() {
        let mut c = Catalog::new();
        let mut r = record("d001", Period::SpringAndAutumnMid);
        r.shape = "tab\there\nnewline \\ backslash 鼎".into();
        r.feature_boxes = vec![DetectionBox {
            label: PartLabel::Leg,
            score: 1.0,
            coords: [0.1, 0.5, 0.3, 0.95],
        }];
        c.register_artifact(r).unwrap();
        c.register_artifact(record("d002", Period::WarringStatesLate)).unwrap();
        let text = c.to_manifest(EMBEDDINGS_FILE);
        let back = Catalog::parse_manifest(&text, |_| unreachable!()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let good = format!("d001\tShang.Late\t\t\t\t\t{IMG}");
        let text = format!("{good}\nonly\ttwo\n");
        assert!(matches!(
            Catalog::parse_manifest(&text, |_| unreachable!()),
            Err(CatalogError::Parse { line: 2, .. })
        ));
        let bad_version = format!("# version=2\n{good}\n");
        assert!(matches!(
            Catalog::parse_manifest(&bad_version, |_| unreachable!()),
            Err(CatalogError::Parse { line: 1, .. })
        ));
        assert!(Catalog::parse_manifest("", |_| unreachable!()).unwrap().is_empty());
    }

    #[test]
    fn image_ref_shape() {
        assert!(valid_image_ref(IMG));
        assert!(!valid_image_ref("photo.jpg"));
        assert!(!valid_image_ref(&IMG.replace(".jpg", ".gif")));
    }
}
