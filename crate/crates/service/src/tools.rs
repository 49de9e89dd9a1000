//! Offline operations behind the `dingdate` and `evalbench` binaries.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};

use dingdate_core::catalog::{ArtifactRecord, CatalogError, CatalogStore, MANIFEST_FILE};
use dingdate_core::dating::DecisionPolicy;
use dingdate_core::detect::{overlay_spec, postprocess, DetectorBackend};
use dingdate_core::evalbench::{
    build_testset, evaluate, render_kv, render_table, AccuracyReport, DatasetManifest, EvalError,
};
use dingdate_core::imageproc::{augment, decode, draw_rectangles, encode_png};
use dingdate_core::nnx::{weights, Model, ModelConfig};
use dingdate_core::pipeline::{infer_bytes, infer_image, PipelineError, PreprocessConfig};
use dingdate_core::Period;

pub const OVERLAY_COLOR: [u8; 3] = [255, 214, 0];

pub fn init_weights(out: &Path, seed: u64) -> anyhow::Result<Model> {
    let model = Model::random(ModelConfig::tiny(), seed)?;
    weights::save(&model, out).with_context(|| format!("writing {}", out.display()))?;
    Ok(model)
}

/// Accepts either the catalog directory or its manifest file.
pub fn catalog_root(path: &Path) -> PathBuf {
    if path.file_name().is_some_and(|n| n == MANIFEST_FILE) {
        path.parent().map(Path::to_path_buf).unwrap_or_default()
    } else {
        path.to_path_buf()
    }
}

pub struct NewArtifact<'a> {
    pub id: &'a str,
    pub period: Period,
    pub image: &'a Path,
    pub shape: &'a str,
    pub literature: &'a str,
    pub excavation: &'a str,
    pub museum: &'a str,
}

pub fn add_artifact(catalog: &Path, a: NewArtifact<'_>) -> anyhow::Result<ArtifactRecord> {
    let store = CatalogStore::open(catalog_root(catalog))?;
    let bytes = fs::read(a.image).with_context(|| format!("reading {}", a.image.display()))?;
    decode(&bytes).with_context(|| format!("{} is not a usable photo", a.image.display()))?;
    let record = ArtifactRecord {
        id: a.id.into(),
        period: a.period,
        shape: a.shape.into(),
        literature: a.literature.into(),
        excavation: a.excavation.into(),
        museum: a.museum.into(),
        image_ref: store.put_image(&bytes)?,
        embedding: None,
        feature_boxes: Vec::new(),
    };
    store.register_artifact(record.clone())?;
    Ok(record)
}

#[derive(Debug, thiserror::Error)]
enum IngestError {
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error("artifact {id}: {source}")]
    Embed { id: String, source: PipelineError },
}

/// Computes embeddings for every record that lacks one and writes the sidecar.
pub fn ingest(manifest: &Path, weights_path: &Path) -> anyhow::Result<usize> {
    let model = weights::load(weights_path).with_context(|| format!("loading {}", weights_path.display()))?;
    let store = CatalogStore::open(catalog_root(manifest))?;
    let cfg = PreprocessConfig::default();
    let filled = store.backfill_embeddings(|record, bytes| {
        let embed = || -> Result<_, PipelineError> {
            let inference = infer_bytes(bytes, &model, &cfg)?;
            Ok(inference.embedding().expect("forward output is finite"))
        };
        embed().map_err(|source| IngestError::Embed {
            id: record.id.clone(),
            source,
        })
    })?;
    Ok(filled)
}

/// Writes the augmentation variants and a yellow box overlay for one photo.
/// Returns the written paths.
pub fn dump(
    image_path: &Path,
    out_dir: &Path,
    seed: u64,
    detector: &dyn DetectorBackend,
    model: Option<&Model>,
) -> anyhow::Result<Vec<PathBuf>> {
    let bytes = fs::read(image_path).with_context(|| format!("reading {}", image_path.display()))?;
    let image = decode(&bytes)?;
    fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    let mut write = |name: &str, data: &[u8]| -> anyhow::Result<()> {
        let p = out_dir.join(name);
        fs::write(&p, data).with_context(|| format!("writing {}", p.display()))?;
        written.push(p);
        Ok(())
    };
    let names = ["original.png", "background_removed.png", "grayscale.png", "feature_lines.png"];
    for (name, variant) in names.iter().zip(augment(&image, seed)?) {
        write(name, &encode_png(&variant)?)?;
    }
    let boxes = postprocess(&detector.detect(&image)?, 0.5, 10);
    let rects: Vec<_> = overlay_spec(&boxes, image.width(), image.height())
        .into_iter()
        .map(|r| (r.x0, r.y0, r.x1, r.y1))
        .collect();
    write("overlay.png", &encode_png(&draw_rectangles(&image, &rects, OVERLAY_COLOR)?)?)?;
    write("boxes.json", serde_json::to_string_pretty(&boxes)?.as_bytes())?;
    if let Some(model) = model {
        let decision = infer_image(&image, model, &PreprocessConfig::default())?.decide(&DecisionPolicy::default())?;
        write("decision.json", serde_json::to_string_pretty(&decision)?.as_bytes())?;
    }
    Ok(written)
}

pub fn eval_build(manifest: &Path, total: usize, seed: u64, out: &Path) -> anyhow::Result<DatasetManifest> {
    let dataset = DatasetManifest::load(manifest).with_context(|| format!("reading {}", manifest.display()))?;
    let testset = build_testset(&dataset, total, seed)?;
    testset.save(out).with_context(|| format!("writing {}", out.display()))?;
    Ok(testset)
}

pub struct EvalRun<'a> {
    pub weights: &'a Path,
    pub testset: &'a Path,
    pub report: &'a Path,
    /// Directory that image refs resolve against; defaults to the testset's.
    pub images: Option<&'a Path>,
    /// Full dataset manifest for the "Number" row; defaults to the testset.
    pub dataset: Option<&'a Path>,
    pub width: usize,
}

pub fn kv_path(report: &Path) -> PathBuf {
    let mut p = report.as_os_str().to_owned();
    p.push(".kv");
    PathBuf::from(p)
}

pub fn eval_run(run: &EvalRun<'_>) -> anyhow::Result<AccuracyReport> {
    let model = weights::load(run.weights).with_context(|| format!("loading {}", run.weights.display()))?;
    let testset = DatasetManifest::load(run.testset).with_context(|| format!("reading {}", run.testset.display()))?;
    if testset.is_empty() {
        bail!("testset {} is empty", run.testset.display());
    }
    let base = run
        .images
        .map(Path::to_path_buf)
        .unwrap_or_else(|| run.testset.parent().map(Path::to_path_buf).unwrap_or_default());
    let cfg = PreprocessConfig::default();
    let policy = DecisionPolicy::default();
    let mut report = evaluate(
        |entry| {
            let path = base.join(&entry.image_ref);
            let bytes = fs::read(&path).map_err(|_| EvalError::ImageUnreadable(entry.image_ref.clone()))?;
            infer_bytes(&bytes, &model, &cfg)
                .map_err(|_| EvalError::ImageUnreadable(entry.image_ref.clone()))?
                .prediction(&policy)
                .map_err(|e| EvalError::Io(e.to_string()))
        },
        &testset,
        run.width,
    )?;
    if let Some(dataset) = run.dataset {
        report.dataset_counts = DatasetManifest::load(dataset)
            .with_context(|| format!("reading {}", dataset.display()))?
            .counts();
    }
    fs::write(run.report, render_table(&report)).with_context(|| format!("writing {}", run.report.display()))?;
    fs::write(kv_path(run.report), render_kv(&report))?;
    Ok(report)
}
