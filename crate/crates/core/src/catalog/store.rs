use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use sha2::{Digest, Sha256};

use super::{load_manifest, write_atomic, ArtifactRecord, Catalog, CatalogError, MANIFEST_FILE};
use crate::dating::EmbeddingVector;
use crate::imageproc::sniff_format;
use crate::period::Period;

/// Directory-backed catalog: `catalog.tsv`, `embeddings.idx` and
/// content-addressed blobs under `images/`.
///
/// Readers take cheap snapshots; writers are serialized and replace the
/// snapshot only after the manifest has been persisted.
pub struct CatalogStore {
    root: PathBuf,
    current: RwLock<Arc<Catalog>>,
    writer: Mutex<()>,
}

impl CatalogStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, CatalogError> {
        let root = root.into();
        let images = root.join("images");
        fs::create_dir_all(&images).map_err(|e| CatalogError::io(&images, e))?;
        let manifest = root.join(MANIFEST_FILE);
        let catalog = if manifest.exists() {
            load_manifest(&manifest)?
        } else {
            Catalog::new()
        };
        let store = Self {
            root,
            current: RwLock::new(Arc::new(catalog)),
            writer: Mutex::new(()),
        };
        for r in store.snapshot().records() {
            if !store.image_path(&r.image_ref).is_file() {
                return Err(CatalogError::DanglingImage {
                    id: r.id.clone(),
                    image_ref: r.image_ref.clone(),
                });
            }
        }
        Ok(store)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.root.join(MANIFEST_FILE)
    }

    pub fn snapshot(&self) -> Arc<Catalog> {
        self.current.read().unwrap().clone()
    }

    pub fn image_path(&self, image_ref: &str) -> PathBuf {
        self.root.join("images").join(image_ref)
    }

    /// Stores image bytes under their SHA-256 and returns the handle.
    pub fn put_image(&self, bytes: &[u8]) -> Result<String, CatalogError> {
        let format = sniff_format(bytes).ok_or(CatalogError::UnsupportedImage)?;
        let image_ref = format!("{}.{}", hex::encode(Sha256::digest(bytes)), format.extension());
        let path = self.image_path(&image_ref);
        if !path.exists() {
            write_atomic(&path, bytes)?;
        }
        Ok(image_ref)
    }

    pub fn image_bytes(&self, image_ref: &str) -> Result<Vec<u8>, CatalogError> {
        if !super::valid_image_ref(image_ref) {
            return Err(CatalogError::NotFound(image_ref.to_string()));
        }
        let path = self.image_path(image_ref);
        fs::read(&path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => CatalogError::NotFound(image_ref.to_string()),
            _ => CatalogError::io(path, e),
        })
    }

    pub fn register_artifact(&self, record: ArtifactRecord) -> Result<String, CatalogError> {
        let _guard = self.writer.lock().unwrap();
        record.validate()?;
        if !self.image_path(&record.image_ref).is_file() {
            return Err(CatalogError::InvalidRecord {
                field: "image_ref",
                reason: format!("{} is not in the image store", record.image_ref),
            });
        }
        let mut next = (*self.snapshot()).clone();
        let id = next.register_artifact(record)?;
        self.commit(next)?;
        Ok(id)
    }

    pub fn get_artifact(&self, id: &str) -> Result<ArtifactRecord, CatalogError> {
        self.snapshot().get_artifact(id).cloned()
    }

    pub fn list_by_period(&self, period: Period) -> Vec<String> {
        self.snapshot().list_by_period(period)
    }

    /// Computes embeddings for every record that lacks one and persists the
    /// manifest plus sidecar. Returns how many records were filled.
    pub fn backfill_embeddings<F, E>(&self, mut embed: F) -> Result<usize, E>
    where
        F: FnMut(&ArtifactRecord, &[u8]) -> Result<EmbeddingVector, E>,
        E: From<CatalogError>,
    {
        let _guard = self.writer.lock().unwrap();
        let mut next = (*self.snapshot()).clone();
        let mut filled = 0;
        for record in next.records_mut().filter(|r| r.embedding.is_none()) {
            let bytes = self.image_bytes(&record.image_ref)?;
            record.embedding = Some(embed(record, &bytes)?);
            filled += 1;
        }
        if filled > 0 {
            self.commit(next)?;
        }
        Ok(filled)
    }

    fn commit(&self, next: Catalog) -> Result<(), CatalogError> {
        next.write_manifest(&self.manifest_path())?;
        *self.current.write().unwrap() = Arc::new(next);
        Ok(())
    }
}
