use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Duration, Instant};

use tokio::sync::{OwnedSemaphorePermit, Semaphore};

use dingdate_core::catalog::{CatalogError, CatalogStore};
use dingdate_core::dating::{DecisionPolicy, EmbeddingIndex};
use dingdate_core::detect::{DetectorBackend, RemoteBackend, StubBackend};
use dingdate_core::nnx::{weights, Model};
use dingdate_core::pipeline::PreprocessConfig;

use crate::config::ServiceConfig;

pub const HEALTH_TTL: Duration = Duration::from_secs(30);

/// Everything a request reads, swapped as one unit on reload.
pub struct Snapshot {
    pub model: Option<Arc<Model>>,
    pub store: Arc<CatalogStore>,
    pub index: Arc<EmbeddingIndex>,
    /// Why the model is absent, when it is.
    pub model_error: Option<String>,
}

impl Snapshot {
    pub fn load(config: &ServiceConfig) -> Result<Self, CatalogError> {
        let store = CatalogStore::open(&config.catalog)?;
        let index = store.snapshot().embedding_index().map_err(|source| CatalogError::Sidecar {
            path: config.catalog.clone(),
            source,
        })?;
        let (model, model_error) = match weights::load(&config.weights) {
            Ok(m) => (Some(Arc::new(m)), None),
            Err(e) => (None, Some(format!("{}: {e}", config.weights.display()))),
        };
        Ok(Self {
            model,
            store: Arc::new(store),
            index: Arc::new(index),
            model_error,
        })
    }
}

/// Caps simultaneous forward passes and bounds the wait queue.
pub struct InferenceGate {
    slots: Arc<Semaphore>,
    admitted: Arc<Semaphore>,
    running: AtomicUsize,
    peak: AtomicUsize,
}

pub struct Admission(#[allow(dead_code)] OwnedSemaphorePermit);

pub struct Slot<'a> {
    gate: &'a InferenceGate,
    _permit: OwnedSemaphorePermit,
}

impl Drop for Slot<'_> {
    fn drop(&mut self) {
        self.gate.running.fetch_sub(1, Ordering::SeqCst);
    }
}

impl InferenceGate {
    pub fn new(concurrency: usize, queue_bound: usize) -> Self {
        Self {
            slots: Arc::new(Semaphore::new(concurrency)),
            admitted: Arc::new(Semaphore::new(concurrency + queue_bound)),
            running: AtomicUsize::new(0),
            peak: AtomicUsize::new(0),
        }
    }

    /// `None` when the queue is full.
    pub fn admit(&self) -> Option<Admission> {
        self.admitted.clone().try_acquire_owned().ok().map(Admission)
    }

    pub async fn slot(&self, _admission: &Admission) -> Slot<'_> {
        let permit = self.slots.clone().acquire_owned().await.expect("semaphore is never closed");
        let now = self.running.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak.fetch_max(now, Ordering::SeqCst);
        Slot {
            gate: self,
            _permit: permit,
        }
    }

    pub fn peak(&self) -> usize {
        self.peak.load(Ordering::SeqCst)
    }
}

pub struct AppState {
    pub config: ServiceConfig,
    snapshot: RwLock<Arc<Snapshot>>,
    pub detector: Arc<dyn DetectorBackend>,
    pub gate: InferenceGate,
    detector_health: Mutex<Option<(Instant, bool)>>,
    uploads: AtomicUsize,
}

impl AppState {
    pub fn new(config: ServiceConfig) -> Result<Self, CatalogError> {
        let detector: Arc<dyn DetectorBackend> = match &config.detector_url {
            Some(url) => Arc::new(RemoteBackend::new(
                url.clone(),
                config.detector_timeout,
                config.detector_max_concurrent,
            )),
            None => Arc::new(StubBackend),
        };
        Self::with_detector(config, detector)
    }

    pub fn with_detector(config: ServiceConfig, detector: Arc<dyn DetectorBackend>) -> Result<Self, CatalogError> {
        let snapshot = Snapshot::load(&config)?;
        Ok(Self {
            gate: InferenceGate::new(config.inference_concurrency, config.queue_bound),
            config,
            snapshot: RwLock::new(Arc::new(snapshot)),
            detector,
            detector_health: Mutex::new(None),
            uploads: AtomicUsize::new(0),
        })
    }

    pub fn snapshot(&self) -> Arc<Snapshot> {
        self.snapshot.read().unwrap().clone()
    }

    /// Re-reads weights and catalog; the running snapshot is kept on failure.
    pub fn reload(&self) -> Result<Arc<Snapshot>, CatalogError> {
        let next = Arc::new(Snapshot::load(&self.config)?);
        *self.snapshot.write().unwrap() = next.clone();
        Ok(next)
    }

    pub fn policy(&self) -> DecisionPolicy {
        DecisionPolicy {
            other_stuffs_threshold: self.config.other_stuffs_threshold,
            ..DecisionPolicy::default()
        }
    }

    pub fn preprocess(&self) -> PreprocessConfig {
        PreprocessConfig {
            remove_background: self.config.remove_background.then_some(self.config.background_tolerance),
            ..PreprocessConfig::default()
        }
    }

    /// Cached reachability of the detector, refreshed at most every 30 s.
    pub async fn detector_ok(&self) -> bool {
        if let Some((at, ok)) = *self.detector_health.lock().unwrap() {
            if at.elapsed() < HEALTH_TTL {
                return ok;
            }
        }
        let detector = self.detector.clone();
        let ok = tokio::task::spawn_blocking(move || detector.probe()).await.unwrap_or(false);
        *self.detector_health.lock().unwrap() = Some((Instant::now(), ok));
        ok
    }

    pub fn next_upload_id(&self) -> usize {
        self.uploads.fetch_add(1, Ordering::Relaxed)
    }
}
