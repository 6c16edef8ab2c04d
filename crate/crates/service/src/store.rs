//! Volume and job store, worker pool and on-disk persistence.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::{Arc, Mutex, RwLock};
use std::thread::JoinHandle;

use serde::{Deserialize, Serialize};
use slicevol_core::io::{decode_masks, decode_volume, load_masks, load_volume, save_masks, save_volume, write_atomic};
use slicevol_core::network::load_checkpoint;
use slicevol_core::propagator::{propagate_volume_with_progress, NetworkProvider, PropagationSummary};
use slicevol_core::{Error, MaskPlane, MaskVolume, PropagateOptions, Volume};

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    /// Directory for persisted volumes, ground truth and results.
    pub data_dir: Option<PathBuf>,
    pub workers: usize,
    /// Checkpoint used by every propagation job.
    pub model: Option<PathBuf>,
    /// Static files served under `/ui`.
    pub ui_dir: Option<PathBuf>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            data_dir: None,
            workers: 1,
            model: None,
            ui_dir: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Queued,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JobRecord {
    pub job_id: String,
    pub volume_id: String,
    pub seed_index: usize,
    pub options: PropagateOptions,
    pub state: JobState,
    pub completed: usize,
    pub total: usize,
    pub error: Option<String>,
    pub summary: Option<PropagationSummary>,
    #[serde(skip)]
    pub seed_mask: Option<MaskPlane>,
    #[serde(skip)]
    pub result: Option<Arc<MaskVolume>>,
}

impl JobRecord {
    pub fn progress(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.completed as f64 / self.total as f64
        }
    }
}

#[derive(Debug)]
pub struct VolumeEntry {
    pub volume: Arc<Volume>,
    pub groundtruth: Option<Arc<MaskVolume>>,
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("{0} not found")]
    NotFound(String),
    #[error("{0}")]
    BadRequest(String),
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    Unavailable(String),
    #[error(transparent)]
    Core(#[from] Error),
}

#[derive(Serialize, Deserialize, Default)]
struct Index {
    volumes: Vec<IndexedVolume>,
    jobs: Vec<JobRecord>,
}

#[derive(Serialize, Deserialize)]
struct IndexedVolume {
    volume_id: String,
    groundtruth: bool,
}

pub struct Store {
    volumes: RwLock<HashMap<String, VolumeEntry>>,
    jobs: RwLock<HashMap<String, JobRecord>>,
    provider: Option<Arc<NetworkProvider>>,
    data_dir: Option<PathBuf>,
    queue: Mutex<Option<Sender<String>>>,
    workers: Mutex<Vec<JoinHandle<()>>>,
    persist_lock: Mutex<()>,
}

impl Store {
    /// Loads the model and any persisted state, then starts the workers.
    pub fn open(cfg: &ServiceConfig) -> Result<Arc<Self>, StoreError> {
        let provider = match &cfg.model {
            Some(p) if p.exists() => {
                let ck = load_checkpoint(p)?;
                let edge = ck.network.config().input_mode == slicevol_core::InputMode::EdgeProfile;
                Some(Arc::new(NetworkProvider::new(ck.network, ck.profile, edge)?))
            }
            _ => None,
        };
        Self::with_provider(cfg, provider)
    }

    pub fn with_provider(cfg: &ServiceConfig, provider: Option<Arc<NetworkProvider>>) -> Result<Arc<Self>, StoreError> {
        let store = Arc::new(Self {
            volumes: RwLock::new(HashMap::new()),
            jobs: RwLock::new(HashMap::new()),
            provider,
            data_dir: cfg.data_dir.clone(),
            queue: Mutex::new(None),
            workers: Mutex::new(Vec::new()),
            persist_lock: Mutex::new(()),
        });
        if let Some(dir) = &cfg.data_dir {
            for sub in ["volumes", "jobs"] {
                std::fs::create_dir_all(dir.join(sub)).map_err(|e| Error::Io {
                    path: dir.join(sub),
                    source: e,
                })?;
            }
            store.restore(dir)?;
        }
        let (tx, rx) = channel::<String>();
        let rx = Arc::new(Mutex::new(rx));
        let mut handles = Vec::new();
        for _ in 0..cfg.workers.max(1) {
            let rx = Arc::clone(&rx);
            let weak = Arc::downgrade(&store);
            handles.push(std::thread::spawn(move || worker_loop(rx, weak)));
        }
        *store.queue.lock().unwrap() = Some(tx);
        *store.workers.lock().unwrap() = handles;
        Ok(store)
    }

    pub fn has_model(&self) -> bool {
        self.provider.is_some()
    }

    pub fn add_volume(&self, bytes: &[u8]) -> Result<(String, (usize, usize, usize)), StoreError> {
        let volume = decode_volume(bytes).map_err(|e| StoreError::BadRequest(e.to_string()))?;
        let id = uuid::Uuid::new_v4().simple().to_string();
        let dims = volume.dims();
        if let Some(dir) = &self.data_dir {
            save_volume(&volume, volume_path(dir, &id))?;
        }
        self.volumes.write().unwrap().insert(
            id.clone(),
            VolumeEntry {
                volume: Arc::new(volume),
                groundtruth: None,
            },
        );
        self.persist_index()?;
        Ok((id, dims))
    }

    pub fn volume(&self, id: &str) -> Result<Arc<Volume>, StoreError> {
        self.volumes
            .read()
            .unwrap()
            .get(id)
            .map(|e| Arc::clone(&e.volume))
            .ok_or_else(|| StoreError::NotFound(format!("volume {id}")))
    }

    pub fn groundtruth(&self, id: &str) -> Result<Option<Arc<MaskVolume>>, StoreError> {
        self.volumes
            .read()
            .unwrap()
            .get(id)
            .map(|e| e.groundtruth.clone())
            .ok_or_else(|| StoreError::NotFound(format!("volume {id}")))
    }

    pub fn set_groundtruth(&self, id: &str, bytes: &[u8]) -> Result<(), StoreError> {
        let gt = decode_masks(bytes).map_err(|e| StoreError::BadRequest(e.to_string()))?;
        {
            let mut vols = self.volumes.write().unwrap();
            let entry = vols
                .get_mut(id)
                .ok_or_else(|| StoreError::NotFound(format!("volume {id}")))?;
            if gt.dims() != entry.volume.dims() {
                return Err(StoreError::BadRequest(format!(
                    "groundtruth {:?} does not match volume {:?}",
                    gt.dims(),
                    entry.volume.dims()
                )));
            }
            if let Some(dir) = &self.data_dir {
                save_masks(&gt, groundtruth_path(dir, id))?;
            }
            entry.groundtruth = Some(Arc::new(gt));
        }
        self.persist_index()
    }

    /// Validates the request and queues a job.
    pub fn submit(
        &self,
        volume_id: &str,
        seed_index: usize,
        seed_mask: MaskPlane,
        options: PropagateOptions,
    ) -> Result<String, StoreError> {
        let volume = self.volume(volume_id)?;
        let provider = self
            .provider
            .as_ref()
            .ok_or_else(|| StoreError::Unavailable("no model loaded".into()))?;
        let (h, w, d) = volume.dims();
        if seed_index >= d {
            return Err(StoreError::BadRequest(format!(
                "seed index {seed_index} out of range for depth {d}"
            )));
        }
        if seed_mask.dims() != (h, w) {
            return Err(StoreError::BadRequest(format!(
                "seed mask {:?} does not match slice {:?}",
                seed_mask.dims(),
                (h, w)
            )));
        }
        if seed_mask.is_empty() {
            return Err(StoreError::BadRequest(
                Error::Seed("seed mask is empty".into()).to_string(),
            ));
        }
        options.validate().map_err(|e| StoreError::BadRequest(e.to_string()))?;
        let trained_on_profile = provider.network().config().input_mode == slicevol_core::InputMode::EdgeProfile;
        if options.edge_profile != trained_on_profile {
            return Err(StoreError::BadRequest(format!(
                "options.edge_profile = {} but the loaded model was trained with edge_profile = {trained_on_profile}",
                options.edge_profile
            )));
        }
        let id = uuid::Uuid::new_v4().simple().to_string();
        let record = JobRecord {
            job_id: id.clone(),
            volume_id: volume_id.to_string(),
            seed_index,
            options,
            state: JobState::Queued,
            completed: 0,
            total: d,
            error: None,
            summary: None,
            seed_mask: Some(seed_mask),
            result: None,
        };
        self.jobs.write().unwrap().insert(id.clone(), record);
        self.persist_index()?;
        let queue = self.queue.lock().unwrap();
        queue
            .as_ref()
            .ok_or_else(|| StoreError::Unavailable("service is shutting down".into()))?
            .send(id.clone())
            .map_err(|_| StoreError::Unavailable("worker pool stopped".into()))?;
        Ok(id)
    }

    pub fn job(&self, id: &str) -> Result<JobRecord, StoreError> {
        self.jobs
            .read()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| StoreError::NotFound(format!("job {id}")))
    }

    /// Result masks of a finished job.
    pub fn job_result(&self, id: &str) -> Result<(JobRecord, Arc<MaskVolume>), StoreError> {
        let job = self.job(id)?;
        match (&job.state, &job.result) {
            (JobState::Done, Some(r)) => {
                let r = Arc::clone(r);
                Ok((job, r))
            }
            (JobState::Failed, _) => Err(StoreError::Conflict(format!(
                "job {id} failed: {}",
                job.error.as_deref().unwrap_or("unknown error")
            ))),
            _ => Err(StoreError::Conflict(format!("job {id} is not done"))),
        }
    }

    fn run_job(&self, id: &str) {
        let (volume_id, seed_index, seed, options) = {
            let mut jobs = self.jobs.write().unwrap();
            let Some(job) = jobs.get_mut(id) else { return };
            if job.state != JobState::Queued {
                return;
            }
            job.state = JobState::Running;
            (
                job.volume_id.clone(),
                job.seed_index,
                job.seed_mask.clone().expect("queued job keeps its seed"),
                job.options.clone(),
            )
        };
        let outcome = (|| -> Result<_, StoreError> {
            let volume = self.volume(&volume_id)?;
            let provider = self
                .provider
                .as_ref()
                .ok_or_else(|| StoreError::Unavailable("no model loaded".into()))?;
            let progress = |done: usize| {
                if let Some(job) = self.jobs.write().unwrap().get_mut(id) {
                    job.completed = job.completed.max(done);
                }
            };
            let result =
                propagate_volume_with_progress(provider.as_ref(), &volume, &seed, seed_index, &options, &progress)?;
            let summary = result.summary(None)?;
            if let Some(dir) = &self.data_dir {
                save_masks(&result.masks, result_path(dir, id))?;
            }
            Ok((result.masks, summary))
        })();
        {
            let mut jobs = self.jobs.write().unwrap();
            if let Some(job) = jobs.get_mut(id) {
                match outcome {
                    Ok((masks, summary)) => {
                        job.state = JobState::Done;
                        job.completed = job.total;
                        job.summary = Some(summary);
                        job.result = Some(Arc::new(masks));
                    }
                    Err(e) => {
                        job.state = JobState::Failed;
                        job.error = Some(e.to_string());
                    }
                }
                job.seed_mask = None;
            }
        }
        let _ = self.persist_index();
    }

    fn persist_index(&self) -> Result<(), StoreError> {
        let Some(dir) = &self.data_dir else { return Ok(()) };
        let _guard = self.persist_lock.lock().unwrap();
        let mut index = Index::default();
        {
            let vols = self.volumes.read().unwrap();
            let mut ids: Vec<_> = vols.keys().cloned().collect();
            ids.sort();
            for id in ids {
                index.volumes.push(IndexedVolume {
                    groundtruth: vols[&id].groundtruth.is_some(),
                    volume_id: id,
                });
            }
        }
        {
            let jobs = self.jobs.read().unwrap();
            let mut all: Vec<_> = jobs.values().cloned().collect();
            all.sort_by(|a, b| a.job_id.cmp(&b.job_id));
            index.jobs = all;
        }
        let bytes = serde_json::to_vec_pretty(&index).map_err(Error::from)?;
        write_atomic(&dir.join("index.json"), &bytes)?;
        Ok(())
    }

    fn restore(&self, dir: &Path) -> Result<(), StoreError> {
        let path = dir.join("index.json");
        if !path.exists() {
            return Ok(());
        }
        let bytes = std::fs::read(&path).map_err(|e| Error::Io {
            path: path.clone(),
            source: e,
        })?;
        let index: Index = serde_json::from_slice(&bytes).map_err(Error::from)?;
        let mut vols = self.volumes.write().unwrap();
        for v in index.volumes {
            let volume = Arc::new(load_volume(volume_path(dir, &v.volume_id))?);
            let groundtruth = if v.groundtruth {
                Some(Arc::new(load_masks(groundtruth_path(dir, &v.volume_id))?))
            } else {
                None
            };
            vols.insert(v.volume_id, VolumeEntry { volume, groundtruth });
        }
        let mut jobs = self.jobs.write().unwrap();
        for mut job in index.jobs {
            match job.state {
                JobState::Done => job.result = Some(Arc::new(load_masks(result_path(dir, &job.job_id))?)),
                JobState::Queued | JobState::Running => {
                    job.state = JobState::Failed;
                    job.error = Some("interrupted by service restart".into());
                }
                JobState::Failed => {}
            }
            jobs.insert(job.job_id.clone(), job);
        }
        Ok(())
    }

    /// Stops accepting jobs and waits for the workers to drain the queue.
    pub fn shutdown(&self) {
        self.queue.lock().unwrap().take();
        let handles: Vec<_> = self.workers.lock().unwrap().drain(..).collect();
        for h in handles {
            let _ = h.join();
        }
    }
}

fn worker_loop(rx: Arc<Mutex<Receiver<String>>>, store: std::sync::Weak<Store>) {
    loop {
        let next = rx.lock().unwrap().recv();
        let Ok(id) = next else { return };
        let Some(store) = store.upgrade() else { return };
        store.run_job(&id);
    }
}

fn volume_path(dir: &Path, id: &str) -> PathBuf {
    dir.join("volumes").join(format!("{id}.svl"))
}

fn groundtruth_path(dir: &Path, id: &str) -> PathBuf {
    dir.join("volumes").join(format!("{id}.gt.smk"))
}

fn result_path(dir: &Path, id: &str) -> PathBuf {
    dir.join("jobs").join(format!("{id}.smk"))
}
