//! In-memory session registry with optional append-only event logs.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use nse_afs::rng::derive_seed;
use nse_afs::session::{read_events, write_event, Session, SessionConfig};

use crate::ApiError;

/// Sessions by id. Each session sits behind its own mutex, so mutations of
/// one session are serialized while different sessions proceed in parallel.
pub struct SessionStore {
    sessions: RwLock<HashMap<String, Arc<Mutex<Session>>>>,
    log_dir: Option<PathBuf>,
    nonce: u64,
    counter: AtomicU64,
}

impl SessionStore {
    pub fn in_memory() -> Self {
        Self::new(None)
    }

    fn new(log_dir: Option<PathBuf>) -> Self {
        let nanos = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_nanos() as u64).unwrap_or(0);
        Self { sessions: RwLock::new(HashMap::new()), log_dir, nonce: nanos, counter: AtomicU64::new(0) }
    }

    /// Persists every session to `<dir>/<id>.jsonl` and rebuilds the sessions
    /// already logged there.
    pub fn with_log_dir(dir: impl Into<PathBuf>) -> Result<Self, ApiError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(nse_afs::Error::from)?;
        let store = Self::new(Some(dir.clone()));
        let mut entries: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(nse_afs::Error::from)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        entries.sort();
        for path in entries {
            let file = File::open(&path).map_err(nse_afs::Error::from)?;
            let events = read_events(BufReader::new(file))?;
            let session = Session::replay(&events)?;
            log::info!("recovered session {} from {}", session.id(), path.display());
            store.sessions.write().unwrap().insert(session.id().to_string(), Arc::new(Mutex::new(session)));
        }
        Ok(store)
    }

    pub fn log_dir(&self) -> Option<&Path> {
        self.log_dir.as_deref()
    }

    fn fresh_id(&self) -> String {
        let n = self.counter.fetch_add(1, Ordering::Relaxed);
        format!("{:016x}", derive_seed(self.nonce, 0x5e55, n))
    }

    pub fn create(&self, config: SessionConfig) -> Result<Arc<Mutex<Session>>, ApiError> {
        let mut id = self.fresh_id();
        while self.sessions.read().unwrap().contains_key(&id) {
            id = self.fresh_id();
        }
        let session = Session::create(id.clone(), config)?;
        let handle = Arc::new(Mutex::new(session));
        {
            let guard = handle.lock().unwrap();
            self.persist(&guard, 0)?;
        }
        self.sessions.write().unwrap().insert(id, handle.clone());
        Ok(handle)
    }

    pub fn get(&self, id: &str) -> Result<Arc<Mutex<Session>>, ApiError> {
        self.sessions.read().unwrap().get(id).cloned().ok_or_else(|| ApiError::NotFound(id.to_string()))
    }

    pub fn len(&self) -> usize {
        self.sessions.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Appends the events from index `from` on to the session's log file.
    pub fn persist(&self, session: &MutexGuard<'_, Session>, from: usize) -> Result<(), ApiError> {
        let Some(dir) = &self.log_dir else { return Ok(()) };
        let path = dir.join(format!("{}.jsonl", session.id()));
        let mut file = OpenOptions::new().create(true).append(true).open(path).map_err(nse_afs::Error::from)?;
        for e in &session.events()[from..] {
            write_event(&mut file, e)?;
        }
        file.sync_data().map_err(nse_afs::Error::from)?;
        Ok(())
    }
}
