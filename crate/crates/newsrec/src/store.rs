//! Key-value profile stores with per-key atomic updates.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use newsrec_core::rng::fnv1a;
use newsrec_core::{Timestamp, UserProfile};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{path}:{line}: {msg}")]
    Corrupt { path: PathBuf, line: usize, msg: String },
}

/// `user_id → UserProfile`. Readers get an immutable copy of the most
/// recently committed profile; updates to one key are serialized.
pub trait ProfileStore: Send + Sync {
    fn get(&self, user_id: &str) -> Option<Arc<UserProfile>>;

    /// Runs `f` on the user's profile (empty if new) and commits the result.
    fn update(&self, user_id: &str, f: &mut dyn FnMut(&mut UserProfile)) -> Result<Arc<UserProfile>, StoreError>;

    /// Every stored profile, ordered by user id.
    fn snapshot(&self) -> BTreeMap<String, Arc<UserProfile>>;

    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

const SHARDS: usize = 32;

type Shard = RwLock<HashMap<String, Arc<UserProfile>>>;

/// Sharded in-memory store.
pub struct MemoryStore {
    shards: Vec<Shard>,
}

impl Default for MemoryStore {
    fn default() -> Self {
        Self {
            shards: (0..SHARDS).map(|_| RwLock::new(HashMap::new())).collect(),
        }
    }
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }

    fn shard(&self, user_id: &str) -> &Shard {
        &self.shards[(fnv1a(user_id) % SHARDS as u64) as usize]
    }

    fn put(&self, profile: UserProfile) {
        let shard = self.shard(&profile.user_id);
        shard.write().expect("shard lock").insert(profile.user_id.clone(), Arc::new(profile));
    }

    /// Applies `f`, then calls `commit` on the new value while the key is still locked.
    fn update_then(
        &self,
        user_id: &str,
        f: &mut dyn FnMut(&mut UserProfile),
        commit: impl FnOnce(&UserProfile) -> Result<(), StoreError>,
    ) -> Result<Arc<UserProfile>, StoreError> {
        let mut shard = self.shard(user_id).write().expect("shard lock");
        let mut profile = match shard.get(user_id) {
            Some(p) => UserProfile::clone(p),
            None => UserProfile::new(user_id),
        };
        f(&mut profile);
        commit(&profile)?;
        let profile = Arc::new(profile);
        shard.insert(user_id.to_string(), Arc::clone(&profile));
        Ok(profile)
    }
}

impl ProfileStore for MemoryStore {
    fn get(&self, user_id: &str) -> Option<Arc<UserProfile>> {
        self.shard(user_id).read().expect("shard lock").get(user_id).cloned()
    }

    fn update(&self, user_id: &str, f: &mut dyn FnMut(&mut UserProfile)) -> Result<Arc<UserProfile>, StoreError> {
        self.update_then(user_id, f, |_| Ok(()))
    }

    fn snapshot(&self) -> BTreeMap<String, Arc<UserProfile>> {
        let mut out = BTreeMap::new();
        for shard in &self.shards {
            for (k, v) in shard.read().expect("shard lock").iter() {
                out.insert(k.clone(), Arc::clone(v));
            }
        }
        out
    }

    fn len(&self) -> usize {
        self.shards.iter().map(|s| s.read().expect("shard lock").len()).sum()
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProfileLine {
    user_id: String,
    history: Vec<String>,
    vector: Option<Vec<f64>>,
    last_access_at: Option<Timestamp>,
}

impl From<&UserProfile> for ProfileLine {
    fn from(p: &UserProfile) -> Self {
        Self {
            user_id: p.user_id.clone(),
            history: p.history.clone(),
            vector: p.vector.clone(),
            last_access_at: p.last_access_at,
        }
    }
}

impl From<ProfileLine> for UserProfile {
    fn from(p: ProfileLine) -> Self {
        UserProfile {
            user_id: p.user_id,
            history: p.history,
            vector: p.vector,
            last_access_at: p.last_access_at,
        }
    }
}

/// In-memory store backed by `profiles.snapshot` plus an append-only
/// `profiles.log` of committed profiles. Later log lines win on load.
pub struct FileStore {
    mem: MemoryStore,
    dir: PathBuf,
    log: Mutex<BufWriter<File>>,
}

const SNAPSHOT: &str = "profiles.snapshot";
const LOG: &str = "profiles.log";

fn load_lines(path: &Path, mem: &MemoryStore) -> Result<(), StoreError> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(()),
        Err(e) => return Err(e.into()),
    };
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let p: ProfileLine = serde_json::from_str(&line).map_err(|e| StoreError::Corrupt {
            path: path.to_path_buf(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        mem.put(p.into());
    }
    Ok(())
}

impl FileStore {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, StoreError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        let mem = MemoryStore::new();
        load_lines(&dir.join(SNAPSHOT), &mem)?;
        load_lines(&dir.join(LOG), &mem)?;
        let log = OpenOptions::new().create(true).append(true).open(dir.join(LOG))?;
        Ok(Self {
            mem,
            dir,
            log: Mutex::new(BufWriter::new(log)),
        })
    }

    /// Flushes buffered log lines to the OS.
    pub fn flush(&self) -> Result<(), StoreError> {
        self.log.lock().expect("log lock").flush()?;
        Ok(())
    }

    /// Writes a fresh snapshot and truncates the log.
    pub fn compact(&self) -> Result<(), StoreError> {
        let mut log = self.log.lock().expect("log lock");
        log.flush()?;
        let tmp = self.dir.join(format!("{SNAPSHOT}.tmp"));
        {
            let mut w = BufWriter::new(File::create(&tmp)?);
            for p in self.mem.snapshot().values() {
                writeln!(w, "{}", serde_json::to_string(&ProfileLine::from(&**p)).expect("profile serializes"))?;
            }
            w.flush()?;
            w.get_ref().sync_all()?;
        }
        fs::rename(&tmp, self.dir.join(SNAPSHOT))?;
        let fresh = OpenOptions::new()
            .create(true)
            .write(true)
            .truncate(true)
            .open(self.dir.join(LOG))?;
        *log = BufWriter::new(fresh);
        Ok(())
    }
}

impl Drop for FileStore {
    fn drop(&mut self) {
        if let Ok(mut log) = self.log.lock() {
            let _ = log.flush();
        }
    }
}

impl ProfileStore for FileStore {
    fn get(&self, user_id: &str) -> Option<Arc<UserProfile>> {
        self.mem.get(user_id)
    }

    fn update(&self, user_id: &str, f: &mut dyn FnMut(&mut UserProfile)) -> Result<Arc<UserProfile>, StoreError> {
        self.mem.update_then(user_id, f, |p| {
            let line = serde_json::to_string(&ProfileLine::from(p)).expect("profile serializes");
            let mut log = self.log.lock().expect("log lock");
            writeln!(log, "{line}")?;
            Ok(())
        })
    }

    fn snapshot(&self) -> BTreeMap<String, Arc<UserProfile>> {
        self.mem.snapshot()
    }

    fn len(&self) -> usize {
        self.mem.len()
    }
}
