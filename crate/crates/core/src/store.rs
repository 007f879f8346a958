//! Keyed record storage.
//!
//! [`RecordStore`] is the abstract interface the protocol operates on. Every
//! mutation goes through [`RecordStore::update`], which runs a closure against
//! the current value of one key while holding that key's shard lock, so
//! read-modify-write sequences on a single key are linearizable.
//!
//! [`MemoryStore`] keeps everything in sharded hash maps. [`FileStore`] adds
//! one JSON file per record in a directory: writes go to a temporary file that
//! is fsynced and renamed over the target, removals unlink the file. A crash
//! leaves either the old or the new version of a record, never a torn one.

use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::fs::{self, File};
use std::hash::{Hash, Hasher};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, MutexGuard};

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

const SHARDS: usize = 32;
const RECORD_EXT: &str = "json";
const TMP_EXT: &str = "tmp";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("storage unavailable: {0}")]
    Unavailable(#[from] io::Error),
    #[error("corrupt record {path}: {source}")]
    Corrupt {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("invalid key {0:?}")]
    InvalidKey(String),
}

/// Values that can live in a store.
pub trait Record: Serialize + DeserializeOwned + Clone + Send + Sync + 'static {}

impl<T> Record for T where T: Serialize + DeserializeOwned + Clone + Send + Sync + 'static {}

/// What an update closure decided to do with the record.
#[derive(Debug, Clone, PartialEq)]
pub enum Change<R> {
    Keep,
    Put(R),
    Remove,
}

pub trait RecordStore<R: Record>: Send + Sync {
    fn get(&self, key: &str) -> Option<R>;

    /// Atomically applies `f` to the current value under `key`. The change
    /// is persisted before the lock is released; if persisting fails the
    /// in-memory state is left untouched.
    fn update(
        &self,
        key: &str,
        f: &mut dyn FnMut(Option<&R>) -> Change<R>,
    ) -> Result<(), StoreError>;

    /// Keys whose current value satisfies `pred`. A snapshot: callers must
    /// re-check inside `update` before acting on a key.
    fn keys_where(&self, pred: &dyn Fn(&R) -> bool) -> Vec<String>;

    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn values(&self) -> Vec<R> {
        self.keys_where(&|_| true)
            .into_iter()
            .filter_map(|k| self.get(&k))
            .collect()
    }
}

struct Shards<R> {
    maps: Vec<Mutex<HashMap<String, R>>>,
}

impl<R: Record> Shards<R> {
    fn new() -> Self {
        Shards {
            maps: (0..SHARDS).map(|_| Mutex::new(HashMap::new())).collect(),
        }
    }

    fn shard(&self, key: &str) -> MutexGuard<'_, HashMap<String, R>> {
        let mut h = DefaultHasher::new();
        key.hash(&mut h);
        let idx = (h.finish() as usize) % self.maps.len();
        self.maps[idx].lock().unwrap_or_else(|e| e.into_inner())
    }

    fn lock_all(&self) -> impl Iterator<Item = MutexGuard<'_, HashMap<String, R>>> {
        self.maps
            .iter()
            .map(|m| m.lock().unwrap_or_else(|e| e.into_inner()))
    }

    fn update_with(
        &self,
        key: &str,
        f: &mut dyn FnMut(Option<&R>) -> Change<R>,
        persist: impl FnOnce(&str, Option<&R>) -> Result<(), StoreError>,
    ) -> Result<(), StoreError> {
        let mut map = self.shard(key);
        match f(map.get(key)) {
            Change::Keep => Ok(()),
            Change::Put(rec) => {
                persist(key, Some(&rec))?;
                map.insert(key.to_owned(), rec);
                Ok(())
            }
            Change::Remove => {
                if map.contains_key(key) {
                    persist(key, None)?;
                    map.remove(key);
                }
                Ok(())
            }
        }
    }

    fn keys_where(&self, pred: &dyn Fn(&R) -> bool) -> Vec<String> {
        let mut keys: Vec<String> = self
            .lock_all()
            .flat_map(|m| {
                m.iter()
                    .filter(|(_, v)| pred(v))
                    .map(|(k, _)| k.clone())
                    .collect::<Vec<_>>()
            })
            .collect();
        keys.sort_unstable();
        keys
    }

    fn len(&self) -> usize {
        self.lock_all().map(|m| m.len()).sum()
    }
}

pub struct MemoryStore<R> {
    shards: Shards<R>,
}

impl<R: Record> MemoryStore<R> {
    pub fn new() -> Self {
        MemoryStore {
            shards: Shards::new(),
        }
    }
}

impl<R: Record> Default for MemoryStore<R> {
    fn default() -> Self {
        Self::new()
    }
}

impl<R: Record> RecordStore<R> for MemoryStore<R> {
    fn get(&self, key: &str) -> Option<R> {
        self.shards.shard(key).get(key).cloned()
    }

    fn update(
        &self,
        key: &str,
        f: &mut dyn FnMut(Option<&R>) -> Change<R>,
    ) -> Result<(), StoreError> {
        self.shards.update_with(key, f, |_, _| Ok(()))
    }

    fn keys_where(&self, pred: &dyn Fn(&R) -> bool) -> Vec<String> {
        self.shards.keys_where(pred)
    }

    fn len(&self) -> usize {
        self.shards.len()
    }
}

/// A directory of `<key>.json` files mirrored in memory.
pub struct FileStore<R> {
    dir: PathBuf,
    shards: Shards<R>,
}

impl<R: Record> FileStore<R> {
    /// Opens (creating if needed) `dir`, discards leftover temporary files
    /// from interrupted writes, and loads every record.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, StoreError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        let shards = Shards::new();
        for entry in fs::read_dir(&dir)? {
            let path = entry?.path();
            match path.extension().and_then(|e| e.to_str()) {
                Some(TMP_EXT) => fs::remove_file(&path)?,
                Some(RECORD_EXT) => {
                    let Some(key) = path.file_stem().and_then(|s| s.to_str()) else {
                        continue;
                    };
                    let bytes = fs::read(&path)?;
                    let rec: R =
                        serde_json::from_slice(&bytes).map_err(|source| StoreError::Corrupt {
                            path: path.clone(),
                            source,
                        })?;
                    shards.shard(key).insert(key.to_owned(), rec);
                }
                _ => {}
            }
        }
        Ok(FileStore { dir, shards })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn record_path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.{RECORD_EXT}"))
    }

    fn persist(&self, key: &str, rec: Option<&R>) -> Result<(), StoreError> {
        if key.is_empty()
            || !key
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
        {
            return Err(StoreError::InvalidKey(key.to_owned()));
        }
        let target = self.record_path(key);
        match rec {
            Some(rec) => {
                let tmp = self.dir.join(format!("{key}.{TMP_EXT}"));
                let bytes = serde_json::to_vec(rec).map_err(io::Error::other)?;
                let mut f = File::create(&tmp)?;
                f.write_all(&bytes)?;
                f.sync_all()?;
                fs::rename(&tmp, &target)?;
            }
            None => match fs::remove_file(&target) {
                Ok(()) => {}
                Err(e) if e.kind() == io::ErrorKind::NotFound => {}
                Err(e) => return Err(e.into()),
            },
        }
        sync_dir(&self.dir)
    }
}

#[cfg(unix)]
fn sync_dir(dir: &Path) -> Result<(), StoreError> {
    File::open(dir)?.sync_all()?;
    Ok(())
}

#[cfg(not(unix))]
fn sync_dir(_dir: &Path) -> Result<(), StoreError> {
    Ok(())
}

impl<R: Record> RecordStore<R> for FileStore<R> {
    fn get(&self, key: &str) -> Option<R> {
        self.shards.shard(key).get(key).cloned()
    }

    fn update(
        &self,
        key: &str,
        f: &mut dyn FnMut(Option<&R>) -> Change<R>,
    ) -> Result<(), StoreError> {
        self.shards
            .update_with(key, f, |k, rec| self.persist(k, rec))
    }

    fn keys_where(&self, pred: &dyn Fn(&R) -> bool) -> Vec<String> {
        self.shards.keys_where(pred)
    }

    fn len(&self) -> usize {
        self.shards.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;
    use std::sync::Arc;

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    struct Counter {
        n: u32,
    }

    fn bump(store: &dyn RecordStore<Counter>, key: &str) {
        store
            .update(key, &mut |cur| {
                Change::Put(Counter {
                    n: cur.map_or(0, |c| c.n) + 1,
                })
            })
            .unwrap();
    }

    #[test]
    fn concurrent_updates_are_not_lost() {
        let store: Arc<MemoryStore<Counter>> = Arc::new(MemoryStore::new());
        std::thread::scope(|s| {
            for _ in 0..8 {
                let store = store.clone();
                s.spawn(move || {
                    for _ in 0..500 {
                        bump(store.as_ref(), "k");
                    }
                });
            }
        });
        assert_eq!(store.get("k"), Some(Counter { n: 4000 }));
    }

    #[test]
    fn file_store_survives_reopen_and_removal_unlinks() {
        let dir = tempfile::tempdir().unwrap();
        {
            let store: FileStore<Counter> = FileStore::open(dir.path()).unwrap();
            bump(&store, "a");
            bump(&store, "a");
            bump(&store, "b");
            store.update("b", &mut |_| Change::Remove).unwrap();
        }
        let store: FileStore<Counter> = FileStore::open(dir.path()).unwrap();
        assert_eq!(store.get("a"), Some(Counter { n: 2 }));
        assert_eq!(store.get("b"), None);
        assert!(!dir.path().join("b.json").exists());
        assert_eq!(store.len(), 1);
    }

    #[test]
    fn leftover_temporary_files_are_discarded() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("x.tmp"), b"{\"n\":").unwrap();
        fs::write(dir.path().join("y.json"), b"{\"n\":4}").unwrap();
        let store: FileStore<Counter> = FileStore::open(dir.path()).unwrap();
        assert_eq!(store.get("y"), Some(Counter { n: 4 }));
        assert!(!dir.path().join("x.tmp").exists());
    }

    #[test]
    fn corrupt_record_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("z.json"), b"not json").unwrap();
        assert!(matches!(
            FileStore::<Counter>::open(dir.path()),
            Err(StoreError::Corrupt { .. })
        ));
    }

    #[test]
    fn path_like_keys_are_refused() {
        let dir = tempfile::tempdir().unwrap();
        let store: FileStore<Counter> = FileStore::open(dir.path()).unwrap();
        let err = store
            .update("../escape", &mut |_| Change::Put(Counter { n: 1 }))
            .unwrap_err();
        assert!(matches!(err, StoreError::InvalidKey(_)));
        assert!(store.get("../escape").is_none());
    }

    #[test]
    fn keys_where_filters_and_sorts() {
        let store: MemoryStore<Counter> = MemoryStore::new();
        for (k, n) in [("c", 3), ("a", 1), ("b", 2)] {
            store
                .update(k, &mut |_| Change::Put(Counter { n }))
                .unwrap();
        }
        assert_eq!(store.keys_where(&|c| c.n >= 2), vec!["b", "c"]);
    }
}
