//! Response caches: in-memory, and a directory of one JSON file per key.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use saba_core::model::{CacheKey, CachedCompletion, ResponseCache};

#[derive(Default)]
pub struct MemoryCache {
    entries: Mutex<BTreeMap<CacheKey, CachedCompletion>>,
}

impl MemoryCache {
    pub fn len(&self) -> usize {
        self.entries.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl ResponseCache for MemoryCache {
    fn get(&self, key: &CacheKey) -> Option<CachedCompletion> {
        self.entries.lock().unwrap().get(key).cloned()
    }

    fn put(&self, key: &CacheKey, entry: &CachedCompletion) {
        self.entries
            .lock()
            .unwrap()
            .insert(key.clone(), entry.clone());
    }
}

/// Persists entries as `<dir>/<sha256>.json`. Writes go through a temporary
/// file and a rename, so concurrent writers of one key leave a complete file.
/// IO failures are logged and otherwise ignored; the cache is an
/// optimization, never a source of truth.
pub struct DiskCache {
    dir: PathBuf,
    hot: MemoryCache,
}

impl DiskCache {
    pub fn open(dir: &Path) -> std::io::Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            hot: MemoryCache::default(),
        })
    }

    fn path(&self, key: &CacheKey) -> PathBuf {
        self.dir.join(format!("{}.json", key.as_str()))
    }
}

impl ResponseCache for DiskCache {
    fn get(&self, key: &CacheKey) -> Option<CachedCompletion> {
        if let Some(hit) = self.hot.get(key) {
            return Some(hit);
        }
        let text = fs::read_to_string(self.path(key)).ok()?;
        match serde_json::from_str::<CachedCompletion>(&text) {
            Ok(entry) => {
                self.hot.put(key, &entry);
                Some(entry)
            }
            Err(e) => {
                log::warn!("ignoring corrupt cache entry {}: {e}", key.as_str());
                None
            }
        }
    }

    fn put(&self, key: &CacheKey, entry: &CachedCompletion) {
        self.hot.put(key, entry);
        let path = self.path(key);
        let tmp = self.dir.join(format!(
            "{}.{}.{:?}.tmp",
            key.as_str(),
            std::process::id(),
            std::thread::current().id()
        ));
        let result = (|| -> std::io::Result<()> {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(serde_json::to_string(entry)?.as_bytes())?;
            f.sync_all()?;
            fs::rename(&tmp, &path)
        })();
        if let Err(e) = result {
            log::warn!("could not persist cache entry {}: {e}", key.as_str());
            let _ = fs::remove_file(&tmp);
        }
    }
}
