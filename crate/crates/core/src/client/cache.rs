use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use async_trait::async_trait;

use super::{Backend, CacheKey, ClientError, ModelSpec, Probe};

/// One file per digest; the file body is the raw response text.
#[derive(Debug, Clone)]
pub struct ResponseCache {
    dir: PathBuf,
}

impl ResponseCache {
    pub fn open(dir: impl Into<PathBuf>) -> io::Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(ResponseCache { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path(&self, key: &CacheKey) -> PathBuf {
        self.dir.join(&key.digest)
    }

    pub fn get(&self, key: &CacheKey) -> io::Result<Option<String>> {
        match fs::read_to_string(self.path(key)) {
            Ok(text) => Ok(Some(text)),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e),
        }
    }

    /// Writes to a temporary file in the cache directory and renames it into
    /// place, so readers never observe a partial entry.
    pub fn put(&self, key: &CacheKey, text: &str) -> io::Result<()> {
        let mut tmp = tempfile::NamedTempFile::new_in(&self.dir)?;
        tmp.write_all(text.as_bytes())?;
        tmp.as_file().sync_all()?;
        tmp.persist(self.path(key)).map_err(|e| e.error)?;
        Ok(())
    }
}

pub struct CachedBackend<B> {
    inner: B,
    cache: ResponseCache,
}

impl<B> CachedBackend<B> {
    pub fn new(inner: B, cache: ResponseCache) -> Self {
        CachedBackend { inner, cache }
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }
}

#[async_trait]
impl<B: Backend> Backend for CachedBackend<B> {
    async fn complete(&self, model: &ModelSpec, probe: &Probe<'_>) -> Result<String, ClientError> {
        let key = CacheKey::for_probe(model, probe);
        if let Some(hit) = self.cache.get(&key)? {
            tracing::debug!(digest = %key.digest, "cache hit");
            return Ok(hit);
        }
        let text = self.inner.complete(model, probe).await?;
        self.cache.put(&key, &text)?;
        Ok(text)
    }
}

#[cfg(test)]
mod tests {
    use std::sync::atomic::{AtomicUsize, Ordering};

    use super::*;
    use crate::prompts::ProbeTask;

    struct Counting(AtomicUsize);

    #[async_trait]
    impl Backend for Counting {
        async fn complete(&self, _: &ModelSpec, probe: &Probe<'_>) -> Result<String, ClientError> {
            self.0.fetch_add(1, Ordering::SeqCst);
            Ok(format!("answer to {}", probe.prompt))
        }
    }

    fn probe(prompt: &str) -> Probe<'_> {
        Probe {
            task: ProbeTask::VerbatimMemorization,
            prompt,
            inventory_name: "Toy",
            item_index: 1,
            target_score: None,
        }
    }

    #[tokio::test]
    async fn second_call_is_served_from_disk() {
        let dir = tempfile::tempdir().unwrap();
        let backend = CachedBackend::new(Counting(AtomicUsize::new(0)), ResponseCache::open(dir.path()).unwrap());
        let model = ModelSpec::new("m");
        let first = backend.complete(&model, &probe("p")).await.unwrap();
        let second = backend.complete(&model, &probe("p")).await.unwrap();
        assert_eq!(first, second);
        assert_eq!(backend.inner().0.load(Ordering::SeqCst), 1);
        backend.complete(&model, &probe("q")).await.unwrap();
        assert_eq!(backend.inner().0.load(Ordering::SeqCst), 2);

        // A fresh process sees the same entries.
        let reopened = CachedBackend::new(Counting(AtomicUsize::new(0)), ResponseCache::open(dir.path()).unwrap());
        assert_eq!(reopened.complete(&model, &probe("p")).await.unwrap(), first);
        assert_eq!(reopened.inner().0.load(Ordering::SeqCst), 0);
    }

    #[test]
    fn round_trips_arbitrary_text() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::open(dir.path()).unwrap();
        let key = CacheKey::new("m", ProbeTask::KeywordMemorization, "x", 0.0);
        assert_eq!(cache.get(&key).unwrap(), None);
        let text = "  multi\nline — ünïcode \r\n";
        cache.put(&key, text).unwrap();
        assert_eq!(cache.get(&key).unwrap().as_deref(), Some(text));
        // Only the final file remains.
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
