use std::collections::{BTreeMap, BTreeSet};
use std::sync::Mutex;

use super::{join, normalize, split_path, Content, FileObject, Store, StoreError, StoreResult, Tier};

#[derive(Debug)]
struct Entry {
    content: Content,
    checksum: Option<u32>,
}

#[derive(Debug, Default)]
struct Inner {
    dirs: BTreeSet<String>,
    objects: BTreeMap<String, BTreeMap<String, Entry>>,
    used: u64,
}

impl Inner {
    fn ensure_dir(&mut self, dir: &str) {
        let mut cur = String::new();
        self.dirs.insert(String::new());
        for part in dir.split('/').filter(|p| !p.is_empty()) {
            cur = join(&cur, part);
            self.dirs.insert(cur.clone());
        }
    }

    fn entry(&self, name: &str) -> StoreResult<(&String, &Entry)> {
        let (dir, base) = split_path(name)?;
        self.objects
            .get(&dir)
            .and_then(|d| d.get_key_value(&base))
            .ok_or_else(|| StoreError::NotFound(name.to_string()))
    }

    fn list(&self, dir: &str) -> StoreResult<Vec<String>> {
        let dir = normalize(dir)?;
        if !self.dirs.contains(&dir) {
            return Err(StoreError::NotFound(dir));
        }
        Ok(self.objects.get(&dir).map(|d| d.keys().cloned().collect()).unwrap_or_default())
    }
}

/// In-memory store. With `sizes_only` set, byte content is dropped on `put`
/// and only sizes are kept.
#[derive(Debug)]
pub struct MemStore {
    tier: Tier,
    capacity: u64,
    sizes_only: bool,
    inner: Mutex<Inner>,
}

impl MemStore {
    pub fn new(tier: Tier, capacity: u64) -> Self {
        let mut inner = Inner::default();
        inner.dirs.insert(String::new());
        MemStore { tier, capacity, sizes_only: false, inner: Mutex::new(inner) }
    }

    pub fn sizes_only(tier: Tier, capacity: u64) -> Self {
        MemStore { sizes_only: true, ..Self::new(tier, capacity) }
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }
}

fn object(dir: &str, base: &str, e: &Entry) -> FileObject {
    FileObject { name: join(dir, base), size: e.content.len(), checksum: e.checksum }
}

impl Store for MemStore {
    fn tier(&self) -> Tier {
        self.tier
    }

    fn capacity(&self) -> u64 {
        self.capacity
    }

    fn used(&self) -> u64 {
        self.lock().used
    }

    fn put(&self, name: &str, content: Content) -> StoreResult<FileObject> {
        let (dir, base) = split_path(name)?;
        let size = content.len();
        let mut inner = self.lock();
        if inner.objects.get(&dir).is_some_and(|d| d.contains_key(&base)) {
            return Err(StoreError::Exists(name.to_string()));
        }
        let free = self.capacity - inner.used;
        if size > free {
            return Err(StoreError::Full { needed: size, free });
        }
        let checksum = content.checksum();
        let content = if self.sizes_only { Content::Sized(size) } else { content };
        let entry = Entry { content, checksum };
        let obj = object(&dir, &base, &entry);
        inner.ensure_dir(&dir);
        inner.objects.entry(dir).or_default().insert(base, entry);
        inner.used += size;
        Ok(obj)
    }

    fn get(&self, name: &str) -> StoreResult<Content> {
        let inner = self.lock();
        Ok(inner.entry(name)?.1.content.clone())
    }

    fn stat(&self, name: &str) -> StoreResult<FileObject> {
        let inner = self.lock();
        let (_, e) = inner.entry(name)?;
        Ok(FileObject { name: normalize(name)?, size: e.content.len(), checksum: e.checksum })
    }

    fn read_range(&self, name: &str, offset: u64, len: u64) -> StoreResult<Vec<u8>> {
        let inner = self.lock();
        let (_, e) = inner.entry(name)?;
        let size = e.content.len();
        if offset.checked_add(len).is_none_or(|end| end > size) {
            return Err(StoreError::OutOfRange { name: name.to_string(), offset, len, size });
        }
        match &e.content {
            Content::Bytes(b) => Ok(b[offset as usize..(offset + len) as usize].to_vec()),
            Content::Sized(_) => Err(StoreError::NoContent(name.to_string())),
        }
    }

    fn delete(&self, name: &str) -> StoreResult<FileObject> {
        let (dir, base) = split_path(name)?;
        let mut inner = self.lock();
        let entry = inner
            .objects
            .get_mut(&dir)
            .and_then(|d| d.remove(&base))
            .ok_or_else(|| StoreError::NotFound(name.to_string()))?;
        inner.used -= entry.content.len();
        Ok(object(&dir, &base, &entry))
    }

    fn list(&self, dir: &str) -> StoreResult<Vec<String>> {
        self.lock().list(dir)
    }

    fn list_many(&self, dirs: &[&str]) -> StoreResult<Vec<Vec<String>>> {
        let inner = self.lock();
        dirs.iter().map(|d| inner.list(d)).collect()
    }

    fn mkdir(&self, dir: &str) -> StoreResult<()> {
        let dir = normalize(dir)?;
        self.lock().ensure_dir(&dir);
        Ok(())
    }

    fn atomic_move(&self, from_dir: &str, to_dir: &str, name: &str) -> StoreResult<FileObject> {
        let from = normalize(from_dir)?;
        let to = normalize(to_dir)?;
        let (_, base) = split_path(name)?;
        let mut inner = self.lock();
        if !inner.dirs.contains(&to) {
            return Err(StoreError::NotFound(to));
        }
        if inner.objects.get(&to).is_some_and(|d| d.contains_key(&base)) {
            return Err(StoreError::Exists(join(&to, &base)));
        }
        let entry = inner
            .objects
            .get_mut(&from)
            .and_then(|d| d.remove(&base))
            .ok_or_else(|| StoreError::NotFound(join(&from, &base)))?;
        let obj = object(&to, &base, &entry);
        inner.objects.entry(to).or_default().insert(base, entry);
        Ok(obj)
    }

    fn objects(&self) -> Vec<FileObject> {
        let inner = self.lock();
        let mut all: Vec<FileObject> = inner
            .objects
            .iter()
            .flat_map(|(dir, d)| d.iter().map(move |(base, e)| object(dir, base, e)))
            .collect();
        all.sort_by(|a, b| a.name.cmp(&b.name));
        all
    }
}
