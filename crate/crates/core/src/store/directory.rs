use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use super::{join, normalize, split_path, Content, FileObject, Store, StoreError, StoreResult, Tier};

const INDEX: &str = ".cio-index";
const TMP_PREFIX: &str = ".cio-tmp-";

#[derive(Debug, Clone, Copy)]
struct Meta {
    size: u64,
    crc: u32,
}

#[derive(Debug, Default)]
struct Inner {
    dirs: BTreeSet<String>,
    index: BTreeMap<String, BTreeMap<String, Meta>>,
    /// Names reserved by puts whose bytes are still being written.
    pending: BTreeSet<String>,
    used: u64,
}

/// Store backed by a real directory tree at `<root>/<tier>/`.
///
/// Object bytes are stored verbatim. Each directory has a `.cio-index`
/// sidecar with one `name,size,crc32hex` line per object. Objects are
/// written to a temporary name and renamed into place, so a partially
/// written object is never visible under its real name.
#[derive(Debug)]
pub struct DirStore {
    tier: Tier,
    capacity: u64,
    base: PathBuf,
    inner: Mutex<Inner>,
    tmp_seq: AtomicU64,
}

impl DirStore {
    /// Opens the store under `root`, creating it if needed and loading any
    /// existing indexes.
    pub fn open(root: impl AsRef<Path>, tier: Tier, capacity: u64) -> StoreResult<Self> {
        let base = root.as_ref().join(tier.as_str());
        fs::create_dir_all(&base)?;
        let mut inner = Inner::default();
        load_tree(&base, String::new(), &mut inner)?;
        Ok(DirStore { tier, capacity, base, inner: Mutex::new(inner), tmp_seq: AtomicU64::new(0) })
    }

    pub fn base_dir(&self) -> &Path {
        &self.base
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn path_of(&self, name: &str) -> PathBuf {
        if name.is_empty() {
            self.base.clone()
        } else {
            self.base.join(name)
        }
    }

    fn write_index(&self, inner: &Inner, dir: &str) -> StoreResult<()> {
        let mut text = String::new();
        if let Some(entries) = inner.index.get(dir) {
            for (name, m) in entries {
                text.push_str(&format!("{name},{},{:08x}\n", m.size, m.crc));
            }
        }
        let dir_path = self.path_of(dir);
        let tmp = dir_path.join(format!("{INDEX}.tmp"));
        fs::write(&tmp, text)?;
        fs::rename(tmp, dir_path.join(INDEX))?;
        Ok(())
    }

    fn ensure_dir(&self, inner: &mut Inner, dir: &str) -> StoreResult<()> {
        if inner.dirs.contains(dir) {
            return Ok(());
        }
        fs::create_dir_all(self.path_of(dir))?;
        let mut cur = String::new();
        for part in dir.split('/').filter(|p| !p.is_empty()) {
            cur = join(&cur, part);
            inner.dirs.insert(cur.clone());
        }
        Ok(())
    }

    fn lookup(&self, name: &str) -> StoreResult<(String, Meta)> {
        let (dir, base) = split_path(name)?;
        let inner = self.lock();
        let meta = inner
            .index
            .get(&dir)
            .and_then(|d| d.get(&base))
            .copied()
            .ok_or_else(|| StoreError::NotFound(name.to_string()))?;
        Ok((join(&dir, &base), meta))
    }

    fn put_with(&self, name: &str, content: Content, block: u64) -> StoreResult<FileObject> {
        let (dir, base) = split_path(name)?;
        let full = join(&dir, &base);
        let size = content.len();
        {
            let mut inner = self.lock();
            if inner.pending.contains(&full) || inner.index.get(&dir).is_some_and(|d| d.contains_key(&base)) {
                return Err(StoreError::Exists(full));
            }
            let free = self.capacity - inner.used;
            if size > free {
                return Err(StoreError::Full { needed: size, free });
            }
            self.ensure_dir(&mut inner, &dir)?;
            inner.used += size;
            inner.pending.insert(full.clone());
        }

        let tmp = self.path_of(&dir).join(format!("{TMP_PREFIX}{}", self.tmp_seq.fetch_add(1, Ordering::Relaxed)));
        let written = write_file(&tmp, &content, block.max(1));
        let mut inner = self.lock();
        inner.pending.remove(&full);
        let crc = match written {
            Ok(crc) => crc,
            Err(e) => {
                inner.used -= size;
                let _ = fs::remove_file(&tmp);
                return Err(e);
            }
        };
        if let Err(e) = fs::rename(&tmp, self.path_of(&full)) {
            inner.used -= size;
            let _ = fs::remove_file(&tmp);
            return Err(e.into());
        }
        inner.index.entry(dir.clone()).or_default().insert(base, Meta { size, crc });
        self.write_index(&inner, &dir)?;
        Ok(FileObject { name: full, size, checksum: Some(crc) })
    }
}

fn write_file(path: &Path, content: &Content, block: u64) -> StoreResult<u32> {
    let mut f = fs::File::create(path)?;
    let mut hasher = crc32fast::Hasher::new();
    match content {
        Content::Bytes(b) => {
            for piece in b.chunks(block.min(usize::MAX as u64) as usize) {
                f.write_all(piece)?;
                hasher.update(piece);
            }
        }
        Content::Sized(n) => {
            // Size-only content materializes as zeros.
            let zeros = vec![0u8; block.min(*n).max(1) as usize];
            let mut left = *n;
            while left > 0 {
                let k = left.min(zeros.len() as u64) as usize;
                f.write_all(&zeros[..k])?;
                hasher.update(&zeros[..k]);
                left -= k as u64;
            }
        }
    }
    f.flush()?;
    Ok(hasher.finalize())
}

fn load_tree(path: &Path, rel: String, inner: &mut Inner) -> StoreResult<()> {
    inner.dirs.insert(rel.clone());
    let index_path = path.join(INDEX);
    if index_path.exists() {
        let text = fs::read_to_string(&index_path)?;
        let entries = inner.index.entry(rel.clone()).or_default();
        for line in text.lines().filter(|l| !l.is_empty()) {
            let mut parts = line.rsplitn(3, ',');
            let (Some(crc), Some(size), Some(name)) = (parts.next(), parts.next(), parts.next()) else {
                return Err(StoreError::Io(format!("bad index line {line:?} in {}", index_path.display())));
            };
            let size: u64 = size.parse().map_err(|_| StoreError::Io(format!("bad size in {line:?}")))?;
            let crc = u32::from_str_radix(crc, 16).map_err(|_| StoreError::Io(format!("bad crc in {line:?}")))?;
            entries.insert(name.to_string(), Meta { size, crc });
            inner.used += size;
        }
    }
    for entry in fs::read_dir(path)? {
        let entry = entry?;
        if entry.file_type()?.is_dir() {
            let name = entry.file_name().to_string_lossy().into_owned();
            load_tree(&entry.path(), join(&rel, &name), inner)?;
        }
    }
    Ok(())
}

impl Store for DirStore {
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
        self.put_with(name, content, 1 << 20)
    }

    fn put_blocked(&self, name: &str, content: Content, block_size: u64) -> StoreResult<FileObject> {
        self.put_with(name, content, block_size)
    }

    fn get(&self, name: &str) -> StoreResult<Content> {
        let (full, meta) = self.lookup(name)?;
        let bytes = fs::read(self.path_of(&full)).map_err(|_| StoreError::NotFound(full.clone()))?;
        if bytes.len() as u64 != meta.size || crc32fast::hash(&bytes) != meta.crc {
            return Err(StoreError::Corrupt(full));
        }
        Ok(Content::Bytes(bytes))
    }

    fn stat(&self, name: &str) -> StoreResult<FileObject> {
        let (full, meta) = self.lookup(name)?;
        Ok(FileObject { name: full, size: meta.size, checksum: Some(meta.crc) })
    }

    fn read_range(&self, name: &str, offset: u64, len: u64) -> StoreResult<Vec<u8>> {
        let (full, meta) = self.lookup(name)?;
        if offset.checked_add(len).is_none_or(|end| end > meta.size) {
            return Err(StoreError::OutOfRange { name: full, offset, len, size: meta.size });
        }
        let mut f = fs::File::open(self.path_of(&full)).map_err(|_| StoreError::NotFound(full.clone()))?;
        f.seek(SeekFrom::Start(offset))?;
        let mut buf = vec![0u8; len as usize];
        f.read_exact(&mut buf)?;
        Ok(buf)
    }

    fn delete(&self, name: &str) -> StoreResult<FileObject> {
        let (dir, base) = split_path(name)?;
        let full = join(&dir, &base);
        let mut inner = self.lock();
        let meta = inner
            .index
            .get_mut(&dir)
            .and_then(|d| d.remove(&base))
            .ok_or_else(|| StoreError::NotFound(full.clone()))?;
        inner.used -= meta.size;
        fs::remove_file(self.path_of(&full))?;
        self.write_index(&inner, &dir)?;
        Ok(FileObject { name: full, size: meta.size, checksum: Some(meta.crc) })
    }

    fn list(&self, dir: &str) -> StoreResult<Vec<String>> {
        Ok(self.list_many(&[dir])?.remove(0))
    }

    fn list_many(&self, dirs: &[&str]) -> StoreResult<Vec<Vec<String>>> {
        let inner = self.lock();
        dirs.iter()
            .map(|d| {
                let d = normalize(d)?;
                if !inner.dirs.contains(&d) {
                    return Err(StoreError::NotFound(d));
                }
                Ok(inner.index.get(&d).map(|e| e.keys().cloned().collect()).unwrap_or_default())
            })
            .collect()
    }

    fn mkdir(&self, dir: &str) -> StoreResult<()> {
        let dir = normalize(dir)?;
        let mut inner = self.lock();
        self.ensure_dir(&mut inner, &dir)
    }

    fn atomic_move(&self, from_dir: &str, to_dir: &str, name: &str) -> StoreResult<FileObject> {
        let from = normalize(from_dir)?;
        let to = normalize(to_dir)?;
        let (_, base) = split_path(name)?;
        let mut inner = self.lock();
        if !inner.dirs.contains(&to) {
            return Err(StoreError::NotFound(to));
        }
        if inner.pending.contains(&join(&to, &base)) || inner.index.get(&to).is_some_and(|d| d.contains_key(&base)) {
            return Err(StoreError::Exists(join(&to, &base)));
        }
        let meta = inner
            .index
            .get(&from)
            .and_then(|d| d.get(&base))
            .copied()
            .ok_or_else(|| StoreError::NotFound(join(&from, &base)))?;
        fs::rename(self.path_of(&join(&from, &base)), self.path_of(&join(&to, &base)))?;
        inner.index.get_mut(&from).expect("source dir indexed").remove(&base);
        inner.index.entry(to.clone()).or_default().insert(base.clone(), meta);
        self.write_index(&inner, &from)?;
        self.write_index(&inner, &to)?;
        Ok(FileObject { name: join(&to, &base), size: meta.size, checksum: Some(meta.crc) })
    }

    fn objects(&self) -> Vec<FileObject> {
        let inner = self.lock();
        let mut all: Vec<FileObject> = inner
            .index
            .iter()
            .flat_map(|(dir, d)| {
                d.iter().map(move |(base, m)| FileObject { name: join(dir, base), size: m.size, checksum: Some(m.crc) })
            })
            .collect();
        all.sort_by(|a, b| a.name.cmp(&b.name));
        all
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_and_sidecar() {
        let tmp = tempfile::tempdir().unwrap();
        let s = DirStore::open(tmp.path(), Tier::Ifs, 1000).unwrap();
        s.put("staging/a", b"hello".as_slice().into()).unwrap();
        let on_disk = tmp.path().join("ifs/staging/a");
        assert_eq!(fs::read(&on_disk).unwrap(), b"hello");
        let index = fs::read_to_string(tmp.path().join("ifs/staging/.cio-index")).unwrap();
        assert_eq!(index, format!("a,5,{:08x}\n", crc32fast::hash(b"hello")));
    }

    #[test]
    fn get_detects_corruption() {
        let tmp = tempfile::tempdir().unwrap();
        let s = DirStore::open(tmp.path(), Tier::Lfs, 1000).unwrap();
        s.put("x", b"abc".as_slice().into()).unwrap();
        fs::write(tmp.path().join("lfs/x"), b"abd").unwrap();
        assert_eq!(s.get("x"), Err(StoreError::Corrupt("x".into())));
    }

    #[test]
    fn reopen_restores_accounting() {
        let tmp = tempfile::tempdir().unwrap();
        {
            let s = DirStore::open(tmp.path(), Tier::Gfs, 1000).unwrap();
            s.put("d/x", vec![1; 10].into()).unwrap();
            s.put("d/e/y", vec![2; 20].into()).unwrap();
            s.mkdir("empty").unwrap();
        }
        let s = DirStore::open(tmp.path(), Tier::Gfs, 1000).unwrap();
        assert_eq!(s.used(), 30);
        assert_eq!(s.list("d").unwrap(), vec!["x"]);
        assert!(s.list("empty").unwrap().is_empty());
        assert_eq!(s.get("d/e/y").unwrap(), Content::Bytes(vec![2; 20]));
    }

    #[test]
    fn move_and_errors() {
        let tmp = tempfile::tempdir().unwrap();
        let s = DirStore::open(tmp.path(), Tier::Ifs, 10_000).unwrap();
        let o = s.put("scratch/f", vec![9; 1000].into()).unwrap();
        s.mkdir("staging").unwrap();
        let m = s.atomic_move("scratch", "staging", "f").unwrap();
        assert_eq!(m.checksum, o.checksum);
        assert_eq!(s.get("staging/f").unwrap(), Content::Bytes(vec![9; 1000]));
        assert!(!tmp.path().join("ifs/scratch/f").exists());
        s.put("scratch/f", vec![1].into()).unwrap();
        assert!(matches!(s.atomic_move("scratch", "staging", "f"), Err(StoreError::Exists(_))));
        assert_eq!(s.get("scratch/f").unwrap(), Content::Bytes(vec![1]));
        assert!(matches!(s.put("big", vec![0; 10_000].into()), Err(StoreError::Full { .. })));
    }

    #[test]
    fn sized_content_materializes_zeros() {
        let tmp = tempfile::tempdir().unwrap();
        let s = DirStore::open(tmp.path(), Tier::Lfs, 100).unwrap();
        let o = s.put_blocked("z", Content::Sized(7), 3).unwrap();
        assert_eq!(o.checksum, Some(crc32fast::hash(&[0; 7])));
        assert_eq!(s.read_range("z", 2, 5).unwrap(), vec![0; 5]);
    }
}
