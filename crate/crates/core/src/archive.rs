//! Appendable archive with a trailing random-access directory.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "CIOARCH1"                      8-byte magic
//! member bytes ...                verbatim, back to back
//! directory entries ...           u32 path_len, path, u64 offset, u64 size, u32 crc32
//! footer                          u64 directory_offset, u32 entry_count, u32 directory_crc32
//! ```
//!
//! The footer is always the last 16 bytes, so an archive is enumerated by
//! reading the footer and then the directory extent it points to. Appending
//! overwrites the old directory with new members and writes a fresh
//! directory and footer after them.

use std::collections::HashSet;
use std::fs::File;
use std::io::{self, Read, Seek, SeekFrom, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use thiserror::Error;

use crate::store::{Store, StoreError};

pub const MAGIC: &[u8; 8] = b"CIOARCH1";
pub const HEADER_LEN: u64 = 8;
pub const FOOTER_LEN: u64 = 16;
pub const MAX_PATH_LEN: usize = u16::MAX as usize;
/// Fixed bytes per directory entry besides the path itself.
pub const ENTRY_OVERHEAD: u64 = 4 + 8 + 8 + 4;

#[derive(Debug, Error)]
pub enum ArchiveError {
    #[error("not an archive")]
    NotAnArchive,
    #[error("corrupt footer")]
    CorruptFooter,
    #[error("corrupt directory")]
    CorruptDirectory,
    #[error("duplicate member path {0}")]
    DuplicatePath(String),
    #[error("invalid member path {0:?}")]
    InvalidPath(String),
    #[error("archive writer already finalized")]
    Finalized,
    #[error("member {0} not found")]
    NotFound(String),
    #[error("no valid directory found while scanning")]
    NothingToRecover,
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Store(#[from] StoreError),
}

pub type ArchiveResult<T> = Result<T, ArchiveError>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DirectoryEntry {
    pub path: String,
    pub offset: u64,
    pub size: u64,
    pub crc32: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Footer {
    pub directory_offset: u64,
    pub entry_count: u32,
    pub directory_crc32: u32,
}

impl Footer {
    pub fn encode(&self) -> [u8; 16] {
        let mut b = [0u8; 16];
        b[..8].copy_from_slice(&self.directory_offset.to_le_bytes());
        b[8..12].copy_from_slice(&self.entry_count.to_le_bytes());
        b[12..].copy_from_slice(&self.directory_crc32.to_le_bytes());
        b
    }

    pub fn decode(b: &[u8]) -> Footer {
        Footer {
            directory_offset: u64::from_le_bytes(b[..8].try_into().unwrap()),
            entry_count: u32::from_le_bytes(b[8..12].try_into().unwrap()),
            directory_crc32: u32::from_le_bytes(b[12..16].try_into().unwrap()),
        }
    }
}

pub fn validate_path(path: &str) -> ArchiveResult<()> {
    if path.is_empty() || path.len() > MAX_PATH_LEN || path.starts_with('/') {
        return Err(ArchiveError::InvalidPath(path.to_string()));
    }
    Ok(())
}

pub fn encode_directory(entries: &[DirectoryEntry]) -> Vec<u8> {
    let mut out = Vec::with_capacity(entries.iter().map(|e| e.path.len() + ENTRY_OVERHEAD as usize).sum());
    for e in entries {
        out.extend_from_slice(&(e.path.len() as u32).to_le_bytes());
        out.extend_from_slice(e.path.as_bytes());
        out.extend_from_slice(&e.offset.to_le_bytes());
        out.extend_from_slice(&e.size.to_le_bytes());
        out.extend_from_slice(&e.crc32.to_le_bytes());
    }
    out
}

/// Parses and checks a directory against its footer.
pub fn decode_directory(bytes: &[u8], footer: &Footer) -> ArchiveResult<Vec<DirectoryEntry>> {
    if crc32fast::hash(bytes) != footer.directory_crc32 {
        return Err(ArchiveError::CorruptDirectory);
    }
    let mut entries = Vec::with_capacity(footer.entry_count.min(1 << 20) as usize);
    let mut seen = HashSet::new();
    let mut pos = 0usize;
    let mut extent_end = HEADER_LEN;
    let take = |pos: &mut usize, n: usize| -> ArchiveResult<&[u8]> {
        let s = bytes.get(*pos..*pos + n).ok_or(ArchiveError::CorruptDirectory)?;
        *pos += n;
        Ok(s)
    };
    for _ in 0..footer.entry_count {
        let len = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        if len > MAX_PATH_LEN {
            return Err(ArchiveError::CorruptDirectory);
        }
        let path = std::str::from_utf8(take(&mut pos, len)?).map_err(|_| ArchiveError::CorruptDirectory)?;
        let offset = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap());
        let size = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap());
        let crc32 = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
        let end = offset.checked_add(size).ok_or(ArchiveError::CorruptDirectory)?;
        if offset < extent_end || end > footer.directory_offset || !seen.insert(path.to_string()) {
            return Err(ArchiveError::CorruptDirectory);
        }
        extent_end = end;
        entries.push(DirectoryEntry { path: path.to_string(), offset, size, crc32 });
    }
    if pos != bytes.len() {
        return Err(ArchiveError::CorruptDirectory);
    }
    Ok(entries)
}

/// Total archive length for members with the given (path length, size).
pub fn archive_len(members: impl IntoIterator<Item = (usize, u64)>) -> u64 {
    HEADER_LEN + members.into_iter().map(|(p, s)| s + ENTRY_OVERHEAD + p as u64).sum::<u64>() + FOOTER_LEN
}

/// Writes an archive into any seekable sink.
#[derive(Debug)]
pub struct ArchiveWriter<W: Write + Seek> {
    sink: W,
    pos: u64,
    entries: Vec<DirectoryEntry>,
    paths: HashSet<String>,
    finalized: bool,
}

/// Starts a new archive by writing the magic at the sink's start.
pub fn create_archive<W: Write + Seek>(mut sink: W) -> ArchiveResult<ArchiveWriter<W>> {
    sink.seek(SeekFrom::Start(0))?;
    sink.write_all(MAGIC)?;
    Ok(ArchiveWriter { sink, pos: HEADER_LEN, entries: Vec::new(), paths: HashSet::new(), finalized: false })
}

/// Reopens a finalized archive for appending. New members overwrite the old
/// directory; the bytes before it are left untouched.
pub fn append_to_existing<F: Read + Write + Seek>(mut file: F) -> ArchiveResult<ArchiveWriter<F>> {
    let len = file.seek(SeekFrom::End(0))?;
    let (footer, entries) = {
        let mut read = |off: u64, n: u64| -> io::Result<Vec<u8>> {
            file.seek(SeekFrom::Start(off))?;
            let mut buf = vec![0u8; n as usize];
            file.read_exact(&mut buf)?;
            Ok(buf)
        };
        load_directory(len, &mut read)?
    };
    file.seek(SeekFrom::Start(footer.directory_offset))?;
    let paths = entries.iter().map(|e| e.path.clone()).collect();
    Ok(ArchiveWriter { sink: file, pos: footer.directory_offset, entries, paths, finalized: false })
}

impl<W: Write + Seek> ArchiveWriter<W> {
    pub fn append_member(&mut self, path: &str, bytes: &[u8]) -> ArchiveResult<DirectoryEntry> {
        self.check_new(path)?;
        self.sink.write_all(bytes)?;
        Ok(self.record(path, bytes.len() as u64, crc32fast::hash(bytes)))
    }

    /// Streams a member from `reader`.
    pub fn append_reader(&mut self, path: &str, reader: &mut impl Read) -> ArchiveResult<DirectoryEntry> {
        self.check_new(path)?;
        let mut hasher = crc32fast::Hasher::new();
        let mut buf = vec![0u8; 1 << 16];
        let mut size = 0u64;
        loop {
            let n = reader.read(&mut buf)?;
            if n == 0 {
                break;
            }
            self.sink.write_all(&buf[..n])?;
            hasher.update(&buf[..n]);
            size += n as u64;
        }
        Ok(self.record(path, size, hasher.finalize()))
    }

    fn check_new(&self, path: &str) -> ArchiveResult<()> {
        if self.finalized {
            return Err(ArchiveError::Finalized);
        }
        validate_path(path)?;
        if self.paths.contains(path) {
            return Err(ArchiveError::DuplicatePath(path.to_string()));
        }
        Ok(())
    }

    fn record(&mut self, path: &str, size: u64, crc32: u32) -> DirectoryEntry {
        let entry = DirectoryEntry { path: path.to_string(), offset: self.pos, size, crc32 };
        self.pos += size;
        self.paths.insert(path.to_string());
        self.entries.push(entry.clone());
        entry
    }

    pub fn entries(&self) -> &[DirectoryEntry] {
        &self.entries
    }

    /// Writes the directory and footer. May be called once.
    pub fn finalize(&mut self) -> ArchiveResult<Footer> {
        if self.finalized {
            return Err(ArchiveError::Finalized);
        }
        let dir = encode_directory(&self.entries);
        let footer = Footer {
            directory_offset: self.pos,
            entry_count: self.entries.len() as u32,
            directory_crc32: crc32fast::hash(&dir),
        };
        self.sink.write_all(&dir)?;
        self.sink.write_all(&footer.encode())?;
        self.sink.flush()?;
        self.finalized = true;
        Ok(footer)
    }

    pub fn into_inner(self) -> W {
        self.sink
    }
}

/// Random-access byte source.
pub trait ReadAt {
    fn size(&self) -> io::Result<u64>;
    fn read_at(&self, offset: u64, len: u64) -> io::Result<Vec<u8>>;
}

impl<T: ReadAt + ?Sized> ReadAt for &T {
    fn size(&self) -> io::Result<u64> {
        (**self).size()
    }

    fn read_at(&self, offset: u64, len: u64) -> io::Result<Vec<u8>> {
        (**self).read_at(offset, len)
    }
}

impl ReadAt for [u8] {
    fn size(&self) -> io::Result<u64> {
        Ok(self.len() as u64)
    }

    fn read_at(&self, offset: u64, len: u64) -> io::Result<Vec<u8>> {
        let end = offset.checked_add(len).filter(|&e| e <= self.len() as u64);
        match end {
            Some(end) => Ok(self[offset as usize..end as usize].to_vec()),
            None => Err(io::Error::new(io::ErrorKind::UnexpectedEof, "read past end")),
        }
    }
}

impl ReadAt for Vec<u8> {
    fn size(&self) -> io::Result<u64> {
        self.as_slice().size()
    }

    fn read_at(&self, offset: u64, len: u64) -> io::Result<Vec<u8>> {
        self.as_slice().read_at(offset, len)
    }
}

impl ReadAt for File {
    fn size(&self) -> io::Result<u64> {
        Ok(self.metadata()?.len())
    }

    #[cfg(unix)]
    fn read_at(&self, offset: u64, len: u64) -> io::Result<Vec<u8>> {
        use std::os::unix::fs::FileExt;
        let mut buf = vec![0u8; len as usize];
        self.read_exact_at(&mut buf, offset)?;
        Ok(buf)
    }

    #[cfg(not(unix))]
    fn read_at(&self, offset: u64, len: u64) -> io::Result<Vec<u8>> {
        let mut f = self.try_clone()?;
        f.seek(SeekFrom::Start(offset))?;
        let mut buf = vec![0u8; len as usize];
        f.read_exact(&mut buf)?;
        Ok(buf)
    }
}

/// An archive stored as an object in a [`Store`].
pub struct StoreSource<'a> {
    pub store: &'a dyn Store,
    pub name: String,
}

impl ReadAt for StoreSource<'_> {
    fn size(&self) -> io::Result<u64> {
        self.store.stat(&self.name).map(|o| o.size).map_err(io::Error::other)
    }

    fn read_at(&self, offset: u64, len: u64) -> io::Result<Vec<u8>> {
        self.store.read_range(&self.name, offset, len).map_err(io::Error::other)
    }
}

/// Wraps a source and counts ranged reads.
#[derive(Debug)]
pub struct CountingSource<S> {
    pub inner: S,
    reads: AtomicU64,
}

impl<S> CountingSource<S> {
    pub fn new(inner: S) -> Self {
        CountingSource { inner, reads: AtomicU64::new(0) }
    }

    pub fn reads(&self) -> u64 {
        self.reads.load(Ordering::Relaxed)
    }
}

impl<S: ReadAt> ReadAt for CountingSource<S> {
    fn size(&self) -> io::Result<u64> {
        self.inner.size()
    }

    fn read_at(&self, offset: u64, len: u64) -> io::Result<Vec<u8>> {
        self.reads.fetch_add(1, Ordering::Relaxed);
        self.inner.read_at(offset, len)
    }
}

fn load_directory(
    len: u64,
    read: &mut dyn FnMut(u64, u64) -> io::Result<Vec<u8>>,
) -> ArchiveResult<(Footer, Vec<DirectoryEntry>)> {
    let result = (|| {
        if len < HEADER_LEN + FOOTER_LEN {
            return Err(ArchiveError::CorruptFooter);
        }
        let footer = Footer::decode(&read(len - FOOTER_LEN, FOOTER_LEN)?);
        let dir_end = len - FOOTER_LEN;
        if footer.directory_offset < HEADER_LEN || footer.directory_offset > dir_end {
            return Err(ArchiveError::CorruptFooter);
        }
        let dir = read(footer.directory_offset, dir_end - footer.directory_offset)?;
        let entries = decode_directory(&dir, &footer)?;
        Ok((footer, entries))
    })();
    match result {
        Ok(ok) => Ok(ok),
        Err(ArchiveError::Io(e)) => Err(ArchiveError::Io(e)),
        Err(e) => {
            // Tell a damaged archive apart from something that never was one.
            let head = if len >= HEADER_LEN { read(0, HEADER_LEN).ok() } else { None };
            match head {
                Some(h) if h == MAGIC => Err(e),
                _ => Err(ArchiveError::NotAnArchive),
            }
        }
    }
}

/// Per-member verification outcome.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MemberStatus {
    pub path: String,
    pub ok: bool,
}

/// Read side of an archive. Holds the directory; member bytes are fetched
/// on demand with one ranged read each.
#[derive(Debug)]
pub struct ArchiveReader<S: ReadAt> {
    source: S,
    footer: Footer,
    entries: Vec<DirectoryEntry>,
}

/// Opens an archive by reading its footer and then its directory.
pub fn open_archive<S: ReadAt>(source: S) -> ArchiveResult<ArchiveReader<S>> {
    let len = source.size()?;
    let (footer, entries) = load_directory(len, &mut |o, n| source.read_at(o, n))?;
    Ok(ArchiveReader { source, footer, entries })
}

impl<S: ReadAt> ArchiveReader<S> {
    pub fn footer(&self) -> Footer {
        self.footer
    }

    pub fn entries(&self) -> &[DirectoryEntry] {
        &self.entries
    }

    pub fn list_members(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.path.clone()).collect()
    }

    pub fn entry(&self, path: &str) -> ArchiveResult<&DirectoryEntry> {
        self.entries
            .iter()
            .find(|e| e.path == path)
            .ok_or_else(|| ArchiveError::NotFound(path.to_string()))
    }

    pub fn extract_member(&self, path: &str) -> ArchiveResult<Vec<u8>> {
        let e = self.entry(path)?;
        Ok(self.source.read_at(e.offset, e.size)?)
    }

    /// Recomputes every member checksum.
    pub fn verify(&self) -> ArchiveResult<Vec<MemberStatus>> {
        self.entries
            .iter()
            .map(|e| {
                let bytes = self.source.read_at(e.offset, e.size)?;
                Ok(MemberStatus { path: e.path.clone(), ok: crc32fast::hash(&bytes) == e.crc32 })
            })
            .collect()
    }

    pub fn source(&self) -> &S {
        &self.source
    }

    pub fn into_source(self) -> S {
        self.source
    }
}

/// What a recovery scan found.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Recovered {
    /// Length of the longest prefix that is a valid archive.
    pub valid_len: u64,
    pub footer: Footer,
    pub entries: Vec<DirectoryEntry>,
}

/// Scans backwards for the last position where a valid footer and directory
/// end. Truncating the file to `valid_len` restores a readable archive.
pub fn recover(bytes: &[u8]) -> ArchiveResult<Recovered> {
    if bytes.len() < (HEADER_LEN + FOOTER_LEN) as usize || &bytes[..8] != MAGIC {
        return Err(ArchiveError::NotAnArchive);
    }
    let min_end = (HEADER_LEN + FOOTER_LEN) as usize;
    for end in (min_end..=bytes.len()).rev() {
        let footer = Footer::decode(&bytes[end - 16..end]);
        let dir_end = (end - 16) as u64;
        if footer.directory_offset < HEADER_LEN || footer.directory_offset > dir_end {
            continue;
        }
        let dir = &bytes[footer.directory_offset as usize..dir_end as usize];
        if (dir.len() as u64) < footer.entry_count as u64 * ENTRY_OVERHEAD {
            continue;
        }
        if let Ok(entries) = decode_directory(dir, &footer) {
            return Ok(Recovered { valid_len: end as u64, footer, entries });
        }
    }
    Err(ArchiveError::NothingToRecover)
}

/// Packs the files under `dir` (recursively, sorted by relative path) into
/// a new archive at `out`.
pub fn pack_dir(dir: &Path, out: &Path) -> ArchiveResult<Footer> {
    let mut files = Vec::new();
    collect_files(dir, dir, &mut files)?;
    files.sort();
    let mut w = create_archive(File::create(out)?)?;
    for rel in files {
        let mut f = File::open(dir.join(&rel))?;
        w.append_reader(&rel, &mut f)?;
    }
    w.finalize()
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<String>) -> io::Result<()> {
    for entry in std::fs::read_dir(dir)? {
        let entry = entry?;
        let path = entry.path();
        if entry.file_type()?.is_dir() {
            collect_files(root, &path, out)?;
        } else {
            let rel = path.strip_prefix(root).expect("walked under root");
            let rel: Vec<String> = rel.components().map(|c| c.as_os_str().to_string_lossy().into_owned()).collect();
            out.push(rel.join("/"));
        }
    }
    Ok(())
}

/// Builds an archive in memory.
pub fn archive_to_vec<'a>(members: impl IntoIterator<Item = (&'a str, &'a [u8])>) -> ArchiveResult<Vec<u8>> {
    let mut w = create_archive(io::Cursor::new(Vec::new()))?;
    for (path, bytes) in members {
        w.append_member(path, bytes)?;
    }
    w.finalize()?;
    Ok(w.into_inner().into_inner())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn fixture() -> Vec<u8> {
        archive_to_vec([("a.txt", b"hello".as_slice()), ("dir/b", b"abc"), ("empty", b"")]).unwrap()
    }

    #[test]
    fn empty_archive_layout() {
        let bytes = archive_to_vec([]).unwrap();
        assert_eq!(bytes.len(), 24);
        assert_eq!(&bytes[..8], MAGIC);
        let f = Footer::decode(&bytes[8..]);
        assert_eq!(f, Footer { directory_offset: 8, entry_count: 0, directory_crc32: 0 });
    }

    #[test]
    fn member_offsets() {
        let mut w = create_archive(Cursor::new(Vec::new())).unwrap();
        assert_eq!(w.append_member("a", b"12345").unwrap().offset, 8);
        let e = w.append_member("b", b"xyz").unwrap();
        assert_eq!((e.offset, e.size), (13, 3));
        assert_eq!(w.append_member("c", b"").unwrap().crc32, 0);
    }

    #[test]
    fn byte_length_formula() {
        let bytes = fixture();
        let expected = 8 + (5 + 3) + (4 + 5 + 20) + (4 + 5 + 20) + (4 + 5 + 20) + 16;
        assert_eq!(bytes.len(), expected);
        assert_eq!(archive_len([(5, 5), (5, 3), (5, 0)]), expected as u64);
    }

    #[test]
    fn finalize_twice_and_write_after() {
        let mut w = create_archive(Cursor::new(Vec::new())).unwrap();
        w.finalize().unwrap();
        assert!(matches!(w.finalize(), Err(ArchiveError::Finalized)));
        assert!(matches!(w.append_member("x", b""), Err(ArchiveError::Finalized)));
    }

    #[test]
    fn duplicate_and_invalid_paths() {
        let mut w = create_archive(Cursor::new(Vec::new())).unwrap();
        w.append_member("x", b"1").unwrap();
        assert!(matches!(w.append_member("x", b"2"), Err(ArchiveError::DuplicatePath(_))));
        assert!(matches!(w.append_member("/abs", b""), Err(ArchiveError::InvalidPath(_))));
        assert!(matches!(w.append_member("", b""), Err(ArchiveError::InvalidPath(_))));
    }

    #[test]
    fn open_uses_two_reads_and_extract_one() {
        let src = CountingSource::new(fixture());
        let r = open_archive(&src).unwrap();
        assert_eq!(src.reads(), 2);
        assert_eq!(r.list_members(), vec!["a.txt", "dir/b", "empty"]);
        assert_eq!(r.extract_member("dir/b").unwrap(), b"abc");
        assert_eq!(src.reads(), 3);
        assert!(matches!(r.extract_member("nope"), Err(ArchiveError::NotFound(_))));
    }

    #[test]
    fn wrong_magic_is_not_an_archive() {
        let mut bytes = fixture();
        bytes[0] = b'X';
        let n = bytes.len();
        bytes[n - 1] ^= 0xFF;
        assert!(matches!(open_archive(bytes), Err(ArchiveError::NotAnArchive)));
        assert!(matches!(open_archive(b"hello world, not an archive".to_vec()), Err(ArchiveError::NotAnArchive)));
    }

    #[test]
    fn corruption_flags_one_member() {
        let mut bytes = fixture();
        bytes[9] ^= 1; // inside "hello"
        let r = open_archive(bytes).unwrap();
        let status = r.verify().unwrap();
        let bad: Vec<&str> = status.iter().filter(|s| !s.ok).map(|s| s.path.as_str()).collect();
        assert_eq!(bad, vec!["a.txt"]);
    }

    #[test]
    fn append_preserves_prefix() {
        let original = fixture();
        let old_dir = Footer::decode(&original[original.len() - 16..]).directory_offset as usize;
        let mut w = append_to_existing(Cursor::new(original.clone())).unwrap();
        w.append_member("new", b"more bytes").unwrap();
        w.finalize().unwrap();
        let appended = w.into_inner().into_inner();
        assert_eq!(&appended[..old_dir], &original[..old_dir]);
        let r = open_archive(appended).unwrap();
        assert_eq!(r.list_members().len(), 4);
        assert_eq!(r.extract_member("new").unwrap(), b"more bytes");
        assert_eq!(r.extract_member("a.txt").unwrap(), b"hello");
    }

    #[test]
    fn append_nothing_is_identity() {
        let original = fixture();
        let mut w = append_to_existing(Cursor::new(original.clone())).unwrap();
        w.finalize().unwrap();
        assert_eq!(w.into_inner().into_inner(), original);
    }

    #[test]
    fn append_rejects_existing_path() {
        let mut w = append_to_existing(Cursor::new(fixture())).unwrap();
        assert!(matches!(w.append_member("a.txt", b""), Err(ArchiveError::DuplicatePath(_))));
    }

    #[test]
    fn truncation_fails_cleanly() {
        let bytes = fixture();
        for cut in 0..bytes.len() {
            let res = open_archive(bytes[..cut].to_vec());
            assert!(res.is_err(), "cut at {cut} opened");
        }
    }

    #[test]
    fn recover_finds_last_directory() {
        let good = fixture();
        let mut crashed = good.clone();
        crashed.extend_from_slice(b"partial member bytes of an interrupted write");
        assert!(open_archive(crashed.clone()).is_err());
        let rec = recover(&crashed).unwrap();
        assert_eq!(rec.valid_len as usize, good.len());
        assert_eq!(rec.entries.len(), 3);
        assert!(matches!(recover(&good[..good.len() - 1]), Err(ArchiveError::NothingToRecover)));
    }
}
