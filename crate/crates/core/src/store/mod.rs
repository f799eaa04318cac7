//! Tiered named-object stores.
//!
//! Every backend implements [`Store`]: a hierarchical namespace of whole-file
//! objects with exact capacity accounting and an atomic move between
//! directories. Names are `/`-separated relative paths; the directory of
//! `a/b/c` is `a/b` and the root directory is the empty string.

mod cluster_stores;
mod directory;
mod memory;
mod striped;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cluster_stores::ClusterStores;
pub use directory::DirStore;
pub use memory::MemStore;
pub use striped::{stripe_create, ChunkPlacement, StripeMap, StripedStore, DEFAULT_CHUNK_SIZE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    Gfs,
    Ifs,
    Lfs,
}

impl Tier {
    pub fn as_str(self) -> &'static str {
        match self {
            Tier::Gfs => "gfs",
            Tier::Ifs => "ifs",
            Tier::Lfs => "lfs",
        }
    }
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Object payload. Simulation carries only sizes.
#[derive(Clone, PartialEq, Eq)]
pub enum Content {
    Bytes(Vec<u8>),
    Sized(u64),
}

impl Content {
    pub fn len(&self) -> u64 {
        match self {
            Content::Bytes(b) => b.len() as u64,
            Content::Sized(n) => *n,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn bytes(&self) -> Option<&[u8]> {
        match self {
            Content::Bytes(b) => Some(b),
            Content::Sized(_) => None,
        }
    }

    pub fn into_bytes(self) -> Option<Vec<u8>> {
        match self {
            Content::Bytes(b) => Some(b),
            Content::Sized(_) => None,
        }
    }

    pub fn checksum(&self) -> Option<u32> {
        self.bytes().map(crc32fast::hash)
    }
}

impl fmt::Debug for Content {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Content::Bytes(b) => write!(f, "Bytes({} bytes)", b.len()),
            Content::Sized(n) => write!(f, "Sized({n})"),
        }
    }
}

impl From<Vec<u8>> for Content {
    fn from(b: Vec<u8>) -> Self {
        Content::Bytes(b)
    }
}

impl From<&[u8]> for Content {
    fn from(b: &[u8]) -> Self {
        Content::Bytes(b.to_vec())
    }
}

/// Metadata of a stored object. `checksum` is absent for size-only content.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FileObject {
    pub name: String,
    pub size: u64,
    pub checksum: Option<u32>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StoreError {
    #[error("store full: {needed} bytes needed, {free} free")]
    Full { needed: u64, free: u64 },
    #[error("{0} already exists")]
    Exists(String),
    #[error("{0} not found")]
    NotFound(String),
    #[error("checksum mismatch for {0}")]
    Corrupt(String),
    #[error("invalid object name {0:?}")]
    InvalidName(String),
    #[error("{0} holds sizes only")]
    NoContent(String),
    #[error("range {offset}+{len} outside {name} ({size} bytes)")]
    OutOfRange { name: String, offset: u64, len: u64, size: u64 },
    #[error("stripe needs at least one server")]
    NoServers,
    #[error("chunk size must be positive")]
    ZeroChunk,
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for StoreError {
    fn from(e: std::io::Error) -> Self {
        StoreError::Io(e.to_string())
    }
}

pub type StoreResult<T> = Result<T, StoreError>;

/// Store contract shared by all backends. Implementations are internally
/// synchronized so one store can serve many workers.
pub trait Store: Send + Sync {
    fn tier(&self) -> Tier;
    fn capacity(&self) -> u64;
    fn used(&self) -> u64;

    fn free_space(&self) -> u64 {
        self.capacity().saturating_sub(self.used())
    }

    /// Creates the object. Missing parent directories are created.
    fn put(&self, name: &str, content: Content) -> StoreResult<FileObject>;
    fn get(&self, name: &str) -> StoreResult<Content>;
    fn stat(&self, name: &str) -> StoreResult<FileObject>;
    fn read_range(&self, name: &str, offset: u64, len: u64) -> StoreResult<Vec<u8>>;
    fn delete(&self, name: &str) -> StoreResult<FileObject>;
    /// Sorted base names of the objects directly inside `dir`.
    fn list(&self, dir: &str) -> StoreResult<Vec<String>>;
    /// Lists several directories as one observation.
    fn list_many(&self, dirs: &[&str]) -> StoreResult<Vec<Vec<String>>>;
    fn mkdir(&self, dir: &str) -> StoreResult<()>;
    fn exists(&self, name: &str) -> bool {
        self.stat(name).is_ok()
    }
    /// Moves `from_dir/name` to `to_dir/name`; the object is never visible
    /// in both places or in neither.
    fn atomic_move(&self, from_dir: &str, to_dir: &str, name: &str) -> StoreResult<FileObject>;
    /// Every object in the store, sorted by full name.
    fn objects(&self) -> Vec<FileObject>;

    /// Writes in `block_size` pieces; the object becomes visible only once
    /// complete. Backends without a cheaper path just call `put`.
    fn put_blocked(&self, name: &str, content: Content, block_size: u64) -> StoreResult<FileObject> {
        let _ = block_size;
        self.put(name, content)
    }
}

/// Joins a directory and a base name.
pub fn join(dir: &str, name: &str) -> String {
    let dir = dir.trim_matches('/');
    if dir.is_empty() {
        name.to_string()
    } else {
        format!("{dir}/{name}")
    }
}

/// Encodes a name as a single path component (`%` and `/` escaped).
pub fn flat_name(name: &str) -> String {
    name.replace('%', "%25").replace('/', "%2F")
}

pub fn unflat_name(flat: &str) -> String {
    let mut out = String::with_capacity(flat.len());
    let mut rest = flat;
    while let Some(i) = rest.find('%') {
        out.push_str(&rest[..i]);
        let tail = &rest[i..];
        if let Some(r) = tail.strip_prefix("%2F") {
            out.push('/');
            rest = r;
        } else if let Some(r) = tail.strip_prefix("%25") {
            out.push('%');
            rest = r;
        } else {
            out.push('%');
            rest = &tail[1..];
        }
    }
    out.push_str(rest);
    out
}

/// Normalizes `name` and splits it into (directory, base name).
pub fn split_path(name: &str) -> StoreResult<(String, String)> {
    let norm = normalize(name)?;
    if norm.is_empty() {
        return Err(StoreError::InvalidName(name.to_string()));
    }
    Ok(match norm.rfind('/') {
        Some(i) => (norm[..i].to_string(), norm[i + 1..].to_string()),
        None => (String::new(), norm),
    })
}

/// Strips outer slashes and rejects empty, `.` and `..` components.
pub fn normalize(path: &str) -> StoreResult<String> {
    let trimmed = path.trim_matches('/');
    if trimmed.is_empty() {
        return Ok(String::new());
    }
    for part in trimmed.split('/') {
        if part.is_empty() || part == "." || part == ".." || part.starts_with(RESERVED_PREFIX) {
            return Err(StoreError::InvalidName(path.to_string()));
        }
    }
    Ok(trimmed.to_string())
}

/// Names starting with this are reserved for backend bookkeeping.
pub(crate) const RESERVED_PREFIX: &str = ".cio-";
