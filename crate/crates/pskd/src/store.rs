//! Teacher predictions from the previous epoch, via either of two
//! interchangeable strategies: keep a frozen copy of the model in memory and
//! recompute, or store every prediction on disk and read it back.
//!
//! With augmentation absent (as here), a full training run must produce
//! bit-identical results under either strategy; the trainer's tests assert
//! that. A missing row in a disk cache is therefore a fatal error, never a
//! silent hard-target fallback.
//!
//! # Cache file format (little-endian)
//!
//! ```text
//! offset  size  field
//!      0     4  magic "PSKD"
//!      4     4  format version, u32 = 1
//!      8     4  producing epoch, u32
//!     12     8  n_examples, u64
//!     20     4  n_classes, u32
//!     24     4  reserved, u32 = 0
//!     28     -  n_examples records: example_id u64, then n_classes f64
//!    end-8   8  FNV-1a 64-bit checksum over all preceding bytes
//! ```
//!
//! Records are sorted by example id, so identical caches serialize to
//! identical bytes. An empty cache is a valid 36-byte file (28-byte header
//! plus the checksum).

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::nn::{forward, softmax, MlpParams, RealMatrix};
use crate::targets::ProbVector;
use crate::util::fnv1a64;

const MAGIC: [u8; 4] = *b"PSKD";
const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 28;
const CHECKSUM_LEN: usize = 8;

/// Per-example teacher probabilities produced at one epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionCache {
    epoch: u32,
    n_classes: usize,
    expected: BTreeSet<u64>,
    rows: BTreeMap<u64, ProbVector>,
}

impl PredictionCache {
    /// Empty cache expecting exactly the given id set.
    pub fn new(epoch: u32, ids: &[u64], n_classes: usize) -> Result<Self> {
        if n_classes < 2 {
            return Err(Error::Input("cache needs at least 2 classes".into()));
        }
        let expected: BTreeSet<u64> = ids.iter().copied().collect();
        if expected.len() != ids.len() {
            return Err(Error::Input("duplicate example ids".into()));
        }
        Ok(Self {
            epoch,
            n_classes,
            expected,
            rows: BTreeMap::new(),
        })
    }

    pub fn epoch(&self) -> u32 {
        self.epoch
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn n_examples(&self) -> usize {
        self.expected.len()
    }

    /// Store one prediction. Overwrites are allowed within the epoch; the
    /// last write wins.
    pub fn record_prediction(&mut self, example_id: u64, probs: ProbVector) -> Result<()> {
        if !self.expected.contains(&example_id) {
            return Err(Error::Input(format!(
                "example id {example_id} is not part of this dataset"
            )));
        }
        if probs.len() != self.n_classes {
            return Err(Error::Shape(format!(
                "prediction has {} classes, cache stores {}",
                probs.len(),
                self.n_classes
            )));
        }
        self.rows.insert(example_id, probs);
        Ok(())
    }

    /// True when every expected id has a stored row.
    pub fn is_complete(&self) -> bool {
        self.rows.len() == self.expected.len()
    }

    pub fn fetch(&self, example_id: u64) -> Result<&ProbVector> {
        self.rows.get(&example_id).ok_or(Error::CacheMiss {
            example_id,
            epoch: self.epoch,
        })
    }

    /// Write the cache to disk. Requires completeness so a reader can rely
    /// on every id being present.
    pub fn persist(&self, path: &Path) -> Result<()> {
        if !self.is_complete() {
            return Err(Error::Input(format!(
                "cache incomplete: {} of {} rows recorded",
                self.rows.len(),
                self.expected.len()
            )));
        }
        let mut bytes =
            Vec::with_capacity(HEADER_LEN + self.rows.len() * (8 + 8 * self.n_classes) + CHECKSUM_LEN);
        bytes.extend_from_slice(&MAGIC);
        bytes.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        bytes.extend_from_slice(&self.epoch.to_le_bytes());
        bytes.extend_from_slice(&(self.rows.len() as u64).to_le_bytes());
        bytes.extend_from_slice(&(self.n_classes as u32).to_le_bytes());
        bytes.extend_from_slice(&0u32.to_le_bytes());
        for (id, probs) in &self.rows {
            bytes.extend_from_slice(&id.to_le_bytes());
            for v in probs.entries() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        let checksum = fnv1a64(&bytes);
        bytes.extend_from_slice(&checksum.to_le_bytes());
        fs::write(path, bytes)?;
        Ok(())
    }

    /// Read a cache back. Any structural problem is a format error carrying
    /// the byte offset at which it was detected.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        if bytes.len() < HEADER_LEN + CHECKSUM_LEN {
            return Err(Error::Format {
                offset: bytes.len() as u64,
                message: format!(
                    "file is {} bytes, shorter than the minimal {} byte header",
                    bytes.len(),
                    HEADER_LEN + CHECKSUM_LEN
                ),
            });
        }
        if bytes[0..4] != MAGIC {
            return Err(Error::Format {
                offset: 0,
                message: format!("bad magic {:02x?}, expected \"PSKD\"", &bytes[0..4]),
            });
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::Format {
                offset: 4,
                message: format!("unsupported format version {version}"),
            });
        }
        let epoch = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        let n_examples = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let n_classes = u32::from_le_bytes(bytes[20..24].try_into().unwrap()) as usize;
        let reserved = u32::from_le_bytes(bytes[24..28].try_into().unwrap());
        if reserved != 0 {
            return Err(Error::Format {
                offset: 24,
                message: format!("reserved field must be 0, got {reserved}"),
            });
        }
        if n_classes < 2 {
            return Err(Error::Format {
                offset: 20,
                message: format!("n_classes must be >= 2, got {n_classes}"),
            });
        }
        let record_len = 8 + 8 * n_classes;
        let expected_len = HEADER_LEN + n_examples * record_len + CHECKSUM_LEN;
        if bytes.len() != expected_len {
            return Err(Error::Format {
                offset: bytes.len().min(expected_len) as u64,
                message: format!(
                    "file is {} bytes, expected {expected_len} for {n_examples} records of {n_classes} classes",
                    bytes.len()
                ),
            });
        }
        let body_end = bytes.len() - CHECKSUM_LEN;
        let stored = u64::from_le_bytes(bytes[body_end..].try_into().unwrap());
        let computed = fnv1a64(&bytes[..body_end]);
        if stored != computed {
            return Err(Error::Format {
                offset: body_end as u64,
                message: format!("checksum mismatch: stored {stored:#018x}, computed {computed:#018x}"),
            });
        }

        let mut rows = BTreeMap::new();
        let mut offset = HEADER_LEN;
        for _ in 0..n_examples {
            let id = u64::from_le_bytes(bytes[offset..offset + 8].try_into().unwrap());
            let mut entries = Vec::with_capacity(n_classes);
            for c in 0..n_classes {
                let at = offset + 8 + 8 * c;
                entries.push(f64::from_le_bytes(bytes[at..at + 8].try_into().unwrap()));
            }
            let probs = ProbVector::new(entries).map_err(|e| Error::Format {
                offset: (offset + 8) as u64,
                message: format!("record for example {id} is not a probability vector: {e}"),
            })?;
            if rows.insert(id, probs).is_some() {
                return Err(Error::Format {
                    offset: offset as u64,
                    message: format!("duplicate record for example {id}"),
                });
            }
            offset += record_len;
        }
        let expected: BTreeSet<u64> = rows.keys().copied().collect();
        Ok(Self {
            epoch,
            n_classes,
            expected,
            rows,
        })
    }
}

/// Where epoch-(t-1) predictions come from during epoch t.
#[derive(Debug, Clone)]
pub enum TeacherSource {
    /// Frozen deep copy of the previous epoch's parameters; predictions are
    /// recomputed on demand.
    Snapshot(MlpParams),
    /// Predictions stored on disk at the previous epoch's end.
    DiskCache {
        path: PathBuf,
        cache: PredictionCache,
    },
}

/// Freeze a deep copy of the current parameters as a teacher. Later
/// optimizer steps on the live model do not affect it.
pub fn snapshot_teacher(params: &MlpParams) -> TeacherSource {
    TeacherSource::Snapshot(params.clone())
}

impl TeacherSource {
    /// Open a disk cache as a teacher. Fails unless the file is well-formed
    /// and complete.
    pub fn from_cache_file(path: &Path) -> Result<Self> {
        let cache = PredictionCache::load(path)?;
        Ok(TeacherSource::DiskCache {
            path: path.to_path_buf(),
            cache,
        })
    }

    /// Teacher probabilities for one example. The snapshot recomputes
    /// `softmax(forward(params, x))`; the disk cache returns the stored row.
    pub fn predict(&self, example_id: u64, x: &[f64]) -> Result<ProbVector> {
        match self {
            TeacherSource::Snapshot(params) => {
                let batch = RealMatrix::new(1, x.len(), x.to_vec())?;
                let logits = forward(params, &batch)?;
                softmax(logits.row(0))
            }
            TeacherSource::DiskCache { cache, .. } => Ok(cache.fetch(example_id)?.clone()),
        }
    }
}

/// Convenience alias for the free-function form of [`TeacherSource::predict`].
pub fn teacher_predict(source: &TeacherSource, example_id: u64, x: &[f64]) -> Result<ProbVector> {
    source.predict(example_id, x)
}
