use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use ndarray::Array2;
use sha2::{Digest, Sha256};

use crate::distances::DistanceMatrix;
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::signal::Signal;
use crate::spectra::Spectrogram;

/// Hex SHA-256 of the given byte chunks.
pub fn content_hash<'a>(parts: impl IntoIterator<Item = &'a [u8]>) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub fn signal_bytes<T: Real>(signal: &Signal<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 * signal.len() + 16);
    out.extend_from_slice(&signal.sample_rate().to_le_bytes());
    out.extend_from_slice(&(signal.onset_index() as u64).to_le_bytes());
    for s in signal.samples() {
        out.extend_from_slice(&s.as_f64().to_le_bytes());
    }
    out
}

/// Content-addressed store of spectrograms and distance matrices, in memory
/// and optionally mirrored losslessly to a directory.
#[derive(Debug)]
pub struct ArtifactCache<T> {
    spectrograms: Mutex<HashMap<String, Arc<Spectrogram<T>>>>,
    matrices: Mutex<HashMap<String, Arc<DistanceMatrix<T>>>>,
    dir: Option<PathBuf>,
    hits: AtomicUsize,
    misses: AtomicUsize,
}

impl<T: Real> Default for ArtifactCache<T> {
    fn default() -> Self {
        Self::in_memory()
    }
}

impl<T: Real> ArtifactCache<T> {
    pub fn in_memory() -> Self {
        Self {
            spectrograms: Mutex::default(),
            matrices: Mutex::default(),
            dir: None,
            hits: AtomicUsize::new(0),
            misses: AtomicUsize::new(0),
        }
    }

    pub fn on_disk(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(Self {
            dir: Some(dir.to_path_buf()),
            ..Self::in_memory()
        })
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn misses(&self) -> usize {
        self.misses.load(Ordering::Relaxed)
    }

    /// Returns the spectrogram stored under `key`, computing and storing it
    /// on a miss.
    pub fn spectrogram(&self, key: &str, compute: impl FnOnce() -> Result<Spectrogram<T>>) -> Result<Arc<Spectrogram<T>>> {
        if let Some(s) = self.spectrograms.lock().unwrap().get(key) {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(Arc::clone(s));
        }
        let path = self.dir.as_ref().map(|d| d.join(format!("spec-{key}.bin")));
        let loaded = match &path {
            Some(p) if p.exists() => Some(read_spectrogram(p)?),
            _ => None,
        };
        let spec = match loaded {
            Some(s) => {
                self.hits.fetch_add(1, Ordering::Relaxed);
                s
            }
            None => {
                self.misses.fetch_add(1, Ordering::Relaxed);
                let s = compute()?;
                if let Some(p) = &path {
                    write_spectrogram(&s, p)?;
                }
                s
            }
        };
        let spec = Arc::new(spec);
        self.spectrograms
            .lock()
            .unwrap()
            .insert(key.to_string(), Arc::clone(&spec));
        Ok(spec)
    }

    pub fn distance_matrix(
        &self,
        key: &str,
        compute: impl FnOnce() -> Result<DistanceMatrix<T>>,
    ) -> Result<Arc<DistanceMatrix<T>>> {
        if let Some(m) = self.matrices.lock().unwrap().get(key) {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(Arc::clone(m));
        }
        let path = self.dir.as_ref().map(|d| d.join(format!("dist-{key}.bin")));
        let dm = match &path {
            Some(p) if p.exists() => {
                self.hits.fetch_add(1, Ordering::Relaxed);
                DistanceMatrix::read_bin(p)?
            }
            _ => {
                self.misses.fetch_add(1, Ordering::Relaxed);
                let dm = compute()?;
                if let Some(p) = &path {
                    dm.write_bin(p)?;
                }
                dm
            }
        };
        let dm = Arc::new(dm);
        self.matrices.lock().unwrap().insert(key.to_string(), Arc::clone(&dm));
        Ok(dm)
    }
}

const SPEC_MAGIC: &[u8; 8] = b"CKSPEC01";

fn write_spectrogram<T: Real>(spec: &Spectrogram<T>, path: &Path) -> Result<()> {
    let mut bytes = Vec::with_capacity(64 + 8 * spec.values.len());
    bytes.extend_from_slice(SPEC_MAGIC);
    for v in [
        spec.n_frames(),
        spec.n_bins(),
        spec.frame_hop,
        spec.frame_size,
        spec.time_origin,
        spec.sample_rate as usize,
    ] {
        bytes.extend_from_slice(&(v as u64).to_le_bytes());
    }
    bytes.push(u8::from(spec.is_log));
    bytes.extend_from_slice(&spec.floor_db.map_or(f64::NAN, |f| f.as_f64()).to_le_bytes());
    for v in spec.values.iter() {
        bytes.extend_from_slice(&v.as_f64().to_le_bytes());
    }
    // Write-then-rename so a concurrent reader never sees a partial file.
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn read_spectrogram<T: Real>(path: &Path) -> Result<Spectrogram<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = || Error::ShapeMismatch(format!("{} is not a cached spectrogram", path.display()));
    if bytes.len() < 8 + 48 + 9 || &bytes[..8] != SPEC_MAGIC {
        return Err(bad());
    }
    let word = |i: usize| u64::from_le_bytes(bytes[8 + 8 * i..16 + 8 * i].try_into().unwrap()) as usize;
    let (frames, bins) = (word(0), word(1));
    let is_log = bytes[56] == 1;
    let floor = f64::from_le_bytes(bytes[57..65].try_into().unwrap());
    let body = &bytes[65..];
    if body.len() != 8 * frames * bins {
        return Err(bad());
    }
    let data = body
        .chunks_exact(8)
        .map(|c| T::lit(f64::from_le_bytes(c.try_into().unwrap())))
        .collect();
    Ok(Spectrogram {
        values: Array2::from_shape_vec((frames, bins), data).map_err(|_| bad())?,
        frame_hop: word(2),
        frame_size: word(3),
        time_origin: word(4),
        sample_rate: word(5) as u32,
        is_log,
        floor_db: (!floor.is_nan()).then(|| T::lit(floor)),
    })
}
