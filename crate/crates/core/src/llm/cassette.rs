use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::LlmError;

/// Content hash of one (model, temperature, envelope) combination. Sample
/// answers are stored in order under this key.
pub fn cassette_key(model: &str, temperature: f64, envelope_json: &str) -> String {
    let mut h = Sha256::new();
    h.update(model.as_bytes());
    h.update([0]);
    h.update(temperature.to_string().as_bytes());
    h.update([0]);
    h.update(envelope_json.as_bytes());
    hex::encode(h.finalize())
}

/// JSON map from content hash to the list of recorded answers.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Cassette {
    path: Option<PathBuf>,
    entries: BTreeMap<String, Vec<String>>,
}

impl Cassette {
    pub fn in_memory() -> Self {
        Cassette::default()
    }

    /// Loads `path`; a missing file yields an empty cassette bound to it.
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, LlmError> {
        let path = path.into();
        let entries = match fs::read_to_string(&path) {
            Ok(text) => serde_json::from_str(&text).map_err(|e| err(&path, e))?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => BTreeMap::new(),
            Err(e) => return Err(err(&path, e)),
        };
        Ok(Cassette {
            path: Some(path),
            entries,
        })
    }

    /// Loads `path`, which must exist.
    pub fn open_existing(path: impl Into<PathBuf>) -> Result<Self, LlmError> {
        let path = path.into();
        if !path.exists() {
            return Err(err(&path, "file does not exist"));
        }
        Self::open(path)
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, key: &str, sample_index: usize) -> Option<&str> {
        self.entries.get(key)?.get(sample_index).map(String::as_str)
    }

    pub fn put(&mut self, key: &str, sample_index: usize, text: &str) {
        let list = self.entries.entry(key.to_string()).or_default();
        if list.len() <= sample_index {
            list.resize(sample_index + 1, String::new());
        }
        list[sample_index] = text.to_string();
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.entries).expect("string map serializes")
    }

    /// Writes through a temporary file and renames it into place.
    pub fn save(&self) -> Result<(), LlmError> {
        let Some(path) = &self.path else { return Ok(()) };
        let tmp = path.with_extension("tmp");
        let write = || -> std::io::Result<()> {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(self.to_json().as_bytes())?;
            f.write_all(b"\n")?;
            f.sync_all()?;
            fs::rename(&tmp, path)
        };
        write().map_err(|e| err(path, e))
    }
}

fn err(path: &Path, e: impl std::fmt::Display) -> LlmError {
    LlmError::Cassette {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}
