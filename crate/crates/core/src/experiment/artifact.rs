use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Bumped whenever an on-disk layout changes.
pub const ARTIFACT_VERSION: u32 = 1;

/// Header carried by every persisted JSON file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactMeta {
    pub version: u32,
    pub kind: String,
    pub config_hash: String,
    pub seed: u64,
    /// Content hash of the base model the payload was produced against.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_hash: Option<String>,
}

impl ArtifactMeta {
    pub fn new(kind: impl Into<String>, config_hash: impl Into<String>, seed: u64) -> Self {
        Self {
            version: ARTIFACT_VERSION,
            kind: kind.into(),
            config_hash: config_hash.into(),
            seed,
            base_hash: None,
        }
    }

    pub fn with_base(mut self, base_hash: impl Into<String>) -> Self {
        self.base_hash = Some(base_hash.into());
        self
    }

    /// Fails with a compatibility error unless the payload was produced
    /// against `base_hash`.
    pub fn require_base(&self, base_hash: &str) -> Result<()> {
        match &self.base_hash {
            Some(h) if h == base_hash => Ok(()),
            other => Err(Error::Compatibility {
                expected: base_hash.to_string(),
                found: other.clone().unwrap_or_else(|| "none".into()),
            }),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Artifact<T> {
    pub meta: ArtifactMeta,
    pub payload: T,
}

/// Hex SHA-256 of the compact JSON form of `value`, truncated to 16 digits.
pub fn config_hash<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let bytes = serde_json::to_vec(value)?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().take(8).map(|b| format!("{b:02x}")).collect())
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Writes `{meta, payload}` as pretty JSON with a trailing newline.
pub fn write_artifact<T: Serialize>(path: &Path, meta: &ArtifactMeta, payload: &T) -> Result<()> {
    #[derive(Serialize)]
    struct Borrowed<'a, T> {
        meta: &'a ArtifactMeta,
        payload: &'a T,
    }
    let mut text = serde_json::to_string_pretty(&Borrowed { meta, payload })?;
    text.push('\n');
    write_text(path, &text)
}

/// Reads an artifact and checks its version and kind.
pub fn read_artifact<T: DeserializeOwned>(path: &Path, kind: &str) -> Result<Artifact<T>> {
    let text = read_text(path)?;
    let art: Artifact<T> = serde_json::from_str(&text)?;
    if art.meta.version != ARTIFACT_VERSION {
        return Err(Error::format(format!(
            "{} has artifact version {}, expected {ARTIFACT_VERSION}",
            path.display(),
            art.meta.version
        )));
    }
    if art.meta.kind != kind {
        return Err(Error::format(format!(
            "{} holds a {:?} artifact, expected {kind:?}",
            path.display(),
            art.meta.kind
        )));
    }
    Ok(art)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::DenseMatrix;

    #[test]
    fn round_trip_and_kind_check() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x/m.json");
        let meta = ArtifactMeta::new("matrix", "abc", 7).with_base("b1");
        let m = DenseMatrix::from_fn(2, 2, |i, j| i as f64 - 0.1 * j as f64);
        write_artifact(&path, &meta, &m).unwrap();
        let back: Artifact<DenseMatrix> = read_artifact(&path, "matrix").unwrap();
        assert_eq!(back.meta, meta);
        assert_eq!(back.payload, m);
        assert!(read_artifact::<DenseMatrix>(&path, "weights").is_err());
        assert!(back.meta.require_base("b1").is_ok());
        assert!(matches!(back.meta.require_base("b2"), Err(Error::Compatibility { .. })));
        let first = std::fs::read(&path).unwrap();
        write_artifact(&path, &meta, &m).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), first);
    }

    #[test]
    fn hash_depends_on_content() {
        assert_eq!(config_hash(&[1, 2]).unwrap(), config_hash(&[1, 2]).unwrap());
        assert_ne!(config_hash(&[1, 2]).unwrap(), config_hash(&[2, 1]).unwrap());
        assert_eq!(config_hash(&0).unwrap().len(), 16);
    }
}
