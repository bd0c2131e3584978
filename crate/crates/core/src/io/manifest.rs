//! Dataset manifest: the list of cases a run operates on.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::volume::AnnotationKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseEntry {
    pub case_id: String,
    pub volume_path: PathBuf,
    #[serde(default)]
    pub annotation_path: Option<PathBuf>,
    #[serde(default)]
    pub annotation_kind: Option<AnnotationKind>,
    /// Hex SHA-256 of the volume file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub volume_sha256: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotation_sha256: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DatasetManifest {
    #[serde(default)]
    pub provenance: String,
    pub cases: Vec<CaseEntry>,
}

pub fn file_checksum(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

impl DatasetManifest {
    /// Loads a manifest, resolving relative paths against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: DatasetManifest = serde_json::from_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for c in &mut m.cases {
            if c.volume_path.is_relative() {
                c.volume_path = base.join(&c.volume_path);
            }
            if let Some(a) = &mut c.annotation_path {
                if a.is_relative() {
                    *a = base.join(&*a);
                }
            }
        }
        m.validate()?;
        Ok(m)
    }

    /// Unique case ids, existing paths, and annotation kinds where paths are given.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for c in &self.cases {
            if c.case_id.is_empty() {
                return Err(Error::Manifest("empty case_id".into()));
            }
            if !seen.insert(c.case_id.as_str()) {
                return Err(Error::Manifest(format!("duplicate case_id {:?}", c.case_id)));
            }
            if !c.volume_path.exists() {
                return Err(Error::Manifest(format!("{}: missing volume {}", c.case_id, c.volume_path.display())));
            }
            if let Some(a) = &c.annotation_path {
                if !a.exists() {
                    return Err(Error::Manifest(format!("{}: missing annotation {}", c.case_id, a.display())));
                }
                if c.annotation_kind.is_none() {
                    return Err(Error::Manifest(format!("{}: annotation_kind required", c.case_id)));
                }
            }
        }
        Ok(())
    }

    /// Checks recorded checksums; returns the ids of cases whose files differ.
    pub fn verify_checksums(&self) -> Result<Vec<String>> {
        let mut bad = Vec::new();
        for c in &self.cases {
            let mut ok = true;
            if let Some(h) = &c.volume_sha256 {
                ok &= file_checksum(&c.volume_path)? == *h;
            }
            if let (Some(h), Some(p)) = (&c.annotation_sha256, &c.annotation_path) {
                ok &= file_checksum(p)? == *h;
            }
            if !ok {
                bad.push(c.case_id.clone());
            }
        }
        Ok(bad)
    }

    /// Fills in checksums for every referenced file.
    pub fn compute_checksums(&mut self) -> Result<()> {
        for c in &mut self.cases {
            c.volume_sha256 = Some(file_checksum(&c.volume_path)?);
            c.annotation_sha256 = c.annotation_path.as_ref().map(file_checksum).transpose()?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        super::write_atomic(path, text.as_bytes())
    }
}
