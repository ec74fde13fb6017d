//! Batch configuration: strict JSON, paths relative to the config file.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use forge_core::corruption::CorruptionSettings;
use forge_core::sample::{GenerationConfig, PathologyInit};

use crate::error::{Error, Result};

fn one() -> usize {
    1
}

/// Everything `forge gen` needs. Unknown keys are rejected at every level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Label volumes, one per subject. The subject id is the file stem.
    pub subjects: Vec<PathBuf>,
    /// Directory of lesion masks in subject space; required when
    /// `generation.pathology.kind` is `"mask"`. One mask is picked per sample.
    #[serde(default)]
    pub mask_dir: Option<PathBuf>,
    #[serde(default)]
    pub generation: GenerationConfig,
    #[serde(default)]
    pub corruption: CorruptionSettings,
    #[serde(default = "one")]
    pub samples_per_subject: usize,
    #[serde(default)]
    pub master_seed: u64,
    pub output_dir: PathBuf,
    /// Transport times at which `P` is exported per sample. Times beyond a
    /// sample's drawn transport time are skipped for that sample.
    #[serde(default)]
    pub emit_snapshots: Vec<f64>,
}

impl PipelineConfig {
    /// Parses JSON text without touching the file system.
    pub fn from_json(text: &str, origin: &Path) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::json(origin, e))
    }

    /// Reads, resolves relative paths against the file's directory, and
    /// validates. The returned hash is taken before path resolution, so it
    /// does not depend on where the configuration lives.
    pub fn load(path: impl AsRef<Path>) -> Result<(Self, String)> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_json(&text, path)?;
        let hash = cfg.hash();
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve_paths(base);
        cfg.validate(path)?;
        Ok((cfg, hash))
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        self.subjects.iter_mut().for_each(fix);
        self.mask_dir.iter_mut().for_each(fix);
        fix(&mut self.output_dir);
    }

    /// Structural checks plus existence of every referenced input.
    pub fn validate(&self, origin: &Path) -> Result<()> {
        let bad = |detail: String| Error::Config { path: origin.to_path_buf(), detail };
        if self.subjects.is_empty() {
            return Err(bad("subjects must list at least one label volume".into()));
        }
        if self.samples_per_subject < 1 {
            return Err(bad("samples_per_subject must be >= 1".into()));
        }
        self.generation.validate()?;
        let mut ids = BTreeSet::new();
        for s in &self.subjects {
            if !s.is_file() {
                return Err(bad(format!("subject volume {} does not exist", s.display())));
            }
            if !ids.insert(subject_id(s)) {
                return Err(bad(format!("subject id {:?} appears twice", subject_id(s))));
            }
        }
        let wants_masks = self.generation.pathology == PathologyInit::Mask;
        match (&self.mask_dir, wants_masks) {
            (None, true) => return Err(bad("pathology kind \"mask\" requires mask_dir".into())),
            (Some(_), false) => return Err(bad("mask_dir is set but pathology kind is not \"mask\"".into())),
            (Some(dir), true) => {
                if mask_files(dir)?.is_empty() {
                    return Err(bad(format!("mask_dir {} holds no .nii or .raw volumes", dir.display())));
                }
            }
            (None, false) => {}
        }
        let t_max = self.generation.solver.t_max;
        for t in &self.emit_snapshots {
            if !(t.is_finite() && *t >= 0.0 && *t <= t_max) {
                return Err(bad(format!("snapshot time {t} lies outside [0, t_max = {t_max}]")));
            }
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON form of the configuration.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("configuration serializes");
        hex::encode(Sha256::digest(canonical))
    }
}

/// Subject id: the file name with its volume extension removed.
pub fn subject_id(path: &Path) -> String {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    for ext in [".nii", ".raw", ".json"] {
        if let Some(stem) = name.strip_suffix(ext) {
            return stem.to_owned();
        }
    }
    name
}

/// Volume files in `dir`, sorted by name, one entry per raw/sidecar pair.
pub fn mask_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        match path.extension().and_then(|e| e.to_str()) {
            Some("nii") | Some("raw") => out.push(path),
            _ => {}
        }
    }
    out.sort();
    Ok(out)
}
