//! Seeded fan-out over (subject, sample index) jobs.
//!
//! Every job derives its seed from `(master_seed, subject id, index)` alone
//! and owns all of its buffers, so outputs do not depend on the worker count
//! or on scheduling. A failing job, including a panicking one, is recorded in
//! the manifest and does not stop the others.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use forge_core::corruption::corrupt;
use forge_core::rng::{child_seed, derive_seed, streams, SplitMix64};
use forge_core::sample::{draw_transport_time, make_sample_with_snapshots, PathologyInit, Provenance, SampleRecord, StreamSeeds};
use forge_core::volume::ScalarField3;

use crate::config::{mask_files, subject_id, PipelineConfig};
use crate::error::{Error, Result};
use crate::io::{read_bytes, read_labels, read_mask, read_scalar, write_bytes, write_volume, VolumeRef};
use crate::snapshot::export_snapshot;

/// Names of the files in a sample directory, in write order.
pub const SAMPLE_FILES: [&str; 6] = ["I.nii", "I0.nii", "P.nii", "mask.nii", "brain.nii", "provenance.json"];

/// Environment variable consulted when no worker count is given.
pub const WORKERS_ENV: &str = "FORGE_WORKERS";

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub workers: usize,
    /// Command line (or other description of the caller) echoed into the
    /// manifest.
    pub invocation: Vec<String>,
    /// Configuration hash recorded in every provenance file.
    pub config_hash: String,
}

/// `provenance.json` of one sample directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleProvenance {
    pub subject: String,
    pub index: u64,
    pub config_hash: String,
    pub mask_source: Option<String>,
    pub sample: Provenance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub subject: String,
    pub index: u64,
    pub seed: u64,
    /// Sample directory relative to the output directory.
    pub dir: String,
    pub status: Status,
    pub error: Option<String>,
    pub wall_time_s: f64,
    /// SHA-256 of each written file.
    pub files: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub config_hash: String,
    pub master_seed: u64,
    pub workers: usize,
    pub invocation: Vec<String>,
    pub total: usize,
    pub failed: usize,
    pub samples: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn all_ok(&self) -> bool {
        self.failed == 0
    }
}

/// Directory of one sample relative to the output directory.
pub fn sample_dir_name(subject: &str, index: u64) -> String {
    format!("{subject}/sample_{index:04}")
}

/// Worker count from an explicit value, else `FORGE_WORKERS`, else 1.
pub fn resolve_workers(explicit: Option<usize>) -> Result<usize> {
    if let Some(n) = explicit {
        return Ok(n.max(1));
    }
    match std::env::var(WORKERS_ENV) {
        Ok(v) => v.trim().parse::<usize>().map(|n| n.max(1)).map_err(|_| Error::Config {
            path: PathBuf::from(format!("${WORKERS_ENV}")),
            detail: format!("expected a positive integer, found {v:?}"),
        }),
        Err(_) => Ok(1),
    }
}

struct Job {
    subject_path: PathBuf,
    subject: String,
    index: u64,
    seed: u64,
}

/// Generates every sample and writes `manifest.json` into the output
/// directory. Per-sample failures are reported in the manifest, not as `Err`.
pub fn run_pipeline(config: &PipelineConfig, options: &RunOptions) -> Result<Manifest> {
    let masks = match &config.mask_dir {
        Some(dir) if config.generation.pathology == PathologyInit::Mask => mask_files(dir)?,
        _ => Vec::new(),
    };
    let jobs: Vec<Job> = config
        .subjects
        .iter()
        .flat_map(|path| {
            let subject = subject_id(path);
            (0..config.samples_per_subject as u64).map(move |index| Job {
                subject_path: path.clone(),
                seed: child_seed(config.master_seed, &subject, index),
                subject: subject.clone(),
                index,
            })
        })
        .collect();

    std::fs::create_dir_all(&config.output_dir).map_err(|e| Error::io(&config.output_dir, e))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.workers.max(1))
        .build()
        .map_err(|e| Error::Config { path: config.output_dir.clone(), detail: format!("cannot start worker pool: {e}") })?;

    let mut samples: Vec<ManifestEntry> = pool.install(|| jobs.par_iter().map(|job| run_job(config, options, &masks, job)).collect());
    samples.sort_by(|a, b| (&a.subject, a.index).cmp(&(&b.subject, b.index)));
    let failed = samples.iter().filter(|s| s.status == Status::Failed).count();
    let manifest = Manifest {
        tool: "forge".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config_hash: options.config_hash.clone(),
        master_seed: config.master_seed,
        workers: options.workers.max(1),
        invocation: options.invocation.clone(),
        total: samples.len(),
        failed,
        samples,
    };
    let path = config.output_dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::json(&path, e))?;
    write_bytes(&path, text.as_bytes())?;
    Ok(manifest)
}

fn run_job(config: &PipelineConfig, options: &RunOptions, masks: &[PathBuf], job: &Job) -> ManifestEntry {
    let start = Instant::now();
    let rel = sample_dir_name(&job.subject, job.index);
    let dir = config.output_dir.join(&rel);
    let outcome = catch_unwind(AssertUnwindSafe(|| generate_into(config, options, masks, job, &dir)));
    let (status, error, files) = match outcome {
        Ok(Ok(files)) => (Status::Ok, None, files),
        Ok(Err(e)) => (Status::Failed, Some(e.to_string()), BTreeMap::new()),
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "worker panicked".into());
            (Status::Failed, Some(format!("panic: {msg}")), BTreeMap::new())
        }
    };
    if status == Status::Failed {
        let _ = std::fs::remove_dir_all(&dir);
    }
    ManifestEntry {
        subject: job.subject.clone(),
        index: job.index,
        seed: job.seed,
        dir: rel,
        status,
        error,
        wall_time_s: start.elapsed().as_secs_f64(),
        files,
    }
}

/// Produces one sample (clean generation followed by corruption) in memory.
pub fn generate_sample(
    config: &PipelineConfig,
    labels_path: &Path,
    mask_path: Option<&Path>,
    seed: u64,
    mut on_snapshot: impl FnMut(f64, &ScalarField3),
) -> Result<SampleRecord> {
    let labels = read_labels(labels_path)?;
    let source = mask_path.map(read_scalar).transpose()?;
    let seeds = StreamSeeds::derive(seed);
    let t = draw_transport_time(config.generation.time_sampling, config.generation.solver.t_max, seeds.transport_time);
    let times: Vec<f64> = config.emit_snapshots.iter().copied().filter(|s| *s <= t).collect();
    let clean = make_sample_with_snapshots(&labels, source.as_ref(), &config.generation, seed, &times, |s, p| on_snapshot(s, p))?;
    Ok(corrupt(&clean, &config.corruption, seeds.corruption)?)
}

/// The mask file a sample uses, picked uniformly by its own stream.
pub fn pick_mask(masks: &[PathBuf], seed: u64) -> Option<&PathBuf> {
    if masks.is_empty() {
        return None;
    }
    let i = SplitMix64::new(derive_seed(seed, streams::MASK_PICK)).index(masks.len());
    masks.get(i)
}

fn generate_into(config: &PipelineConfig, options: &RunOptions, masks: &[PathBuf], job: &Job, dir: &Path) -> Result<BTreeMap<String, String>> {
    if dir.exists() {
        std::fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mask = pick_mask(masks, job.seed);
    let mut snapshot_error = None;
    let mut snapshot_count = 0;
    let snap_dir = dir.join("snapshots");
    let record = generate_sample(config, &job.subject_path, mask.map(|p| p.as_path()), job.seed, |t, p| {
        if snapshot_error.is_none() {
            if let Err(e) = export_snapshot(p, snapshot_count, t, &snap_dir) {
                snapshot_error = Some(e);
            }
        }
        snapshot_count += 1;
    })?;
    if let Some(e) = snapshot_error {
        return Err(e);
    }
    write_sample(&record, dir)?;
    let provenance = SampleProvenance {
        subject: job.subject.clone(),
        index: job.index,
        config_hash: options.config_hash.clone(),
        mask_source: mask.and_then(|p| p.file_name()).map(|n| n.to_string_lossy().into_owned()),
        sample: record.provenance.clone(),
    };
    let prov_path = dir.join("provenance.json");
    let text = serde_json::to_string_pretty(&provenance).map_err(|e| Error::json(&prov_path, e))?;
    write_bytes(&prov_path, text.as_bytes())?;

    let mut files = BTreeMap::new();
    for name in SAMPLE_FILES {
        let bytes = read_bytes(&dir.join(name))?;
        files.insert(name.to_owned(), hex::encode(Sha256::digest(&bytes)));
    }
    Ok(files)
}

/// Writes the volumes of a sample (everything except `provenance.json`).
pub fn write_sample(record: &SampleRecord, dir: &Path) -> Result<()> {
    write_volume(VolumeRef::Scalar(&record.image), dir.join("I.nii"))?;
    write_volume(VolumeRef::Scalar(&record.healthy), dir.join("I0.nii"))?;
    write_volume(VolumeRef::Scalar(&record.pathology), dir.join("P.nii"))?;
    write_volume(VolumeRef::Mask(&record.anomaly_mask), dir.join("mask.nii"))?;
    write_volume(VolumeRef::Mask(&record.brain_mask), dir.join("brain.nii"))
}

/// Reads a sample directory written by [`run_pipeline`] back into memory.
/// Values come back at the stored single precision.
pub fn read_sample(dir: &Path) -> Result<(SampleRecord, SampleProvenance)> {
    let prov_path = dir.join("provenance.json");
    let text = read_bytes(&prov_path)?;
    let provenance: SampleProvenance = serde_json::from_slice(&text).map_err(|e| Error::json(&prov_path, e))?;
    let record = SampleRecord {
        image: read_scalar(dir.join("I.nii"))?,
        healthy: read_scalar(dir.join("I0.nii"))?,
        pathology: read_scalar(dir.join("P.nii"))?,
        anomaly_mask: read_mask(dir.join("mask.nii"))?,
        brain_mask: read_mask(dir.join("brain.nii"))?,
        provenance: provenance.sample.clone(),
    };
    Ok((record, provenance))
}
